//! Discriminator on diffused samples with non-saturating logistic losses.
//!
//! The logit is the sum of the net's `d` outputs, so the usual network spec
//! (output dimension = input dimension) is reused unchanged.

use rand::Rng;

use super::{DistillConfig, Net};
use crate::error::Result;
use crate::nn::{AdamState, Mat, NetParams, NetSpec, Tape, Var};
use crate::param::Kind;

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: Net,
    pub adam: AdamState<f64>,
}

/// Diffused real and generated rows with their times and classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscBatch {
    pub real: Vec<f64>,
    pub t_real: Vec<f64>,
    pub classes_real: Vec<Option<usize>>,
    pub fake: Vec<f64>,
    pub t_fake: Vec<f64>,
    pub classes_fake: Vec<Option<usize>>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: &DistillConfig, dim: usize, classes: Option<usize>, rng: &mut R) -> Result<Self> {
        let spec = NetSpec {
            hidden: config.adversarial.hidden.clone(),
            ..config.net_spec(dim, classes, Kind::X0)
        };
        let params = NetParams::init(&spec, rng)?;
        let adam = AdamState::new(params.len(), config.adversarial.lr);
        Ok(Discriminator {
            net: Net::new(spec, params)?,
            adam,
        })
    }

    /// `n × 1` logits of the rows of `x`.
    pub fn logits_tape(&self, tape: &Tape<f64>, params: Var, x: Var, t: &[f64], classes: &[Option<usize>]) -> Result<Var> {
        Ok(tape.sum_cols(self.net.raw_tape(tape, params, x, t, classes, None)?))
    }

    pub fn logits(&self, x: &[f64], t: &[f64], classes: &[Option<usize>]) -> Result<Vec<f64>> {
        let raw = self.net.raw_batch(x, t, classes, None)?;
        let d = self.net.spec.input_dim;
        Ok(raw.chunks(d).map(|r| r.iter().sum()).collect())
    }

    /// Non-saturating generator term `mean softplus(−D(x_t))` with frozen
    /// discriminator weights; differentiable in `x_t`.
    pub fn generator_term(&self, tape: &Tape<f64>, x_t: Var, t: &[f64], classes: &[Option<usize>]) -> Result<Var> {
        let p = self.net.params_var(tape, false);
        let logits = self.logits_tape(tape, p, x_t, t, classes)?;
        let n = t.len() as f64;
        Ok(tape.scale(tape.sum(tape.softplus(tape.scale(logits, -1.0))), 1.0 / n))
    }

    /// `mean softplus(−D(real)) + mean softplus(D(fake))` and its gradient
    /// in `params`.
    pub fn objective(&self, params: &[f64], b: &DiscBatch) -> Result<(f64, Vec<f64>)> {
        let d = self.net.spec.input_dim;
        crate::nn::grad(params, |tape, p| {
            let nr = b.t_real.len();
            let nf = b.t_fake.len();
            let real = tape.constant(Mat::new(nr, d, b.real.clone()));
            let fake = tape.constant(Mat::new(nf, d, b.fake.clone()));
            let lr = self.logits_tape(tape, p, real, &b.t_real, &b.classes_real)?;
            let lf = self.logits_tape(tape, p, fake, &b.t_fake, &b.classes_fake)?;
            let real_term = tape.scale(tape.sum(tape.softplus(tape.scale(lr, -1.0))), 1.0 / nr as f64);
            let fake_term = tape.scale(tape.sum(tape.softplus(lf)), 1.0 / nf as f64);
            tape.add(real_term, fake_term)
        })
    }
}

/// One discriminator step; returns its loss before the step.
pub fn adversarial_update(disc: &mut Discriminator, batch: &DiscBatch) -> Result<f64> {
    let (loss, grad) = disc.objective(&disc.net.params.values, batch)?;
    disc.adam.step(&mut disc.net.params.values, &grad)?;
    Ok(loss)
}

/// Fraction of rows classified correctly (`D > 0` means real).
pub fn discriminator_accuracy(disc: &Discriminator, batch: &DiscBatch) -> Result<f64> {
    let lr = disc.logits(&batch.real, &batch.t_real, &batch.classes_real)?;
    let lf = disc.logits(&batch.fake, &batch.t_fake, &batch.classes_fake)?;
    let right = lr.iter().filter(|&&l| l > 0.0).count() + lf.iter().filter(|&&l| l < 0.0).count();
    Ok(right as f64 / (lr.len() + lf.len()) as f64)
}
