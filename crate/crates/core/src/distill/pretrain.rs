//! Denoising pretraining of a student against the analytic teacher.
//!
//! Each kind regresses its own target, and the per-sample weight is divided
//! by that kind's loss ratio to the x0 loss. Every kind therefore minimizes
//! the same x0-space objective `E_{t∼p} w(t) ‖x̂0 − x0‖²`, fixed by the law,
//! and differs only in what the network is asked to output.

use rand::Rng;

use super::{check_finite, sample_classes, standard_normals, Net};
use crate::error::{Error, Result};
use crate::nn::{AdamState, NetParams, NetSpec};
use crate::param::{loss_ratio, loss_target, Kind};
use crate::schedule::law::{Density, TimestepLaw, Weight, DEFAULT_QUAD_GRID};
use crate::schedule::{Schedule, T_HI, T_LO};
use crate::teacher::MixtureTeacher;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub kind: Kind,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// The learning rate falls linearly to `lr·lr_end_factor` at the last
    /// iteration.
    pub lr_end_factor: f64,
    pub density: Density<f64>,
    /// x0-space weight `w(t)`, so `π(t) ∝ w(t) p(t)` is shared across kinds.
    pub weight: Weight,
    /// Probability of training a row on the null class.
    pub class_dropout: f64,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub class_embed: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            kind: Kind::Vfm,
            iterations: 4000,
            batch: 256,
            lr: 1e-3,
            lr_end_factor: 0.05,
            density: Density::standard(),
            weight: Weight::One,
            class_dropout: 0.1,
            hidden: vec![128; 3],
            time_features: 8,
            class_embed: 16,
            eval_every: 500,
            eval_samples: 2048,
        }
    }
}

impl PretrainConfig {
    pub fn law(&self) -> Result<TimestepLaw<f64>> {
        TimestepLaw::new(self.density.clone(), self.weight, (T_LO, T_HI), DEFAULT_QUAD_GRID)
    }

    pub fn net_spec(&self, dim: usize, classes: Option<usize>) -> NetSpec {
        NetSpec {
            input_dim: dim,
            hidden: self.hidden.clone(),
            activation: crate::nn::Activation::Silu,
            time_features: self.time_features,
            class_count: classes,
            class_embed: self.class_embed,
            output_kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRow {
    pub iter: usize,
    pub loss: f64,
    pub oracle_mse: f64,
}

impl PretrainRow {
    pub const HEADER: &'static str = "iter,loss,oracle_mse";

    pub fn values(&self) -> [f64; 3] {
        [self.iter as f64, self.loss, self.oracle_mse]
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub net: Net,
    pub timeline: Vec<PretrainRow>,
}

/// Held-out `mean ‖x̂0 − E[x0 | x_t]‖² / d` over `n` fresh draws with
/// `t ∼ p(t)` of `law`, `x0` from the teacher and, for conditional nets, the
/// class of the drawn component.
pub fn oracle_mse<R: Rng + ?Sized>(
    net: &Net,
    teacher: &MixtureTeacher<f64>,
    law: &TimestepLaw<f64>,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = teacher.dim();
    let rf = Schedule::<f64>::rectified_flow();
    let classes = sample_classes(teacher, n, rng);
    let ts = law.sample_t(n, rng)?;
    let mut x_t = Vec::with_capacity(n * d);
    for (i, &c) in classes.iter().enumerate() {
        let x0 = teacher.sample(1, rng, c)?.points;
        let eps = standard_normals(rng, d);
        let t = ts[i];
        x_t.extend((0..d).map(|j| (1.0 - t) * x0[j] + t * eps[j]));
    }
    let pred = net.x0_batch(&x_t, &ts, &classes, None)?;
    let mut total = 0.0;
    for i in 0..n {
        let want = teacher.posterior_mean(&x_t[i * d..(i + 1) * d], ts[i], &rf, classes[i])?;
        total += (0..d).map(|j| (pred[i * d + j] - want[j]).powi(2)).sum::<f64>();
    }
    Ok(total / (n * d) as f64)
}

/// Trains a fresh student of `config.kind` on diffused teacher samples.
///
/// The oracle MSE rows use a separate generator seeded from `eval_seed`, so
/// logging frequency never perturbs training.
pub fn pretrain_student<R: Rng + ?Sized>(
    config: &PretrainConfig,
    teacher: &MixtureTeacher<f64>,
    rng: &mut R,
    eval_seed: u64,
) -> Result<PretrainOutcome> {
    use rand::SeedableRng;
    if !matches!(config.kind, Kind::X0 | Kind::Eps | Kind::V | Kind::Vfm) {
        return Err(Error::config(format!("students are x0, eps, v or vfm; got {}", config.kind)));
    }
    if config.batch == 0 || !(config.lr > 0.0) || !(0.0..1.0).contains(&config.class_dropout) || !(config.lr_end_factor > 0.0) {
        return Err(Error::config("pretrain needs batch ≥ 1, lr > 0, lr_end_factor > 0 and class_dropout in [0, 1)"));
    }
    let d = teacher.dim();
    let classes = (teacher.class_count() > 0).then_some(teacher.class_count());
    let spec = config.net_spec(d, classes);
    let params = NetParams::init(&spec, rng)?;
    let mut net = Net::new(spec, params)?;
    let law = config.law()?;
    let rf = Schedule::<f64>::rectified_flow();
    let mut adam = AdamState::new(net.params.len(), config.lr);
    let mut timeline = Vec::new();
    let mut eval_rng = rand_chacha::ChaCha8Rng::seed_from_u64(eval_seed);
    let n = config.batch;
    let mut last_loss = f64::NAN;
    for iter in 0..=config.iterations {
        let logging = iter == config.iterations || (config.eval_every > 0 && iter % config.eval_every == 0);
        if logging {
            let mse = oracle_mse(&net, teacher, &law, config.eval_samples, &mut eval_rng)?;
            timeline.push(PretrainRow {
                iter,
                loss: last_loss,
                oracle_mse: mse,
            });
        }
        if iter == config.iterations {
            break;
        }
        let mut batch_classes = sample_classes(teacher, n, rng);
        let mut x_t = Vec::with_capacity(n * d);
        let mut target = Vec::with_capacity(n * d);
        let ts = law.sample_t(n, rng)?;
        let mut row_w = Vec::with_capacity(n);
        for i in 0..n {
            let x0 = teacher.sample(1, rng, batch_classes[i])?.points;
            let eps = standard_normals(rng, d);
            let t = ts[i];
            let (a, s) = (1.0 - t, t);
            for j in 0..d {
                x_t.push(a * x0[j] + s * eps[j]);
                target.push(loss_target(config.kind, a, s, x0[j], eps[j]));
            }
            row_w.push(law.w(t) / loss_ratio(config.kind, t, &rf)? / (n * d) as f64);
            if batch_classes[i].is_some() && rng.random::<f64>() < config.class_dropout {
                batch_classes[i] = None;
            }
        }
        let (loss, grads) = crate::nn::grad(&net.params.values, |tape, p| {
            let x = tape.constant(crate::nn::Mat::new(n, d, x_t.clone()));
            let out = net.raw_tape(tape, p, x, &ts, &batch_classes, None)?;
            let tgt = tape.constant(crate::nn::Mat::new(n, d, target.clone()));
            let r = tape.sum_cols(tape.square(tape.sub(out, tgt)?));
            Ok(tape.sum(tape.scale_rows(r, &row_w)?))
        })?;
        check_finite(iter, "pretrain loss", loss)?;
        let progress = iter as f64 / config.iterations.max(2).saturating_sub(1) as f64;
        adam.lr = config.lr * (1.0 - progress * (1.0 - config.lr_end_factor));
        adam.step(&mut net.params.values, &grads)?;
        last_loss = loss;
    }
    Ok(PretrainOutcome { net, timeline })
}
