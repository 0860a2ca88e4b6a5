//! Few-step score identity distillation against an analytic mixture teacher.
//!
//! All networks here are read as x0-predictors on the rectified-flow path
//! `x_t = (1 − t) x0 + t ε`; a net whose output kind is not x0 is converted
//! with the affine coefficients from [`crate::param`]. Everything runs in
//! `f64`.

pub mod adversarial;
pub mod pretrain;
pub mod sid;

pub use adversarial::{adversarial_update, discriminator_accuracy, DiscBatch, Discriminator};
pub use pretrain::{oracle_mse, pretrain_student, PretrainConfig, PretrainOutcome, PretrainRow};
pub use sid::{
    diffuse_output, distill_run, generate, generator_loss, step_times, DistillOutcome, Distiller, MetricRow, Trajectory,
    METRICS_HEADER,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{forward_batch, forward_tape, Mat, NetParams, NetSpec, Tape, Var};
use crate::param::{to_x0_coeffs, Kind};
use crate::schedule::law::{Density, TimestepLaw, Weight, DEFAULT_QUAD_GRID};
use crate::schedule::{T_HI, T_LO};
use crate::teacher::MixtureTeacher;

/// How `α_sid·w_t·‖f_φ − f_ψ‖²` enters the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaTerm {
    Off,
    Add,
    Subtract,
}

impl AlphaTerm {
    pub fn name(self) -> &'static str {
        match self {
            AlphaTerm::Off => "off",
            AlphaTerm::Add => "add",
            AlphaTerm::Subtract => "subtract",
        }
    }

    fn sign(self) -> f64 {
        match self {
            AlphaTerm::Off => 0.0,
            AlphaTerm::Add => 1.0,
            AlphaTerm::Subtract => -1.0,
        }
    }
}

impl std::str::FromStr for AlphaTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(AlphaTerm::Off),
            "add" => Ok(AlphaTerm::Add),
            "subtract" => Ok(AlphaTerm::Subtract),
            _ => Err(Error::Config(format!("unknown alpha_sid term `{s}` (off | add | subtract)"))),
        }
    }
}

/// Where the generator's weights start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorInit {
    /// Copy of the pretrained student that also initializes the fake net.
    Student,
    /// Fresh weights with a zero head, so step 0 returns its input.
    Fresh,
}

impl GeneratorInit {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorInit::Student => "student",
            GeneratorInit::Fresh => "fresh",
        }
    }
}

impl std::str::FromStr for GeneratorInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(GeneratorInit::Student),
            "fresh" => Ok(GeneratorInit::Fresh),
            _ => Err(Error::Config(format!("unknown generator init `{s}` (student | fresh)"))),
        }
    }
}

/// How the fake network realizes `f_ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FakeMode {
    /// The teacher's prediction plus a learned, zero-initialized correction
    /// in the net's output kind, so `f_ψ` starts as an exact copy of `f_φ`.
    Residual,
    /// A standalone network initialized from the pretrained student.
    Direct,
}

impl FakeMode {
    pub fn name(self) -> &'static str {
        match self {
            FakeMode::Residual => "residual",
            FakeMode::Direct => "direct",
        }
    }
}

impl std::str::FromStr for FakeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(FakeMode::Residual),
            "direct" => Ok(FakeMode::Direct),
            _ => Err(Error::Config(format!("unknown fake mode `{s}` (residual | direct)"))),
        }
    }
}

/// Real samples for the adversarial term.
#[derive(Debug, Clone, PartialEq)]
pub enum RealData {
    /// Fresh draws from the teacher.
    Teacher,
    /// A fixed table, row-major with optional class labels.
    Table { points: Vec<f64>, classes: Vec<Option<usize>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialConfig {
    pub enabled: bool,
    pub weight: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub real: Option<RealData>,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            enabled: false,
            weight: 0.01,
            hidden: vec![64; 3],
            lr: 1e-3,
            real: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Generator steps `K`.
    pub steps: usize,
    /// Divisor that normalizes the step times `t_k` onto unit time.
    pub t_max: f64,
    /// Guidance scale, used when the teacher is class-conditional.
    pub cfg_scale: f64,
    pub weight: Weight,
    pub lambda_sid: f64,
    pub alpha_sid: f64,
    pub alpha_term: AlphaTerm,
    pub density: Density<f64>,
    pub t_range: (f64, f64),
    pub lr_gen: f64,
    pub lr_fake: f64,
    pub batch: usize,
    /// Fake-network updates per generator update.
    pub fake_updates: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub class_embed: usize,
    pub generator_init: GeneratorInit,
    pub fake_mode: FakeMode,
    pub pretrain: PretrainConfig,
    pub adversarial: AdversarialConfig,
    /// Metric rows every this many iterations (0 = only at the end).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub eval_projections: usize,
    pub eval_seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            steps: 4,
            t_max: 1000.0,
            cfg_scale: 4.5,
            weight: Weight::OneMinusT,
            lambda_sid: 100.0,
            alpha_sid: 1.0,
            alpha_term: AlphaTerm::Off,
            density: Density::standard(),
            t_range: (T_LO, T_HI),
            lr_gen: 5e-5,
            lr_fake: 2e-3,
            batch: 256,
            fake_updates: 1,
            iterations: 20_000,
            seed: 0,
            hidden: vec![128; 3],
            time_features: 8,
            class_embed: 16,
            generator_init: GeneratorInit::Fresh,
            fake_mode: FakeMode::Residual,
            pretrain: PretrainConfig::default(),
            adversarial: AdversarialConfig::default(),
            eval_every: 500,
            eval_samples: 4096,
            eval_projections: 64,
            eval_seed: 7,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("distill.steps must be at least 1"));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::config("distill.t_max must be positive"));
        }
        if !(self.cfg_scale >= 0.0) {
            return Err(Error::config("distill.cfg_scale must be non-negative"));
        }
        if !(self.lambda_sid > 0.0) {
            return Err(Error::config("distill.lambda_sid must be positive"));
        }
        let (lo, hi) = self.t_range;
        if !(lo >= T_LO && hi <= T_HI && lo < hi) {
            return Err(Error::config(format!(
                "distill.t_range ({lo}, {hi}) must be an interval inside [{T_LO}, {T_HI}]"
            )));
        }
        if self.batch == 0 || self.fake_updates == 0 {
            return Err(Error::config("distill.batch and distill.fake_updates must be at least 1"));
        }
        if !(self.lr_gen > 0.0 && self.lr_fake > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.eval_samples < 2 {
            return Err(Error::config("eval.samples must be at least 2"));
        }
        if self.adversarial.enabled && self.adversarial.real.is_none() {
            return Err(Error::config("adversarial training needs real data"));
        }
        Ok(())
    }

    /// Timestep law for `t ∼ p(t)` restricted to `t_range`.
    pub fn law(&self) -> Result<TimestepLaw<f64>> {
        TimestepLaw::new(self.density.clone(), Weight::One, self.t_range, DEFAULT_QUAD_GRID)
    }

    pub fn net_spec(&self, dim: usize, classes: Option<usize>, kind: Kind) -> NetSpec {
        NetSpec {
            input_dim: dim,
            hidden: self.hidden.clone(),
            activation: crate::nn::Activation::Silu,
            time_features: self.time_features,
            class_count: classes,
            class_embed: self.class_embed,
            output_kind: kind,
        }
    }
}

/// A network together with its weights, read as an x0-predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub spec: NetSpec,
    pub params: NetParams<f64>,
}

/// Network time for unit time `t`: kept inside the clamped domain so `t = 1`
/// (the first generator step) is evaluated at its upper end.
pub fn net_time(t: f64) -> f64 {
    t.clamp(T_LO, T_HI)
}

/// `(a, b)` with `x0 = a·x_t + b·out` on the rectified-flow path.
pub(crate) fn x0_coeffs(kind: Kind, t: f64) -> (f64, f64) {
    to_x0_coeffs(kind, 1.0 - t, t)
}

impl Net {
    pub fn new(spec: NetSpec, params: NetParams<f64>) -> Result<Self> {
        if params.layout != crate::nn::Layout::new(&spec) {
            return Err(Error::Contract("parameters do not match the network spec".into()));
        }
        Ok(Net { spec, params })
    }

    pub fn classes(&self) -> Option<usize> {
        self.spec.class_count
    }

    /// Classes as the net sees them: empty for unconditional nets.
    fn view_classes<'a>(&self, classes: &'a [Option<usize>]) -> &'a [Option<usize>] {
        if self.spec.class_count.is_some() {
            classes
        } else {
            &[]
        }
    }

    /// Raw output, optionally guided `u + s (c − u)` with `u` the null-class
    /// branch.
    pub fn raw_batch(&self, x: &[f64], t: &[f64], classes: &[Option<usize>], guidance: Option<f64>) -> Result<Vec<f64>> {
        let tn: Vec<f64> = t.iter().map(|&t| net_time(t)).collect();
        let cond = forward_batch(&self.spec, &self.params, x, &tn, self.view_classes(classes))?;
        match guidance {
            Some(s) if self.spec.class_count.is_some() => {
                let none = vec![None; t.len()];
                let u = forward_batch(&self.spec, &self.params, x, &tn, &none)?;
                Ok(u.iter().zip(&cond).map(|(&u, &c)| u + s * (c - u)).collect())
            }
            _ => Ok(cond),
        }
    }

    /// x0-prediction of every row.
    pub fn x0_batch(&self, x: &[f64], t: &[f64], classes: &[Option<usize>], guidance: Option<f64>) -> Result<Vec<f64>> {
        let raw = self.raw_batch(x, t, classes, guidance)?;
        let d = self.spec.input_dim;
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let (a, b) = x0_coeffs(self.spec.output_kind, net_time(t[i / d]));
                a * x[i] + b * o
            })
            .collect())
    }

    /// Raw (optionally guided) output on the tape with weights `params`.
    pub fn raw_tape(
        &self,
        tape: &Tape<f64>,
        params: Var,
        x: Var,
        t: &[f64],
        classes: &[Option<usize>],
        guidance: Option<f64>,
    ) -> Result<Var> {
        let tn: Vec<f64> = t.iter().map(|&t| net_time(t)).collect();
        let layout = &self.params.layout;
        let cond = forward_tape(&self.spec, layout, tape, params, x, &tn, self.view_classes(classes))?;
        match guidance {
            Some(s) if self.spec.class_count.is_some() => {
                let none = vec![None; t.len()];
                let u = forward_tape(&self.spec, layout, tape, params, x, &tn, &none)?;
                tape.add(tape.scale(u, 1.0 - s), tape.scale(cond, s))
            }
            _ => Ok(cond),
        }
    }

    /// x0-prediction on the tape; gradients flow into both `params` and `x`.
    pub fn x0_tape(
        &self,
        tape: &Tape<f64>,
        params: Var,
        x: Var,
        t: &[f64],
        classes: &[Option<usize>],
        guidance: Option<f64>,
    ) -> Result<Var> {
        let raw = self.raw_tape(tape, params, x, t, classes, guidance)?;
        let (a, b): (Vec<f64>, Vec<f64>) = t.iter().map(|&t| x0_coeffs(self.spec.output_kind, net_time(t))).unzip();
        tape.add(tape.scale_rows(x, &a)?, tape.scale_rows(raw, &b)?)
    }

    pub fn params_var(&self, tape: &Tape<f64>, trainable: bool) -> Var {
        let m = Mat::new(1, self.params.len(), self.params.values.clone());
        if trainable {
            tape.leaf(m)
        } else {
            tape.constant(m)
        }
    }
}

/// One class per row drawn from the teacher's class priors, or all `None`.
pub fn sample_classes<R: Rng + ?Sized>(teacher: &MixtureTeacher<f64>, n: usize, rng: &mut R) -> Vec<Option<usize>> {
    if teacher.class_count() == 0 {
        return vec![None; n];
    }
    let priors = teacher.class_priors();
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            for (c, &p) in priors.iter().enumerate() {
                if u < p {
                    return Some(c);
                }
                u -= p;
            }
            Some(priors.len() - 1)
        })
        .collect()
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

fn check_finite(iteration: usize, what: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > 1e6 {
        return Err(Error::Divergence {
            iteration,
            what: what.to_string(),
            value,
        });
    }
    Ok(())
}
