//! The alternating generator / fake-network loop.
//!
//! Each objective is split into a draw of its randomness (a batch struct) and
//! a deterministic function of the weights given that batch, so gradients can
//! be checked against finite differences of exactly the loss being trained.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adversarial::{DiscBatch, Discriminator};
use super::{
    check_finite, pretrain_student, sample_classes, standard_normals, x0_coeffs, DistillConfig, FakeMode, GeneratorInit, Net,
    RealData,
};
use crate::error::{Error, Result};
use crate::eval::{energy_distance, sliced_w2};
use crate::nn::{checkpoint, AdamState, Mat, NetParams, Tape};
use crate::param::{from_x0_coeffs, loss_target, Kind};
use crate::schedule::law::TimestepLaw;
use crate::schedule::Schedule;
use crate::teacher::MixtureTeacher;

pub const METRICS_HEADER: &str = "iter,gen_loss,fake_loss,adv_loss,energy_distance,w2_sliced";

/// Normalized step times `t_k / T` for `k = 1..=K`, with
/// `t_k = (1 − (k − 1)/K)·T`.
pub fn step_times(steps: usize, t_max: f64) -> Vec<f64> {
    (1..=steps)
        .map(|k| (1.0 - (k - 1) as f64 / steps as f64) * t_max / t_max)
        .collect()
}

/// Inputs and outputs of every generator step, row-major `n × d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn samples(&self) -> &[f64] {
        self.outputs.last().expect("at least one step")
    }
}

/// Runs the `K`-step generator: step `k` sees
/// `(1 − t_k)·x_g^{(k−1)} + t_k z_k` with `x_g^{(0)} = 0`. Outputs are plain
/// values, so nothing downstream can differentiate through earlier steps.
pub fn generate<R: Rng + ?Sized>(
    gen: &Net,
    n: usize,
    rng: &mut R,
    classes: &[Option<usize>],
    steps: usize,
    t_max: f64,
) -> Result<Trajectory> {
    let d = gen.spec.input_dim;
    let times = step_times(steps, t_max);
    let mut prev = vec![0.0; n * d];
    let mut inputs = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    for &tk in &times {
        let z = standard_normals(rng, n * d);
        let x_in: Vec<f64> = prev.iter().zip(&z).map(|(&p, &z)| (1.0 - tk) * p + tk * z).collect();
        let out = gen.x0_batch(&x_in, &vec![tk; n], classes, None)?;
        inputs.push(x_in);
        outputs.push(out.clone());
        prev = out;
    }
    Ok(Trajectory { times, inputs, outputs })
}

/// Rectified-flow corruption `x_t = (1 − t)x_g + tε` of one output.
pub fn diffuse_output<R: Rng + ?Sized>(x_g: &[f64], t: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let eps = standard_normals(rng, x_g.len());
    let x_t = x_g.iter().zip(&eps).map(|(&x, &e)| (1.0 - t) * x + t * e).collect();
    (x_t, eps)
}

/// `λ/d · w · (f_φ − f_ψ)ᵀ(f_ψ − x_g)`, plus `sign·α·λ/d·w·‖f_φ − f_ψ‖²`,
/// for one sample. Both factors are formed explicitly.
pub fn generator_loss(f_phi: &[f64], f_psi: &[f64], x_g: &[f64], w: f64, lambda: f64, alpha: f64) -> f64 {
    let d = x_g.len() as f64;
    let mut cross = 0.0;
    let mut sq = 0.0;
    for i in 0..x_g.len() {
        let a = f_phi[i] - f_psi[i];
        let b = f_psi[i] - x_g[i];
        cross += a * b;
        sq += a * a;
    }
    lambda / d * w * cross + alpha * lambda / d * w * sq
}

/// Randomness of one generator update.
#[derive(Debug, Clone, PartialEq)]
pub struct GenBatch {
    /// Generator input at each row's step, `n × d`.
    pub x_in: Vec<f64>,
    pub t_step: Vec<f64>,
    pub t: Vec<f64>,
    pub eps: Vec<f64>,
    pub classes: Vec<Option<usize>>,
}

/// Randomness of one fake-network update.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeBatch {
    pub x_g: Vec<f64>,
    pub t: Vec<f64>,
    pub eps: Vec<f64>,
    pub classes: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenObjective {
    pub total: f64,
    pub sid: f64,
    pub adv: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub gen_loss: f64,
    pub fake_loss: f64,
    pub adv_loss: f64,
    pub energy_distance: f64,
    pub w2_sliced: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.iter as f64,
            self.gen_loss,
            self.fake_loss,
            self.adv_loss,
            self.energy_distance,
            self.w2_sliced,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub generator: Net,
    pub fake: Net,
    pub discriminator: Option<Net>,
    pub timeline: Vec<MetricRow>,
    pub pretrain_timeline: Vec<super::PretrainRow>,
    pub samples: Vec<f64>,
    pub sample_classes: Vec<Option<usize>>,
    pub energy_distance: f64,
    pub w2_sliced: f64,
    /// Counts of generator-loss timesteps in ten equal bins of `[0, 1]`.
    pub t_histogram: [u64; 10],
    pub teacher_fingerprint: String,
}

/// Training state of one distillation run.
#[derive(Debug)]
pub struct Distiller<'a> {
    pub config: DistillConfig,
    pub teacher: &'a MixtureTeacher<f64>,
    pub law: TimestepLaw<f64>,
    pub generator: Net,
    pub fake: Net,
    pub discriminator: Option<Discriminator>,
    pub adam_gen: AdamState<f64>,
    pub adam_fake: AdamState<f64>,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
    pub pretrain_timeline: Vec<super::PretrainRow>,
    pub t_histogram: [u64; 10],
    guidance: Option<f64>,
    fingerprint: String,
    rf: Schedule<f64>,
}

impl<'a> Distiller<'a> {
    /// Seeds the run, pretrains a student on the analytic teacher when the
    /// generator or fake net starts from it, and initializes all nets.
    pub fn new(config: DistillConfig, teacher: &'a MixtureTeacher<f64>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let classes = (teacher.class_count() > 0).then_some(teacher.class_count());
        let spec = config.net_spec(teacher.dim(), classes, Kind::Vfm);
        let needs_student = config.generator_init == GeneratorInit::Student || config.fake_mode == FakeMode::Direct;
        let (student, pretrain_timeline) = if needs_student {
            let mut pre = config.pretrain.clone();
            pre.kind = Kind::Vfm;
            pre.hidden = config.hidden.clone();
            pre.time_features = config.time_features;
            pre.class_embed = config.class_embed;
            let out = pretrain_student(&pre, teacher, &mut rng, config.eval_seed)?;
            (Some(out.net), out.timeline)
        } else {
            (None, Vec::new())
        };
        let fresh = |rng: &mut ChaCha8Rng| -> Result<Net> { Net::new(spec.clone(), NetParams::init(&spec, rng)?) };
        let fake = match (config.fake_mode, &student) {
            (FakeMode::Direct, Some(s)) => s.clone(),
            _ => fresh(&mut rng)?,
        };
        let generator = match (config.generator_init, student) {
            (GeneratorInit::Student, Some(s)) => s,
            _ => fresh(&mut rng)?,
        };
        let discriminator = if config.adversarial.enabled {
            Some(Discriminator::new(&config, teacher.dim(), classes, &mut rng)?)
        } else {
            None
        };
        Ok(Distiller {
            law: config.law()?,
            adam_gen: AdamState::new(generator.params.len(), config.lr_gen),
            adam_fake: AdamState::new(fake.params.len(), config.lr_fake),
            guidance: classes.map(|_| config.cfg_scale),
            fingerprint: teacher.fingerprint(),
            teacher,
            generator,
            fake,
            discriminator,
            rng,
            iteration: 0,
            pretrain_timeline,
            t_histogram: [0; 10],
            rf: Schedule::rectified_flow(),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.teacher.dim()
    }

    /// Guidance scale applied to teacher and fake predictions, if any.
    pub fn guidance(&self) -> Option<f64> {
        self.guidance
    }

    /// Teacher x0-predictions (guided when the run is) for every row, with
    /// the per-row `d × d` Jacobians in `x_t` when `jacobian`.
    pub fn teacher_x0(&self, x_t: &[f64], t: &[f64], classes: &[Option<usize>], jacobian: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut values = Vec::with_capacity(x_t.len());
        let mut jacs = Vec::with_capacity(if jacobian { x_t.len() * d } else { 0 });
        for (i, &ti) in t.iter().enumerate() {
            let row = &x_t[i * d..(i + 1) * d];
            match (self.guidance, classes[i]) {
                (Some(s), Some(c)) => {
                    let (v, j) = self.teacher.cfg_x0_jacobian(row, ti, &self.rf, c, s, jacobian)?;
                    values.extend(v);
                    if let Some(j) = j {
                        jacs.extend(j);
                    }
                }
                (_, c) if jacobian => {
                    let (v, j) = self.teacher.posterior_mean_jacobian(row, ti, &self.rf, c)?;
                    values.extend(v);
                    jacs.extend(j);
                }
                (_, c) => values.extend(self.teacher.posterior_mean(row, ti, &self.rf, c)?),
            }
        }
        Ok((values, jacs))
    }

    /// Draws rows with step indices uniform over `1..=K` from one generator
    /// rollout, returning each row's step input and time.
    fn draw_steps(&mut self, n: usize) -> Result<(Trajectory, Vec<usize>, Vec<Option<usize>>)> {
        let classes = sample_classes(self.teacher, n, &mut self.rng);
        let traj = generate(&self.generator, n, &mut self.rng, &classes, self.config.steps, self.config.t_max)?;
        let ks: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..self.config.steps)).collect();
        Ok((traj, ks, classes))
    }

    pub fn draw_gen_batch(&mut self) -> Result<GenBatch> {
        let n = self.config.batch;
        let d = self.dim();
        let (traj, ks, classes) = self.draw_steps(n)?;
        let mut x_in = Vec::with_capacity(n * d);
        for (i, &k) in ks.iter().enumerate() {
            x_in.extend_from_slice(&traj.inputs[k][i * d..(i + 1) * d]);
        }
        let t_step = ks.iter().map(|&k| traj.times[k]).collect();
        let t = self.law.sample_t(n, &mut self.rng)?;
        let eps = standard_normals(&mut self.rng, n * d);
        Ok(GenBatch {
            x_in,
            t_step,
            t,
            eps,
            classes,
        })
    }

    pub fn draw_fake_batch(&mut self) -> Result<FakeBatch> {
        let n = self.config.batch;
        let d = self.dim();
        let (traj, ks, classes) = self.draw_steps(n)?;
        let mut x_g = Vec::with_capacity(n * d);
        for (i, &k) in ks.iter().enumerate() {
            x_g.extend_from_slice(&traj.outputs[k][i * d..(i + 1) * d]);
        }
        let t = self.law.sample_t(n, &mut self.rng)?;
        let eps = standard_normals(&mut self.rng, n * d);
        Ok(FakeBatch { x_g, t, eps, classes })
    }

    /// Generator loss and its gradient in `theta` for a fixed batch. The
    /// gradient reaches `theta` through `x_g` directly and through `x_t` into
    /// the frozen fake net, the teacher and (when enabled) the discriminator.
    pub fn generator_objective(&self, theta: &[f64], b: &GenBatch) -> Result<GenObjective> {
        let c = &self.config;
        let n = b.t.len();
        let d = self.dim();
        let tape = Tape::new();
        let th = tape.leaf(Mat::new(1, theta.len(), theta.to_vec()));
        let x_in = tape.constant(Mat::new(n, d, b.x_in.clone()));
        let x_g = self.generator.x0_tape(&tape, th, x_in, &b.t_step, &b.classes, None)?;
        let keep: Vec<f64> = b.t.iter().map(|&t| 1.0 - t).collect();
        let noise: Vec<f64> = (0..n * d).map(|i| b.t[i / d] * b.eps[i]).collect();
        let x_t = tape.add(tape.scale_rows(x_g, &keep)?, tape.constant(Mat::new(n, d, noise)))?;
        let xv = tape.value(x_t).data;
        let (tv, tj) = self.teacher_x0(&xv, &b.t, &b.classes, true)?;
        let f_phi = tape.row_linear(x_t, Mat::new(n, d, tv), tj)?;
        let psi = self.fake.params_var(&tape, false);
        let f_psi = match self.config.fake_mode {
            FakeMode::Direct => self.fake.x0_tape(&tape, psi, x_t, &b.t, &b.classes, self.guidance)?,
            FakeMode::Residual => {
                let raw = self.fake.raw_tape(&tape, psi, x_t, &b.t, &b.classes, self.guidance)?;
                let scale: Vec<f64> = b.t.iter().map(|&t| x0_coeffs(self.fake.spec.output_kind, super::net_time(t)).1).collect();
                tape.add(f_phi, tape.scale_rows(raw, &scale)?)?
            }
        };
        let first = tape.sub(f_phi, f_psi)?;
        let second = tape.sub(f_psi, x_g)?;
        let row_scale: Vec<f64> = b.t.iter().map(|&t| c.lambda_sid / d as f64 * c.weight.eval(t) / n as f64).collect();
        let cross = tape.sum_cols(tape.mul(first, second)?);
        let mut sid = tape.sum(tape.scale_rows(cross, &row_scale)?);
        let sign = c.alpha_term.sign();
        if sign != 0.0 {
            let sq = tape.sum_cols(tape.square(first));
            let extra = tape.sum(tape.scale_rows(sq, &row_scale)?);
            sid = tape.add(sid, tape.scale(extra, sign * c.alpha_sid))?;
        }
        let mut total = sid;
        let mut adv_value = 0.0;
        if let Some(disc) = &self.discriminator {
            let adv = disc.generator_term(&tape, x_t, &b.t, &b.classes)?;
            adv_value = tape.scalar_value(adv);
            total = tape.add(total, tape.scale(adv, c.adversarial.weight))?;
        }
        let grads = tape.backward(total)?;
        Ok(GenObjective {
            total: tape.scalar_value(total),
            sid: tape.scalar_value(sid),
            adv: adv_value,
            grad: grads.get_or_zeros(&tape, th).data,
        })
    }

    /// The fake network's (guided) x0-prediction `f_ψ` as the generator
    /// objective sees it.
    pub fn fake_x0(&self, x_t: &[f64], t: &[f64], classes: &[Option<usize>]) -> Result<Vec<f64>> {
        match self.config.fake_mode {
            FakeMode::Direct => self.fake.x0_batch(x_t, t, classes, self.guidance),
            FakeMode::Residual => {
                let d = self.dim();
                let (mut out, _) = self.teacher_x0(x_t, t, classes, false)?;
                let raw = self.fake.raw_batch(x_t, t, classes, self.guidance)?;
                for (i, o) in out.iter_mut().enumerate() {
                    *o += x0_coeffs(self.fake.spec.output_kind, super::net_time(t[i / d])).1 * raw[i];
                }
                Ok(out)
            }
        }
    }

    /// Guided flow-matching loss of the fake net on detached generator
    /// outputs, `mean ‖out − target‖² / d` in the net's output kind.
    pub fn fake_objective(&self, psi: &[f64], b: &FakeBatch) -> Result<(f64, Vec<f64>)> {
        let n = b.t.len();
        let d = self.dim();
        let kind = self.fake.spec.output_kind;
        let mut x_t = Vec::with_capacity(n * d);
        let mut target = Vec::with_capacity(n * d);
        for i in 0..n * d {
            let t = b.t[i / d];
            x_t.push((1.0 - t) * b.x_g[i] + t * b.eps[i]);
            target.push(loss_target(kind, 1.0 - t, t, b.x_g[i], b.eps[i]));
        }
        if self.config.fake_mode == FakeMode::Residual {
            // Regress the correction: target minus the teacher's value in
            // the same output kind.
            let (tv, _) = self.teacher_x0(&x_t, &b.t, &b.classes, false)?;
            for i in 0..n * d {
                let t = super::net_time(b.t[i / d]);
                let (a, c) = from_x0_coeffs(kind, 1.0 - t, t);
                target[i] -= a * x_t[i] + c * tv[i];
            }
        }
        crate::nn::grad(psi, |tape, p| {
            let x = tape.constant(Mat::new(n, d, x_t));
            let out = self.fake.raw_tape(tape, p, x, &b.t, &b.classes, self.guidance)?;
            let diff = tape.sub(out, tape.constant(Mat::new(n, d, target)))?;
            Ok(tape.scale(tape.sum(tape.square(diff)), 1.0 / (n * d) as f64))
        })
    }

    /// One optimizer step on the fake net; returns its loss.
    pub fn fake_update(&mut self) -> Result<f64> {
        let b = self.draw_fake_batch()?;
        let (loss, grad) = self.fake_objective(&self.fake.params.values, &b)?;
        check_finite(self.iteration, "fake loss", loss)?;
        self.adam_fake.step(&mut self.fake.params.values, &grad)?;
        Ok(loss)
    }

    /// Real and generated rows, each diffused at its own `t ∼ p(t)`.
    pub fn draw_disc_batch(&mut self) -> Result<DiscBatch> {
        let n = self.config.batch;
        let d = self.dim();
        let (real, real_classes) = match self.config.adversarial.real.as_ref() {
            None => return Err(Error::config("adversarial training needs real data")),
            Some(RealData::Teacher) => {
                let classes = sample_classes(self.teacher, n, &mut self.rng);
                let mut pts = Vec::with_capacity(n * d);
                for &c in &classes {
                    pts.extend(self.teacher.sample(1, &mut self.rng, c)?.points);
                }
                (pts, classes)
            }
            Some(RealData::Table { points, classes }) => {
                let rows = classes.len();
                if rows == 0 || points.len() != rows * d {
                    return Err(Error::config("real-data table is empty or has the wrong dimension"));
                }
                let mut pts = Vec::with_capacity(n * d);
                let mut cls = Vec::with_capacity(n);
                for _ in 0..n {
                    let r = self.rng.random_range(0..rows);
                    pts.extend_from_slice(&points[r * d..(r + 1) * d]);
                    cls.push(if self.teacher.class_count() > 0 { classes[r] } else { None });
                }
                (pts, cls)
            }
        };
        let fake = self.draw_fake_batch()?;
        let t_real = self.law.sample_t(n, &mut self.rng)?;
        let eps_real = standard_normals(&mut self.rng, n * d);
        let diffuse = |x: &[f64], t: &[f64], e: &[f64]| -> Vec<f64> {
            (0..x.len()).map(|i| (1.0 - t[i / d]) * x[i] + t[i / d] * e[i]).collect()
        };
        Ok(DiscBatch {
            real: diffuse(&real, &t_real, &eps_real),
            t_real,
            classes_real: real_classes,
            fake: diffuse(&fake.x_g, &fake.t, &fake.eps),
            t_fake: fake.t,
            classes_fake: fake.classes,
        })
    }

    /// One iteration: fake updates, the optional discriminator update, then
    /// one generator update. Returns `(gen_loss, fake_loss, adv_loss)`.
    pub fn step(&mut self) -> Result<(f64, f64, f64)> {
        let mut fake_loss = 0.0;
        for _ in 0..self.config.fake_updates {
            fake_loss = self.fake_update()?;
        }
        if self.discriminator.is_some() {
            let batch = self.draw_disc_batch()?;
            let disc = self.discriminator.as_mut().expect("checked");
            let l = super::adversarial_update(disc, &batch)?;
            check_finite(self.iteration, "discriminator loss", l)?;
        }
        let b = self.draw_gen_batch()?;
        for &t in &b.t {
            self.t_histogram[((t * 10.0) as usize).min(9)] += 1;
        }
        let obj = self.generator_objective(&self.generator.params.values, &b)?;
        check_finite(self.iteration, "generator loss", obj.total)?;
        self.adam_gen.step(&mut self.generator.params.values, &obj.grad)?;
        if let Some(v) = self.generator.params.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: self.iteration,
                what: "generator parameter".into(),
                value: *v,
            });
        }
        self.iteration += 1;
        Ok((obj.sid, fake_loss, obj.adv))
    }

    /// Generator samples from the fixed evaluation noise.
    pub fn eval_samples(&self) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed);
        let n = self.config.eval_samples;
        let classes = sample_classes(self.teacher, n, &mut rng);
        let traj = generate(&self.generator, n, &mut rng, &classes, self.config.steps, self.config.t_max)?;
        Ok((traj.samples().to_vec(), classes))
    }

    /// Teacher reference draws matching the evaluation classes.
    pub fn reference_samples(&self, classes: &[Option<usize>]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut out = Vec::with_capacity(classes.len() * self.dim());
        for &c in classes {
            out.extend(self.teacher.sample(1, &mut rng, c)?.points);
        }
        Ok(out)
    }

    /// `(energy distance, sliced W2)` of the evaluation samples against the
    /// teacher reference.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let (x, classes) = self.eval_samples()?;
        let reference = self.reference_samples(&classes)?;
        let d = self.dim();
        let ed = energy_distance(&x, &reference, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed.wrapping_add(1));
        let w2 = sliced_w2(&x, &reference, d, self.config.eval_projections, &mut rng)?;
        Ok((ed, w2))
    }

    /// Runs to `config.iterations`, calling `on_row` with each metric row as
    /// it is produced. A divergence error leaves the state in place for
    /// dumping.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricRow)) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        let mut last = (f64::NAN, f64::NAN, f64::NAN);
        let every = self.config.eval_every;
        loop {
            let it = self.iteration;
            let done = it >= self.config.iterations;
            if done || (every > 0 && it % every == 0) {
                let (ed, w2) = self.evaluate()?;
                let row = MetricRow {
                    iter: it,
                    gen_loss: last.0,
                    fake_loss: last.1,
                    adv_loss: if self.discriminator.is_some() { last.2 } else { 0.0 },
                    energy_distance: ed,
                    w2_sliced: w2,
                };
                on_row(&row);
                rows.push(row);
            }
            if done {
                break;
            }
            last = self.step()?;
        }
        if self.teacher.fingerprint() != self.fingerprint {
            return Err(Error::Contract("teacher changed during distillation".into()));
        }
        Ok(rows)
    }

    pub fn teacher_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Writes generator, fake and discriminator checkpoints plus the
    /// iteration counter and generator state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, net: &Net| -> Result<()> {
            let p = dir.join(name);
            checkpoint::save(&p, &net.spec, &net.params)?;
            written.push(checkpoint::sidecar_path(&p));
            written.push(p);
            Ok(())
        };
        put("generator.ckpt", &self.generator)?;
        put("fake.ckpt", &self.fake)?;
        if let Some(d) = &self.discriminator {
            put("discriminator.ckpt", &d.net)?;
        }
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let state = format!(
            "iteration = {}\nrng_seed = {seed}\nrng_stream = {}\nrng_word_pos = {}\n",
            self.iteration,
            self.rng.get_stream(),
            self.rng.get_word_pos()
        );
        let p = dir.join("state.txt");
        fs::write(&p, state)?;
        written.push(p);
        Ok(written)
    }

    /// Loads weights and generator state written by [`save`](Self::save).
    /// Optimizer moments restart from zero.
    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        self.generator.params = checkpoint::load(&dir.join("generator.ckpt"), &self.generator.spec)?;
        self.fake.params = checkpoint::load(&dir.join("fake.ckpt"), &self.fake.spec)?;
        if let Some(d) = self.discriminator.as_mut() {
            d.net.params = checkpoint::load(&dir.join("discriminator.ckpt"), &d.net.spec)?;
        }
        let text = fs::read_to_string(dir.join("state.txt"))?;
        let get = |key: &str| -> Result<String> {
            text.lines()
                .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("state file lacks `{key}`")))
        };
        let bad = |k: &str| Error::Parse(format!("bad `{k}` in state file"));
        let hex = get("rng_seed")?;
        if hex.len() != 64 {
            return Err(bad("rng_seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad("rng_seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(get("rng_stream")?.parse().map_err(|_| bad("rng_stream"))?);
        rng.set_word_pos(get("rng_word_pos")?.parse().map_err(|_| bad("rng_word_pos"))?);
        self.rng = rng;
        self.iteration = get("iteration")?.parse().map_err(|_| bad("iteration"))?;
        self.adam_gen = AdamState::new(self.generator.params.len(), self.config.lr_gen);
        self.adam_fake = AdamState::new(self.fake.params.len(), self.config.lr_fake);
        Ok(())
    }

    pub fn into_outcome(self, timeline: Vec<MetricRow>) -> Result<DistillOutcome> {
        let (samples, classes) = self.eval_samples()?;
        let reference = self.reference_samples(&classes)?;
        let d = self.dim();
        let ed = energy_distance(&samples, &reference, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed.wrapping_add(1));
        let w2 = sliced_w2(&samples, &reference, d, self.config.eval_projections, &mut rng)?;
        Ok(DistillOutcome {
            generator: self.generator,
            fake: self.fake,
            discriminator: self.discriminator.map(|d| d.net),
            timeline,
            pretrain_timeline: self.pretrain_timeline,
            samples,
            sample_classes: classes,
            energy_distance: ed,
            w2_sliced: w2,
            t_histogram: self.t_histogram,
            teacher_fingerprint: self.fingerprint,
        })
    }
}

/// Fresh run from `config.seed` to `config.iterations`.
pub fn distill_run(config: &DistillConfig, teacher: &MixtureTeacher<f64>) -> Result<DistillOutcome> {
    let mut state = Distiller::new(config.clone(), teacher)?;
    let timeline = state.run(|_| {})?;
    state.into_outcome(timeline)
}
