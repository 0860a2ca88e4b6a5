use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sidflow_core::distill::{
    self, adversarial_update, diffuse_output, discriminator_accuracy, generate, generator_loss, oracle_mse, pretrain_student,
    step_times, AdversarialConfig, DiscBatch, Discriminator, DistillConfig, Distiller, FakeMode, GeneratorInit, Net,
    PretrainConfig, RealData,
};
use sidflow_core::nn::{self, fd, Mat, NetParams, NetSpec};
use sidflow_core::param::{loss_target, Kind};
use sidflow_core::schedule::{Schedule, T_HI, T_LO};
use sidflow_core::teacher::{Component, MixtureTeacher};
use sidflow_core::Error;

fn small(mut c: DistillConfig) -> DistillConfig {
    c.hidden = vec![16, 16];
    c.time_features = 2;
    c.class_embed = 4;
    c.batch = 16;
    c.eval_samples = 256;
    c.eval_projections = 8;
    c.pretrain.iterations = 20;
    c.pretrain.batch = 32;
    c.pretrain.eval_samples = 64;
    c
}

fn jitter(values: &mut [f64], scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
}

fn gaussian_1d(mean: f64, var: f64) -> MixtureTeacher<f64> {
    MixtureTeacher::new(vec![Component {
        weight: 1.0,
        mean: vec![mean],
        cov: vec![var],
        class: None,
    }])
    .unwrap()
}

#[test]
fn step_times_for_four_steps() {
    assert_eq!(step_times(4, 1000.0), vec![1.0, 0.75, 0.5, 0.25]);
    assert_eq!(step_times(1, 1000.0), vec![1.0]);
}

#[test]
fn identity_generator_first_step_returns_the_noise() {
    // A fresh velocity net has a zero head, so x0 = x_in − t·0 = x_in.
    let spec = NetSpec::standard(2, None, Kind::Vfm);
    let net = Net::new(spec.clone(), NetParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()).unwrap();
    let n = 64;
    let traj = generate(&net, n, &mut ChaCha8Rng::seed_from_u64(2), &vec![None; n], 4, 1000.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
    assert_eq!(traj.outputs[0], z);
    assert_eq!(traj.inputs[0], z);
    // Later inputs mix the previous output with fresh noise.
    let z2: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..n * 2 {
        assert!((traj.inputs[1][i] - (0.25 * z[i] + 0.75 * z2[i])).abs() < 1e-15);
    }
    assert_eq!(traj.samples(), &traj.outputs[3][..]);
}

#[test]
fn later_steps_see_frozen_earlier_outputs() {
    let spec = NetSpec {
        hidden: vec![8, 8],
        ..NetSpec::standard(2, None, Kind::Vfm)
    };
    let mut p = NetParams::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    jitter(&mut p.values, 0.2, 4);
    let net = Net::new(spec, p).unwrap();
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z1: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
    let z2: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
    let second = |theta: &[f64], sg: bool| {
        nn::grad(theta, |tape, th| {
            let x1 = net.x0_tape(tape, th, tape.constant(Mat::new(n, 2, z1.clone())), &[1.0; 4], &[], None)?;
            let x1 = if sg { nn::stop_gradient(tape, x1) } else { x1 };
            let noise = tape.constant(Mat::new(n, 2, z2.iter().map(|z| 0.75 * z).collect()));
            let x_in = tape.add(tape.scale(x1, 0.25), noise)?;
            let x2 = net.x0_tape(tape, th, x_in, &[0.75; 4], &[], None)?;
            Ok(tape.sum(x2))
        })
        .unwrap()
    };
    let theta = net.params.values.clone();
    let (_, with_sg) = second(&theta, true);
    let (_, without_sg) = second(&theta, false);
    assert_ne!(with_sg, without_sg);
    // Finite differences of step 2 with its input computed once and frozen.
    let one = net.x0_batch(&z1, &[1.0; 4], &[], None).unwrap();
    let frozen: Vec<f64> = (0..n * 2).map(|i| 0.25 * one[i] + 0.75 * z2[i]).collect();
    let f = |th: &[f64]| -> f64 {
        let m = Net::new(net.spec.clone(), NetParams::from_values(&net.spec, th.to_vec()).unwrap()).unwrap();
        m.x0_batch(&frozen, &[0.75; 4], &[], None).unwrap().iter().sum()
    };
    let r = fd::check(f, &theta, &with_sg, 100, 1e-5, &mut ChaCha8Rng::seed_from_u64(6));
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn diffusion_limits_and_mean() {
    let x = vec![1.5, -2.0, 0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (lo, _) = diffuse_output(&x, T_LO, &mut rng);
    let (hi, eps) = diffuse_output(&x, T_HI, &mut rng);
    for i in 0..3 {
        assert!((lo[i] - x[i]).abs() < 1e-2);
        assert!((hi[i] - eps[i]).abs() < 1e-2);
    }
    let n = 10_000;
    let mut mean = [0.0; 3];
    for _ in 0..n {
        let (xt, _) = diffuse_output(&x, 0.5, &mut rng);
        for j in 0..3 {
            mean[j] += xt[j] / n as f64;
        }
    }
    // Per-coordinate standard error is 0.5/√n.
    for j in 0..3 {
        assert!((mean[j] - 0.5 * x[j]).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "{mean:?}");
    }
}

#[test]
fn generator_loss_zeroes_and_hand_value() {
    let phi = [0.3, -1.0];
    let xg = [2.0, 2.0];
    assert_eq!(generator_loss(&phi, &phi, &xg, 0.7, 100.0, 0.0), 0.0);
    assert_eq!(generator_loss(&phi, &xg, &xg, 0.7, 100.0, 0.0), 0.0);
    // 1-D Gaussian teacher N(m, v): E[x0 | x_t] = m + a v (x_t − a m) / (a² v + t²).
    let (m, v) = (0.7, 0.5);
    let teacher = gaussian_1d(m, v);
    let (t, x_g, f_psi) = (0.4, 1.3, 0.2);
    let x_t = 0.9;
    let a = 1.0 - t;
    let f_phi = m + a * v * (x_t - a * m) / (a * a * v + t * t);
    let got = teacher.posterior_mean(&[x_t], t, &Schedule::rectified_flow(), None).unwrap()[0];
    assert!((got - f_phi).abs() < 1e-14);
    let hand = 100.0 * (1.0 - t) * (f_phi - f_psi) * (f_psi - x_g);
    let loss = generator_loss(&[got], &[f_psi], &[x_g], 1.0 - t, 100.0, 0.0);
    assert!((loss - hand).abs() < 1e-12 * hand.abs().max(1.0));
    // The optional term adds α·λ/d·w·‖f_φ − f_ψ‖².
    let with_alpha = generator_loss(&[got], &[f_psi], &[x_g], 1.0 - t, 100.0, 0.5);
    assert!((with_alpha - hand - 50.0 * (1.0 - t) * (f_phi - f_psi).powi(2)).abs() < 1e-10);
}

#[test]
fn default_weight_is_one_minus_t_exactly() {
    let c = DistillConfig::default();
    let law = c.law().unwrap();
    let ts = law.sample_t(1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    for t in ts {
        assert!((T_LO..=T_HI).contains(&t));
        assert_eq!(c.weight.eval(t), 1.0 - t);
    }
    assert_eq!(c.steps, 4);
    assert_eq!(c.lambda_sid, 100.0);
    assert_eq!(c.cfg_scale, 4.5);
}

#[test]
fn zero_noise_velocity_target() {
    let (x0, eps) = (1.7, -0.4);
    let target = loss_target(Kind::Vfm, 1.0 - T_LO, T_LO, x0, eps);
    assert!((target - (eps - x0)).abs() < 1e-12);
}

fn fd_generator(config: DistillConfig, teacher: &MixtureTeacher<f64>, seed: u64) {
    let mut d = Distiller::new(config, teacher).unwrap();
    jitter(&mut d.generator.params.values, 0.3, seed);
    jitter(&mut d.fake.params.values, 0.3, seed + 1);
    if let Some(disc) = d.discriminator.as_mut() {
        jitter(&mut disc.net.params.values, 0.3, seed + 2);
    }
    let b = d.draw_gen_batch().unwrap();
    let theta = d.generator.params.values.clone();
    let obj = d.generator_objective(&theta, &b).unwrap();
    assert!(obj.sid.abs() > 1e-6, "degenerate state {}", obj.sid);
    let f = |th: &[f64]| d.generator_objective(th, &b).unwrap().total;
    let r = fd::check(f, &theta, &obj.grad, 120, 1e-5, &mut ChaCha8Rng::seed_from_u64(seed + 3));
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn generator_loss_gradient_matches_finite_differences() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(None);
    fd_generator(small(DistillConfig::default()), &ring, 10);
    let direct = DistillConfig {
        fake_mode: FakeMode::Direct,
        generator_init: GeneratorInit::Student,
        ..small(DistillConfig::default())
    };
    fd_generator(direct, &ring, 20);
}

#[test]
fn guided_and_adversarial_generator_gradients() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(Some(2));
    let mut c = small(DistillConfig::default());
    c.adversarial = AdversarialConfig {
        enabled: true,
        weight: 0.5,
        hidden: vec![8, 8],
        real: Some(RealData::Teacher),
        ..AdversarialConfig::default()
    };
    c.alpha_term = distill::AlphaTerm::Add;
    fd_generator(c, &ring, 30);
}

#[test]
fn fake_loss_gradient_matches_finite_differences() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(Some(2));
    for mode in [FakeMode::Residual, FakeMode::Direct] {
        let c = DistillConfig {
            fake_mode: mode,
            ..small(DistillConfig::default())
        };
        let mut d = Distiller::new(c, &ring).unwrap();
        jitter(&mut d.generator.params.values, 0.3, 40);
        jitter(&mut d.fake.params.values, 0.3, 41);
        let b = d.draw_fake_batch().unwrap();
        let psi = d.fake.params.values.clone();
        let (_, g) = d.fake_objective(&psi, &b).unwrap();
        let f = |p: &[f64]| d.fake_objective(p, &b).unwrap().0;
        let r = fd::check(f, &psi, &g, 120, 1e-5, &mut ChaCha8Rng::seed_from_u64(42));
        assert!(r.max_rel_err < 1e-4, "{mode:?}: {r:?}");
    }
}

#[test]
fn discriminator_loss_gradient_matches_finite_differences() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(Some(2));
    let mut c = small(DistillConfig::default());
    c.adversarial = AdversarialConfig {
        enabled: true,
        real: Some(RealData::Teacher),
        ..AdversarialConfig::default()
    };
    let mut d = Distiller::new(c, &ring).unwrap();
    jitter(&mut d.generator.params.values, 0.3, 50);
    let disc = d.discriminator.as_mut().unwrap();
    jitter(&mut disc.net.params.values, 0.1, 51);
    let b = d.draw_disc_batch().unwrap();
    let disc = d.discriminator.as_ref().unwrap();
    let p = disc.net.params.values.clone();
    let (_, g) = disc.objective(&p, &b).unwrap();
    let f = |q: &[f64]| disc.objective(q, &b).unwrap().0;
    let r = fd::check(f, &p, &g, 120, 1e-5, &mut ChaCha8Rng::seed_from_u64(52));
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

/// Rows of a 1-D batch diffused at `t`, with their original points.
fn disc_rows(real: &[f64], fake: &[f64], t: f64, rng: &mut ChaCha8Rng) -> DiscBatch {
    let diffuse = |x: &[f64], rng: &mut ChaCha8Rng| diffuse_output(x, t, rng).0;
    DiscBatch {
        real: diffuse(real, rng),
        t_real: vec![t; real.len()],
        classes_real: vec![None; real.len()],
        fake: diffuse(fake, rng),
        t_fake: vec![t; fake.len()],
        classes_fake: vec![None; fake.len()],
    }
}

fn trained_disc(real: &dyn Fn(&mut ChaCha8Rng) -> f64, fake: &dyn Fn(&mut ChaCha8Rng) -> f64, t: f64) -> f64 {
    let mut c = DistillConfig::default();
    c.adversarial.hidden = vec![16, 16];
    c.time_features = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut disc = Discriminator::new(&c, 1, None, &mut rng).unwrap();
    for _ in 0..300 {
        let r: Vec<f64> = (0..128).map(|_| real(&mut rng)).collect();
        let f: Vec<f64> = (0..128).map(|_| fake(&mut rng)).collect();
        let b = disc_rows(&r, &f, t, &mut rng);
        adversarial_update(&mut disc, &b).unwrap();
    }
    let r: Vec<f64> = (0..4000).map(|_| real(&mut rng)).collect();
    let f: Vec<f64> = (0..4000).map(|_| fake(&mut rng)).collect();
    discriminator_accuracy(&disc, &disc_rows(&r, &f, t, &mut rng)).unwrap()
}

#[test]
fn discriminator_accuracy_limits() {
    let normal = |r: &mut ChaCha8Rng| r.sample::<f64, _>(StandardNormal);
    let same = trained_disc(&normal, &normal, 0.3);
    // Standard error at 8000 rows is ~0.006; training noise adds a little.
    assert!((same - 0.5).abs() < 0.05, "indistinguishable accuracy {same}");
    let sep = trained_disc(&|_| 2.0, &|_| -2.0, 0.01);
    assert!(sep > 0.99, "separable accuracy {sep}");
}

#[test]
fn residual_fake_at_init_gives_zero_sid_gradient() {
    // f_ψ = f_φ exactly, so the first factor vanishes row by row.
    let ring = MixtureTeacher::<f64>::benchmark_ring(None);
    let mut d = Distiller::new(small(DistillConfig::default()), &ring).unwrap();
    jitter(&mut d.generator.params.values, 0.3, 70);
    let b = d.draw_gen_batch().unwrap();
    let obj = d.generator_objective(&d.generator.params.values, &b).unwrap();
    assert_eq!(obj.sid, 0.0);
    assert!(obj.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn fake_trains_to_a_stationary_point_on_a_frozen_generator() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(None);
    let c = DistillConfig {
        batch: 256,
        lr_fake: 3e-3,
        ..small(DistillConfig::default())
    };
    let mut d = Distiller::new(c, &ring).unwrap();
    jitter(&mut d.generator.params.values, 0.2, 80);
    let b = d.draw_fake_batch().unwrap();
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (_, g0) = d.fake_objective(&d.fake.params.values, &b).unwrap();
    let mut adam = nn::AdamState::with_betas(d.fake.params.len(), 3e-3, 0.9, 0.999, 1e-8);
    let mut psi = d.fake.params.values.clone();
    for i in 0..12000 {
        if i % 4000 == 0 && i > 0 {
            adam.lr *= 0.1;
        }
        let (_, g) = d.fake_objective(&psi, &b).unwrap();
        adam.step(&mut psi, &g).unwrap();
    }
    let (_, g) = d.fake_objective(&psi, &b).unwrap();
    assert!(norm(&g) < 1e-2 * norm(&g0), "{} vs {}", norm(&g), norm(&g0));
}

#[test]
fn runs_are_deterministic_and_keep_the_teacher_fixed() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(None);
    let c = DistillConfig {
        iterations: 12,
        eval_every: 4,
        lr_gen: 1e-4,
        ..small(DistillConfig::default())
    };
    let a = distill::distill_run(&c, &ring).unwrap();
    let b = distill::distill_run(&c, &ring).unwrap();
    assert_eq!(a.timeline.len(), 4);
    let bits = |o: &distill::DistillOutcome| -> Vec<u64> {
        o.timeline.iter().flat_map(|r| r.values()).map(f64::to_bits).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.teacher_fingerprint, ring.fingerprint());
    assert_eq!(a.t_histogram.iter().sum::<u64>(), 12 * 16);
    assert!(a.timeline[0].gen_loss.is_nan());
    assert_eq!(a.timeline[0].adv_loss, 0.0);
}

#[test]
fn checkpoint_restores_weights_and_generator_state() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(Some(2));
    let c = DistillConfig {
        iterations: 5,
        ..small(DistillConfig::default())
    };
    let mut a = Distiller::new(c.clone(), &ring).unwrap();
    a.run(|_| {}).unwrap();
    let dir = std::env::temp_dir().join(format!("sidflow-ckpt-{}", std::process::id()));
    let written = a.save(&dir).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let mut b = Distiller::new(DistillConfig { seed: 99, ..c }, &ring).unwrap();
    b.restore(&dir).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.fake, b.fake);
    assert_eq!(b.iteration, 5);
    assert_eq!(a.draw_gen_batch().unwrap(), b.draw_gen_batch().unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn divergence_and_configuration_errors() {
    let ring = MixtureTeacher::<f64>::benchmark_ring(None);
    let c = DistillConfig {
        lambda_sid: 1e12,
        iterations: 20,
        lr_fake: 1e-2,
        ..small(DistillConfig::default())
    };
    let mut d = Distiller::new(c, &ring).unwrap();
    jitter(&mut d.generator.params.values, 0.3, 90);
    assert!(matches!(d.run(|_| {}), Err(Error::Divergence { .. })));
    let mut bad = small(DistillConfig::default());
    bad.adversarial.enabled = true;
    assert!(matches!(Distiller::new(bad, &ring), Err(Error::Config(_))));
}

fn single_gaussian() -> MixtureTeacher<f64> {
    MixtureTeacher::new(vec![Component {
        weight: 1.0,
        mean: vec![1.0, -0.5],
        cov: vec![0.5, 0.1, 0.1, 0.3],
        class: None,
    }])
    .unwrap()
}

fn student(kind: Kind, iterations: usize) -> (f64, Net) {
    let teacher = single_gaussian();
    let cfg = PretrainConfig {
        kind,
        iterations,
        hidden: vec![64, 64],
        time_features: 4,
        eval_every: 0,
        ..PretrainConfig::default()
    };
    let out = pretrain_student(&cfg, &teacher, &mut ChaCha8Rng::seed_from_u64(100), 1).unwrap();
    let law = cfg.law().unwrap();
    let mse = oracle_mse(&out.net, &teacher, &law, 4096, &mut ChaCha8Rng::seed_from_u64(101)).unwrap();
    (mse, out.net)
}

#[test]
fn x0_student_matches_the_analytic_posterior_mean() {
    let (mse, _) = student(Kind::X0, 4000);
    assert!(mse < 1e-3, "oracle mse {mse}");
}

#[test]
fn x0_and_velocity_students_share_one_objective() {
    let (a, _) = student(Kind::X0, 4000);
    let (b, _) = student(Kind::Vfm, 4000);
    assert!(a.max(b) / a.min(b) < 2.0, "x0 {a} vs vfm {b}");
}

#[test]
fn zero_iteration_student_has_a_zero_head() {
    let (_, net) = student(Kind::Vfm, 0);
    let x = [0.3, -1.2, 2.0, 0.5];
    let raw = net.raw_batch(&x, &[0.2, 0.7], &[], None).unwrap();
    assert!(raw.iter().all(|&v| v == 0.0));
    // A velocity head of zero reads as x0 = x_t.
    assert_eq!(net.x0_batch(&x, &[0.2, 0.7], &[], None).unwrap(), x.to_vec());
    let bad = PretrainConfig {
        kind: Kind::Score,
        ..PretrainConfig::default()
    };
    let r = pretrain_student(&bad, &single_gaussian(), &mut ChaCha8Rng::seed_from_u64(0), 0);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn tape_teacher_matches_pointwise_teacher() {
    // The per-row Jacobian node reproduces the teacher's own finite
    // differences, which is what lets gradients pass through x_t.
    let ring = MixtureTeacher::<f64>::benchmark_ring(Some(2));
    let d = Distiller::new(small(DistillConfig::default()), &ring).unwrap();
    let x = [1.0, 3.5, -2.0, 0.3];
    let t = [0.3, 0.8];
    let cls = [Some(0), Some(1)];
    let (v, j) = d.teacher_x0(&x, &t, &cls, true).unwrap();
    for i in 0..2 {
        for k in 0..2 {
            let mut up = x;
            up[i * 2 + k] += 1e-6;
            let mut dn = x;
            dn[i * 2 + k] -= 1e-6;
            let (vu, _) = d.teacher_x0(&up, &t, &cls, false).unwrap();
            let (vd, _) = d.teacher_x0(&dn, &t, &cls, false).unwrap();
            for o in 0..2 {
                let num = (vu[i * 2 + o] - vd[i * 2 + o]) / 2e-6;
                assert!(fd::rel_err(j[i * 4 + o * 2 + k], num, 1e-6) < 1e-5);
            }
        }
    }
    assert_eq!(v.len(), 4);
}
