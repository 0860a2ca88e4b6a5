use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sidflow_core::eval::{calibrate, energy_distance, energy_distance_biased, sliced_w2, sliced_w2_values, MetricReport};
use sidflow_core::teacher::MixtureTeacher;

/// Textbook double loop over all ordered pairs, no symmetry shortcuts.
fn naive_energy(a: &[f64], b: &[f64], d: usize, unbiased: bool) -> f64 {
    let na = a.len() / d;
    let nb = b.len() / d;
    let norm = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let mut xy = 0.0;
    for i in 0..na {
        for j in 0..nb {
            xy += norm(&a[i * d..][..d], &b[j * d..][..d]);
        }
    }
    let within = |x: &[f64], n: usize| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += norm(&x[i * d..][..d], &x[j * d..][..d]);
                }
            }
        }
        s / if unbiased { (n * (n - 1)) as f64 } else { (n * n) as f64 }
    };
    2.0 * xy / (na * nb) as f64 - within(a, na) - within(b, nb)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<f64> {
    (0..n * d)
        .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % d == 0 { shift } else { 0.0 })
        .collect()
}

#[test]
fn energy_distance_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(na, nb, d) in &[(512, 512, 2), (300, 177, 3), (2, 5, 1), (64, 512, 2)] {
        let a = gaussian(&mut rng, na, d, 0.0);
        let b = gaussian(&mut rng, nb, d, 0.7);
        let fast = energy_distance(&a, &b, d).unwrap();
        let slow = naive_energy(&a, &b, d, true);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{fast} vs {slow}");
        let fast_b = energy_distance_biased(&a, &b, d).unwrap();
        let slow_b = naive_energy(&a, &b, d, false).max(0.0);
        assert!((fast_b - slow_b).abs() <= 1e-10 * slow_b.abs());
    }
}

#[test]
fn separated_gaussians_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let a = gaussian(&mut rng, n, 1, 0.0);
    let b = gaussian(&mut rng, n, 1, 10.0);
    let fast = energy_distance(&a, &b, 1).unwrap();
    let slow = naive_energy(&a, &b, 1, true);
    assert!((fast - slow).abs() <= 0.05 * slow);
    // Population value: 2E|X−Y| − 2E|X−X'| with X−Y ~ N(10, 2).
    assert!((fast - 2.0 * (10.0 - 2.0 / std::f64::consts::PI.sqrt())).abs() < 0.5);
}

#[test]
fn identical_inputs_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = gaussian(&mut rng, 200, 2, 0.0);
    let b = gaussian(&mut rng, 150, 2, 0.3);
    assert_eq!(energy_distance_biased(&a, &a, 2).unwrap(), 0.0);
    let u = energy_distance(&a, &a, 2).unwrap();
    assert!(u <= 0.0 && u.abs() < 2.0 * 3.0 / 200.0);
    assert_eq!(energy_distance(&a, &b, 2).unwrap(), energy_distance(&b, &a, 2).unwrap());
    let r = MetricReport::compute(&a, &a, 2, 64, 1).unwrap();
    assert_eq!(r.energy_distance, 0.0);
    assert_eq!(r.sliced_w2, 0.0);
}

#[test]
fn sliced_w2_is_seeded_and_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = gaussian(&mut rng, 800, 2, 0.0);
    let b: Vec<f64> = gaussian(&mut rng, 600, 2, 1.0).iter().enumerate().map(|(i, v)| if i % 2 == 1 { 2.0 * v } else { *v }).collect();
    let v1 = sliced_w2(&a, &b, 2, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let v2 = sliced_w2(&a, &b, 2, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(v1, v2);
    let (c, s) = (0.6f64, 0.8f64);
    let rot = |x: &[f64]| x.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect::<Vec<_>>();
    let vals = sliced_w2_values(&a, &b, 2, 64, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let rvals = sliced_w2_values(&rot(&a), &rot(&b), 2, 64, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let mu = m(v);
        (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
    };
    let spread = (se(&vals).powi(2) + se(&rvals).powi(2)).sqrt();
    assert!((m(&vals) - m(&rvals)).abs() < 2.0 * spread, "{} vs {} (se {spread})", m(&vals), m(&rvals));
}

#[test]
fn calibrated_threshold_behaviour() {
    let teacher = MixtureTeacher::<f64>::benchmark_ring(None);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let small = calibrate(&teacher, 512, 20, &mut rng, None).unwrap();
    let large = calibrate(&teacher, 4096, 10, &mut rng, None).unwrap();
    assert!(small.threshold > 0.0 && large.threshold > 0.0);
    assert!(large.threshold < small.threshold, "{} !< {}", large.threshold, small.threshold);

    // The null distribution of the statistic is a weighted sum of centred
    // chi-square terms and is right-skewed, so mean + 3·std leaves about 2%
    // of fresh pairs above it rather than the Gaussian 0.13%.
    let cal = calibrate(&teacher, 256, 200, &mut rng, None).unwrap();
    let trials = 400;
    let below = (0..trials)
        .filter(|_| {
            let a = teacher.sample(256, &mut rng, None).unwrap();
            let b = teacher.sample(256, &mut rng, None).unwrap();
            energy_distance(&a.points, &b.points, 2).unwrap() < cal.threshold
        })
        .count();
    let rate = below as f64 / trials as f64;
    println!("fresh teacher pairs below threshold: {rate:.4}");
    assert!(rate >= 0.95, "{below}/{trials}");
}

#[test]
fn report_row_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian(&mut rng, 50, 2, 0.0);
    let b = gaussian(&mut rng, 40, 2, 1.0);
    let r = MetricReport::compute(&a, &b, 2, 16, 5).unwrap();
    assert_eq!(r.csv_row().split(',').count(), MetricReport::CSV_HEADER.split(',').count());
    assert!(r.mean_error > 0.5 && r.energy_distance > 0.0 && r.cov_frobenius_error > 0.0);
    assert_eq!((r.n_a, r.n_b, r.seed), (50, 40, 5));
}
