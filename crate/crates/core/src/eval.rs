//! Two-sample metrics for comparing generator output against teacher draws.
//! Sample sets are row-major `n × d` slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::teacher::MixtureTeacher;

pub const DEFAULT_PROJECTIONS: usize = 64;

fn rows<F>(x: &[F], dim: usize, what: &str) -> Result<usize> {
    if dim == 0 || x.len() % dim != 0 {
        return Err(Error::Dimension {
            expected: dim,
            got: x.len() % dim.max(1),
        });
    }
    let n = x.len() / dim;
    if n < 2 {
        return Err(Error::domain(format!("{what} needs at least two samples")));
    }
    Ok(n)
}

fn dist<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt()
}

/// Sum of `‖x_i − x_j‖` over unordered pairs `i < j`.
fn within_sum<F: Real>(x: &[F], dim: usize) -> F {
    let n = x.len() / dim;
    let mut total = F::zero();
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        let mut row = F::zero();
        for j in i + 1..n {
            row += dist(xi, &x[j * dim..(j + 1) * dim]);
        }
        total += row;
    }
    total
}

fn cross_mean<F: Real>(a: &[F], b: &[F], dim: usize) -> F {
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let mut total = F::zero();
    for i in 0..na {
        let ai = &a[i * dim..(i + 1) * dim];
        let mut row = F::zero();
        for j in 0..nb {
            row += dist(ai, &b[j * dim..(j + 1) * dim]);
        }
        total += row;
    }
    total / F::from_usize(na * nb).unwrap()
}

/// Energy statistic `2E‖a−b‖ − E‖a−a'‖ − E‖b−b'‖` with unbiased
/// (distinct-pair) within-sample terms. It can dip slightly below zero when
/// the two sets are close; see [`energy_distance_biased`] for the V-statistic.
pub fn energy_distance<F: Real>(a: &[F], b: &[F], dim: usize) -> Result<F> {
    let (na, nb) = (rows(a, dim, "energy distance")?, rows(b, dim, "energy distance")?);
    let two = F::lit(2.0);
    let wa = two * within_sum(a, dim) / F::from_usize(na * (na - 1)).unwrap();
    let wb = two * within_sum(b, dim) / F::from_usize(nb * (nb - 1)).unwrap();
    // Symmetric by construction: the cross term is ordered by the smaller
    // argument so swapping inputs repeats the same floating-point sum.
    let cross = if (na, a) <= (nb, b) {
        cross_mean(a, b, dim)
    } else {
        cross_mean(b, a, dim)
    };
    Ok(two * cross - (wa + wb))
}

/// V-statistic variant, averaging within-sample distances over all `n²`
/// pairs; exactly zero for identical sets and never negative.
pub fn energy_distance_biased<F: Real>(a: &[F], b: &[F], dim: usize) -> Result<F> {
    let (na, nb) = (rows(a, dim, "energy distance")?, rows(b, dim, "energy distance")?);
    if a == b {
        return Ok(F::zero());
    }
    let two = F::lit(2.0);
    let wa = two * within_sum(a, dim) / F::from_usize(na * na).unwrap();
    let wb = two * within_sum(b, dim) / F::from_usize(nb * nb).unwrap();
    let cross = if (na, a) <= (nb, b) {
        cross_mean(a, b, dim)
    } else {
        cross_mean(b, a, dim)
    };
    Ok((two * cross - (wa + wb)).max(F::zero()))
}

/// Exact squared 2-Wasserstein distance between two 1-D empirical measures
/// of possibly different sizes, by matching quantile functions.
pub fn w2_squared_1d<F: Real>(a: &mut [F], b: &mut [F]) -> F {
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let s: F = a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        return s / F::from_usize(na).unwrap();
    }
    // Walk the merged breakpoints i/na and j/nb; the cross-multiplied
    // integer form avoids rounding in the comparisons.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0usize;
    let total = na * nb;
    let mut acc = F::zero();
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        acc += diff * diff * F::from_usize(next - prev).unwrap();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc / F::from_usize(total).unwrap()
}

/// Per-direction 1-D W2 distances along `projections` random unit vectors.
pub fn sliced_w2_values<F: Real, R: Rng + ?Sized>(a: &[F], b: &[F], dim: usize, projections: usize, rng: &mut R) -> Result<Vec<F>> {
    let (na, nb) = (rows(a, dim, "sliced W2")?, rows(b, dim, "sliced W2")?);
    if projections == 0 {
        return Err(Error::config("sliced W2 needs at least one projection"));
    }
    let mut out = Vec::with_capacity(projections);
    let mut pa = vec![F::zero(); na];
    let mut pb = vec![F::zero(); nb];
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let dir: Vec<F> = dir.into_iter().map(F::lit).collect();
        out.push(sliced_along(a, b, dim, &dir, &mut pa, &mut pb));
    }
    Ok(out)
}

fn sliced_along<F: Real>(a: &[F], b: &[F], dim: usize, dir: &[F], pa: &mut [F], pb: &mut [F]) -> F {
    let proj = |x: &[F], out: &mut [F]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i * dim..(i + 1) * dim].iter().zip(dir).map(|(&v, &u)| v * u).sum();
        }
    };
    proj(a, pa);
    proj(b, pb);
    w2_squared_1d(pa, pb).sqrt()
}

/// W2 along one fixed direction (not necessarily normalized by the caller).
pub fn w2_along<F: Real>(a: &[F], b: &[F], dim: usize, dir: &[F]) -> Result<F> {
    let (na, nb) = (rows(a, dim, "W2")?, rows(b, dim, "W2")?);
    if dir.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: dir.len(),
        });
    }
    let norm = dir.iter().map(|&v| v * v).sum::<F>().sqrt();
    let unit: Vec<F> = dir.iter().map(|&v| v / norm).collect();
    Ok(sliced_along(a, b, dim, &unit, &mut vec![F::zero(); na], &mut vec![F::zero(); nb]))
}

/// Mean over random directions of the 1-D W2 distance of the projections.
pub fn sliced_w2<F: Real, R: Rng + ?Sized>(a: &[F], b: &[F], dim: usize, projections: usize, rng: &mut R) -> Result<F> {
    let v = sliced_w2_values(a, b, dim, projections, rng)?;
    Ok(v.iter().copied().sum::<F>() / F::from_usize(v.len()).unwrap())
}

pub fn mean<F: Real>(x: &[F], dim: usize) -> Vec<F> {
    let n = x.len() / dim;
    let mut m = vec![F::zero(); dim];
    for row in x.chunks_exact(dim) {
        for (mi, &v) in m.iter_mut().zip(row) {
            *mi += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= F::from_usize(n).unwrap());
    m
}

/// Unbiased sample covariance, row-major.
pub fn covariance<F: Real>(x: &[F], dim: usize) -> Vec<F> {
    let n = x.len() / dim;
    let m = mean(x, dim);
    let mut c = vec![F::zero(); dim * dim];
    for row in x.chunks_exact(dim) {
        for p in 0..dim {
            for q in 0..dim {
                c[p * dim + q] += (row[p] - m[p]) * (row[q] - m[q]);
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= F::from_usize(n - 1).unwrap());
    c
}

/// Summary metrics for one pair of sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Unbiased energy statistic clamped at zero.
    pub energy_distance: f64,
    pub sliced_w2: f64,
    /// Euclidean norm of the difference of sample means.
    pub mean_error: f64,
    pub cov_frobenius_error: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "energy_distance,sliced_w2,mean_error,cov_frobenius_error,n_a,n_b,seed";

    pub fn compute<F: Real>(a: &[F], b: &[F], dim: usize, projections: usize, seed: u64) -> Result<Self> {
        let (na, nb) = (rows(a, dim, "metrics")?, rows(b, dim, "metrics")?);
        let ed = energy_distance(a, b, dim)?.to_f64_lossy().max(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sw = sliced_w2(a, b, dim, projections, &mut rng)?.to_f64_lossy();
        let (ma, mb) = (mean(a, dim), mean(b, dim));
        let mean_error = ma.iter().zip(&mb).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt().to_f64_lossy();
        let (ca, cb) = (covariance(a, dim), covariance(b, dim));
        let cov_err = ca.iter().zip(&cb).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt().to_f64_lossy();
        Ok(MetricReport {
            energy_distance: ed,
            sliced_w2: sw,
            mean_error,
            cov_frobenius_error: cov_err,
            n_a: na,
            n_b: nb,
            seed,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            crate::io::fmt_g9(self.energy_distance),
            crate::io::fmt_g9(self.sliced_w2),
            crate::io::fmt_g9(self.mean_error),
            crate::io::fmt_g9(self.cov_frobenius_error),
            self.n_a,
            self.n_b,
            self.seed
        )
    }
}

/// Teacher-vs-teacher energy distances and the `mean + 3·std` bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
}

pub fn calibrate<F: Real, R: Rng + ?Sized>(
    teacher: &MixtureTeacher<F>,
    n: usize,
    trials: usize,
    rng: &mut R,
    class: Option<usize>,
) -> Result<Calibration> {
    if trials < 10 {
        return Err(Error::config("self-calibration needs at least 10 trials"));
    }
    let d = teacher.dim();
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = teacher.sample(n, rng, class)?;
        let b = teacher.sample(n, rng, class)?;
        values.push(energy_distance(&a.points, &b.points, d)?.to_f64_lossy());
    }
    let m = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (trials - 1) as f64;
    let std = var.sqrt();
    // The unbiased statistic of two exchangeable samples centres on zero, so
    // the mean alone can be negative; the bound is kept strictly positive.
    let threshold = (m + 3.0 * std).max(f64::MIN_POSITIVE);
    Ok(Calibration {
        values,
        mean: m,
        std,
        threshold,
    })
}

/// `mean + 3·std` of teacher-vs-teacher energy distances at sample size `n`.
pub fn self_calibrated_threshold<F: Real, R: Rng + ?Sized>(teacher: &MixtureTeacher<F>, n: usize, trials: usize, rng: &mut R) -> Result<f64> {
    Ok(calibrate(teacher, n, trials, rng, None)?.threshold)
}

/// Fraction of rows whose nearest teacher component carries label `class`.
pub fn class_purity<F: Real>(teacher: &MixtureTeacher<F>, x: &[F], class: usize) -> Result<f64> {
    let d = teacher.dim();
    if x.len() % d != 0 || x.is_empty() {
        return Err(Error::Dimension {
            expected: d,
            got: x.len() % d,
        });
    }
    let mut hits = 0usize;
    for row in x.chunks_exact(d) {
        let k = teacher.nearest_component(row)?;
        if teacher.components()[k].class == Some(class) {
            hits += 1;
        }
    }
    Ok(hits as f64 / (x.len() / d) as f64)
}
