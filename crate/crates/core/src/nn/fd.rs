//! Central finite-difference gradient verification.

use rand::seq::index::sample;
use rand::Rng;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub coordinates: Vec<usize>,
    pub max_rel_err: f64,
    pub worst: Option<(usize, f64, f64)>,
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps coordinates whose true derivative is ~0 from dividing
/// rounding noise by nothing; callers scale it with the loss magnitude.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks `grad` against `(f(x + h e_i) − f(x − h e_i)) / 2h` on up to
/// `count` distinct random coordinates.
pub fn check<R: Rng + ?Sized>(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    grad: &[f64],
    count: usize,
    h: f64,
    rng: &mut R,
) -> FdReport {
    assert_eq!(x.len(), grad.len());
    let coordinates = sample(rng, x.len(), count.min(x.len())).into_vec();
    let f0 = f(x).abs();
    let floor = 1e-6 * (1.0 + f0);
    let mut probe = x.to_vec();
    let mut report = FdReport {
        coordinates: coordinates.clone(),
        max_rel_err: 0.0,
        worst: None,
    };
    for &i in &coordinates {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(grad[i], numeric, floor);
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some((i, grad[i], numeric));
        }
    }
    report
}
