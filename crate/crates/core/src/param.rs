//! Conversion algebra among prediction parameterizations and the loss-weight
//! identities relating their denoising losses.
//!
//! Given `x_t = α x0 + σ ε`, each parameterization is an affine function of
//! `(x_t, x0)`:
//!
//! | kind    | value                               |
//! |---------|-------------------------------------|
//! | `x0`    | `x0`                                |
//! | `eps`   | `(x_t − α x0)/σ`                    |
//! | `v`     | `α ε − σ x0`                        |
//! | `vfm`   | `ε − x0`                            |
//! | `score` | `−(x_t − α x0)/σ²`                  |
//! | `trig`  | `cos ε − sin x0`, `(cos, sin) = (α, σ)/√(α²+σ²)` |
//!
//! All conversions go through `x0`, so any ordered pair composes two affine
//! maps and round trips are exact up to rounding.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::schedule::Schedule;

/// Which quantity a network or teacher output estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    X0,
    Eps,
    V,
    Vfm,
    Trig,
    Score,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::X0, Kind::Eps, Kind::V, Kind::Vfm, Kind::Trig, Kind::Score];

    pub fn name(self) -> &'static str {
        match self {
            Kind::X0 => "x0",
            Kind::Eps => "eps",
            Kind::V => "v",
            Kind::Vfm => "vfm",
            Kind::Trig => "trig",
            Kind::Score => "score",
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown prediction kind `{s}`")))
    }
}

/// Affine coefficients `(a, b)` with `value = a x_t + b x0`.
pub fn from_x0_coeffs<F: Real>(kind: Kind, alpha: F, sigma: F) -> (F, F) {
    let (one, zero) = (F::one(), F::zero());
    let n2 = alpha * alpha + sigma * sigma;
    match kind {
        Kind::X0 => (zero, one),
        Kind::Eps => (one / sigma, -alpha / sigma),
        Kind::V => (alpha / sigma, -n2 / sigma),
        Kind::Vfm => (one / sigma, -(alpha + sigma) / sigma),
        Kind::Score => (-one / (sigma * sigma), alpha / (sigma * sigma)),
        Kind::Trig => {
            let n = n2.sqrt();
            (alpha / (sigma * n), -n / sigma)
        }
    }
}

/// Affine coefficients `(a, b)` with `x0 = a x_t + b value`.
pub fn to_x0_coeffs<F: Real>(kind: Kind, alpha: F, sigma: F) -> (F, F) {
    let (one, zero) = (F::one(), F::zero());
    let n2 = alpha * alpha + sigma * sigma;
    match kind {
        Kind::X0 => (zero, one),
        Kind::Eps => (one / alpha, -sigma / alpha),
        Kind::V => (alpha / n2, -sigma / n2),
        Kind::Vfm => (one / (alpha + sigma), -sigma / (alpha + sigma)),
        Kind::Score => (one / alpha, sigma * sigma / alpha),
        Kind::Trig => (alpha / n2, -sigma * n2.sqrt() / n2),
    }
}

/// A tagged prediction at a corrupted point `(x_t, t)` of a schedule.
///
/// `x_t` is always expressed in the schedule's own coordinates. For `trig`
/// predictions the TrigFlow state is `σ_d x_t / √(α² + σ²)`, and the value is
/// the scale-free TrigFlow output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<'s, F> {
    pub kind: Kind,
    pub value: Vec<F>,
    pub x_t: Vec<F>,
    pub t: F,
    pub schedule: &'s Schedule<F>,
}

impl<'s, F: Real> Prediction<'s, F> {
    pub fn new(kind: Kind, value: Vec<F>, x_t: Vec<F>, t: F, schedule: &'s Schedule<F>) -> Result<Self> {
        if value.len() != x_t.len() {
            return Err(Error::Dimension {
                expected: x_t.len(),
                got: value.len(),
            });
        }
        if value.iter().chain(&x_t).any(|v| !v.is_finite()) {
            return Err(Error::domain("prediction values must be finite"));
        }
        Ok(Prediction {
            kind,
            value,
            x_t,
            t,
            schedule,
        })
    }

    /// TrigFlow data scale of the attached schedule.
    pub fn sigma_d(&self) -> F {
        self.schedule.sigma_d()
    }

    /// TrigFlow-coordinate state `x_{t_Trig}`.
    pub fn trig_state(&self) -> Result<Vec<F>> {
        let (a, s) = self.schedule.alpha_sigma(self.t)?;
        let scale = self.sigma_d() / (a * a + s * s).sqrt();
        Ok(self.x_t.iter().map(|&x| scale * x).collect())
    }

    pub fn convert(&self, target: Kind) -> Result<Prediction<'s, F>> {
        convert(self, target)
    }
}

/// Re-express a prediction as another kind at the same `(x_t, t)`.
pub fn convert<'s, F: Real>(p: &Prediction<'s, F>, target: Kind) -> Result<Prediction<'s, F>> {
    let (alpha, sigma) = p.schedule.alpha_sigma(p.t)?;
    if !(sigma > F::zero()) {
        return Err(Error::domain("sigma_t vanishes; conversions are singular"));
    }
    let (ta, tb) = to_x0_coeffs(p.kind, alpha, sigma);
    let (fa, fb) = from_x0_coeffs(target, alpha, sigma);
    let value = p
        .x_t
        .iter()
        .zip(&p.value)
        .map(|(&x, &v)| {
            if p.kind == target {
                v
            } else {
                let x0 = ta * x + tb * v;
                fa * x + fb * x0
            }
        })
        .collect();
    Ok(Prediction {
        kind: target,
        value,
        x_t: p.x_t.clone(),
        t: p.t,
        schedule: p.schedule,
    })
}

/// Rectified-flow `x0 = x_t − t·v_FM`.
pub fn x0_from_vfm<F: Real>(x_t: &[F], t: F, vfm: &[F]) -> Vec<F> {
    assert_eq!(x_t.len(), vfm.len(), "dimension mismatch");
    x_t.iter().zip(vfm).map(|(&x, &v)| x - t * v).collect()
}

/// Which loss to evaluate and against which schedule.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'s, F> {
    pub kind: Kind,
    pub schedule: &'s Schedule<F>,
}

impl<'s, F: Real> LossSpec<'s, F> {
    pub fn new(kind: Kind, schedule: &'s Schedule<F>) -> Self {
        LossSpec { kind, schedule }
    }
}

/// The regression target of a kind given the clean sample and noise.
pub fn loss_target<F: Real>(kind: Kind, alpha: F, sigma: F, x0: F, eps: F) -> F {
    match kind {
        Kind::X0 => x0,
        Kind::Eps => eps,
        Kind::V => alpha * eps - sigma * x0,
        Kind::Vfm => eps - x0,
        Kind::Score => -eps / sigma,
        Kind::Trig => {
            let n = (alpha * alpha + sigma * sigma).sqrt();
            (alpha * eps - sigma * x0) / n
        }
    }
}

/// Squared-Euclidean loss of `model_out` against the kind's target.
///
/// The TrigFlow loss includes its `σ_d²` factor,
/// `‖σ_d F − σ_d (cos ε − sin x0)‖²`.
pub fn loss_value<F: Real>(
    spec: &LossSpec<'_, F>,
    model_out: &[F],
    x0: &[F],
    eps: &[F],
    x_t: &[F],
    t: F,
) -> Result<F> {
    let d = x_t.len();
    for len in [model_out.len(), x0.len(), eps.len()] {
        if len != d {
            return Err(Error::Dimension { expected: d, got: len });
        }
    }
    let (alpha, sigma) = spec.schedule.alpha_sigma(t)?;
    let mut residual = F::zero();
    let mut norm = F::zero();
    for i in 0..d {
        let r = x_t[i] - alpha * x0[i] - sigma * eps[i];
        residual += r * r;
        norm += x_t[i] * x_t[i];
    }
    let tol = F::lit(1e-8).max(F::lit(100.0) * F::epsilon()) * (F::one() + norm.sqrt());
    if residual.sqrt() > tol {
        return Err(Error::Consistency {
            residual: residual.sqrt().to_f64_lossy(),
            tolerance: tol.to_f64_lossy(),
        });
    }
    let mut acc = F::zero();
    for i in 0..d {
        let e = model_out[i] - loss_target(spec.kind, alpha, sigma, x0[i], eps[i]);
        acc += e * e;
    }
    if spec.kind == Kind::Trig {
        let sd = spec.schedule.sigma_d();
        acc *= sd * sd;
    }
    Ok(acc)
}

/// Factor relating a kind's loss to the `x0` loss for the same `x0` error.
///
/// `eps`: `α²/σ²`; `v`: `(α²+σ²)²/σ²`; `vfm`: `(α+σ)²/σ²` (which is `σ⁻²` for
/// rectified flow); `score`: `α²/σ⁴`; `trig`: `σ_d² (α²+σ²)/σ²`.
pub fn loss_ratio<F: Real>(kind: Kind, t: F, schedule: &Schedule<F>) -> Result<F> {
    let (a, s) = schedule.alpha_sigma(t)?;
    let (a2, s2) = (a * a, s * s);
    Ok(match kind {
        Kind::X0 => F::one(),
        Kind::Eps => a2 / s2,
        Kind::V => (a2 + s2) * (a2 + s2) / s2,
        Kind::Vfm => (a + s) * (a + s) / s2,
        Kind::Score => a2 / (s2 * s2),
        Kind::Trig => {
            let sd = schedule.sigma_d();
            sd * sd * (a2 + s2) / s2
        }
    })
}

/// TrigFlow loss over the rectified-flow velocity loss; `t² + (1 − t)²` on a
/// rectified-flow schedule with `σ_d = 1`.
pub fn trig_vs_vfm_ratio<F: Real>(t: F, schedule: &Schedule<F>) -> Result<F> {
    Ok(loss_ratio(Kind::Trig, t, schedule)? / loss_ratio(Kind::Vfm, t, schedule)?)
}
