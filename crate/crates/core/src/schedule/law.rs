//! Timestep sampling densities, loss weights and the weight-normalized
//! distribution `π(t) = w(t) p(t) / C_π`.
//!
//! Densities live on SNR-aligned unit time. Every law is truncated to a range
//! inside the clamped domain and renormalized there; `C_π` is computed once at
//! construction by a composite trapezoid rule on a grid uniform in `logit(t)`.

use rand::Rng;

use super::{Family, Schedule, T_HI, T_LO};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::special::{logit, normal_cdf, normal_pdf, normal_ppf, sigmoid};

/// Default quadrature resolution for `C_π`.
pub const DEFAULT_QUAD_GRID: usize = 4096;

/// Per-timestep loss weight `w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weight {
    One,
    InvT,
    OneMinusT,
    OneMinusTSq,
    /// `(1 − t)/t`
    Ratio,
    /// `(1 − t)²/t²`
    RatioSq,
    /// `(1 − t)⁻²`
    InvOneMinusTSq,
    /// `t⁻²`
    InvTSq,
}

impl Weight {
    /// The six weighting rows of the schedule comparison grid.
    pub const FIGURE_ROWS: [Weight; 6] = [
        Weight::One,
        Weight::InvT,
        Weight::OneMinusT,
        Weight::OneMinusTSq,
        Weight::Ratio,
        Weight::RatioSq,
    ];

    pub const ALL: [Weight; 8] = [
        Weight::One,
        Weight::InvT,
        Weight::OneMinusT,
        Weight::OneMinusTSq,
        Weight::Ratio,
        Weight::RatioSq,
        Weight::InvOneMinusTSq,
        Weight::InvTSq,
    ];

    pub fn eval<F: Real>(self, t: F) -> F {
        let one = F::one();
        let u = one - t;
        match self {
            Weight::One => one,
            Weight::InvT => one / t,
            Weight::OneMinusT => u,
            Weight::OneMinusTSq => u * u,
            Weight::Ratio => u / t,
            Weight::RatioSq => (u * u) / (t * t),
            Weight::InvOneMinusTSq => one / (u * u),
            Weight::InvTSq => one / (t * t),
        }
    }

    /// An antiderivative of `w` on `(0, 1)`, in `f64`.
    pub fn primitive(self, t: f64) -> f64 {
        let u = 1.0 - t;
        match self {
            Weight::One => t,
            Weight::InvT => t.ln(),
            Weight::OneMinusT => -0.5 * u * u,
            Weight::OneMinusTSq => -u * u * u / 3.0,
            Weight::Ratio => t.ln() - t,
            Weight::RatioSq => t - 1.0 / t - 2.0 * t.ln(),
            Weight::InvOneMinusTSq => 1.0 / u,
            Weight::InvTSq => -1.0 / t,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weight::One => "one",
            Weight::InvT => "inv_t",
            Weight::OneMinusT => "one_minus_t",
            Weight::OneMinusTSq => "one_minus_t_sq",
            Weight::Ratio => "ratio",
            Weight::RatioSq => "ratio_sq",
            Weight::InvOneMinusTSq => "inv_one_minus_t_sq",
            Weight::InvTSq => "inv_t_sq",
        }
    }
}

impl std::str::FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Weight::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::config(format!("unknown weight `{s}`")))
    }
}

/// Sampling density `p(t)` before truncation.
#[derive(Debug, Clone, PartialEq)]
pub enum Density<F> {
    LogitNormal { mu: F, s: F },
    Uniform,
    /// The unit-time density a schedule family samples from.
    ScheduleInduced(Schedule<F>),
}

impl<F: Real> Density<F> {
    pub fn logit_normal(mu: F, s: F) -> Self {
        Density::LogitNormal { mu, s }
    }

    /// `LogitNormal(ln 2, 1.6²)`.
    pub fn standard() -> Self {
        Density::LogitNormal {
            mu: F::LN_2(),
            s: F::lit(1.6),
        }
    }

    fn resolve(&self) -> Result<Base> {
        let f = |x: F| x.to_f64_lossy();
        Ok(match self {
            Density::LogitNormal { mu, s } => {
                if !(f(*s) > 0.0) || !f(*mu).is_finite() {
                    return Err(Error::config("logit-normal needs finite mu and s > 0"));
                }
                Base::LogitNormal { mu: f(*mu), s: f(*s) }
            }
            Density::Uniform => Base::Uniform,
            Density::ScheduleInduced(sched) => match sched.family() {
                Family::RectifiedFlow => Base::Uniform,
                Family::TrigFlow {
                    sigma_d,
                    p_mean,
                    p_std,
                } => Base::LogitNormal {
                    mu: f(*p_mean) - f(*sigma_d).ln(),
                    s: f(*p_std),
                },
                Family::SanaShifted { shift, mu, s } => Base::LogitNormal {
                    mu: f(*mu) + f(*shift).ln(),
                    s: f(*s),
                },
                Family::DdpmLinear(table) => {
                    Base::Tabulated(table.t_knots.iter().map(|&x| f(x)).collect())
                }
                Family::EdmTrain { p_mean, p_std } => Base::LogitNormal {
                    mu: f(*p_mean),
                    s: f(*p_std),
                },
                Family::EdmSampleTruncated {
                    sigma_min,
                    sigma_max,
                    rho,
                    t_cut,
                } => {
                    let rho = f(*rho);
                    let (smin, smax) = (f(*sigma_min), f(*sigma_max));
                    Base::EdmPower {
                        a: smax.powf(1.0 / rho),
                        b: smin.powf(1.0 / rho),
                        rho,
                        lo: smin / (1.0 + smin),
                        hi: f(*t_cut),
                    }
                }
            },
        })
    }
}

/// Untruncated densities, evaluated in `f64`.
#[derive(Debug, Clone, PartialEq)]
enum Base {
    LogitNormal { mu: f64, s: f64 },
    Uniform,
    /// Equal probability mass between consecutive increasing knots.
    Tabulated(Vec<f64>),
    /// Uniform `u` pushed through the Karras σ grid; support `[lo, hi]`.
    EdmPower {
        a: f64,
        b: f64,
        rho: f64,
        lo: f64,
        hi: f64,
    },
}

impl Base {
    fn support(&self) -> (f64, f64) {
        match self {
            Base::LogitNormal { .. } | Base::Uniform => (0.0, 1.0),
            Base::Tabulated(k) => (k[0], k[k.len() - 1]),
            Base::EdmPower { lo, hi, .. } => (*lo, *hi),
        }
    }

    fn pdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(t >= lo && t <= hi) {
            return 0.0;
        }
        match self {
            Base::LogitNormal { mu, s } => normal_pdf((logit(t) - mu) / s) / (s * t * (1.0 - t)),
            Base::Uniform => 1.0,
            Base::Tabulated(k) => {
                let j = knot_interval(k, t);
                1.0 / ((k.len() - 1) as f64 * (k[j + 1] - k[j]))
            }
            Base::EdmPower { a, b, rho, .. } => {
                let sigma = t / (1.0 - t);
                let du_dsigma = sigma.powf(1.0 / rho - 1.0) / (rho * (a - b));
                du_dsigma / ((1.0 - t) * (1.0 - t))
            }
        }
    }

    fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t <= lo {
            return 0.0;
        }
        match self {
            Base::LogitNormal { mu, s } => {
                if t >= 1.0 {
                    1.0
                } else {
                    normal_cdf((logit(t) - mu) / s)
                }
            }
            Base::Uniform => t.min(1.0),
            Base::Tabulated(k) => {
                if t >= hi {
                    return 1.0;
                }
                let j = knot_interval(k, t);
                (j as f64 + (t - k[j]) / (k[j + 1] - k[j])) / (k.len() - 1) as f64
            }
            Base::EdmPower { a, b, rho, .. } => {
                // Mass of the untruncated grid below t; the support edge `hi`
                // only limits where the law may live.
                let sigma = t / (1.0 - t);
                let u = (a - sigma.powf(1.0 / rho)) / (a - b);
                (1.0 - u).clamp(0.0, 1.0)
            }
        }
    }

    fn inv_cdf(&self, p: f64) -> f64 {
        match self {
            Base::LogitNormal { mu, s } => sigmoid(mu + s * normal_ppf(p)),
            Base::Uniform => p,
            Base::Tabulated(k) => {
                let pos = p.clamp(0.0, 1.0) * (k.len() - 1) as f64;
                let j = (pos.floor() as usize).min(k.len() - 2);
                k[j] + (pos - j as f64) * (k[j + 1] - k[j])
            }
            Base::EdmPower { a, b, rho, .. } => {
                let u = 1.0 - p;
                let sigma = (a + u * (b - a)).powf(*rho);
                sigma / (1.0 + sigma)
            }
        }
    }
}

fn knot_interval(k: &[f64], t: f64) -> usize {
    let j = k.partition_point(|&x| x <= t);
    j.saturating_sub(1).min(k.len() - 2)
}

/// A truncated sampling density, a loss weight, and the induced `π(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepLaw<F> {
    density: Density<F>,
    weight: Weight,
    range: (F, F),
    grid: usize,
    base: Base,
    mass: f64,
    c_pi: f64,
}

/// One row of a tabulated `π(t)` panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiRow<F> {
    pub t: F,
    pub p: F,
    pub w: F,
    pub pi: F,
}

impl<F: Real> TimestepLaw<F> {
    /// Build a law on `range ∩ support(density)`; `range` must lie in the
    /// clamped domain.
    pub fn new(density: Density<F>, weight: Weight, range: (F, F), grid: usize) -> Result<Self> {
        let base = density.resolve()?;
        let (lo, hi) = (range.0.to_f64_lossy(), range.1.to_f64_lossy());
        let eps = 1e-12;
        if !(lo < hi) || lo < T_LO - eps || hi > T_HI + eps {
            return Err(Error::config(format!(
                "timestep range ({lo}, {hi}) must be a nonempty subset of [{T_LO}, {T_HI}]"
            )));
        }
        if grid < 2 {
            return Err(Error::config("normalization grid needs at least two points"));
        }
        let (slo, shi) = base.support();
        let (lo, hi) = (lo.max(slo).max(T_LO), hi.min(shi).min(T_HI));
        if !(lo < hi) {
            return Err(Error::config(format!(
                "timestep range does not intersect the density support ({slo}, {shi})"
            )));
        }
        let mass = base.cdf(hi) - base.cdf(lo);
        if !(mass > 0.0) {
            return Err(Error::config("density has no mass inside the timestep range"));
        }
        let mut law = TimestepLaw {
            density,
            weight,
            range: (F::lit(lo), F::lit(hi)),
            grid,
            base,
            mass,
            c_pi: 1.0,
        };
        // The truncated p is normalized analytically, so C_π = 1 exactly when
        // w ≡ 1 and π reproduces p bit for bit.
        let c_pi = if weight == Weight::One {
            1.0
        } else if let Base::Tabulated(k) = &law.base {
            // p is piecewise constant, so ∫ w p is a sum of exact segment integrals.
            let n = (k.len() - 1) as f64;
            k.windows(2)
                .filter_map(|s| {
                    let (a, b) = (s[0].max(lo), s[1].min(hi));
                    (a < b).then(|| (weight.primitive(b) - weight.primitive(a)) / (n * (s[1] - s[0])))
                })
                .sum::<f64>()
                / mass
        } else {
            law.integrate_logit(grid, |t| law.w_f64(t) * law.p_f64(t))
        };
        if !(c_pi.is_finite() && c_pi > 0.0) {
            return Err(Error::domain(format!("normalizer C_pi = {c_pi} is not finite")));
        }
        law.c_pi = c_pi;
        Ok(law)
    }

    /// Density over the whole clamped domain with the default grid.
    pub fn full(density: Density<F>, weight: Weight) -> Result<Self> {
        Self::new(
            density,
            weight,
            (F::lit(T_LO), F::lit(T_HI)),
            DEFAULT_QUAD_GRID,
        )
    }

    /// `p = LogitNormal(ln 2, 1.6²)`, `w = 1 − t` on the clamped domain.
    pub fn standard() -> Self {
        Self::full(Density::standard(), Weight::OneMinusT).expect("valid default law")
    }

    /// Same density and weight restricted to a sub-range.
    pub fn restricted(&self, lo: F, hi: F) -> Result<Self> {
        Self::new(self.density.clone(), self.weight, (lo, hi), self.grid)
    }

    pub fn with_weight(&self, weight: Weight) -> Result<Self> {
        Self::new(self.density.clone(), weight, self.range, self.grid)
    }

    pub fn density(&self) -> &Density<F> {
        &self.density
    }

    pub fn weight(&self) -> Weight {
        self.weight
    }

    /// Effective range after intersecting with the density support.
    pub fn range(&self) -> (F, F) {
        self.range
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// `C_π = ∫ w p dt` over the range.
    pub fn c_pi(&self) -> F {
        F::lit(self.c_pi)
    }

    /// Untruncated probability mass of the range.
    pub fn mass(&self) -> F {
        F::lit(self.mass)
    }

    fn in_range(&self, t: f64) -> bool {
        t >= self.range.0.to_f64_lossy() && t <= self.range.1.to_f64_lossy()
    }

    fn p_f64(&self, t: f64) -> f64 {
        if self.in_range(t) {
            self.base.pdf(t) / self.mass
        } else {
            0.0
        }
    }

    fn w_f64(&self, t: f64) -> f64 {
        self.weight.eval(t)
    }

    /// Truncated, renormalized `p(t)`; zero outside the range.
    pub fn p(&self, t: F) -> F {
        F::lit(self.p_f64(t.to_f64_lossy()))
    }

    pub fn w(&self, t: F) -> F {
        self.weight.eval(t)
    }

    /// Truncated CDF.
    pub fn cdf(&self, t: F) -> F {
        let (lo, hi) = (self.range.0.to_f64_lossy(), self.range.1.to_f64_lossy());
        let t = t.to_f64_lossy();
        let v = if t <= lo {
            0.0
        } else if t >= hi {
            1.0
        } else {
            (self.base.cdf(t) - self.base.cdf(lo)) / self.mass
        };
        F::lit(v)
    }

    /// `π(t) = w(t) p(t) / C_π`.
    pub fn pi_density(&self, t: F) -> Result<F> {
        let tf = t.to_f64_lossy();
        if !self.in_range(tf) {
            return Err(Error::domain(format!("t = {tf} outside the law range")));
        }
        let w = self.w_f64(tf);
        if !w.is_finite() {
            return Err(Error::domain(format!("weight is not finite at t = {tf}")));
        }
        Ok(F::lit(w * self.p_f64(tf) / self.c_pi))
    }

    /// Draw `n` timesteps by inverse-transform sampling of the truncated law.
    pub fn sample_t<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<F>> {
        if n == 0 {
            return Err(Error::config("sample_t needs n >= 1"));
        }
        Ok((0..n).map(|_| self.sample_one(rng)).collect())
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let (lo, hi) = (self.range.0.to_f64_lossy(), self.range.1.to_f64_lossy());
        let c_lo = self.base.cdf(lo);
        let u: f64 = rng.random();
        let t = self.base.inv_cdf(c_lo + u * self.mass);
        F::lit(t.clamp(lo, hi))
    }

    /// Tabulate `(t, p, w, π)` on a grid uniform in `logit(t)` over the range.
    pub fn pi_table(&self, grid: usize) -> Result<Vec<PiRow<F>>> {
        if grid < 2 {
            return Err(Error::config("pi_table needs at least two grid points"));
        }
        let (a, b) = self.logit_range();
        (0..grid)
            .map(|i| {
                let t = if i == 0 {
                    self.range.0.to_f64_lossy()
                } else if i == grid - 1 {
                    self.range.1.to_f64_lossy()
                } else {
                    sigmoid(a + (b - a) * i as f64 / (grid - 1) as f64)
                };
                let tf = F::lit(t);
                Ok(PiRow {
                    t: tf,
                    p: F::lit(self.p_f64(t)),
                    w: self.w(tf),
                    pi: self.pi_density(tf)?,
                })
            })
            .collect()
    }

    fn logit_range(&self) -> (f64, f64) {
        (
            logit(self.range.0.to_f64_lossy()),
            logit(self.range.1.to_f64_lossy()),
        )
    }

    /// Composite Simpson of `f` over the range on `n` intervals (rounded up
    /// to even) uniform in logit.
    fn integrate_logit(&self, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let n = n + n % 2;
        let (a, b) = self.logit_range();
        let h = (b - a) / n as f64;
        let (lo, hi) = (self.range.0.to_f64_lossy(), self.range.1.to_f64_lossy());
        let mut acc = 0.0;
        for i in 0..=n {
            let t = match i {
                0 => lo,
                _ if i == n => hi,
                _ => sigmoid(a + h * i as f64),
            };
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += c * f(t) * t * (1.0 - t);
        }
        acc * h / 3.0
    }
}

/// The six timestep densities compared in the schedule grid, with default
/// parameters: the distillation default, TrigFlow, shifted SANA, DDPM linear,
/// EDM training and EDM sampling restricted to `t < 0.8`.
pub fn figure_densities<F: Real>() -> Vec<(&'static str, Density<F>)> {
    vec![
        ("default", Density::standard()),
        ("trigflow", Density::ScheduleInduced(Schedule::trigflow())),
        (
            "sana",
            Density::ScheduleInduced(Schedule::sana_shifted(F::lit(3.0)).expect("valid")),
        ),
        ("ddpm", Density::ScheduleInduced(Schedule::ddpm_linear())),
        ("edm_train", Density::ScheduleInduced(Schedule::edm_train())),
        (
            "edm_sample",
            Density::ScheduleInduced(Schedule::edm_sample_truncated()),
        ),
    ]
}
