//! Noise-schedule families on an SNR-aligned unit time axis.
//!
//! Every family corrupts data as `x_t = α x0 + σ ε`. Families are made
//! comparable by mapping their native time coordinate onto `t ∈ (0, 1)` so
//! that `SNR = α²/σ² = ((1 − t)/t)²`, i.e. `t = 1/(1 + √SNR)`. On that axis the
//! signal/noise coefficients differ only by family-specific scaling:
//!
//! | family                 | α(t)            | σ(t)          |
//! |------------------------|-----------------|---------------|
//! | rectified flow, SANA   | `1 − t`         | `t`           |
//! | TrigFlow, DDPM (VP)    | `(1 − t)/n`     | `t/n`         |
//! | EDM (train / sample)   | `1`             | `t/(1 − t)`   |
//!
//! with `n = √(t² + (1 − t)²)`. What distinguishes families beyond that is the
//! timestep density they induce, see [`law`].

pub mod law;

use crate::error::{Error, Result};
use crate::real::Real;

/// Lower edge of the clamped unit-time domain.
pub const T_LO: f64 = 1e-3;
/// Upper edge of the clamped unit-time domain.
pub const T_HI: f64 = 1.0 - 1e-3;

/// Family tag without parameters, used for parsing and listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    RectifiedFlow,
    TrigFlow,
    SanaShifted,
    DdpmLinear,
    EdmTrain,
    EdmSampleTruncated,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 6] = [
        FamilyKind::RectifiedFlow,
        FamilyKind::TrigFlow,
        FamilyKind::SanaShifted,
        FamilyKind::DdpmLinear,
        FamilyKind::EdmTrain,
        FamilyKind::EdmSampleTruncated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::RectifiedFlow => "rectified_flow",
            FamilyKind::TrigFlow => "trigflow",
            FamilyKind::SanaShifted => "sana_shifted",
            FamilyKind::DdpmLinear => "ddpm_linear",
            FamilyKind::EdmTrain => "edm_train",
            FamilyKind::EdmSampleTruncated => "edm_sample_truncated",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown schedule family `{s}`")))
    }
}

/// Precomputed discrete DDPM schedule with linearly spaced betas.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmTable<F> {
    pub beta_start: F,
    pub beta_end: F,
    /// Cumulative products `ᾱ_i = Π_{j ≤ i} (1 − β_j)`, zero-based.
    pub alpha_bar: Vec<F>,
    /// Unit-time image of every step, increasing.
    pub t_knots: Vec<F>,
}

impl<F: Real> DdpmTable<F> {
    pub fn new(beta_start: F, beta_end: F, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config("ddpm_linear needs at least two steps"));
        }
        if !(beta_start > F::zero() && beta_end < F::one() && beta_start < beta_end) {
            return Err(Error::config("ddpm_linear needs 0 < beta_start < beta_end < 1"));
        }
        let last = F::from_usize(steps - 1).unwrap();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = F::one();
        for i in 0..steps {
            let frac = F::from_usize(i).unwrap() / last;
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= F::one() - beta;
            alpha_bar.push(acc);
        }
        let t_knots = alpha_bar
            .iter()
            .map(|&ab| t_from_snr(ab / (F::one() - ab)))
            .collect();
        Ok(DdpmTable {
            beta_start,
            beta_end,
            alpha_bar,
            t_knots,
        })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family<F> {
    RectifiedFlow,
    /// `log(σ/σ_d)`-normal TrigFlow training law with data scale `σ_d`.
    TrigFlow { sigma_d: F, p_mean: F, p_std: F },
    /// Logit-normal `(mu, s)` on native time, followed by a time shift that
    /// divides the SNR by `shift²`.
    SanaShifted { shift: F, mu: F, s: F },
    DdpmLinear(DdpmTable<F>),
    /// `log σ ~ Normal(p_mean, p_std²)` with `α = 1`.
    EdmTrain { p_mean: F, p_std: F },
    /// Karras sampling grid `σ(u) = (σ_max^{1/ρ} + u (σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`
    /// over continuous `u ∈ [0, 1]`, restricted to unit time below `t_cut`.
    EdmSampleTruncated {
        sigma_min: F,
        sigma_max: F,
        rho: F,
        t_cut: F,
    },
}

/// A noise-schedule family exposing `(α_t, σ_t, SNR_t)` on unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<F> {
    family: Family<F>,
}

impl<F: Real> Schedule<F> {
    pub fn new(family: Family<F>) -> Result<Self> {
        let pos = |x: F, what: &str| {
            if x > F::zero() && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive and finite")))
            }
        };
        match &family {
            Family::RectifiedFlow | Family::DdpmLinear(_) => {}
            Family::TrigFlow { sigma_d, p_std, .. } => {
                pos(*sigma_d, "trigflow sigma_d")?;
                pos(*p_std, "trigflow p_std")?;
            }
            Family::SanaShifted { shift, s, .. } => {
                pos(*shift, "sana shift")?;
                pos(*s, "sana s")?;
            }
            Family::EdmTrain { p_std, .. } => pos(*p_std, "edm p_std")?,
            Family::EdmSampleTruncated {
                sigma_min,
                sigma_max,
                rho,
                t_cut,
            } => {
                pos(*sigma_min, "edm sigma_min")?;
                pos(*rho, "edm rho")?;
                if !(sigma_max > sigma_min) {
                    return Err(Error::config("edm sigma_max must exceed sigma_min"));
                }
                let t_min = *sigma_min / (F::one() + *sigma_min);
                if !(*t_cut > t_min && *t_cut < F::one()) {
                    return Err(Error::config("edm t_cut must lie inside the mapped sigma range"));
                }
            }
        }
        Ok(Schedule { family })
    }

    pub fn rectified_flow() -> Self {
        Schedule {
            family: Family::RectifiedFlow,
        }
    }

    /// TrigFlow with `σ_d = 1` and the `(−1.0, 1.4)` log-noise training law.
    pub fn trigflow() -> Self {
        Schedule {
            family: Family::TrigFlow {
                sigma_d: F::one(),
                p_mean: F::lit(-1.0),
                p_std: F::lit(1.4),
            },
        }
    }

    pub fn sana_shifted(shift: F) -> Result<Self> {
        Schedule::new(Family::SanaShifted {
            shift,
            mu: F::zero(),
            s: F::one(),
        })
    }

    /// β linearly spaced in `[1e-4, 0.02]` over 1000 steps.
    pub fn ddpm_linear() -> Self {
        Schedule {
            family: Family::DdpmLinear(
                DdpmTable::new(F::lit(1e-4), F::lit(0.02), 1000).expect("valid defaults"),
            ),
        }
    }

    pub fn edm_train() -> Self {
        Schedule {
            family: Family::EdmTrain {
                p_mean: F::lit(-1.2),
                p_std: F::lit(1.2),
            },
        }
    }

    /// `σ ∈ [0.002, 80]`, `ρ = 7`, restricted to `t < 0.8`.
    pub fn edm_sample_truncated() -> Self {
        Schedule {
            family: Family::EdmSampleTruncated {
                sigma_min: F::lit(0.002),
                sigma_max: F::lit(80.0),
                rho: F::lit(7.0),
                t_cut: F::lit(0.8),
            },
        }
    }

    /// Default-parameter schedule for a family tag.
    pub fn default_for(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::RectifiedFlow => Self::rectified_flow(),
            FamilyKind::TrigFlow => Self::trigflow(),
            FamilyKind::SanaShifted => Self::sana_shifted(F::lit(3.0)).expect("valid default"),
            FamilyKind::DdpmLinear => Self::ddpm_linear(),
            FamilyKind::EdmTrain => Self::edm_train(),
            FamilyKind::EdmSampleTruncated => Self::edm_sample_truncated(),
        }
    }

    pub fn family(&self) -> &Family<F> {
        &self.family
    }

    pub fn kind(&self) -> FamilyKind {
        match self.family {
            Family::RectifiedFlow => FamilyKind::RectifiedFlow,
            Family::TrigFlow { .. } => FamilyKind::TrigFlow,
            Family::SanaShifted { .. } => FamilyKind::SanaShifted,
            Family::DdpmLinear(_) => FamilyKind::DdpmLinear,
            Family::EdmTrain { .. } => FamilyKind::EdmTrain,
            Family::EdmSampleTruncated { .. } => FamilyKind::EdmSampleTruncated,
        }
    }

    /// TrigFlow data scale; 1 for every other family.
    pub fn sigma_d(&self) -> F {
        match self.family {
            Family::TrigFlow { sigma_d, .. } => sigma_d,
            _ => F::one(),
        }
    }

    /// `(α_t, σ_t)` at unit time `t ∈ [T_LO, T_HI]`.
    pub fn alpha_sigma(&self, t: F) -> Result<(F, F)> {
        check_unit_time(t)?;
        let one = F::one();
        Ok(match self.family {
            Family::RectifiedFlow | Family::SanaShifted { .. } => (one - t, t),
            Family::TrigFlow { .. } | Family::DdpmLinear(_) => {
                let n = (t * t + (one - t) * (one - t)).sqrt();
                ((one - t) / n, t / n)
            }
            Family::EdmTrain { .. } | Family::EdmSampleTruncated { .. } => (one, t / (one - t)),
        })
    }

    pub fn snr(&self, t: F) -> Result<F> {
        let (a, s) = self.alpha_sigma(t)?;
        Ok((a * a) / (s * s))
    }

    /// SNR of the family at its own native coordinate.
    ///
    /// Native coordinates: unit time for rectified flow, the angle for
    /// TrigFlow, unshifted time for SANA, the zero-based step index for DDPM
    /// and `log σ` for both EDM families.
    pub fn native_snr(&self, native: F) -> Result<F> {
        let one = F::one();
        if !native.is_finite() {
            return Err(Error::domain("native time must be finite"));
        }
        match &self.family {
            Family::RectifiedFlow => {
                in_closed(native, F::zero(), one, "rectified-flow time")?;
                Ok(((one - native) / native).powi(2))
            }
            Family::TrigFlow { .. } => {
                in_closed(native, F::zero(), F::FRAC_PI_2(), "trigflow angle")?;
                let (s, c) = native.sin_cos();
                Ok((c / s).powi(2))
            }
            Family::SanaShifted { shift, .. } => {
                in_closed(native, F::zero(), one, "sana time")?;
                let shifted = *shift * native / (one + (*shift - one) * native);
                Ok(((one - shifted) / shifted).powi(2))
            }
            Family::DdpmLinear(table) => {
                let idx = native
                    .to_usize()
                    .filter(|&i| F::from_usize(i).unwrap() == native && i < table.steps())
                    .ok_or_else(|| {
                        Error::domain(format!(
                            "ddpm step must be an integer in [0, {}]",
                            table.steps() - 1
                        ))
                    })?;
                let ab = table.alpha_bar[idx];
                Ok(ab / (one - ab))
            }
            Family::EdmTrain { .. } | Family::EdmSampleTruncated { .. } => {
                let sigma = native.exp();
                Ok(one / (sigma * sigma))
            }
        }
    }

    /// Map a native coordinate onto SNR-aligned unit time.
    pub fn map_to_unit(&self, native: F) -> Result<F> {
        Ok(t_from_snr(self.native_snr(native)?))
    }
}

/// `t = 1/(1 + √SNR)`; inverse of the rectified-flow SNR.
pub fn t_from_snr<F: Real>(snr: F) -> F {
    debug_assert!(!(snr < F::zero()), "snr must be nonnegative");
    F::one() / (F::one() + snr.sqrt())
}

/// Unit time to TrigFlow angle, `sin = t/n`, `cos = (1 − t)/n`.
pub fn trig_time<F: Real>(t: F) -> Result<F> {
    if !(t > F::zero() && t < F::one()) {
        return Err(Error::domain(format!("trig_time needs t in (0, 1), got {t}")));
    }
    Ok(t.atan2(F::one() - t))
}

/// TrigFlow angle back to unit time, `t = sin/(sin + cos)`.
pub fn rf_time<F: Real>(angle: F) -> Result<F> {
    if !(angle > F::zero() && angle < F::FRAC_PI_2()) {
        return Err(Error::domain(format!(
            "rf_time needs an angle in (0, π/2), got {angle}"
        )));
    }
    let (s, c) = angle.sin_cos();
    Ok(s / (s + c))
}

pub(crate) fn check_unit_time<F: Real>(t: F) -> Result<()> {
    if t >= F::lit(T_LO) && t <= F::lit(T_HI) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "t = {t} outside the clamped domain [{T_LO}, {T_HI}]"
        )))
    }
}

fn in_closed<F: Real>(x: F, lo: F, hi: F, what: &str) -> Result<()> {
    if x >= lo && x <= hi {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} {x} outside [{lo}, {hi}]")))
    }
}
