//! Gaussian-mixture teachers with closed-form corrupted marginals.
//!
//! For `x0 ~ Σ_k w_k N(μ_k, Σ_k)` and `x_t = α x0 + σ ε` the marginal is
//! `Σ_k w_k N(α μ_k, C_k)` with `C_k = α² Σ_k + σ² I`, so posterior means,
//! scores and their Jacobians in `x_t` are all available exactly.
//!
//! Each covariance is diagonalized once at construction; in its eigenbasis
//! `C_k` is diagonal for every `(α, σ)`. The log-marginal used as an
//! independent check goes through a fresh Cholesky factor of `C_k` instead.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Cholesky};
use crate::real::Real;
use crate::schedule::Schedule;

/// Points per axis of the quadrature oracle.
pub const QUAD_POINTS: usize = 2001;
/// Half-width of the oracle grid in posterior standard deviations.
pub const QUAD_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Component<F> {
    pub weight: F,
    pub mean: Vec<F>,
    /// Row-major `d × d` covariance.
    pub cov: Vec<F>,
    pub class: Option<usize>,
}

#[derive(Debug, Clone)]
struct Prepared<F> {
    eigenvalues: Vec<F>,
    eigenvectors: Vec<F>,
    chol: Cholesky<F>,
}

/// Everything a teacher query produces at one `(x_t, α, σ)`.
#[derive(Debug, Clone)]
pub struct Posterior<F> {
    pub mean: Vec<F>,
    /// Responsibilities over the components of the queried view, in
    /// component order; zero for components outside the view.
    pub responsibilities: Vec<F>,
    pub component_means: Vec<Vec<F>>,
    /// `∂ E[x0|x_t] / ∂x_t`, row-major, when requested.
    pub jacobian: Option<Vec<F>>,
}

#[derive(Debug, Clone)]
pub struct MixtureTeacher<F> {
    dim: usize,
    components: Vec<Component<F>>,
    prepared: Vec<Prepared<F>>,
    class_count: usize,
}

/// Mixture draws with the component each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<F> {
    pub dim: usize,
    /// Row-major `n × d`.
    pub points: Vec<F>,
    pub components: Vec<usize>,
}

impl<F> Samples<F> {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

fn ln_2pi<F: Real>() -> F {
    F::lit((2.0 * PI).ln())
}

impl<F: Real> MixtureTeacher<F> {
    pub fn new(components: Vec<Component<F>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::config("a mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::config("mixture dimension must be at least 1"));
        }
        let mut total = F::zero();
        let mut prepared = Vec::with_capacity(components.len());
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if c.cov.len() != dim * dim {
                return Err(Error::Dimension {
                    expected: dim * dim,
                    got: c.cov.len(),
                });
            }
            if !(c.weight > F::zero()) || !c.weight.is_finite() {
                return Err(Error::config(format!("component {k} weight must be positive")));
            }
            for i in 0..dim {
                for j in 0..i {
                    let (a, b) = (c.cov[i * dim + j], c.cov[j * dim + i]);
                    if (a - b).abs() > F::lit(1e-12) * (F::one() + a.abs()) {
                        return Err(Error::config(format!("component {k} covariance is not symmetric")));
                    }
                }
            }
            let chol = Cholesky::new(&c.cov, dim)
                .map_err(|_| Error::config(format!("component {k} covariance is not positive definite")))?;
            let eig = sym_eigen(&c.cov, dim)?;
            total += c.weight;
            prepared.push(Prepared {
                eigenvalues: eig.values,
                eigenvectors: eig.vectors,
                chol,
            });
        }
        let tol = F::lit(1e-12).max(F::lit(16.0) * F::epsilon() * F::from_usize(components.len()).unwrap());
        if (total - F::one()).abs() > tol {
            return Err(Error::config(format!("component weights sum to {total}, not 1")));
        }
        let labelled = components.iter().filter(|c| c.class.is_some()).count();
        if labelled != 0 && labelled != components.len() {
            return Err(Error::config("either every component has a class label or none does"));
        }
        let class_count = components.iter().filter_map(|c| c.class).max().map_or(0, |m| m + 1);
        for c in 0..class_count {
            if !components.iter().any(|k| k.class == Some(c)) {
                return Err(Error::config(format!("class {c} has no components")));
            }
        }
        Ok(MixtureTeacher {
            dim,
            components,
            prepared,
            class_count,
        })
    }

    /// Equal-weight isotropic ring of `modes` components on a circle of
    /// `radius` in 2-D. With `classes`, component `k` has label `k mod classes`.
    pub fn ring(modes: usize, radius: F, std: F, classes: Option<usize>) -> Result<Self> {
        if modes == 0 {
            return Err(Error::config("ring needs at least one mode"));
        }
        if matches!(classes, Some(0)) || classes.is_some_and(|c| c > modes) {
            return Err(Error::config("ring class count must lie in 1..=modes"));
        }
        let w = F::one() / F::from_usize(modes).unwrap();
        let var = std * std;
        let comps = (0..modes)
            .map(|k| {
                let angle = F::lit(2.0 * PI * k as f64 / modes as f64);
                Component {
                    weight: w,
                    mean: vec![radius * angle.cos(), radius * angle.sin()],
                    cov: vec![var, F::zero(), F::zero(), var],
                    class: classes.map(|c| k % c),
                }
            })
            .collect();
        Self::new(comps)
    }

    /// The benchmark ring: 8 modes, radius 4, component std 0.3.
    pub fn benchmark_ring(classes: Option<usize>) -> Self {
        Self::ring(8, F::lit(4.0), F::lit(0.3), classes).expect("valid preset")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component<F>] {
        &self.components
    }

    /// Number of classes; 0 for an unconditional teacher.
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Class prior `P(c) = Σ_{k ∈ c} w_k`.
    pub fn class_priors(&self) -> Vec<F> {
        let mut p = vec![F::zero(); self.class_count];
        for c in &self.components {
            if let Some(l) = c.class {
                p[l] += c.weight;
            }
        }
        p
    }

    fn check_class(&self, class: Option<usize>) -> Result<()> {
        match class {
            Some(_) if self.class_count == 0 => Err(Error::config("teacher has no class structure")),
            Some(c) if c >= self.class_count => Err(Error::config(format!(
                "class {c} out of range for {} classes",
                self.class_count
            ))),
            _ => Ok(()),
        }
    }

    /// Log mixture weights of the view selected by `class`; `None` marks
    /// components outside it.
    fn view_log_weights(&self, class: Option<usize>) -> Result<Vec<Option<F>>> {
        self.check_class(class)?;
        let prior = match class {
            Some(c) => self.class_priors()[c],
            None => F::one(),
        };
        Ok(self
            .components
            .iter()
            .map(|k| match class {
                Some(c) if k.class != Some(c) => None,
                _ => Some((k.weight / prior).ln()),
            })
            .collect())
    }

    fn check_point(&self, x_t: &[F]) -> Result<()> {
        if x_t.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x_t.len(),
            });
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("x_t must be finite"));
        }
        Ok(())
    }

    /// Posterior quantities at `(x_t, α, σ)` for an arbitrary corruption pair.
    pub fn posterior_at(&self, x_t: &[F], alpha: F, sigma: F, class: Option<usize>, jacobian: bool) -> Result<Posterior<F>> {
        self.check_point(x_t)?;
        let d = self.dim;
        let log_w = self.view_log_weights(class)?;
        let half = F::lit(0.5);
        let (a2, s2) = (alpha * alpha, sigma * sigma);
        let ncomp = self.components.len();
        let mut logits = vec![F::neg_infinity(); ncomp];
        let mut means = vec![Vec::new(); ncomp];
        let mut grads = vec![Vec::new(); ncomp];
        let mut y = vec![F::zero(); d];
        let mut gain = vec![F::zero(); d];
        for k in 0..ncomp {
            let Some(lw) = log_w[k] else { continue };
            let (comp, prep) = (&self.components[k], &self.prepared[k]);
            let u = &prep.eigenvectors;
            // y = Uᵀ (x_t − α μ_k)
            for i in 0..d {
                y[i] = (0..d).fold(F::zero(), |s, r| s + u[r * d + i] * (x_t[r] - alpha * comp.mean[r]));
            }
            let mut quad = F::zero();
            let mut logdet = F::zero();
            for i in 0..d {
                let lam = prep.eigenvalues[i];
                let c = a2 * lam + s2;
                quad += y[i] * y[i] / c;
                logdet += c.ln();
                gain[i] = alpha * lam / c;
            }
            logits[k] = lw - half * (quad + logdet + F::from_usize(d).unwrap() * ln_2pi::<F>());
            means[k] = (0..d)
                .map(|r| comp.mean[r] + (0..d).fold(F::zero(), |s, i| s + u[r * d + i] * gain[i] * y[i]))
                .collect();
            grads[k] = (0..d)
                .map(|r| {
                    -(0..d).fold(F::zero(), |s, i| {
                        let c = a2 * prep.eigenvalues[i] + s2;
                        s + u[r * d + i] * y[i] / c
                    })
                })
                .collect();
        }
        let peak = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let mut resp: Vec<F> = logits
            .iter()
            .map(|&l| if l == F::neg_infinity() { F::zero() } else { (l - peak).exp() })
            .collect();
        let z: F = resp.iter().copied().sum();
        for r in &mut resp {
            *r /= z;
        }
        let mut mean = vec![F::zero(); d];
        for k in 0..ncomp {
            if resp[k] > F::zero() {
                for i in 0..d {
                    mean[i] += resp[k] * means[k][i];
                }
            }
        }
        let jac = jacobian.then(|| {
            let mut gbar = vec![F::zero(); d];
            for k in 0..ncomp {
                if resp[k] > F::zero() {
                    for i in 0..d {
                        gbar[i] += resp[k] * grads[k][i];
                    }
                }
            }
            let mut j = vec![F::zero(); d * d];
            for k in 0..ncomp {
                let r = resp[k];
                if r == F::zero() {
                    continue;
                }
                let prep = &self.prepared[k];
                let u = &prep.eigenvectors;
                for i in 0..d {
                    let c = a2 * prep.eigenvalues[i] + s2;
                    gain[i] = alpha * prep.eigenvalues[i] / c;
                }
                for p in 0..d {
                    for q in 0..d {
                        let a_pq = (0..d).fold(F::zero(), |s, i| s + u[p * d + i] * gain[i] * u[q * d + i]);
                        j[p * d + q] += r * (a_pq + means[k][p] * (grads[k][q] - gbar[q]));
                    }
                }
            }
            j
        });
        Ok(Posterior {
            mean,
            responsibilities: resp,
            component_means: means,
            jacobian: jac,
        })
    }

    /// `E[x0 | x_t]` under the schedule at unit time `t`.
    pub fn posterior_mean(&self, x_t: &[F], t: F, s: &Schedule<F>, class: Option<usize>) -> Result<Vec<F>> {
        let (a, sg) = s.alpha_sigma(t)?;
        Ok(self.posterior_at(x_t, a, sg, class, false)?.mean)
    }

    /// Posterior mean and its `d × d` Jacobian in `x_t`.
    pub fn posterior_mean_jacobian(&self, x_t: &[F], t: F, s: &Schedule<F>, class: Option<usize>) -> Result<(Vec<F>, Vec<F>)> {
        let (a, sg) = s.alpha_sigma(t)?;
        let p = self.posterior_at(x_t, a, sg, class, true)?;
        Ok((p.mean, p.jacobian.expect("requested")))
    }

    /// Score by Tweedie's formula, `−(x_t − α E[x0|x_t]) / σ²`.
    pub fn score(&self, x_t: &[F], t: F, s: &Schedule<F>, class: Option<usize>) -> Result<Vec<F>> {
        let (a, sg) = s.alpha_sigma(t)?;
        let m = self.posterior_at(x_t, a, sg, class, false)?.mean;
        Ok(x_t.iter().zip(&m).map(|(&x, &f)| -(x - a * f) / (sg * sg)).collect())
    }

    /// `log p(x_t)` of the corrupted mixture, via Cholesky factors of
    /// `α² Σ_k + σ² I` built on the spot.
    pub fn log_marginal(&self, x_t: &[F], t: F, s: &Schedule<F>, class: Option<usize>) -> Result<F> {
        self.check_point(x_t)?;
        let (a, sg) = s.alpha_sigma(t)?;
        let d = self.dim;
        let log_w = self.view_log_weights(class)?;
        let mut terms = Vec::new();
        for (k, comp) in self.components.iter().enumerate() {
            let Some(lw) = log_w[k] else { continue };
            let mut c: Vec<F> = comp.cov.iter().map(|&v| a * a * v).collect();
            for i in 0..d {
                c[i * d + i] += sg * sg;
            }
            let ch = Cholesky::new(&c, d)?;
            let r: Vec<F> = (0..d).map(|i| x_t[i] - a * comp.mean[i]).collect();
            let z = ch.solve_lower(&r);
            let quad: F = z.iter().map(|&v| v * v).sum();
            terms.push(lw - F::lit(0.5) * (quad + ch.log_det() + F::from_usize(d).unwrap() * ln_2pi::<F>()));
        }
        Ok(log_sum_exp(&terms))
    }

    /// Classifier-free-guided x0: `u + scale (c − u)` with `u` the
    /// class-marginal and `c` the class-conditional posterior mean.
    pub fn cfg_x0(&self, x_t: &[F], t: F, s: &Schedule<F>, class: usize, scale: F) -> Result<Vec<F>> {
        Ok(self.cfg_x0_jacobian(x_t, t, s, class, scale, false)?.0)
    }

    /// [`cfg_x0`](Self::cfg_x0) with its Jacobian in `x_t` when `jacobian`.
    pub fn cfg_x0_jacobian(
        &self,
        x_t: &[F],
        t: F,
        s: &Schedule<F>,
        class: usize,
        scale: F,
        jacobian: bool,
    ) -> Result<(Vec<F>, Option<Vec<F>>)> {
        if self.class_count == 0 {
            return Err(Error::config("guidance needs a class-conditional teacher"));
        }
        if !(scale >= F::zero()) {
            return Err(Error::config("guidance scale must be non-negative"));
        }
        let (a, sg) = s.alpha_sigma(t)?;
        let u = self.posterior_at(x_t, a, sg, None, jacobian)?;
        let c = self.posterior_at(x_t, a, sg, Some(class), jacobian)?;
        let mix = |u: &[F], c: &[F]| u.iter().zip(c).map(|(&u, &c)| u + scale * (c - u)).collect::<Vec<F>>();
        let value = mix(&u.mean, &c.mean);
        let jac = match (u.jacobian, c.jacobian) {
            (Some(ju), Some(jc)) => Some(mix(&ju, &jc)),
            _ => None,
        };
        Ok((value, jac))
    }

    /// Brute-force `E[x0|x_t]` by tensor-grid quadrature of
    /// `x0 q(x_t|x0) p_data(x0)`; an oracle for `d ≤ 2`.
    pub fn quadrature_posterior_mean(&self, x_t: &[F], t: F, s: &Schedule<F>) -> Result<Vec<F>> {
        self.quadrature_posterior_mean_with(x_t, t, s, QUAD_POINTS)
    }

    pub fn quadrature_posterior_mean_with(&self, x_t: &[F], t: F, s: &Schedule<F>, points: usize) -> Result<Vec<F>> {
        let d = self.dim;
        if d > 2 {
            return Err(Error::Unsupported(format!("quadrature oracle needs d <= 2, got {d}")));
        }
        if points < 3 {
            return Err(Error::config("quadrature needs at least 3 points per axis"));
        }
        self.check_point(x_t)?;
        let (a, sg) = s.alpha_sigma(t)?;
        let half = F::lit(0.5);
        let (a2, s2) = (a * a, sg * sg);
        let mut acc: Vec<(F, F, Vec<F>)> = Vec::with_capacity(self.components.len());
        for (k, comp) in self.components.iter().enumerate() {
            let prep = &self.prepared[k];
            let u = &prep.eigenvectors;
            // Grid centre and extent from the component posterior; the
            // integrand itself is evaluated from the raw densities.
            let y: Vec<F> = (0..d)
                .map(|i| (0..d).fold(F::zero(), |acc, r| acc + u[r * d + i] * (x_t[r] - a * comp.mean[r])))
                .collect();
            let centre: Vec<F> = (0..d)
                .map(|r| {
                    comp.mean[r]
                        + (0..d).fold(F::zero(), |acc, i| {
                            let lam = prep.eigenvalues[i];
                            acc + u[r * d + i] * a * lam / (a2 * lam + s2) * y[i]
                        })
                })
                .collect();
            let sd: Vec<F> = (0..d)
                .map(|r| {
                    (0..d)
                        .fold(F::zero(), |acc, i| {
                            let lam = prep.eigenvalues[i];
                            acc + u[r * d + i] * u[r * d + i] * lam * s2 / (a2 * lam + s2)
                        })
                        .sqrt()
                })
                .collect();
            let w = F::lit(QUAD_HALF_WIDTH);
            let axes: Vec<Vec<F>> = (0..d)
                .map(|r| {
                    let lo = centre[r] - w * sd[r];
                    let h = F::lit(2.0) * w * sd[r] / F::from_usize(points - 1).unwrap();
                    (0..points).map(|i| lo + h * F::from_usize(i).unwrap()).collect()
                })
                .collect();
            let steps: Vec<F> = (0..d).map(|r| axes[r][1] - axes[r][0]).collect();
            // Precision matrix of the component prior, column by column.
            let mut precision = vec![F::zero(); d * d];
            for j in 0..d {
                let mut e = vec![F::zero(); d];
                e[j] = F::one();
                for (i, v) in prep.chol.solve(&e).into_iter().enumerate() {
                    precision[i * d + j] = v;
                }
            }
            let constant = comp.weight.ln() - half * prep.chol.log_det() - F::from_usize(d).unwrap() * sg.ln();
            let log_integrand = |x0: &[F]| -> F {
                let mut prior = F::zero();
                let mut lik = F::zero();
                for i in 0..d {
                    let ri = x0[i] - comp.mean[i];
                    for j in 0..d {
                        prior += ri * precision[i * d + j] * (x0[j] - comp.mean[j]);
                    }
                    let e = x_t[i] - a * x0[i];
                    lik += e * e;
                }
                constant - half * (prior + lik / s2)
            };
            let reference = log_integrand(&centre);
            let trap = |i: usize| if i == 0 || i == points - 1 { half } else { F::one() };
            let mut mass = F::zero();
            let mut first = vec![F::zero(); d];
            let mut x0 = vec![F::zero(); d];
            if d == 1 {
                for i in 0..points {
                    x0[0] = axes[0][i];
                    let v = trap(i) * (log_integrand(&x0) - reference).exp();
                    mass += v;
                    first[0] += v * x0[0];
                }
            } else {
                for i in 0..points {
                    x0[0] = axes[0][i];
                    for j in 0..points {
                        x0[1] = axes[1][j];
                        let v = trap(i) * trap(j) * (log_integrand(&x0) - reference).exp();
                        mass += v;
                        first[0] += v * x0[0];
                        first[1] += v * x0[1];
                    }
                }
            }
            let cell = steps.iter().fold(F::one(), |p, &h| p * h);
            acc.push((reference + (mass * cell).ln(), mass, first));
        }
        let top = acc.iter().map(|c| c.0).fold(F::neg_infinity(), F::max);
        let mut num = vec![F::zero(); d];
        let mut den = F::zero();
        for (log_mass, mass, first) in &acc {
            let scale = (*log_mass - top).exp();
            den += scale;
            for i in 0..d {
                num[i] += scale * first[i] / *mass;
            }
        }
        Ok(num.into_iter().map(|v| v / den).collect())
    }

    /// Ancestral draws from the mixture, or from one class's view of it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, class: Option<usize>) -> Result<Samples<F>> {
        let log_w = self.view_log_weights(class)?;
        let weights: Vec<f64> = log_w
            .iter()
            .map(|w| w.map_or(0.0, |l| l.to_f64_lossy().exp()))
            .collect();
        let d = self.dim;
        let mut points = Vec::with_capacity(n * d);
        let mut comps = Vec::with_capacity(n);
        let mut z = vec![F::zero(); d];
        let last = weights.iter().rposition(|&w| w > 0.0).expect("non-empty view");
        for _ in 0..n {
            let mut u: f64 = rng.random();
            let mut k = last;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 && u < w {
                    k = i;
                    break;
                }
                u -= w;
            }
            for v in z.iter_mut() {
                *v = F::lit(rng.sample::<f64, _>(StandardNormal));
            }
            let lz = self.prepared[k].chol.mul_lower(&z);
            points.extend(self.components[k].mean.iter().zip(&lz).map(|(&m, &e)| m + e));
            comps.push(k);
        }
        Ok(Samples {
            dim: d,
            points,
            components: comps,
        })
    }

    /// Index of the component with the highest weighted density at `x`.
    pub fn nearest_component(&self, x: &[F]) -> Result<usize> {
        self.check_point(x)?;
        let d = self.dim;
        let mut best = (F::neg_infinity(), 0);
        for (k, comp) in self.components.iter().enumerate() {
            let r: Vec<F> = (0..d).map(|i| x[i] - comp.mean[i]).collect();
            let z = self.prepared[k].chol.solve_lower(&r);
            let q: F = z.iter().map(|&v| v * v).sum();
            let score = comp.weight.ln() - F::lit(0.5) * (q + self.prepared[k].chol.log_det());
            if score > best.0 {
                best = (score, k);
            }
        }
        Ok(best.1)
    }

    /// Content hash of the mixture definition, stable across runs.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for c in &self.components {
            h.update(c.weight.to_f64_lossy().to_le_bytes());
            for v in c.mean.iter().chain(&c.cov) {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
            h.update(c.class.map_or(u64::MAX, |l| l as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parse a flat `key = value` teacher definition.
    ///
    /// Either `preset = ring` with optional `modes`, `radius`, `std`,
    /// `classes`, or explicit `component.K.{weight,mean,cov,std,class}` keys
    /// where `mean` and `cov` are comma-separated and `std` is an isotropic
    /// alternative to `cov`.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{}`", n + 1, k.trim())));
            }
        }
        let num = |s: &str| -> Result<F> {
            s.trim()
                .parse::<f64>()
                .map(F::lit)
                .map_err(|_| Error::Parse(format!("not a number: `{s}`")))
        };
        let list = |s: &str| -> Result<Vec<F>> { s.split(',').map(num).collect() };
        let int = |s: &str| -> Result<usize> {
            s.trim().parse::<usize>().map_err(|_| Error::Parse(format!("not a count: `{s}`")))
        };
        if let Some(preset) = kv.remove("preset") {
            if preset != "ring" {
                return Err(Error::config(format!("unknown teacher preset `{preset}`")));
            }
            let modes = kv.remove("modes").map(|v| int(&v)).transpose()?.unwrap_or(8);
            let radius = kv.remove("radius").map(|v| num(&v)).transpose()?.unwrap_or(F::lit(4.0));
            let std = kv.remove("std").map(|v| num(&v)).transpose()?.unwrap_or(F::lit(0.3));
            let classes = kv.remove("classes").map(|v| int(&v)).transpose()?.filter(|&c| c > 0);
            if let Some(k) = kv.keys().next() {
                return Err(Error::config(format!("unknown teacher key `{k}`")));
            }
            return Self::ring(modes, radius, std, classes);
        }
        let mut indices: Vec<usize> = Vec::new();
        for key in kv.keys() {
            let rest = key
                .strip_prefix("component.")
                .ok_or_else(|| Error::config(format!("unknown teacher key `{key}`")))?;
            let (idx, field) = rest
                .split_once('.')
                .ok_or_else(|| Error::config(format!("malformed teacher key `{key}`")))?;
            if !["weight", "mean", "cov", "std", "class"].contains(&field) {
                return Err(Error::config(format!("unknown component field `{field}`")));
            }
            let i = int(idx)?;
            if !indices.contains(&i) {
                indices.push(i);
            }
        }
        indices.sort_unstable();
        if indices.iter().enumerate().any(|(p, &i)| p != i) {
            return Err(Error::config("component indices must be 0, 1, 2, ... without gaps"));
        }
        let mut comps = Vec::new();
        for i in indices {
            let get = |f: &str| kv.get(&format!("component.{i}.{f}"));
            let mean = list(get("mean").ok_or_else(|| Error::config(format!("component {i} needs a mean")))?)?;
            let d = mean.len();
            let cov = match (get("cov"), get("std")) {
                (Some(c), None) => list(c)?,
                (None, Some(s)) => {
                    let v = num(s)?;
                    let mut c = vec![F::zero(); d * d];
                    for j in 0..d {
                        c[j * d + j] = v * v;
                    }
                    c
                }
                _ => return Err(Error::config(format!("component {i} needs exactly one of cov or std"))),
            };
            comps.push(Component {
                weight: num(get("weight").ok_or_else(|| Error::config(format!("component {i} needs a weight")))?)?,
                mean,
                cov,
                class: get("class").map(|c| int(c)).transpose()?,
            });
        }
        Self::new(comps)
    }
}

pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<F>().ln()
}
