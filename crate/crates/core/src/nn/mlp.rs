//! Time- and class-conditioned multilayer perceptron.
//!
//! Input features per row are `[x, τ, sin(ωτ), cos(ωτ), e_c]` with
//! `τ = logit(t)/4` (linear in log-SNR), `ω = 1..=time_features`, and `e_c` a
//! learned embedding whose last row stands for "no class". The output head
//! is zero-initialized so a fresh net predicts exactly 0.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::param::Kind;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
        }
    }

    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => x / (F::one() + (-x).exp()),
            Activation::Softplus => {
                if x > F::zero() {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "softplus" => Ok(Activation::Softplus),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
    pub class_count: Option<usize>,
    pub class_embed: usize,
    /// Which quantity the raw output is read as.
    pub output_kind: Kind,
}

impl NetSpec {
    /// 3 × 128 SiLU, 8 frequency pairs, 16-wide class embeddings.
    pub fn standard(input_dim: usize, class_count: Option<usize>, output_kind: Kind) -> Self {
        NetSpec {
            input_dim,
            hidden: vec![128; 3],
            activation: Activation::Silu,
            time_features: 8,
            class_count,
            class_embed: 16,
            output_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("network widths must be at least 1".into()));
        }
        if self.class_count == Some(0) || (self.class_count.is_some() && self.class_embed == 0) {
            return Err(Error::Config("class-conditioned nets need ≥ 1 class and a non-empty embedding".into()));
        }
        Ok(())
    }

    fn embed_width(&self) -> usize {
        if self.class_count.is_some() {
            self.class_embed
        } else {
            0
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim + 1 + 2 * self.time_features + self.embed_width()
    }

    /// Canonical one-line description; its hash identifies checkpoints.
    pub fn describe(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!(
            "input_dim={} hidden={} activation={} time_features={} class_count={} class_embed={} output_kind={}",
            self.input_dim,
            hidden.join("x"),
            self.activation.name(),
            self.time_features,
            self.class_count.map_or("none".to_string(), |c| c.to_string()),
            self.embed_width(),
            self.output_kind
        )
    }

    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `(weight offset, bias offset, fan_in, fan_out)` per affine layer; the
    /// last one is the output head.
    pub layers: Vec<(usize, usize, usize, usize)>,
    /// Offset of the `(class_count + 1) × class_embed` embedding table.
    pub embedding: Option<usize>,
    pub len: usize,
}

impl Layout {
    pub fn new(spec: &NetSpec) -> Self {
        let mut widths = vec![spec.feature_dim()];
        widths.extend(&spec.hidden);
        widths.push(spec.input_dim);
        let mut off = 0;
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wo = off;
            let bo = wo + fan_in * fan_out;
            off = bo + fan_out;
            layers.push((wo, bo, fan_in, fan_out));
        }
        let embedding = spec.class_count.map(|c| {
            let e = off;
            off += (c + 1) * spec.class_embed;
            e
        });
        Layout { layers, embedding, len: off }
    }

    pub fn head(&self) -> (usize, usize, usize, usize) {
        *self.layers.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    pub values: Vec<F>,
    pub layout: Layout,
}

impl<F: Real> NetParams<F> {
    /// Scaled-normal hidden weights, zero biases, zero head, unit-normal
    /// embeddings.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec);
        let mut values = vec![F::zero(); layout.len];
        let hidden_layers = layout.layers.len() - 1;
        for &(wo, _, fan_in, fan_out) in &layout.layers[..hidden_layers] {
            let scale = (2.0 / fan_in as f64).sqrt();
            for v in &mut values[wo..wo + fan_in * fan_out] {
                *v = F::lit(scale * rng.sample::<f64, _>(StandardNormal));
            }
        }
        if let (Some(e), Some(c)) = (layout.embedding, spec.class_count) {
            for v in &mut values[e..e + (c + 1) * spec.class_embed] {
                *v = F::lit(rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(NetParams { values, layout })
    }

    pub fn from_values(spec: &NetSpec, values: Vec<F>) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec);
        if values.len() != layout.len {
            return Err(Error::Dimension {
                expected: layout.len,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        Ok(NetParams { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-row time features `[τ, sin ωτ, cos ωτ]`.
fn time_features<F: Real>(spec: &NetSpec, t: F) -> Vec<F> {
    let tau = (t / (F::one() - t)).ln() / F::lit(4.0);
    let mut out = Vec::with_capacity(1 + 2 * spec.time_features);
    out.push(tau);
    for w in 1..=spec.time_features {
        out.push((F::lit(w as f64) * tau).sin());
    }
    for w in 1..=spec.time_features {
        out.push((F::lit(w as f64) * tau).cos());
    }
    out
}

fn class_rows(spec: &NetSpec, n: usize, classes: &[Option<usize>]) -> Result<Vec<usize>> {
    let Some(c) = spec.class_count else {
        return Ok(Vec::new());
    };
    if classes.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: classes.len(),
        });
    }
    classes
        .iter()
        .map(|k| match *k {
            None => Ok(c),
            Some(k) if k < c => Ok(k),
            Some(k) => Err(Error::domain(format!("class {k} out of range for {c} classes"))),
        })
        .collect()
}

fn check_inputs<F: Real>(spec: &NetSpec, x_len: usize, t: &[F]) -> Result<usize> {
    let n = t.len();
    if x_len != n * spec.input_dim {
        return Err(Error::Dimension {
            expected: n * spec.input_dim,
            got: x_len,
        });
    }
    if t.iter().any(|&t| !(t > F::zero() && t < F::one())) {
        return Err(Error::domain("network time must lie strictly inside (0, 1)"));
    }
    Ok(n)
}

/// Network output for one input; `class = None` is the unconditional branch.
pub fn forward<F: Real>(spec: &NetSpec, params: &NetParams<F>, x: &[F], t: F, class: Option<usize>) -> Result<Vec<F>> {
    forward_batch(spec, params, x, &[t], &[class])
}

/// Batched forward pass without recording a tape. `classes` may be empty for
/// unconditional nets.
pub fn forward_batch<F: Real>(
    spec: &NetSpec,
    params: &NetParams<F>,
    x: &[F],
    t: &[F],
    classes: &[Option<usize>],
) -> Result<Vec<F>> {
    if params.layout != Layout::new(spec) {
        return Err(Error::Contract("parameter layout does not match the network spec".into()));
    }
    let n = check_inputs(spec, x.len(), t)?;
    let rows = class_rows(spec, n, classes)?;
    let d = spec.input_dim;
    let fd = spec.feature_dim();
    let p = &params.values;
    let mut h = vec![F::zero(); n * fd];
    for i in 0..n {
        let row = &mut h[i * fd..(i + 1) * fd];
        row[..d].copy_from_slice(&x[i * d..(i + 1) * d]);
        let tf = time_features(spec, t[i]);
        row[d..d + tf.len()].copy_from_slice(&tf);
        if let Some(e) = params.layout.embedding {
            let ew = spec.class_embed;
            row[d + tf.len()..].copy_from_slice(&p[e + rows[i] * ew..e + (rows[i] + 1) * ew]);
        }
    }
    let last = params.layout.layers.len() - 1;
    for (li, &(wo, bo, fan_in, fan_out)) in params.layout.layers.iter().enumerate() {
        let mut out = vec![F::zero(); n * fan_out];
        for r in 0..n {
            out[r * fan_out..(r + 1) * fan_out].copy_from_slice(&p[bo..bo + fan_out]);
        }
        F::gemm(n, fan_in, fan_out, F::one(), &h, false, &p[wo..wo + fan_in * fan_out], false, F::one(), &mut out);
        if li < last {
            out.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        }
        h = out;
    }
    Ok(h)
}

/// Batched forward pass recorded on `tape`. `params` must be a `1 × P` node
/// holding the flat parameter vector (a leaf for trainable nets, a constant
/// for frozen ones) and `x` an `n × d` node. Time is not differentiated.
pub fn forward_tape<F: Real>(
    spec: &NetSpec,
    layout: &Layout,
    tape: &Tape<F>,
    params: Var,
    x: Var,
    t: &[F],
    classes: &[Option<usize>],
) -> Result<Var> {
    if *layout != Layout::new(spec) || tape.shape(params) != (1, layout.len) {
        return Err(Error::Contract("parameter node does not match the network spec".into()));
    }
    let (xr, xc) = tape.shape(x);
    if xc != spec.input_dim {
        return Err(Error::Dimension {
            expected: spec.input_dim,
            got: xc,
        });
    }
    let n = check_inputs(spec, xr * xc, t)?;
    let rows = class_rows(spec, n, classes)?;
    let nt = 1 + 2 * spec.time_features;
    let mut tf = Vec::with_capacity(n * nt);
    for &ti in t {
        tf.extend(time_features(spec, ti));
    }
    let mut parts = vec![x, tape.constant(Mat::new(n, nt, tf))];
    if let (Some(e), Some(c)) = (layout.embedding, spec.class_count) {
        let table = tape.view(params, e, c + 1, spec.class_embed)?;
        parts.push(tape.gather_rows(table, &rows)?);
    }
    let mut h = tape.concat_cols(&parts)?;
    let last = layout.layers.len() - 1;
    for (li, &(wo, bo, fan_in, fan_out)) in layout.layers.iter().enumerate() {
        let w = tape.view(params, wo, fan_in, fan_out)?;
        let b = tape.view(params, bo, 1, fan_out)?;
        h = tape.add_row(tape.matmul(h, w)?, b)?;
        if li < last {
            h = match spec.activation {
                Activation::Silu => tape.silu(h),
                Activation::Softplus => tape.softplus(h),
            };
        }
    }
    Ok(h)
}
