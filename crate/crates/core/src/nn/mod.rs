//! Small differentiable networks: a reverse-mode tape, a conditioned MLP,
//! Adam, checkpoints and finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod fd;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{forward, forward_batch, forward_tape, Activation, Layout, NetParams, NetSpec};
pub use tape::{Gradients, Mat, Tape, Var};

use crate::error::Result;
use crate::real::Real;

/// Value and gradient of a scalar loss built on a fresh tape from the flat
/// parameter leaf handed to `loss`.
pub fn grad<F: Real>(params: &[F], loss: impl FnOnce(&Tape<F>, Var) -> Result<Var>) -> Result<(F, Vec<F>)> {
    let tape = Tape::new();
    let p = tape.leaf(Mat::new(1, params.len(), params.to_vec()));
    let out = loss(&tape, p)?;
    let grads = tape.backward(out)?;
    Ok((tape.scalar_value(out), grads.get_or_zeros(&tape, p).data))
}

/// Copies `x` onto the tape with a zero derivative.
pub fn stop_gradient<F: Real>(tape: &Tape<F>, x: Var) -> Var {
    tape.stop_gradient(x)
}
