//! Learnable components: the residual patch adapter, cross-stain attention
//! fusion over aligned stain vectors, and the gated-attention MIL aggregator.
//!
//! Each model exposes `forward` returning its output plus a cache, and
//! `backward` which accumulates parameter gradients into a same-typed
//! gradient container and returns the input gradient.

mod adapter;
mod caf;
pub mod checkpoint;
mod mil;

use rand::Rng;

use crate::math::{Matrix, Real};

pub use adapter::{adapter_forward, Adapter, AdapterCache};
pub use caf::{caf_fuse, Caf, CafCache};
pub use checkpoint::{
    read_checkpoint, read_checkpoint_file, tensors_checksum, write_checkpoint,
    write_checkpoint_file,
};
pub use mil::{mil_aggregate, Mil, MilCache};

/// Xavier/Glorot uniform: `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Matrix<F> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::lit(rng.random_range(-a..a)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn find<'a, F>(
    tensors: &'a [crate::math::NamedTensor<F>],
    name: &str,
) -> crate::Result<&'a crate::math::NamedTensor<F>> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| crate::CsclError::Checkpoint(format!("missing tensor {name}")))
}

fn dims2<F>(t: &crate::math::NamedTensor<F>) -> crate::Result<(usize, usize)> {
    match t.dims.as_slice() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        d => Err(crate::CsclError::Checkpoint(format!(
            "tensor {}: expected a matrix, got dims {d:?}",
            t.name
        ))),
    }
}
