use rand::Rng;

use crate::error::{CsclError, Result};
use crate::math::ops::{self, matmul_nt, matmul_tn, matmul_unchecked};
use crate::math::{Matrix, NamedTensor, Parameters, Real};

use super::{dims2, find, xavier_uniform};

/// Residual two-layer transform applied row-wise after the frozen encoder:
/// `z = x + W2ᵀ tanh(W1ᵀ x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<F> {
    pub w1: Matrix<F>,
    pub b1: Matrix<F>,
    pub w2: Matrix<F>,
    pub b2: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct AdapterCache<F> {
    x: Matrix<F>,
    hidden: Matrix<F>,
}

impl<F: Real> Adapter<F> {
    /// All-zero parameters: the exact identity.
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(dim, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, dim),
            b2: Matrix::zeros(1, dim),
        }
    }

    /// Xavier `W1`, zero `W2` and biases, so the adapter starts as identity.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: xavier_uniform(dim, hidden, rng),
            ..Self::zeros(dim, hidden)
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn from_tensors(tensors: &[NamedTensor<F>]) -> Result<Self> {
        let (d, h) = dims2(find(tensors, "adapter.w1")?)?;
        let mut a = Self::zeros(d, h);
        a.load_tensors(tensors)?;
        Ok(a)
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<(Matrix<F>, AdapterCache<F>)> {
        if x.cols() != self.dim() {
            return Err(CsclError::shape(format!(
                "adapter expects D = {}, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let pre = ops::add_bias(&matmul_unchecked(x, &self.w1), self.b1.as_slice())?;
        let hidden = ops::tanh(&pre);
        let mut y = ops::add_bias(&matmul_unchecked(&hidden, &self.w2), self.b2.as_slice())?;
        y.add_assign(x);
        Ok((
            y,
            AdapterCache {
                x: x.clone(),
                hidden,
            },
        ))
    }

    pub fn apply(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates into `grads`; returns `∂L/∂x`.
    pub fn backward(&self, cache: &AdapterCache<F>, dy: &Matrix<F>, grads: &mut Self) -> Matrix<F> {
        grads.w2.add_assign(&matmul_tn(&cache.hidden, dy));
        add_row(&mut grads.b2, &ops::column_sums(dy));
        let dhidden = matmul_nt(dy, &self.w2);
        let dpre = ops::tanh_backward(&cache.hidden, &dhidden);
        grads.w1.add_assign(&matmul_tn(&cache.x, &dpre));
        add_row(&mut grads.b1, &ops::column_sums(&dpre));
        let mut dx = matmul_nt(&dpre, &self.w1);
        dx.add_assign(dy);
        dx
    }
}

pub(crate) fn add_row<F: Real>(m: &mut Matrix<F>, v: &[F]) {
    for (a, &b) in m.as_mut_slice().iter_mut().zip(v) {
        *a = *a + b;
    }
}

impl<F: Real> Parameters<F> for Adapter<F> {
    fn named(&self) -> Vec<(String, &Matrix<F>)> {
        vec![
            ("adapter.w1".into(), &self.w1),
            ("adapter.b1".into(), &self.b1),
            ("adapter.w2".into(), &self.w2),
            ("adapter.b2".into(), &self.b2),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)> {
        vec![
            ("adapter.w1".into(), &mut self.w1),
            ("adapter.b1".into(), &mut self.b1),
            ("adapter.w2".into(), &mut self.w2),
            ("adapter.b2".into(), &mut self.b2),
        ]
    }
}

/// Row-wise adapter transform of an `N × D` bag.
pub fn adapter_forward<F: Real>(z_raw: &Matrix<F>, params: &Adapter<F>) -> Result<Matrix<F>> {
    params.apply(z_raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_are_identity() {
        let x = Matrix::from_rows(&[vec![0.3f32, -1.5, 2.0], vec![1e-7, 4.0, -0.0]]).unwrap();
        let y = Adapter::<f32>::zeros(3, 5).apply(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn identity_weights_on_origin() {
        let mut a = Adapter::<f64>::zeros(2, 2);
        a.w1 = Matrix::identity(2);
        a.w2 = Matrix::identity(2);
        let y = a.apply(&Matrix::zeros(1, 2)).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let a = Adapter::<f64>::zeros(4, 2);
        assert!(a.apply(&Matrix::zeros(1, 3)).is_err());
    }
}
