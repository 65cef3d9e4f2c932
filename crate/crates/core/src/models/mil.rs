use rand::Rng;

use crate::error::{CsclError, Result};
use crate::math::matrix::{axpy, dot};
use crate::math::ops::{
    self, matmul_nt, matmul_tn, matmul_unchecked, softmax_backward, softmax_unchecked,
};
use crate::math::{Matrix, NamedTensor, Parameters, Real};

use super::{dims2, find, xavier_uniform};

/// Gated-attention MIL pooling:
///
/// `aᵢ ∝ exp(wᵀ(tanh(Vᵀzᵢ) ⊙ σ(Uᵀzᵢ)))`, `e = W_outᵀ Σᵢ aᵢ zᵢ`.
///
/// One set of weights is shared by every stain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mil<F> {
    /// `D × L`
    pub v: Matrix<F>,
    /// `D × L`
    pub u: Matrix<F>,
    /// `L × 1`
    pub w: Matrix<F>,
    /// `D × D`
    pub w_out: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct MilCache<F> {
    x: Matrix<F>,
    gate_tanh: Matrix<F>,
    gate_sig: Matrix<F>,
    attn: Vec<F>,
    pooled: Vec<F>,
}

impl<F: Real> MilCache<F> {
    /// Attention weights over the bag's patches.
    pub fn attention(&self) -> &[F] {
        &self.attn
    }
}

impl<F: Real> Mil<F> {
    pub fn zeros(dim: usize, attn_hidden: usize) -> Self {
        Self {
            v: Matrix::zeros(dim, attn_hidden),
            u: Matrix::zeros(dim, attn_hidden),
            w: Matrix::zeros(attn_hidden, 1),
            w_out: Matrix::zeros(dim, dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, attn_hidden: usize, rng: &mut R) -> Self {
        Self {
            v: xavier_uniform(dim, attn_hidden, rng),
            u: xavier_uniform(dim, attn_hidden, rng),
            w: xavier_uniform(attn_hidden, 1, rng),
            w_out: xavier_uniform(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.v.rows()
    }

    pub fn from_tensors(tensors: &[NamedTensor<F>]) -> Result<Self> {
        let (d, l) = dims2(find(tensors, "mil.v")?)?;
        let mut m = Self::zeros(d, l);
        m.load_tensors(tensors)?;
        Ok(m)
    }

    pub fn forward(&self, bag: &Matrix<F>) -> Result<(Vec<F>, MilCache<F>)> {
        if bag.rows() == 0 {
            return Err(CsclError::invalid("MIL aggregation of an empty bag"));
        }
        if bag.cols() != self.dim() {
            return Err(CsclError::shape(format!(
                "MIL expects D = {}, got {}",
                self.dim(),
                bag.cols()
            )));
        }
        let gate_tanh = ops::tanh(&matmul_unchecked(bag, &self.v));
        let gate_sig = ops::sigmoid(&matmul_unchecked(bag, &self.u));
        let gated = ops::mul(&gate_tanh, &gate_sig)?;
        let scores: Vec<F> = gated
            .row_iter()
            .map(|r| dot(r, self.w.as_slice()))
            .collect();
        let attn = softmax_unchecked(&scores, F::one());
        let mut pooled = vec![F::zero(); bag.cols()];
        for (i, &a) in attn.iter().enumerate() {
            axpy(a, bag.row(i), &mut pooled);
        }
        let e = matmul_unchecked(&Matrix::row_vector(pooled.clone()), &self.w_out).into_vec();
        Ok((
            e,
            MilCache {
                x: bag.clone(),
                gate_tanh,
                gate_sig,
                attn,
                pooled,
            },
        ))
    }

    pub fn apply(&self, bag: &Matrix<F>) -> Result<Vec<F>> {
        Ok(self.forward(bag)?.0)
    }

    /// Accumulates into `grads`; returns `∂L/∂bag`.
    pub fn backward(&self, cache: &MilCache<F>, de: &[F], grads: &mut Self) -> Matrix<F> {
        let x = &cache.x;
        let de_row = Matrix::row_vector(de.to_vec());
        grads.w_out.add_assign(&matmul_tn(
            &Matrix::row_vector(cache.pooled.clone()),
            &de_row,
        ));
        let dpooled = matmul_nt(&de_row, &self.w_out).into_vec();

        let mut dx = Matrix::zeros(x.rows(), x.cols());
        let da: Vec<F> = x.row_iter().map(|r| dot(r, &dpooled)).collect();
        for (i, &a) in cache.attn.iter().enumerate() {
            axpy(a, &dpooled, dx.row_mut(i));
        }
        let ds = softmax_backward(&cache.attn, &da, F::one());
        let ds_col = Matrix::from_vec(ds.len(), 1, ds).expect("shape");
        let gated = ops::mul(&cache.gate_tanh, &cache.gate_sig).expect("shape");
        grads.w.add_assign(&matmul_tn(&gated, &ds_col));
        let dgated = matmul_nt(&ds_col, &self.w);
        let (dt, dsig) = ops::mul_backward(&cache.gate_tanh, &cache.gate_sig, &dgated);
        let dpre_v = ops::tanh_backward(&cache.gate_tanh, &dt);
        let dpre_u = ops::sigmoid_backward(&cache.gate_sig, &dsig);
        grads.v.add_assign(&matmul_tn(x, &dpre_v));
        grads.u.add_assign(&matmul_tn(x, &dpre_u));
        dx.add_assign(&matmul_nt(&dpre_v, &self.v));
        dx.add_assign(&matmul_nt(&dpre_u, &self.u));
        dx
    }
}

impl<F: Real> Parameters<F> for Mil<F> {
    fn named(&self) -> Vec<(String, &Matrix<F>)> {
        vec![
            ("mil.v".into(), &self.v),
            ("mil.u".into(), &self.u),
            ("mil.w".into(), &self.w),
            ("mil.w_out".into(), &self.w_out),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)> {
        vec![
            ("mil.v".into(), &mut self.v),
            ("mil.u".into(), &mut self.u),
            ("mil.w".into(), &mut self.w),
            ("mil.w_out".into(), &mut self.w_out),
        ]
    }
}

/// Slide embedding of an `N × D` bag.
pub fn mil_aggregate<F: Real>(bag: &Matrix<F>, params: &Mil<F>) -> Result<Vec<F>> {
    params.apply(bag)
}
