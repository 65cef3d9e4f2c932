use rand::Rng;

use crate::error::{CsclError, Result};
use crate::math::matrix::{axpy, dot};
use crate::math::ops::{
    matmul_nt, matmul_tn, matmul_unchecked, softmax_backward, softmax_unchecked,
};
use crate::math::{Matrix, NamedTensor, Parameters, Real};

use super::{dims2, find, xavier_uniform};

/// Cross-stain attention fusion.
///
/// At every patch position the `M` aligned stain vectors attend to each
/// other with `H` heads; the H&E row of the result (projected by `W^O` and
/// added back to the H&E input) replaces the H&E embedding. Positions never
/// interact.
#[derive(Debug, Clone, PartialEq)]
pub struct Caf<F> {
    pub wq: Vec<Matrix<F>>,
    pub wk: Vec<Matrix<F>>,
    pub wv: Vec<Matrix<F>>,
    /// `(H · d_k) × D`
    pub wo: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct CafCache<F> {
    stains: Vec<Matrix<F>>,
    heads: Vec<HeadCache<F>>,
    concat: Matrix<F>,
}

#[derive(Debug, Clone)]
struct HeadCache<F> {
    q: Matrix<F>,
    k: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
    /// `N × M` attention of the H&E query over stains.
    attn: Matrix<F>,
}

impl<F: Real> Caf<F> {
    pub fn zeros(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(CsclError::invalid(format!(
                "{heads} heads do not divide D = {dim}"
            )));
        }
        let dk = dim / heads;
        let z = || {
            (0..heads)
                .map(|_| Matrix::zeros(dim, dk))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            wq: z(),
            wk: z(),
            wv: z(),
            wo: Matrix::zeros(heads * dk, dim),
        })
    }

    /// Xavier projections and zero `W^O`: fusion starts as the identity.
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mut c = Self::zeros(dim, heads)?;
        let dk = c.head_dim();
        for h in 0..heads {
            c.wq[h] = xavier_uniform(dim, dk, rng);
            c.wk[h] = xavier_uniform(dim, dk, rng);
            c.wv[h] = xavier_uniform(dim, dk, rng);
        }
        Ok(c)
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn head_dim(&self) -> usize {
        self.wq[0].cols()
    }

    pub fn dim(&self) -> usize {
        self.wo.cols()
    }

    pub fn from_tensors(tensors: &[NamedTensor<F>]) -> Result<Self> {
        let heads = (0..)
            .take_while(|h| tensors.iter().any(|t| t.name == format!("caf.wq.{h}")))
            .count();
        let (_, dim) = dims2(find(tensors, "caf.wo")?)?;
        let mut c = Self::zeros(dim, heads.max(1))?;
        c.load_tensors(tensors)?;
        Ok(c)
    }

    /// `stains[0]` is H&E; every entry is `N × D` and aligned by row.
    pub fn forward(&self, stains: &[&Matrix<F>]) -> Result<(Matrix<F>, CafCache<F>)> {
        if stains.len() < 2 {
            return Err(CsclError::invalid(format!(
                "attention fusion needs H&E plus at least one IHC stain, got M = {}",
                stains.len()
            )));
        }
        let (n, d) = stains[0].shape();
        if d != self.dim() {
            return Err(CsclError::shape(format!(
                "CAF expects D = {}, got {d}",
                self.dim()
            )));
        }
        if let Some(m) = stains.iter().position(|s| s.shape() != (n, d)) {
            return Err(CsclError::shape(format!(
                "stain {m} is {:?}, H&E is {:?}",
                stains[m].shape(),
                (n, d)
            )));
        }
        let m_count = stains.len();
        let dk = self.head_dim();
        let scale = F::one() / F::lit(dk as f64).sqrt();
        let mut concat = Matrix::zeros(n, self.heads() * dk);
        let mut heads = Vec::with_capacity(self.heads());
        for h in 0..self.heads() {
            let q = matmul_unchecked(stains[0], &self.wq[h]);
            let k: Vec<_> = stains
                .iter()
                .map(|s| matmul_unchecked(s, &self.wk[h]))
                .collect();
            let v: Vec<_> = stains
                .iter()
                .map(|s| matmul_unchecked(s, &self.wv[h]))
                .collect();
            let mut attn = Matrix::zeros(n, m_count);
            for i in 0..n {
                let logits: Vec<F> = (0..m_count)
                    .map(|m| dot(q.row(i), k[m].row(i)) * scale)
                    .collect();
                let p = softmax_unchecked(&logits, F::one());
                attn.row_mut(i).copy_from_slice(&p);
                let out = &mut concat.row_mut(i)[h * dk..(h + 1) * dk];
                for (m, &pm) in p.iter().enumerate() {
                    axpy(pm, v[m].row(i), out);
                }
            }
            heads.push(HeadCache { q, k, v, attn });
        }
        let mut fused = matmul_unchecked(&concat, &self.wo);
        fused.add_assign(stains[0]);
        Ok((
            fused,
            CafCache {
                stains: stains.iter().map(|s| (*s).clone()).collect(),
                heads,
                concat,
            },
        ))
    }

    /// Accumulates into `grads`; returns `∂L/∂S` for every stain input.
    pub fn backward(
        &self,
        cache: &CafCache<F>,
        dy: &Matrix<F>,
        grads: &mut Self,
    ) -> Vec<Matrix<F>> {
        let n = dy.rows();
        let dk = self.head_dim();
        let scale = F::one() / F::lit(dk as f64).sqrt();
        let mut ds: Vec<Matrix<F>> = cache.stains.iter().map(Matrix::zeros_like).collect();
        ds[0].add_assign(dy);

        grads.wo.add_assign(&matmul_tn(&cache.concat, dy));
        let dconcat = matmul_nt(dy, &self.wo);

        for (h, hc) in cache.heads.iter().enumerate() {
            let m_count = hc.k.len();
            let mut dq = Matrix::zeros(n, dk);
            let mut dk_m: Vec<_> = (0..m_count).map(|_| Matrix::zeros(n, dk)).collect();
            let mut dv_m: Vec<_> = (0..m_count).map(|_| Matrix::zeros(n, dk)).collect();
            for i in 0..n {
                let dout = &dconcat.row(i)[h * dk..(h + 1) * dk];
                let p = hc.attn.row(i);
                let dp: Vec<F> = (0..m_count).map(|m| dot(dout, hc.v[m].row(i))).collect();
                for m in 0..m_count {
                    axpy(p[m], dout, dv_m[m].row_mut(i));
                }
                let dlogit = softmax_backward(p, &dp, F::one());
                for m in 0..m_count {
                    let g = dlogit[m] * scale;
                    axpy(g, hc.k[m].row(i), dq.row_mut(i));
                    axpy(g, hc.q.row(i), dk_m[m].row_mut(i));
                }
            }
            grads.wq[h].add_assign(&matmul_tn(&cache.stains[0], &dq));
            ds[0].add_assign(&matmul_nt(&dq, &self.wq[h]));
            for m in 0..m_count {
                grads.wk[h].add_assign(&matmul_tn(&cache.stains[m], &dk_m[m]));
                grads.wv[h].add_assign(&matmul_tn(&cache.stains[m], &dv_m[m]));
                ds[m].add_assign(&matmul_nt(&dk_m[m], &self.wk[h]));
                ds[m].add_assign(&matmul_nt(&dv_m[m], &self.wv[h]));
            }
        }
        ds
    }
}

impl<F: Real> Parameters<F> for Caf<F> {
    fn named(&self) -> Vec<(String, &Matrix<F>)> {
        let mut v = Vec::new();
        for (h, m) in self.wq.iter().enumerate() {
            v.push((format!("caf.wq.{h}"), m));
        }
        for (h, m) in self.wk.iter().enumerate() {
            v.push((format!("caf.wk.{h}"), m));
        }
        for (h, m) in self.wv.iter().enumerate() {
            v.push((format!("caf.wv.{h}"), m));
        }
        v.push(("caf.wo".into(), &self.wo));
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)> {
        let mut v = Vec::new();
        for (h, m) in self.wq.iter_mut().enumerate() {
            v.push((format!("caf.wq.{h}"), m));
        }
        for (h, m) in self.wk.iter_mut().enumerate() {
            v.push((format!("caf.wk.{h}"), m));
        }
        for (h, m) in self.wv.iter_mut().enumerate() {
            v.push((format!("caf.wv.{h}"), m));
        }
        v.push(("caf.wo".into(), &mut self.wo));
        v
    }
}

/// Fuses IHC context into the H&E rows; returns the updated `N × D` H&E rows.
pub fn caf_fuse<F: Real>(stains: &[&Matrix<F>], params: &Caf<F>) -> Result<Matrix<F>> {
    Ok(params.forward(stains)?.0)
}
