use crate::error::{CsclError, Result};

use super::{Matrix, Real};

/// A named, shaped parameter with its gradient buffer. This is the exchange
/// type between models, the optimizer, checkpoints and the gradient oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> NamedTensor<F> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<F>) -> Result<Self> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if dims.contains(&0) || values.len() != n {
            return Err(CsclError::shape(format!(
                "tensor {name}: dims {dims:?} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            grad: vec![F::zero(); n],
            name,
            dims,
            values,
        })
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.grad.iter().all(|v| v.is_finite())
    }
}

/// A fixed, ordered collection of learnable matrices.
///
/// The same type doubles as its own gradient container: `zeros_like` yields
/// a structure whose matrices accumulate gradients.
pub trait Parameters<F: Real>: Clone {
    fn named(&self) -> Vec<(String, &Matrix<F>)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_mut() {
            m.fill(F::zero());
        }
        z
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    /// Parameters as named tensors, with `grads` (if given) copied into the
    /// gradient buffers.
    fn to_tensors(&self, grads: Option<&Self>) -> Vec<NamedTensor<F>> {
        let gs = grads.map(|g| g.named());
        self.named()
            .into_iter()
            .enumerate()
            .map(|(i, (name, m))| {
                let dims = vec![m.rows(), m.cols()];
                let grad = match &gs {
                    Some(g) => g[i].1.as_slice().to_vec(),
                    None => vec![F::zero(); m.as_slice().len()],
                };
                NamedTensor {
                    name,
                    dims,
                    values: m.as_slice().to_vec(),
                    grad,
                }
            })
            .collect()
    }

    /// Overwrites parameter values from tensors matched by name. Every
    /// parameter must be present with matching dims; extra tensors are ignored.
    fn load_tensors(&mut self, tensors: &[NamedTensor<F>]) -> Result<()> {
        for (name, m) in self.named_mut() {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CsclError::Checkpoint(format!("missing tensor {name}")))?;
            let want = [m.rows(), m.cols()];
            if t.dims.iter().product::<usize>() != want[0] * want[1]
                || !(t.dims == want || (t.dims.len() == 1 && want[0] == 1))
            {
                return Err(CsclError::Checkpoint(format!(
                    "tensor {name}: dims {:?}, expected {want:?}",
                    t.dims
                )));
            }
            m.as_mut_slice().copy_from_slice(&t.values);
        }
        Ok(())
    }

    /// Flat view of all parameter values, in `named()` order.
    fn flatten(&self) -> Vec<F> {
        self.named()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    fn unflatten(&mut self, flat: &[F]) {
        let mut off = 0;
        for (_, m) in self.named_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    fn global_sq_norm(&self) -> F {
        self.named()
            .iter()
            .fold(F::zero(), |acc, (_, m)| acc + m.sum_sq())
    }

    fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }
}
