//! Forward and reverse rules for the primitive set.
//!
//! Reverse functions take the forward inputs (or outputs, where cheaper) and
//! the upstream gradient, and return gradients for each input. Nothing here
//! accumulates into caller buffers; composition happens in the models.

use crate::error::{CsclError, Result};

use super::matrix::{axpy, dot};
use super::{Matrix, Real};

/// Reduction / concatenation axis. `Rows` runs down a column (axis 0);
/// `Cols` runs along a row (axis 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

// ---------------------------------------------------------------- matmul

/// `a · b`
pub fn matmul<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Result<Matrix<F>> {
    if a.cols() != b.rows() {
        return Err(CsclError::shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(matmul_unchecked(a, b))
}

pub(crate) fn matmul_unchecked<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut c = Matrix::zeros(n, m);
    for i in 0..n {
        let ar = a.row(i);
        let cr = c.row_mut(i);
        for (p, &aip) in ar.iter().enumerate().take(k) {
            if aip != F::zero() {
                axpy(aip, b.row(p), cr);
            }
        }
    }
    c
}

/// `aᵀ · b`
pub(crate) fn matmul_tn<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    debug_assert_eq!(a.rows(), b.rows());
    let mut c = Matrix::zeros(a.cols(), b.cols());
    for p in 0..a.rows() {
        let br = b.row(p);
        for (i, &api) in a.row(p).iter().enumerate() {
            if api != F::zero() {
                axpy(api, br, c.row_mut(i));
            }
        }
    }
    c
}

/// `a · bᵀ`
pub(crate) fn matmul_nt<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    debug_assert_eq!(a.cols(), b.cols());
    let mut c = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ar = a.row(i);
        for j in 0..b.rows() {
            c[(i, j)] = dot(ar, b.row(j));
        }
    }
    c
}

/// Returns `(da, db)` for `c = a · b`.
pub fn matmul_backward<F: Real>(
    a: &Matrix<F>,
    b: &Matrix<F>,
    dc: &Matrix<F>,
) -> (Matrix<F>, Matrix<F>) {
    (matmul_nt(dc, b), matmul_tn(a, dc))
}

// ---------------------------------------------------------------- bias

/// Adds `bias` to every row.
pub fn add_bias<F: Real>(x: &Matrix<F>, bias: &[F]) -> Result<Matrix<F>> {
    if bias.len() != x.cols() {
        return Err(CsclError::shape(format!(
            "bias of length {} on {} columns",
            bias.len(),
            x.cols()
        )));
    }
    let mut y = x.clone();
    for i in 0..y.rows() {
        for (v, &b) in y.row_mut(i).iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    Ok(y)
}

/// Returns `(dx, dbias)`.
pub fn add_bias_backward<F: Real>(dy: &Matrix<F>) -> (Matrix<F>, Vec<F>) {
    (dy.clone(), column_sums(dy))
}

pub(crate) fn column_sums<F: Real>(x: &Matrix<F>) -> Vec<F> {
    let mut s = vec![F::zero(); x.cols()];
    for r in x.row_iter() {
        for (acc, &v) in s.iter_mut().zip(r) {
            *acc = *acc + v;
        }
    }
    s
}

// ---------------------------------------------------------------- pointwise

pub fn tanh<F: Real>(x: &Matrix<F>) -> Matrix<F> {
    x.map(F::tanh)
}

/// Takes the forward output `y = tanh(x)`.
pub fn tanh_backward<F: Real>(y: &Matrix<F>, dy: &Matrix<F>) -> Matrix<F> {
    zip_map(y, dy, |y, g| g * (F::one() - y * y))
}

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Matrix<F>) -> Matrix<F> {
    x.map(sigmoid_scalar)
}

/// Takes the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<F: Real>(y: &Matrix<F>, dy: &Matrix<F>) -> Matrix<F> {
    zip_map(y, dy, |y, g| g * y * (F::one() - y))
}

pub fn mul<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Result<Matrix<F>> {
    if a.shape() != b.shape() {
        return Err(CsclError::shape(format!(
            "elementwise {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(zip_map(a, b, |x, y| x * y))
}

pub fn mul_backward<F: Real>(
    a: &Matrix<F>,
    b: &Matrix<F>,
    dy: &Matrix<F>,
) -> (Matrix<F>, Matrix<F>) {
    (zip_map(dy, b, |g, y| g * y), zip_map(dy, a, |g, x| g * x))
}

pub fn scale<F: Real>(x: &Matrix<F>, s: F) -> Matrix<F> {
    x.map(|v| v * s)
}

pub fn scale_backward<F: Real>(dy: &Matrix<F>, s: F) -> Matrix<F> {
    dy.map(|g| g * s)
}

fn zip_map<F: Real>(a: &Matrix<F>, b: &Matrix<F>, f: impl Fn(F, F) -> F) -> Matrix<F> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

// ---------------------------------------------------------------- softmax

fn check_tau<F: Real>(tau: F) -> Result<()> {
    if !(tau > F::zero()) {
        return Err(CsclError::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// `softmax(v / tau)` with max subtraction.
pub fn softmax<F: Real>(v: &[F], tau: F) -> Result<Vec<F>> {
    check_tau(tau)?;
    if v.is_empty() {
        return Err(CsclError::invalid("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CsclError::NonFinite("softmax input".into()));
    }
    Ok(softmax_unchecked(v, tau))
}

pub(crate) fn softmax_unchecked<F: Real>(v: &[F], tau: F) -> Vec<F> {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = v.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let z: F = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p = *p / z);
    out
}

/// Gradient with respect to the logits, given the forward output `y`.
pub fn softmax_backward<F: Real>(y: &[F], dy: &[F], tau: F) -> Vec<F> {
    let inner = dot(y, dy);
    y.iter()
        .zip(dy)
        .map(|(&p, &g)| p * (g - inner) / tau)
        .collect()
}

/// Row-wise (`Axis::Cols`) or column-wise (`Axis::Rows`) softmax.
pub fn softmax_axis<F: Real>(x: &Matrix<F>, axis: Axis, tau: F) -> Result<Matrix<F>> {
    check_tau(tau)?;
    if !x.is_finite() {
        return Err(CsclError::NonFinite("softmax input".into()));
    }
    match axis {
        Axis::Cols => {
            let mut y = x.clone();
            for i in 0..x.rows() {
                let p = softmax_unchecked(x.row(i), tau);
                y.row_mut(i).copy_from_slice(&p);
            }
            Ok(y)
        }
        Axis::Rows => Ok(softmax_axis(&x.transpose(), Axis::Cols, tau)?.transpose()),
    }
}

pub fn softmax_axis_backward<F: Real>(
    y: &Matrix<F>,
    dy: &Matrix<F>,
    axis: Axis,
    tau: F,
) -> Matrix<F> {
    match axis {
        Axis::Cols => {
            let mut dx = Matrix::zeros(y.rows(), y.cols());
            for i in 0..y.rows() {
                let g = softmax_backward(y.row(i), dy.row(i), tau);
                dx.row_mut(i).copy_from_slice(&g);
            }
            dx
        }
        Axis::Rows => {
            softmax_axis_backward(&y.transpose(), &dy.transpose(), Axis::Cols, tau).transpose()
        }
    }
}

/// `log Σ exp(v)`, max-shifted.
pub fn log_sum_exp<F: Real>(v: &[F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let s: F = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

// ---------------------------------------------------------------- norms

pub fn norm<F: Real>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

/// Returns the unit vector and the input norm (needed by the reverse rule).
pub fn l2_normalize<F: Real>(v: &[F]) -> Result<(Vec<F>, F)> {
    let n = norm(v);
    if !(n > F::zero()) || !n.is_finite() {
        return Err(CsclError::invalid(
            "l2-normalize of a zero or non-finite vector",
        ));
    }
    Ok((v.iter().map(|&x| x / n).collect(), n))
}

/// `(dy − y⟨y, dy⟩) / ‖x‖`
pub fn l2_normalize_backward<F: Real>(y: &[F], norm: F, dy: &[F]) -> Vec<F> {
    let inner = dot(y, dy);
    y.iter()
        .zip(dy)
        .map(|(&u, &g)| (g - u * inner) / norm)
        .collect()
}

/// Normalizes each row; returns the unit rows and their original norms.
pub fn l2_normalize_rows<F: Real>(x: &Matrix<F>) -> Result<(Matrix<F>, Vec<F>)> {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let (u, n) = l2_normalize(x.row(i))?;
        y.row_mut(i).copy_from_slice(&u);
        norms.push(n);
    }
    Ok((y, norms))
}

pub fn l2_normalize_rows_backward<F: Real>(
    y: &Matrix<F>,
    norms: &[F],
    dy: &Matrix<F>,
) -> Matrix<F> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let g = l2_normalize_backward(y.row(i), norms[i], dy.row(i));
        dx.row_mut(i).copy_from_slice(&g);
    }
    dx
}

/// `⟨a, b⟩ / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(CsclError::shape(format!(
            "cosine of {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > F::zero()) || !(nb > F::zero()) {
        return Err(CsclError::invalid(
            "cosine similarity of a zero-norm vector",
        ));
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-F::one()).min(F::one()))
}

/// Gradients of the unclamped cosine with respect to `a` and `b`, scaled by `dy`.
pub fn cosine_similarity_backward<F: Real>(a: &[F], b: &[F], dy: F) -> Result<(Vec<F>, Vec<F>)> {
    let (ua, na) = l2_normalize(a)?;
    let (ub, nb) = l2_normalize(b)?;
    let da_unit: Vec<F> = ub.iter().map(|&x| x * dy).collect();
    let db_unit: Vec<F> = ua.iter().map(|&x| x * dy).collect();
    Ok((
        l2_normalize_backward(&ua, na, &da_unit),
        l2_normalize_backward(&ub, nb, &db_unit),
    ))
}

// ---------------------------------------------------------------- reductions

/// Mean along `axis`: `Rows` gives one value per column, `Cols` one per row.
pub fn mean_axis<F: Real>(x: &Matrix<F>, axis: Axis) -> Vec<F> {
    match axis {
        Axis::Rows => {
            let n = F::lit(x.rows() as f64);
            column_sums(x).into_iter().map(|s| s / n).collect()
        }
        Axis::Cols => {
            let n = F::lit(x.cols() as f64);
            x.row_iter()
                .map(|r| r.iter().copied().fold(F::zero(), |a, b| a + b) / n)
                .collect()
        }
    }
}

pub fn mean_axis_backward<F: Real>(shape: (usize, usize), axis: Axis, dy: &[F]) -> Matrix<F> {
    let (r, c) = shape;
    let mut dx = Matrix::zeros(r, c);
    match axis {
        Axis::Rows => {
            let n = F::lit(r as f64);
            for i in 0..r {
                for j in 0..c {
                    dx[(i, j)] = dy[j] / n;
                }
            }
        }
        Axis::Cols => {
            let n = F::lit(c as f64);
            for i in 0..r {
                for j in 0..c {
                    dx[(i, j)] = dy[i] / n;
                }
            }
        }
    }
    dx
}

pub fn concat<F: Real>(parts: &[&Matrix<F>], axis: Axis) -> Result<Matrix<F>> {
    match axis {
        Axis::Rows => Matrix::vstack(parts),
        Axis::Cols => {
            let rows = parts.first().map_or(0, |m| m.rows());
            if parts.iter().any(|p| p.rows() != rows) {
                return Err(CsclError::shape("concat along columns with unequal rows"));
            }
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let mut off = 0;
                for p in parts {
                    out.row_mut(i)[off..off + p.cols()].copy_from_slice(p.row(i));
                    off += p.cols();
                }
            }
            Ok(out)
        }
    }
}

/// Splits `dy` back into pieces of the given extents along `axis`.
pub fn concat_backward<F: Real>(dy: &Matrix<F>, sizes: &[usize], axis: Axis) -> Vec<Matrix<F>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut off = 0;
    for &s in sizes {
        let piece = match axis {
            Axis::Rows => {
                let idx: Vec<usize> = (off..off + s).collect();
                dy.select_rows(&idx)
            }
            Axis::Cols => {
                let mut m = Matrix::zeros(dy.rows(), s);
                for i in 0..dy.rows() {
                    m.row_mut(i).copy_from_slice(&dy.row(i)[off..off + s]);
                }
                m
            }
        };
        out.push(piece);
        off += s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0f64, 0.0, 0.0], 1.0).unwrap();
        for v in p {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0f64, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(close(p[0], 1.0, 1e-12));
        assert!(p[1] < 1e-300);
        let p32 = softmax(&[1000.0f32, 0.0], 1.0).unwrap();
        assert_eq!(p32[0], 1.0);
    }

    #[test]
    fn softmax_reference_value() {
        // 1 / (1 + e^{-0.75}) to 30 digits
        let p = softmax(&[0.75f64, 0.0], 1.0).unwrap();
        assert!(close(p[0], 0.679_178_699_175_393, 1e-12), "{}", p[0]);
        assert!(close(p[1], 0.320_821_300_824_607, 1e-12));
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax(&[1.0f64], 0.0).is_err());
        assert!(softmax(&[1.0f64], -1.0).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[3.0f64, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0f64, 2.0], &[2.0, 1.0]).unwrap();
        assert!(close(c, 0.8, 1e-15));
        assert!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn concat_roundtrip_sizes() {
        let a = Matrix::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0f64], vec![6.0]]).unwrap();
        let c = concat(&[&a, &b], Axis::Cols).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        let parts = concat_backward(&c, &[2, 1], Axis::Cols);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn mean_over_each_axis() {
        let x = Matrix::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(mean_axis(&x, Axis::Rows), vec![2.0, 4.0]);
        assert_eq!(mean_axis(&x, Axis::Cols), vec![1.5, 4.5]);
    }
}
