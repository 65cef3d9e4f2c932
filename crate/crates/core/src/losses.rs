//! Cross-stain contrastive objectives.
//!
//! Both objectives score pairs by the dot product of l2-normalized vectors.
//! Batches are expressed over a shared *pool* of embeddings: anchors,
//! positives and negatives are row indices into it, and the returned gradient
//! is with respect to the raw (pre-normalization) pool rows.

use serde::{Deserialize, Serialize};

use crate::error::{CsclError, Result};
use crate::math::matrix::{axpy, dot};
use crate::math::ops::{l2_normalize, l2_normalize_backward, log_sum_exp, softmax_unchecked};
use crate::math::{Matrix, Real};

/// Scheduling function `g` for the adaptive weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `g(u) = u`
    #[default]
    Linear,
    /// `g(u) = (1 − cos πu) / 2`
    Cosine,
}

/// Similarity map `h` applied to the anchor–positive cosine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMap {
    /// `h(x) = (1 + x) / 2`
    #[default]
    Affine,
    /// `h(x) = max(x, 0)`
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Weighting {
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub similarity: SimilarityMap,
}

impl Weighting {
    /// `w_t = (1 − g(t/T)) + g(t/T) · h(cos)`
    pub fn weight<F: Real>(&self, t: usize, total: usize, cos_sim: F) -> Result<F> {
        if total == 0 {
            return Err(CsclError::invalid("total iterations T must be positive"));
        }
        if t > total {
            return Err(CsclError::invalid(format!(
                "iteration {t} beyond T = {total}"
            )));
        }
        let u = t as f64 / total as f64;
        let g = F::lit(match self.schedule {
            Schedule::Linear => u,
            Schedule::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * u).cos()),
        });
        let x = cos_sim.max(-F::one()).min(F::one());
        let h = match self.similarity {
            SimilarityMap::Affine => (F::one() + x) / F::lit(2.0),
            SimilarityMap::Relu => x.max(F::zero()),
        };
        Ok((F::one() - g) + g * h)
    }
}

/// Adaptive pair weight with the default linear schedule and affine map.
pub fn adaptive_weight<F: Real>(t: usize, total: usize, cos_sim: F) -> Result<F> {
    Weighting::default().weight(t, total, cos_sim)
}

fn check_tau<F: Real>(tau: F) -> Result<()> {
    if !(tau > F::zero()) {
        return Err(CsclError::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// InfoNCE from precomputed similarity scores:
/// `−log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ exp(sₙ/τ)))`.
pub fn info_nce_from_scores<F: Real>(pos: F, negs: &[F], tau: F) -> Result<F> {
    check_tau(tau)?;
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(pos / tau);
    logits.extend(negs.iter().map(|&s| s / tau));
    let v = log_sum_exp(&logits) - logits[0];
    Ok(v.max(F::zero()))
}

/// InfoNCE of one anchor against one positive and a set of negatives.
pub fn info_nce<F: Real>(anchor: &[F], positive: &[F], negatives: &[&[F]], tau: F) -> Result<F> {
    Ok(info_nce_with_grad(anchor, positive, negatives, tau)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NceGrad<F> {
    pub loss: F,
    pub anchor: Vec<F>,
    pub positive: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

/// InfoNCE value and gradients with respect to the raw input vectors.
pub fn info_nce_with_grad<F: Real>(
    anchor: &[F],
    positive: &[F],
    negatives: &[&[F]],
    tau: F,
) -> Result<NceGrad<F>> {
    check_tau(tau)?;
    if anchor.is_empty() {
        return Err(CsclError::invalid("empty anchor"));
    }
    let d = anchor.len();
    if positive.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(CsclError::shape(
            "anchor, positive and negatives differ in length",
        ));
    }
    let mut rows = Vec::with_capacity(negatives.len() + 2);
    rows.push(anchor.to_vec());
    rows.push(positive.to_vec());
    rows.extend(negatives.iter().map(|n| n.to_vec()));
    let pool = Matrix::from_rows(&rows)?;
    let negs: Vec<usize> = (2..pool.rows()).collect();
    let mut eng = Engine::new(&pool, std::iter::once(0).chain(1..pool.rows()))?;
    let loss = eng.pair(0, 1, &negs, tau, F::one());
    let g = eng.finish();
    Ok(NceGrad {
        loss,
        anchor: g.row(0).to_vec(),
        positive: g.row(1).to_vec(),
        negatives: (2..g.rows()).map(|r| g.row(r).to_vec()).collect(),
    })
}

/// Normalized view of a pool plus a gradient accumulator on the unit rows.
struct Engine<'a, F> {
    pool: &'a Matrix<F>,
    unit: Matrix<F>,
    norms: Vec<F>,
    used: Vec<bool>,
    gunit: Matrix<F>,
}

impl<'a, F: Real> Engine<'a, F> {
    fn new(pool: &'a Matrix<F>, rows: impl IntoIterator<Item = usize>) -> Result<Self> {
        let (n, d) = pool.shape();
        let mut unit = Matrix::zeros(n, d);
        let mut norms = vec![F::zero(); n];
        let mut used = vec![false; n];
        for r in rows {
            if r >= n {
                return Err(CsclError::invalid(format!(
                    "pool index {r} out of range {n}"
                )));
            }
            if used[r] {
                continue;
            }
            let (u, nr) = l2_normalize(pool.row(r)).map_err(|_| {
                CsclError::invalid(format!("pool row {r} has zero or non-finite norm"))
            })?;
            unit.row_mut(r).copy_from_slice(&u);
            norms[r] = nr;
            used[r] = true;
        }
        Ok(Self {
            pool,
            unit,
            norms,
            used,
            gunit: Matrix::zeros(n, d),
        })
    }

    fn score(&self, a: usize, b: usize) -> F {
        dot(self.unit.row(a), self.unit.row(b))
    }

    /// Adds `weight · ∂InfoNCE/∂unit` into the accumulator; returns the loss.
    fn pair(&mut self, a: usize, p: usize, negs: &[usize], tau: F, weight: F) -> F {
        let mut logits = Vec::with_capacity(negs.len() + 1);
        logits.push(self.score(a, p) / tau);
        logits.extend(negs.iter().map(|&n| self.score(a, n) / tau));
        let loss = (log_sum_exp(&logits) - logits[0]).max(F::zero());
        if weight == F::zero() {
            return loss;
        }
        let probs = softmax_unchecked(&logits, F::one());
        // ∂L/∂s⁺ = (π₀ − 1)/τ, ∂L/∂sₙ = πₙ/τ
        let mut ga = vec![F::zero(); self.unit.cols()];
        let gp = weight * (probs[0] - F::one()) / tau;
        axpy(gp, self.unit.row(p), &mut ga);
        let ua = self.unit.row(a).to_vec();
        axpy(gp, &ua, self.gunit.row_mut(p));
        for (&n, &pn) in negs.iter().zip(&probs[1..]) {
            let gn = weight * pn / tau;
            axpy(gn, self.unit.row(n), &mut ga);
            axpy(gn, &ua, self.gunit.row_mut(n));
        }
        axpy(F::one(), &ga, self.gunit.row_mut(a));
        loss
    }

    /// Gradient with respect to the raw pool rows.
    fn finish(self) -> Matrix<F> {
        let mut g = Matrix::zeros(self.pool.rows(), self.pool.cols());
        for r in 0..self.pool.rows() {
            if self.used[r] {
                let gr = l2_normalize_backward(self.unit.row(r), self.norms[r], self.gunit.row(r));
                g.row_mut(r).copy_from_slice(&gr);
            }
        }
        g
    }
}

/// Patch-level contrastive batch over a shared embedding pool.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<F> {
    /// Raw embeddings; every index below points into these rows.
    pub pool: Matrix<F>,
    /// `K` anchor rows.
    pub anchors: Vec<usize>,
    /// `C × K`: the aligned positive of anchor `k` in stain `c`, if present.
    pub positives: Vec<Vec<Option<usize>>>,
    /// Per-anchor negative rows.
    pub negatives: Vec<Vec<usize>>,
    pub tau: F,
    /// Current iteration `t` and total iterations `T`.
    pub step: usize,
    pub total_steps: usize,
}

impl<F: Real> ContrastiveBatch<F> {
    /// Builds a pool from dense parts: `anchors` is `K × D`, `positives[c]`
    /// is `K × D`, `negatives[k]` holds anchor `k`'s negatives as rows.
    pub fn from_parts(
        anchors: &Matrix<F>,
        positives: &[Matrix<F>],
        negatives: &[Matrix<F>],
        tau: F,
        step: usize,
        total_steps: usize,
    ) -> Result<Self> {
        let k = anchors.rows();
        if positives.iter().any(|p| p.rows() != k) || negatives.len() != k {
            return Err(CsclError::shape(
                "positives/negatives do not match the anchor count",
            ));
        }
        let mut parts: Vec<&Matrix<F>> = vec![anchors];
        parts.extend(positives.iter());
        parts.extend(negatives.iter());
        let pool = Matrix::vstack(&parts)?;
        let mut off = k;
        let mut pos = Vec::with_capacity(positives.len());
        for _ in positives {
            pos.push((off..off + k).map(Some).collect());
            off += k;
        }
        let mut negs = Vec::with_capacity(k);
        for n in negatives {
            negs.push((off..off + n.rows()).collect());
            off += n.rows();
        }
        Ok(Self {
            pool,
            anchors: (0..k).collect(),
            positives: pos,
            negatives: negs,
            tau,
            step,
            total_steps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        let k = self.anchors.len();
        if k == 0 {
            return Err(CsclError::invalid("batch has no anchors"));
        }
        if self.positives.is_empty() {
            return Err(CsclError::invalid("batch has no positive stains (C = 0)"));
        }
        if self.positives.iter().any(|p| p.len() != k) || self.negatives.len() != k {
            return Err(CsclError::shape(
                "positive/negative lists do not match the anchors",
            ));
        }
        if self.step > self.total_steps {
            return Err(CsclError::invalid("iteration beyond total iterations"));
        }
        let n = self.pool.rows();
        for (j, &a) in self.anchors.iter().enumerate() {
            for &neg in &self.negatives[j] {
                if neg >= n {
                    return Err(CsclError::invalid(format!(
                        "negative index {neg} out of range"
                    )));
                }
                if neg == a || self.positives.iter().any(|p| p[j] == Some(neg)) {
                    return Err(CsclError::invalid(format!(
                        "anchor {j}: negative {neg} is the anchor or one of its positives"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad<F> {
    pub value: F,
    /// Gradient with respect to every pool row (zero for unused rows).
    pub grad: Matrix<F>,
}

/// Adaptively weighted cross-stain patch alignment loss:
///
/// `Σ_c Σ_k (w_kc / W_c) · InfoNCE(z_k, z_kc⁺, z_k⁻)` with `W_c = Σ_k w_kc`.
///
/// The normalized weights of each stain sum to one, so each stain contributes
/// a weighted mean over anchors. Weights are held constant for the gradient.
pub fn cpa_loss<F: Real>(
    batch: &ContrastiveBatch<F>,
    weighting: &Weighting,
) -> Result<LossGrad<F>> {
    batch.validate()?;
    let k = batch.anchors.len();
    let rows = batch
        .anchors
        .iter()
        .copied()
        .chain(batch.positives.iter().flatten().flatten().copied())
        .chain(batch.negatives.iter().flatten().copied());
    let mut eng = Engine::new(&batch.pool, rows)?;

    let mut value = F::zero();
    for (c, pos) in batch.positives.iter().enumerate() {
        let mut weights = vec![F::zero(); k];
        for (j, p) in pos.iter().enumerate() {
            if let Some(p) = *p {
                let cos = eng.score(batch.anchors[j], p);
                weights[j] = weighting.weight(batch.step, batch.total_steps, cos)?;
            }
        }
        let total: F = weights.iter().copied().sum();
        if pos.iter().all(Option::is_none) {
            continue;
        }
        if !(total > F::zero()) {
            return Err(CsclError::precondition(format!(
                "stain {c}: adaptive weights sum to zero"
            )));
        }
        for (j, p) in pos.iter().enumerate() {
            if let Some(p) = *p {
                let w = weights[j] / total;
                value =
                    value + w * eng.pair(batch.anchors[j], p, &batch.negatives[j], batch.tau, w);
            }
        }
    }
    Ok(LossGrad {
        value,
        grad: eng.finish(),
    })
}

/// Slide-level cross-stain global alignment for one H&E embedding: the mean
/// over IHC stains of `InfoNCE(e, e_c⁺, e⁻)`.
pub fn cga_loss<F: Real>(he: &[F], ihc: &[&[F]], negatives: &[&[F]], tau: F) -> Result<F> {
    check_tau(tau)?;
    if ihc.is_empty() {
        return Err(CsclError::invalid(
            "CGA needs at least one IHC embedding (C = 0)",
        ));
    }
    let mut total = F::zero();
    for p in ihc {
        total = total + info_nce(he, p, negatives, tau)?;
    }
    Ok(total / F::lit(ihc.len() as f64))
}

/// Slide-level batch: each anchor is one case's H&E embedding.
#[derive(Debug, Clone)]
pub struct SlideBatch<F> {
    pub pool: Matrix<F>,
    pub anchors: Vec<usize>,
    /// Per-anchor IHC embeddings of the same case.
    pub positives: Vec<Vec<usize>>,
    /// Per-anchor embeddings of unrelated slides.
    pub negatives: Vec<Vec<usize>>,
    pub tau: F,
}

/// Mean over anchors of the per-anchor CGA loss, with the pool gradient.
pub fn cga_batch_loss<F: Real>(batch: &SlideBatch<F>) -> Result<LossGrad<F>> {
    check_tau(batch.tau)?;
    let k = batch.anchors.len();
    if k == 0 {
        return Err(CsclError::invalid("batch has no anchors"));
    }
    if batch.positives.len() != k || batch.negatives.len() != k {
        return Err(CsclError::shape(
            "positive/negative lists do not match the anchors",
        ));
    }
    let rows = batch
        .anchors
        .iter()
        .copied()
        .chain(batch.positives.iter().flatten().copied())
        .chain(batch.negatives.iter().flatten().copied());
    let mut eng = Engine::new(&batch.pool, rows)?;
    let kf = F::lit(k as f64);
    let mut value = F::zero();
    for (j, &a) in batch.anchors.iter().enumerate() {
        let pos = &batch.positives[j];
        if pos.is_empty() {
            return Err(CsclError::invalid(format!(
                "anchor {j} has no IHC positives (C = 0)"
            )));
        }
        let w = F::one() / (kf * F::lit(pos.len() as f64));
        for &p in pos {
            value = value + w * eng.pair(a, p, &batch.negatives[j], batch.tau, w);
        }
    }
    Ok(LossGrad {
        value,
        grad: eng.finish(),
    })
}
