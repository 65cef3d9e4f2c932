use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CaseSet, StainId};
use crate::error::{CsclError, Result};
use crate::math::Matrix;
use crate::models::Adapter;
use crate::training::FusionModel;

/// Cross-stain alignment diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Fraction of H&E patches whose nearest same-case IHC patch (cosine) is
    /// the aligned one, pooled over every IHC stain.
    pub patch_top1: f64,
    pub patch_top1_by_stain: BTreeMap<String, f64>,
    /// Mean cosine of aligned patch pairs minus that of non-aligned pairs.
    pub patch_cosine_gap: f64,
    /// Same-case fraction of each H&E slide embedding's nearest IHC slide
    /// embedding across the cohort, with H&E-only inference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slide_top1_he_only: Option<f64>,
    /// As above, with the fused H&E embedding used in training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slide_top1_fused: Option<f64>,
    /// Same-case minus other-case mean slide cosine (H&E-only inference).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slide_cosine_gap: Option<f64>,
}

fn unit_rows(m: &Matrix<f32>) -> Vec<Vec<f64>> {
    m.row_iter().map(unit).collect()
}

fn unit(r: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = r.iter().map(|&x| f64::from(x)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest score; the first one wins ties.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Patch- and slide-level retrieval between H&E and IHC. Slide-level
/// entries need `fusion`; IHC rows pass through the adapter only when
/// `shared_adapter` is set.
pub fn retrieval_diagnostics(
    cases: &CaseSet,
    adapter: &Adapter<f32>,
    fusion: Option<&FusionModel<f32>>,
    shared_adapter: bool,
) -> Result<RetrievalReport> {
    if !cases.cases.iter().any(|c| c.has_ihc()) {
        return Err(CsclError::precondition(
            "retrieval needs at least one IHC bag",
        ));
    }
    let ihc_rows = |m: &Matrix<f32>| -> Result<Matrix<f32>> {
        if shared_adapter {
            adapter.apply(m)
        } else {
            Ok(m.clone())
        }
    };

    let mut hits: BTreeMap<StainId, (usize, usize)> = BTreeMap::new();
    let (mut aligned, mut n_aligned, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
    for case in cases.cases.iter().filter(|c| c.has_ihc()) {
        let he = unit_rows(&adapter.apply(&case.he().embeddings)?);
        for bag in case.ihc() {
            let ihc = unit_rows(&ihc_rows(&bag.embeddings)?);
            let slot = hits.entry(bag.stain).or_default();
            for (i, h) in he.iter().enumerate() {
                let scores: Vec<f64> = ihc.iter().map(|r| dot(h, r)).collect();
                slot.0 += usize::from(argmax(scores.iter().copied()) == i);
                slot.1 += 1;
                for (j, s) in scores.into_iter().enumerate() {
                    if j == i {
                        aligned += s;
                        n_aligned += 1;
                    } else {
                        other += s;
                        n_other += 1;
                    }
                }
            }
        }
    }
    let (hit, total) = hits.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mut report = RetrievalReport {
        patch_top1: hit as f64 / total as f64,
        patch_top1_by_stain: hits
            .iter()
            .map(|(s, (h, t))| (s.to_string(), *h as f64 / *t as f64))
            .collect(),
        patch_cosine_gap: aligned / n_aligned.max(1) as f64 - other / n_other.max(1) as f64,
        slide_top1_he_only: None,
        slide_top1_fused: None,
        slide_cosine_gap: None,
    };

    if let Some(model) = fusion {
        let mut he_only = Vec::new();
        let mut fused = Vec::new();
        let mut ihc: Vec<(usize, Vec<f64>)> = Vec::new();
        let with_ihc: Vec<_> = cases.cases.iter().filter(|c| c.has_ihc()).collect();
        for (k, case) in with_ihc.iter().enumerate() {
            let z = adapter.apply(&case.he().embeddings)?;
            he_only.push(unit(&model.mil.apply(&z)?));
            let inputs = crate::training::stain_inputs(case, adapter, shared_adapter)?;
            let refs: Vec<&Matrix<f32>> = inputs.iter().collect();
            fused.push(unit(&model.mil.apply(&model.caf.forward(&refs)?.0)?));
            for x in &inputs[1..] {
                ihc.push((k, unit(&model.mil.apply(x)?)));
            }
        }
        let top1 = |queries: &[Vec<f64>]| {
            let hits = queries
                .iter()
                .enumerate()
                .filter(|(k, q)| ihc[argmax(ihc.iter().map(|(_, e)| dot(q, e)))].0 == *k)
                .count();
            hits as f64 / queries.len() as f64
        };
        report.slide_top1_he_only = Some(top1(&he_only));
        report.slide_top1_fused = Some(top1(&fused));
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
        for (k, q) in he_only.iter().enumerate() {
            for (owner, e) in &ihc {
                if *owner == k {
                    same += dot(q, e);
                    ns += 1;
                } else {
                    diff += dot(q, e);
                    nd += 1;
                }
            }
        }
        report.slide_cosine_gap = Some(same / ns.max(1) as f64 - diff / nd.max(1) as f64);
    }
    Ok(report)
}
