use std::path::{Path, PathBuf};

use crate::data::{save_case_set, AlignedCase, CaseSet, PatchBag, StainId};
use crate::error::{CsclError, Result};
use crate::math::Matrix;
use crate::models::{Adapter, Mil};

/// One slide-level embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideEmbedding {
    pub case_id: String,
    pub stain: StainId,
    pub vector: Vec<f32>,
}

/// H&E-only inference: the adapter followed by MIL aggregation. No fusion and
/// no IHC input.
pub fn embed_he_only(
    bag: &PatchBag,
    adapter: &Adapter<f32>,
    mil: &Mil<f32>,
) -> Result<SlideEmbedding> {
    if bag.stain != StainId::HE {
        return Err(CsclError::invalid(format!(
            "slide {}: H&E-only inference got a {} bag",
            bag.slide_id, bag.stain
        )));
    }
    let vector = mil.apply(&adapter.apply(&bag.embeddings)?)?;
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(CsclError::NonFinite(format!(
            "embedding of slide {}",
            bag.slide_id
        )));
    }
    Ok(SlideEmbedding {
        case_id: String::new(),
        stain: StainId::HE,
        vector,
    })
}

/// Mean of the raw patch embeddings of a bag.
pub fn mean_pool(bag: &PatchBag) -> Vec<f32> {
    let n = bag.n_patches() as f64;
    let mut acc = vec![0.0f64; bag.dim()];
    for row in bag.embeddings.row_iter() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// H&E slide embeddings of every case, in case order.
pub fn embed_cases(
    cases: &CaseSet,
    adapter: &Adapter<f32>,
    mil: &Mil<f32>,
) -> Result<Vec<SlideEmbedding>> {
    cases
        .cases
        .iter()
        .map(|c| {
            let mut e = embed_he_only(c.he(), adapter, mil)?;
            e.case_id = c.case_id.clone();
            Ok(e)
        })
        .collect()
}

/// Mean-pooled raw H&E embeddings of every case.
pub fn mean_pool_cases(cases: &CaseSet) -> Vec<SlideEmbedding> {
    cases
        .cases
        .iter()
        .map(|c| SlideEmbedding {
            case_id: c.case_id.clone(),
            stain: StainId::HE,
            vector: mean_pool(c.he()),
        })
        .collect()
}

/// Embeddings as `f64` rows, for the probes.
pub fn as_rows(embeddings: &[SlideEmbedding]) -> Vec<Vec<f64>> {
    embeddings
        .iter()
        .map(|e| e.vector.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Writes embeddings as single-row H&E bags plus a manifest carrying the
/// source cohort's labels and survival. Returns the manifest path.
pub fn write_embeddings(
    embeddings: &[SlideEmbedding],
    source: &CaseSet,
    dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    if embeddings.len() != source.len() {
        return Err(CsclError::shape("one embedding per source case expected"));
    }
    let cases = embeddings
        .iter()
        .map(|e| {
            let m = Matrix::from_vec(1, e.vector.len(), e.vector.clone())?;
            let bag = PatchBag::new(format!("{}-embedding", e.case_id), e.stain, vec![(0, 0)], m)?;
            AlignedCase::new(e.case_id.clone(), vec![bag], false)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = CaseSet::new(cases, source.labels.clone(), source.survival.clone())?;
    save_case_set(&set, dir, "embeddings.json")
}

/// Reads embeddings written by [`write_embeddings`] (any single-row H&E
/// manifest) back as `f64` rows with the cohort metadata.
pub fn read_embeddings(manifest: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, CaseSet)> {
    let set = crate::data::load_manifest_with(manifest, Some(false))?;
    let rows = set
        .cases
        .iter()
        .map(|c| {
            let bag = c.he();
            if bag.n_patches() != 1 {
                return Err(CsclError::Case {
                    case: c.case_id.clone(),
                    reason: format!("embedding bag has {} rows, expected 1", bag.n_patches()),
                });
            }
            Ok(bag
                .embeddings
                .row(0)
                .iter()
                .map(|&v| f64::from(v))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, set))
}
