use crate::data::{AlignedCase, CaseSet};
use crate::error::{CsclError, Result};
use crate::losses::{cga_batch_loss, SlideBatch};
use crate::math::{Matrix, NamedTensor, Parameters};
use crate::models::{Adapter, Caf, Mil};

use super::{epoch_means, n_batches, stream, LogEntry, TrainConfig, TrainState};

const STREAM_INIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

/// Attention fusion and the shared MIL aggregator, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<F> {
    pub caf: Caf<F>,
    pub mil: Mil<F>,
}

impl FusionModel<f32> {
    pub fn from_tensors(tensors: &[NamedTensor<f32>]) -> Result<Self> {
        Ok(Self {
            caf: Caf::from_tensors(tensors)?,
            mil: Mil::from_tensors(tensors)?,
        })
    }
}

impl<F: crate::math::Real> Parameters<F> for FusionModel<F> {
    fn named(&self) -> Vec<(String, &Matrix<F>)> {
        let mut v = self.caf.named();
        v.extend(self.mil.named());
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)> {
        let mut v = self.caf.named_mut();
        v.extend(self.mil.named_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub model: FusionModel<f32>,
    pub log: Vec<LogEntry>,
    pub total_steps: usize,
    pub clipped_steps: usize,
}

/// Fits fusion and MIL with the slide-level alignment loss; `adapter` is
/// only read.
///
/// Per case, the adapted H&E rows are fused with the IHC rows and aggregated
/// into the H&E slide embedding; each IHC bag is aggregated on its own rows.
/// Every slide embedding of the other cases in the mini-batch is a negative.
pub fn train_stage2(
    cases: &CaseSet,
    adapter: &Adapter<f32>,
    cfg: &TrainConfig,
) -> Result<Stage2Output> {
    cfg.validate()?;
    cases.require_training_ready()?;
    let dim = cases.dim().expect("non-empty");
    if adapter.dim() != dim {
        return Err(CsclError::shape(format!(
            "adapter has D = {}, cases have D = {dim}",
            adapter.dim()
        )));
    }
    let mut model = init_fusion(dim, cfg)?;

    let epochs = cfg.stage2_epochs();
    let batches = n_batches(cases.len(), cfg.batch_cases);
    let mut state = TrainState::new(
        &model,
        cfg,
        epochs,
        batches,
        stream(cfg.seed, STREAM_SHUFFLE),
    );
    for epoch in 1..=epochs {
        for batch in state.epoch_batches(cases.len(), cfg.batch_cases) {
            let (loss, mut grads) = batch_loss(cases, &batch, adapter, &model, cfg)?;
            if !loss.is_finite() {
                return Err(CsclError::NonFinite(format!(
                    "stage-2 loss at step {}",
                    state.step + 1
                )));
            }
            state.apply(2, epoch, &mut model, &mut grads, loss, cfg.clip_norm)?;
        }
        if let Some(m) = epoch_means(&state.log).last() {
            log::info!("stage 2 epoch {epoch}/{epochs}: mean loss {m:.4}");
        }
    }
    if state.clipped > 0 {
        log::info!(
            "stage 2: gradient clipped on {} of {} steps",
            state.clipped,
            state.step
        );
    }
    Ok(Stage2Output {
        model,
        log: state.log,
        total_steps: state.total_steps,
        clipped_steps: state.clipped,
    })
}

/// Slide-level alignment loss of `model` over the whole cohort as a single
/// batch: every other case's slides are negatives. No parameters change.
pub fn cga_cohort_loss(
    cases: &CaseSet,
    adapter: &Adapter<f32>,
    model: &FusionModel<f32>,
    cfg: &TrainConfig,
) -> Result<f64> {
    cases.require_training_ready()?;
    let all: Vec<usize> = (0..cases.len()).collect();
    Ok(batch_loss(cases, &all, adapter, model, cfg)?.0)
}

/// Initial fusion model for a given configuration and dimension.
pub fn init_fusion(dim: usize, cfg: &TrainConfig) -> Result<FusionModel<f32>> {
    let mut init = stream(cfg.seed, STREAM_INIT);
    let caf = Caf::init(dim, cfg.heads, &mut init)?;
    let mil = Mil::init(dim, cfg.l_attn, &mut init);
    Ok(FusionModel { caf, mil })
}

/// `[adapted H&E, IHC...]` stain inputs of one case, in IHC order.
pub(crate) fn stain_inputs(
    case: &AlignedCase,
    adapter: &Adapter<f32>,
    shared: bool,
) -> Result<Vec<Matrix<f32>>> {
    let mut out = vec![adapter.apply(&case.he().embeddings)?];
    for bag in case.ihc() {
        out.push(if shared {
            adapter.apply(&bag.embeddings)?
        } else {
            bag.embeddings.clone()
        });
    }
    Ok(out)
}

fn batch_loss(
    cases: &CaseSet,
    batch: &[usize],
    adapter: &Adapter<f32>,
    model: &FusionModel<f32>,
    cfg: &TrainConfig,
) -> Result<(f64, FusionModel<f32>)> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    let mut anchors = Vec::with_capacity(batch.len());
    let mut positives = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for (b, &i) in batch.iter().enumerate() {
        let inputs = stain_inputs(&cases.cases[i], adapter, cfg.shared_adapter)?;
        let refs: Vec<&Matrix<f32>> = inputs.iter().collect();
        let (fused, caf_cache) = model.caf.forward(&refs)?;
        let mut mil_caches = Vec::with_capacity(inputs.len());
        let (e, c) = model.mil.forward(&fused)?;
        anchors.push(rows.len());
        rows.push(e);
        owner.push(b);
        mil_caches.push(c);
        let mut pos = Vec::with_capacity(inputs.len() - 1);
        for x in &inputs[1..] {
            let (e, c) = model.mil.forward(x)?;
            pos.push(rows.len());
            rows.push(e);
            owner.push(b);
            mil_caches.push(c);
        }
        positives.push(pos);
        caches.push((caf_cache, mil_caches));
    }
    let negatives = (0..batch.len())
        .map(|b| (0..rows.len()).filter(|&r| owner[r] != b).collect())
        .collect();
    let dim = model.mil.dim();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let sb = SlideBatch {
        pool: Matrix::from_vec(flat.len() / dim, dim, flat)?,
        anchors,
        positives,
        negatives,
        tau: cfg.tau as f32,
    };
    let out = cga_batch_loss(&sb)?;

    let mut grads = model.zeros_like();
    let mut r = 0;
    for (caf_cache, mil_caches) in &caches {
        for (k, mc) in mil_caches.iter().enumerate() {
            let dx = model.mil.backward(mc, out.grad.row(r), &mut grads.mil);
            if k == 0 {
                model.caf.backward(caf_cache, &dx, &mut grads.caf);
            }
            r += 1;
        }
    }
    Ok((out.value as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::models::checkpoint::tensors_checksum;
    use rand::SeedableRng;

    fn tiny() -> CaseSet {
        let mut s = SyntheticConfig::standard(0);
        s.n_cases = 4;
        s.n_patches = 6;
        generate_synthetic(&s).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            batch_cases: 2,
            d_hidden: 8,
            l_attn: 8,
            lr_max: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn adapter() -> Adapter<f32> {
        Adapter::init(32, 8, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            ..quick()
        };
        let a = train_stage2(&tiny(), &adapter(), &cfg).unwrap();
        assert_eq!(a.model, init_fusion(32, &cfg).unwrap());
    }

    #[test]
    fn deterministic_and_adapter_untouched() {
        let ad = adapter();
        let before = tensors_checksum(&ad.to_tensors(None));
        let a = train_stage2(&tiny(), &ad, &quick()).unwrap();
        let b = train_stage2(&tiny(), &ad, &quick()).unwrap();
        assert_eq!(tensors_checksum(&ad.to_tensors(None)), before);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 4);
    }

    #[test]
    fn adapter_dimension_must_match() {
        let ad = Adapter::<f32>::zeros(16, 4);
        assert!(train_stage2(&tiny(), &ad, &quick()).is_err());
    }
}
