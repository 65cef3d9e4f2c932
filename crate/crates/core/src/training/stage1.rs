use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CaseSet, StainId};
use crate::error::{CsclError, Result};
use crate::losses::{cpa_loss, ContrastiveBatch};
use crate::math::{Matrix, Parameters};
use crate::models::Adapter;

use super::{epoch_means, n_batches, stream, LogEntry, TrainConfig, TrainState};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub adapter: Adapter<f32>,
    pub log: Vec<LogEntry>,
    pub total_steps: usize,
    pub clipped_steps: usize,
}

/// Fits the adapter with the adaptively weighted patch alignment loss.
///
/// Each mini-batch pools the adapted H&E rows of its cases with their IHC
/// rows. The anchors are the H&E rows, the positives are the aligned IHC rows
/// and the negatives are up to `n_neg` pool rows drawn from other positions.
pub fn train_stage1(cases: &CaseSet, cfg: &TrainConfig) -> Result<Stage1Output> {
    cfg.validate()?;
    cases.require_training_ready()?;
    let dim = cases.dim().expect("non-empty");
    let mut adapter = Adapter::<f32>::init(dim, cfg.d_hidden, &mut stream(cfg.seed, STREAM_INIT));
    let epochs = cfg.stage1_epochs();
    let batches = n_batches(cases.len(), cfg.batch_cases);
    let mut state = TrainState::new(
        &adapter,
        cfg,
        epochs,
        batches,
        stream(cfg.seed, STREAM_SHUFFLE),
    );
    let mut neg_rng = stream(cfg.seed, STREAM_NEGATIVES);

    for epoch in 1..=epochs {
        for batch in state.epoch_batches(cases.len(), cfg.batch_cases) {
            let t = state.step;
            let (loss, mut grads) = batch_loss(
                cases,
                &batch,
                &adapter,
                cfg,
                t,
                state.total_steps,
                &mut neg_rng,
            )?;
            if !loss.is_finite() {
                return Err(CsclError::NonFinite(format!(
                    "stage-1 loss at step {}",
                    t + 1
                )));
            }
            state.apply(1, epoch, &mut adapter, &mut grads, loss, cfg.clip_norm)?;
        }
        if let Some(m) = epoch_means(&state.log).last() {
            log::info!("stage 1 epoch {epoch}/{epochs}: mean loss {m:.4}");
        }
    }
    if state.clipped > 0 {
        log::info!(
            "stage 1: gradient clipped on {} of {} steps",
            state.clipped,
            state.step
        );
    }
    Ok(Stage1Output {
        adapter,
        log: state.log,
        total_steps: state.total_steps,
        clipped_steps: state.clipped,
    })
}

/// Loss and adapter gradient of one mini-batch at iteration `t` of `total`.
fn batch_loss(
    cases: &CaseSet,
    batch: &[usize],
    adapter: &Adapter<f32>,
    cfg: &TrainConfig,
    t: usize,
    total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Adapter<f32>)> {
    let he: Vec<&Matrix<f32>> = batch
        .iter()
        .map(|&i| &cases.cases[i].he().embeddings)
        .collect();
    let anchors_n: usize = he.iter().map(|m| m.rows()).sum();

    let mut ihc: Vec<&Matrix<f32>> = Vec::new();
    let mut positives = vec![vec![None; anchors_n]; StainId::IHC.len()];
    let mut next = anchors_n;
    for (c, &stain) in StainId::IHC.iter().enumerate() {
        let mut offset = 0;
        for &i in batch {
            let case = &cases.cases[i];
            let n = case.n_patches();
            if let Some(bag) = case.bag(stain) {
                ihc.push(&bag.embeddings);
                for (k, slot) in positives[c][offset..offset + n].iter_mut().enumerate() {
                    *slot = Some(next + k);
                }
                next += n;
            }
            offset += n;
        }
    }

    let mut grads = adapter.zeros_like();
    let (pool, cache, adapted_rows) = if cfg.shared_adapter {
        let all: Vec<&Matrix<f32>> = he.iter().chain(&ihc).copied().collect();
        let (z, cache) = adapter.forward(&Matrix::vstack(&all)?)?;
        (z, cache, next)
    } else {
        let (z, cache) = adapter.forward(&Matrix::vstack(&he)?)?;
        let mut parts = vec![&z];
        parts.extend(ihc.iter().copied());
        (Matrix::vstack(&parts)?, cache, anchors_n)
    };

    let negatives = (0..anchors_n)
        .map(|j| {
            let mut excluded: Vec<usize> = std::iter::once(j)
                .chain(positives.iter().filter_map(|p| p[j]))
                .collect();
            excluded.sort_unstable();
            sample_negatives(pool.rows(), &excluded, cfg.n_neg, rng)
        })
        .collect();
    let cb = ContrastiveBatch {
        pool,
        anchors: (0..anchors_n).collect(),
        positives,
        negatives,
        tau: cfg.tau as f32,
        step: t,
        total_steps: total,
    };
    let out = cpa_loss(&cb, &cfg.weighting)?;
    let dz = out.grad.select_rows(&(0..adapted_rows).collect::<Vec<_>>());
    adapter.backward(&cache, &dz, &mut grads);
    Ok((out.value as f64, grads))
}

/// Draws up to `n_neg` distinct rows of `0..n_pool` that are not in the
/// sorted `excluded` list. When fewer remain, returns all of them in order.
pub fn sample_negatives(
    n_pool: usize,
    excluded: &[usize],
    n_neg: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let space = n_pool - excluded.len();
    let lift = |i: usize| {
        let mut r = i;
        for &e in excluded {
            if e <= r {
                r += 1;
            } else {
                break;
            }
        }
        r
    };
    if space <= n_neg {
        return (0..space).map(lift).collect();
    }
    rand::seq::index::sample(rng, space, n_neg)
        .into_iter()
        .map(lift)
        .collect()
}
