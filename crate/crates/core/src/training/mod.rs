//! Two-stage pretraining: stage 1 fits the H&E adapter with the patch
//! alignment loss; stage 2 freezes it and fits attention fusion plus MIL
//! with the slide-level alignment loss.

mod config;
mod optim;
mod stage1;
mod stage2;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Parameters;

pub use config::TrainConfig;
pub use optim::{clip_grad_norm, cosine_lr, AdamW, LrSchedule, ADAM_EPS};
pub use stage1::{sample_negatives, train_stage1, Stage1Output};
pub(crate) use stage2::stain_inputs;
pub use stage2::{cga_cohort_loss, init_fusion, train_stage2, FusionModel, Stage2Output};

/// One line of the JSON-lines loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: u8,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Mean loss of each epoch, in epoch order.
pub fn epoch_means(log: &[LogEntry]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for e in log {
        if out.len() < e.epoch {
            out.resize(e.epoch, (0.0, 0));
        }
        let slot = &mut out[e.epoch - 1];
        slot.0 += e.loss;
        slot.1 += 1;
    }
    out.into_iter()
        .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect()
}

/// Serializes a log as JSON lines.
pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in log {
        s.push_str(&serde_json::to_string(e).expect("log entry serializes"));
        s.push('\n');
    }
    s
}

/// Optimizer progress of one stage.
#[derive(Debug, Clone)]
pub struct TrainState<P> {
    /// Optimizer steps taken.
    pub step: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub log: Vec<LogEntry>,
    /// Steps whose gradient was clipped.
    pub clipped: usize,
    pub optimizer: AdamW<f32, P>,
    pub schedule: LrSchedule,
    shuffler: ChaCha8Rng,
}

impl<P: Parameters<f32>> TrainState<P> {
    fn new(
        params: &P,
        cfg: &TrainConfig,
        epochs: usize,
        batches: usize,
        shuffler: ChaCha8Rng,
    ) -> Self {
        let total_steps = epochs * batches;
        Self {
            step: 0,
            total_steps,
            lr: 0.0,
            log: Vec::with_capacity(total_steps),
            clipped: 0,
            optimizer: AdamW::from_config(params, cfg),
            schedule: LrSchedule::new(cfg, epochs, total_steps),
            shuffler,
        }
    }

    /// Case indices of each mini-batch of the next epoch.
    fn epoch_batches(&mut self, n_cases: usize, batch_cases: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n_cases).collect();
        order.shuffle(&mut self.shuffler);
        order.chunks(batch_cases).map(<[usize]>::to_vec).collect()
    }

    /// Clips, steps the optimizer and records the loss.
    fn apply(
        &mut self,
        stage: u8,
        epoch: usize,
        params: &mut P,
        grads: &mut P,
        loss: f64,
        clip_norm: f64,
    ) -> crate::Result<()> {
        self.step += 1;
        self.lr = self.schedule.at(self.step);
        let norm = clip_grad_norm(grads, clip_norm);
        if norm > clip_norm {
            self.clipped += 1;
            log::debug!(
                "stage {stage} step {}: gradient norm {norm:.3} clipped",
                self.step
            );
        }
        self.optimizer.step(params, grads, self.lr)?;
        self.log.push(LogEntry {
            stage,
            epoch,
            step: self.step,
            lr: self.lr,
            loss,
        });
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn n_batches(n_cases: usize, batch_cases: usize) -> usize {
    n_cases.div_ceil(batch_cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_means_groups_by_epoch() {
        let e = |epoch, loss| LogEntry {
            stage: 1,
            epoch,
            step: 0,
            lr: 0.0,
            loss,
        };
        let m = epoch_means(&[e(1, 1.0), e(1, 3.0), e(2, 5.0)]);
        assert_eq!(m, vec![2.0, 5.0]);
    }

    #[test]
    fn jsonl_has_the_log_fields() {
        let line = log_to_jsonl(&[LogEntry {
            stage: 2,
            epoch: 1,
            step: 1,
            lr: 0.5,
            loss: 1.25,
        }]);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for k in ["stage", "epoch", "step", "lr", "loss"] {
            assert!(v.get(k).is_some());
        }
    }
}
