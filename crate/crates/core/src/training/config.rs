use serde::{Deserialize, Serialize};

use crate::error::{CsclError, Result};
use crate::losses::Weighting;

/// Optimizer, schedule and model-width settings shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cases (slides) per mini-batch.
    pub batch_cases: usize,
    pub tau: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    /// Per-anchor cap on patch negatives in stage 1.
    pub n_neg: usize,
    pub seed: u64,
    pub heads: usize,
    /// Adapter hidden width.
    pub d_hidden: usize,
    /// MIL attention width.
    pub l_attn: usize,
    /// Global gradient-norm clip threshold.
    pub clip_norm: f64,
    pub weighting: Weighting,
    /// Pass IHC rows through the adapter as well.
    pub shared_adapter: bool,
    pub stage1_epochs: Option<usize>,
    pub stage2_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            warmup_epochs: 5,
            lr_max: 1e-4,
            lr_min: 1e-8,
            batch_cases: 24,
            tau: 0.07,
            weight_decay: 1e-2,
            betas: (0.9, 0.999),
            n_neg: 256,
            seed: 0,
            heads: 4,
            d_hidden: 512,
            l_attn: 256,
            clip_norm: 5.0,
            weighting: Weighting::default(),
            shared_adapter: false,
            stage1_epochs: None,
            stage2_epochs: None,
        }
    }
}

impl TrainConfig {
    /// Short schedule sized for small synthetic cohorts (tens of cases,
    /// 32-dimensional embeddings).
    pub fn synthetic(seed: u64) -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 2,
            lr_max: 1e-2,
            lr_min: 1e-8,
            batch_cases: 4,
            d_hidden: 32,
            l_attn: 32,
            seed,
            ..Self::default()
        }
    }

    pub fn stage1_epochs(&self) -> usize {
        self.stage1_epochs.unwrap_or(self.epochs)
    }

    pub fn stage2_epochs(&self) -> usize {
        self.stage2_epochs.unwrap_or(self.epochs)
    }

    /// Checks every field; `warmup_epochs < epochs` is enforced for each
    /// stage that trains at all.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CsclError::invalid(msg));
        for (stage, e) in [(1, self.stage1_epochs()), (2, self.stage2_epochs())] {
            if e > 0 && self.warmup_epochs >= e {
                return bad(format!(
                    "warmup_epochs ({}) must be below the stage-{stage} epochs ({e})",
                    self.warmup_epochs
                ));
            }
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        for (name, v) in [
            ("batch_cases", self.batch_cases),
            ("n_neg", self.n_neg),
            ("heads", self.heads),
            ("d_hidden", self.d_hidden),
            ("l_attn", self.l_attn),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names_round_trip() {
        let cfg = TrainConfig::synthetic(7);
        let s = serde_json::to_string(&cfg).unwrap();
        for key in [
            "\"epochs\"",
            "\"warmup_epochs\"",
            "\"lr_max\"",
            "\"batch_cases\"",
            "\"n_neg\"",
        ] {
            assert!(s.contains(key), "{key} missing from {s}");
        }
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 10, "seed": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.lr_max, 1e-4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 10}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.warmup_epochs = 120;
        assert!(c.validate().is_err());
        c.epochs = 0;
        assert!(c.validate().is_ok());
        let mut c = TrainConfig::default();
        c.lr_min = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.betas = (1.0, 0.9);
        assert!(c.validate().is_err());
    }
}
