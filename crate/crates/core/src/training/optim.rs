use std::f64::consts::PI;
use std::marker::PhantomData;

use crate::error::{CsclError, Result};
use crate::math::{Parameters, Real};

use super::TrainConfig;

pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup followed by cosine decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    /// Warmup covers `warmup_epochs / epochs` of `total_steps`.
    pub fn new(cfg: &TrainConfig, epochs: usize, total_steps: usize) -> Self {
        let warmup_steps = if epochs == 0 {
            0
        } else {
            total_steps * cfg.warmup_epochs / epochs
        };
        Self {
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            warmup_steps,
            total_steps,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            return self.lr_max * (step as f64 / w as f64);
        }
        if self.total_steps <= w {
            return self.lr_max;
        }
        let p = (step - w) as f64 / (self.total_steps - w) as f64;
        if p <= 0.0 {
            return self.lr_max;
        }
        if p >= 1.0 {
            return self.lr_min;
        }
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * p).cos())
    }
}

/// Learning rate at `step` of `total_steps`, with warmup over the first
/// `warmup_epochs / epochs` of the steps.
pub fn cosine_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    LrSchedule::new(cfg, cfg.epochs, total_steps).at(step)
}

/// Scales `grads` in place so their global l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real, P: Parameters<F>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_sq_norm().as_f64().sqrt();
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        for (_, m) in grads.named_mut() {
            m.scale_assign(s);
        }
    }
    norm
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW<F, P> {
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
    t: u64,
    m: P,
    v: P,
    _f: PhantomData<F>,
}

impl<F: Real, P: Parameters<F>> AdamW<F, P> {
    pub fn new(params: &P, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            betas,
            weight_decay,
            eps: ADAM_EPS,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            _f: PhantomData,
        }
    }

    pub fn from_config(params: &P, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.betas, cfg.weight_decay)
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(CsclError::invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let gs = grads.named();
        let ps = params.named();
        if gs.len() != ps.len() || gs.iter().zip(&ps).any(|(g, p)| g.1.shape() != p.1.shape()) {
            return Err(CsclError::shape(
                "gradient shapes do not match the parameters",
            ));
        }
        drop(ps);
        if let Some((name, _)) = gs.iter().find(|(_, g)| !g.is_finite()) {
            return Err(CsclError::NonFinite(format!("gradient of {name}")));
        }
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        let it = params
            .named_mut()
            .into_iter()
            .zip(self.m.named_mut())
            .zip(self.v.named_mut())
            .zip(gs);
        for ((((_, p), (_, m)), (_, v)), (_, g)) in it {
            let cells = p
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
                .zip(g.as_slice());
            for (((p, m), v), &g) in cells {
                let g = g.as_f64();
                let mi = b1 * m.as_f64() + (1.0 - b1) * g;
                let vi = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = F::lit(mi);
                *v = F::lit(vi);
                let update = (mi / c1) / ((vi / c2).sqrt() + self.eps);
                *p = F::lit(p.as_f64() * decay - lr * update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;

    #[derive(Debug, Clone)]
    struct One(Matrix<f64>);

    impl Parameters<f64> for One {
        fn named(&self) -> Vec<(String, &Matrix<f64>)> {
            vec![("theta".into(), &self.0)]
        }
        fn named_mut(&mut self) -> Vec<(String, &mut Matrix<f64>)> {
            vec![("theta".into(), &mut self.0)]
        }
    }

    fn scalar(x: f64) -> One {
        One(Matrix::from_vec(1, 1, vec![x]).unwrap())
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let cfg = TrainConfig::default();
        let total = 120 * 10;
        assert_eq!(cosine_lr(50, total, &cfg), 1e-4);
        assert_eq!(cosine_lr(total, total, &cfg), 1e-8);
        assert_eq!(cosine_lr(0, total, &cfg), 0.0);
        assert!((cosine_lr(25, total, &cfg) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn schedule_midpoint() {
        // one step per epoch: 5 warmup steps, 100 decay steps
        let cfg = TrainConfig {
            epochs: 105,
            ..TrainConfig::default()
        };
        let mid = cosine_lr(5 + 50, 105, &cfg);
        assert!((mid - 5.0005e-5).abs() < 1e-15, "{mid}");
    }

    #[test]
    fn schedule_without_warmup() {
        let cfg = TrainConfig {
            warmup_epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(cosine_lr(0, 10, &cfg), 1e-4);
        assert_eq!(cosine_lr(10, 10, &cfg), 1e-8);
    }

    #[test]
    fn adam_first_step() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(&p, (0.9, 0.999), 0.0);
        opt.step(&mut p, &scalar(1.0), 0.1).unwrap();
        assert!((p.0[(0, 0)] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_decay_only() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(&p, (0.9, 0.999), 0.01);
        opt.step(&mut p, &scalar(0.0), 0.1).unwrap();
        assert!((p.0[(0, 0)] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = scalar(0.37);
        let mut opt = AdamW::new(&p, (0.9, 0.999), 0.0);
        for _ in 0..3 {
            opt.step(&mut p, &scalar(0.0), 0.1).unwrap();
        }
        assert_eq!(p.0[(0, 0)], 0.37);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(&p, (0.9, 0.999), 0.0);
        let err = opt.step(&mut p, &scalar(f64::NAN), 0.1).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = One(Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.0[(0, 0)] - 0.6).abs() < 1e-15);
        let mut g = One(Matrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap());
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g.0.as_slice(), &[0.3, 0.4]);
    }
}
