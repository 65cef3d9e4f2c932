//! Synthetic aligned multi-stain cohorts.
//!
//! Each patch position carries a latent tissue state `u_i = μ_case + ξ_i`.
//! Stain `m` observes it through its own random orthonormal map:
//!
//! ```text
//! row_m(i) = A_m u_i + b_m + [m = HE] B_HE η_case + σ ε
//! ```
//!
//! `A_HE` spans a random `dim_latent` subspace, so raw H&E-to-IHC cosine
//! similarity carries no alignment signal. The IHC maps are perturbations of
//! one shared IHC basis (see `ihc_spread`). `B_HE` spans the orthogonal
//! complement of `A_HE`; `η_case` is a per-slide H&E appearance shift that
//! carries no tissue information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CsclError, Result};
use crate::math::Matrix;

use super::{AlignedCase, CaseSet, Coord, PatchBag, StainId, Survival};

const STREAM_MAPS: u64 = 0;
const STREAM_CASES: u64 = 1;
const STREAM_DOWNSTREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_cases: usize,
    pub n_patches: usize,
    pub dim_latent: usize,
    pub dim_embed: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub censor_rate: f64,
    /// Std of the case-level latent mean `μ_case`.
    #[serde(default = "default_case_scale")]
    pub case_scale: f64,
    /// Std of the per-stain offset `b_m` entries.
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
    /// Std of the per-slide H&E appearance shift `η_case`.
    #[serde(default = "default_he_shift")]
    pub he_shift: f64,
    /// Spread of the IHC maps around a shared IHC basis. Large values make
    /// the IHC stains mutually unrelated.
    #[serde(default = "default_ihc_spread")]
    pub ihc_spread: f64,
    /// Debug switch: every `A_m` is the identity and `b_m`, `η` vanish.
    /// Requires `dim_latent == dim_embed`.
    #[serde(default)]
    pub identity_maps: bool,
    /// Size of the HE-only downstream cohort written alongside by `gen-synth`.
    #[serde(default)]
    pub downstream_cases: usize,
}

fn default_case_scale() -> f64 {
    1.0
}
fn default_bias_scale() -> f64 {
    0.2
}
fn default_he_shift() -> f64 {
    1.0
}
fn default_ihc_spread() -> f64 {
    0.0
}

impl SyntheticConfig {
    /// The 32-case, 64-patch, 8→32 dimensional configuration.
    pub fn standard(seed: u64) -> Self {
        Self {
            n_cases: 32,
            n_patches: 64,
            dim_latent: 8,
            dim_embed: 32,
            noise_sigma: 0.1,
            seed,
            censor_rate: 0.0,
            case_scale: default_case_scale(),
            bias_scale: default_bias_scale(),
            he_shift: default_he_shift(),
            ihc_spread: default_ihc_spread(),
            identity_maps: false,
            downstream_cases: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_cases", self.n_cases),
            ("n_patches", self.n_patches),
            ("dim_latent", self.dim_latent),
            ("dim_embed", self.dim_embed),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CsclError::invalid(format!("{name} must be positive")));
            }
        }
        if self.dim_latent > self.dim_embed {
            return Err(CsclError::invalid("dim_latent must not exceed dim_embed"));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("case_scale", self.case_scale),
            ("bias_scale", self.bias_scale),
            ("he_shift", self.he_shift),
            ("ihc_spread", self.ihc_spread),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CsclError::invalid(format!(
                    "{name} must be a nonnegative real"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(CsclError::invalid("censor_rate must lie in [0, 1)"));
        }
        if self.identity_maps && self.dim_latent != self.dim_embed {
            return Err(CsclError::invalid(
                "identity_maps requires dim_latent == dim_embed",
            ));
        }
        Ok(())
    }
}

/// Per-stain observation model shared by every cohort drawn from one seed.
#[derive(Debug, Clone)]
pub struct StainMaps {
    /// `dim_embed × dim_embed` orthonormal basis per stain; the first
    /// `dim_latent` columns are `A_m`, the rest span its complement.
    pub bases: Vec<Matrix<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub survival_direction: Vec<f64>,
}

impl StainMaps {
    pub fn draw(cfg: &SyntheticConfig) -> Self {
        let mut rng = stream(cfg.seed, STREAM_MAPS);
        let d = cfg.dim_embed;
        let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d * d).map(|_| rng.sample(StandardNormal)).collect()
        };
        let shared = gaussian(&mut rng);
        let mut bases = Vec::with_capacity(StainId::ALL.len());
        let mut offsets = Vec::with_capacity(StainId::ALL.len());
        for stain in StainId::ALL {
            let own = gaussian(&mut rng);
            let g: Vec<f64> = if stain.is_anchor() {
                own
            } else {
                shared
                    .iter()
                    .zip(&own)
                    .map(|(s, o)| s + cfg.ihc_spread * o)
                    .collect()
            };
            let q = orthonormal_columns(d, &g);
            let b: Vec<f64> = (0..d)
                .map(|_| cfg.bias_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if cfg.identity_maps {
                bases.push(Matrix::identity(d));
                offsets.push(vec![0.0; d]);
            } else {
                bases.push(q);
                offsets.push(b);
            }
        }
        let w: Vec<f64> = (0..cfg.dim_latent)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let n = w
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        Self {
            bases,
            offsets,
            survival_direction: w.into_iter().map(|x| x / n).collect(),
        }
    }
}

/// Modified Gram–Schmidt on the columns of a row-major `d × d` Gaussian draw
/// (the Q factor of its QR decomposition).
fn orthonormal_columns(d: usize, g: &[f64]) -> Matrix<f64> {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| g[i * d + j]).collect())
        .collect();
    for j in 0..d {
        for k in 0..j {
            let proj: f64 = (0..d).map(|i| cols[j][i] * cols[k][i]).sum();
            for i in 0..d {
                cols[j][i] -= proj * cols[k][i];
            }
        }
        let n = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|x| *x /= n);
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    q
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn grid(n: usize) -> Vec<Coord> {
    let w = (n as f64).sqrt().ceil().max(1.0) as usize;
    (0..n).map(|i| ((i / w) as u32, (i % w) as u32)).collect()
}

/// Training cohort: every case carries all five stains.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<CaseSet> {
    cfg.validate()?;
    let maps = StainMaps::draw(cfg);
    draw_cohort(cfg, &maps, cfg.n_cases, STREAM_CASES, "case", &StainId::ALL)
}

/// Downstream cohort of `n_cases` HE-only cases that share the training
/// cohort's stain maps but are otherwise independent of it.
pub fn generate_downstream(cfg: &SyntheticConfig, n_cases: usize) -> Result<CaseSet> {
    cfg.validate()?;
    if n_cases == 0 {
        return Err(CsclError::invalid(
            "downstream cohort needs at least one case",
        ));
    }
    let maps = StainMaps::draw(cfg);
    draw_cohort(
        cfg,
        &maps,
        n_cases,
        STREAM_DOWNSTREAM,
        "eval",
        &[StainId::HE],
    )
}

fn draw_cohort(
    cfg: &SyntheticConfig,
    maps: &StainMaps,
    n_cases: usize,
    stream_id: u64,
    prefix: &str,
    stains: &[StainId],
) -> Result<CaseSet> {
    let mut rng = stream(cfg.seed, stream_id);
    let (dl, d, n) = (cfg.dim_latent, cfg.dim_embed, cfg.n_patches);
    let coords = grid(n);
    let mut cases = Vec::with_capacity(n_cases);
    let mut labels = Vec::with_capacity(n_cases);
    let mut survival = Vec::with_capacity(n_cases);

    for c in 0..n_cases {
        let case_id = format!("{prefix}-{c:03}");
        let mu: Vec<f64> = (0..dl)
            .map(|_| cfg.case_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let latents: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                mu.iter()
                    .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let shift: Vec<f64> = (0..d - dl)
            .map(|_| cfg.he_shift * rng.sample::<f64, _>(StandardNormal))
            .collect();

        // every stain's noise is drawn even when the cohort keeps only HE, so
        // the HE rows of a case do not depend on which stains are emitted
        let mut bags = Vec::with_capacity(stains.len());
        for stain in StainId::ALL {
            let m = stain.code() as usize;
            let basis = &maps.bases[m];
            let mut emb = Matrix::<f32>::zeros(n, d);
            for (i, u) in latents.iter().enumerate() {
                let row = emb.row_mut(i);
                for (r, out) in row.iter_mut().enumerate() {
                    let mut v = maps.offsets[m][r];
                    for (k, &uk) in u.iter().enumerate() {
                        v += basis[(r, k)] * uk;
                    }
                    if stain.is_anchor() && !cfg.identity_maps {
                        for (k, &s) in shift.iter().enumerate() {
                            v += basis[(r, dl + k)] * s;
                        }
                    }
                    let eps: f64 = rng.sample(StandardNormal);
                    *out = (v + cfg.noise_sigma * eps) as f32;
                }
            }
            if stains.contains(&stain) {
                let slide = format!("{case_id}-{stain}");
                bags.push(PatchBag::new(slide, stain, coords.clone(), emb)?);
            }
        }
        cases.push(AlignedCase::new(case_id, bags, stains.len() > 1)?);

        let mean: Vec<f64> = (0..dl)
            .map(|k| latents.iter().map(|u| u[k]).sum::<f64>() / n as f64)
            .collect();
        labels.push(u8::from(mean[0] > 0.0));
        let risk: f64 = mean
            .iter()
            .zip(&maps.survival_direction)
            .map(|(a, b)| a * b)
            .sum();
        let jitter: f64 = rng.sample(StandardNormal);
        let time = (-risk + 0.25 * jitter).exp();
        let censored = rng.random::<f64>() < cfg.censor_rate;
        survival.push(Survival {
            time,
            event: !censored,
        });
    }
    CaseSet::new(cases, Some(labels), Some(survival))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bases_are_orthonormal() {
        let maps = StainMaps::draw(&SyntheticConfig::standard(3));
        for q in &maps.bases {
            let qtq = crate::math::ops::matmul(&q.transpose(), q).unwrap();
            for i in 0..qtq.rows() {
                for j in 0..qtq.cols() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq[(i, j)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SyntheticConfig::standard(0);
        c.dim_latent = 64;
        assert!(generate_synthetic(&c).is_err());
        let mut c = SyntheticConfig::standard(0);
        c.censor_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = SyntheticConfig::standard(0);
        c.identity_maps = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn downstream_shares_maps_not_cases() {
        let cfg = SyntheticConfig::standard(1);
        let train = generate_synthetic(&cfg).unwrap();
        let eval = generate_downstream(&cfg, 5).unwrap();
        assert_eq!(eval.len(), 5);
        assert!(eval.cases.iter().all(|c| !c.has_ihc()));
        assert_ne!(
            train.cases[0].he().embeddings,
            eval.cases[0].he().embeddings
        );
    }
}
