use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Survival;
use crate::error::{CsclError, Result};

use super::metrics::{auc, c_index, mean_std};

pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_WEIGHT_DECAY: f64 = 1e-4;
pub const COX_STEPS: usize = 500;
pub const COX_LR: f64 = 0.01;

/// Seeds `0..10`.
pub fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// Summary of one evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    pub mean: f64,
    pub std: f64,
    pub seeds: Vec<u64>,
    /// Per-seed (or per-fold) values, in order.
    pub values: Vec<f64>,
    pub config_hash: String,
}

/// Hash of the protocol settings and the exact input embeddings.
fn config_hash(settings: &serde_json::Value, x: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    h.update(settings.to_string().as_bytes());
    for row in x {
        for v in row {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(CsclError::invalid("no embeddings"));
    }
    if x.iter().any(|r| r.len() != d) {
        return Err(CsclError::shape("embeddings differ in dimension"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CsclError::NonFinite("embedding".into()));
    }
    Ok(d)
}

/// Per-feature mean of the given rows.
fn train_mean(x: &[Vec<f64>], rows: &[usize]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mu = vec![0.0; x[0].len()];
    for &i in rows {
        for (m, v) in mu.iter_mut().zip(&x[i]) {
            *m += v / n;
        }
    }
    mu
}

fn center(row: &[f64], mu: &[f64]) -> Vec<f64> {
    row.iter().zip(mu).map(|(v, m)| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic regression by full-batch gradient descent from zero, with an
/// unregularized bias. Returns `(w, b)`.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], steps: usize, lr: f64, wd: f64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let n = x.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &yi) in x.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(dot(&w, row) + b)).exp());
            let r = (p - f64::from(yi)) / n;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
            gb += r;
        }
        for (wi, g) in w.iter_mut().zip(gw) {
            *wi -= lr * (g + wd * *wi);
        }
        b -= lr * gb;
    }
    (w, b)
}

/// k-shot linear probe AUC. Per seed, `k` cases of each class train a
/// logistic probe on centered embeddings; the remaining cases are scored.
pub fn kshot_probe(x: &[Vec<f64>], labels: &[u8], k: usize, seeds: &[u64]) -> Result<EvalReport> {
    check_matrix(x)?;
    if labels.len() != x.len() {
        return Err(CsclError::shape("labels do not cover every embedding"));
    }
    if k == 0 || seeds.is_empty() {
        return Err(CsclError::invalid("k and the seed list must be non-empty"));
    }
    let classes: [Vec<usize>; 2] =
        [0u8, 1].map(|c| (0..x.len()).filter(|&i| labels[i] == c).collect());
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() <= k {
            return Err(CsclError::precondition(format!(
                "class {c} has {} cases; k = {k} leaves none to score",
                idx.len()
            )));
        }
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::with_capacity(2 * k);
        let mut test = Vec::new();
        for idx in &classes {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        let mu = train_mean(x, &train);
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| center(&x[i], &mu)).collect();
        let ys: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let (w, b) = fit_logistic(&xs, &ys, PROBE_STEPS, PROBE_LR, PROBE_WEIGHT_DECAY);
        let scores: Vec<f64> = test
            .iter()
            .map(|&i| dot(&w, &center(&x[i], &mu)) + b)
            .collect();
        let yt: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        values.push(auc(&scores, &yt)?);
    }
    let (mean, std) = mean_std(&values);
    let settings = serde_json::json!({
        "task": "kshot", "k": k, "seeds": seeds,
        "steps": PROBE_STEPS, "lr": PROBE_LR, "weight_decay": PROBE_WEIGHT_DECAY,
    });
    Ok(EvalReport {
        task: "kshot".into(),
        k: Some(k),
        folds: None,
        mean,
        std,
        seeds: seeds.to_vec(),
        values,
        config_hash: config_hash(&settings, x),
    })
}

/// Linear Cox model by gradient descent on the mean negative log partial
/// likelihood (Breslow handling of tied times). Returns `β`.
pub fn fit_cox(x: &[Vec<f64>], surv: &[Survival], steps: usize, lr: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| surv[b].time.total_cmp(&surv[a].time));
    let n_events = surv.iter().filter(|s| s.event).count().max(1) as f64;
    let mut beta = vec![0.0; d];
    for _ in 0..steps {
        let eta: Vec<f64> = x.iter().map(|r| dot(&beta, r)).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // risk-set sums accumulated from the longest time down
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; d];
        let mut grad = vec![0.0; d];
        let mut i = 0;
        while i < order.len() {
            let t = surv[order[i]].time;
            let mut j = i;
            while j < order.len() && surv[order[j]].time == t {
                let r = order[j];
                let e = (eta[r] - shift).exp();
                s0 += e;
                for (a, v) in s1.iter_mut().zip(&x[r]) {
                    *a += e * v;
                }
                j += 1;
            }
            for &r in &order[i..j] {
                if surv[r].event {
                    for ((g, v), a) in grad.iter_mut().zip(&x[r]).zip(&s1) {
                        *g -= (v - a / s0) / n_events;
                    }
                }
            }
            i = j;
        }
        for (b, g) in beta.iter_mut().zip(grad) {
            *b -= lr * g;
        }
    }
    beta
}

/// Cross-validated C-index of a linear Cox risk score. Cases are split into
/// `folds` seeded folds, events and censored cases dealt round-robin
/// separately so every fold receives events.
pub fn survival_cv(
    x: &[Vec<f64>],
    surv: &[Survival],
    folds: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_matrix(x)?;
    if surv.len() != x.len() {
        return Err(CsclError::shape("survival does not cover every embedding"));
    }
    if folds < 2 {
        return Err(CsclError::invalid(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    let n_events = surv.iter().filter(|s| s.event).count();
    if n_events < folds {
        return Err(CsclError::precondition(format!(
            "{n_events} events cannot cover {folds} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev: Vec<usize> = (0..x.len()).filter(|&i| surv[i].event).collect();
    let mut cens: Vec<usize> = (0..x.len()).filter(|&i| !surv[i].event).collect();
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let mut fold_of = vec![0; x.len()];
    for (k, &i) in ev.iter().chain(&cens).enumerate() {
        fold_of[i] = k % folds;
    }
    let mut values = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] == f).collect();
        let mu = train_mean(x, &train);
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| center(&x[i], &mu)).collect();
        let ss: Vec<Survival> = train.iter().map(|&i| surv[i]).collect();
        let beta = fit_cox(&xs, &ss, COX_STEPS, COX_LR);
        let risks: Vec<f64> = test
            .iter()
            .map(|&i| dot(&beta, &center(&x[i], &mu)))
            .collect();
        let times: Vec<f64> = test.iter().map(|&i| surv[i].time).collect();
        let events: Vec<bool> = test.iter().map(|&i| surv[i].event).collect();
        let c = c_index(&risks, &times, &events)
            .map_err(|_| CsclError::precondition(format!("fold {f} has no comparable pairs")))?;
        values.push(c);
    }
    let (mean, std) = mean_std(&values);
    let settings = serde_json::json!({
        "task": "survival", "folds": folds, "seed": seed, "steps": COX_STEPS, "lr": COX_LR,
    });
    Ok(EvalReport {
        task: "survival".into(),
        k: None,
        folds: Some(folds),
        mean,
        std,
        seeds: vec![seed],
        values,
        config_hash: config_hash(&settings, x),
    })
}
