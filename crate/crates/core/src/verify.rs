//! Finite-difference gradient suites for every primitive, model and loss.
//!
//! Each suite draws random small shapes, runs the analytic reverse pass in
//! `f64`, and compares it against central differences of the forward pass.
//! Models are reduced to a scalar with a random projection of their output
//! so every output coordinate participates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{cga_batch_loss, cpa_loss, ContrastiveBatch, SlideBatch, Weighting};
use crate::math::ops::{self, Axis};
use crate::math::{grad_check, GradCheck, Matrix, NamedTensor, Parameters};
use crate::models::{Adapter, Caf, Mil};

pub const FD_EPS: f64 = 1e-4;
/// Models and losses.
pub const MODEL_TOL: f64 = 1e-5;
/// Individual primitives.
pub const PRIMITIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn randomize<P: Parameters<f64>>(p: &mut P, scale: f64, rng: &mut ChaCha8Rng) {
    for (_, m) in p.named_mut() {
        for v in m.as_mut_slice() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn inner(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

fn tensor(name: &str, m: &Matrix<f64>, grad: &Matrix<f64>) -> NamedTensor<f64> {
    let mut t = NamedTensor::new(name, vec![m.rows(), m.cols()], m.as_slice().to_vec()).unwrap();
    t.grad = grad.as_slice().to_vec();
    t
}

fn as_matrix(t: &NamedTensor<f64>) -> Matrix<f64> {
    Matrix::from_vec(t.dims[0], t.dims[1], t.values.clone()).unwrap()
}

struct Tracker {
    suite: &'static str,
    tol: f64,
    trials: usize,
    worst: Option<(f64, String)>,
}

impl Tracker {
    fn new(suite: &'static str, tol: f64) -> Self {
        Self {
            suite,
            tol,
            trials: 0,
            worst: None,
        }
    }

    fn add(&mut self, label: impl Into<String>, r: GradCheck) {
        self.trials += 1;
        let label = label.into();
        if self.worst.as_ref().is_none_or(|(e, _)| r.max_rel_err > *e) {
            let at = r
                .worst
                .map(|(n, i)| format!("{n}[{i}]"))
                .unwrap_or_default();
            self.worst = Some((r.max_rel_err, format!("{label} {at}")));
        }
    }

    fn finish(self) -> SuiteReport {
        let (max, worst) = self.worst.unwrap_or((0.0, String::new()));
        SuiteReport {
            suite: self.suite.into(),
            trials: self.trials,
            max_rel_err: max,
            worst,
            tolerance: self.tol,
            passed: max < self.tol,
        }
    }
}

/// Every primitive, `trials` random shapes each.
pub fn primitives_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("primitives", PRIMITIVE_TOL);
    for trial in 0..trials {
        let (n, k, m) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let a = gaussian(n, k, 1.0, &mut rng);
        let b = gaussian(k, m, 1.0, &mut rng);
        let r_nm = gaussian(n, m, 1.0, &mut rng);
        let r_nk = gaussian(n, k, 1.0, &mut rng);

        // matmul
        let (da, db) = ops::matmul_backward(&a, &b, &r_nm);
        let mut ps = vec![tensor("a", &a, &da), tensor("b", &b, &db)];
        let r = grad_check(
            |p| {
                inner(
                    &ops::matmul(&as_matrix(&p[0]), &as_matrix(&p[1])).unwrap(),
                    &r_nm,
                )
            },
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("matmul#{trial}"), r);

        // add_bias
        let bias = gaussian(1, k, 1.0, &mut rng);
        let (dx, dbias) = ops::add_bias_backward(&r_nk);
        let mut ps = vec![
            tensor("x", &a, &dx),
            tensor("bias", &bias, &Matrix::row_vector(dbias)),
        ];
        let r = grad_check(
            |p| {
                inner(
                    &ops::add_bias(&as_matrix(&p[0]), &p[1].values).unwrap(),
                    &r_nk,
                )
            },
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("add_bias#{trial}"), r);

        // tanh / sigmoid
        let y = ops::tanh(&a);
        let mut ps = vec![tensor("x", &a, &ops::tanh_backward(&y, &r_nk))];
        let r = grad_check(
            |p| inner(&ops::tanh(&as_matrix(&p[0])), &r_nk),
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("tanh#{trial}"), r);
        let y = ops::sigmoid(&a);
        let mut ps = vec![tensor("x", &a, &ops::sigmoid_backward(&y, &r_nk))];
        let r = grad_check(
            |p| inner(&ops::sigmoid(&as_matrix(&p[0])), &r_nk),
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("sigmoid#{trial}"), r);

        // elementwise multiply, scale
        let a2 = gaussian(n, k, 1.0, &mut rng);
        let (g1, g2) = ops::mul_backward(&a, &a2, &r_nk);
        let mut ps = vec![tensor("a", &a, &g1), tensor("b", &a2, &g2)];
        let r = grad_check(
            |p| {
                inner(
                    &ops::mul(&as_matrix(&p[0]), &as_matrix(&p[1])).unwrap(),
                    &r_nk,
                )
            },
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("mul#{trial}"), r);
        let s = rng.random_range(-2.0..2.0);
        let mut ps = vec![tensor("x", &a, &ops::scale_backward(&r_nk, s))];
        let r = grad_check(
            |p| inner(&ops::scale(&as_matrix(&p[0]), s), &r_nk),
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("scale#{trial}"), r);

        // softmax along each axis
        let tau = rng.random_range(0.2..2.0);
        for axis in [Axis::Rows, Axis::Cols] {
            let y = ops::softmax_axis(&a, axis, tau)?;
            let mut ps = vec![tensor(
                "x",
                &a,
                &ops::softmax_axis_backward(&y, &r_nk, axis, tau),
            )];
            let r = grad_check(
                |p| {
                    inner(
                        &ops::softmax_axis(&as_matrix(&p[0]), axis, tau).unwrap(),
                        &r_nk,
                    )
                },
                &mut ps,
                FD_EPS,
            )?;
            tr.add(format!("softmax{axis:?}#{trial}"), r);
        }

        // l2-normalize rows
        let (y, norms) = ops::l2_normalize_rows(&a)?;
        let mut ps = vec![tensor(
            "x",
            &a,
            &ops::l2_normalize_rows_backward(&y, &norms, &r_nk),
        )];
        let r = grad_check(
            |p| inner(&ops::l2_normalize_rows(&as_matrix(&p[0])).unwrap().0, &r_nk),
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("l2_normalize#{trial}"), r);

        // cosine similarity (kept away from the clamp)
        let u = gaussian(1, k + 1, 1.0, &mut rng);
        let v = gaussian(1, k + 1, 1.0, &mut rng);
        let (gu, gv) = ops::cosine_similarity_backward(u.as_slice(), v.as_slice(), 1.0)?;
        let mut ps = vec![
            tensor("a", &u, &Matrix::row_vector(gu)),
            tensor("b", &v, &Matrix::row_vector(gv)),
        ];
        let r = grad_check(
            |p| ops::cosine_similarity(&p[0].values, &p[1].values).unwrap(),
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("cosine#{trial}"), r);

        // mean over each axis
        for axis in [Axis::Rows, Axis::Cols] {
            let len = if axis == Axis::Rows { k } else { n };
            let rv: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let g = ops::mean_axis_backward(a.shape(), axis, &rv);
            let mut ps = vec![tensor("x", &a, &g)];
            let r = grad_check(
                |p| {
                    let mv = ops::mean_axis(&as_matrix(&p[0]), axis);
                    mv.iter().zip(&rv).map(|(x, y)| x * y).sum()
                },
                &mut ps,
                FD_EPS,
            )?;
            tr.add(format!("mean{axis:?}#{trial}"), r);
        }

        // concat along columns
        let c2 = gaussian(n, m, 1.0, &mut rng);
        let rc = gaussian(n, k + m, 1.0, &mut rng);
        let parts = ops::concat_backward(&rc, &[k, m], Axis::Cols);
        let mut ps = vec![tensor("a", &a, &parts[0]), tensor("b", &c2, &parts[1])];
        let r = grad_check(
            |p| {
                inner(
                    &ops::concat(&[&as_matrix(&p[0]), &as_matrix(&p[1])], Axis::Cols).unwrap(),
                    &rc,
                )
            },
            &mut ps,
            FD_EPS,
        )?;
        tr.add(format!("concat#{trial}"), r);
    }
    Ok(tr.finish())
}

fn with_inputs<P: Parameters<f64>>(
    params: &P,
    grads: &P,
    inputs: &[(String, Matrix<f64>, Matrix<f64>)],
) -> Vec<NamedTensor<f64>> {
    let mut ts = params.to_tensors(Some(grads));
    for (name, m, g) in inputs {
        ts.push(tensor(name, m, g));
    }
    ts
}

fn split<P: Parameters<f64>>(template: &P, ts: &[NamedTensor<f64>]) -> (P, Vec<Matrix<f64>>) {
    let mut p = template.clone();
    p.load_tensors(ts).expect("tensors from template");
    let n = p.named().len();
    (p, ts[n..].iter().map(as_matrix).collect())
}

pub fn adapter_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("adapter", MODEL_TOL);
    for trial in 0..trials {
        let (n, d, h) = (
            rng.random_range(1..5),
            rng.random_range(1..6),
            rng.random_range(1..6),
        );
        let mut a = Adapter::<f64>::zeros(d, h);
        randomize(&mut a, 0.7, &mut rng);
        let x = gaussian(n, d, 1.0, &mut rng);
        let r = gaussian(n, d, 1.0, &mut rng);
        let (_, cache) = a.forward(&x)?;
        let mut g = a.zeros_like();
        let dx = a.backward(&cache, &r, &mut g);
        let mut ts = with_inputs(&a, &g, &[("x".into(), x, dx)]);
        let rep = grad_check(
            |ts| {
                let (p, ins) = split(&a, ts);
                inner(&p.apply(&ins[0]).unwrap(), &r)
            },
            &mut ts,
            FD_EPS,
        )?;
        tr.add(format!("adapter#{trial}"), rep);
    }
    Ok(tr.finish())
}

pub fn caf_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("caf", MODEL_TOL);
    for trial in 0..trials {
        let heads = rng.random_range(1..4);
        let d = heads * rng.random_range(1..3);
        let (n, m) = (rng.random_range(1..4), rng.random_range(2..6));
        let mut c = Caf::<f64>::zeros(d, heads)?;
        randomize(&mut c, 0.7, &mut rng);
        let stains: Vec<_> = (0..m).map(|_| gaussian(n, d, 1.0, &mut rng)).collect();
        let r = gaussian(n, d, 1.0, &mut rng);
        let refs: Vec<&Matrix<f64>> = stains.iter().collect();
        let (_, cache) = c.forward(&refs)?;
        let mut g = c.zeros_like();
        let ds = c.backward(&cache, &r, &mut g);
        let inputs: Vec<_> = stains
            .iter()
            .zip(ds)
            .enumerate()
            .map(|(i, (s, d))| (format!("S{i}"), s.clone(), d))
            .collect();
        let mut ts = with_inputs(&c, &g, &inputs);
        let rep = grad_check(
            |ts| {
                let (p, ins) = split(&c, ts);
                let refs: Vec<&Matrix<f64>> = ins.iter().collect();
                inner(&p.forward(&refs).unwrap().0, &r)
            },
            &mut ts,
            FD_EPS,
        )?;
        tr.add(format!("caf#{trial}"), rep);
    }
    Ok(tr.finish())
}

pub fn mil_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("mil", MODEL_TOL);
    for trial in 0..trials {
        let (n, d, l) = (
            rng.random_range(1..6),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let mut m = Mil::<f64>::zeros(d, l);
        randomize(&mut m, 0.8, &mut rng);
        let x = gaussian(n, d, 1.0, &mut rng);
        let r: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let (_, cache) = m.forward(&x)?;
        let mut g = m.zeros_like();
        let dx = m.backward(&cache, &r, &mut g);
        let mut ts = with_inputs(&m, &g, &[("bag".into(), x, dx)]);
        let rep = grad_check(
            |ts| {
                let (p, ins) = split(&m, ts);
                let e = p.apply(&ins[0]).unwrap();
                e.iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            &mut ts,
            FD_EPS,
        )?;
        tr.add(format!("mil#{trial}"), rep);
    }
    Ok(tr.finish())
}

/// CPA gradient with respect to every pool row, at a random iteration.
pub fn cpa_suite(seed: u64, trials: usize, tau: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("cpa", MODEL_TOL);
    for trial in 0..trials {
        let (k, c, d) = (
            rng.random_range(1..4),
            rng.random_range(1..4),
            rng.random_range(2..6),
        );
        let n_neg = rng.random_range(0..5);
        let anchors = gaussian(k, d, 1.0, &mut rng);
        let positives: Vec<_> = (0..c).map(|_| gaussian(k, d, 1.0, &mut rng)).collect();
        let negatives: Vec<_> = (0..k).map(|_| gaussian(n_neg, d, 1.0, &mut rng)).collect();
        let total = rng.random_range(1..20);
        let step = rng.random_range(0..=total);
        let batch =
            ContrastiveBatch::from_parts(&anchors, &positives, &negatives, tau, step, total)?;
        let w = Weighting::default();
        let out = cpa_loss(&batch, &w)?;
        let mut ts = vec![tensor("pool", &batch.pool, &out.grad)];
        let rep = grad_check(
            |ts| {
                let mut b = batch.clone();
                b.pool = as_matrix(&ts[0]);
                // weights are constants of the iteration: evaluate them at
                // the unperturbed pool
                frozen_weight_cpa(&batch, &b, &w)
            },
            &mut ts,
            FD_EPS,
        )?;
        tr.add(format!("cpa#{trial}"), rep);
    }
    Ok(tr.finish())
}

/// CPA value on `perturbed` with adaptive weights taken from `base`.
fn frozen_weight_cpa(
    base: &ContrastiveBatch<f64>,
    perturbed: &ContrastiveBatch<f64>,
    w: &Weighting,
) -> f64 {
    let mut total = 0.0;
    for pos in &base.positives {
        let ws: Vec<f64> = pos
            .iter()
            .enumerate()
            .map(|(j, p)| {
                p.map_or(0.0, |p| {
                    let cos =
                        ops::cosine_similarity(base.pool.row(base.anchors[j]), base.pool.row(p))
                            .unwrap();
                    w.weight(base.step, base.total_steps, cos).unwrap()
                })
            })
            .collect();
        let wsum: f64 = ws.iter().sum();
        for (j, p) in pos.iter().enumerate() {
            if let Some(p) = *p {
                let negs: Vec<&[f64]> = perturbed.negatives[j]
                    .iter()
                    .map(|&n| perturbed.pool.row(n))
                    .collect();
                let l = crate::losses::info_nce(
                    perturbed.pool.row(perturbed.anchors[j]),
                    perturbed.pool.row(p),
                    &negs,
                    perturbed.tau,
                )
                .unwrap();
                total += ws[j] / wsum * l;
            }
        }
    }
    total
}

pub fn cga_suite(seed: u64, trials: usize, tau: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new("cga", MODEL_TOL);
    for trial in 0..trials {
        let (k, c, d) = (
            rng.random_range(1..4),
            rng.random_range(1..5),
            rng.random_range(2..6),
        );
        let n_neg = rng.random_range(0..6);
        let rows = k * (1 + c) + n_neg;
        let pool = gaussian(rows, d, 1.0, &mut rng);
        let anchors: Vec<usize> = (0..k).collect();
        let positives: Vec<Vec<usize>> = (0..k)
            .map(|j| (0..c).map(|i| k + j * c + i).collect())
            .collect();
        let negatives: Vec<Vec<usize>> = (0..k).map(|_| (k * (1 + c)..rows).collect()).collect();
        let batch = SlideBatch {
            pool,
            anchors,
            positives,
            negatives,
            tau,
        };
        let out = cga_batch_loss(&batch)?;
        let mut ts = vec![tensor("pool", &batch.pool, &out.grad)];
        let rep = grad_check(
            |ts| {
                let mut b = batch.clone();
                b.pool = as_matrix(&ts[0]);
                cga_batch_loss(&b).unwrap().value
            },
            &mut ts,
            FD_EPS,
        )?;
        tr.add(format!("cga#{trial}"), rep);
    }
    Ok(tr.finish())
}

/// Temperature used by the loss suites. At very low temperatures the softmax
/// saturates and most gradient entries fall below the finite-difference
/// roundoff floor.
pub const ORACLE_TAU: f64 = 0.5;

/// Every suite, 20 trials each.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    const TRIALS: usize = 20;
    const TAU: f64 = ORACLE_TAU;
    Ok(vec![
        primitives_suite(seed, TRIALS)?,
        adapter_suite(seed, TRIALS)?,
        caf_suite(seed, TRIALS)?,
        mil_suite(seed, TRIALS)?,
        cpa_suite(seed, TRIALS, TAU)?,
        cga_suite(seed, TRIALS, TAU)?,
    ])
}
