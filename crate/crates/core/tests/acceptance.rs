//! Acceptance checks. Runs as a plain binary and prints one line per
//! criterion; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cscl::data::{
    generate_downstream, generate_synthetic, read_bag, write_bag, AlignedCase, PatchBag, StainId,
    SyntheticConfig,
};
use cscl::eval::{
    as_rows, auc, c_index, default_seeds, embed_cases, embed_he_only, kshot_probe, mean_pool_cases,
    retrieval_diagnostics,
};
use cscl::losses::{
    adaptive_weight, cpa_loss, info_nce, info_nce_from_scores, ContrastiveBatch, Weighting,
};
use cscl::math::{Matrix, Parameters};
use cscl::models::{read_checkpoint, write_checkpoint, Adapter, Caf, Mil};
use cscl::training::{
    cga_cohort_loss, cosine_lr, epoch_means, init_fusion, train_stage1, train_stage2, TrainConfig,
};
use cscl::verify;

const DATA_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn report(n: usize, o: &Outcome) -> bool {
    println!(
        "criterion {n}: {} | {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let reports = match verify::run_all(0) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for r in &reports {
        pass &= r.passed && r.trials >= 20;
        parts.push(format!("{} {:.1e}", r.suite, r.max_rel_err));
    }
    Outcome::new(
        pass,
        format!("{} in {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion2() -> Outcome {
    let mut pass = true;
    let mut worst = 0.0f64;
    for n in [1usize, 3, 7] {
        let v = info_nce_from_scores(0.42, &vec![0.42; n], 0.07).unwrap();
        let err = (v - ((n + 1) as f64).ln()).abs();
        worst = worst.max(err);
        pass &= err < 1e-9;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (k, c, d) = (6, 4, 8);
    let anchors = gaussian(&mut rng, k, d);
    let positives: Vec<Matrix<f64>> = (0..c).map(|_| gaussian(&mut rng, k, d)).collect();
    let negatives: Vec<Matrix<f64>> = (0..k).map(|_| gaussian(&mut rng, 9, d)).collect();
    let batch =
        ContrastiveBatch::from_parts(&anchors, &positives, &negatives, 0.07, 0, 100).unwrap();
    let cpa = cpa_loss(&batch, &Weighting::default()).unwrap().value;
    let mut expect = 0.0;
    for pc in &positives {
        let mut sum = 0.0;
        for j in 0..k {
            let negs: Vec<&[f64]> = negatives[j].row_iter().collect();
            sum += info_nce(anchors.row(j), pc.row(j), &negs, 0.07).unwrap();
        }
        expect += sum / k as f64;
    }
    let cpa_err = (cpa - expect).abs();
    pass &= cpa_err < 1e-6;

    let w0 = adaptive_weight(0, 100, -0.3f64).unwrap();
    let w1 = adaptive_weight(100, 100, 1.0f64).unwrap();
    pass &= w0 == 1.0 && w1 == 1.0;
    Outcome::new(
        pass,
        format!("ln(N+1) err {worst:.1e}, CPA(t=0) err {cpa_err:.1e}, w(0)={w0}, w(T,1)={w1}"),
    )
}

fn criterion3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pass = true;

    let x = Matrix::from_vec(
        3,
        4,
        (0..12).map(|_| rng.random_range(-5.0f32..5.0)).collect(),
    )
    .unwrap();
    let identity = Adapter::<f32>::zeros(4, 7).apply(&x).unwrap() == x;
    pass &= identity;

    let mut caf = Caf::<f64>::init(8, 4, &mut rng).unwrap();
    caf.wo
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    caf.wv.iter_mut().for_each(|w| w.fill(0.0));
    let stains: Vec<Matrix<f64>> = (0..5).map(|_| gaussian(&mut rng, 6, 8)).collect();
    let refs: Vec<&Matrix<f64>> = stains.iter().collect();
    let caf_ok = caf.forward(&refs).unwrap().0 == stains[0];
    pass &= caf_ok;

    let mut sum_err = 0.0f64;
    let mut perm_err = 0.0f64;
    for trial in 0..20 {
        let n = 1 + trial * 3;
        let mil = Mil::<f64>::init(8, 6, &mut rng);
        let bag = gaussian(&mut rng, n, 8);
        let (e, cache) = mil.forward(&bag).unwrap();
        sum_err = sum_err.max((cache.attention().iter().sum::<f64>() - 1.0).abs());
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (e2, _) = mil.forward(&bag.select_rows(&order)).unwrap();
        let scale = e.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        for (a, b) in e.iter().zip(&e2) {
            perm_err = perm_err.max((a - b).abs() / scale);
        }
    }
    pass &= sum_err <= 1e-6 && perm_err <= 1e-5;

    let set = generate_synthetic(&SyntheticConfig {
        n_cases: 4,
        n_patches: 16,
        ..SyntheticConfig::standard(3)
    })
    .unwrap();
    let mut adapter = Adapter::<f32>::init(32, 16, &mut rng);
    adapter
        .w2
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-0.1..0.1));
    let mil = Mil::<f32>::init(32, 16, &mut rng);
    let mut isolated = true;
    for case in &set.cases {
        let base = embed_he_only(case.he(), &adapter, &mil).unwrap();
        let changed: Vec<PatchBag> = case
            .bags()
            .map(|b| {
                let mut b = b.clone();
                if b.stain != StainId::HE {
                    b.embeddings
                        .as_mut_slice()
                        .iter_mut()
                        .for_each(|v| *v = rng.random_range(-9.0..9.0));
                }
                b
            })
            .collect();
        let modified = AlignedCase::new(case.case_id.clone(), changed, true).unwrap();
        let again = embed_he_only(modified.he(), &adapter, &mil).unwrap();
        let stripped = embed_he_only(case.he_only().he(), &adapter, &mil).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        isolated &= bits(&base.vector) == bits(&again.vector)
            && bits(&base.vector) == bits(&stripped.vector);
    }
    let batch = embed_cases(&set, &adapter, &mil).unwrap();
    let mut he_only = set.clone();
    he_only.cases = set.cases.iter().map(|c| c.he_only()).collect();
    isolated &= embed_cases(&he_only, &adapter, &mil).unwrap() == batch;
    pass &= isolated;

    Outcome::new(
        pass,
        format!(
            "adapter identity {identity}, CAF identity {caf_ok}, attention sum err {sum_err:.1e}, \
             permutation rel err {perm_err:.1e}, HE-only isolation {isolated}"
        ),
    )
}

struct SeedRun {
    seed: u64,
    s1_ratio: f64,
    top1_before: f64,
    top1_after: f64,
    s1_time: Duration,
    cga_ratio: f64,
    slide_he: f64,
    slide_fused: f64,
    probe_gain: f64,
}

fn pipeline(seed: u64) -> cscl::Result<SeedRun> {
    let data = SyntheticConfig::standard(seed);
    let cases = generate_synthetic(&data)?;
    let cfg = TrainConfig::synthetic(seed);
    let dim = data.dim_embed;

    let before = retrieval_diagnostics(&cases, &Adapter::zeros(dim, 1), None, false)?;
    let start = Instant::now();
    let s1 = train_stage1(&cases, &cfg)?;
    let s1_time = start.elapsed();
    let means = epoch_means(&s1.log);
    let after = retrieval_diagnostics(&cases, &s1.adapter, None, false)?;

    let initial = cga_cohort_loss(&cases, &s1.adapter, &init_fusion(dim, &cfg)?, &cfg)?;
    let s2 = train_stage2(&cases, &s1.adapter, &cfg)?;
    let trained = cga_cohort_loss(&cases, &s1.adapter, &s2.model, &cfg)?;
    let slides = retrieval_diagnostics(&cases, &s1.adapter, Some(&s2.model), false)?;

    let downstream = generate_downstream(&data, 200)?;
    let labels = downstream.labels.clone().expect("synthetic labels");
    let ours = as_rows(&embed_cases(&downstream, &s1.adapter, &s2.model.mil)?);
    let base = as_rows(&mean_pool_cases(&downstream));
    let ours = kshot_probe(&ours, &labels, 10, &default_seeds())?;
    let base = kshot_probe(&base, &labels, 10, &default_seeds())?;

    Ok(SeedRun {
        seed,
        s1_ratio: means[means.len() - 1] / means[0],
        top1_before: before.patch_top1,
        top1_after: after.patch_top1,
        s1_time,
        cga_ratio: trained / initial,
        slide_he: slides.slide_top1_he_only.unwrap_or(0.0),
        slide_fused: slides.slide_top1_fused.unwrap_or(0.0),
        probe_gain: ours.mean - base.mean,
    })
}

fn criteria456() -> [Outcome; 3] {
    let mut runs = Vec::new();
    for &seed in &DATA_SEEDS {
        match pipeline(seed) {
            Ok(r) => {
                println!(
                    "  seed {}: stage-1 ratio {:.3}, patch top-1 {:.3} -> {:.3} ({:.1}s), CGA ratio {:.3}, \
                     slide top-1 {:.3}/{:.3}, 10-shot gain {:+.3}",
                    r.seed,
                    r.s1_ratio,
                    r.top1_before,
                    r.top1_after,
                    r.s1_time.as_secs_f64(),
                    r.cga_ratio,
                    r.slide_he,
                    r.slide_fused,
                    r.probe_gain
                );
                runs.push(r);
            }
            Err(e) => {
                let fail = || Outcome::new(false, format!("seed {seed}: {e}"));
                return [fail(), fail(), fail()];
            }
        }
    }
    let fmt = |f: &dyn Fn(&SeedRun) -> f64| {
        runs.iter()
            .map(|r| format!("{:.3}", f(r)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let c4 = runs.iter().all(|r| {
        r.s1_ratio < 0.5
            && r.top1_before <= 0.1
            && r.top1_after >= 0.8
            && r.s1_time < Duration::from_secs(300)
    });
    let slowest = runs
        .iter()
        .map(|r| r.s1_time.as_secs_f64())
        .fold(0.0, f64::max);
    let c4 = Outcome::new(
        c4,
        format!(
            "loss ratio [{}], top-1 before [{}], after [{}], slowest {slowest:.1}s",
            fmt(&|r| r.s1_ratio),
            fmt(&|r| r.top1_before),
            fmt(&|r| r.top1_after)
        ),
    );

    let c5 = runs
        .iter()
        .all(|r| r.cga_ratio < 0.5 && r.slide_he >= 0.8 && r.slide_fused >= 0.8);
    let c5 = Outcome::new(
        c5,
        format!(
            "CGA ratio [{}], slide top-1 HE-only [{}], fused [{}]",
            fmt(&|r| r.cga_ratio),
            fmt(&|r| r.slide_he),
            fmt(&|r| r.slide_fused)
        ),
    );

    let gain = runs.iter().map(|r| r.probe_gain).sum::<f64>() / runs.len() as f64;
    let c6 = Outcome::new(
        gain >= 0.05,
        format!(
            "mean 10-shot AUC gain {gain:.3} over mean pooling, per seed [{}]",
            fmt(&|r| r.probe_gain)
        ),
    );
    [c4, c5, c6]
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / 2.0 / pairs as f64
}

fn brute_c_index(risk: &[f64], time: &[f64], event: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..risk.len() {
        for j in 0..risk.len() {
            if event[i] && time[i] < time[j] {
                pairs += 1;
                twice += if risk[i] > risk[j] {
                    2
                } else if risk[i] == risk[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / 2.0 / pairs as f64
}

fn criterion7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut auc_ok = 0;
    let mut ci_ok = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..20u8)) / 4.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        if auc(&scores, &labels).ok() == Some(brute_auc(&scores, &labels)) {
            auc_ok += 1;
        }
    }
    let mut tries = 0;
    while tries < 100 {
        let n = rng.random_range(2..=200);
        let risk: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..15u8)))
            .collect();
        let time: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(1..30u8)))
            .collect();
        let event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let comparable = (0..n).any(|i| event[i] && (0..n).any(|j| time[i] < time[j]));
        if !comparable {
            continue;
        }
        tries += 1;
        if c_index(&risk, &time, &event).ok() == Some(brute_c_index(&risk, &time, &event)) {
            ci_ok += 1;
        }
    }
    let auc_ex = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
    let ci_ex = c_index(
        &[0.9, 0.3, 0.1, 0.6],
        &[2.0, 4.0, 5.0, 7.0],
        &[true, false, true, true],
    );
    let ci_ex = ci_ex.unwrap_or(f64::NAN);
    Outcome::new(
        auc_ok == 100 && ci_ok == 100 && auc_ex == 0.75 && ci_ex == 0.75,
        format!("auc {auc_ok}/100, c-index {ci_ok}/100, examples {auc_ex} and {ci_ex}"),
    )
}

fn cscl_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cscl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn snapshot(dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            snapshot(&path, into);
        } else {
            into.insert(path.display().to_string(), std::fs::read(&path).unwrap());
        }
    }
}

fn cli_pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).display().to_string();
    let mut outputs = BTreeMap::new();
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "gen",
            vec![
                "gen-synth".into(),
                "--out".into(),
                p("data"),
                "--seed".into(),
                "0".into(),
                "--downstream-cases".into(),
                "60".into(),
            ],
        ),
        (
            "stage1",
            vec![
                "train-stage1".into(),
                "--manifest".into(),
                p("data/manifest.json"),
                "--out".into(),
                p("run"),
                "--preset".into(),
                "synthetic".into(),
                "--epochs".into(),
                "10".into(),
            ],
        ),
        (
            "stage2",
            vec![
                "train-stage2".into(),
                "--manifest".into(),
                p("data/manifest.json"),
                "--out".into(),
                p("run"),
                "--preset".into(),
                "synthetic".into(),
                "--epochs".into(),
                "10".into(),
                "--adapter".into(),
                p("run/adapter.csck"),
            ],
        ),
        (
            "embed",
            vec![
                "embed".into(),
                "--manifest".into(),
                p("data/downstream/manifest.json"),
                "--adapter".into(),
                p("run/adapter.csck"),
                "--mil".into(),
                p("run/fusion.csck"),
                "--out".into(),
                p("emb"),
            ],
        ),
        (
            "kshot",
            vec![
                "eval-kshot".into(),
                "--embeddings".into(),
                p("emb/embeddings.json"),
                "--k".into(),
                "10".into(),
            ],
        ),
        (
            "survival",
            vec![
                "eval-survival".into(),
                "--embeddings".into(),
                p("emb/embeddings.json"),
            ],
        ),
        (
            "retrieval",
            vec![
                "retrieval".into(),
                "--manifest".into(),
                p("data/manifest.json"),
                "--adapter".into(),
                p("run/adapter.csck"),
                "--fusion".into(),
                p("run/fusion.csck"),
            ],
        ),
    ];
    for (name, args) in runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        outputs.insert(format!("stdout:{name}"), cscl_cli(&args)?);
    }
    snapshot(dir, &mut outputs);
    Ok(outputs)
}

fn criterion8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = match (cli_pipeline(tmp.path()), cli_pipeline(tmp.path())) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("pipeline failed: {e}")),
    };
    let differing: Vec<&String> = first
        .keys()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let same_runs = differing.is_empty() && first.len() == second.len();
    let key = |suffix: &str| first.keys().any(|k| k.ends_with(suffix));
    let covered = key("adapter.csck")
        && key("fusion.csck")
        && key("emb/embeddings.json")
        && first.contains_key("stdout:kshot");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut formats = true;
    for trial in 0..20u32 {
        let (n, d) = (1 + trial as usize, 1 + (trial as usize * 7) % 33);
        let m = Matrix::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| f32::from_bits(rng.random::<u32>() & 0xBF7F_FFFF))
                .collect(),
        )
        .unwrap();
        let coords = (0..n as u32).map(|i| (i, i * 3 % 7)).collect();
        let bag = PatchBag::new(
            format!("slide-{trial}"),
            StainId::ALL[trial as usize % 5],
            coords,
            m,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_bag(&bag, &mut buf).unwrap();
        let back = read_bag(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_bag(&back, &mut again).unwrap();
        formats &= buf == again && back == bag;

        let mut mil = Mil::<f32>::init(d, 3, &mut rng);
        mil.w_out
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let tensors = mil.to_tensors(None);
        let mut buf = Vec::new();
        write_checkpoint(&tensors, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        formats &= buf == again && Mil::from_tensors(&back).unwrap() == mil;
    }

    let cfg = TrainConfig::default();
    let total = cfg.epochs * 2;
    let warmup = total * cfg.warmup_epochs / cfg.epochs;
    let peak = cosine_lr(warmup, total, &cfg);
    let end = cosine_lr(total, total, &cfg);
    let lr_ok = peak == 1e-4 && end == 1e-8;

    Outcome::new(
        same_runs && covered && formats && lr_ok,
        format!(
            "{} artifacts identical across runs{}, format round trips {formats}, lr(W) = {peak:e}, lr(T) = {end:e}",
            first.len(),
            if differing.is_empty() { String::new() } else { format!(" except {differing:?}") }
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut all = true;
    all &= report(1, &criterion1());
    all &= report(2, &criterion2());
    all &= report(3, &criterion3());
    let [c4, c5, c6] = criteria456();
    all &= report(4, &c4);
    all &= report(5, &c5);
    all &= report(6, &c6);
    all &= report(7, &criterion7());
    all &= report(8, &criterion8());
    println!(
        "acceptance: {} in {:.1}s",
        if all { "all criteria pass" } else { "FAILED" },
        start.elapsed().as_secs_f64()
    );
    if !all {
        std::process::exit(1);
    }
}
