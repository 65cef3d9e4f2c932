use cscl::losses::{
    adaptive_weight, cga_batch_loss, cga_loss, cpa_loss, info_nce, info_nce_from_scores,
    ContrastiveBatch, SlideBatch, Weighting,
};
use cscl::math::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// reference values from 50-digit arithmetic, rounded to f64
const NCE_09_01_M02: f64 = 1.102_983_132_279_095_7e-5;
const CGA_FIVE_ZERO_NEGS: f64 = 3.124_369_873_882_907_4e-6;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn naive_nce(a: &[f64], p: &[f64], negs: &[&[f64]], tau: f64) -> f64 {
    let pos = (cos(a, p) / tau).exp();
    let den: f64 = pos + negs.iter().map(|n| (cos(a, n) / tau).exp()).sum::<f64>();
    -(pos / den).ln()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
    Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn info_nce_reference_value() {
    let v = info_nce_from_scores(0.9, &[0.1, -0.2], 0.07).unwrap();
    assert!(rel(v, NCE_09_01_M02) < 1e-9, "{v:e}");
    let a = [1.0, 0.0];
    let p = [0.9, 0.19f64.sqrt()];
    let n1 = [0.1, 0.99f64.sqrt()];
    let n2 = [-0.2, 0.96f64.sqrt()];
    let v = info_nce(&a, &p, &[&n1, &n2], 0.07).unwrap();
    assert!(rel(v, NCE_09_01_M02) < 1e-9, "{v:e}");
}

#[test]
fn cga_reference_value() {
    let he = [1.0, 0.0, 0.0];
    let negs: Vec<[f64; 3]> = (0..5)
        .map(|i| {
            if i % 2 == 0 {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, -2.0]
            }
        })
        .collect();
    let refs: Vec<&[f64]> = negs.iter().map(|n| n.as_slice()).collect();
    let v = cga_loss(&he, &[&[2.0, 0.0, 0.0], &[0.5, 0.0, 0.0]], &refs, 0.07).unwrap();
    assert!(rel(v, CGA_FIVE_ZERO_NEGS) < 1e-9, "{v:e}");
}

#[test]
fn uniform_logits_give_log_n_plus_one() {
    for n in [1usize, 3, 7, 64] {
        let v = info_nce_from_scores(0.3, &vec![0.3; n], 0.07).unwrap();
        assert!((v - ((n + 1) as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn cpa_matches_double_loop() {
    let (k, c, d, n_neg) = (4, 2, 6, 5);
    let (tau, total) = (0.07, 100);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = random_rows(&mut rng, k, d);
        let positives: Vec<Matrix<f64>> = (0..c).map(|_| random_rows(&mut rng, k, d)).collect();
        let negatives: Vec<Matrix<f64>> = (0..k).map(|_| random_rows(&mut rng, n_neg, d)).collect();
        let batch =
            ContrastiveBatch::from_parts(&anchors, &positives, &negatives, tau, total / 2, total)
                .unwrap();
        let got = cpa_loss(&batch, &Weighting::default()).unwrap().value;

        let u = 0.5;
        let mut expect = 0.0;
        for pc in &positives {
            let w: Vec<f64> = (0..k)
                .map(|j| (1.0 - u) + u * (1.0 + cos(anchors.row(j), pc.row(j))) / 2.0)
                .collect();
            let wsum: f64 = w.iter().sum();
            for j in 0..k {
                let negs: Vec<&[f64]> = negatives[j].row_iter().collect();
                expect += w[j] / wsum * naive_nce(anchors.row(j), pc.row(j), &negs, tau);
            }
        }
        assert!(rel(got, expect) < 1e-10, "seed {seed}: {got} vs {expect}");
    }
}

#[test]
fn cpa_at_start_is_sum_of_stain_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (k, c, d) = (5, 3, 4);
    let anchors = random_rows(&mut rng, k, d);
    let positives: Vec<Matrix<f64>> = (0..c).map(|_| random_rows(&mut rng, k, d)).collect();
    let negatives: Vec<Matrix<f64>> = (0..k).map(|_| random_rows(&mut rng, 7, d)).collect();
    let batch =
        ContrastiveBatch::from_parts(&anchors, &positives, &negatives, 0.07, 0, 50).unwrap();
    let got = cpa_loss(&batch, &Weighting::default()).unwrap().value;
    let mut expect = 0.0;
    for pc in &positives {
        let mut s = 0.0;
        for j in 0..k {
            let negs: Vec<&[f64]> = negatives[j].row_iter().collect();
            s += naive_nce(anchors.row(j), pc.row(j), &negs, 0.07);
        }
        expect += s / k as f64;
    }
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn single_anchor_single_stain_is_info_nce() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_rows(&mut rng, 1, 8);
    let p = random_rows(&mut rng, 1, 8);
    let n = random_rows(&mut rng, 6, 8);
    for step in [0, 7, 20] {
        let batch = ContrastiveBatch::from_parts(
            &a,
            std::slice::from_ref(&p),
            std::slice::from_ref(&n),
            0.2,
            step,
            20,
        )
        .unwrap();
        let negs: Vec<&[f64]> = n.row_iter().collect();
        let direct = info_nce(a.row(0), p.row(0), &negs, 0.2).unwrap();
        let got = cpa_loss(&batch, &Weighting::default()).unwrap().value;
        assert!(rel(got, direct) < 1e-14);
        assert!(rel(direct, naive_nce(a.row(0), p.row(0), &negs, 0.2)) < 1e-12);
    }
}

#[test]
fn cga_batch_is_mean_of_per_anchor_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = random_rows(&mut rng, 12, 5);
    let batch = SlideBatch {
        pool: pool.clone(),
        anchors: vec![0, 4, 8],
        positives: vec![vec![1, 2, 3], vec![5, 6], vec![9, 10, 11]],
        negatives: vec![vec![4, 5, 8, 9], vec![0, 1, 8, 11], vec![0, 2, 4, 6]],
        tau: 0.07,
    };
    let got = cga_batch_loss(&batch).unwrap().value;
    let mut expect = 0.0;
    for j in 0..3 {
        let negs: Vec<&[f64]> = batch.negatives[j].iter().map(|&i| pool.row(i)).collect();
        let a = pool.row(batch.anchors[j]);
        let per: f64 = batch.positives[j]
            .iter()
            .map(|&p| naive_nce(a, pool.row(p), &negs, 0.07))
            .sum::<f64>()
            / batch.positives[j].len() as f64;
        expect += per / 3.0;
    }
    assert!(rel(got, expect) < 1e-10, "{got} vs {expect}");
}

#[test]
fn adaptive_weight_endpoints() {
    assert_eq!(adaptive_weight(0, 10, -1.0).unwrap(), 1.0);
    assert_eq!(adaptive_weight(10, 10, 1.0).unwrap(), 1.0);
    assert_eq!(adaptive_weight(10, 10, -1.0).unwrap(), 0.0);
    assert_eq!(adaptive_weight(5, 10, 0.0).unwrap(), 0.75);
    assert!(adaptive_weight(11, 10, 0.0).is_err());
}
