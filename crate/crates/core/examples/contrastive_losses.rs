//! Evaluates InfoNCE, the adaptive pair weight, and both alignment losses.

use cscl::losses::{
    adaptive_weight, cga_loss, cpa_loss, info_nce_from_scores, ContrastiveBatch, Weighting,
};
use cscl::math::Matrix;

fn main() -> cscl::Result<()> {
    let tau = 0.07f64;
    println!(
        "InfoNCE(0.9 | 0.1, -0.2) = {:.6e}",
        info_nce_from_scores(0.9, &[0.1, -0.2], tau)?
    );
    println!(
        "uniform, 7 negatives = {:.6} (ln 8 = {:.6})",
        info_nce_from_scores(0.0, &[0.0; 7], tau)?,
        8f64.ln()
    );

    for t in [0, 50, 100] {
        println!(
            "w(t={t:>3}, cos=0.5) = {:.3}",
            adaptive_weight(t, 100, 0.5)?
        );
    }

    let anchors = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]])?;
    let her2 = Matrix::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.0, 0.8, 0.3]])?;
    let ki67 = Matrix::from_rows(&[vec![0.7, 0.0, 0.4], vec![0.2, 0.9, 0.0]])?;
    let negs = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![-1.0, 0.2, 0.0]])?;
    let batch =
        ContrastiveBatch::from_parts(&anchors, &[her2, ki67], &[negs.clone(), negs], tau, 40, 100)?;
    let cpa = cpa_loss(&batch, &Weighting::default())?;
    println!(
        "CPA = {:.5}, |grad| = {:.5}",
        cpa.value,
        cpa.grad.sum_sq().sqrt()
    );

    let he = [1.0, 0.2, 0.0];
    let cga = cga_loss(
        &he,
        &[&[0.9, 0.3, 0.0], &[1.0, 0.0, 0.1]],
        &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
        tau,
    )?;
    println!("CGA = {cga:.5}");
    Ok(())
}
