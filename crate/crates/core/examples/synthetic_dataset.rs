//! Generates the standard synthetic cohort and prints its shape.

use cscl::data::{generate_downstream, generate_synthetic, SyntheticConfig};

fn main() -> cscl::Result<()> {
    let cfg = SyntheticConfig::standard(0);
    let cases = generate_synthetic(&cfg)?;
    let case = &cases.cases[0];
    println!(
        "{} cases, {} patches x {} dims, stains {:?}",
        cases.len(),
        case.n_patches(),
        case.dim(),
        case.stains().collect::<Vec<_>>()
    );
    let labels = cases.labels.as_ref().expect("synthetic labels");
    println!(
        "positives: {}/{}",
        labels.iter().filter(|&&y| y == 1).count(),
        labels.len()
    );

    let downstream = generate_downstream(&cfg, 50)?;
    println!("downstream: {} H&E-only cases", downstream.len());
    Ok(())
}
