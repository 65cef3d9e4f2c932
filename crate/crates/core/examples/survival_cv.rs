//! Cross-validated Cox regression on slide embeddings, scored by C-index.

use cscl::data::{generate_downstream, SyntheticConfig};
use cscl::eval::{as_rows, c_index, mean_pool_cases, survival_cv};

fn main() -> cscl::Result<()> {
    let cfg = SyntheticConfig {
        censor_rate: 0.3,
        ..SyntheticConfig::standard(4)
    };
    let cohort = generate_downstream(&cfg, 150)?;
    let surv = cohort.survival.clone().expect("synthetic survival");
    let x = as_rows(&mean_pool_cases(&cohort));

    let report = survival_cv(&x, &surv, 5, 0)?;
    println!(
        "5-fold C-index {:.3} ± {:.3}  folds {:?}",
        report.mean, report.std, report.values
    );

    let times: Vec<f64> = surv.iter().map(|s| s.time).collect();
    let events: Vec<bool> = surv.iter().map(|s| s.event).collect();
    let oracle: Vec<f64> = times.iter().map(|t| -t).collect();
    println!(
        "perfect ranking C-index {:.3}",
        c_index(&oracle, &times, &events)?
    );
    Ok(())
}
