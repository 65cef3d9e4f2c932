//! Runs the finite-difference gradient suites for every model and loss.

use cscl::verify;

fn main() -> cscl::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    for r in verify::run_all(seed)? {
        println!(
            "{:<11} {:>2} trials  max rel err {:.2e}  {}",
            r.suite,
            r.trials,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
