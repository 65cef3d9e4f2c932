//! Trains the attention fusion and MIL aggregator on top of a stage-1 adapter.

use cscl::data::{generate_synthetic, SyntheticConfig};
use cscl::eval::retrieval_diagnostics;
use cscl::training::{cga_cohort_loss, init_fusion, train_stage1, train_stage2, TrainConfig};

fn main() -> cscl::Result<()> {
    let data = SyntheticConfig::standard(1);
    let cases = generate_synthetic(&data)?;
    let cfg = TrainConfig::synthetic(1);
    let adapter = train_stage1(&cases, &cfg)?.adapter;

    let initial = cga_cohort_loss(&cases, &adapter, &init_fusion(data.dim_embed, &cfg)?, &cfg)?;
    let out = train_stage2(&cases, &adapter, &cfg)?;
    let trained = cga_cohort_loss(&cases, &adapter, &out.model, &cfg)?;
    println!(
        "cohort CGA loss {initial:.4} -> {trained:.4} ({} steps)",
        out.total_steps
    );

    let r = retrieval_diagnostics(&cases, &adapter, Some(&out.model), false)?;
    println!(
        "slide top-1: H&E-only {:.3}, fused {:.3}",
        r.slide_top1_he_only.unwrap_or(f64::NAN),
        r.slide_top1_fused.unwrap_or(f64::NAN)
    );
    Ok(())
}
