//! Trains the patch adapter on the synthetic cohort and reports retrieval.

use cscl::data::{generate_synthetic, SyntheticConfig};
use cscl::eval::retrieval_diagnostics;
use cscl::models::Adapter;
use cscl::training::{epoch_means, train_stage1, TrainConfig};

fn main() -> cscl::Result<()> {
    let data = SyntheticConfig::standard(0);
    let cases = generate_synthetic(&data)?;
    let cfg = TrainConfig::synthetic(0);

    let before = retrieval_diagnostics(&cases, &Adapter::zeros(data.dim_embed, 1), None, false)?;
    let out = train_stage1(&cases, &cfg)?;
    let after = retrieval_diagnostics(&cases, &out.adapter, None, false)?;

    let means = epoch_means(&out.log);
    for (epoch, loss) in means.iter().enumerate().step_by(5) {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    println!(
        "final loss {:.4} after {} steps",
        means[means.len() - 1],
        out.total_steps
    );
    println!(
        "patch top-1: {:.3} -> {:.3}",
        before.patch_top1, after.patch_top1
    );
    for (stain, v) in &after.patch_top1_by_stain {
        println!("  {stain}: {v:.3}");
    }
    Ok(())
}
