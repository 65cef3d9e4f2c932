//! Compares a 10-shot linear probe on pretrained embeddings with mean pooling.

use cscl::data::{generate_downstream, generate_synthetic, SyntheticConfig};
use cscl::eval::{as_rows, default_seeds, embed_cases, kshot_probe, mean_pool_cases};
use cscl::training::{train_stage1, train_stage2, TrainConfig};

fn main() -> cscl::Result<()> {
    let data = SyntheticConfig::standard(0);
    let cases = generate_synthetic(&data)?;
    let cfg = TrainConfig::synthetic(0);
    let adapter = train_stage1(&cases, &cfg)?.adapter;
    let fusion = train_stage2(&cases, &adapter, &cfg)?.model;

    let downstream = generate_downstream(&data, 200)?;
    let labels = downstream.labels.clone().expect("synthetic labels");
    let ours = kshot_probe(
        &as_rows(&embed_cases(&downstream, &adapter, &fusion.mil)?),
        &labels,
        10,
        &default_seeds(),
    )?;
    let base = kshot_probe(
        &as_rows(&mean_pool_cases(&downstream)),
        &labels,
        10,
        &default_seeds(),
    )?;
    println!("pretrained  AUC {:.3} ± {:.3}", ours.mean, ours.std);
    println!("mean pool   AUC {:.3} ± {:.3}", base.mean, base.std);
    Ok(())
}
