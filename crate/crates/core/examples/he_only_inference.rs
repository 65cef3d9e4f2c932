//! Embeds slides from H&E alone and shows that IHC bags play no part.

use cscl::data::{generate_synthetic, SyntheticConfig};
use cscl::eval::embed_he_only;
use cscl::training::{train_stage1, train_stage2, TrainConfig};

fn main() -> cscl::Result<()> {
    let data = SyntheticConfig {
        n_cases: 8,
        ..SyntheticConfig::standard(2)
    };
    let cases = generate_synthetic(&data)?;
    let cfg = TrainConfig {
        epochs: 5,
        warmup_epochs: 1,
        ..TrainConfig::synthetic(2)
    };
    let adapter = train_stage1(&cases, &cfg)?.adapter;
    let fusion = train_stage2(&cases, &adapter, &cfg)?.model;

    let case = &cases.cases[0];
    let full = embed_he_only(case.he(), &adapter, &fusion.mil)?;
    let stripped = embed_he_only(case.he_only().he(), &adapter, &fusion.mil)?;
    println!(
        "{}: {} dims, first {:?}",
        case.case_id,
        full.vector.len(),
        &full.vector[..4]
    );
    println!("identical without IHC: {}", full.vector == stripped.vector);
    Ok(())
}
