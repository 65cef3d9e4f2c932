//! Cross-stain retrieval on raw features with an identity adapter, with
//! random stain maps and with every stain sharing the identity map.

use cscl::data::{generate_synthetic, SyntheticConfig};
use cscl::eval::retrieval_diagnostics;
use cscl::models::Adapter;

fn main() -> cscl::Result<()> {
    for identity_maps in [false, true] {
        let cfg = SyntheticConfig {
            identity_maps,
            dim_latent: 32,
            ..SyntheticConfig::standard(0)
        };
        let cases = generate_synthetic(&cfg)?;
        let r = retrieval_diagnostics(&cases, &Adapter::zeros(cfg.dim_embed, 1), None, false)?;
        println!(
            "identity maps {identity_maps:<5}  patch top-1 {:.3}  cosine gap {:.3}",
            r.patch_top1, r.patch_cosine_gap
        );
    }
    Ok(())
}
