//! Domain types for multi-stain patch-embedding bags, their on-disk formats,
//! and the synthetic aligned-stain generator.

mod bag;
mod case;
mod cseb;
mod manifest;
mod stain;
mod synthetic;

pub use bag::{Coord, PatchBag};
pub use case::{AlignedCase, CaseSet, Survival};
pub use cseb::{read_bag, read_bag_file, write_bag, write_bag_file, CSEB_MAGIC, CSEB_VERSION};
pub use manifest::{
    load_manifest, load_manifest_with, save_case_set, BagPaths, Manifest, ManifestCase,
    SurvivalEntry,
};
pub use stain::StainId;
pub use synthetic::{generate_downstream, generate_synthetic, StainMaps, SyntheticConfig};
