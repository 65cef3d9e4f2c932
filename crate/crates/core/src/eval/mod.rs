//! H&E-only inference, downstream probes and alignment diagnostics.

mod embed;
mod metrics;
mod probe;
mod retrieval;

pub use embed::{
    as_rows, embed_cases, embed_he_only, mean_pool, mean_pool_cases, read_embeddings,
    write_embeddings, SlideEmbedding,
};
pub use metrics::{auc, c_index, mean_std};
pub use probe::{
    default_seeds, fit_cox, fit_logistic, kshot_probe, survival_cv, EvalReport, COX_LR, COX_STEPS,
    PROBE_LR, PROBE_STEPS, PROBE_WEIGHT_DECAY,
};
pub use retrieval::{retrieval_diagnostics, RetrievalReport};
