//! Reconstruction and representation metrics.

mod cka;
mod efficiency;
mod emd;

pub use cka::{linear_cka, CkaResult};
pub use efficiency::{
    all_layer_outputs, binarize, neural_efficiency, pattern_efficiency, EfficiencyReport,
    LayerEfficiency,
};
pub use emd::{
    emd_1d, emd_exact, emd_rows, summarize, to_distribution, transport_simplex, EmdSummary, Flow,
    TransportPlan, MAX_CELLS, NORMALIZATION_TOL,
};
