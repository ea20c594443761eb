//! Small dense networks: float, fake-quantized and bit-exact inference,
//! reverse-mode gradients, Hessian-vector products and quantization-aware
//! training.

mod forward;
mod grad;
mod hvp;
mod params;
mod quantized;
mod spec;
mod train;

pub use forward::{forward, layer_outputs, predict, Mode, Net, Trace};
pub use grad::{loss, loss_and_grad, Batch};
pub use hvp::{hvp, hvp_objective, ModelObjective, Objective, Quadratic};
pub use params::Parameters;
pub use quantized::{LayerCodes, QuantizedModel, MODEL_SCHEMA_VERSION};
pub use spec::{
    benchmark_formats, sigmoid_index_code, sigmoid_index_real, sigmoid_table, Activation,
    DenseLayerSpec, LayerLayout, ModelSpec, SIGMOID_DOMAIN, SIGMOID_TABLE_SIZE,
};
pub use train::{
    split_indices, train, train_from, EpochRecord, LossKind, TrainConfig, TrainOutcome,
};

pub(crate) use forward::row_vec;
pub(crate) use hvp::{dot, norm};
pub(crate) use train::{train_with, StepObjective};
