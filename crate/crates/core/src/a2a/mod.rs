//! Acoustic-to-articulatory inversion with a mixture density network.

pub mod losses;
pub mod model;
pub mod synth;

pub use losses::{mdn_loss, mixture_mean, mse_loss, mtl_loss, pearson_loss, MdnParams, MtlBreakdown, MtlWeights};
pub use model::{invert, A2aTrainConfig, A2aTrainer, MdnHead};
pub use synth::{generate_parallel, ParallelConfig, ParallelData, ParallelPair};
