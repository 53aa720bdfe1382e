//! Matrix-factorization recommender training with accumulated-gradient
//! bookkeeping and post-hoc popularity-bias removal.
//!
//! The pipeline is: load interactions ([`dataset`]), split them, train an
//! [`EmbeddingModel`] with BPR or BCE ([`trainer`]), estimate the popular and
//! conformity directions and project them out ([`debias`]), then rank and
//! score ([`evaluator`]). [`diagnostics`] reports how the accumulated
//! positive and negative item updates relate to popularity.
//!
//! ```
//! use gradebias::{fit, synth, TrainConfig};
//!
//! let data = synth::generate(&synth::SynthConfig { num_users: 40, num_items: 30, ..Default::default() })?;
//! let config = TrainConfig { epochs: 2, dim: 8, ..Default::default() };
//! let out = fit(&data, &config)?;
//! assert_eq!(out.loss_trace.len(), 2);
//! # Ok::<(), gradebias::Error>(())
//! ```

pub mod cli;
pub mod dataset;
pub mod debias;
pub mod diagnostics;
mod error;
pub mod evaluator;
pub mod linalg;
pub mod model;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use dataset::{
    compute_grouping, load_interactions, split, Format, IdMap, InteractionDataset, PopularityGrouping, SplitBundle,
    SplitProtocol, SplitRatios,
};
pub use debias::{adjust_item, adjust_user, adjusted_score, build_context, AdjustmentContext, DirectionSource};
pub use error::{Error, Result};
pub use evaluator::{evaluate, metrics_for_user, top_k, EvalConfig, EvalReport, EvalTarget};
pub use model::{init_model, load_checkpoint, save_checkpoint, Checkpoint, EmbeddingModel, InitSpec};
pub use trainer::{fit, train, GradientAccumulators, Loss, TrainConfig, TrainOutput};

// Book chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/accumulators.md")]
    mod accumulators {}
    #[doc = include_str!("../../../book/src/adjustment.md")]
    mod adjustment {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
