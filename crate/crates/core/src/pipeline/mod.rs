//! Two-step workflow: dataset synthesis, identification of the plant, and
//! inverse-filter training through the frozen identified model.

pub mod checkpoint;
pub mod corpus;
pub mod dataset;
pub mod train;

pub use checkpoint::Metadata;
pub use corpus::{synthesize_corpus, ClassWeights, CorpusConfig, SourceClass};
pub use dataset::{build_dataset, Dataset, SegmentationConfig, Split, DEFAULT_SEGMENT_LEN};
pub use train::{
    estimate_bulk_delay, inverse_skip, thread_pool, train_identification, train_inverse, EpochRecord,
    IdentifiedModel, StopReason, TrainHistory, TrainOptions, TrainOutcome, HISTORY_HEADER, THREADS_ENV,
};
