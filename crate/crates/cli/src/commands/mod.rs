pub mod eval;
pub mod gen_data;
pub mod maskgen;
pub mod reconstruct;
pub mod train;

pub use eval::{eval, evaluate, EvalRequest, EVAL_FILE};
pub use gen_data::{gen_data, manifest_rows, GenDataSummary};
pub use maskgen::maskgen;
pub use reconstruct::{reconstruct, ReconstructOutput, ReconstructRequest};
pub use train::{train, TrainOptions, TrainSummary, BEST_WEIGHTS, LAST_WEIGHTS, TRAIN_LOG};
