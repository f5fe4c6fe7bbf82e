//! Orchestration behind the command-line front end: run configuration,
//! training, streaming inference, benchmarking and ablations.

mod bench;
mod commands;
mod config;
mod stream;
mod train;

pub use bench::{bench, hardware_note, time_model, ArchitectureTiming, BenchReport, LayerShare, ModeReport, Stat, MIN_TIMED_FRAMES, WARMUP_FRAMES};
pub use commands::{
    cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_infer, cmd_train, load_dataset_spec, open_dataset, preprocess_for,
    train_variant, AblationReport, AblationRow, GenSummary, InferSummary, TrainSummary,
};
pub use config::{
    apply_threads, AblationConfig, DataConfig, OutputConfig, Resolution, RunConfig, RuntimeConfig, TrainingConfig,
};
pub use stream::{depth_bytes, predict, schedule, stream_infer, FrameSource, Prepared, Preparer, StreamStep, StreamTimings};
pub use train::{train, EpochLog, TrainOutcome};
