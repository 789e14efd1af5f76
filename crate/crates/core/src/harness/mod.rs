//! Experiment matrix: config notation, training runs, summaries, progression
//! plots and activation dumps.

pub mod config;
pub mod eval;
pub mod matrix;
pub mod report;
pub mod train;
pub mod viz;

pub use config::{all_configs, format_config, parse_config, CellFilter, ExperimentConfig, Mechanism};
pub use eval::{evaluate_checkpoint, EvalReport};
pub use matrix::{cell_seed, run_matrix, write_summary, MatrixOptions, MatrixSummary, SummaryRow};
pub use report::{emit_progression, progression, GroupBy, Series};
pub use train::{pretrain_surrogate, read_epoch_logs, run_experiment, run_prepared, EpochLog, PretrainOptions, RunOptions, RunOutcome};
pub use viz::{dump_activations, ActivationGrid};

/// splitmix64 over a pair of words.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
