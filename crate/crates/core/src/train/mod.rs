//! Loss, synthetic cued task, training loop, evaluation and ablations.

mod eval;
mod loss;
mod parallel;
pub mod sisdr;
mod synth;
mod trainer;

pub use eval::{
    evaluate, evaluate_with, quantile, run_ablation, run_layer_sweep, AblationReport, AblationRow, Aggregate, EvalReport,
    EvalRow,
};
pub use loss::{si_sdr_loss, LossMode};
pub use sisdr::{si_sdr, si_sdr_slice, SiSdrTerms, SI_SDR_CAP_DB};
pub use synth::{
    attended_labels, cue_envelope, example_id, make_synthetic_example, synthetic_scenes, synthetic_split, Example, SyntheticExample,
    SyntheticTaskConfig, SPLITS,
};
pub use trainer::{threads_from_env, train, EpochLog, TrainConfig, TrainLog};
