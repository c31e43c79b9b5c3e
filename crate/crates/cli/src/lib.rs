//! Experiment orchestration for point-supervised small-target
//! segmentation: configuration schema, the train–evolve loop, sweeps, the
//! fixed-pseudo-label baseline, and artifact emission.

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{
    build_scene, eval_masks, fixed_pseudo_labels, pseudo_baseline, run_experiment, run_scene,
    sweep, RunSummary, SceneRun,
};
