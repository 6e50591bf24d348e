//! Ground-truth-free evaluation and tuning of black-box SfM/VSLAM pipelines.
//!
//! A pipeline's precision is estimated without ground truth by running it on
//! raw and on noise-augmented images and averaging the Sim(3)-aligned ATE
//! between the two groups of trajectories ([`gtf::gtf_ate`]). That score
//! drives 1-D hyperparameter sweeps ([`tuner`]). The [`oracle`] module
//! checks the underlying linear-Gaussian sensitivity argument numerically and
//! provides a mock pipeline with a known error curve.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gtf;
pub mod noise;
pub mod oracle;
pub mod plot;
pub mod runner;
pub mod sim3;
pub mod trajectory;
pub mod tuner;

pub use gtf::{
    gtf_ate, gtf_metric_from_records, gtf_metric_from_trajectories, ExecOptions, GtfConfig, GtfError,
    GtfResult,
};
pub use noise::{perturb_image, perturb_image_set, GrayImage, NoiseError, NoiseSpec};
pub use oracle::{
    entropy_reduction, information_matrix, mock_pipeline, perturbed_information, sample_perturbation,
    EntropyReport, ErrorScale, LinearProblem, MockPipeline, MockPipelineSpec, OracleError,
    PerturbationSample, PerturbationStudy,
};
pub use runner::{
    run_batch, run_pipeline, Params, Pipeline, PipelineAdapter, RunOutcome, RunRecord, RunRequest,
    RunnerError,
};
pub use sim3::{ate, umeyama_sim3, AlignmentError, AteResult, Sim3Transform};
pub use trajectory::{associate, parse_trajectory, Association, Pose, Trajectory, TrajectoryError};
pub use tuner::{
    fit_linear, improvement_report, noise_ablation, select_optimum, sweep, ImprovementReport,
    RegressionFit, SelectBy, Spacing, SweepGrid, SweepPoint, TunerError,
};
