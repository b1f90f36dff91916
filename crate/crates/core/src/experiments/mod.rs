//! Configuration, experiment pipelines and statistical fits.

pub mod config;
pub mod fit;
pub mod pipelines;

pub use config::{load_config, Encoding, ExperimentConfig, ReadoutKind};
pub use fit::{fit_sinusoid_decay, mle_fit_exponential, BinomialPoint, FitResult, SinusoidFit};
pub use pipelines::{
    run_detection_calibration, run_gate_design, run_parity_scan, run_prep_fidelity, run_storage_scan, ParityScan,
    PrepReport, StorageRow,
};
