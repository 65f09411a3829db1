//! Sparse directed network inference with kernel-based structural VAR models.

pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod mkl;
pub mod panel;
pub mod pipeline;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use kernels::{KernelDictionary, KernelMatrixSet, KernelSpec};
pub use panel::{LagOrder, NoiseModel, SegmentationConfig, TimeSeriesPanel};
pub use solver::{CoefficientTensor, EffectiveNetwork, FitDiagnostics, Regularizer, SolverConfig};
pub use metrics::MetricsReport;
pub use synth::{GroundTruth, RecoveryScore, SynthConfig};
pub use pipeline::{run_pipeline, PipelineConfig};
