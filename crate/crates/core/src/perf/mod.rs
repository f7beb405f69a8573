//! Analytical planners for GPU memory and pipeline throughput.

pub mod memory;
pub mod throughput;

pub use memory::{
    activation_memory, calibrate_fixed_overhead, checkpoint_schedule, fit_batch, fit_coefficients,
    loglog_slope, max_batch_size, BatchFit, MemoryCoefficients, MemoryModes, MemoryObservation,
    MemoryReport, ModelError, VitConfig,
};
pub use throughput::{pipeline_throughput, sweep_gpus, PipelineProfile, Stage, StageCapacities, ThroughputReport};
