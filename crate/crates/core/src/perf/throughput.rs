//! Steady-state pipeline throughput: the slowest of IO, CPU and GPU.

use serde::{Deserialize, Serialize};

use super::memory::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineProfile {
    pub num_gpus: u32,
    /// Videos/sec one GPU consumes.
    pub per_gpu_rate: f64,
    pub num_workers: u32,
    /// Videos/sec one loader worker produces.
    pub per_worker_rate: f64,
    /// Bytes/sec.
    pub read_speed: f64,
    /// Compressed bits read per clip.
    pub bits_per_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Io,
    Cpu,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCapacities {
    pub io: f64,
    pub cpu: f64,
    pub gpu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub capacities: StageCapacities,
    pub bottleneck: Stage,
    pub end_to_end: f64,
    pub gpu_utilization: f64,
}

impl PipelineProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.per_gpu_rate,
            self.per_worker_rate,
            self.read_speed,
            self.bits_per_clip,
        ];
        if self.num_gpus == 0 || self.num_workers == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::Config(format!(
                "every pipeline profile field must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn pipeline_throughput(profile: &PipelineProfile) -> Result<ThroughputReport, ModelError> {
    profile.validate()?;
    let capacities = StageCapacities {
        io: profile.read_speed * 8.0 / profile.bits_per_clip,
        cpu: f64::from(profile.num_workers) * profile.per_worker_rate,
        gpu: f64::from(profile.num_gpus) * profile.per_gpu_rate,
    };
    // Ties resolve upstream first.
    let (bottleneck, end_to_end) = [
        (Stage::Io, capacities.io),
        (Stage::Cpu, capacities.cpu),
        (Stage::Gpu, capacities.gpu),
    ]
    .into_iter()
    .fold((Stage::Io, f64::INFINITY), |best, (stage, cap)| {
        if cap < best.1 {
            (stage, cap)
        } else {
            best
        }
    });
    Ok(ThroughputReport {
        capacities,
        bottleneck,
        end_to_end,
        gpu_utilization: end_to_end / capacities.gpu,
    })
}

/// Reports for `1..=max_gpus` GPUs, other rates held fixed.
pub fn sweep_gpus(profile: &PipelineProfile, max_gpus: u32) -> Result<Vec<(u32, ThroughputReport)>, ModelError> {
    (1..=max_gpus)
        .map(|g| {
            pipeline_throughput(&PipelineProfile {
                num_gpus: g,
                ..*profile
            })
            .map(|r| (g, r))
        })
        .collect()
}
