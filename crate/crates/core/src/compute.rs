//! Analytical latency models for the NPU (GEMM) and the bank-level PIM
//! units (GEMV).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dram::{DramConfig, TimingParams};
use crate::error::{Error, Result};
use crate::layout::WeightLayout;
use crate::mapping::Scheme;
use crate::timing::{npu_stream, replay_iter, ControllerOptions};

/// Bytes streamed when measuring sequential NPU bandwidth.
pub const CALIBRATION_BYTES: u64 = 4 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpuSpec {
    pub peak_flops: f64,
    pub onchip_buffer_bytes: u64,
    pub l1_bytes: u64,
    #[serde(default = "default_element_size")]
    pub element_size_bytes: u64,
    /// Sustained DRAM read bandwidth per address mapping, normally filled
    /// in by [`NpuSpec::calibrate`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub achievable_dram_bw: BTreeMap<Scheme, f64>,
}

fn default_element_size() -> u64 {
    2
}

impl NpuSpec {
    /// Two NPU chips at 8 TFLOPS each.
    pub fn ascend_310b_x2() -> Self {
        NpuSpec {
            peak_flops: 16e12,
            onchip_buffer_bytes: 8 << 20,
            l1_bytes: 1 << 20,
            element_size_bytes: 2,
            achievable_dram_bw: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_flops.is_finite() && self.peak_flops > 0.0) {
            return Err(Error::config("npu.peak_flops", "must be positive"));
        }
        Ok(())
    }

    pub fn with_bw(mut self, scheme: Scheme, bw: f64) -> Self {
        self.achievable_dram_bw.insert(scheme, bw);
        self
    }

    /// Measures sequential-read bandwidth for every scheme by replaying an
    /// NPU stream.
    pub fn calibrate(
        mut self,
        cfg: &DramConfig,
        timing: &TimingParams,
        ctrl: &ControllerOptions,
    ) -> Result<Self> {
        for scheme in Scheme::ALL {
            let bw = measure_stream_bw(cfg, timing, ctrl, scheme, CALIBRATION_BYTES)?;
            self.achievable_dram_bw.insert(scheme, bw);
        }
        self.element_size_bytes = cfg.element_size_bytes;
        Ok(self)
    }

    pub fn bw(&self, scheme: Scheme) -> Result<f64> {
        self.achievable_dram_bw
            .get(&scheme)
            .copied()
            .ok_or_else(|| Error::Argument(format!("no NPU bandwidth calibrated for {scheme}")))
    }
}

pub fn measure_stream_bw(
    cfg: &DramConfig,
    timing: &TimingParams,
    ctrl: &ControllerOptions,
    scheme: Scheme,
    bytes: u64,
) -> Result<f64> {
    let stream = npu_stream(cfg, scheme, 0, bytes)?;
    Ok(replay_iter(cfg, timing, ctrl, stream)?.effective_bw_bytes_per_s)
}

/// Roofline of one GEMM (`M x K` activations times a `K x N` weight): the
/// larger of the compute time and a single pass over the weights.
pub fn npu_gemm_time(spec: &NpuSpec, m: u64, k: u64, n: u64, scheme: Scheme) -> Result<f64> {
    let compute = 2.0 * m as f64 * k as f64 * n as f64 / spec.peak_flops;
    let weight_bytes = (k * n * spec.element_size_bytes) as f64;
    let memory = weight_bytes / spec.bw(scheme)?;
    Ok(compute.max(memory))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PimSpec {
    pub peak_flops: f64,
    pub internal_bw: f64,
    pub lanes: u32,
    pub element_size_bytes: u64,
}

impl PimSpec {
    pub fn new(cfg: &DramConfig, peak_flops: f64) -> Self {
        PimSpec {
            peak_flops,
            internal_bw: cfg.pim_internal_bw_bytes_per_s,
            lanes: cfg.total_banks(),
            element_size_bytes: cfg.element_size_bytes,
        }
    }

    pub fn per_bank_bw(&self) -> f64 {
        self.internal_bw / self.lanes as f64
    }
}

/// Columns of the first `n` matrix columns assigned to each lane.
pub fn lane_columns(layout: &dyn WeightLayout, n: u64) -> Vec<u64> {
    let cfg = layout.config();
    let mut counts = vec![0u64; cfg.total_banks() as usize];
    for j in 0..n {
        counts[layout.column_home(j).lane(cfg) as usize] += 1;
    }
    counts
}

/// GEMV time given how many `k`-long columns each lane streams.
pub fn pim_gemv_time_lanes(spec: &PimSpec, lane_columns: &[u64], k: u64) -> f64 {
    let n: u64 = lane_columns.iter().sum();
    let busiest = lane_columns.iter().copied().max().unwrap_or(0);
    let stream = (busiest * k * spec.element_size_bytes) as f64 / spec.per_bank_bw();
    let compute = 2.0 * k as f64 * n as f64 / spec.peak_flops;
    stream.max(compute)
}

/// GEMV over the first `k x n` elements of a placed weight matrix; each
/// lane streams the columns whose home it is.
pub fn pim_gemv_time(spec: &PimSpec, layout: &dyn WeightLayout, k: u64, n: u64) -> f64 {
    pim_gemv_time_lanes(spec, &lane_columns(layout, n), k)
}

/// GEMV whose `n` columns are dealt round-robin over the lanes.
pub fn pim_gemv_time_balanced(spec: &PimSpec, k: u64, n: u64) -> f64 {
    let lanes = spec.lanes as u64;
    let mut counts = vec![n / lanes; lanes as usize];
    for c in counts.iter_mut().take((n % lanes) as usize) {
        *c += 1;
    }
    pim_gemv_time_lanes(spec, &counts, k)
}
