//! Baseline-versus-UMDAM scenarios: single-query TTFT/TTLT, paired
//! speedups and the figure sweeps.
//!
//! The baseline keeps weights in the PIM-optimized placement, copies each
//! matrix into the NPU tile format under the conventional mapping before
//! prefill and copies it back before decode. UMDAM keeps one placement and
//! never copies.
//!
//! Each distinct weight shape is replayed once per copy direction on a
//! fresh controller and the cost is scaled by the number of blocks sharing
//! the shape. The source copy starts at bank row 0 and the destination
//! follows it; only one matrix has to fit at a time.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::compute::{npu_gemm_time, pim_gemv_time, pim_gemv_time_balanced, NpuSpec, PimSpec};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layout::{plan_layout, PimOptLayout, TiledLayout, WeightLayout};
use crate::mapping::Scheme;
use crate::timing::{relayout_stream, replay_iter};
use crate::workload::{expand, ExpandOptions, ModelSpec, WeightMatrix, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Umdam,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Umdam => "umdam",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "umdam" => Ok(Variant::Umdam),
            _ => Err(Error::config("variant", format!("unknown variant `{s}`"))),
        }
    }
}

/// Which phase transitions pay for a re-layout in the baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelayoutPolicy {
    /// Before prefill and again before decode.
    #[default]
    BothTransitions,
    /// Before prefill only; decode reads the retained PIM copy.
    PrefillOnly,
    /// Never; both copies are assumed resident.
    None,
}

impl fmt::Display for RelayoutPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelayoutPolicy::BothTransitions => "both",
            RelayoutPolicy::PrefillOnly => "prefill-only",
            RelayoutPolicy::None => "none",
        })
    }
}

impl FromStr for RelayoutPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "both" | "both-transitions" => Ok(RelayoutPolicy::BothTransitions),
            "prefill-only" | "prefill" => Ok(RelayoutPolicy::PrefillOnly),
            "none" => Ok(RelayoutPolicy::None),
            _ => Err(Error::config(
                "relayout_policy",
                format!("unknown policy `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub variant: Variant,
    pub model: ModelSpec,
    pub prefill_len: u64,
    pub decode_len: u64,
    pub include_attention: bool,
    pub include_lm_head: bool,
    pub relayout_policy: RelayoutPolicy,
}

impl Scenario {
    pub fn new(variant: Variant, model: ModelSpec, prefill_len: u64, decode_len: u64) -> Self {
        Scenario {
            variant,
            model,
            prefill_len,
            decode_len,
            include_attention: true,
            include_lm_head: false,
            relayout_policy: RelayoutPolicy::default(),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Scenario {
            variant,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToNpu,
    ToPim,
}

/// Replay outcome of copying one matrix in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CopyCost {
    pub seconds: f64,
    pub cycles: u64,
    pub traffic_bytes: u64,
    pub row_hit_rate: f64,
    pub effective_bw_bytes_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    RelayoutToNpu,
    Prefill,
    RelayoutToPim,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownEntry {
    pub phase: Phase,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Matrices (or blocks) covered by this entry.
    pub count: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub npu_dram_bw_bytes_per_s: BTreeMap<Scheme, f64>,
    pub timing_peak_bw_bytes_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedup {
    pub ttft: f64,
    pub ttlt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub variant: Variant,
    pub model: String,
    pub prefill_len: u64,
    pub decode_len: u64,
    pub include_attention: bool,
    pub relayout_policy: RelayoutPolicy,
    pub weight_footprint_bytes: u64,
    pub relayout_traffic_bytes: u64,
    pub relayout_to_npu_s: f64,
    pub prefill_s: f64,
    pub relayout_to_pim_s: f64,
    pub decode_s: f64,
    pub ttft_s: f64,
    pub ttlt_s: f64,
    pub breakdown: Vec<BreakdownEntry>,
    pub calibration: Calibration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<Speedup>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub baseline: SimReport,
    pub umdam: SimReport,
    pub speedup: Speedup,
}

pub struct Simulator {
    system: SystemConfig,
    npu: NpuSpec,
    pim: PimSpec,
    exec: Exec,
    cache: Mutex<HashMap<(u64, u64, Direction), CopyCost>>,
}

impl Simulator {
    /// Validates the configuration and calibrates NPU bandwidth per scheme.
    pub fn new(system: SystemConfig, exec: Exec) -> Result<Self> {
        system.validate()?;
        let npu = system
            .npu
            .clone()
            .calibrate(&system.dram, &system.timing, &system.controller)?;
        let pim = system.pim_spec();
        Ok(Simulator {
            system,
            npu,
            pim,
            exec,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn system(&self) -> &SystemConfig {
        &self.system
    }

    pub fn npu(&self) -> &NpuSpec {
        &self.npu
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            npu_dram_bw_bytes_per_s: self.npu.achievable_dram_bw.clone(),
            timing_peak_bw_bytes_per_s: self.system.timing.peak_bw(&self.system.dram),
        }
    }

    /// Source (PIM-optimized) and destination (NPU tiles, conventional
    /// mapping) placements of one matrix.
    pub fn baseline_placements(&self, k: u64, n: u64) -> Result<(PimOptLayout, TiledLayout)> {
        let cfg = &self.system.dram;
        let pim = PimOptLayout::new(cfg, k, n, 0)?;
        let base = pim.rows_used() * cfg.total_banks() as u64 * cfg.row_size_bytes;
        let npu = TiledLayout::new(cfg, Scheme::Conventional, k, n, base)?;
        Ok((pim, npu))
    }

    /// Cost of copying a `k x n` matrix in one direction, memoized.
    pub fn copy_cost(&self, k: u64, n: u64, dir: Direction) -> Result<CopyCost> {
        if let Some(c) = self.cache.lock().expect("cache lock").get(&(k, n, dir)) {
            return Ok(*c);
        }
        let (pim, npu) = self.baseline_placements(k, n)?;
        let (from, to): (&dyn WeightLayout, &dyn WeightLayout) = match dir {
            Direction::ToNpu => (&pim, &npu),
            Direction::ToPim => (&npu, &pim),
        };
        let stream = relayout_stream(from, to)?;
        let r = replay_iter(
            &self.system.dram,
            &self.system.timing,
            &self.system.controller,
            stream.requests(),
        )?;
        let cost = CopyCost {
            seconds: r.seconds(&self.system.timing),
            cycles: r.total_cycles,
            traffic_bytes: stream.traffic_bytes(),
            row_hit_rate: r.row_hit_rate,
            effective_bw_bytes_per_s: r.effective_bw_bytes_per_s,
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert((k, n, dir), cost);
        Ok(cost)
    }

    /// Fills the copy-cost cache for every shape and direction the
    /// scenarios will need, spreading replays over the executor.
    pub fn precompute(&self, scenarios: &[Scenario]) -> Result<()> {
        let mut needed = Vec::new();
        for s in scenarios.iter().filter(|s| s.variant == Variant::Baseline) {
            let w = self.workload(s)?;
            for m in w.weight_matrices() {
                for dir in needed_directions(s) {
                    let key = (m.k, m.n, dir);
                    if !needed.contains(&key) {
                        needed.push(key);
                    }
                }
            }
        }
        // largest first so the long replays start early
        needed.sort_by_key(|&(k, n, _)| std::cmp::Reverse(k * n));
        self.exec
            .map(needed, |(k, n, dir)| self.copy_cost(k, n, dir).map(|_| ()))
            .into_iter()
            .collect()
    }

    fn workload(&self, s: &Scenario) -> Result<Workload> {
        let opts = ExpandOptions {
            include_attention: s.include_attention,
            include_lm_head: s.include_lm_head,
            element_size_bytes: self.system.dram.element_size_bytes,
            ..Default::default()
        };
        expand(&s.model, s.prefill_len, s.decode_len, opts)
    }

    pub fn run(&self, s: &Scenario) -> Result<SimReport> {
        let w = self.workload(s)?;
        let matrices = w.weight_matrices();
        let mut breakdown = Vec::new();
        let mut footprint = 0;
        let mut traffic = 0;
        let mut relayout = [0.0f64; 2];
        let mut prefill = 0.0;
        let mut decode_weights = 0.0;
        let npu_scheme = match s.variant {
            Variant::Baseline => Scheme::Conventional,
            Variant::Umdam => Scheme::Umdam,
        };

        for m in &matrices {
            let per_step = match s.variant {
                Variant::Baseline => {
                    let (pim, _) = self.baseline_placements(m.k, m.n)?;
                    footprint += pim.footprint_bytes() * m.count;
                    for (slot, dir) in [Direction::ToNpu, Direction::ToPim].into_iter().enumerate()
                    {
                        if !needed_directions(s).contains(&dir) {
                            continue;
                        }
                        let c = self.copy_cost(m.k, m.n, dir)?;
                        let secs = c.seconds * m.count as f64;
                        relayout[slot] += secs;
                        traffic += c.traffic_bytes * m.count;
                        breakdown.push(entry(phase_of(dir), m, secs));
                    }
                    pim_gemv_time(&self.pim, &pim, m.k, m.n)
                }
                Variant::Umdam => {
                    let plan = plan_layout(&self.system.dram, m.k, m.n, 0)?;
                    footprint += plan.footprint_bytes() * m.count;
                    pim_gemv_time(&self.pim, &plan, m.k, m.n)
                }
            };
            let t = npu_gemm_time(&self.npu, s.prefill_len, m.k, m.n, npu_scheme)? * m.count as f64;
            prefill += t;
            breakdown.push(entry(Phase::Prefill, m, t));
            if s.decode_len > 0 {
                let t = per_step * (m.count * s.decode_len) as f64;
                decode_weights += t;
                breakdown.push(entry(Phase::Decode, m, t));
            }
        }

        let mut decode = decode_weights;
        if s.include_attention && s.decode_len > 0 {
            let d = s.model.embedding_dim;
            let blocks = s.model.num_blocks as f64;
            let (mut score, mut context) = (0.0, 0.0);
            for step in 1..=s.decode_len {
                let ctx = w.context_len(step);
                score += pim_gemv_time_balanced(&self.pim, d, ctx);
                context += pim_gemv_time_balanced(&self.pim, ctx, d);
            }
            for (op, t) in [
                ("attn_score", score * blocks),
                ("attn_context", context * blocks),
            ] {
                decode += t;
                breakdown.push(BreakdownEntry {
                    phase: Phase::Decode,
                    op: op.to_string(),
                    k: None,
                    n: None,
                    count: s.model.num_blocks,
                    seconds: t,
                });
            }
        }

        let [to_npu, to_pim] = relayout;
        let ttft = to_npu + prefill;
        Ok(SimReport {
            variant: s.variant,
            model: s.model.name.clone(),
            prefill_len: s.prefill_len,
            decode_len: s.decode_len,
            include_attention: s.include_attention,
            relayout_policy: s.relayout_policy,
            weight_footprint_bytes: footprint,
            relayout_traffic_bytes: traffic,
            relayout_to_npu_s: to_npu,
            prefill_s: prefill,
            relayout_to_pim_s: to_pim,
            decode_s: decode,
            ttft_s: ttft,
            ttlt_s: ttft + to_pim + decode,
            breakdown,
            calibration: self.calibration(),
            speedup: None,
        })
    }

    /// Runs the scenario as both variants and fills in the speedups.
    pub fn run_pair(&self, s: &Scenario) -> Result<PairReport> {
        let mut baseline = self.run(&s.with_variant(Variant::Baseline))?;
        let mut umdam = self.run(&s.with_variant(Variant::Umdam))?;
        let speedup = Speedup {
            ttft: baseline.ttft_s / umdam.ttft_s,
            ttlt: baseline.ttlt_s / umdam.ttlt_s,
        };
        baseline.speedup = Some(speedup);
        umdam.speedup = Some(speedup);
        Ok(PairReport {
            baseline,
            umdam,
            speedup,
        })
    }

    pub fn sweep(&self, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
        if spec.models.is_empty() || spec.prefill_lens.is_empty() || spec.decode_lens.is_empty() {
            return Err(Error::config(
                "sweep",
                "model, prefill and decode sets must be nonempty",
            ));
        }
        let cells = spec.scenarios();
        self.precompute(&cells)?;
        self.exec
            .map(cells, |s| {
                self.run_pair(&s).map(|p| SweepRow::from_pair(&p))
            })
            .into_iter()
            .collect()
    }
}

fn needed_directions(s: &Scenario) -> Vec<Direction> {
    let mut dirs = Vec::new();
    if s.relayout_policy != RelayoutPolicy::None {
        dirs.push(Direction::ToNpu);
    }
    if s.relayout_policy == RelayoutPolicy::BothTransitions && s.decode_len > 0 {
        dirs.push(Direction::ToPim);
    }
    dirs
}

fn phase_of(dir: Direction) -> Phase {
    match dir {
        Direction::ToNpu => Phase::RelayoutToNpu,
        Direction::ToPim => Phase::RelayoutToPim,
    }
}

fn entry(phase: Phase, m: &WeightMatrix, seconds: f64) -> BreakdownEntry {
    BreakdownEntry {
        phase,
        op: m.layer.name().to_string(),
        k: Some(m.k),
        n: Some(m.n),
        count: m.count,
        seconds,
    }
}

/// Cartesian grid of paired runs.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub models: Vec<ModelSpec>,
    pub prefill_lens: Vec<u64>,
    pub decode_lens: Vec<u64>,
    pub include_attention: bool,
    pub relayout_policy: RelayoutPolicy,
}

impl SweepSpec {
    pub fn new(models: Vec<ModelSpec>, prefill_lens: Vec<u64>, decode_lens: Vec<u64>) -> Self {
        SweepSpec {
            models,
            prefill_lens,
            decode_lens,
            include_attention: true,
            relayout_policy: RelayoutPolicy::default(),
        }
    }

    /// TTFT across model sizes and prefill lengths, no decode.
    pub fn figure3() -> Self {
        Self::new(ModelSpec::builtins(), vec![128, 256, 512, 1024], vec![0])
    }

    /// TTLT for one model across prefill and decode lengths.
    pub fn figure4() -> Self {
        Self::new(
            vec![ModelSpec::builtin("opt-6.7b").expect("builtin model")],
            vec![128, 256, 512, 1024],
            vec![128, 256, 512, 1024, 2048],
        )
    }

    pub fn figure(n: u32) -> Result<Self> {
        match n {
            3 => Ok(Self::figure3()),
            4 => Ok(Self::figure4()),
            _ => Err(Error::config(
                "figure",
                format!("unknown figure {n}; expected 3 or 4"),
            )),
        }
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for m in &self.models {
            for &p in &self.prefill_lens {
                for &d in &self.decode_lens {
                    let mut s = Scenario::new(Variant::Baseline, m.clone(), p, d);
                    s.include_attention = self.include_attention;
                    s.relayout_policy = self.relayout_policy;
                    out.push(s);
                }
            }
        }
        out
    }
}

/// One paired (baseline, UMDAM) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub prefill_len: u64,
    pub decode_len: u64,
    pub include_attention: bool,
    pub relayout_policy: RelayoutPolicy,
    pub relayout_to_npu_s: f64,
    pub relayout_to_pim_s: f64,
    pub baseline_prefill_s: f64,
    pub baseline_decode_s: f64,
    pub baseline_ttft_s: f64,
    pub baseline_ttlt_s: f64,
    pub umdam_prefill_s: f64,
    pub umdam_decode_s: f64,
    pub umdam_ttft_s: f64,
    pub umdam_ttlt_s: f64,
    pub ttft_speedup: f64,
    pub ttlt_speedup: f64,
}

impl SweepRow {
    pub fn from_pair(p: &PairReport) -> Self {
        let (b, u) = (&p.baseline, &p.umdam);
        SweepRow {
            model: b.model.clone(),
            prefill_len: b.prefill_len,
            decode_len: b.decode_len,
            include_attention: b.include_attention,
            relayout_policy: b.relayout_policy,
            relayout_to_npu_s: b.relayout_to_npu_s,
            relayout_to_pim_s: b.relayout_to_pim_s,
            baseline_prefill_s: b.prefill_s,
            baseline_decode_s: b.decode_s,
            baseline_ttft_s: b.ttft_s,
            baseline_ttlt_s: b.ttlt_s,
            umdam_prefill_s: u.prefill_s,
            umdam_decode_s: u.decode_s,
            umdam_ttft_s: u.ttft_s,
            umdam_ttlt_s: u.ttlt_s,
            ttft_speedup: p.speedup.ttft,
            ttlt_speedup: p.speedup.ttlt,
        }
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
