//! OPT model configurations and their per-phase GEMM/GEMV operations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Public OPT vocabulary size; only used when the LM head is included.
pub const OPT_VOCAB: u64 = 50272;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub embedding_dim: u64,
    pub head_dim: u64,
    pub num_heads: u64,
    pub num_blocks: u64,
    /// Nominal parameter count, informational.
    #[serde(default)]
    pub nominal_params: Option<f64>,
}

impl ModelSpec {
    fn opt(name: &str, d: u64, head_dim: u64, heads: u64, blocks: u64, params: f64) -> Self {
        ModelSpec {
            name: name.to_string(),
            embedding_dim: d,
            head_dim,
            num_heads: heads,
            num_blocks: blocks,
            nominal_params: Some(params),
        }
    }

    pub fn builtins() -> Vec<ModelSpec> {
        vec![
            Self::opt("opt-125m", 768, 64, 12, 12, 125e6),
            Self::opt("opt-1.3b", 2048, 64, 32, 24, 1.3e9),
            Self::opt("opt-6.7b", 4096, 128, 32, 32, 6.7e9),
            Self::opt("opt-30b", 7168, 128, 56, 48, 30e9),
        ]
    }

    pub fn builtin(name: &str) -> Result<ModelSpec> {
        let key = name.to_ascii_lowercase();
        Self::builtins()
            .into_iter()
            .find(|m| m.name == key)
            .ok_or_else(|| Error::config("model", format!("unknown model `{name}`")))
    }

    /// A built-in name, or a path to a JSON model description.
    pub fn resolve(name_or_path: &str) -> Result<ModelSpec> {
        if name_or_path.ends_with(".json") {
            let m: ModelSpec = serde_json::from_str(&std::fs::read_to_string(name_or_path)?)?;
            m.validate()?;
            Ok(m)
        } else {
            Self::builtin(name_or_path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.num_blocks == 0 {
            return Err(Error::config("model", "dimensions must be nonzero"));
        }
        if self.head_dim * self.num_heads != self.embedding_dim {
            return Err(Error::config(
                "model",
                format!(
                    "{}: head_dim x num_heads = {} != embedding_dim {}",
                    self.name,
                    self.head_dim * self.num_heads,
                    self.embedding_dim
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Qkv,
    OutProj,
    Fc1,
    Fc2,
    LmHead,
}

impl Layer {
    pub const BLOCK: [Layer; 4] = [Layer::Qkv, Layer::OutProj, Layer::Fc1, Layer::Fc2];

    /// `(K, N)`: reduction dimension and output width.
    pub fn dims(self, d: u64, vocab: u64) -> (u64, u64) {
        match self {
            Layer::Qkv => (d, 3 * d),
            Layer::OutProj => (d, d),
            Layer::Fc1 => (d, 4 * d),
            Layer::Fc2 => (4 * d, d),
            Layer::LmHead => (d, vocab),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Qkv => "qkv",
            Layer::OutProj => "out_proj",
            Layer::Fc1 => "fc1",
            Layer::Fc2 => "fc2",
            Layer::LmHead => "lm_head",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Gemm,
    Gemv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Npu,
    Pim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KvPart {
    /// q . K^T
    Score,
    /// p . V
    Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Operand {
    Weight { block: u64, layer: Layer },
    KvCache { block: u64, part: KvPart },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseOp {
    pub kind: OpKind,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub operand: Operand,
    pub engine: Engine,
}

impl PhaseOp {
    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.k as f64 * self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandOptions {
    pub include_attention: bool,
    pub include_lm_head: bool,
    pub vocab: u64,
    pub element_size_bytes: u64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions {
            include_attention: true,
            include_lm_head: false,
            vocab: OPT_VOCAB,
            element_size_bytes: 2,
        }
    }
}

/// One distinct weight shape and how many blocks carry it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WeightMatrix {
    pub layer: Layer,
    pub k: u64,
    pub n: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Workload {
    pub model: ModelSpec,
    pub prefill_len: u64,
    pub decode_len: u64,
    pub options: ExpandOptions,
    pub prefill: Vec<PhaseOp>,
    pub weight_footprint_bytes: u64,
}

pub fn expand(
    model: &ModelSpec,
    prefill_len: u64,
    decode_len: u64,
    opts: ExpandOptions,
) -> Result<Workload> {
    model.validate()?;
    if prefill_len == 0 {
        return Err(Error::config("prefill_len", "must be at least 1"));
    }
    let mut w = Workload {
        model: model.clone(),
        prefill_len,
        decode_len,
        options: opts,
        prefill: Vec::new(),
        weight_footprint_bytes: 0,
    };
    w.prefill = w.weight_ops(prefill_len, OpKind::Gemm, Engine::Npu);
    w.weight_footprint_bytes = w
        .weight_matrices()
        .iter()
        .map(|m| m.k * m.n * m.count * opts.element_size_bytes)
        .sum();
    Ok(w)
}

impl Workload {
    fn layers(&self) -> impl Iterator<Item = (u64, Layer)> + '_ {
        let blocks =
            (0..self.model.num_blocks).flat_map(|b| Layer::BLOCK.into_iter().map(move |l| (b, l)));
        let head = self
            .options
            .include_lm_head
            .then_some((self.model.num_blocks, Layer::LmHead));
        blocks.chain(head)
    }

    fn weight_ops(&self, m: u64, kind: OpKind, engine: Engine) -> Vec<PhaseOp> {
        let d = self.model.embedding_dim;
        self.layers()
            .map(|(block, layer)| {
                let (k, n) = layer.dims(d, self.options.vocab);
                PhaseOp {
                    kind,
                    m,
                    k,
                    n,
                    operand: Operand::Weight { block, layer },
                    engine,
                }
            })
            .collect()
    }

    pub fn weight_matrices(&self) -> Vec<WeightMatrix> {
        let d = self.model.embedding_dim;
        let mut out: Vec<WeightMatrix> = Layer::BLOCK
            .iter()
            .map(|&layer| {
                let (k, n) = layer.dims(d, self.options.vocab);
                WeightMatrix {
                    layer,
                    k,
                    n,
                    count: self.model.num_blocks,
                }
            })
            .collect();
        if self.options.include_lm_head {
            let (k, n) = Layer::LmHead.dims(d, self.options.vocab);
            out.push(WeightMatrix {
                layer: Layer::LmHead,
                k,
                n,
                count: 1,
            });
        }
        out
    }

    /// Context length seen by decode step `step` (1-based).
    pub fn context_len(&self, step: u64) -> u64 {
        self.prefill_len + step
    }

    /// Operations of decode step `step` in `1..=decode_len`.
    pub fn decode_step(&self, step: u64) -> Vec<PhaseOp> {
        if step == 0 || step > self.decode_len {
            return Vec::new();
        }
        let mut ops = self.weight_ops(1, OpKind::Gemv, Engine::Pim);
        if self.options.include_attention {
            let d = self.model.embedding_dim;
            let ctx = self.context_len(step);
            for block in 0..self.model.num_blocks {
                for (part, k, n) in [(KvPart::Score, d, ctx), (KvPart::Context, ctx, d)] {
                    ops.push(PhaseOp {
                        kind: OpKind::Gemv,
                        m: 1,
                        k,
                        n,
                        operand: Operand::KvCache { block, part },
                        engine: Engine::Pim,
                    });
                }
            }
        }
        ops
    }

    pub fn decode_steps(&self) -> impl Iterator<Item = Vec<PhaseOp>> + '_ {
        (1..=self.decode_len).map(|s| self.decode_step(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(name: &str) -> ModelSpec {
        ModelSpec::builtin(name).unwrap()
    }

    #[test]
    fn opt_125m_footprint() {
        let w = expand(&model("opt-125m"), 128, 0, ExpandOptions::default()).unwrap();
        assert_eq!(w.weight_footprint_bytes, 12 * 768 * 768 * 12 * 2);
        let mib = w.weight_footprint_bytes as f64 / (1u64 << 20) as f64;
        assert!((mib - 162.0).abs() < 0.5, "{mib}");
    }

    #[test]
    fn opt_30b_decode_step_shape() {
        let opts = ExpandOptions {
            include_attention: false,
            ..Default::default()
        };
        let w = expand(&model("opt-30b"), 128, 4, opts).unwrap();
        let step = w.decode_step(1);
        assert_eq!(step.len(), 4 * 48);
        assert!(step
            .iter()
            .all(|o| o.m == 1 && o.kind == OpKind::Gemv && o.engine == Engine::Pim));
    }

    #[test]
    fn no_decode_steps_when_d_is_zero() {
        let w = expand(&model("opt-1.3b"), 128, 0, ExpandOptions::default()).unwrap();
        assert_eq!(w.decode_steps().count(), 0);
        assert!(w.decode_step(1).is_empty());
    }

    #[test]
    fn prefill_ops_are_npu_gemms() {
        let w = expand(&model("opt-6.7b"), 512, 0, ExpandOptions::default()).unwrap();
        assert_eq!(w.prefill.len(), 4 * 32);
        let d = 4096;
        let first: Vec<_> = w.prefill[..4].iter().map(|o| (o.m, o.k, o.n)).collect();
        assert_eq!(
            first,
            [
                (512, d, 3 * d),
                (512, d, d),
                (512, d, 4 * d),
                (512, 4 * d, d)
            ]
        );
        assert!(w
            .prefill
            .iter()
            .all(|o| o.engine == Engine::Npu && o.kind == OpKind::Gemm));
    }

    #[test]
    fn footprint_tracks_parameter_count() {
        for m in ModelSpec::builtins() {
            let nominal = m.nominal_params.unwrap();
            let with_head = ExpandOptions {
                include_lm_head: true,
                ..Default::default()
            };
            let w = expand(&m, 1, 0, with_head).unwrap();
            let params = w.weight_footprint_bytes as f64 / 2.0;
            assert!(
                (params - nominal).abs() / nominal < 0.15,
                "{}: {params}",
                m.name
            );
            // transformer blocks alone are close for all but the smallest model
            if m.embedding_dim >= 2048 {
                let w = expand(&m, 1, 0, ExpandOptions::default()).unwrap();
                let params = w.weight_footprint_bytes as f64 / 2.0;
                assert!(
                    (params - nominal).abs() / nominal < 0.15,
                    "{}: {params}",
                    m.name
                );
            }
        }
        let w = expand(&model("opt-1.3b"), 1, 0, ExpandOptions::default()).unwrap();
        assert!((w.weight_footprint_bytes as f64 / 2.0 - 1.21e9).abs() < 0.01e9);
    }

    #[test]
    fn decode_flops_growth() {
        let w = expand(&model("opt-125m"), 64, 8, ExpandOptions::default()).unwrap();
        let flops = |ops: &[PhaseOp], kv: bool| -> f64 {
            ops.iter()
                .filter(|o| matches!(o.operand, Operand::KvCache { .. }) == kv)
                .map(PhaseOp::flops)
                .sum()
        };
        let steps: Vec<_> = w.decode_steps().collect();
        let weight: Vec<f64> = steps.iter().map(|s| flops(s, false)).collect();
        assert!(weight.windows(2).all(|x| x[0] == x[1]));
        let attn: Vec<f64> = steps.iter().map(|s| flops(s, true)).collect();
        let per_token = 2.0 * 2.0 * 768.0 * 12.0;
        for (s, a) in attn.iter().enumerate() {
            assert_eq!(*a, per_token * (64 + s as u64 + 1) as f64);
        }
    }

    #[test]
    fn invalid_models() {
        assert!(ModelSpec::builtin("opt-175b").is_err());
        let mut m = model("opt-125m");
        m.num_heads = 13;
        assert!(m.validate().is_err());
        assert!(expand(&model("opt-125m"), 0, 1, ExpandOptions::default()).is_err());
    }

    #[test]
    fn lm_head_knob() {
        let opts = ExpandOptions {
            include_lm_head: true,
            include_attention: false,
            ..Default::default()
        };
        let w = expand(&model("opt-125m"), 16, 1, opts).unwrap();
        assert_eq!(w.prefill.len(), 4 * 12 + 1);
        let last = w.decode_step(1).pop().unwrap();
        assert_eq!((last.k, last.n), (768, OPT_VOCAB));
    }
}
