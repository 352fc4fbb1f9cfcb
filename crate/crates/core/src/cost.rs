//! Parameter and FLOP counting for the BERT family.
//!
//! The closed forms are
//!
//! ```text
//! params(b) = D(4H^2 + 2HI + 9H + I) + H^2 + (V + S + 6)H
//! flops(b)  = D(4(2H - 1)H + H^2 + (2H - 1)I + 7I^2) + (2H - 1)H + 3H
//! ```
//!
//! with a linear layer `W in R^{m x n}` costing `mn + n` parameters and
//! `(2n - 1)m` FLOPs. Neither depends on the number of heads.
//!
//! All arithmetic is exact `u128`. Inputs are `u32`, so no term can overflow.
//!
//! # Shape oracle
//!
//! [`shape_oracle`] lists every trainable tensor of the functional pipeline
//! and [`shape_oracle_params`] sums their sizes. It never evaluates the
//! polynomial, so agreement with [`param_count`] is a real cross-check. The
//! tensor list is:
//!
//! | tensor                                   | shape    | count      |
//! |------------------------------------------|----------|------------|
//! | `embeddings.word`                        | V x H    | once       |
//! | `embeddings.position`                    | S x H    | once       |
//! | `embeddings.token_type`                  | 3 x H    | once       |
//! | `embeddings.norm.{alpha,beta}`           | H        | once       |
//! | `encoder.L.attention.{query,key,value,output}.{weight,bias}` | H x H, H | per layer |
//! | `encoder.L.attention.norm.{alpha,beta}`  | H        | per layer  |
//! | `encoder.L.intermediate.{weight,bias}`   | H x I, I | per layer  |
//! | `encoder.L.output.{weight,bias}`         | I x H, H | per layer  |
//! | `encoder.L.output.norm.{alpha,beta}`     | H        | per layer  |
//! | `pooler.{weight,bias}`                   | H x H, H | once       |
//!
//! Per layer that is `4H^2 + 2HI + 9H + I`. Outside the encoder it is
//! `H^2 + (V + S + 3 + 2 + 1)H`, i.e. the `(V + S + 6)H` group plus the
//! pooler weight. The three-row token-type table is what makes the
//! embedding tables alone come to `VH + SH + 3H`.

use serde::Serialize;

use crate::arch::{ArchParams, EmbeddingConfig};

/// Rows of the token-type embedding table.
pub const TOKEN_TYPE_ROWS: u64 = 3;

/// A linear layer `f(x) = xW + b` with `W in R^{m x n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: u64,
    pub cols: u64,
    pub has_bias: bool,
}

impl LayerShape {
    pub fn new(rows: u64, cols: u64) -> Self {
        assert!(rows >= 1 && cols >= 1, "layer dimensions must be positive");
        Self {
            rows,
            cols,
            has_bias: true,
        }
    }

    pub fn without_bias(self) -> Self {
        Self {
            has_bias: false,
            ..self
        }
    }
}

pub fn linear_params(shape: LayerShape) -> u128 {
    let (m, n) = (shape.rows as u128, shape.cols as u128);
    if shape.has_bias {
        m * n + n
    } else {
        m * n
    }
}

pub fn linear_flops(shape: LayerShape) -> u128 {
    let (m, n) = (shape.rows as u128, shape.cols as u128);
    (2 * n - 1) * m
}

fn dims(arch: &ArchParams) -> (u128, u128, u128) {
    (
        arch.depth as u128,
        arch.hidden as u128,
        arch.intermediate as u128,
    )
}

/// Parameters of a single encoder layer: `4H^2 + 2HI + 9H + I`.
pub fn encoder_layer_params(arch: &ArchParams) -> u128 {
    let (_, h, i) = dims(arch);
    4 * h * h + 2 * h * i + 9 * h + i
}

/// FLOPs of a single encoder layer: `4(2H - 1)H + H^2 + (2H - 1)I + 7I^2`.
pub fn encoder_layer_flops(arch: &ArchParams) -> u128 {
    let (_, h, i) = dims(arch);
    4 * (2 * h - 1) * h + h * h + (2 * h - 1) * i + 7 * i * i
}

pub fn param_count(arch: &ArchParams, emb: &EmbeddingConfig) -> u128 {
    let (d, h, _) = dims(arch);
    let (v, s) = (emb.vocab as u128, emb.typepos as u128);
    d * encoder_layer_params(arch) + h * h + (v + s + 6) * h
}

pub fn flop_count(arch: &ArchParams) -> u128 {
    let (d, h, _) = dims(arch);
    d * encoder_layer_flops(arch) + (2 * h - 1) * h + 3 * h
}

/// Size of the three lookup tables alone: `VH + SH + 3H`.
pub fn embedding_params(arch: &ArchParams, emb: &EmbeddingConfig) -> u128 {
    let h = arch.hidden as u128;
    emb.vocab as u128 * h + emb.typepos as u128 * h + 3 * h
}

/// Closed-form totals split into embedding, encoder and pooler groups.
///
/// The grouping follows the polynomial's terms rather than the tensor list:
/// the embedding group is the whole `(V + S + 6)H` term and carries the
/// additive `3H` FLOPs (lookups themselves cost nothing); the pooler is the
/// `H^2` weight with `(2H - 1)H` FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub embedding_params: u128,
    pub encoder_params: u128,
    pub pooler_params: u128,
    pub total_params: u128,
    pub embedding_flops: u128,
    pub encoder_flops: u128,
    pub pooler_flops: u128,
    pub total_flops: u128,
}

pub fn cost_breakdown(arch: &ArchParams, emb: &EmbeddingConfig) -> CostBreakdown {
    let (d, h, _) = dims(arch);
    let (v, s) = (emb.vocab as u128, emb.typepos as u128);

    let embedding_params = (v + s + 6) * h;
    let encoder_params = d * encoder_layer_params(arch);
    let pooler_params = h * h;
    let embedding_flops = 3 * h;
    let encoder_flops = d * encoder_layer_flops(arch);
    let pooler_flops = (2 * h - 1) * h;

    CostBreakdown {
        embedding_params,
        encoder_params,
        pooler_params,
        total_params: embedding_params + encoder_params + pooler_params,
        embedding_flops,
        encoder_flops,
        pooler_flops,
        total_flops: embedding_flops + encoder_flops + pooler_flops,
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<u64>,
}

impl TensorShape {
    fn new(name: impl Into<String>, dims: &[u64]) -> Self {
        Self {
            name: name.into(),
            dims: dims.to_vec(),
        }
    }

    pub fn numel(&self) -> u128 {
        self.dims.iter().map(|&d| d as u128).product()
    }
}

fn push_linear(out: &mut Vec<TensorShape>, prefix: &str, shape: LayerShape) {
    out.push(TensorShape::new(
        format!("{prefix}.weight"),
        &[shape.rows, shape.cols],
    ));
    if shape.has_bias {
        out.push(TensorShape::new(format!("{prefix}.bias"), &[shape.cols]));
    }
}

fn push_norm(out: &mut Vec<TensorShape>, prefix: &str, width: u64) {
    out.push(TensorShape::new(format!("{prefix}.alpha"), &[width]));
    out.push(TensorShape::new(format!("{prefix}.beta"), &[width]));
}

/// Every trainable tensor of the pipeline, in construction order.
pub fn shape_oracle(arch: &ArchParams, emb: &EmbeddingConfig) -> Vec<TensorShape> {
    let h = arch.hidden as u64;
    let i = arch.intermediate as u64;
    let mut out = vec![
        TensorShape::new("embeddings.word", &[emb.vocab as u64, h]),
        TensorShape::new("embeddings.position", &[emb.typepos as u64, h]),
        TensorShape::new("embeddings.token_type", &[TOKEN_TYPE_ROWS, h]),
    ];
    push_norm(&mut out, "embeddings.norm", h);
    for layer in 0..arch.depth {
        let p = format!("encoder.{layer}");
        for proj in ["query", "key", "value", "output"] {
            push_linear(
                &mut out,
                &format!("{p}.attention.{proj}"),
                LayerShape::new(h, h),
            );
        }
        push_norm(&mut out, &format!("{p}.attention.norm"), h);
        push_linear(
            &mut out,
            &format!("{p}.intermediate"),
            LayerShape::new(h, i),
        );
        push_linear(&mut out, &format!("{p}.output"), LayerShape::new(i, h));
        push_norm(&mut out, &format!("{p}.output.norm"), h);
    }
    push_linear(&mut out, "pooler", LayerShape::new(h, h));
    out
}

pub fn shape_oracle_params(arch: &ArchParams, emb: &EmbeddingConfig) -> u128 {
    shape_oracle(arch, emb).iter().map(TensorShape::numel).sum()
}

/// One additive FLOP term of an encoder layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopTerm {
    pub name: &'static str,
    pub flops: u128,
}

/// The encoder-layer FLOP terms, one per operation.
///
/// The four `H x H` projections are priced with [`linear_flops`]. The
/// score product, the intermediate term and the GeLU term are taken as
/// written in the closed form (`H^2`, `(2H - 1)I`, `7I^2`).
pub fn encoder_layer_flop_terms(arch: &ArchParams) -> Vec<FlopTerm> {
    let h = arch.hidden as u64;
    let i = arch.intermediate as u64;
    let hh = LayerShape::new(h, h);
    vec![
        FlopTerm {
            name: "attention.query",
            flops: linear_flops(hh),
        },
        FlopTerm {
            name: "attention.key",
            flops: linear_flops(hh),
        },
        FlopTerm {
            name: "attention.value",
            flops: linear_flops(hh),
        },
        FlopTerm {
            name: "attention.output",
            flops: linear_flops(hh),
        },
        FlopTerm {
            name: "attention.scores",
            flops: h as u128 * h as u128,
        },
        FlopTerm {
            name: "intermediate",
            flops: linear_flops(LayerShape::new(i, h)),
        },
        FlopTerm {
            name: "gelu",
            flops: 7 * i as u128 * i as u128,
        },
    ]
}

/// FLOPs accumulated layer by layer from [`encoder_layer_flop_terms`], plus
/// the pooler linear and the `3H` embedding adds.
pub fn layerwise_flop_sum(arch: &ArchParams) -> u128 {
    let h = arch.hidden as u64;
    let mut total = 3 * h as u128;
    for _ in 0..arch.depth {
        total += encoder_layer_flop_terms(arch)
            .iter()
            .map(|t| t.flops)
            .sum::<u128>();
    }
    total + linear_flops(LayerShape::new(h, h))
}

/// Encoder share of the cost relative to the input and output layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    pub breakdown: CostBreakdown,
    /// `encoder_params / (embedding_params + pooler_params)`
    pub param_ratio: f64,
    /// `encoder_flops / (embedding_flops + pooler_flops)`
    pub flop_ratio: f64,
}

pub fn dominance_report(arch: &ArchParams, emb: &EmbeddingConfig) -> DominanceReport {
    let b = cost_breakdown(arch, emb);
    DominanceReport {
        breakdown: b,
        param_ratio: b.encoder_params as f64 / (b.embedding_params + b.pooler_params) as f64,
        flop_ratio: b.encoder_flops as f64 / (b.embedding_flops + b.pooler_flops) as f64,
    }
}

/// Published figures for the top-ranked architecture that the closed form
/// does not reproduce. Surfaced next to the computed values.
pub fn discrepancy_note(arch: &ArchParams, emb: &EmbeddingConfig) -> Option<String> {
    let roberta = EmbeddingConfig::roberta();
    if *arch != ArchParams::BORT || emb.vocab != roberta.vocab || emb.typepos != roberta.typepos {
        return None;
    }
    Some(format!(
        "published figures for {arch} are 56.14M parameters with a 39M embedding layer; \
         the closed form gives {} total and {} for the embedding tables (identical to \
         RoBERTa-large's embedding). The formula is kept as computed.",
        param_count(arch, emb),
        embedding_params(arch, emb)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{enumerate, SearchSpace};
    use proptest::prelude::*;

    fn tiny() -> EmbeddingConfig {
        EmbeddingConfig::with_tables(1, 1)
    }

    #[test]
    fn linear_examples() {
        assert_eq!(linear_params(LayerShape::new(1, 1)), 2);
        assert_eq!(linear_params(LayerShape::new(1024, 768)), 787_200);
        assert_eq!(linear_params(LayerShape::new(3, 5).without_bias()), 15);
        assert_eq!(linear_flops(LayerShape::new(1, 1)), 1);
        assert_eq!(linear_flops(LayerShape::new(1024, 1024)), 2_096_128);
        assert_eq!(linear_flops(LayerShape::new(768, 1024)), 1_572_096);
    }

    #[test]
    fn param_count_examples() {
        let roberta = EmbeddingConfig::roberta();
        assert_eq!(
            param_count(&ArchParams::ROBERTA_LARGE, &roberta),
            355_361_792
        );
        assert_eq!(param_count(&ArchParams::new(2, 1, 1, 1), &tiny()), 41);
        assert_eq!(param_count(&ArchParams::BORT, &roberta), 76_161_024);
        assert_eq!(
            param_count(&ArchParams::BERT_BASE, &EmbeddingConfig::bert_cased()),
            108_311_040
        );
    }

    #[test]
    fn flop_count_examples() {
        assert_eq!(flop_count(&ArchParams::BORT), 62_635_008);
        assert_eq!(flop_count(&ArchParams::new(2, 1, 1, 1)), 30);
        assert_eq!(
            flop_count(&ArchParams::BORT),
            flop_count(&ArchParams::BORT.with_heads(4))
        );
    }

    #[test]
    fn embedding_examples() {
        let h1024 = ArchParams::ROBERTA_LARGE;
        assert_eq!(
            embedding_params(&h1024, &EmbeddingConfig::roberta()),
            52_000_768
        );
        assert_eq!(
            embedding_params(&h1024, &EmbeddingConfig::bert_cased()),
            30_219_264
        );
        assert_eq!(embedding_params(&ArchParams::new(2, 1, 1, 1), &tiny()), 5);
    }

    #[test]
    fn breakdown_examples() {
        let roberta = EmbeddingConfig::roberta();
        let b = cost_breakdown(&ArchParams::BORT, &roberta);
        assert_eq!(b.encoder_params, 23_108_608);
        assert_eq!(b.pooler_params, 1_048_576);
        assert_eq!(b.embedding_params, 52_003_840);
        assert_eq!(b.total_params, param_count(&ArchParams::BORT, &roberta));
        assert_eq!(b.total_flops, flop_count(&ArchParams::BORT));
        let b = cost_breakdown(&ArchParams::ROBERTA_LARGE, &roberta);
        assert_eq!(b.encoder_params, 302_309_376);
        assert_eq!(encoder_layer_params(&ArchParams::ROBERTA_LARGE), 12_596_224);
    }

    #[test]
    fn shape_oracle_examples() {
        assert_eq!(
            shape_oracle_params(&ArchParams::ROBERTA_LARGE, &EmbeddingConfig::roberta()),
            355_361_792
        );
        assert_eq!(
            shape_oracle_params(&ArchParams::new(2, 1, 1, 1), &tiny()),
            41
        );
        let emb = EmbeddingConfig::roberta();
        for arch in enumerate(&SearchSpace::paper_grid()) {
            assert_eq!(
                shape_oracle_params(&arch, &emb),
                param_count(&arch, &emb),
                "{arch}"
            );
        }
    }

    #[test]
    fn shape_oracle_names_are_unique() {
        let shapes = shape_oracle(&ArchParams::new(4, 2, 8, 16), &tiny());
        let mut names: Vec<_> = shapes.iter().map(|s| s.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
        // 5 embedding tensors, 16 per layer, 2 pooler
        assert_eq!(n, 5 + 4 * 16 + 2);
    }

    #[test]
    fn dominance_examples() {
        let roberta = EmbeddingConfig::roberta();
        let r = dominance_report(&ArchParams::ROBERTA_LARGE, &roberta);
        assert!((r.param_ratio - 302_309_376.0 / 53_052_416.0).abs() < 1e-12);
        assert!((r.param_ratio - 5.70).abs() < 0.005);
        let r = dominance_report(&ArchParams::BORT, &roberta);
        assert!((r.param_ratio - 0.4356).abs() < 0.001);
        for arch in enumerate(&SearchSpace::paper_grid()) {
            let r = dominance_report(&arch, &roberta);
            assert!(r.flop_ratio > 1.0, "{arch}");
        }
    }

    #[test]
    fn discrepancy_only_for_bort_with_roberta_tables() {
        let roberta = EmbeddingConfig::roberta();
        assert!(discrepancy_note(&ArchParams::BORT, &roberta).is_some());
        assert!(discrepancy_note(&ArchParams::BORT, &EmbeddingConfig::bert_cased()).is_none());
        assert!(discrepancy_note(&ArchParams::ROBERTA_LARGE, &roberta).is_none());
    }

    fn valid_arch() -> impl Strategy<Value = ArchParams> {
        (1u32..=8, 1u32..=16, 1u32..=64, 1u32..=4096)
            .prop_map(|(half_d, a, mult, i)| ArchParams::new(2 * half_d, a, a * mult, i))
    }

    fn emb() -> impl Strategy<Value = EmbeddingConfig> {
        (2u32..100_000, 1u32..2048).prop_map(|(v, s)| EmbeddingConfig::with_tables(v, s))
    }

    proptest! {
        #[test]
        fn oracle_matches_closed_form(arch in valid_arch(), emb in emb()) {
            prop_assert_eq!(shape_oracle_params(&arch, &emb), param_count(&arch, &emb));
            prop_assert_eq!(layerwise_flop_sum(&arch), flop_count(&arch));
            let b = cost_breakdown(&arch, &emb);
            prop_assert_eq!(b.total_params, param_count(&arch, &emb));
            prop_assert_eq!(b.total_flops, flop_count(&arch));
        }

        #[test]
        fn counts_ignore_heads(arch in valid_arch(), emb in emb(), a in 1u32..=16) {
            let other = arch.with_heads(a);
            prop_assert_eq!(param_count(&arch, &emb), param_count(&other, &emb));
            prop_assert_eq!(flop_count(&arch), flop_count(&other));
        }

        #[test]
        fn params_increase_in_each_dimension(arch in valid_arch(), emb in emb()) {
            let p = param_count(&arch, &emb);
            let deeper = ArchParams { depth: arch.depth + 2, ..arch };
            let wider = ArchParams { hidden: arch.hidden + arch.heads, ..arch };
            let fatter = ArchParams { intermediate: arch.intermediate + 1, ..arch };
            prop_assert!(param_count(&deeper, &emb) > p);
            prop_assert!(param_count(&wider, &emb) > p);
            prop_assert!(param_count(&fatter, &emb) > p);
        }
    }
}
