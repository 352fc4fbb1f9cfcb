//! Desk-scale forward implementation of the BERT pipeline.
//!
//! ```text
//! BERT(x) = pooler(l_{D-1}(... l_0(input(x)) ...))
//! input(x) = N(R(V[x] + V'[x'] + V''[x'']))
//! m(x)     = N(R(W_{H,H}(R(attn(x)))) + x)
//! l(x)     = N(R(W_{I,H}(GeLU(W_{H,I}(m(x)))) + m(x)))
//! pooler   = tanh(W_{H,H}(x))
//! ```
//!
//! Dropout `R` is the identity at evaluation time. Position indices are
//! `0..s` and every token-type index is `0`.
//!
//! The network exists to witness the cost model: its instantiated element
//! count must equal the closed-form parameter count, and its numerics must
//! satisfy the usual softmax / layer-norm / boundedness invariants. There is
//! no backward pass.

mod loss;
mod ops;
mod weights;

pub use loss::{distillation_cross_entropy, kd_loss, KD_TEMPERATURE, KD_WEIGHT};
pub use ops::{
    attention, gelu, gelu_with_coeff, layer_norm, max_row_sum_deviation, normalize, softmax_rows,
    AttentionOutput, AttentionWeights, GELU_CUBIC_COEFF,
};
pub use weights::{EncoderWeights, Linear, Norm, ToyWeights};

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchParams, EmbeddingConfig};
use crate::cost::TOKEN_TYPE_ROWS;
use crate::error::{Error, Result};
use ops::layer_norm_rows;
use weights::Dims;

pub const DEFAULT_LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    pub arch: ArchParams,
    pub emb: EmbeddingConfig,
    /// Dropout probability. Recorded, but forward runs in evaluation mode.
    pub dropout: f64,
    pub layernorm_eps: f64,
    pub seed: u64,
}

impl ToyNetConfig {
    pub fn new(arch: ArchParams, emb: EmbeddingConfig, seed: u64) -> Self {
        Self {
            arch,
            emb,
            dropout: 0.0,
            layernorm_eps: DEFAULT_LAYERNORM_EPS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.checked()?;
        // A one-token vocabulary is allowed here so degenerate nets can be built.
        let e = &self.emb;
        if e.vocab < 1 || e.typepos < 1 || e.seq < 1 || e.batch < 1 {
            return Err(Error::Config(
                "vocab, typepos, seq and batch must all be positive".into(),
            ));
        }
        if self.emb.seq > self.emb.typepos {
            return Err(Error::Config(format!(
                "sequence length {} exceeds the position table size {}",
                self.emb.seq, self.emb.typepos
            )));
        }
        if !(self.layernorm_eps > 0.0 && self.layernorm_eps.is_finite()) {
            return Err(Error::Config(format!(
                "layernorm_eps must be positive, got {}",
                self.layernorm_eps
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims {
            depth: self.arch.depth as usize,
            hidden: self.arch.hidden as usize,
            intermediate: self.arch.intermediate as usize,
            vocab: self.emb.vocab as usize,
            positions: self.emb.typepos as usize,
            token_types: TOKEN_TYPE_ROWS as usize,
        }
    }
}

/// An instantiated network. Immutable once built; `forward` takes `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    config: ToyNetConfig,
    pub weights: ToyWeights,
}

/// Forward output together with the attention diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `z x s x H`
    pub output: Array3<f64>,
    /// Largest `|row sum - 1|` over every attention probability matrix.
    pub max_softmax_deviation: f64,
    /// Smallest attention probability seen.
    pub min_softmax_prob: f64,
}

impl ToyNet {
    /// Seeded uniform initialization.
    pub fn new(config: ToyNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            weights: ToyWeights::uniform(config.dims(), &mut rng),
            config,
        })
    }

    /// Zero tables and linears, identity norms.
    pub fn zeros(config: ToyNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            weights: ToyWeights::zeros(config.dims()),
            config,
        })
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.config
    }

    pub fn count_instantiated_params(&self) -> usize {
        self.weights.element_count()
    }

    pub fn forward(&self, tokens: &Array2<usize>) -> Result<Array3<f64>> {
        self.forward_traced(tokens).map(|t| t.output)
    }

    pub fn forward_traced(&self, tokens: &Array2<usize>) -> Result<ForwardTrace> {
        let (batch, seq) = tokens.dim();
        if batch == 0 || seq == 0 {
            return Err(Error::ShapeMismatch(
                "token matrix must be non-empty".into(),
            ));
        }
        if seq > self.config.emb.typepos as usize {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {seq} exceeds the position table size {}",
                self.config.emb.typepos
            )));
        }
        if let Some(((row, col), &id)) = tokens
            .indexed_iter()
            .find(|(_, &id)| id >= self.config.emb.vocab as usize)
        {
            return Err(Error::TokenOutOfRange {
                row,
                col,
                id,
                vocab: self.config.emb.vocab,
            });
        }
        if !self.weights.all_finite() {
            return Err(Error::Invariant("network weights are not finite".into()));
        }

        let hidden = self.config.arch.hidden as usize;
        let mut output = Array3::zeros((batch, seq, hidden));
        let mut max_dev = 0.0_f64;
        let mut min_prob = f64::INFINITY;
        for (b, row) in tokens.rows().into_iter().enumerate() {
            let ids: Vec<usize> = row.to_vec();
            let (pooled, dev, minp) = self.forward_sequence(&ids);
            max_dev = max_dev.max(dev);
            min_prob = min_prob.min(minp);
            output.slice_mut(s![b, .., ..]).assign(&pooled);
        }
        Ok(ForwardTrace {
            output,
            max_softmax_deviation: max_dev,
            min_softmax_prob: min_prob,
        })
    }

    fn forward_sequence(&self, ids: &[usize]) -> (Array2<f64>, f64, f64) {
        let w = &self.weights;
        let eps = self.config.layernorm_eps;
        let heads = self.config.arch.heads as usize;
        let hidden = self.config.arch.hidden as usize;

        let mut x = Array2::zeros((ids.len(), hidden));
        for (pos, &id) in ids.iter().enumerate() {
            let e = &w.word.row(id) + &w.position.row(pos) + &w.token_type.row(0);
            x.row_mut(pos).assign(&e);
        }
        x = layer_norm_rows(&x, &w.embedding_norm, eps);

        let mut max_dev = 0.0_f64;
        let mut min_prob = f64::INFINITY;
        for layer in &w.layers {
            let attn = attention(&x, &layer.attention, heads);
            max_dev = max_dev.max(max_row_sum_deviation(&attn.probs));
            min_prob = attn.probs.iter().flatten().fold(min_prob, |m, &p| m.min(p));

            let m = layer_norm_rows(
                &(layer.attention_output.apply(&attn.output) + &x),
                &layer.attention_norm,
                eps,
            );
            let inner = layer.intermediate.apply(&m).mapv(gelu);
            x = layer_norm_rows(&(layer.output.apply(&inner) + &m), &layer.output_norm, eps);
        }

        (w.pooler.apply(&x).mapv(f64::tanh), max_dev, min_prob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{param_count, shape_oracle};
    use ndarray::Array2;
    use rand::Rng;

    fn small(arch: ArchParams, vocab: u32, typepos: u32, seq: u32) -> ToyNetConfig {
        let emb = EmbeddingConfig {
            vocab,
            typepos,
            seq,
            batch: 1,
        };
        ToyNetConfig::new(arch, emb, 42)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ToyNet::zeros(small(ArchParams::new(2, 2, 4, 8), 8, 4, 1)).unwrap();
        let out = net.forward(&Array2::zeros((1, 1))).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_linears_with_arbitrary_alpha_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = ToyNet::zeros(small(ArchParams::new(2, 2, 8, 16), 32, 16, 8)).unwrap();
        let mut trng = ChaCha8Rng::seed_from_u64(4);
        net.weights.word.mapv_inplace(|_| trng.gen_range(-1.0..1.0));
        for layer in &mut net.weights.layers {
            layer
                .attention_norm
                .alpha
                .mapv_inplace(|_| rng.gen_range(-3.0..3.0));
            layer
                .output_norm
                .alpha
                .mapv_inplace(|_| rng.gen_range(-3.0..3.0));
        }
        let tokens = Array2::from_shape_fn((2, 8), |(i, j)| (i * 8 + j) % 32);
        let out = net.forward(&tokens).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn seeded_forward_shape_bounds_and_determinism() {
        let net = ToyNet::new(small(ArchParams::new(2, 2, 8, 16), 32, 16, 8)).unwrap();
        let tokens = Array2::from_shape_fn((1, 8), |(_, j)| (j * 5) % 32);
        let a = net.forward_traced(&tokens).unwrap();
        assert_eq!(a.output.shape(), &[1, 8, 8]);
        assert!(a.output.iter().all(|v| v.abs() <= 1.0));
        assert!(a.max_softmax_deviation <= 1e-9);
        assert!(a.min_softmax_prob > 0.0);
        let b = net.forward(&tokens).unwrap();
        assert!(a
            .output
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let rebuilt = ToyNet::new(*net.config()).unwrap();
        assert_eq!(rebuilt, net);
    }

    #[test]
    fn instantiated_count_matches_closed_form() {
        let cfg = small(ArchParams::new(2, 2, 8, 16), 32, 16, 8);
        let net = ToyNet::new(cfg).unwrap();
        assert_eq!(net.count_instantiated_params(), 1_696);
        assert_eq!(
            net.count_instantiated_params() as u128,
            param_count(&cfg.arch, &cfg.emb)
        );

        let cfg = small(ArchParams::new(2, 1, 1, 1), 1, 1, 1);
        let net = ToyNet::new(cfg).unwrap();
        assert_eq!(net.count_instantiated_params(), 41);
    }

    #[test]
    fn tensor_names_and_shapes_match_shape_list() {
        let cfg = small(ArchParams::new(4, 2, 8, 12), 20, 10, 5);
        let net = ToyNet::new(cfg).unwrap();
        let ours = net.weights.named_shapes();
        let oracle = shape_oracle(&cfg.arch, &cfg.emb);
        assert_eq!(ours.len(), oracle.len());
        for ((name, dims), expected) in ours.iter().zip(&oracle) {
            assert_eq!(name, &expected.name);
            let dims: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
            assert_eq!(dims, expected.dims, "{name}");
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let net = ToyNet::new(small(ArchParams::new(2, 2, 8, 16), 32, 16, 8)).unwrap();
        let mut tokens = Array2::zeros((1, 4));
        tokens[[0, 2]] = 32;
        assert!(matches!(
            net.forward(&tokens),
            Err(Error::TokenOutOfRange {
                row: 0,
                col: 2,
                id: 32,
                ..
            })
        ));
        assert!(net.forward(&Array2::zeros((1, 17))).is_err());
        assert!(ToyNet::new(small(ArchParams::new(2, 3, 8, 16), 32, 16, 8)).is_err());
        assert!(ToyNet::new(small(ArchParams::new(2, 2, 8, 16), 32, 4, 8)).is_err());
        let mut cfg = small(ArchParams::new(2, 2, 8, 16), 32, 16, 8);
        cfg.layernorm_eps = 0.0;
        assert!(ToyNet::new(cfg).is_err());
        cfg.layernorm_eps = 1e-5;
        cfg.dropout = 1.0;
        assert!(ToyNet::new(cfg).is_err());
    }
}
