use ndarray::{Array1, Array2};
use rand::Rng;

use super::ops::AttentionWeights;

fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-0.5..0.5))
}

/// `x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform_matrix(inputs, outputs, rng),
            bias: Array1::from_shape_fn(outputs, |_| rng.gen_range(-0.5..0.5)),
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

impl Norm {
    pub fn identity(width: usize) -> Self {
        Self {
            alpha: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub attention: AttentionWeights,
    pub attention_output: Linear,
    pub attention_norm: Norm,
    pub intermediate: Linear,
    pub output: Linear,
    pub output_norm: Norm,
}

/// Every trainable tensor of a toy network.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    pub word: Array2<f64>,
    pub position: Array2<f64>,
    pub token_type: Array2<f64>,
    pub embedding_norm: Norm,
    pub layers: Vec<EncoderWeights>,
    pub pooler: Linear,
}

/// Sizes needed to allocate a [`ToyWeights`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub depth: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub vocab: usize,
    pub positions: usize,
    pub token_types: usize,
}

impl ToyWeights {
    /// Linear weights, biases and tables uniform on (-1/2, 1/2); norms at
    /// `alpha = 1, beta = 0`.
    pub(crate) fn uniform(d: Dims, rng: &mut impl Rng) -> Self {
        let (h, i) = (d.hidden, d.intermediate);
        let word = uniform_matrix(d.vocab, h, rng);
        let position = uniform_matrix(d.positions, h, rng);
        let token_type = uniform_matrix(d.token_types, h, rng);
        let layers = (0..d.depth)
            .map(|_| EncoderWeights {
                attention: AttentionWeights {
                    query: Linear::uniform(h, h, rng),
                    key: Linear::uniform(h, h, rng),
                    value: Linear::uniform(h, h, rng),
                },
                attention_output: Linear::uniform(h, h, rng),
                attention_norm: Norm::identity(h),
                intermediate: Linear::uniform(h, i, rng),
                output: Linear::uniform(i, h, rng),
                output_norm: Norm::identity(h),
            })
            .collect();
        Self {
            word,
            position,
            token_type,
            embedding_norm: Norm::identity(h),
            layers,
            pooler: Linear::uniform(h, h, rng),
        }
    }

    /// All linear weights, biases and tables zero; norms at `alpha = 1,
    /// beta = 0`.
    pub(crate) fn zeros(d: Dims) -> Self {
        let (h, i) = (d.hidden, d.intermediate);
        Self {
            word: Array2::zeros((d.vocab, h)),
            position: Array2::zeros((d.positions, h)),
            token_type: Array2::zeros((d.token_types, h)),
            embedding_norm: Norm::identity(h),
            layers: (0..d.depth)
                .map(|_| EncoderWeights {
                    attention: AttentionWeights {
                        query: Linear::zeros(h, h),
                        key: Linear::zeros(h, h),
                        value: Linear::zeros(h, h),
                    },
                    attention_output: Linear::zeros(h, h),
                    attention_norm: Norm::identity(h),
                    intermediate: Linear::zeros(h, i),
                    output: Linear::zeros(i, h),
                    output_norm: Norm::identity(h),
                })
                .collect(),
            pooler: Linear::zeros(h, h),
        }
    }

    /// `(name, shape)` for every tensor, named like the cost model's shape
    /// list.
    pub fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        fn linear(out: &mut Vec<(String, Vec<usize>)>, p: &str, l: &Linear) {
            out.push((format!("{p}.weight"), l.weight.shape().to_vec()));
            out.push((format!("{p}.bias"), vec![l.bias.len()]));
        }
        fn norm(out: &mut Vec<(String, Vec<usize>)>, p: &str, n: &Norm) {
            out.push((format!("{p}.alpha"), vec![n.alpha.len()]));
            out.push((format!("{p}.beta"), vec![n.beta.len()]));
        }

        let mut out = vec![
            ("embeddings.word".to_string(), self.word.shape().to_vec()),
            (
                "embeddings.position".to_string(),
                self.position.shape().to_vec(),
            ),
            (
                "embeddings.token_type".to_string(),
                self.token_type.shape().to_vec(),
            ),
        ];
        norm(&mut out, "embeddings.norm", &self.embedding_norm);
        for (idx, layer) in self.layers.iter().enumerate() {
            let p = format!("encoder.{idx}");
            linear(
                &mut out,
                &format!("{p}.attention.query"),
                &layer.attention.query,
            );
            linear(
                &mut out,
                &format!("{p}.attention.key"),
                &layer.attention.key,
            );
            linear(
                &mut out,
                &format!("{p}.attention.value"),
                &layer.attention.value,
            );
            linear(
                &mut out,
                &format!("{p}.attention.output"),
                &layer.attention_output,
            );
            norm(
                &mut out,
                &format!("{p}.attention.norm"),
                &layer.attention_norm,
            );
            linear(&mut out, &format!("{p}.intermediate"), &layer.intermediate);
            linear(&mut out, &format!("{p}.output"), &layer.output);
            norm(&mut out, &format!("{p}.output.norm"), &layer.output_norm);
        }
        linear(&mut out, "pooler", &self.pooler);
        out
    }

    /// Total number of instantiated scalars, counted from the arrays.
    pub fn element_count(&self) -> usize {
        let linear = |l: &Linear| l.weight.len() + l.bias.len();
        let norm = |n: &Norm| n.alpha.len() + n.beta.len();
        let layers: usize = self
            .layers
            .iter()
            .map(|l| {
                linear(&l.attention.query)
                    + linear(&l.attention.key)
                    + linear(&l.attention.value)
                    + linear(&l.attention_output)
                    + norm(&l.attention_norm)
                    + linear(&l.intermediate)
                    + linear(&l.output)
                    + norm(&l.output_norm)
            })
            .sum();
        self.word.len()
            + self.position.len()
            + self.token_type.len()
            + norm(&self.embedding_norm)
            + layers
            + linear(&self.pooler)
    }

    pub(crate) fn all_finite(&self) -> bool {
        let mut finite = self.word.iter().all(|v| v.is_finite())
            && self.position.iter().all(|v| v.is_finite())
            && self.token_type.iter().all(|v| v.is_finite());
        let lin = |l: &Linear| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite());
        let nrm = |n: &Norm| n.alpha.iter().chain(n.beta.iter()).all(|v| v.is_finite());
        finite &= nrm(&self.embedding_norm) && lin(&self.pooler);
        for l in &self.layers {
            finite &= lin(&l.attention.query)
                && lin(&l.attention.key)
                && lin(&l.attention.value)
                && lin(&l.attention_output)
                && nrm(&l.attention_norm)
                && lin(&l.intermediate)
                && lin(&l.output)
                && nrm(&l.output_norm);
        }
        finite
    }
}
