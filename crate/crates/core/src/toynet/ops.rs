use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::weights::{Linear, Norm};

/// Cubic coefficient of the tanh GeLU approximation, as used by the cost
/// model's FLOP accounting. The widely used value is `0.044715`; see
/// [`gelu_with_coeff`].
pub const GELU_CUBIC_COEFF: f64 = 0.44715;

pub fn gelu(x: f64) -> f64 {
    gelu_with_coeff(x, GELU_CUBIC_COEFF)
}

/// `x/2 * (1 + tanh(sqrt(2/pi) * (x + k x^3)))`
pub fn gelu_with_coeff(x: f64, k: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + k * x * x * x)).tanh())
}

/// `(x - mean) / sqrt(var + eps)` with the population variance.
pub fn normalize(x: ArrayView1<'_, f64>, eps: f64) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    x.mapv(|v| (v - mean) / denom)
}

pub fn layer_norm(
    x: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
    eps: f64,
) -> Array1<f64> {
    assert_eq!(x.len(), alpha.len(), "alpha length");
    assert_eq!(x.len(), beta.len(), "beta length");
    normalize(x, eps) * alpha + beta
}

pub(crate) fn layer_norm_rows(x: &Array2<f64>, norm: &Norm, eps: f64) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        dst.assign(&layer_norm(src, norm.alpha.view(), norm.beta.view(), eps));
    }
    out
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Weights of one self-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Output of [`attention`]: the `s x H` result and one `s x s` probability
/// matrix per head.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
}

/// Multi-head scaled dot-product attention over a single sequence.
///
/// Projections are full `H x H`; the softmax runs over blocks of width
/// `H / A` with scores divided by `sqrt(H / A)`.
pub fn attention(x: &Array2<f64>, w: &AttentionWeights, heads: usize) -> AttentionOutput {
    let hidden = x.ncols();
    assert!(
        heads > 0 && hidden % heads == 0,
        "hidden size must be divisible by heads"
    );
    let width = hidden / heads;
    let scale = (width as f64).sqrt();

    let q = w.query.apply(x);
    let k = w.key.apply(x);
    let v = w.value.apply(x);

    let mut output = Array2::zeros((x.nrows(), hidden));
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let cols = s![.., head * width..(head + 1) * width];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) / scale;
        let p = softmax_rows(scores.view());
        output.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    AttentionOutput { output, probs }
}

/// Largest `|row sum - 1|` over every row of every matrix.
pub fn max_row_sum_deviation<'a>(mats: impl IntoIterator<Item = &'a Array2<f64>>) -> f64 {
    mats.into_iter()
        .flat_map(|m| m.sum_axis(Axis(1)).into_iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(10.0), 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gelu(-10.0), 0.0, epsilon = 1e-6);
        for i in 0..1000 {
            let x = 8.0 + i as f64 * 0.1;
            assert!((gelu(x) - x).abs() <= 1e-6);
            assert!(gelu(-x).abs() <= 1e-6);
        }
    }

    #[test]
    fn gelu_derivative_has_no_jumps() {
        let h = 1e-4;
        let deriv = |x: f64| (gelu(x + h) - gelu(x - h)) / (2.0 * h);
        let mut prev = deriv(-5.0);
        let steps = (10.0 / h) as usize;
        for i in 1..=steps {
            let d = deriv(-5.0 + i as f64 * h);
            assert!((d - prev).abs() <= 1e-3, "jump at step {i}");
            prev = d;
        }
    }

    #[test]
    fn gelu_with_standard_coefficient_matches_known_value() {
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715)) = 0.8411919906...
        assert_abs_diff_eq!(
            gelu_with_coeff(1.0, 0.044715),
            0.841_191_990_6,
            epsilon = 1e-9
        );
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Array1::ones(4);
        let zeros = Array1::zeros(4);
        let c = array![3.0, 3.0, 3.0, 3.0];
        assert_eq!(layer_norm(c.view(), ones.view(), zeros.view(), 1e-5), zeros);

        let x = array![1.0, -1.0];
        let y = layer_norm(
            x.view(),
            array![1.0, 1.0].view(),
            array![0.0, 0.0].view(),
            1e-12,
        );
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-9);

        let beta = array![0.5, -2.0, 7.0, 0.0];
        let x = array![0.3, 9.0, -4.0, 1.5];
        assert_eq!(layer_norm(x.view(), zeros.view(), beta.view(), 1e-5), beta);
    }

    #[test]
    fn normalized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-5;
        for _ in 0..200 {
            let n = rng.gen_range(2..64);
            let scale = rng.gen_range(0.1..100.0);
            let x = Array1::from_shape_fn(n, |_| rng.gen_range(-scale..scale));
            let mean = x.mean().unwrap();
            let var = x.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let y = normalize(x.view(), eps);
            let ym = y.mean().unwrap();
            let yv = y.mapv(|v| (v - ym) * (v - ym)).mean().unwrap();
            assert!(ym.abs() <= 1e-6);
            // exact: var / (var + eps)
            assert_abs_diff_eq!(yv, var / (var + eps), epsilon = 1e-9);
            if var >= 1e3 * eps {
                assert!((yv - 1.0).abs() <= 1e-3);
            }
        }
    }

    fn zero_linear(n: usize) -> Linear {
        Linear::zeros(n, n)
    }

    #[test]
    fn singleton_sequence_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = AttentionWeights {
            query: Linear::uniform(4, 4, &mut rng),
            key: Linear::uniform(4, 4, &mut rng),
            value: Linear::uniform(4, 4, &mut rng),
        };
        let x = Array2::from_shape_fn((1, 4), |(_, j)| j as f64 - 1.5);
        let out = attention(&x, &w, 2);
        for p in &out.probs {
            assert_eq!(p.shape(), &[1, 1]);
            assert_abs_diff_eq!(p[[0, 0]], 1.0, epsilon = 1e-15);
        }
        let expected = w.value.apply(&x);
        for (a, b) in out.output.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform_attention() {
        let w = AttentionWeights {
            query: zero_linear(6),
            key: zero_linear(6),
            value: zero_linear(6),
        };
        let x = Array2::from_shape_fn((5, 6), |(i, j)| (i * j) as f64);
        let out = attention(&x, &w, 3);
        assert!(out.output.iter().all(|&v| v == 0.0));
        for p in &out.probs {
            assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn random_attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let w = AttentionWeights {
                query: Linear::uniform(8, 8, &mut rng),
                key: Linear::uniform(8, 8, &mut rng),
                value: Linear::uniform(8, 8, &mut rng),
            };
            let x = Array2::from_shape_fn((7, 8), |_| rng.gen_range(-2.0..2.0));
            let out = attention(&x, &w, 4);
            assert_eq!(out.output.shape(), &[7, 8]);
            assert!(max_row_sum_deviation(&out.probs) <= 1e-9);
            assert!(out.probs.iter().flatten().all(|&p| p > 0.0 && p <= 1.0));
        }
    }
}
