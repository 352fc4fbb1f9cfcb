//! Cross-module equivalence checks.
//!
//! The closed-form counts are passed in through [`Formulas`] so a perturbed
//! formula can be substituted and the suite shown to catch it.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{enumerate, ArchParams, EmbeddingConfig, SearchSpace};
use crate::cost::{
    cost_breakdown, flop_count, layerwise_flop_sum, param_count, shape_oracle_params,
};
use crate::engine::{rank_candidates, w_coefficient, MetricMode, SearchConfig};
use crate::metrics::{LatencyUnit, MaxPoint, MetricTriple};
use crate::toynet::{gelu, kd_loss, normalize, ToyNet, ToyNetConfig, KD_TEMPERATURE, KD_WEIGHT};

/// The closed forms under test.
#[derive(Clone, Copy)]
pub struct Formulas {
    pub param_count: fn(&ArchParams, &EmbeddingConfig) -> u128,
    pub flop_count: fn(&ArchParams) -> u128,
}

impl Default for Formulas {
    fn default() -> Self {
        Self {
            param_count,
            flop_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Summary on success, first counterexample on failure.
    pub detail: String,
}

impl CheckResult {
    fn from(name: &'static str, outcome: Result<String, String>) -> Self {
        match outcome {
            Ok(detail) => Self {
                name,
                passed: true,
                detail,
            },
            Err(detail) => Self {
                name,
                passed: false,
                detail,
            },
        }
    }
}

/// Embedding tables exercised by the sweeps.
fn sweep_embeddings() -> [EmbeddingConfig; 2] {
    [EmbeddingConfig::roberta(), EmbeddingConfig::bert_cased()]
}

/// Twelve small architectures for the toy network.
pub fn toy_archs() -> Vec<(ArchParams, EmbeddingConfig)> {
    let shapes = [
        (2, 1, 1, 1, 1, 1),
        (2, 2, 8, 16, 32, 16),
        (2, 1, 4, 3, 5, 4),
        (2, 4, 8, 8, 11, 9),
        (4, 2, 6, 10, 7, 6),
        (4, 3, 9, 5, 13, 8),
        (2, 8, 16, 32, 40, 12),
        (6, 1, 5, 7, 3, 5),
        (4, 4, 4, 4, 4, 4),
        (2, 5, 10, 20, 50, 10),
        (8, 2, 2, 2, 2, 2),
        (2, 6, 12, 24, 17, 20),
    ];
    shapes
        .into_iter()
        .map(|(d, a, h, i, v, s)| {
            (
                ArchParams::new(d, a, h, i),
                EmbeddingConfig {
                    vocab: v,
                    typepos: s,
                    seq: s.min(8),
                    batch: 1,
                },
            )
        })
        .collect()
}

fn param_oracle_sweep(f: &Formulas) -> Result<String, String> {
    let grid = enumerate(&SearchSpace::paper_grid());
    for emb in sweep_embeddings() {
        for arch in &grid {
            let (formula, oracle) = ((f.param_count)(arch, &emb), shape_oracle_params(arch, &emb));
            if formula != oracle {
                return Err(format!(
                    "{arch} V={} S={}: closed form {formula} != shape oracle {oracle}",
                    emb.vocab, emb.typepos
                ));
            }
        }
    }
    Ok(format!("{} configs x 2 embedding tables agree", grid.len()))
}

fn flop_layer_sweep(f: &Formulas) -> Result<String, String> {
    let grid = enumerate(&SearchSpace::paper_grid());
    for arch in &grid {
        let (formula, oracle) = ((f.flop_count)(arch), layerwise_flop_sum(arch));
        if formula != oracle {
            return Err(format!(
                "{arch}: closed form {formula} != layer-wise sum {oracle}"
            ));
        }
    }
    Ok(format!("{} configs agree", grid.len()))
}

fn head_invariance(f: &Formulas) -> Result<String, String> {
    let emb = EmbeddingConfig::roberta();
    let mut compared = 0;
    for arch in enumerate(&SearchSpace::paper_grid()) {
        for heads in (1..=32).filter(|a| arch.hidden % a == 0) {
            let other = arch.with_heads(heads);
            if (f.param_count)(&arch, &emb) != (f.param_count)(&other, &emb)
                || (f.flop_count)(&arch) != (f.flop_count)(&other)
            {
                return Err(format!("{arch} and {other} differ"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} head substitutions leave counts unchanged"
    ))
}

fn breakdown_sums(f: &Formulas) -> Result<String, String> {
    let emb = EmbeddingConfig::roberta();
    for arch in enumerate(&SearchSpace::paper_grid()) {
        let b = cost_breakdown(&arch, &emb);
        if b.embedding_params + b.encoder_params + b.pooler_params != (f.param_count)(&arch, &emb)
            || b.embedding_flops + b.encoder_flops + b.pooler_flops != (f.flop_count)(&arch)
        {
            return Err(format!("{arch}: breakdown does not sum to the closed form"));
        }
    }
    Ok("components sum to totals".into())
}

fn toy_param_counts(f: &Formulas) -> Result<String, String> {
    let cases = toy_archs();
    for (arch, emb) in &cases {
        let net = ToyNet::new(ToyNetConfig::new(*arch, *emb, 1)).map_err(|e| e.to_string())?;
        let (built, formula) = (
            net.count_instantiated_params() as u128,
            (f.param_count)(arch, emb),
        );
        if built != formula {
            return Err(format!(
                "{arch} V={} S={}: instantiated {built} != closed form {formula}",
                emb.vocab, emb.typepos
            ));
        }
    }
    Ok(format!("{} toy networks agree", cases.len()))
}

fn random_triple(rng: &mut impl Rng, t: &MaxPoint) -> MetricTriple {
    MetricTriple {
        p_hat: rng.gen_range(0.0..t.p_hat),
        i_hat: rng.gen_range(1e-9..t.i_hat),
        unit: t.unit,
        e_hat: rng.gen_range(0.01..10.0),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn w_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let trials = 1_000;
    for _ in 0..trials {
        let t = MaxPoint {
            arch: ArchParams::ROBERTA_LARGE,
            p_hat: rng.gen_range(1.0..1e9),
            i_hat: rng.gen_range(1.0..1e9),
            unit: LatencyUnit::Flops,
        };
        let f = random_triple(&mut rng, &t);
        let w = |f: &MetricTriple, t: &MaxPoint| w_coefficient(f, t).map_err(|e| e.to_string());

        let at_t = MetricTriple {
            p_hat: t.p_hat,
            i_hat: t.i_hat,
            ..f
        };
        if w(&at_t, &t)? != 0.0 {
            return Err("W(T, T) != 0".into());
        }
        let base = w(&f, &t)?;
        if !(base > 0.0) && f.p_hat < t.p_hat && f.i_hat < t.i_hat {
            return Err(format!("W = {base} not positive for a dominated candidate"));
        }
        let k = rng.gen_range(0.01..100.0);
        let tp = MaxPoint {
            p_hat: t.p_hat * k,
            ..t
        };
        let fp = MetricTriple {
            p_hat: f.p_hat * k,
            ..f
        };
        if !close(w(&fp, &tp)?, base) {
            return Err(format!("parameter rescaling by {k} changed W"));
        }
        let ti = MaxPoint {
            i_hat: t.i_hat * k,
            ..t
        };
        let fi = MetricTriple {
            i_hat: f.i_hat * k,
            ..f
        };
        if !close(w(&fi, &ti)?, base) {
            return Err(format!("latency rescaling by {k} changed W"));
        }
        let fe = MetricTriple {
            e_hat: f.e_hat * k,
            ..f
        };
        if !close(w(&fe, &t)?, base / k) {
            return Err(format!("error rescaling by {k} did not divide W by {k}"));
        }
        let worse = MetricTriple {
            e_hat: f.e_hat * 1.5,
            ..f
        };
        if !(w(&worse, &t)? < base) {
            return Err("W not decreasing in e_hat".into());
        }
    }
    Ok(format!("{trials} random candidates"))
}

/// Selection sort on the raw formula, independent of the engine's ordering.
fn oracle_ranking(metrics: &BTreeMap<ArchParams, MetricTriple>, t: &MaxPoint) -> Vec<ArchParams> {
    let mut pool: Vec<(ArchParams, f64)> = metrics
        .iter()
        .filter(|(_, m)| m.p_hat <= t.p_hat && m.i_hat <= t.i_hat)
        .map(|(a, m)| {
            let w = (t.p_hat - m.p_hat) * (t.i_hat - m.i_hat) / (t.p_hat * t.i_hat * m.e_hat);
            (*a, w)
        })
        .collect();
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for j in 1..pool.len() {
            let (a, wa) = pool[j];
            let (b, wb) = pool[best];
            let key = |x: ArchParams| [x.depth, x.heads, x.hidden, x.intermediate];
            if wa > wb || (wa == wb && key(a) < key(b)) {
                best = j;
            }
        }
        out.push(pool.remove(best).0);
    }
    out
}

pub fn ranking_vs_oracle(sets: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = SearchSpace::new(vec![2, 4], vec![1, 2], vec![2, 4], vec![1, 2, 3]).unwrap();
    let archs = enumerate(&space);
    for set in 0..sets {
        let t = MaxPoint {
            arch: ArchParams::ROBERTA_LARGE,
            p_hat: 100.0,
            i_hat: 10.0,
            unit: LatencyUnit::Flops,
        };
        let metrics: BTreeMap<_, _> = archs
            .iter()
            .map(|a| {
                // some candidates land above the maximum point; coarse values force ties
                let m = MetricTriple {
                    p_hat: rng.gen_range(0..12) as f64 * 10.0,
                    i_hat: rng.gen_range(1..12) as f64,
                    unit: t.unit,
                    e_hat: rng.gen_range(1..4) as f64 * 0.5,
                };
                (*a, m)
            })
            .collect();
        let expected = oracle_ranking(&metrics, &t);
        let config = SearchConfig {
            space: space.clone(),
            epsilon: 1,
            maxpoint: t,
            emb: EmbeddingConfig::roberta(),
            metric_mode: MetricMode::Ingested,
            top_k: None,
            n_steps: 3,
        };
        let got = match rank_candidates(&config, &metrics) {
            Ok(r) => r.rows.iter().map(|c| c.arch).collect(),
            Err(crate::Error::NoCandidates) => Vec::new(),
            Err(e) => return Err(e.to_string()),
        };
        if got != expected {
            return Err(format!("set {set}: engine {got:?} != oracle {expected:?}"));
        }
    }
    Ok(format!("{sets} random metric sets"))
}

fn toy_invariants() -> Result<String, String> {
    let cfg = ToyNetConfig::new(
        ArchParams::new(2, 2, 8, 16),
        EmbeddingConfig {
            vocab: 32,
            typepos: 16,
            seq: 8,
            batch: 1,
        },
        7,
    );
    let net = ToyNet::new(cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..25 {
        let tokens = Array2::from_shape_fn((2, 8), |_| rng.gen_range(0..32));
        let a = net.forward_traced(&tokens).map_err(|e| e.to_string())?;
        if a.max_softmax_deviation > 1e-9 {
            return Err(format!("softmax row deviation {}", a.max_softmax_deviation));
        }
        if !(a.min_softmax_prob > 0.0) {
            return Err("softmax entry not positive".into());
        }
        if a.output.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err("forward output outside [-1, 1]".into());
        }
        let b = net.forward(&tokens).map_err(|e| e.to_string())?;
        if a.output
            .iter()
            .zip(b.iter())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err("repeated forward is not bitwise identical".into());
        }
    }
    let eps = cfg.layernorm_eps;
    for _ in 0..200 {
        let n = rng.gen_range(2..64);
        let x = Array1::from_shape_fn(n, |_| rng.gen_range(-3.0..3.0));
        let y = normalize(x.view(), eps);
        let mean = y.mean().unwrap();
        let var = y.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        if mean.abs() > 1e-6 || (var - 1.0).abs() > 1e-3 {
            return Err(format!("layer norm moments mean={mean} var={var}"));
        }
    }
    Ok("softmax, layer norm, bounds, determinism".into())
}

fn gelu_checks() -> Result<String, String> {
    if gelu(0.0) != 0.0 {
        return Err("gelu(0) != 0".into());
    }
    for k in 0..=920 {
        let x = 8.0 + k as f64 * 0.1;
        if (gelu(x) - x).abs() > 1e-6 || gelu(-x).abs() > 1e-6 {
            return Err(format!("gelu not saturated at +/-{x}"));
        }
    }
    let h = 1e-4;
    let deriv = |x: f64| (gelu(x + h) - gelu(x - h)) / (2.0 * h);
    let mut prev = deriv(-5.0);
    for k in 1..=100_000 {
        let x = -5.0 + k as f64 * h;
        let d = deriv(x);
        if (d - prev).abs() > 1e-3 {
            return Err(format!("derivative jumps by {} at {x}", (d - prev).abs()));
        }
        prev = d;
    }
    Ok("zero, saturation, continuous derivative".into())
}

fn kd_checks() -> Result<String, String> {
    for c in [2usize, 10, 100] {
        let logits = Array2::from_elem((4, c), 1.0);
        let loss = kd_loss(logits.view(), logits.view(), 0.0, KD_WEIGHT, KD_TEMPERATURE)
            .map_err(|e| e.to_string())?;
        if (loss - 0.5 * (c as f64).ln()).abs() > 1e-9 {
            return Err(format!("c={c}: {loss} != 0.5 ln c"));
        }
    }
    Ok("uniform identical logits give 0.5 ln c".into())
}

/// Runs every check; none short-circuits the others.
pub fn run_suite(f: &Formulas) -> Vec<CheckResult> {
    vec![
        CheckResult::from("param-oracle-sweep", param_oracle_sweep(f)),
        CheckResult::from("flop-layer-sweep", flop_layer_sweep(f)),
        CheckResult::from("head-invariance", head_invariance(f)),
        CheckResult::from("breakdown-sums", breakdown_sums(f)),
        CheckResult::from("toy-param-count", toy_param_counts(f)),
        CheckResult::from("w-properties", w_properties()),
        CheckResult::from("ranking-oracle", ranking_vs_oracle(1_000, 0xace)),
        CheckResult::from("toy-invariants", toy_invariants()),
        CheckResult::from("gelu", gelu_checks()),
        CheckResult::from("kd-loss", kd_checks()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in run_suite(&Formulas::default()) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    fn off_by_one(arch: &ArchParams, emb: &EmbeddingConfig) -> u128 {
        let p = param_count(arch, emb);
        if arch.intermediate == 768 {
            p + 1
        } else {
            p
        }
    }

    fn wrong_gelu_term(arch: &ArchParams) -> u128 {
        flop_count(arch) - 6 * (arch.intermediate as u128).pow(2) * arch.depth as u128
    }

    #[test]
    fn perturbed_formulas_are_caught() {
        let results = run_suite(&Formulas {
            param_count: off_by_one,
            flop_count: wrong_gelu_term,
        });
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        let sweep = failed
            .iter()
            .find(|r| r.name == "param-oracle-sweep")
            .unwrap();
        assert!(
            sweep.detail.starts_with("<2,4,512,768>"),
            "{}",
            sweep.detail
        );
        assert!(failed.iter().any(|r| r.name == "flop-layer-sweep"));
        assert!(failed.iter().any(|r| r.name == "breakdown-sums"));
    }
}
