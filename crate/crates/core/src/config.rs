//! The JSON run configuration shared by every subcommand.
//!
//! Every key is optional; omitted keys take the reference setup (RoBERTa
//! vocabulary, the 360-point grid, `epsilon = 2`, `n_steps = 3`, RoBERTa-large
//! as maximum point). Unknown keys are rejected.
//!
//! ```json
//! {
//!   "depths": [2, 4, 6, 8, 10, 12],
//!   "heads": [4, 8, 12, 16],
//!   "hiddens": [512, 768, 1024],
//!   "intermediates": [256, 512, 768, 1024, 3072],
//!   "epsilon": 2,
//!   "embedding": { "vocab": 50265, "typepos": 514, "seq": 512, "batch": 1024 },
//!   "maxpoint": { "arch": [24, 16, 1024, 4096], "latency_s": null },
//!   "metric_mode": "analytic",
//!   "error": { "constant": 1.0 },
//!   "top_k": null,
//!   "n_steps": 3,
//!   "toy": { "arch": [2, 2, 8, 16], "vocab": 32, "typepos": 16, "seq": 8,
//!            "dropout": 0.0, "layernorm_eps": 1e-5, "seed": 0 }
//! }
//! ```
//!
//! `error` is either `{"constant": e}` or `{"synthetic": {"c0": .., "c1": ..}}`
//! and is only used in analytic mode. In ingested mode the maximum point's
//! latency comes from `maxpoint.latency_s` or, failing that, from its line in
//! the measurement file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::arch::{ArchParams, EmbeddingConfig, SearchSpace};
use crate::cost::param_count;
use crate::engine::{MetricMode, SearchConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    ConstantError, ErrorProvider, LatencyUnit, MaxPoint, Measurements, SyntheticError,
};
use crate::toynet::{ToyNetConfig, DEFAULT_LAYERNORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorSpec {
    Constant(f64),
    Synthetic(SyntheticError),
}

impl ErrorSpec {
    pub fn provider(&self) -> Box<dyn ErrorProvider> {
        match *self {
            ErrorSpec::Constant(e) => Box::new(ConstantError(e)),
            ErrorSpec::Synthetic(s) => Box::new(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxPointSpec {
    pub arch: ArchParams,
    #[serde(default)]
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub arch: ArchParams,
    pub vocab: u32,
    pub typepos: u32,
    pub seq: u32,
    pub dropout: f64,
    pub layernorm_eps: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            arch: ArchParams::new(2, 2, 8, 16),
            vocab: 32,
            typepos: 16,
            seq: 8,
            dropout: 0.0,
            layernorm_eps: DEFAULT_LAYERNORM_EPS,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn net_config(&self) -> ToyNetConfig {
        ToyNetConfig {
            arch: self.arch,
            emb: EmbeddingConfig {
                vocab: self.vocab,
                typepos: self.typepos,
                seq: self.seq,
                batch: 1,
            },
            dropout: self.dropout,
            layernorm_eps: self.layernorm_eps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub depths: Vec<u32>,
    pub heads: Vec<u32>,
    pub hiddens: Vec<u32>,
    pub intermediates: Vec<u32>,
    pub epsilon: usize,
    pub embedding: EmbeddingConfig,
    pub maxpoint: MaxPointSpec,
    pub metric_mode: MetricMode,
    pub error: ErrorSpec,
    pub top_k: Option<usize>,
    pub n_steps: u32,
    pub toy: ToySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = SearchSpace::paper_grid();
        Self {
            depths: grid.depths().to_vec(),
            heads: grid.heads().to_vec(),
            hiddens: grid.hiddens().to_vec(),
            intermediates: grid.intermediates().to_vec(),
            epsilon: 2,
            embedding: EmbeddingConfig::roberta(),
            maxpoint: MaxPointSpec {
                arch: ArchParams::ROBERTA_LARGE,
                latency_s: None,
            },
            metric_mode: MetricMode::Analytic,
            error: ErrorSpec::Constant(1.0),
            top_k: None,
            n_steps: 3,
            toy: ToySpec::default(),
        }
    }
}

/// Sets `dotted.key = value` inside a JSON object. `value` is parsed as JSON
/// when possible and taken as a string otherwise.
fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.into()));
    let mut cursor = root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (idx, part) in parts.iter().enumerate() {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{key}`: `{part}` is not inside an object"
            ))
        })?;
        if idx + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!(
        "override `{assignment}` has an empty key"
    )))
}

impl RunConfig {
    /// Parses configuration text, then applies `key=value` overrides on top of
    /// the text merged with the defaults.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if !value.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        if !overrides.is_empty() {
            // Fill in defaults first so a dotted key can reach into a nested
            // section the file leaves out.
            let base: RunConfig =
                serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
            value = serde_json::to_value(base).expect("serializable");
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads `path` if given, otherwise starts from the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => "{}".to_string(),
        };
        Self::parse(&text, overrides).map_err(|e| match (path, e) {
            (Some(p), Error::Config(msg)) => Error::Config(format!("{}: {msg}", p.display())),
            (_, e) => e,
        })
    }

    fn check(&self) -> Result<()> {
        self.search_space()?;
        self.embedding.validate()?;
        if self.epsilon < 1 {
            return Err(Error::Config("epsilon must be at least 1".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        SearchSpace::new(
            self.depths.clone(),
            self.heads.clone(),
            self.hiddens.clone(),
            self.intermediates.clone(),
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves the maximum point for the configured metric mode.
    pub fn resolve_maxpoint(&self, measurements: Option<&Measurements>) -> Result<MaxPoint> {
        let arch = self.maxpoint.arch.checked()?;
        match self.metric_mode {
            MetricMode::Analytic => {
                if self.maxpoint.latency_s.is_some() {
                    return Err(Error::Config(
                        "maxpoint.latency_s only applies in ingested mode".into(),
                    ));
                }
                MaxPoint::analytic(arch, &self.embedding)
            }
            MetricMode::Ingested => {
                let latency = match self.maxpoint.latency_s {
                    Some(l) => l,
                    None => measurements
                        .and_then(|m| m.get(&arch))
                        .map(|t| t.i_hat)
                        .ok_or(Error::MissingMetric(arch))?,
                };
                MaxPoint::new(
                    arch,
                    param_count(&arch, &self.embedding) as f64,
                    latency,
                    LatencyUnit::SecondsPerSample,
                )
            }
        }
    }

    pub fn search_config(&self, measurements: Option<&Measurements>) -> Result<SearchConfig> {
        Ok(SearchConfig {
            space: self.search_space()?,
            epsilon: self.epsilon,
            maxpoint: self.resolve_maxpoint(measurements)?,
            emb: self.embedding,
            metric_mode: self.metric_mode,
            top_k: self.top_k,
            n_steps: self.n_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_reference_setup() {
        let c = RunConfig::parse("{}", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.search_space().unwrap(), SearchSpace::paper_grid());
        assert_eq!(c.epsilon, 2);
        assert_eq!(c.n_steps, 3);
        assert_eq!(c.embedding.vocab, 50_265);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse(r#"{"depthz":[2]}"#, &[]).unwrap_err();
        assert!(err.to_string().contains("depthz"), "{err}");
        let err = RunConfig::parse(r#"{"embedding":{"vocabulary":3}}"#, &[]).unwrap_err();
        assert!(err.to_string().contains("vocabulary"), "{err}");
        assert!(RunConfig::parse("{}", &["nope=1".into()]).is_err());
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = RunConfig::parse("{\n  \"epsilon\": ,\n}", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn overrides_apply_nested() {
        let c = RunConfig::parse(
            r#"{"epsilon": 1}"#,
            &[
                "top_k=3".into(),
                "embedding.vocab=28996".into(),
                "error={\"synthetic\":{\"c0\":0.1,\"c1\":1e7}}".into(),
                "metric_mode=ingested".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.top_k, Some(3));
        assert_eq!(c.embedding.vocab, 28_996);
        assert_eq!(c.embedding.typepos, 514);
        assert_eq!(c.metric_mode, MetricMode::Ingested);
        assert!(matches!(c.error, ErrorSpec::Synthetic(_)));
    }

    #[test]
    fn override_reaches_into_default_section() {
        let c = RunConfig::parse("{}", &["maxpoint.latency_s=6.17".into()]).unwrap();
        assert_eq!(c.maxpoint.arch, ArchParams::ROBERTA_LARGE);
        assert_eq!(c.maxpoint.latency_s, Some(6.17));
        let c = RunConfig::parse("{}", &["toy.seed=9".into()]).unwrap();
        assert_eq!(c.toy.seed, 9);
        assert_eq!(c.toy.arch, ToySpec::default().arch);
    }

    #[test]
    fn unknown_override_key_rejected() {
        assert!(RunConfig::parse("{}", &["embedding.vocabulary=3".into()]).is_err());
        assert!(RunConfig::parse(r#"{"depth": [2]}"#, &["epsilon=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse(r#"{"epsilon": 0}"#, &[]).is_err());
        assert!(RunConfig::parse(r#"{"top_k": 0}"#, &[]).is_err());
        assert!(RunConfig::parse(r#"{"depths": []}"#, &[]).is_err());
        assert!(RunConfig::parse(r#"{"heads": [8, 4]}"#, &[]).is_err());
        assert!(RunConfig::parse("[]", &[]).is_err());
    }

    #[test]
    fn maxpoint_resolution() {
        let c = RunConfig::default();
        let t = c.resolve_maxpoint(None).unwrap();
        assert_eq!(t.p_hat, 355_361_792.0);
        assert_eq!(t.unit, LatencyUnit::Flops);

        let mut c = RunConfig::default();
        c.metric_mode = MetricMode::Ingested;
        assert!(matches!(
            c.resolve_maxpoint(None),
            Err(Error::MissingMetric(_))
        ));
        c.maxpoint.latency_s = Some(6.17);
        let t = c.resolve_maxpoint(None).unwrap();
        assert_eq!(t.i_hat, 6.17);
        assert_eq!(t.unit, LatencyUnit::SecondsPerSample);

        let mut c = RunConfig::default();
        c.maxpoint.latency_s = Some(1.0);
        assert!(matches!(c.resolve_maxpoint(None), Err(Error::Config(_))));
    }
}
