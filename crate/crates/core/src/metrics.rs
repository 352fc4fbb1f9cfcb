//! Surrogate metrics: parameter size, latency and error per candidate.
//!
//! Parameter size always comes from the closed form. Latency is either the
//! analytic FLOP count or a measured mean read from a measurement file, and
//! the unit travels with the value so the two are never compared. The error
//! surrogate comes from an [`ErrorProvider`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::arch::{validate, ArchParams, EmbeddingConfig};
use crate::cost::{flop_count, param_count};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyUnit {
    SecondsPerSample,
    Flops,
}

impl fmt::Display for LatencyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatencyUnit::SecondsPerSample => "s/sample",
            LatencyUnit::Flops => "flops",
        })
    }
}

/// Surrogate parameter size, latency and error of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub p_hat: f64,
    pub i_hat: f64,
    pub unit: LatencyUnit,
    pub e_hat: f64,
}

impl MetricTriple {
    pub fn new(p_hat: f64, i_hat: f64, unit: LatencyUnit, e_hat: f64) -> Result<Self> {
        if !(p_hat.is_finite() && p_hat >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "parameter size must be finite and non-negative, got {p_hat}"
            )));
        }
        if !(i_hat.is_finite() && i_hat > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "latency must be finite and positive, got {i_hat}"
            )));
        }
        if !(e_hat.is_finite() && e_hat > 0.0) {
            return Err(Error::ErrorDomain(e_hat));
        }
        Ok(Self {
            p_hat,
            i_hat,
            unit,
            e_hat,
        })
    }
}

/// The reference architecture `T` all candidates are scalarized against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxPoint {
    pub arch: ArchParams,
    pub p_hat: f64,
    pub i_hat: f64,
    pub unit: LatencyUnit,
}

impl MaxPoint {
    pub fn new(arch: ArchParams, p_hat: f64, i_hat: f64, unit: LatencyUnit) -> Result<Self> {
        if !(p_hat.is_finite() && p_hat > 0.0 && i_hat.is_finite() && i_hat > 0.0) {
            return Err(Error::InvalidMaxPoint);
        }
        Ok(Self {
            arch,
            p_hat,
            i_hat,
            unit,
        })
    }

    /// Closed-form parameter count and FLOPs of `arch`.
    pub fn analytic(arch: ArchParams, emb: &EmbeddingConfig) -> Result<Self> {
        let arch = arch.checked()?;
        Self::new(
            arch,
            param_count(&arch, emb) as f64,
            flop_count(&arch) as f64,
            LatencyUnit::Flops,
        )
    }
}

/// Source of the surrogate error for a candidate.
pub trait ErrorProvider {
    fn error_for(&self, arch: &ArchParams, emb: &EmbeddingConfig) -> Result<f64>;

    /// Short description written into report headers.
    fn describe(&self) -> String;
}

/// The same error for every candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantError(pub f64);

impl ErrorProvider for ConstantError {
    fn error_for(&self, _: &ArchParams, _: &EmbeddingConfig) -> Result<f64> {
        Ok(self.0)
    }

    fn describe(&self) -> String {
        format!("constant e_hat = {}", self.0)
    }
}

/// `c0 + c1 / params`: positive and shrinking with capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticError {
    pub c0: f64,
    pub c1: f64,
}

impl ErrorProvider for SyntheticError {
    fn error_for(&self, arch: &ArchParams, emb: &EmbeddingConfig) -> Result<f64> {
        if !(self.c0 > 0.0 && self.c1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "synthetic error needs c0 > 0 and c1 >= 0, got c0 = {}, c1 = {}",
                self.c0, self.c1
            )));
        }
        Ok(synthetic_error(arch, emb, self.c0, self.c1))
    }

    fn describe(&self) -> String {
        format!("synthetic e_hat = {} + {} / params", self.c0, self.c1)
    }
}

impl ErrorProvider for BTreeMap<ArchParams, f64> {
    fn error_for(&self, arch: &ArchParams, _: &EmbeddingConfig) -> Result<f64> {
        self.get(arch).copied().ok_or(Error::MissingMetric(*arch))
    }

    fn describe(&self) -> String {
        format!("ingested e_hat for {} architectures", self.len())
    }
}

pub fn synthetic_error(arch: &ArchParams, emb: &EmbeddingConfig, c0: f64, c1: f64) -> f64 {
    c0 + c1 / param_count(arch, emb) as f64
}

/// Closed-form parameter count, FLOPs as latency, and the provider's error.
pub fn analytic_metrics(
    arch: &ArchParams,
    emb: &EmbeddingConfig,
    errors: &dyn ErrorProvider,
) -> Result<MetricTriple> {
    let e_hat = errors.error_for(arch, emb)?;
    if !(e_hat.is_finite() && e_hat > 0.0) {
        return Err(Error::NonPositiveError {
            arch: *arch,
            value: e_hat,
        });
    }
    MetricTriple::new(
        param_count(arch, emb) as f64,
        flop_count(arch) as f64,
        LatencyUnit::Flops,
        e_hat,
    )
}

/// One line of a measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub arch: ArchParams,
    /// Mean latency over `trials`, seconds per sample.
    pub latency_s: f64,
    pub error: f64,
    #[serde(default = "one")]
    pub trials: u32,
}

fn one() -> u32 {
    1
}

impl MeasurementRecord {
    /// Aggregates raw per-trial latencies by their mean.
    pub fn from_trials(arch: ArchParams, latencies_s: &[f64], error: f64) -> Result<Self> {
        if latencies_s.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one latency trial is required".into(),
            ));
        }
        let mean = latencies_s.iter().sum::<f64>() / latencies_s.len() as f64;
        Ok(Self {
            arch,
            latency_s: mean,
            error,
            trials: latencies_s.len() as u32,
        })
    }

    fn check(&self, line: usize) -> Result<()> {
        let bad = |message: String| Err(Error::Parse { line, message });
        let verdict = validate(&self.arch);
        if !verdict.is_ok() {
            let why: Vec<_> = verdict.violations().iter().map(|v| v.to_string()).collect();
            return bad(format!(
                "invalid architecture {}: {}",
                self.arch,
                why.join("; ")
            ));
        }
        if !(self.latency_s.is_finite() && self.latency_s > 0.0) {
            return bad(format!(
                "latency_s must be positive, got {}",
                self.latency_s
            ));
        }
        if !(self.error.is_finite() && self.error > 0.0) {
            return bad(format!("error must be positive, got {}", self.error));
        }
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses newline-delimited JSON records; blank lines are skipped.
/// Returned line numbers are 1-based.
pub fn parse_measurements<R: BufRead>(reader: R) -> Result<Vec<(usize, MeasurementRecord)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MeasurementRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        record.check(lineno)?;
        out.push((lineno, record));
    }
    Ok(out)
}

pub fn write_measurements<W: Write>(
    records: &[MeasurementRecord],
    mut out: W,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Measured metrics keyed by architecture.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Measurements {
    pub metrics: BTreeMap<ArchParams, MetricTriple>,
    pub records: BTreeMap<ArchParams, MeasurementRecord>,
}

impl Measurements {
    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    pub fn get(&self, arch: &ArchParams) -> Option<&MetricTriple> {
        self.metrics.get(arch)
    }
}

/// Reads a measurement stream into a map. Parameter size is filled from the
/// closed form; latency is tagged seconds per sample.
pub fn ingest_measurements<R: BufRead>(reader: R, emb: &EmbeddingConfig) -> Result<Measurements> {
    let mut out = Measurements::default();
    for (line, record) in parse_measurements(reader)? {
        if out.records.contains_key(&record.arch) {
            return Err(Error::DuplicateArch {
                arch: record.arch,
                line,
            });
        }
        let triple = MetricTriple::new(
            param_count(&record.arch, emb) as f64,
            record.latency_s,
            LatencyUnit::SecondsPerSample,
            record.error,
        )?;
        out.metrics.insert(record.arch, triple);
        out.records.insert(record.arch, record);
    }
    Ok(out)
}
