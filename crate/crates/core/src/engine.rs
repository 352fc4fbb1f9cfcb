//! W-coefficient scalarization and candidate ranking.
//!
//! Every candidate `f` is scored against the maximum point `T` by
//!
//! ```text
//!            (p(T) - p(f)) (i(T) - i(f))
//! W(f, T) = -----------------------------
//!                p(T) i(T) e(f)
//! ```
//!
//! Larger is better. A candidate that exceeds `T` in both size and latency
//! makes the numerator a product of two negatives, so candidates exceeding
//! `T` on either axis are flagged and moved to an appendix instead of being
//! ranked.
//!
//! The grid is small enough that every (strided) candidate is scored
//! exactly; no approximation scheme is involved.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{enumerate, stride_subsample, ArchParams, EmbeddingConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::metrics::{analytic_metrics, ErrorProvider, MaxPoint, Measurements, MetricTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    ExceedsMaxpointParams,
    ExceedsMaxpointLatency,
}

impl Flag {
    fn as_str(self) -> &'static str {
        match self {
            Flag::ExceedsMaxpointParams => "exceeds_maxpoint_params",
            Flag::ExceedsMaxpointLatency => "exceeds_maxpoint_latency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    Analytic,
    Ingested,
}

impl std::fmt::Display for MetricMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricMode::Analytic => "analytic",
            MetricMode::Ingested => "ingested",
        })
    }
}

/// One ranked row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub rank: usize,
    pub arch: ArchParams,
    pub metrics: MetricTriple,
    pub w_coefficient: f64,
    pub flags: Vec<Flag>,
}

/// A candidate left out of the ranking because it exceeds the maximum point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedCandidate {
    pub arch: ArchParams,
    pub metrics: MetricTriple,
    /// Raw value; not meaningful for ranking.
    pub w_coefficient: f64,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub epsilon: usize,
    pub maxpoint: MaxPoint,
    pub emb: EmbeddingConfig,
    pub metric_mode: MetricMode,
    /// `None` keeps every ranked candidate.
    pub top_k: Option<usize>,
    /// Surrogate training steps; carried into the report header only.
    pub n_steps: u32,
}

impl SearchConfig {
    fn check(&self) -> Result<()> {
        if self.epsilon < 1 {
            return Err(Error::InvalidArgument("epsilon must be at least 1".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Candidates after striding, in lexicographic order.
    pub fn candidates(&self) -> Result<Vec<ArchParams>> {
        self.check()?;
        Ok(enumerate(&stride_subsample(&self.space, self.epsilon)?))
    }
}

pub fn w_coefficient(f: &MetricTriple, t: &MaxPoint) -> Result<f64> {
    if !(t.p_hat > 0.0 && t.i_hat > 0.0) {
        return Err(Error::InvalidMaxPoint);
    }
    if !(f.e_hat > 0.0) {
        return Err(Error::ErrorDomain(f.e_hat));
    }
    if f.unit != t.unit {
        return Err(Error::UnitMismatch {
            candidate: f.unit,
            maxpoint: t.unit,
        });
    }
    let w = (t.p_hat - f.p_hat) * (t.i_hat - f.i_hat) / (t.p_hat * t.i_hat * f.e_hat);
    if !w.is_finite() {
        return Err(Error::Invariant(format!("non-finite W-coefficient {w}")));
    }
    Ok(w)
}

fn flags_for(f: &MetricTriple, t: &MaxPoint) -> Vec<Flag> {
    let mut flags = Vec::new();
    if f.p_hat > t.p_hat {
        flags.push(Flag::ExceedsMaxpointParams);
    }
    if f.i_hat > t.i_hat {
        flags.push(Flag::ExceedsMaxpointLatency);
    }
    flags
}

/// Descending W, then ascending `<D,A,H,I>`.
pub fn ranking_order(a: (f64, &ArchParams), b: (f64, &ArchParams)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Ranked rows, truncated to `top_k`.
    pub rows: Vec<CandidateReport>,
    pub excluded: Vec<ExcludedCandidate>,
    /// Candidates scored, including excluded ones.
    pub evaluated: usize,
    /// Candidates ranked before truncation.
    pub rankable: usize,
}

pub fn rank_candidates(
    config: &SearchConfig,
    metrics: &BTreeMap<ArchParams, MetricTriple>,
) -> Result<Ranking> {
    let candidates = config.candidates()?;
    let t = &config.maxpoint;

    let mut scored = Vec::with_capacity(candidates.len());
    let mut excluded = Vec::new();
    for arch in &candidates {
        let m = metrics.get(arch).ok_or(Error::MissingMetric(*arch))?;
        let w = w_coefficient(m, t)?;
        let flags = flags_for(m, t);
        if flags.is_empty() {
            scored.push((*arch, *m, w));
        } else {
            excluded.push(ExcludedCandidate {
                arch: *arch,
                metrics: *m,
                w_coefficient: w,
                flags,
            });
        }
    }
    if scored.is_empty() {
        return Err(Error::NoCandidates);
    }

    scored.sort_by(|a, b| ranking_order((a.2, &a.0), (b.2, &b.0)));
    let rankable = scored.len();
    let keep = config.top_k.unwrap_or(rankable).min(rankable);
    let rows = scored
        .into_iter()
        .take(keep)
        .enumerate()
        .map(|(idx, (arch, metrics, w))| CandidateReport {
            rank: idx + 1,
            arch,
            metrics,
            w_coefficient: w,
            flags: Vec::new(),
        })
        .collect();

    Ok(Ranking {
        rows,
        excluded,
        evaluated: candidates.len(),
        rankable,
    })
}

/// Where candidate metrics come from.
pub enum MetricSource<'a> {
    Analytic(&'a dyn ErrorProvider),
    Ingested(&'a Measurements),
}

impl MetricSource<'_> {
    fn mode(&self) -> MetricMode {
        match self {
            MetricSource::Analytic(_) => MetricMode::Analytic,
            MetricSource::Ingested(_) => MetricMode::Ingested,
        }
    }

    fn describe_error(&self) -> String {
        match self {
            MetricSource::Analytic(p) => p.describe(),
            MetricSource::Ingested(m) => format!("ingested e_hat for {} architectures", m.len()),
        }
    }
}

const ERROR_SUBSTITUTION_NOTE: &str = "e_hat is a stand-in supplied by the selected provider, \
not a cross-entropy against the maximum point after surrogate training";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub metric_mode: MetricMode,
    pub epsilon: usize,
    pub n_steps: u32,
    pub maxpoint: MaxPoint,
    pub latency_unit: crate::metrics::LatencyUnit,
    pub error_source: String,
    pub error_note: &'static str,
    pub embedding: EmbeddingConfig,
    pub search_space: SearchSpace,
    pub top_k: Option<usize>,
    pub candidates_evaluated: usize,
    pub candidates_ranked: usize,
    pub candidates_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub header: ReportHeader,
    pub rows: Vec<CandidateReport>,
    pub excluded: Vec<ExcludedCandidate>,
}

/// Stride, enumerate, score and rank.
pub fn run_extraction(config: &SearchConfig, source: MetricSource<'_>) -> Result<Report> {
    if source.mode() != config.metric_mode {
        return Err(Error::Config(format!(
            "metric mode {} does not match the supplied metric source",
            config.metric_mode
        )));
    }
    config.emb.validate()?;
    let candidates = config.candidates()?;

    let metrics: BTreeMap<ArchParams, MetricTriple> = match &source {
        MetricSource::Analytic(errors) => candidates
            .iter()
            .map(|a| analytic_metrics(a, &config.emb, *errors).map(|m| (*a, m)))
            .collect::<Result<_>>()?,
        MetricSource::Ingested(m) => m.metrics.clone(),
    };

    let ranking = rank_candidates(config, &metrics)?;
    let header = ReportHeader {
        metric_mode: config.metric_mode,
        epsilon: config.epsilon,
        n_steps: config.n_steps,
        maxpoint: config.maxpoint,
        latency_unit: config.maxpoint.unit,
        error_source: source.describe_error(),
        error_note: ERROR_SUBSTITUTION_NOTE,
        embedding: config.emb,
        search_space: stride_subsample(&config.space, config.epsilon)?,
        top_k: config.top_k,
        candidates_evaluated: ranking.evaluated,
        candidates_ranked: ranking.rankable,
        candidates_excluded: ranking.excluded.len(),
    };
    Ok(Report {
        header,
        rows: ranking.rows,
        excluded: ranking.excluded,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }

    /// Aligned columns; `w_precision` only affects display.
    pub fn to_text(&self, w_precision: usize) -> String {
        let h = &self.header;
        let mut out = String::new();
        let _ = writeln!(out, "# metric mode: {}", h.metric_mode);
        let _ = writeln!(out, "# epsilon: {}  n_steps: {}", h.epsilon, h.n_steps);
        let _ = writeln!(
            out,
            "# maximum point: {}  p_hat={}  i_hat={} {}",
            h.maxpoint.arch, h.maxpoint.p_hat, h.maxpoint.i_hat, h.maxpoint.unit
        );
        let _ = writeln!(
            out,
            "# embedding: V={} S={} s={} z={}",
            h.embedding.vocab, h.embedding.typepos, h.embedding.seq, h.embedding.batch
        );
        let _ = writeln!(out, "# error source: {}", h.error_source);
        let _ = writeln!(out, "# note: {}", h.error_note);
        let _ = writeln!(
            out,
            "# candidates: {} evaluated, {} ranked, {} excluded",
            h.candidates_evaluated, h.candidates_ranked, h.candidates_excluded
        );
        out.push('\n');

        let ranked = self.rows.iter().map(|r| {
            (
                r.rank.to_string(),
                r.arch,
                &r.metrics,
                r.w_coefficient,
                &r.flags,
            )
        });
        out.push_str(&table(ranked, w_precision));

        if !self.excluded.is_empty() {
            let _ = writeln!(out, "\n# excluded (exceed the maximum point)\n");
            let excluded = self.excluded.iter().map(|r| {
                (
                    "-".to_string(),
                    r.arch,
                    &r.metrics,
                    r.w_coefficient,
                    &r.flags,
                )
            });
            out.push_str(&table(excluded, w_precision));
        }
        out
    }
}

fn table<'a>(
    rows: impl Iterator<Item = (String, ArchParams, &'a MetricTriple, f64, &'a Vec<Flag>)>,
    w_precision: usize,
) -> String {
    let header = [
        "rank", "D", "A", "H", "I", "p_hat", "i_hat", "e_hat", "W", "flags",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (rank, arch, m, w, flags) in rows {
        cells.push(vec![
            rank,
            arch.depth.to_string(),
            arch.heads.to_string(),
            arch.hidden.to_string(),
            arch.intermediate.to_string(),
            m.p_hat.to_string(),
            format!("{} {}", m.i_hat, m.unit),
            m.e_hat.to_string(),
            format!("{w:.w_precision$}"),
            flags
                .iter()
                .map(|f| f.as_str())
                .collect::<Vec<_>>()
                .join(","),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                if c == header.len() - 1 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
