//! The `ose` command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 internal invariant failure (including a failed `verify`). Data goes to
//! stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde_json::json;

use crate::arch::{enumerate, stride_subsample, ArchParams};
use crate::config::RunConfig;
use crate::cost::{cost_breakdown, discrepancy_note, dominance_report, embedding_params};
use crate::engine::{run_extraction, MetricMode, MetricSource};
use crate::error::{Error, ErrorClass, Result};
use crate::metrics::ingest_measurements;
use crate::toynet::ToyNet;
use crate::verify::{run_suite, Formulas};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(
    name = "ose",
    version,
    about = "Optimal subarchitecture extraction for the BERT family"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set embedding.vocab=28996`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: &[String]) -> Result<RunConfig> {
        let mut all = self.overrides.clone();
        all.extend_from_slice(extra);
        RunConfig::load(self.config.as_deref(), &all)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List valid architectures of the (strided) search space.
    Enumerate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        epsilon: Option<usize>,
    },
    /// Parameter and FLOP breakdown of one architecture.
    Cost {
        /// Architecture as D,A,H,I.
        #[arg(long)]
        arch: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        vocab: Option<u32>,
        #[arg(long)]
        typepos: Option<u32>,
    },
    /// Score and rank candidates by W-coefficient.
    Rank {
        #[command(flatten)]
        config: ConfigArgs,
        /// Newline-delimited JSON measurements (ingested mode).
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        epsilon: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Decimal places for W in text output.
        #[arg(long, default_value_t = 4)]
        w_precision: usize,
    },
    /// Run the toy network on token ids and print output statistics.
    ToyForward {
        #[command(flatten)]
        config: ConfigArgs,
        /// Token ids, one integer per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the cross-module equivalence checks.
    Verify,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return e.exit_code();
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn data_io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::DataIo {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Enumerate { config, epsilon } => {
            let extra: Vec<String> = epsilon
                .map(|e| format!("epsilon={e}"))
                .into_iter()
                .collect();
            cmd_enumerate(&config.load(&extra)?, cli.format, stdout)?;
            Ok(0)
        }
        Command::Cost {
            arch,
            config,
            vocab,
            typepos,
        } => {
            let mut extra = Vec::new();
            extra.extend(vocab.map(|v| format!("embedding.vocab={v}")));
            extra.extend(typepos.map(|s| format!("embedding.typepos={s}")));
            let arch: ArchParams = arch.parse()?;
            cmd_cost(&config.load(&extra)?, arch, cli.format, stdout)?;
            Ok(0)
        }
        Command::Rank {
            config,
            measurements,
            top_k,
            epsilon,
            output,
            w_precision,
        } => {
            let mut extra = Vec::new();
            extra.extend(top_k.map(|k| format!("top_k={k}")));
            extra.extend(epsilon.map(|e| format!("epsilon={e}")));
            let run = config.load(&extra)?;
            let report = cmd_rank(&run, measurements.as_deref(), cli.format, w_precision)?;
            match output {
                Some(path) => std::fs::write(&path, report).map_err(io_err(&path))?,
                None => emit(stdout, &report)?,
            }
            Ok(0)
        }
        Command::ToyForward {
            config,
            input,
            seed,
        } => {
            let extra: Vec<String> = seed.map(|s| format!("toy.seed={s}")).into_iter().collect();
            cmd_toy_forward(&config.load(&extra)?, &input, cli.format, stdout)?;
            Ok(0)
        }
        Command::Verify => Ok(cmd_verify(&Formulas::default(), cli.format, stdout, stderr)),
    }
}

pub fn cmd_enumerate(config: &RunConfig, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    let space = stride_subsample(&config.search_space()?, config.epsilon)?;
    let archs = enumerate(&space);
    let text = match format {
        OutputFormat::Json => {
            let v = json!({
                "epsilon": config.epsilon,
                "product_size": space.product_len(),
                "count": archs.len(),
                "candidates": archs,
            });
            serde_json::to_string_pretty(&v).expect("serializable") + "\n"
        }
        OutputFormat::Text => {
            let mut s = String::new();
            for a in &archs {
                s.push_str(&format!("{a}\n"));
            }
            s.push_str(&format!(
                "count: {} (of {} in the product, epsilon {})\n",
                archs.len(),
                space.product_len(),
                config.epsilon
            ));
            s
        }
    };
    emit(out, &text)
}

pub fn cmd_cost(
    config: &RunConfig,
    arch: ArchParams,
    format: OutputFormat,
    out: &mut dyn Write,
) -> Result<()> {
    let arch = arch.checked()?;
    let emb = config.embedding;
    let b = cost_breakdown(&arch, &emb);
    let dom = dominance_report(&arch, &emb);
    let tables = embedding_params(&arch, &emb);
    let note = discrepancy_note(&arch, &emb);
    let text = match format {
        OutputFormat::Json => {
            let v = json!({
                "arch": arch,
                "embedding": emb,
                "breakdown": b,
                "embedding_tables": tables,
                "dominance": { "param_ratio": dom.param_ratio, "flop_ratio": dom.flop_ratio },
                "note": note,
            });
            serde_json::to_string_pretty(&v).expect("serializable") + "\n"
        }
        OutputFormat::Text => {
            let rows: [(&str, String); 12] = [
                ("arch", arch.to_string()),
                ("embedding", format!("V={} S={}", emb.vocab, emb.typepos)),
                ("embedding_params", b.embedding_params.to_string()),
                ("encoder_params", b.encoder_params.to_string()),
                ("pooler_params", b.pooler_params.to_string()),
                ("total_params", b.total_params.to_string()),
                ("embedding_flops", b.embedding_flops.to_string()),
                ("encoder_flops", b.encoder_flops.to_string()),
                ("pooler_flops", b.pooler_flops.to_string()),
                ("total_flops", b.total_flops.to_string()),
                ("embedding_tables", tables.to_string()),
                (
                    "encoder_ratio",
                    format!("params {:.4}, flops {:.4}", dom.param_ratio, dom.flop_ratio),
                ),
            ];
            let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let mut s = String::new();
            for (k, v) in rows {
                s.push_str(&format!("{k:<width$}  {v}\n"));
            }
            if let Some(n) = note {
                s.push_str(&format!("note: {n}\n"));
            }
            s
        }
    };
    emit(out, &text)
}

/// Builds the report text without writing it anywhere.
pub fn cmd_rank(
    config: &RunConfig,
    measurements: Option<&Path>,
    format: OutputFormat,
    w_precision: usize,
) -> Result<String> {
    let report = match config.metric_mode {
        MetricMode::Analytic => {
            if measurements.is_some() {
                return Err(Error::Config(
                    "a measurement file was given but metric_mode is analytic".into(),
                ));
            }
            let search = config.search_config(None)?;
            let provider = config.error.provider();
            run_extraction(&search, MetricSource::Analytic(provider.as_ref()))?
        }
        MetricMode::Ingested => {
            let path = measurements
                .ok_or_else(|| Error::Config("ingested mode requires --measurements".into()))?;
            let file = File::open(path).map_err(data_io_err(path))?;
            let m = ingest_measurements(BufReader::new(file), &config.embedding)?;
            let search = config.search_config(Some(&m))?;
            run_extraction(&search, MetricSource::Ingested(&m))?
        }
    };
    Ok(match format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Text => report.to_text(w_precision),
    })
}

fn read_token_ids(path: &Path) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(data_io_err(path))?;
    let mut ids = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data_io_err(path))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        ids.push(t.parse::<usize>().map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("token id `{t}`: {e}"),
        })?);
    }
    Ok(ids)
}

pub fn cmd_toy_forward(
    config: &RunConfig,
    input: &Path,
    format: OutputFormat,
    out: &mut dyn Write,
) -> Result<()> {
    let net_config = config.toy.net_config();
    let net = ToyNet::new(net_config)?;
    let ids = read_token_ids(input)?;
    let seq = net_config.emb.seq as usize;
    if ids.is_empty() || ids.len() % seq != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} token ids do not form rows of length {seq}",
            ids.len()
        )));
    }
    let tokens = Array2::from_shape_vec((ids.len() / seq, seq), ids)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let trace = net.forward_traced(&tokens)?;
    let min = trace.output.iter().copied().fold(f64::INFINITY, f64::min);
    let max = trace
        .output
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let count = net.count_instantiated_params();
    let closed_form = crate::cost::param_count(&net_config.arch, &net_config.emb);
    if count as u128 != closed_form {
        return Err(Error::Invariant(format!(
            "instantiated {count} parameters but the closed form gives {closed_form}"
        )));
    }
    let v = json!({
        "arch": net_config.arch,
        "seed": net_config.seed,
        "shape": trace.output.shape(),
        "min": min,
        "max": max,
        "softmax_row_sum_max_deviation": trace.max_softmax_deviation,
        "instantiated_params": count,
        "param_count": closed_form,
    });
    let text = match format {
        OutputFormat::Json => serde_json::to_string_pretty(&v).expect("serializable") + "\n",
        OutputFormat::Text => v
            .as_object()
            .expect("object")
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect(),
    };
    emit(out, &text)
}

/// Runs the check suite; returns the process exit code.
pub fn cmd_verify(
    formulas: &Formulas,
    format: OutputFormat,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let results = run_suite(formulas);
    let text = match format {
        OutputFormat::Json => {
            let checks: Vec<_> = results
                .iter()
                .map(|r| json!({ "check": r.name, "passed": r.passed, "detail": r.detail }))
                .collect();
            serde_json::to_string_pretty(&json!({ "checks": checks })).expect("serializable") + "\n"
        }
        OutputFormat::Text => results
            .iter()
            .map(|r| {
                format!(
                    "{} {:<20} {}\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                )
            })
            .collect(),
    };
    if emit(out, &text).is_err() {
        return ErrorClass::Config.exit_code();
    }
    match results.iter().find(|r| !r.passed) {
        None => 0,
        Some(first) => {
            let _ = writeln!(err, "error: check {} failed: {}", first.name, first.detail);
            ErrorClass::Internal.exit_code()
        }
    }
}
