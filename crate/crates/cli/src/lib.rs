//! Subcommand implementations for the `gtrack` binary.
//!
//! Each command returns a [`CliError`] on failure; [`CliError::exit_code`]
//! maps it onto the process exit status.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gtrack_core::algorithms::{format_float, Variant};
use gtrack_core::analysis::{render_report, TheoremCertificates};
use gtrack_core::config::{execute, ExperimentConfig, PreparedRun};
use gtrack_core::RunTrace;
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

/// Directory used when neither `--out` nor `output.dir` is given.
pub const DEFAULT_OUT_DIR: &str = "gtrack-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Divergence(String),

    #[error("certificate check failed: {0}")]
    Certificate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Certificate(_) => 4,
        }
    }
}

impl From<gtrack_core::Error> for CliError {
    fn from(e: gtrack_core::Error) -> Self {
        match e {
            gtrack_core::Error::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Flags shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strict: bool,
    pub deterministic: bool,
    /// Worker threads for sweeps; 0 lets the pool decide.
    pub jobs: usize,
    pub diagnostics: Option<bool>,
}

impl Options {
    /// Reads the config file and applies the command-line overrides.
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let text = fs::read_to_string(&self.config).map_err(io_err(&self.config))?;
        let mut cfg = ExperimentConfig::from_json(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", self.config.display())))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.diagnostics {
            cfg.algorithm.diagnostics = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn header(&self) -> String {
        if self.deterministic {
            return String::new();
        }
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        format!("# generated at unix time {secs}\n")
    }
}

/// Outcome of one executed configuration.
struct CellResult {
    trace: RunTrace,
    certs: Option<TheoremCertificates>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_cell(dir: &Path, prepared: &PreparedRun, result: &CellResult, header: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut csv = Vec::new();
    result.trace.write_csv(&mut csv).expect("writing to memory");
    write_file(&dir.join("trace.csv"), &csv)?;

    let certs = result.certs.as_ref().map(|c| c.to_vec()).unwrap_or_default();
    let json = serde_json::to_string_pretty(&certs).expect("certificates serialize");
    write_file(&dir.join("certificates.json"), format!("{json}\n").as_bytes())?;

    let mut report = String::from(header);
    report.push_str(&format!(
        "variant {}\nalpha {}\nsigma {} sigma_gamma {} gamma {} estimate {}\n",
        result.trace.variant.name(),
        format_float(prepared.alpha),
        format_float(prepared.report.sigma),
        format_float(prepared.report.sigma_gamma),
        prepared.report.gamma,
        prepared.report.is_estimate,
    ));
    let last = result.trace.last();
    report.push_str(&format!(
        "final gap {} after {} communication rounds\n",
        format_float(last.gap),
        last.comm_rounds
    ));
    if certs.is_empty() {
        report.push_str("no bound applies to this variant\n");
    } else {
        report.push_str(&render_report(&certs));
    }
    write_file(&dir.join("report.txt"), report.as_bytes())
}

fn check_strict(opts: &Options, certs: &Option<TheoremCertificates>) -> Result<(), CliError> {
    if let (true, Some(c)) = (opts.strict, certs) {
        if let Some(bad) = c.to_vec().into_iter().find(|b| !b.holds) {
            return Err(CliError::Certificate(bad.to_string()));
        }
    }
    Ok(())
}

/// `gtrack run`: one trace plus certificate report. Returns the output directory.
pub fn cmd_run(opts: &Options) -> Result<PathBuf, CliError> {
    let cfg = opts.load()?;
    let prepared = cfg.prepare()?;
    let (trace, certs) = execute(&prepared)?;
    let dir = opts.out_dir(&cfg);
    let result = CellResult { trace, certs };
    write_cell(&dir, &prepared, &result, &opts.header())?;
    check_strict(opts, &result.certs)?;
    Ok(dir)
}

/// `gtrack graph-info`: spectral summary of the configured topology.
pub fn cmd_graph_info<W: Write>(opts: &Options, mut out: W) -> Result<(), CliError> {
    let cfg = opts.load()?;
    let info = cfg.graph_info()?;
    let static_graph = cfg.graph.topology.schedule()?.is_static();
    let r = &info.report;
    let mut text = format!("m = {}\n", info.m);
    text.push_str(&format!("gamma = {}\ngamma-connected: {}\n", info.gamma, info.gamma_connected));
    if static_graph {
        text.push_str(&format!("sigma = {}\n", format_float(r.sigma)));
        if r.sigma >= 1.0 {
            text.push_str("Assumption violated: σ < 1 required\n");
        }
    } else {
        text.push_str(&format!(
            "sigma_gamma = {} (estimate: {}, windows: {})\n",
            format_float(r.sigma_gamma),
            r.is_estimate,
            r.horizon_used
        ));
        if r.sigma_gamma >= 1.0 {
            text.push_str("Assumption violated: σ_γ < 1 required\n");
        }
    }
    text.push_str("default alpha:\n");
    for (v, a) in &info.default_alpha {
        let shown = a.map_or_else(|| "n/a".to_string(), format_float);
        text.push_str(&format!("  {:<22} {shown}\n", v.name()));
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

const SUMMARY_TAIL: &str = "final_gap,comm_rounds_to_target,gap_certificate,consensus_certificate,status";

fn csv_cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

fn verdict(c: &Option<TheoremCertificates>, pick: fn(&TheoremCertificates) -> bool) -> &'static str {
    match c {
        None => "n/a",
        Some(c) if pick(c) => "pass",
        Some(_) => "fail",
    }
}

/// `gtrack sweep`: the cross product of the sweep axes, one directory per
/// cell plus `summary.csv`. Without axes this is `run`.
pub fn cmd_sweep(opts: &Options) -> Result<PathBuf, CliError> {
    let cfg = opts.load()?;
    if cfg.sweep.is_empty() {
        return cmd_run(opts);
    }
    let cells = cfg.sweep_cells()?;
    let prepared = cells
        .iter()
        .map(|(assign, c)| {
            c.prepare()
                .map_err(|e| CliError::Validation(format!("cell {}: {e}", describe(assign))))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        prepared
            .par_iter()
            .map(|p| execute(p).map(|(trace, certs)| CellResult { trace, certs }))
            .collect()
    });

    let dir = opts.out_dir(&cfg);
    let header = opts.header();
    let axes: Vec<&String> = cfg.sweep.keys().collect();
    let mut summary = header.clone();
    summary.push_str("cell,");
    for a in &axes {
        summary.push_str(a);
        summary.push(',');
    }
    summary.push_str(SUMMARY_TAIL);
    summary.push('\n');

    let mut diverged = Vec::new();
    let mut failed = Vec::new();
    for (i, (((assign, cell_cfg), p), result)) in cells.iter().zip(&prepared).zip(results).enumerate() {
        let name = format!("cell-{i:03}");
        summary.push_str(&name);
        for (_, v) in assign {
            summary.push(',');
            summary.push_str(&csv_cell(v));
        }
        match result {
            Ok(r) => {
                write_cell(&dir.join(&name), p, &r, &header)?;
                let final_gap = r.trace.last().gap;
                let rounds = r
                    .trace
                    .first_reaching(cell_cfg.target_gap)
                    .map_or_else(String::new, |row| row.comm_rounds.to_string());
                summary.push_str(&format!(
                    ",{},{rounds},{},{},ok\n",
                    format_float(final_gap),
                    verdict(&r.certs, |c| c.gap.holds),
                    verdict(&r.certs, |c| c.consensus.holds),
                ));
                if r.certs.as_ref().is_some_and(|c| !c.holds()) {
                    failed.push(name);
                }
            }
            Err(gtrack_core::Error::Diverged { iteration }) => {
                summary.push_str(&format!(",,,n/a,n/a,diverged at k = {iteration}\n"));
                diverged.push(name);
            }
            Err(e) => return Err(e.into()),
        }
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join("summary.csv"), summary.as_bytes())?;

    if !diverged.is_empty() {
        return Err(CliError::Divergence(format!("diverged cells: {}", diverged.join(" "))));
    }
    if opts.strict && !failed.is_empty() {
        return Err(CliError::Certificate(format!("cells {}", failed.join(" "))));
    }
    Ok(dir)
}

fn describe(assign: &[(String, Value)]) -> String {
    assign
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Variant names accepted in configs, for help text.
pub fn variant_names() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.name()).collect()
}
