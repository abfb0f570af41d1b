//! Experiment configuration: problem, topology, algorithm and sweep axes.
//!
//! Configurations are JSON. A sweep axis is a dotted path into the
//! configuration (for example `algorithm.variant` or `graph.topology.m`)
//! with a list of values; the sweep runs the cross product of all axes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{
    check_alpha_mu, run, AlgorithmConfig, Mixers, MuMode, StepSize, Variant,
};
use crate::analysis::{certify_run, TheoremCertificates};
use crate::graph::{
    gamma_connectivity, EdgeSet, GraphSchedule, MatrixSchedule, SpectralReport,
    DEFAULT_SPECTRAL_HORIZON,
};
use crate::mixing::{consensus_rounds, ChebyshevOperator, MixingOperator};
use crate::problems::{ProblemInstance, ProblemSpec};
use crate::{Error, Result, RunTrace};

/// Where a topology comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Topology {
    Ring { m: usize },
    Path { m: usize },
    Complete { m: usize },
    Star { m: usize },
    /// Ring edges dealt round-robin into `parts` subgraphs, cycled.
    SplitRing { m: usize, parts: usize },
    Explicit { schedule: GraphSchedule },
}

impl Topology {
    pub fn schedule(&self) -> Result<GraphSchedule> {
        match self {
            Topology::Ring { m } => GraphSchedule::static_graph(*m, EdgeSet::ring(*m)),
            Topology::Path { m } => GraphSchedule::static_graph(*m, EdgeSet::path(*m)),
            Topology::Complete { m } => GraphSchedule::static_graph(*m, EdgeSet::complete(*m)),
            Topology::Star { m } => GraphSchedule::static_graph(*m, EdgeSet::star(*m)),
            Topology::SplitRing { m, parts } => GraphSchedule::split_ring(*m, *parts),
            Topology::Explicit { schedule } => Ok(schedule.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub topology: Topology,
    #[serde(default = "one")]
    pub gamma: usize,
    /// Replaces the computed `σ_γ` (for example with an analytic value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_gamma_override: Option<f64>,
    /// Window count used when a random schedule's constants are estimated.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Distinct schedules for the second and third gossip slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w3: Option<Topology>,
}

fn one() -> usize {
    1
}

fn default_horizon() -> usize {
    DEFAULT_SPECTRAL_HORIZON
}

fn default_target_gap() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Output directory; the CLI's `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seed of the problem generator.
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub output: OutputSpec,
    /// Gap used for the rounds-to-target summary column.
    #[serde(default = "default_target_gap")]
    pub target_gap: f64,
    /// Dotted path → values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<Value>>,
}

/// Everything needed to execute one configuration.
pub struct PreparedRun {
    pub problem: ProblemInstance,
    pub mixers: Mixers,
    pub algorithm: AlgorithmConfig,
    pub alpha: f64,
    /// Spectral constants of the base schedule over the configured window.
    pub report: SpectralReport,
    /// Constant and window the certificates are evaluated with.
    pub cert_sigma: f64,
    pub cert_gamma: usize,
}

/// Summary of a topology for display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInfo {
    pub m: usize,
    pub gamma: usize,
    pub gamma_connected: bool,
    pub report: SpectralReport,
    /// Theorem step size per variant; `None` where no rule applies or the
    /// spectral hypothesis fails.
    pub default_alpha: Vec<(Variant, Option<f64>)>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level checks that need no computation.
    pub fn validate(&self) -> Result<()> {
        let m = self.problem.agent_count();
        let schedule = self.graph.topology.schedule()?;
        if schedule.agent_count() != m {
            return Err(Error::invalid(format!(
                "graph.topology has {} agents but problem.m = {m}",
                schedule.agent_count()
            )));
        }
        if self.graph.gamma == 0 {
            return Err(Error::invalid("graph.gamma must be at least 1"));
        }
        if let Some(s) = self.graph.sigma_gamma_override {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid("graph.sigma_gamma_override must lie in [0, 1]"));
            }
        }
        if !(self.target_gap > 0.0) {
            return Err(Error::invalid("target_gap must be positive"));
        }
        if let StepSize::Explicit(a) = self.algorithm.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("algorithm.alpha must be positive"));
            }
        }
        if self.algorithm.zeta == Some(0) {
            return Err(Error::invalid("algorithm.zeta must be at least 1"));
        }
        if self.algorithm.chebyshev_degree == Some(0) {
            return Err(Error::invalid("algorithm.chebyshev_degree must be at least 1"));
        }
        let distinct = self.graph.w2.is_some() || self.graph.w3.is_some();
        if distinct && !matches!(self.algorithm.variant, Variant::AccGtStatic | Variant::AccGtTv) {
            return Err(Error::invalid(
                "graph.w2/graph.w3 are only supported for acc_gt_static and acc_gt_tv",
            ));
        }
        Ok(())
    }

    /// Spectral constants of the base schedule with the configured window.
    pub fn spectral_report(&self, mats: &MatrixSchedule) -> Result<SpectralReport> {
        let mut report = crate::graph::sigma_gamma_of(mats, self.graph.gamma, self.graph.horizon)?;
        if let Some(s) = self.graph.sigma_gamma_override {
            report.sigma_gamma = s;
        }
        Ok(report)
    }

    pub fn graph_info(&self) -> Result<GraphInfo> {
        let schedule = self.graph.topology.schedule()?;
        let mats = MatrixSchedule::metropolis(&schedule)?;
        let report = self.spectral_report(&mats)?;
        let gamma_connected = gamma_connectivity(&schedule, self.graph.gamma, self.graph.horizon)?;
        let l = self.problem.build(self.seed)?.smoothness();
        let default_alpha = Variant::ALL
            .iter()
            .map(|&v| {
                let sigma = if v == Variant::AccGtTv { report.sigma_gamma } else { report.sigma };
                let a = crate::algorithms::default_alpha(v, l, sigma, self.graph.gamma, self.algorithm.mu_mode).ok();
                (v, a)
            })
            .collect();
        Ok(GraphInfo {
            m: schedule.agent_count(),
            gamma: self.graph.gamma,
            gamma_connected,
            report,
            default_alpha,
        })
    }

    /// Builds the problem and the mixing operators and resolves `α`.
    pub fn prepare(&self) -> Result<PreparedRun> {
        self.validate()?;
        let problem = self.problem.build(self.seed)?;
        let schedule = self.graph.topology.schedule()?;
        let mats = MatrixSchedule::metropolis(&schedule)?;
        let report = self.spectral_report(&mats)?;
        let gamma = self.graph.gamma;
        let l = problem.smoothness();
        let algo = &self.algorithm;
        let (mixers, alpha_sigma, cert_sigma, cert_gamma) = match algo.variant {
            Variant::Gt | Variant::AccGtStatic => {
                let mixers = self.plain_mixers(mats)?;
                (mixers, report.sigma, report.sigma, 1)
            }
            Variant::AccGtTv => {
                let mixers = self.plain_mixers(mats)?;
                (mixers, report.sigma_gamma, report.sigma_gamma, gamma)
            }
            Variant::AccGtChebyshev => {
                if !schedule.is_static() {
                    return Err(Error::invalid(
                        "acc_gt_chebyshev requires a static topology",
                    ));
                }
                let w = mats.at(0)?.into_owned();
                let op = ChebyshevOperator::new(w, algo.chebyshev_degree)?;
                let effective = op.effective_sigma();
                (Mixers::shared(MixingOperator::Chebyshev(op)), effective, effective, 1)
            }
            Variant::AccGtMulticonsensus => {
                let zeta = match algo.zeta {
                    Some(z) => z,
                    None => consensus_rounds(gamma, report.sigma_gamma)?,
                };
                let op = MixingOperator::MultiConsensus { schedule: mats, zeta };
                let per_step = op.spectral_report(1, self.graph.horizon)?.sigma;
                (Mixers::shared(op), per_step, per_step, 1)
            }
        };
        let alpha = algo.resolve_alpha(l, alpha_sigma, gamma)?;
        if algo.mu_mode == MuMode::StronglyConvex {
            if !(problem.strong_convexity() > 0.0) {
                return Err(Error::invalid(
                    "algorithm.mu_mode = strongly_convex needs a problem with mu > 0",
                ));
            }
            check_alpha_mu(alpha, problem.strong_convexity())?;
        }
        let mut algorithm = algo.clone();
        algorithm.alpha = StepSize::Explicit(alpha);
        Ok(PreparedRun {
            problem,
            mixers,
            algorithm,
            alpha,
            report,
            cert_sigma,
            cert_gamma,
        })
    }

    fn plain_mixers(&self, mats: MatrixSchedule) -> Result<Mixers> {
        let slot = |t: &Option<Topology>| -> Result<Option<MixingOperator>> {
            t.as_ref()
                .map(|t| {
                    let s = t.schedule()?;
                    if s.agent_count() != mats.agent_count() {
                        return Err(Error::invalid("graph.w2/graph.w3 agent count differs"));
                    }
                    Ok(MixingOperator::Plain(MatrixSchedule::metropolis(&s)?))
                })
                .transpose()
        };
        Ok(Mixers {
            w2: slot(&self.graph.w2)?,
            w3: slot(&self.graph.w3)?,
            w1: MixingOperator::Plain(mats),
        })
    }

    /// Expands the sweep axes into concrete configurations (without axes).
    /// Each cell carries its `(path, value)` assignments. No axes yields the
    /// configuration itself.
    pub fn sweep_cells(&self) -> Result<Vec<(Vec<(String, Value)>, ExperimentConfig)>> {
        let mut base = self.clone();
        base.sweep.clear();
        let base_value = serde_json::to_value(&base).expect("config serializes");
        let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (path, values) in &self.sweep {
            if values.is_empty() {
                return Err(Error::invalid(format!("sweep axis {path} has no values")));
            }
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push((path.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
            .into_iter()
            .map(|assignments| {
                let mut value = base_value.clone();
                for (path, v) in &assignments {
                    set_path(&mut value, path, v.clone())?;
                }
                let cfg: ExperimentConfig = serde_json::from_value(value)
                    .map_err(|e| Error::invalid(format!("sweep cell {assignments:?}: {e}")))?;
                cfg.validate()?;
                Ok((assignments, cfg))
            })
            .collect()
    }
}

/// Sets `root.a.b.c = value`; every parent must already be an object.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::invalid("empty sweep path"))?;
    let mut cur = root;
    for p in parts {
        cur = cur
            .get_mut(p)
            .ok_or_else(|| Error::invalid(format!("sweep path {path}: no field {p}")))?;
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::invalid(format!("sweep path {path}: parent is not an object")))?;
    obj.insert(last.to_string(), value);
    Ok(())
}

/// Runs a prepared configuration and evaluates the applicable certificates.
pub fn execute(prepared: &PreparedRun) -> Result<(RunTrace, Option<TheoremCertificates>)> {
    let trace = run(&prepared.algorithm, &prepared.problem, &prepared.mixers)?;
    let certs = certify_run(&trace, &prepared.problem, prepared.cert_sigma, prepared.cert_gamma)?;
    Ok((trace, certs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "seed": 3,
                "problem": {"kind": "quadratic", "m": 4, "n": 2, "smoothness": 1.0, "strong_convexity": 0.1},
                "graph": {"topology": {"generator": "ring", "m": 4}},
                "algorithm": {"variant": "acc_gt_static", "mu_mode": "strongly_convex", "max_iterations": 10},
                "sweep": {"algorithm.variant": ["gt", "acc_gt_static"], "seed": [1, 2]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = sample();
        cfg.algorithm.alpha = StepSize::Explicit(0.1 + 0.2);
        cfg.graph.sigma_gamma_override = Some(1.0 / 3.0);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let schedule = GraphSchedule::split_ring(6, 3).unwrap();
        cfg.graph.topology = Topology::Explicit { schedule };
        cfg.problem = ProblemSpec::Logistic { m: 6, n: 2, samples_per_agent: 5, ridge: 0.01, separation: 1.0 };
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = sample();
        assert_eq!(cfg.graph.gamma, 1);
        assert_eq!(cfg.algorithm.alpha, StepSize::default());
        assert!(cfg.algorithm.diagnostics);
        let mut bad = cfg.clone();
        bad.graph.topology = Topology::Ring { m: 5 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sweep_expands_cross_product() {
        let cells = sample().sweep_cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|(_, c)| c.sweep.is_empty()));
        assert_eq!(cells[3].1.seed, 2);
        assert_eq!(cells[3].1.algorithm.variant, Variant::AccGtStatic);
        let mut no_axes = sample();
        no_axes.sweep.clear();
        let cells = no_axes.sweep_cells().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].1, no_axes);
        let mut bad = sample();
        bad.sweep.insert("nope.field".into(), vec![Value::from(1)]);
        assert!(bad.sweep_cells().is_err());
    }

    #[test]
    fn prepare_resolves_theorem_alpha() {
        let mut cfg = sample();
        cfg.sweep.clear();
        let prepared = cfg.prepare().unwrap();
        let sigma = prepared.report.sigma;
        let expected = (1.0 - sigma).powi(3) / (119.0 * prepared.problem.smoothness());
        assert!((prepared.alpha - expected).abs() <= 1e-15 * expected);
        cfg.algorithm.alpha = StepSize::Explicit(100.0);
        let err = cfg.prepare().err().unwrap();
        assert!(err.to_string().contains("alpha*mu <= 1"));
    }
}
