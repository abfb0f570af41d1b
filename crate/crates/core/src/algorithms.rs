//! Gradient tracking, accelerated gradient tracking and the run driver.
//!
//! Accelerated iteration `k` (with mixing operators `W₁, W₂, W₃`):
//!
//! ```text
//! y^k     = θ_k z^k + (1 − θ_k) x^k
//! s^k     = W₁ s^{k−1} + ∇f(y^k) − ∇f(y^{k−1})
//! z^{k+1} = (W₂(μα/θ_k · y^k + z^k) − α/θ_k · s^k) / (1 + μα/θ_k)
//! x^{k+1} = θ_k z^{k+1} + (1 − θ_k) W₃ x^k
//! ```
//!
//! The state machine stores `(x^k, y^k, z^k, s^k, ∇f(y^k))`, so one call to
//! [`acc_gt_step`] produces `z^{k+1}, x^{k+1}` and then `y^{k+1}, s^{k+1}`.
//! Starting from `x⁰ = y⁰ = z⁰` and `s⁰ = ∇f(y⁰)` the generic step is used
//! from `k = 0` on.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mixing::{Counters, MixingOperator};
use crate::problems::{
    aggregate_gradient, bregman_distance, column_mean, consensus_error, inexact_value,
    ProblemInstance,
};
use crate::{Error, Mat, Result, Vector};

/// Effective second singular value of the Chebyshev-filtered matrix.
pub const CHEBYSHEV_SIGMA: f64 = 0.65;
/// Effective per-step contraction of multi-round consensus.
pub const MULTI_CONSENSUS_SIGMA: f64 = 1.0 / std::f64::consts::E;

/// Positive root of `θ²/θ_prev² + θ − 1 = 0`.
pub fn theta_next(theta_prev: f64) -> Result<f64> {
    if !(theta_prev > 0.0 && theta_prev <= 1.0) {
        return Err(Error::invalid(format!(
            "theta must lie in (0, 1], got {theta_prev}"
        )));
    }
    Ok(theta_prev * ((theta_prev * theta_prev + 4.0).sqrt() - theta_prev) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// Run with `μ = 0` and the recursive `θ_k` sequence.
    Zero,
    /// Run with the instance's `μ > 0` and constant `θ = √(μα)/2`.
    StronglyConvex,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaMode {
    NonstronglyConvex,
    StronglyConvex { theta: f64 },
}

/// The momentum sequence `θ_0, θ_1, …`, extended on demand.
#[derive(Clone, Debug)]
pub struct ThetaSchedule {
    mode: ThetaMode,
    history: Vec<f64>,
}

impl ThetaSchedule {
    /// `θ_0 = 1`, `(1 − θ_k)/θ_k² = 1/θ_{k−1}²`.
    pub fn nonstrongly_convex() -> Self {
        ThetaSchedule {
            mode: ThetaMode::NonstronglyConvex,
            history: vec![1.0],
        }
    }

    /// Constant `θ = √(μα)/2`; requires `μ > 0` and `αμ ≤ 1`.
    pub fn strongly_convex(mu: f64, alpha: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::ConfigMismatch(
                "strongly convex mode requires mu > 0".into(),
            ));
        }
        check_alpha_mu(alpha, mu)?;
        let theta = (mu * alpha).sqrt() / 2.0;
        Ok(ThetaSchedule {
            mode: ThetaMode::StronglyConvex { theta },
            history: vec![theta],
        })
    }

    pub fn mode(&self) -> ThetaMode {
        self.mode
    }

    /// `θ_k`.
    pub fn get(&mut self, k: usize) -> f64 {
        while self.history.len() <= k {
            let last = *self.history.last().expect("history is never empty");
            let next = match self.mode {
                ThetaMode::NonstronglyConvex => {
                    theta_next(last).expect("theta stays in (0, 1]")
                }
                ThetaMode::StronglyConvex { theta } => theta,
            };
            self.history.push(next);
        }
        self.history[k]
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}

/// Rejects `αμ > 1`, the step-size hypothesis of the strongly convex analysis.
pub fn check_alpha_mu(alpha: f64, mu: f64) -> Result<()> {
    if alpha * mu > 1.0 {
        return Err(Error::ConfigMismatch(format!(
            "step-size hypothesis alpha*mu <= 1 violated: alpha*mu = {:e}",
            alpha * mu
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gt,
    AccGtStatic,
    AccGtTv,
    AccGtChebyshev,
    AccGtMulticonsensus,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Gt,
        Variant::AccGtStatic,
        Variant::AccGtTv,
        Variant::AccGtChebyshev,
        Variant::AccGtMulticonsensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gt => "gt",
            Variant::AccGtStatic => "acc_gt_static",
            Variant::AccGtTv => "acc_gt_tv",
            Variant::AccGtChebyshev => "acc_gt_chebyshev",
            Variant::AccGtMulticonsensus => "acc_gt_multiconsensus",
        }
    }

    pub fn is_accelerated(self) -> bool {
        self != Variant::Gt
    }
}

/// Theorem step size with equality.
///
/// `sigma` is `σ` for static variants and `σ_γ` for the time-varying one;
/// it is ignored by the Chebyshev (`σ → 0.65`) and multi-consensus
/// (`σ_γ → 1/e`, `γ → 1`) variants. Plain gradient tracking has no rule.
pub fn default_alpha(
    variant: Variant,
    l: f64,
    sigma: f64,
    gamma: usize,
    mu_mode: MuMode,
) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::invalid("L must be positive"));
    }
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    let (sigma, gamma, time_varying) = match variant {
        Variant::Gt => {
            return Err(Error::ConfigMismatch(
                "no theorem step size for plain gradient tracking; set alpha explicitly".into(),
            ))
        }
        Variant::AccGtStatic => (sigma, 1, false),
        Variant::AccGtTv => (sigma, gamma, true),
        Variant::AccGtChebyshev => (CHEBYSHEV_SIGMA, 1, false),
        Variant::AccGtMulticonsensus => (MULTI_CONSENSUS_SIGMA, 1, true),
    };
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::Disconnected { sigma });
    }
    let gap = 1.0 - sigma;
    let g = gamma as f64;
    Ok(match (time_varying, mu_mode) {
        (false, MuMode::Zero) => gap.powi(4) / (537.0 * l),
        (false, MuMode::StronglyConvex) => gap.powi(3) / (119.0 * l),
        (true, MuMode::Zero) => gap.powi(4) / (21675.0 * l * g.powi(4)),
        (true, MuMode::StronglyConvex) => gap.powi(3) / (4244.0 * l * g.powi(3)),
    })
}

/// Mixing operators for the three gossip slots. Missing slots reuse `w1`.
pub struct Mixers {
    pub w1: MixingOperator,
    pub w2: Option<MixingOperator>,
    pub w3: Option<MixingOperator>,
}

impl Mixers {
    pub fn shared(w: MixingOperator) -> Self {
        Mixers {
            w1: w,
            w2: None,
            w3: None,
        }
    }

    pub fn distinct(w1: MixingOperator, w2: MixingOperator, w3: MixingOperator) -> Self {
        Mixers {
            w1,
            w2: Some(w2),
            w3: Some(w3),
        }
    }

    pub fn w1(&self) -> &MixingOperator {
        &self.w1
    }

    pub fn w2(&self) -> &MixingOperator {
        self.w2.as_ref().unwrap_or(&self.w1)
    }

    pub fn w3(&self) -> &MixingOperator {
        self.w3.as_ref().unwrap_or(&self.w1)
    }

    pub fn agent_count(&self) -> usize {
        self.w1.agent_count()
    }

    fn check(&self, m: usize) -> Result<()> {
        for w in [self.w1(), self.w2(), self.w3()] {
            if w.agent_count() != m {
                return Err(Error::dims(format!("{m} agents"), w.agent_count()));
            }
        }
        Ok(())
    }
}

fn consensual(m: usize, row: &Vector) -> Mat {
    Mat::from_fn(m, row.len(), |_, j| row[j])
}

fn check_finite(mats: &[&Mat], iteration: usize) -> Result<()> {
    if mats.iter().all(|a| a.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::Diverged { iteration })
    }
}

/// Plain gradient-tracking state `(x^k, s^k, ∇f(x^k))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GtState {
    pub k: usize,
    pub x: Mat,
    pub s: Mat,
    pub grad: Mat,
}

/// `x⁰ = 𝟙 x0ᵀ`, `s⁰ = ∇f(x⁰)`; charges one gradient round.
pub fn gt_init(problem: &ProblemInstance, x0: &Vector, counters: &mut Counters) -> Result<GtState> {
    if x0.len() != problem.dim() {
        return Err(Error::dims(problem.dim(), x0.len()));
    }
    let x = consensual(problem.agent_count(), x0);
    let grad = aggregate_gradient(problem, &x, counters)?;
    Ok(GtState {
        k: 0,
        x,
        s: grad.clone(),
        grad,
    })
}

/// `x^{k+1} = W^k x^k − α s^k`, `s^{k+1} = W^{k+1} s^k + ∇f(x^{k+1}) − ∇f(x^k)`.
pub fn gt_step(
    state: &GtState,
    w: &MixingOperator,
    alpha: f64,
    problem: &ProblemInstance,
    counters: &mut Counters,
) -> Result<GtState> {
    let k = state.k;
    let x = w.apply(k, &state.x, counters)? - &state.s * alpha;
    check_finite(&[&x], k + 1)?;
    let grad = aggregate_gradient(problem, &x, counters)?;
    let s = w.apply(k + 1, &state.s, counters)? + &grad - &state.grad;
    check_finite(&[&s, &grad], k + 1)?;
    Ok(GtState {
        k: k + 1,
        x,
        s,
        grad,
    })
}

/// Accelerated state `(x^k, y^k, z^k, s^k, ∇f(y^k))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccGtState {
    pub k: usize,
    pub x: Mat,
    pub y: Mat,
    pub z: Mat,
    pub s: Mat,
    pub grad: Mat,
}

/// Scalars of one accelerated step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub alpha: f64,
    pub mu: f64,
    /// `θ_k`, used for `z^{k+1}` and `x^{k+1}`.
    pub theta: f64,
    /// `θ_{k+1}`, used for `y^{k+1}`.
    pub theta_next: f64,
}

/// `x⁰ = y⁰ = z⁰ = 𝟙 x0ᵀ`, `s⁰ = ∇f(y⁰)`; charges one gradient round.
pub fn acc_gt_init(
    problem: &ProblemInstance,
    x0: &Vector,
    counters: &mut Counters,
) -> Result<AccGtState> {
    if x0.len() != problem.dim() {
        return Err(Error::dims(problem.dim(), x0.len()));
    }
    let x = consensual(problem.agent_count(), x0);
    check_finite(&[&x], 0)?;
    let grad = aggregate_gradient(problem, &x, counters)?;
    Ok(AccGtState {
        k: 0,
        y: x.clone(),
        z: x.clone(),
        s: grad.clone(),
        grad,
        x,
    })
}

fn validate_params(p: &StepParams) -> Result<()> {
    let in_range = |t: f64| t > 0.0 && t <= 1.0;
    if !(in_range(p.theta) && in_range(p.theta_next)) {
        return Err(Error::invalid("theta must lie in (0, 1]"));
    }
    if !(p.alpha > 0.0) || !(p.mu >= 0.0) {
        return Err(Error::invalid("need alpha > 0 and mu >= 0"));
    }
    Ok(())
}

fn advance_tracking(
    state: &AccGtState,
    x: Mat,
    z: Mat,
    w1: &MixingOperator,
    theta_next: f64,
    problem: &ProblemInstance,
    counters: &mut Counters,
) -> Result<AccGtState> {
    let k = state.k;
    check_finite(&[&x, &z], k + 1)?;
    let y = &z * theta_next + &x * (1.0 - theta_next);
    let grad = aggregate_gradient(problem, &y, counters)?;
    let s = w1.apply(k + 1, &state.s, counters)? + &grad - &state.grad;
    check_finite(&[&y, &s, &grad], k + 1)?;
    Ok(AccGtState {
        k: k + 1,
        x,
        y,
        z,
        s,
        grad,
    })
}

/// One accelerated step: `z^{k+1}` with `W₂^k`, `x^{k+1}` with `W₃^k`, then
/// `y^{k+1}` and `s^{k+1} = W₁^{k+1} s^k + ∇f(y^{k+1}) − ∇f(y^k)`.
pub fn acc_gt_step(
    state: &AccGtState,
    mixers: &Mixers,
    params: StepParams,
    problem: &ProblemInstance,
    counters: &mut Counters,
) -> Result<AccGtState> {
    validate_params(&params)?;
    let StepParams {
        alpha, mu, theta, ..
    } = params;
    let k = state.k;
    let r = mu * alpha / theta;
    let mixed = mixers.w2().apply(k, &(&state.y * r + &state.z), counters)?;
    let z = (mixed - &state.s * (alpha / theta)) / (1.0 + r);
    let x = &z * theta + mixers.w3().apply(k, &state.x, counters)? * (1.0 - theta);
    advance_tracking(state, x, z, mixers.w1(), params.theta_next, problem, counters)
}

/// The `μ = 0` form with the alternative updates `x^{k+1} = W y^k − α s^k`
/// and `z^{k+1} = W z^k − (α/θ_k) s^k`, all slots using `w`.
pub fn acc_gt_direct_step(
    state: &AccGtState,
    w: &MixingOperator,
    params: StepParams,
    problem: &ProblemInstance,
    counters: &mut Counters,
) -> Result<AccGtState> {
    validate_params(&params)?;
    let k = state.k;
    let x = w.apply(k, &state.y, counters)? - &state.s * params.alpha;
    let z = w.apply(k, &state.z, counters)? - &state.s * (params.alpha / params.theta);
    advance_tracking(state, x, z, w, params.theta_next, problem, counters)
}

/// Column means `(x̄, z̄)` driven by the averaged recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedState {
    pub x: Vector,
    pub z: Vector,
}

/// Inexact accelerated gradient step on the averages; returns `ȳ^k` and the
/// next `(x̄, z̄)`.
pub fn averaged_reference_step(
    avg: &AveragedState,
    alpha: f64,
    theta: f64,
    mu: f64,
    sbar: &Vector,
) -> (Vector, AveragedState) {
    let y = &avg.z * theta + &avg.x * (1.0 - theta);
    let r = mu * alpha / theta;
    let z = (&y * r + &avg.z - sbar * (alpha / theta)) / (1.0 + r);
    let x = &z * theta + &avg.x * (1.0 - theta);
    (y, AveragedState { x, z })
}

/// Step size: a number or the theorem rule for the variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Explicit(f64),
    Rule(StepRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    TheoremDefault,
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Rule(StepRule::TheoremDefault)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    #[serde(default)]
    pub alpha: StepSize,
    pub mu_mode: MuMode,
    pub max_iterations: usize,
    /// Gossip rounds per multi-consensus step; `⌈γ/(1 − σ_γ)⌉` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<usize>,
    /// Chebyshev degree; `⌈1/√ν⌉` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chebyshev_degree: Option<usize>,
    /// Common starting point; zero when absent and `init_seed` is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Seed for a standard normal starting point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub diagnostics: bool,
    /// Stop once `F(x̄^k) − F*` is at most this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_gap: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl AlgorithmConfig {
    pub fn new(variant: Variant, mu_mode: MuMode, alpha: f64, max_iterations: usize) -> Self {
        AlgorithmConfig {
            variant,
            alpha: StepSize::Explicit(alpha),
            mu_mode,
            max_iterations,
            zeta: None,
            chebyshev_degree: None,
            x0: None,
            init_seed: None,
            diagnostics: true,
            stop_gap: None,
        }
    }

    /// Explicit `α`, or the theorem rule evaluated at the given spectral
    /// constant (`σ` or `σ_γ`) and `γ`.
    pub fn resolve_alpha(&self, l: f64, sigma: f64, gamma: usize) -> Result<f64> {
        match self.alpha {
            StepSize::Explicit(a) if a > 0.0 && a.is_finite() => Ok(a),
            StepSize::Explicit(a) => Err(Error::invalid(format!(
                "alpha must be positive and finite, got {a}"
            ))),
            StepSize::Rule(StepRule::TheoremDefault) => {
                default_alpha(self.variant, l, sigma, gamma, self.mu_mode)
            }
        }
    }

    fn finished(&self, k: usize, gap: f64) -> bool {
        k == self.max_iterations || self.stop_gap.is_some_and(|g| gap <= g)
    }

    pub fn starting_point(&self, n: usize) -> Result<Vector> {
        match (&self.x0, self.init_seed) {
            (Some(x0), _) if x0.len() != n => Err(Error::dims(n, x0.len())),
            (Some(x0), _) => Ok(Vector::from_column_slice(x0)),
            (None, Some(seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            }
            (None, None) => Ok(Vector::zeros(n)),
        }
    }
}

/// One iteration's measurements. Margins are `RHS − LHS`; those that need
/// iterate `k+1` are NaN on the last row, and all are NaN when diagnostics
/// are off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// `F(x̄^k) − F*`.
    pub gap: f64,
    /// `max_i F(x_i^k) − F*`.
    pub per_agent_gap_max: f64,
    /// `‖Πx^k‖²/m`.
    pub cons_x: f64,
    pub cons_y: f64,
    pub cons_s: f64,
    pub cons_z: f64,
    /// `‖z̄^k − x*‖²`.
    pub zbar_dist: f64,
    pub comm_rounds: u64,
    pub grad_rounds: u64,
    pub lemma4_margin: f64,
    /// Scale of the `lemma4_margin` tolerance, `max(1, |LHS|)`.
    pub lemma4_scale: f64,
    pub lemma1_lower_margin: f64,
    pub lemma1_upper_margin: f64,
    /// Scale of the inexact-gradient tolerances, `max(1, |F(w)|)` over both checks.
    pub lemma1_scale: f64,
}

impl TraceRow {
    /// True when every present margin is at least `−rel_tol·scale`.
    pub fn lemma4_holds(&self, rel_tol: f64) -> bool {
        self.lemma4_margin.is_nan() || self.lemma4_margin >= -rel_tol * self.lemma4_scale
    }

    pub fn lemma1_holds(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.lemma1_scale;
        let ok = |m: f64| m.is_nan() || m >= -tol;
        ok(self.lemma1_lower_margin) && ok(self.lemma1_upper_margin)
    }
}

pub const CSV_HEADER: &str = "k,gap,per_agent_gap_max,cons_x,cons_y,cons_s,zbar_dist,comm_rounds,grad_rounds,lemma4_margin,lemma1_lower_margin,lemma1_upper_margin";

/// Everything a run measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub variant: Variant,
    pub mu_mode: MuMode,
    pub alpha: f64,
    /// `μ` used by the iteration (zero in [`MuMode::Zero`]).
    pub mu: f64,
    pub agent_count: usize,
    /// `θ_0 … θ_K` (empty for plain gradient tracking).
    pub thetas: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

impl RunTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            let floats = [
                r.gap,
                r.per_agent_gap_max,
                r.cons_x,
                r.cons_y,
                r.cons_s,
                r.zbar_dist,
            ]
            .map(format_float)
            .join(",");
            let margins = [r.lemma4_margin, r.lemma1_lower_margin, r.lemma1_upper_margin]
                .map(format_float)
                .join(",");
            writeln!(
                out,
                "{},{},{},{},{}",
                r.k, floats, r.comm_rounds, r.grad_rounds, margins
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least one row")
    }

    /// First row whose gap is at most `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.gap <= target)
    }
}

/// Borrowed view of the quantities observed at one iterate.
struct Snapshot<'a> {
    k: usize,
    x: &'a Mat,
    y: &'a Mat,
    z: &'a Mat,
    s: &'a Mat,
}

fn observe(problem: &ProblemInstance, snap: &Snapshot<'_>, counters: Counters) -> TraceRow {
    let m = problem.agent_count() as f64;
    let f_star = problem.f_star();
    let xbar = column_mean(snap.x);
    let per_agent_gap_max = snap
        .x
        .row_iter()
        .map(|r| problem.value(&r.transpose()) - f_star)
        .fold(f64::NEG_INFINITY, f64::max);
    TraceRow {
        k: snap.k,
        gap: problem.value(&xbar) - f_star,
        per_agent_gap_max,
        cons_x: consensus_error(snap.x) / m,
        cons_y: consensus_error(snap.y) / m,
        cons_s: consensus_error(snap.s) / m,
        cons_z: consensus_error(snap.z) / m,
        zbar_dist: (column_mean(snap.z) - problem.x_star()).norm_squared(),
        comm_rounds: counters.comm_rounds,
        grad_rounds: counters.grad_rounds,
        lemma4_margin: f64::NAN,
        lemma4_scale: 1.0,
        lemma1_lower_margin: f64::NAN,
        lemma1_upper_margin: f64::NAN,
        lemma1_scale: 1.0,
    }
}

/// Fills both inexact-gradient margins of `row`; `w_next` is `x̄^{k+1}`.
fn lemma1_margins(
    problem: &ProblemInstance,
    snap: &Snapshot<'_>,
    w_next: &Vector,
    row: &mut TraceRow,
) -> Result<()> {
    let l = problem.smoothness();
    let mu = problem.strong_convexity();
    let m = problem.agent_count() as f64;
    let ybar = column_mean(snap.y);
    let sbar = column_mean(snap.s);
    let fhat = inexact_value(problem, &ybar, snap.y)?;
    let model = |w: &Vector| fhat + sbar.dot(&(w - &ybar));

    let x_star = problem.x_star();
    let f_star = problem.f_star();
    let lower = model(x_star) + 0.5 * mu * (x_star - &ybar).norm_squared();
    row.lemma1_lower_margin = f_star - lower;

    let f_next = problem.value(w_next);
    let upper = model(w_next)
        + 0.5 * l * (w_next - &ybar).norm_squared()
        + l / (2.0 * m) * consensus_error(snap.y);
    row.lemma1_upper_margin = upper - f_next;
    row.lemma1_scale = 1f64.max(f_star.abs()).max(f_next.abs());
    Ok(())
}

/// Running right-hand side of the master inequality.
enum MasterBound {
    /// Unscaled: `RHS_K = ‖z̄⁰−x*‖²/2α + Σ_{k≤K} [...]`.
    Nsc { rhs: f64 },
    /// Multiplied through by `(1−θ)^{K+1}` so the weights stay bounded.
    Sc { rhs: f64, theta: f64, c: f64 },
}

impl MasterBound {
    fn new(problem: &ProblemInstance, first: &Snapshot<'_>, alpha: f64, mu: f64, thetas: &mut ThetaSchedule) -> Self {
        let dist0 = (column_mean(first.z) - problem.x_star()).norm_squared();
        match thetas.mode() {
            ThetaMode::NonstronglyConvex => MasterBound::Nsc {
                rhs: dist0 / (2.0 * alpha),
            },
            ThetaMode::StronglyConvex { theta } => {
                let c = theta * theta / (2.0 * alpha) + mu * theta / 2.0;
                let gap0 = problem.value(&column_mean(first.x)) - problem.f_star();
                MasterBound::Sc {
                    rhs: gap0 + c * dist0,
                    theta,
                    c,
                }
            }
        }
    }

    /// Folds in iteration `k` and returns `(margin, scale)` at `K = k`.
    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        problem: &ProblemInstance,
        cur: &Snapshot<'_>,
        next: &Snapshot<'_>,
        alpha: f64,
        thetas: &mut ThetaSchedule,
    ) -> Result<(f64, f64)> {
        let k = cur.k;
        let l = problem.smoothness();
        let m = problem.agent_count() as f64;
        let xbar = column_mean(cur.x);
        let zbar = column_mean(cur.z);
        let zbar_next = column_mean(next.z);
        let dz = (&zbar_next - &zbar).norm_squared();
        let cons_y = consensus_error(cur.y);
        let breg = bregman_distance(problem, &xbar, cur.y)?;
        let gap_next = problem.value(&column_mean(next.x)) - problem.f_star();
        let dist_next = (&zbar_next - problem.x_star()).norm_squared();
        let lhs = match self {
            MasterBound::Nsc { rhs } => {
                let theta = thetas.get(k);
                let inv_prev_sq = if k == 0 {
                    (1.0 - theta) / (theta * theta)
                } else {
                    let p = thetas.get(k - 1);
                    1.0 / (p * p)
                };
                *rhs += l / (2.0 * m * theta * theta) * cons_y
                    - (1.0 / (2.0 * alpha) - l / 2.0) * dz
                    - inv_prev_sq * breg;
                let lhs = gap_next / (theta * theta) + dist_next / (2.0 * alpha);
                (*rhs - lhs, lhs)
            }
            MasterBound::Sc { rhs, theta, c } => {
                let t = *theta;
                *rhs = (1.0 - t) * *rhs + l / (2.0 * m) * cons_y
                    - (t * t / (2.0 * alpha) - l * t * t / 2.0) * dz
                    - (1.0 - t) * breg;
                let lhs = gap_next + *c * dist_next;
                (*rhs - lhs, lhs)
            }
        };
        Ok((lhs.0, 1f64.max(lhs.1.abs())))
    }
}

/// Runs `max_iterations` steps of the configured variant from the configured
/// starting point. `config.alpha` must already be resolved to a number (see
/// [`AlgorithmConfig::resolve_alpha`]).
pub fn run(config: &AlgorithmConfig, problem: &ProblemInstance, mixers: &Mixers) -> Result<RunTrace> {
    let alpha = match config.alpha {
        StepSize::Explicit(a) if a > 0.0 && a.is_finite() => a,
        StepSize::Explicit(a) => {
            return Err(Error::invalid(format!("alpha must be positive and finite, got {a}")))
        }
        StepSize::Rule(_) => {
            return Err(Error::ConfigMismatch(
                "alpha must be resolved to a number before running".into(),
            ))
        }
    };
    mixers.check(problem.agent_count())?;
    let x0 = config.starting_point(problem.dim())?;
    let (mu, mut thetas) = match config.mu_mode {
        MuMode::Zero => (0.0, ThetaSchedule::nonstrongly_convex()),
        MuMode::StronglyConvex => {
            let mu = problem.strong_convexity();
            (mu, ThetaSchedule::strongly_convex(mu, alpha)?)
        }
    };
    if config.variant == Variant::Gt {
        return run_gt(config, problem, mixers, alpha, mu, &x0);
    }

    let mut counters = Counters::default();
    let mut state = acc_gt_init(problem, &x0, &mut counters)?;
    let first = Snapshot {
        k: 0,
        x: &state.x,
        y: &state.y,
        z: &state.z,
        s: &state.s,
    };
    let mut master = MasterBound::new(problem, &first, alpha, mu, &mut thetas);
    let mut rows = Vec::with_capacity(config.max_iterations + 1);
    for k in 0..=config.max_iterations {
        let cur = Snapshot {
            k,
            x: &state.x,
            y: &state.y,
            z: &state.z,
            s: &state.s,
        };
        let mut row = observe(problem, &cur, counters);
        if config.finished(k, row.gap) {
            rows.push(row);
            break;
        }
        let theta = thetas.get(k);
        let theta_next = thetas.get(k + 1);
        if matches!(thetas.mode(), ThetaMode::NonstronglyConvex) {
            assert!(
                theta_next <= theta && theta <= 1.0,
                "theta sequence must be nonincreasing"
            );
        }
        let params = StepParams {
            alpha,
            mu,
            theta,
            theta_next,
        };
        let next = acc_gt_step(&state, mixers, params, problem, &mut counters)?;
        if config.diagnostics {
            let after = Snapshot {
                k: k + 1,
                x: &next.x,
                y: &next.y,
                z: &next.z,
                s: &next.s,
            };
            lemma1_margins(problem, &cur, &column_mean(&next.x), &mut row)?;
            let (margin, scale) = master.update(problem, &cur, &after, alpha, &mut thetas)?;
            row.lemma4_margin = margin;
            row.lemma4_scale = scale;
        }
        rows.push(row);
        state = next;
    }
    let thetas = (0..rows.len()).map(|k| thetas.get(k)).collect();
    Ok(RunTrace {
        variant: config.variant,
        mu_mode: config.mu_mode,
        alpha,
        mu,
        agent_count: problem.agent_count(),
        thetas,
        rows,
    })
}

fn run_gt(
    config: &AlgorithmConfig,
    problem: &ProblemInstance,
    mixers: &Mixers,
    alpha: f64,
    mu: f64,
    x0: &Vector,
) -> Result<RunTrace> {
    let mut counters = Counters::default();
    let mut state = gt_init(problem, x0, &mut counters)?;
    let mut rows = Vec::with_capacity(config.max_iterations + 1);
    for k in 0..=config.max_iterations {
        let cur = Snapshot {
            k,
            x: &state.x,
            y: &state.x,
            z: &state.x,
            s: &state.s,
        };
        let mut row = observe(problem, &cur, counters);
        if config.finished(k, row.gap) {
            rows.push(row);
            break;
        }
        let next = gt_step(&state, mixers.w1(), alpha, problem, &mut counters)?;
        if config.diagnostics {
            lemma1_margins(problem, &cur, &column_mean(&next.x), &mut row)?;
        }
        rows.push(row);
        state = next;
    }
    Ok(RunTrace {
        variant: config.variant,
        mu_mode: config.mu_mode,
        alpha,
        mu,
        agent_count: problem.agent_count(),
        thetas: Vec::new(),
        rows,
    })
}
