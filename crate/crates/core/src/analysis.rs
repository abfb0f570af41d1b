//! Bound certificates, rate fitting and contraction measurements for runs.
//!
//! A certificate compares a recorded trace against a closed-form bound at
//! every admissible index and keeps the smallest `RHS − LHS`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algorithms::{default_alpha, MuMode, RunTrace, Variant};
use crate::problems::project_out_mean;
use crate::problems::ProblemInstance;
use crate::{Error, Mat, Result};

/// Relative tolerance of every certificate.
pub const CERTIFICATE_REL_TOL: f64 = 1e-7;
/// Gaps below this are treated as underflow by [`fit_rate`].
pub const GAP_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    #[serde(rename = "T1_gap")]
    T1Gap,
    #[serde(rename = "T1_consensus")]
    T1Consensus,
    #[serde(rename = "T2_gap")]
    T2Gap,
    #[serde(rename = "T2_consensus")]
    T2Consensus,
    #[serde(rename = "T3_gap")]
    T3Gap,
    #[serde(rename = "T3_consensus")]
    T3Consensus,
    #[serde(rename = "T4_gap")]
    T4Gap,
    #[serde(rename = "T4_consensus")]
    T4Consensus,
}

impl TheoremId {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::T1Gap => "T1_gap",
            TheoremId::T1Consensus => "T1_consensus",
            TheoremId::T2Gap => "T2_gap",
            TheoremId::T2Consensus => "T2_consensus",
            TheoremId::T3Gap => "T3_gap",
            TheoremId::T3Consensus => "T3_consensus",
            TheoremId::T4Gap => "T4_gap",
            TheoremId::T4Consensus => "T4_consensus",
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub theorem_id: TheoremId,
    /// `worst_margin ≥ −tolerance`.
    pub holds: bool,
    /// `min_K (RHS − LHS)`.
    pub worst_margin: f64,
    pub first_violation_k: Option<usize>,
    /// `1e-7 · max(1, max_K |LHS|)`.
    pub tolerance: f64,
    /// Whether the step size and spectral constant satisfy the theorem's
    /// hypotheses. A certificate is still computed when they do not.
    pub hypotheses_met: bool,
    /// Number of indices checked.
    pub checked: usize,
}

impl BoundCertificate {
    /// Builds a certificate from `(K, lhs, rhs)` triples.
    fn from_points(theorem_id: TheoremId, hypotheses_met: bool, points: &[(usize, f64, f64)]) -> Self {
        let scale = points.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
        let tolerance = CERTIFICATE_REL_TOL * scale;
        let worst_margin = points
            .iter()
            .map(|p| p.2 - p.1)
            .fold(f64::INFINITY, f64::min);
        // NaN margins count as violations
        let first_violation_k = points
            .iter()
            .find(|p| !(p.2 - p.1 >= -tolerance))
            .map(|p| p.0);
        BoundCertificate {
            theorem_id,
            holds: first_violation_k.is_none(),
            worst_margin,
            first_violation_k,
            tolerance,
            hypotheses_met,
            checked: points.len(),
        }
    }
}

impl fmt::Display for BoundCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} holds={} worst_margin={:.6e} first_violation_k={} hypotheses_met={}",
            self.theorem_id,
            self.holds,
            self.worst_margin,
            self.first_violation_k
                .map_or_else(|| "none".to_string(), |k| k.to_string()),
            self.hypotheses_met
        )
    }
}

/// Gap and consensus certificates of one theorem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCertificates {
    pub gap: BoundCertificate,
    pub consensus: BoundCertificate,
}

impl TheoremCertificates {
    pub fn holds(&self) -> bool {
        self.gap.holds && self.consensus.holds
    }

    pub fn to_vec(&self) -> Vec<BoundCertificate> {
        vec![self.gap.clone(), self.consensus.clone()]
    }
}

fn require_mode(trace: &RunTrace, alpha: f64, mode: MuMode, theorem: &str) -> Result<()> {
    if alpha != trace.alpha {
        return Err(Error::ConfigMismatch(format!(
            "alpha {alpha:e} differs from the run's alpha {:e}",
            trace.alpha
        )));
    }
    if !trace.variant.is_accelerated() {
        return Err(Error::ConfigMismatch(format!(
            "{theorem} applies to accelerated runs, got {}",
            trace.variant.name()
        )));
    }
    if trace.mu_mode != mode {
        return Err(Error::ConfigMismatch(format!(
            "{theorem} needs mu_mode {mode:?}, trace used {:?}",
            trace.mu_mode
        )));
    }
    if trace.rows.is_empty() {
        return Err(Error::ConfigMismatch("empty trace".into()));
    }
    Ok(())
}

fn alpha_within(alpha: f64, bound: Result<f64>) -> bool {
    bound.is_ok_and(|b| alpha <= b * (1.0 + 1e-12))
}

fn sc_theta(trace: &RunTrace) -> f64 {
    (trace.mu * trace.alpha).sqrt() / 2.0
}

/// Static nonstrongly convex bound, checked for every recorded `K`.
pub fn certify_theorem1(
    trace: &RunTrace,
    problem: &ProblemInstance,
    alpha: f64,
    sigma: f64,
) -> Result<TheoremCertificates> {
    require_mode(trace, alpha, MuMode::Zero, "the static nonstrongly convex bound")?;
    let l = problem.smoothness();
    let hyp = alpha_within(alpha, default_alpha(Variant::AccGtStatic, l, sigma, 1, MuMode::Zero));
    let d0 = trace.rows[0].zbar_dist;
    let cs0 = trace.rows[0].cons_s;
    let gap_const = 2.0 / alpha * d0 + (1.0 - sigma) / (2.0 * l) * cs0;
    let cons_const = 5.0 / (l * alpha) * d0 + 9.0 * (1.0 - sigma) / (4.0 * l * l) * cs0;
    let gap: Vec<_> = (0..trace.rows.len() - 1)
        .map(|k| {
            let w = ((k + 1) as f64).powi(2);
            (k, trace.rows[k + 1].gap, gap_const / w)
        })
        .collect();
    let cons: Vec<_> = trace
        .rows
        .iter()
        .map(|r| (r.k, r.cons_x, cons_const / ((r.k + 1) as f64).powi(2)))
        .collect();
    Ok(TheoremCertificates {
        gap: BoundCertificate::from_points(TheoremId::T1Gap, hyp, &gap),
        consensus: BoundCertificate::from_points(TheoremId::T1Consensus, hyp, &cons),
    })
}

/// Linear-rate check shared by the strongly convex bounds: `gap(K+1) +
/// c‖z̄^{K+1}−x*‖² ≤ (1−θ)^{K+1} C` and `cons_x(K) ≤ (1−θ)^{K+1} 4C/L`
/// at every `K` in `indices`.
fn linear_rate_points(
    trace: &RunTrace,
    l: f64,
    theta: f64,
    c_const: f64,
    indices: impl Iterator<Item = usize> + Clone,
) -> (Vec<(usize, f64, f64)>, Vec<(usize, f64, f64)>) {
    let weight = theta * theta / (2.0 * trace.alpha) + trace.mu * theta / 2.0;
    let decay = |k: usize| (1.0 - theta).powi((k + 1) as i32);
    let gap = indices
        .clone()
        .filter(|&k| k + 1 < trace.rows.len())
        .map(|k| {
            let r = &trace.rows[k + 1];
            (k, r.gap + weight * r.zbar_dist, decay(k) * c_const)
        })
        .collect();
    let cons = indices
        .filter(|&k| k < trace.rows.len())
        .map(|k| (k, trace.rows[k].cons_x, decay(k) * 4.0 * c_const / l))
        .collect();
    (gap, cons)
}

fn sc_base(trace: &RunTrace, theta: f64) -> f64 {
    let weight = theta * theta / (2.0 * trace.alpha) + trace.mu * theta / 2.0;
    trace.rows[0].gap + weight * trace.rows[0].zbar_dist
}

/// Static strongly convex bound with `C` from the initialization.
pub fn certify_theorem2(
    trace: &RunTrace,
    problem: &ProblemInstance,
    alpha: f64,
    sigma: f64,
) -> Result<TheoremCertificates> {
    require_mode(trace, alpha, MuMode::StronglyConvex, "the static strongly convex bound")?;
    let l = problem.smoothness();
    let theta = sc_theta(trace);
    let hyp = alpha_within(
        alpha,
        default_alpha(Variant::AccGtStatic, l, sigma, 1, MuMode::StronglyConvex),
    );
    let c_const = sc_base(trace, theta)
        + 4.0 * (1.0 - sigma) / (59.0 * l * (1.0 - theta)) * trace.rows[0].cons_s;
    let (gap, cons) = linear_rate_points(trace, l, theta, c_const, 0..trace.rows.len());
    Ok(TheoremCertificates {
        gap: BoundCertificate::from_points(TheoremId::T2Gap, hyp, &gap),
        consensus: BoundCertificate::from_points(TheoremId::T2Consensus, hyp, &cons),
    })
}

fn require_warmup(trace: &RunTrace, gamma: usize) -> Result<()> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    if trace.rows.len() < gamma + 1 {
        return Err(Error::ConfigMismatch(format!(
            "time-varying bounds need at least gamma + 1 = {} recorded iterates",
            gamma + 1
        )));
    }
    Ok(())
}

/// Time-varying nonstrongly convex bound at every multiple `Tγ`.
pub fn certify_theorem3(
    trace: &RunTrace,
    problem: &ProblemInstance,
    alpha: f64,
    sigma_gamma: f64,
    gamma: usize,
) -> Result<TheoremCertificates> {
    require_mode(trace, alpha, MuMode::Zero, "the time-varying nonstrongly convex bound")?;
    require_warmup(trace, gamma)?;
    let l = problem.smoothness();
    let m = trace.agent_count as f64;
    let g = gamma as f64;
    let hyp = alpha_within(
        alpha,
        default_alpha(Variant::AccGtTv, l, sigma_gamma, gamma, MuMode::Zero),
    );
    // ‖Πs^r‖² = m · cons_s(r)
    let max_s = trace.rows[..=gamma]
        .iter()
        .map(|r| m * r.cons_s)
        .fold(0.0, f64::max);
    let r_const = 2.0 / alpha * trace.rows[0].zbar_dist + (1.0 - sigma_gamma) / (5.0 * m * l * g) * max_s;
    let multiples = (0..trace.rows.len()).step_by(gamma);
    let gap: Vec<_> = multiples
        .clone()
        .filter(|&k| k + 1 < trace.rows.len())
        .map(|k| (k, trace.rows[k + 1].gap, r_const / ((k + 1) as f64).powi(2)))
        .collect();
    let cons: Vec<_> = multiples
        .map(|k| {
            let bound = 9.0 * r_const / (2.0 * l * ((k + 1) as f64).powi(2));
            (k, trace.rows[k].cons_x, bound)
        })
        .collect();
    Ok(TheoremCertificates {
        gap: BoundCertificate::from_points(TheoremId::T3Gap, hyp, &gap),
        consensus: BoundCertificate::from_points(TheoremId::T3Consensus, hyp, &cons),
    })
}

/// Time-varying strongly convex bound at every multiple `Tγ`; the warm-up
/// maxima are taken over iterates `1..=γ`.
pub fn certify_theorem4(
    trace: &RunTrace,
    problem: &ProblemInstance,
    alpha: f64,
    sigma_gamma: f64,
    gamma: usize,
) -> Result<TheoremCertificates> {
    require_mode(trace, alpha, MuMode::StronglyConvex, "the time-varying strongly convex bound")?;
    require_warmup(trace, gamma)?;
    let l = problem.smoothness();
    let m = trace.agent_count as f64;
    let g = gamma as f64;
    let theta = sc_theta(trace);
    let hyp = alpha_within(
        alpha,
        default_alpha(Variant::AccGtTv, l, sigma_gamma, gamma, MuMode::StronglyConvex),
    );
    let warmup = &trace.rows[1..=gamma];
    let max_of = |f: &dyn Fn(&crate::TraceRow) -> f64| warmup.iter().map(f).fold(0.0, f64::max);
    let m_s = max_of(&|r| m * r.cons_s);
    let m_x = max_of(&|r| m * r.cons_x);
    let m_z = max_of(&|r| theta * theta * m * r.cons_z);
    let gap_sg = 1.0 - sigma_gamma;
    let c_const = sc_base(trace, theta)
        + gap_sg / (49.0 * m * l * g * (1.0 - theta)) * m_s
        + 1459.0 * l * g.powi(3) / (m * (1.0 - theta) * gap_sg.powi(3)) * m_z
        + 6.6 * l * g / (m * (1.0 - theta) * gap_sg) * m_x;
    let (gap, cons) = linear_rate_points(
        trace,
        l,
        theta,
        c_const,
        (0..trace.rows.len()).step_by(gamma),
    );
    Ok(TheoremCertificates {
        gap: BoundCertificate::from_points(TheoremId::T4Gap, hyp, &gap),
        consensus: BoundCertificate::from_points(TheoremId::T4Consensus, hyp, &cons),
    })
}

/// The certificates that apply to a run of `trace.variant`.
///
/// `sigma` is the measured spectral constant of the operator the run used
/// (`σ`, the filtered `σ'`, `σ_γ`, or the per-step contraction of
/// multi-round consensus) and `gamma` its window. Plain gradient tracking
/// has no certificate.
pub fn certify_run(
    trace: &RunTrace,
    problem: &ProblemInstance,
    sigma: f64,
    gamma: usize,
) -> Result<Option<TheoremCertificates>> {
    let alpha = trace.alpha;
    let certs = match (trace.variant, trace.mu_mode) {
        (Variant::Gt, _) => return Ok(None),
        (Variant::AccGtStatic | Variant::AccGtChebyshev, MuMode::Zero) => {
            certify_theorem1(trace, problem, alpha, sigma)?
        }
        (Variant::AccGtStatic | Variant::AccGtChebyshev, MuMode::StronglyConvex) => {
            certify_theorem2(trace, problem, alpha, sigma)?
        }
        (Variant::AccGtTv, MuMode::Zero) => certify_theorem3(trace, problem, alpha, sigma, gamma)?,
        (Variant::AccGtTv, MuMode::StronglyConvex) => {
            certify_theorem4(trace, problem, alpha, sigma, gamma)?
        }
        (Variant::AccGtMulticonsensus, MuMode::Zero) => {
            certify_theorem3(trace, problem, alpha, sigma, 1)?
        }
        (Variant::AccGtMulticonsensus, MuMode::StronglyConvex) => {
            certify_theorem4(trace, problem, alpha, sigma, 1)?
        }
    };
    Ok(Some(certs))
}

/// Least-squares slope of `log(gap)` against `log(k)` (`MuMode::Zero`) or
/// against `k` (`MuMode::StronglyConvex`) over rows `window.0..window.1`.
///
/// Without a window the first 10% of the trace is skipped. The window is cut
/// at the first gap below [`GAP_FLOOR`].
pub fn fit_rate(trace: &RunTrace, window: Option<(usize, usize)>) -> Result<f64> {
    let n = trace.rows.len();
    let (start, end) = window.unwrap_or((n / 10, n));
    if start >= end || end > n {
        return Err(Error::invalid(format!(
            "window {start}..{end} outside trace of {n} rows"
        )));
    }
    let points: Vec<(f64, f64)> = trace.rows[start..end]
        .iter()
        .take_while(|r| r.gap >= GAP_FLOOR)
        .filter(|r| trace.mu_mode == MuMode::StronglyConvex || r.k > 0)
        .map(|r| {
            let x = match trace.mu_mode {
                MuMode::Zero => (r.k as f64).ln(),
                MuMode::StronglyConvex => r.k as f64,
            };
            (x, r.gap.ln())
        })
        .collect();
    least_squares_slope(&points)
}

/// Slope of the least-squares line through `points`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid(
            "rate fit needs at least two points above the gap floor",
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

/// `‖Π W x‖ / ‖Π x‖` (zero for consensual `x`).
pub fn consensus_contraction(w: &Mat, x: &Mat) -> Result<f64> {
    if w.ncols() != x.nrows() || w.nrows() != w.ncols() {
        return Err(Error::dims(
            format!("{} rows", w.ncols()),
            format!("{} rows", x.nrows()),
        ));
    }
    let before = project_out_mean(x).norm();
    if before == 0.0 {
        return Ok(0.0);
    }
    Ok(project_out_mean(&(w * x)).norm() / before)
}

/// One line per certificate.
pub fn render_report(certs: &[BoundCertificate]) -> String {
    certs.iter().map(|c| format!("{c}\n")).collect()
}
