//! Operators that mix agent states.
//!
//! Every application of a mixing operator costs communication rounds, which
//! are charged to a caller-owned [`Counters`] value: one round for a plain
//! gossip step, `t` rounds for a degree-`t` Chebyshev filter and `ζ` rounds
//! for a multi-round consensus.

use nalgebra::SymmetricEigen;

use crate::graph::{deflated_norm, MatrixSchedule, MixingMatrix, SpectralReport};
use crate::{Error, Mat, Result};

/// Communication and gradient-computation rounds consumed so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub comm_rounds: u64,
    /// One round = every agent evaluates one local gradient, in parallel.
    pub grad_rounds: u64,
}

/// One gossip round: returns `W x`.
pub fn gossip(w: &MixingMatrix, x: &Mat, counters: &mut Counters) -> Result<Mat> {
    if w.agent_count() != x.nrows() {
        return Err(Error::dims(
            format!("{} rows", w.agent_count()),
            format!("{} rows", x.nrows()),
        ));
    }
    counters.comm_rounds += 1;
    Ok(w.entries() * x)
}

/// Maximum asymmetry tolerated by [`ChebyshevOperator`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Chebyshev-accelerated gossip `I − P_t(c₃L)` built on a symmetric `W`,
/// with `L = I − W` and `P_t(x) = 1 − T_t(c₂(1 − x)) / T_t(c₂)`.
#[derive(Clone, Debug)]
pub struct ChebyshevOperator {
    base: MixingMatrix,
    t: usize,
    sigma: f64,
    lambda1: f64,
    nu: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    /// `ν = 1`: the base matrix already averages exactly, so the filter is
    /// replaced by a single application of `W`.
    bypass: bool,
}

impl ChebyshevOperator {
    /// Builds the operator with `t = ⌈1/√ν⌉` inner rounds unless `t` is given.
    pub fn new(base: MixingMatrix, t: Option<usize>) -> Result<Self> {
        let asymmetry = base.max_asymmetry();
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry });
        }
        if t == Some(0) {
            return Err(Error::invalid("Chebyshev degree t must be at least 1"));
        }
        let sigma = crate::graph::sigma(&base)?;
        if sigma >= 1.0 {
            return Err(Error::Disconnected { sigma });
        }
        let m = base.agent_count();
        let laplacian = Mat::identity(m, m) - base.entries();
        let eig = SymmetricEigen::new(laplacian);
        let lambda1 = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v)).min(2.0);
        let nu = if lambda1 > 0.0 { ((1.0 - sigma) / lambda1).min(1.0) } else { 1.0 };
        let bypass = nu >= 1.0 - 1e-12;
        let sqrt_nu = nu.sqrt();
        let c1 = (1.0 - sqrt_nu) / (1.0 + sqrt_nu);
        let c2 = if bypass { f64::INFINITY } else { (1.0 + nu) / (1.0 - nu) };
        let c3 = 2.0 / (lambda1 + 1.0 - sigma);
        let t = match t {
            Some(t) => t,
            None if bypass => 1,
            None => default_degree(nu),
        };
        Ok(ChebyshevOperator {
            base,
            t,
            sigma,
            lambda1,
            nu,
            c1,
            c2,
            c3,
            bypass,
        })
    }

    pub fn base(&self) -> &MixingMatrix {
        &self.base
    }

    pub fn degree(&self) -> usize {
        self.t
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn c3(&self) -> f64 {
        self.c3
    }

    pub fn is_bypassed(&self) -> bool {
        self.bypass
    }

    /// Communication rounds per application.
    pub fn rounds(&self) -> usize {
        if self.bypass {
            1
        } else {
            self.t
        }
    }

    /// Upper bound `2c₁ᵗ/(1 + c₁²ᵗ)` on the filter's norm away from consensus.
    pub fn contraction_bound(&self) -> f64 {
        if self.bypass {
            return self.sigma;
        }
        let ct = self.c1.powi(self.t as i32);
        2.0 * ct / (1.0 + ct * ct)
    }

    /// The `m × m` matrix the operator applies, obtained by filtering the
    /// identity. Does not charge communication.
    pub fn effective_matrix(&self) -> Mat {
        let m = self.base.agent_count();
        self.filter(&Mat::identity(m, m))
    }

    /// `‖(I − P_t(c₃L)) − J/m‖₂`.
    pub fn effective_sigma(&self) -> f64 {
        deflated_norm(&self.effective_matrix())
    }

    fn shifted(&self, v: &Mat) -> Mat {
        // (I − c₃L)v = (1 − c₃)v + c₃Wv
        v * (1.0 - self.c3) + (self.base.entries() * v) * self.c3
    }

    fn filter(&self, x: &Mat) -> Mat {
        if self.bypass {
            return self.base.entries() * x;
        }
        let c2 = self.c2;
        let mut a_prev = 1.0;
        let mut a_cur = c2;
        let mut z_prev = x.clone();
        let mut z_cur = self.shifted(x) * c2;
        for _ in 1..self.t {
            let a_next = 2.0 * c2 * a_cur - a_prev;
            let z_next = self.shifted(&z_cur) * (2.0 * c2) - &z_prev;
            a_prev = a_cur;
            a_cur = a_next;
            z_prev = z_cur;
            z_cur = z_next;
        }
        z_cur / a_cur
    }
}

/// `⌈1/√ν⌉`.
pub fn default_degree(nu: f64) -> usize {
    (1.0 / nu.sqrt()).ceil().max(1.0) as usize
}

/// Applies `(I − P_t(c₃L)) x` by the three-term recurrence; charges `t` rounds.
pub fn chebyshev_apply(op: &ChebyshevOperator, x: &Mat, counters: &mut Counters) -> Result<Mat> {
    if op.base.agent_count() != x.nrows() {
        return Err(Error::dims(
            format!("{} rows", op.base.agent_count()),
            format!("{} rows", x.nrows()),
        ));
    }
    counters.comm_rounds += op.rounds() as u64;
    Ok(op.filter(x))
}

/// `ζ = ⌈γ/(1 − σ_γ)⌉` consensus rounds per virtual mixing step.
pub fn consensus_rounds(gamma: usize, sigma_gamma: f64) -> Result<usize> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    if !(0.0..1.0).contains(&sigma_gamma) {
        return Err(Error::Disconnected { sigma: sigma_gamma });
    }
    Ok((gamma as f64 / (1.0 - sigma_gamma)).ceil().max(1.0) as usize)
}

/// Runs `u^{t+1} = W^{k+t} u^t` for `t = 0..ζ` from `u⁰ = x`; returns `u^ζ`
/// and the rounds consumed.
pub fn multiple_consensus(
    mats: &MatrixSchedule,
    start_round: usize,
    zeta: usize,
    x: &Mat,
    counters: &mut Counters,
) -> Result<(Mat, usize)> {
    if zeta == 0 {
        return Err(Error::invalid("zeta must be at least 1"));
    }
    let mut u = x.clone();
    for t in 0..zeta {
        u = gossip(&*mats.at(start_round + t)?, &u, counters)?;
    }
    Ok((u, zeta))
}

/// Mixing operator used by the algorithms at iteration `k`.
pub enum MixingOperator {
    /// `W^k` from the schedule (static schedules give the same `W` every time).
    Plain(MatrixSchedule),
    /// Chebyshev filter of a static symmetric `W`.
    Chebyshev(ChebyshevOperator),
    /// `W^{kζ+ζ−1} ⋯ W^{kζ}`: iteration `k` consumes graph rounds `[kζ, kζ+ζ)`.
    MultiConsensus { schedule: MatrixSchedule, zeta: usize },
}

impl MixingOperator {
    pub fn agent_count(&self) -> usize {
        match self {
            MixingOperator::Plain(s) => s.agent_count(),
            MixingOperator::Chebyshev(op) => op.base.agent_count(),
            MixingOperator::MultiConsensus { schedule, .. } => schedule.agent_count(),
        }
    }

    /// Communication rounds charged by one application.
    pub fn rounds_per_application(&self) -> usize {
        match self {
            MixingOperator::Plain(_) => 1,
            MixingOperator::Chebyshev(op) => op.rounds(),
            MixingOperator::MultiConsensus { zeta, .. } => *zeta,
        }
    }

    pub fn apply(&self, k: usize, x: &Mat, counters: &mut Counters) -> Result<Mat> {
        match self {
            MixingOperator::Plain(s) => gossip(&*s.at(k)?, x, counters),
            MixingOperator::Chebyshev(op) => chebyshev_apply(op, x, counters),
            MixingOperator::MultiConsensus { schedule, zeta } => {
                multiple_consensus(schedule, k * zeta, *zeta, x, counters).map(|(u, _)| u)
            }
        }
    }

    /// The matrix applied at iteration `k`, without charging communication.
    pub fn matrix_at(&self, k: usize) -> Result<Mat> {
        match self {
            MixingOperator::Plain(s) => Ok(s.at(k)?.entries().clone()),
            MixingOperator::Chebyshev(op) => Ok(op.effective_matrix()),
            MixingOperator::MultiConsensus { schedule, zeta } => {
                Ok(schedule.window_product(k * zeta + zeta - 1, *zeta)?.into_entries())
            }
        }
    }

    /// Spectral constants of the operator viewed as a per-iteration mixing
    /// sequence with window `gamma`. Chebyshev and multi-round consensus are
    /// reported with `gamma = 1`.
    pub fn spectral_report(&self, gamma: usize, horizon: usize) -> Result<SpectralReport> {
        match self {
            MixingOperator::Plain(s) => crate::graph::sigma_gamma_of(s, gamma, horizon),
            MixingOperator::Chebyshev(op) => {
                let s = op.effective_sigma();
                Ok(SpectralReport {
                    sigma: s,
                    sigma_gamma: s,
                    gamma: 1,
                    horizon_used: 1,
                    is_estimate: false,
                })
            }
            MixingOperator::MultiConsensus { schedule, zeta } => {
                // window starts kζ repeat with period p / gcd(p, ζ)
                let (count, is_estimate) = match schedule.period() {
                    Some(p) => (p / gcd(p, *zeta), false),
                    None => (horizon.max(1), true),
                };
                let mut worst = 0.0f64;
                for k in 0..count {
                    worst = worst.max(deflated_norm(&self.matrix_at(k)?));
                }
                Ok(SpectralReport {
                    sigma: worst,
                    sigma_gamma: worst,
                    gamma: 1,
                    horizon_used: count,
                    is_estimate,
                })
            }
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metropolis_weights, EdgeSet, GraphSchedule};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(m: usize, n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn demean(x: &Mat) -> Mat {
        let mean = x.row_mean();
        let mut out = x.clone();
        for mut r in out.row_iter_mut() {
            r -= &mean;
        }
        out
    }

    fn ring_op(m: usize) -> ChebyshevOperator {
        ChebyshevOperator::new(metropolis_weights(&EdgeSet::ring(m), m).unwrap(), None).unwrap()
    }

    #[test]
    fn gossip_basics() {
        let x = random_state(4, 3, 1);
        let mut c = Counters::default();
        assert_eq!(gossip(&MixingMatrix::identity(4), &x, &mut c).unwrap(), x);
        let avg = gossip(&MixingMatrix::averaging(4), &x, &mut c).unwrap();
        let mean = x.row_mean();
        for r in avg.row_iter() {
            assert!((r - &mean).amax() < 1e-15);
        }
        let consensual = Mat::from_fn(5, 2, |_, j| j as f64 + 0.5);
        let w = metropolis_weights(&EdgeSet::ring(5), 5).unwrap();
        let out = gossip(&w, &consensual, &mut c).unwrap();
        assert!((out - &consensual).amax() < 1e-15);
        assert_eq!(c.comm_rounds, 3);
        assert!(gossip(&w, &x, &mut c).is_err());
    }

    #[test]
    fn chebyshev_degree_one_is_shifted_gossip() {
        let w = metropolis_weights(&EdgeSet::ring(6), 6).unwrap();
        let op = ChebyshevOperator::new(w.clone(), Some(1)).unwrap();
        let x = random_state(6, 2, 3);
        let l = Mat::identity(6, 6) - w.entries();
        let expected = (Mat::identity(6, 6) - l * op.c3()) * &x;
        let mut c = Counters::default();
        let out = chebyshev_apply(&op, &x, &mut c).unwrap();
        assert!((out - expected).amax() < 1e-14);
        assert_eq!(c.comm_rounds, 1);
    }

    #[test]
    fn chebyshev_keeps_consensual_states() {
        let op = ring_op(10);
        let x = Mat::from_fn(10, 3, |_, j| 1.0 - j as f64);
        let mut c = Counters::default();
        let out = chebyshev_apply(&op, &x, &mut c).unwrap();
        assert!((out - &x).amax() < 1e-12);
        assert_eq!(c.comm_rounds, op.degree() as u64);
    }

    #[test]
    fn chebyshev_constants_on_ring10() {
        // frozen from a dense eigen-solve of the ring-10 Metropolis matrix
        let op = ring_op(10);
        assert_abs_diff_eq!(op.sigma(), 0.8726779962499647, epsilon = 1e-12);
        assert_abs_diff_eq!(op.lambda1(), 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(op.nu(), 0.09549150281252654, epsilon = 1e-12);
        assert_eq!(op.degree(), 4);
        assert_abs_diff_eq!(op.c1(), 0.5278640450004201, epsilon = 1e-12);
        assert!(op.c1() >= 0.0 && op.c1() < 1.0 && op.c2() > 1.0);
    }

    #[test]
    fn chebyshev_contracts_ring10() {
        let op = ring_op(10);
        let mut c = Counters::default();
        for seed in 0..20 {
            let x = random_state(10, 4, seed);
            let out = chebyshev_apply(&op, &x, &mut c).unwrap();
            assert!(demean(&out).norm() <= 0.65 * demean(&x).norm() + 1e-12);
        }
        assert!(op.effective_sigma() <= op.contraction_bound() + 1e-9);
    }

    #[test]
    fn chebyshev_rejects_bad_input() {
        let w = metropolis_weights(&EdgeSet::ring(5), 5).unwrap();
        assert!(ChebyshevOperator::new(w.clone(), Some(0)).is_err());
        let asym = Mat::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5]);
        let asym = MixingMatrix::from_matrix(asym).unwrap();
        assert!(matches!(
            ChebyshevOperator::new(asym, None),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            ChebyshevOperator::new(MixingMatrix::identity(3), None),
            Err(Error::Disconnected { .. })
        ));
    }

    #[test]
    fn chebyshev_bypasses_exact_averaging() {
        let w = metropolis_weights(&EdgeSet::complete(3), 3).unwrap();
        let op = ChebyshevOperator::new(w, None).unwrap();
        assert!(op.is_bypassed());
        assert_eq!(op.rounds(), 1);
        assert!(op.effective_sigma() < 1e-12);
    }

    #[test]
    fn zeta_ceiling() {
        assert_eq!(consensus_rounds(2, 0.5).unwrap(), 4);
        assert_eq!(consensus_rounds(1, 0.0).unwrap(), 1);
        assert!(consensus_rounds(1, 1.0).is_err());
    }

    #[test]
    fn multiple_consensus_basics() {
        let g = GraphSchedule::static_graph(5, EdgeSet::ring(5)).unwrap();
        let mats = MatrixSchedule::metropolis(&g).unwrap();
        let consensual = Mat::from_element(5, 2, 3.0);
        let mut c = Counters::default();
        let (out, used) = multiple_consensus(&mats, 0, 7, &consensual, &mut c).unwrap();
        assert_eq!(used, 7);
        assert!((out - &consensual).amax() < 1e-14);

        let x = random_state(5, 2, 9);
        let (one, _) = multiple_consensus(&mats, 3, 1, &x, &mut c).unwrap();
        let direct = gossip(&mats.at(3).unwrap(), &x, &mut c).unwrap();
        assert_eq!(one, direct);
    }

    #[test]
    fn multiple_consensus_ring5_contracts_by_one_over_e() {
        let g = GraphSchedule::static_graph(5, EdgeSet::ring(5)).unwrap();
        let mats = MatrixSchedule::metropolis(&g).unwrap();
        let s = crate::graph::sigma(&mats.at(0).unwrap()).unwrap();
        let zeta = consensus_rounds(1, s).unwrap();
        assert_eq!(zeta, 3);
        let mut c = Counters::default();
        for seed in 0..50 {
            let x = random_state(5, 3, seed);
            let (u, _) = multiple_consensus(&mats, 0, zeta, &x, &mut c).unwrap();
            assert!(demean(&u).norm() <= demean(&x).norm() / std::f64::consts::E + 1e-12);
        }
    }
}
