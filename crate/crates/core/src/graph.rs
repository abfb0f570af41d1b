//! Communication graphs and the mixing matrices built on them.
//!
//! A [`GraphSchedule`] yields an undirected edge set `E^k` for every round
//! `k ≥ 0`. A [`WeightRule`] turns an edge set into a doubly stochastic
//! [`MixingMatrix`]; the default rule is [`Metropolis`]. The spectral
//! constants reported here are
//!
//! ```text
//! σ   = ‖W − J/m‖₂
//! σ_γ = sup_{k ≥ γ−1} ‖W^k W^{k−1} ⋯ W^{k−γ+1} − J/m‖₂
//! ```
//!
//! where `J = 𝟙𝟙ᵀ`. Both are computed densely; the supremum is exact for
//! static and cyclic schedules and sampled over a finite horizon for seeded
//! random ones.

use std::borrow::Cow;
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// Tolerance on row/column sums for matrices this crate constructs.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance on row/column sums for matrices supplied by a caller.
pub const ACCEPTANCE_TOL: f64 = 1e-9;

/// Default number of rounds sampled when estimating `σ_γ` of a random schedule.
pub const DEFAULT_SPECTRAL_HORIZON: usize = 1000;

/// Undirected edge set without self-loops. Edges are stored as `(i, j)` with
/// `i < j`, sorted and deduplicated, so `(i, j)` and `(j, i)` are the same edge.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct EdgeSet {
    edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Normalizes `edges`; self-loops are dropped since self-weights are implicit.
    pub fn new<I: IntoIterator<Item = (usize, usize)>>(edges: I) -> Self {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| if i < j { (i, j) } else { (j, i) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        EdgeSet { edges }
    }

    pub fn empty() -> Self {
        EdgeSet::default()
    }

    /// Cycle `0 – 1 – ⋯ – (m−1) – 0`. For `m = 2` this is a single edge.
    pub fn ring(m: usize) -> Self {
        if m < 2 {
            return EdgeSet::empty();
        }
        EdgeSet::new((0..m).map(|i| (i, (i + 1) % m)))
    }

    pub fn path(m: usize) -> Self {
        EdgeSet::new((1..m).map(|i| (i - 1, i)))
    }

    pub fn complete(m: usize) -> Self {
        EdgeSet::new((0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))))
    }

    pub fn star(m: usize) -> Self {
        EdgeSet::new((1..m).map(|i| (0, i)))
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).is_ok()
    }

    /// Checks that every endpoint lies in `[0, m)`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::invalid("agent count m must be positive"));
        }
        if let Some(&(i, j)) = self.edges.iter().find(|&&(_, j)| j >= m) {
            return Err(Error::invalid(format!(
                "edge ({i}, {j}) references an agent outside [0, {m})"
            )));
        }
        Ok(())
    }

    pub fn degrees(&self, m: usize) -> Vec<usize> {
        let mut deg = vec![0; m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn union<'a, I: IntoIterator<Item = &'a EdgeSet>>(sets: I) -> Self {
        EdgeSet::new(sets.into_iter().flat_map(|s| s.edges.iter().copied()))
    }

    /// Breadth-first connectivity check over agents `0..m`.
    pub fn is_connected(&self, m: usize) -> bool {
        if m <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == m
    }
}

/// Replay rule of a [`GraphSchedule`].
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleKind {
    /// One edge set used at every round.
    Static,
    /// `period` edge sets replayed in order.
    Cyclic { period: usize },
    /// Every edge `(i, j)` present independently with probability `edge_prob`,
    /// drawn reproducibly from `seed` and the round index.
    SeededRandom { edge_prob: f64, seed: u64 },
}

/// Sequence of edge sets `E^0, E^1, …` over `m` agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct GraphSchedule {
    m: usize,
    kind: ScheduleKind,
    edge_sets: Vec<EdgeSet>,
}

impl GraphSchedule {
    pub fn static_graph(m: usize, edges: EdgeSet) -> Result<Self> {
        edges.validate(m)?;
        Ok(GraphSchedule {
            m,
            kind: ScheduleKind::Static,
            edge_sets: vec![edges],
        })
    }

    pub fn cyclic(m: usize, edge_sets: Vec<EdgeSet>) -> Result<Self> {
        if edge_sets.is_empty() {
            return Err(Error::invalid("cyclic schedule needs at least one edge set"));
        }
        for e in &edge_sets {
            e.validate(m)?;
        }
        Ok(GraphSchedule {
            m,
            kind: ScheduleKind::Cyclic {
                period: edge_sets.len(),
            },
            edge_sets,
        })
    }

    pub fn seeded_random(m: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("agent count m must be positive"));
        }
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(Error::invalid(format!(
                "edge probability {edge_prob} outside [0, 1]"
            )));
        }
        Ok(GraphSchedule {
            m,
            kind: ScheduleKind::SeededRandom { edge_prob, seed },
            edge_sets: Vec::new(),
        })
    }

    /// Ring edges split into `parts` classes by edge index modulo `parts`,
    /// replayed cyclically. No single class is connected when `parts > 1`
    /// but every `parts` consecutive rounds cover the whole ring.
    pub fn split_ring(m: usize, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::invalid("split_ring needs at least one part"));
        }
        let ring: Vec<(usize, usize)> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        let sets = (0..parts)
            .map(|c| {
                EdgeSet::new(
                    ring.iter()
                        .enumerate()
                        .filter(|(idx, _)| idx % parts == c)
                        .map(|(_, &e)| e),
                )
            })
            .collect();
        GraphSchedule::cyclic(m, sets)
    }

    pub fn agent_count(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Number of distinct rounds before the schedule repeats; `None` for
    /// random schedules.
    pub fn period(&self) -> Option<usize> {
        match self.kind {
            ScheduleKind::Static => Some(1),
            ScheduleKind::Cyclic { period } => Some(period),
            ScheduleKind::SeededRandom { .. } => None,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, ScheduleKind::Static)
    }

    /// Edge set used at round `k`.
    pub fn edge_set(&self, k: usize) -> Cow<'_, EdgeSet> {
        match self.kind {
            ScheduleKind::Static => Cow::Borrowed(&self.edge_sets[0]),
            ScheduleKind::Cyclic { period } => Cow::Borrowed(&self.edge_sets[k % period]),
            ScheduleKind::SeededRandom { edge_prob, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let m = self.m;
                let mut edges = Vec::new();
                for i in 0..m {
                    for j in i + 1..m {
                        if rng.random::<f64>() < edge_prob {
                            edges.push((i, j));
                        }
                    }
                }
                Cow::Owned(EdgeSet { edges })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Static,
    Cyclic,
    SeededRandom,
}

/// Structured-text layout of a schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScheduleRepr {
    m: usize,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_prob: Option<f64>,
    #[serde(default)]
    edge_sets: Vec<Vec<[usize; 2]>>,
}

impl TryFrom<ScheduleRepr> for GraphSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        let sets: Vec<EdgeSet> = r
            .edge_sets
            .iter()
            .map(|s| EdgeSet::new(s.iter().map(|&[i, j]| (i, j))))
            .collect();
        match r.kind {
            KindTag::Static => {
                if sets.len() != 1 {
                    return Err(Error::invalid(format!(
                        "static schedule needs exactly one edge set, got {}",
                        sets.len()
                    )));
                }
                GraphSchedule::static_graph(r.m, sets.into_iter().next().unwrap())
            }
            KindTag::Cyclic => {
                if let Some(p) = r.period {
                    if p != sets.len() {
                        return Err(Error::invalid(format!(
                            "cyclic period {p} does not match {} edge sets",
                            sets.len()
                        )));
                    }
                }
                GraphSchedule::cyclic(r.m, sets)
            }
            KindTag::SeededRandom => {
                let q = r
                    .edge_prob
                    .ok_or_else(|| Error::invalid("seeded_random schedule needs edge_prob"))?;
                GraphSchedule::seeded_random(r.m, q, r.seed.unwrap_or(0))
            }
        }
    }
}

impl From<GraphSchedule> for ScheduleRepr {
    fn from(g: GraphSchedule) -> Self {
        let edge_sets = g
            .edge_sets
            .iter()
            .map(|s| s.edges.iter().map(|&(i, j)| [i, j]).collect())
            .collect();
        let (kind, period, seed, edge_prob) = match g.kind {
            ScheduleKind::Static => (KindTag::Static, None, None, None),
            ScheduleKind::Cyclic { period } => (KindTag::Cyclic, Some(period), None, None),
            ScheduleKind::SeededRandom { edge_prob, seed } => {
                (KindTag::SeededRandom, None, Some(seed), Some(edge_prob))
            }
        };
        ScheduleRepr {
            m: g.m,
            kind,
            period,
            seed,
            edge_prob,
            edge_sets,
        }
    }
}

/// `m × m` doubly stochastic matrix, optionally tied to the edge set it was
/// built from.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    entries: Mat,
    source: Option<EdgeSet>,
}

impl MixingMatrix {
    /// Accepts a caller-supplied matrix after checking it is square,
    /// nonnegative and doubly stochastic to [`ACCEPTANCE_TOL`].
    pub fn from_matrix(entries: Mat) -> Result<Self> {
        Self::checked(entries, None, ACCEPTANCE_TOL)
    }

    fn checked(entries: Mat, source: Option<EdgeSet>, tol: f64) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::dims(
                "nonempty square matrix",
                format!("{}x{}", entries.nrows(), entries.ncols()),
            ));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < -tol) {
            return Err(Error::invalid("mixing matrix has negative or non-finite entries"));
        }
        let deviation = stochastic_deviation(&entries);
        if deviation > tol {
            return Err(Error::NotDoublyStochastic { deviation });
        }
        Ok(MixingMatrix { entries, source })
    }

    pub fn identity(m: usize) -> Self {
        MixingMatrix {
            entries: Mat::identity(m, m),
            source: Some(EdgeSet::empty()),
        }
    }

    /// Exact averaging `J/m`.
    pub fn averaging(m: usize) -> Self {
        MixingMatrix {
            entries: Mat::from_element(m, m, 1.0 / m as f64),
            source: None,
        }
    }

    pub(crate) fn from_product(entries: Mat) -> Self {
        MixingMatrix {
            entries,
            source: None,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn source_edge_set(&self) -> Option<&EdgeSet> {
        self.source.as_ref()
    }

    pub fn into_entries(self) -> Mat {
        self.entries
    }

    /// Largest deviation of a row or column sum from 1.
    pub fn stochastic_deviation(&self) -> f64 {
        stochastic_deviation(&self.entries)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let w = &self.entries;
        let mut worst = 0.0f64;
        for i in 0..w.nrows() {
            for j in i + 1..w.ncols() {
                worst = worst.max((w[(i, j)] - w[(j, i)]).abs());
            }
        }
        worst
    }
}

fn stochastic_deviation(w: &Mat) -> f64 {
    let rows = w.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = w.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Maps an edge set to a mixing matrix.
pub trait WeightRule: Send + Sync {
    fn weights(&self, edges: &EdgeSet, m: usize) -> Result<MixingMatrix>;
}

/// Metropolis weights: `W_ij = 1/(1 + max(d_i, d_j))` on edges, zero off
/// the graph, and the diagonal absorbs the remainder of each row.
#[derive(Clone, Copy, Debug, Default)]
pub struct Metropolis;

impl WeightRule for Metropolis {
    fn weights(&self, edges: &EdgeSet, m: usize) -> Result<MixingMatrix> {
        metropolis_weights(edges, m)
    }
}

impl<F> WeightRule for F
where
    F: Fn(&EdgeSet, usize) -> Result<MixingMatrix> + Send + Sync,
{
    fn weights(&self, edges: &EdgeSet, m: usize) -> Result<MixingMatrix> {
        self(edges, m)
    }
}

pub fn metropolis_weights(edges: &EdgeSet, m: usize) -> Result<MixingMatrix> {
    edges.validate(m)?;
    let deg = edges.degrees(m);
    let mut w = Mat::zeros(m, m);
    for &(i, j) in edges.edges() {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::checked(w, Some(edges.clone()), CONSTRUCTION_TOL)
}

/// Spectral norm of `M − J/m`, clamped to `[0, 1]` for doubly stochastic `M`.
pub(crate) fn deflated_norm(w: &Mat) -> f64 {
    let m = w.nrows();
    let shifted = w.map(|v| v - 1.0 / m as f64);
    spectral_norm(&shifted).min(1.0)
}

pub(crate) fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, &v| acc.max(v))
}

/// `σ = ‖W − J/m‖₂`.
pub fn sigma(w: &MixingMatrix) -> Result<f64> {
    let deviation = w.stochastic_deviation();
    if deviation > ACCEPTANCE_TOL {
        return Err(Error::NotDoublyStochastic { deviation });
    }
    Ok(deflated_norm(w.entries()))
}

/// Mixing matrices of a schedule, indexed by round. Static and cyclic
/// schedules are materialized once; random ones are built on demand.
pub struct MatrixSchedule {
    source: MatrixSource,
    m: usize,
}

enum MatrixSource {
    Periodic(Vec<MixingMatrix>),
    Generated {
        schedule: GraphSchedule,
        rule: Box<dyn WeightRule>,
    },
}

impl MatrixSchedule {
    pub fn new(schedule: &GraphSchedule, rule: impl WeightRule + 'static) -> Result<Self> {
        let m = schedule.agent_count();
        let source = match schedule.period() {
            Some(p) => MatrixSource::Periodic(
                (0..p)
                    .map(|k| rule.weights(&schedule.edge_set(k), m))
                    .collect::<Result<_>>()?,
            ),
            None => MatrixSource::Generated {
                schedule: schedule.clone(),
                rule: Box::new(rule),
            },
        };
        Ok(MatrixSchedule { source, m })
    }

    pub fn metropolis(schedule: &GraphSchedule) -> Result<Self> {
        Self::new(schedule, Metropolis)
    }

    /// Cyclic replay of explicit matrices (a single matrix is a static schedule).
    pub fn from_matrices(matrices: Vec<MixingMatrix>) -> Result<Self> {
        let m = matrices
            .first()
            .ok_or_else(|| Error::invalid("need at least one mixing matrix"))?
            .agent_count();
        if matrices.iter().any(|w| w.agent_count() != m) {
            return Err(Error::invalid("mixing matrices differ in size"));
        }
        Ok(MatrixSchedule {
            source: MatrixSource::Periodic(matrices),
            m,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.m
    }

    pub fn period(&self) -> Option<usize> {
        match &self.source {
            MatrixSource::Periodic(v) => Some(v.len()),
            MatrixSource::Generated { .. } => None,
        }
    }

    pub fn at(&self, k: usize) -> Result<Cow<'_, MixingMatrix>> {
        match &self.source {
            MatrixSource::Periodic(v) => Ok(Cow::Borrowed(&v[k % v.len()])),
            MatrixSource::Generated { schedule, rule } => {
                Ok(Cow::Owned(rule.weights(&schedule.edge_set(k), self.m)?))
            }
        }
    }

    /// `W^{k,γ} = W^k W^{k−1} ⋯ W^{k−γ+1}`, with `W^{k,0} = I`.
    pub fn window_product(&self, k: usize, gamma: usize) -> Result<MixingMatrix> {
        if gamma > k + 1 {
            return Err(Error::invalid(format!(
                "window product needs k >= gamma - 1 (k = {k}, gamma = {gamma})"
            )));
        }
        let mut acc = Mat::identity(self.m, self.m);
        for r in (k + 1 - gamma)..=k {
            acc = self.at(r)?.entries() * acc;
        }
        Ok(MixingMatrix::from_product(acc))
    }
}

/// Ordered product `W^k W^{k−1} ⋯ W^{k−γ+1}` of the schedule's matrices.
pub fn matrix_product_window(
    schedule: &GraphSchedule,
    rule: impl WeightRule + 'static,
    k: usize,
    gamma: usize,
) -> Result<MixingMatrix> {
    MatrixSchedule::new(schedule, rule)?.window_product(k, gamma)
}

/// Whether the union of every `γ` consecutive edge sets is connected.
///
/// Static and cyclic schedules are checked over one full period, which is
/// exact for all `k`; random schedules over `k ∈ [0, horizon − γ]`.
pub fn gamma_connectivity(schedule: &GraphSchedule, gamma: usize, horizon: usize) -> Result<bool> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    if horizon < gamma {
        return Err(Error::invalid(format!(
            "horizon {horizon} shorter than gamma {gamma}"
        )));
    }
    let m = schedule.agent_count();
    let starts = match schedule.period() {
        Some(p) => p,
        None => horizon - gamma + 1,
    };
    for k in 0..starts {
        let sets: Vec<Cow<'_, EdgeSet>> = (k..k + gamma).map(|r| schedule.edge_set(r)).collect();
        if !EdgeSet::union(sets.iter().map(|c| c.as_ref())).is_connected(m) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Spectral constants of a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `‖W − J/m‖₂`; for time-varying schedules the largest single-round value seen.
    pub sigma: f64,
    pub sigma_gamma: f64,
    pub gamma: usize,
    /// Number of window positions examined.
    pub horizon_used: usize,
    /// True when the supremum was sampled over a finite horizon.
    pub is_estimate: bool,
}

pub fn sigma_gamma(
    schedule: &GraphSchedule,
    gamma: usize,
    rule: impl WeightRule + 'static,
    horizon: usize,
) -> Result<SpectralReport> {
    let mats = MatrixSchedule::new(schedule, rule)?;
    sigma_gamma_of(&mats, gamma, horizon)
}

/// [`sigma_gamma`] over an already materialized matrix schedule.
pub fn sigma_gamma_of(mats: &MatrixSchedule, gamma: usize, horizon: usize) -> Result<SpectralReport> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    if horizon < gamma {
        return Err(Error::invalid(format!(
            "horizon {horizon} shorter than gamma {gamma}"
        )));
    }
    let (positions, is_estimate) = match mats.period() {
        Some(p) => (p, false),
        None => (horizon + 2 - gamma, true),
    };
    let mut sigma_gamma = 0.0f64;
    let mut sigma_single = 0.0f64;
    for offset in 0..positions {
        let k = gamma - 1 + offset;
        sigma_gamma = sigma_gamma.max(deflated_norm(mats.window_product(k, gamma)?.entries()));
    }
    let singles = mats.period().unwrap_or(horizon + 1);
    for k in 0..singles {
        sigma_single = sigma_single.max(deflated_norm(mats.at(k)?.entries()));
    }
    Ok(SpectralReport {
        sigma: sigma_single,
        sigma_gamma,
        gamma,
        horizon_used: positions,
        is_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn alternating3() -> GraphSchedule {
        GraphSchedule::cyclic(3, vec![EdgeSet::new([(0, 1)]), EdgeSet::new([(1, 2)])]).unwrap()
    }

    #[test]
    fn metropolis_complete_graph() {
        let w = metropolis_weights(&EdgeSet::complete(3), 3).unwrap();
        for v in w.entries().iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn metropolis_path_graph() {
        let w = metropolis_weights(&EdgeSet::path(3), 3).unwrap();
        let e = w.entries();
        assert_abs_diff_eq!(e[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[(1, 2)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[(2, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(e[(0, 2)], 0.0);
    }

    #[test]
    fn metropolis_empty_is_identity() {
        let w = metropolis_weights(&EdgeSet::empty(), 4).unwrap();
        assert_eq!(w.entries(), &Mat::identity(4, 4));
    }

    #[test]
    fn metropolis_rejects_bad_input() {
        assert!(metropolis_weights(&EdgeSet::empty(), 0).is_err());
        assert!(metropolis_weights(&EdgeSet::new([(0, 5)]), 3).is_err());
    }

    #[test]
    fn edges_are_undirected_and_deduplicated() {
        let e = EdgeSet::new([(1, 0), (0, 1), (2, 2), (2, 1)]);
        assert_eq!(e.edges(), &[(0, 1), (1, 2)]);
        assert!(e.contains(2, 1));
    }

    #[test]
    fn sigma_trivial_cases() {
        assert_abs_diff_eq!(sigma(&MixingMatrix::averaging(3)).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma(&MixingMatrix::identity(4)).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sigma_path_graph() {
        // eigenvalues of the path Metropolis matrix are {1, 2/3, 0}
        let w = metropolis_weights(&EdgeSet::path(3), 3).unwrap();
        assert_abs_diff_eq!(sigma(&w).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_rejects_non_stochastic() {
        let bad = MixingMatrix::from_product(Mat::from_element(2, 2, 0.6));
        assert!(matches!(sigma(&bad), Err(Error::NotDoublyStochastic { .. })));
        assert!(MixingMatrix::from_matrix(Mat::from_element(2, 2, 0.6)).is_err());
    }

    #[test]
    fn window_product_cases() {
        let sched = alternating3();
        let id = matrix_product_window(&sched, Metropolis, 7, 0).unwrap();
        assert_eq!(id.entries(), &Mat::identity(3, 3));

        let ring = GraphSchedule::static_graph(5, EdgeSet::ring(5)).unwrap();
        let w = metropolis_weights(&EdgeSet::ring(5), 5).unwrap();
        let w2 = matrix_product_window(&ring, Metropolis, 3, 2).unwrap();
        assert!((w2.entries() - w.entries() * w.entries()).amax() < 1e-15);

        // W¹W⁰ frozen from an explicit 3×3 multiplication
        let p = matrix_product_window(&sched, Metropolis, 1, 2).unwrap();
        let expected = Mat::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.25, 0.25, 0.5, 0.25, 0.25, 0.5]);
        assert!((p.entries() - expected).amax() < 1e-15);

        assert!(matrix_product_window(&sched, Metropolis, 0, 2).is_err());
    }

    #[test]
    fn connectivity_examples() {
        let ring = GraphSchedule::static_graph(6, EdgeSet::ring(6)).unwrap();
        assert!(gamma_connectivity(&ring, 1, 10).unwrap());
        let alt = alternating3();
        assert!(!gamma_connectivity(&alt, 1, 10).unwrap());
        assert!(gamma_connectivity(&alt, 2, 10).unwrap());
        let empty = GraphSchedule::cyclic(4, vec![EdgeSet::empty(); 3]).unwrap();
        for g in 1..5 {
            assert!(!gamma_connectivity(&empty, g, 10).unwrap());
        }
        assert!(gamma_connectivity(&alt, 0, 10).is_err());
        assert!(gamma_connectivity(&alt, 3, 2).is_err());
    }

    #[test]
    fn sigma_gamma_examples() {
        let id = GraphSchedule::static_graph(4, EdgeSet::empty()).unwrap();
        let r = sigma_gamma(&id, 3, Metropolis, 10).unwrap();
        assert_abs_diff_eq!(r.sigma_gamma, 1.0, epsilon = 1e-15);
        assert!(!r.is_estimate);

        let complete = GraphSchedule::static_graph(3, EdgeSet::complete(3)).unwrap();
        let r = sigma_gamma(&complete, 1, Metropolis, 10).unwrap();
        assert_abs_diff_eq!(r.sigma_gamma, 0.0, epsilon = 1e-12);

        // ‖W¹W⁰ − J/3‖₂ = ‖W⁰W¹ − J/3‖₂ = 1/2, frozen from a numeric SVD
        let r = sigma_gamma(&alternating3(), 2, Metropolis, 10).unwrap();
        assert_abs_diff_eq!(r.sigma_gamma, 0.5, epsilon = 1e-12);
        assert_eq!(r.horizon_used, 2);

        assert!(sigma_gamma(&alternating3(), 3, Metropolis, 2).is_err());
    }

    #[test]
    fn random_schedule_is_reproducible_and_flagged() {
        let a = GraphSchedule::seeded_random(8, 0.3, 42).unwrap();
        let b = GraphSchedule::seeded_random(8, 0.3, 42).unwrap();
        for k in 0..20 {
            assert_eq!(a.edge_set(k), b.edge_set(k));
        }
        assert_ne!(a.edge_set(0), a.edge_set(1));
        let r = sigma_gamma(&a, 2, Metropolis, 50).unwrap();
        assert!(r.is_estimate);
        assert!((0.0..=1.0).contains(&r.sigma_gamma));
    }

    #[test]
    fn static_gamma_one_matches_sigma() {
        let g = GraphSchedule::static_graph(7, EdgeSet::ring(7)).unwrap();
        let w = metropolis_weights(&EdgeSet::ring(7), 7).unwrap();
        let r = sigma_gamma(&g, 1, Metropolis, 5).unwrap();
        assert_abs_diff_eq!(r.sigma_gamma, sigma(&w).unwrap(), epsilon = 1e-14);
        assert_abs_diff_eq!(r.sigma, r.sigma_gamma, epsilon = 1e-14);
    }

    #[test]
    fn schedule_serialization_layout() {
        let g = alternating3();
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["kind"], "cyclic");
        assert_eq!(v["period"], 2);
        assert_eq!(v["edge_sets"][1][0][1], 2);
        let back: GraphSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);

        let bad = serde_json::json!({"m": 3, "kind": "static", "edge_sets": [[[0, 7]]]});
        assert!(serde_json::from_value::<GraphSchedule>(bad).is_err());
    }
}
