//! Local objectives, aggregate quantities and the optimum oracle.
//!
//! Agent `i` holds `f_i`; the network minimizes `F(x) = (1/m) Σ f_i(x)`.
//! Quantities used by the diagnostics:
//!
//! ```text
//! D_f(x, y)      = (1/m) Σ [f_i(x) − f_i(y_i) − ⟨∇f_i(y_i), x − y_i⟩]
//! f̂(ȳ, y)        = (1/m) Σ [f_i(y_i) + ⟨∇f_i(y_i), ȳ − y_i⟩]
//! ```

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mixing::Counters;
use crate::{Error, Mat, Result, Vector};

/// Default tolerance on `‖∇F(x*)‖` for quadratic instances.
pub const QUADRATIC_TOL: f64 = 1e-12;
/// Default tolerance on `‖∇F(x*)‖` for logistic instances.
pub const LOGISTIC_TOL: f64 = 1e-10;

const SOLVER_MAX_ITERATIONS: usize = 2_000_000;

#[derive(Clone, Debug)]
pub enum ObjectiveKind {
    /// `½ xᵀA x + bᵀx` with `A` symmetric positive semidefinite.
    Quadratic { a: Mat, b: Vector },
    /// `(1/N) Σ_j log(1 + exp(−l_j ⟨a_j, x⟩)) + (ridge/2)‖x‖²`, labels `l_j = ±1`.
    Logistic {
        features: Mat,
        labels: Vec<f64>,
        ridge: f64,
    },
}

/// One agent's objective with its curvature constants.
#[derive(Clone, Debug)]
pub struct LocalObjective {
    kind: ObjectiveKind,
    smoothness: f64,
    strong_convexity: f64,
}

impl LocalObjective {
    pub fn quadratic(a: Mat, b: Vector) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || n == 0 {
            return Err(Error::dims(
                format!("{n}x{n} matrix and {n}-vector"),
                format!("{}x{} and {}", a.nrows(), a.ncols(), b.len()),
            ));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let eig = SymmetricEigen::new(a.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -1e-10 * max.abs().max(1.0) {
            return Err(Error::invalid(format!(
                "quadratic Hessian is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(LocalObjective {
            kind: ObjectiveKind::Quadratic { a, b },
            smoothness: max,
            strong_convexity: min.max(0.0),
        })
    }

    pub fn logistic(features: Mat, labels: Vec<f64>, ridge: f64) -> Result<Self> {
        if features.nrows() != labels.len() || features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::dims(
                format!("{} labels", features.nrows()),
                labels.len(),
            ));
        }
        if !(ridge >= 0.0) {
            return Err(Error::invalid("ridge must be nonnegative"));
        }
        if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::invalid("logistic labels must be +1 or -1"));
        }
        let gram = features.transpose() * &features;
        let top = SymmetricEigen::new(gram).eigenvalues.max();
        let smoothness = top / (4.0 * features.nrows() as f64) + ridge;
        Ok(LocalObjective {
            kind: ObjectiveKind::Logistic {
                features,
                labels,
                ridge,
            },
            smoothness,
            strong_convexity: ridge,
        })
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic { b, .. } => b.len(),
            ObjectiveKind::Logistic { features, .. } => features.ncols(),
        }
    }

    /// `L_i`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `μ_i` (may be zero).
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => 0.5 * x.dot(&(a * x)) + b.dot(x),
            ObjectiveKind::Logistic {
                features,
                labels,
                ridge,
            } => {
                let margins = features * x;
                let loss: f64 = margins
                    .iter()
                    .zip(labels)
                    .map(|(z, l)| softplus(-l * z))
                    .sum();
                loss / labels.len() as f64 + 0.5 * ridge * x.norm_squared()
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => a * x + b,
            ObjectiveKind::Logistic {
                features,
                labels,
                ridge,
            } => {
                let margins = features * x;
                let n_samples = labels.len() as f64;
                let weights = Vector::from_iterator(
                    labels.len(),
                    margins
                        .iter()
                        .zip(labels)
                        .map(|(z, l)| -l * sigmoid(-l * z) / n_samples),
                );
                features.transpose() * weights + x * *ridge
            }
        }
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// The `m` local objectives together with `L`, `μ` and the optimum.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    locals: Vec<LocalObjective>,
    n: usize,
    smoothness: f64,
    strong_convexity: f64,
    x_star: Vector,
    f_star: f64,
}

impl ProblemInstance {
    /// Builds the instance and solves for `x*` with the default tolerance
    /// for its kind.
    pub fn new(locals: Vec<LocalObjective>) -> Result<Self> {
        let tol = if locals
            .iter()
            .all(|f| matches!(f.kind, ObjectiveKind::Quadratic { .. }))
        {
            QUADRATIC_TOL
        } else {
            LOGISTIC_TOL
        };
        Self::with_tolerance(locals, tol)
    }

    pub fn with_tolerance(locals: Vec<LocalObjective>, tol: f64) -> Result<Self> {
        let n = locals
            .first()
            .ok_or_else(|| Error::invalid("problem needs at least one agent"))?
            .dim();
        if let Some(f) = locals.iter().find(|f| f.dim() != n) {
            return Err(Error::dims(format!("dimension {n}"), f.dim()));
        }
        let smoothness = locals.iter().map(|f| f.smoothness).fold(0.0, f64::max);
        let strong_convexity = locals
            .iter()
            .map(|f| f.strong_convexity)
            .fold(f64::INFINITY, f64::min);
        let mut inst = ProblemInstance {
            locals,
            n,
            smoothness,
            strong_convexity,
            x_star: Vector::zeros(n),
            f_star: 0.0,
        };
        let (x_star, f_star) = solve_optimum(&inst, tol)?;
        inst.x_star = x_star;
        inst.f_star = f_star;
        Ok(inst)
    }

    pub fn agent_count(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    /// `L = max_i L_i`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `μ = min_i μ_i`.
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// `F(x) = (1/m) Σ f_i(x)`.
    pub fn value(&self, x: &Vector) -> f64 {
        self.locals.iter().map(|f| f.value(x)).sum::<f64>() / self.agent_count() as f64
    }

    /// `∇F(x)`.
    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.n);
        for f in &self.locals {
            g += f.gradient(x);
        }
        g / self.agent_count() as f64
    }

    fn check_aggregate(&self, y: &Mat) -> Result<()> {
        if y.nrows() != self.agent_count() || y.ncols() != self.n {
            return Err(Error::dims(
                format!("{}x{}", self.agent_count(), self.n),
                format!("{}x{}", y.nrows(), y.ncols()),
            ));
        }
        Ok(())
    }
}

fn row(y: &Mat, i: usize) -> Vector {
    y.row(i).transpose()
}

/// Row `i` of the result is `∇f_i(y_i)ᵀ`; charges one gradient round.
pub fn aggregate_gradient(problem: &ProblemInstance, y: &Mat, counters: &mut Counters) -> Result<Mat> {
    problem.check_aggregate(y)?;
    counters.grad_rounds += 1;
    let mut out = Mat::zeros(y.nrows(), y.ncols());
    for (i, f) in problem.locals.iter().enumerate() {
        out.set_row(i, &f.gradient(&row(y, i)).transpose());
    }
    Ok(out)
}

/// Row-stacked `x, y, z, s` of one algorithm instant.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateState {
    pub x: Mat,
    pub y: Mat,
    pub z: Mat,
    pub s: Mat,
}

impl AggregateState {
    pub fn new(x: Mat, y: Mat, z: Mat, s: Mat) -> Result<Self> {
        let shape = x.shape();
        for (name, mat) in [("y", &y), ("z", &z), ("s", &s)] {
            if mat.shape() != shape {
                return Err(Error::dims(
                    format!("{name} of shape {shape:?}"),
                    format!("{:?}", mat.shape()),
                ));
            }
        }
        Ok(AggregateState { x, y, z, s })
    }
}

/// Column means `(x̄, ȳ, z̄, s̄)`.
pub fn averages(state: &AggregateState) -> (Vector, Vector, Vector, Vector) {
    (
        column_mean(&state.x),
        column_mean(&state.y),
        column_mean(&state.z),
        column_mean(&state.s),
    )
}

/// Mean of the rows, as a column vector.
pub fn column_mean(x: &Mat) -> Vector {
    x.row_mean().transpose()
}

/// `Πx` with `Π = I − 𝟙𝟙ᵀ/m`.
pub fn project_out_mean(x: &Mat) -> Mat {
    let mean = x.row_mean();
    let mut out = x.clone();
    for mut r in out.row_iter_mut() {
        r -= &mean;
    }
    out
}

/// `‖Πx‖²` (squared Frobenius norm of the row-demeaned matrix).
pub fn consensus_error(x: &Mat) -> f64 {
    project_out_mean(x).norm_squared()
}

/// `D_f(x, y) = (1/m) Σ [f_i(x) − f_i(y_i) − ⟨∇f_i(y_i), x − y_i⟩]`.
pub fn bregman_distance(problem: &ProblemInstance, x: &Vector, y: &Mat) -> Result<f64> {
    problem.check_aggregate(y)?;
    let total: f64 = problem
        .locals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let yi = row(y, i);
            f.value(x) - f.value(&yi) - f.gradient(&yi).dot(&(x - &yi))
        })
        .sum();
    Ok(total / problem.agent_count() as f64)
}

/// `f̂(ȳ, y) = (1/m) Σ [f_i(y_i) + ⟨∇f_i(y_i), ȳ − y_i⟩]`.
pub fn inexact_value(problem: &ProblemInstance, ybar: &Vector, y: &Mat) -> Result<f64> {
    problem.check_aggregate(y)?;
    let total: f64 = problem
        .locals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let yi = row(y, i);
            f.value(&yi) + f.gradient(&yi).dot(&(ybar - &yi))
        })
        .sum();
    Ok(total / problem.agent_count() as f64)
}

/// Minimizer of `F` and its value.
///
/// Quadratic sums are solved through the normal equations `(Σ A_i) x = −Σ b_i`
/// with iterative refinement; anything else runs centralized accelerated
/// gradient descent until `‖∇F‖ ≤ tol`.
pub fn solve_optimum(problem: &ProblemInstance, tol: f64) -> Result<(Vector, f64)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("optimum tolerance must be positive"));
    }
    let n = problem.n;
    let all_quadratic = problem
        .locals
        .iter()
        .all(|f| matches!(f.kind, ObjectiveKind::Quadratic { .. }));
    let x = if all_quadratic {
        let mut h = Mat::zeros(n, n);
        let mut rhs = Vector::zeros(n);
        for f in &problem.locals {
            if let ObjectiveKind::Quadratic { a, b } = &f.kind {
                h += a;
                rhs -= b;
            }
        }
        let lu = h.clone().lu();
        let mut x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::invalid("quadratic sum is singular; optimum is not unique"))?;
        for _ in 0..3 {
            let r = &rhs - &h * &x;
            if let Some(dx) = lu.solve(&r) {
                x += dx;
            }
        }
        let residual = problem.gradient(&x).norm();
        if !(residual <= tol) {
            return Err(Error::NoConvergence {
                iterations: 3,
                residual,
            });
        }
        x
    } else {
        accelerated_descent(problem, tol)?
    };
    let f = problem.value(&x);
    Ok((x, f))
}

fn accelerated_descent(problem: &ProblemInstance, tol: f64) -> Result<Vector> {
    let l = problem.smoothness;
    let mu = problem.strong_convexity;
    let step = 1.0 / l;
    let mut x = Vector::zeros(problem.n);
    let mut x_prev = x.clone();
    let mut theta: f64 = 1.0;
    let mut residual = f64::INFINITY;
    for k in 0..SOLVER_MAX_ITERATIONS {
        let momentum = if mu > 0.0 {
            let q = (mu / l).sqrt();
            (1.0 - q) / (1.0 + q)
        } else {
            let next = 0.5 * (-(theta * theta) + (theta.powi(4) + 4.0 * theta * theta).sqrt());
            let beta = theta * (1.0 - theta) / (theta * theta + next);
            theta = next;
            beta
        };
        let y = &x + (&x - &x_prev) * momentum;
        let g = problem.gradient(&y);
        x_prev = x;
        x = &y - g * step;
        if k % 16 == 0 {
            residual = problem.gradient(&x).norm();
            if !residual.is_finite() {
                return Err(Error::NoConvergence { iterations: k, residual });
            }
            if residual <= tol {
                return Ok(x);
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: SOLVER_MAX_ITERATIONS,
        residual,
    })
}

/// Seeded synthetic problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Random quadratics whose Hessian spectra lie in `[strong_convexity,
    /// smoothness]`; `zero_eigenvalues` directions per agent are made flat,
    /// giving `μ_i = 0` while the sum stays positive definite. With
    /// `shared_basis` every agent uses the same eigenvectors, so the average
    /// keeps the extreme curvatures and `F` itself has condition number
    /// `smoothness / strong_convexity`.
    Quadratic {
        m: usize,
        n: usize,
        smoothness: f64,
        strong_convexity: f64,
        #[serde(default)]
        zero_eigenvalues: usize,
        #[serde(default = "default_offset_scale")]
        offset_scale: f64,
        #[serde(default)]
        shared_basis: bool,
    },
    /// Two Gaussian blobs labelled ±1, split evenly across agents.
    Logistic {
        m: usize,
        n: usize,
        #[serde(default = "default_samples")]
        samples_per_agent: usize,
        ridge: f64,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn default_offset_scale() -> f64 {
    1.0
}

fn default_samples() -> usize {
    20
}

fn default_separation() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn agent_count(&self) -> usize {
        match *self {
            ProblemSpec::Quadratic { m, .. } | ProblemSpec::Logistic { m, .. } => m,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ProblemSpec::Quadratic { n, .. } | ProblemSpec::Logistic { n, .. } => n,
        }
    }

    pub fn build(&self, seed: u64) -> Result<ProblemInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            ProblemSpec::Quadratic {
                m,
                n,
                smoothness,
                strong_convexity,
                zero_eigenvalues,
                offset_scale,
                shared_basis,
            } => {
                if m == 0 || n == 0 {
                    return Err(Error::invalid("m and n must be positive"));
                }
                if !(strong_convexity >= 0.0 && smoothness > 0.0 && strong_convexity <= smoothness)
                {
                    return Err(Error::invalid(
                        "need 0 <= strong_convexity <= smoothness and smoothness > 0",
                    ));
                }
                if zero_eigenvalues >= n {
                    return Err(Error::invalid("zero_eigenvalues must be smaller than n"));
                }
                if shared_basis && zero_eigenvalues > 0 {
                    return Err(Error::invalid(
                        "shared_basis with zero_eigenvalues would make the sum singular",
                    ));
                }
                let common = shared_basis.then(|| random_orthogonal(&mut rng, n));
                let locals = (0..m)
                    .map(|_| {
                        let q = match &common {
                            Some(q) => q.clone(),
                            None => random_orthogonal(&mut rng, n),
                        };
                        let a = random_psd(&mut rng, &q, strong_convexity, smoothness, zero_eigenvalues);
                        let b = gaussian_vector(&mut rng, n) * offset_scale;
                        LocalObjective::quadratic(a, b)
                    })
                    .collect::<Result<_>>()?;
                ProblemInstance::new(locals)
            }
            ProblemSpec::Logistic {
                m,
                n,
                samples_per_agent,
                ridge,
                separation,
            } => {
                if m == 0 || n == 0 || samples_per_agent == 0 {
                    return Err(Error::invalid("m, n and samples_per_agent must be positive"));
                }
                let direction = {
                    let d = gaussian_vector(&mut rng, n);
                    let norm = d.norm();
                    if norm > 0.0 { d / norm } else { d }
                };
                let locals = (0..m)
                    .map(|_| {
                        let mut features = Mat::zeros(samples_per_agent, n);
                        let mut labels = Vec::with_capacity(samples_per_agent);
                        for j in 0..samples_per_agent {
                            let label = if rng.random::<bool>() { 1.0 } else { -1.0 };
                            let point = &direction * (label * separation) + gaussian_vector(&mut rng, n);
                            features.set_row(j, &point.transpose());
                            labels.push(label);
                        }
                        LocalObjective::logistic(features, labels, ridge)
                    })
                    .collect::<Result<_>>()?;
                ProblemInstance::new(locals)
            }
        }
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng)).qr().q()
}

/// `Q diag(λ) Qᵀ`. The spectrum always contains `hi`, contains `lo` when
/// there is room, and has `zeros` zero eigenvalues.
fn random_psd(rng: &mut ChaCha8Rng, q: &Mat, lo: f64, hi: f64, zeros: usize) -> Mat {
    let n = q.nrows();
    let mut eig: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    eig[0] = hi;
    if n - zeros >= 2 {
        eig[1] = lo;
    }
    for v in eig.iter_mut().skip(n - zeros) {
        *v = 0.0;
    }
    let d = Mat::from_diagonal(&Vector::from_vec(eig));
    let a = q * d * q.transpose();
    (&a + a.transpose()) * 0.5
}
