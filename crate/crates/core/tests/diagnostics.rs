//! Runtime inequality diagnostics and certificate behavior on real runs.

use gtrack_core::algorithms::{default_alpha, run, AlgorithmConfig, Mixers, MuMode, Variant};
use gtrack_core::analysis::{certify_run, certify_theorem1, certify_theorem2, fit_rate};
use gtrack_core::graph::{sigma, sigma_gamma_of, EdgeSet, GraphSchedule, MatrixSchedule};
use gtrack_core::mixing::MixingOperator;
use gtrack_core::problems::{ProblemInstance, ProblemSpec};
use gtrack_core::{Error, RunTrace};

const LEMMA4_TOL: f64 = 1e-7;

fn quadratic(m: usize, kappa: f64, flat: usize, seed: u64) -> ProblemInstance {
    ProblemSpec::Quadratic {
        m,
        n: 4,
        smoothness: 1.0,
        strong_convexity: 1.0 / kappa,
        zero_eigenvalues: flat,
        offset_scale: 1.0,
        shared_basis: false,
    }
    .build(seed)
    .unwrap()
}

fn ring(m: usize) -> (Mixers, f64) {
    let mats = MatrixSchedule::metropolis(&GraphSchedule::static_graph(m, EdgeSet::ring(m)).unwrap()).unwrap();
    let s = sigma(&mats.at(0).unwrap()).unwrap();
    (Mixers::shared(MixingOperator::Plain(mats)), s)
}

fn assert_lemma4(trace: &RunTrace) {
    let body = &trace.rows[..trace.rows.len() - 1];
    assert!(body.iter().all(|r| !r.lemma4_margin.is_nan()));
    for r in body {
        assert!(
            r.lemma4_holds(LEMMA4_TOL),
            "k {}: margin {:e} scale {:e}",
            r.k,
            r.lemma4_margin,
            r.lemma4_scale
        );
    }
}

#[test]
fn master_inequality_holds_static() {
    for (mode, flat) in [(MuMode::Zero, 1), (MuMode::StronglyConvex, 0)] {
        let p = quadratic(8, 20.0, flat, 3);
        let (mixers, _) = ring(8);
        let mut cfg = AlgorithmConfig::new(Variant::AccGtStatic, mode, 0.05, 400);
        cfg.init_seed = Some(1);
        assert_lemma4(&run(&cfg, &p, &mixers).unwrap());
    }
}

#[test]
fn master_inequality_holds_time_varying() {
    let g = GraphSchedule::split_ring(9, 3).unwrap();
    let mixers = Mixers::shared(MixingOperator::Plain(MatrixSchedule::metropolis(&g).unwrap()));
    for mode in [MuMode::Zero, MuMode::StronglyConvex] {
        let p = quadratic(9, 10.0, 0, 5);
        let mut cfg = AlgorithmConfig::new(Variant::AccGtTv, mode, 0.02, 300);
        cfg.init_seed = Some(2);
        assert_lemma4(&run(&cfg, &p, &mixers).unwrap());
    }
}

#[test]
fn gt_has_no_master_inequality_but_has_inexact_margins() {
    let p = quadratic(6, 10.0, 0, 1);
    let (mixers, _) = ring(6);
    let mut cfg = AlgorithmConfig::new(Variant::Gt, MuMode::Zero, 0.1, 50);
    cfg.init_seed = Some(4);
    let trace = run(&cfg, &p, &mixers).unwrap();
    assert!(trace.rows.iter().all(|r| r.lemma4_margin.is_nan()));
    assert!(trace.rows[..50].iter().all(|r| r.lemma1_holds(1e-9)));
    assert!(certify_run(&trace, &p, 0.5, 1).unwrap().is_none());
}

#[test]
fn consensual_start_at_optimum_certifies_trivially() {
    let p = quadratic(5, 10.0, 0, 2);
    let (mixers, s) = ring(5);
    let alpha = default_alpha(Variant::AccGtStatic, 1.0, s, 1, MuMode::StronglyConvex).unwrap();
    let mut cfg = AlgorithmConfig::new(Variant::AccGtStatic, MuMode::StronglyConvex, alpha, 20);
    cfg.x0 = Some(p.x_star().iter().copied().collect());
    let trace = run(&cfg, &p, &mixers).unwrap();
    let c = certify_theorem2(&trace, &p, alpha, s).unwrap();
    assert!(c.holds());
    // row 0 consensus LHS is exactly zero
    assert_eq!(trace.rows[0].cons_x, 0.0);
}

#[test]
fn certificate_rejects_mode_mismatch() {
    let p = quadratic(5, 10.0, 0, 2);
    let (mixers, s) = ring(5);
    let cfg = AlgorithmConfig::new(Variant::AccGtStatic, MuMode::StronglyConvex, 0.01, 5);
    let trace = run(&cfg, &p, &mixers).unwrap();
    assert!(matches!(
        certify_theorem1(&trace, &p, 0.01, s),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn oversized_step_is_flagged_not_rejected() {
    let p = quadratic(10, 10.0, 2, 0);
    let (mixers, s) = ring(10);
    let alpha = 100.0 * default_alpha(Variant::AccGtStatic, p.smoothness(), s, 1, MuMode::Zero).unwrap();
    let mut cfg = AlgorithmConfig::new(Variant::AccGtStatic, MuMode::Zero, alpha, 200);
    cfg.init_seed = Some(3);
    cfg.diagnostics = false;
    let trace = run(&cfg, &p, &mixers).unwrap();
    let c = certify_theorem1(&trace, &p, alpha, s).unwrap();
    assert!(!c.gap.hypotheses_met);
}

#[test]
fn nonstrongly_convex_rate_is_quadratic() {
    let p = quadratic(10, 10.0, 2, 1);
    let (mixers, _) = ring(10);
    let mut cfg = AlgorithmConfig::new(Variant::AccGtStatic, MuMode::Zero, 0.05, 2000);
    cfg.init_seed = Some(5);
    cfg.diagnostics = false;
    let trace = run(&cfg, &p, &mixers).unwrap();
    let slope = fit_rate(&trace, Some((100, 2001))).unwrap();
    assert!(slope <= -1.8, "slope {slope}");
}

#[test]
fn static_schedule_is_a_one_window_time_varying_schedule() {
    let mats = MatrixSchedule::metropolis(&GraphSchedule::static_graph(6, EdgeSet::ring(6)).unwrap()).unwrap();
    let s = sigma(&mats.at(0).unwrap()).unwrap();
    let report = sigma_gamma_of(&mats, 1, 10).unwrap();
    assert!((report.sigma_gamma - s).abs() < 1e-12);
}
