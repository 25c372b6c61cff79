mod common;

use common::*;
use drm_core::metrics::MetricWeight;
use drm_core::model::{FactorModel, ScoreKind};
use drm_core::objectives::{
    drm_grad_scores, drm_grads_factors, drm_loss, drm_loss_weighted, hinge_grads, hinge_loss, rank_weights,
    DrmGradientWorkspace,
};
use drm_core::relaxed_sort::Temperature;

fn tau(v: f64) -> Temperature {
    Temperature::new(v).unwrap()
}

/// Extrapolated central difference with `O(h^6)` truncation error.
fn richardson(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let mut d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (d1, d2, d3) = (d(1e-3), d(5e-4), d(2.5e-4));
    let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d3 - d2) / 3.0);
    (16.0 * r2 - r1) / 15.0
}

#[test]
fn score_gradient_matches_extrapolated_differences() {
    for n in [3usize, 5, 10] {
        for t in [0.1, 1.0, 10.0] {
            for seed in 0..20u64 {
                let mut r = rng(seed + 100 * n as u64);
                let model = tie_free_model(&mut r, n, 4, ScoreKind::Dot, 1e-3);
                let s = model.score_list(0, &(0..n as u32).collect::<Vec<_>>());
                let y = labels(&mut r, n);
                let weight = MetricWeight::new(weight_kind(seed as usize), n.div_ceil(2));
                let analytic = drm_grad_scores(&y, &s, &weight, tau(t));
                for (c, a) in analytic.iter().enumerate() {
                    let mut p = s.clone();
                    let reference = richardson(
                        |v| {
                            p[c] = v;
                            drm_loss(&y, &p, &weight, tau(t))
                        },
                        s[c],
                    );
                    assert!((a - reference).abs() < 1e-8, "n={n} tau={t} seed={seed}: {a} vs {reference}");
                }
            }
        }
    }
}

#[test]
fn score_gradient_matches_central_differences_at_moderate_temperature() {
    let mut errors = Vec::new();
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n = 3 + seed as usize % 8;
        let model = tie_free_model(&mut r, n, 8, ScoreKind::NegL2, 1e-3);
        let s = model.score_list(0, &(0..n as u32).collect::<Vec<_>>());
        let y = labels(&mut r, n);
        let weight = MetricWeight::new(weight_kind(seed as usize), n);
        let analytic = drm_grad_scores(&y, &s, &weight, tau(1.0));
        let numeric = fd_gradient(&s, |p| drm_loss(&y, p, &weight, tau(1.0)));
        errors.extend(analytic.iter().zip(&numeric).map(|(a, f)| rel_err(*a, *f)));
    }
    let (within, worst) = error_profile(&errors, 1e-5);
    assert!(within >= 0.98, "{within}");
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn factor_gradient_chains_through_both_score_kinds() {
    let mut ws = DrmGradientWorkspace::new();
    for kind in [ScoreKind::Dot, ScoreKind::NegL2] {
        for seed in 0..10u64 {
            let mut r = rng(seed);
            let n = 6;
            let mut model = tie_free_model(&mut r, n, 3, kind, 1e-3);
            let y = labels(&mut r, n);
            let weight = MetricWeight::new(weight_kind(seed as usize), 3);
            let items: Vec<u32> = (0..n as u32).collect();
            let g = drm_grads_factors(&model, 0, &items, &y, &weight, tau(3.0), &mut ws);
            assert_eq!(g.loss, drm_loss_of_model(&model, &y, &weight, tau(3.0)));
            for c in 0..3 {
                let x = model.user(0)[c];
                let f = richardson(
                    |v| {
                        model.user_mut(0)[c] = v;
                        drm_loss_of_model(&model, &y, &weight, tau(3.0))
                    },
                    x,
                );
                model.user_mut(0)[c] = x;
                assert!((g.user[c] - f).abs() < 1e-8);
            }
            for i in 0..n {
                for c in 0..3 {
                    let x = model.item(i)[c];
                    let f = richardson(
                        |v| {
                            model.item_mut(i)[c] = v;
                            drm_loss_of_model(&model, &y, &weight, tau(3.0))
                        },
                        x,
                    );
                    model.item_mut(i)[c] = x;
                    assert!((g.items[i * 3 + c] - f).abs() < 1e-8);
                }
            }
        }
    }
}

#[test]
fn matrix_free_gradient_equals_materialized_form() {
    let mut ws = DrmGradientWorkspace::new();
    for seed in 0..30u64 {
        let mut r = rng(seed);
        let n = 2 + seed as usize % 9;
        let model = tie_free_model(&mut r, n, 4, ScoreKind::Dot, 1e-4);
        let s = model.score_list(0, &(0..n as u32).collect::<Vec<_>>());
        let y = labels(&mut r, n);
        let weight = MetricWeight::new(weight_kind(seed as usize), n);
        let w = rank_weights(&weight, &y, &s);
        let loss = ws.compute(&y, &s, &w, tau(0.5));
        assert_eq!(loss, drm_loss_weighted(&y, &s, &w, tau(0.5)));
        for (a, b) in ws.gradient().iter().zip(ws.materialized_gradient(&y, &w)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn hinge_gradient_matches_differences() {
    for kind in [ScoreKind::Dot, ScoreKind::NegL2] {
        for seed in 0..20u64 {
            let mut model = FactorModel::init(1, 2, 5, kind, seed, 1.0);
            let phi = 0.5 + seed as f64 / 10.0;
            let loss = |m: &FactorModel| hinge_loss(&[m.score(0, 0), m.score(0, 1)], 0, 1, 1.0, phi);
            if loss(&model) == 0.0 {
                continue;
            }
            let g = hinge_grads(&model, 0, 0, 1, 1.0, phi);
            assert!(g.active);
            for c in 0..5 {
                let x = model.user(0)[c];
                let f = central_diff(
                    |v| {
                        model.user_mut(0)[c] = v;
                        loss(&model)
                    },
                    x,
                );
                model.user_mut(0)[c] = x;
                assert!(rel_err(g.user[c], f) < 1e-6);
                for (i, gi) in [(0usize, &g.positive), (1, &g.negative)] {
                    let x = model.item(i)[c];
                    let f = central_diff(
                        |v| {
                            model.item_mut(i)[c] = v;
                            loss(&model)
                        },
                        x,
                    );
                    model.item_mut(i)[c] = x;
                    assert!(rel_err(gi[c], f) < 1e-6);
                }
            }
        }
    }
}

#[test]
fn inactive_hinge_has_zero_gradient() {
    let model = FactorModel::from_factors(vec![1.0], vec![1.0, -1.0], 1, ScoreKind::Dot, 0);
    let g = hinge_grads(&model, 0, 0, 1, 1.0, 2.0);
    assert!(!g.active);
    assert!(g.user.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));
}
