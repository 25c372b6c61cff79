//! Shared oracles for the integration tests.
#![allow(dead_code)]

use drm_core::interactions::InteractionMatrix;
use drm_core::metrics::{MetricWeight, WeightKind};
use drm_core::model::{FactorModel, ScoreKind};
use drm_core::objectives::drm_loss;
use drm_core::relaxed_sort::Temperature;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so coordinates whose true
/// derivative is numerically zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Smallest pairwise gap; FD checks stay away from ties.
pub fn min_gap(s: &[f64]) -> f64 {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Gradient of `f` at `x` by central differences, one coordinate at a time.
pub fn fd_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|c| {
            let g = central_diff(
                |v| {
                    probe[c] = v;
                    f(&probe)
                },
                x[c],
            );
            probe[c] = x[c];
            g
        })
        .collect()
}

pub fn labels(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let positives = rng.random_range(1..n.max(2));
    let mut y: Vec<f64> = (0..n).map(|i| if i < positives { 1.0 } else { 0.0 }).collect();
    for i in (1..n).rev() {
        y.swap(i, rng.random_range(0..=i));
    }
    y
}

pub fn weight_kind(index: usize) -> WeightKind {
    [
        WeightKind::ConstantOne,
        WeightKind::Precision,
        WeightKind::Recall,
        WeightKind::Ndcg,
        WeightKind::Ap,
    ][index % 5]
}

/// A single-user model over `n` items with scores at least `gap` apart.
pub fn tie_free_model(rng: &mut impl Rng, n: usize, d: usize, kind: ScoreKind, gap: f64) -> FactorModel {
    loop {
        let seed = rng.random();
        let model = FactorModel::init(1, n, d, kind, seed, 1.0);
        let items: Vec<u32> = (0..n as u32).collect();
        if min_gap(&model.score_list(0, &items)) > gap {
            return model;
        }
    }
}

/// DRM loss of user 0 over items `0..n` as a function of all factors.
pub fn drm_loss_of_model(model: &FactorModel, y: &[f64], weight: &MetricWeight, tau: Temperature) -> f64 {
    let items: Vec<u32> = (0..y.len() as u32).collect();
    drm_loss(y, &model.score_list(0, &items), weight, tau)
}

/// Fraction of entries with relative error within `tol`, and the worst error.
pub fn error_profile(errors: &[f64], tol: f64) -> (f64, f64) {
    let within = errors.iter().filter(|&&e| e <= tol).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    (within as f64 / errors.len() as f64, worst)
}

/// Perfect scorer: holdout items first, everything else after.
pub struct OracleScorer<'a> {
    pub holdout: &'a InteractionMatrix,
}

impl drm_core::metrics::Scorer for OracleScorer<'_> {
    fn num_users(&self) -> usize {
        self.holdout.num_users()
    }

    fn num_items(&self) -> usize {
        self.holdout.num_items()
    }

    fn score_all(&self, user: usize, out: &mut [f64]) {
        out.fill(0.0);
        for &i in self.holdout.items_of(user) {
            out[i as usize] = 1.0;
        }
    }
}
