//! Training objectives and their closed-form gradients.
//!
//! * weighted hinge: `Φ · max(0, μ - ŷ_i + ŷ_j)` with the sampled rank weight
//!   `Φ = log(1 + (N/|J|) · #{j ∈ J : 1 - ŷ_i + ŷ_j ≥ 0})`;
//! * DRM: `‖y - Σ_{k ≤ K} w(k, K) P̃_k(ŷ)‖²`, the squared distance between the
//!   label vector and the weighted top-K rows of the relaxed sort;
//! * pointwise squared error, kept as a reference objective.
//!
//! Gradients are returned, never applied.
//!
//! The DRM score gradient is
//!
//! ```text
//! ∇_ŷ L = -(2/τ) Σ_k W⁽ᵏ⁾ (y - P̃_[1:K]),   W⁽ᵏ⁾ = w(k, K) (H⁽ᵏ⁾ (D⁽ᵏ⁾ + R))ᵀ
//! H⁽ᵏ⁾ = diag(σ) - σσᵀ,  σ = softmax(z⁽ᵏ⁾),  z⁽ᵏ⁾ = ((n+1-2k) ŷ - A_ŷ 1) / τ
//! D⁽ᵏ⁾ = (n+1-2k) I,     R_jl = sgn(ŷ_j - ŷ_l) (j ≠ l),  R_jj = -Σ_{l≠j} sgn(ŷ_j - ŷ_l)
//! ```
//!
//! [`DrmGradientWorkspace::compute`] evaluates it without forming any `n x n`
//! matrix; the explicit matrices are available for inspection.

use crate::metrics::{MetricWeight, Scorer};
use crate::model::{FactorModel, ScoreKind};
use crate::relaxed_sort::{hard_perm, rank_coefficient, RelaxedSort, Temperature};

/// `log(1 + (N / |J|) · #{j : 1 - ŷ_i + ŷ_j ≥ 0})`. The indicator margin is
/// always 1, independent of the hinge margin.
pub fn phi_weight(positive_score: f64, negative_scores: &[f64], num_items: usize) -> f64 {
    assert!(!negative_scores.is_empty(), "Φ needs at least one negative");
    let violations = negative_scores
        .iter()
        .filter(|&&s| 1.0 - positive_score + s >= 0.0)
        .count();
    (1.0 + num_items as f64 / negative_scores.len() as f64 * violations as f64).ln()
}

/// [`phi_weight`] for positive item `i` of user `u` against `negatives`.
pub fn phi_weight_for(model: &FactorModel, u: usize, i: u32, negatives: &[u32]) -> f64 {
    let neg = model.score_list(u, negatives);
    phi_weight(model.score(u, i as usize), &neg, model.num_items())
}

/// `Φ · max(0, μ - scores[i] + scores[j])`.
pub fn hinge_loss(scores: &[f64], i: usize, j: usize, margin: f64, phi: f64) -> f64 {
    phi * (margin - scores[i] + scores[j]).max(0.0)
}

/// Gradients of the hinge term for one (user, positive, negative) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeGrads {
    pub active: bool,
    pub user: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

pub fn hinge_grads(
    model: &FactorModel,
    u: usize,
    i: usize,
    j: usize,
    margin: f64,
    phi: f64,
) -> HingeGrads {
    let d = model.dim();
    let (a, bi, bj) = (model.user(u), model.item(i), model.item(j));
    let kind = model.score_kind();
    let active = margin - kind.score(a, bi) + kind.score(a, bj) > 0.0;
    let mut grads = HingeGrads {
        active,
        user: vec![0.0; d],
        positive: vec![0.0; d],
        negative: vec![0.0; d],
    };
    if !active || phi == 0.0 {
        return grads;
    }
    for c in 0..d {
        match kind {
            ScoreKind::Dot => {
                grads.user[c] = phi * (bj[c] - bi[c]);
                grads.positive[c] = -phi * a[c];
                grads.negative[c] = phi * a[c];
            }
            ScoreKind::NegL2 => {
                grads.user[c] = 2.0 * phi * (bj[c] - bi[c]);
                grads.positive[c] = 2.0 * phi * (bi[c] - a[c]);
                grads.negative[c] = 2.0 * phi * (a[c] - bj[c]);
            }
        }
    }
    grads
}

/// Resolves `w(k, K)` for a sampled list: the relevant-set size is the number
/// of ones in `y`, and hits (needed by the AP weight) come from the hard
/// ranking of `scores`. The cutoff is clamped to the list length.
pub fn rank_weights(weight: &MetricWeight, y: &[f64], scores: &[f64]) -> Vec<f64> {
    let cutoff = weight.cutoff.min(scores.len());
    let relevant = y.iter().filter(|&&v| v > 0.5).count();
    let perm = hard_perm(scores);
    let hits: Vec<bool> = (1..=cutoff).map(|k| y[perm.column(k)] > 0.5).collect();
    MetricWeight::new(weight.kind, cutoff).weights(relevant, &hits)
}

/// `P̃_[1:K]` for the resolved weights.
pub fn truncated_relaxed(scores: &[f64], weights: &[f64], tau: Temperature) -> Vec<f64> {
    RelaxedSort::new(scores, tau).weighted_sum(weights)
}

/// `‖y - P̃_[1:K]‖²` with explicit per-rank weights.
pub fn drm_loss_weighted(y: &[f64], scores: &[f64], weights: &[f64], tau: Temperature) -> f64 {
    let q = truncated_relaxed(scores, weights, tau);
    y.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum()
}

pub fn drm_loss(y: &[f64], scores: &[f64], weight: &MetricWeight, tau: Temperature) -> f64 {
    drm_loss_weighted(y, scores, &rank_weights(weight, y, scores), tau)
}

/// The relaxed metric `yᵀ P̃_[1:K]`.
pub fn relaxed_objective(y: &[f64], scores: &[f64], weight: &MetricWeight, tau: Temperature) -> f64 {
    let q = truncated_relaxed(scores, &rank_weights(weight, y, scores), tau);
    y.iter().zip(&q).map(|(a, b)| a * b).sum()
}

fn sgn(a: f64, b: f64) -> i8 {
    if a > b {
        1
    } else if a < b {
        -1
    } else {
        0
    }
}

/// Reusable buffers for the DRM gradient of one score list.
#[derive(Debug, Clone, Default)]
pub struct DrmGradientWorkspace {
    n: usize,
    tau: f64,
    scores: Vec<f64>,
    sgn: Vec<i8>,
    sgn_row_sums: Vec<f64>,
    sigma: Vec<f64>,
    residual: Vec<f64>,
    hv: Vec<f64>,
    acc: Vec<f64>,
    grad: Vec<f64>,
}

impl DrmGradientWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, scores: &[f64], tau: Temperature) {
        let n = scores.len();
        self.n = n;
        self.tau = tau.get();
        self.scores.clear();
        self.scores.extend_from_slice(scores);
        self.sgn.clear();
        self.sgn_row_sums.clear();
        for a in scores {
            let mut row_sum = 0.0;
            for b in scores {
                let s = sgn(*a, *b);
                self.sgn.push(s);
                row_sum += s as f64;
            }
            self.sgn_row_sums.push(row_sum);
        }
        for buf in [&mut self.sigma, &mut self.residual, &mut self.hv, &mut self.acc, &mut self.grad] {
            buf.clear();
            buf.resize(n, 0.0);
        }
    }

    /// Evaluates the loss and fills [`gradient`](Self::gradient) with
    /// `∇_ŷ L_DRM` for explicit weights `w(1..=K, K)`.
    pub fn compute(&mut self, y: &[f64], scores: &[f64], weights: &[f64], tau: Temperature) -> f64 {
        let n = scores.len();
        assert_eq!(y.len(), n, "label and score lengths differ");
        assert!(weights.len() <= n, "cutoff exceeds list length");
        self.prepare(scores, tau);
        let sorter = RelaxedSort::new(scores, tau);

        let q = sorter.weighted_sum(weights);
        let mut loss = 0.0;
        for j in 0..n {
            self.residual[j] = y[j] - q[j];
            loss += self.residual[j] * self.residual[j];
        }

        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            sorter.row_into(k + 1, &mut self.sigma);
            // H v, with H = diag(σ) - σσᵀ symmetric
            let sv: f64 = self.sigma.iter().zip(&self.residual).map(|(s, v)| s * v).sum();
            for j in 0..n {
                self.hv[j] = self.sigma[j] * (self.residual[j] - sv);
            }
            // (D + R)ᵀ (H v); (Rᵀu)_l = -Σ_{j≠l} sgn_lj (u_l + u_j)
            let c = rank_coefficient(n, k + 1);
            for l in 0..n {
                let row = &self.sgn[l * n..(l + 1) * n];
                let cross: f64 = row.iter().zip(&self.hv).map(|(&s, u)| s as f64 * u).sum();
                let r_t_u = -self.sgn_row_sums[l] * self.hv[l] - cross;
                self.acc[l] += w * (c * self.hv[l] + r_t_u);
            }
        }
        let scale = -2.0 / self.tau;
        for (g, a) in self.grad.iter_mut().zip(&self.acc) {
            *g = scale * a;
        }
        loss
    }

    /// `∇_ŷ L_DRM` from the last [`compute`](Self::compute).
    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    /// Sign matrix of the last scores, `sgn(ŷ_i - ŷ_j)`, row-major.
    pub fn sign_matrix(&self) -> &[i8] {
        &self.sgn
    }

    /// The sign-structure matrix `R` of the last scores.
    pub fn sign_structure(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|l| {
                        if j == l {
                            -self.sgn_row_sums[j]
                        } else {
                            self.sgn[j * n + l] as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Softmax Jacobian `H⁽ᵏ⁾ = diag(σ) - σσᵀ` of row `k` (1-based).
    pub fn softmax_jacobian(&self, k: usize) -> Vec<Vec<f64>> {
        let tau = Temperature::new(self.tau).expect("compute() ran first");
        let sigma = RelaxedSort::new(&self.scores, tau).row(k);
        let n = self.n;
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| if a == b { sigma[a] } else { 0.0 } - sigma[a] * sigma[b])
                    .collect()
            })
            .collect()
    }

    /// `W⁽ᵏ⁾ = w (H⁽ᵏ⁾ (D⁽ᵏ⁾ + R))ᵀ`, materialised.
    pub fn w_matrix(&self, k: usize, w: f64) -> Vec<Vec<f64>> {
        let n = self.n;
        let h = self.softmax_jacobian(k);
        let mut dr = self.sign_structure();
        let c = rank_coefficient(n, k);
        for (j, row) in dr.iter_mut().enumerate() {
            row[j] += c;
        }
        // (H (D+R))ᵀ[a][b] = Σ_m H[b][m] (D+R)[m][a]
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| w * (0..n).map(|m| h[b][m] * dr[m][a]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// The gradient assembled from the materialised `W⁽ᵏ⁾` matrices; an
    /// `O(K n³)` cross-check of [`compute`](Self::compute).
    pub fn materialized_gradient(&self, y: &[f64], weights: &[f64]) -> Vec<f64> {
        let n = self.n;
        let tau = Temperature::new(self.tau).expect("compute() ran first");
        let q = truncated_relaxed(&self.scores, weights, tau);
        let v: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; n];
        for (k, &w) in weights.iter().enumerate() {
            let wm = self.w_matrix(k + 1, w);
            for a in 0..n {
                out[a] += (0..n).map(|b| wm[a][b] * v[b]).sum::<f64>();
            }
        }
        out.iter().map(|g| -2.0 / self.tau * g).collect()
    }
}

/// `∇_ŷ L_DRM` for a metric weight.
pub fn drm_grad_scores(y: &[f64], scores: &[f64], weight: &MetricWeight, tau: Temperature) -> Vec<f64> {
    let weights = rank_weights(weight, y, scores);
    let mut ws = DrmGradientWorkspace::new();
    ws.compute(y, scores, &weights, tau);
    ws.gradient().to_vec()
}

/// DRM loss and its gradients with respect to the user factor and each
/// listed item factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrads {
    pub loss: f64,
    pub user: Vec<f64>,
    /// `items.len() x d`, in list order.
    pub items: Vec<f64>,
}

/// Chains `∇_ŷ L_DRM` through the score function. `items` must not repeat.
pub fn drm_grads_factors(
    model: &FactorModel,
    u: usize,
    items: &[u32],
    y: &[f64],
    weight: &MetricWeight,
    tau: Temperature,
    ws: &mut DrmGradientWorkspace,
) -> FactorGrads {
    let scores = model.score_list(u, items);
    let weights = rank_weights(weight, y, &scores);
    let loss = ws.compute(y, &scores, &weights, tau);
    let d = model.dim();
    let mut user = vec![0.0; d];
    let mut item_grads = vec![0.0; items.len() * d];
    let alpha = model.user(u);
    for ((&i, &g), ig) in items.iter().zip(ws.gradient()).zip(item_grads.chunks_mut(d)) {
        model
            .score_kind()
            .accumulate_grad(alpha, model.item(i as usize), g, &mut user, ig);
    }
    FactorGrads {
        loss,
        user,
        items: item_grads,
    }
}

/// `‖y - ŷ‖²` and its gradient `2(ŷ - y)`.
pub fn mse_loss(y: &[f64], scores: &[f64]) -> (f64, Vec<f64>) {
    let loss = y.iter().zip(scores).map(|(a, b)| (a - b).powi(2)).sum();
    let grad = y.iter().zip(scores).map(|(a, b)| 2.0 * (b - a)).collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::WeightKind;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn phi_cases() {
        assert_eq!(phi_weight(0.0, &[5.0, 5.0], 100), (101f64).ln());
        assert_eq!(phi_weight(10.0, &[0.0, 0.5], 100), 0.0);
        let neg = [1.0, 1.0, 1.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0];
        assert!((phi_weight(0.5, &neg, 100) - 31f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hinge_cases() {
        let s = [0.5, 0.2];
        assert!((hinge_loss(&s, 0, 1, 1.0, 1.0) - 0.7).abs() < 1e-15);
        assert_eq!(hinge_loss(&[3.0, 0.0], 0, 1, 1.0, 1.0), 0.0);
        assert_eq!(hinge_loss(&s, 0, 1, 1.0, 0.0), 0.0);
    }

    #[test]
    fn inactive_hinge_has_zero_gradients() {
        let m = FactorModel::from_factors(vec![1.0, 0.0], vec![1.0, 0.0, -1.0, 0.0], 2, ScoreKind::Dot, 0);
        let g = hinge_grads(&m, 0, 0, 1, 1.0, 2.0);
        assert!(!g.active);
        assert!(g.user.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));
    }

    #[test]
    fn drm_singleton() {
        let w = MetricWeight::new(WeightKind::ConstantOne, 1);
        assert_eq!(drm_loss(&[1.0], &[0.3], &w, t(1.0)), 0.0);
    }

    #[test]
    fn drm_zero_labels_bounded_by_row_norm() {
        let w = MetricWeight::new(WeightKind::ConstantOne, 1);
        let loss = drm_loss(&[0.0; 4], &[0.1, 0.9, -0.3, 0.2], &w, t(0.5));
        assert!(loss > 0.0 && loss <= 1.0);
    }

    #[test]
    fn tied_scores_use_zero_sign_branch() {
        // s = c·1: every σ is uniform and sgn ≡ 0, so R = 0 and
        // W⁽ᵏ⁾ = w (n+1-2k) H with H = I/n - 11ᵀ/n².
        let n = 4;
        let y = [1.0, 0.0, 1.0, 0.0];
        let weights = [1.0, 1.0];
        let mut ws = DrmGradientWorkspace::new();
        ws.compute(&y, &[0.25; 4], &weights, t(0.7));
        assert!(ws.sign_matrix().iter().all(|&s| s == 0));
        let q = 2.0 / n as f64;
        let v: Vec<f64> = y.iter().map(|yi| yi - q).collect();
        let vbar = v.iter().sum::<f64>() / n as f64;
        let coeff: f64 = (1..=2).map(|k| rank_coefficient(n, k)).sum();
        for (j, g) in ws.gradient().iter().enumerate() {
            let expected = -2.0 / 0.7 * coeff * (v[j] - vbar) / n as f64;
            assert!((g - expected).abs() < 1e-14, "{g} vs {expected}");
        }
    }

    #[test]
    fn matrix_free_gradient_matches_materialised_form() {
        let y = [1.0, 0.0, 1.0, 0.0, 0.0];
        let s = [0.3, -0.2, 0.9, 0.45, -0.7];
        let weights = [1.0, 0.6, 0.3];
        let mut ws = DrmGradientWorkspace::new();
        ws.compute(&y, &s, &weights, t(0.4));
        let reference = ws.materialized_gradient(&y, &weights);
        for (a, b) in ws.gradient().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn sign_structure_rows() {
        let mut ws = DrmGradientWorkspace::new();
        ws.compute(&[1.0, 0.0, 0.0], &[0.1, 0.5, -0.2], &[1.0], t(1.0));
        for row in ws.sign_structure() {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 0.0], &[1.0, 0.0]), (0.0, vec![0.0, 0.0]));
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]), (1.0, vec![-2.0, 0.0]));
    }
}
