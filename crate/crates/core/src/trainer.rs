//! Joint hinge + DRM training with per-coordinate Adagrad.
//!
//! One step: sample a user, `ρ` of its positives and `η` negatives; take the
//! lowest-scored positive and highest-scored negative for the weighted hinge
//! term, the whole list for the DRM term, and (for the L2 score) the
//! covariance penalty over the touched factors. Gradients are summed, applied
//! once with Adagrad, and every touched factor is projected back into the
//! unit ball.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::{eligible_users, InteractionMatrix};
use crate::metrics::{per_user_metrics, Metric, MetricSpec, MetricWeight, Scorer, WeightKind};
use crate::model::{project_unit_ball, CovarianceStats, FactorModel, ScoreKind};
use crate::objectives::{
    drm_grads_factors, drm_loss, hinge_grads, hinge_loss, phi_weight, DrmGradientWorkspace,
};
use crate::relaxed_sort::Temperature;

/// How the covariance penalty is estimated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// Covariance of the factors touched by the step, centred on a global
    /// mean refreshed every [`COV_MEAN_REFRESH`] steps.
    Batch,
    /// Exact covariance over all `M + N` factors at every step.
    Full,
}

pub const COV_MEAN_REFRESH: u64 = 128;
pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Latent dimension `d`.
    pub dim: usize,
    pub learning_rate: f64,
    pub tau: f64,
    /// Weight `λ` of the DRM term.
    pub lambda: f64,
    /// Weight `λ_C` of the covariance penalty (L2 score only).
    pub lambda_cov: f64,
    /// Positives per sample, `ρ`.
    pub positives: usize,
    /// Negatives per sample, `η`; defaults to `15 ρ`.
    pub negatives: Option<usize>,
    /// Hinge margin `μ`.
    pub margin: f64,
    /// DRM cutoff `K`.
    pub cutoff: usize,
    pub weight: WeightKind,
    pub epochs: usize,
    pub seed: u64,
    pub score_kind: ScoreKind,
    pub min_train: usize,
    /// Early stopping patience in epochs.
    pub patience: usize,
    /// Recall cutoff used for model selection.
    pub validation_cutoff: usize,
    /// Initialisation range; defaults to `1 / sqrt(d)`.
    pub init_scale: Option<f64>,
    pub covariance_mode: CovarianceMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            dim: 64,
            learning_rate: 0.05,
            tau: 1.0,
            lambda: 1.0,
            lambda_cov: 1.0,
            positives: 3,
            negatives: None,
            margin: 1.0,
            cutoff: 10,
            weight: WeightKind::ConstantOne,
            epochs: 100,
            seed: 0,
            score_kind: ScoreKind::Dot,
            min_train: 5,
            patience: 10,
            validation_cutoff: 50,
            init_scale: None,
            covariance_mode: CovarianceMode::Batch,
        }
    }
}

impl HyperParams {
    pub fn num_negatives(&self) -> usize {
        self.negatives.unwrap_or(15 * self.positives)
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau)
    }

    pub fn metric_weight(&self) -> MetricWeight {
        MetricWeight::new(self.weight, self.cutoff)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.temperature()?;
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda_cov >= 0.0 && self.margin >= 0.0) {
            return fail("lambda, lambda_cov and margin must be non-negative".into());
        }
        if self.positives == 0 || self.num_negatives() == 0 {
            return fail("positives and negatives must be at least 1".into());
        }
        if self.cutoff == 0 || self.validation_cutoff == 0 {
            return fail("cutoffs must be at least 1".into());
        }
        if self.cutoff > self.positives + self.num_negatives() {
            return fail(format!(
                "cutoff {} exceeds the sampled list length {}",
                self.cutoff,
                self.positives + self.num_negatives()
            ));
        }
        Ok(())
    }
}

/// One user's sampled list: `ρ` positives then `η` negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub user: usize,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
    /// Positives followed by negatives.
    pub items: Vec<u32>,
    /// `ρ` ones followed by `η` zeros.
    pub labels: Vec<f64>,
}

impl TrainingSample {
    pub fn new(user: usize, positives: Vec<u32>, negatives: Vec<u32>) -> Self {
        let items: Vec<u32> = positives.iter().chain(&negatives).copied().collect();
        let labels = positives
            .iter()
            .map(|_| 1.0)
            .chain(negatives.iter().map(|_| 0.0))
            .collect();
        Self {
            user,
            positives,
            negatives,
            items,
            labels,
        }
    }
}

/// Draws up to `rho` positives (all of them if the user has fewer) and exactly
/// `eta` negatives, both uniformly without replacement.
pub fn draw_sample(
    train: &InteractionMatrix,
    user: usize,
    rho: usize,
    eta: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    let pos_set = train.items_of(user);
    if pos_set.is_empty() {
        return Err(Error::NoPositives { user });
    }
    let n_items = train.num_items();
    let available = n_items - pos_set.len();
    if eta > available {
        return Err(Error::NotEnoughNegatives {
            user,
            requested: eta,
            available,
        });
    }
    let take = rho.min(pos_set.len());
    let positives: Vec<u32> = index::sample(rng, pos_set.len(), take)
        .into_iter()
        .map(|p| pos_set[p])
        .collect();

    let negatives = if 2 * pos_set.len() > n_items {
        let complement: Vec<u32> = (0..n_items as u32)
            .filter(|i| pos_set.binary_search(i).is_err())
            .collect();
        index::sample(rng, complement.len(), eta)
            .into_iter()
            .map(|p| complement[p])
            .collect()
    } else {
        let mut chosen = Vec::with_capacity(eta);
        while chosen.len() < eta {
            let j = rng.random_range(0..n_items as u32);
            if pos_set.binary_search(&j).is_err() && !chosen.contains(&j) {
                chosen.push(j);
            }
        }
        chosen
    };
    Ok(TrainingSample::new(user, positives, negatives))
}

/// Index (into the positives) of the lowest-scored positive and index (into
/// the negatives) of the highest-scored negative; ties go to the first.
pub fn hardest_pair(sample: &TrainingSample, scores: &[f64]) -> (usize, usize) {
    let rho = sample.positives.len();
    assert!(rho > 0 && !sample.negatives.is_empty());
    let (pos, neg) = scores.split_at(rho);
    let mut i = 0;
    for (p, &s) in pos.iter().enumerate() {
        if s < pos[i] {
            i = p;
        }
    }
    let mut j = 0;
    for (q, &s) in neg.iter().enumerate() {
        if s > neg[j] {
            j = q;
        }
    }
    (i, j)
}

/// Per-coordinate Adagrad accumulators for every factor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub learning_rate: f64,
    pub epsilon: f64,
    users: Vec<f64>,
    items: Vec<f64>,
}

impl AdagradState {
    pub fn new(model: &FactorModel, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            epsilon: ADAGRAD_EPSILON,
            users: vec![0.0; model.user_factors().len()],
            items: vec![0.0; model.item_factors().len()],
        }
    }

    pub fn user_accumulator(&self, u: usize, dim: usize) -> &[f64] {
        &self.users[u * dim..(u + 1) * dim]
    }

    pub fn item_accumulator(&self, i: usize, dim: usize) -> &[f64] {
        &self.items[i * dim..(i + 1) * dim]
    }

    fn apply(lr: f64, eps: f64, param: &mut [f64], accum: &mut [f64], grad: &[f64]) {
        for ((p, g2), g) in param.iter_mut().zip(accum.iter_mut()).zip(grad) {
            *g2 += g * g;
            *p -= lr * g / (*g2 + eps).sqrt();
        }
    }

    pub fn update_user(&mut self, model: &mut FactorModel, u: usize, grad: &[f64]) {
        let d = model.dim();
        let acc = &mut self.users[u * d..(u + 1) * d];
        Self::apply(self.learning_rate, self.epsilon, model.user_mut(u), acc, grad);
    }

    pub fn update_item(&mut self, model: &mut FactorModel, i: usize, grad: &[f64]) {
        let d = model.dim();
        let acc = &mut self.items[i * d..(i + 1) * d];
        Self::apply(self.learning_rate, self.epsilon, model.item_mut(i), acc, grad);
    }
}

/// Everything a training step mutates besides the model.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub adagrad: AdagradState,
    pub workspace: DrmGradientWorkspace,
    /// Steps taken so far.
    pub steps: u64,
    /// Number of DRM gradient evaluations; stays 0 when `λ = 0`.
    pub drm_gradient_calls: u64,
    cov_mean: Vec<f64>,
}

impl OptimizerState {
    pub fn new(model: &FactorModel, hp: &HyperParams) -> Self {
        Self {
            adagrad: AdagradState::new(model, hp.learning_rate),
            workspace: DrmGradientWorkspace::new(),
            steps: 0,
            drm_gradient_calls: 0,
            cov_mean: Vec::new(),
        }
    }
}

/// Loss values of one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub hinge: f64,
    pub drm: f64,
    pub cov: f64,
    pub hinge_active: bool,
}

fn global_mean(model: &FactorModel) -> Vec<f64> {
    let d = model.dim();
    let mut mean = vec![0.0; d];
    let all = model.user_factors().chunks(d).chain(model.item_factors().chunks(d));
    let mut count = 0usize;
    for theta in all {
        count += 1;
        for (m, v) in mean.iter_mut().zip(theta) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    mean
}

/// One joint update on a fixed sample.
pub fn train_step(
    model: &mut FactorModel,
    sample: &TrainingSample,
    hp: &HyperParams,
    state: &mut OptimizerState,
) -> Result<StepStats> {
    let tau = hp.temperature()?;
    let d = model.dim();
    let u = sample.user;
    let n = sample.items.len();
    let rho = sample.positives.len();
    let scores = model.score_list(u, &sample.items);

    let mut d_user = vec![0.0; d];
    let mut d_items = vec![0.0; n * d];

    // hinge on the hardest pair, weighted by Φ estimated from all negatives
    let (pi, nj) = hardest_pair(sample, &scores);
    let phi = phi_weight(scores[pi], &scores[rho..], model.num_items());
    let hinge = hinge_loss(&scores, pi, rho + nj, hp.margin, phi);
    let hg = hinge_grads(
        model,
        u,
        sample.positives[pi] as usize,
        sample.negatives[nj] as usize,
        hp.margin,
        phi,
    );
    for c in 0..d {
        d_user[c] += hg.user[c];
        d_items[pi * d + c] += hg.positive[c];
        d_items[(rho + nj) * d + c] += hg.negative[c];
    }

    let weight = MetricWeight::new(hp.weight, hp.cutoff.min(n));
    let drm = if hp.lambda > 0.0 {
        state.drm_gradient_calls += 1;
        let fg = drm_grads_factors(model, u, &sample.items, &sample.labels, &weight, tau, &mut state.workspace);
        for (a, g) in d_user.iter_mut().zip(&fg.user) {
            *a += hp.lambda * g;
        }
        for (a, g) in d_items.iter_mut().zip(&fg.items) {
            *a += hp.lambda * g;
        }
        fg.loss
    } else {
        drm_loss(&sample.labels, &scores, &weight, tau)
    };

    let mut cov = 0.0;
    if model.score_kind() == ScoreKind::NegL2 && hp.lambda_cov > 0.0 {
        let touched = || {
            std::iter::once(model.user(u)).chain(sample.items.iter().map(|&i| model.item(i as usize)))
        };
        let stats = match hp.covariance_mode {
            CovarianceMode::Full => {
                let all = model.user_factors().chunks(d).chain(model.item_factors().chunks(d));
                CovarianceStats::of(all, d)
            }
            CovarianceMode::Batch => {
                if state.cov_mean.is_empty() || state.steps.is_multiple_of(COV_MEAN_REFRESH) {
                    state.cov_mean = global_mean(model);
                }
                CovarianceStats::around(touched(), state.cov_mean.clone())
            }
        };
        cov = stats.off_diagonal_loss();
        stats.grad_into(model.user(u), hp.lambda_cov, &mut d_user);
        for (t, &i) in sample.items.iter().enumerate() {
            stats.grad_into(model.item(i as usize), hp.lambda_cov, &mut d_items[t * d..(t + 1) * d]);
        }
    }

    if !d_user.iter().chain(&d_items).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteGradient {
            user: u,
            tau: hp.tau,
            scores,
        });
    }

    state.adagrad.update_user(model, u, &d_user);
    project_unit_ball(model.user_mut(u));
    for (t, &i) in sample.items.iter().enumerate() {
        state.adagrad.update_item(model, i as usize, &d_items[t * d..(t + 1) * d]);
        project_unit_ball(model.item_mut(i as usize));
    }
    state.steps += 1;

    Ok(StepStats {
        hinge,
        drm,
        cov,
        hinge_active: hg.active,
    })
}

/// Validation metrics tracked during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    pub recall: f64,
    pub ndcg10: f64,
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub hinge_loss: f64,
    pub drm_loss: f64,
    pub cov_loss: f64,
    pub validation: ValidationMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub validation_cutoff: usize,
    pub records: Vec<EpochRecord>,
}

impl Trace {
    pub fn header(&self) -> String {
        format!(
            "epoch\thinge_loss_mean\tdrm_loss_mean\tcov_loss\trecall@{}_val\tndcg@10_val",
            self.validation_cutoff
        )
    }

    /// Tab-separated trace with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{:.10}\t{:.10}\t{:.10}\t{:.10}\t{:.10}\n",
                r.epoch, r.hinge_loss, r.drm_loss, r.cov_loss, r.validation.recall, r.validation.ndcg10
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Snapshot with the best validation recall.
    pub model: FactorModel,
    /// Model after the last epoch.
    pub last_model: FactorModel,
    pub trace: Trace,
    pub initial: ValidationMetrics,
    pub best_epoch: usize,
    pub drm_gradient_calls: u64,
}

/// Validation recall@`cutoff` and NDCG@10 over eligible validation users.
/// NaN when no user is eligible.
pub fn validation_metrics(
    model: &FactorModel,
    train: &InteractionMatrix,
    validation: &InteractionMatrix,
    hp: &HyperParams,
) -> ValidationMetrics {
    let users = eligible_users(train, validation, hp.min_train);
    if users.is_empty() {
        return ValidationMetrics {
            recall: f64::NAN,
            ndcg10: f64::NAN,
        };
    }
    let specs = [
        MetricSpec::new(Metric::Recall, hp.validation_cutoff),
        MetricSpec::new(Metric::Ndcg, 10),
    ];
    let rows = per_user_metrics(model, train, validation, &users, &specs);
    let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
    ValidationMetrics {
        recall: mean(0),
        ndcg10: mean(1),
    }
}

const SAMPLER_STREAM: u64 = 0x5eed_d12a;

/// Runs epochs of one sampled step per trainable user, in shuffled order,
/// until `hp.epochs` or `hp.patience` epochs without a better validation
/// recall. `on_epoch` sees each trace row as it is produced.
pub fn fit(
    train: &InteractionMatrix,
    validation: &InteractionMatrix,
    hp: &HyperParams,
    mut on_epoch: impl FnMut(&EpochRecord, &FactorModel),
) -> Result<FitResult> {
    hp.validate()?;
    let scale = hp.init_scale.unwrap_or_else(|| FactorModel::default_scale(hp.dim));
    let mut model = FactorModel::init(
        train.num_users(),
        train.num_items(),
        hp.dim,
        hp.score_kind,
        hp.seed,
        scale,
    );
    let eta = hp.num_negatives();
    let mut users: Vec<usize> = (0..train.num_users())
        .filter(|&u| {
            let k = train.items_of(u).len();
            k > 0 && train.num_items() - k >= eta
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(SAMPLER_STREAM);
    let mut state = OptimizerState::new(&model, hp);

    let initial = validation_metrics(&model, train, validation, hp);
    let mut best = (initial.recall, model.clone(), 0usize);
    let mut stale = 0;
    let mut records = Vec::new();

    for epoch in 1..=hp.epochs {
        users.shuffle(&mut rng);
        let mut sums = StepStats::default();
        for &u in &users {
            let sample = draw_sample(train, u, hp.positives, eta, &mut rng)?;
            let s = train_step(&mut model, &sample, hp, &mut state)?;
            sums.hinge += s.hinge;
            sums.drm += s.drm;
            sums.cov += s.cov;
        }
        let steps = users.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            hinge_loss: sums.hinge / steps,
            drm_loss: sums.drm / steps,
            cov_loss: sums.cov / steps,
            validation: validation_metrics(&model, train, validation, hp),
        };
        on_epoch(&record, &model);
        records.push(record);

        let recall = record.validation.recall;
        if recall > best.0 || best.0.is_nan() {
            best = (recall, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }

    Ok(FitResult {
        model: best.1,
        last_model: model,
        trace: Trace {
            validation_cutoff: hp.validation_cutoff,
            records,
        },
        initial,
        best_epoch: best.2,
        drm_gradient_calls: state.drm_gradient_calls,
    })
}
