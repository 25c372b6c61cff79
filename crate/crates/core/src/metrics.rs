//! Top-K ranking metrics and the weighted-hit form that unifies them.
//!
//! Every metric here is a weighted sum of `Hit(u, k)` over the first `K`
//! ranks; [`MetricWeight`] produces those weights and [`unified_metric`]
//! evaluates the sum. The named functions ([`precision_at`], [`ndcg_at`], ...)
//! compute the textbook definitions directly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::{eligible_users, InteractionMatrix};

/// Items ordered by descending predicted score. Equal scores are ordered by
/// ascending item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    items: Vec<u32>,
}

impl RankedList {
    pub fn new(items: Vec<u32>) -> Self {
        Self { items }
    }

    /// Ranks all items of `scores` not contained in the sorted `exclude` list
    /// and keeps the first `depth` of them.
    pub fn from_scores(scores: &[f64], exclude: &[u32], depth: usize) -> Self {
        let mut candidates: Vec<u32> = (0..scores.len() as u32)
            .filter(|i| exclude.binary_search(i).is_err())
            .collect();
        let order = |a: &u32, b: &u32| {
            scores[*b as usize]
                .total_cmp(&scores[*a as usize])
                .then(a.cmp(b))
        };
        if depth < candidates.len() {
            if depth > 0 {
                candidates.select_nth_unstable_by(depth - 1, order);
            }
            candidates.truncate(depth);
        }
        candidates.sort_unstable_by(order);
        Self { items: candidates }
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// 1 if the item at 1-based rank `k` is in the sorted `holdout` list.
///
/// Panics if `k` is outside `1..=ranking.len()`.
pub fn hit(k: usize, ranking: &[u32], holdout: &[u32]) -> u8 {
    assert!(
        (1..=ranking.len()).contains(&k),
        "rank {k} outside 1..={}",
        ranking.len()
    );
    holdout.binary_search(&ranking[k - 1]).is_ok() as u8
}

fn hits(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> Vec<bool> {
    (1..=cutoff)
        .map(|k| k <= ranking.len() && hit(k, ranking, holdout) == 1)
        .collect()
}

fn hit_count(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> usize {
    ranking
        .iter()
        .take(cutoff)
        .filter(|i| holdout.binary_search(i).is_ok())
        .count()
}

fn discount(k: usize) -> f64 {
    1.0 / ((k + 1) as f64).log2()
}

/// Ideal DCG@K for a user with `relevant` held-out items.
pub fn ideal_dcg(cutoff: usize, relevant: usize) -> f64 {
    (1..=cutoff.min(relevant)).map(discount).sum()
}

pub fn precision_at(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> f64 {
    assert!(cutoff >= 1);
    hit_count(cutoff, ranking, holdout) as f64 / cutoff as f64
}

pub fn recall_at(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> f64 {
    assert!(cutoff >= 1);
    if holdout.is_empty() {
        return 0.0;
    }
    hit_count(cutoff, ranking, holdout) as f64 / holdout.len() as f64
}

pub fn ndcg_at(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> f64 {
    assert!(cutoff >= 1);
    if holdout.is_empty() {
        return 0.0;
    }
    let dcg: f64 = hits(cutoff, ranking, holdout)
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(k, _)| discount(k + 1))
        .sum();
    dcg / ideal_dcg(cutoff, holdout.len())
}

pub fn ap_at(cutoff: usize, ranking: &[u32], holdout: &[u32]) -> f64 {
    assert!(cutoff >= 1);
    if holdout.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    let mut total = 0.0;
    for (k, h) in hits(cutoff, ranking, holdout).into_iter().enumerate() {
        if h {
            found += 1;
            total += found as f64 / (k + 1) as f64;
        }
    }
    total / cutoff.min(holdout.len()) as f64
}

/// Which metric a weight function reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Precision,
    Recall,
    Ndcg,
    #[serde(alias = "map")]
    Ap,
    ConstantOne,
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "precision" => Ok(WeightKind::Precision),
            "recall" => Ok(WeightKind::Recall),
            "ndcg" => Ok(WeightKind::Ndcg),
            "ap" | "map" => Ok(WeightKind::Ap),
            "constant-one" | "one" | "1" => Ok(WeightKind::ConstantOne),
            other => Err(Error::Config(format!("unknown metric weight `{other}`"))),
        }
    }
}

/// A rank weight function `w(k, K)` with its cutoff `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricWeight {
    pub kind: WeightKind,
    pub cutoff: usize,
}

impl MetricWeight {
    pub fn new(kind: WeightKind, cutoff: usize) -> Self {
        assert!(cutoff >= 1, "cutoff must be at least 1");
        Self { kind, cutoff }
    }

    /// Weights for ranks `1..=K`: `gains / normalizer`.
    ///
    /// `relevant` is the size of the user's relevant set and `hits` the hit
    /// indicators of ranks `1..=K`; the latter is read only by the AP weight,
    /// whose value depends on precision at each rank.
    pub fn weights(&self, relevant: usize, hits: &[bool]) -> Vec<f64> {
        let norm = self.normalizer(relevant);
        self.gains(relevant, hits).into_iter().map(|g| g / norm).collect()
    }

    /// Unnormalised per-rank weights.
    pub fn gains(&self, relevant: usize, hits: &[bool]) -> Vec<f64> {
        let cutoff = self.cutoff;
        match self.kind {
            WeightKind::ConstantOne | WeightKind::Precision => vec![1.0; cutoff],
            _ if relevant == 0 => vec![0.0; cutoff],
            WeightKind::Recall => vec![1.0; cutoff],
            WeightKind::Ndcg => (1..=cutoff).map(discount).collect(),
            WeightKind::Ap => {
                assert!(hits.len() >= cutoff, "AP weights need hits for every rank");
                let mut found = 0usize;
                (1..=cutoff)
                    .map(|k| {
                        found += hits[k - 1] as usize;
                        found as f64 / k as f64
                    })
                    .collect()
            }
        }
    }

    /// The factor shared by every rank: `K`, `|V|`, the ideal DCG or
    /// `min(K, |V|)`. Never zero.
    pub fn normalizer(&self, relevant: usize) -> f64 {
        match self.kind {
            WeightKind::ConstantOne => 1.0,
            WeightKind::Precision => self.cutoff as f64,
            _ if relevant == 0 => 1.0,
            WeightKind::Recall => relevant as f64,
            WeightKind::Ndcg => ideal_dcg(self.cutoff, relevant),
            WeightKind::Ap => self.cutoff.min(relevant) as f64,
        }
    }
}

/// `Σ_{k ≤ K} w(k, K) · Hit(u, k)`, evaluated as
/// `(Σ_k gain_k · Hit(u, k)) / normalizer` in rank order.
pub fn unified_metric(weight: &MetricWeight, ranking: &[u32], holdout: &[u32]) -> f64 {
    let hit_flags = hits(weight.cutoff, ranking, holdout);
    let total: f64 = weight
        .gains(holdout.len(), &hit_flags)
        .iter()
        .zip(&hit_flags)
        .filter(|(_, &h)| h)
        .map(|(g, _)| *g)
        .sum();
    total / weight.normalizer(holdout.len())
}

/// The four reported metric families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Precision,
    Recall,
    Ndcg,
    Map,
}

impl Metric {
    pub fn evaluate(self, cutoff: usize, ranking: &[u32], holdout: &[u32]) -> f64 {
        match self {
            Metric::Precision => precision_at(cutoff, ranking, holdout),
            Metric::Recall => recall_at(cutoff, ranking, holdout),
            Metric::Ndcg => ndcg_at(cutoff, ranking, holdout),
            Metric::Map => ap_at(cutoff, ranking, holdout),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
            Metric::Map => "MAP",
        }
    }
}

/// A metric at a cutoff, e.g. `NDCG@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MetricSpec {
    pub metric: Metric,
    pub cutoff: usize,
}

impl MetricSpec {
    pub const fn new(metric: Metric, cutoff: usize) -> Self {
        Self { metric, cutoff }
    }

    /// MAP@10, NDCG@10, Recall@50 and NDCG@50.
    pub fn defaults() -> Vec<MetricSpec> {
        vec![
            MetricSpec::new(Metric::Map, 10),
            MetricSpec::new(Metric::Ndcg, 10),
            MetricSpec::new(Metric::Recall, 50),
            MetricSpec::new(Metric::Ndcg, 50),
        ]
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.metric.label(), self.cutoff)
    }
}

impl TryFrom<String> for MetricSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricSpec> for String {
    fn from(spec: MetricSpec) -> String {
        spec.to_string()
    }
}

impl std::str::FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad metric `{s}`, expected e.g. NDCG@10"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let metric = match name.to_ascii_lowercase().as_str() {
            "precision" | "p" => Metric::Precision,
            "recall" | "r" => Metric::Recall,
            "ndcg" => Metric::Ndcg,
            "map" | "ap" => Metric::Map,
            _ => return Err(bad()),
        };
        let cutoff: usize = k.parse().map_err(|_| bad())?;
        if cutoff == 0 {
            return Err(bad());
        }
        Ok(MetricSpec::new(metric, cutoff))
    }
}

/// Anything that scores every item for a user.
pub trait Scorer: Sync {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    /// Writes the score of every item for `user` into `out` (length N).
    fn score_all(&self, user: usize, out: &mut [f64]);
}

/// Per-user metric values for the given users; rows follow `users`, columns
/// follow `specs`. Items in `exclude` are removed before ranking.
pub fn per_user_metrics<S: Scorer + ?Sized>(
    model: &S,
    exclude: &InteractionMatrix,
    holdout: &InteractionMatrix,
    users: &[usize],
    specs: &[MetricSpec],
) -> Vec<Vec<f64>> {
    let depth = specs.iter().map(|s| s.cutoff).max().unwrap_or(0);
    let eval_user = |&u: &usize| {
        let mut scores = vec![0.0; model.num_items()];
        model.score_all(u, &mut scores);
        let ranked = RankedList::from_scores(&scores, exclude.items_of(u), depth);
        let relevant = holdout.items_of(u);
        specs
            .iter()
            .map(|s| s.metric.evaluate(s.cutoff, ranked.items(), relevant))
            .collect::<Vec<f64>>()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        users.par_iter().map(eval_user).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        users.iter().map(eval_user).collect()
    }
}

/// Mean and population standard deviation of one metric over users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub spec: MetricSpec,
    pub mean: f64,
    pub std: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn get(&self, spec: MetricSpec) -> Option<&MetricSummary> {
        self.rows.iter().find(|r| r.spec == spec)
    }

    pub fn mean(&self, spec: MetricSpec) -> Option<f64> {
        self.get(spec).map(|r| r.mean)
    }

    /// `metric@K = mean ± std, n_users` lines.
    pub fn to_key_values(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{} = {:.6} ± {:.6}, {}\n", r.spec, r.mean, r.std, r.n_users))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("metric\tmean\tstd\tn_users\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\t{}\n", r.spec, r.mean, r.std, r.n_users));
        }
        out
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Averages each metric over eligible users: at least `min_train` items in
/// `train` and at least one in `test`. Items in `exclude` (normally the
/// training data) never appear in a ranking.
pub fn evaluate_model<S: Scorer + ?Sized>(
    model: &S,
    train: &InteractionMatrix,
    exclude: &InteractionMatrix,
    test: &InteractionMatrix,
    specs: &[MetricSpec],
    min_train: usize,
) -> Result<EvalReport> {
    let users = eligible_users(train, test, min_train);
    if users.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    let values = per_user_metrics(model, exclude, test, &users, specs);
    let rows = specs
        .iter()
        .enumerate()
        .map(|(c, &spec)| {
            let column: Vec<f64> = values.iter().map(|row| row[c]).collect();
            let (mean, std) = mean_std(&column);
            MetricSummary {
                spec,
                mean,
                std,
                n_users: users.len(),
            }
        })
        .collect();
    Ok(EvalReport { rows })
}
