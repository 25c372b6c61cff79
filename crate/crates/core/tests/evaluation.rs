mod common;

use common::OracleScorer;
use drm_core::experiment::{evaluate_split, group_report};
use drm_core::interactions::{split, synthetic_low_rank, SplitSpec};
use drm_core::metrics::{evaluate_model, MetricSpec};
use drm_core::model::{FactorModel, ScoreKind};

#[test]
fn oracle_scores_perfectly_on_precision_free_metrics() {
    let data = synthetic_low_rank(60, 80, 4, 15, 1);
    let s = split(&data, &SplitSpec::default()).unwrap();
    let specs: Vec<MetricSpec> = ["NDCG@10", "MAP@10", "Recall@50", "NDCG@50"]
        .iter()
        .map(|t| t.parse().unwrap())
        .collect();
    let report = evaluate_model(&OracleScorer { holdout: &s.test }, &s.train, &s.train, &s.test, &specs, 1).unwrap();
    for spec in specs {
        assert_eq!(report.mean(spec), Some(1.0), "{spec}");
    }
}

#[test]
fn group_partition_averages_to_the_overall_metric() {
    let data = synthetic_low_rank(80, 100, 4, 15, 2);
    let s = split(&data, &SplitSpec::default()).unwrap();
    let model = FactorModel::init(80, 100, 8, ScoreKind::Dot, 3, 0.5);
    let spec: MetricSpec = "NDCG@10".parse().unwrap();
    let overall = evaluate_split(&model, &s, &[spec], 1).unwrap();
    let groups = group_report(&model, &s, &[1, 9, 11, 13], 1).unwrap();
    let users: usize = groups.iter().map(|g| g.users).sum();
    let weighted: f64 = groups.iter().map(|g| g.users as f64 * g.ndcg10.unwrap_or(0.0)).sum::<f64>() / users as f64;
    assert_eq!(users, overall.get(spec).unwrap().n_users);
    assert!((weighted - overall.mean(spec).unwrap()).abs() < 1e-12);
}
