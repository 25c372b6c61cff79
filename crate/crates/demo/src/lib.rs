//! Browser bindings: relaxed sorting, one DRM gradient step and exact
//! ranking metrics for a small score vector.

use drm_core::metrics::{ap_at, ndcg_at, precision_at, recall_at, MetricWeight, RankedList, WeightKind};
use drm_core::objectives::{drm_grad_scores, drm_loss};
use drm_core::relaxed_sort::{hard_perm, relaxed_perm, Temperature};
use wasm_bindgen::prelude::*;

fn check_lengths(labels: &[f64], scores: &[f64]) -> Result<(), String> {
    if scores.is_empty() || labels.len() != scores.len() {
        return Err(format!("need equal, non-empty lengths, got {} labels and {} scores", labels.len(), scores.len()));
    }
    Ok(())
}

/// Row-major `n x n` relaxed permutation matrix.
pub fn relaxed_matrix(scores: &[f64], tau: f64) -> Result<Vec<f64>, String> {
    if scores.is_empty() {
        return Err("no scores".into());
    }
    let tau = Temperature::new(tau).map_err(|e| e.to_string())?;
    Ok(relaxed_perm(scores, tau).rows.concat())
}

/// Row-major `n x n` hard permutation matrix.
pub fn hard_matrix(scores: &[f64]) -> Vec<f64> {
    hard_perm(scores)
        .to_matrix()
        .into_iter()
        .flat_map(|row| row.into_iter().map(f64::from))
        .collect()
}

/// `[loss, new scores...]` after one gradient step of size `step` on the scores.
pub fn descend(
    labels: &[f64],
    scores: &[f64],
    tau: f64,
    weight: &str,
    cutoff: usize,
    step: f64,
) -> Result<Vec<f64>, String> {
    check_lengths(labels, scores)?;
    let tau = Temperature::new(tau).map_err(|e| e.to_string())?;
    let kind: WeightKind = weight.parse().map_err(|e: drm_core::Error| e.to_string())?;
    let weight = MetricWeight::new(kind, cutoff.clamp(1, scores.len()));
    let loss = drm_loss(labels, scores, &weight, tau);
    let grad = drm_grad_scores(labels, scores, &weight, tau);
    let mut out = vec![loss];
    out.extend(scores.iter().zip(&grad).map(|(s, g)| s - step * g));
    Ok(out)
}

/// `[precision, recall, ndcg, ap]` at `cutoff` for the ranking induced by `scores`.
pub fn metrics(labels: &[f64], scores: &[f64], cutoff: usize) -> Result<Vec<f64>, String> {
    check_lengths(labels, scores)?;
    let ranking = RankedList::from_scores(scores, &[], scores.len());
    let holdout: Vec<u32> = (0..labels.len() as u32).filter(|&i| labels[i as usize] > 0.5).collect();
    let k = cutoff.clamp(1, scores.len());
    let r = ranking.items();
    Ok(vec![
        precision_at(k, r, &holdout),
        recall_at(k, r, &holdout),
        ndcg_at(k, r, &holdout),
        ap_at(k, r, &holdout),
    ])
}

#[wasm_bindgen]
pub fn relaxed_permutation(scores: Vec<f64>, tau: f64) -> Result<Vec<f64>, JsError> {
    relaxed_matrix(&scores, tau).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn hard_permutation(scores: Vec<f64>) -> Vec<f64> {
    hard_matrix(&scores)
}

#[wasm_bindgen]
pub fn drm_step(
    labels: Vec<f64>,
    scores: Vec<f64>,
    tau: f64,
    weight: String,
    cutoff: usize,
    step: f64,
) -> Result<Vec<f64>, JsError> {
    descend(&labels, &scores, tau, &weight, cutoff, step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ranking_metrics(labels: Vec<f64>, scores: Vec<f64>, cutoff: usize) -> Result<Vec<f64>, JsError> {
    metrics(&labels, &scores, cutoff).map_err(|e| JsError::new(&e))
}
