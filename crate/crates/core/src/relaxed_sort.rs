//! Hard and relaxed (NeuralSort) permutation operators.
//!
//! For a score vector `s` of length `n`, row `k` (1-based) of the descending
//! sort permutation selects `argmax[(n + 1 - 2k) s - A_s 1]`, where
//! `A_s[i][j] = |s_i - s_j|`. The relaxed operator replaces the argmax with a
//! softmax at temperature `tau`, giving a unimodal row-stochastic matrix that
//! tends to the hard permutation as `tau -> 0+`.
//!
//! Rows are produced on demand: the ranking losses only need the first `K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted temperature. Below this the logits `z / tau` overflow
/// long before the softmax can stabilise them.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// Softmax temperature, validated to be finite and `>= MIN_TEMPERATURE`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= MIN_TEMPERATURE {
            Ok(Self(value))
        } else {
            Err(Error::Temperature {
                value,
                min: MIN_TEMPERATURE,
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Temperature::new(value)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `A[i][j] = |s_i - s_j|`.
pub fn abs_diff_matrix(s: &[f64]) -> Vec<Vec<f64>> {
    s.iter()
        .map(|a| s.iter().map(|b| (a - b).abs()).collect())
        .collect()
}

/// `A_s 1`, the row sums of [`abs_diff_matrix`], without materialising it.
pub fn abs_row_sums(s: &[f64]) -> Vec<f64> {
    s.iter()
        .map(|a| s.iter().map(|b| (a - b).abs()).sum())
        .collect()
}

/// Unscaled sorting logits of row `k`: `(n + 1 - 2k) s - A_s 1`.
pub fn sorting_logits(s: &[f64], k: usize, row_sums: &[f64], out: &mut [f64]) {
    let n = s.len();
    assert!((1..=n).contains(&k), "rank {k} outside 1..={n}");
    let c = rank_coefficient(n, k);
    for ((o, &si), &ri) in out.iter_mut().zip(s).zip(row_sums) {
        *o = c * si - ri;
    }
}

/// `n + 1 - 2k`.
pub fn rank_coefficient(n: usize, k: usize) -> f64 {
    (n as f64 + 1.0) - 2.0 * k as f64
}

/// In-place softmax of `logits / tau` with max-subtraction.
pub fn softmax_scaled(logits: &mut [f64], tau: f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = ((*v - max) / tau).exp();
        total += *v;
    }
    for v in logits.iter_mut() {
        *v /= total;
    }
}

/// A 0/1 permutation matrix stored as the column selected by each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPermutation {
    columns: Vec<usize>,
}

impl HardPermutation {
    /// Index of the entry placed at 1-based rank `k`.
    pub fn column(&self, k: usize) -> usize {
        self.columns[k - 1]
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.columns.len();
        self.columns
            .iter()
            .map(|&c| {
                let mut row = vec![0; n];
                row[c] = 1;
                row
            })
            .collect()
    }

    /// `P v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|&c| v[c]).collect()
    }
}

/// The permutation sorting `s` in descending order.
///
/// Row `k` takes the argmax of the sorting logits. Among equal maxima (only
/// possible when `s` has ties) the lowest index not already taken by an
/// earlier row wins, so the result is always a permutation.
pub fn hard_perm(s: &[f64]) -> HardPermutation {
    let n = s.len();
    let row_sums = abs_row_sums(s);
    let mut logits = vec![0.0; n];
    let mut taken = vec![false; n];
    let columns = (1..=n)
        .map(|k| {
            sorting_logits(s, k, &row_sums, &mut logits);
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let pick = (0..n)
                .find(|&j| logits[j] == max && !taken[j])
                .or_else(|| (0..n).find(|&j| logits[j] == max))
                .expect("logits are finite");
            taken[pick] = true;
            pick
        })
        .collect();
    HardPermutation { columns }
}

/// Row-wise access to the relaxed permutation of one score vector.
#[derive(Debug, Clone)]
pub struct RelaxedSort<'a> {
    scores: &'a [f64],
    row_sums: Vec<f64>,
    tau: Temperature,
}

impl<'a> RelaxedSort<'a> {
    pub fn new(scores: &'a [f64], tau: Temperature) -> Self {
        assert!(!scores.is_empty(), "cannot sort an empty score vector");
        Self {
            scores,
            row_sums: abs_row_sums(scores),
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// Writes row `k` (1-based) into `out`.
    pub fn row_into(&self, k: usize, out: &mut [f64]) {
        sorting_logits(self.scores, k, &self.row_sums, out);
        softmax_scaled(out, self.tau.get());
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.scores.len()];
        self.row_into(k, &mut out);
        out
    }

    /// `Σ_{k ≤ K} w_k P̃_k` with `K = weights.len()`.
    pub fn weighted_sum(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.scores.len();
        assert!(weights.len() <= n, "cutoff {} exceeds list length {n}", weights.len());
        let mut acc = vec![0.0; n];
        let mut row = vec![0.0; n];
        for (k, &w) in weights.iter().enumerate() {
            self.row_into(k + 1, &mut row);
            for (a, r) in acc.iter_mut().zip(&row) {
                *a += w * r;
            }
        }
        acc
    }
}

/// Row `k` of the relaxed permutation: `softmax(((n + 1 - 2k) s - A_s 1) / tau)`.
pub fn relaxed_perm_row(s: &[f64], k: usize, tau: Temperature) -> Vec<f64> {
    RelaxedSort::new(s, tau).row(k)
}

/// The full `n x n` relaxed permutation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPermutation {
    pub rows: Vec<Vec<f64>>,
    pub tau: Temperature,
}

pub fn relaxed_perm(s: &[f64], tau: Temperature) -> RelaxedPermutation {
    let sorter = RelaxedSort::new(s, tau);
    RelaxedPermutation {
        rows: (1..=s.len()).map(|k| sorter.row(k)).collect(),
        tau,
    }
}

/// `P̃_[1:K] = Σ_{k ≤ K} w(k, K) P̃_k(s)` where `weights[k - 1] = w(k, K)`.
pub fn weighted_truncated_sum(s: &[f64], weights: &[f64], tau: Temperature) -> Vec<f64> {
    RelaxedSort::new(s, tau).weighted_sum(weights)
}
