//! User and item latent factors, score functions and factor regularisers.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scorer;

/// How a (user, item) factor pair becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// `α · β`
    Dot,
    /// `-‖α - β‖²`
    NegL2,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ScoreKind::Dot),
            "neg-l2" | "l2" => Ok(ScoreKind::NegL2),
            other => Err(Error::Config(format!("unknown score kind `{other}`"))),
        }
    }
}

impl ScoreKind {
    pub fn score(self, user: &[f64], item: &[f64]) -> f64 {
        match self {
            ScoreKind::Dot => user.iter().zip(item).map(|(a, b)| a * b).sum(),
            ScoreKind::NegL2 => -user
                .iter()
                .zip(item)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>(),
        }
    }

    /// Adds `g · ∂score/∂user` into `user_grad` and `g · ∂score/∂item` into
    /// `item_grad`.
    pub fn accumulate_grad(
        self,
        user: &[f64],
        item: &[f64],
        g: f64,
        user_grad: &mut [f64],
        item_grad: &mut [f64],
    ) {
        match self {
            ScoreKind::Dot => {
                for c in 0..user.len() {
                    user_grad[c] += g * item[c];
                    item_grad[c] += g * user[c];
                }
            }
            ScoreKind::NegL2 => {
                for c in 0..user.len() {
                    let diff = user[c] - item[c];
                    user_grad[c] -= 2.0 * g * diff;
                    item_grad[c] += 2.0 * g * diff;
                }
            }
        }
    }
}

/// Dense user (`M x d`) and item (`N x d`) factors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    num_users: usize,
    num_items: usize,
    dim: usize,
    score_kind: ScoreKind,
    seed: u64,
    users: Vec<f64>,
    items: Vec<f64>,
}

impl FactorModel {
    /// Factors drawn i.i.d. from `U[-scale, scale]` and projected into the
    /// unit ball.
    pub fn init(
        num_users: usize,
        num_items: usize,
        dim: usize,
        score_kind: ScoreKind,
        seed: u64,
        scale: f64,
    ) -> Self {
        assert!(dim >= 1, "factor dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            if scale == 0.0 {
                return vec![0.0; len];
            }
            (0..len).map(|_| rng.random_range(-scale..=scale)).collect()
        };
        let users = draw(num_users * dim);
        let items = draw(num_items * dim);
        let mut model = Self::from_factors(users, items, dim, score_kind, seed);
        for u in 0..num_users {
            project_unit_ball(model.user_mut(u));
        }
        for i in 0..num_items {
            project_unit_ball(model.item_mut(i));
        }
        model
    }

    /// Default initialisation scale `1 / sqrt(d)`.
    pub fn default_scale(dim: usize) -> f64 {
        1.0 / (dim as f64).sqrt()
    }

    pub fn from_factors(
        users: Vec<f64>,
        items: Vec<f64>,
        dim: usize,
        score_kind: ScoreKind,
        seed: u64,
    ) -> Self {
        assert!(dim >= 1 && users.len().is_multiple_of(dim) && items.len().is_multiple_of(dim));
        Self {
            num_users: users.len() / dim,
            num_items: items.len() / dim,
            dim,
            score_kind,
            seed,
            users,
            items,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.users
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.items
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        self.score_kind.score(self.user(u), self.item(i))
    }

    /// Scores of `items` for user `u`, in the given order.
    pub fn score_list(&self, u: usize, items: &[u32]) -> Vec<f64> {
        items.iter().map(|&i| self.score(u, i as usize)).collect()
    }

    /// Rounds every factor to the nearest `f32`, the precision of the model
    /// file. A quantized model survives `save`/`load` unchanged.
    pub fn quantize_f32(&mut self) {
        for v in self.users.iter_mut().chain(self.items.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

impl Scorer for FactorModel {
    fn num_users(&self) -> usize {
        self.num_users
    }

    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_all(&self, user: usize, out: &mut [f64]) {
        let a = self.user(user);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.score_kind.score(a, self.item(i));
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection onto the unit ball: `θ / max(1, ‖θ‖)`.
pub fn project_unit_ball(theta: &mut [f64]) {
    let norm = l2_norm(theta);
    if norm > 1.0 {
        for v in theta.iter_mut() {
            *v /= norm;
        }
    }
}

/// Covariance of a pooled factor set.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStats {
    /// `d x d`, row-major.
    pub cov: Vec<f64>,
    pub mean: Vec<f64>,
    pub count: usize,
}

impl CovarianceStats {
    /// `C = (1/|Θ|) Σ (θ - μ)(θ - μ)ᵀ` around the supplied mean.
    pub fn around<'a>(factors: impl Iterator<Item = &'a [f64]> + Clone, mean: Vec<f64>) -> Self {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        let mut count = 0;
        for theta in factors {
            count += 1;
            for a in 0..d {
                let xa = theta[a] - mean[a];
                for b in 0..d {
                    cov[a * d + b] += xa * (theta[b] - mean[b]);
                }
            }
        }
        if count > 0 {
            for v in &mut cov {
                *v /= count as f64;
            }
        }
        Self { cov, mean, count }
    }

    pub fn of<'a>(factors: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0;
        for theta in factors.clone() {
            count += 1;
            for (m, v) in mean.iter_mut().zip(theta) {
                *m += v;
            }
        }
        if count > 0 {
            for m in &mut mean {
                *m /= count as f64;
            }
        }
        Self::around(factors, mean)
    }

    /// `(‖C‖_F² - ‖diag C‖²) / |Θ|`.
    pub fn off_diagonal_loss(&self) -> f64 {
        let d = self.mean.len();
        let mut total = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    total += self.cov[a * d + b].powi(2);
                }
            }
        }
        total / self.count as f64
    }

    /// Gradient of [`off_diagonal_loss`](Self::off_diagonal_loss) with
    /// respect to one member `θ`: `(4 / |Θ|²) C_off (θ - μ)`. The mean's own
    /// dependence on `θ` drops out because deviations sum to zero.
    pub fn grad_into(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.mean.len();
        let factor = scale * 4.0 / (self.count as f64).powi(2);
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                if a != b {
                    acc += self.cov[a * d + b] * (theta[b] - self.mean[b]);
                }
            }
            out[a] += factor * acc;
        }
    }
}

/// Value and per-factor gradients of the covariance regulariser over all
/// `M + N` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceLoss {
    pub value: f64,
    pub user_grads: Vec<f64>,
    pub item_grads: Vec<f64>,
}

pub fn covariance_loss(model: &FactorModel) -> CovarianceLoss {
    let d = model.dim;
    assert!(model.num_users + model.num_items >= 2, "need at least two factors");
    let pooled = model.users.chunks(d).chain(model.items.chunks(d));
    let stats = CovarianceStats::of(pooled, d);
    let mut user_grads = vec![0.0; model.users.len()];
    let mut item_grads = vec![0.0; model.items.len()];
    for (theta, g) in model.users.chunks(d).zip(user_grads.chunks_mut(d)) {
        stats.grad_into(theta, 1.0, g);
    }
    for (theta, g) in model.items.chunks(d).zip(item_grads.chunks_mut(d)) {
        stats.grad_into(theta, 1.0, g);
    }
    CovarianceLoss {
        value: stats.off_diagonal_loss(),
        user_grads,
        item_grads,
    }
}

const MAGIC: &[u8; 4] = b"DRMF";
pub const MODEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 28;

impl FactorModel {
    /// Binary model file: a 28-byte little-endian header (magic `DRMF`,
    /// version u16, score kind u8, reserved u8, M u32, N u32, d u32, seed
    /// u64) followed by user then item factors as row-major `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.users.len() + self.items.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(match self.score_kind {
            ScoreKind::Dot => 0,
            ScoreKind::NegL2 => 1,
        });
        out.push(0);
        out.extend_from_slice(&(self.num_users as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_items as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.users.iter().chain(&self.items) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::ModelFormat("missing DRMF header".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let version = u16_at(4);
        if version != MODEL_VERSION {
            return Err(Error::ModelVersion {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let score_kind = match bytes[6] {
            0 => ScoreKind::Dot,
            1 => ScoreKind::NegL2,
            other => return Err(Error::ModelFormat(format!("unknown score kind {other}"))),
        };
        let (num_users, num_items, dim) = (u32_at(8), u32_at(12), u32_at(16));
        let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        if dim == 0 {
            return Err(Error::ModelFormat("zero factor dimension".into()));
        }
        let floats = (num_users + num_items) * dim;
        if bytes.len() != HEADER_LEN + 4 * floats {
            return Err(Error::ModelFormat(format!(
                "expected {} bytes of factors, found {}",
                4 * floats,
                bytes.len() - HEADER_LEN
            )));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (users, items) = values.split_at(num_users * dim);
        Ok(Self {
            num_users,
            num_items,
            dim,
            score_kind,
            seed,
            users: users.to_vec(),
            items: items.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(kind: ScoreKind, a: Vec<f64>, b: Vec<f64>) -> FactorModel {
        FactorModel::from_factors(a, b, 2, kind, 0)
    }

    #[test]
    fn score_arithmetic() {
        assert_eq!(pair(ScoreKind::Dot, vec![1.0, 2.0], vec![3.0, 4.0]).score(0, 0), 11.0);
        assert_eq!(pair(ScoreKind::NegL2, vec![1.0, 2.0], vec![3.0, 4.0]).score(0, 0), -8.0);
        assert_eq!(pair(ScoreKind::NegL2, vec![1.0, 2.0], vec![1.0, 2.0]).score(0, 0), 0.0);
    }

    #[test]
    fn score_list_order() {
        let m = FactorModel::init(3, 6, 4, ScoreKind::Dot, 9, 0.5);
        assert_eq!(m.score_list(1, &[4]), vec![m.score(1, 4)]);
        let fwd = m.score_list(2, &[0, 3, 5]);
        let rev = m.score_list(2, &[5, 3, 0]);
        assert_eq!(fwd, rev.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn zero_scale_init() {
        for kind in [ScoreKind::Dot, ScoreKind::NegL2] {
            let m = FactorModel::init(4, 5, 3, kind, 1, 0.0);
            assert!((0..4).all(|u| (0..5).all(|i| m.score(u, i) == 0.0)));
        }
    }

    #[test]
    fn init_is_seeded_and_projected() {
        let a = FactorModel::init(10, 20, 16, ScoreKind::Dot, 42, 10.0);
        let b = FactorModel::init(10, 20, 16, ScoreKind::Dot, 42, 10.0);
        assert_eq!(a, b);
        for u in 0..10 {
            assert!(l2_norm(a.user(u)) <= 1.0 + 1e-12);
        }
        for i in 0..20 {
            assert!(l2_norm(a.item(i)) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn projection_cases() {
        let mut v = vec![0.0, 2.0];
        project_unit_ball(&mut v);
        assert_eq!(v, vec![0.0, 1.0]);
        let mut v = vec![0.3, 0.4];
        project_unit_ball(&mut v);
        assert_eq!(v, vec![0.3, 0.4]);
        let mut v = vec![0.0; 3];
        project_unit_ball(&mut v);
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn covariance_zero_cases() {
        let same = FactorModel::from_factors(vec![0.2, 0.5, 0.2, 0.5], vec![0.2, 0.5], 2, ScoreKind::NegL2, 0);
        assert_eq!(covariance_loss(&same).value, 0.0);
        // one-hot rows in both directions: the coordinates are uncorrelated
        let onehot = FactorModel::from_factors(
            vec![1.0, 0.0, -1.0, 0.0],
            vec![0.0, 1.0, 0.0, -1.0],
            2,
            ScoreKind::NegL2,
            0,
        );
        assert!(covariance_loss(&onehot).value.abs() < 1e-15);
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = FactorModel::init(3, 4, 5, ScoreKind::NegL2, 77, 0.4);
        m.quantize_f32();
        let back = FactorModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_file_rejects_other_versions() {
        let mut bytes = FactorModel::init(1, 1, 2, ScoreKind::Dot, 0, 0.1).to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            FactorModel::from_bytes(&bytes),
            Err(Error::ModelVersion { found: 9, .. })
        ));
        assert!(FactorModel::from_bytes(b"nope").is_err());
    }
}
