//! Implicit-feedback interaction data: loading, reindexing, splitting and
//! persistence.
//!
//! Users and items are reindexed to dense `[0, M)` / `[0, N)` ranges in
//! first-seen order. The original tokens are kept in an [`IdMap`] shared by
//! every matrix derived from the same source, so splits of one dataset always
//! live in the same index space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// External identifiers for the dense user and item indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMap {
    pub fn numbered(num_users: usize, num_items: usize) -> Self {
        Self {
            users: (0..num_users).map(|u| format!("u{u}")).collect(),
            items: (0..num_items).map(|i| format!("i{i}")).collect(),
        }
    }
}

/// Sparse binary user-item matrix stored as sorted per-user item lists.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    rows: Vec<Vec<u32>>,
    num_items: usize,
    nnz: usize,
    ids: Arc<IdMap>,
}

impl PartialEq for InteractionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.num_items == other.num_items && self.rows == other.rows
    }
}

impl InteractionMatrix {
    /// Builds a matrix from raw per-user item lists; lists are sorted and
    /// deduplicated. Panics if an item id is out of range.
    pub fn from_rows(num_items: usize, mut rows: Vec<Vec<u32>>) -> Self {
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                assert!((last as usize) < num_items, "item id {last} out of range");
            }
        }
        let ids = Arc::new(IdMap::numbered(rows.len(), num_items));
        Self::with_ids(rows, num_items, ids)
    }

    fn with_ids(rows: Vec<Vec<u32>>, num_items: usize, ids: Arc<IdMap>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        Self {
            rows,
            num_items,
            nnz,
            ids,
        }
    }

    /// An empty matrix sharing this matrix's index space.
    pub fn empty_like(&self) -> Self {
        Self::with_ids(
            vec![Vec::new(); self.num_users()],
            self.num_items,
            Arc::clone(&self.ids),
        )
    }

    pub fn num_users(&self) -> usize {
        self.rows.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Total number of (user, item) interactions.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn ids(&self) -> &IdMap {
        &self.ids
    }

    /// Sorted positive items of `user`.
    pub fn items_of(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u, i)))
    }

    /// Users with no interactions. They stay in the index space but are never
    /// sampled during training.
    pub fn empty_users(&self) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&u| self.rows[u].is_empty())
            .collect()
    }

    /// Union of two matrices over the same index space.
    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.num_users(), other.num_users());
        assert_eq!(self.num_items, other.num_items);
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| merge_sorted(a, b))
            .collect();
        Self::with_ids(rows, self.num_items, Arc::clone(&self.ids))
    }

    /// Writes the canonical pair-list form: users in index order, items
    /// ascending within a user.
    pub fn to_pair_list(&self) -> String {
        let mut out = String::with_capacity(self.nnz * 12);
        for (u, i) in self.iter() {
            let _ = writeln!(out, "{}\t{}", self.ids.users[u], self.ids.items[i as usize]);
        }
        out
    }

    pub fn write_pair_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pair_list()).map_err(|e| Error::io(path, e))
    }
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => {
                out.push(a[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out.extend_from_slice(&a[x..]);
    out.extend_from_slice(&b[y..]);
    out
}

/// Input file layouts accepted by [`load_interactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// `user<TAB>item` per line, `#` starts a comment.
    PairList,
    /// JSON array of `{"id": .., "songs": [..]}` records.
    PlaylistJson,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair-list" | "pairs" | "tsv" => Ok(InputFormat::PairList),
            "playlist-json" | "json" => Ok(InputFormat::PlaylistJson),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

/// Assigns dense indices to tokens in first-seen order.
#[derive(Debug, Default)]
struct Vocabulary {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
    frozen: bool,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            index,
            tokens,
            frozen: true,
        }
    }

    fn get_or_insert(&mut self, token: &str) -> Option<u32> {
        if let Some(&id) = self.index.get(token) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.tokens.len() as u32;
        self.index.insert(token.to_owned(), id);
        self.tokens.push(token.to_owned());
        Some(id)
    }
}

struct Builder {
    users: Vocabulary,
    items: Vocabulary,
    rows: Vec<Vec<u32>>,
}

impl Builder {
    fn new() -> Self {
        Self {
            users: Vocabulary::default(),
            items: Vocabulary::default(),
            rows: Vec::new(),
        }
    }

    fn frozen(ids: &IdMap) -> Self {
        Self {
            users: Vocabulary::from_tokens(ids.users.clone()),
            items: Vocabulary::from_tokens(ids.items.clone()),
            rows: vec![Vec::new(); ids.users.len()],
        }
    }

    fn user(&mut self, token: &str) -> Option<usize> {
        let u = self.users.get_or_insert(token)? as usize;
        if u == self.rows.len() {
            self.rows.push(Vec::new());
        }
        Some(u)
    }

    fn finish(self) -> InteractionMatrix {
        let ids = Arc::new(IdMap {
            users: self.users.tokens,
            items: self.items.tokens,
        });
        let num_items = ids.items.len();
        let mut rows = self.rows;
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        InteractionMatrix::with_ids(rows, num_items, ids)
    }
}

/// Reads an interaction file and reindexes users and items.
pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<InteractionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let matrix = match format {
        InputFormat::PairList => parse_pair_list(&text, &label, Builder::new())?,
        InputFormat::PlaylistJson => convert_playlists(&parse_playlist_json(&text, &label)?),
    };
    if matrix.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(matrix)
}

/// Parses pair-list text into a fresh index space.
pub fn parse_pairs(text: &str, source: &str) -> Result<InteractionMatrix> {
    parse_pair_list(text, source, Builder::new())
}

/// Parses pair-list text into an existing index space. Unknown tokens are
/// reported as parse errors.
pub fn parse_pairs_with_ids(text: &str, source: &str, ids: &IdMap) -> Result<InteractionMatrix> {
    parse_pair_list(text, source, Builder::frozen(ids))
}

fn parse_pair_list(text: &str, source: &str, mut builder: Builder) -> Result<InteractionMatrix> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_owned(),
            line: lineno + 1,
            message,
        };
        let mut fields = line.split('\t');
        let (user, item) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), None) if !u.trim().is_empty() && !i.trim().is_empty() => {
                (u.trim(), i.trim())
            }
            _ => return Err(err(format!("expected `user<TAB>item`, got {line:?}"))),
        };
        let u = builder
            .user(user)
            .ok_or_else(|| err(format!("unknown user `{user}`")))?;
        let i = builder
            .items
            .get_or_insert(item)
            .ok_or_else(|| err(format!("unknown item `{item}`")))?;
        builder.rows[u].push(i);
    }
    Ok(builder.finish())
}

/// One playlist: its identifier and member songs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaylistRecord {
    pub id: String,
    pub songs: Vec<String>,
}

fn token(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a playlist-json document. Fields other than `id` and `songs` are
/// ignored.
pub fn parse_playlist_json(text: &str, source: &str) -> Result<Vec<PlaylistRecord>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: source.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let records = doc.as_array().ok_or_else(|| Error::Parse {
        path: source.to_owned(),
        line: 1,
        message: "expected a top-level array of playlists".into(),
    })?;
    records
        .iter()
        .enumerate()
        .map(|(index, rec)| {
            let err = |message: &str| Error::Record {
                path: source.to_owned(),
                index,
                message: message.to_owned(),
            };
            let id = rec
                .get("id")
                .and_then(token)
                .ok_or_else(|| err("missing or non-scalar `id`"))?;
            let songs = rec
                .get("songs")
                .and_then(Value::as_array)
                .ok_or_else(|| err("missing `songs` list"))?
                .iter()
                .map(|s| token(s).ok_or_else(|| err("song ids must be strings or numbers")))
                .collect::<Result<Vec<_>>>()?;
            Ok(PlaylistRecord { id, songs })
        })
        .collect()
}

/// Treats each playlist as a user and each member song as a positive item.
/// Empty playlists become users with no interactions; see
/// [`InteractionMatrix::empty_users`].
pub fn convert_playlists(records: &[PlaylistRecord]) -> InteractionMatrix {
    let mut builder = Builder::new();
    for rec in records {
        let u = builder.user(&rec.id).expect("vocabulary is open");
        for song in &rec.songs {
            let i = builder.items.get_or_insert(song).expect("vocabulary is open");
            builder.rows[u].push(i);
        }
    }
    builder.finish()
}

/// Fractions for a train/validation/test split plus the seed driving it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train,
            validation,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train, self.validation, self.test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {fractions:?}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// The three parts of a split, sharing one index space.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub test: InteractionMatrix,
}

/// Assigns every interaction independently to train, validation or test with
/// the requested probabilities.
pub fn split(matrix: &InteractionMatrix, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<Vec<u32>>; 3] = std::array::from_fn(|_| vec![Vec::new(); matrix.num_users()]);
    let train_cut = spec.train;
    let validation_cut = spec.train + spec.validation;
    for (u, i) in matrix.iter() {
        let draw: f64 = rng.random();
        let part = if draw < train_cut {
            0
        } else if draw < validation_cut {
            1
        } else {
            2
        };
        parts[part][u].push(i);
    }
    let [train, validation, test] = parts.map(|rows| {
        InteractionMatrix::with_ids(rows, matrix.num_items(), Arc::clone(&matrix.ids))
    });
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Users with at least `min_train` training interactions and at least one
/// held-out interaction.
pub fn eligible_users(
    train: &InteractionMatrix,
    holdout: &InteractionMatrix,
    min_train: usize,
) -> Vec<usize> {
    (0..train.num_users())
        .filter(|&u| train.items_of(u).len() >= min_train && !holdout.items_of(u).is_empty())
        .collect()
}

const MANIFEST: &str = "split.manifest";

impl Split {
    /// Persists the split as `train.tsv`, `validation.tsv`, `test.tsv`, the
    /// id lists `users.txt` / `items.txt` and a manifest.
    pub fn save(&self, dir: impl AsRef<Path>, spec: &SplitSpec) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.train.write_pair_list(dir.join("train.tsv"))?;
        self.validation.write_pair_list(dir.join("validation.tsv"))?;
        self.test.write_pair_list(dir.join("test.tsv"))?;
        let ids = self.train.ids();
        write_lines(&dir.join("users.txt"), &ids.users)?;
        write_lines(&dir.join("items.txt"), &ids.items)?;
        let manifest = format!(
            "seed = {}\ntrain_fraction = {}\nvalidation_fraction = {}\ntest_fraction = {}\n\
             num_users = {}\nnum_items = {}\ntrain_interactions = {}\n\
             validation_interactions = {}\ntest_interactions = {}\n",
            spec.seed,
            spec.train,
            spec.validation,
            spec.test,
            self.train.num_users(),
            self.train.num_items(),
            self.train.nnz(),
            self.validation.nnz(),
            self.test.nnz(),
        );
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads a split written by [`Split::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ids = load_ids(dir)?;
        let part = |name: &str| load_with_ids(dir.join(name), &ids);
        Ok(Split {
            train: part("train.tsv")?,
            validation: part("validation.tsv")?,
            test: part("test.tsv")?,
        })
    }
}

/// Reads the `users.txt` / `items.txt` pair of a persisted split.
pub fn load_ids(dir: impl AsRef<Path>) -> Result<IdMap> {
    let dir = dir.as_ref();
    Ok(IdMap {
        users: read_lines(&dir.join("users.txt"))?,
        items: read_lines(&dir.join("items.txt"))?,
    })
}

/// Loads a pair-list file into a fixed index space.
pub fn load_with_ids(path: impl AsRef<Path>, ids: &IdMap) -> Result<InteractionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs_with_ids(&text, &path.display().to_string(), ids)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Synthetic implicit feedback from a random low-rank preference model: each
/// user's `positives` highest-scoring items become its interactions.
pub fn synthetic_low_rank(
    num_users: usize,
    num_items: usize,
    rank: usize,
    positives: usize,
    seed: u64,
) -> InteractionMatrix {
    assert!(positives <= num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let users = draw(num_users * rank);
    let items = draw(num_items * rank);
    let rows = (0..num_users)
        .map(|u| {
            let a = &users[u * rank..(u + 1) * rank];
            let mut scored: Vec<(f64, u32)> = (0..num_items)
                .map(|i| {
                    let b = &items[i * rank..(i + 1) * rank];
                    (a.iter().zip(b).map(|(x, y)| x * y).sum(), i as u32)
                })
                .collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            scored.truncate(positives);
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    InteractionMatrix::from_rows(num_items, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_list_counts_users_items_and_interactions() {
        let m = parse_pairs("a\tx\na\ty\nb\tx\n", "mem").unwrap();
        assert_eq!((m.num_users(), m.num_items(), m.nnz()), (2, 2, 3));
        assert_eq!(m.ids().users, vec!["a", "b"]);
    }

    #[test]
    fn duplicate_pairs_collapse() {
        let m = parse_pairs("a\tx\na\tx\n# comment\n\nb\ty # trailing\n", "mem").unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.items_of(0), &[0]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_pairs("a\tx\nbroken\n", "f.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "# nothing\n").unwrap();
        assert!(matches!(
            load_interactions(&path, InputFormat::PairList),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn playlists_share_songs() {
        let json = r#"[{"id": "p1", "songs": [1, 2, 3], "tags": ["x"]},
                       {"id": "p2", "songs": [3, 4]}]"#;
        let m = convert_playlists(&parse_playlist_json(json, "mem").unwrap());
        assert_eq!((m.num_users(), m.num_items()), (2, 4));
    }

    #[test]
    fn playlist_membership_and_degenerate_cases() {
        let recs = vec![
            PlaylistRecord { id: "P1".into(), songs: vec!["s1".into(), "s2".into()] },
            PlaylistRecord { id: "P2".into(), songs: vec!["s2".into(), "s2".into()] },
            PlaylistRecord { id: "P3".into(), songs: vec![] },
        ];
        let m = convert_playlists(&recs);
        assert_eq!(m.items_of(0), &[0, 1]);
        assert_eq!(m.items_of(1), &[1]);
        assert_eq!(m.empty_users(), vec![2]);
    }

    #[test]
    fn playlist_without_songs_is_rejected() {
        let err = parse_playlist_json(r#"[{"id": 1, "songs": []}, {"id": 2}]"#, "f").unwrap_err();
        assert!(matches!(err, Error::Record { index: 1, .. }));
    }

    #[test]
    fn split_degenerate_fractions() {
        let m = synthetic_low_rank(20, 30, 4, 5, 1);
        let s = split(&m, &SplitSpec::new(1.0, 0.0, 0.0, 3).unwrap()).unwrap();
        assert_eq!(s.train, m);
        assert_eq!(s.validation.nnz() + s.test.nnz(), 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = synthetic_low_rank(100, 50, 4, 10, 7);
        assert_eq!(m.nnz(), 1000);
        let spec = SplitSpec::new(0.7, 0.1, 0.2, 11).unwrap();
        let a = split(&m, &spec).unwrap();
        let b = split(&m, &spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test.to_pair_list(), b.test.to_pair_list());
        for (got, want) in [(a.train.nnz(), 700.0), (a.validation.nnz(), 100.0), (a.test.nnz(), 200.0)] {
            assert!((got as f64 - want).abs() <= 0.05 * 1000.0, "{got} vs {want}");
        }
        let c = split(&m, &SplitSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_spec_rejects_bad_fractions() {
        assert!(SplitSpec::new(0.5, 0.5, 0.5, 0).is_err());
        assert!(SplitSpec::new(-0.1, 0.6, 0.5, 0).is_err());
    }

    #[test]
    fn eligibility_boundaries() {
        let train = InteractionMatrix::from_rows(
            20,
            vec![(0..4).collect(), (0..10).collect(), (0..5).collect()],
        );
        let test = InteractionMatrix::from_rows(20, vec![vec![15], vec![], vec![16]]);
        assert_eq!(eligible_users(&train, &test, 5), vec![2]);
    }

    #[test]
    fn persisted_split_round_trips() {
        let m = parse_pairs("a\tx\na\ty\nb\tx\nc\tz\nc\tx\n", "mem").unwrap();
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 5).unwrap();
        let s = split(&m, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path(), &spec).unwrap();
        let back = Split::load(dir.path()).unwrap();
        assert_eq!(back.train, s.train);
        assert_eq!(back.validation, s.validation);
        assert_eq!(back.test, s.test);
        assert_eq!(back.train.ids(), s.train.ids());
    }
}
