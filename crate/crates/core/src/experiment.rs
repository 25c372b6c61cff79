//! Experiment plumbing behind the command-line tool: configuration files,
//! repeated training runs, evaluation reports, loss/metric correlation and
//! per-group breakdowns.
//!
//! Every report is a pure function of its inputs, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interactions::{eligible_users, load_interactions, split, InputFormat, InteractionMatrix, Split, SplitSpec};
use crate::metrics::{evaluate_model, mean_std, per_user_metrics, EvalReport, Metric, MetricSpec, Scorer};
use crate::model::FactorModel;
use crate::trainer::{fit, HyperParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw interaction file to split.
    pub path: Option<PathBuf>,
    pub format: InputFormat,
    /// A persisted split to reuse instead of splitting `path`.
    pub split_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: InputFormat::PairList,
            split_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Repeated runs with seeds `train.seed .. train.seed + runs - 1`.
    pub runs: usize,
    pub metrics: Vec<MetricSpec>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            metrics: MetricSpec::defaults(),
            out: PathBuf::from("out"),
        }
    }
}

/// A whole experiment, read from a TOML file with `[data]`, `[split]`,
/// `[train]` and `[experiment]` sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitSpec,
    pub train: HyperParams,
    pub experiment: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split.validate()?;
        if self.experiment.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.experiment.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        match (&self.data.split_dir, &self.data.path) {
            (Some(dir), _) if dir.join("train.tsv").exists() => Ok(()),
            (Some(dir), None) => Err(Error::Config(format!(
                "split directory {} has no train.tsv",
                dir.display()
            ))),
            (_, Some(p)) if p.exists() => Ok(()),
            (_, Some(p)) => Err(Error::Config(format!("data file {} does not exist", p.display()))),
            (None, None) => Err(Error::Config("data.path or data.split_dir is required".into())),
        }
    }

    /// SHA-256 over the canonical JSON form (sorted keys) of everything
    /// except the output directory.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(run) = value.get_mut("experiment").and_then(|v| v.as_object_mut()) {
            run.remove("out");
        }
        let canonical = serde_json::to_string(&value).expect("config serialises");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Sets `section.key` (or a bare `key`, if exactly one section has it) to a
/// TOML literal; unparseable values are taken as strings.
fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let schema = serde_json::to_value(ExperimentConfig::default()).expect("config serialises");
    let sections = schema.as_object().expect("config is an object");
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s.to_owned(), f.to_owned()),
        None => {
            let owners: Vec<&String> = sections
                .iter()
                .filter(|(_, v)| v.get(key).is_some())
                .map(|(s, _)| s)
                .collect();
            match owners.as_slice() {
                [one] => ((*one).clone(), key.to_owned()),
                [] => return Err(Error::Config(format!("unknown setting `{key}`"))),
                _ => return Err(Error::Config(format!("ambiguous setting `{key}`, qualify it with a section"))),
            }
        }
    };
    let default = sections
        .get(&section)
        .and_then(|s| s.get(&field))
        .ok_or_else(|| Error::Config(format!("unknown setting `{key}`")))?;
    let mut value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    if let (toml::Value::Integer(i), true) = (&value, default.is_f64()) {
        value = toml::Value::Float(*i as f64);
    }
    if let (toml::Value::String(s), true) = (&value, default.is_array()) {
        let items = s.split(',').map(|p| toml::Value::String(p.trim().to_owned()));
        value = toml::Value::Array(items.collect());
    }
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{section}` must be a section")))?;
    sub.insert(field, value);
    Ok(())
}

/// Metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub values: Vec<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: std::result::Result<RunMetrics, String>,
}

/// Per-run test metrics and their mean/std over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub metrics: Vec<MetricSpec>,
    pub runs: Vec<RunOutcome>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RunReport {
    pub fn mean_of(&self, spec: MetricSpec) -> Option<f64> {
        self.metrics.iter().position(|s| *s == spec).map(|c| self.mean[c])
    }

    pub fn successful(&self) -> usize {
        self.runs.iter().filter(|r| r.result.is_ok()).count()
    }

    /// One row per run.
    pub fn runs_tsv(&self) -> String {
        let mut out = String::from("run\tseed\tstatus\tepochs\tbest_epoch");
        for s in &self.metrics {
            out.push_str(&format!("\t{s}"));
        }
        out.push('\n');
        for (r, run) in self.runs.iter().enumerate() {
            match &run.result {
                Ok(m) => {
                    out.push_str(&format!("{r}\t{}\tok\t{}\t{}", run.seed, m.epochs, m.best_epoch));
                    for v in &m.values {
                        out.push_str(&format!("\t{v:.10}"));
                    }
                }
                Err(e) => {
                    out.push_str(&format!("{r}\t{}\tfailed: {}\t\t", run.seed, e.replace(['\t', '\n'], " ")));
                    out.push_str(&"\t".repeat(self.metrics.len()));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Mean and std per metric.
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("metric\tmean\tstd\truns\n");
        for (c, s) in self.metrics.iter().enumerate() {
            out.push_str(&format!("{s}\t{:.10}\t{:.10}\t{}\n", self.mean[c], self.std[c], self.successful()));
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "fingerprint = {}\nruns = {} ({} ok)\n",
            self.fingerprint,
            self.runs.len(),
            self.successful()
        );
        for (c, s) in self.metrics.iter().enumerate() {
            out.push_str(&format!("{s} = {:.6} ± {:.6}\n", self.mean[c], self.std[c]));
        }
        out
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the persisted split or splits the raw data as configured.
pub fn prepare_split(config: &ExperimentConfig) -> Result<Split> {
    if let Some(dir) = &config.data.split_dir {
        if dir.join("train.tsv").exists() {
            return Split::load(dir);
        }
    }
    let path = config
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("data.path is required".into()))?;
    let data = load_interactions(path, config.data.format)?;
    split(&data, &config.split)
}

/// Test metrics of `model`, ranking only items outside train ∪ validation.
pub fn evaluate_split<S: Scorer + ?Sized>(
    model: &S,
    split: &Split,
    specs: &[MetricSpec],
    min_train: usize,
) -> Result<EvalReport> {
    check_shape(model, &split.train)?;
    let exclude = split.train.union(&split.validation);
    evaluate_model(model, &split.train, &exclude, &split.test, specs, min_train)
}

fn check_shape<S: Scorer + ?Sized>(model: &S, data: &InteractionMatrix) -> Result<()> {
    if model.num_users() != data.num_users() || model.num_items() != data.num_items() {
        return Err(Error::ModelFormat(format!(
            "model is {}x{} but the data is {}x{}",
            model.num_users(),
            model.num_items(),
            data.num_users(),
            data.num_items()
        )));
    }
    Ok(())
}

/// Validates, prepares the split and runs the experiment into
/// `config.experiment.out`.
pub fn run_experiment(config: &ExperimentConfig, log: impl FnMut(&str)) -> Result<RunReport> {
    config.validate()?;
    let split = prepare_split(config)?;
    run_on_split(config, &split, log)
}

/// Trains `runs` models on a fixed split. Writes the split, each run's
/// (f32-quantised) model and trace, and the aggregated report files.
pub fn run_on_split(config: &ExperimentConfig, split: &Split, mut log: impl FnMut(&str)) -> Result<RunReport> {
    config.train.validate()?;
    let out = &config.experiment.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    split.save(out.join("split"), &config.split)?;
    write(&out.join("config.toml"), &config.to_toml())?;

    let specs = &config.experiment.metrics;
    let mut runs = Vec::with_capacity(config.experiment.runs);
    for r in 0..config.experiment.runs {
        let hp = HyperParams {
            seed: config.train.seed + r as u64,
            ..config.train.clone()
        };
        let result = (|| -> Result<RunMetrics> {
            let fitted = fit(&split.train, &split.validation, &hp, |rec, _| {
                log(&format!(
                    "run {r} epoch {}: hinge {:.5} drm {:.5} recall {:.5}",
                    rec.epoch, rec.hinge_loss, rec.drm_loss, rec.validation.recall
                ))
            })?;
            let mut model = fitted.model;
            model.quantize_f32();
            model.save(out.join(format!("model_{r}.bin")))?;
            write(&out.join(format!("trace_{r}.tsv")), &fitted.trace.to_tsv())?;
            let report = evaluate_split(&model, split, specs, hp.min_train)?;
            Ok(RunMetrics {
                values: report.rows.iter().map(|row| row.mean).collect(),
                epochs: fitted.trace.records.len(),
                best_epoch: fitted.best_epoch,
            })
        })();
        if let Err(e) = &result {
            log(&format!("run {r} failed: {e}"));
        }
        runs.push(RunOutcome {
            seed: hp.seed,
            result: result.map_err(|e| e.to_string()),
        });
    }

    let ok: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let any_ok = !ok.is_empty();
    let (mean, std) = (0..specs.len())
        .map(|c| mean_std(&ok.iter().map(|m| m.values[c]).collect::<Vec<_>>()))
        .unzip();
    let report = RunReport {
        fingerprint: config.fingerprint(),
        metrics: specs.clone(),
        runs,
        mean,
        std,
    };
    write(&out.join("runs.tsv"), &report.runs_tsv())?;
    write(&out.join("report.tsv"), &report.summary_tsv())?;
    write(&out.join("report.txt"), &report.summary_text())?;
    if !any_ok {
        return Err(Error::AllRunsFailed(report.runs.len()));
    }
    Ok(report)
}

/// A parsed trace file: named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Trace(format!("{source}: empty trace")))?;
        let columns: Vec<String> = header.split('\t').map(str::to_owned).collect();
        let rows = lines
            .map(|(n, line)| {
                let row: Vec<f64> = line
                    .split('\t')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        path: source.to_owned(),
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                if row.len() != columns.len() {
                    return Err(Error::Parse {
                        path: source.to_owned(),
                        line: n + 1,
                        message: format!("expected {} fields, found {}", columns.len(), row.len()),
                    });
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn loss_columns(&self) -> Vec<&str> {
        self.columns.iter().filter(|c| c.contains("loss")).map(String::as_str).collect()
    }

    pub fn metric_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| !c.contains("loss") && c.as_str() != "epoch")
            .map(String::as_str)
            .collect()
    }
}

/// Pearson correlation; `None` when either side is constant or non-finite.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) || constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub trace: String,
    pub loss: String,
    pub values: Vec<Option<f64>>,
}

/// Loss × metric correlation matrix, one block per trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub metrics: Vec<String>,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    pub fn get(&self, trace: &str, loss: &str, metric: &str) -> Option<f64> {
        let c = self.metrics.iter().position(|m| m == metric)?;
        self.rows
            .iter()
            .find(|r| r.trace == trace && r.loss == loss)
            .and_then(|r| r.values[c])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("trace\tloss");
        for m in &self.metrics {
            out.push_str(&format!("\t{m}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{}\t{}", row.trace, row.loss));
            for v in &row.values {
                match v {
                    Some(r) => out.push_str(&format!("\t{r:.6}")),
                    None => out.push_str("\tundefined"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Number of leading epochs left out of correlations.
pub const CORRELATION_SKIP: usize = 2;

/// Correlates every loss column with every metric column (or only `metric`)
/// over the epochs after the first `skip`.
pub fn correlate(traces: &[(String, TraceTable)], metric: Option<&str>, skip: usize) -> Result<CorrelationReport> {
    let (_, first) = traces
        .first()
        .ok_or_else(|| Error::Trace("no trace files given".into()))?;
    let metrics: Vec<String> = match metric {
        Some(m) if first.columns.iter().any(|c| c == m) => vec![m.to_owned()],
        Some(m) => return Err(Error::Trace(format!("no column `{m}` in trace"))),
        None => first.metric_columns().into_iter().map(str::to_owned).collect(),
    };
    let mut rows = Vec::new();
    for (name, table) in traces {
        if table.columns != first.columns {
            return Err(Error::Trace(format!("{name}: column schema differs from {}", traces[0].0)));
        }
        if table.rows.len() < skip + 3 {
            return Err(Error::Trace(format!(
                "{name}: {} epochs, need at least {} after skipping {skip}",
                table.rows.len(),
                3
            )));
        }
        for loss in table.loss_columns() {
            let x = &table.column(loss).expect("listed column")[skip..];
            let values = metrics
                .iter()
                .map(|m| pearson(x, &table.column(m).expect("checked column")[skip..]))
                .collect();
            rows.push(CorrelationRow {
                trace: name.clone(),
                loss: loss.to_owned(),
                values,
            });
        }
    }
    Ok(CorrelationReport { metrics, rows })
}

/// One bucket of users by training-interaction count.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub lower: usize,
    /// Exclusive upper edge; `None` for the last bucket.
    pub upper: Option<usize>,
    pub users: usize,
    /// Mean NDCG@10; `None` for an empty bucket.
    pub ndcg10: Option<f64>,
}

impl GroupRow {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("{}-{}", self.lower, u - 1),
            None => format!("{}+", self.lower),
        }
    }
}

pub fn group_report_tsv(rows: &[GroupRow]) -> String {
    let mut out = String::from("group\tusers\tNDCG@10\n");
    for r in rows {
        let metric = r.ndcg10.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\n", r.label(), r.users, metric));
    }
    out
}

/// Buckets eligible test users by their training-interaction count.
/// `boundaries` are strictly increasing lower edges; users below the first
/// edge get a leading bucket only when there are any.
pub fn group_report<S: Scorer + ?Sized>(
    model: &S,
    split: &Split,
    boundaries: &[usize],
    min_train: usize,
) -> Result<Vec<GroupRow>> {
    if boundaries.is_empty() || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("group boundaries must be non-empty and strictly increasing".into()));
    }
    check_shape(model, &split.train)?;
    let exclude = split.train.union(&split.validation);
    let users = eligible_users(&split.train, &split.test, min_train);
    let spec = [MetricSpec::new(Metric::Ndcg, 10)];
    let values = per_user_metrics(model, &exclude, &split.test, &users, &spec);

    let mut edges = boundaries.to_vec();
    let below = users.iter().any(|&u| split.train.items_of(u).len() < boundaries[0]);
    if below {
        edges.insert(0, 0);
    }
    let mut rows: Vec<GroupRow> = edges
        .iter()
        .enumerate()
        .map(|(g, &lower)| GroupRow {
            lower,
            upper: edges.get(g + 1).copied(),
            users: 0,
            ndcg10: None,
        })
        .collect();
    let mut sums = vec![0.0; rows.len()];
    for (&u, v) in users.iter().zip(&values) {
        let count = split.train.items_of(u).len();
        let g = edges.partition_point(|&e| e <= count) - 1;
        rows[g].users += 1;
        sums[g] += v[0];
    }
    for (row, s) in rows.iter_mut().zip(sums) {
        if row.users > 0 {
            row.ndcg10 = Some(s / row.users as f64);
        }
    }
    Ok(rows)
}

/// Reads a model file and checks it against the split's shape.
pub fn load_model_for(path: impl AsRef<Path>, split: &Split) -> Result<FactorModel> {
    let model = FactorModel::load(path)?;
    check_shape(&model, &split.train)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_their_section() {
        let cfg = ExperimentConfig::from_toml(
            "[train]\ntau = 0.5\n",
            &[
                ("lambda".into(), "0".into()),
                ("train.score_kind".into(), "neg-l2".into()),
                ("runs".into(), "2".into()),
                ("metrics".into(), "NDCG@10,Recall@20".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.tau, 0.5);
        assert_eq!(cfg.train.lambda, 0.0);
        assert_eq!(cfg.train.score_kind, crate::model::ScoreKind::NegL2);
        assert_eq!(cfg.experiment.runs, 2);
        assert_eq!(cfg.experiment.metrics[1].to_string(), "Recall@20");
    }

    #[test]
    fn ambiguous_and_unknown_keys() {
        assert!(ExperimentConfig::from_toml("", &[("seed".into(), "1".into())]).is_err());
        assert!(ExperimentConfig::from_toml("", &[("nope".into(), "1".into())]).is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbogus = 1\n", &[]).is_err());
    }

    #[test]
    fn fingerprint_ignores_key_order_and_output() {
        let a = ExperimentConfig::from_toml("[train]\ntau = 0.5\nlambda = 2.0\n[experiment]\nout = \"x\"\n", &[]).unwrap();
        let b = ExperimentConfig::from_toml("[experiment]\nout = \"y\"\n[train]\nlambda = 2.0\ntau = 0.5\n", &[]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ExperimentConfig::from_toml("[train]\ntau = 0.25\n", &[]).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn zero_temperature_rejected_before_compute() {
        let cfg = ExperimentConfig::from_toml("[train]\ntau = 0.0\n[data]\npath = \"/nonexistent\"\n", &[]).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Temperature { .. })));
    }

    #[test]
    fn affine_trends_correlate_perfectly() {
        let x: Vec<f64> = (0..10).map(|e| 5.0 - 0.3 * e as f64).collect();
        let y: Vec<f64> = (0..10).map(|e| 0.1 + 0.02 * e as f64).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[0.4; 10]), None);
    }

    #[test]
    fn correlate_skips_and_flags_constant_columns() {
        let text = "epoch\thinge_loss_mean\tdrm_loss_mean\tcov_loss\trecall@50_val\tndcg@10_val\n\
                    1\t9\t9\t0\t0.9\t0.0\n2\t9\t9\t0\t0.0\t0.9\n\
                    3\t3\t1.0\t0\t0.1\t0.1\n4\t2\t0.8\t0\t0.2\t0.2\n5\t1\t0.6\t0\t0.3\t0.3\n";
        let t = TraceTable::parse(text, "t").unwrap();
        let rep = correlate(&[("t".into(), t)], None, CORRELATION_SKIP).unwrap();
        assert!((rep.get("t", "drm_loss_mean", "ndcg@10_val").unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rep.get("t", "cov_loss", "ndcg@10_val"), None);
        assert!(rep.to_tsv().contains("undefined"));
    }

    #[test]
    fn correlate_needs_three_epochs() {
        let text = "epoch\tdrm_loss_mean\tndcg@10_val\n1\t1\t0\n2\t1\t0\n3\t1\t0\n4\t1\t0\n";
        let t = TraceTable::parse(text, "t").unwrap();
        assert!(correlate(&[("t".into(), t)], None, 2).is_err());
    }
}
