//! Experiment orchestration: the artificial-data over-fitting study, the toy
//! model curves and the MNIST classifier study.
//!
//! Every run is driven by an [`ExperimentConfig`] parsed from TOML. Output
//! files carry the base seed and a short config fingerprint on every row, and
//! identical configs produce byte-identical CSV files.
//!
//! Seeds form a tree rooted at `config.seed`: repetition `r` uses
//! `RngStream::new(seed).split(r)`, and each repetition splits again per
//! purpose (generator, data, initial weights, training noise). The trainee
//! initialization and training stream are shared by every `s` within a
//! repetition, so the levels are compared on common random numbers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io;
use crate::drbm::{drbm_gradient, DrbmParams, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{mean_and_standard_error, misclassification_rate, MetricsRecord};
use crate::plot::{line_chart_svg, Series};
use crate::rbm::{log_marginals_exact, RbmParams, SpinDataset};
use crate::sampler::{generate_dataset, RngStream, DEFAULT_BURN_IN, DEFAULT_THIN};
use crate::special::HiddenLevels;
use crate::toy::{alpha, solve_w_star, toy_log_likelihood, ToySpec};
use crate::trainer::{
    init_generative, init_trainee, run_epochs, train, OptimizerConfig, RbmShape, TrainConfig,
};

const GENERATOR_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const TEST_NOISE_STREAM: u64 = 4;

/// Length of the hex config fingerprint written into every CSV row.
pub const FINGERPRINT_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Artificial,
    Toy,
    Mnist,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Artificial => "artificial",
            ExperimentKind::Toy => "toy",
            ExperimentKind::Mnist => "mnist",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text {
            "artificial" => Ok(ExperimentKind::Artificial),
            "toy" => Ok(ExperimentKind::Toy),
            "mnist" => Ok(ExperimentKind::Mnist),
            other => Err(Error::InvalidConfig(format!(
                "unknown experiment kind {other:?} (expected artificial, toy or mnist)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtificialSettings {
    pub n_visible: usize,
    /// Hidden units of the generating model (binary).
    pub gen_hidden: usize,
    /// Extra hidden units `R` of the trained models, `|H| = gen_hidden + R`.
    pub extra_hidden: usize,
    pub n_points: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ArtificialSettings {
    fn default() -> Self {
        Self {
            n_visible: 8,
            gen_hidden: 4,
            extra_hidden: 0,
            n_points: 200,
            burn_in: DEFAULT_BURN_IN,
            thin: DEFAULT_THIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySettings {
    pub n_hidden: usize,
    /// Data correlations for which `w*` is tabulated.
    pub betas: Vec<f64>,
    /// Data correlation used for the log-likelihood curves.
    pub curve_beta: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub grid_points: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            n_hidden: 2,
            betas: vec![0.2, 0.4, 0.6, 0.8],
            curve_beta: 0.6,
            w_min: -3.0,
            w_max: 3.0,
            grid_points: 601,
        }
    }
}

impl ToySettings {
    /// Grid points `w_i`; a symmetric range gives exactly symmetric values and
    /// contains `w = 0` when `grid_points` is odd.
    pub fn grid(&self) -> Vec<f64> {
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points)
            .map(|i| {
                let i = i as f64;
                (self.w_min * (last - i) + self.w_max * i) / last
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSettings {
    /// Directory holding the four standard IDX files (optionally `.gz`).
    pub data_dir: PathBuf,
    pub n_train: usize,
    pub n_hidden: usize,
    pub n_classes: usize,
    /// Standard deviation of the test-time pixel noise, in raw pixel units.
    pub test_sigma: f64,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    /// Use only the first this many test images; 0 means all.
    pub test_limit: usize,
}

impl Default for MnistSettings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/mnist"),
            n_train: 1000,
            n_hidden: 200,
            n_classes: 10,
            test_sigma: 120.0,
            eval_every: 1,
            test_limit: 0,
        }
    }
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub repetitions: usize,
    pub levels: Vec<HiddenLevels>,
    pub output_dir: PathBuf,
    /// Also write SVG line charts next to the CSV files.
    pub plots: bool,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artificial: Option<ArtificialSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist: Option<MnistSettings>,
}

fn standard_levels() -> Vec<HiddenLevels> {
    [1, 2, 4]
        .iter()
        .map(|&s| HiddenLevels::finite(s).expect("positive"))
        .chain([HiddenLevels::Infinite])
        .collect()
}

impl ExperimentConfig {
    /// Defaults for each experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            kind,
            seed: 0,
            repetitions: 1,
            levels: standard_levels(),
            output_dir: PathBuf::from(format!("runs/{kind}")),
            plots: false,
            train: TrainConfig::default(),
            artificial: None,
            toy: None,
            mnist: None,
        };
        match kind {
            ExperimentKind::Artificial => {
                cfg.repetitions = 300;
                cfg.artificial = Some(ArtificialSettings::default());
            }
            ExperimentKind::Toy => cfg.toy = Some(ToySettings::default()),
            ExperimentKind::Mnist => {
                cfg.repetitions = 120;
                cfg.levels = vec![HiddenLevels::BINARY, HiddenLevels::Infinite];
                cfg.train = TrainConfig {
                    optimizer: OptimizerConfig::adamax(),
                    epochs: 100,
                    batch_size: 100,
                    ..TrainConfig::default()
                };
                cfg.mnist = Some(MnistSettings::default());
            }
        }
        cfg
    }

    /// Parses a TOML document. Missing keys take the defaults of the
    /// document's `kind`; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        let kind = match table.get("kind") {
            Some(toml::Value::String(k)) => k.parse()?,
            Some(_) => return Err(Error::InvalidConfig("`kind` must be a string".into())),
            None => return Err(Error::InvalidConfig("missing `kind`".into())),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge_tables(&mut merged, table);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.levels.is_empty() {
            return invalid("levels must not be empty".into());
        }
        let mut sorted = self.levels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return invalid("levels must not repeat".into());
        }
        for (name, present, expected) in [
            ("artificial", self.artificial.is_some(), ExperimentKind::Artificial),
            ("toy", self.toy.is_some(), ExperimentKind::Toy),
            ("mnist", self.mnist.is_some(), ExperimentKind::Mnist),
        ] {
            if present != (self.kind == expected) {
                return invalid(if present {
                    format!("section [{name}] does not apply to kind {}", self.kind)
                } else {
                    format!("kind {} requires a [{name}] section", self.kind)
                });
            }
        }
        match self.kind {
            ExperimentKind::Artificial => {
                let a = self.artificial.as_ref().expect("checked above");
                if self.repetitions == 0 {
                    return invalid("repetitions must be at least 1".into());
                }
                self.train.validate()?;
                if a.n_visible == 0 || a.gen_hidden == 0 || a.n_points == 0 || a.thin == 0 {
                    return invalid("n_visible, gen_hidden, n_points and thin must be at least 1".into());
                }
                if a.n_visible > crate::rbm::MAX_ENUMERATED_VISIBLE {
                    return Err(Error::Capacity {
                        n_visible: a.n_visible,
                        max: crate::rbm::MAX_ENUMERATED_VISIBLE,
                    });
                }
            }
            ExperimentKind::Toy => {
                let t = self.toy.as_ref().expect("checked above");
                if t.n_hidden == 0 {
                    return invalid("toy n_hidden must be at least 1".into());
                }
                for &beta in t.betas.iter().chain([&t.curve_beta]) {
                    if !(0.0..1.0).contains(&beta) {
                        return invalid(format!("beta must lie in [0, 1), got {beta}"));
                    }
                }
                if t.grid_points < 2 || !(t.w_min.is_finite() && t.w_max.is_finite() && t.w_min < t.w_max) {
                    return invalid("toy grid needs w_min < w_max (finite) and at least 2 points".into());
                }
            }
            ExperimentKind::Mnist => {
                let m = self.mnist.as_ref().expect("checked above");
                if self.repetitions == 0 {
                    return invalid("repetitions must be at least 1".into());
                }
                self.train.validate()?;
                if m.n_train == 0 || m.n_hidden == 0 || m.eval_every == 0 {
                    return invalid("n_train, n_hidden and eval_every must be at least 1".into());
                }
                if m.n_classes < 2 {
                    return invalid("n_classes must be at least 2".into());
                }
                if !(m.test_sigma >= 0.0 && m.test_sigma.is_finite()) {
                    return invalid(format!("test_sigma must be non-negative, got {}", m.test_sigma));
                }
            }
        }
        Ok(())
    }

    /// Hex digest of everything that affects results (the output location and
    /// the plotting switch are excluded).
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.plots = false;
        fingerprint_of(&canonical)
    }

    fn metadata_json(&self, extra: serde_json::Value) -> String {
        let mut meta = serde_json::json!({
            "config": self,
            "config_id": self.fingerprint(),
            "crate_version": env!("CARGO_PKG_VERSION"),
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (meta.as_object_mut(), extra) {
            obj.extend(more);
        }
        let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        text.push('\n');
        text
    }
}

/// Short hex SHA-256 digest of the canonical JSON form of `value`.
pub fn fingerprint_of<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes to JSON");
    let digest = Sha256::digest(json.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..FINGERPRINT_LEN].to_string()
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn metric_name(base: &str, levels: HiddenLevels) -> String {
    format!("{base}@s={levels}")
}

/// Runs `job` for every repetition in parallel and returns the results in
/// repetition order, or a report of every failure.
fn run_repetitions<T, F>(repetitions: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..repetitions).into_par_iter().map(&job).collect();
    let mut ok = Vec::with_capacity(repetitions);
    let mut failures = Vec::new();
    for (rep, result) in results.into_iter().enumerate() {
        match result {
            Ok(value) => ok.push(value),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::RepetitionsFailed {
            total: repetitions,
            failures,
        })
    }
}

/// Mean and standard error across repetitions of `curves[rep][t]`.
pub fn aggregate(curves: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let len = curves.first().map_or(0, Vec::len);
    (0..len)
        .map(|t| {
            let column: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            mean_and_standard_error(&column)
        })
        .collect()
}

/// Per-level, per-repetition curves of several metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub levels: Vec<HiddenLevels>,
    /// Epochs at which the curves were evaluated (0 = before training).
    pub epochs: Vec<usize>,
    pub metrics: Vec<String>,
    /// `values[metric][level][rep][epoch index]`.
    pub values: Vec<Vec<Vec<Vec<f64>>>>,
    pub seeds: Vec<u64>,
    pub config_id: String,
}

impl CurveSet {
    fn metric_index(&self, metric: &str) -> Result<usize> {
        self.metrics
            .iter()
            .position(|m| m == metric)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {metric:?}")))
    }

    fn level_index(&self, levels: HiddenLevels) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| l == levels)
            .ok_or_else(|| Error::InvalidConfig(format!("level s={levels} was not run")))
    }

    /// All repetitions' curves of `metric` at `levels`.
    pub fn runs(&self, metric: &str, levels: HiddenLevels) -> Result<&[Vec<f64>]> {
        Ok(&self.values[self.metric_index(metric)?][self.level_index(levels)?])
    }

    /// `(mean, standard error)` across repetitions at every evaluated epoch.
    pub fn summary(&self, metric: &str, levels: HiddenLevels) -> Result<Vec<(f64, f64)>> {
        Ok(aggregate(self.runs(metric, levels)?))
    }

    fn repetition_records(&self, rep: usize) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for (li, &levels) in self.levels.iter().enumerate() {
            for (mi, metric) in self.metrics.iter().enumerate() {
                let name = metric_name(metric, levels);
                for (ei, &epoch) in self.epochs.iter().enumerate() {
                    out.push(MetricsRecord {
                        epoch,
                        metric: name.clone(),
                        value: self.values[mi][li][rep][ei],
                        seed: self.seeds[rep],
                        config_id: self.config_id.clone(),
                    });
                }
            }
        }
        out
    }

    fn summary_records(&self, seed: u64) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for (li, &levels) in self.levels.iter().enumerate() {
            for (mi, metric) in self.metrics.iter().enumerate() {
                let name = metric_name(metric, levels);
                let stats = aggregate(&self.values[mi][li]);
                for (&epoch, &(mean, se)) in self.epochs.iter().zip(&stats) {
                    for (suffix, value) in [("mean", mean), ("se", se)] {
                        out.push(MetricsRecord {
                            epoch,
                            metric: format!("{name}:{suffix}"),
                            value,
                            seed,
                            config_id: self.config_id.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    fn write(&self, cfg: &ExperimentConfig, extra_meta: serde_json::Value) -> Result<()> {
        let dir = &cfg.output_dir;
        for rep in 0..self.seeds.len() {
            data_io::write_metrics_csv(dir.join("raw").join(format!("rep_{rep:04}.csv")), &self.repetition_records(rep))?;
        }
        data_io::write_metrics_csv(dir.join("summary.csv"), &self.summary_records(cfg.seed))?;
        data_io::write_text(dir.join("metadata.json"), &cfg.metadata_json(extra_meta))?;
        if cfg.plots {
            for metric in &self.metrics {
                let series = self
                    .levels
                    .iter()
                    .map(|&levels| {
                        let stats = self.summary(metric, levels)?;
                        let points = self.epochs.iter().zip(&stats).map(|(&e, &(m, _))| (e as f64, m)).collect();
                        let band = stats.iter().map(|&(_, se)| se).collect();
                        Ok(Series::new(format!("s={levels}"), points).with_band(band))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let svg = line_chart_svg(&format!("{} ({})", metric, cfg.kind), "epoch", metric, &series);
                data_io::write_text(dir.join(format!("{metric}.svg")), &svg)?;
            }
        }
        Ok(())
    }
}

/// Exact-enumeration scorer against a fixed generator and training set.
pub struct ArtificialScorer {
    gen_log_p: Vec<f64>,
    data_states: Vec<usize>,
    n_visible: usize,
}

impl ArtificialScorer {
    pub fn new(generator: &RbmParams, data: &SpinDataset) -> Result<Self> {
        let gen_log_p = log_marginals_exact(generator)?;
        let data_states = data
            .points()
            .rows()
            .into_iter()
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0.0)
                    .fold(0usize, |acc, (i, _)| acc | (1 << i))
            })
            .collect();
        Ok(Self {
            gen_log_p,
            data_states,
            n_visible: generator.n_visible(),
        })
    }

    /// `(KLD per visible unit, training log-likelihood per visible unit)`.
    pub fn score(&self, params: &RbmParams) -> Result<(f64, f64)> {
        crate::error::check_len("visible layer size", self.n_visible, params.n_visible())?;
        let q = log_marginals_exact(params)?;
        let nv = self.n_visible as f64;
        let kld: f64 = self.gen_log_p.iter().zip(&q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
        let ll: f64 = self.data_states.iter().map(|&i| q[i]).sum::<f64>() / self.data_states.len() as f64;
        Ok((kld / nv, ll / nv))
    }
}

pub const ARTIFICIAL_METRICS: [&str; 2] = ["kld", "loglik_per_v"];

/// One repetition of the artificial-data study: per level, the KLD and
/// log-likelihood curves over epochs `0..=epochs`.
pub fn artificial_repetition(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<[Vec<f64>; 2]>> {
    let a = cfg
        .artificial
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing [artificial] section".into()))?;
    let stream = RngStream::new(cfg.seed).split(rep as u64);
    let generator = init_generative(
        RbmShape {
            n_visible: a.n_visible,
            n_hidden: a.gen_hidden,
            levels: HiddenLevels::BINARY,
        },
        &mut stream.split(GENERATOR_STREAM),
    )?;
    let data = generate_dataset(&generator, a.n_points, a.burn_in, a.thin, &mut stream.split(DATA_STREAM))?;
    let scorer = ArtificialScorer::new(&generator, &data)?;
    let initial = init_trainee(
        RbmShape {
            n_visible: a.n_visible,
            n_hidden: a.gen_hidden + a.extra_hidden,
            levels: HiddenLevels::BINARY,
        },
        &mut stream.split(INIT_STREAM),
    )?;
    let train_cfg = TrainConfig {
        seed: stream.child_seed(TRAIN_STREAM),
        ..cfg.train.clone()
    };
    cfg.levels
        .iter()
        .map(|&levels| {
            let start = initial.with_levels(levels);
            let (k0, l0) = scorer.score(&start)?;
            let mut kld = vec![k0];
            let mut ll = vec![l0];
            train(start, &data, &train_cfg, |_, params| {
                let (k, l) = scorer.score(params)?;
                kld.push(k);
                ll.push(l);
                Ok(Vec::new())
            })?;
            Ok([kld, ll])
        })
        .collect()
}

pub fn run_artificial(cfg: &ExperimentConfig) -> Result<CurveSet> {
    if cfg.kind != ExperimentKind::Artificial {
        return Err(Error::InvalidConfig(format!("expected kind artificial, got {}", cfg.kind)));
    }
    cfg.validate()?;
    let reps = run_repetitions(cfg.repetitions, |rep| artificial_repetition(cfg, rep))?;
    let root = RngStream::new(cfg.seed);
    let mut values = vec![vec![Vec::with_capacity(reps.len()); cfg.levels.len()]; ARTIFICIAL_METRICS.len()];
    for rep in reps {
        for (li, curves) in rep.into_iter().enumerate() {
            for (mi, curve) in curves.into_iter().enumerate() {
                values[mi][li].push(curve);
            }
        }
    }
    let set = CurveSet {
        levels: cfg.levels.clone(),
        epochs: (0..=cfg.train.epochs).collect(),
        metrics: ARTIFICIAL_METRICS.iter().map(|m| m.to_string()).collect(),
        values,
        seeds: (0..cfg.repetitions).map(|r| root.child_seed(r as u64)).collect(),
        config_id: cfg.fingerprint(),
    };
    let xavier = serde_json::json!({
        "xavier": "uniform(-r, r), r = sqrt(6 / (n_visible + n_hidden)), generator and trainee",
        "generator_bias_sd": crate::trainer::GENERATOR_BIAS_SD,
    });
    set.write(cfg, serde_json::json!({ "initialization": xavier }))?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCurvePoint {
    pub levels: HiddenLevels,
    pub w: f64,
    pub alpha: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WStarRow {
    pub beta: f64,
    pub levels: HiddenLevels,
    pub w_star: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub curves: Vec<ToyCurvePoint>,
    pub w_star: Vec<WStarRow>,
    pub config_id: String,
}

pub const TOY_CURVES_HEADER: &str = "s,w,alpha,log_likelihood,seed,config_id";
pub const TOY_W_STAR_HEADER: &str = "beta,s,w_star,log_likelihood,seed,config_id";

/// `(w, alpha_s(w), l_s(w))` over the grid, for each level.
pub fn toy_curves(levels: &[HiddenLevels], settings: &ToySettings) -> Result<Vec<ToyCurvePoint>> {
    let grid = settings.grid();
    let mut out = Vec::with_capacity(levels.len() * grid.len());
    for &s in levels {
        let spec = ToySpec::new(s, settings.n_hidden, settings.curve_beta)?;
        for &w in &grid {
            out.push(ToyCurvePoint {
                levels: s,
                w,
                alpha: alpha(&spec, w)?,
                log_likelihood: toy_log_likelihood(&spec, w)?,
            });
        }
    }
    Ok(out)
}

pub fn toy_w_star_table(levels: &[HiddenLevels], settings: &ToySettings) -> Result<Vec<WStarRow>> {
    let mut out = Vec::new();
    for &beta in &settings.betas {
        for &s in levels {
            let spec = ToySpec::new(s, settings.n_hidden, beta)?;
            let w_star = solve_w_star(&spec)?;
            out.push(WStarRow {
                beta,
                levels: s,
                w_star,
                log_likelihood: toy_log_likelihood(&spec, w_star)?,
            });
        }
    }
    Ok(out)
}

pub fn toy_curves_csv(rows: &[ToyCurvePoint], seed: u64, config_id: &str) -> String {
    let mut out = format!("{TOY_CURVES_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{seed},{config_id}\n", r.levels, r.w, r.alpha, r.log_likelihood));
    }
    out
}

pub fn toy_w_star_csv(rows: &[WStarRow], seed: u64, config_id: &str) -> String {
    let mut out = format!("{TOY_W_STAR_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{seed},{config_id}\n", r.beta, r.levels, r.w_star, r.log_likelihood));
    }
    out
}

pub fn run_toy(cfg: &ExperimentConfig) -> Result<ToyReport> {
    if cfg.kind != ExperimentKind::Toy {
        return Err(Error::InvalidConfig(format!("expected kind toy, got {}", cfg.kind)));
    }
    cfg.validate()?;
    let settings = cfg.toy.as_ref().expect("validated");
    let config_id = cfg.fingerprint();
    let report = ToyReport {
        curves: toy_curves(&cfg.levels, settings)?,
        w_star: toy_w_star_table(&cfg.levels, settings)?,
        config_id: config_id.clone(),
    };
    let dir = &cfg.output_dir;
    data_io::write_text(dir.join("curves.csv"), &toy_curves_csv(&report.curves, cfg.seed, &config_id))?;
    data_io::write_text(dir.join("w_star.csv"), &toy_w_star_csv(&report.w_star, cfg.seed, &config_id))?;
    data_io::write_text(dir.join("metadata.json"), &cfg.metadata_json(serde_json::json!({})))?;
    if cfg.plots {
        for (file, title, pick) in [
            ("alpha.svg", "alpha_s(w)", 0usize),
            ("log_likelihood.svg", "l_s(w)", 1usize),
        ] {
            let series: Vec<Series> = cfg
                .levels
                .iter()
                .map(|&s| {
                    let points = report
                        .curves
                        .iter()
                        .filter(|p| p.levels == s)
                        .map(|p| (p.w, if pick == 0 { p.alpha } else { p.log_likelihood }))
                        .collect();
                    Series::new(format!("s={s}"), points)
                })
                .collect();
            data_io::write_text(dir.join(file), &line_chart_svg(title, "w", title, &series))?;
        }
    }
    Ok(report)
}

/// Raw MNIST arrays as stored on disk.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub train_images: Array2<u8>,
    pub train_labels: Vec<usize>,
    pub test_images: Array2<u8>,
    pub test_labels: Vec<usize>,
}

fn resolve_data_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::MissingFile(plain))
}

pub fn load_mnist(dir: impl AsRef<Path>) -> Result<MnistData> {
    let dir = dir.as_ref();
    let paths = MNIST_FILES
        .iter()
        .map(|name| resolve_data_file(dir, name))
        .collect::<Result<Vec<_>>>()?;
    let train_images = data_io::raw_images(&data_io::read_idx(&paths[0])?)?;
    let train_labels = data_io::labels(&data_io::read_idx(&paths[1])?)?;
    let test_images = data_io::raw_images(&data_io::read_idx(&paths[2])?)?;
    let test_labels = data_io::labels(&data_io::read_idx(&paths[3])?)?;
    for (images, labels, what) in [
        (&train_images, &train_labels, "training"),
        (&test_images, &test_labels, "test"),
    ] {
        if images.nrows() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{what} set has {} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
    }
    Ok(MnistData {
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

pub const MNIST_METRICS: [&str; 2] = ["train_error", "test_error"];

/// Evaluated epochs: 0, every `eval_every`-th, and always the last.
pub fn mnist_eval_epochs(epochs: usize, eval_every: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=epochs).step_by(eval_every).collect();
    if out.last() != Some(&epochs) {
        out.push(epochs);
    }
    out
}

fn labeled(images: &Array2<u8>, labels: Vec<usize>, n_classes: usize) -> Result<LabeledDataset> {
    LabeledDataset::new(data_io::normalize_images(images), labels, n_classes)
}

/// The first `n_train` training points after a seeded shuffle, scaled to `[0, 1]`.
pub fn mnist_training_subset<R: rand::Rng + ?Sized>(
    data: &MnistData,
    n_train: usize,
    n_classes: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if n_train == 0 || n_train > data.train_images.nrows() {
        return Err(Error::InvalidConfig(format!(
            "n_train = {n_train} must lie in 1..={} (available training images)",
            data.train_images.nrows()
        )));
    }
    let mut order: Vec<usize> = (0..data.train_images.nrows()).collect();
    order.shuffle(rng);
    order.truncate(n_train);
    labeled(
        &data.train_images.select(Axis(0), &order),
        order.iter().map(|&i| data.train_labels[i]).collect(),
        n_classes,
    )
}

/// The test set (first `limit` images, 0 = all) with Gaussian pixel noise
/// added before scaling to `[0, 1]`.
pub fn mnist_test_set<R: rand::Rng + ?Sized>(
    data: &MnistData,
    sigma: f64,
    limit: usize,
    n_classes: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let n_test = match limit {
        0 => data.test_images.nrows(),
        limit => limit.min(data.test_images.nrows()),
    };
    let raw = data.test_images.slice(ndarray::s![..n_test, ..]).to_owned();
    let corrupted = data_io::corrupt_gaussian(&raw, sigma, rng)?;
    labeled(&corrupted, data.test_labels[..n_test].to_vec(), n_classes)
}

/// One repetition of the MNIST study: per level, training and test error at
/// the evaluated epochs.
pub fn mnist_repetition(cfg: &ExperimentConfig, data: &MnistData, rep: usize) -> Result<Vec<[Vec<f64>; 2]>> {
    let m = cfg
        .mnist
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing [mnist] section".into()))?;
    let stream = RngStream::new(cfg.seed).split(rep as u64);
    let train_set = mnist_training_subset(data, m.n_train, m.n_classes, &mut stream.split(DATA_STREAM))?;
    let test_set = mnist_test_set(
        data,
        m.test_sigma,
        m.test_limit,
        m.n_classes,
        &mut stream.split(TEST_NOISE_STREAM),
    )?;

    let initial = DrbmParams::init_xavier(
        train_set.n_inputs(),
        m.n_hidden,
        m.n_classes,
        HiddenLevels::BINARY,
        &mut stream.split(INIT_STREAM),
    )?;
    let train_cfg = TrainConfig {
        seed: stream.child_seed(TRAIN_STREAM),
        ..cfg.train.clone()
    };
    let eval_epochs = mnist_eval_epochs(cfg.train.epochs, m.eval_every);
    cfg.levels
        .iter()
        .map(|&levels| {
            let start = initial.with_levels(levels);
            let mut train_err = vec![misclassification_rate(&start, &train_set)?];
            let mut test_err = vec![misclassification_rate(&start, &test_set)?];
            run_epochs(
                start,
                train_set.len(),
                &train_cfg,
                |params, indices, _| drbm_gradient(params, &train_set.select(indices)?),
                |epoch, params| {
                    if eval_epochs.binary_search(&epoch).is_ok() {
                        train_err.push(misclassification_rate(params, &train_set)?);
                        test_err.push(misclassification_rate(params, &test_set)?);
                    }
                    Ok(Vec::new())
                },
            )?;
            Ok([train_err, test_err])
        })
        .collect()
}

pub fn run_mnist(cfg: &ExperimentConfig) -> Result<CurveSet> {
    if cfg.kind != ExperimentKind::Mnist {
        return Err(Error::InvalidConfig(format!("expected kind mnist, got {}", cfg.kind)));
    }
    cfg.validate()?;
    let m = cfg.mnist.as_ref().expect("validated");
    let data = load_mnist(&m.data_dir)?;
    run_mnist_with_data(cfg, &data)
}

/// [`run_mnist`] on already-loaded data.
pub fn run_mnist_with_data(cfg: &ExperimentConfig, data: &MnistData) -> Result<CurveSet> {
    cfg.validate()?;
    let m = cfg.mnist.as_ref().expect("validated");
    let reps = run_repetitions(cfg.repetitions, |rep| mnist_repetition(cfg, data, rep))?;
    let root = RngStream::new(cfg.seed);
    let mut values = vec![vec![Vec::with_capacity(reps.len()); cfg.levels.len()]; MNIST_METRICS.len()];
    for rep in reps {
        for (li, curves) in rep.into_iter().enumerate() {
            for (mi, curve) in curves.into_iter().enumerate() {
                values[mi][li].push(curve);
            }
        }
    }
    let set = CurveSet {
        levels: cfg.levels.clone(),
        epochs: mnist_eval_epochs(cfg.train.epochs, m.eval_every),
        metrics: MNIST_METRICS.iter().map(|m| m.to_string()).collect(),
        values,
        seeds: (0..cfg.repetitions).map(|r| root.child_seed(r as u64)).collect(),
        config_id: cfg.fingerprint(),
    };
    let updates = cfg.train.updates_per_epoch(m.n_train);
    set.write(
        cfg,
        serde_json::json!({
            "updates_per_epoch": updates,
            "n_train_pool": data.train_images.nrows(),
            "n_test": data.test_images.nrows(),
            "initialization": {
                "input_couplings": "uniform(-r, r), r = sqrt(6 / (n_inputs + n_hidden))",
                "class_couplings": "uniform(-r, r), r = sqrt(6 / (n_hidden + n_classes))",
                "biases": 0.0,
            },
            "test_noise": "drawn once per repetition from that repetition's own stream",
        }),
    )?;
    Ok(set)
}

/// Dispatches on `cfg.kind`; returns the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    match cfg.kind {
        ExperimentKind::Artificial => run_artificial(cfg).map(|_| ()),
        ExperimentKind::Toy => run_toy(cfg).map(|_| ()),
        ExperimentKind::Mnist => run_mnist(cfg).map(|_| ()),
    }?;
    Ok(cfg.output_dir.clone())
}
