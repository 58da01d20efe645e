//! Flat key=value experiment configuration. Three layers of precedence:
//! built-in defaults (some depending on the dataset kind), then the config
//! file, then command-line overrides. The fully resolved map is written into
//! the run directory, so a run is reproducible from its snapshot alone.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use evimil_core::dirichlet::ConfidenceKind;
use evimil_core::error::{Error, Result};
use evimil_core::losses::{LossConfig, Strategy};
use evimil_core::milmodel::{Architecture, Pooling, ResidualForm};
use evimil_core::training::TrainConfig;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV_DATA_DIR: &str = "EVIMIL_DATA_DIR";

/// Every accepted key. Anything else in a file or override is rejected, so
/// typos fail loudly instead of silently keeping a default.
pub const KNOWN_KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.dir",
    "dataset.n_train",
    "dataset.n_val",
    "dataset.n_test",
    "dataset.mean_len",
    "dataset.sd_len",
    "dataset.positive_class",
    "dataset.train",
    "dataset.val",
    "dataset.test",
    "model.pooling",
    "model.encoder",
    "model.attention_dim",
    "model.residual_hidden",
    "model.residual_form",
    "loss.strategy",
    "loss.lambda1",
    "loss.lambda2_warmup_epochs",
    "loss.use_red",
    "loss.red_epsilon",
    "loss.freeze_psi",
    "train.lr",
    "train.lr_decay_factor",
    "train.lr_patience",
    "train.early_stop_patience",
    "train.max_epochs",
    "train.batch_bags",
    "train.grad_accum_steps",
    "train.weight_decay",
    "eval.conf_measure",
    "eval.ood_measure",
    "eval.sweep_measure",
    "eval.hist_measures",
    "eval.hist_bins",
    "eval.ood_name",
    "eval.ood_images",
    "eval.ood_labels",
    "eval.ratios",
    "run.seed",
    "run.out",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synth2d,
    MnistBags,
    Custom,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Option<DatasetKind> {
        match s {
            "synth2d" => Some(DatasetKind::Synth2d),
            "mnist-bags" => Some(DatasetKind::MnistBags),
            "custom" => Some(DatasetKind::Custom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Synth2d => "synth2d",
            DatasetKind::MnistBags => "mnist-bags",
            DatasetKind::Custom => "custom",
        }
    }
}

/// Kind-aware default for one key; `None` means the key has no default and
/// may stay empty.
fn default_for(key: &str, kind: DatasetKind) -> String {
    use DatasetKind::*;
    let per_kind = |synth: &str, mnist: &str| match kind {
        Synth2d | Custom => synth.to_string(),
        MnistBags => mnist.to_string(),
    };
    match key {
        "dataset.kind" => kind.name().into(),
        "dataset.dir" => env::var(ENV_DATA_DIR).unwrap_or_else(|_| "data".into()),
        "dataset.n_train" => per_kind("2000", "500"),
        "dataset.n_val" => per_kind("500", "100"),
        "dataset.n_test" => per_kind("0", "1000"),
        "dataset.mean_len" => "10".into(),
        "dataset.sd_len" => "2".into(),
        "dataset.positive_class" => per_kind("0", "9"),
        "dataset.train" | "dataset.val" | "dataset.test" => String::new(),
        "model.pooling" => "attention".into(),
        "model.encoder" => per_kind("128,128", "500,256"),
        "model.attention_dim" => "64".into(),
        "model.residual_hidden" => "64".into(),
        "model.residual_form" => "proportional".into(),
        "loss.strategy" => "weighted-evidence".into(),
        "loss.lambda1" => "0.01".into(),
        "loss.lambda2_warmup_epochs" => "10".into(),
        "loss.use_red" => "true".into(),
        "loss.red_epsilon" => "1e-8".into(),
        "loss.freeze_psi" => "false".into(),
        "train.lr" => per_kind("5e-5", "1e-4"),
        "train.lr_decay_factor" => "0.5".into(),
        "train.lr_patience" => "10".into(),
        "train.early_stop_patience" => "20".into(),
        "train.max_epochs" => "200".into(),
        "train.batch_bags" => "1".into(),
        "train.grad_accum_steps" => "8".into(),
        "train.weight_decay" => "1e-5".into(),
        "eval.conf_measure" => "max-alpha".into(),
        "eval.ood_measure" => "alpha0".into(),
        "eval.sweep_measure" => "neg-expected-entropy".into(),
        "eval.hist_measures" => "neg-expected-entropy".into(),
        "eval.hist_bins" => "30".into(),
        "eval.ood_name" => per_kind("far-field", "fmnist"),
        "eval.ood_images" => per_kind("", "fashion-images-idx3-ubyte"),
        "eval.ood_labels" => per_kind("", "fashion-labels-idx1-ubyte"),
        "eval.ratios" => "0,0.25,0.5,0.75,1".into(),
        "run.seed" => "1".into(),
        "run.out" => "runs/run".into(),
        _ => unreachable!("unknown key {key}"),
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub mean_len: f64,
    pub sd_len: f64,
    pub positive_class: u32,
    /// Cache base paths for kind = custom; empty otherwise.
    pub train: String,
    pub val: String,
    pub test: String,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub pooling: Pooling,
    pub encoder: Vec<usize>,
    pub attention_dim: usize,
    pub residual_hidden: usize,
    pub residual_form: ResidualForm,
}

#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_bags: usize,
    pub grad_accum_steps: usize,
    pub weight_decay: f64,
}

#[derive(Clone, Debug)]
pub struct EvalSpec {
    pub conf_measure: ConfidenceKind,
    pub ood_measure: ConfidenceKind,
    pub sweep_measure: ConfidenceKind,
    pub hist_measures: Vec<ConfidenceKind>,
    pub hist_bins: usize,
    /// "none" disables OOD evaluation.
    pub ood_name: String,
    pub ood_images: String,
    pub ood_labels: String,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub loss: LossConfig,
    pub train: TrainSpec,
    pub eval: EvalSpec,
    pub seed: u64,
    pub out: PathBuf,
    /// The fully resolved key=value map the typed fields were read from.
    pub resolved: BTreeMap<String, String>,
}

fn bad(key: &str, value: &str, wanted: &str) -> Error {
    Error::Config(format!("key {key}: cannot read '{value}' as {wanted}"))
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    map[key].parse().map_err(|_| bad(key, &map[key], "a number"))
}

fn get_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    map[key].parse().map_err(|_| bad(key, &map[key], "a nonnegative integer"))
}

fn get_u64(map: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    map[key].parse().map_err(|_| bad(key, &map[key], "a nonnegative integer"))
}

fn get_u32(map: &BTreeMap<String, String>, key: &str) -> Result<u32> {
    map[key].parse().map_err(|_| bad(key, &map[key], "a nonnegative integer"))
}

fn get_bool(map: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match map[key].as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(bad(key, v, "true or false")),
    }
}

fn get_measure(map: &BTreeMap<String, String>, key: &str) -> Result<ConfidenceKind> {
    ConfidenceKind::parse(&map[key]).ok_or_else(|| {
        bad(key, &map[key], "max-prob, max-alpha, alpha0 or neg-expected-entropy")
    })
}

fn get_list<T>(raw: &str, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|p| parse(p.trim()).ok_or_else(|| bad(key, raw, "a comma-separated list")))
        .collect()
}

/// Accepts the short strategy labels used in ablation tables next to the
/// descriptive names.
pub fn parse_strategy(s: &str) -> Option<Strategy> {
    match s {
        "s1" => Some(Strategy::Naive),
        "s2" => Some(Strategy::WeightedLoss),
        "s3" => Some(Strategy::WeightedEvidence),
        _ => Strategy::parse(s),
    }
}

impl ExperimentConfig {
    /// Merge defaults, an optional file, and overrides (in that order), then
    /// parse the result into typed sections.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut explicit = BTreeMap::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                insert_known(&mut explicit, key.trim(), value.trim())?;
            }
        }
        for (key, value) in overrides {
            insert_known(&mut explicit, key, value)?;
        }
        Self::from_explicit(explicit)
    }

    fn from_explicit(explicit: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        let kind = match explicit.get("dataset.kind") {
            Some(v) => DatasetKind::parse(v)
                .ok_or_else(|| bad("dataset.kind", v, "synth2d, mnist-bags or custom"))?,
            None => DatasetKind::Synth2d,
        };
        let mut map = BTreeMap::new();
        for &key in KNOWN_KEYS {
            let value = explicit
                .get(key)
                .cloned()
                .unwrap_or_else(|| default_for(key, kind));
            map.insert(key.to_string(), value);
        }
        Self::from_resolved(map)
    }

    fn from_resolved(map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        let kind = DatasetKind::parse(&map["dataset.kind"])
            .ok_or_else(|| bad("dataset.kind", &map["dataset.kind"], "a dataset kind"))?;
        let dataset = DatasetSpec {
            kind,
            dir: PathBuf::from(&map["dataset.dir"]),
            n_train: get_usize(&map, "dataset.n_train")?,
            n_val: get_usize(&map, "dataset.n_val")?,
            n_test: get_usize(&map, "dataset.n_test")?,
            mean_len: get_f64(&map, "dataset.mean_len")?,
            sd_len: get_f64(&map, "dataset.sd_len")?,
            positive_class: get_u32(&map, "dataset.positive_class")?,
            train: map["dataset.train"].clone(),
            val: map["dataset.val"].clone(),
            test: map["dataset.test"].clone(),
        };
        let model = ModelSpec {
            pooling: Pooling::parse(&map["model.pooling"])
                .ok_or_else(|| bad("model.pooling", &map["model.pooling"], "mean, max or attention"))?,
            encoder: get_list(&map["model.encoder"], "model.encoder", |p| p.parse().ok())?,
            attention_dim: get_usize(&map, "model.attention_dim")?,
            residual_hidden: get_usize(&map, "model.residual_hidden")?,
            residual_form: ResidualForm::parse(&map["model.residual_form"])
                .ok_or_else(|| bad("model.residual_form", &map["model.residual_form"], "proportional or additive"))?,
        };
        if model.encoder.is_empty() {
            return Err(Error::Config("model.encoder must list at least one layer width".into()));
        }
        let loss = LossConfig {
            lambda1: get_f64(&map, "loss.lambda1")?,
            lambda2_warmup_epochs: get_f64(&map, "loss.lambda2_warmup_epochs")?,
            strategy: parse_strategy(&map["loss.strategy"])
                .ok_or_else(|| bad("loss.strategy", &map["loss.strategy"], "naive, weighted-loss, weighted-evidence or s1/s2/s3"))?,
            use_red: get_bool(&map, "loss.use_red")?,
            red_epsilon: get_f64(&map, "loss.red_epsilon")?,
            freeze_psi_in_instance_loss: get_bool(&map, "loss.freeze_psi")?,
        };
        let train = TrainSpec {
            lr: get_f64(&map, "train.lr")?,
            lr_decay_factor: get_f64(&map, "train.lr_decay_factor")?,
            lr_patience: get_usize(&map, "train.lr_patience")?,
            early_stop_patience: get_usize(&map, "train.early_stop_patience")?,
            max_epochs: get_usize(&map, "train.max_epochs")?,
            batch_bags: get_usize(&map, "train.batch_bags")?,
            grad_accum_steps: get_usize(&map, "train.grad_accum_steps")?,
            weight_decay: get_f64(&map, "train.weight_decay")?,
        };
        let eval = EvalSpec {
            conf_measure: get_measure(&map, "eval.conf_measure")?,
            ood_measure: get_measure(&map, "eval.ood_measure")?,
            sweep_measure: get_measure(&map, "eval.sweep_measure")?,
            hist_measures: get_list(&map["eval.hist_measures"], "eval.hist_measures", ConfidenceKind::parse)?,
            hist_bins: get_usize(&map, "eval.hist_bins")?,
            ood_name: map["eval.ood_name"].clone(),
            ood_images: map["eval.ood_images"].clone(),
            ood_labels: map["eval.ood_labels"].clone(),
            ratios: get_list(&map["eval.ratios"], "eval.ratios", |p| {
                p.parse::<f64>().ok().filter(|r| (0.0..=1.0).contains(r))
            })?,
        };
        let seed = get_u64(&map, "run.seed")?;
        let out = PathBuf::from(&map["run.out"]);
        Ok(ExperimentConfig { dataset, model, loss, train, eval, seed, out, resolved: map })
    }

    /// Re-resolve with extra overrides on top of this config's snapshot.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut map = self.resolved.clone();
        for (key, value) in overrides {
            insert_known(&mut map, key, value)?;
        }
        Self::from_explicit(map)
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            encoder: self.model.encoder.clone(),
            attention_dim: self.model.attention_dim,
            residual_hidden: self.model.residual_hidden,
            num_classes: 2,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            lr_decay_factor: self.train.lr_decay_factor,
            lr_patience: self.train.lr_patience,
            early_stop_patience: self.train.early_stop_patience,
            max_epochs: self.train.max_epochs,
            batch_bags: self.train.batch_bags,
            grad_accum_steps: self.train.grad_accum_steps,
            weight_decay: self.train.weight_decay,
            seed,
            pooling: self.model.pooling,
            residual_form: self.model.residual_form,
            loss: self.loss.clone(),
        }
    }

    /// Seed of one named randomness stream, all derived from the root seed.
    pub fn stream_seed(&self, name: &str) -> u64 {
        stream_seed(self.seed, name)
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.resolved {
            out.push_str(key);
            out.push('=');
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot())?;
        Ok(())
    }

    /// Cache base path of one split.
    pub fn split_base(&self, split: &str) -> PathBuf {
        match self.dataset.kind {
            DatasetKind::Custom => {
                let raw = match split {
                    "train" => &self.dataset.train,
                    "val" => &self.dataset.val,
                    _ => &self.dataset.test,
                };
                PathBuf::from(raw)
            }
            kind => self
                .dataset
                .dir
                .join(format!("{}_{split}", kind.name().replace('-', "_"))),
        }
    }

    /// A data file referenced by the config: absolute paths pass through,
    /// relative ones live under the dataset directory.
    pub fn data_file(&self, raw: &str) -> PathBuf {
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            self.dataset.dir.join(p)
        }
    }
}

fn insert_known(map: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    if !KNOWN_KEYS.contains(&key) {
        return Err(Error::Config(format!("unknown key '{key}'")));
    }
    map.insert(key.to_string(), value.to_string());
    Ok(())
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// One root seed fans out into named independent streams, so data, model
/// init and training order can be varied separately.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(name));
    rng.next_u64()
}
