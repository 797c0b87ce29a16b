//! Experiment configuration in a flat `key = value` text format.
//!
//! `#` starts a comment. Keys are case-sensitive, unknown keys are errors,
//! and a key may appear only once. [`KEYS`] lists every key with its default.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::ConfigError;
use crate::model::{Architecture, ModelKind};
use crate::privacy;
use crate::sampler::{CrsScaling, SamplerConfig, SamplerKind};

/// Every accepted key, its default (`None` = required or optional without
/// default) and a one-line description.
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("seed", None, "experiment seed (required)"),
    ("rounds", None, "training rounds R (required)"),
    ("clients", None, "number of clients m (required)"),
    ("dataset", None, "synthetic | idx (required)"),
    ("model", None, "logreg | mlp (required)"),
    ("sampler", None, "identity | crs | minmax | gspar | topk | poisson (required)"),
    ("samples", Some("4000"), "synthetic training samples"),
    ("test_samples", Some("1000"), "synthetic held-out samples"),
    ("features", Some("16"), "synthetic feature count"),
    ("classes", Some("4"), "synthetic class count"),
    ("class_sep", Some("1.0"), "synthetic class-mean scale"),
    ("idx_images", None, "IDX training images (dataset = idx)"),
    ("idx_labels", None, "IDX training labels (dataset = idx)"),
    ("idx_test_images", None, "IDX test images (dataset = idx)"),
    ("idx_test_labels", None, "IDX test labels (dataset = idx)"),
    ("partition", Some("shards"), "shards | dirichlet"),
    ("shards_per_client", Some("2"), "label-sorted shards per client"),
    ("dirichlet_beta", Some("0.5"), "Dirichlet concentration"),
    ("min_client_samples", Some("2"), "minimum samples per client (dirichlet)"),
    ("hidden", Some("32"), "MLP hidden width"),
    ("k", None, "absolute sampling size K"),
    ("sampling_ratio", None, "K as a fraction of d, K = ceil(ratio * d)"),
    ("p", None, "sampling probability (crs default 1 - e^-epsilon, poisson default K/d)"),
    ("epsilon", None, "privacy budget (required for crs)"),
    ("feedback", Some("true"), "Top-K error accumulation"),
    ("crs_scaling", Some("conditional"), "conditional | fixed"),
    ("laplace_scale", None, "Laplace noise scale added to client updates"),
    ("lr", Some("0.01"), "learning rate"),
    ("lr_decay", Some("0"), "inverse-time decay: lr_r = lr / (1 + decay * r)"),
    ("local_batch", Some("32"), "local mini-batch size, 0 = full shard"),
    ("local_epochs", Some("1"), "local epochs per round"),
    ("eval_every", Some("10"), "evaluation cadence in rounds (last round always evaluated)"),
    ("update_rule", Some("delta"), "delta | plain"),
    ("broadcast", Some("dense"), "dense | compact"),
    ("output", None, "CSV output path"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        samples: usize,
        test_samples: usize,
        features: usize,
        classes: usize,
        class_sep: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSpec {
    Shards { per_client: usize },
    Dirichlet { beta: f64, min_samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Absolute(usize),
    Ratio(f64),
}

impl SampleSize {
    pub fn resolve(self, dim: usize) -> usize {
        match self {
            SampleSize::Absolute(k) => k,
            // The slack keeps e.g. 0.07 · 100 = 7.000000000000001 at 7.
            SampleSize::Ratio(r) => (((r * dim as f64) - 1e-9).ceil() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub size: Option<SampleSize>,
    pub p: Option<f64>,
    pub epsilon: Option<f64>,
    pub feedback: bool,
    pub crs_scaling: CrsScaling,
}

impl SamplerSpec {
    pub fn identity() -> Self {
        Self {
            kind: SamplerKind::Identity,
            size: None,
            p: None,
            epsilon: None,
            feedback: true,
            crs_scaling: CrsScaling::Conditional,
        }
    }

    /// Concrete sampler settings once the model dimension is known.
    pub fn resolve(&self, dim: usize) -> Result<SamplerConfig, ConfigError> {
        let k = match (self.kind, self.size) {
            (SamplerKind::Identity, _) => dim,
            (_, Some(s)) => s.resolve(dim),
            (SamplerKind::Poisson, None) => 0,
            (_, None) => return Err(ConfigError::MissingKey("k")),
        };
        let p = match (self.kind, self.p) {
            (_, Some(p)) => p,
            (SamplerKind::Crs, None) => {
                let eps = self.epsilon.ok_or(ConfigError::MissingKey("epsilon"))?;
                privacy::max_sampling_probability(eps).map_err(|e| ConfigError::Invalid {
                    key: "epsilon",
                    reason: e.to_string(),
                })?
            }
            (SamplerKind::Poisson, None) if k > 0 => k as f64 / dim as f64,
            (SamplerKind::Poisson, None) => return Err(ConfigError::MissingKey("p")),
            (_, None) => 1.0,
        };
        Ok(SamplerConfig {
            kind: self.kind,
            k,
            p,
            feedback: self.feedback,
            epsilon: self.epsilon,
            crs_scaling: self.crs_scaling,
        })
    }
}

/// How clients turn gradients into uploads and how the server applies them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Clients upload the change in their local gradient; client and server
    /// both accumulate the averaged changes into a global gradient estimate.
    #[default]
    Delta,
    /// Clients upload compressed raw gradients; the server steps on their mean.
    Plain,
}

impl FromStr for UpdateRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delta" => Ok(UpdateRule::Delta),
            "plain" => Ok(UpdateRule::Plain),
            other => Err(format!("unknown update rule `{other}`")),
        }
    }
}

/// Download accounting for rounds after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Broadcast {
    /// Every round costs a dense `4·d` broadcast.
    #[default]
    Dense,
    /// The aggregated update is sent in whichever of the dense or `CRS1`
    /// sparse encodings is smaller. The first round is always dense.
    Compact,
}

impl FromStr for Broadcast {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(Broadcast::Dense),
            "compact" => Ok(Broadcast::Compact),
            other => Err(format!("unknown broadcast mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub clients: usize,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    pub model: ModelKind,
    pub hidden: usize,
    pub sampler: SamplerSpec,
    pub laplace_scale: Option<f64>,
    pub lr: f64,
    pub lr_decay: f64,
    pub local_batch: usize,
    pub local_epochs: usize,
    pub eval_every: usize,
    pub update_rule: UpdateRule,
    pub broadcast: Broadcast,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Synthetic-data defaults for the given core settings.
    pub fn synthetic(seed: u64, rounds: usize, clients: usize, model: ModelKind, sampler: SamplerSpec) -> Self {
        let text = format!(
            "seed = {seed}\nrounds = {rounds}\nclients = {clients}\ndataset = synthetic\nmodel = {model}\nsampler = identity\n"
        );
        let mut cfg = Self::parse_str(&text).expect("built-in defaults parse");
        cfg.sampler = sampler;
        cfg
    }

    pub fn architecture(&self, features: usize, classes: usize) -> Architecture {
        match self.model {
            ModelKind::LogReg => Architecture::logreg(features, classes),
            ModelKind::Mlp => Architecture::mlp(features, self.hidden, classes),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;
        raw.build()
    }

    /// Serialize every key, so that `parse_str(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv("seed", self.seed.to_string());
        kv("rounds", self.rounds.to_string());
        kv("clients", self.clients.to_string());
        match &self.dataset {
            DatasetSpec::Synthetic {
                samples,
                test_samples,
                features,
                classes,
                class_sep,
            } => {
                kv("dataset", "synthetic".into());
                kv("samples", samples.to_string());
                kv("test_samples", test_samples.to_string());
                kv("features", features.to_string());
                kv("classes", classes.to_string());
                kv("class_sep", class_sep.to_string());
            }
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                kv("dataset", "idx".into());
                kv("idx_images", images.display().to_string());
                kv("idx_labels", labels.display().to_string());
                kv("idx_test_images", test_images.display().to_string());
                kv("idx_test_labels", test_labels.display().to_string());
            }
        }
        match &self.partition {
            PartitionSpec::Shards { per_client } => {
                kv("partition", "shards".into());
                kv("shards_per_client", per_client.to_string());
            }
            PartitionSpec::Dirichlet { beta, min_samples } => {
                kv("partition", "dirichlet".into());
                kv("dirichlet_beta", beta.to_string());
                kv("min_client_samples", min_samples.to_string());
            }
        }
        kv("model", self.model.to_string());
        kv("hidden", self.hidden.to_string());
        kv("sampler", self.sampler.kind.to_string());
        match self.sampler.size {
            Some(SampleSize::Absolute(k)) => kv("k", k.to_string()),
            Some(SampleSize::Ratio(r)) => kv("sampling_ratio", r.to_string()),
            None => {}
        }
        if let Some(p) = self.sampler.p {
            kv("p", p.to_string());
        }
        if let Some(e) = self.sampler.epsilon {
            kv("epsilon", e.to_string());
        }
        kv("feedback", self.sampler.feedback.to_string());
        kv(
            "crs_scaling",
            match self.sampler.crs_scaling {
                CrsScaling::Conditional => "conditional",
                CrsScaling::FixedProbability => "fixed",
            }
            .into(),
        );
        if let Some(l) = self.laplace_scale {
            kv("laplace_scale", l.to_string());
        }
        kv("lr", self.lr.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("local_batch", self.local_batch.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv(
            "update_rule",
            match self.update_rule {
                UpdateRule::Delta => "delta",
                UpdateRule::Plain => "plain",
            }
            .into(),
        );
        kv(
            "broadcast",
            match self.broadcast {
                Broadcast::Dense => "dense",
                Broadcast::Compact => "compact",
            }
            .into(),
        );
        if let Some(o) = &self.output {
            kv("output", o.display().to_string());
        }
        s
    }

    /// Set one key from text, as if it had been written in the file.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(&self.to_text())?;
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(ConfigError::UnknownKey {
                line: 0,
                key: key.to_string(),
            });
        }
        // `k` and `sampling_ratio` are alternatives.
        if key == "k" {
            raw.values.remove("sampling_ratio");
        } else if key == "sampling_ratio" {
            raw.values.remove("k");
        }
        raw.values.insert(key.to_string(), (0, value.to_string()));
        raw.build()
    }
}

/// Help text listing every key and default.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (`key = value`, `#` comments):\n");
    for (k, d, doc) in KEYS {
        match d {
            Some(d) => writeln!(s, "  {k:<20} {doc} [default: {d}]").unwrap(),
            None => writeln!(s, "  {k:<20} {doc}").unwrap(),
        }
    }
    s
}

struct RawConfig {
    values: HashMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let content = line.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line: line_no });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if !KEYS.iter().any(|(key, _, _)| *key == k) {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: k.to_string(),
                });
            }
            if values.insert(k.to_string(), (line_no, v.to_string())).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &'static str) -> Option<(usize, &str)> {
        if let Some((line, v)) = self.values.get(key) {
            return Some((*line, v.as_str()));
        }
        KEYS.iter()
            .find(|(k, _, _)| *k == key)
            .and_then(|(_, d, _)| d.map(|d| (0, d)))
    }

    fn get<T: FromStr>(&self, key: &'static str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| ConfigError::TypeMismatch {
                line,
                key: key.to_string(),
                value: v.to_string(),
                expected,
            }),
        }
    }

    fn req<T: FromStr>(&self, key: &'static str, expected: &'static str) -> Result<T, ConfigError> {
        self.get(key, expected)?.ok_or(ConfigError::MissingKey(key))
    }

    fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let positive_usize = |key: &'static str| -> Result<usize, ConfigError> {
            let v: usize = self.req(key, "positive integer")?;
            if v == 0 {
                return Err(ConfigError::Invalid {
                    key,
                    reason: "must be positive".into(),
                });
            }
            Ok(v)
        };
        let positive_f64 = |key: &'static str, v: f64| -> Result<f64, ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(ConfigError::Invalid {
                    key,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };

        let seed: u64 = self.req("seed", "unsigned 64-bit integer")?;
        let rounds: usize = self.req("rounds", "non-negative integer")?;
        let clients = positive_usize("clients")?;

        let dataset_kind: String = self.req("dataset", "dataset name")?;
        let dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetSpec::Synthetic {
                samples: positive_usize("samples")?,
                test_samples: positive_usize("test_samples")?,
                features: positive_usize("features")?,
                classes: positive_usize("classes")?,
                class_sep: self.req("class_sep", "real number")?,
            },
            "idx" => DatasetSpec::Idx {
                images: self.req("idx_images", "path")?,
                labels: self.req("idx_labels", "path")?,
                test_images: self.req("idx_test_images", "path")?,
                test_labels: self.req("idx_test_labels", "path")?,
            },
            _ => {
                return Err(self.mismatch("dataset", "synthetic | idx"));
            }
        };

        let partition_kind: String = self.req("partition", "partition name")?;
        let partition = match partition_kind.as_str() {
            "shards" => PartitionSpec::Shards {
                per_client: positive_usize("shards_per_client")?,
            },
            "dirichlet" => PartitionSpec::Dirichlet {
                beta: positive_f64("dirichlet_beta", self.req("dirichlet_beta", "real number")?)?,
                min_samples: self.req("min_client_samples", "non-negative integer")?,
            },
            _ => return Err(self.mismatch("partition", "shards | dirichlet")),
        };

        let model: ModelKind = self.req("model", "logreg | mlp")?;
        let hidden = positive_usize("hidden")?;

        let kind: SamplerKind = self.req("sampler", "sampler name")?;
        let k: Option<usize> = self.get("k", "positive integer")?;
        let ratio: Option<f64> = self.get("sampling_ratio", "real number")?;
        let size = match (k, ratio) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid {
                    key: "k",
                    reason: "give either `k` or `sampling_ratio`, not both".into(),
                })
            }
            (Some(0), None) => {
                return Err(ConfigError::Invalid {
                    key: "k",
                    reason: "must be positive".into(),
                })
            }
            (Some(k), None) => Some(SampleSize::Absolute(k)),
            (None, Some(r)) if r > 0.0 && r <= 1.0 => Some(SampleSize::Ratio(r)),
            (None, Some(r)) => {
                return Err(ConfigError::Invalid {
                    key: "sampling_ratio",
                    reason: format!("must lie in (0, 1], got {r}"),
                })
            }
            (None, None) => None,
        };
        let p: Option<f64> = self.get("p", "real number")?;
        let epsilon: Option<f64> = self.get("epsilon", "real number")?;
        if let Some(e) = epsilon {
            positive_f64("epsilon", e)?;
        }
        if kind == SamplerKind::Crs && epsilon.is_none() {
            return Err(ConfigError::MissingKey("epsilon"));
        }
        if kind != SamplerKind::Identity && kind != SamplerKind::Poisson && size.is_none() {
            return Err(ConfigError::MissingKey("k"));
        }
        if kind == SamplerKind::Poisson && size.is_none() && p.is_none() {
            return Err(ConfigError::MissingKey("p"));
        }
        let sampler = SamplerSpec {
            kind,
            size,
            p,
            epsilon,
            feedback: self.req("feedback", "true | false")?,
            crs_scaling: self.req("crs_scaling", "conditional | fixed")?,
        };

        let laplace_scale: Option<f64> = self.get("laplace_scale", "real number")?;
        if let Some(l) = laplace_scale {
            positive_f64("laplace_scale", l)?;
        }
        let lr = positive_f64("lr", self.req("lr", "real number")?)?;
        let lr_decay: f64 = self.req("lr_decay", "real number")?;
        if !(lr_decay >= 0.0 && lr_decay.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "lr_decay",
                reason: format!("must be non-negative, got {lr_decay}"),
            });
        }

        Ok(ExperimentConfig {
            seed,
            rounds,
            clients,
            dataset,
            partition,
            model,
            hidden,
            sampler,
            laplace_scale,
            lr,
            lr_decay,
            local_batch: self.req("local_batch", "non-negative integer")?,
            local_epochs: positive_usize("local_epochs")?,
            eval_every: positive_usize("eval_every")?,
            update_rule: self.req("update_rule", "delta | plain")?,
            broadcast: self.req("broadcast", "dense | compact")?,
            output: self.get("output", "path")?,
        })
    }

    fn mismatch(&self, key: &'static str, expected: &'static str) -> ConfigError {
        let (line, value) = self.raw(key).unwrap_or((0, ""));
        ConfigError::TypeMismatch {
            line,
            key: key.to_string(),
            value: value.to_string(),
            expected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# smallest useful file
seed = 7
rounds = 20
clients = 4
dataset = synthetic
model = logreg
sampler = identity
";

    #[test]
    fn minimal_file_gets_defaults() {
        let c = ExperimentConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.rounds, 20);
        assert_eq!(c.clients, 4);
        assert_eq!(
            c.dataset,
            DatasetSpec::Synthetic {
                samples: 4000,
                test_samples: 1000,
                features: 16,
                classes: 4,
                class_sep: 1.0
            }
        );
        assert_eq!(c.partition, PartitionSpec::Shards { per_client: 2 });
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.local_batch, 32);
        assert_eq!(c.eval_every, 10);
        assert_eq!(c.update_rule, UpdateRule::Delta);
        assert_eq!(c.broadcast, Broadcast::Dense);
        assert_eq!(c.sampler.kind, SamplerKind::Identity);
    }

    #[test]
    fn crs_requires_epsilon() {
        let text = MINIMAL.replace("sampler = identity", "sampler = crs\nk = 5");
        assert_eq!(
            ExperimentConfig::parse_str(&text),
            Err(ConfigError::MissingKey("epsilon"))
        );
        let ok = ExperimentConfig::parse_str(&format!("{text}epsilon = 1.0\n")).unwrap();
        assert_eq!(ok.sampler.epsilon, Some(1.0));
    }

    #[test]
    fn learning_rate_with_decay() {
        let c = ExperimentConfig::parse_str(&format!("{MINIMAL}lr = 0.01\nlr_decay = 1e-4\n")).unwrap();
        assert_eq!((c.lr, c.lr_decay), (0.01, 1e-4));
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = ExperimentConfig::parse_str(&format!("{MINIMAL}learning_rate = 0.1\n")).unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownKey {
                line: 8,
                key: "learning_rate".into()
            }
        );
        let e = ExperimentConfig::parse_str(&MINIMAL.replace("rounds = 20", "rounds = many")).unwrap_err();
        assert!(matches!(e, ConfigError::TypeMismatch { line: 3, ref key, .. } if key == "rounds"));
        assert!(e.to_string().contains("line 3"));
        let e = ExperimentConfig::parse_str(&MINIMAL.replace("seed = 7\n", "")).unwrap_err();
        assert_eq!(e, ConfigError::MissingKey("seed"));
        let e = ExperimentConfig::parse_str(&format!("{MINIMAL}seed = 8\n")).unwrap_err();
        assert!(matches!(e, ConfigError::DuplicateKey { line: 8, .. }));
        let e = ExperimentConfig::parse_str(&format!("{MINIMAL}just words\n")).unwrap_err();
        assert_eq!(e, ConfigError::Syntax { line: 8 });
    }

    #[test]
    fn k_and_ratio_are_exclusive() {
        let text = MINIMAL.replace("sampler = identity", "sampler = topk\nk = 3\nsampling_ratio = 0.1");
        assert!(ExperimentConfig::parse_str(&text).is_err());
    }

    #[test]
    fn ratio_resolves_with_ceiling() {
        assert_eq!(SampleSize::Ratio(0.07).resolve(676), 48);
        assert_eq!(SampleSize::Ratio(0.001).resolve(676), 1);
        assert_eq!(SampleSize::Ratio(0.007).resolve(676), 5);
        assert_eq!(SampleSize::Ratio(0.07).resolve(100), 7);
        let spec = SamplerSpec {
            kind: SamplerKind::Crs,
            size: Some(SampleSize::Ratio(0.07)),
            p: None,
            epsilon: Some(1.0),
            feedback: true,
            crs_scaling: CrsScaling::Conditional,
        };
        let s = spec.resolve(676).unwrap();
        assert_eq!(s.k, 48);
        assert!((s.p - 0.632_120_558_8).abs() < 1e-9);
    }

    #[test]
    fn every_key_round_trips() {
        let full = "\
seed = 3
rounds = 5
clients = 6
dataset = idx
idx_images = /tmp/a
idx_labels = /tmp/b
idx_test_images = /tmp/c
idx_test_labels = /tmp/d
partition = dirichlet
dirichlet_beta = 0.3
min_client_samples = 4
model = mlp
hidden = 12
sampler = crs
sampling_ratio = 0.07
p = 0.4
epsilon = 0.9
feedback = false
crs_scaling = fixed
laplace_scale = 0.00001
lr = 0.05
lr_decay = 0.0001
local_batch = 0
local_epochs = 2
eval_every = 3
update_rule = plain
broadcast = compact
output = /tmp/out.csv
";
        let c = ExperimentConfig::parse_str(full).unwrap();
        assert_eq!(ExperimentConfig::parse_str(&c.to_text()).unwrap(), c);

        // The remaining keys, only reachable with the other variants.
        let rest = "\
seed = 3
rounds = 5
clients = 6
dataset = synthetic
samples = 100
test_samples = 10
features = 3
classes = 2
class_sep = 2.5
partition = shards
shards_per_client = 3
model = logreg
sampler = topk
k = 4
";
        let c2 = ExperimentConfig::parse_str(rest).unwrap();
        assert_eq!(ExperimentConfig::parse_str(&c2.to_text()).unwrap(), c2);

        let used: std::collections::HashSet<&str> = full
            .lines()
            .chain(rest.lines())
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim()))
            .collect();
        for (k, _, _) in KEYS {
            assert!(used.contains(k), "key {k} not exercised");
        }
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::parse_str(&MINIMAL.replace("sampler = identity", "sampler = topk\nk = 3")).unwrap();
        let r = c.with_override("sampling_ratio", "0.1").unwrap();
        assert_eq!(r.sampler.size, Some(SampleSize::Ratio(0.1)));
        let m = c.with_override("clients", "9").unwrap();
        assert_eq!(m.clients, 9);
        assert!(c.with_override("nope", "1").is_err());
        assert!(c.with_override("clients", "x").is_err());
    }

    #[test]
    fn help_lists_defaults() {
        let h = keys_help();
        for (k, _, _) in KEYS {
            assert!(h.contains(k));
        }
        assert!(h.contains("[default: 0.01]"));
    }
}
