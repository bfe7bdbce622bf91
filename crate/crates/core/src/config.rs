//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys and repeated keys are errors. Every key has a default,
//! listed in [`KEYS`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{load_mnist, resolve_data_dir, synthetic_digits, Dataset};
use crate::error::{Error, Result};
use crate::network::{AdamConfig, Beta, LeNetConfig, TrainConfig};

/// `(key, default, meaning)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("epochs", "60", "training epochs"),
    ("batch_size", "128", "minibatch size"),
    ("lr", "0.005", "initial learning rate"),
    ("lr_decay", "0.1", "factor applied to the learning rate every lr_period epochs"),
    ("lr_period", "15", "epochs between learning-rate decays"),
    ("seed", "0", "seed for initialization, shuffling and synthetic data"),
    ("adam_beta1", "0.9", "Adam first-moment decay"),
    ("adam_beta2", "0.999", "Adam second-moment decay"),
    ("adam_eps", "1e-8", "Adam denominator offset"),
    ("conv1", "20", "filters in the first convolution"),
    ("conv2", "50", "filters in the second convolution"),
    ("hidden", "500", "width of the hidden dense layer"),
    ("kernel", "5", "square convolution kernel size"),
    ("beta_w", "1", "weight block size on inner layers: an integer or `full` (one block per filter row)"),
    ("beta_a", "1", "activation block size on inner layers: an integer or `full` (one block per activation row)"),
    ("data_dir", "", "directory with the four MNIST IDX files; empty means $HADANET_DATA_DIR"),
    ("synthetic", "false", "use generated 28x28 digits instead of MNIST"),
    ("synthetic_train", "2000", "synthetic training samples"),
    ("synthetic_test", "500", "synthetic test samples"),
    ("train_limit", "0", "use only the first N training samples; 0 means all"),
    ("test_limit", "0", "use only the first N test samples; 0 means all"),
    ("eval_batch", "1000", "batch size for evaluation"),
    ("workers", "1", "threads for the bit-packed kernels"),
    ("model", "model.hdnt", "output model file"),
    ("metrics", "metrics.csv", "output per-epoch metrics CSV"),
];

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub net: LeNetConfig,
    pub data_dir: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub train_limit: usize,
    pub test_limit: usize,
    pub eval_batch: usize,
    pub workers: usize,
    pub model: PathBuf,
    pub metrics: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            train: TrainConfig::default(),
            net: LeNetConfig::default(),
            data_dir: None,
            synthetic: false,
            synthetic_train: 0,
            synthetic_test: 0,
            train_limit: 0,
            test_limit: 0,
            eval_batch: 0,
            workers: 0,
            model: PathBuf::new(),
            metrics: PathBuf::new(),
        };
        for (k, v, _) in KEYS {
            cfg.set(k, v).expect("documented defaults parse");
        }
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// An integer block size, or `full`/`max` for one block per row.
pub fn parse_beta(value: &str) -> Result<Beta> {
    match value.trim().to_ascii_lowercase().as_str() {
        "full" | "max" => Ok(Beta::Full),
        v => match v.parse::<usize>() {
            Ok(b) if b >= 1 => Ok(Beta::Block(b)),
            _ => Err(Error::Config(format!("beta must be an integer >= 1 or `full`, got {value:?}"))),
        },
    }
}

fn beta_text(b: Beta) -> String {
    match b {
        Beta::Block(b) => b.to_string(),
        Beta::Full => "full".into(),
    }
}

impl RunConfig {
    /// Parses a config file's text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", no + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: {key} set twice", no + 1)));
            }
            seen.push(key);
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim().trim_matches('"');
        match key {
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "lr_period" => self.train.lr_period = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "adam_beta1" => self.train.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "conv1" => self.net.conv1 = parse(key, v)?,
            "conv2" => self.net.conv2 = parse(key, v)?,
            "hidden" => self.net.hidden = parse(key, v)?,
            "kernel" => self.net.kernel = parse(key, v)?,
            "beta_w" => self.net.beta_w = parse_beta(v)?,
            "beta_a" => self.net.beta_a = parse_beta(v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "synthetic" => self.synthetic = parse(key, v)?,
            "synthetic_train" => self.synthetic_train = parse(key, v)?,
            "synthetic_test" => self.synthetic_test = parse(key, v)?,
            "train_limit" => self.train_limit = parse(key, v)?,
            "test_limit" => self.test_limit = parse(key, v)?,
            "eval_batch" => self.eval_batch = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "model" => self.model = PathBuf::from(v),
            "metrics" => self.metrics = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let n = &self.net;
        if n.conv1 == 0 || n.conv2 == 0 || n.hidden == 0 || n.kernel == 0 {
            return Err(Error::Config("conv1, conv2, hidden and kernel must be >= 1".into()));
        }
        if self.synthetic && (self.synthetic_train == 0 || self.synthetic_test == 0) {
            return Err(Error::Config("synthetic_train and synthetic_test must be >= 1".into()));
        }
        if self.eval_batch == 0 || self.workers == 0 {
            return Err(Error::Config("eval_batch and workers must be >= 1".into()));
        }
        crate::network::lenet_specs(n).map_err(|e| Error::Config(strip(e)))?;
        Ok(())
    }

    /// The train and test splits this configuration names, with the limits
    /// applied. Synthetic splits share templates drawn from `seed` and use
    /// disjoint sample seeds.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = if self.synthetic {
            let seed = self.train.seed;
            (
                synthetic_digits(self.synthetic_train, seed, seed.wrapping_mul(2).wrapping_add(1)),
                synthetic_digits(self.synthetic_test, seed, seed.wrapping_mul(2).wrapping_add(2)),
            )
        } else {
            load_mnist(&resolve_data_dir(self.data_dir.as_deref())?)?
        };
        let limit = |d: Dataset, n: usize| if n == 0 { d } else { d.take(n) };
        Ok((limit(train, self.train_limit), limit(test, self.test_limit)))
    }

    /// The configuration as a complete, commented config file.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let AdamConfig { beta1, beta2, eps } = t.adam;
        let values = [
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.lr.to_string(),
            t.lr_decay.to_string(),
            t.lr_period.to_string(),
            t.seed.to_string(),
            beta1.to_string(),
            beta2.to_string(),
            eps.to_string(),
            self.net.conv1.to_string(),
            self.net.conv2.to_string(),
            self.net.hidden.to_string(),
            self.net.kernel.to_string(),
            beta_text(self.net.beta_w),
            beta_text(self.net.beta_a),
            self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.synthetic.to_string(),
            self.synthetic_train.to_string(),
            self.synthetic_test.to_string(),
            self.train_limit.to_string(),
            self.test_limit.to_string(),
            self.eval_batch.to_string(),
            self.workers.to_string(),
            self.model.display().to_string(),
            self.metrics.display().to_string(),
        ];
        let mut out = String::new();
        for ((key, default, doc), value) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "# {doc} (default: {})", if default.is_empty() { "empty" } else { default });
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Drops the variant prefix so nested messages do not repeat it.
fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) | Error::Shape(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_mnist_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.net, LeNetConfig::default());
        assert_eq!(c.workers, 1);
        assert_eq!(c.model, PathBuf::from("model.hdnt"));
        assert!(c.data_dir.is_none());
    }

    #[test]
    fn parses_values_comments_and_blanks() {
        let c = RunConfig::parse("# header\n\nepochs = 3   # short run\nbeta_w = 4\nbeta_a=full\ndata_dir = \"/tmp/x\"\n")
            .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.net.beta_w, Beta::Block(4));
        assert_eq!(c.net.beta_a, Beta::Full);
        assert_eq!(c.data_dir, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "epochs",
            "nope = 1",
            "epochs = x",
            "epochs = 0",
            "lr_decay = 2",
            "beta_w = 0",
            "epochs = 1\nepochs = 2",
            "kernel = 20",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn text_form_roundtrips() {
        let mut c = RunConfig::default();
        c.set("beta_w", "full").unwrap();
        c.set("lr", "0.0125").unwrap();
        c.set("synthetic", "true").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_configs_parse() {
        let full = RunConfig::parse(include_str!("../../../configs/lenet_mnist.cfg")).unwrap();
        assert_eq!(full, RunConfig::default());
        let b4 = RunConfig::parse(include_str!("../../../configs/mnist_hada_b4.cfg")).unwrap();
        assert_eq!((b4.net.beta_w, b4.net.beta_a), (Beta::Block(4), Beta::Block(4)));
        let desk = RunConfig::parse(include_str!("../../../configs/mnist_desk.cfg")).unwrap();
        assert_eq!((desk.net.conv1, desk.net.conv2, desk.net.hidden), (8, 16, 128));
        assert_eq!((desk.train.epochs, desk.train.lr_period, desk.train_limit), (10, 5, 30_000));
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut keys: Vec<_> = KEYS.iter().map(|k| k.0).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), KEYS.len());
    }
}
