//! Run configuration: a plain `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Every key is optional except
//! `dataset_root`, which names a directory or `synthetic:N` for `N`
//! procedurally generated layouts. Unknown or repeated keys are errors.
//!
//! | key | default |
//! |-----|---------|
//! | `dataset_root` | required |
//! | `split` | `train` |
//! | `height`, `width` | 64, 128 |
//! | `steps`, `offset` | 2000, 0.008 |
//! | `depth`, `base_width` | 3, 32 |
//! | `time_enc_dim`, `cond_enc_dim`, `period` | 32, 32, 10000 |
//! | `lr`, `beta1`, `beta2`, `adam_eps`, `weight_decay` | 1e-4, 0.9, 0.999, 1e-8, 0 |
//! | `epochs`, `batch_size` | 70, 1 |
//! | `parameterization` | `predict-x0` |
//! | `clip_x0` | true |
//! | `infer_steps` | `all` |
//! | `snap` | `strict` |
//! | `seed` | 0 |
//! | `output_dir` | `runs` |

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::diffusion::{DiffusionConfig, Parameterization};
use crate::drawing::SnapMode;
use crate::error::{Error, Result};
use crate::net::{UNetConfig, DEFAULT_PERIOD};
use crate::schedule::{ScheduleSpec, DEFAULT_OFFSET, DEFAULT_STEPS};
use crate::tensor::AdamConfig;

/// Where training examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Directory(PathBuf),
    Synthetic(usize),
}

impl Display for DatasetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Directory(p) => write!(f, "{}", p.display()),
            Self::Synthetic(n) => write!(f, "synthetic:{n}"),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(n) = s.strip_prefix("synthetic:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad synthetic dataset size {n:?}")))?;
            if n == 0 {
                return Err(Error::Config(
                    "synthetic dataset needs at least one layout".into(),
                ));
            }
            return Ok(Self::Synthetic(n));
        }
        if s.is_empty() {
            return Err(Error::Config("dataset_root is empty".into()));
        }
        Ok(Self::Directory(PathBuf::from(s)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub split: String,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub offset: f64,
    pub depth: usize,
    pub base_width: usize,
    pub time_enc_dim: usize,
    pub cond_enc_dim: usize,
    pub period: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub parameterization: Parameterization,
    pub clip_x0: bool,
    pub infer_steps: Option<usize>,
    pub snap: SnapMode,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            split: "train".into(),
            height: 64,
            width: 128,
            steps: DEFAULT_STEPS,
            offset: DEFAULT_OFFSET,
            depth: 3,
            base_width: 32,
            time_enc_dim: 32,
            cond_enc_dim: 32,
            period: DEFAULT_PERIOD,
            adam: AdamConfig::default(),
            epochs: 70,
            batch_size: 1,
            parameterization: Parameterization::PredictX0,
            clip_x0: true,
            infer_steps: None,
            snap: SnapMode::Strict,
            seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// The desk-scale preset: 32×64, `T = 200`, depth 2, width 16.
    pub fn toy(dataset: DatasetSource) -> Self {
        Self {
            height: 32,
            width: 64,
            steps: 200,
            depth: 2,
            base_width: 16,
            ..Self::new(dataset)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, &[])
    }

    /// Parses a config file body, then applies `overrides` (`key=value`).
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_kv(line).ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    i + 1
                ))
            })?;
            if kv.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: key {k} given twice",
                    i + 1
                )));
            }
        }
        for o in overrides {
            let (k, v) = split_kv(o)
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            kv.insert(k.to_owned(), v.to_owned());
        }
        Self::from_map(&kv)
    }

    pub fn from_map(kv: &BTreeMap<String, String>) -> Result<Self> {
        let dataset: DatasetSource = kv
            .get("dataset_root")
            .ok_or_else(|| Error::Config("missing required key dataset_root".into()))?
            .parse()?;
        let mut c = Self::new(dataset);
        for (k, v) in kv {
            match k.as_str() {
                "dataset_root" => {}
                "split" => c.split = v.clone(),
                "height" => c.height = num(k, v)?,
                "width" => c.width = num(k, v)?,
                "steps" => c.steps = num(k, v)?,
                "offset" => c.offset = num(k, v)?,
                "depth" => c.depth = num(k, v)?,
                "base_width" => c.base_width = num(k, v)?,
                "time_enc_dim" => c.time_enc_dim = num(k, v)?,
                "cond_enc_dim" => c.cond_enc_dim = num(k, v)?,
                "period" => c.period = num(k, v)?,
                "lr" => c.adam.lr = num(k, v)?,
                "beta1" => c.adam.beta1 = num(k, v)?,
                "beta2" => c.adam.beta2 = num(k, v)?,
                "adam_eps" => c.adam.eps = num(k, v)?,
                "weight_decay" => c.adam.weight_decay = num(k, v)?,
                "epochs" => c.epochs = num(k, v)?,
                "batch_size" => c.batch_size = num(k, v)?,
                "parameterization" => c.parameterization = v.parse()?,
                "clip_x0" => c.clip_x0 = num(k, v)?,
                "infer_steps" => c.infer_steps = if v == "all" { None } else { Some(num(k, v)?) },
                "snap" => {
                    c.snap = match v.as_str() {
                        "strict" => SnapMode::Strict,
                        "lenient" => SnapMode::Lenient,
                        _ => {
                            return Err(Error::Config(format!(
                                "snap must be strict or lenient, got {v:?}"
                            )))
                        }
                    }
                }
                "seed" => c.seed = num(k, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "only batch_size = 1 is supported, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        if let Some(k) = self.infer_steps {
            if k == 0 || k > self.steps {
                return Err(Error::Config(format!(
                    "infer_steps must lie in 1..={}, got {k}",
                    self.steps
                )));
            }
        }
        self.unet().validate()?;
        crate::schedule::NoiseSchedule::from_spec(self.schedule()).map(|_| ())
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            height: self.height,
            width: self.width,
            depth: self.depth,
            base_width: self.base_width,
            time_enc_dim: self.time_enc_dim,
            cond_enc_dim: self.cond_enc_dim,
            period: self.period,
            init_seed: self.seed,
        }
    }

    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps,
            offset: self.offset,
        }
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            parameterization: self.parameterization,
            clip_x0: self.clip_x0,
            infer_steps: self.infer_steps,
        }
    }

    /// Every key with its effective value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let a = &self.adam;
        let pairs: [(&str, String); 24] = [
            ("dataset_root", self.dataset.to_string()),
            ("split", self.split.clone()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("steps", self.steps.to_string()),
            ("offset", self.offset.to_string()),
            ("depth", self.depth.to_string()),
            ("base_width", self.base_width.to_string()),
            ("time_enc_dim", self.time_enc_dim.to_string()),
            ("cond_enc_dim", self.cond_enc_dim.to_string()),
            ("period", self.period.to_string()),
            ("lr", a.lr.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("adam_eps", a.eps.to_string()),
            ("weight_decay", a.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("parameterization", self.parameterization.to_string()),
            ("clip_x0", self.clip_x0.to_string()),
            (
                "infer_steps",
                self.infer_steps.map_or("all".into(), |k| k.to_string()),
            ),
            (
                "snap",
                match self.snap {
                    SnapMode::Strict => "strict".into(),
                    SnapMode::Lenient => "lenient".into(),
                },
            ),
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    /// Sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn split_kv(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then_some((k, v))
}

fn num<T: FromStr>(k: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{k} = {v:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_overrides() {
        let text =
            "# toy\ndataset_root = data\nheight = 32 # rows\nwidth=64\n\nparameterization = eps\n";
        let c = RunConfig::parse(text, &["seed=7".into()]).unwrap();
        assert_eq!(c.dataset, DatasetSource::Directory("data".into()));
        assert_eq!((c.height, c.width, c.seed), (32, 64, 7));
        assert_eq!(c.parameterization, Parameterization::PredictEps);
        assert_eq!(c.epochs, 70);
    }

    #[test]
    fn defaults() {
        let c = RunConfig::new(DatasetSource::Synthetic(4));
        assert_eq!((c.steps, c.epochs, c.batch_size), (2000, 70, 1));
        assert_eq!(
            (c.adam.lr, c.adam.beta1, c.adam.beta2, c.adam.eps),
            (1e-4, 0.9, 0.999, 1e-8)
        );
        assert_eq!(
            (c.time_enc_dim, c.cond_enc_dim, c.period),
            (32, 32, 10_000.0)
        );
    }

    #[test]
    fn faults() {
        for bad in [
            "height = 32\n",
            "dataset_root = d\nbogus = 1\n",
            "dataset_root = d\nheight = x\n",
            "dataset_root = d\ndataset_root = e\n",
            "dataset_root = d\nbatch_size = 4\n",
            "dataset_root = synthetic:0\n",
            "dataset_root = d\nheight = 30\n",
            "just a line\n",
        ] {
            assert!(
                matches!(RunConfig::parse(bad, &[]), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let c = RunConfig::toy(DatasetSource::Synthetic(16));
        let back = RunConfig::parse(&c.canonical(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }
}
