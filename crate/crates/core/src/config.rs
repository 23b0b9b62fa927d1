//! TOML run configuration.
//!
//! ```toml
//! name = "sb-33"
//! seed = 1
//! epochs = 20
//! batch_size = 128
//! hidden = [32, 32]
//! log = "runs/sb.log"
//!
//! [schedule]
//! initial_lr = 0.1
//! steps = [{ epoch = 60, multiplier = 5.0 }]
//!
//! [dataset.synthetic]
//! n = 4000
//! classes = 4
//! dim = 2
//! spread = 0.5
//!
//! [strategy]
//! kind = "sb"
//! selectivity = 0.33
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, BlobSpec, CorruptionSpec, Dataset};
use crate::error::{Error, Result};
use crate::nn::LrSchedule;
use crate::sampler::{beta_from_selectivity, SamplerConfig, DEFAULT_HISTORY};
use crate::strategies::{RunSpec, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub schedule: LrSchedule,
    pub dataset: DatasetSpec,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
    #[serde(default)]
    pub tracked_ids: Vec<u64>,
    #[serde(default)]
    pub trace: Option<TraceSpec>,
    /// Run log destination; `--out` overrides.
    #[serde(default)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub synthetic: Option<BlobSpec>,
    #[serde(default)]
    pub idx: Option<IdxSource>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    /// Keep only the first `limit` training examples.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: String,
    #[serde(default)]
    pub selectivity: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub history: Option<usize>,
    #[serde(default)]
    pub staleness: Option<usize>,
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default)]
    pub select_k: Option<usize>,
    #[serde(default)]
    pub fraction: Option<f64>,
}

/// Probability tracing of the examples listed in `tracked_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    /// Selectivity of the shadow sampler used for non-selecting strategies.
    #[serde(default = "default_shadow_selectivity")]
    pub selectivity: f64,
    #[serde(default)]
    pub history: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_shadow_selectivity() -> f64 {
    1.0 / 3.0
}

impl StrategySpec {
    fn sampler(&self) -> Result<SamplerConfig> {
        let beta = match (self.selectivity, self.beta) {
            (Some(_), Some(_)) => {
                return Err(Error::config("strategy.selectivity", "give either selectivity or beta, not both"))
            }
            (Some(s), None) => beta_from_selectivity(s).map_err(|e| match e {
                Error::Config { message, .. } => Error::config("strategy.selectivity", message),
                other => other,
            })?,
            (None, Some(b)) => b,
            (None, None) => {
                return Err(Error::config("strategy.selectivity", format!("required for `{}`", self.kind)))
            }
        };
        let cfg = SamplerConfig {
            beta,
            history_capacity: self.history.unwrap_or(DEFAULT_HISTORY),
        };
        cfg.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("strategy.{field}"), message),
            other => other,
        })?;
        Ok(cfg)
    }

    fn fraction(&self) -> Result<f64> {
        self.fraction
            .or(self.selectivity)
            .ok_or_else(|| Error::config("strategy.fraction", format!("required for `{}`", self.kind)))
    }

    pub fn resolve(&self, batch_size: usize) -> Result<Strategy> {
        let strategy = match self.kind.as_str() {
            "traditional" => Strategy::Traditional,
            "sb" => Strategy::Sb { sampler: self.sampler()? },
            "stale-sb" => Strategy::StaleSb {
                sampler: self.sampler()?,
                period: self
                    .staleness
                    .ok_or_else(|| Error::config("strategy.staleness", "required for `stale-sb`"))?,
            },
            "kath18" => {
                let select_k = self.select_k.unwrap_or(batch_size);
                let pool_size = match (self.pool_size, self.selectivity) {
                    (Some(p), _) => p,
                    (None, Some(s)) if s > 0.0 && s <= 1.0 => (select_k as f64 / s).round() as usize,
                    (None, Some(s)) => {
                        return Err(Error::config("strategy.selectivity", format!("must lie in (0, 1], got {s}")))
                    }
                    (None, None) => 3 * select_k,
                };
                Strategy::Kath18 { pool_size, select_k }
            }
            "topk" => Strategy::TopK { fraction: self.fraction()? },
            "random" => Strategy::Random { fraction: self.fraction()? },
            other => {
                return Err(Error::config(
                    "strategy.kind",
                    format!("unknown strategy `{other}` (traditional, sb, stale-sb, kath18, topk, random)"),
                ))
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.clone();
        if let Some(v) = self.selectivity {
            s.push_str(&format!("-s{v:.2}"));
        }
        if let Some(v) = self.beta {
            s.push_str(&format!("-b{v}"));
        }
        if let Some(v) = self.staleness {
            s.push_str(&format!("-n{v}"));
        }
        if let Some(v) = self.fraction {
            s.push_str(&format!("-f{v}"));
        }
        s
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Resolve relative data paths against the config file's directory.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(idx) = self.dataset.idx.as_mut() {
            fix(&mut idx.images);
            fix(&mut idx.labels);
            idx.test_images.as_mut().map(fix);
            idx.test_labels.as_mut().map(fix);
        }
        if let Some(csv) = self.dataset.csv.as_mut() {
            fix(&mut csv.train);
            csv.test.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        let sources = [
            self.dataset.synthetic.is_some(),
            self.dataset.idx.is_some(),
            self.dataset.csv.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if sources != 1 {
            return Err(Error::config(
                "dataset",
                format!("exactly one of synthetic, idx, csv is required (found {sources})"),
            ));
        }
        self.schedule.validate()?;
        self.strategy.resolve(self.batch_size)?;
        if let Some(c) = &self.corruption {
            if !(0.0..=1.0).contains(&c.fraction) {
                return Err(Error::config("corruption.fraction", format!("must lie in [0, 1], got {}", c.fraction)));
            }
        }
        if let Some(t) = &self.trace {
            beta_from_selectivity(t.selectivity).map_err(|_| {
                Error::config("trace.selectivity", format!("must lie in (0, 1], got {}", t.selectivity))
            })?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.log = None;
        let text = toml::to_string(&c).unwrap_or_default();
        format!("{:016x}", fnv1a(text.as_bytes()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.strategy.label())
    }

    /// Train and test sets, with label corruption applied to the training set.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = if let Some(b) = &self.dataset.synthetic {
            data::synth_blobs(b.n, b.classes, b.dim, b.spread, b.seed.unwrap_or(self.seed))?
        } else if let Some(src) = &self.dataset.idx {
            let all = data::load_idx(&src.images, &src.labels)?;
            let all = match src.limit {
                Some(n) => all.take(n),
                None => all,
            };
            match (&src.test_images, &src.test_labels) {
                (Some(ti), Some(tl)) => (all, data::load_idx(ti, tl)?),
                (None, None) => {
                    let cut = all.len() * 4 / 5;
                    all.split_at(cut)
                }
                _ => {
                    return Err(Error::config(
                        "dataset.idx",
                        "test_images and test_labels must be given together",
                    ))
                }
            }
        } else if let Some(src) = &self.dataset.csv {
            let all = data::read_csv(&src.train, src.classes)?;
            match &src.test {
                Some(t) => {
                    let classes = all.class_count();
                    (all, data::read_csv(t, Some(classes))?)
                }
                None => {
                    let cut = all.len() * 4 / 5;
                    all.split_at(cut)
                }
            }
        } else {
            return Err(Error::config("dataset", "no dataset source"));
        };
        let train = match &self.corruption {
            Some(spec) => data::uniform_flip(&train, spec)?.0,
            None => train,
        };
        Ok((train, test))
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let strategy = self.strategy.resolve(self.batch_size)?;
        let mut spec = RunSpec::new(self.hidden.clone(), strategy, self.batch_size, self.epochs, 0.1, self.seed);
        spec.schedule = self.schedule.clone();
        spec.tracked_ids = self.tracked_ids.clone();
        if let Some(t) = &self.trace {
            spec.shadow = SamplerConfig {
                beta: beta_from_selectivity(t.selectivity)?,
                history_capacity: t.history.unwrap_or(DEFAULT_HISTORY),
            };
        }
        spec.label = self.label();
        spec.fingerprint = self.fingerprint();
        spec.validate()?;
        Ok(spec)
    }
}
