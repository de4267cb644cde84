//! JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use makd_core::train::{ProbeConfig, SyntheticSpec, TrainConfig};
use makd_core::{AdamParams, MakdVariant};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// Hidden-layer widths of an MLP, written `2x128` (repeated width) or `64-32`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Arch {
    pub hidden: Vec<usize>,
}

impl Arch {
    /// Full layer widths for `input` features and `classes` outputs.
    pub fn widths(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(&self.hidden);
        w.push(classes);
        w
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hidden.as_slice() {
            [first, rest @ ..] if rest.iter().all(|w| w == first) => {
                write!(f, "{}x{}", self.hidden.len(), first)
            }
            hidden => {
                let parts: Vec<String> = hidden.iter().map(usize::to_string).collect();
                f.write_str(&parts.join("-"))
            }
        }
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("bad architecture {s:?}; expected e.g. \"2x128\" or \"64-32\"");
        let hidden = if let Some((n, w)) = s.split_once('x') {
            let n: usize = n.parse().map_err(|_| bad())?;
            let w: usize = w.parse().map_err(|_| bad())?;
            vec![w; n]
        } else {
            s.split('-')
                .map(|p| p.parse::<usize>().map_err(|_| bad()))
                .collect::<std::result::Result<Vec<_>, _>>()?
        };
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(bad());
        }
        Ok(Arch { hidden })
    }
}

impl Serialize for Arch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub teacher: Arch,
    pub student: Arch,
}

/// Unspecified fields take the standard benchmark's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub informative_dims: usize,
    pub nuisance_dims: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    pub separation: f64,
    pub spread: f64,
}

impl From<&SyntheticConfig> for SyntheticSpec {
    fn from(c: &SyntheticConfig) -> Self {
        SyntheticSpec {
            seed: c.seed,
            n_train: c.n_train,
            n_test: c.n_test,
            informative_dims: c.informative_dims,
            nuisance_dims: c.nuisance_dims,
            classes: c.classes,
            modes_per_class: c.modes_per_class,
            separation: c.separation,
            spread: c.spread,
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let s = SyntheticSpec::standard(0);
        Self {
            seed: s.seed,
            n_train: s.n_train,
            n_test: s.n_test,
            informative_dims: s.informative_dims,
            nuisance_dims: s.nuisance_dims,
            classes: s.classes,
            modes_per_class: s.modes_per_class,
            separation: s.separation,
            spread: s.spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    /// Two CSV files; validation is carved from `train` with `split_seed`.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            decay_epochs: t.decay_epochs,
            decay_factor: t.decay_factor,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub reg: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            reg: p.reg,
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl From<ProbeSection> for ProbeConfig {
    fn from(p: ProbeSection) -> Self {
        ProbeConfig {
            reg: p.reg,
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSection {
    fn default() -> Self {
        let a = AdamParams::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl From<AdamSection> for AdamParams {
    fn from(a: AdamSection) -> Self {
        AdamParams {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Static { lambda: f64 },
    Gnorp { r_gn: f64 },
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::Gnorp { r_gn: 3.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSearchSection {
    pub trials: usize,
    /// Range of `ln(lambda)`.
    pub log_range: [f64; 2],
}

impl Default for LambdaSearchSection {
    fn default() -> Self {
        Self {
            trials: 16,
            log_range: [0.0, 8.0],
        }
    }
}

/// `"all80"` or an explicit list of variant names.
#[derive(Debug, Clone, PartialEq)]
pub struct Variants(pub Vec<MakdVariant>);

impl Default for Variants {
    fn default() -> Self {
        Self(MakdVariant::all())
    }
}

impl Serialize for Variants {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == MakdVariant::all() {
            s.serialize_str("all80")
        } else {
            s.collect_seq(self.0.iter().map(|v| v.to_string()))
        }
    }
}

impl<'de> Deserialize<'de> for Variants {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            List(Vec<String>),
        }
        let names = match Raw::deserialize(d)? {
            Raw::Tag(t) if t == "all80" => return Ok(Self::default()),
            Raw::Tag(t) => {
                return Err(serde::de::Error::custom(format!(
                    "variants must be \"all80\" or a list of names, got {t:?}"
                )))
            }
            Raw::List(l) => l,
        };
        names
            .iter()
            .map(|n| n.parse().map_err(serde::de::Error::custom))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self)
    }
}

fn default_pairs() -> Vec<Pair> {
    vec![Pair {
        teacher: "2x128".parse().expect("valid"),
        student: "2x16".parse().expect("valid"),
    }]
}

fn default_variant() -> MakdVariant {
    "CS L2 SL1".parse().expect("valid")
}

fn default_rgn_grid() -> Vec<f64> {
    (1..=14).map(|k| 0.5 * k as f64).collect()
}

fn default_workers() -> usize {
    1
}

fn serialize_variant<S: Serializer>(v: &MakdVariant, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn deserialize_variant<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MakdVariant, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetConfig,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<Pair>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub probe: ProbeSection,
    /// Variant set for the combinatorial search.
    #[serde(default)]
    pub variants: Variants,
    /// Variant used by `distill`, `rgn-sweep`, `lambda-search` and `gnorp-ablation`.
    #[serde(
        default = "default_variant",
        serialize_with = "serialize_variant",
        deserialize_with = "deserialize_variant"
    )]
    pub variant: MakdVariant,
    #[serde(default)]
    pub lambda_policy: PolicyConfig,
    #[serde(default)]
    pub adam: AdamSection,
    #[serde(default = "default_rgn_grid")]
    pub r_gn_grid: Vec<f64>,
    #[serde(default)]
    pub lambda_search: LambdaSearchSection,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_dataset() -> DatasetConfig {
    DatasetConfig::Synthetic(SyntheticConfig::default())
}

impl ExperimentConfig {
    /// Minimal configuration on the standard benchmark.
    pub fn standard(seeds: Vec<u64>) -> Self {
        Self {
            dataset: default_dataset(),
            pairs: default_pairs(),
            train: TrainSection::default(),
            probe: ProbeSection::default(),
            variants: Variants::default(),
            variant: default_variant(),
            lambda_policy: PolicyConfig::default(),
            adam: AdamSection::default(),
            r_gn_grid: default_rgn_grid(),
            lambda_search: LambdaSearchSection::default(),
            seeds,
            out: None,
            workers: 1,
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| HarnessError::Json {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return fail("\"seeds\" must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return fail("\"seeds\" contains duplicates".into());
        }
        if self.pairs.is_empty() {
            return fail("\"pairs\" must list at least one teacher/student pair".into());
        }
        if self.variants.0.is_empty() {
            return fail("\"variants\" is empty".into());
        }
        if self.workers == 0 {
            return fail("\"workers\" must be at least 1".into());
        }
        if self.r_gn_grid.is_empty() || self.r_gn_grid.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return fail("\"r_gn_grid\" must be a non-empty list of positive ratios".into());
        }
        match self.lambda_policy {
            PolicyConfig::Static { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => {
                return fail("\"lambda_policy.static.lambda\" must be finite and nonnegative".into())
            }
            PolicyConfig::Gnorp { r_gn } if !(r_gn > 0.0) || !r_gn.is_finite() => {
                return fail("\"lambda_policy.gnorp.r_gn\" must be positive".into())
            }
            _ => {}
        }
        let [lo, hi] = self.lambda_search.log_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return fail("\"lambda_search.log_range\" must be an increasing pair".into());
        }
        if self.lambda_search.trials < 8 {
            return fail("\"lambda_search.trials\" must be at least 8".into());
        }
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            if s.classes < 2 || s.n_train < 4 || s.informative_dims == 0 {
                return fail("\"dataset.synthetic\" needs 2+ classes, 4+ samples, 1+ informative dim".into());
            }
        }
        self.train
            .with_seed(0)
            .validate()
            .map_err(|e| HarnessError::Config(format!("\"train\": {e}")))?;
        Ok(())
    }

    pub fn policy(&self) -> makd_core::train::LambdaPolicy {
        match self.lambda_policy {
            PolicyConfig::Static { lambda } => makd_core::train::LambdaPolicy::Static(lambda),
            PolicyConfig::Gnorp { r_gn } => makd_core::train::LambdaPolicy::Gnorp {
                r_gn,
                adam: self.adam.into(),
            },
        }
    }
}
