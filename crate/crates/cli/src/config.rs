//! Run configuration, read from a TOML file. Relative paths resolve against
//! the directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use u5mr_core::gmrf::{A_MARG, B_MARG};
use u5mr_core::lgm::{GibbsOptions, ModelSpec};
use u5mr_core::sim::{ChildrenPerHousehold, SimDesign, WeightScheme, DEFAULT_CHILDREN, DEFAULT_CLUSTERS};
use u5mr_core::PeriodGrid;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub direct: DirectConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub children: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Precomputed direct estimates; used instead of `children` when set.
    pub direct: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub start_year: i32,
    pub period_years: i32,
    pub n_periods: usize,
    pub horizon: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { start_year: 1980, period_years: 5, n_periods: 6, horizon: 1 }
    }
}

impl GridConfig {
    pub fn grid(&self) -> Result<PeriodGrid> {
        Ok(PeriodGrid::uniform(self.start_year, self.period_years, self.n_periods, self.horizon)?)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectConfig {
    #[serde(default)]
    pub jackknife: bool,
    #[serde(default)]
    pub allow_unstable: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model labels such as `Vb`; `all` expands to the twelve standard specs.
    pub specs: Vec<String>,
    pub a_marg: f64,
    pub b_marg: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { specs: vec!["Vb".into()], a_marg: A_MARG, b_marg: B_MARG }
    }
}

impl ModelConfig {
    pub fn parse(&self, labels: &[String]) -> Result<Vec<ModelSpec>> {
        let mut out = Vec::new();
        for label in labels {
            if label.eq_ignore_ascii_case("all") {
                out.extend(ModelSpec::all_twelve());
            } else {
                out.push(ModelSpec::parse_label(label)?);
            }
        }
        if out.is_empty() {
            bail!("no model specs given");
        }
        for s in &mut out {
            s.marginal_prior = (self.a_marg, self.b_marg);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eb,
    Gibbs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub method: Method,
    /// Draws from the latent conditional at the empirical-Bayes mode.
    pub draws: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub chains: usize,
    /// Write every retained latent draw.
    pub dump_draws: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { method: Method::Eb, draws: 1000, n_iter: 4000, n_burn: 1000, thin: 1, chains: 2, dump_draws: true }
    }
}

impl SamplerConfig {
    pub fn gibbs(&self, seed: u64) -> GibbsOptions {
        GibbsOptions {
            n_iter: self.n_iter,
            n_burn: self.n_burn,
            thin: self.thin,
            seed,
            chains: self.chains,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub clusters: Vec<usize>,
    pub children: Vec<usize>,
    pub reps: usize,
    pub cluster_sd: f64,
    pub hazards: Vec<f64>,
    /// Tilt of the informative weight scheme; 0 gives equal weights.
    pub informative_strength: f64,
    pub jackknife: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let d = SimDesign::default();
        Self {
            clusters: DEFAULT_CLUSTERS.to_vec(),
            children: DEFAULT_CHILDREN.to_vec(),
            reps: 1000,
            cluster_sd: d.cluster_sd,
            hazards: d.hazards,
            informative_strength: 0.0,
            jackknife: true,
        }
    }
}

impl SimulateConfig {
    pub fn design(&self, seed: u64) -> SimDesign {
        let weights = if self.informative_strength == 0.0 {
            WeightScheme::Equal
        } else {
            WeightScheme::Informative { strength: self.informative_strength }
        };
        SimDesign {
            hazards: self.hazards.clone(),
            cluster_sd: self.cluster_sd,
            weights,
            children_per_household: ChildrenPerHousehold::Fixed(1),
            seed,
            ..Default::default()
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        Ok(cfg)
    }

    /// Defaults for running without a config file.
    pub fn empty() -> Self {
        toml::from_str("").expect("empty config parses")
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        join(&mut self.data.children);
        join(&mut self.data.adjacency);
        join(&mut self.data.registry);
        join(&mut self.data.direct);
        if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
    }

    /// Path of a required input, or an error naming its config key.
    pub fn input(&self, key: &str, why: &str) -> Result<&Path> {
        let p = match key {
            "children" => &self.data.children,
            "adjacency" => &self.data.adjacency,
            "registry" => &self.data.registry,
            "direct" => &self.data.direct,
            _ => unreachable!("unknown data key {key}"),
        };
        let Some(p) = p else {
            bail!("missing `[data] {key}` in the config ({why})");
        };
        if !p.exists() {
            bail!("`[data] {key}` file {} does not exist ({why})", p.display());
        }
        Ok(p)
    }
}
