//! Experiment configuration as read from JSON.

use std::f64::consts::TAU;

use attractor_forge::rds::NoiseKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub field: FieldConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub flow: FlowSection,
    pub block: BlockConfig,
    pub horizons: Horizons,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rds: Option<RdsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// Unperturbed autonomous field, components separated by `;`.
    pub f0: String,
    /// Perturbed family in `t`, `x1..xd` and the amplitude `eps`.
    #[serde(rename = "fn", default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Forcing period for the periodic base-time sampling.
    #[serde(default = "default_period")]
    pub period: f64,
}

fn default_period() -> f64 {
    TAU
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_blowup")]
    pub blowup_bound: f64,
}

fn default_step() -> f64 {
    0.01
}

fn default_blowup() -> f64 {
    1e6
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            step: default_step(),
            blowup_bound: default_blowup(),
        }
    }
}

/// A set of boxes: centres where the expression is `<= 0`, or explicit
/// multi-indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Predicate(String),
    Boxes(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    /// `ntilde` is an isolating neighbourhood; the block is a sublevel of `g⁻`.
    #[default]
    Construct,
    /// `ntilde` is the block itself and is only validated.
    Explicit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub ntilde: Region,
    #[serde(default)]
    pub mode: BlockMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub alpha_scale: f64,
    #[serde(default = "default_cap")]
    pub horizon_cap: f64,
    #[serde(default = "one")]
    pub invariance_horizon: f64,
}

fn default_epsilon() -> f64 {
    0.25
}

fn one() -> f64 {
    1.0
}

fn default_cap() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct Horizons {
    /// Horizon of δ, verdicts, slices and noise intersections.
    pub T: f64,
    /// Horizons of the `gset` stage; `[T]` when empty.
    #[serde(default)]
    pub T_list: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    #[default]
    Periodic,
    QuasiRandom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Amplitudes of the semicontinuity curve, strictly decreasing.
    pub eps_values: Vec<f64>,
    /// Amplitudes checked by the verdict stage; when absent, the bisected
    /// admissible amplitude times each of `verdict_scales`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_eps: Option<Vec<f64>>,
    #[serde(default = "default_scales")]
    pub verdict_scales: Vec<f64>,
    /// Upper end of the admissible-amplitude bisection.
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default)]
    pub sampling: SamplingKind,
    /// Horizon of quasi-random base times.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Base shifts of the semi-singularity diagnostic; skipped when empty.
    #[serde(default)]
    pub shifts: Vec<f64>,
    /// How far back pullback slices start.
    #[serde(default = "default_depth")]
    pub depth: f64,
}

fn default_scales() -> Vec<f64> {
    vec![0.5, 0.9, 3.0]
}

fn default_eps_max() -> f64 {
    0.2
}

fn default_t_max() -> f64 {
    10.0
}

fn default_depth() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSetting {
    Value(f64),
    /// `"auto"`: bisect the largest bound whose deviation stays below δ/3.
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RdsConfig {
    pub rho: RhoSetting,
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
    #[serde(default = "default_mesh")]
    pub mesh: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub seed0: u64,
    pub T: f64,
    /// Coupling `g(x, u)` in `u1..um`; additive forcing of every component
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<String>,
    /// Forcing dimension; defaults to the state dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub kind: NoiseKind,
}

fn default_rho_max() -> f64 {
    0.5
}

fn default_mesh() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_dir(),
        }
    }
}
