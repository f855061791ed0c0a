//! Experiment configuration: one optional TOML section per experiment plus a
//! master seed. A CSV written by this tool can be fed back as a config file;
//! its `# ` header lines are the resolved configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use simlab_core::codebook::CodebookConfig;
use simlab_core::nonlinear::MapKind;
use simlab_core::pipeline::PipelineConfig;
use simlab_core::scenario::ScenarioConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Present in CSV headers; ignored on input.
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub codebook: Option<CodebookParams>,
    pub world: Option<WorldParams>,
    pub compressor: Option<CompressorParams>,
    pub attack: Option<AttackParams>,
    pub robustness: Option<RobustnessParams>,
    pub concentration: Option<ConcentrationParams>,
    pub ratio: Option<RatioParams>,
    pub detect: Option<DetectParams>,
    pub pipeline: Option<PipelineConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigFile(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::ConfigFile(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let body = if text.starts_with('#') { header_toml(text) } else { text.to_owned() };
        toml::from_str(&body).map_err(|e| e.message().to_owned())
    }
}

/// The TOML carried by the leading `# ` comment lines of a CSV.
pub fn header_toml(text: &str) -> String {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .map(|l| l.strip_prefix(' ').unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookParams {
    pub n: usize,
    pub labels: usize,
    pub nuisances: usize,
    pub r0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub anchor_spread: f64,
    pub nuisance_spread: f64,
    pub max_retries: u32,
}

impl Default for CodebookParams {
    fn default() -> Self {
        let c = CodebookConfig::default();
        Self {
            n: c.dimension,
            labels: c.labels,
            nuisances: c.nuisances,
            r0: c.r0,
            radius: c.radius,
            anchor_spread: c.anchor_spread,
            nuisance_spread: c.nuisance_spread,
            max_retries: c.max_retries,
        }
    }
}

impl CodebookParams {
    pub fn to_core(&self, seed: u64) -> CodebookConfig {
        CodebookConfig {
            dimension: self.n,
            labels: self.labels,
            nuisances: self.nuisances,
            r0: self.r0,
            radius: self.radius,
            anchor_spread: self.anchor_spread,
            nuisance_spread: self.nuisance_spread,
            max_retries: self.max_retries,
            seed,
        }
    }
}

/// Compressed dimension and input placement shared by the attack,
/// robustness and detection experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub m: usize,
    pub offset_fraction: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self { m: s.m, offset_fraction: s.offset_fraction }
    }
}

pub fn scenario_config(cb: &CodebookParams, world: &WorldParams, seed: u64) -> ScenarioConfig {
    ScenarioConfig { codebook: cb.to_core(seed), m: world.m, offset_fraction: world.offset_fraction }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressorParams {
    pub m: usize,
    pub n: usize,
    pub count: usize,
}

impl Default for CompressorParams {
    fn default() -> Self {
        Self { m: 50, n: 1000, count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackParams {
    pub trials: usize,
    /// Fixed target label; random per trial when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Defaults to 0.99 for targeted and 0.01 for untargeted attacks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub epsilon: f64,
    /// Draw a new codebook and compressor for every trial.
    pub fresh_world: bool,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self { trials: 500, target: None, margin: None, epsilon: 0.3, fresh_world: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessParams {
    pub trials: usize,
    /// Explicit radii; when empty a grid of `steps` radii up to
    /// `max_factor` times the targeted attack norm is used.
    pub radii: Vec<f64>,
    pub steps: usize,
    pub max_factor: f64,
    pub epsilon: f64,
}

impl Default for RobustnessParams {
    fn default() -> Self {
        Self { trials: 2000, radii: Vec::new(), steps: 10, max_factor: 5.0, epsilon: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationParams {
    pub m: usize,
    pub n: usize,
    pub eps: Vec<f64>,
    pub trials: usize,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        Self { m: 100, n: 1000, eps: vec![0.5], trials: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioParams {
    pub map: MapKind,
    pub n: usize,
    pub m: usize,
    pub seeds: usize,
    pub trials: usize,
    /// Scale of the probe point; 0 probes at the origin.
    pub scale: f64,
    pub delta: f64,
    /// Also compare the analytic Jacobian against finite differences.
    pub fd_check: bool,
}

impl Default for RatioParams {
    fn default() -> Self {
        Self { map: MapKind::Linear, n: 2000, m: 50, seeds: 100, trials: 1000, scale: 1.0, delta: 0.1, fd_check: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    /// Eligible attacks for `detect run`, trials per population for
    /// `detect roc`.
    pub trials: usize,
    /// Threshold for `detect run`; the sphere radius when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub max_attempts: usize,
    pub margin: f64,
    pub clean_noise: f64,
    pub grid: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { trials: 1000, threshold: None, max_attempts: 20_000, margin: 0.99, clean_noise: 0.25, grid: 41 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines_parse_back() {
        let text = "# command = \"x\"\n# seed = 4\n# [compressor]\n# m = 3\nindex,seed\n0,1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.compressor.unwrap().m, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sed = 1").is_err());
        assert!(ExperimentConfig::parse("[pipeline]\nsentences = 3").is_err());
    }

    #[test]
    fn codebook_defaults_match_core() {
        assert_eq!(CodebookParams::default().to_core(7), CodebookConfig { seed: 7, ..Default::default() });
    }
}
