//! A complete experimental world: codebook, compressor, and the rule for
//! drawing test inputs near codewords. Shared by the CLI and the test suites.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{build_codebook, Codebook, CodebookConfig, Label, Nuisance};
use crate::compressor::{sample_compressor, Classifier, LinearCompressor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, unit_vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub codebook: CodebookConfig,
    /// Compressed dimension `M`.
    pub m: usize,
    /// Inputs are `c + e` with `||e|| = offset_fraction * r`.
    #[serde(default = "default_offset_fraction")]
    pub offset_fraction: f64,
}

fn default_offset_fraction() -> f64 {
    0.5
}

impl ScenarioConfig {
    /// `N = 1000`, `M = 50`, five labels with three nuisances each, labels
    /// about `4 r0` apart and `r = 0.5 r0`.
    pub fn near(seed: u64) -> Self {
        Self {
            codebook: CodebookConfig { dimension: 1000, labels: 5, nuisances: 3, r0: 1.0, seed, ..Default::default() },
            m: 50,
            offset_fraction: default_offset_fraction(),
        }
    }

    /// As [`ScenarioConfig::near`] with labels about `50 r0` apart, so that
    /// the attack norm is dominated by the compressed distance rather than
    /// by `r`.
    pub fn far(seed: u64) -> Self {
        let mut cfg = Self::near(seed);
        cfg.codebook.anchor_spread = 50.0;
        cfg
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { codebook: CodebookConfig::default(), m: 50, offset_fraction: default_offset_fraction() }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    codebook: Codebook,
    compressor: LinearCompressor,
}

/// A test input drawn near a codeword.
#[derive(Debug, Clone)]
pub struct Draw {
    pub x: DVector<f64>,
    pub label: Label,
    pub nuisance: Nuisance,
}

impl Scenario {
    /// The compressor seed is derived from the codebook seed.
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.offset_fraction) {
            return Err(Error::Config(format!("offset_fraction must lie in [0, 1), got {}", config.offset_fraction)));
        }
        let codebook = build_codebook(&config.codebook)?;
        let compressor = sample_compressor(config.m, config.codebook.dimension, derive_seed(config.codebook.seed, u64::MAX))?;
        Ok(Self { config: config.clone(), codebook, compressor })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn compressor(&self) -> &LinearCompressor {
        &self.compressor
    }

    pub fn classifier(&self) -> Classifier<'_> {
        Classifier::new(&self.compressor, &self.codebook).expect("dimensions agree by construction")
    }

    /// Uniform label and nuisance, then a uniform offset of fixed length.
    pub fn draw_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        draw_near_codeword(&self.codebook, self.config.offset_fraction * self.codebook.radius(), rng)
    }

    /// Uniform label different from `source`.
    pub fn draw_target<R: Rng + ?Sized>(&self, source: Label, rng: &mut R) -> Label {
        draw_other_label(&self.codebook, source, rng)
    }
}

/// Uniform codeword of `cb` plus a uniform offset of length `offset`.
pub fn draw_near_codeword<R: Rng + ?Sized>(cb: &Codebook, offset: f64, rng: &mut R) -> Draw {
    let label = Label(rng.random_range(1..=cb.num_labels()));
    let words = cb.codewords(label).expect("valid label");
    let word = &words[rng.random_range(0..words.len())];
    let mut x = word.signal.clone();
    if offset > 0.0 {
        x.axpy(offset, &unit_vector(x.len(), rng), 1.0);
    }
    Draw { x, label, nuisance: word.nuisance }
}

/// Uniform label of `cb` other than `source`. Needs at least two labels.
pub fn draw_other_label<R: Rng + ?Sized>(cb: &Codebook, source: Label, rng: &mut R) -> Label {
    let k = rng.random_range(1..cb.num_labels());
    Label(if k >= source.get() { k + 1 } else { k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    #[test]
    fn draws_are_near_their_codeword() {
        let cfg = ScenarioConfig {
            codebook: CodebookConfig { dimension: 200, seed: 1, ..Default::default() },
            m: 10,
            offset_fraction: 0.5,
        };
        let s = Scenario::build(&cfg).unwrap();
        let mut rng = trial_rng(1, 0);
        for _ in 0..50 {
            let d = s.draw_input(&mut rng);
            let c = &s.codebook().codeword(d.label, d.nuisance).unwrap().signal;
            assert!(((&d.x - c).norm() - 0.25).abs() < 1e-12);
            assert_eq!(s.codebook().ideal_classify(&d.x).unwrap(), d.label);
            let t = s.draw_target(d.label, &mut rng);
            assert_ne!(t, d.label);
            assert!(t.get() >= 1 && t.get() <= 5);
        }
    }
}
