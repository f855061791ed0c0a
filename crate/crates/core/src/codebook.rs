//! Labels, nuisance configurations and enumerated codeword sets.
//!
//! Codeword `(i, v)` is `anchor_i + offset_{i,v}`, both Gaussian and both
//! drawn from streams keyed by the synthesis seed, so any codeword can be
//! regenerated on its own from `(label, nuisance, seed)`. A draw is accepted
//! only if every pair of codewords with different labels is at least `2 r0`
//! apart; otherwise the seed is re-derived and the whole set redrawn.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, domain, gaussian_vector, stream_rng};

/// One-based label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub usize);

impl Label {
    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based position in the codebook's set list.
    pub(crate) fn idx(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-based index of a discrete nuisance configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Nuisance(pub usize);

impl Nuisance {
    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for Nuisance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub label: Label,
    pub nuisance: Nuisance,
    pub signal: DVector<f64>,
}

/// Everything needed to regenerate a codebook.
///
/// `anchor_spread` is the typical distance between two label anchors and
/// `nuisance_spread` the typical distance from a codeword to its anchor, both
/// in units of `r0` and independent of the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub dimension: usize,
    pub labels: usize,
    pub nuisances: usize,
    pub r0: f64,
    /// Sphere radius `r`; defaults to `r0 / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default = "default_anchor_spread")]
    pub anchor_spread: f64,
    #[serde(default = "default_nuisance_spread")]
    pub nuisance_spread: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    pub seed: u64,
}

fn default_anchor_spread() -> f64 {
    4.0
}

fn default_nuisance_spread() -> f64 {
    0.5
}

fn default_max_retries() -> u32 {
    100
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            dimension: 1000,
            labels: 5,
            nuisances: 3,
            r0: 1.0,
            radius: None,
            anchor_spread: default_anchor_spread(),
            nuisance_spread: default_nuisance_spread(),
            max_retries: default_max_retries(),
            seed: 0,
        }
    }
}

const MAX_INDEX: usize = 1 << 27;

impl CodebookConfig {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(0.5 * self.r0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Config(format!("dimension must be at least 2, got {}", self.dimension)));
        }
        if self.labels < 2 || self.labels >= MAX_INDEX {
            return Err(Error::Config(format!("label count must be in [2, 2^27), got {}", self.labels)));
        }
        if self.nuisances < 1 || self.nuisances >= MAX_INDEX {
            return Err(Error::Config(format!("nuisance count must be in [1, 2^27), got {}", self.nuisances)));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::Config(format!("r0 must be positive and finite, got {}", self.r0)));
        }
        let r = self.radius();
        if !(r > 0.0 && r < self.r0) {
            return Err(Error::Config(format!("sphere radius must lie in (0, r0), got r = {r}, r0 = {}", self.r0)));
        }
        if !(self.anchor_spread > 0.0 && self.anchor_spread.is_finite()) {
            return Err(Error::Config("anchor_spread must be positive and finite".into()));
        }
        if !(self.nuisance_spread >= 0.0 && self.nuisance_spread.is_finite()) {
            return Err(Error::Config("nuisance_spread must be non-negative and finite".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be at least 1".into()));
        }
        Ok(())
    }

    fn check_label(&self, label: Label) -> Result<()> {
        if label.0 == 0 || label.0 > self.labels {
            return Err(Error::OutOfRange(format!("label {} (codebook has {} labels)", label, self.labels)));
        }
        Ok(())
    }

    fn check_nuisance(&self, nuisance: Nuisance) -> Result<()> {
        if nuisance.0 == 0 || nuisance.0 > self.nuisances {
            return Err(Error::OutOfRange(format!(
                "nuisance {} (codebook has {} per label)",
                nuisance, self.nuisances
            )));
        }
        Ok(())
    }
}

/// The signal synthesis map `f(u, v)`. Pure in `(label, nuisance, cfg.seed)`.
pub fn synthesize(label: Label, nuisance: Nuisance, cfg: &CodebookConfig) -> Result<DVector<f64>> {
    cfg.check_label(label)?;
    cfg.check_nuisance(nuisance)?;
    let n = cfg.dimension;
    let anchor_sigma = cfg.anchor_spread * cfg.r0 / (2.0 * n as f64).sqrt();
    let offset_sigma = cfg.nuisance_spread * cfg.r0 / (n as f64).sqrt();

    let mut anchor = gaussian_vector(n, &mut stream_rng(cfg.seed, domain::ANCHOR | label.0 as u64));
    anchor *= anchor_sigma;
    if offset_sigma > 0.0 {
        let stream = domain::NUISANCE | ((label.0 as u64) << 28) | nuisance.0 as u64;
        let offset = gaussian_vector(n, &mut stream_rng(cfg.seed, stream));
        anchor.axpy(offset_sigma, &offset, 1.0);
    }
    Ok(anchor)
}

pub(crate) fn distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub struct Codebook {
    dimension: usize,
    r0: f64,
    radius: f64,
    sets: Vec<Vec<Codeword>>,
    min_cross_distance: f64,
    config: Option<CodebookConfig>,
    synthesis_seed: Option<u64>,
    attempts: u32,
}

/// Builds the codebook described by `cfg`, retrying with derived seeds until
/// the cross-label separation holds.
pub fn build_codebook(cfg: &CodebookConfig) -> Result<Codebook> {
    cfg.validate()?;
    let four_r0_sq = 4.0 * cfg.r0 * cfg.r0;
    for attempt in 0..cfg.max_retries {
        let seed = if attempt == 0 { cfg.seed } else { derive_seed(cfg.seed, attempt as u64) };
        let trial_cfg = CodebookConfig { seed, ..cfg.clone() };
        let sets = generate_sets(&trial_cfg)?;
        if !separated(&sets, four_r0_sq) {
            continue;
        }
        let min_cross_distance = min_cross_label_distance(&sets);
        log::debug!("codebook accepted on attempt {} (min cross distance {min_cross_distance})", attempt + 1);
        return Ok(Codebook {
            dimension: cfg.dimension,
            r0: cfg.r0,
            radius: cfg.radius(),
            sets,
            min_cross_distance,
            config: Some(cfg.clone()),
            synthesis_seed: Some(seed),
            attempts: attempt + 1,
        });
    }
    Err(Error::Infeasible {
        attempts: cfg.max_retries,
        reason: format!(
            "could not place {} labels x {} nuisances in dimension {} with separation 2*r0 = {}",
            cfg.labels,
            cfg.nuisances,
            cfg.dimension,
            2.0 * cfg.r0
        ),
    })
}

fn generate_sets(cfg: &CodebookConfig) -> Result<Vec<Vec<Codeword>>> {
    (1..=cfg.labels)
        .map(|i| {
            (1..=cfg.nuisances)
                .map(|v| {
                    Ok(Codeword {
                        label: Label(i),
                        nuisance: Nuisance(v),
                        signal: synthesize(Label(i), Nuisance(v), cfg)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Early-exit check of the separation condition on squared distances.
fn separated(sets: &[Vec<Codeword>], min_sq: f64) -> bool {
    for (i, a_set) in sets.iter().enumerate() {
        for b_set in &sets[i + 1..] {
            for a in a_set {
                for b in b_set {
                    if squared_distance(&a.signal, &b.signal) < min_sq {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn min_cross_label_distance(sets: &[Vec<Codeword>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a_set) in sets.iter().enumerate() {
        for b_set in &sets[i + 1..] {
            for a in a_set {
                for b in b_set {
                    best = best.min(squared_distance(&a.signal, &b.signal));
                }
            }
        }
    }
    best.sqrt()
}

impl Codebook {
    /// Wraps externally synthesized codeword sets. `sets[i]` holds the
    /// signals of label `i + 1`.
    pub fn from_signals(sets: Vec<Vec<DVector<f64>>>, r0: f64, radius: f64) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::Config("a codebook needs at least two labels".into()));
        }
        if !(r0 > 0.0 && r0.is_finite()) || !(radius > 0.0 && radius < r0) {
            return Err(Error::Config(format!("need 0 < r < r0, got r = {radius}, r0 = {r0}")));
        }
        let dimension = sets
            .first()
            .and_then(|s| s.first())
            .map(|c| c.len())
            .ok_or_else(|| Error::Config("empty codeword set".into()))?;
        let mut out = Vec::with_capacity(sets.len());
        for (i, set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("codeword set of label {} is empty", i + 1)));
            }
            let mut words = Vec::with_capacity(set.len());
            for (v, signal) in set.into_iter().enumerate() {
                check_dim(dimension, signal.len())?;
                if signal.iter().any(|s| !s.is_finite()) {
                    return Err(Error::NonFinite(format!("codeword ({}, {})", i + 1, v + 1)));
                }
                words.push(Codeword { label: Label(i + 1), nuisance: Nuisance(v + 1), signal });
            }
            out.push(words);
        }
        let min_cross_distance = min_cross_label_distance(&out);
        if min_cross_distance < 2.0 * r0 {
            return Err(Error::Config(format!(
                "cross-label distance {min_cross_distance} is below 2*r0 = {}",
                2.0 * r0
            )));
        }
        Ok(Self {
            dimension,
            r0,
            radius,
            sets: out,
            min_cross_distance,
            config: None,
            synthesis_seed: None,
            attempts: 1,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_labels(&self) -> usize {
        self.sets.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> {
        (1..=self.sets.len()).map(Label)
    }

    pub fn num_codewords(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Sphere radius `r`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Smallest distance between codewords of different labels.
    pub fn min_cross_distance(&self) -> f64 {
        self.min_cross_distance
    }

    /// Requested configuration, when built from one.
    pub fn config(&self) -> Option<&CodebookConfig> {
        self.config.as_ref()
    }

    /// Seed actually used for synthesis (differs from the requested seed
    /// only when the first draw was rejected).
    pub fn synthesis_seed(&self) -> Option<u64> {
        self.synthesis_seed
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn check_label(&self, label: Label) -> Result<()> {
        if label.0 == 0 || label.0 > self.sets.len() {
            return Err(Error::OutOfRange(format!("label {} (codebook has {} labels)", label, self.sets.len())));
        }
        Ok(())
    }

    pub fn codewords(&self, label: Label) -> Result<&[Codeword]> {
        self.check_label(label)?;
        Ok(&self.sets[label.idx()])
    }

    pub fn codeword(&self, label: Label, nuisance: Nuisance) -> Result<&Codeword> {
        self.codewords(label)?
            .get(nuisance.0.wrapping_sub(1))
            .ok_or_else(|| Error::OutOfRange(format!("nuisance {nuisance} of label {label}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Codeword> {
        self.sets.iter().flatten()
    }

    /// `c_j(y)`: the codeword of `label` closest to `y`; ties go to the
    /// lowest nuisance index.
    pub fn nearest_codeword(&self, y: &DVector<f64>, label: Label) -> Result<(&Codeword, f64)> {
        check_dim(self.dimension, y.len())?;
        let set = self.codewords(label)?;
        let mut best = &set[0];
        let mut best_sq = squared_distance(y, &best.signal);
        for c in &set[1..] {
            let d = squared_distance(y, &c.signal);
            if d < best_sq {
                best = c;
                best_sq = d;
            }
        }
        Ok((best, best_sq.sqrt()))
    }

    /// Global nearest codeword, i.e. the ideal classifier. Ties go to the
    /// lowest `(label, nuisance)`.
    pub fn nearest_codeword_any(&self, y: &DVector<f64>) -> Result<(Label, &Codeword, f64)> {
        check_dim(self.dimension, y.len())?;
        let mut best = &self.sets[0][0];
        let mut best_sq = f64::INFINITY;
        for c in self.iter() {
            let d = squared_distance(y, &c.signal);
            if d < best_sq {
                best = c;
                best_sq = d;
            }
        }
        Ok((best.label, best, best_sq.sqrt()))
    }

    pub fn ideal_classify(&self, y: &DVector<f64>) -> Result<Label> {
        Ok(self.nearest_codeword_any(y)?.0)
    }
}
