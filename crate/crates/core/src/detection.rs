//! Decompress-and-compare detection.
//!
//! After the compressed classifier announces label `i` for `y`, a denoiser
//! reconstructs the closest clean signal of label `i` and the detector flags
//! `y` when the reconstruction is far from `y`. An attacker that moved `x`
//! only slightly cannot also have moved it next to a codeword of label `i`,
//! so with `||w|| < min_{c ∈ X_i} ||c - x|| - r` the residual exceeds `r` by
//! the triangle inequality.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{targeted_attack, DEFAULT_TARGETED_MARGIN};
use crate::codebook::{Codebook, Label};
use crate::compressor::{Classifier, LinearCompressor, Outcome};
use crate::error::{check_dim, Error, Result};
use crate::rng::{domain, stream_rng, unit_vector};
use crate::scenario::{draw_near_codeword, draw_other_label};

/// Maps an observation and a claimed label to the closest clean signal of
/// that label.
pub trait Denoiser {
    fn dimension(&self) -> usize;

    /// Reconstruction and its distance to `y`.
    fn denoise(&self, y: &DVector<f64>, label: Label) -> Result<(DVector<f64>, f64)>;
}

/// Exact nearest-codeword lookup.
impl Denoiser for Codebook {
    fn dimension(&self) -> usize {
        Codebook::dimension(self)
    }

    fn denoise(&self, y: &DVector<f64>, label: Label) -> Result<(DVector<f64>, f64)> {
        let (c, d) = self.nearest_codeword(y, label)?;
        Ok((c.signal.clone(), d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionVerdict {
    pub predicted: Label,
    pub residual: f64,
    pub threshold: f64,
    pub flagged: bool,
    /// Only known when the clean input is.
    pub guarantee_radius: Option<f64>,
}

pub fn detect<D: Denoiser + ?Sized>(model: &D, y: &DVector<f64>, predicted: Label, threshold: f64) -> Result<DetectionVerdict> {
    check_dim(model.dimension(), y.len())?;
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("detection threshold must be positive, got {threshold}")));
    }
    let (_, residual) = model.denoise(y, predicted)?;
    Ok(DetectionVerdict { predicted, residual, threshold, flagged: residual > threshold, guarantee_radius: None })
}

/// [`detect`] with the clean input `x` known, filling in the guarantee
/// radius for the predicted label.
pub fn detect_known(cb: &Codebook, x: &DVector<f64>, y: &DVector<f64>, predicted: Label, threshold: f64) -> Result<DetectionVerdict> {
    let mut v = detect(cb, y, predicted, threshold)?;
    v.guarantee_radius = Some(guarantee_radius(cb, x, predicted)?);
    Ok(v)
}

/// `min_{c ∈ X_label} ||c - x|| - r`. Non-positive means no guarantee.
pub fn guarantee_radius(cb: &Codebook, x: &DVector<f64>, label: Label) -> Result<f64> {
    let (_, d) = cb.nearest_codeword(x, label)?;
    Ok(d - cb.radius())
}

/// Populations fed to [`detection_roc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RocConfig {
    /// Clean inputs sit at `offset_fraction * r` from a codeword.
    pub offset_fraction: f64,
    /// Clean trials add channel noise of norm `clean_noise * r`.
    pub clean_noise: f64,
    pub margin: f64,
    /// Number of thresholds in the grid.
    pub grid: usize,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self { offset_fraction: 0.5, clean_noise: 0.25, margin: DEFAULT_TARGETED_MARGIN, grid: 41 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackedResidual {
    pub residual: f64,
    pub norm: f64,
    pub guarantee_radius: f64,
}

impl AttackedResidual {
    pub fn within_guarantee(&self) -> bool {
        self.norm < self.guarantee_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocTable {
    pub points: Vec<RocPoint>,
    /// Residuals of correctly decoded clean trials.
    pub clean: Vec<f64>,
    /// Successful attacks only.
    pub attacked: Vec<AttackedResidual>,
    /// Clean trials rejected or misdecoded.
    pub clean_dropped: usize,
    /// Attacks that did not produce the target decision.
    pub attacks_failed: usize,
}

impl RocTable {
    /// True-positive rate at `threshold` restricted to attacks inside the
    /// guarantee radius. `None` when there are none.
    pub fn guaranteed_tpr(&self, threshold: f64) -> Option<f64> {
        let inside: Vec<_> = self.attacked.iter().filter(|a| a.within_guarantee()).collect();
        if inside.is_empty() {
            return None;
        }
        Some(inside.iter().filter(|a| a.residual > threshold).count() as f64 / inside.len() as f64)
    }
}

fn exceed_rate(values: impl Iterator<Item = f64> + Clone, threshold: f64) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    values.filter(|&v| v > threshold).count() as f64 / n as f64
}

enum RocSample {
    Clean(Option<f64>),
    Attacked(Option<AttackedResidual>),
}

/// Residual populations from `trials` clean and `trials` attacked inputs,
/// and the TPR/FPR of `residual > threshold` over a threshold grid from 0 to
/// just past the largest residual.
pub fn detection_roc(lc: &LinearCompressor, cb: &Codebook, cfg: &RocConfig, trials: usize, seed: u64) -> Result<RocTable> {
    if cfg.grid < 2 {
        return Err(Error::Config("ROC grid needs at least two thresholds".into()));
    }
    if cb.num_labels() < 2 {
        return Err(Error::Config("ROC needs at least two labels".into()));
    }
    let clf = Classifier::new(lc, cb)?;
    let r = cb.radius();
    let samples = (0..2 * trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, domain::PROBE | k);
            let draw = draw_near_codeword(cb, cfg.offset_fraction * r, &mut rng);
            if k % 2 == 0 {
                let mut y = draw.x;
                if cfg.clean_noise > 0.0 {
                    y.axpy(cfg.clean_noise * r, &unit_vector(y.len(), &mut rng), 1.0);
                }
                let res = match clf.classify(&y)?.outcome {
                    Outcome::Label(l) if l == draw.label => Some(detect(cb, &y, l, r)?.residual),
                    _ => None,
                };
                Ok(RocSample::Clean(res))
            } else {
                let target = draw_other_label(cb, draw.label, &mut rng);
                let p = targeted_attack(&clf, &draw.x, target, cfg.margin)?;
                let y = &draw.x + &p.w;
                let res = if clf.classify(&y)?.outcome == Outcome::Label(target) {
                    let v = detect_known(cb, &draw.x, &y, target, r)?;
                    Some(AttackedResidual {
                        residual: v.residual,
                        norm: p.norm,
                        guarantee_radius: v.guarantee_radius.expect("known input"),
                    })
                } else {
                    None
                };
                Ok(RocSample::Attacked(res))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = RocTable { points: Vec::new(), clean: Vec::new(), attacked: Vec::new(), clean_dropped: 0, attacks_failed: 0 };
    for s in samples {
        match s {
            RocSample::Clean(Some(v)) => table.clean.push(v),
            RocSample::Clean(None) => table.clean_dropped += 1,
            RocSample::Attacked(Some(a)) => table.attacked.push(a),
            RocSample::Attacked(None) => table.attacks_failed += 1,
        }
    }
    let top = table.clean.iter().copied().chain(table.attacked.iter().map(|a| a.residual)).fold(r, f64::max) * 1.05;
    table.points = (0..cfg.grid)
        .map(|j| {
            let threshold = top * j as f64 / (cfg.grid - 1) as f64;
            RocPoint {
                threshold,
                tpr: exceed_rate(table.attacked.iter().map(|a| a.residual), threshold),
                fpr: exceed_rate(table.clean.iter().copied(), threshold),
            }
        })
        .collect();
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuaranteeSweep {
    /// Successful attacks with `||w||` below the guarantee radius.
    pub eligible: usize,
    pub detected: usize,
    /// Successful attacks outside the guarantee radius (not part of the
    /// claim) and how many of them were flagged anyway.
    pub outside: usize,
    pub outside_detected: usize,
    pub attempts: usize,
}

impl GuaranteeSweep {
    pub fn missed(&self) -> usize {
        self.eligible - self.detected
    }
}

/// Attacks random inputs until `instances` successful attacks inside the
/// guarantee radius have been checked at threshold `r`, or `max_attempts`
/// inputs have been tried.
pub fn guarantee_sweep(clf: &Classifier<'_>, offset_fraction: f64, margin: f64, instances: usize, max_attempts: usize, seed: u64) -> Result<GuaranteeSweep> {
    guarantee_sweep_at(clf, clf.codebook().radius(), offset_fraction, margin, instances, max_attempts, seed)
}

/// As [`guarantee_sweep`] with an explicit detection threshold. Below `r`
/// the guarantee still holds; above it, misses become possible.
pub fn guarantee_sweep_at(
    clf: &Classifier<'_>,
    threshold: f64,
    offset_fraction: f64,
    margin: f64,
    instances: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<GuaranteeSweep> {
    let cb = clf.codebook();
    if cb.num_labels() < 2 {
        return Err(Error::Config("sweep needs at least two labels".into()));
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let r = cb.radius();
    let mut sweep = GuaranteeSweep { eligible: 0, detected: 0, outside: 0, outside_detected: 0, attempts: 0 };
    let chunk = instances.max(1);
    while sweep.eligible < instances && sweep.attempts < max_attempts {
        let start = sweep.attempts as u64;
        let end = (sweep.attempts + chunk).min(max_attempts) as u64;
        let batch = (start..end)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(seed, domain::PROBE | k);
                let draw = draw_near_codeword(cb, offset_fraction * r, &mut rng);
                let target = draw_other_label(cb, draw.label, &mut rng);
                let p = targeted_attack(clf, &draw.x, target, margin)?;
                let y = &draw.x + &p.w;
                if clf.classify(&y)?.outcome != Outcome::Label(target) {
                    return Ok(None);
                }
                let v = detect_known(cb, &draw.x, &y, target, threshold)?;
                Ok(Some((p.norm < v.guarantee_radius.expect("known input"), v.flagged)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (inside, flagged) in batch.into_iter().flatten() {
            if inside {
                if sweep.eligible < instances {
                    sweep.eligible += 1;
                    sweep.detected += usize::from(flagged);
                }
            } else {
                sweep.outside += 1;
                sweep.outside_detected += usize::from(flagged);
            }
        }
        sweep.attempts = end as usize;
    }
    Ok(sweep)
}
