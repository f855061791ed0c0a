//! Synthetic end-to-end correlation-detection experiment.
//!
//! Each sentence renders to a fixed waveform, passes through an AWGN channel
//! and is decoded by the compressed classifier over the sentence waveforms.
//! An attacked copy is pushed toward one shared target sentence. The decoded
//! sentence is re-rendered and its leading segment is cross-correlated with
//! the received signal; a low peak correlation flags the decode as
//! inconsistent with what was actually received.

mod signal;
mod xcorr;

pub use signal::{awgn_channel, sentence_waveform, snr_db};
pub use xcorr::rho_max;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{targeted_attack, DEFAULT_TARGETED_MARGIN};
use crate::codebook::{Codebook, Label};
use crate::compressor::{sample_compressor, Classifier, LinearCompressor, Outcome};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, domain, gaussian_vector, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub num_sentences: usize,
    pub waveform_length: usize,
    /// Decision statistic dimension of the classifier.
    pub compressed_dim: usize,
    /// Classifier sphere radius as a fraction of the smallest compressed
    /// distance between two sentences.
    pub radius_fraction: f64,
    pub channel_snr_db: f64,
    pub channel_gain: f64,
    pub attack_snr_db: f64,
    pub correlation_threshold: f64,
    pub reconstruction_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_sentences: 10,
            waveform_length: 131_072,
            compressed_dim: 4,
            radius_fraction: 0.45,
            channel_snr_db: 28.0,
            channel_gain: 1.0,
            attack_snr_db: 35.0,
            correlation_threshold: 0.4,
            reconstruction_fraction: 0.10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_sentences == 0 {
            return bad("num_sentences must be positive".into());
        }
        if self.compressed_dim == 0 || self.compressed_dim >= self.waveform_length {
            return bad(format!(
                "need 1 <= compressed_dim < waveform_length, got {} and {}",
                self.compressed_dim, self.waveform_length
            ));
        }
        if !(self.radius_fraction > 0.0 && self.radius_fraction < 0.5) {
            return bad(format!("radius_fraction must lie in (0, 0.5), got {}", self.radius_fraction));
        }
        if self.channel_snr_db.is_nan() || self.channel_snr_db == f64::NEG_INFINITY || !self.attack_snr_db.is_finite() {
            return bad("SNR values must be finite (channel may be +inf)".into());
        }
        if !(self.channel_gain.is_finite() && self.channel_gain != 0.0) {
            return bad(format!("channel_gain must be finite and nonzero, got {}", self.channel_gain));
        }
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold < 1.0) {
            return bad(format!("correlation_threshold must lie in (0, 1), got {}", self.correlation_threshold));
        }
        if !(self.reconstruction_fraction > 0.0 && self.reconstruction_fraction <= 1.0) {
            return bad(format!("reconstruction_fraction must lie in (0, 1], got {}", self.reconstruction_fraction));
        }
        Ok(())
    }

    /// Id of the shared attack target, rendered in addition to the
    /// `num_sentences` test sentences.
    pub fn target_sentence(&self) -> usize {
        self.num_sentences
    }
}

pub fn synth_waveform(sentence_id: usize, cfg: &PipelineConfig) -> Result<DVector<f64>> {
    if sentence_id > cfg.target_sentence() {
        return Err(Error::OutOfRange(format!("sentence {sentence_id} (have {} plus the target)", cfg.num_sentences)));
    }
    sentence_waveform(sentence_id, cfg.waveform_length)
}

/// Waveforms, compressor and classifier codebook of one experiment.
#[derive(Debug, Clone)]
pub struct PipelineWorld {
    pub waveforms: Vec<DVector<f64>>,
    pub compressor: LinearCompressor,
    pub codebook: Codebook,
}

impl PipelineWorld {
    /// Sentence `s` is label `s + 1`.
    pub fn build(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let waveforms = (0..=cfg.target_sentence())
            .into_par_iter()
            .map(|s| synth_waveform(s, cfg))
            .collect::<Result<Vec<_>>>()?;
        let compressor = sample_compressor(cfg.compressed_dim, cfg.waveform_length, derive_seed(cfg.seed, 0))?;
        let mut min_ambient = f64::INFINITY;
        let mut min_compressed = f64::INFINITY;
        let coords: Vec<_> = waveforms.iter().map(|w| compressor.basis().tr_mul(w)).collect();
        for i in 0..waveforms.len() {
            for j in 0..i {
                min_ambient = min_ambient.min((&waveforms[i] - &waveforms[j]).norm());
                min_compressed = min_compressed.min((&coords[i] - &coords[j]).norm());
            }
        }
        let radius = cfg.radius_fraction * min_compressed;
        let sets = waveforms.iter().map(|w| vec![w.clone()]).collect();
        let codebook = Codebook::from_signals(sets, 0.5 * min_ambient * (1.0 - 1e-9), radius)?;
        Ok(Self { waveforms, compressor, codebook })
    }

    pub fn classifier(&self) -> Classifier<'_> {
        Classifier::new(&self.compressor, &self.codebook).expect("dimensions agree by construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InjectedAttack {
    Feasible {
        y2: DVector<f64>,
        w2: DVector<f64>,
        /// `10 log10(||y2||² / ||w2||²)`.
        ratio_db: f64,
    },
    /// Even the minimum-norm attack exceeds the power budget, or it does not
    /// change the decision.
    Infeasible { reason: String, min_ratio_db: f64 },
}

/// Attacks `y1` toward `target` with exactly the configured power ratio.
///
/// The minimum-norm row-space attack `a` decides the outcome; the rest of
/// the power budget goes into a null-space component orthogonal to `y1`,
/// which the classifier cannot see. If `a` alone already exceeds the budget
/// by more than 1 dB the trial is infeasible.
pub fn inject_attack(
    y1: &DVector<f64>,
    lc: &LinearCompressor,
    cb: &Codebook,
    target: Label,
    cfg: &PipelineConfig,
    stream: u64,
) -> Result<InjectedAttack> {
    let clf = Classifier::new(lc, cb)?;
    let a = targeted_attack(&clf, y1, target, DEFAULT_TARGETED_MARGIN)?.w;
    let a_norm2 = a.norm_squared();
    let k = 10f64.powf(cfg.attack_snr_db / 10.0);
    let min_ratio_db = snr_db(&(y1 + &a), &a);
    // ||y1 + w||² = K ||w||² with w = a + b v, v ⟂ y1 and v ⟂ a.
    let s2 = (y1.norm_squared() + 2.0 * y1.dot(&a)) / (k - 1.0);
    let w2 = if s2 >= a_norm2 {
        let mut v = lc.null_component(&gaussian_vector(y1.len(), &mut stream_rng(cfg.seed, domain::PROBE | stream)))?;
        let n1 = lc.null_component(y1)?;
        let n1_norm2 = n1.norm_squared();
        if n1_norm2 > 0.0 {
            v.axpy(-v.dot(&n1) / n1_norm2, &n1, 1.0);
        }
        let v_norm = v.norm();
        if v_norm > 0.0 {
            &a + v * ((s2 - a_norm2).sqrt() / v_norm)
        } else {
            a.clone()
        }
    } else if min_ratio_db >= cfg.attack_snr_db - 1.0 {
        a.clone()
    } else {
        return Ok(InjectedAttack::Infeasible {
            reason: format!("minimum attack ratio {min_ratio_db:.2} dB is below the budget"),
            min_ratio_db,
        });
    };
    let y2 = y1 + w2;
    // Report the difference actually present in the emitted signal.
    let w2 = &y2 - y1;
    if clf.classify(&y2)?.outcome != Outcome::Label(target) {
        return Ok(InjectedAttack::Infeasible { reason: "attack does not reach the target".into(), min_ratio_db });
    }
    let ratio_db = snr_db(&y2, &w2);
    Ok(InjectedAttack::Feasible { y2, w2, ratio_db })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTrial {
    pub sentence_id: usize,
    pub attacked: bool,
    /// `false` only for attacked trials whose attack could not be built; the
    /// row then describes the unattacked signal.
    pub feasible: bool,
    /// Decoded sentence id, `None` on reject.
    pub decoded: Option<usize>,
    /// Zero when the decode was rejected (nothing to reconstruct).
    pub rho_max: f64,
    pub flagged: bool,
    /// Realized channel SNR.
    pub snr_measured: f64,
    /// Realized `||y2||² / ||w2||²` in dB for attacked trials.
    pub attack_ratio_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub clean_trials: usize,
    pub clean_correct: usize,
    pub clean_correct_unflagged: usize,
    pub attacked_feasible: usize,
    pub attacked_on_target: usize,
    pub attacked_flagged: usize,
    /// Smallest `rho_max` over correctly decoded clean trials.
    pub min_clean_rho: f64,
    /// Largest `rho_max` over feasible attacked trials.
    pub max_attacked_rho: f64,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRun {
    pub trials: Vec<PipelineTrial>,
    pub summary: PipelineSummary,
}

fn decode_and_score(
    world: &PipelineWorld,
    clf: &Classifier<'_>,
    y: &DVector<f64>,
    cfg: &PipelineConfig,
) -> Result<(Option<usize>, f64)> {
    match clf.classify(y)?.outcome {
        Outcome::Label(l) => {
            let s = l.get() - 1;
            Ok((Some(s), rho_max(&world.waveforms[s], y, cfg.reconstruction_fraction)?))
        }
        Outcome::Reject => Ok((None, 0.0)),
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let world = PipelineWorld::build(cfg)?;
    run_pipeline_in(&world, cfg)
}

/// One clean and one attacked trial per sentence, ordered by sentence id.
pub fn run_pipeline_in(world: &PipelineWorld, cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let clf = world.classifier();
    let target = Label(cfg.target_sentence() + 1);
    let pairs = (0..cfg.num_sentences)
        .into_par_iter()
        .map(|s| {
            let x = &world.waveforms[s];
            let y1 = awgn_channel(x, cfg.channel_snr_db, cfg.channel_gain, &mut stream_rng(cfg.seed, domain::CHANNEL | s as u64))?;
            let snr_measured = snr_db(&(x * cfg.channel_gain), &(&y1 - x * cfg.channel_gain));
            let (decoded, rho) = decode_and_score(world, &clf, &y1, cfg)?;
            let clean = PipelineTrial {
                sentence_id: s,
                attacked: false,
                feasible: true,
                decoded,
                rho_max: rho,
                flagged: rho < cfg.correlation_threshold,
                snr_measured,
                attack_ratio_db: None,
            };
            let attacked = match inject_attack(&y1, &world.compressor, &world.codebook, target, cfg, s as u64)? {
                InjectedAttack::Feasible { y2, ratio_db, .. } => {
                    let (decoded, rho) = decode_and_score(world, &clf, &y2, cfg)?;
                    PipelineTrial { attacked: true, decoded, rho_max: rho, flagged: rho < cfg.correlation_threshold, attack_ratio_db: Some(ratio_db), ..clean.clone() }
                }
                InjectedAttack::Infeasible { min_ratio_db, .. } => {
                    PipelineTrial { attacked: true, feasible: false, attack_ratio_db: Some(min_ratio_db), ..clean.clone() }
                }
            };
            Ok([clean, attacked])
        })
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<PipelineTrial> = pairs.into_iter().flatten().collect();
    let summary = summarize(&trials, cfg);
    Ok(PipelineRun { trials, summary })
}

fn summarize(trials: &[PipelineTrial], cfg: &PipelineConfig) -> PipelineSummary {
    let target = cfg.target_sentence();
    let clean: Vec<_> = trials.iter().filter(|t| !t.attacked).collect();
    let correct: Vec<_> = clean.iter().filter(|t| t.decoded == Some(t.sentence_id)).collect();
    let attacked: Vec<_> = trials.iter().filter(|t| t.attacked && t.feasible).collect();
    let min_clean_rho = correct.iter().map(|t| t.rho_max).fold(f64::INFINITY, f64::min);
    let max_attacked_rho = attacked.iter().map(|t| t.rho_max).fold(f64::NEG_INFINITY, f64::max);
    PipelineSummary {
        clean_trials: clean.len(),
        clean_correct: correct.len(),
        clean_correct_unflagged: correct.iter().filter(|t| !t.flagged).count(),
        attacked_feasible: attacked.len(),
        attacked_on_target: attacked.iter().filter(|t| t.decoded == Some(target)).count(),
        attacked_flagged: attacked.iter().filter(|t| t.flagged).count(),
        min_clean_rho,
        max_attacked_rho,
        separation: min_clean_rho - max_attacked_rho,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig { num_sentences: 4, seed: 3, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        for bad in [
            PipelineConfig { correlation_threshold: 1.0, ..Default::default() },
            PipelineConfig { reconstruction_fraction: 0.0, ..Default::default() },
            PipelineConfig { attack_snr_db: f64::NAN, ..Default::default() },
            PipelineConfig { compressed_dim: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(synth_waveform(11, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn attack_is_additive_and_on_budget() {
        let cfg = small();
        let world = PipelineWorld::build(&cfg).unwrap();
        let clf = world.classifier();
        let y1 = awgn_channel(&world.waveforms[0], 28.0, 1.0, &mut stream_rng(1, 0)).unwrap();
        match inject_attack(&y1, &world.compressor, &world.codebook, Label(cfg.target_sentence() + 1), &cfg, 0).unwrap() {
            InjectedAttack::Feasible { y2, w2, ratio_db } => {
                assert_eq!(&y2 - &y1, w2);
                assert!((ratio_db - 35.0).abs() < 1e-6, "{ratio_db}");
                assert_eq!(clf.classify(&y2).unwrap().outcome, Outcome::Label(Label(cfg.target_sentence() + 1)));
            }
            InjectedAttack::Infeasible { reason, .. } => panic!("{reason}"),
        }
    }

    #[test]
    fn small_run_separates() {
        let run = run_pipeline(&small()).unwrap();
        assert_eq!(run.trials.len(), 8);
        let s = run.summary;
        assert_eq!(s.clean_correct, 4);
        assert_eq!(s.clean_correct_unflagged, 4);
        assert_eq!(s.attacked_flagged, s.attacked_feasible);
        assert!(s.separation >= 0.2);
    }
}
