//! Sentence waveforms and the AWGN channel.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{domain, stream_rng};

/// Fixed key of the text-to-waveform surrogate. It is not the experiment
/// seed: a sentence always renders to the same waveform.
const WAVEFORM_KEY: u64 = 0x5eed_0f_a11_7a1c;
/// Segment length in samples; consecutive segments overlap by half.
const SEGMENT: usize = 1024;
const PARTIALS: usize = 3;
const MIN_FREQ: f64 = 0.01;
const MAX_FREQ: f64 = 0.45;

/// Deterministic unit-RMS pseudo-waveform of a sentence: Hann-windowed
/// segments, each a sum of a few sinusoids whose frequencies, phases and
/// amplitudes are keyed by the sentence id.
pub fn sentence_waveform(sentence_id: usize, length: usize) -> Result<DVector<f64>> {
    if length < 2 {
        return Err(Error::Config(format!("waveform length must be at least 2, got {length}")));
    }
    let mut rng = stream_rng(WAVEFORM_KEY, domain::WAVEFORM | sentence_id as u64);
    let hop = SEGMENT / 2;
    let mut out = DVector::<f64>::zeros(length);
    let mut start = 0usize;
    while start < length + hop {
        let partials: Vec<(f64, f64, f64)> = (0..PARTIALS)
            .map(|_| {
                let f = rng.random_range(MIN_FREQ..MAX_FREQ);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.5..1.0);
                (f, phase, amp)
            })
            .collect();
        for k in 0..SEGMENT {
            // Segments start half a segment before the signal.
            let Some(n) = (start + k).checked_sub(hop) else { continue };
            if n >= length {
                break;
            }
            let window = 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / SEGMENT as f64).cos();
            let value: f64 = partials
                .iter()
                .map(|&(f, phase, amp)| amp * (std::f64::consts::TAU * f * k as f64 + phase).sin())
                .sum();
            out[n] += window * value;
        }
        start += hop;
    }
    let rms: f64 = (out.norm_squared() / length as f64).sqrt();
    Ok(out / rms)
}

/// `10 log10(||signal||² / ||noise||²)`.
pub fn snr_db(signal: &DVector<f64>, noise: &DVector<f64>) -> f64 {
    10.0 * (signal.norm_squared() / noise.norm_squared()).log10()
}

/// `y = gain * x + noise`, the noise white Gaussian rescaled so that the
/// realized SNR is exactly `snr_db`. An infinite SNR returns `gain * x`.
pub fn awgn_channel<R: Rng + ?Sized>(x: &DVector<f64>, snr_db: f64, gain: f64, rng: &mut R) -> Result<DVector<f64>> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("channel SNR must be finite or +inf, got {snr_db}")));
    }
    if !gain.is_finite() {
        return Err(Error::Config(format!("channel gain must be finite, got {gain}")));
    }
    let clean = x * gain;
    if snr_db == f64::INFINITY {
        return Ok(clean);
    }
    let mut noise = DVector::from_iterator(x.len(), (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let target = clean.norm_squared() / 10f64.powf(snr_db / 10.0);
    noise *= (target / noise.norm_squared()).sqrt();
    Ok(clean + noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::rho_max;
    use crate::rng::trial_rng;

    #[test]
    fn waveform_is_deterministic_unit_rms() {
        let a = sentence_waveform(3, 5000).unwrap();
        let b = sentence_waveform(3, 5000).unwrap();
        assert_eq!(a, b);
        assert!((a.norm_squared() / 5000.0 - 1.0).abs() < 1e-9);
        assert_ne!(a, sentence_waveform(4, 5000).unwrap());
    }

    #[test]
    fn distinct_sentences_are_uncorrelated() {
        let w: Vec<_> = (0..4).map(|i| sentence_waveform(i, 16384).unwrap()).collect();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(rho_max(&w[i], &w[j], 1.0).unwrap() < 0.2);
                    assert!(rho_max(&w[i], &w[j], 0.1).unwrap() < 0.2);
                }
            }
        }
    }

    #[test]
    fn channel_hits_requested_snr() {
        let x = sentence_waveform(0, 8192).unwrap();
        let mut rng = trial_rng(1, 0);
        let y = awgn_channel(&x, 28.0, 1.0, &mut rng).unwrap();
        assert!((snr_db(&x, &(&y - &x)) - 28.0).abs() < 1e-9);
        assert_eq!(awgn_channel(&x, f64::INFINITY, 1.0, &mut rng).unwrap(), x);
        assert!(awgn_channel(&x, f64::NAN, 1.0, &mut rng).is_err());
    }

    #[test]
    fn channel_noise_is_white() {
        let n = 20000;
        let x = DVector::from_element(n, 1.0);
        let noise = awgn_channel(&x, 0.0, 1.0, &mut trial_rng(2, 0)).unwrap() - &x;
        let e = noise.norm_squared();
        for k in 1..=10 {
            let ac: f64 = (0..n - k).map(|i| noise[i] * noise[i + k]).sum::<f64>() / e;
            assert!(ac.abs() < 3.0 / (n as f64).sqrt(), "lag {k}: {ac}");
        }
    }
}
