//! Maximum normalized cross-correlation over lags.

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Largest `|<seg, y[m..m + S]>| / (||seg|| ||y[m..m + S]||)` over the lags
/// `m` at which `seg` (the leading `fraction` of `xhat`) fits entirely inside
/// `y`. If the segment is longer than `y`, the roles are swapped, so with
/// `fraction = 1` the value is symmetric in its arguments.
pub fn rho_max(xhat: &DVector<f64>, y: &DVector<f64>, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("reconstruction fraction must lie in (0, 1], got {fraction}")));
    }
    if xhat.is_empty() || y.is_empty() {
        return Err(Error::Precondition("empty waveform".into()));
    }
    let seg_len = ((fraction * xhat.len() as f64).round() as usize).clamp(1, xhat.len());
    let seg = &xhat.as_slice()[..seg_len];
    let (short, long) = if seg_len <= y.len() { (seg, y.as_slice()) } else { (y.as_slice(), seg) };
    let short_energy = short.iter().map(|v| v * v).sum::<f64>();
    let long_energy = long.iter().map(|v| v * v).sum::<f64>();
    if !(short_energy > 0.0) || !(long_energy > 0.0) {
        return Err(Error::Precondition("zero-energy input".into()));
    }
    let raw = correlate(short, long);
    let mut prefix = Vec::with_capacity(long.len() + 1);
    prefix.push(0.0);
    for v in long {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v * v);
    }
    let s = short.len();
    let mut best = 0.0f64;
    for (m, c) in raw.iter().enumerate() {
        let window = prefix[m + s] - prefix[m];
        // Windows of (numerically) zero energy carry no correlation.
        if window <= long_energy * 1e-14 {
            continue;
        }
        best = best.max(c.abs() / (short_energy * window).sqrt());
    }
    Ok(best.min(1.0))
}

/// `out[m] = Σ_n short[n] long[n + m]` for `m = 0..=long.len() - short.len()`.
fn correlate(short: &[f64], long: &[f64]) -> Vec<f64> {
    let size = (long.len() + short.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = short.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = long.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = x.conj() * y;
    }
    ifft.process(&mut a);
    let scale = size as f64;
    a[..=long.len() - short.len()].iter().map(|c| c.re / scale).collect()
}
