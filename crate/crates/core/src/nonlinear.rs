//! Worst-case versus average local gain of a differentiable compression map.
//!
//! Near `x`, `h(x + εo) - h(x) ≈ εJo`. The worst direction gains `σ_max(J)`,
//! a uniformly random one gains `E||Jo||` on average, and for any `J` of rank
//! at most `M` the ratio is at least `sqrt(N/M)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{domain, gaussian_matrix, gaussian_vector, stream_rng, unit_vector};
use crate::stats::mean_ci;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const SECANT_EPSILON: f64 = 1e-4;
pub const DEFAULT_DELTA: f64 = 0.1;

pub trait DifferentiableMap: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobian, if the map has one.
    fn analytic_jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Analytic Jacobian, else central differences with [`DEFAULT_FD_STEP`].
    fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.len())?;
        match self.analytic_jacobian(x) {
            Some(j) => j,
            None => finite_difference_jacobian(self, x, DEFAULT_FD_STEP),
        }
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Column `j` is `(h(x + s e_j) - h(x - s e_j)) / 2s`.
pub fn finite_difference_jacobian<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    check_dim(map.input_dim(), x.len())?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let columns = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let col = (map.evaluate(&xp)? - map.evaluate(&xm)?) / (2.0 * step);
            check_finite("finite-difference evaluation", col.as_slice())?;
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// Largest entrywise `|fd - analytic| / max(|analytic|, 1)`.
pub fn jacobian_agreement(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    analytic.iter().zip(fd.iter()).map(|(a, f)| (f - a).abs() / a.abs().max(1.0)).fold(0.0, f64::max)
}

/// `σ_max(J(x))` and its right singular vector.
pub fn worst_case_direction<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let j = map.jacobian_at(x)?;
    check_finite("Jacobian", j.as_slice())?;
    let svd = j.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (i, &s) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok((s, v_t.row(i).transpose()))
}

pub fn worst_case_rate<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>) -> Result<f64> {
    Ok(worst_case_direction(map, x)?.0)
}

fn mean_gain(j: &DMatrix<f64>, trials: usize, seed: u64) -> (f64, f64) {
    let gains: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|k| (j * unit_vector(j.ncols(), &mut stream_rng(seed, domain::PROBE | k))).norm())
        .collect();
    mean_ci(&gains)
}

/// Monte Carlo `E_o ||J(x) o||` over uniform unit `o`, with a 95% half-width.
pub fn average_case_rate<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if trials < 100 {
        return Err(Error::Config(format!("average rate needs at least 100 trials, got {trials}")));
    }
    let j = map.jacobian_at(x)?;
    check_finite("Jacobian", j.as_slice())?;
    Ok(mean_gain(&j, trials, seed))
}

/// `||h(x + εo) - h(x)|| / ε`.
pub fn secant_rate<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>, o: &DVector<f64>, epsilon: f64) -> Result<f64> {
    check_dim(map.input_dim(), o.len())?;
    let moved = map.evaluate(&(x + o * epsilon))?;
    Ok((moved - map.evaluate(x)?).norm() / epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioReport {
    pub n: usize,
    pub m: usize,
    pub alpha_rate: f64,
    pub beta_rate_mean: f64,
    pub beta_ci: f64,
    /// `NaN` when the map is degenerate at `x`.
    pub ratio: f64,
    pub degenerate: bool,
    pub floor_general: f64,
    pub floor_gaussian: f64,
    pub delta: f64,
    pub passes_general: bool,
    /// `ratio >= (1 - delta) * floor_gaussian`.
    pub passes_gaussian: bool,
    /// Secant along the top singular direction at `epsilon_used`.
    pub secant_worst: f64,
    pub epsilon_used: f64,
    pub mc_trials: usize,
}

pub fn fragility_ratio<F: DifferentiableMap + ?Sized>(map: &F, x: &DVector<f64>, trials: usize, seed: u64) -> Result<RatioReport> {
    fragility_ratio_with(map, x, trials, seed, DEFAULT_DELTA)
}

pub fn fragility_ratio_with<F: DifferentiableMap + ?Sized>(
    map: &F,
    x: &DVector<f64>,
    trials: usize,
    seed: u64,
    delta: f64,
) -> Result<RatioReport> {
    if trials < 100 {
        return Err(Error::Config(format!("average rate needs at least 100 trials, got {trials}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!("delta must lie in [0, 1), got {delta}")));
    }
    let j = map.jacobian_at(x)?;
    check_finite("Jacobian", j.as_slice())?;
    let (n, m) = (map.input_dim(), map.output_dim());
    let svd = j.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (top, alpha) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let (beta, beta_ci) = mean_gain(&j, trials, seed);
    let degenerate = !(beta > 1e-12 * alpha.max(f64::MIN_POSITIVE)) || alpha == 0.0;
    let ratio = if degenerate { f64::NAN } else { alpha / beta };
    let floor_general = (n as f64 / m as f64).sqrt();
    let floor_gaussian = ((n + m) as f64 / m as f64).sqrt();
    let secant_worst = secant_rate(map, x, &v_t.row(top).transpose(), SECANT_EPSILON)?;
    Ok(RatioReport {
        n,
        m,
        alpha_rate: alpha,
        beta_rate_mean: beta,
        beta_ci,
        ratio,
        degenerate,
        floor_general,
        floor_gaussian,
        delta,
        passes_general: ratio >= floor_general,
        passes_gaussian: ratio >= (1.0 - delta) * floor_gaussian,
        secant_worst,
        epsilon_used: SECANT_EPSILON,
        mc_trials: trials,
    })
}

/// `h(y) = Ay`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl DifferentiableMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.a.ncols(), x.len())?;
        Ok(&self.a * x)
    }

    fn analytic_jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(self.a.clone()))
    }
}

/// `h(y) = A tanh(y)`, tanh coordinatewise.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhLinear {
    pub a: DMatrix<f64>,
}

impl DifferentiableMap for TanhLinear {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.a.ncols(), x.len())?;
        Ok(&self.a * x.map(f64::tanh))
    }

    fn analytic_jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if let Err(e) = check_dim(self.a.ncols(), x.len()) {
            return Some(Err(e));
        }
        let mut j = self.a.clone();
        for (mut col, xi) in j.column_iter_mut().zip(x.iter()) {
            col *= 1.0 - xi.tanh().powi(2);
        }
        Some(Ok(j))
    }
}

/// `h(y) = W2 tanh(W1 y + b1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayer {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
}

impl TwoLayer {
    fn pre_activation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.w1.ncols(), x.len())?;
        Ok(&self.w1 * x + &self.b1)
    }
}

impl DifferentiableMap for TwoLayer {
    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.w2 * self.pre_activation(x)?.map(f64::tanh))
    }

    fn analytic_jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.pre_activation(x).map(|s| {
            let mut w2 = self.w2.clone();
            for (mut col, si) in w2.column_iter_mut().zip(s.iter()) {
                col *= 1.0 - si.tanh().powi(2);
            }
            w2 * &self.w1
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Linear,
    Tanh,
    TwoLayer,
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "tanh" => Ok(Self::Tanh),
            "twolayer" => Ok(Self::TwoLayer),
            other => Err(Error::Config(format!("unknown map kind '{other}' (expected linear, tanh or twolayer)"))),
        }
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Tanh => "tanh",
            Self::TwoLayer => "twolayer",
        })
    }
}

/// A seeded member of the map zoo. Weights are i.i.d. Gaussian; the two-layer
/// map has `2M` hidden units and variance-preserving scaling.
pub fn build_map(kind: MapKind, n: usize, m: usize, seed: u64) -> Result<Box<dyn DifferentiableMap>> {
    if n == 0 || m == 0 {
        return Err(Error::Config(format!("map dimensions must be positive, got n = {n}, m = {m}")));
    }
    let mut rng = stream_rng(seed, domain::MAP);
    Ok(match kind {
        MapKind::Linear => Box::new(LinearMap { a: gaussian_matrix(m, n, &mut rng) }),
        MapKind::Tanh => Box::new(TanhLinear { a: gaussian_matrix(m, n, &mut rng) }),
        MapKind::TwoLayer => {
            let h = 2 * m;
            let w1 = gaussian_matrix(h, n, &mut rng) / (n as f64).sqrt();
            let b1 = gaussian_vector(h, &mut rng) * 0.1;
            let w2 = gaussian_matrix(m, h, &mut rng) / (h as f64).sqrt();
            Box::new(TwoLayer { w1, b1, w2 })
        }
    })
}

/// Seeded evaluation point with i.i.d. `N(0, scale²)` entries.
pub fn probe_point(n: usize, scale: f64, seed: u64) -> DVector<f64> {
    gaussian_vector(n, &mut stream_rng(seed, domain::MAP | 1)) * scale
}
