//! Monte Carlo estimates of random-noise robustness and empirical checks of
//! the concentration inequalities behind the attack bounds.
//!
//! Two probability spaces are used. Robustness estimates fix the compressor
//! and resample the perturbation `w`. Tail and band checks resample `A`
//! itself on every trial; there `||Pv||² = (Av)ᵀ(AAᵀ)⁻¹(Av)` is evaluated
//! through a Cholesky factor of the Gram matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codebook::Label;
use crate::compressor::{Classifier, MembershipRule, Outcome};
use crate::error::{check_dim, Error, Result};
use crate::rng::{domain, gaussian_matrix, stream_rng, trial_rng, unit_vector};
use crate::stats::{binomial_std_err, mean_ci, median, Proportion};

/// Uniform sample from the sphere of radius `l` in `R^n`.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, l: f64, rng: &mut R) -> Result<DVector<f64>> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Config(format!("sphere radius must be positive, got {l}")));
    }
    if n == 0 {
        return Err(Error::Config("sphere dimension must be positive".into()));
    }
    Ok(unit_vector(n, rng) * l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessEstimate {
    pub radius: f64,
    pub trials: usize,
    pub survive_fraction: f64,
    pub epsilon_hat: f64,
    /// Binomial 95% half-width.
    pub confidence_halfwidth: f64,
}

impl RobustnessEstimate {
    fn from_count(radius: f64, survived: Proportion) -> Self {
        let p = survived.fraction();
        Self {
            radius,
            trials: survived.trials,
            survive_fraction: p,
            epsilon_hat: 1.0 - p,
            confidence_halfwidth: survived.halfwidth95(),
        }
    }
}

/// Outcome of `x + w` for trial `k`, `w` uniform on the sphere of radius `l`.
fn perturbed_outcome(clf: &Classifier<'_>, x: &DVector<f64>, z: &DVector<f64>, l: f64, seed: u64, k: u64) -> Result<Outcome> {
    if l == 0.0 {
        return Ok(clf.classify(x)?.outcome);
    }
    let w = sample_sphere(x.len(), l, &mut trial_rng(seed, k))?;
    match clf.rule() {
        MembershipRule::Strict => {
            let shifted = z + clf.compressor().basis().tr_mul(&w);
            Ok(clf.classify_coords(&shifted).outcome)
        }
        MembershipRule::NearestCodeword => Ok(clf.classify(&(x + w))?.outcome),
    }
}

fn count_outcomes(
    clf: &Classifier<'_>,
    x: &DVector<f64>,
    l: f64,
    trials: usize,
    seed: u64,
    wanted: Outcome,
) -> Result<Proportion> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::Config(format!("perturbation radius must be non-negative, got {l}")));
    }
    check_dim(clf.compressor().cols(), x.len())?;
    let z = clf.compressor().basis().tr_mul(x);
    let hits = (0..trials as u64)
        .into_par_iter()
        .map(|k| perturbed_outcome(clf, x, &z, l, seed, k).map(|o| usize::from(o == wanted)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(Proportion::new(hits, trials))
}

/// Fraction of random sphere-`l` perturbations that leave the decision
/// unchanged. `x` must currently be classified (not rejected).
pub fn estimate_robustness(clf: &Classifier<'_>, x: &DVector<f64>, l: f64, trials: usize, seed: u64) -> Result<RobustnessEstimate> {
    let base = clf.classify(x)?.outcome;
    if base == Outcome::Reject {
        return Err(Error::Precondition("x is rejected by the classifier".into()));
    }
    Ok(RobustnessEstimate::from_count(l, count_outcomes(clf, x, l, trials, seed, base)?))
}

/// Fraction of random sphere-`l` perturbations that send `x` to `target`.
pub fn misdirection_rate(
    clf: &Classifier<'_>,
    x: &DVector<f64>,
    target: Label,
    l: f64,
    trials: usize,
    seed: u64,
) -> Result<Proportion> {
    clf.codebook().check_label(target)?;
    if clf.classify(x)?.outcome == Outcome::Label(target) {
        return Err(Error::OutOfRange(format!("target {target} is already the current label")));
    }
    count_outcomes(clf, x, l, trials, seed, Outcome::Label(target))
}

/// Radius below which random noise keeps `x` in its class w.h.p.:
/// `(1 - eps) sqrt(N/M) sqrt(r² - (M/N) dist²)`, `dist = ||x - c_1||`.
pub fn survival_radius_bound(epsilon: f64, m: usize, n: usize, r: f64, dist: f64) -> f64 {
    let ratio = m as f64 / n as f64;
    let inner = r * r - ratio * dist * dist;
    if inner <= 0.0 {
        return 0.0;
    }
    (1.0 - epsilon) * ratio.recip().sqrt() * inner.sqrt()
}

/// Radius below which random noise does not reach label `i` w.h.p.:
/// `sqrt((1 - eps)/(1 + eps)) dist - r / (sqrt(1 + eps) sqrt(M/N))`,
/// `dist = ||c_i - x||`.
pub fn misdirection_radius_bound(epsilon: f64, m: usize, n: usize, r: f64, dist: f64) -> f64 {
    let ratio = m as f64 / n as f64;
    ((1.0 - epsilon) / (1.0 + epsilon)).sqrt() * dist - r / ((1.0 + epsilon).sqrt() * ratio.sqrt())
}

/// Largest `l` in `[0, hi]` with survive fraction at least `level`, located
/// by `steps` bisection steps. Every probe reuses the same trial streams, so
/// the directions are common across radii.
pub fn largest_survival_radius(
    clf: &Classifier<'_>,
    x: &DVector<f64>,
    level: f64,
    hi: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) || !(hi > 0.0 && hi.is_finite()) {
        return Err(Error::Config(format!("need 0 < level <= 1 and hi > 0, got {level}, {hi}")));
    }
    if estimate_robustness(clf, x, hi, trials, seed)?.survive_fraction >= level {
        return Ok(hi);
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if estimate_robustness(clf, x, mid, trials, seed)?.survive_fraction >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `||P u||` for the row space of a freshly drawn `A`, via the Gram matrix.
fn fresh_projected_norm(a: &DMatrix<f64>, u: &DVector<f64>) -> Option<f64> {
    let au = a * u;
    let gram = a * a.transpose();
    let chol = gram.cholesky()?;
    let half = chol.l().solve_lower_triangular(&au)?;
    Some(half.norm())
}

fn check_shape(m: usize, n: usize) -> Result<()> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!("need 1 <= M < N, got M = {m}, N = {n}")));
    }
    Ok(())
}

fn fresh_norms(m: usize, n: usize, trials: usize, seed: u64, f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Result<DVector<f64>> + Sync) -> Result<Vec<f64>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k);
            let a = gaussian_matrix(m, n, &mut rng);
            let u = f(&mut rng)?;
            fresh_projected_norm(&a, &u).ok_or_else(|| Error::Degenerate("singular Gram matrix".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCheckReport {
    pub epsilon: f64,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    /// Frequency of `||Pv|| <= sqrt(1 - eps) sqrt(M/N) ||v||`.
    pub empirical_lower_tail: f64,
    /// Frequency of `||Pv|| >= sqrt(1 + eps) sqrt(M/N) ||v||`.
    pub empirical_upper_tail: f64,
    /// `exp(-M eps² / 4)`.
    pub bound_lower: f64,
    /// `exp(-M eps² / 12)`.
    pub bound_upper: f64,
    /// `exp(-M (eps²/2 - eps³/3) / 2)`, a second bound on the same upper event.
    pub bound_upper_alt: f64,
    pub median_ratio: f64,
    pub mean_ratio: f64,
}

impl TailCheckReport {
    /// Allowance above a bound: `3` binomial standard errors at `p = bound`.
    pub fn allowance(&self, bound: f64) -> f64 {
        3.0 * binomial_std_err(bound, self.trials)
    }

    pub fn lower_ok(&self) -> bool {
        self.empirical_lower_tail <= self.bound_lower + self.allowance(self.bound_lower)
    }

    pub fn upper_ok(&self) -> bool {
        self.empirical_upper_tail <= self.bound_upper + self.allowance(self.bound_upper)
    }

    pub fn upper_alt_ok(&self) -> bool {
        self.empirical_upper_tail <= self.bound_upper_alt + self.allowance(self.bound_upper_alt)
    }

    pub fn expected_ratio(&self) -> f64 {
        (self.m as f64 / self.n as f64).sqrt()
    }
}

/// Draws a fresh `A` per trial and records `||Pv|| / ||v||` for a fixed unit
/// `v`.
pub fn projection_tail_check(m: usize, n: usize, epsilon: f64, trials: usize, seed: u64) -> Result<TailCheckReport> {
    check_shape(m, n)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    Ok(tail_report(m, n, epsilon, &projection_ratios(m, n, trials, seed)?))
}

/// `||Pv|| / ||v||` for a fixed unit `v` under `trials` fresh draws of `A`.
pub fn projection_ratios(m: usize, n: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    check_shape(m, n)?;
    let v = unit_vector(n, &mut stream_rng(seed, domain::PROBE));
    fresh_norms(m, n, trials, seed, |_| Ok(v.clone()))
}

/// Tail frequencies of precomputed ratios `||Pv||/||v||`.
pub fn tail_report(m: usize, n: usize, epsilon: f64, ratios: &[f64]) -> TailCheckReport {
    let scale = (m as f64 / n as f64).sqrt();
    let lo = (1.0 - epsilon).sqrt() * scale;
    let hi = (1.0 + epsilon).sqrt() * scale;
    let trials = ratios.len();
    let freq = |count: usize| count as f64 / trials as f64;
    let mf = m as f64;
    TailCheckReport {
        epsilon,
        m,
        n,
        trials,
        empirical_lower_tail: freq(ratios.iter().filter(|&&s| s <= lo).count()),
        empirical_upper_tail: freq(ratios.iter().filter(|&&s| s >= hi).count()),
        bound_lower: (-mf * epsilon * epsilon / 4.0).exp(),
        bound_upper: (-mf * epsilon * epsilon / 12.0).exp(),
        bound_upper_alt: (-mf * (epsilon.powi(2) / 2.0 - epsilon.powi(3) / 3.0) / 2.0).exp(),
        median_ratio: median(ratios),
        mean_ratio: mean_ci(ratios).0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandReport {
    pub m: usize,
    pub n: usize,
    pub l: f64,
    pub dist: f64,
    pub delta: f64,
    pub trials: usize,
    /// `sqrt(M/N (dist² + l²))`.
    pub center: f64,
    pub inside: Proportion,
    pub mean_norm: f64,
}

impl BandReport {
    pub fn inside_fraction(&self) -> f64 {
        self.inside.fraction()
    }
}

/// Checks that `||P(d + w)||`, with `||d|| = dist` fixed and `w` uniform on
/// the sphere of radius `l`, stays within `(1 ± delta)` of
/// `sqrt(M/N (dist² + l²))`. Both `A` and `w` are redrawn every trial.
pub fn ball_membership_band_check(m: usize, n: usize, l: f64, dist: f64, delta: f64, trials: usize, seed: u64) -> Result<BandReport> {
    check_shape(m, n)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(l > 0.0 && dist >= 0.0 && l.is_finite() && dist.is_finite()) {
        return Err(Error::Config("need l > 0 and dist >= 0".into()));
    }
    let d = unit_vector(n, &mut stream_rng(seed, domain::PROBE)) * dist;
    let norms = fresh_norms(m, n, trials, seed, |rng| Ok(&d + sample_sphere(n, l, rng)?))?;
    let center = ((m as f64 / n as f64) * (dist * dist + l * l)).sqrt();
    let inside = norms
        .iter()
        .filter(|&&s| s >= (1.0 - delta) * center && s <= (1.0 + delta) * center)
        .count();
    Ok(BandReport {
        m,
        n,
        l,
        dist,
        delta,
        trials,
        center,
        inside: Proportion::new(inside, trials),
        mean_norm: mean_ci(&norms).0,
    })
}
