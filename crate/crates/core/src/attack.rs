//! Closed-form minimum-norm attacks on the compressed classifier.
//!
//! For `h(y) = Ay` the cheapest way to make `x` look like `t` is
//! `w = P(t - x)`, so every attack here lives in the row space of `A` and is
//! built in the `M`-dimensional coordinates `z = Qᵀx`.

use nalgebra::DVector;
use serde::Serialize;

use crate::codebook::{distance, Label, Nuisance};
use crate::compressor::{Classifier, LinearCompressor, Outcome};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PerturbationKind {
    Targeted(Label),
    Untargeted,
    RandomSphere(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackStatus {
    Constructed,
    /// `||P(c_i - x)|| <= r`: no construction needed, a zero perturbation
    /// is returned.
    AlreadyMisclassifiable,
    /// The input is not inside `B_1` to begin with.
    AlreadyOutside,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub w: DVector<f64>,
    pub kind: PerturbationKind,
    pub norm: f64,
    /// Requested margin: radius scale for targeted attacks, overshoot factor
    /// for untargeted ones.
    pub margin: f64,
    /// Targeted: projected residual to the chosen codeword after the attack.
    /// Untargeted: radius that was cleared (`r`).
    pub landing_radius: f64,
    pub status: AttackStatus,
    /// Codeword the construction is anchored on (`c_i` or `c_1`).
    pub codeword: Option<(Label, Nuisance)>,
    /// `||P(c - x)||` for that codeword.
    pub projected_distance: f64,
    /// `||c - x||` for that codeword.
    pub ambient_distance: f64,
}

impl Perturbation {
    pub fn random_sphere(w: DVector<f64>, radius: f64) -> Self {
        let norm = w.norm();
        Self {
            w,
            kind: PerturbationKind::RandomSphere(radius),
            norm,
            margin: 0.0,
            landing_radius: f64::NAN,
            status: AttackStatus::Constructed,
            codeword: None,
            projected_distance: f64::NAN,
            ambient_distance: f64::NAN,
        }
    }

    pub fn is_constructed(&self) -> bool {
        self.status == AttackStatus::Constructed
    }
}

/// `d(x, t) = ||P(t - x)||`.
pub fn effective_distance(lc: &LinearCompressor, x: &DVector<f64>, t: &DVector<f64>) -> Result<f64> {
    check_dim(x.len(), t.len())?;
    lc.projected_norm(&(t - x))
}

/// The minimizer `w = P(t - x)` of `||w||` subject to `A(x + w) = At`.
pub fn min_norm_perturbation(lc: &LinearCompressor, x: &DVector<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(x.len(), t.len())?;
    lc.project(&(t - x))
}

pub const DEFAULT_TARGETED_MARGIN: f64 = 0.99;
pub const DEFAULT_UNTARGETED_MARGIN: f64 = 0.01;

/// Targeted attack toward `target`.
///
/// The target codeword `c` minimizes `||P(c - x)||` over `X_target`. The
/// attack moves `z` along `u = P(c - x)/||P(c - x)||` and stops at projected
/// distance `rho = margin * min(r, rho_max)` from `Pc`, where `rho_max` is the
/// largest landing radius at which `c` is still strictly closer than every
/// codeword of another label. When no other label interferes this is the
/// textbook `||w|| = ||P(c - x)|| - margin * r`.
pub fn targeted_attack(clf: &Classifier<'_>, x: &DVector<f64>, target: Label, margin: f64) -> Result<Perturbation> {
    let cb = clf.codebook();
    let lc = clf.compressor();
    cb.check_label(target)?;
    check_dim(lc.cols(), x.len())?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::Config(format!("targeted margin must lie in (0, 1), got {margin}")));
    }
    if cb.ideal_classify(x)? == target {
        return Err(Error::Precondition(format!("x already belongs to target label {target}")));
    }
    let r = cb.radius();
    let z = lc.basis().tr_mul(x);

    let targets = clf.codeword_coords(target);
    let (best_idx, proj_dist) = targets
        .iter()
        .map(|c| distance(&z, c))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
    let target_word = &cb.codewords(target)?[best_idx];
    let ambient_distance = distance(x, &target_word.signal);
    let base = Perturbation {
        w: DVector::zeros(x.len()),
        kind: PerturbationKind::Targeted(target),
        norm: 0.0,
        margin,
        landing_radius: proj_dist,
        status: AttackStatus::AlreadyMisclassifiable,
        codeword: Some((target, target_word.nuisance)),
        projected_distance: proj_dist,
        ambient_distance,
    };
    if proj_dist <= r {
        return Ok(base);
    }

    let u = (&targets[best_idx] - &z) / proj_dist;
    // Landing at t along u, target residual is D - t and a competitor c' sits
    // at ||a + t u|| with a = z - Qᵀc'. The squares differ by a term linear
    // in t, so "target strictly closer" is a half-line containing t = D.
    let mut t_need = f64::NEG_INFINITY;
    for label in cb.labels().filter(|&l| l != target) {
        for c in clf.codeword_coords(label) {
            let a = &z - c;
            let k = proj_dist + a.dot(&u);
            let rhs = proj_dist * proj_dist - a.norm_squared();
            if k > 0.0 {
                t_need = t_need.max(rhs / (2.0 * k));
            } else if rhs >= 0.0 {
                t_need = t_need.max(proj_dist);
            }
        }
    }
    let rho_max = proj_dist - t_need;
    let mut rho = margin * r.min(rho_max);
    let mut t = proj_dist - rho;
    // Guard against rounding right at the boundary.
    for _ in 0..64 {
        let landed = &z + &u * t;
        if clf.classify_coords(&landed).outcome == Outcome::Label(target) {
            break;
        }
        rho *= 0.5;
        t = proj_dist - rho;
    }
    let w = lc.lift(&(&u * t))?;
    Ok(Perturbation {
        norm: w.norm(),
        w,
        landing_radius: rho,
        status: AttackStatus::Constructed,
        ..base
    })
}

/// Untargeted attack pushing `x` out of `B_1`, `1` being its current label.
///
/// Walks from `z` along `u = P(x - c_1)/||P(x - c_1)||` and, each time the
/// walk sits inside the projected sphere of some codeword of the current
/// label, jumps to that sphere's exit point times `1 + margin`. With a single
/// codeword per label this gives `||w|| = (r - ||P(x - c_1)||)(1 + margin)`.
pub fn untargeted_attack(clf: &Classifier<'_>, x: &DVector<f64>, margin: f64) -> Result<Perturbation> {
    let cb = clf.codebook();
    let lc = clf.compressor();
    check_dim(lc.cols(), x.len())?;
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Config(format!("untargeted margin must be positive, got {margin}")));
    }
    let r = cb.radius();
    let z = lc.basis().tr_mul(x);
    let noop = |codeword, proj, amb| Perturbation {
        w: DVector::zeros(x.len()),
        kind: PerturbationKind::Untargeted,
        norm: 0.0,
        margin,
        landing_radius: r,
        status: AttackStatus::AlreadyOutside,
        codeword,
        projected_distance: proj,
        ambient_distance: amb,
    };
    let source = match clf.classify_coords(&z).outcome {
        Outcome::Label(l) => l,
        Outcome::Reject => return Ok(noop(None, f64::NAN, f64::NAN)),
    };
    let (c1, ambient_distance) = cb.nearest_codeword(x, source)?;
    let coords = clf.codeword_coords(source);
    let offset = &z - &coords[c1.nuisance.get() - 1];
    let p = offset.norm();
    if p >= r {
        return Ok(noop(Some((source, c1.nuisance)), p, ambient_distance));
    }
    let u = if p > 0.0 {
        offset / p
    } else {
        let mut e = DVector::zeros(lc.rows());
        e[0] = 1.0;
        e
    };

    let mut t = 0.0f64;
    loop {
        let mut moved = false;
        for c in coords {
            let a = &z - c;
            let b = a.dot(&u);
            let disc = b * b - (a.norm_squared() - r * r);
            if disc <= 0.0 {
                continue;
            }
            let (lo, hi) = (-b - disc.sqrt(), -b + disc.sqrt());
            if t > lo && t < hi {
                t = hi * (1.0 + margin);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let w = lc.lift(&(&u * t))?;
    Ok(Perturbation {
        norm: w.norm(),
        w,
        kind: PerturbationKind::Untargeted,
        margin,
        landing_radius: r,
        status: AttackStatus::Constructed,
        codeword: Some((source, c1.nuisance)),
        projected_distance: p,
        ambient_distance,
    })
}

/// `sqrt(1 + eps) sqrt(M/N) dist - r`.
pub fn targeted_bound(epsilon: f64, m: usize, n: usize, dist: f64, r: f64) -> f64 {
    (1.0 + epsilon).sqrt() * (m as f64 / n as f64).sqrt() * dist - r
}

/// `r - sqrt(1 - eps) sqrt(M/N) dist`.
pub fn untargeted_bound(epsilon: f64, m: usize, n: usize, dist: f64, r: f64) -> f64 {
    r - (1.0 - epsilon).sqrt() * (m as f64 / n as f64).sqrt() * dist
}

/// Upper bound on the targeted attack size, using the ambient-nearest
/// codeword `c_i` of `target`.
pub fn attack_size_bound(clf: &Classifier<'_>, x: &DVector<f64>, target: Label, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    let cb = clf.codebook();
    let lc = clf.compressor();
    let (_, dist) = cb.nearest_codeword(x, target)?;
    Ok(targeted_bound(epsilon, lc.rows(), lc.cols(), dist, cb.radius()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, Codebook, CodebookConfig};
    use crate::compressor::sample_compressor;
    use crate::rng::{gaussian_vector, trial_rng, unit_vector};
    use nalgebra::DMatrix;

    #[test]
    fn effective_distance_basics() {
        let lc = sample_compressor(5, 30, 1).unwrap();
        let mut rng = trial_rng(1, 0);
        let x = gaussian_vector(30, &mut rng);
        assert_eq!(effective_distance(&lc, &x, &x).unwrap(), 0.0);
        let n = lc.null_component(&gaussian_vector(30, &mut rng)).unwrap();
        let t = &x + &n;
        assert!(effective_distance(&lc, &x, &t).unwrap() < 1e-12);
        assert!((&t - &x).norm() > 1.0);
    }

    #[test]
    fn bound_arithmetic() {
        let b = targeted_bound(0.21, 1, 20, 10.0, 1.0);
        assert!((b - 1.4597).abs() < 1e-4, "{b}");
        assert_eq!(targeted_bound(0.0, 7, 7, 3.0, 0.5), 2.5);
    }

    #[test]
    fn identity_projector_reduces_to_ambient_geometry() {
        let cfg = CodebookConfig { dimension: 20, labels: 3, nuisances: 1, seed: 4, ..Default::default() };
        let cb = build_codebook(&cfg).unwrap();
        let lc = LinearCompressor::from_matrix(DMatrix::identity(20, 20)).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let x = cb.codeword(Label(1), Nuisance(1)).unwrap().signal.clone();
        let margin = 1.0 - 1e-9;
        let w = targeted_attack(&clf, &x, Label(2), margin).unwrap();
        let ci = &cb.codeword(Label(2), Nuisance(1)).unwrap().signal;
        let expected = (ci - &x).norm() - cb.radius();
        assert!((w.norm - expected).abs() < 1e-6, "{} vs {expected}", w.norm);
        assert_eq!(clf.classify(&(&x + &w.w)).unwrap().outcome, Outcome::Label(Label(2)));
        // Matches the ambient-nearest bound at eps = 0.
        let bound = attack_size_bound(&clf, &x, Label(2), 0.0).unwrap();
        assert!((bound - expected).abs() < 1e-9);
    }

    #[test]
    fn targeted_attack_errors() {
        let cb = build_codebook(&CodebookConfig { dimension: 100, seed: 1, ..Default::default() }).unwrap();
        let lc = sample_compressor(10, 100, 1).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let x = cb.codeword(Label(1), Nuisance(1)).unwrap().signal.clone();
        assert!(matches!(targeted_attack(&clf, &x, Label(9), 0.9), Err(Error::OutOfRange(_))));
        assert!(matches!(targeted_attack(&clf, &x, Label(2), 1.0), Err(Error::Config(_))));
        assert!(matches!(targeted_attack(&clf, &x, Label(1), 0.9), Err(Error::Precondition(_))));
    }

    #[test]
    fn targeted_attack_lives_in_row_space_and_succeeds() {
        let cb = build_codebook(&CodebookConfig { dimension: 200, seed: 2, ..Default::default() }).unwrap();
        let lc = sample_compressor(20, 200, 2).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        for k in 0..50u64 {
            let mut rng = trial_rng(2, k);
            let x = &cb.codeword(Label(1), Nuisance(1 + (k as usize % 3))).unwrap().signal
                + unit_vector(200, &mut rng) * (0.5 * cb.radius());
            let target = Label(2 + (k as usize % 4));
            let p = targeted_attack(&clf, &x, target, DEFAULT_TARGETED_MARGIN).unwrap();
            assert!(p.is_constructed());
            assert!((p.norm - p.w.norm()).abs() <= 1e-10 * p.norm);
            let leak = lc.null_component(&p.w).unwrap().norm();
            assert!(leak <= 1e-8 * p.norm);
            assert!(p.norm <= p.projected_distance - p.landing_radius + 1e-9);
            assert_eq!(clf.classify(&(&x + &p.w)).unwrap().outcome, Outcome::Label(target));
        }
    }

    #[test]
    fn degenerate_target_is_flagged() {
        // Both codewords project to the same point, so x is already inside B_2.
        let cb = Codebook::from_signals(
            vec![vec![DVector::from_vec(vec![0.0, 0.0])], vec![DVector::from_vec(vec![0.0, 4.0])]],
            2.0,
            1.0,
        )
        .unwrap();
        let lc = LinearCompressor::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.0]);
        let p = targeted_attack(&clf, &x, Label(2), 0.9).unwrap();
        assert_eq!(p.status, AttackStatus::AlreadyMisclassifiable);
        assert_eq!(p.norm, 0.0);
    }

    #[test]
    fn untargeted_from_codeword_has_norm_r_times_overshoot() {
        let cfg = CodebookConfig { dimension: 300, nuisances: 1, seed: 3, ..Default::default() };
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(15, 300, 3).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let x = cb.codeword(Label(2), Nuisance(1)).unwrap().signal.clone();
        let p = untargeted_attack(&clf, &x, 0.05).unwrap();
        assert!(p.is_constructed());
        assert!((p.norm - cb.radius() * 1.05).abs() < 1e-12);
        assert_ne!(clf.classify(&(&x + &p.w)).unwrap().outcome, Outcome::Label(Label(2)));
    }

    #[test]
    fn untargeted_clears_every_sphere_of_the_label() {
        let cb = build_codebook(&CodebookConfig { dimension: 300, nuisances: 4, seed: 5, ..Default::default() }).unwrap();
        let lc = sample_compressor(15, 300, 5).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        for k in 0..40u64 {
            let mut rng = trial_rng(5, k);
            let x = &cb.codeword(Label(1), Nuisance(1)).unwrap().signal + unit_vector(300, &mut rng) * 0.2;
            let p = untargeted_attack(&clf, &x, DEFAULT_UNTARGETED_MARGIN).unwrap();
            if p.is_constructed() {
                let d = clf.classify(&(&x + &p.w)).unwrap();
                assert_ne!(d.outcome, Outcome::Label(Label(1)));
                assert!(d.residual(Label(1)) >= cb.radius());
            }
        }
    }

    #[test]
    fn untargeted_noop_outside() {
        let cb = build_codebook(&CodebookConfig { dimension: 100, seed: 1, ..Default::default() }).unwrap();
        let lc = sample_compressor(10, 100, 1).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let far = lc.lift(&DVector::from_element(10, 100.0)).unwrap();
        let p = untargeted_attack(&clf, &far, 0.01).unwrap();
        assert_eq!(p.status, AttackStatus::AlreadyOutside);
        assert_eq!(p.norm, 0.0);
    }
}
