//! Linear compression `h(y) = Ay`, the row-space projector `P = A⁺A`, and
//! the compressed-domain classifier.
//!
//! The projector is kept in factored form: `basis` is an `N x M` matrix `Q`
//! with orthonormal columns spanning the row space of `A`, obtained from a
//! Householder QR of `Aᵀ`, so `P = QQᵀ` and `||Pv|| = ||Qᵀv||`. The dense
//! `N x N` matrix is only materialized on request.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::codebook::{distance, Codebook, Label};
use crate::error::{check_dim, Error, Result};
use crate::rng::{domain, gaussian_matrix, stream_rng};

#[derive(Debug, Clone)]
pub struct LinearCompressor {
    matrix: DMatrix<f64>,
    basis: DMatrix<f64>,
    seed: Option<u64>,
    projector: OnceLock<DMatrix<f64>>,
}

/// Draws `A` with i.i.d. standard Gaussian entries from `seed`.
pub fn sample_compressor(m: usize, n: usize, seed: u64) -> Result<LinearCompressor> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!("compression requires 1 <= M < N, got M = {m}, N = {n}")));
    }
    if 2 * m > n {
        log::warn!("M = {m} exceeds N/2 = {}; the compression is weak", n / 2);
    }
    let a = gaussian_matrix(m, n, &mut stream_rng(seed, domain::COMPRESSOR));
    let mut lc = LinearCompressor::from_matrix(a)?;
    lc.seed = Some(seed);
    Ok(lc)
}

impl LinearCompressor {
    /// Wraps an explicit `M x N` matrix of full row rank (`M <= N`; `M = N`
    /// is allowed here so that the uncompressed case can be studied).
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m > n {
            return Err(Error::Config(format!("need 1 <= M <= N, got {m} x {n}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("compression matrix".into()));
        }
        let qr = a.transpose().qr();
        let r = qr.r();
        let scale = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = scale * (n as f64) * f64::EPSILON * 16.0;
        if r.diagonal().iter().any(|v| v.abs() <= tol) {
            return Err(Error::Degenerate("compression matrix is rank deficient".into()));
        }
        Ok(Self { matrix: a, basis: qr.q(), seed: None, projector: OnceLock::new() })
    }

    /// `M`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// `N`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Orthonormal basis `Q` of the row space.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `h(y) = Ay`.
    pub fn compress(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.cols(), y.len())?;
        Ok(&self.matrix * y)
    }

    /// `Qᵀv`: coordinates of `Pv` in the row-space basis.
    pub fn coordinates(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.cols(), v.len())?;
        Ok(self.basis.tr_mul(v))
    }

    /// `Pv`.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.basis * self.coordinates(v)?)
    }

    /// `(I - P)v`, the component invisible to the classifier.
    pub fn null_component(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v - self.project(v)?)
    }

    pub fn projected_norm(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.coordinates(v)?.norm())
    }

    /// Lifts row-space coordinates back to `R^N`.
    pub fn lift(&self, coords: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.rows(), coords.len())?;
        Ok(&self.basis * coords)
    }

    /// Dense `P`, computed on first use and cached. `N x N` memory.
    pub fn projector(&self) -> &DMatrix<f64> {
        self.projector.get_or_init(|| &self.basis * self.basis.transpose())
    }

    pub fn diagnostics(&self) -> ProjectorDiagnostics {
        let method = if self.cols() <= SPECTRUM_LIMIT { RankMethod::Spectrum } else { RankMethod::Certificate };
        projector_diagnostics(self.projector(), method)
    }
}

/// Above this size the rank is certified from trace and idempotence instead
/// of a full eigendecomposition.
pub const SPECTRUM_LIMIT: usize = 400;

/// Eigenvalues count as 0 or 1 when within this distance.
pub const SPECTRUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RankMethod {
    /// Symmetric eigendecomposition of `(P + Pᵀ)/2`.
    Spectrum,
    /// For symmetric `S`, `||S² - S||_F² = Σ (λ² - λ)²`, so a small
    /// idempotence residual pins every eigenvalue near 0 or 1 and the rank
    /// equals the rounded trace.
    Certificate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorDiagnostics {
    /// `max |P - Pᵀ|`.
    pub symmetry_error: f64,
    /// `||P² - P||_F`.
    pub idempotence_error: f64,
    pub trace: f64,
    /// Number of eigenvalues near 1.
    pub rank: usize,
    /// Every eigenvalue within `SPECTRUM_TOL` of 0 or 1.
    pub spectrum_clean: bool,
    pub method: RankMethod,
}

pub fn projector_diagnostics(p: &DMatrix<f64>, method: RankMethod) -> ProjectorDiagnostics {
    let n = p.nrows();
    let mut symmetry_error = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            symmetry_error = symmetry_error.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    let idempotence_error = (p * p - p).norm();
    let sym = (p + p.transpose()) * 0.5;
    let trace = sym.trace();
    let (rank, spectrum_clean) = match method {
        RankMethod::Spectrum => {
            let eig = sym.symmetric_eigenvalues();
            let rank = eig.iter().filter(|&&l| (l - 1.0).abs() <= SPECTRUM_TOL).count();
            let clean = eig.iter().all(|&l| l.abs() <= SPECTRUM_TOL || (l - 1.0).abs() <= SPECTRUM_TOL);
            (rank, clean)
        }
        RankMethod::Certificate => {
            let residual = (&sym * &sym - &sym).norm();
            // |λ||λ - 1| <= residual forces min(|λ|, |λ - 1|) <= 2 residual
            // once residual < 1/8.
            let clean = residual < 0.5 * SPECTRUM_TOL;
            (trace.round().max(0.0) as usize, clean)
        }
    };
    ProjectorDiagnostics { symmetry_error, idempotence_error, trace, rank, spectrum_clean, method }
}

/// How membership in `B_i` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MembershipRule {
    /// `min_{c ∈ X_i} ||P(y - c)|| < r`: exact membership of `Ay` in `B_i`.
    #[default]
    Strict,
    /// `||P(y - c_i(y))|| < r` with `c_i(y)` the ambient-nearest codeword.
    NearestCodeword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Label(Label),
    Reject,
}

impl Outcome {
    pub fn label(self) -> Option<Label> {
        match self {
            Outcome::Label(l) => Some(l),
            Outcome::Reject => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierDecision {
    pub outcome: Outcome,
    /// Projected residual per label, index `i - 1` for label `i`.
    pub residuals: Vec<f64>,
}

impl ClassifierDecision {
    pub fn residual(&self, label: Label) -> f64 {
        self.residuals[label.idx()]
    }
}

/// Compressed classifier `g(h(y))` over a codebook. Caches `Qᵀc` for every
/// codeword.
#[derive(Debug, Clone)]
pub struct Classifier<'a> {
    lc: &'a LinearCompressor,
    cb: &'a Codebook,
    rule: MembershipRule,
    coords: Vec<Vec<DVector<f64>>>,
}

impl<'a> Classifier<'a> {
    pub fn new(lc: &'a LinearCompressor, cb: &'a Codebook) -> Result<Self> {
        check_dim(lc.cols(), cb.dimension())?;
        let coords = cb
            .labels()
            .map(|l| {
                cb.codewords(l)
                    .expect("label from codebook")
                    .iter()
                    .map(|c| lc.basis.tr_mul(&c.signal))
                    .collect()
            })
            .collect();
        Ok(Self { lc, cb, rule: MembershipRule::default(), coords })
    }

    pub fn with_rule(mut self, rule: MembershipRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn rule(&self) -> MembershipRule {
        self.rule
    }

    pub fn compressor(&self) -> &'a LinearCompressor {
        self.lc
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.cb
    }

    pub fn radius(&self) -> f64 {
        self.cb.radius()
    }

    /// Cached `Qᵀc` for every codeword of `label`.
    pub(crate) fn codeword_coords(&self, label: Label) -> &[DVector<f64>] {
        &self.coords[label.idx()]
    }

    pub fn classify(&self, y: &DVector<f64>) -> Result<ClassifierDecision> {
        check_dim(self.lc.cols(), y.len())?;
        let z = self.lc.basis.tr_mul(y);
        let residuals = match self.rule {
            MembershipRule::Strict => self.strict_residuals(&z),
            MembershipRule::NearestCodeword => self
                .cb
                .labels()
                .map(|l| {
                    let (c, _) = self.cb.nearest_codeword(y, l)?;
                    Ok(distance(&z, &self.coords[l.idx()][c.nuisance.get() - 1]))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(self.decide(residuals))
    }

    /// Strict-rule decision from row-space coordinates `z = Qᵀy`.
    pub(crate) fn classify_coords(&self, z: &DVector<f64>) -> ClassifierDecision {
        self.decide(self.strict_residuals(z))
    }

    fn strict_residuals(&self, z: &DVector<f64>) -> Vec<f64> {
        self.coords
            .iter()
            .map(|set| set.iter().map(|c| distance(z, c)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Smallest residual below `r` wins, then the lowest label.
    fn decide(&self, residuals: Vec<f64>) -> ClassifierDecision {
        let r = self.cb.radius();
        let mut best: Option<(usize, f64)> = None;
        for (i, &res) in residuals.iter().enumerate() {
            if res < r && best.is_none_or(|(_, b)| res < b) {
                best = Some((i, res));
            }
        }
        let outcome = match best {
            Some((i, _)) => Outcome::Label(Label(i + 1)),
            None => Outcome::Reject,
        };
        ClassifierDecision { outcome, residuals }
    }
}

/// One-shot strict classification.
pub fn classify(lc: &LinearCompressor, cb: &Codebook, y: &DVector<f64>) -> Result<ClassifierDecision> {
    Classifier::new(lc, cb)?.classify(y)
}
