//! The operator zoo: structured finite-dimensional operators, their orbits
//! and weak orbits, power norms, and spectral radius by two independent
//! routes (eigenvalues and the Gelfand formula).
//!
//! Coordinates carry the Euclidean norm. Functionals act through the bilinear
//! pairing `<x', x> = sum_j x'_j x_j`, whose dual norm is again Euclidean.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMatrix, LinalgError, C64, ONE, ZERO};
use crate::seqspace::{ComplexSeq, NonNegSeq, SeqError};
use crate::serde_util;

/// Threshold on `sup ||T^n|| / ||T^0||` above which the power-bounded probe
/// reports failure.
pub const POWER_BOUND_THRESHOLD: f64 = 1e6;

/// Maximum accepted nesting of `scaled` in serialized specs before folding.
pub const MAX_SCALED_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: operator has dimension {expected}, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid operator: {0}")]
    InvalidSpec(String),
    #[error("spectral computation failed: {0}")]
    EigenFailure(LinalgError),
    #[error(transparent)]
    Linalg(LinalgError),
    #[error("sample {sample} is annihilated by every functional in the family")]
    DegenerateFamily { sample: usize },
    #[error("functional family is empty")]
    EmptyFamily,
    #[error("zero vector where a nonzero one is required")]
    ZeroVector,
    #[error("horizon {got} is below the minimum {min}")]
    InvalidHorizon { got: usize, min: usize },
    #[error(transparent)]
    Seq(#[from] SeqError),
}

impl From<LinalgError> for OperatorError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::EigenFailure { .. } => OperatorError::EigenFailure(e),
            other => OperatorError::Linalg(other),
        }
    }
}

/// A vector in `C^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorC(#[serde(with = "serde_util::complex_vec")] pub Vec<C64>);

/// A functional on `C^N`, acting by the bilinear pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionalC(#[serde(with = "serde_util::complex_vec")] pub Vec<C64>);

impl VectorC {
    pub fn basis(n: usize, j: usize) -> Self {
        let mut v = vec![ZERO; n];
        v[j] = ONE;
        VectorC(v)
    }

    pub fn norm(&self) -> f64 {
        linalg::vec_norm(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FunctionalC {
    pub fn basis(n: usize, j: usize) -> Self {
        FunctionalC(VectorC::basis(n, j).0)
    }

    pub fn norm(&self) -> f64 {
        linalg::vec_norm(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pair(&self, x: &VectorC) -> C64 {
        linalg::pair(&self.0, &x.0)
    }
}

/// Random unit vector with i.i.d. complex Gaussian coordinates.
pub fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm = linalg::vec_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|z| z / norm).collect();
        }
    }
}

/// Structured description of a finite-dimensional operator.
///
/// `Jordan` is `lambda I + S` with `S e_j = e_{j+1}`, the same orientation as
/// `WeightedShift` (`e_j -> w_j e_{j+1}`, `e_{N-1} -> 0`, `N - 1` weights).
/// Nested `Scaled` variants are folded on construction, so `inner` is never
/// itself `Scaled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorRepr", into = "OperatorRepr")]
pub enum OperatorSpec {
    Dense(CMatrix),
    Diagonal(Vec<C64>),
    WeightedShift {
        weights: Vec<C64>,
        dim: usize,
    },
    Jordan {
        eigenvalue: C64,
        size: usize,
    },
    Scaled {
        factor: C64,
        inner: Box<OperatorSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub(crate) enum OperatorRepr {
    Dense {
        #[serde(with = "serde_util::complex_rows")]
        rows: CMatrix,
    },
    Diagonal {
        #[serde(with = "serde_util::complex_vec")]
        entries: Vec<C64>,
    },
    WeightedShift {
        #[serde(with = "serde_util::complex_vec")]
        weights: Vec<C64>,
        dim: usize,
    },
    Jordan {
        #[serde(with = "serde_util::complex")]
        lambda: C64,
        size: usize,
    },
    Scaled {
        #[serde(with = "serde_util::complex")]
        factor: C64,
        inner: Box<OperatorRepr>,
    },
}

impl OperatorRepr {
    fn depth(&self) -> usize {
        match self {
            OperatorRepr::Scaled { inner, .. } => 1 + inner.depth(),
            _ => 0,
        }
    }
}

impl TryFrom<OperatorRepr> for OperatorSpec {
    type Error = OperatorError;

    fn try_from(r: OperatorRepr) -> Result<Self, OperatorError> {
        if r.depth() > MAX_SCALED_DEPTH {
            return Err(OperatorError::InvalidSpec(format!(
                "scaled nesting deeper than {MAX_SCALED_DEPTH}"
            )));
        }
        match r {
            OperatorRepr::Dense { rows } => OperatorSpec::dense(rows),
            OperatorRepr::Diagonal { entries } => OperatorSpec::diagonal(entries),
            OperatorRepr::WeightedShift { weights, dim } => {
                OperatorSpec::weighted_shift(weights, dim)
            }
            OperatorRepr::Jordan { lambda, size } => OperatorSpec::jordan(lambda, size),
            OperatorRepr::Scaled { factor, inner } => {
                OperatorSpec::scaled(factor, OperatorSpec::try_from(*inner)?)
            }
        }
    }
}

impl From<OperatorSpec> for OperatorRepr {
    fn from(s: OperatorSpec) -> Self {
        match s {
            OperatorSpec::Dense(rows) => OperatorRepr::Dense { rows },
            OperatorSpec::Diagonal(entries) => OperatorRepr::Diagonal { entries },
            OperatorSpec::WeightedShift { weights, dim } => {
                OperatorRepr::WeightedShift { weights, dim }
            }
            OperatorSpec::Jordan { eigenvalue, size } => OperatorRepr::Jordan {
                lambda: eigenvalue,
                size,
            },
            OperatorSpec::Scaled { factor, inner } => OperatorRepr::Scaled {
                factor,
                inner: Box::new(OperatorRepr::from(*inner)),
            },
        }
    }
}

fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

impl OperatorSpec {
    pub fn dense(m: CMatrix) -> Result<Self, OperatorError> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(OperatorError::InvalidSpec(format!(
                "dense operator must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !all_finite(m.as_slice()) {
            return Err(OperatorError::InvalidSpec("non-finite matrix entry".into()));
        }
        Ok(OperatorSpec::Dense(m))
    }

    pub fn diagonal(entries: Vec<C64>) -> Result<Self, OperatorError> {
        if entries.is_empty() || !all_finite(&entries) {
            return Err(OperatorError::InvalidSpec(
                "diagonal needs at least one finite entry".into(),
            ));
        }
        Ok(OperatorSpec::Diagonal(entries))
    }

    pub fn weighted_shift(weights: Vec<C64>, dim: usize) -> Result<Self, OperatorError> {
        if dim == 0 || weights.len() + 1 != dim || !all_finite(&weights) {
            return Err(OperatorError::InvalidSpec(format!(
                "weighted shift of dimension {dim} needs {} finite weights, got {}",
                dim.saturating_sub(1),
                weights.len()
            )));
        }
        Ok(OperatorSpec::WeightedShift { weights, dim })
    }

    pub fn jordan(eigenvalue: C64, size: usize) -> Result<Self, OperatorError> {
        if size == 0 || !all_finite(&[eigenvalue]) {
            return Err(OperatorError::InvalidSpec(
                "jordan block needs size >= 1".into(),
            ));
        }
        Ok(OperatorSpec::Jordan { eigenvalue, size })
    }

    /// `factor * inner`, folding nested scalings into a single factor.
    pub fn scaled(factor: C64, inner: OperatorSpec) -> Result<Self, OperatorError> {
        if !all_finite(&[factor]) {
            return Err(OperatorError::InvalidSpec("non-finite scale factor".into()));
        }
        Ok(match inner {
            OperatorSpec::Scaled { factor: f2, inner } => OperatorSpec::Scaled {
                factor: factor * f2,
                inner,
            },
            other => OperatorSpec::Scaled {
                factor,
                inner: Box::new(other),
            },
        })
    }

    pub fn identity(n: usize) -> Self {
        OperatorSpec::Diagonal(vec![ONE; n])
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::Dense(m) => m.nrows(),
            OperatorSpec::Diagonal(e) => e.len(),
            OperatorSpec::WeightedShift { dim, .. } => *dim,
            OperatorSpec::Jordan { size, .. } => *size,
            OperatorSpec::Scaled { inner, .. } => inner.dim(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            OperatorSpec::Dense(_) => "dense",
            OperatorSpec::Diagonal(_) => "diagonal",
            OperatorSpec::WeightedShift { .. } => "weighted_shift",
            OperatorSpec::Jordan { .. } => "jordan",
            OperatorSpec::Scaled { .. } => "scaled",
        }
    }

    pub fn densify(&self) -> CMatrix {
        let n = self.dim();
        match self {
            OperatorSpec::Dense(m) => m.clone(),
            OperatorSpec::Diagonal(e) => {
                CMatrix::from_fn(n, n, |i, j| if i == j { e[i] } else { ZERO })
            }
            OperatorSpec::WeightedShift { weights, .. } => {
                CMatrix::from_fn(n, n, |i, j| if i == j + 1 { weights[j] } else { ZERO })
            }
            OperatorSpec::Jordan { eigenvalue, .. } => CMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    *eigenvalue
                } else if i == j + 1 {
                    ONE
                } else {
                    ZERO
                }
            }),
            OperatorSpec::Scaled { factor, inner } => inner.densify() * *factor,
        }
    }

    /// Structural nilpotency (certain without numerics).
    pub fn is_structurally_nilpotent(&self) -> bool {
        match self {
            OperatorSpec::Dense(_) => false,
            OperatorSpec::Diagonal(e) => e.iter().all(|z| *z == ZERO),
            OperatorSpec::WeightedShift { .. } => true,
            OperatorSpec::Jordan { eigenvalue, .. } => *eigenvalue == ZERO,
            OperatorSpec::Scaled { factor, inner } => {
                *factor == ZERO || inner.is_structurally_nilpotent()
            }
        }
    }

    fn apply_raw(&self, x: &[C64]) -> Vec<C64> {
        match self {
            OperatorSpec::Dense(m) => (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
                .collect(),
            OperatorSpec::Diagonal(e) => e.iter().zip(x).map(|(a, b)| a * b).collect(),
            OperatorSpec::WeightedShift { weights, dim } => {
                let mut y = vec![ZERO; *dim];
                for j in 0..dim - 1 {
                    y[j + 1] = weights[j] * x[j];
                }
                y
            }
            OperatorSpec::Jordan { eigenvalue, size } => (0..*size)
                .map(|i| {
                    let below = if i > 0 { x[i - 1] } else { ZERO };
                    eigenvalue * x[i] + below
                })
                .collect(),
            OperatorSpec::Scaled { factor, inner } => {
                inner.apply_raw(x).into_iter().map(|z| z * factor).collect()
            }
        }
    }

    /// `T x` using the closed-form action of each variant.
    pub fn apply(&self, x: &VectorC) -> Result<VectorC, OperatorError> {
        self.check_dim(x.len())?;
        Ok(VectorC(self.apply_raw(&x.0)))
    }

    fn check_dim(&self, got: usize) -> Result<(), OperatorError> {
        if got != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// All eigenvalues with multiplicity: exact for structured variants,
    /// shifted QR for dense matrices.
    pub fn spectrum(&self) -> Result<Vec<C64>, OperatorError> {
        Ok(match self {
            OperatorSpec::Dense(m) => linalg::eigenvalues(m)?,
            OperatorSpec::Diagonal(e) => e.clone(),
            OperatorSpec::WeightedShift { dim, .. } => vec![ZERO; *dim],
            OperatorSpec::Jordan { eigenvalue, size } => vec![*eigenvalue; *size],
            OperatorSpec::Scaled { factor, inner } => {
                inner.spectrum()?.into_iter().map(|z| z * factor).collect()
            }
        })
    }
}

/// Spectral radius: closed form for structured variants; for dense matrices
/// the largest eigenvalue modulus from Hessenberg + shifted QR (about `1e-10`
/// relative accuracy for non-defective matrices with `N <= 64`).
pub fn spectral_radius_oracle(t: &OperatorSpec) -> Result<f64, OperatorError> {
    Ok(match t {
        OperatorSpec::Dense(m) => linalg::eigenvalues(m)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        OperatorSpec::Diagonal(e) => e.iter().map(|z| z.norm()).fold(0.0, f64::max),
        OperatorSpec::WeightedShift { .. } => 0.0,
        OperatorSpec::Jordan { eigenvalue, .. } => eigenvalue.norm(),
        OperatorSpec::Scaled { factor, inner } => factor.norm() * spectral_radius_oracle(inner)?,
    })
}

/// `<x', T^n x>` for `n < n_terms`, by iterated application.
///
/// If `T^{n_terms} x` is exactly zero the tail is certified zero (this covers
/// nilpotent structured operators once `n_terms >= N`). Otherwise, when a
/// power fit is supplied, a heuristic tail `||x'|| ||x|| kappa rho^N` is
/// attached.
pub fn weak_orbit(
    t: &OperatorSpec,
    x: &VectorC,
    xp: &FunctionalC,
    n_terms: usize,
    fit: Option<&PowerFit>,
) -> Result<ComplexSeq, OperatorError> {
    t.check_dim(x.len())?;
    t.check_dim(xp.len())?;
    if n_terms == 0 {
        return Err(OperatorError::InvalidHorizon { got: 0, min: 1 });
    }
    let mut v = x.0.clone();
    let mut entries = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        entries.push(linalg::pair(&xp.0, &v));
        v = t.apply_raw(&v);
    }
    if v.iter().all(|z| *z == ZERO) {
        return Ok(ComplexSeq::new(entries, Some(0.0))?);
    }
    let seq = ComplexSeq::new(entries, None)?;
    match fit {
        Some(fit) => {
            let tail = xp.norm() * x.norm() * fit.kappa * fit.rho.powi(n_terms as i32);
            Ok(seq.with_heuristic_tail(tail)?)
        }
        None => Ok(seq),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerNorms {
    /// `||T^n||` for `n < n_terms`.
    pub norms: NonNegSeq,
    /// `sup ||T^n|| / ||T^0|| <= POWER_BOUND_THRESHOLD` on the observed range.
    pub power_bounded_probe: bool,
}

/// Operator norms of the powers `T^0, ..., T^{n_terms - 1}`.
pub fn power_norms(t: &OperatorSpec, n_terms: usize) -> Result<PowerNorms, OperatorError> {
    if n_terms == 0 {
        return Err(OperatorError::InvalidHorizon { got: 0, min: 1 });
    }
    let norms = power_norms_raw(t, n_terms)?;
    let first = norms[0];
    let sup = norms.iter().copied().fold(0.0, f64::max);
    Ok(PowerNorms {
        power_bounded_probe: sup <= POWER_BOUND_THRESHOLD * first,
        norms: NonNegSeq::new(norms, None)?,
    })
}

fn power_norms_raw(t: &OperatorSpec, n_terms: usize) -> Result<Vec<f64>, OperatorError> {
    match t {
        OperatorSpec::Diagonal(e) => {
            let r = e.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let mut out = Vec::with_capacity(n_terms);
            let mut p = 1.0;
            for _ in 0..n_terms {
                out.push(p);
                p *= r;
            }
            Ok(out)
        }
        OperatorSpec::WeightedShift { weights, dim } => {
            // T^n e_j = (w_j ... w_{j+n-1}) e_{j+n}; distinct targets, so the
            // norm is the largest product modulus
            let mut prods: Vec<f64> = vec![1.0; *dim];
            let mut out = Vec::with_capacity(n_terms);
            for n in 0..n_terms {
                out.push(prods.iter().copied().fold(0.0, f64::max));
                let len = dim.saturating_sub(n + 1);
                prods = (0..len).map(|j| prods[j] * weights[j + n].norm()).collect();
            }
            Ok(out)
        }
        OperatorSpec::Scaled { factor, inner } => {
            let inner = power_norms_raw(inner, n_terms)?;
            let c = factor.norm();
            let mut p = 1.0;
            Ok(inner
                .into_iter()
                .map(|x| {
                    let v = p * x;
                    p *= c;
                    v
                })
                .collect())
        }
        OperatorSpec::Dense(_) | OperatorSpec::Jordan { .. } => {
            let m = t.densify();
            let n = m.nrows();
            let mut p = CMatrix::identity(n, n);
            let mut out = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                out.push(linalg::op_norm(&p)?);
                p = &m * &p;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelfandEstimate {
    /// `||T^{N-1}||^{1/(N-1)}`.
    pub estimate: f64,
    /// `||T^n||^{1/n}` for `n = 1..N-1`.
    pub sequence: Vec<f64>,
}

/// Gelfand-formula estimate of the spectral radius. Biased upward; converges
/// to `r(T)` only logarithmically for non-normal operators.
pub fn gelfand_estimate(
    t: &OperatorSpec,
    n_terms: usize,
) -> Result<GelfandEstimate, OperatorError> {
    if n_terms < 8 {
        return Err(OperatorError::InvalidHorizon {
            got: n_terms,
            min: 8,
        });
    }
    let norms = power_norms_raw(t, n_terms)?;
    Ok(gelfand_from_norms(&norms))
}

pub(crate) fn gelfand_from_norms(norms: &[f64]) -> GelfandEstimate {
    let sequence: Vec<f64> = norms
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, &x)| x.powf(1.0 / n as f64))
        .collect();
    GelfandEstimate {
        estimate: *sequence.last().unwrap_or(&norms[0]),
        sequence,
    }
}

/// Geometric envelope `||T^n|| <= kappa rho^n` fitted on observed power norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub rho: f64,
    pub kappa: f64,
}

/// Fit with `rho = (1 + r(T))/2` and `kappa = max_n ||T^n|| / rho^n` over the
/// observed range; `None` unless `r(T) < 1`. Heuristic beyond the range.
pub fn power_fit(norms: &[f64], spectral_radius: f64) -> Option<PowerFit> {
    if !(spectral_radius < 1.0) {
        return None;
    }
    let rho = 0.5 * (1.0 + spectral_radius);
    let mut scale = 1.0;
    let mut kappa = 0.0f64;
    for &x in norms {
        kappa = kappa.max(x / scale);
        scale *= rho;
    }
    Some(PowerFit { rho, kappa })
}

/// A finite family of functionals, normalized to unit norm on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalFamily {
    members: Vec<FunctionalC>,
}

impl FunctionalFamily {
    pub fn new(members: Vec<FunctionalC>) -> Result<Self, OperatorError> {
        if members.is_empty() {
            return Err(OperatorError::EmptyFamily);
        }
        let mut out = Vec::with_capacity(members.len());
        for m in members {
            let n = m.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(OperatorError::ZeroVector);
            }
            out.push(FunctionalC(m.0.into_iter().map(|z| z / n).collect()));
        }
        Ok(Self { members: out })
    }

    /// Every coordinate functional of `C^n`.
    pub fn coordinate(n: usize) -> Self {
        Self {
            members: (0..n).map(|j| FunctionalC::basis(n, j)).collect(),
        }
    }

    pub fn members(&self) -> &[FunctionalC] {
        &self.members
    }
}

/// Measured almost-norming constant: `max_x ||x|| / sup_{x' in E} |<x', x>|`
/// over the samples. Valid for the sampled vectors only.
pub fn norming_constant(
    family: &FunctionalFamily,
    samples: &[VectorC],
) -> Result<f64, OperatorError> {
    if samples.is_empty() {
        return Err(OperatorError::InvalidHorizon { got: 0, min: 1 });
    }
    let mut c = 1.0f64;
    for (i, x) in samples.iter().enumerate() {
        let norm = x.norm();
        if norm == 0.0 {
            return Err(OperatorError::ZeroVector);
        }
        let mut sup = 0.0f64;
        for m in &family.members {
            if m.len() != x.len() {
                return Err(OperatorError::DimensionMismatch {
                    expected: m.len(),
                    got: x.len(),
                });
            }
            sup = sup.max(m.pair(x).norm());
        }
        if sup <= f64::MIN_POSITIVE * norm {
            return Err(OperatorError::DegenerateFamily { sample: i });
        }
        c = c.max(norm / sup);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_dense(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn zoo(rng: &mut ChaCha8Rng) -> Vec<OperatorSpec> {
        vec![
            OperatorSpec::dense(random_dense(5, rng)).unwrap(),
            OperatorSpec::diagonal(vec![c(0.5, 0.0), c(0.0, 0.9), c(-0.2, 0.1)]).unwrap(),
            OperatorSpec::weighted_shift(vec![c(2.0, 0.0), c(0.0, 3.0), c(0.5, 0.5)], 4).unwrap(),
            OperatorSpec::jordan(c(0.9, 0.1), 4).unwrap(),
            OperatorSpec::scaled(c(0.0, 2.0), OperatorSpec::jordan(c(0.3, 0.0), 3).unwrap())
                .unwrap(),
        ]
    }

    #[test]
    fn apply_examples() {
        let id = OperatorSpec::dense(CMatrix::identity(3, 3)).unwrap();
        let x = VectorC(vec![c(1.0, 2.0), c(-3.0, 0.0), c(0.0, 0.5)]);
        assert_eq!(id.apply(&x).unwrap(), x);
        let shift = OperatorSpec::weighted_shift(vec![c(2.0, 0.0), c(3.0, 0.0)], 3).unwrap();
        assert_eq!(
            shift.apply(&VectorC::basis(3, 0)).unwrap(),
            VectorC(vec![ZERO, c(2.0, 0.0), ZERO])
        );
        assert_eq!(
            shift.apply(&VectorC::basis(2, 0)),
            Err(OperatorError::DimensionMismatch {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn structured_apply_matches_densified() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in zoo(&mut rng) {
            let m = t.densify();
            for _ in 0..10 {
                let x = VectorC(random_unit(t.dim(), &mut rng));
                let y = t.apply(&x).unwrap();
                let yd: Vec<C64> = (0..t.dim())
                    .map(|i| (0..t.dim()).map(|j| m[(i, j)] * x.0[j]).sum())
                    .collect();
                let err =
                    linalg::vec_norm(&y.0.iter().zip(&yd).map(|(a, b)| a - b).collect::<Vec<_>>());
                assert!(
                    err <= 1e-14 * (1.0 + linalg::vec_norm(&yd)),
                    "{}",
                    t.variant_name()
                );
            }
        }
    }

    #[test]
    fn weak_orbit_examples() {
        let lam = [c(0.5, 0.0), c(0.0, 0.8)];
        let d = OperatorSpec::diagonal(lam.to_vec()).unwrap();
        for (j, l) in lam.iter().enumerate() {
            let a = weak_orbit(
                &d,
                &VectorC::basis(2, j),
                &FunctionalC::basis(2, j),
                20,
                None,
            )
            .unwrap();
            for (n, z) in a.entries().iter().enumerate() {
                assert!((z - l.powi(n as i32)).norm() < 1e-15);
            }
        }

        let shift =
            OperatorSpec::weighted_shift(vec![c(1.5, 0.0), c(0.0, 2.0), c(1.0, 1.0)], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = VectorC(random_unit(4, &mut rng));
        let xp = FunctionalC(random_unit(4, &mut rng));
        let a = weak_orbit(&shift, &x, &xp, 10, None).unwrap();
        assert!(a.entries()[4..].iter().all(|z| *z == ZERO));
        assert!(a.tail_is_zero());

        // (J^n)_{1,0} = n lambda^{n-1}
        let lambda = c(0.7, 0.2);
        let j = OperatorSpec::jordan(lambda, 2).unwrap();
        let a = weak_orbit(
            &j,
            &VectorC::basis(2, 0),
            &FunctionalC::basis(2, 1),
            30,
            None,
        )
        .unwrap();
        assert_eq!(a.entries()[0], ZERO);
        for n in 1..30 {
            let expect = lambda.powi(n as i32 - 1) * n as f64;
            assert!((a.entries()[n] - expect).norm() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn weak_orbit_heuristic_tail_from_fit() {
        let d = OperatorSpec::diagonal(vec![c(0.5, 0.0)]).unwrap();
        let norms = power_norms(&d, 16).unwrap();
        let r = spectral_radius_oracle(&d).unwrap();
        let fit = power_fit(norms.norms.entries(), r).unwrap();
        assert_eq!(fit.rho, 0.75);
        assert_eq!(fit.kappa, 1.0);
        let a = weak_orbit(
            &d,
            &VectorC::basis(1, 0),
            &FunctionalC::basis(1, 0),
            16,
            Some(&fit),
        )
        .unwrap();
        assert!(a.tail_is_heuristic());
        assert!(a.tail_bound().unwrap() >= 0.5f64.powi(16));
        assert!(power_fit(&[1.0, 1.0], 1.0).is_none());
    }

    #[test]
    fn power_norm_examples() {
        let id = OperatorSpec::identity(3);
        assert!(power_norms(&id, 10)
            .unwrap()
            .norms
            .entries()
            .iter()
            .all(|&x| x == 1.0));
        let d = OperatorSpec::diagonal(vec![c(0.5, 0.0), c(0.0, 0.9)]).unwrap();
        let p = power_norms(&d, 4).unwrap();
        assert_eq!(p.norms.entries()[..3], [1.0, 0.9, 0.9 * 0.9]);
        assert!(p.power_bounded_probe);

        // unipotent Jordan block: ||J^n|| >= n
        let j = OperatorSpec::jordan(ONE, 2).unwrap();
        let p = power_norms(&j, 4000).unwrap();
        for (n, &x) in p.norms.entries().iter().enumerate() {
            assert!(x >= n as f64);
        }
        let j3 = OperatorSpec::jordan(ONE, 4).unwrap();
        // ||J^n|| ~ n^3/6 passes 1e6 near n = 182
        assert!(!power_norms(&j3, 400).unwrap().power_bounded_probe);
    }

    #[test]
    fn structured_power_norms_match_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in zoo(&mut rng) {
            let fast = power_norms(&t, 12).unwrap();
            let m = t.densify();
            let mut p = CMatrix::identity(t.dim(), t.dim());
            for n in 0..12 {
                let svd = linalg::op_norm(&p).unwrap();
                let got = fast.norms.entries()[n];
                assert!(
                    (svd - got).abs() <= 1e-12 * (1.0 + svd),
                    "{} n={n}",
                    t.variant_name()
                );
                p = &m * &p;
            }
        }
    }

    #[test]
    fn spectral_radius_examples() {
        let d = OperatorSpec::diagonal(vec![c(0.5, 0.0), c(0.0, 0.9)]).unwrap();
        assert_eq!(spectral_radius_oracle(&d).unwrap(), 0.9);
        let s = OperatorSpec::weighted_shift(vec![c(5.0, 0.0); 3], 4).unwrap();
        assert_eq!(spectral_radius_oracle(&s).unwrap(), 0.0);
        let j = OperatorSpec::jordan(c(0.95, 0.0), 3).unwrap();
        assert_eq!(spectral_radius_oracle(&j).unwrap(), 0.95);
    }

    #[test]
    fn scaled_folds_and_scales_spectral_radius() {
        let inner = OperatorSpec::jordan(c(0.5, 0.5), 3).unwrap();
        let once = OperatorSpec::scaled(c(2.0, 0.0), inner.clone()).unwrap();
        let twice = OperatorSpec::scaled(c(0.0, 1.5), once).unwrap();
        match &twice {
            OperatorSpec::Scaled { factor, inner: i } => {
                assert_eq!(*factor, c(0.0, 3.0));
                assert_eq!(**i, inner);
            }
            _ => panic!(),
        }
        let expect = c(0.0, 3.0).norm() * spectral_radius_oracle(&inner).unwrap();
        assert_eq!(spectral_radius_oracle(&twice).unwrap(), expect);
    }

    #[test]
    fn dense_spectral_radius_agrees_with_structured() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in zoo(&mut rng).into_iter().skip(1) {
            if t.is_structurally_nilpotent() {
                continue;
            }
            let exact = spectral_radius_oracle(&t).unwrap();
            let dense = spectral_radius_oracle(&OperatorSpec::Dense(t.densify())).unwrap();
            // Jordan blocks are defective: eigenvalue error ~ eps^(1/size)
            assert!(
                (exact - dense).abs() < 1e-3 * (1.0 + exact),
                "{}",
                t.variant_name()
            );
        }
    }

    #[test]
    fn gelfand_examples() {
        let id = OperatorSpec::identity(2);
        let g = gelfand_estimate(&id, 16).unwrap();
        assert!(g.sequence.iter().all(|&x| x == 1.0));
        let d = OperatorSpec::diagonal(vec![c(0.5, 0.0)]).unwrap();
        let g = gelfand_estimate(&d, 16).unwrap();
        assert!(g.sequence.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let j = OperatorSpec::jordan(c(0.9, 0.0), 4).unwrap();
        let g = gelfand_estimate(&j, 2000).unwrap();
        assert!((g.estimate - 0.9).abs() < 0.02, "{}", g.estimate);
        assert!(g.estimate >= 0.9);
        assert_eq!(
            gelfand_estimate(&id, 4),
            Err(OperatorError::InvalidHorizon { got: 4, min: 8 })
        );
    }

    #[test]
    fn gelfand_bounds_oracle_and_decreases_for_diagonal() {
        let d = OperatorSpec::diagonal(vec![c(0.3, 0.4), c(-0.7, 0.0), c(0.1, 0.0)]).unwrap();
        let r = spectral_radius_oracle(&d).unwrap();
        let g = gelfand_estimate(&d, 64).unwrap();
        for w in g.sequence.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(g.sequence.iter().all(|&x| x >= r - 1e-14));
    }

    #[test]
    fn norming_constant_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5;
        let e = FunctionalFamily::coordinate(n);
        let samples: Vec<VectorC> = (0..50).map(|_| VectorC(random_unit(n, &mut rng))).collect();
        let cst = norming_constant(&e, &samples).unwrap();
        assert!(cst >= 1.0 && cst <= (n as f64).sqrt() + 1e-12);

        let e = FunctionalFamily::new(vec![FunctionalC::basis(2, 0)]).unwrap();
        assert_eq!(
            norming_constant(&e, &[VectorC::basis(2, 1)]),
            Err(OperatorError::DegenerateFamily { sample: 0 })
        );

        // the conjugate of each sample attains |<x', x>| = ||x||
        let members: Vec<FunctionalC> = samples
            .iter()
            .map(|x| FunctionalC(x.0.iter().map(|z| z.conj()).collect()))
            .collect();
        let e = FunctionalFamily::new(members).unwrap();
        let cst = norming_constant(&e, &samples).unwrap();
        assert!((cst - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_json_shapes() {
        let t: OperatorSpec =
            serde_json::from_str(r#"{"variant": "diagonal", "entries": [[0.5,0],[0,0.9]]}"#)
                .unwrap();
        assert_eq!(t, OperatorSpec::Diagonal(vec![c(0.5, 0.0), c(0.0, 0.9)]));
        let t: OperatorSpec = serde_json::from_str(
            r#"{"variant": "scaled", "factor": [2,0], "inner": {"variant": "scaled", "factor": [0,1], "inner": {"variant": "jordan", "lambda": [0.5,0], "size": 3}}}"#,
        )
        .unwrap();
        assert!(matches!(&t, OperatorSpec::Scaled { factor, .. } if *factor == c(0.0, 2.0)));
        let t: OperatorSpec =
            serde_json::from_str(r#"{"variant":"dense","rows":[[[1,0],[0,1]],[[0,0],[2,0]]]}"#)
                .unwrap();
        assert_eq!(t.densify()[(0, 1)], c(0.0, 1.0));
        assert!(serde_json::from_str::<OperatorSpec>(
            r#"{"variant":"weighted_shift","weights":[[1,0]],"dim":3}"#
        )
        .is_err());
        assert!(serde_json::from_str::<OperatorSpec>(
            r#"{"variant":"diagonal","entries":[[1,0]],"extra":1}"#
        )
        .is_err());
        let mut nested = r#"{"variant":"diagonal","entries":[[1,0]]}"#.to_string();
        for _ in 0..9 {
            nested = format!(r#"{{"variant":"scaled","factor":[1,0],"inner":{nested}}}"#);
        }
        assert!(serde_json::from_str::<OperatorSpec>(&nested).is_err());
    }

    proptest! {
        #[test]
        fn weak_orbit_is_bilinear(seed in 0u64..1000, alpha_re in -2.0f64..2.0, alpha_im in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = OperatorSpec::dense(random_dense(4, &mut rng) * c(0.4, 0.0)).unwrap();
            let alpha = c(alpha_re, alpha_im);
            let x1 = VectorC(random_unit(4, &mut rng));
            let x2 = VectorC(random_unit(4, &mut rng));
            let xp = FunctionalC(random_unit(4, &mut rng));
            let comb = VectorC(x1.0.iter().zip(&x2.0).map(|(a, b)| a * alpha + b).collect());
            let a1 = weak_orbit(&t, &x1, &xp, 12, None).unwrap();
            let a2 = weak_orbit(&t, &x2, &xp, 12, None).unwrap();
            let ac = weak_orbit(&t, &comb, &xp, 12, None).unwrap();
            for n in 0..12 {
                let expect = a1.entries()[n] * alpha + a2.entries()[n];
                prop_assert!((ac.entries()[n] - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
            }
            let xp2 = FunctionalC(random_unit(4, &mut rng));
            let xpc = FunctionalC(xp.0.iter().zip(&xp2.0).map(|(a, b)| a * alpha + b).collect());
            let b1 = weak_orbit(&t, &x1, &xp2, 12, None).unwrap();
            let bc = weak_orbit(&t, &x1, &xpc, 12, None).unwrap();
            for n in 0..12 {
                let expect = a1.entries()[n] * alpha + b1.entries()[n];
                prop_assert!((bc.entries()[n] - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
            }
        }

        #[test]
        fn weak_orbit_bounded_by_power_norms(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = OperatorSpec::dense(random_dense(3, &mut rng) * c(0.5, 0.0)).unwrap();
            let x = VectorC(random_unit(3, &mut rng));
            let xp = FunctionalC(random_unit(3, &mut rng));
            let a = weak_orbit(&t, &x, &xp, 20, None).unwrap();
            let p = power_norms(&t, 20).unwrap();
            for (z, &bound) in a.entries().iter().zip(p.norms.entries()) {
                prop_assert!(z.norm() <= bound * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
