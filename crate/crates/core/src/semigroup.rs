//! Continuous-time counterpart for matrix semigroups `e^{tA}`: weak
//! trajectories, their `L^p` norms, the Laplace-integral resolvent, the
//! log-resolvent envelope constant `M`, and a strip certificate bounding the
//! abscissa of uniform boundedness `s_0(A)` away from zero.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMatrix, LinalgError, C64, ZERO};
use crate::operators::{FunctionalC, OperatorError, OperatorSpec, VectorC};
use crate::resolvent::{PairOrigin, SamplePlan};
use crate::serde_util;

/// Largest `||tA||` accepted by `exp_at`.
pub const EXP_NORM_BUDGET: f64 = 50.0;

/// Offset of the decay rate above the spectral bound, capped at `|s(A)|/2`.
pub const DECAY_RATE_OFFSET: f64 = 1e-3;

/// Absolute slack on the strip bound `2/r`.
pub const STRIP_TOLERANCE: f64 = 1e-8;

/// Relative slack when re-checking the envelope estimate at fresh points.
pub const ENVELOPE_TOLERANCE: f64 = 1e-9;

/// Samples closer than this to an eigenvalue are rejected by the fit.
pub const SINGULAR_DISTANCE: f64 = 1e-10;

/// Weight used for the right flank: halfway between the normalized growth
/// bound `1/2` and the flank edge `2/3`.
pub const RIGHT_FLANK_RATE: f64 = 7.0 / 12.0;

const QUADRATURE_BUDGET: usize = 1 << 22;
const TRAJECTORY_MAX_STEPS: usize = 1 << 18;
const SWEEP_MAX_STEPS: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemigroupError {
    #[error("time {t} must be non-negative")]
    NegativeTime { t: f64 },
    #[error("||tA|| = {norm} exceeds the budget {budget}")]
    HorizonTooLarge { norm: f64, budget: f64 },
    #[error("no decay certificate: rate {alpha} is not negative")]
    NoDecayCertificate { alpha: f64 },
    #[error("conjugate exponent q = {q} must exceed 1")]
    BadConjugate { q: f64 },
    #[error("exponent p = {p} must be a finite number >= 1")]
    BadExponent { p: f64 },
    #[error("Re lambda = {re} outside the admissible range")]
    InvalidReLambda { re: f64 },
    #[error("quadrature needs {steps} steps, budget is {budget}")]
    QuadratureBudget { steps: usize, budget: usize },
    #[error("sample {re} + {im}i lies within {distance} of an eigenvalue")]
    SingularSample { re: f64, im: f64, distance: f64 },
    #[error("envelope constant M = {m} must be positive and finite")]
    InvalidEnvelope { m: f64 },
    #[error("strip parameter underflows for M = {m}")]
    StripUnderflow { m: f64 },
    #[error("strip violated at {re} + {im}i ({check}): {value} > {bound}")]
    StripViolation {
        re: f64,
        im: f64,
        check: String,
        value: f64,
        bound: f64,
    },
    #[error("time grid must be sorted and non-negative")]
    BadGrid,
    #[error("semigroup law residual {residual}")]
    SemigroupLaw { residual: f64 },
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Generator `A` of `e^{tA}` with an optional caller-supplied upper bound on
/// the growth bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(with = "serde_util::complex_rows")]
    pub matrix: CMatrix,
    #[serde(default)]
    pub growth_hint: Option<f64>,
}

impl GeneratorSpec {
    pub fn new(matrix: CMatrix, growth_hint: Option<f64>) -> Result<Self, SemigroupError> {
        if matrix.nrows() == 0 || matrix.nrows() != matrix.ncols() {
            return Err(SemigroupError::InvalidGenerator(
                "matrix must be square and non-empty".into(),
            ));
        }
        if matrix
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(SemigroupError::InvalidGenerator("non-finite entry".into()));
        }
        if growth_hint.is_some_and(|h| !h.is_finite()) {
            return Err(SemigroupError::InvalidGenerator(
                "non-finite growth hint".into(),
            ));
        }
        Ok(Self {
            matrix,
            growth_hint,
        })
    }

    pub fn from_operator(
        spec: &OperatorSpec,
        growth_hint: Option<f64>,
    ) -> Result<Self, SemigroupError> {
        Self::new(spec.densify(), growth_hint)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `s(A)`: the largest real part of an eigenvalue.
    pub fn spectral_bound(&self) -> Result<f64, SemigroupError> {
        spectral_bound(&self.matrix)
    }

    /// The caller's hint, or `s(A)` (which equals the growth bound for
    /// matrices).
    pub fn growth_estimate(&self) -> Result<f64, SemigroupError> {
        match self.growth_hint {
            Some(h) => Ok(h),
            None => self.spectral_bound(),
        }
    }

    /// `(eps, eps A)` with `eps = 1/(2 w)` when the growth estimate `w`
    /// exceeds `1/2`, else `(1, A)`.
    pub fn normalized(&self) -> Result<(f64, GeneratorSpec), SemigroupError> {
        let w = self.growth_estimate()?;
        if w > 0.5 {
            let eps = 0.5 / w;
            Ok((
                eps,
                GeneratorSpec {
                    matrix: &self.matrix * C64::new(eps, 0.0),
                    growth_hint: Some(0.5),
                },
            ))
        } else {
            Ok((1.0, self.clone()))
        }
    }
}

fn spectral_bound(a: &CMatrix) -> Result<f64, SemigroupError> {
    Ok(linalg::eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `e^{tA}` by scaling and squaring with a Pade approximant; about `1e-10`
/// relative accuracy for `||tA|| <= 50`. `t = 0` returns the identity exactly.
pub fn exp_at(a: &GeneratorSpec, t: f64) -> Result<CMatrix, SemigroupError> {
    if !(t >= 0.0) {
        return Err(SemigroupError::NegativeTime { t });
    }
    let n = a.dim();
    if t == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let ta = &a.matrix * C64::new(t, 0.0);
    let norm = linalg::op_norm(&ta)?;
    if norm > EXP_NORM_BUDGET {
        return Err(SemigroupError::HorizonTooLarge {
            norm,
            budget: EXP_NORM_BUDGET,
        });
    }
    Ok(ta.exp())
}

/// `e^{tA}` for arbitrary `t >= 0` as a power of `e^{(t/m)A}` with
/// `||(t/m)A|| <= 25`.
fn exp_long(a: &CMatrix, t: f64) -> Result<CMatrix, SemigroupError> {
    let n = a.nrows();
    if t == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let norm = a.norm() * t;
    let m = (norm / 25.0).ceil().max(1.0) as u32;
    let step = (a * C64::new(t / m as f64, 0.0)).exp();
    let mut out = step.clone();
    for _ in 1..m {
        out = &out * &step;
    }
    Ok(out)
}

/// `e^{hA}`, checked against `e^{2hA} = (e^{hA})^2`.
fn step_exponential(a: &CMatrix, h: f64) -> Result<CMatrix, SemigroupError> {
    let e1 = exp_long(a, h)?;
    let e2 = exp_long(a, 2.0 * h)?;
    let sq = &e1 * &e1;
    let residual = (&e2 - &sq).norm();
    if residual > 1e-9 * (1.0 + e2.norm()) {
        return Err(SemigroupError::SemigroupLaw { residual });
    }
    Ok(e1)
}

fn mat_vec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

fn check_pair(a: &CMatrix, x: &VectorC, xp: &FunctionalC) -> Result<(), SemigroupError> {
    for got in [x.len(), xp.len()] {
        if got != a.nrows() {
            return Err(OperatorError::DimensionMismatch {
                expected: a.nrows(),
                got,
            }
            .into());
        }
    }
    Ok(())
}

/// `<x', e^{tA} x>` on a sorted grid, advancing with cached step
/// exponentials `e^{(t_{k+1} - t_k) A}`.
pub fn weak_trajectory(
    a: &GeneratorSpec,
    x: &VectorC,
    xp: &FunctionalC,
    grid: &[f64],
) -> Result<Vec<C64>, SemigroupError> {
    check_pair(&a.matrix, x, xp)?;
    if grid.first().is_some_and(|&t| !(t >= 0.0)) || grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(SemigroupError::BadGrid);
    }
    let mut cache: BTreeMap<u64, CMatrix> = BTreeMap::new();
    let mut out = Vec::with_capacity(grid.len());
    let mut v = x.0.clone();
    let mut t = 0.0;
    for &s in grid {
        let gap = s - t;
        if gap > 0.0 {
            let e = match cache.get(&gap.to_bits()) {
                Some(e) => e,
                None => {
                    let e = step_exponential(&a.matrix, gap)?;
                    cache.entry(gap.to_bits()).or_insert(e)
                }
            };
            v = mat_vec(e, &v);
        }
        t = s;
        out.push(linalg::pair(&xp.0, &v));
    }
    Ok(out)
}

/// Certified decay `||e^{tA}|| <= kappa e^{alpha t}` with
/// `alpha = s(A) + min(1e-3, |s(A)|/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub s_oracle: f64,
    pub alpha: f64,
    pub kappa: f64,
}

/// Horizon of the fine sweep in `weighted_sup`.
const SWEEP_WINDOW: f64 = 1.0;

/// `sup_t ||e^{tA}|| e^{-rate t}`, or `None` if the weighted norm does not
/// drop to 1 within the sweep budget.
///
/// With `W(t) = ||e^{tA}|| e^{-rate t}` submultiplicative, a fine sweep over
/// `[0, w]` (inflated by the largest growth between grid points) bounds `W`
/// on the window by `S`, and `W(t) <= W(kw) S` on `[kw, (k+1)w]`. Once some
/// `W(k0 w) <= 1` every later window repeats an earlier one, so
/// `S max_{k < k0} W(kw)` bounds `W` everywhere. Frobenius norms bound the
/// operator norm from above.
fn weighted_sup(a: &CMatrix, rate: f64) -> Result<Option<f64>, SemigroupError> {
    let n = a.nrows();
    let a_norm = a.norm();
    let fine_steps = (SWEEP_WINDOW * a_norm).ceil().max(2.0) as usize;
    let h = SWEEP_WINDOW / fine_steps as f64;
    let step = step_exponential(a, h)? * C64::new((-rate * h).exp(), 0.0);
    let mut p = CMatrix::identity(n, n);
    let mut window = (n as f64).sqrt();
    for _ in 0..fine_steps {
        p = &step * &p;
        window = window.max(p.norm());
    }
    let window = window * (h * (a_norm + rate.abs())).exp();
    let coarse = p;
    let mut q = coarse.clone();
    let mut peak = 1.0f64;
    for _ in 0..SWEEP_MAX_STEPS {
        let w = q.norm();
        if w <= 1.0 {
            return Ok(Some(window * peak));
        }
        peak = peak.max(w);
        q = &coarse * &q;
    }
    Ok(None)
}

pub fn decay_envelope(a: &GeneratorSpec) -> Result<DecayEnvelope, SemigroupError> {
    let s = a.spectral_bound()?;
    let alpha = s + DECAY_RATE_OFFSET.min(s.abs() / 2.0);
    if !(alpha < 0.0) {
        return Err(SemigroupError::NoDecayCertificate { alpha });
    }
    let kappa =
        weighted_sup(&a.matrix, alpha)?.ok_or(SemigroupError::NoDecayCertificate { alpha })?;
    Ok(DecayEnvelope {
        s_oracle: s,
        alpha,
        kappa,
    })
}

/// Composite Simpson rule on equally spaced samples (even interval count).
fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n.is_multiple_of(2));
    let mut s = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpNorm {
    /// `(quadrature + tail)^{1/p}`.
    pub value: f64,
    /// `int_0^T |<x', e^{tA} x>|^p dt`.
    pub quadrature: f64,
    /// `kappa^p e^{p alpha T} / (p |alpha|)`.
    pub tail_bound: f64,
    pub p: f64,
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
}

/// `C_p(x', x) = (int_0^inf |<x', e^{tA} x>|^p dt)^{1/p}`.
pub fn lp_trajectory_norm(
    a: &GeneratorSpec,
    x: &VectorC,
    xp: &FunctionalC,
    p: f64,
    opts: QuadratureOptions,
) -> Result<LpNorm, SemigroupError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(SemigroupError::BadExponent { p });
    }
    let env = decay_envelope(a)?;
    lp_with_envelope(a, &env, x, xp, p, opts)
}

fn lp_with_envelope(
    a: &GeneratorSpec,
    env: &DecayEnvelope,
    x: &VectorC,
    xp: &FunctionalC,
    p: f64,
    opts: QuadratureOptions,
) -> Result<LpNorm, SemigroupError> {
    check_pair(&a.matrix, x, xp)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(SemigroupError::BadExponent { p });
    }
    let a_norm = a.matrix.norm();
    let h_max = if a_norm > 0.0 {
        (0.005 / (p * a_norm)).min(0.02)
    } else {
        0.02
    };
    let horizon = opts
        .horizon
        .unwrap_or_else(|| (40.0 / env.alpha.abs()).min(h_max * TRAJECTORY_MAX_STEPS as f64));
    let mut steps = opts
        .steps
        .unwrap_or_else(|| (horizon / h_max).ceil() as usize)
        .max(2);
    steps += steps % 2;
    if steps > QUADRATURE_BUDGET {
        return Err(SemigroupError::QuadratureBudget {
            steps,
            budget: QUADRATURE_BUDGET,
        });
    }
    let h = horizon / steps as f64;
    let e = step_exponential(&a.matrix, h)?;
    let mut v = x.0.clone();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(linalg::pair(&xp.0, &v).norm().powf(p));
    for _ in 0..steps {
        v = mat_vec(&e, &v);
        values.push(linalg::pair(&xp.0, &v).norm().powf(p));
    }
    let quadrature = simpson(&values, h);
    let kappa = env.kappa * x.norm() * xp.norm();
    let tail_bound = kappa.powf(p) * (p * env.alpha * horizon).exp() / (p * env.alpha.abs());
    Ok(LpNorm {
        value: (quadrature + tail_bound).powf(1.0 / p),
        quadrature,
        tail_bound,
        p,
        horizon,
        steps,
    })
}

/// `L^q` norm of `t -> e^{-t s}` on `[0, inf)`: `(s q)^{-1/q}`, and `1` for
/// `q = inf`. Accepts `s` in `(0, 1]`.
pub fn mq_factor(re_lambda: f64, q: f64) -> Result<f64, SemigroupError> {
    check_mq_args(re_lambda, q)?;
    if q == f64::INFINITY {
        return Ok(1.0);
    }
    Ok((re_lambda * q).powf(-1.0 / q))
}

/// The cruder bound `s^{-1/q}` (`1` for `q = inf`).
pub fn mq_simplified(re_lambda: f64, q: f64) -> Result<f64, SemigroupError> {
    check_mq_args(re_lambda, q)?;
    if q == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(re_lambda.powf(-1.0 / q))
}

fn check_mq_args(re_lambda: f64, q: f64) -> Result<(), SemigroupError> {
    if !(q > 1.0) {
        return Err(SemigroupError::BadConjugate { q });
    }
    if !(re_lambda > 0.0 && re_lambda <= 1.0) {
        return Err(SemigroupError::InvalidReLambda { re: re_lambda });
    }
    Ok(())
}

/// Conjugate exponent of `p` (`p = 1` gives `inf`).
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

fn laplace_steps(
    a: &CMatrix,
    lambda: C64,
    tau: f64,
    steps: Option<usize>,
) -> Result<usize, SemigroupError> {
    let scale = lambda.norm() + a.norm();
    let mut steps = steps
        .unwrap_or_else(|| (tau * scale / 0.02).ceil() as usize)
        .max(2);
    steps += steps % 2;
    if steps > QUADRATURE_BUDGET {
        return Err(SemigroupError::QuadratureBudget {
            steps,
            budget: QUADRATURE_BUDGET,
        });
    }
    Ok(steps)
}

/// Simpson quadrature of `int_{t0}^{t1} e^{-lambda t} e^{tA} dt`.
fn laplace_segment(
    a: &CMatrix,
    lambda: C64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<CMatrix, SemigroupError> {
    let n = a.nrows();
    let h = (t1 - t0) / steps as f64;
    let step = step_exponential(a, h)? * (-lambda * h).exp();
    let mut f = exp_long(a, t0)? * (-lambda * t0).exp();
    let mut acc = f.clone();
    for i in 1..=steps {
        f = &step * &f;
        let w = if i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &f * C64::new(w, 0.0);
    }
    let _ = n;
    Ok(acc * C64::new(h / 3.0, 0.0))
}

/// `int_0^tau e^{-lambda t} e^{tA} dt`, which tends to `(lambda - A)^{-1}` as
/// `tau -> inf` when `Re lambda` exceeds the growth bound.
pub fn laplace_resolvent(
    a: &GeneratorSpec,
    lambda: C64,
    tau: f64,
    steps: Option<usize>,
) -> Result<CMatrix, SemigroupError> {
    if !(lambda.re > 0.0) {
        return Err(SemigroupError::InvalidReLambda { re: lambda.re });
    }
    if !(tau >= 0.0) {
        return Err(SemigroupError::NegativeTime { t: tau });
    }
    let n = a.dim();
    if tau == 0.0 {
        return Ok(CMatrix::zeros(n, n));
    }
    let steps = laplace_steps(&a.matrix, lambda, tau, steps)?;
    laplace_segment(&a.matrix, lambda, 0.0, tau, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyNetRecord {
    pub re_mu: f64,
    pub tau2: f64,
    /// `(tau1, ||int_{tau1}^{tau2} e^{-lambda t} e^{tA} dt||)`.
    pub segments: Vec<(f64, f64)>,
    /// Observed norm ratio between consecutive `tau1` values.
    pub ratios: Vec<f64>,
    /// `e^{-(tau1' - tau1)(Re lambda - Re mu)}` for the same steps.
    pub predicted: Vec<f64>,
}

/// Decay of the tail integrals `int_{tau1}^{tau2}` as `tau1` grows, against
/// the factor `e^{-tau1 (Re lambda - Re mu)}` with `Re mu = Re lambda / 2`.
pub fn cauchy_net_check(
    a: &GeneratorSpec,
    lambda: C64,
    tau1s: &[f64],
    tau2: f64,
) -> Result<CauchyNetRecord, SemigroupError> {
    if !(lambda.re > 0.0) {
        return Err(SemigroupError::InvalidReLambda { re: lambda.re });
    }
    if tau1s.windows(2).any(|w| !(w[1] > w[0])) || tau1s.iter().any(|&t| !(t >= 0.0 && t < tau2)) {
        return Err(SemigroupError::BadGrid);
    }
    let re_mu = lambda.re / 2.0;
    let mut segments = Vec::with_capacity(tau1s.len());
    for &t1 in tau1s {
        let steps = laplace_steps(&a.matrix, lambda, tau2 - t1, None)?;
        let m = laplace_segment(&a.matrix, lambda, t1, tau2, steps)?;
        segments.push((t1, linalg::op_norm(&m)?));
    }
    let ratios = segments.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let predicted = segments
        .windows(2)
        .map(|w| (-(w[1].0 - w[0].0) * (lambda.re - re_mu)).exp())
        .collect();
    Ok(CauchyNetRecord {
        re_mu,
        tau2,
        segments,
        ratios,
        predicted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// `max ||R(lambda, A)|| Re(lambda) |log Re(lambda)|` over the samples.
    pub m: f64,
    #[serde(with = "serde_util::complex")]
    pub argmax: C64,
    pub samples: usize,
}

/// Default fit grid: 24 log-spaced real parts in `(1e-4, 0.9)` times 17
/// imaginary parts spread over `+-(4 max|Im eig| + 10)`, plus every
/// eigenvalue's imaginary part.
pub fn default_envelope_samples(
    a: &GeneratorSpec,
    density: usize,
) -> Result<Vec<C64>, SemigroupError> {
    let eigs = linalg::eigenvalues(&a.matrix)?;
    let budget = im_budget(&eigs);
    let n_re = 24 * density;
    let n_im = 16 * density + 1;
    let (lo, hi) = (1e-4f64.ln(), 0.9f64.ln());
    let res: Vec<f64> = (0..n_re)
        .map(|i| (lo + (hi - lo) * i as f64 / (n_re - 1) as f64).exp())
        .collect();
    let mut ims: Vec<f64> = (0..n_im)
        .map(|j| -budget + 2.0 * budget * j as f64 / (n_im - 1) as f64)
        .collect();
    ims.extend(eigs.iter().map(|z| z.im));
    Ok(res
        .iter()
        .flat_map(|&re| ims.iter().map(move |&im| C64::new(re, im)))
        .collect())
}

fn im_budget(eigs: &[C64]) -> f64 {
    4.0 * eigs.iter().map(|z| z.im.abs()).fold(0.0, f64::max) + 10.0
}

fn envelope_value(a: &CMatrix, z: C64) -> f64 {
    linalg::resolvent_norm(a, z)
        .map(|nr| nr * z.re * z.re.ln().abs())
        .unwrap_or(f64::INFINITY)
}

fn envelope_values(a: &GeneratorSpec, samples: &[C64]) -> Result<Vec<f64>, SemigroupError> {
    let eigs = linalg::eigenvalues(&a.matrix)?;
    for &z in samples {
        if !(z.re > 0.0 && z.re < 1.0) {
            return Err(SemigroupError::InvalidReLambda { re: z.re });
        }
        let distance = eigs
            .iter()
            .map(|e| (z - e).norm())
            .fold(f64::INFINITY, f64::min);
        if distance < SINGULAR_DISTANCE {
            return Err(SemigroupError::SingularSample {
                re: z.re,
                im: z.im,
                distance,
            });
        }
    }
    Ok(samples
        .par_iter()
        .map(|&z| envelope_value(&a.matrix, z))
        .collect())
}

pub fn log_envelope_fit(a: &GeneratorSpec, samples: &[C64]) -> Result<EnvelopeFit, SemigroupError> {
    let values = envelope_values(a, samples)?;
    let (idx, &m) = values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(SemigroupError::InvalidEnvelope { m: 0.0 })?;
    Ok(EnvelopeFit {
        m,
        argmax: samples[idx],
        samples: samples.len(),
    })
}

/// Starting points taken from the best grid samples by `refined_envelope_fit`.
pub const REFINE_SEEDS: usize = 8;

/// Pattern search for a local maximum of the envelope value, with `Re`
/// stepped multiplicatively inside `(0, 0.95]`.
fn climb(a: &CMatrix, start: C64, im_step: f64) -> (C64, f64) {
    let mut best = start;
    let mut value = envelope_value(a, start);
    let (mut log_step, mut im_step) = (0.25f64, im_step);
    for _ in 0..200 {
        if log_step < 1e-4 && im_step < 1e-6 {
            break;
        }
        let candidates = [
            C64::new(best.re * log_step.exp(), best.im),
            C64::new(best.re * (-log_step).exp(), best.im),
            C64::new(best.re, best.im + im_step),
            C64::new(best.re, best.im - im_step),
        ];
        let mut moved = false;
        for z in candidates {
            if !(z.re > 0.0 && z.re <= 0.95) {
                continue;
            }
            let v = envelope_value(a, z);
            if v > value {
                best = z;
                value = v;
                moved = true;
            }
        }
        if !moved {
            log_step *= 0.5;
            im_step *= 0.5;
        }
    }
    (best, value)
}

/// Grid fit followed by local ascent from the best samples and from `seeds`,
/// so that `M` tracks the supremum between grid points.
pub fn refined_envelope_fit(
    a: &GeneratorSpec,
    samples: &[C64],
    seeds: &[C64],
) -> Result<EnvelopeFit, SemigroupError> {
    let values = envelope_values(a, samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut starts: Vec<C64> = order
        .iter()
        .take(REFINE_SEEDS)
        .map(|&i| samples[i])
        .collect();
    starts.extend(seeds.iter().filter(|z| z.re > 0.0 && z.re <= 0.95));
    let eigs = linalg::eigenvalues(&a.matrix)?;
    let im_step = 0.5 * im_budget(&eigs) / 16.0;
    let climbed: Vec<(C64, f64)> = starts
        .par_iter()
        .map(|&z| climb(&a.matrix, z, im_step))
        .collect();
    let mut fit = EnvelopeFit {
        m: values[order[0]],
        argmax: samples[order[0]],
        samples: samples.len() + climbed.len(),
    };
    for (z, v) in climbed {
        if v > fit.m {
            fit.m = v;
            fit.argmax = z;
        }
    }
    Ok(fit)
}

/// `|lambda - mu| <= r/2 < (r/(4M)) |log(r/4)| - r/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripChain {
    pub distance_bound: f64,
    pub envelope_gap: f64,
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Direct `||R(mu)|| <= 2/r` on the strip.
    Strip,
    /// Envelope estimate and perturbation chain at `lambda = r/4 + i Im mu`.
    Translated,
    /// Envelope estimate on `Re lambda in [r/4, 2/3]`.
    MiddleFlank,
    /// `||R(lambda)|| <= K / (Re lambda - 7/12)` on `Re lambda >= 2/3`.
    RightFlank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSample {
    pub kind: SampleKind,
    pub re_mu: f64,
    pub im_mu: f64,
    pub resolvent_norm: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripCertificate {
    pub m: f64,
    pub r: f64,
    pub log_r: f64,
    pub strip_halfwidth: f64,
    pub strip_bound: f64,
    pub s0_upper: f64,
    /// `|log(r/4)| - 4M`, at least 1 by construction.
    pub margin: f64,
    pub chain: StripChain,
    pub s_oracle: Option<f64>,
    /// `sup_t ||e^{tA}|| e^{-7t/12}` used by the right flank.
    pub right_flank_constant: Option<f64>,
    pub refits: usize,
    pub verification_samples: Vec<StripSample>,
}

/// Strip parameters from the envelope constant:
/// `r = min(0.9, 4 e^{-(4M + 1)})`, half-width `r/4`, bound `2/r`.
pub fn strip_certificate(m: f64) -> Result<StripCertificate, SemigroupError> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(SemigroupError::InvalidEnvelope { m });
    }
    let log_r = 0.9f64.ln().min(4.0f64.ln() - (4.0 * m + 1.0));
    let r = log_r.exp();
    if !(r >= f64::MIN_POSITIVE) {
        return Err(SemigroupError::StripUnderflow { m });
    }
    let log_quarter = (r / 4.0).ln().abs();
    let distance_bound = r / 2.0;
    let envelope_gap = r / (4.0 * m) * log_quarter - r / 2.0;
    Ok(StripCertificate {
        m,
        r,
        log_r,
        strip_halfwidth: r / 4.0,
        strip_bound: 2.0 / r,
        s0_upper: -r / 4.0,
        margin: log_quarter - 4.0 * m,
        chain: StripChain {
            distance_bound,
            envelope_gap,
            strict: distance_bound < envelope_gap,
        },
        s_oracle: None,
        right_flank_constant: None,
        refits: 0,
        verification_samples: Vec::new(),
    })
}

fn envelope_bound(m: f64, re: f64) -> f64 {
    m / (re * re.ln().abs())
}

fn norm_or_inf(a: &CMatrix, z: C64) -> Result<f64, SemigroupError> {
    match linalg::resolvent_norm(a, z) {
        Ok(v) => Ok(v),
        Err(LinalgError::Singular { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

fn strip_points(cert: &StripCertificate, eigs: &[C64], n_random: usize, seed: u64) -> Vec<C64> {
    let q = cert.strip_halfwidth;
    let budget = im_budget(eigs);
    let res = [-q, -q / 2.0, 0.0, q / 2.0, q];
    let mut ims: Vec<f64> = (0..33)
        .map(|j| -budget + 2.0 * budget * j as f64 / 32.0)
        .collect();
    ims.extend(eigs.iter().map(|z| z.im));
    let mut pts: Vec<C64> = res
        .iter()
        .flat_map(|&re| ims.iter().map(move |&im| C64::new(re, im)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        pts.push(C64::new(
            rng.random_range(-q..=q),
            rng.random_range(-budget..=budget),
        ));
    }
    pts
}

fn flank_points(cert: &StripCertificate, eigs: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let budget = im_budget(eigs);
    let mut ims: Vec<f64> = (0..17)
        .map(|j| -budget + 2.0 * budget * j as f64 / 16.0)
        .collect();
    ims.extend(eigs.iter().map(|z| z.im));
    let (lo, hi) = (cert.strip_halfwidth.ln(), (2.0f64 / 3.0).ln());
    let middle_re: Vec<f64> = (0..8)
        .map(|i| (lo + (hi - lo) * i as f64 / 7.0).exp())
        .collect();
    let right_re = [2.0 / 3.0, 1.0, 2.0, 4.0, 8.0];
    let grid = |res: &[f64]| -> Vec<C64> {
        res.iter()
            .flat_map(|&re| ims.iter().map(move |&im| C64::new(re, im)))
            .collect()
    };
    (grid(&middle_re), grid(&right_re))
}

fn evaluate_strip(
    a: &GeneratorSpec,
    cert: &StripCertificate,
    eigs: &[C64],
    flank_constant: f64,
    n_random: usize,
    seed: u64,
) -> Result<Vec<StripSample>, SemigroupError> {
    let q = cert.strip_halfwidth;
    let strip = strip_points(cert, eigs, n_random, seed);
    let (middle, right) = flank_points(cert, eigs);
    let translated_bound = envelope_bound(cert.m, q);

    let strip_samples: Vec<Vec<StripSample>> = strip
        .par_iter()
        .map(|&mu| -> Result<Vec<StripSample>, SemigroupError> {
            let direct = norm_or_inf(&a.matrix, mu)?;
            let lambda = C64::new(q, mu.im);
            let at_lambda = norm_or_inf(&a.matrix, lambda)?;
            // |lambda - mu| < 1/||R(lambda)|| - r/2 must follow from the envelope
            let reach = 1.0 / at_lambda - cert.r / 2.0;
            Ok(vec![
                StripSample {
                    kind: SampleKind::Strip,
                    re_mu: mu.re,
                    im_mu: mu.im,
                    resolvent_norm: direct,
                    bound: cert.strip_bound,
                    pass: direct <= cert.strip_bound + STRIP_TOLERANCE,
                },
                StripSample {
                    kind: SampleKind::Translated,
                    re_mu: lambda.re,
                    im_mu: lambda.im,
                    resolvent_norm: at_lambda,
                    bound: translated_bound,
                    pass: at_lambda <= translated_bound * (1.0 + ENVELOPE_TOLERANCE)
                        && (lambda - mu).norm() < reach,
                },
            ])
        })
        .collect::<Result<_, _>>()?;

    let flank = |pts: &[C64], kind: SampleKind| -> Result<Vec<StripSample>, SemigroupError> {
        pts.par_iter()
            .map(|&z| {
                let nr = norm_or_inf(&a.matrix, z)?;
                let bound = match kind {
                    SampleKind::MiddleFlank => envelope_bound(cert.m, z.re),
                    _ => flank_constant / (z.re - RIGHT_FLANK_RATE),
                };
                Ok(StripSample {
                    kind,
                    re_mu: z.re,
                    im_mu: z.im,
                    resolvent_norm: nr,
                    bound,
                    pass: nr <= bound * (1.0 + ENVELOPE_TOLERANCE),
                })
            })
            .collect()
    };
    let mut out: Vec<StripSample> = strip_samples.into_iter().flatten().collect();
    out.extend(flank(&middle, SampleKind::MiddleFlank)?);
    out.extend(flank(&right, SampleKind::RightFlank)?);
    Ok(out)
}

/// Re-verify a certificate by direct solves on the strip, at the translated
/// points `r/4 + i Im mu`, and on both flanks. On failure `M` is refitted
/// once on a denser grid that includes the violating points.
pub fn verify_strip(
    a: &GeneratorSpec,
    cert: StripCertificate,
    fit_samples: &[C64],
    n_random: usize,
    seed: u64,
) -> Result<StripCertificate, SemigroupError> {
    let eigs = linalg::eigenvalues(&a.matrix)?;
    let s_oracle = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let flank_constant =
        weighted_sup(&a.matrix, RIGHT_FLANK_RATE)?.ok_or(SemigroupError::NoDecayCertificate {
            alpha: RIGHT_FLANK_RATE,
        })?;
    let mut cert = cert;
    for attempt in 0..2 {
        let samples = evaluate_strip(a, &cert, &eigs, flank_constant, n_random, seed)?;
        let failed: Vec<&StripSample> = samples.iter().filter(|s| !s.pass).collect();
        if failed.is_empty() {
            cert.s_oracle = Some(s_oracle);
            cert.right_flank_constant = Some(flank_constant);
            cert.refits = attempt;
            cert.verification_samples = samples;
            return Ok(cert);
        }
        if attempt == 1 {
            let s = failed[0];
            return Err(SemigroupError::StripViolation {
                re: s.re_mu,
                im: s.im_mu,
                check: format!("{:?}", s.kind),
                value: s.resolvent_norm,
                bound: s.bound,
            });
        }
        // refit: denser grid plus envelope points at the offending heights
        let mut dense = default_envelope_samples(a, 2)?;
        dense.extend_from_slice(fit_samples);
        for s in &failed {
            let re = match s.kind {
                SampleKind::Strip | SampleKind::Translated => cert.strip_halfwidth,
                SampleKind::MiddleFlank => s.re_mu,
                SampleKind::RightFlank => continue,
            };
            if re > 0.0 && re < 1.0 {
                dense.push(C64::new(re, s.im_mu));
            }
        }
        dense.retain(|z| {
            eigs.iter()
                .map(|e| (z - e).norm())
                .fold(f64::INFINITY, f64::min)
                >= SINGULAR_DISTANCE
        });
        let seeds: Vec<C64> = failed
            .iter()
            .filter(|s| s.kind == SampleKind::MiddleFlank)
            .map(|s| C64::new(s.re_mu, s.im_mu))
            .collect();
        let fit = refined_envelope_fit(a, &dense, &seeds)?;
        cert = strip_certificate(fit.m.max(cert.m))?;
    }
    unreachable!("loop returns on its second pass")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupConfig {
    /// Exponents tried in order for each pair.
    pub p_plan: Vec<f64>,
    /// Fresh random strip points in the verification.
    pub fresh_samples: usize,
    pub seed: u64,
    /// Trajectory quadrature overrides; `None` picks the defaults.
    pub quadrature: QuadratureOptions,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            p_plan: vec![1.0, 2.0],
            fresh_samples: 64,
            seed: 0,
            quadrature: QuadratureOptions::default(),
        }
    }
}

/// `|<x', R(lambda) x>| <= M_q(Re lambda) C_p(x', x)` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderCheck {
    pub re_lambda: f64,
    pub pairing: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupPair {
    pub origin: PairOrigin,
    /// First exponent with a finite trajectory norm.
    pub p: Option<f64>,
    pub lp: Option<LpNorm>,
    pub holder: Vec<HolderCheck>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemigroupVerdict {
    /// Certificate emitted and consistent with the eigenvalue oracle.
    Certified,
    /// Some sampled pair has no finite trajectory norm.
    HypothesisUnmet,
    /// Hypothesis met on samples, but no certificate could be built.
    CertificationFailed,
    /// A certificate contradicts the eigenvalue oracle.
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub dim: usize,
    /// Rescaling `A <- eps A` applied before the analysis.
    pub epsilon: f64,
    /// `s(A)` of the original generator.
    pub s_oracle: f64,
    pub decay: Option<DecayEnvelope>,
    /// The hypothesis is checked on these sampled pairs only.
    pub sampled_pairs: usize,
    pub pairs: Vec<SemigroupPair>,
    pub hypothesis_met: bool,
    pub fit: Option<EnvelopeFit>,
    /// Certificate for the rescaled generator.
    pub certificate: Option<StripCertificate>,
    pub s0_upper_rescaled: Option<f64>,
    /// `s0_upper_rescaled / eps`.
    pub s0_upper: Option<f64>,
    pub consistent: bool,
    pub verdict: SemigroupVerdict,
    pub error: Option<String>,
}

const HOLDER_RE: [f64; 4] = [0.01, 0.1, 0.5, 0.9];

#[allow(clippy::too_many_arguments)]
fn analyze_semigroup_pair(
    a: &GeneratorSpec,
    env: Option<&DecayEnvelope>,
    env_err: Option<&SemigroupError>,
    resolvents: &[(f64, CMatrix)],
    origin: PairOrigin,
    x: &VectorC,
    xp: &FunctionalC,
    p_plan: &[f64],
    quadrature: QuadratureOptions,
) -> SemigroupPair {
    let mut pair = SemigroupPair {
        origin,
        p: None,
        lp: None,
        holder: Vec::new(),
        error: None,
    };
    let Some(env) = env else {
        pair.error = env_err.map(|e| e.to_string());
        return pair;
    };
    let mut last_err = None;
    for &p in p_plan {
        match lp_with_envelope(a, env, x, xp, p, quadrature) {
            Ok(lp) if lp.value.is_finite() => {
                pair.p = Some(p);
                pair.lp = Some(lp);
                break;
            }
            Ok(_) => last_err = Some(format!("p = {p}: trajectory norm is not finite")),
            Err(e) => last_err = Some(format!("p = {p}: {e}")),
        }
    }
    let (Some(p), Some(lp)) = (pair.p, pair.lp) else {
        pair.error = last_err.or_else(|| Some("empty exponent plan".into()));
        return pair;
    };
    let q = conjugate(p);
    for (re, r) in resolvents {
        let pairing = linalg::pair(&xp.0, &mat_vec(r, &x.0)).norm();
        let bound = mq_factor(*re, q).map(|m| m * lp.value).unwrap_or(f64::NAN);
        pair.holder.push(HolderCheck {
            re_lambda: *re,
            pairing,
            bound,
            holds: pairing <= bound * (1.0 + 1e-6),
        });
    }
    pair
}

/// Normalize the growth bound, test the integrability hypothesis on every
/// sampled pair, fit `M`, and build and verify the strip certificate.
pub fn analyze_semigroup(
    gen: &GeneratorSpec,
    plan: &SamplePlan,
    config: &SemigroupConfig,
) -> Result<SemigroupReport, SemigroupError> {
    for pair in &plan.pairs {
        check_pair(&gen.matrix, &pair.x, &pair.xp)?;
    }
    for &p in &config.p_plan {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(SemigroupError::BadExponent { p });
        }
    }
    let s_oracle = gen.spectral_bound()?;
    let (epsilon, a) = gen.normalized()?;
    let (env, env_err) = match decay_envelope(&a) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e)),
    };
    let resolvents: Vec<(f64, CMatrix)> = HOLDER_RE
        .iter()
        .filter_map(|&re| {
            linalg::resolvent(&a.matrix, C64::new(re, 0.0))
                .ok()
                .map(|r| (re, r))
        })
        .collect();
    let pairs: Vec<SemigroupPair> = plan
        .pairs
        .par_iter()
        .map(|p| {
            analyze_semigroup_pair(
                &a,
                env.as_ref(),
                env_err.as_ref(),
                &resolvents,
                p.origin.clone(),
                &p.x,
                &p.xp,
                &config.p_plan,
                config.quadrature,
            )
        })
        .collect();
    let hypothesis_met = !pairs.is_empty() && pairs.iter().all(|p| p.p.is_some());
    let mut report = SemigroupReport {
        dim: gen.dim(),
        epsilon,
        s_oracle,
        decay: env,
        sampled_pairs: pairs.len(),
        pairs,
        hypothesis_met,
        fit: None,
        certificate: None,
        s0_upper_rescaled: None,
        s0_upper: None,
        consistent: true,
        verdict: SemigroupVerdict::HypothesisUnmet,
        error: None,
    };
    if !hypothesis_met {
        return Ok(report);
    }
    let outcome = (|| -> Result<(EnvelopeFit, StripCertificate), SemigroupError> {
        let samples = default_envelope_samples(&a, 1)?;
        let fit = refined_envelope_fit(&a, &samples, &[])?;
        let cert = strip_certificate(fit.m)?;
        let cert = verify_strip(&a, cert, &samples, config.fresh_samples, config.seed)?;
        Ok((fit, cert))
    })();
    match outcome {
        Ok((fit, cert)) => {
            let upper = cert.s0_upper / epsilon;
            report.consistent = s_oracle <= 0.0 && s_oracle <= upper && cert.s0_upper < 0.0;
            report.verdict = if report.consistent {
                SemigroupVerdict::Certified
            } else {
                SemigroupVerdict::Violation
            };
            report.s0_upper_rescaled = Some(cert.s0_upper);
            report.s0_upper = Some(upper);
            report.fit = Some(fit);
            report.certificate = Some(cert);
        }
        Err(e) => {
            report.verdict = SemigroupVerdict::CertificationFailed;
            report.error = Some(e.to_string());
        }
    }
    Ok(report)
}

/// Diagonal generator helper.
pub fn diagonal_generator(entries: &[C64]) -> GeneratorSpec {
    let n = entries.len();
    GeneratorSpec {
        matrix: CMatrix::from_fn(n, n, |i, j| if i == j { entries[i] } else { ZERO }),
        growth_hint: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn diag(v: &[f64]) -> GeneratorSpec {
        diagonal_generator(&v.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>())
    }

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn exp_examples() {
        let zero = diag(&[0.0, 0.0]);
        assert_eq!(exp_at(&zero, 3.0).unwrap(), CMatrix::identity(2, 2));
        let d = diagonal_generator(&[c(-1.0, 0.5), c(0.3, 0.0)]);
        let e = exp_at(&d, 2.0).unwrap();
        assert!((e[(0, 0)] - (c(-1.0, 0.5) * 2.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - (0.6f64).exp()).norm() < 1e-14);
        assert_eq!(e[(0, 1)], ZERO);

        let j =
            GeneratorSpec::from_operator(&OperatorSpec::jordan(ZERO, 3).unwrap(), None).unwrap();
        let e = exp_at(&j, 1.0).unwrap();
        let a = &j.matrix;
        let expect = CMatrix::identity(3, 3) + a + a * a * c(0.5, 0.0);
        assert!((&e - &expect).norm() < 1e-15);

        assert_eq!(
            exp_at(&d, -1.0),
            Err(SemigroupError::NegativeTime { t: -1.0 })
        );
        assert!(matches!(
            exp_at(&diag(&[-10.0]), 6.0),
            Err(SemigroupError::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn exp_at_zero_is_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = GeneratorSpec::new(random_matrix(4, &mut rng), None).unwrap();
        assert_eq!(exp_at(&a, 0.0).unwrap(), CMatrix::identity(4, 4));
    }

    #[test]
    fn trajectory_examples() {
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let x = VectorC(vec![c(1.0, 1.0), c(0.5, 0.0)]);
        let xp = FunctionalC(vec![c(0.0, 1.0), c(2.0, 0.0)]);
        let traj = weak_trajectory(&diag(&[0.0, 0.0]), &x, &xp, &grid).unwrap();
        let base = xp.pair(&x);
        assert!(traj.iter().all(|z| (z - base).norm() < 1e-15));

        let traj = weak_trajectory(
            &diag(&[-1.0]),
            &VectorC::basis(1, 0),
            &FunctionalC::basis(1, 0),
            &grid,
        )
        .unwrap();
        for (z, t) in traj.iter().zip(&grid) {
            assert!((z.re - (-t).exp()).abs() < 1e-13);
        }
        assert_eq!(
            weak_trajectory(
                &diag(&[-1.0]),
                &VectorC::basis(1, 0),
                &FunctionalC::basis(1, 0),
                &[1.0, 0.5]
            ),
            Err(SemigroupError::BadGrid)
        );
    }

    #[test]
    fn skew_hermitian_trajectory_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_matrix(4, &mut rng);
        let skew = (&g - g.adjoint()) * c(0.5, 0.0);
        let a = GeneratorSpec::new(skew, None).unwrap();
        let x = VectorC(crate::operators::random_unit(4, &mut rng));
        let xp = FunctionalC(crate::operators::random_unit(4, &mut rng));
        let grid: Vec<f64> = (0..200).map(|k| k as f64 * 0.37).collect();
        for z in weak_trajectory(&a, &x, &xp, &grid).unwrap() {
            assert!(z.norm() <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn decay_envelope_dominates_sampled_norms() {
        let j = GeneratorSpec::from_operator(&OperatorSpec::jordan(c(-0.5, 0.0), 4).unwrap(), None)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = diagonal_generator(&[c(-0.05, 2.0), c(-1.0, 0.0), c(-3.0, -1.0)]);
        let v = CMatrix::identity(3, 3) + random_matrix(3, &mut rng) * c(0.3, 0.0);
        let vinv = v.clone().try_inverse().unwrap();
        let sim = GeneratorSpec::new(&v * &d.matrix * vinv, None).unwrap();
        for g in [j, sim] {
            let env = decay_envelope(&g).unwrap();
            assert!(env.alpha < 0.0 && env.alpha > env.s_oracle);
            for k in 0..400 {
                let t = k as f64 * 0.25;
                let e = exp_long(&g.matrix, t).unwrap();
                let w = linalg::op_norm(&e).unwrap() * (-env.alpha * t).exp();
                assert!(w <= env.kappa, "t = {t}: {w} > {}", env.kappa);
            }
        }
    }

    #[test]
    fn lp_norm_examples() {
        for a in [0.5, 1.0, 3.0] {
            let g = diag(&[-a]);
            let e0 = VectorC::basis(1, 0);
            let f0 = FunctionalC::basis(1, 0);
            let l1 = lp_trajectory_norm(&g, &e0, &f0, 1.0, QuadratureOptions::default()).unwrap();
            assert!((l1.value - 1.0 / a).abs() < 1e-9 / a, "{a}: {}", l1.value);
            let l2 = lp_trajectory_norm(&g, &e0, &f0, 2.0, QuadratureOptions::default()).unwrap();
            assert!((l2.value - (0.5 / a).sqrt()).abs() < 1e-9, "{a}: {l2:?}");
            let zero = lp_trajectory_norm(
                &g,
                &VectorC(vec![ZERO]),
                &f0,
                1.5,
                QuadratureOptions::default(),
            )
            .unwrap();
            assert_eq!(zero.value, 0.0);
        }
        let rot = diagonal_generator(&[c(0.0, 1.0)]);
        assert!(matches!(
            lp_trajectory_norm(
                &rot,
                &VectorC::basis(1, 0),
                &FunctionalC::basis(1, 0),
                1.0,
                QuadratureOptions::default()
            ),
            Err(SemigroupError::NoDecayCertificate { .. })
        ));
    }

    #[test]
    fn mq_examples() {
        assert_eq!(mq_factor(0.3, f64::INFINITY).unwrap(), 1.0);
        assert!((mq_factor(1.0, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            mq_factor(0.5, 1.0),
            Err(SemigroupError::BadConjugate { q: 1.0 })
        );
        assert_eq!(
            mq_factor(0.0, 2.0),
            Err(SemigroupError::InvalidReLambda { re: 0.0 })
        );
        assert!(mq_simplified(0.2, 3.0).unwrap() >= mq_factor(0.2, 3.0).unwrap());
        // s |log s| M_q(s) -> 0 as s -> 0
        let vals: Vec<f64> = (1..=12)
            .map(|k| {
                let s = 10f64.powi(-k);
                s * s.ln().abs() * mq_factor(s, 2.0).unwrap()
            })
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(vals[11] < 1e-4);
    }

    #[test]
    fn laplace_examples() {
        let g = diag(&[-1.0]);
        assert_eq!(
            laplace_resolvent(&g, ONE, 0.0, None).unwrap(),
            CMatrix::zeros(1, 1)
        );
        let r = laplace_resolvent(&g, ONE, 40.0, None).unwrap();
        assert!((r[(0, 0)] - c(0.5, 0.0)).norm() < 1e-8);

        let g = diag(&[-1.0, -2.0, -5.0]);
        for lambda in [ONE, c(1.0, 2.0)] {
            let lap = laplace_resolvent(&g, lambda, 40.0, None).unwrap();
            let direct = linalg::resolvent(&g.matrix, lambda).unwrap();
            assert!(linalg::op_norm(&(&lap - &direct)).unwrap() <= 1e-6);
        }
        assert!(matches!(
            laplace_resolvent(&g, c(-0.5, 0.0), 1.0, None),
            Err(SemigroupError::InvalidReLambda { .. })
        ));
    }

    #[test]
    fn laplace_residual_decreases_with_tau() {
        let g = diag(&[-0.5, -1.5]);
        let direct = linalg::resolvent(&g.matrix, c(0.2, 1.0)).unwrap();
        let res: Vec<f64> = [2.0, 5.0, 10.0, 20.0]
            .iter()
            .map(|&tau| {
                let l = laplace_resolvent(&g, c(0.2, 1.0), tau, None).unwrap();
                linalg::op_norm(&(&l - &direct)).unwrap()
            })
            .collect();
        for w in res.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn cauchy_net_decays_at_predicted_rate() {
        let g = diag(&[-1.0, -2.0, -5.0]);
        let rec = cauchy_net_check(&g, c(1.0, 2.0), &[10.0, 20.0], 60.0).unwrap();
        assert_eq!(rec.re_mu, 0.5);
        assert!(rec.ratios[0] <= rec.predicted[0] * 1.01);
    }

    #[test]
    fn envelope_examples() {
        let g1 = diag(&[-1.0]);
        let samples = default_envelope_samples(&g1, 1).unwrap();
        let m1 = log_envelope_fit(&g1, &samples).unwrap();
        assert!(m1.m <= (-1.0f64).exp() + 1e-12);
        let g10 = diag(&[-10.0]);
        let m10 = log_envelope_fit(&g10, &samples).unwrap();
        assert!(m10.m < m1.m);
        assert!(matches!(
            log_envelope_fit(&diagonal_generator(&[c(0.5, 0.0)]), &[c(0.5 + 1e-12, 0.0)]),
            Err(SemigroupError::SingularSample { .. })
        ));
        assert!(matches!(
            log_envelope_fit(&g1, &[c(1.0, 0.0)]),
            Err(SemigroupError::InvalidReLambda { .. })
        ));
    }

    #[test]
    fn strip_certificate_examples() {
        let c1 = strip_certificate(0.25).unwrap();
        assert!((c1.r - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!(c1.margin >= 1.0 - 1e-12);
        assert!(c1.chain.strict);
        let c2 = strip_certificate(1e-6).unwrap();
        assert_eq!(c2.r, 0.9);
        assert!(c2.margin > 1.49);
        let c3 = strip_certificate(5.0).unwrap();
        assert!((c3.r / (4.0 * (-21.0f64).exp()) - 1.0).abs() < 1e-12);
        assert!(c3.s0_upper < 0.0 && (c3.s0_upper + 7.6e-10).abs() < 1e-11);
        assert!(matches!(
            strip_certificate(200.0),
            Err(SemigroupError::StripUnderflow { .. })
        ));
        assert!(strip_certificate(0.0).is_err());
    }

    #[test]
    fn verify_diagonal_strip() {
        let g = diag(&[-1.0]);
        let cert = strip_certificate(-(0.5f64 / 4.0).ln() / 4.0 - 0.25).unwrap();
        assert!((cert.r - 0.5).abs() < 1e-12);
        let samples = default_envelope_samples(&g, 1).unwrap();
        let cert = verify_strip(&g, cert, &samples, 64, 0).unwrap();
        for s in cert
            .verification_samples
            .iter()
            .filter(|s| s.kind == SampleKind::Strip)
        {
            assert!(s.resolvent_norm <= 8.0 / 7.0 + 1e-12);
        }
    }

    #[test]
    fn eigenvalue_close_to_axis_stays_outside_strip() {
        let delta = 1e-3;
        let g = diag(&[-delta, -1.0]);
        let plan = SamplePlan::standard(2, true, 4, 0);
        let rep = analyze_semigroup(&g, &plan, &SemigroupConfig::default()).unwrap();
        assert_eq!(rep.verdict, SemigroupVerdict::Certified);
        let cert = rep.certificate.unwrap();
        assert!(cert.strip_halfwidth < delta);
        assert!(cert.verification_samples.iter().all(|s| s.pass));
    }

    #[test]
    fn eigenvalue_on_axis_is_never_certified() {
        let g = diag(&[0.0, -1.0]);
        let samples = default_envelope_samples(&g, 1).unwrap();
        let fit = log_envelope_fit(&g, &samples).unwrap();
        let result =
            strip_certificate(fit.m).and_then(|cert| verify_strip(&g, cert, &samples, 64, 0));
        assert!(matches!(
            result,
            Err(SemigroupError::StripViolation { .. } | SemigroupError::StripUnderflow { .. })
        ));
        let plan = SamplePlan::standard(2, true, 2, 0);
        let rep = analyze_semigroup(&g, &plan, &SemigroupConfig::default()).unwrap();
        assert!(rep.certificate.is_none());
    }

    #[test]
    fn analyze_examples() {
        let plan = SamplePlan::standard(2, true, 4, 0);
        let rep =
            analyze_semigroup(&diag(&[-1.0, -2.0]), &plan, &SemigroupConfig::default()).unwrap();
        assert_eq!(rep.verdict, SemigroupVerdict::Certified);
        assert!((rep.s_oracle + 1.0).abs() < 1e-12);
        let upper = rep.s0_upper.unwrap();
        assert!(upper > -1.0 && upper < 0.0);
        assert!(rep.pairs.iter().flat_map(|p| &p.holder).all(|h| h.holds));

        let plan1 = SamplePlan::standard(1, true, 0, 0);
        let rep = analyze_semigroup(
            &diagonal_generator(&[c(0.0, 1.0)]),
            &plan1,
            &SemigroupConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, SemigroupVerdict::HypothesisUnmet);
        assert!(rep.pairs[0]
            .error
            .as_ref()
            .unwrap()
            .contains("no decay certificate"));

        let j = GeneratorSpec::from_operator(&OperatorSpec::jordan(c(-0.5, 0.0), 3).unwrap(), None)
            .unwrap();
        let plan3 = SamplePlan::standard(3, true, 4, 0);
        let rep = analyze_semigroup(&j, &plan3, &SemigroupConfig::default()).unwrap();
        assert_eq!(rep.verdict, SemigroupVerdict::Certified, "{:?}", rep.error);
    }

    #[test]
    fn growth_above_half_is_rescaled() {
        let g = GeneratorSpec::new(diag(&[-1.0, -2.0]).matrix, Some(2.0)).unwrap();
        let (eps, scaled) = g.normalized().unwrap();
        assert_eq!(eps, 0.25);
        assert_eq!(scaled.matrix[(0, 0)], c(-0.25, 0.0));
        let plan = SamplePlan::standard(2, true, 2, 0);
        let rep = analyze_semigroup(&g, &plan, &SemigroupConfig::default()).unwrap();
        assert_eq!(rep.epsilon, 0.25);
        assert_eq!(rep.s0_upper.unwrap(), rep.s0_upper_rescaled.unwrap() / 0.25);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn semigroup_law(seed in 0u64..1000, s in 0.0f64..3.0, t in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = GeneratorSpec::new(random_matrix(4, &mut rng), None).unwrap();
            let est = exp_at(&a, s + t).unwrap();
            let prod = exp_at(&a, s).unwrap() * exp_at(&a, t).unwrap();
            prop_assert!((&est - &prod).norm() <= 1e-9 * (1.0 + est.norm()));
        }

        #[test]
        fn mq_matches_direct_integral(s in 1e-3f64..1.0, q in 1.01f64..64.0) {
            // int_0^inf e^{-q s t} dt = 1/(q s)
            let expect = (1.0 / (q * s)).powf(1.0 / q);
            prop_assert!((mq_factor(s, q).unwrap() - expect).abs() <= 1e-12 * expect);
        }
    }
}
