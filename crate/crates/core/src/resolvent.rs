//! Discrete-time resolvent machinery: the averaging functional `e(r)`, Neumann
//! partial sums of `R(r lambda, T)`, the two-sided resolvent estimates, and the
//! end-to-end analysis relating governed weak orbits to `r(T) < 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMatrix, LinalgError, C64, ZERO};
use crate::operators::{
    self, gelfand_from_norms, power_fit, power_norms, spectral_radius_oracle, weak_orbit,
    FunctionalC, OperatorError, OperatorSpec, PowerFit, VectorC,
};
use crate::seqspace::{
    self, c0_membership_probe, governs, merge_governing, modulus, rearrange, staircase_governs,
    Gauge, GoverningCertificate, NonNegSeq, Probe, SeqError, Verdict,
};

/// Consecutive growing Neumann terms that trigger a divergence check.
pub const DIVERGENCE_RUN: usize = 32;

/// Tolerance for links of the estimate chain.
pub const CHAIN_TOLERANCE: f64 = 1e-10;

/// Relative tolerance for the spectral lower bound.
pub const LOWER_BOUND_TOLERANCE: f64 = 1e-8;

/// Maximal distance of a claimed spectral point from the computed spectrum.
pub const SPECTRAL_DISTANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolventError {
    #[error("r = {r} must exceed 1")]
    InvalidR { r: f64 },
    #[error("probe direction must be unimodular, |lambda| = {modulus}")]
    InvalidDirection { modulus: f64 },
    #[error("sequence is zero")]
    ZeroSequence,
    #[error("no index in range after which all entries are <= {epsilon}")]
    NoDecayInRange { epsilon: f64 },
    #[error("tail bound {tail} exceeds epsilon {epsilon}")]
    TailTooLarge { tail: f64, epsilon: f64 },
    #[error("Neumann series diverges at r = {r} (spectral radius {rho}, {terms} terms)")]
    DivergentSeries { r: f64, rho: f64, terms: usize },
    #[error("Neumann series did not reach tolerance within {terms} terms (tail {tail_bound})")]
    HorizonExhausted { terms: usize, tail_bound: f64 },
    #[error("lambda is at distance {distance} from the spectrum")]
    NotSpectral { distance: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn check_r(r: f64) -> Result<(), ResolventError> {
    if r > 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(ResolventError::InvalidR { r })
    }
}

fn check_direction(lambda: C64) -> Result<(), ResolventError> {
    let modulus = lambda.norm();
    if (modulus - 1.0).abs() > 1e-12 {
        return Err(ResolventError::InvalidDirection { modulus });
    }
    Ok(())
}

/// Default grid `r = 1 + 2^{-k}`, `k = 1..=12` (decreasing).
pub fn default_r_grid() -> Vec<f64> {
    (1..=12).map(|k| 1.0 + 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EValue {
    /// `(r - 1) sum_{n < N} f_n / r^{n+1}`.
    pub value: f64,
    /// Bound on the omitted terms, `t r^{-N}`.
    pub tail_bound: f64,
    /// `t` was taken to be `||f||_inf` because `f` carries no tail bound.
    pub conservative: bool,
}

pub fn e_of_r(f: &NonNegSeq, r: f64) -> Result<EValue, ResolventError> {
    check_r(r)?;
    let inv = 1.0 / r;
    let mut w = inv;
    let mut sum = 0.0;
    for &x in f.entries() {
        sum += x * w;
        w *= inv;
    }
    let (t, conservative) = match f.tail_bound() {
        Some(t) => (t, false),
        None => (f.sup_norm(), true),
    };
    Ok(EValue {
        value: (r - 1.0) * sum,
        tail_bound: t * r.powf(-(f.len() as f64)),
        conservative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EDecayCertificate {
    pub epsilon: f64,
    pub n0: usize,
    pub delta: f64,
    /// Largest sampled `e(r)` on `(1, 1 + delta)`.
    pub max_e: f64,
    /// Largest sampled `2 epsilon + tail_bound(r)`.
    pub bound: f64,
    pub samples: usize,
    pub holds: bool,
}

/// Sample points `r = 1 + s delta` with `s` in `(0, 1)`: a uniform grid plus
/// points accumulating at `r = 1`.
fn decay_samples(delta: f64) -> Vec<f64> {
    let uniform = (0..24).map(|i| (i as f64 + 0.5) / 24.0);
    let near_one = (4..=20).map(|k| 0.5f64.powi(k));
    let near_top = [1.0 - 1e-9];
    uniform
        .chain(near_one)
        .chain(near_top)
        .map(|s| 1.0 + s * delta)
        .filter(|&r| r > 1.0)
        .collect()
}

/// `n0` and `delta = eps / (n0 ||f||_inf)` such that `e(r) <= 2 eps` on
/// `(1, 1 + delta)`; verified on sample points against `2 eps + tail`.
///
/// `n0` is the first index after which every entry in range is `<= eps`,
/// clamped to at least 1.
pub fn e_decay_certificate(
    f: &NonNegSeq,
    epsilon: f64,
) -> Result<EDecayCertificate, ResolventError> {
    if f.is_zero() {
        return Err(ResolventError::ZeroSequence);
    }
    if let Some(t) = f.tail_bound() {
        if t > epsilon {
            return Err(ResolventError::TailTooLarge { tail: t, epsilon });
        }
    }
    let entries = f.entries();
    let n0 = match entries.iter().rposition(|&x| x > epsilon) {
        Some(last) if last + 1 == entries.len() => {
            return Err(ResolventError::NoDecayInRange { epsilon });
        }
        Some(last) => last + 1,
        None => 0,
    }
    .max(1);
    let delta = epsilon / (n0 as f64 * f.sup_norm());
    let mut max_e = 0.0f64;
    let mut bound = 0.0f64;
    let mut holds = true;
    let rs = decay_samples(delta);
    for &r in &rs {
        let e = e_of_r(f, r)?;
        let b = 2.0 * epsilon + e.tail_bound;
        holds &= e.value <= b;
        max_e = max_e.max(e.value);
        bound = bound.max(b);
    }
    Ok(EDecayCertificate {
        epsilon,
        n0,
        delta,
        max_e,
        bound,
        samples: rs.len(),
        holds,
    })
}

/// A truncated Neumann series for `R(r lambda, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannApprox {
    pub matrix: CMatrix,
    pub terms: usize,
    /// `||T^K|| r^{-K} / (r - rho)` with `rho = ||T^K||^{1/K}`; zero when
    /// `T^K` vanishes exactly.
    pub tail_bound: f64,
    pub rho: f64,
}

struct NeumannState {
    z: C64,
    /// `T^n / z^{n+1}`.
    term: CMatrix,
    sum: CMatrix,
    n: usize,
    rising: usize,
    last_term_norm: f64,
    spectral_radius: Option<f64>,
}

impl NeumannState {
    fn new(dim: usize, z: C64) -> Self {
        let term = CMatrix::identity(dim, dim) / z;
        Self {
            z,
            sum: term.clone(),
            last_term_norm: term.norm(),
            term,
            n: 1,
            rising: 0,
            spectral_radius: None,
        }
    }

    fn step(&mut self, t: &CMatrix) {
        self.term = (t * &self.term) / self.z;
        self.sum += &self.term;
        self.n += 1;
        let norm = self.term.norm();
        if norm > self.last_term_norm {
            self.rising += 1;
        } else {
            self.rising = 0;
        }
        self.last_term_norm = norm;
    }

    fn exhausted(&self) -> bool {
        self.term.iter().all(|z| *z == ZERO)
    }

    /// Number of nonzero terms summed.
    fn terms(&self) -> usize {
        if self.exhausted() {
            self.n - 1
        } else {
            self.n
        }
    }

    /// `(||T^K||, rho_K)` from the current term.
    fn power_norm(&self, r: f64) -> Result<(f64, f64), LinalgError> {
        let k = self.n as f64;
        let tk = linalg::op_norm(&self.term)? * r.powf(k);
        Ok((tk, tk.powf(1.0 / k)))
    }

    fn tail(&self, r: f64) -> Result<(f64, f64), LinalgError> {
        if self.exhausted() {
            return Ok((0.0, 0.0));
        }
        let (tk, rho) = self.power_norm(r)?;
        let tail = if rho < r {
            tk * r.powf(-(self.n as f64)) / (r - rho)
        } else {
            f64::INFINITY
        };
        Ok((tail, rho))
    }
}

/// A run of growing terms alone does not indicate divergence (non-normal
/// transients grow for a while); it is confirmed against the spectral radius.
fn divergence_check(
    state: &mut NeumannState,
    t: &OperatorSpec,
    r: f64,
) -> Result<(), ResolventError> {
    if state.rising >= DIVERGENCE_RUN {
        let rho = match state.spectral_radius {
            Some(rho) => rho,
            None => {
                let rho = spectral_radius_oracle(t)?;
                state.spectral_radius = Some(rho);
                rho
            }
        };
        if rho >= r {
            return Err(ResolventError::DivergentSeries {
                r,
                rho,
                terms: state.n,
            });
        }
    }
    Ok(())
}

/// `sum_{n < terms} T^n / (r lambda)^{n+1}` by iterated multiplication.
pub fn neumann_resolvent(
    t: &OperatorSpec,
    r: f64,
    lambda: C64,
    terms: usize,
) -> Result<NeumannApprox, ResolventError> {
    check_r(r)?;
    check_direction(lambda)?;
    if terms == 0 {
        return Err(OperatorError::InvalidHorizon { got: 0, min: 1 }.into());
    }
    let m = t.densify();
    let mut state = NeumannState::new(m.nrows(), lambda * r);
    while state.n < terms && !state.exhausted() {
        state.step(&m);
        divergence_check(&mut state, t, r)?;
    }
    let (tail_bound, rho) = state.tail(r)?;
    Ok(NeumannApprox {
        terms: state.terms(),
        matrix: state.sum,
        tail_bound,
        rho,
    })
}

/// Neumann series extended (doubling the horizon) until the tail bound is at
/// most `rel_tol * ||S||`.
pub fn neumann_resolvent_adaptive(
    t: &OperatorSpec,
    r: f64,
    lambda: C64,
    rel_tol: f64,
    max_terms: usize,
) -> Result<NeumannApprox, ResolventError> {
    check_r(r)?;
    check_direction(lambda)?;
    let m = t.densify();
    let mut state = NeumannState::new(m.nrows(), lambda * r);
    let mut horizon = 16usize;
    loop {
        while state.n < horizon && !state.exhausted() {
            state.step(&m);
            divergence_check(&mut state, t, r)?;
        }
        let (tail_bound, rho) = state.tail(r)?;
        let norm = linalg::op_norm(&state.sum)?;
        if tail_bound <= rel_tol * norm {
            return Ok(NeumannApprox {
                terms: state.terms(),
                matrix: state.sum,
                tail_bound,
                rho,
            });
        }
        if horizon >= max_terms {
            return Err(ResolventError::HorizonExhausted {
                terms: state.n,
                tail_bound,
            });
        }
        horizon = (horizon * 2).min(max_terms);
    }
}

/// Residuals of the three links of
/// `|<x', R x>| <= sum |a_n| r^{-n-1} <= sum |a|*_n r^{-n-1} <= c e(r)/(r-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub r: f64,
    /// `|<x', R(r lambda, T) x>|` by direct solve.
    pub pairing: f64,
    /// `sum_{n < N} |a_n| r^{-n-1}`.
    pub orbit_sum: f64,
    /// `r^{-N} |<x', T^N R x>|`, the exact remainder of the truncated series.
    pub remainder: f64,
    /// `sum_{n < N} |a|*_n r^{-n-1}`.
    pub rearranged_sum: f64,
    /// `c e(r) / (r - 1)`.
    pub envelope: f64,
    /// Upper minus lower side of each link.
    pub residuals: [f64; 3],
    pub holds: bool,
}

/// Evaluate the estimate chain for one orbit over the length of `f`.
pub fn weak_resolvent_bound_check(
    t: &OperatorSpec,
    x: &VectorC,
    xp: &FunctionalC,
    f: &NonNegSeq,
    c: f64,
    r: f64,
    lambda: C64,
) -> Result<ChainRecord, ResolventError> {
    check_r(r)?;
    check_direction(lambda)?;
    let n = f.len();
    let orbit = weak_orbit(t, x, xp, n, None)?;
    let res = linalg::resolvent(&t.densify(), lambda * r)?;
    let rx: Vec<C64> = (0..x.len())
        .map(|i| (0..x.len()).map(|j| res[(i, j)] * x.0[j]).sum())
        .collect();
    let pairing = linalg::pair(&xp.0, &rx).norm();

    let mut v = VectorC(rx);
    for _ in 0..n {
        v = t.apply(&v)?;
    }
    let remainder = xp.pair(&v).norm() * r.powf(-(n as f64));

    let weights: Vec<f64> = {
        let inv = 1.0 / r;
        let mut w = inv;
        (0..n)
            .map(|_| {
                let cur = w;
                w *= inv;
                cur
            })
            .collect()
    };
    let moduli = modulus(&orbit);
    let sorted = rearrange(&moduli);
    let orbit_sum: f64 = moduli
        .entries()
        .iter()
        .zip(&weights)
        .map(|(a, w)| a * w)
        .sum();
    let rearranged_sum: f64 = sorted
        .entries()
        .iter()
        .zip(&weights)
        .map(|(a, w)| a * w)
        .sum();
    let envelope = c * e_of_r(f, r)?.value / (r - 1.0);
    let residuals = [
        orbit_sum + remainder - pairing,
        rearranged_sum - orbit_sum,
        envelope - rearranged_sum,
    ];
    Ok(ChainRecord {
        r,
        pairing,
        orbit_sum,
        remainder,
        rearranged_sum,
        envelope,
        holds: residuals.iter().all(|&x| x >= -CHAIN_TOLERANCE),
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRecord {
    pub r: f64,
    /// `||R(r lambda, T)||` by direct solve.
    pub resolvent_norm: f64,
    /// `1 / dist(r lambda, sigma(T))`.
    pub inverse_distance: f64,
    /// `1 / (r - 1)`.
    pub inverse_gap: f64,
    /// `||R|| >= 1/dist` within relative tolerance.
    pub distance_bound_holds: bool,
    /// `||R|| >= 1/(r-1)` within relative tolerance.
    pub gap_bound_holds: bool,
}

/// `||R(r lambda, T)|| >= 1/dist(r lambda, sigma(T)) >= 1/(r - 1)` for a
/// unimodular spectral point `lambda`.
pub fn resolvent_lower_bound_check(
    t: &OperatorSpec,
    r: f64,
    lambda: C64,
) -> Result<LowerBoundRecord, ResolventError> {
    check_r(r)?;
    check_direction(lambda)?;
    let spectrum = t.spectrum()?;
    let distance = spectrum
        .iter()
        .map(|mu| (lambda - mu).norm())
        .fold(f64::INFINITY, f64::min);
    if distance > SPECTRAL_DISTANCE_TOLERANCE {
        return Err(ResolventError::NotSpectral { distance });
    }
    let z = lambda * r;
    let dist = spectrum
        .iter()
        .map(|mu| (z - mu).norm())
        .fold(f64::INFINITY, f64::min);
    let resolvent_norm = linalg::resolvent_norm(&t.densify(), z)?;
    let inverse_distance = 1.0 / dist;
    let inverse_gap = 1.0 / (r - 1.0);
    Ok(LowerBoundRecord {
        r,
        resolvent_norm,
        inverse_distance,
        inverse_gap,
        distance_bound_holds: resolvent_norm >= inverse_distance * (1.0 - LOWER_BOUND_TOLERANCE),
        gap_bound_holds: resolvent_norm >= inverse_gap * (1.0 - LOWER_BOUND_TOLERANCE),
    })
}

/// Resolvent norms along the ray `r lambda`, by direct solve and by Neumann
/// partial sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventProbe {
    #[serde(with = "crate::serde_util::complex")]
    pub lambda: C64,
    pub r_grid: Vec<f64>,
    pub norms: Vec<f64>,
    /// `None` where the series does not converge at the horizon used.
    pub neumann_norms: Vec<Option<f64>>,
    /// `e(r)` of the governing sequence, when one is supplied.
    pub e_values: Vec<Option<f64>>,
    pub tail_estimates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub r: f64,
    pub e: Option<f64>,
    pub resolvent_norm: f64,
    pub neumann_norm: Option<f64>,
    pub tail: Option<f64>,
}

impl ResolventProbe {
    pub fn rows(&self) -> Vec<ProbeRow> {
        (0..self.r_grid.len())
            .map(|i| ProbeRow {
                r: self.r_grid[i],
                e: self.e_values[i],
                resolvent_norm: self.norms[i],
                neumann_norm: self.neumann_norms[i],
                tail: self.tail_estimates[i],
            })
            .collect()
    }
}

/// Neumann horizon cap used by the probe.
pub const PROBE_MAX_TERMS: usize = 1 << 14;

pub fn resolvent_probe(
    t: &OperatorSpec,
    lambda: C64,
    r_grid: &[f64],
    f: Option<&NonNegSeq>,
) -> Result<ResolventProbe, ResolventError> {
    check_direction(lambda)?;
    for w in r_grid.windows(2) {
        if !(w[1] < w[0]) {
            return Err(ResolventError::InvalidR { r: w[1] });
        }
    }
    let m = t.densify();
    let mut norms = Vec::with_capacity(r_grid.len());
    let mut neumann_norms = Vec::with_capacity(r_grid.len());
    let mut tails = Vec::with_capacity(r_grid.len());
    let mut e_values = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        check_r(r)?;
        norms.push(linalg::resolvent_norm(&m, lambda * r)?);
        match neumann_resolvent_adaptive(t, r, lambda, 1e-12, PROBE_MAX_TERMS) {
            Ok(approx) => {
                neumann_norms.push(Some(linalg::op_norm(&approx.matrix)?));
                tails.push(Some(approx.tail_bound));
            }
            Err(
                ResolventError::DivergentSeries { .. } | ResolventError::HorizonExhausted { .. },
            ) => {
                neumann_norms.push(None);
                tails.push(None);
            }
            Err(e) => return Err(e),
        }
        e_values.push(f.map(|f| e_of_r(f, r).map(|e| e.value)).transpose()?);
    }
    Ok(ResolventProbe {
        lambda,
        r_grid: r_grid.to_vec(),
        norms,
        neumann_norms,
        e_values,
        tail_estimates: tails,
    })
}

/// How a sample pair was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairOrigin {
    /// `x = e_column`, `x' = e_row`.
    Coordinate {
        row: usize,
        column: usize,
    },
    Random {
        index: usize,
    },
    Given {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub origin: PairOrigin,
    pub x: VectorC,
    pub xp: FunctionalC,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub pairs: Vec<SamplePair>,
}

/// Coordinate pairs are added only up to this dimension.
pub const COORDINATE_PAIR_MAX_DIM: usize = 8;

impl SamplePlan {
    /// All coordinate pairs when `dim <= 8` and `coordinate` is set, then
    /// `random_pairs` unit pairs from a ChaCha8 stream seeded with `seed`.
    pub fn standard(dim: usize, coordinate: bool, random_pairs: usize, seed: u64) -> Self {
        let mut pairs = Vec::new();
        if coordinate && dim <= COORDINATE_PAIR_MAX_DIM {
            for row in 0..dim {
                for column in 0..dim {
                    pairs.push(SamplePair {
                        origin: PairOrigin::Coordinate { row, column },
                        x: VectorC::basis(dim, column),
                        xp: FunctionalC::basis(dim, row),
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for index in 0..random_pairs {
            let x = VectorC(operators::random_unit(dim, &mut rng));
            let xp = FunctionalC(operators::random_unit(dim, &mut rng));
            pairs.push(SamplePair {
                origin: PairOrigin::Random { index },
                x,
                xp,
            });
        }
        Self { pairs }
    }
}

/// The hypothesis family: governing sequences directly, gauges, or powers
/// `x^p` (gauges in disguise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteFamily {
    Sequences(Vec<NonNegSeq>),
    Gauges(Vec<Gauge>),
    Powers(Vec<f64>),
}

impl DiscreteFamily {
    fn gauges(&self) -> Result<Option<Vec<Gauge>>, SeqError> {
        Ok(match self {
            DiscreteFamily::Sequences(_) => None,
            DiscreteFamily::Gauges(g) => Some(g.clone()),
            DiscreteFamily::Powers(ps) => Some(
                ps.iter()
                    .map(|&p| Gauge::power(p))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteConfig {
    pub n_terms: usize,
    /// Probe scale relative to `||x|| ||x'||`.
    pub probe_epsilon: f64,
    pub decay_epsilons: Vec<f64>,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        Self {
            n_terms: 256,
            probe_epsilon: 1e-6,
            decay_epsilons: (2..=6).map(|k| 0.5f64.powi(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    ConsistentWithTheorem,
    CounterexampleCandidate,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub origin: PairOrigin,
    pub probe: Option<Probe>,
    pub certificate: Option<GoverningCertificate>,
    /// Gauge that produced the certificate (gauge paths).
    pub gauge_index: Option<usize>,
    pub mu: Option<f64>,
    /// Per-gauge failures that are not refutations.
    pub gauge_failures: Vec<String>,
    pub error: Option<String>,
}

impl PairReport {
    pub fn verdict(&self) -> Option<Verdict> {
        self.certificate.as_ref().map(|c| c.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub epsilon: f64,
    pub certificate: Option<EDecayCertificate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSummary {
    pub variant: String,
    pub dim: usize,
    pub structurally_nilpotent: bool,
    pub power_bounded_probe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub operator: OperatorSummary,
    pub n_terms: usize,
    pub pairs: Vec<PairReport>,
    pub governed_pairs: usize,
    pub not_governed_pairs: usize,
    pub inconclusive_pairs: usize,
    pub r_oracle: Option<f64>,
    pub r_oracle_error: Option<String>,
    pub gelfand: f64,
    pub verdict: StabilityVerdict,
    pub e_decay_record: Vec<DecayRecord>,
}

impl StabilityReport {
    pub fn all_governed(&self) -> bool {
        self.governed_pairs == self.pairs.len()
    }
}

/// Staircase of `phi` cut at the largest `K` with `m_K <= max_len`.
pub fn bounded_staircase(phi: &Gauge, max_len: u64) -> Result<NonNegSeq, SeqError> {
    let m = seqspace::staircase_indices_covering(phi, usize::MAX, max_len + 1)?;
    let k = m.partition_point(|&mk| mk <= max_len);
    if k == 0 {
        return Err(SeqError::StaircaseTooLong { len: m[0] });
    }
    Ok(seqspace::staircase_from_gauge(phi, k)?.f)
}

fn analyze_pair(
    t: &OperatorSpec,
    pair: &SamplePair,
    merged: Option<&NonNegSeq>,
    gauges: Option<&[Gauge]>,
    config: &DiscreteConfig,
    fit: Option<&PowerFit>,
) -> PairReport {
    let mut report = PairReport {
        origin: pair.origin.clone(),
        probe: None,
        certificate: None,
        gauge_index: None,
        mu: None,
        gauge_failures: Vec::new(),
        error: None,
    };
    let orbit = match weak_orbit(t, &pair.x, &pair.xp, config.n_terms, fit) {
        Ok(a) => a,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    let eps = config.probe_epsilon * pair.x.norm() * pair.xp.norm();
    let probe = c0_membership_probe(&orbit, eps);
    report.probe = Some(probe.clone());
    if let Some(g) = merged {
        match governs(std::slice::from_ref(g), &orbit, eps) {
            Ok(c) => report.certificate = Some(c),
            Err(e) => report.error = Some(e.to_string()),
        }
        return report;
    }
    let gauges = gauges.unwrap_or(&[]);
    if let Probe::Rejected { witness } = probe {
        report.certificate = Some(GoverningCertificate {
            governing_index: None,
            constant: 0.0,
            checked_range: (0, orbit.len()),
            residual: 0.0,
            verdict: Verdict::NotGoverned,
            witness: Some(witness),
            failures: Vec::new(),
            exact: false,
        });
        return report;
    }
    let mut fallback = None;
    for (i, phi) in gauges.iter().enumerate() {
        match staircase_governs(phi, &orbit, config.n_terms) {
            Ok(out) if out.certificate.verdict == Verdict::Governed => {
                report.certificate = Some(out.certificate);
                report.gauge_index = Some(i);
                report.mu = Some(out.mu);
                return report;
            }
            Ok(out) => {
                report
                    .gauge_failures
                    .push(format!("gauge {i}: {:?}", out.certificate.verdict));
                fallback.get_or_insert(out.certificate);
            }
            Err(e) => report.gauge_failures.push(format!("gauge {i}: {e}")),
        }
    }
    report.certificate = Some(fallback.unwrap_or(GoverningCertificate {
        governing_index: None,
        constant: 0.0,
        checked_range: (0, orbit.len()),
        residual: 0.0,
        verdict: Verdict::InconclusiveTruncation,
        witness: None,
        failures: Vec::new(),
        exact: false,
    }));
    report
}

/// Run every sample pair through the governing test and relate the outcome
/// to the spectral radius.
///
/// The verdict is `counterexample_candidate` only if every pair is governed,
/// every certificate is exact, and `r(T) >= 1`.
pub fn analyze_discrete(
    t: &OperatorSpec,
    plan: &SamplePlan,
    family: &DiscreteFamily,
    config: &DiscreteConfig,
) -> Result<StabilityReport, ResolventError> {
    if config.n_terms < 8 {
        return Err(OperatorError::InvalidHorizon {
            got: config.n_terms,
            min: 8,
        }
        .into());
    }
    for pair in &plan.pairs {
        if pair.x.len() != t.dim() || pair.xp.len() != t.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: t.dim(),
                got: pair.x.len().max(pair.xp.len()),
            }
            .into());
        }
    }
    let norms = power_norms(t, config.n_terms)?;
    let gelfand = gelfand_from_norms(norms.norms.entries()).estimate;
    let (r_oracle, r_oracle_error) = match spectral_radius_oracle(t) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let fit = r_oracle.and_then(|r| power_fit(norms.norms.entries(), r));

    let merged = match family {
        DiscreteFamily::Sequences(fs) => Some(merge_governing(fs)?),
        _ => None,
    };
    let gauges = family.gauges()?;
    let pairs: Vec<PairReport> = plan
        .pairs
        .par_iter()
        .map(|p| {
            analyze_pair(
                t,
                p,
                merged.as_ref(),
                gauges.as_deref(),
                config,
                fit.as_ref(),
            )
        })
        .collect();

    let count = |v: Verdict| pairs.iter().filter(|p| p.verdict() == Some(v)).count();
    let governed_pairs = count(Verdict::Governed);
    let not_governed_pairs = count(Verdict::NotGoverned);
    let inconclusive_pairs = pairs.len() - governed_pairs - not_governed_pairs;
    let all_exact = pairs
        .iter()
        .all(|p| p.certificate.as_ref().is_some_and(|c| c.exact));

    let verdict = match r_oracle {
        None => StabilityVerdict::Inconclusive,
        Some(r) if r < 1.0 => StabilityVerdict::ConsistentWithTheorem,
        Some(_) if not_governed_pairs > 0 => StabilityVerdict::ConsistentWithTheorem,
        Some(_) if governed_pairs == pairs.len() && all_exact => {
            StabilityVerdict::CounterexampleCandidate
        }
        Some(_) => StabilityVerdict::Inconclusive,
    };

    // decay of e(r) for the sequence the hypothesis supplies
    let decay_f = match (&merged, &gauges) {
        (Some(g), _) => Some(Ok(g.clone())),
        (None, Some(gs)) => {
            let used = pairs
                .iter()
                .filter_map(|p| p.gauge_index)
                .min()
                .unwrap_or(0);
            gs.get(used)
                .map(|phi| bounded_staircase(phi, config.n_terms as u64))
        }
        _ => None,
    };
    let e_decay_record = match decay_f {
        None => Vec::new(),
        Some(Err(e)) => config
            .decay_epsilons
            .iter()
            .map(|&epsilon| DecayRecord {
                epsilon,
                certificate: None,
                error: Some(e.to_string()),
            })
            .collect(),
        Some(Ok(f)) => config
            .decay_epsilons
            .iter()
            .map(|&epsilon| match e_decay_certificate(&f, epsilon) {
                Ok(c) => DecayRecord {
                    epsilon,
                    certificate: Some(c),
                    error: None,
                },
                Err(e) => DecayRecord {
                    epsilon,
                    certificate: None,
                    error: Some(e.to_string()),
                },
            })
            .collect(),
    };

    Ok(StabilityReport {
        operator: OperatorSummary {
            variant: t.variant_name().to_string(),
            dim: t.dim(),
            structurally_nilpotent: t.is_structurally_nilpotent(),
            power_bounded_probe: norms.power_bounded_probe,
        },
        n_terms: config.n_terms,
        pairs,
        governed_pairs,
        not_governed_pairs,
        inconclusive_pairs,
        r_oracle,
        r_oracle_error,
        gelfand,
        verdict,
        e_decay_record,
    })
}

/// Governing sequence and constant behind a governed pair: the merged
/// sequence itself, or the staircase of the gauge that certified the pair,
/// evaluated on `0..n_terms`.
pub fn pair_envelope(
    pair: &PairReport,
    merged: Option<&NonNegSeq>,
    gauges: Option<&[Gauge]>,
    n_terms: usize,
) -> Result<Option<(NonNegSeq, f64)>, SeqError> {
    let Some(cert) = pair
        .certificate
        .as_ref()
        .filter(|c| c.verdict == Verdict::Governed)
    else {
        return Ok(None);
    };
    if let Some(g) = merged {
        return Ok(Some((g.clone(), cert.constant)));
    }
    let (Some(gs), Some(i)) = (gauges, pair.gauge_index) else {
        return Ok(None);
    };
    let m = seqspace::staircase_indices_covering(&gs[i], n_terms, n_terms as u64)?;
    let f: Vec<f64> = (0..n_terms as u64)
        .map(|j| seqspace::staircase_value(&m, j).unwrap_or(0.0))
        .collect();
    Ok(Some((NonNegSeq::new(f, None)?, cert.constant)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Unimodular direction of the resolvent probe.
    #[serde(with = "crate::serde_util::complex")]
    pub lambda: C64,
    /// Strictly decreasing, all entries above 1.
    pub r_grid: Vec<f64>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            lambda: C64::new(1.0, 0.0),
            r_grid: default_r_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairChain {
    pub origin: PairOrigin,
    pub records: Vec<ChainRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLowerBound {
    #[serde(with = "crate::serde_util::complex")]
    pub eigenvalue: C64,
    pub records: Vec<LowerBoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub stability: StabilityReport,
    pub probe: ResolventProbe,
    /// Estimate chain for every governed pair on the r-grid.
    pub chains: Vec<PairChain>,
    /// Lower bounds at every unimodular eigenvalue.
    pub lower_bounds: Vec<SpectralLowerBound>,
    /// Every chain link and every lower bound holds.
    pub consistent: bool,
}

/// Unimodular eigenvalues are those within this distance of the circle.
pub const UNIMODULAR_TOLERANCE: f64 = 1e-8;

/// `analyze_discrete` plus the resolvent probe along `r lambda`, the estimate
/// chain for each governed pair, and the lower bound at unimodular
/// eigenvalues.
pub fn certify_discrete(
    t: &OperatorSpec,
    plan: &SamplePlan,
    family: &DiscreteFamily,
    config: &DiscreteConfig,
    certify: &CertifyConfig,
) -> Result<CertifyReport, ResolventError> {
    let stability = analyze_discrete(t, plan, family, config)?;
    let merged = match family {
        DiscreteFamily::Sequences(fs) => Some(merge_governing(fs)?),
        _ => None,
    };
    let gauges = family.gauges()?;
    let probe_f = match (&merged, &gauges) {
        (Some(g), _) => Some(g.clone()),
        (None, Some(gs)) => gs
            .first()
            .and_then(|phi| bounded_staircase(phi, config.n_terms as u64).ok()),
        _ => None,
    };
    let probe = resolvent_probe(t, certify.lambda, &certify.r_grid, probe_f.as_ref())?;

    let chains: Vec<PairChain> = stability
        .pairs
        .par_iter()
        .zip(plan.pairs.par_iter())
        .filter_map(|(report, pair)| {
            let envelope =
                match pair_envelope(report, merged.as_ref(), gauges.as_deref(), config.n_terms) {
                    Ok(Some(e)) => e,
                    Ok(None) => return None,
                    Err(e) => {
                        return Some(PairChain {
                            origin: report.origin.clone(),
                            records: Vec::new(),
                            error: Some(e.to_string()),
                        })
                    }
                };
            let (f, c) = envelope;
            let records: Result<Vec<ChainRecord>, ResolventError> = certify
                .r_grid
                .iter()
                .map(|&r| {
                    weak_resolvent_bound_check(t, &pair.x, &pair.xp, &f, c, r, certify.lambda)
                })
                .collect();
            Some(match records {
                Ok(records) => PairChain {
                    origin: report.origin.clone(),
                    records,
                    error: None,
                },
                Err(e) => PairChain {
                    origin: report.origin.clone(),
                    records: Vec::new(),
                    error: Some(e.to_string()),
                },
            })
        })
        .collect();

    let mut lower_bounds = Vec::new();
    for mu in t.spectrum()? {
        if (mu.norm() - 1.0).abs() > UNIMODULAR_TOLERANCE {
            continue;
        }
        let direction = mu / mu.norm();
        let records = certify
            .r_grid
            .iter()
            .map(|&r| resolvent_lower_bound_check(t, r, direction))
            .collect::<Result<Vec<_>, _>>()?;
        lower_bounds.push(SpectralLowerBound {
            eigenvalue: mu,
            records,
        });
    }
    let consistent = chains.iter().all(|c| c.records.iter().all(|r| r.holds))
        && lower_bounds
            .iter()
            .flat_map(|b| &b.records)
            .all(|r| r.distance_bound_holds && r.gap_bound_holds);
    Ok(CertifyReport {
        stability,
        probe,
        chains,
        lower_bounds,
        consistent,
    })
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

    fn nn(v: &[f64]) -> NonNegSeq {
        NonNegSeq::new(v.to_vec(), None).unwrap()
    }

    fn random_stable(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> OperatorSpec {
        let m = CMatrix::from_fn(n, n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let r = spectral_radius_oracle(&OperatorSpec::Dense(m.clone())).unwrap();
        OperatorSpec::dense(m * c(rho / r, 0.0)).unwrap()
    }

    #[test]
    fn certify_stable_diagonal_chain_holds() {
        let t = OperatorSpec::diagonal(vec![c(0.5, 0.0), c(0.0, -0.3)]).unwrap();
        let plan = SamplePlan::standard(2, true, 4, 0);
        let family = DiscreteFamily::Powers(vec![1.0, 2.0]);
        let rep = certify_discrete(
            &t,
            &plan,
            &family,
            &DiscreteConfig::default(),
            &CertifyConfig::default(),
        )
        .unwrap();
        assert_eq!(
            rep.stability.verdict,
            StabilityVerdict::ConsistentWithTheorem
        );
        assert!(rep.stability.all_governed());
        assert_eq!(rep.chains.len(), plan.pairs.len());
        assert!(rep
            .chains
            .iter()
            .all(|c| c.error.is_none() && c.records.len() == 12));
        assert!(rep.lower_bounds.is_empty());
        assert!(rep.consistent);
        assert!(rep.probe.e_values.iter().all(|e| e.is_some()));
    }

    #[test]
    fn certify_sequences_family_uses_merged_envelope() {
        let t = OperatorSpec::diagonal(vec![c(0.5, 0.0)]).unwrap();
        let plan = SamplePlan::standard(1, true, 2, 3);
        let family = DiscreteFamily::Sequences(vec![NonNegSeq::geometric(0.5, 256).unwrap()]);
        let rep = certify_discrete(
            &t,
            &plan,
            &family,
            &DiscreteConfig::default(),
            &CertifyConfig::default(),
        )
        .unwrap();
        assert!(rep.stability.all_governed());
        assert_eq!(rep.chains.len(), 3);
        assert!(rep.consistent);
    }

    #[test]
    fn certify_unimodular_lower_bounds() {
        let t = OperatorSpec::diagonal(vec![c(0.0, 1.0), c(0.2, 0.0)]).unwrap();
        let plan = SamplePlan::standard(2, true, 2, 0);
        let family = DiscreteFamily::Powers(vec![1.0]);
        let rep = certify_discrete(
            &t,
            &plan,
            &family,
            &DiscreteConfig::default(),
            &CertifyConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.lower_bounds.len(), 1);
        assert_eq!(rep.lower_bounds[0].records.len(), 12);
        assert!(rep.stability.not_governed_pairs > 0);
        assert_eq!(
            rep.stability.verdict,
            StabilityVerdict::ConsistentWithTheorem
        );
        assert!(rep.consistent);
    }

    #[test]
    fn e_of_r_examples() {
        for r in [1.01, 1.5, 2.0, 7.0] {
            let e = e_of_r(&NonNegSeq::new(vec![1.0, 0.0, 0.0], Some(0.0)).unwrap(), r).unwrap();
            assert!((e.value - (r - 1.0) / r).abs() < 1e-15);
            assert_eq!(e.tail_bound, 0.0);
        }
        let q = 0.6;
        let f = NonNegSeq::geometric(q, 400).unwrap();
        for r in [1.1, 2.0] {
            let e = e_of_r(&f, r).unwrap();
            let limit = (r - 1.0) / (r - q);
            assert!((e.value - limit).abs() <= e.tail_bound + 1e-14, "{r}");
        }
        assert_eq!(e_of_r(&nn(&[0.0, 0.0]), 2.0).unwrap().value, 0.0);
        assert_eq!(e_of_r(&f, 1.0), Err(ResolventError::InvalidR { r: 1.0 }));
        let no_tail = e_of_r(&nn(&[2.0, 1.0]), 2.0).unwrap();
        assert!(no_tail.conservative);
        assert_eq!(no_tail.tail_bound, 2.0 * 0.25);
    }

    #[test]
    fn e_decay_examples() {
        let f = NonNegSeq::geometric(0.5, 64).unwrap();
        let d = e_decay_certificate(&f, 1.0 / 16.0).unwrap();
        assert_eq!(d.n0, 4);
        assert_eq!(d.delta, 1.0 / 64.0);
        assert!(d.holds);

        let unit = NonNegSeq::new(vec![1.0, 0.0, 0.0], Some(0.0)).unwrap();
        let d = e_decay_certificate(&unit, 0.1).unwrap();
        assert_eq!((d.n0, d.delta), (1, 0.1));
        assert!(d.max_e < 0.1 / 1.1 + 1e-15);

        let d = e_decay_certificate(&unit, 2.0).unwrap();
        assert_eq!(d.n0, 1);

        assert_eq!(
            e_decay_certificate(&NonNegSeq::harmonic(8).unwrap(), 0.01),
            Err(ResolventError::TailTooLarge {
                tail: 1.0 / 9.0,
                epsilon: 0.01
            })
        );
        assert_eq!(
            e_decay_certificate(&nn(&[1.0, 1.0]), 0.5),
            Err(ResolventError::NoDecayInRange { epsilon: 0.5 })
        );
        assert_eq!(
            e_decay_certificate(&nn(&[0.0]), 0.5),
            Err(ResolventError::ZeroSequence)
        );
    }

    #[test]
    fn neumann_examples() {
        let zero = OperatorSpec::diagonal(vec![ZERO; 3]).unwrap();
        let lambda = c(0.6, 0.8);
        let approx = neumann_resolvent(&zero, 1.5, lambda, 10).unwrap();
        assert_eq!(approx.terms, 1);
        assert_eq!(approx.tail_bound, 0.0);
        let expect = CMatrix::identity(3, 3) / (lambda * 1.5);
        assert_eq!(approx.matrix, expect);

        let diag = vec![c(0.5, 0.1), c(-0.3, 0.0), c(0.0, 0.7)];
        let d = OperatorSpec::diagonal(diag.clone()).unwrap();
        let approx = neumann_resolvent_adaptive(&d, 1.2, ONE, 1e-14, 1 << 14).unwrap();
        for (j, l) in diag.iter().enumerate() {
            let exact = ONE / (c(1.2, 0.0) - l);
            assert!((approx.matrix[(j, j)] - exact).norm() < 1e-12 * exact.norm());
        }

        let big = OperatorSpec::diagonal(vec![c(2.0, 0.0)]).unwrap();
        assert!(matches!(
            neumann_resolvent(&big, 1.5, ONE, 200),
            Err(ResolventError::DivergentSeries { .. })
        ));
    }

    #[test]
    fn transient_growth_is_not_divergence() {
        // ||J^n|| r^{-n} grows for ~70 terms before decaying
        let j = OperatorSpec::jordan(c(0.9, 0.0), 8).unwrap();
        let approx = neumann_resolvent_adaptive(&j, 1.1, ONE, 1e-14, 1 << 14).unwrap();
        let direct = linalg::resolvent(&j.densify(), c(1.1, 0.0)).unwrap();
        let err = linalg::op_norm(&(&approx.matrix - &direct)).unwrap();
        assert!(err <= 1e-8 * linalg::op_norm(&direct).unwrap());
    }

    #[test]
    fn neumann_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 12] {
            let t = random_stable(n, 0.9, &mut rng);
            for r in [1.1, 1.5, 2.0] {
                let lambda = c(0.0, 1.0);
                let approx = neumann_resolvent_adaptive(&t, r, lambda, 1e-14, 1 << 14).unwrap();
                let direct = linalg::resolvent(&t.densify(), lambda * r).unwrap();
                let err = linalg::op_norm(&(&approx.matrix - &direct)).unwrap();
                assert!(
                    err <= 1e-8 * linalg::op_norm(&direct).unwrap(),
                    "n={n} r={r}"
                );
            }
        }
    }

    #[test]
    fn neumann_residual_shrinks_with_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_stable(6, 0.8, &mut rng);
        let direct = linalg::resolvent(&t.densify(), c(1.1, 0.0)).unwrap();
        let resid = |k| {
            let a = neumann_resolvent(&t, 1.1, ONE, k).unwrap();
            linalg::op_norm(&(&a.matrix - &direct)).unwrap()
        };
        for k in [4, 8, 16, 32, 64] {
            assert!(resid(2 * k) <= resid(k) + 1e-12);
        }
    }

    #[test]
    fn chain_diagonal_attains_equality() {
        let t = OperatorSpec::diagonal(vec![c(0.5, 0.0)]).unwrap();
        let f = NonNegSeq::geometric(0.5, 60).unwrap();
        let rec = weak_resolvent_bound_check(
            &t,
            &VectorC::basis(1, 0),
            &FunctionalC::basis(1, 0),
            &f,
            1.0,
            2.0,
            ONE,
        )
        .unwrap();
        assert!((rec.pairing - 2.0 / 3.0).abs() < 1e-15);
        assert!((rec.envelope - 2.0 / 3.0).abs() < 1e-15);
        assert!(rec.residuals.iter().all(|x| x.abs() < 1e-15));
        assert!(rec.holds);
    }

    #[test]
    fn chain_zero_vector() {
        let t = OperatorSpec::jordan(c(0.5, 0.0), 3).unwrap();
        let f = NonNegSeq::geometric(0.9, 16).unwrap();
        let rec = weak_resolvent_bound_check(
            &t,
            &VectorC(vec![ZERO; 3]),
            &FunctionalC::basis(3, 1),
            &f,
            0.0,
            1.5,
            ONE,
        )
        .unwrap();
        assert_eq!(rec.residuals, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn lower_bound_examples() {
        let one = OperatorSpec::diagonal(vec![ONE]).unwrap();
        for r in default_r_grid() {
            let rec = resolvent_lower_bound_check(&one, r, ONE).unwrap();
            assert!((rec.resolvent_norm - 1.0 / (r - 1.0)).abs() <= 1e-10 * rec.resolvent_norm);
            assert!(rec.gap_bound_holds && rec.distance_bound_holds);
        }
        let t = OperatorSpec::diagonal(vec![c(0.0, 1.0), c(0.5, 0.0)]).unwrap();
        let rec = resolvent_lower_bound_check(&t, 1.25, c(0.0, 1.0)).unwrap();
        assert!((rec.resolvent_norm - 4.0).abs() < 1e-12);
        let half = OperatorSpec::diagonal(vec![c(0.5, 0.0)]).unwrap();
        assert_eq!(
            resolvent_lower_bound_check(&half, 1.5, ONE),
            Err(ResolventError::NotSpectral { distance: 0.5 })
        );
    }

    #[test]
    fn probe_rows_are_consistent() {
        let t = OperatorSpec::jordan(c(0.5, 0.0), 3).unwrap();
        let f = NonNegSeq::geometric(0.9, 64).unwrap();
        let p = resolvent_probe(&t, ONE, &default_r_grid(), Some(&f)).unwrap();
        for row in p.rows() {
            let nn = row.neumann_norm.unwrap();
            if row.r - 1.0 >= 0.05 {
                assert!(
                    (nn - row.resolvent_norm).abs()
                        <= row.tail.unwrap() + 1e-9 * row.resolvent_norm
                );
            }
            assert!(row.tail.unwrap() >= 0.0);
        }
        assert!(resolvent_probe(&t, ONE, &[1.1, 1.5], None).is_err());
    }

    #[test]
    fn analyze_diagonal_governed() {
        let t = OperatorSpec::diagonal(vec![c(0.5, 0.0), c(0.3, 0.0)]).unwrap();
        let plan = SamplePlan::standard(2, true, 4, 0);
        let fam = DiscreteFamily::Sequences(vec![NonNegSeq::geometric(0.9, 256).unwrap()]);
        let rep = analyze_discrete(&t, &plan, &fam, &DiscreteConfig::default()).unwrap();
        assert!(rep.all_governed());
        assert_eq!(rep.r_oracle, Some(0.5));
        assert_eq!(rep.verdict, StabilityVerdict::ConsistentWithTheorem);
        assert!(rep
            .e_decay_record
            .iter()
            .all(|d| d.certificate.as_ref().is_some_and(|c| c.holds)));
    }

    #[test]
    fn analyze_unimodular_rejected_at_probe() {
        let t = OperatorSpec::diagonal(vec![ONE]).unwrap();
        let plan = SamplePlan::standard(1, true, 0, 0);
        let fam = DiscreteFamily::Sequences(vec![NonNegSeq::geometric(0.9, 256).unwrap()]);
        let rep = analyze_discrete(&t, &plan, &fam, &DiscreteConfig::default()).unwrap();
        assert_eq!(rep.pairs[0].verdict(), Some(Verdict::NotGoverned));
        assert!(matches!(rep.pairs[0].probe, Some(Probe::Rejected { .. })));
        assert_eq!(rep.verdict, StabilityVerdict::ConsistentWithTheorem);
    }

    #[test]
    fn analyze_jordan_via_gauges() {
        let t = OperatorSpec::jordan(c(0.99, 0.0), 4).unwrap();
        let plan = SamplePlan::standard(4, true, 8, 1);
        let fam =
            DiscreteFamily::Gauges(vec![Gauge::power(1.0).unwrap(), Gauge::power(2.0).unwrap()]);
        let config = DiscreteConfig {
            n_terms: 4096,
            ..DiscreteConfig::default()
        };
        let rep = analyze_discrete(&t, &plan, &fam, &config).unwrap();
        assert!(
            rep.all_governed(),
            "{:?}",
            rep.pairs
                .iter()
                .find(|p| p.verdict() != Some(Verdict::Governed))
        );
        assert_eq!(rep.r_oracle, Some(0.99));
        assert_eq!(rep.verdict, StabilityVerdict::ConsistentWithTheorem);
    }

    #[test]
    fn analyze_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_stable(4, 0.8, &mut rng);
        let plan = SamplePlan::standard(4, true, 16, 7);
        let fam = DiscreteFamily::Powers(vec![1.0, 2.0]);
        let a = analyze_discrete(&t, &plan, &fam, &DiscreteConfig::default()).unwrap();
        let b = analyze_discrete(&t, &plan, &fam, &DiscreteConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn e_of_r_bounded_and_homogeneous(
            v in proptest::collection::vec(0.0f64..=1.0, 1..64),
            r in 1.001f64..5.0,
            mu in 0.01f64..100.0,
        ) {
            let f = nn(&v);
            let e = e_of_r(&f, r).unwrap().value;
            prop_assert!((0.0..=1.0 + 1e-15).contains(&e));
            let scaled = e_of_r(&f.scaled(mu), r).unwrap().value;
            prop_assert!((scaled - mu * e).abs() <= 1e-13 * (1.0 + mu * e));
        }

        #[test]
        fn chain_holds_for_random_stable(seed in 0u64..500, r_idx in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..6);
            let t = random_stable(n, 0.9, &mut rng);
            let x = VectorC(operators::random_unit(n, &mut rng));
            let xp = FunctionalC(operators::random_unit(n, &mut rng));
            let a = weak_orbit(&t, &x, &xp, 128, None).unwrap();
            let f = NonNegSeq::geometric(0.95, 128).unwrap();
            let cert = governs(std::slice::from_ref(&f), &a, 1e-6).unwrap();
            prop_assume!(cert.verdict == Verdict::Governed);
            let r = default_r_grid()[r_idx];
            let rec = weak_resolvent_bound_check(&t, &x, &xp, &f, cert.constant, r, c(0.6, -0.8)).unwrap();
            prop_assert!(rec.holds, "{:?}", rec);
            prop_assert!(rec.residuals[1] >= -1e-12 * rec.rearranged_sum);
        }
    }
}
