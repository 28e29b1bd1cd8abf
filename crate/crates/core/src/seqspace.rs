//! Sequence calculus on truncated `N0`-indexed sequences.
//!
//! Every sequence here is a finite truncation `0..N` of an infinite sequence,
//! optionally carrying a bound on the modulus of all entries beyond `N`.
//! Certificates distinguish three outcomes: refuted on the checked range,
//! verified on the checked range, and inconclusive because of the truncation.
//!
//! One fact is used throughout: the non-increasing rearrangement of a
//! truncation is entrywise a lower bound for the rearrangement of the full
//! sequence (adding entries can only push order statistics up). Refutations
//! based on the truncated rearrangement are therefore definitive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::C64;

/// Relative slack for floating-point certificate comparisons.
pub const CERT_SLACK: f64 = 1e-12;

/// Halvings tried by [`scale_to_unit_sum`].
pub const MAX_HALVINGS: u32 = 64;

/// Longest staircase sequence that will be materialized.
pub const MAX_STAIRCASE_LEN: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("sequence must have at least one entry")]
    Empty,
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entry {index} is negative")]
    Negative { index: usize },
    #[error("tail bound must be finite and non-negative, got {0}")]
    BadTail(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("g_{index} > 0 while f_{index} = 0: g is not in the principal ideal of f")]
    ZeroDivisorViolation { index: usize },
    #[error("family is empty after dropping zero members")]
    EmptyFamily,
    #[error("no admissible scale after {halvings} halvings (gauge sum stays above 1)")]
    NoAdmissibleScale { halvings: u32 },
    #[error("gauge vanishes at 1/{k}")]
    GaugeVanishes { k: usize },
    #[error("weight sequence is not certified non-increasing")]
    NotSorted,
    #[error("invalid gauge: {0}")]
    InvalidGauge(String),
    #[error("staircase length {len} exceeds the materialization limit")]
    StaircaseTooLong { len: u64 },
    #[error("counting claim violated at k = {k}: {count} entries >= 1/k but m_k = {m_k}")]
    CountingViolation { k: usize, count: usize, m_k: u64 },
    #[error("internal postcondition failed: {0}")]
    Postcondition(String),
}

fn check_tail(t: Option<f64>) -> Result<(), SeqError> {
    match t {
        Some(t) if !t.is_finite() || t < 0.0 => Err(SeqError::BadTail(t)),
        _ => Ok(()),
    }
}

/// Truncation `a_0..a_{N-1}` of a complex sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSeq {
    entries: Vec<C64>,
    tail_bound: Option<f64>,
    tail_heuristic: bool,
}

impl ComplexSeq {
    pub fn new(entries: Vec<C64>, tail_bound: Option<f64>) -> Result<Self, SeqError> {
        if entries.is_empty() {
            return Err(SeqError::Empty);
        }
        if let Some(index) = entries
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(SeqError::NonFinite { index });
        }
        check_tail(tail_bound)?;
        Ok(Self {
            entries,
            tail_bound,
            tail_heuristic: false,
        })
    }

    pub fn from_real(entries: &[f64]) -> Result<Self, SeqError> {
        Self::new(entries.iter().map(|&x| C64::new(x, 0.0)).collect(), None)
    }

    /// Attach a tail estimate that is not a proof (e.g. from a power-norm fit).
    /// Such tails never refute membership in `c0`.
    pub fn with_heuristic_tail(mut self, t: f64) -> Result<Self, SeqError> {
        check_tail(Some(t))?;
        self.tail_bound = Some(t);
        self.tail_heuristic = true;
        Ok(self)
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tail_bound(&self) -> Option<f64> {
        self.tail_bound
    }

    pub fn tail_is_heuristic(&self) -> bool {
        self.tail_heuristic
    }

    /// Certified bound on the tail, if any.
    pub fn certified_tail(&self) -> Option<f64> {
        if self.tail_heuristic {
            None
        } else {
            self.tail_bound
        }
    }

    /// True when the tail is certified to vanish, so the truncation is the
    /// whole sequence.
    pub fn tail_is_zero(&self) -> bool {
        self.certified_tail() == Some(0.0)
    }
}

/// Truncation of an element of `(c0)+`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegSeq {
    entries: Vec<f64>,
    tail_bound: Option<f64>,
    sorted: bool,
    beyond_uncertified: bool,
}

impl NonNegSeq {
    pub fn new(entries: Vec<f64>, tail_bound: Option<f64>) -> Result<Self, SeqError> {
        if entries.is_empty() {
            return Err(SeqError::Empty);
        }
        for (index, &x) in entries.iter().enumerate() {
            if !x.is_finite() {
                return Err(SeqError::NonFinite { index });
            }
            if x < 0.0 {
                return Err(SeqError::Negative { index });
            }
        }
        check_tail(tail_bound)?;
        let sorted = entries.windows(2).all(|w| w[0] >= w[1]);
        Ok(Self {
            entries,
            tail_bound,
            sorted,
            beyond_uncertified: false,
        })
    }

    /// `(q^n)_{n < len}` with the exact tail bound `q^len`.
    pub fn geometric(q: f64, len: usize) -> Result<Self, SeqError> {
        let entries: Vec<f64> = (0..len).map(|n| q.powi(n as i32)).collect();
        Self::new(entries, Some(q.powi(len as i32)))
    }

    /// `(1/(n+1))_{n < len}` with tail bound `1/(len+1)`.
    pub fn harmonic(len: usize) -> Result<Self, SeqError> {
        let entries: Vec<f64> = (0..len).map(|n| 1.0 / (n as f64 + 1.0)).collect();
        Self::new(entries, Some(1.0 / (len as f64 + 1.0)))
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tail_bound(&self) -> Option<f64> {
        self.tail_bound
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    /// Set on rearrangements of sequences whose tail was not certified zero:
    /// positions beyond `N - 1` of the true rearrangement are unknown.
    pub fn beyond_truncation_uncertified(&self) -> bool {
        self.beyond_uncertified
    }

    pub fn sup_norm(&self) -> f64 {
        let m = self.entries.iter().copied().fold(0.0, f64::max);
        match self.tail_bound {
            Some(t) => m.max(t),
            None => m,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0) && self.tail_bound.unwrap_or(0.0) == 0.0
    }

    /// Multiply every entry (and the tail bound) by `mu >= 0`.
    pub fn scaled(&self, mu: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|x| x * mu).collect(),
            tail_bound: self.tail_bound.map(|t| t * mu),
            sorted: self.sorted,
            beyond_uncertified: self.beyond_uncertified,
        }
    }

    /// Truncate or zero-pad to `len` entries. Padding positions are beyond the
    /// original truncation, so the result keeps the original tail bound.
    pub fn resized(&self, len: usize) -> Result<Self, SeqError> {
        let mut entries = self.entries.clone();
        entries.resize(len, 0.0);
        let mut out = Self::new(entries, self.tail_bound)?;
        out.beyond_uncertified = self.beyond_uncertified;
        Ok(out)
    }
}

/// A non-decreasing gauge `phi: [0, inf) -> [0, inf)`, strictly positive on
/// `(0, inf)`.
///
/// * `Power { p }`: `x^p`, `p >= 1`.
/// * `Table`: breakpoints `(x_i, y_i)` with strictly increasing `x_i >= 0` and
///   non-decreasing `y_i`. `phi(x) = y_i` for the first `i` with `x <= x_i`,
///   and `y_last` beyond the last breakpoint.
/// * `Composite { scale, inner }`: `scale * inner(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaugeRepr", into = "GaugeRepr")]
pub enum Gauge {
    Power { p: f64 },
    Table { breakpoints: Vec<(f64, f64)> },
    Composite { scale: f64, inner: Box<Gauge> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum GaugeRepr {
    Power { p: f64 },
    Table { breakpoints: Vec<[f64; 2]> },
    Composite { scale: f64, inner: Box<GaugeRepr> },
}

impl TryFrom<GaugeRepr> for Gauge {
    type Error = SeqError;

    fn try_from(r: GaugeRepr) -> Result<Self, SeqError> {
        match r {
            GaugeRepr::Power { p } => Gauge::power(p),
            GaugeRepr::Table { breakpoints } => {
                Gauge::table(breakpoints.into_iter().map(|[x, y]| (x, y)).collect())
            }
            GaugeRepr::Composite { scale, inner } => {
                Gauge::composite(scale, Gauge::try_from(*inner)?)
            }
        }
    }
}

impl From<Gauge> for GaugeRepr {
    fn from(g: Gauge) -> Self {
        match g {
            Gauge::Power { p } => GaugeRepr::Power { p },
            Gauge::Table { breakpoints } => GaugeRepr::Table {
                breakpoints: breakpoints.into_iter().map(|(x, y)| [x, y]).collect(),
            },
            Gauge::Composite { scale, inner } => GaugeRepr::Composite {
                scale,
                inner: Box::new(GaugeRepr::from(*inner)),
            },
        }
    }
}

impl Gauge {
    pub fn power(p: f64) -> Result<Self, SeqError> {
        if !p.is_finite() || p < 1.0 {
            return Err(SeqError::InvalidGauge(format!(
                "power exponent {p} must be >= 1"
            )));
        }
        Ok(Gauge::Power { p })
    }

    pub fn table(breakpoints: Vec<(f64, f64)>) -> Result<Self, SeqError> {
        let bad = |m: &str| Err(SeqError::InvalidGauge(m.to_string()));
        if breakpoints.is_empty() {
            return bad("table needs at least one breakpoint");
        }
        if breakpoints
            .iter()
            .any(|&(x, y)| !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0)
        {
            return bad("breakpoints must be finite and non-negative");
        }
        if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("breakpoint abscissae must be strictly increasing");
        }
        if breakpoints.windows(2).any(|w| w[0].1 > w[1].1) {
            return bad("breakpoint values must be non-decreasing");
        }
        // the value y_i is used on (x_{i-1}, x_i]; the last value extends to infinity
        let last = breakpoints.len() - 1;
        if breakpoints
            .iter()
            .enumerate()
            .any(|(i, &(x, y))| (x > 0.0 || i == last) && y <= 0.0)
        {
            return bad("table must be strictly positive on (0, inf)");
        }
        Ok(Gauge::Table { breakpoints })
    }

    pub fn composite(scale: f64, inner: Gauge) -> Result<Self, SeqError> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(SeqError::InvalidGauge(format!(
                "composite scale {scale} must be > 0"
            )));
        }
        Ok(Gauge::Composite {
            scale,
            inner: Box::new(inner),
        })
    }

    /// Counting gauge: `0` at the origin, `1` on `(0, inf)`.
    pub fn counting() -> Self {
        Gauge::Table {
            breakpoints: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Gauge::Power { p } => {
                if *p == 1.0 {
                    x
                } else if *p == 2.0 {
                    x * x
                } else {
                    x.powf(*p)
                }
            }
            Gauge::Table { breakpoints } => {
                let i = breakpoints.partition_point(|&(bx, _)| bx < x);
                breakpoints[i.min(breakpoints.len() - 1)].1
            }
            Gauge::Composite { scale, inner } => scale * inner.eval(x),
        }
    }

    /// Check monotonicity and positivity on a sample grid; returns the first
    /// offending grid point.
    pub fn check_on_grid(&self, grid: &[f64]) -> Result<(), SeqError> {
        let mut sorted: Vec<f64> = grid.iter().copied().filter(|x| *x >= 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        let mut prev = f64::NEG_INFINITY;
        for x in sorted {
            let v = self.eval(x);
            if v < prev {
                return Err(SeqError::InvalidGauge(format!("decreases at x = {x}")));
            }
            if x > 0.0 && v <= 0.0 {
                return Err(SeqError::InvalidGauge(format!("vanishes at x = {x}")));
            }
            prev = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Governed,
    NotGoverned,
    InconclusiveTruncation,
}

/// Evidence attached to a refutation or to an inconclusive outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A certified tail bound at or above the probe scale.
    TailBound { tail_bound: f64, epsilon: f64 },
    /// Every entry of the final quarter exceeds the probe scale.
    LastQuarter {
        start: usize,
        min_modulus: f64,
        epsilon: f64,
    },
    /// `|a|*_n > 0` where the governing candidate vanishes.
    ZeroDivisor { member: usize, index: usize },
    /// Nonzero rearranged entries lie beyond the candidate's truncation.
    BeyondCandidate { member: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoverningCertificate {
    pub governing_index: Option<usize>,
    pub constant: f64,
    /// Half-open index interval `[start, end)`.
    pub checked_range: (usize, usize),
    /// `max_n (|a|*_n - c f_n)_+` over the checked range.
    pub residual: f64,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Per-candidate failure reasons, in trial order.
    pub failures: Vec<Witness>,
    /// The verdict holds for the whole sequence, not only the truncation.
    pub exact: bool,
}

impl GoverningCertificate {
    fn refuted(range: (usize, usize), witness: Witness, failures: Vec<Witness>) -> Self {
        Self {
            governing_index: None,
            constant: 0.0,
            checked_range: range,
            residual: 0.0,
            verdict: Verdict::NotGoverned,
            witness: Some(witness),
            failures,
            exact: false,
        }
    }
}

/// Entrywise modulus.
pub fn modulus(a: &ComplexSeq) -> NonNegSeq {
    NonNegSeq {
        entries: a.entries.iter().map(|z| z.norm()).collect(),
        tail_bound: a.tail_bound,
        sorted: false,
        beyond_uncertified: false,
    }
    .with_sorted_flag()
}

impl NonNegSeq {
    fn with_sorted_flag(mut self) -> Self {
        self.sorted = self.entries.windows(2).all(|w| w[0] >= w[1]);
        self
    }
}

/// Non-increasing rearrangement of the truncated part.
///
/// The tail bound is carried forward. Unless it is exactly zero the result is
/// flagged: beyond `N - 1` the true rearrangement is not known, and the
/// truncated rearrangement is only an entrywise lower bound for it.
pub fn rearrange(f: &NonNegSeq) -> NonNegSeq {
    let mut entries = f.entries.clone();
    entries.sort_unstable_by(|a, b| b.total_cmp(a));
    NonNegSeq {
        entries,
        tail_bound: f.tail_bound,
        sorted: true,
        beyond_uncertified: f.tail_bound != Some(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domination {
    pub constant: f64,
    pub argmax: Option<usize>,
    /// True when `g`'s tail is certified zero, so the constant is valid for
    /// the whole sequence.
    pub exact: bool,
}

/// Minimal `c` with `g_n <= c f_n` for all `n < N` (`0/0 = 0`).
///
/// The returned constant satisfies every inequality exactly in floating
/// point: after taking the maximal ratio it is nudged up by whole ulps until
/// no product `c * f_n` rounds below `g_n`.
pub fn domination_constant(g: &NonNegSeq, f: &NonNegSeq) -> Result<Domination, SeqError> {
    if g.len() != f.len() {
        return Err(SeqError::LengthMismatch {
            left: g.len(),
            right: f.len(),
        });
    }
    domination_on(&g.entries, &f.entries).map(|(constant, argmax)| Domination {
        constant,
        argmax,
        exact: g.tail_bound == Some(0.0),
    })
}

fn domination_on(g: &[f64], f: &[f64]) -> Result<(f64, Option<usize>), SeqError> {
    let mut c = 0.0f64;
    let mut argmax = None;
    for (n, (&gn, &fn_)) in g.iter().zip(f).enumerate() {
        if gn == 0.0 {
            continue;
        }
        if fn_ == 0.0 {
            return Err(SeqError::ZeroDivisorViolation { index: n });
        }
        let ratio = gn / fn_;
        if argmax.is_none() || ratio > c {
            c = ratio;
            argmax = Some(n);
        }
    }
    while g.iter().zip(f).any(|(&gn, &fn_)| gn > c * fn_) {
        c = c.next_up();
    }
    Ok((c, argmax))
}

fn residual_on(g: &[f64], f: &[f64], c: f64) -> f64 {
    g.iter()
        .zip(f)
        .map(|(&gn, &fn_)| (gn - c * fn_).max(0.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Probe {
    Plausible,
    Rejected { witness: Witness },
}

/// Heuristic `c0` test on a truncation. Rejects when a certified tail bound is
/// at least `epsilon`, or when every entry of the final quarter exceeds
/// `epsilon` in modulus. A truncation can refute membership at scale
/// `epsilon`, never prove it.
pub fn c0_membership_probe(a: &ComplexSeq, epsilon: f64) -> Probe {
    if let Some(t) = a.certified_tail() {
        if t >= epsilon {
            return Probe::Rejected {
                witness: Witness::TailBound {
                    tail_bound: t,
                    epsilon,
                },
            };
        }
    }
    let n = a.len();
    let quarter = (n / 4).max(1);
    let start = n - quarter;
    let min_modulus = a.entries[start..]
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    if min_modulus > epsilon {
        Probe::Rejected {
            witness: Witness::LastQuarter {
                start,
                min_modulus,
                epsilon,
            },
        }
    } else {
        Probe::Plausible
    }
}

/// Does some member of `family` govern `a`?
///
/// Members are tried in order; the first success is returned with its minimal
/// constant. Candidates shorter than `a` are compared on their own range; if
/// nonzero rearranged entries remain beyond it that candidate is inconclusive
/// rather than refuted.
pub fn governs(
    family: &[NonNegSeq],
    a: &ComplexSeq,
    epsilon: f64,
) -> Result<GoverningCertificate, SeqError> {
    if family.is_empty() {
        return Err(SeqError::EmptyFamily);
    }
    let n = a.len();
    let sorted = rearrange(&modulus(a));
    if let Probe::Rejected { witness } = c0_membership_probe(a, epsilon) {
        return Ok(GoverningCertificate::refuted((0, n), witness, Vec::new()));
    }
    let mut failures = Vec::new();
    for (member, f) in family.iter().enumerate() {
        let common = n.min(f.len());
        let g = &sorted.entries[..common];
        match domination_on(g, &f.entries[..common]) {
            Err(SeqError::ZeroDivisorViolation { index }) => {
                failures.push(Witness::ZeroDivisor { member, index });
            }
            Err(e) => return Err(e),
            Ok((c, _)) => {
                if let Some(off) = sorted.entries[common..].iter().position(|&x| x > 0.0) {
                    failures.push(Witness::BeyondCandidate {
                        member,
                        index: common + off,
                    });
                    continue;
                }
                return Ok(GoverningCertificate {
                    governing_index: Some(member),
                    constant: c,
                    checked_range: (0, n),
                    residual: residual_on(g, &f.entries[..common], c),
                    verdict: Verdict::Governed,
                    witness: None,
                    failures,
                    exact: a.tail_is_zero(),
                });
            }
        }
    }
    let definitive = failures
        .iter()
        .find(|w| matches!(w, Witness::ZeroDivisor { .. }))
        .cloned();
    Ok(match definitive {
        // a refutation by one member does not refute the family; only when
        // every member is refuted is the verdict definitive
        Some(w)
            if failures
                .iter()
                .all(|w| matches!(w, Witness::ZeroDivisor { .. })) =>
        {
            GoverningCertificate::refuted((0, n), w, failures)
        }
        _ => GoverningCertificate {
            governing_index: None,
            constant: 0.0,
            checked_range: (0, n),
            residual: 0.0,
            verdict: Verdict::InconclusiveTruncation,
            witness: failures.first().cloned(),
            failures,
            exact: false,
        },
    })
}

/// Merge a countable (here: finite) family into one sequence
/// `g = sum_{k >= 1} 2^{-k} f^(k) / ||f^(k)||_inf` whose principal ideal
/// contains every member's. Zero members are dropped first. Members of unequal
/// length are zero-padded to the longest.
pub fn merge_governing(family: &[NonNegSeq]) -> Result<NonNegSeq, SeqError> {
    let members: Vec<&NonNegSeq> = family.iter().filter(|f| !f.is_zero()).collect();
    if members.is_empty() {
        return Err(SeqError::EmptyFamily);
    }
    let len = members.iter().map(|f| f.len()).max().unwrap_or(0);
    let mut g = vec![0.0; len];
    let mut tail = Some(0.0);
    let mut weight = 1.0;
    for f in &members {
        weight *= 0.5;
        let norm = f.sup_norm();
        for (gn, &x) in g.iter_mut().zip(&f.entries) {
            *gn += weight * x / norm;
        }
        tail = match (tail, f.tail_bound) {
            (Some(acc), Some(t)) => Some(acc + weight * t / norm),
            _ => None,
        };
    }
    // f^(k) <= 2^k ||f^(k)|| g; rounding can leave single-term entries an
    // ulp short, so raise them by whole ulps until the products hold exactly
    let bounds: Vec<f64> = members
        .iter()
        .enumerate()
        .map(|(k, f)| 2f64.powi(k as i32 + 1) * f.sup_norm())
        .collect();
    for (f, &bound) in members.iter().zip(&bounds) {
        for (gn, &x) in g.iter_mut().zip(&f.entries) {
            while !(x <= bound * *gn) {
                *gn = gn.next_up();
            }
        }
    }
    let g = NonNegSeq::new(g, tail)?;
    for (k, (f, &bound)) in members.iter().zip(&bounds).enumerate() {
        if let Some(n) = f
            .entries
            .iter()
            .zip(&g.entries)
            .position(|(&x, &gn)| !(x <= bound * gn))
        {
            return Err(SeqError::Postcondition(format!(
                "merge domination fails for member {} at index {n}",
                k + 1
            )));
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeSum {
    pub value: f64,
    /// The value only bounds the infinite sum from below.
    pub lower_bound_only: bool,
}

/// `sum_{n < N} phi(|a_n|)`.
pub fn gauge_sum(phi: &Gauge, a: &ComplexSeq) -> GaugeSum {
    let value = a.entries.iter().map(|z| phi.eval(z.norm())).sum();
    GaugeSum {
        value,
        lower_bound_only: !(a.tail_is_zero() && phi.eval(0.0) == 0.0),
    }
}

fn scaled_gauge_sum(phi: &Gauge, moduli: &[f64], mu: f64) -> f64 {
    moduli.iter().map(|&x| phi.eval(mu * x)).sum()
}

/// Largest `mu` in `{1, 1/2, 1/4, ...}` (at most 64 halvings) with
/// `sum phi(mu |a_n|) <= 1`.
pub fn scale_to_unit_sum(phi: &Gauge, a: &ComplexSeq) -> Result<f64, SeqError> {
    let moduli: Vec<f64> = a.entries.iter().map(|z| z.norm()).collect();
    scale_moduli(phi, &moduli)
}

fn scale_moduli(phi: &Gauge, moduli: &[f64]) -> Result<f64, SeqError> {
    let mut mu = 1.0;
    for _ in 0..=MAX_HALVINGS {
        if scaled_gauge_sum(phi, moduli, mu) <= 1.0 {
            return Ok(mu);
        }
        mu *= 0.5;
    }
    Err(SeqError::NoAdmissibleScale {
        halvings: MAX_HALVINGS,
    })
}

/// Minimal strictly increasing `m_1 < m_2 < ... < m_K` with
/// `m_k phi(1/k) >= 1`.
///
/// `ceil(1/phi(1/k))` is snapped to the nearest integer when it lies within
/// `1e-9` relative of one, so that e.g. `phi(x) = x` yields exactly `m_k = k`
/// despite rounding in `1/(1/k)`. The defining inequality is re-checked with
/// relative slack `CERT_SLACK`.
pub fn staircase_indices(phi: &Gauge, k_max: usize) -> Result<Vec<u64>, SeqError> {
    let mut m = Vec::with_capacity(k_max);
    let mut prev = 0u64;
    for k in 1..=k_max {
        prev = next_staircase_index(phi, k, prev)?;
        m.push(prev);
    }
    Ok(m)
}

/// `m_1, m_2, ...` up to the first `m_k >= cover` (or `k_max`).
pub fn staircase_indices_covering(
    phi: &Gauge,
    k_max: usize,
    cover: u64,
) -> Result<Vec<u64>, SeqError> {
    let mut m = Vec::new();
    let mut prev = 0u64;
    for k in 1..=k_max {
        prev = next_staircase_index(phi, k, prev)?;
        m.push(prev);
        if prev >= cover {
            break;
        }
    }
    Ok(m)
}

fn next_staircase_index(phi: &Gauge, k: usize, prev: u64) -> Result<u64, SeqError> {
    let v = phi.eval(1.0 / k as f64);
    if v <= 0.0 {
        return Err(SeqError::GaugeVanishes { k });
    }
    let inv = 1.0 / v;
    let rounded = inv.round();
    let need = if (inv - rounded).abs() <= 1e-9 * inv {
        rounded
    } else {
        inv.ceil()
    };
    if !need.is_finite() || need > u64::MAX as f64 / 2.0 {
        return Err(SeqError::StaircaseTooLong { len: u64::MAX });
    }
    let mk = (prev + 1).max(need as u64);
    if (mk as f64) * v < 1.0 - CERT_SLACK {
        return Err(SeqError::Postcondition(format!(
            "m_{k} phi(1/{k}) = {} < 1",
            mk as f64 * v
        )));
    }
    Ok(mk)
}

/// Staircase governing sequence built from a gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    /// `m_1..m_K`.
    pub m: Vec<u64>,
    /// `f(j) = 1` for `j < m_1`, `f(j) = 1/(k-1)` for `m_{k-1} <= j < m_k`.
    pub f: NonNegSeq,
}

/// Value of the staircase at index `j`, or `None` beyond `m_K - 1`.
pub fn staircase_value(m: &[u64], j: u64) -> Option<f64> {
    // block k (1-based) covers [m_{k-1}, m_k), with m_0 = 0
    let k = m.partition_point(|&mk| mk <= j) + 1;
    if k > m.len() {
        None
    } else if k == 1 {
        Some(1.0)
    } else {
        Some(1.0 / (k - 1) as f64)
    }
}

pub fn staircase_from_gauge(phi: &Gauge, k_max: usize) -> Result<Staircase, SeqError> {
    let m = staircase_indices(phi, k_max)?;
    let len = *m.last().unwrap_or(&0);
    if len > MAX_STAIRCASE_LEN {
        return Err(SeqError::StaircaseTooLong { len });
    }
    let mut entries = Vec::with_capacity(len as usize);
    let mut start = 0u64;
    for (idx, &mk) in m.iter().enumerate() {
        let value = if idx == 0 { 1.0 } else { 1.0 / idx as f64 };
        entries.extend(std::iter::repeat_n(value, (mk - start) as usize));
        start = mk;
    }
    let f = NonNegSeq::new(entries, Some(1.0 / k_max as f64))?;
    if !f.is_sorted() {
        return Err(SeqError::Postcondition(
            "staircase is not non-increasing".into(),
        ));
    }
    Ok(Staircase { m, f })
}

/// `#{n : x_n >= 1/k}` for `k = 1..=m.len()` must not exceed `m_k`.
pub fn check_counting_claim(scaled_moduli: &[f64], m: &[u64]) -> Result<(), SeqError> {
    let mut sorted = scaled_moduli.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    for (idx, &mk) in m.iter().enumerate() {
        let k = idx + 1;
        let level = 1.0 / k as f64;
        let count = sorted.partition_point(|&x| x >= level);
        if count as u64 > mk {
            return Err(SeqError::CountingViolation { k, count, m_k: mk });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseOutcome {
    pub certificate: GoverningCertificate,
    pub mu: f64,
    pub gauge_sum: GaugeSum,
    /// `m_1..m_K` actually built (stops early once the orbit is covered).
    pub m: Vec<u64>,
}

/// Staircase path: scale `a` into unit gauge sum, build the staircase, verify
/// the counting claim, and certify `|a|* <= (c/mu) f`.
///
/// The staircase is only extended until `m_k >= N` (or `k = k_max`); nonzero
/// rearranged entries beyond `m_K` make the outcome inconclusive.
pub fn staircase_governs(
    phi: &Gauge,
    a: &ComplexSeq,
    k_max: usize,
) -> Result<StaircaseOutcome, SeqError> {
    let n = a.len();
    let gsum = gauge_sum(phi, a);
    let moduli: Vec<f64> = a.entries.iter().map(|z| z.norm()).collect();
    if k_max == 0 {
        return Err(SeqError::Empty);
    }
    let mu = scale_moduli(phi, &moduli)?;
    // once m_k >= N the counting claim holds trivially for every later k
    let m = staircase_indices_covering(phi, k_max, n as u64)?;
    let scaled: Vec<f64> = moduli.iter().map(|x| mu * x).collect();
    check_counting_claim(&scaled, &m)?;

    let m_last = *m.last().unwrap_or(&0);
    let checked = (n as u64).min(m_last) as usize;

    let mut sorted = scaled;
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let f: Vec<f64> = (0..checked)
        .map(|j| staircase_value(&m, j as u64).unwrap_or(0.0))
        .collect();

    // for j >= m_1 the counting claim already gives (mu|a|)*_j < f(j)
    if let Some(j) = (m[0] as usize..checked).find(|&j| sorted[j] >= f[j]) {
        return Err(SeqError::Postcondition(format!(
            "scaled rearrangement not below staircase at index {j}"
        )));
    }

    let (c, _) = domination_on(&sorted[..checked], &f)?;
    let constant = c / mu;
    let unscaled: Vec<f64> = sorted[..checked].iter().map(|x| x / mu).collect();
    let mut certificate = GoverningCertificate {
        governing_index: Some(0),
        constant,
        checked_range: (0, checked),
        residual: residual_on(&unscaled, &f, constant),
        verdict: Verdict::Governed,
        witness: None,
        failures: Vec::new(),
        exact: a.tail_is_zero() && checked == n,
    };
    if let Some(off) = sorted[checked..].iter().position(|&x| x > 0.0) {
        let w = Witness::BeyondCandidate {
            member: 0,
            index: checked + off,
        };
        certificate.verdict = Verdict::InconclusiveTruncation;
        certificate.governing_index = None;
        certificate.witness = Some(w.clone());
        certificate.failures.push(w);
        certificate.exact = false;
    }
    Ok(StaircaseOutcome {
        certificate,
        mu,
        gauge_sum: gsum,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearrangementCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `sum f*_n g_n >= sum f_n g_n` for non-increasing `g`.
pub fn rearrangement_inequality_check(
    f: &NonNegSeq,
    g: &NonNegSeq,
) -> Result<RearrangementCheck, SeqError> {
    if !g.is_sorted() {
        return Err(SeqError::NotSorted);
    }
    if f.len() != g.len() {
        return Err(SeqError::LengthMismatch {
            left: f.len(),
            right: g.len(),
        });
    }
    let fs = rearrange(f);
    let lhs: f64 = fs.entries.iter().zip(&g.entries).map(|(a, b)| a * b).sum();
    let rhs: f64 = f.entries.iter().zip(&g.entries).map(|(a, b)| a * b).sum();
    Ok(RearrangementCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - CERT_SLACK * lhs,
    })
}

// JSON: a bare array, or an object with `entries` and optional `tail_bound`.

#[derive(Deserialize)]
#[serde(untagged)]
enum NonNegRepr {
    Bare(Vec<f64>),
    Full {
        entries: Vec<f64>,
        #[serde(default)]
        tail_bound: Option<f64>,
    },
}

#[derive(Serialize)]
struct NonNegOut<'a> {
    entries: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_bound: Option<f64>,
}

impl Serialize for NonNegSeq {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NonNegOut {
            entries: &self.entries,
            tail_bound: self.tail_bound,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NonNegSeq {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (entries, tail) = match NonNegRepr::deserialize(d)? {
            NonNegRepr::Bare(e) => (e, None),
            NonNegRepr::Full {
                entries,
                tail_bound,
            } => (entries, tail_bound),
        };
        NonNegSeq::new(entries, tail).map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ComplexRepr {
    Bare(Vec<[f64; 2]>),
    Full {
        entries: Vec<[f64; 2]>,
        #[serde(default)]
        tail_bound: Option<f64>,
    },
}

#[derive(Serialize)]
struct ComplexOut {
    entries: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_bound: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    tail_heuristic: bool,
}

impl Serialize for ComplexSeq {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ComplexOut {
            entries: self.entries.iter().map(|z| [z.re, z.im]).collect(),
            tail_bound: self.tail_bound,
            tail_heuristic: self.tail_heuristic,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexSeq {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (entries, tail) = match ComplexRepr::deserialize(d)? {
            ComplexRepr::Bare(e) => (e, None),
            ComplexRepr::Full {
                entries,
                tail_bound,
            } => (entries, tail_bound),
        };
        ComplexSeq::new(
            entries.into_iter().map(|[r, i]| C64::new(r, i)).collect(),
            tail,
        )
        .map_err(serde::de::Error::custom)
    }
}
