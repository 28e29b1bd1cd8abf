//! Randomized sweep over stable and marginal operators. Stable cases must be
//! governed (discrete) or certified (semigroup); marginal cases must fail the
//! hypothesis. Any theorem-violating verdict is shrunk to a small reproducer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use specgate_core::linalg::{self, CMatrix, C64, ZERO};
use specgate_core::operators::OperatorSpec;
use specgate_core::resolvent::{analyze_discrete, SamplePlan, StabilityVerdict};
use specgate_core::semigroup::{analyze_semigroup, GeneratorSpec, SemigroupVerdict};
use specgate_core::seqspace::Verdict;

use crate::plan::{
    AnalysisPlan, FuzzPipeline, FuzzSettings, Mode, OperatorInput, OutputConfig, SamplePlanConfig,
};
use crate::run::{EXIT_INCONSISTENT, EXIT_OK, EXIT_UNMET};

/// Eigenvalue moduli of stable discrete cases.
pub const STABLE_MODULUS: f64 = 0.95;
/// Real parts of stable generator eigenvalues.
pub const STABLE_RE: (f64, f64) = (-3.0, -0.05);
/// Imaginary parts of generator eigenvalues.
pub const IM_RANGE: f64 = 3.0;
/// Largest accepted condition number of the similarity.
pub const MAX_CONDITION: f64 = 1e3;

/// Case `i` is marginal when it completes a block of six.
pub fn is_marginal(index: usize) -> bool {
    (index + 1) / 6 > index / 6
}

/// One drawn operator `V D V^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub index: usize,
    pub pipeline: FuzzPipeline,
    pub marginal: bool,
    pub eigenvalues: Vec<C64>,
    pub similarity: CMatrix,
    pub pair_seed: u64,
}

impl CaseSpec {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn matrix(&self) -> Option<CMatrix> {
        let n = self.dim();
        let d = CMatrix::from_fn(n, n, |i, j| if i == j { self.eigenvalues[i] } else { ZERO });
        let inv = self.similarity.clone().try_inverse()?;
        Some(&self.similarity * d * inv)
    }
}

fn condition(m: &CMatrix) -> f64 {
    match linalg::singular_values(m) {
        Ok(s) if !s.is_empty() => {
            let max = s.iter().cloned().fold(0.0, f64::max);
            let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
            max / min
        }
        _ => f64::INFINITY,
    }
}

fn similarity(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let scale = 0.5 / (n as f64).sqrt() / std::f64::consts::SQRT_2;
    for _ in 0..100 {
        let g = CMatrix::from_fn(n, n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * scale
        });
        let v = CMatrix::identity(n, n) + g;
        if condition(&v) <= MAX_CONDITION {
            return v;
        }
    }
    CMatrix::identity(n, n)
}

/// Deterministic case `index` of the sweep seeded with `seed`.
pub fn generate_case(pipeline: FuzzPipeline, max_dim: usize, seed: u64, index: usize) -> CaseSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let marginal = is_marginal(index);
    let n = rng.random_range(2..=max_dim.max(2));
    let mut eigenvalues: Vec<C64> = (0..n)
        .map(|_| match pipeline {
            FuzzPipeline::Discrete => {
                let r = STABLE_MODULUS * rng.random::<f64>().sqrt();
                C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
            }
            FuzzPipeline::Semigroup => C64::new(
                rng.random_range(STABLE_RE.0..=STABLE_RE.1),
                rng.random_range(-IM_RANGE..=IM_RANGE),
            ),
        })
        .collect();
    if marginal {
        eigenvalues[0] = match pipeline {
            FuzzPipeline::Discrete => {
                C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
            }
            FuzzPipeline::Semigroup => C64::new(0.0, rng.random_range(-IM_RANGE..=IM_RANGE)),
        };
    }
    let similarity = similarity(n, &mut rng);
    let pair_seed = rng.random();
    CaseSpec {
        index,
        pipeline,
        marginal,
        eigenvalues,
        similarity,
        pair_seed,
    }
}

/// Outcome of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub index: usize,
    pub marginal: bool,
    pub dim: usize,
    pub exit_code: i32,
    pub verdict: String,
    /// Stable: all pairs governed / certificate emitted. Marginal: every
    /// pair rejected / no certificate.
    pub expected: bool,
    pub detail: Option<String>,
}

/// Test-only fault injection: maps `(case, exit code)` to a new exit code.
pub type FaultHook = dyn Fn(&CaseSpec, i32) -> i32 + Sync;

fn sample_plan(settings: &FuzzSettings, case: &CaseSpec) -> SamplePlan {
    let coordinate = settings.coordinate_pairs && case.pipeline == FuzzPipeline::Discrete;
    SamplePlan::standard(
        case.dim(),
        coordinate,
        settings.random_pairs,
        case.pair_seed,
    )
}

/// Run one case through its pipeline.
pub fn evaluate_case(plan: &AnalysisPlan, case: &CaseSpec, hook: Option<&FaultHook>) -> CaseRecord {
    let mut rec = CaseRecord {
        index: case.index,
        marginal: case.marginal,
        dim: case.dim(),
        exit_code: EXIT_UNMET,
        verdict: String::new(),
        expected: false,
        detail: None,
    };
    let Some(m) = case.matrix() else {
        rec.verdict = "error".into();
        rec.detail = Some("singular similarity".into());
        return rec;
    };
    let pairs = sample_plan(&plan.fuzz, case);
    match case.pipeline {
        FuzzPipeline::Discrete => {
            let family = plan
                .family
                .to_family()
                .expect("validated fuzz plans carry a family");
            let mut config = plan.discrete_config();
            config.n_terms = plan.fuzz.n_terms;
            let result = OperatorSpec::dense(m)
                .map_err(|e| e.to_string())
                .and_then(|t| {
                    analyze_discrete(&t, &pairs, &family, &config).map_err(|e| e.to_string())
                });
            match result {
                Ok(rep) => {
                    rec.verdict = serde_json::to_value(&rep.verdict)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    rec.exit_code = match rep.verdict {
                        StabilityVerdict::CounterexampleCandidate => EXIT_INCONSISTENT,
                        StabilityVerdict::ConsistentWithTheorem if rep.all_governed() => EXIT_OK,
                        _ => EXIT_UNMET,
                    };
                    let all_rejected = rep
                        .pairs
                        .iter()
                        .all(|p| p.verdict() == Some(Verdict::NotGoverned));
                    rec.expected = if case.marginal {
                        all_rejected
                    } else {
                        rep.all_governed()
                    };
                    rec.detail = Some(format!(
                        "governed {}, not governed {}, inconclusive {}",
                        rep.governed_pairs, rep.not_governed_pairs, rep.inconclusive_pairs
                    ));
                }
                Err(e) => {
                    rec.verdict = "error".into();
                    rec.detail = Some(e);
                }
            }
        }
        FuzzPipeline::Semigroup => {
            let result = GeneratorSpec::new(m, None)
                .and_then(|g| analyze_semigroup(&g, &pairs, &plan.semigroup_config()));
            match result {
                Ok(rep) => {
                    rec.verdict = serde_json::to_value(&rep.verdict)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    rec.exit_code = match rep.verdict {
                        SemigroupVerdict::Certified => EXIT_OK,
                        SemigroupVerdict::Violation => EXIT_INCONSISTENT,
                        _ => EXIT_UNMET,
                    };
                    let certified = rep.certificate.as_ref().is_some_and(|c| {
                        c.s0_upper < 0.0 && c.verification_samples.iter().all(|s| s.pass)
                    }) && rep.s_oracle <= 0.0;
                    rec.expected = if case.marginal {
                        rep.certificate.is_none()
                    } else {
                        certified && rep.verdict == SemigroupVerdict::Certified
                    };
                    rec.detail = rep.error.clone().or_else(|| {
                        rep.s0_upper
                            .map(|s| format!("s0_upper {s:e}, s_oracle {:e}", rep.s_oracle))
                    });
                }
                Err(e) => {
                    rec.verdict = "error".into();
                    rec.detail = Some(e.to_string());
                }
            }
        }
    }
    if let Some(hook) = hook {
        rec.exit_code = hook(case, rec.exit_code);
    }
    rec
}

fn round_to(z: C64, digits: i32) -> C64 {
    let s = 10f64.powi(digits);
    C64::new((z.re * s).round() / s, (z.im * s).round() / s)
}

fn shrink_candidates(case: &CaseSpec) -> Vec<CaseSpec> {
    let mut out = Vec::new();
    let n = case.dim();
    if n > 1 {
        for j in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            let mut c = case.clone();
            c.eigenvalues = keep.iter().map(|&i| case.eigenvalues[i]).collect();
            c.similarity =
                CMatrix::from_fn(n - 1, n - 1, |a, b| case.similarity[(keep[a], keep[b])]);
            if c.marginal && j == 0 {
                c.marginal = false;
            }
            if condition(&c.similarity) <= MAX_CONDITION {
                out.push(c);
            }
        }
    }
    let identity = CMatrix::identity(n, n);
    if case.similarity != identity {
        let mut c = case.clone();
        c.similarity = identity;
        out.push(c);
    }
    for digits in [0, 1, 2, 3] {
        let mut c = case.clone();
        c.eigenvalues = case
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                if i == 0 && case.marginal {
                    // stay on the unit circle / imaginary axis
                    match case.pipeline {
                        FuzzPipeline::Discrete => C64::from_polar(
                            1.0,
                            (z.arg() * 10f64.powi(digits)).round() / 10f64.powi(digits),
                        ),
                        FuzzPipeline::Semigroup => C64::new(0.0, round_to(z, digits).im),
                    }
                } else {
                    round_to(z, digits)
                }
            })
            .collect();
        if c.eigenvalues != case.eigenvalues {
            out.push(c);
        }
    }
    out
}

/// Greedy shrink: keep the first smaller candidate that still exits with 3.
pub fn shrink(plan: &AnalysisPlan, case: &CaseSpec, hook: Option<&FaultHook>) -> CaseSpec {
    let mut best = case.clone();
    for _ in 0..64 {
        let next = shrink_candidates(&best)
            .into_iter()
            .find(|c| evaluate_case(plan, c, hook).exit_code == EXIT_INCONSISTENT);
        match next {
            Some(c) => best = c,
            None => break,
        }
    }
    best
}

/// Stand-alone plan replaying a case through the single-operator pipeline.
pub fn reproducer_plan(plan: &AnalysisPlan, case: &CaseSpec) -> Option<AnalysisPlan> {
    let m = case.matrix()?;
    let semigroup = case.pipeline == FuzzPipeline::Semigroup;
    Some(AnalysisPlan {
        mode: if semigroup {
            Mode::Semigroup
        } else {
            Mode::Discrete
        },
        operator: Some(OperatorInput {
            spec: OperatorSpec::Dense(m),
            generator: semigroup,
            growth_hint: None,
        }),
        family: if semigroup {
            Default::default()
        } else {
            plan.family.clone()
        },
        sample_plan: SamplePlanConfig {
            coordinate_pairs: plan.fuzz.coordinate_pairs && !semigroup,
            random_pairs: plan.fuzz.random_pairs,
            seed: case.pair_seed,
        },
        horizons: crate::plan::Horizons {
            n_terms: plan.fuzz.n_terms,
            ..plan.horizons.clone()
        },
        semigroup: plan.semigroup.clone(),
        fuzz: Default::default(),
        output: OutputConfig::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducer {
    pub index: usize,
    pub dim: usize,
    pub plan: Option<AnalysisPlan>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExitCounts {
    pub ok: usize,
    pub hypothesis_unmet: usize,
    pub inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub pipeline: FuzzPipeline,
    pub seed: u64,
    pub cases: usize,
    pub stable: usize,
    pub marginal: usize,
    pub exits: ExitCounts,
    pub stable_expected: usize,
    pub marginal_expected: usize,
    pub reproducers: Vec<Reproducer>,
    pub records: Vec<CaseRecord>,
}

impl FuzzSummary {
    pub fn all_expected(&self) -> bool {
        self.stable_expected == self.stable && self.marginal_expected == self.marginal
    }
}

/// Run every case (in parallel on the current rayon pool), then shrink each
/// exit-3 case into a reproducer.
pub fn fuzz(plan: &AnalysisPlan, hook: Option<&FaultHook>) -> FuzzSummary {
    let settings = &plan.fuzz;
    let seed = plan.sample_plan.seed;
    let max_dim = settings.max_dim.unwrap_or(6);
    let cases: Vec<CaseSpec> = (0..settings.cases)
        .map(|i| generate_case(settings.pipeline, max_dim, seed, i))
        .collect();
    let records: Vec<CaseRecord> = cases
        .par_iter()
        .map(|c| evaluate_case(plan, c, hook))
        .collect();
    let mut exits = ExitCounts::default();
    for r in &records {
        match r.exit_code {
            EXIT_OK => exits.ok += 1,
            EXIT_INCONSISTENT => exits.inconsistent += 1,
            _ => exits.hypothesis_unmet += 1,
        }
    }
    let reproducers = records
        .iter()
        .filter(|r| r.exit_code == EXIT_INCONSISTENT)
        .map(|r| {
            let small = shrink(plan, &cases[r.index], hook);
            Reproducer {
                index: r.index,
                dim: small.dim(),
                plan: reproducer_plan(plan, &small),
            }
        })
        .collect();
    let marginal = records.iter().filter(|r| r.marginal).count();
    FuzzSummary {
        pipeline: settings.pipeline,
        seed,
        cases: records.len(),
        stable: records.len() - marginal,
        marginal,
        exits,
        stable_expected: records.iter().filter(|r| !r.marginal && r.expected).count(),
        marginal_expected: records.iter().filter(|r| r.marginal && r.expected).count(),
        reproducers,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;
    use specgate_core::operators::spectral_radius_oracle;

    fn plan(text: &str) -> AnalysisPlan {
        parse_plan(text).unwrap()
    }

    #[test]
    fn marginal_cadence() {
        let flags: Vec<bool> = (0..12).map(is_marginal).collect();
        assert_eq!(flags.iter().filter(|&&m| m).count(), 2);
        assert!(flags[5] && flags[11]);
        assert_eq!((0..600).filter(|&i| is_marginal(i)).count(), 100);
        assert_eq!((0..120).filter(|&i| is_marginal(i)).count(), 20);
    }

    #[test]
    fn generated_cases_respect_bounds() {
        for i in 0..60 {
            let c = generate_case(FuzzPipeline::Discrete, 6, 7, i);
            assert!((2..=6).contains(&c.dim()));
            assert!(condition(&c.similarity) <= MAX_CONDITION);
            let r =
                spectral_radius_oracle(&OperatorSpec::dense(c.matrix().unwrap()).unwrap()).unwrap();
            if c.marginal {
                assert!((r - 1.0).abs() < 1e-9, "{r}");
            } else {
                assert!(r <= STABLE_MODULUS + 1e-9);
            }
            let s = generate_case(FuzzPipeline::Semigroup, 16, 7, i);
            let max_re = s
                .eigenvalues
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(if s.marginal {
                max_re == 0.0
            } else {
                max_re <= -0.05
            });
        }
        assert_eq!(
            generate_case(FuzzPipeline::Discrete, 6, 7, 3),
            generate_case(FuzzPipeline::Discrete, 6, 7, 3)
        );
        assert_ne!(
            generate_case(FuzzPipeline::Discrete, 6, 7, 3),
            generate_case(FuzzPipeline::Discrete, 6, 8, 3)
        );
    }

    #[test]
    fn small_discrete_sweep_matches_expectations() {
        let p = plan(
            r#"{"mode": "fuzz", "fuzz": {"cases": 12, "n_terms": 512}, "sample_plan": {"seed": 5}}"#,
        );
        let s = fuzz(&p, None);
        assert_eq!((s.stable, s.marginal), (10, 2));
        assert_eq!(s.exits.inconsistent, 0);
        assert!(s.all_expected(), "{:?}", s.records);
        assert!(s.reproducers.is_empty());
    }

    #[test]
    fn shrinker_emits_minimal_reproducer() {
        let p = plan(
            r#"{"mode": "fuzz", "fuzz": {"cases": 6, "n_terms": 64, "random_pairs": 1, "coordinate_pairs": false}, "sample_plan": {"seed": 1}}"#,
        );
        // pretend every case of dimension >= 2 violates the theorem
        let hook = |c: &CaseSpec, exit: i32| {
            if c.dim() >= 2 {
                EXIT_INCONSISTENT
            } else {
                exit
            }
        };
        let s = fuzz(&p, Some(&hook));
        assert_eq!(s.exits.inconsistent, 6);
        assert_eq!(s.reproducers.len(), 6);
        for r in &s.reproducers {
            assert_eq!(r.dim, 2);
            let rp = r.plan.as_ref().unwrap();
            assert_eq!(rp.mode, Mode::Discrete);
            let text = rp.to_normalized_json();
            let back = parse_plan(&text).unwrap();
            assert_eq!(back.operator.unwrap().spec.dim(), 2);
        }
    }
}
