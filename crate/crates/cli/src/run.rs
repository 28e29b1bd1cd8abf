//! Dispatch a validated plan to its pipeline and assemble the report, the
//! CSV curves and the exit status.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use specgate_core::resolvent::{
    self, analyze_discrete, certify_discrete, CertifyReport, PairOrigin, PairReport, SamplePlan,
    StabilityReport, StabilityVerdict,
};
use specgate_core::semigroup::{
    self, analyze_semigroup, GeneratorSpec, SemigroupReport, SemigroupVerdict,
};

use crate::fuzz::{self, FaultHook, FuzzSummary};
use crate::plan::{AnalysisPlan, Mode, PlanError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNMET: i32 = 2;
pub const EXIT_INCONSISTENT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Govern,
    Certify,
    Semigroup,
    Fuzz,
}

impl Command {
    fn mode(self) -> Mode {
        match self {
            Command::Govern | Command::Certify => Mode::Discrete,
            Command::Semigroup => Mode::Semigroup,
            Command::Fuzz => Mode::Fuzz,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Consistent,
    HypothesisUnmet,
    InternalInconsistency,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Consistent => EXIT_OK,
            Status::HypothesisUnmet => EXIT_UNMET,
            Status::InternalInconsistency => EXIT_INCONSISTENT,
        }
    }

    fn from_exit(code: i32) -> Self {
        match code {
            EXIT_OK => Status::Consistent,
            EXIT_INCONSISTENT => Status::InternalInconsistency,
            _ => Status::HypothesisUnmet,
        }
    }
}

/// Truncation and tolerance settings used by the pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub chain_tolerance: f64,
    pub lower_bound_tolerance: f64,
    pub spectral_distance_tolerance: f64,
    pub unimodular_tolerance: f64,
    pub divergence_run: usize,
    pub probe_max_terms: usize,
    pub coordinate_pair_max_dim: usize,
    pub exp_norm_budget: f64,
    pub decay_rate_offset: f64,
    pub strip_tolerance: f64,
    pub envelope_tolerance: f64,
    pub singular_distance: f64,
    pub right_flank_rate: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            chain_tolerance: resolvent::CHAIN_TOLERANCE,
            lower_bound_tolerance: resolvent::LOWER_BOUND_TOLERANCE,
            spectral_distance_tolerance: resolvent::SPECTRAL_DISTANCE_TOLERANCE,
            unimodular_tolerance: resolvent::UNIMODULAR_TOLERANCE,
            divergence_run: resolvent::DIVERGENCE_RUN,
            probe_max_terms: resolvent::PROBE_MAX_TERMS,
            coordinate_pair_max_dim: resolvent::COORDINATE_PAIR_MAX_DIM,
            exp_norm_budget: semigroup::EXP_NORM_BUDGET,
            decay_rate_offset: semigroup::DECAY_RATE_OFFSET,
            strip_tolerance: semigroup::STRIP_TOLERANCE,
            envelope_tolerance: semigroup::ENVELOPE_TOLERANCE,
            singular_distance: semigroup::SINGULAR_DISTANCE,
            right_flank_rate: semigroup::RIGHT_FLANK_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Outcome {
    Govern(StabilityReport),
    Certify(CertifyReport),
    Semigroup(SemigroupReport),
    Fuzz(FuzzSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Seconds since the Unix epoch; the only field that varies between runs.
    pub timestamp: u64,
    pub seed: u64,
    pub plan: AnalysisPlan,
    pub settings: Settings,
    pub status: Status,
    pub exit_code: i32,
    pub outcome: Outcome,
}

/// Name of the timestamp field, excluded from determinism comparisons.
pub const TIMESTAMP_FIELD: &str = "timestamp";

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    /// Report JSON with the timestamp removed.
    pub fn to_comparable_json(&self) -> String {
        strip_timestamp(&self.to_json())
    }
}

/// Drop the top-level timestamp from a serialized report.
pub fn strip_timestamp(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).expect("report JSON");
    if let Some(m) = v.as_object_mut() {
        m.remove(TIMESTAMP_FIELD);
    }
    serde_json::to_string_pretty(&v).expect("report JSON")
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFile {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub csv: Vec<CsvFile>,
}

fn sample_plan(plan: &AnalysisPlan, dim: usize) -> SamplePlan {
    let s = &plan.sample_plan;
    SamplePlan::standard(dim, s.coordinate_pairs, s.random_pairs, s.seed)
}

fn discrete_exit(rep: &StabilityReport) -> i32 {
    match rep.verdict {
        StabilityVerdict::CounterexampleCandidate => EXIT_INCONSISTENT,
        StabilityVerdict::ConsistentWithTheorem if rep.all_governed() => EXIT_OK,
        _ => EXIT_UNMET,
    }
}

fn origin_label(o: &PairOrigin) -> String {
    match o {
        PairOrigin::Coordinate { row, column } => format!("coordinate({row},{column})"),
        PairOrigin::Random { index } => format!("random({index})"),
        PairOrigin::Given { index } => format!("given({index})"),
    }
}

fn to_csv<T: Serialize>(
    name: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<CsvFile, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| RunError::Analysis(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RunError::Analysis(e.to_string()))?;
    Ok(CsvFile {
        name: name.to_string(),
        content: String::from_utf8(bytes).expect("csv output is UTF-8"),
    })
}

#[derive(Serialize)]
struct PairRow {
    origin: String,
    verdict: String,
    constant: Option<f64>,
    gauge_index: Option<usize>,
    mu: Option<f64>,
    error: Option<String>,
}

fn pair_rows(pairs: &[PairReport]) -> Vec<PairRow> {
    pairs
        .iter()
        .map(|p| PairRow {
            origin: origin_label(&p.origin),
            verdict: p
                .verdict()
                .map(|v| {
                    serde_json::to_value(v)
                        .ok()
                        .and_then(|s| s.as_str().map(String::from))
                        .unwrap_or_default()
                })
                .unwrap_or_else(|| "none".into()),
            constant: p.certificate.as_ref().map(|c| c.constant),
            gauge_index: p.gauge_index,
            mu: p.mu,
            error: p.error.clone(),
        })
        .collect()
}

#[derive(Serialize)]
struct ChainRow {
    origin: String,
    r: f64,
    pairing: f64,
    orbit_sum: f64,
    remainder: f64,
    rearranged_sum: f64,
    envelope: f64,
    link1: f64,
    link2: f64,
    link3: f64,
    holds: bool,
}

#[derive(Serialize)]
struct StripRow {
    re_mu: f64,
    im_mu: f64,
    resolvent_norm: f64,
    bound: f64,
    pass: bool,
}

fn run_discrete(
    plan: &AnalysisPlan,
    certify: bool,
) -> Result<(Outcome, i32, Vec<CsvFile>), RunError> {
    let op = plan
        .operator
        .as_ref()
        .expect("validated discrete plans carry an operator");
    let family = plan
        .family
        .to_family()
        .expect("validated discrete plans carry a family");
    let pairs = sample_plan(plan, op.spec.dim());
    if pairs.pairs.is_empty() {
        return Err(
            PlanError::Validation("sample_plan yields no pairs for this dimension".into()).into(),
        );
    }
    let config = plan.discrete_config();
    if !certify {
        let rep = analyze_discrete(&op.spec, &pairs, &family, &config)
            .map_err(|e| RunError::Analysis(e.to_string()))?;
        let csv = vec![to_csv("pairs.csv", pair_rows(&rep.pairs))?];
        let exit = discrete_exit(&rep);
        return Ok((Outcome::Govern(rep), exit, csv));
    }
    let rep = certify_discrete(&op.spec, &pairs, &family, &config, &plan.certify_config())
        .map_err(|e| RunError::Analysis(e.to_string()))?;
    let mut exit = discrete_exit(&rep.stability);
    if !rep.consistent {
        exit = EXIT_INCONSISTENT;
    }
    let chains = rep.chains.iter().flat_map(|c| {
        c.records.iter().map(move |r| ChainRow {
            origin: origin_label(&c.origin),
            r: r.r,
            pairing: r.pairing,
            orbit_sum: r.orbit_sum,
            remainder: r.remainder,
            rearranged_sum: r.rearranged_sum,
            envelope: r.envelope,
            link1: r.residuals[0],
            link2: r.residuals[1],
            link3: r.residuals[2],
            holds: r.holds,
        })
    });
    let csv = vec![
        to_csv("pairs.csv", pair_rows(&rep.stability.pairs))?,
        to_csv("probe.csv", rep.probe.rows())?,
        to_csv("chain.csv", chains)?,
    ];
    Ok((Outcome::Certify(rep), exit, csv))
}

fn run_semigroup(plan: &AnalysisPlan) -> Result<(Outcome, i32, Vec<CsvFile>), RunError> {
    let op = plan
        .operator
        .as_ref()
        .expect("validated semigroup plans carry an operator");
    let gen = GeneratorSpec::from_operator(&op.spec, op.growth_hint)
        .map_err(|e| RunError::Analysis(e.to_string()))?;
    let pairs = sample_plan(plan, gen.dim());
    if pairs.pairs.is_empty() {
        return Err(
            PlanError::Validation("sample_plan yields no pairs for this dimension".into()).into(),
        );
    }
    let rep = analyze_semigroup(&gen, &pairs, &plan.semigroup_config())
        .map_err(|e| RunError::Analysis(e.to_string()))?;
    let exit = match rep.verdict {
        SemigroupVerdict::Certified => EXIT_OK,
        SemigroupVerdict::Violation => EXIT_INCONSISTENT,
        _ => EXIT_UNMET,
    };
    let rows = rep
        .certificate
        .iter()
        .flat_map(|c| &c.verification_samples)
        .map(|s| StripRow {
            re_mu: s.re_mu,
            im_mu: s.im_mu,
            resolvent_norm: s.resolvent_norm,
            bound: s.bound,
            pass: s.pass,
        });
    let csv = vec![to_csv("strip_samples.csv", rows)?];
    Ok((Outcome::Semigroup(rep), exit, csv))
}

fn run_fuzz(
    plan: &AnalysisPlan,
    hook: Option<&FaultHook>,
) -> Result<(Outcome, i32, Vec<CsvFile>), RunError> {
    let summary = fuzz::fuzz(plan, hook);
    let exit = if summary.exits.inconsistent > 0 {
        EXIT_INCONSISTENT
    } else if summary.all_expected() {
        EXIT_OK
    } else {
        EXIT_UNMET
    };
    let csv = vec![to_csv("cases.csv", &summary.records)?];
    Ok((Outcome::Fuzz(summary), exit, csv))
}

/// Run a validated plan under `command`.
pub fn run_plan(command: Command, plan: &AnalysisPlan) -> Result<RunOutput, RunError> {
    run_plan_with_hook(command, plan, None)
}

/// `run_plan` with a fault-injection hook applied to fuzz cases.
pub fn run_plan_with_hook(
    command: Command,
    plan: &AnalysisPlan,
    hook: Option<&FaultHook>,
) -> Result<RunOutput, RunError> {
    if plan.mode != command.mode() {
        return Err(PlanError::Validation(format!(
            "plan mode {:?} does not match command {:?}",
            plan.mode, command
        ))
        .into());
    }
    let (outcome, exit, csv) = match command {
        Command::Govern => run_discrete(plan, false)?,
        Command::Certify => run_discrete(plan, true)?,
        Command::Semigroup => run_semigroup(plan)?,
        Command::Fuzz => run_fuzz(plan, hook)?,
    };
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(RunOutput {
        report: Report {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            timestamp,
            seed: plan.sample_plan.seed,
            plan: plan.clone(),
            settings: Settings::default(),
            status: Status::from_exit(exit),
            exit_code: exit,
            outcome,
        },
        csv,
    })
}

/// Short human-readable summary.
pub fn summary(report: &Report) -> String {
    let head = format!(
        "{} {:?}: status {:?} (exit {}), seed {}",
        report.tool, report.command, report.status, report.exit_code, report.seed
    );
    let body = match &report.outcome {
        Outcome::Govern(r) => discrete_line(r),
        Outcome::Certify(r) => format!(
            "{}\n  chains {} (consistent: {}), unimodular eigenvalues {}",
            discrete_line(&r.stability),
            r.chains.len(),
            r.consistent,
            r.lower_bounds.len()
        ),
        Outcome::Semigroup(r) => format!(
            "  verdict {:?}, s_oracle {:.6e}, eps {}, s0_upper {}{}",
            r.verdict,
            r.s_oracle,
            r.epsilon,
            r.s0_upper.map(|s| format!("{s:.6e}")).unwrap_or_else(|| "none".into()),
            r.error.as_ref().map(|e| format!(", error: {e}")).unwrap_or_default()
        ),
        Outcome::Fuzz(s) => format!(
            "  {:?} cases {} (stable {}, marginal {}): exit 0/2/3 = {}/{}/{}, expected stable {}/{}, marginal {}/{}",
            s.pipeline,
            s.cases,
            s.stable,
            s.marginal,
            s.exits.ok,
            s.exits.hypothesis_unmet,
            s.exits.inconsistent,
            s.stable_expected,
            s.stable,
            s.marginal_expected,
            s.marginal
        ),
    };
    format!("{head}\n{body}\n")
}

fn discrete_line(r: &StabilityReport) -> String {
    format!(
        "  verdict {:?}, r(T) {}, pairs {} (governed {}, not governed {}, inconclusive {})",
        r.verdict,
        r.r_oracle
            .map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "n/a".into()),
        r.pairs.len(),
        r.governed_pairs,
        r.not_governed_pairs,
        r.inconclusive_pairs
    )
}
