//! Analysis plans: one JSON document per run. Parsing rejects unknown keys,
//! validates cross-field rules and materializes every default so the plan
//! can be echoed back verbatim.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use specgate_core::linalg::C64;
use specgate_core::operators::OperatorSpec;
use specgate_core::resolvent::{default_r_grid, CertifyConfig, DiscreteConfig, DiscreteFamily};
use specgate_core::semigroup::{QuadratureOptions, SemigroupConfig};
use specgate_core::seqspace::{Gauge, NonNegSeq};
use specgate_core::serde_util;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid plan: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Discrete,
    Semigroup,
    Fuzz,
}

/// An operator spec, optionally flagged as a semigroup generator. The flag
/// and the growth hint sit beside the operator's own keys.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorInput {
    pub spec: OperatorSpec,
    pub generator: bool,
    pub growth_hint: Option<f64>,
}

impl Serialize for OperatorInput {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(&self.spec).map_err(serde::ser::Error::custom)?;
        if let Value::Object(map) = &mut v {
            if self.generator {
                map.insert("generator".into(), Value::Bool(true));
            }
            if let Some(h) = self.growth_hint {
                map.insert("growth_hint".into(), serde_json::json!(h));
            }
        }
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OperatorInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut v = Value::deserialize(d)?;
        let map = v
            .as_object_mut()
            .ok_or_else(|| D::Error::custom("operator must be a JSON object"))?;
        let generator = match map.remove("generator") {
            None => false,
            Some(Value::Bool(b)) => b,
            Some(_) => return Err(D::Error::custom("`generator` must be a boolean")),
        };
        let growth_hint = match map.remove("growth_hint") {
            None | Some(Value::Null) => None,
            Some(h) => Some(
                h.as_f64()
                    .ok_or_else(|| D::Error::custom("`growth_hint` must be a number"))?,
            ),
        };
        let spec = OperatorSpec::deserialize(v).map_err(D::Error::custom)?;
        Ok(Self {
            spec,
            generator,
            growth_hint,
        })
    }
}

/// Hypothesis family; exactly one kind in discrete mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequences: Option<Vec<NonNegSeq>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauges: Option<Vec<Gauge>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<f64>>,
}

impl FamilyInput {
    fn kinds(&self) -> usize {
        self.sequences.is_some() as usize
            + self.gauges.is_some() as usize
            + self.powers.is_some() as usize
    }

    pub fn to_family(&self) -> Option<DiscreteFamily> {
        if let Some(s) = &self.sequences {
            return Some(DiscreteFamily::Sequences(s.clone()));
        }
        if let Some(g) = &self.gauges {
            return Some(DiscreteFamily::Gauges(g.clone()));
        }
        self.powers
            .as_ref()
            .map(|p| DiscreteFamily::Powers(p.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlanConfig {
    pub coordinate_pairs: bool,
    pub random_pairs: usize,
    pub seed: u64,
}

impl Default for SamplePlanConfig {
    fn default() -> Self {
        Self {
            coordinate_pairs: true,
            random_pairs: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizons {
    pub n_terms: usize,
    pub r_grid: Vec<f64>,
    /// Direction of the resolvent probe (unimodular).
    #[serde(with = "serde_util::complex")]
    pub lambda: C64,
    pub probe_epsilon: f64,
    pub decay_epsilons: Vec<f64>,
    pub quadrature_steps: Option<usize>,
    pub quadrature_horizon: Option<f64>,
}

impl Default for Horizons {
    fn default() -> Self {
        let d = DiscreteConfig::default();
        Self {
            n_terms: d.n_terms,
            r_grid: default_r_grid(),
            lambda: C64::new(1.0, 0.0),
            probe_epsilon: d.probe_epsilon,
            decay_epsilons: d.decay_epsilons,
            quadrature_steps: None,
            quadrature_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupSettings {
    pub p_plan: Vec<f64>,
    pub fresh_samples: usize,
}

impl Default for SemigroupSettings {
    fn default() -> Self {
        let d = SemigroupConfig::default();
        Self {
            p_plan: d.p_plan,
            fresh_samples: d.fresh_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzPipeline {
    Discrete,
    Semigroup,
}

/// Fuzz cases use their own horizon and pair counts; the seed comes from
/// `sample_plan.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzSettings {
    pub pipeline: FuzzPipeline,
    /// Every sixth case is marginal.
    pub cases: usize,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub n_terms: usize,
    pub coordinate_pairs: bool,
    pub random_pairs: usize,
    /// Largest dimension drawn (from 2 up); defaults to 6 (discrete) or 16
    /// (semigroup).
    pub max_dim: Option<usize>,
    pub reproducer_dir: Option<String>,
}

impl Default for FuzzSettings {
    fn default() -> Self {
        Self {
            pipeline: FuzzPipeline::Discrete,
            cases: 600,
            workers: 0,
            n_terms: 1024,
            coordinate_pairs: true,
            random_pairs: 4,
            max_dim: None,
            reproducer_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON report path; stdout when absent.
    pub report: Option<String>,
    /// Directory for CSV curves.
    pub csv_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisPlan {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorInput>,
    #[serde(default)]
    pub family: FamilyInput,
    #[serde(default)]
    pub sample_plan: SamplePlanConfig,
    #[serde(default)]
    pub horizons: Horizons,
    #[serde(default)]
    pub semigroup: SemigroupSettings,
    #[serde(default)]
    pub fuzz: FuzzSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Powers used by the fuzz suite when the plan names no family.
pub const DEFAULT_FUZZ_POWERS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

fn invalid(msg: impl Into<String>) -> PlanError {
    PlanError::Validation(msg.into())
}

impl AnalysisPlan {
    /// Check cross-field rules and fill pipeline-dependent defaults.
    pub fn validate(mut self) -> Result<Self, PlanError> {
        match self.mode {
            Mode::Discrete => {
                let op = self
                    .operator
                    .as_ref()
                    .ok_or_else(|| invalid("discrete mode needs an operator"))?;
                if op.generator || op.growth_hint.is_some() {
                    return Err(invalid("generator fields are only valid in semigroup mode"));
                }
                if self.family.kinds() != 1 {
                    return Err(invalid(
                        "discrete mode needs exactly one of family.sequences, family.gauges, family.powers",
                    ));
                }
            }
            Mode::Semigroup => {
                if self.operator.is_none() {
                    return Err(invalid("semigroup mode needs an operator"));
                }
                if self.family.kinds() != 0 {
                    return Err(invalid("family is not used in semigroup mode"));
                }
            }
            Mode::Fuzz => {
                if self.operator.is_some() {
                    return Err(invalid("fuzz mode draws its own operators"));
                }
                match self.fuzz.pipeline {
                    FuzzPipeline::Discrete => match self.family.kinds() {
                        0 => self.family.powers = Some(DEFAULT_FUZZ_POWERS.to_vec()),
                        1 => {}
                        _ => return Err(invalid("at most one family kind may be given")),
                    },
                    FuzzPipeline::Semigroup if self.family.kinds() != 0 => {
                        return Err(invalid("family is not used by the semigroup fuzz pipeline"))
                    }
                    FuzzPipeline::Semigroup => {}
                }
                if self.fuzz.cases == 0 {
                    return Err(invalid("fuzz.cases must be positive"));
                }
                let default_dim = match self.fuzz.pipeline {
                    FuzzPipeline::Discrete => 6,
                    FuzzPipeline::Semigroup => 16,
                };
                let max_dim = *self.fuzz.max_dim.get_or_insert(default_dim);
                if max_dim < 2 {
                    return Err(invalid("fuzz.max_dim must be at least 2"));
                }
                if self.fuzz.n_terms < 8 {
                    return Err(invalid("fuzz.n_terms must be at least 8"));
                }
                if !self.fuzz.coordinate_pairs && self.fuzz.random_pairs == 0 {
                    return Err(invalid("fuzz cases need at least one sample pair"));
                }
            }
        }
        if let Some(powers) = &self.family.powers {
            if powers.is_empty() || powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(invalid("family.powers must be non-empty positive numbers"));
            }
        }
        if matches!(&self.family.sequences, Some(s) if s.is_empty()) {
            return Err(invalid("family.sequences must not be empty"));
        }
        if matches!(&self.family.gauges, Some(g) if g.is_empty()) {
            return Err(invalid("family.gauges must not be empty"));
        }
        let h = &self.horizons;
        if h.n_terms < 8 {
            return Err(invalid("horizons.n_terms must be at least 8"));
        }
        if h.r_grid.is_empty()
            || h.r_grid.iter().any(|r| !(r.is_finite() && *r > 1.0))
            || h.r_grid.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(invalid(
                "horizons.r_grid must be strictly decreasing with entries above 1",
            ));
        }
        if (h.lambda.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid("horizons.lambda must be unimodular"));
        }
        if !(h.probe_epsilon > 0.0 && h.probe_epsilon.is_finite()) {
            return Err(invalid("horizons.probe_epsilon must be positive"));
        }
        if h.decay_epsilons
            .iter()
            .any(|e| !(*e > 0.0 && e.is_finite()))
        {
            return Err(invalid("horizons.decay_epsilons must be positive"));
        }
        if matches!(h.quadrature_steps, Some(0)) {
            return Err(invalid("horizons.quadrature_steps must be positive"));
        }
        if matches!(h.quadrature_horizon, Some(t) if !(t > 0.0 && t.is_finite())) {
            return Err(invalid("horizons.quadrature_horizon must be positive"));
        }
        let s = &self.semigroup;
        if s.p_plan.is_empty() || s.p_plan.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return Err(invalid(
                "semigroup.p_plan must be non-empty with entries >= 1",
            ));
        }
        if self.mode != Mode::Fuzz
            && !self.sample_plan.coordinate_pairs
            && self.sample_plan.random_pairs == 0
        {
            return Err(invalid("sample_plan yields no pairs"));
        }
        Ok(self)
    }

    pub fn discrete_config(&self) -> DiscreteConfig {
        DiscreteConfig {
            n_terms: self.horizons.n_terms,
            probe_epsilon: self.horizons.probe_epsilon,
            decay_epsilons: self.horizons.decay_epsilons.clone(),
        }
    }

    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            lambda: self.horizons.lambda,
            r_grid: self.horizons.r_grid.clone(),
        }
    }

    pub fn semigroup_config(&self) -> SemigroupConfig {
        SemigroupConfig {
            p_plan: self.semigroup.p_plan.clone(),
            fresh_samples: self.semigroup.fresh_samples,
            seed: self.sample_plan.seed,
            quadrature: QuadratureOptions {
                horizon: self.horizons.quadrature_horizon,
                steps: self.horizons.quadrature_steps,
            },
        }
    }

    /// Normalized form: pretty JSON with every default present.
    pub fn to_normalized_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plans always serialize");
        s.push('\n');
        s
    }
}

/// Parse and validate a plan document.
pub fn parse_plan(text: &str) -> Result<AnalysisPlan, PlanError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let plan: AnalysisPlan = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        PlanError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    plan.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "mode": "discrete",
        "operator": {"variant": "diagonal", "entries": [[0.5, 0]]},
        "family": {"powers": [1, 2]}
    }"#;

    #[test]
    fn defaults_materialize() {
        let plan = parse_plan(MINIMAL).unwrap();
        assert_eq!(plan.horizons.n_terms, 256);
        assert_eq!(plan.sample_plan.random_pairs, 32);
        assert_eq!(plan.sample_plan.seed, 0);
        assert!(plan.sample_plan.coordinate_pairs);
        assert_eq!(plan.horizons.r_grid.len(), 12);
        let echo = plan.to_normalized_json();
        assert!(echo.contains("\"n_terms\": 256"));
        assert_eq!(parse_plan(&echo).unwrap(), plan);
    }

    #[test]
    fn both_family_kinds_rejected() {
        let text = r#"{
            "mode": "discrete",
            "operator": {"variant": "diagonal", "entries": [[0.5, 0]]},
            "family": {"sequences": [[1, 0.5]], "gauges": [{"kind": "power", "p": 2}]}
        }"#;
        assert!(matches!(parse_plan(text), Err(PlanError::Validation(_))));
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = r#"{"mode": "discrete", "horizons": {"n_term": 3}}"#;
        match parse_plan(text) {
            Err(PlanError::Parse { path, line, .. }) => {
                assert_eq!(path, "horizons.n_term");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
        let nested = r#"{"mode": "discrete", "operator": {"variant": "diagonal", "entries": [[1, 0]], "bogus": 1}}"#;
        assert!(matches!(parse_plan(nested), Err(PlanError::Parse { .. })));
    }

    #[test]
    fn generator_fields_round_trip() {
        let text = r#"{
            "mode": "semigroup",
            "operator": {"variant": "diagonal", "entries": [[-1, 0]], "generator": true, "growth_hint": 0.25}
        }"#;
        let plan = parse_plan(text).unwrap();
        let op = plan.operator.as_ref().unwrap();
        assert!(op.generator);
        assert_eq!(op.growth_hint, Some(0.25));
        assert_eq!(parse_plan(&plan.to_normalized_json()).unwrap(), plan);
        let bad = text.replace("\"semigroup\"", "\"discrete\"");
        assert!(matches!(parse_plan(&bad), Err(PlanError::Validation(_))));
    }

    #[test]
    fn fuzz_defaults_depend_on_pipeline() {
        let plan = parse_plan(r#"{"mode": "fuzz"}"#).unwrap();
        assert_eq!(
            plan.family.powers.as_deref(),
            Some(&DEFAULT_FUZZ_POWERS[..])
        );
        assert_eq!(plan.fuzz.max_dim, Some(6));
        let plan = parse_plan(r#"{"mode": "fuzz", "fuzz": {"pipeline": "semigroup"}}"#).unwrap();
        assert!(plan.family.powers.is_none());
        assert_eq!(plan.fuzz.max_dim, Some(16));
    }

    #[test]
    fn validation_errors() {
        for text in [
            r#"{"mode": "discrete", "family": {"powers": [1]}}"#,
            r#"{"mode": "semigroup", "operator": {"variant": "diagonal", "entries": [[-1, 0]]}, "family": {"powers": [1]}}"#,
            r#"{"mode": "fuzz", "fuzz": {"cases": 0}}"#,
            r#"{"mode": "fuzz", "horizons": {"r_grid": [1.5, 2.0]}}"#,
            r#"{"mode": "fuzz", "horizons": {"lambda": [2, 0]}}"#,
            r#"{"mode": "fuzz", "semigroup": {"p_plan": [0.5]}}"#,
        ] {
            assert!(
                matches!(parse_plan(text), Err(PlanError::Validation(_))),
                "{text}"
            );
        }
    }
}
