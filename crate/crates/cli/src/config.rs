//! TOML run configuration: schema, task parsing, and resolution of model
//! blocks into core types. Schema errors surface as strings; the caller
//! assigns exit codes.

use std::collections::BTreeMap;

use moran_core::expr::KernelExpr;
use moran_core::{
    birth_death, counterexample_bd, two_allelic, B1Mode, BDParams, ExperimentKind, Measure,
    ModelSpec, MuFn, RateMatrix, SelectionKernel, StateSpace, SymPart, TestFunction, Tolerances,
};
use serde::Deserialize;

/// Seed used when neither the config nor the command line provides one.
pub const DEFAULT_SEED: u64 = 20260819;

/// Top-level run configuration. Unknown keys are rejected during parsing
/// so typos surface with line and column positions.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One of: validate, simulate, flow, eigen, variance,
    /// experiment:<name>, zoo-check:<name>.
    pub task: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub tolerance_profile: Option<String>,
    #[serde(default)]
    pub tolerances: Option<ToleranceOverrides>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub variance: Option<VarianceConfig>,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub series: Option<SeriesConfig>,
    #[serde(default)]
    pub counterexample: Option<CounterexampleConfig>,
}

/// The resolved task. Exactly one per config, parsed from the `task`
/// string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Validate,
    Simulate,
    Flow,
    Eigen,
    Variance,
    Experiment(ExperimentKind),
    ZooSeries,
    ZooCounterexample,
}

impl Task {
    pub fn parse(raw: &str) -> Result<Task, String> {
        match raw {
            "validate" => Ok(Task::Validate),
            "simulate" => Ok(Task::Simulate),
            "flow" => Ok(Task::Flow),
            "eigen" => Ok(Task::Eigen),
            "variance" => Ok(Task::Variance),
            _ => {
                if let Some(name) = raw.strip_prefix("experiment:") {
                    ExperimentKind::from_name(name).map(Task::Experiment).ok_or_else(|| {
                        format!(
                            "unknown experiment `{name}`; expected one of {}",
                            ExperimentKind::all()
                                .iter()
                                .map(|k| k.name())
                                .collect::<Vec<_>>()
                                .join(", ")
                        )
                    })
                } else if let Some(name) = raw.strip_prefix("zoo-check:") {
                    match name {
                        "series" => Ok(Task::ZooSeries),
                        "counterexample" => Ok(Task::ZooCounterexample),
                        _ => Err(format!(
                            "unknown zoo check `{name}`; expected series or counterexample"
                        )),
                    }
                } else {
                    Err(format!(
                        "unknown task `{raw}`; expected validate, simulate, flow, eigen, \
                         variance, experiment:<name>, or zoo-check:<name>"
                    ))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Task::Validate => "validate".into(),
            Task::Simulate => "simulate".into(),
            Task::Flow => "flow".into(),
            Task::Eigen => "eigen".into(),
            Task::Variance => "variance".into(),
            Task::Experiment(kind) => format!("experiment:{}", kind.name()),
            Task::ZooSeries => "zoo-check:series".into(),
            Task::ZooCounterexample => "zoo-check:counterexample".into(),
        }
    }
}

/// Model block: either a named builder with parameters or inline
/// matrices, never both.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub builder: Option<String>,
    #[serde(default)]
    pub params: Option<BTreeMap<String, toml::Value>>,
    /// Inline mutation generator, row major.
    #[serde(default)]
    pub mutation: Option<Vec<Vec<f64>>>,
    /// Death potential: per-state values or an expression over x, mu[x].
    #[serde(default)]
    pub death: Option<PotentialSpec>,
    /// Birth potential: per-state values or an expression over x, mu[x].
    #[serde(default)]
    pub birth: Option<PotentialSpec>,
    /// Symmetric kernel part: a row-major matrix or an expression over
    /// x, y, mu[x], mu[y].
    #[serde(default)]
    pub symmetric: Option<SymmetricSpec>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

/// A per-state potential, written either as an array of values or as an
/// expression string.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Values(Vec<f64>),
    Expr(String),
}

impl PotentialSpec {
    fn resolve(&self, size: usize, name: &str) -> Result<MuFn, String> {
        match self {
            PotentialSpec::Values(v) if v.len() == size => Ok(MuFn::Const(v.clone())),
            PotentialSpec::Values(v) => Err(format!(
                "`{name}` has {} entries but the mutation matrix has {size} states",
                v.len()
            )),
            PotentialSpec::Expr(src) => {
                let expr = KernelExpr::parse(src).map_err(|e| e.to_string())?;
                if expr.uses_y() {
                    return Err(format!(
                        "`{name}` is a per-state potential; its expression may use x and \
                         mu[x] but not y"
                    ));
                }
                Ok(MuFn::Expr(expr))
            }
        }
    }
}

/// The symmetric kernel part, written either as a row-major matrix or as
/// an expression string.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SymmetricSpec {
    Matrix(Vec<Vec<f64>>),
    Expr(String),
}

impl SymmetricSpec {
    fn resolve(&self, size: usize) -> Result<SymPart, String> {
        match self {
            SymmetricSpec::Matrix(rows) => {
                Ok(SymPart::Const(dmatrix_from_rows(rows, size, "symmetric")?))
            }
            SymmetricSpec::Expr(src) => Ok(SymPart::Expr(
                KernelExpr::parse(src).map_err(|e| e.to_string())?,
            )),
        }
    }
}

#[derive(Debug)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    pub label: String,
}

impl ModelConfig {
    pub fn build(&self) -> Result<BuiltModel, String> {
        match (&self.builder, &self.mutation) {
            (Some(_), Some(_)) => Err(
                "model block must use either a builder or an inline mutation matrix, not both"
                    .into(),
            ),
            (Some(name), None) => self.build_named(name),
            (None, Some(_)) => self.build_inline(),
            (None, None) => {
                Err("model block needs a builder name or an inline mutation matrix".into())
            }
        }
    }

    fn build_named(&self, name: &str) -> Result<BuiltModel, String> {
        let params = Params::new(name, self.params.as_ref());
        for key in ["mutation", "death", "birth", "symmetric"] {
            let set = match key {
                "mutation" => self.mutation.is_some(),
                "death" => self.death.is_some(),
                "birth" => self.birth.is_some(),
                _ => self.symmetric.is_some(),
            };
            if set {
                return Err(format!(
                    "model builder `{name}` does not take an inline `{key}` field"
                ));
            }
        }
        let spec = match name {
            "two_allelic" => {
                let (a, b) = (params.float("a")?, params.float("b")?);
                let (p, q) = (params.float("p")?, params.float("q")?);
                params.finish(&["a", "b", "p", "q"])?;
                two_allelic(a, b, p, q).map_err(|e| e.to_string())?
            }
            "birth_death" => {
                let k = params.integer("truncation")?;
                let (b, d) = (params.float("birth")?, params.float("death")?);
                let power = params.integer_or("death_power", 0)?;
                params.finish(&["truncation", "birth", "death", "death_power"])?;
                birth_death(&bd_params(k, b, d, power)?).map_err(|e| e.to_string())?
            }
            "counterexample_bd" => {
                let (b, d, b1) = (
                    params.float("b")?,
                    params.float("d")?,
                    params.float("b1")?,
                );
                let k = params.integer("truncation")?;
                let mode = parse_b1_mode(&params.string_or("mode", "consistent")?)?;
                params.finish(&["b", "d", "b1", "truncation", "mode"])?;
                counterexample_bd(b, d, b1, mode, k)
                    .map_err(|e| e.to_string())?
                    .spec
            }
            other => {
                return Err(format!(
                    "unknown model builder `{other}`; expected two_allelic, birth_death, \
                     or counterexample_bd"
                ))
            }
        };
        Ok(BuiltModel {
            spec,
            label: name.to_string(),
        })
    }

    fn build_inline(&self) -> Result<BuiltModel, String> {
        if self.params.is_some() {
            return Err("inline model blocks do not take a `params` table".into());
        }
        let rows = self.mutation.as_ref().expect("checked by build");
        let size = rows.len();
        let mutation = RateMatrix::from_rows(rows).map_err(|e| e.to_string())?;
        let death = match &self.death {
            None => MuFn::zeros(size),
            Some(spec) => spec.resolve(size, "death")?,
        };
        let birth = match &self.birth {
            None => MuFn::zeros(size),
            Some(spec) => spec.resolve(size, "birth")?,
        };
        let symmetric = match &self.symmetric {
            None => SymPart::Zero,
            Some(spec) => spec.resolve(size)?,
        };
        let kernel = SelectionKernel::additive(death, birth, symmetric);
        let mut space = StateSpace::new(size).map_err(|e| e.to_string())?;
        if let Some(labels) = &self.labels {
            space = space.with_labels(labels.clone()).map_err(|e| e.to_string())?;
        }
        let spec = ModelSpec::new(space, mutation, kernel).map_err(|e| e.to_string())?;
        Ok(BuiltModel {
            spec,
            label: "inline".to_string(),
        })
    }
}

/// Builds a nalgebra matrix from row-major nested arrays.
fn dmatrix_from_rows(
    rows: &[Vec<f64>],
    size: usize,
    name: &str,
) -> Result<nalgebra::DMatrix<f64>, String> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(format!("`{name}` must be a {size}x{size} matrix"));
    }
    Ok(nalgebra::DMatrix::from_fn(size, size, |i, j| rows[i][j]))
}

pub fn bd_params(k: usize, birth: f64, death: f64, power: u32) -> Result<BDParams, String> {
    if birth.is_nan() || death.is_nan() || birth <= 0.0 || death <= 0.0 {
        return Err(format!(
            "birth and death scales must be positive, got {birth} and {death}"
        ));
    }
    let result = if power == 0 {
        BDParams::constant(k, birth, death)
    } else {
        BDParams::from_fns(
            k,
            move |_| birth,
            move |x| death * (x as f64).powi(power as i32),
        )
    };
    result.map_err(|e| e.to_string())
}

pub fn parse_b1_mode(raw: &str) -> Result<B1Mode, String> {
    match raw {
        "literal" => Ok(B1Mode::Literal),
        "consistent" => Ok(B1Mode::Consistent),
        other => Err(format!(
            "unknown b1 mode `{other}`; expected literal or consistent"
        )),
    }
}

/// Typed access to a builder's parameter table with unknown-key checking.
struct Params<'a> {
    builder: &'a str,
    table: Option<&'a BTreeMap<String, toml::Value>>,
}

impl<'a> Params<'a> {
    fn new(builder: &'a str, table: Option<&'a BTreeMap<String, toml::Value>>) -> Self {
        Params { builder, table }
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn float(&self, key: &str) -> Result<f64, String> {
        match self.get(key) {
            Some(toml::Value::Float(v)) => Ok(*v),
            Some(toml::Value::Integer(v)) => Ok(*v as f64),
            Some(_) => Err(format!(
                "builder `{}` parameter `{key}` must be a number",
                self.builder
            )),
            None => Err(format!(
                "builder `{}` needs parameter `{key}`",
                self.builder
            )),
        }
    }

    fn integer(&self, key: &str) -> Result<usize, String> {
        match self.get(key) {
            Some(toml::Value::Integer(v)) if *v > 0 => Ok(*v as usize),
            Some(_) => Err(format!(
                "builder `{}` parameter `{key}` must be a positive integer",
                self.builder
            )),
            None => Err(format!(
                "builder `{}` needs parameter `{key}`",
                self.builder
            )),
        }
    }

    fn integer_or(&self, key: &str, default: u32) -> Result<u32, String> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(*v as u32),
            Some(_) => Err(format!(
                "builder `{}` parameter `{key}` must be a nonnegative integer",
                self.builder
            )),
        }
    }

    fn string_or(&self, key: &str, default: &str) -> Result<String, String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!(
                "builder `{}` parameter `{key}` must be a string",
                self.builder
            )),
        }
    }

    fn finish(&self, known: &[&str]) -> Result<(), String> {
        if let Some(table) = self.table {
            for key in table.keys() {
                if !known.contains(&key.as_str()) {
                    return Err(format!(
                        "builder `{}` does not take parameter `{key}` (known: {})",
                        self.builder,
                        known.join(", ")
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-field tolerance overrides, applied on top of the selected profile.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub exact_identity: Option<f64>,
    pub eigen_residual: Option<f64>,
    pub flow_mass: Option<f64>,
    pub flow_propagation: Option<f64>,
    pub flow_consistency: Option<f64>,
    pub reduction_flow_gate: Option<f64>,
    pub semigroup_identity: Option<f64>,
    pub w_propagation: Option<f64>,
    pub propagator_stochastic: Option<f64>,
    pub propagator_semigroup: Option<f64>,
    pub quadrature_rel: Option<f64>,
    pub improper_tail_rel: Option<f64>,
    pub variance_cross_check: Option<f64>,
}

impl ToleranceOverrides {
    pub fn apply(&self, base: &mut Tolerances) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    base.$field = v;
                }
            };
        }
        take!(exact_identity);
        take!(eigen_residual);
        take!(flow_mass);
        take!(flow_propagation);
        take!(flow_consistency);
        take!(reduction_flow_gate);
        take!(semigroup_identity);
        take!(w_propagation);
        take!(propagator_stochastic);
        take!(propagator_semigroup);
        take!(quadrature_rel);
        take!(improper_tail_rel);
        take!(variance_cross_check);
    }
}

/// Resolves the tolerance profile (command line beats config) and applies
/// any per-field overrides.
pub fn resolve_tolerances(
    flag: Option<&str>,
    config: &RunConfig,
) -> Result<(Tolerances, String), String> {
    let name = flag
        .or(config.tolerance_profile.as_deref())
        .unwrap_or("default");
    let mut tol = Tolerances::by_name(name)
        .ok_or_else(|| format!("unknown tolerance profile `{name}`; expected strict or default"))?;
    if let Some(overrides) = &config.tolerances {
        overrides.apply(&mut tol);
    }
    Ok((tol, name.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub population: u64,
    pub horizon: f64,
    /// Number of equally spaced sample nodes after time zero (default 20).
    #[serde(default)]
    pub points: Option<usize>,
    /// Initial law (defaults to uniform).
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub record_events: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub horizon: f64,
    /// Number of grid intervals on [0, horizon] (default 100).
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub t: f64,
    /// Test function values, one per state.
    pub phi: Vec<f64>,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Also compute the stationary asymptotic variance.
    #[serde(default)]
    pub include_stationary: Option<bool>,
    /// Also compare against the symmetric-part reduction.
    #[serde(default)]
    pub compare: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub populations: Option<Vec<u64>>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub moments: Option<Vec<u32>>,
    #[serde(default)]
    pub run_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    /// Truncation level of the rate sequences.
    pub truncation: usize,
    /// Series terms; the check is repeated at twice this many terms.
    pub terms: usize,
    pub birth: f64,
    pub death: f64,
    /// Death rate grows like x^death_power (default 0: constant).
    #[serde(default)]
    pub death_power: Option<u32>,
    /// Optional expected verdict (`converging` or `diverging`); a
    /// mismatch fails the run.
    #[serde(default)]
    pub expect: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub b: f64,
    pub d: f64,
    pub b1: f64,
    pub truncation: usize,
    /// `literal`, `consistent`, or `both` (default).
    #[serde(default)]
    pub mode: Option<String>,
}

/// Parses a probability vector, defaulting to uniform.
pub fn measure_from(values: Option<&Vec<f64>>, size: usize) -> Result<Measure, String> {
    match values {
        None => Ok(Measure::uniform(size)),
        Some(v) if v.len() == size => Measure::normalized(v.clone()).map_err(|e| e.to_string()),
        Some(v) => Err(format!(
            "initial law has {} entries but the model has {size} states",
            v.len()
        )),
    }
}

/// Parses a test function, defaulting to the indicator of the first state.
pub fn phi_from(
    values: Option<&Vec<f64>>,
    size: usize,
) -> Result<(TestFunction, String), String> {
    match values {
        None => Ok((TestFunction::indicator(size, 0), "indicator_1".into())),
        Some(v) if v.len() == size => Ok((TestFunction::new(v.clone()), "custom".into())),
        Some(v) => Err(format!(
            "phi has {} entries but the model has {size} states",
            v.len()
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builder_model_and_task() {
        let cfg: RunConfig = toml::from_str(
            r#"
            task = "experiment:poc_rate"
            seed = 7
            [model]
            builder = "two_allelic"
            params = { a = 1.0, b = 1.0, p = 0, q = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(
            Task::parse(&cfg.task).unwrap(),
            Task::Experiment(ExperimentKind::PocRate)
        );
        let built = cfg.model.unwrap().build().unwrap();
        assert_eq!(built.label, "two_allelic");
        assert_eq!(built.spec.size(), 2);
    }

    #[test]
    fn parses_inline_model() {
        let cfg: RunConfig = toml::from_str(
            r#"
            task = "eigen"
            [model]
            mutation = [[-1.0, 1.0], [2.0, -2.0]]
            death = [0.0, 0.5]
            labels = ["a", "b"]
            "#,
        )
        .unwrap();
        let built = cfg.model.unwrap().build().unwrap();
        assert_eq!(built.label, "inline");
        assert_eq!(built.spec.state_space().label(1), "b");
    }

    #[test]
    fn inline_kernels_accept_expression_strings() {
        let cfg: RunConfig = toml::from_str(
            r#"
            task = "eigen"
            [model]
            mutation = [[-1.0, 1.0], [2.0, -2.0]]
            death = "pos(x - 1)"
            birth = "0.5 * mu[x]"
            symmetric = "mu[x] * mu[y]"
            "#,
        )
        .unwrap();
        let built = cfg.model.unwrap().build().unwrap();
        let mu = Measure::new(vec![0.25, 0.75]).unwrap();
        let (vd, vb) = built.spec.selection().additive_parts(&mu, 2).unwrap();
        assert_eq!(vd, vec![0.0, 1.0]);
        assert_eq!(vb, vec![0.125, 0.375]);
    }

    #[test]
    fn potential_expressions_must_not_depend_on_y() {
        let cfg: RunConfig = toml::from_str(
            r#"
            task = "eigen"
            [model]
            mutation = [[-1.0, 1.0], [2.0, -2.0]]
            death = "y"
            "#,
        )
        .unwrap();
        let err = cfg.model.unwrap().build().unwrap_err();
        assert!(err.contains("may use x and mu[x] but not y"), "{err}");
    }

    #[test]
    fn missing_task_is_a_parse_error_naming_the_key() {
        let err = toml::from_str::<RunConfig>("seed = 1\n").unwrap_err();
        assert!(err.to_string().contains("task"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = toml::from_str::<RunConfig>("task = \"eigen\"\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn rejects_unknown_builder_and_stray_params() {
        let model = ModelConfig {
            builder: Some("nonsense".into()),
            params: None,
            mutation: None,
            death: None,
            birth: None,
            symmetric: None,
            labels: None,
        };
        assert!(model.build().unwrap_err().contains("unknown model builder"));
        let cfg: RunConfig = toml::from_str(
            r#"
            task = "validate"
            [model]
            builder = "two_allelic"
            params = { a = 1.0, b = 1.0, p = 0.0, q = 1.0, extra = 3 }
            "#,
        )
        .unwrap();
        assert!(cfg.model.unwrap().build().unwrap_err().contains("extra"));
    }

    #[test]
    fn task_strings_round_trip() {
        for raw in [
            "validate",
            "simulate",
            "flow",
            "eigen",
            "variance",
            "experiment:poc_rate",
            "experiment:clt_check",
            "zoo-check:series",
            "zoo-check:counterexample",
        ] {
            assert_eq!(Task::parse(raw).unwrap().name(), raw);
        }
        assert!(Task::parse("experiment:nope").is_err());
        assert!(Task::parse("zoo-check:nope").is_err());
        assert!(Task::parse("stretch").is_err());
    }

    #[test]
    fn tolerance_overrides_apply_on_top_of_profile() {
        let cfg: RunConfig = toml::from_str(
            "task = \"eigen\"\ntolerance_profile = \"strict\"\n[tolerances]\neigen_residual = 1e-9\n",
        )
        .unwrap();
        let (tol, name) = resolve_tolerances(None, &cfg).unwrap();
        assert_eq!(name, "strict");
        assert_eq!(tol.eigen_residual, 1e-9);
        assert_eq!(tol.flow_consistency, Tolerances::strict().flow_consistency);
        let (tol_flag, name_flag) = resolve_tolerances(Some("default"), &cfg).unwrap();
        assert_eq!(name_flag, "default");
        assert_eq!(tol_flag.eigen_residual, 1e-9);
    }

    #[test]
    fn birth_death_builder_supports_power_law_death() {
        let model = ModelConfig {
            builder: Some("birth_death".into()),
            params: Some(
                [
                    ("truncation".to_string(), toml::Value::Integer(40)),
                    ("birth".to_string(), toml::Value::Float(1.0)),
                    ("death".to_string(), toml::Value::Float(1.0)),
                    ("death_power".to_string(), toml::Value::Integer(2)),
                ]
                .into_iter()
                .collect(),
            ),
            mutation: None,
            death: None,
            birth: None,
            symmetric: None,
            labels: None,
        };
        let built = model.build().unwrap();
        assert_eq!(built.spec.size(), 40);
    }
}
