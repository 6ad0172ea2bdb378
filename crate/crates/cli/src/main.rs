//! `moran`: single entry point wiring run configurations to the core
//! toolkit. Reads one TOML config, executes its task, writes artifacts
//! under the output directory, and prints a one-screen summary.
//!
//! Exit codes: 0 success, 1 unparseable config, 2 validation failure,
//! 3 failed check or finding, 4 numerical failure.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use moran_core::{
    bd_qsd_uniqueness_check, counterexample_bd, eigen_triplet, mean_field_ode, normalized_flow,
    run_experiment, sigma2_inf, sigma2_t, simulate_with_options, validate_model,
    variance_compare, B1Mode, Error as CoreError, ExperimentKind, ExperimentPlan,
    ExperimentReport, FlowTrajectory, SeriesVerdict, SimulateOptions, Tolerances,
};
use sha2::{Digest, Sha256};

use config::{
    bd_params, measure_from, parse_b1_mode, phi_from, resolve_tolerances, BuiltModel, RunConfig,
    Task, DEFAULT_SEED,
};

#[derive(Parser)]
#[command(
    name = "moran",
    version,
    about = "Runs validation, simulation, solver, and experiment tasks from a TOML config"
)]
struct Args {
    /// Path to the run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker pool size (default: all cores). Results are independent of
    /// this by construction of the seed ledger.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance profile for deterministic gates.
    #[arg(long, value_parser = ["strict", "default"])]
    tolerance_profile: Option<String>,
}

/// A failed run, tagged with its exit code.
enum Failure {
    /// Exit 1: the config could not be parsed.
    Parse(String),
    /// Exit 2: the config parsed but is not runnable.
    Validation(String),
    /// Exit 3: a check or finding failed its gate.
    Check(String),
    /// Exit 4: a solver or simulation failed numerically.
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Check(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Validation(m) | Failure::Check(m)
            | Failure::Numerical(m) => m,
        }
    }
}

/// Maps a core error to an exit class: malformed inputs are validation
/// failures, everything else is numerical.
fn failure_of(e: CoreError) -> Failure {
    match e {
        CoreError::NotAdditive
        | CoreError::InvalidParameter(_)
        | CoreError::InvalidRateMatrix(_)
        | CoreError::InvalidMeasure(_)
        | CoreError::SizeMismatch { .. }
        | CoreError::EmptyPopulation
        | CoreError::SimplexTooLarge { .. }
        | CoreError::Expr(_)
        | CoreError::Degenerate(_)
        | CoreError::MuDependentLambda { .. } => Failure::Validation(e.to_string()),
        other => Failure::Numerical(other.to_string()),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(workers) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

/// Everything a task hands back for the summary: artifact names, scalar
/// metrics, table rows, and whether its gates passed.
#[derive(Default)]
struct Outcome {
    artifacts: Vec<String>,
    metrics: BTreeMap<String, f64>,
    table: Vec<(String, String)>,
    passed: bool,
    /// Failure to return after the summary is written, keeping artifacts
    /// available for failed runs.
    failure: Option<Failure>,
}

/// Shared context resolved from flags and config before dispatch.
struct Ctx {
    cfg: RunConfig,
    task: Task,
    seed: u64,
    out: PathBuf,
    config_sha256: String,
    tolerances: Tolerances,
    profile: String,
}

fn run(args: &Args) -> Result<(), Failure> {
    let raw = fs::read_to_string(&args.config).map_err(|e| {
        Failure::Parse(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let cfg: RunConfig = toml::from_str(&raw).map_err(|e| {
        Failure::Parse(format!("{} is invalid:\n{e}", args.config.display()))
    })?;
    let task = Task::parse(&cfg.task).map_err(Failure::Validation)?;
    let (tolerances, profile) =
        resolve_tolerances(args.tolerance_profile.as_deref(), &cfg).map_err(Failure::Validation)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| {
        Failure::Validation(format!("output directory {} is not writable: {e}", out.display()))
    })?;
    let ctx = Ctx {
        cfg,
        task: task.clone(),
        seed,
        out,
        config_sha256: hex_digest(&raw),
        tolerances,
        profile,
    };

    let mut outcome = match &task {
        Task::Validate => run_validate(&ctx)?,
        Task::Simulate => run_simulate(&ctx)?,
        Task::Flow => run_flow(&ctx)?,
        Task::Eigen => run_eigen(&ctx)?,
        Task::Variance => run_variance(&ctx)?,
        Task::Experiment(kind) => run_experiment_task(&ctx, *kind)?,
        Task::ZooSeries => run_series(&ctx)?,
        Task::ZooCounterexample => run_counterexample(&ctx)?,
    };

    write_summary(&ctx, &mut outcome)?;
    print_summary(&ctx, &outcome);
    match outcome.failure {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

fn hex_digest(raw: &str) -> String {
    let digest = Sha256::digest(raw.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn timestamp_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn require_model(ctx: &Ctx) -> Result<BuiltModel, Failure> {
    let model = ctx.cfg.model.as_ref().ok_or_else(|| {
        Failure::Validation(format!(
            "task {} needs a [model] block",
            ctx.task.name()
        ))
    })?;
    model.build().map_err(Failure::Validation)
}

/// Writes one artifact file and records its name.
fn write_artifact(
    ctx: &Ctx,
    outcome: &mut Outcome,
    name: &str,
    contents: &str,
) -> Result<(), Failure> {
    let path = ctx.out.join(name);
    fs::write(&path, contents).map_err(|e| {
        Failure::Validation(format!("cannot write {}: {e}", path.display()))
    })?;
    outcome.artifacts.push(name.to_string());
    Ok(())
}

/// CSV artifacts open with comment lines carrying the config hash and
/// seed, so every file is traceable to its run.
fn stamped_csv(ctx: &Ctx, body: &str) -> String {
    format!(
        "# config_sha256={}\n# seed={}\n{body}",
        ctx.config_sha256, ctx.seed
    )
}

/// JSON artifacts carry the config hash and seed next to the payload.
fn stamped_json(ctx: &Ctx, payload: serde_json::Value) -> Result<String, Failure> {
    let wrapped = serde_json::json!({
        "config_sha256": ctx.config_sha256,
        "seed": ctx.seed,
        "payload": payload,
    });
    serde_json::to_string_pretty(&wrapped)
        .map_err(|e| Failure::Numerical(format!("cannot serialize artifact: {e}")))
}

fn to_value<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(value)
        .map_err(|e| Failure::Numerical(format!("cannot serialize artifact: {e}")))
}

#[derive(serde::Serialize)]
struct Summary<'a> {
    task: String,
    config_sha256: &'a str,
    seed: u64,
    tolerance_profile: &'a str,
    code_version: &'a str,
    timestamp_unix_ms: u64,
    passed: bool,
    artifacts: &'a [String],
    metrics: &'a BTreeMap<String, f64>,
}

fn write_summary(ctx: &Ctx, outcome: &mut Outcome) -> Result<(), Failure> {
    let summary = Summary {
        task: ctx.task.name(),
        config_sha256: &ctx.config_sha256,
        seed: ctx.seed,
        tolerance_profile: &ctx.profile,
        code_version: env!("CARGO_PKG_VERSION"),
        timestamp_unix_ms: timestamp_unix_ms(),
        passed: outcome.passed,
        artifacts: &outcome.artifacts,
        metrics: &outcome.metrics,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Failure::Numerical(format!("cannot serialize summary: {e}")))?;
    write_artifact(ctx, outcome, "summary.json", &text)
}

fn print_summary(ctx: &Ctx, outcome: &Outcome) {
    let mut rows = vec![
        ("task".to_string(), ctx.task.name()),
        ("config sha256".to_string(), ctx.config_sha256.clone()),
        ("seed".to_string(), ctx.seed.to_string()),
        ("tolerance profile".to_string(), ctx.profile.clone()),
        ("out".to_string(), ctx.out.display().to_string()),
    ];
    rows.extend(outcome.table.iter().cloned());
    rows.push((
        "artifacts".to_string(),
        outcome.artifacts.join(", "),
    ));
    rows.push((
        "result".to_string(),
        if outcome.passed { "pass".into() } else { "fail".into() },
    ));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (key, value) in rows {
        println!("{key:<width$}  {value}");
    }
}

fn run_validate(ctx: &Ctx) -> Result<Outcome, Failure> {
    let model = require_model(ctx)?;
    let report = validate_model(&model.spec);
    let mut outcome = Outcome {
        passed: report.admissible(),
        ..Outcome::default()
    };
    let json = stamped_json(ctx, to_value(&report)?)?;
    write_artifact(ctx, &mut outcome, "validate.json", &json)?;
    outcome.metrics.insert("violations".into(), report.violations.len() as f64);
    outcome
        .metrics
        .insert("v_norm_estimate".into(), report.v_norm_estimate);
    outcome.table.push(("model".into(), model.label));
    outcome.table.push((
        "admissible".into(),
        report.admissible().to_string(),
    ));
    outcome
        .table
        .push(("irreducible".into(), report.irreducible.to_string()));
    outcome.table.push((
        "kernel bound".into(),
        format!("{:.6}", report.v_norm_estimate),
    ));
    for violation in &report.violations {
        outcome.table.push(("violation".into(), violation.to_string()));
    }
    if !outcome.passed {
        outcome.failure = Some(Failure::Validation(format!(
            "model is inadmissible with {} violation(s)",
            report.violations.len()
        )));
    }
    Ok(outcome)
}

fn run_simulate(ctx: &Ctx) -> Result<Outcome, Failure> {
    let sim = ctx.cfg.simulate.as_ref().ok_or_else(|| {
        Failure::Validation("task simulate needs a [simulate] block".into())
    })?;
    let model = require_model(ctx)?;
    let size = model.spec.size();
    let initial = measure_from(sim.initial.as_ref(), size).map_err(Failure::Validation)?;
    let points = sim.points.unwrap_or(20).max(1);
    let times: Vec<f64> = (0..=points)
        .map(|j| sim.horizon * j as f64 / points as f64)
        .collect();
    let opts = SimulateOptions {
        record_events: sim.record_events.unwrap_or(false),
        ..SimulateOptions::default()
    };
    let record = simulate_with_options(
        &model.spec,
        sim.population,
        &initial,
        sim.horizon,
        &times,
        ctx.seed,
        opts,
    )
    .map_err(failure_of)?;
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    write_artifact(
        ctx,
        &mut outcome,
        "trajectory.csv",
        &stamped_csv(ctx, &record.measures_csv()),
    )?;
    if record.events.is_some() {
        write_artifact(
            ctx,
            &mut outcome,
            "events.csv",
            &stamped_csv(ctx, &record.events_csv()),
        )?;
    }
    outcome
        .metrics
        .insert("event_count".into(), record.event_count as f64);
    if let Some(t) = record.frozen_at {
        outcome.metrics.insert("frozen_at".into(), t);
    }
    outcome.table.push(("model".into(), model.label));
    outcome
        .table
        .push(("population".into(), sim.population.to_string()));
    outcome
        .table
        .push(("horizon".into(), format!("{}", sim.horizon)));
    outcome
        .table
        .push(("events".into(), record.event_count.to_string()));
    Ok(outcome)
}

fn run_flow(ctx: &Ctx) -> Result<Outcome, Failure> {
    let flow_cfg = ctx.cfg.flow.as_ref().ok_or_else(|| {
        Failure::Validation("task flow needs a [flow] block".into())
    })?;
    let model = require_model(ctx)?;
    let size = model.spec.size();
    let initial = measure_from(flow_cfg.initial.as_ref(), size).map_err(Failure::Validation)?;
    let points = flow_cfg.points.unwrap_or(100).max(1);
    let times: Vec<f64> = (0..=points)
        .map(|j| flow_cfg.horizon * j as f64 / points as f64)
        .collect();
    let additive = model.spec.selection().is_additive();
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    let trajectory: FlowTrajectory = if additive {
        let semigroup = normalized_flow(&model.spec, &initial, &times).map_err(failure_of)?;
        let ode = mean_field_ode(&model.spec, &initial, &times).map_err(failure_of)?;
        let sup_tv = semigroup.sup_tv(&ode).map_err(failure_of)?;
        outcome.metrics.insert("route_sup_tv".into(), sup_tv);
        outcome.table.push((
            "route agreement".into(),
            format!(
                "sup TV {sup_tv:.2e} (gate {:.0e})",
                ctx.tolerances.flow_consistency
            ),
        ));
        if sup_tv > ctx.tolerances.flow_consistency {
            outcome.passed = false;
            outcome.failure = Some(Failure::Numerical(format!(
                "semigroup and mean-field routes disagree: sup TV {sup_tv:.3e} exceeds {:.1e}",
                ctx.tolerances.flow_consistency
            )));
        }
        semigroup
    } else {
        mean_field_ode(&model.spec, &initial, &times).map_err(failure_of)?
    };
    if let Some(diag) = trajectory.ode_diagnostics() {
        outcome
            .metrics
            .insert("richardson_error".into(), diag.richardson_error);
    }
    write_artifact(
        ctx,
        &mut outcome,
        "flow.csv",
        &stamped_csv(ctx, &trajectory.to_csv()),
    )?;
    outcome.table.push(("model".into(), model.label));
    outcome.table.push((
        "route".into(),
        if additive { "semigroup (checked against mean-field)".into() } else { "mean-field".to_string() },
    ));
    outcome
        .table
        .push(("grid".into(), format!("{} nodes on [0, {}]", points + 1, flow_cfg.horizon)));
    Ok(outcome)
}

fn run_eigen(ctx: &Ctx) -> Result<Outcome, Failure> {
    let model = require_model(ctx)?;
    let triplet = eigen_triplet(&model.spec).map_err(failure_of)?;
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    let json = stamped_json(ctx, to_value(&triplet)?)?;
    write_artifact(ctx, &mut outcome, "eigen.json", &json)?;
    let d = &triplet.diagnostics;
    outcome.metrics.insert("lambda".into(), triplet.lambda);
    outcome.metrics.insert("spectral_gap".into(), d.spectral_gap);
    outcome.metrics.insert("residual_left".into(), d.residual_left);
    outcome.metrics.insert("residual_right".into(), d.residual_right);
    outcome.table.push(("model".into(), model.label));
    outcome
        .table
        .push(("lambda".into(), format!("{:.12}", triplet.lambda)));
    outcome
        .table
        .push(("spectral gap".into(), format!("{:.12}", d.spectral_gap)));
    outcome.table.push((
        "residuals".into(),
        format!("left {:.2e}, right {:.2e}", d.residual_left, d.residual_right),
    ));
    if d.residual_left > ctx.tolerances.eigen_residual
        || d.residual_right > ctx.tolerances.eigen_residual
    {
        outcome.passed = false;
        outcome.failure = Some(Failure::Numerical(format!(
            "eigen residuals (left {:.3e}, right {:.3e}) exceed {:.1e}",
            d.residual_left, d.residual_right, ctx.tolerances.eigen_residual
        )));
    }
    Ok(outcome)
}

fn run_variance(ctx: &Ctx) -> Result<Outcome, Failure> {
    let var_cfg = ctx.cfg.variance.as_ref().ok_or_else(|| {
        Failure::Validation("task variance needs a [variance] block".into())
    })?;
    let model = require_model(ctx)?;
    let size = model.spec.size();
    let initial = measure_from(var_cfg.initial.as_ref(), size).map_err(Failure::Validation)?;
    let (phi, _) = phi_from(Some(&var_cfg.phi), size).map_err(Failure::Validation)?;
    let report = sigma2_t(&model.spec, &initial, var_cfg.t, &phi).map_err(failure_of)?;
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    let mut payload = serde_json::Map::new();
    payload.insert("at_horizon".into(), to_value(&report)?);
    outcome.metrics.insert("sigma2".into(), report.sigma2);
    outcome
        .metrics
        .insert("quadrature_error".into(), report.quadrature_error_estimate);
    outcome.table.push(("model".into(), model.label));
    outcome.table.push((
        "sigma2".into(),
        format!("{:.10} at t = {}", report.sigma2, var_cfg.t),
    ));
    if var_cfg.include_stationary.unwrap_or(false) {
        let stationary = sigma2_inf(&model.spec, &phi).map_err(failure_of)?;
        payload.insert("stationary".into(), to_value(&stationary)?);
        outcome
            .metrics
            .insert("sigma2_stationary".into(), stationary.sigma2);
        outcome.table.push((
            "sigma2 stationary".into(),
            format!("{:.10}", stationary.sigma2),
        ));
    }
    if var_cfg.compare.unwrap_or(false) {
        let comparison =
            variance_compare(&model.spec, &initial, &phi, var_cfg.t).map_err(failure_of)?;
        payload.insert("comparison".into(), to_value(&comparison)?);
        outcome
            .metrics
            .insert("sigma2_reduced".into(), comparison.reduced.sigma2);
        outcome
            .metrics
            .insert("reduction".into(), comparison.reduction);
        outcome.table.push((
            "reduction".into(),
            format!(
                "sigma2 drops by {:.10} under the symmetric-part transform",
                comparison.reduction
            ),
        ));
    }
    let json = stamped_json(ctx, serde_json::Value::Object(payload))?;
    write_artifact(ctx, &mut outcome, "variance.json", &json)?;
    Ok(outcome)
}

/// Findings as CSV, one row per named check with its window and verdict.
fn findings_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("name,observed,std_error,lo,hi,passed\n");
    for finding in &report.findings {
        let se = finding
            .std_error
            .map(|v| format!("{v:.16e}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.16e},{se},{:.16e},{:.16e},{}\n",
            finding.name, finding.observed, finding.lo, finding.hi, finding.passed
        ));
    }
    out
}

fn run_experiment_task(ctx: &Ctx, kind: ExperimentKind) -> Result<Outcome, Failure> {
    let model = require_model(ctx)?;
    let size = model.spec.size();
    let mut plan = ExperimentPlan::reference(kind).map_err(failure_of)?;
    let exp = ctx.cfg.experiment.as_ref();
    plan.model = model.spec;
    plan.model_label = model.label.clone();
    plan.initial = measure_from(exp.and_then(|e| e.initial.as_ref()), size)
        .map_err(Failure::Validation)?;
    let (phi, phi_label) =
        phi_from(exp.and_then(|e| e.phi.as_ref()), size).map_err(Failure::Validation)?;
    plan.phi = phi;
    plan.phi_label = phi_label;
    plan.seed = ctx.seed;
    if let Some(exp) = exp {
        if let Some(populations) = &exp.populations {
            plan.populations = populations.clone();
        }
        if let Some(replicates) = exp.replicates {
            plan.replicates = replicates;
        }
        if let Some(horizon) = exp.horizon {
            plan.horizon = horizon;
        }
        if let Some(grid_points) = exp.grid_points {
            plan.grid_points = grid_points;
        }
        if let Some(moments) = &exp.moments {
            plan.moment_orders = moments.clone();
        }
        if let Some(run_id) = &exp.run_id {
            plan.run_id = run_id.clone();
        }
    }
    let report = run_experiment(&plan).map_err(failure_of)?;
    let mut outcome = Outcome {
        passed: report.passed,
        ..Outcome::default()
    };
    let json = stamped_json(ctx, to_value(&report)?)?;
    write_artifact(ctx, &mut outcome, "report.json", &json)?;
    write_artifact(
        ctx,
        &mut outcome,
        "rows.csv",
        &stamped_csv(ctx, &report.rows_csv()),
    )?;
    write_artifact(
        ctx,
        &mut outcome,
        "findings.csv",
        &stamped_csv(ctx, &findings_csv(&report)),
    )?;
    outcome.metrics.extend(report.metrics.clone());
    outcome.table.push(("model".into(), model.label));
    for finding in &report.findings {
        outcome.table.push((
            format!("finding {}", finding.name),
            format!(
                "{:.4} in [{:.3}, {:.3}] {}",
                finding.observed,
                finding.lo,
                finding.hi,
                if finding.passed { "pass" } else { "FAIL" }
            ),
        ));
    }
    if let Some(reason) = &report.degenerate {
        outcome.table.push(("degenerate".into(), reason.clone()));
    }
    if !report.passed {
        let failed: Vec<&str> = report
            .findings
            .iter()
            .filter(|f| !f.passed)
            .map(|f| f.name.as_str())
            .collect();
        outcome.failure = Some(Failure::Check(format!(
            "experiment {} failed finding(s): {}",
            kind.name(),
            failed.join(", ")
        )));
    }
    Ok(outcome)
}

fn run_series(ctx: &Ctx) -> Result<Outcome, Failure> {
    let series = ctx.cfg.series.as_ref().ok_or_else(|| {
        Failure::Validation("task zoo-check:series needs a [series] block".into())
    })?;
    let params = bd_params(
        series.truncation,
        series.birth,
        series.death,
        series.death_power.unwrap_or(0),
    )
    .map_err(Failure::Validation)?;
    let base = bd_qsd_uniqueness_check(&params, series.terms).map_err(failure_of)?;
    let doubled = bd_qsd_uniqueness_check(&params, series.terms * 2).map_err(failure_of)?;
    let stable = base.verdict == doubled.verdict;
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    let payload = serde_json::json!({
        "at_terms": to_value(&base)?,
        "at_doubled_terms": to_value(&doubled)?,
        "stable_under_doubling": stable,
    });
    let json = stamped_json(ctx, payload)?;
    write_artifact(ctx, &mut outcome, "series.json", &json)?;
    outcome.metrics.insert(
        "partial_sum_last".into(),
        base.partial_sums.last().copied().unwrap_or(f64::NAN),
    );
    outcome.metrics.insert("tail_ratio".into(), base.tail_ratio);
    outcome
        .metrics
        .insert("raabe_statistic".into(), base.raabe_statistic);
    outcome.table.push((
        "verdict".into(),
        format!("{:?} at {} terms, {:?} at {} terms", base.verdict, series.terms, doubled.verdict, series.terms * 2),
    ));
    if !stable {
        outcome.passed = false;
        outcome.failure = Some(Failure::Numerical(format!(
            "series verdict flips under doubling: {:?} at {} terms vs {:?} at {}",
            base.verdict,
            series.terms,
            doubled.verdict,
            series.terms * 2
        )));
        return Ok(outcome);
    }
    if let Some(expect) = &series.expect {
        let expected = match expect.as_str() {
            "converging" => SeriesVerdict::Converging,
            "diverging" => SeriesVerdict::Diverging,
            other => {
                return Err(Failure::Validation(format!(
                    "unknown expected verdict `{other}`; expected converging or diverging"
                )))
            }
        };
        outcome
            .table
            .push(("expected".into(), format!("{expected:?}")));
        if base.verdict != expected {
            outcome.passed = false;
            outcome.failure = Some(Failure::Check(format!(
                "series verdict {:?} does not match expected {:?}",
                base.verdict, expected
            )));
        }
    }
    Ok(outcome)
}

fn run_counterexample(ctx: &Ctx) -> Result<Outcome, Failure> {
    let ce = ctx.cfg.counterexample.as_ref().ok_or_else(|| {
        Failure::Validation("task zoo-check:counterexample needs a [counterexample] block".into())
    })?;
    let modes: Vec<B1Mode> = match ce.mode.as_deref().unwrap_or("both") {
        "both" => vec![B1Mode::Literal, B1Mode::Consistent],
        single => vec![parse_b1_mode(single).map_err(Failure::Validation)?],
    };
    let tol = ctx.tolerances.exact_identity;
    let mut outcome = Outcome {
        passed: true,
        ..Outcome::default()
    };
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for mode in modes {
        let case =
            counterexample_bd(ce.b, ce.d, ce.b1, mode, ce.truncation).map_err(failure_of)?;
        let residuals = case.residuals().map_err(failure_of)?;
        let interior_ok = residuals.interior_max <= tol;
        let row1_ok = (residuals.row1 - case.row1_residual_analytic).abs() <= tol;
        let boundary_ok = (residuals.boundary - case.boundary_residual_analytic).abs() <= tol;
        if !(interior_ok && row1_ok && boundary_ok) {
            failures.push(format!("{mode:?}"));
        }
        let mode_name = format!("{mode:?}").to_lowercase();
        outcome.metrics.insert(
            format!("interior_residual_{mode_name}"),
            residuals.interior_max,
        );
        outcome
            .metrics
            .insert(format!("row1_residual_{mode_name}"), residuals.row1);
        outcome.table.push((
            format!("mode {mode_name}"),
            format!(
                "interior {:.1e}, row-1 {:.3e} (closed form {:.3e})",
                residuals.interior_max, residuals.row1, case.row1_residual_analytic
            ),
        ));
        cases.push(serde_json::json!({
            "mode": mode_name,
            "lambda": case.lambda,
            "residuals": to_value(&residuals)?,
            "row1_residual_analytic": case.row1_residual_analytic,
            "boundary_residual_analytic": case.boundary_residual_analytic,
            "pass": interior_ok && row1_ok && boundary_ok,
        }));
        outcome.metrics.insert("lambda".into(), case.lambda);
    }
    let json = stamped_json(ctx, serde_json::Value::Array(cases))?;
    write_artifact(ctx, &mut outcome, "counterexample.json", &json)?;
    if !failures.is_empty() {
        outcome.passed = false;
        outcome.failure = Some(Failure::Check(format!(
            "counterexample residual gates failed for mode(s): {}",
            failures.join(", ")
        )));
    }
    Ok(outcome)
}
