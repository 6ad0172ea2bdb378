//! Model specifications: state spaces, mutation generators, selection
//! kernels in both supported forms, and the derived transforms.
//!
//! A [`ModelSpec`] is the single source of truth for a model. Its pieces are
//! immutable after construction; validation is report-valued so that a CLI
//! can show every problem at once instead of failing on the first.

use crate::error::{Error, Result};
use crate::expr::KernelExpr;
use crate::measure::{Measure, TestFunction};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Absolute tolerance for conservative row sums.
const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for exact-identity checks during validation (symmetry of the
/// symmetric part, mu-independence of Lambda).
const EXACT_TOL: f64 = 1e-12;
/// Seed for the fixed probe measures used by validation and lambda checks.
/// Pinned so that validation is deterministic run to run.
const PROBE_SEED: u64 = 0x5EED_CAFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Outgoing rates at the truncation boundary are redirected to the
    /// nearest interior neighbour (mass bounces back).
    Reflect,
    /// Rates leaving the truncation are dropped.
    AbsorbForbid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationInfo {
    /// Description of the untruncated space; currently always "countable".
    pub original: String,
    /// Number of retained states.
    pub retained: usize,
    pub boundary_policy: BoundaryPolicy,
}

/// The (possibly truncated) type space E.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    size: usize,
    labels: Option<Vec<String>>,
    truncation_info: Option<TruncationInfo>,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("state space must be nonempty".into()));
        }
        Ok(StateSpace {
            size,
            labels: None,
            truncation_info: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.size {
            return Err(Error::SizeMismatch {
                context: "state labels",
                expected: self.size,
                got: labels.len(),
            });
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidParameter(format!("duplicate label {a:?}")));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_truncation(mut self, info: TruncationInfo) -> Self {
        self.truncation_info = Some(info);
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Display name of the 0-based state `x` (its 1-based index when no
    /// labels were given).
    pub fn label(&self, x: usize) -> String {
        match &self.labels {
            Some(l) => l[x].clone(),
            None => (x + 1).to_string(),
        }
    }

    pub fn truncation_info(&self) -> Option<&TruncationInfo> {
        self.truncation_info.as_ref()
    }
}

/// A conservative rate matrix (generator): off-diagonals nonnegative, rows
/// summing to zero within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    m: DMatrix<f64>,
}

impl RateMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidRateMatrix(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidRateMatrix("empty matrix".into()));
        }
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidRateMatrix(format!(
                        "non-finite entry at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if i != j && v < 0.0 {
                    return Err(Error::InvalidRateMatrix(format!(
                        "negative off-diagonal {v:e} at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        for i in 0..m.nrows() {
            let s = row_sum(&m, i);
            if s.abs() > ROW_SUM_TOL {
                return Err(Error::InvalidRateMatrix(format!(
                    "row {} sums to {s:e}",
                    i + 1
                )));
            }
        }
        Ok(RateMatrix { m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::SizeMismatch {
                    context: "rate matrix row",
                    expected: n,
                    got: rows[i].len(),
                });
            }
        }
        RateMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Builds from off-diagonal rates only; diagonals are set so each row
    /// sums to zero exactly in the validator's summation order.
    pub fn from_off_diagonal(n: usize, rate: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = rate(i, j);
                }
            }
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    s += m[(i, j)];
                }
            }
            m[(i, i)] = -s;
        }
        RateMatrix::new(m)
    }

    pub fn size(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// (Q phi)(x) = sum_y Q_{x,y} phi(y).
    pub fn apply(&self, phi: &TestFunction) -> TestFunction {
        let n = self.size();
        let mut out = vec![0.0; n];
        for x in 0..n {
            let mut acc = 0.0;
            for y in 0..n {
                acc += self.m[(x, y)] * phi.value(y);
            }
            out[x] = acc;
        }
        TestFunction::new(out)
    }

    /// Strong connectivity of the positive-rate digraph.
    pub fn irreducible(&self) -> bool {
        let n = self.size();
        reaches_all(n, |i, j| self.m[(i, j)] > 0.0) && reaches_all(n, |i, j| self.m[(j, i)] > 0.0)
    }
}

fn row_sum(m: &DMatrix<f64>, i: usize) -> f64 {
    // Off-diagonals first in index order, diagonal last: the same order
    // `from_off_diagonal` uses, so constructed generators sum to 0 exactly.
    let mut s = 0.0;
    for j in 0..m.ncols() {
        if j != i {
            s += m[(i, j)];
        }
    }
    s + m[(i, i)]
}

fn reaches_all(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// A per-state function that may read the measure: x -> f(mu, x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuFn {
    /// Fixed values per state (mu-free).
    Const(Vec<f64>),
    /// Expression over {x, mu[x]}.
    Expr(KernelExpr),
}

impl MuFn {
    pub fn zeros(size: usize) -> Self {
        MuFn::Const(vec![0.0; size])
    }

    pub fn eval(&self, mu: &Measure, x: usize) -> f64 {
        match self {
            MuFn::Const(v) => v[x],
            MuFn::Expr(e) => e.eval(x, x, mu.weight(x), mu.weight(x)),
        }
    }

    pub fn eval_vec(&self, mu: &Measure, size: usize) -> Vec<f64> {
        (0..size).map(|x| self.eval(mu, x)).collect()
    }

    pub fn uses_mu(&self) -> bool {
        match self {
            MuFn::Const(_) => false,
            MuFn::Expr(e) => e.uses_mu(),
        }
    }

    fn check_size(&self, size: usize, context: &'static str) -> Result<()> {
        match self {
            MuFn::Const(v) if v.len() != size => Err(Error::SizeMismatch {
                context,
                expected: size,
                got: v.len(),
            }),
            MuFn::Expr(e) if e.uses_y() => Err(Error::Expr(format!(
                "{context} expression must not reference y: {e}"
            ))),
            _ => Ok(()),
        }
    }
}

/// The symmetric kernel part (mu, x, y) -> V^s >= 0.
#[derive(Debug, Clone, PartialEq)]
pub enum SymPart {
    Zero,
    /// Fixed symmetric matrix (mu-free).
    Const(DMatrix<f64>),
    /// Expression over {x, y, mu[x], mu[y]}.
    Expr(KernelExpr),
}

impl SymPart {
    pub fn eval(&self, mu: &Measure, x: usize, y: usize) -> f64 {
        match self {
            SymPart::Zero => 0.0,
            SymPart::Const(m) => m[(x, y)],
            SymPart::Expr(e) => e.eval(x, y, mu.weight(x), mu.weight(y)),
        }
    }

    pub fn uses_mu(&self) -> bool {
        match self {
            SymPart::Zero | SymPart::Const(_) => false,
            SymPart::Expr(e) => e.uses_mu(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SymPart::Zero)
    }

    fn check_size(&self, size: usize) -> Result<()> {
        match self {
            SymPart::Const(m) if m.nrows() != size || m.ncols() != size => Err(Error::SizeMismatch {
                context: "symmetric part matrix",
                expected: size,
                got: m.nrows().max(m.ncols()),
            }),
            _ => Ok(()),
        }
    }
}

/// One product component (Vd_i, Vb_i) of the general kernel form; both
/// factors are mu-free per-state values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductComponent {
    pub death: Vec<f64>,
    pub birth: Vec<f64>,
}

/// Selection kernel in either supported form.
///
/// General: V_mu(x,y) = sum_i Vd_i(x) Vb_i(y) + V^s_mu(x,y).
/// Additive: V_mu(x,y) = Vd(mu,x) + Vb(mu,y) + V^s_mu(x,y), with
/// Lambda = Vb - Vd required independent of mu.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    General {
        components: Vec<ProductComponent>,
        symmetric_part: SymPart,
    },
    Additive {
        vd: MuFn,
        vb: MuFn,
        symmetric_part: SymPart,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionKernel {
    form: KernelForm,
    mu_dependent: bool,
}

impl SelectionKernel {
    pub fn additive(vd: MuFn, vb: MuFn, symmetric_part: SymPart) -> Self {
        let mu_dependent = vd.uses_mu() || vb.uses_mu() || symmetric_part.uses_mu();
        SelectionKernel {
            form: KernelForm::Additive {
                vd,
                vb,
                symmetric_part,
            },
            mu_dependent,
        }
    }

    pub fn general(components: Vec<ProductComponent>, symmetric_part: SymPart) -> Self {
        let mu_dependent = symmetric_part.uses_mu();
        SelectionKernel {
            form: KernelForm::General {
                components,
                symmetric_part,
            },
            mu_dependent,
        }
    }

    /// Embeds a nonnegative mu-free matrix V as a general-form kernel using
    /// one product component per state: Vd_i = indicator(i), Vb_i = row i.
    pub fn general_from_matrix(v: &DMatrix<f64>, symmetric_part: SymPart) -> Self {
        let n = v.nrows();
        let components = (0..n)
            .map(|i| {
                let mut death = vec![0.0; n];
                death[i] = 1.0;
                ProductComponent {
                    death,
                    birth: (0..n).map(|j| v[(i, j)]).collect(),
                }
            })
            .collect();
        SelectionKernel::general(components, symmetric_part)
    }

    /// The zero kernel in additive form.
    pub fn zero(size: usize) -> Self {
        SelectionKernel::additive(MuFn::zeros(size), MuFn::zeros(size), SymPart::Zero)
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn is_additive(&self) -> bool {
        matches!(self.form, KernelForm::Additive { .. })
    }

    pub fn mu_dependent(&self) -> bool {
        self.mu_dependent
    }

    /// V_mu(x, y).
    pub fn eval(&self, mu: &Measure, x: usize, y: usize) -> f64 {
        match &self.form {
            KernelForm::General {
                components,
                symmetric_part,
            } => {
                let prod: f64 = components.iter().map(|c| c.death[x] * c.birth[y]).sum();
                prod + symmetric_part.eval(mu, x, y)
            }
            KernelForm::Additive {
                vd,
                vb,
                symmetric_part,
            } => vd.eval(mu, x) + vb.eval(mu, y) + symmetric_part.eval(mu, x, y),
        }
    }

    /// Dense [V_mu(x,y)] for a fixed measure.
    pub fn eval_matrix(&self, mu: &Measure, size: usize) -> DMatrix<f64> {
        DMatrix::from_fn(size, size, |x, y| self.eval(mu, x, y))
    }

    /// V^s_mu(x, y).
    pub fn sym_eval(&self, mu: &Measure, x: usize, y: usize) -> f64 {
        match &self.form {
            KernelForm::General { symmetric_part, .. }
            | KernelForm::Additive { symmetric_part, .. } => symmetric_part.eval(mu, x, y),
        }
    }

    pub fn symmetric_part(&self) -> &SymPart {
        match &self.form {
            KernelForm::General { symmetric_part, .. }
            | KernelForm::Additive { symmetric_part, .. } => symmetric_part,
        }
    }

    /// The kernel with its symmetric part removed: used by the drift
    /// generator of the limiting flow.
    pub fn tilde_eval(&self, mu: &Measure, x: usize, y: usize) -> f64 {
        match &self.form {
            KernelForm::General { components, .. } => {
                components.iter().map(|c| c.death[x] * c.birth[y]).sum()
            }
            KernelForm::Additive { vd, vb, .. } => vd.eval(mu, x) + vb.eval(mu, y),
        }
    }

    /// (Vd_mu, Vb_mu) vectors for the additive form.
    pub fn additive_parts(&self, mu: &Measure, size: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.form {
            KernelForm::Additive { vd, vb, .. } => {
                Ok((vd.eval_vec(mu, size), vb.eval_vec(mu, size)))
            }
            KernelForm::General { .. } => Err(Error::NotAdditive),
        }
    }

    fn check_size(&self, size: usize) -> Result<()> {
        match &self.form {
            KernelForm::General {
                components,
                symmetric_part,
            } => {
                for c in components {
                    if c.death.len() != size {
                        return Err(Error::SizeMismatch {
                            context: "general kernel death component",
                            expected: size,
                            got: c.death.len(),
                        });
                    }
                    if c.birth.len() != size {
                        return Err(Error::SizeMismatch {
                            context: "general kernel birth component",
                            expected: size,
                            got: c.birth.len(),
                        });
                    }
                }
                symmetric_part.check_size(size)
            }
            KernelForm::Additive {
                vd,
                vb,
                symmetric_part,
            } => {
                vd.check_size(size, "death part")?;
                vb.check_size(size, "birth part")?;
                symmetric_part.check_size(size)
            }
        }
    }
}

/// The single source of truth for a model: state space, mutation generator,
/// selection kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    state_space: StateSpace,
    mutation: RateMatrix,
    selection: SelectionKernel,
}

impl ModelSpec {
    pub fn new(
        state_space: StateSpace,
        mutation: RateMatrix,
        selection: SelectionKernel,
    ) -> Result<Self> {
        if mutation.size() != state_space.size() {
            return Err(Error::SizeMismatch {
                context: "mutation generator",
                expected: state_space.size(),
                got: mutation.size(),
            });
        }
        selection.check_size(state_space.size())?;
        Ok(ModelSpec {
            state_space,
            mutation,
            selection,
        })
    }

    pub fn size(&self) -> usize {
        self.state_space.size()
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    pub fn mutation(&self) -> &RateMatrix {
        &self.mutation
    }

    pub fn selection(&self) -> &SelectionKernel {
        &self.selection
    }

    /// Rebuilds with a different kernel, keeping space and mutation.
    pub fn with_selection(&self, selection: SelectionKernel) -> Result<Self> {
        ModelSpec::new(self.state_space.clone(), self.mutation.clone(), selection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    NonzeroRowSum { row: usize, sum: f64 },
    NegativeKernelValue { x: usize, y: usize, value: f64 },
    NonFiniteKernelValue { x: usize, y: usize },
    AsymmetricSymmetricPart { x: usize, y: usize, delta: f64 },
    MuDependentLambda { max_dev: f64 },
    NegativeAdditivePart { part: String, x: usize, value: f64 },
    NegativeComponent { part: String, component: usize, x: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeOffDiagonal { row, col, value } => {
                write!(f, "negative off-diagonal rate {value:e} at ({row}, {col})")
            }
            Violation::NonzeroRowSum { row, sum } => {
                write!(f, "row {row} of the mutation generator sums to {sum:e}")
            }
            Violation::NegativeKernelValue { x, y, value } => {
                write!(f, "kernel value {value:e} < 0 at ({x}, {y})")
            }
            Violation::NonFiniteKernelValue { x, y } => {
                write!(f, "kernel value at ({x}, {y}) is not finite")
            }
            Violation::AsymmetricSymmetricPart { x, y, delta } => {
                write!(f, "symmetric part differs across the diagonal at ({x}, {y}) by {delta:e}")
            }
            Violation::MuDependentLambda { max_dev } => {
                write!(f, "Lambda depends on mu (max deviation {max_dev:e})")
            }
            Violation::NegativeAdditivePart { part, x, value } => {
                write!(f, "additive {part} part is {value:e} < 0 at state {x}")
            }
            Violation::NegativeComponent {
                part,
                component,
                x,
                value,
            } => write!(
                f,
                "general {part} component {component} is {value:e} < 0 at state {x}"
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub irreducible: bool,
    /// sup of V_mu(x,y) over the probed measures and all state pairs.
    pub v_norm_estimate: f64,
    /// Number of probe measures used for the kernel checks.
    pub mu_samples: usize,
}

impl ValidationReport {
    pub fn admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.admissible() {
            writeln!(f, "admissible")?;
        } else {
            writeln!(f, "{} violation(s):", self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  - {v}")?;
            }
        }
        writeln!(f, "irreducible: {}", self.irreducible)?;
        writeln!(
            f,
            "||V|| estimate: {:.6} (over {} probe measures)",
            self.v_norm_estimate, self.mu_samples
        )
    }
}

/// Deterministic probe measures: uniform, every vertex, and `extra` random
/// interior points drawn from a fixed stream.
pub(crate) fn probe_measures(size: usize, extra: usize, seed: u64) -> Vec<Measure> {
    let mut probes = Vec::with_capacity(size + 1 + extra);
    probes.push(Measure::uniform(size));
    for x in 0..size {
        probes.push(Measure::delta(size, x));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        // Exponential spacings give a uniform draw from the simplex interior.
        let raw: Vec<f64> = (0..size)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        probes.push(Measure::normalized(raw).expect("positive raw weights"));
    }
    probes
}

/// Checks every structural invariant and estimates the kernel bound on a
/// deterministic measure sample. Report-valued: callers treat a non-empty
/// violation list as fatal.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    validate_model_with(spec, 16, PROBE_SEED)
}

pub fn validate_model_with(spec: &ModelSpec, extra_samples: usize, seed: u64) -> ValidationReport {
    let n = spec.size();
    let q = spec.mutation().matrix();
    let mut violations = Vec::new();

    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                violations.push(Violation::NegativeOffDiagonal {
                    row: i + 1,
                    col: j + 1,
                    value: q[(i, j)],
                });
            }
        }
        let s = row_sum(q, i);
        if s.abs() > ROW_SUM_TOL {
            violations.push(Violation::NonzeroRowSum { row: i + 1, sum: s });
        }
    }

    let probes = probe_measures(n, extra_samples, seed);
    let kernel = spec.selection();
    let mut v_norm: f64 = 0.0;

    for mu in &probes {
        for x in 0..n {
            for y in 0..n {
                let v = kernel.eval(mu, x, y);
                if !v.is_finite() {
                    violations.push(Violation::NonFiniteKernelValue { x: x + 1, y: y + 1 });
                    continue;
                }
                v_norm = v_norm.max(v);
                if v < 0.0 {
                    violations.push(Violation::NegativeKernelValue {
                        x: x + 1,
                        y: y + 1,
                        value: v,
                    });
                }
                if y > x {
                    let s_xy = kernel.sym_eval(mu, x, y);
                    let s_yx = kernel.sym_eval(mu, y, x);
                    let delta = (s_xy - s_yx).abs();
                    if delta > EXACT_TOL {
                        violations.push(Violation::AsymmetricSymmetricPart {
                            x: x + 1,
                            y: y + 1,
                            delta,
                        });
                    }
                }
            }
        }
    }

    match kernel.form() {
        KernelForm::Additive { vd, vb, .. } => {
            for mu in &probes {
                for x in 0..n {
                    for (part, f) in [("death", vd), ("birth", vb)] {
                        let v = f.eval(mu, x);
                        if v < 0.0 {
                            violations.push(Violation::NegativeAdditivePart {
                                part: part.into(),
                                x: x + 1,
                                value: v,
                            });
                        }
                    }
                }
            }
            // Lambda = Vb - Vd must be the same function for every mu.
            let reference: Vec<f64> = (0..n)
                .map(|x| vb.eval(&probes[0], x) - vd.eval(&probes[0], x))
                .collect();
            let mut max_dev: f64 = 0.0;
            for mu in &probes[1..] {
                for x in 0..n {
                    let lam = vb.eval(mu, x) - vd.eval(mu, x);
                    max_dev = max_dev.max((lam - reference[x]).abs());
                }
            }
            if max_dev > EXACT_TOL {
                violations.push(Violation::MuDependentLambda { max_dev });
            }
        }
        KernelForm::General { components, .. } => {
            for (i, c) in components.iter().enumerate() {
                for x in 0..n {
                    for (part, vals) in [("death", &c.death), ("birth", &c.birth)] {
                        if vals[x] < 0.0 {
                            violations.push(Violation::NegativeComponent {
                                part: part.into(),
                                component: i + 1,
                                x: x + 1,
                                value: vals[x],
                            });
                        }
                    }
                }
            }
        }
    }

    // Deduplicate repeats of the same kernel violation found under several
    // probe measures.
    violations.dedup();

    ValidationReport {
        violations,
        irreducible: spec.mutation().irreducible(),
        v_norm_estimate: v_norm,
        mu_samples: probes.len(),
    }
}

/// D(x,y) = V_mu(x,y) - V_mu(y,x): the antisymmetric part driving the
/// mean-field flow. The symmetric part contributes exactly zero.
pub fn effective_drift(spec: &ModelSpec, mu: &Measure) -> DMatrix<f64> {
    let n = spec.size();
    let v = spec.selection().eval_matrix(mu, n);
    DMatrix::from_fn(n, n, |x, y| v[(x, y)] - v[(y, x)])
}

/// Lambda = Vb - Vd for additive kernels, with mu-independence asserted by
/// re-evaluation at three random probe measures (tolerance 1e-12).
pub fn lambda_of(spec: &ModelSpec) -> Result<TestFunction> {
    let n = spec.size();
    let (vd, vb) = match spec.selection().form() {
        KernelForm::Additive { vd, vb, .. } => (vd, vb),
        KernelForm::General { .. } => return Err(Error::NotAdditive),
    };
    let reference = Measure::uniform(n);
    let lambda: Vec<f64> = (0..n)
        .map(|x| vb.eval(&reference, x) - vd.eval(&reference, x))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 0x11);
    let mut max_dev: f64 = 0.0;
    for _ in 0..3 {
        let raw: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let mu = Measure::normalized(raw).expect("positive raw weights");
        for x in 0..n {
            let lam = vb.eval(&mu, x) - vd.eval(&mu, x);
            max_dev = max_dev.max((lam - lambda[x]).abs());
        }
    }
    if max_dev > EXACT_TOL {
        return Err(Error::MuDependentLambda { max_dev });
    }
    Ok(TestFunction::new(lambda))
}

/// Strips the removable part of an additive kernel: the result has
/// Vd' = (Vd-Vb)^+ = Lambda^-, Vb' = (Vb-Vd)^+ = Lambda^+, no symmetric
/// part, and the same Lambda, hence the same limiting flow.
pub fn sigma_reduce(spec: &ModelSpec) -> Result<ModelSpec> {
    let lambda = lambda_of(spec)?;
    let n = spec.size();
    let vd: Vec<f64> = (0..n).map(|x| (-lambda.value(x)).max(0.0)).collect();
    let vb: Vec<f64> = (0..n).map(|x| lambda.value(x).max(0.0)).collect();
    spec.with_selection(SelectionKernel::additive(
        MuFn::Const(vd),
        MuFn::Const(vb),
        SymPart::Zero,
    ))
}
