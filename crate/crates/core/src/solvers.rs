//! Deterministic reference computations on the truncated type space:
//! weighted semigroup action, normalised flow, nonlinear mean-field ODE,
//! time-inhomogeneous propagator, dominant eigen-triplet, Doob transform,
//! and the horizon-normalised operator W.
//!
//! Long-horizon policy: every semigroup evaluation uses the shifted
//! potential Lambda - sup Lambda internally. Normalised outputs are
//! invariant under constant shifts of the potential, and the shifted
//! exponential cannot overflow.

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{tv_distance, Measure, TestFunction};
use crate::model::{effective_drift, lambda_of, ModelSpec, RateMatrix};
use crate::tolerances::Tolerances;
use nalgebra::DMatrix;
use std::collections::HashMap;

/// Two sample times are considered the same grid node within this slack.
pub const TIME_TOL: f64 = 1e-9;

/// Most negative entry tolerated in an ODE state before erroring; smaller
/// excursions are clipped to zero and counted.
const NEG_CLIP: f64 = 1e-9;

/// How the measures of a [`FlowTrajectory`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMethod {
    /// Normalised semigroup action (matrix exponentials).
    Semigroup,
    /// Mean-field ODE integration.
    Ode,
}

/// Integrator health report attached to ODE-built trajectories.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OdeDiagnostics {
    /// Base step actually used.
    pub step: f64,
    /// Step-halving estimate of the global error at the final time
    /// (sup-norm, Richardson extrapolation with a coarse companion run).
    pub richardson_error: f64,
    /// Sum over steps of |mass - 1| removed by per-step renormalisation.
    pub cumulative_mass_drift: f64,
    /// Number of entries clipped from slightly negative to zero.
    pub negativity_clips: u64,
}

/// A probability-measure-valued path sampled on a sorted time grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FlowTrajectory {
    times: Vec<f64>,
    measures: Vec<Measure>,
    method: FlowMethod,
    ode: Option<OdeDiagnostics>,
}

impl FlowTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[Measure] {
        &self.measures
    }

    pub fn method(&self) -> FlowMethod {
        self.method
    }

    pub fn ode_diagnostics(&self) -> Option<&OdeDiagnostics> {
        self.ode.as_ref()
    }

    /// Index of the grid node matching `t` within [`TIME_TOL`].
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&u| (u - t).abs() <= TIME_TOL)
    }

    pub fn measure_at(&self, t: f64) -> Result<&Measure> {
        self.index_at(t)
            .map(|i| &self.measures[i])
            .ok_or_else(|| Error::FlowRange(format!("time {t} is not on the flow grid")))
    }

    /// Largest sup over shared grid nodes of the total-variation distance.
    /// Requires identical grids within [`TIME_TOL`].
    pub fn sup_tv(&self, other: &FlowTrajectory) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::SizeMismatch {
                context: "flow grids",
                expected: self.times.len(),
                got: other.times.len(),
            });
        }
        let mut sup = 0.0f64;
        for i in 0..self.times.len() {
            if (self.times[i] - other.times[i]).abs() > TIME_TOL {
                return Err(Error::FlowRange(format!(
                    "flow grids disagree at node {i}: {} vs {}",
                    self.times[i], other.times[i]
                )));
            }
            sup = sup.max(tv_distance(&self.measures[i], &other.measures[i])?);
        }
        Ok(sup)
    }

    /// CSV export: header `time,x_1,...,x_K`, floats with 17 significant
    /// digits.
    pub fn to_csv(&self) -> String {
        let size = self.measures.first().map_or(0, Measure::len);
        let mut out = String::from("time");
        for x in 1..=size {
            out.push_str(&format!(",x_{x}"));
        }
        out.push('\n');
        for (t, m) in self.times.iter().zip(&self.measures) {
            out.push_str(&format!("{t:.16e}"));
            for w in m.weights() {
                out.push_str(&format!(",{w:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Dominant eigen-structure of the weighted generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EigenTriplet {
    /// Left eigenvector, normalised to a probability measure.
    pub mu_inf: Measure,
    /// Right eigenvector, strictly positive, normalised by mu_inf(h) = 1.
    pub h: TestFunction,
    /// Dominant (rightmost) eigenvalue.
    pub lambda: f64,
    pub diagnostics: EigenDiagnostics,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EigenDiagnostics {
    /// lambda minus the largest real part of the remaining spectrum.
    pub spectral_gap: f64,
    /// l1 residual of the left eigen equation after normalisation.
    pub residual_left: f64,
    /// sup residual of the right eigen equation after normalisation.
    pub residual_right: f64,
    /// |lambda - independent power-iteration estimate|.
    pub power_iteration_discrepancy: f64,
}

/// Q + diag(Lambda), the generator of the weighted semigroup. Additive
/// variant only.
pub fn fk_generator(spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let lam = lambda_of(spec)?;
    let mut a = spec.mutation().matrix().clone();
    for x in 0..spec.size() {
        a[(x, x)] += lam.value(x);
    }
    Ok(a)
}

/// Shifted generator Q + diag(Lambda - sup Lambda) together with the shift.
fn shifted_generator(spec: &ModelSpec) -> Result<(DMatrix<f64>, f64)> {
    let lam = lambda_of(spec)?;
    let beta = lam.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut a = spec.mutation().matrix().clone();
    for x in 0..spec.size() {
        a[(x, x)] += lam.value(x) - beta;
    }
    Ok((a, beta))
}

/// Weighted semigroup action: the value of e^{t(Q + Lambda)} applied to
/// `phi`, computed through the shifted generator and scaled back.
pub fn fk_semigroup(spec: &ModelSpec, t: f64, phi: &TestFunction) -> Result<TestFunction> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "semigroup time must be finite and nonnegative, got {t}"
        )));
    }
    if phi.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "test function",
            expected: spec.size(),
            got: phi.len(),
        });
    }
    let (a, beta) = shifted_generator(spec)?;
    let e = linalg::expm(&(a * t))?;
    let v = nalgebra::DVector::from_column_slice(phi.values());
    let scaled = (e * v) * (beta * t).exp();
    if scaled.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "semigroup action overflowed at t={t}; the potential grows too fast for this horizon"
        )));
    }
    Ok(TestFunction::new(scaled.iter().copied().collect()))
}

fn check_time_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty sample-time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidParameter(
            "sample times must be finite and nonnegative".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample times must be sorted".into()));
    }
    Ok(())
}

/// Normalised semigroup flow: mu_t = mu0 e^{t(Q+Lambda)} / mass, evaluated
/// at each sample time. Renormalises at every node, so long horizons stay
/// in range as long as consecutive nodes are not absurdly far apart.
pub fn normalized_flow(spec: &ModelSpec, mu0: &Measure, times: &[f64]) -> Result<FlowTrajectory> {
    check_time_grid(times)?;
    if mu0.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "initial measure",
            expected: spec.size(),
            got: mu0.len(),
        });
    }
    let (a, _beta) = shifted_generator(spec)?;
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut rho = nalgebra::RowDVector::from_row_slice(mu0.weights());
    let mut tau = 0.0f64;
    let mut measures = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - tau;
        if dt > TIME_TOL {
            let step = cache
                .entry(dt.to_bits())
                .or_insert_with(|| linalg::expm(&(&a * dt)).expect("finite generator"));
            rho *= &*step;
            tau = t;
        }
        let mass: f64 = rho.iter().sum();
        if !mass.is_finite() || mass <= 1e-250 {
            return Err(Error::Numerical(format!(
                "flow mass {mass:e} out of range at t={t}; add intermediate sample times so \
                 the flow can renormalise more often"
            )));
        }
        rho /= mass;
        let clipped: Vec<f64> = rho.iter().map(|w| w.max(0.0)).collect();
        measures.push(Measure::normalized(clipped)?);
    }
    Ok(FlowTrajectory {
        times: times.to_vec(),
        measures,
        method: FlowMethod::Semigroup,
        ode: None,
    })
}

/// Default integrator step: 1e-3 * min(1, 1/maxrate), where maxrate bounds
/// the mutation exit rates plus the drift magnitude over probe measures.
pub fn default_ode_step(spec: &ModelSpec) -> f64 {
    let n = spec.size();
    let qmax = (0..n)
        .map(|x| spec.mutation().entry(x, x).abs())
        .fold(0.0f64, f64::max);
    let mut dmax = 0.0f64;
    for mu in crate::model::probe_measures(n, 0, 0) {
        let d = effective_drift(spec, &mu);
        dmax = dmax.max(d.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let maxrate = (qmax + dmax).max(1e-12);
    1e-3 * 1.0f64.min(1.0 / maxrate)
}

/// Mean-field ODE right-hand side at state `g`:
/// rhs(x) = sum_u g(u) Q(u,x) - g(x) * sum_y D(x,y) g(y), with
/// D(x,y) = V(x,y) - V(y,x). Mass is conserved exactly: the mutation part
/// because Q rows sum to zero, the drift part because D is antisymmetric.
fn ode_rhs(spec: &ModelSpec, cached_drift: Option<&DMatrix<f64>>, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let q = spec.mutation().matrix();
    let tmp;
    let d: &DMatrix<f64> = match cached_drift {
        Some(d) => d,
        None => {
            tmp = effective_drift(spec, &Measure::raw(g.to_vec()));
            &tmp
        }
    };
    let mut out = vec![0.0; n];
    for x in 0..n {
        let mut mutation = 0.0;
        for u in 0..n {
            mutation += g[u] * q[(u, x)];
        }
        let mut drift = 0.0;
        for y in 0..n {
            drift += d[(x, y)] * g[y];
        }
        out[x] = mutation - g[x] * drift;
    }
    out
}

fn axpy(g: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    g.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

struct OdeRun {
    samples: Vec<Vec<f64>>,
    cumulative_mass_drift: f64,
    negativity_clips: u64,
}

/// Fixed-step RK4 from time 0 through the knots, renormalising each step
/// and sampling the state at every knot.
fn integrate_measure(
    spec: &ModelSpec,
    mu0: &Measure,
    knots: &[f64],
    base_step: f64,
) -> Result<OdeRun> {
    let cached = if spec.selection().mu_dependent() {
        None
    } else {
        Some(effective_drift(spec, &Measure::uniform(spec.size())))
    };
    let mut g: Vec<f64> = mu0.weights().to_vec();
    let mut tau = 0.0f64;
    let mut run = OdeRun {
        samples: Vec::with_capacity(knots.len()),
        cumulative_mass_drift: 0.0,
        negativity_clips: 0,
    };
    let total_steps: f64 = knots
        .iter()
        .scan(0.0f64, |prev, &t| {
            let span = t - *prev;
            *prev = t;
            Some((span / base_step).ceil().max(0.0))
        })
        .sum();
    if total_steps > 2e8 {
        return Err(Error::Numerical(format!(
            "step size {base_step:e} needs {total_steps:.0} integration steps; \
             raise the step or shorten the horizon"
        )));
    }
    for &t in knots {
        let span = t - tau;
        if span > TIME_TOL {
            let n_steps = (span / base_step).ceil() as usize;
            let h = span / n_steps as f64;
            for _ in 0..n_steps {
                let k1 = ode_rhs(spec, cached.as_ref(), &g);
                let k2 = ode_rhs(spec, cached.as_ref(), &axpy(&g, h / 2.0, &k1));
                let k3 = ode_rhs(spec, cached.as_ref(), &axpy(&g, h / 2.0, &k2));
                let k4 = ode_rhs(spec, cached.as_ref(), &axpy(&g, h, &k3));
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                let min = g.iter().copied().fold(f64::INFINITY, f64::min);
                if min < -NEG_CLIP {
                    return Err(Error::Numerical(format!(
                        "ODE state went negative ({min:e}) at t~{tau:.6}; \
                         the step {h:e} is too coarse for this model"
                    )));
                }
                if min < 0.0 {
                    for gi in g.iter_mut() {
                        if *gi < 0.0 {
                            *gi = 0.0;
                            run.negativity_clips += 1;
                        }
                    }
                }
                let mass: f64 = g.iter().sum();
                if !mass.is_finite() || mass <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "ODE mass degenerated to {mass} at t~{tau:.6}"
                    )));
                }
                run.cumulative_mass_drift += (mass - 1.0).abs();
                for gi in g.iter_mut() {
                    *gi /= mass;
                }
            }
            tau = t;
        }
        run.samples.push(g.clone());
    }
    Ok(run)
}

/// Mean-field ODE flow with the default step; see
/// [`mean_field_ode_with_step`].
pub fn mean_field_ode(spec: &ModelSpec, mu0: &Measure, times: &[f64]) -> Result<FlowTrajectory> {
    mean_field_ode_with_step(spec, mu0, times, default_ode_step(spec))
}

/// Mean-field ODE flow: classic fixed-step RK4 on
/// d/dt gamma(x) = (gamma Q)(x) + gamma(x) sum_y gamma(y) (V(y,x) - V(x,y)),
/// sampling at each requested time. The error estimate comes from a
/// coarse companion run at twice the step (Richardson, order 4).
pub fn mean_field_ode_with_step(
    spec: &ModelSpec,
    mu0: &Measure,
    times: &[f64],
    step: f64,
) -> Result<FlowTrajectory> {
    check_time_grid(times)?;
    if mu0.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "initial measure",
            expected: spec.size(),
            got: mu0.len(),
        });
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidParameter(format!("invalid ODE step {step}")));
    }
    let fine = integrate_measure(spec, mu0, times, step)?;
    let coarse = integrate_measure(spec, mu0, times, 2.0 * step)?;
    let last_fine = fine.samples.last().expect("nonempty grid");
    let last_coarse = coarse.samples.last().expect("nonempty grid");
    let richardson_error = last_fine
        .iter()
        .zip(last_coarse)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / 15.0;
    let measures = fine
        .samples
        .into_iter()
        .map(Measure::normalized)
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowTrajectory {
        times: times.to_vec(),
        measures,
        method: FlowMethod::Ode,
        ode: Some(OdeDiagnostics {
            step,
            richardson_error,
            cumulative_mass_drift: fine.cumulative_mass_drift,
            negativity_clips: fine.negativity_clips,
        }),
    })
}

/// Conservative jump generator of the mean-field particle at population
/// state `gamma`: off-diagonal (x,y) is Q(x,y) + gamma(y) * (V - V^s)(x,y).
/// This is the generator whose left action drives the empirical-measure
/// drift; the symmetric kernel part does not contribute to it.
pub fn mean_field_jump_generator(spec: &ModelSpec, gamma: &Measure) -> DMatrix<f64> {
    tilde_generator(spec, gamma)
}

/// Single-particle jump generator with the full kernel: off-diagonal (x,y)
/// is Q(x,y) + gamma(y) * V(x,y), symmetric part included. This is the
/// generator whose carre-du-champ matches the population-level quadratic
/// variation of empirical averages.
pub fn full_jump_generator(spec: &ModelSpec, gamma: &Measure) -> DMatrix<f64> {
    let n = spec.size();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        let mut row = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let v = spec.mutation().entry(x, y)
                + gamma.weight(y) * spec.selection().eval(gamma, x, y);
            g[(x, y)] = v;
            row += v;
        }
        g[(x, x)] = -row;
    }
    g
}

fn tilde_generator(spec: &ModelSpec, gamma: &Measure) -> DMatrix<f64> {
    let n = spec.size();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        let mut row = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let v = spec.mutation().entry(x, y)
                + gamma.weight(y) * spec.selection().tilde_eval(gamma, x, y);
            g[(x, y)] = v;
            row += v;
        }
        g[(x, x)] = -row;
    }
    g
}

/// Propagator P(s,t) of the time-inhomogeneous linear equation driven by
/// the mean-field jump generator along the flow:
/// d/du P(s,u) = P(s,u) G(gamma_u), P(s,s) = I.
///
/// The population path is re-integrated from the nearest flow node at or
/// before `s` (the trajectory only pins the initial condition and range),
/// and (gamma, P) are co-integrated with the same RK4 stages.
pub fn inhomogeneous_propagator(
    spec: &ModelSpec,
    s: f64,
    t: f64,
    flow: &FlowTrajectory,
) -> Result<DMatrix<f64>> {
    let n = spec.size();
    if flow.times.is_empty() {
        return Err(Error::FlowRange("empty flow trajectory".into()));
    }
    if s > t + TIME_TOL {
        return Err(Error::InvalidParameter(format!(
            "propagator needs s <= t, got s={s}, t={t}"
        )));
    }
    let first = flow.times[0];
    let last = *flow.times.last().expect("nonempty");
    if s < first - TIME_TOL || t > last + TIME_TOL {
        return Err(Error::FlowRange(format!(
            "[{s}, {t}] is not covered by the flow range [{first}, {last}]"
        )));
    }
    let anchor = flow
        .times
        .iter()
        .rposition(|&u| u <= s + TIME_TOL)
        .expect("s >= first grid time");
    let mut gamma: Vec<f64> = flow.measures[anchor].weights().to_vec();
    let base_step = default_ode_step(spec);

    // Advance the population state alone from the anchor node to s.
    let lead = s - flow.times[anchor];
    if lead > TIME_TOL {
        let n_steps = (lead / base_step).ceil() as usize;
        let h = lead / n_steps as f64;
        for _ in 0..n_steps {
            let k1 = ode_rhs(spec, None, &gamma);
            let k2 = ode_rhs(spec, None, &axpy(&gamma, h / 2.0, &k1));
            let k3 = ode_rhs(spec, None, &axpy(&gamma, h / 2.0, &k2));
            let k4 = ode_rhs(spec, None, &axpy(&gamma, h, &k3));
            for (i, gi) in gamma.iter_mut().enumerate() {
                *gi += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            renormalize(&mut gamma)?;
        }
    }

    let mut p = DMatrix::<f64>::identity(n, n);
    let span = t - s;
    if span <= TIME_TOL {
        return Ok(p);
    }
    let n_steps = (span / base_step).ceil() as usize;
    let h = span / n_steps as f64;
    for _ in 0..n_steps {
        let g1 = tilde_generator(spec, &Measure::raw(gamma.clone()));
        let k1g = ode_rhs(spec, None, &gamma);
        let k1p = &p * &g1;

        let gamma2 = axpy(&gamma, h / 2.0, &k1g);
        let g2 = tilde_generator(spec, &Measure::raw(gamma2.clone()));
        let k2g = ode_rhs(spec, None, &gamma2);
        let k2p = (&p + &k1p * (h / 2.0)) * &g2;

        let gamma3 = axpy(&gamma, h / 2.0, &k2g);
        let g3 = tilde_generator(spec, &Measure::raw(gamma3.clone()));
        let k3g = ode_rhs(spec, None, &gamma3);
        let k3p = (&p + &k2p * (h / 2.0)) * &g3;

        let gamma4 = axpy(&gamma, h, &k3g);
        let g4 = tilde_generator(spec, &Measure::raw(gamma4.clone()));
        let k4g = ode_rhs(spec, None, &gamma4);
        let k4p = (&p + &k3p * h) * &g4;

        for (i, gi) in gamma.iter_mut().enumerate() {
            *gi += h / 6.0 * (k1g[i] + 2.0 * k2g[i] + 2.0 * k3g[i] + k4g[i]);
        }
        renormalize(&mut gamma)?;
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("propagator integration overflowed".into()));
    }
    Ok(p)
}

fn renormalize(gamma: &mut [f64]) -> Result<()> {
    let min = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEG_CLIP {
        return Err(Error::Numerical(format!(
            "population state went negative ({min:e}) during propagator integration"
        )));
    }
    for gi in gamma.iter_mut() {
        if *gi < 0.0 {
            *gi = 0.0;
        }
    }
    let mass: f64 = gamma.iter().sum();
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::Numerical(format!("population mass degenerated to {mass}")));
    }
    for gi in gamma.iter_mut() {
        *gi /= mass;
    }
    Ok(())
}

/// Dominant eigen-structure of Q + diag(Lambda): lambda the rightmost
/// eigenvalue, mu_inf the left eigenvector as a probability measure, h the
/// right eigenvector with mu_inf(h) = 1. Residuals are enforced against
/// the default tolerance profile and reported in the diagnostics.
pub fn eigen_triplet(spec: &ModelSpec) -> Result<EigenTriplet> {
    if !spec.mutation().irreducible() {
        return Err(Error::Degenerate(
            "mutation matrix is not irreducible on the truncation; the dominant \
             eigenvector need not be positive or unique"
                .into(),
        ));
    }
    let a = fk_generator(spec)?;
    let tol = Tolerances::default_profile();
    let eig = linalg::dominant_eigen(&a, 1e-9, 1e-10)?;
    let mu_inf = Measure::normalized(eig.left)?;

    let weighted: f64 = mu_inf
        .weights()
        .iter()
        .zip(&eig.right)
        .map(|(m, h)| m * h)
        .sum();
    if weighted.is_nan() || weighted <= 0.0 {
        return Err(Error::SignStructure(format!(
            "left/right eigenvector pairing is {weighted:e}, cannot normalise h"
        )));
    }
    let h_vals: Vec<f64> = eig.right.iter().map(|v| v / weighted).collect();
    let min_h = h_vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min_h <= 0.0 {
        return Err(Error::NonPositiveH { min: min_h });
    }
    let h = TestFunction::new(h_vals);

    let n = spec.size();
    let mut residual_left = 0.0f64;
    for x in 0..n {
        let mut acc = 0.0;
        for u in 0..n {
            acc += mu_inf.weight(u) * a[(u, x)];
        }
        residual_left += (acc - eig.lambda * mu_inf.weight(x)).abs();
    }
    let mut residual_right = 0.0f64;
    for x in 0..n {
        let mut acc = 0.0;
        for y in 0..n {
            acc += a[(x, y)] * h.value(y);
        }
        residual_right = residual_right.max((acc - eig.lambda * h.value(x)).abs());
    }
    // mu_inf has mass 1, so its residual bound is absolute; h is normalised
    // by mu_inf(h) = 1 and its sup norm can be large on strongly drifted
    // chains, so its bound scales with the norm once that exceeds 1.
    let h_scale = h.sup_norm().max(1.0);
    if residual_left > tol.eigen_residual || residual_right > tol.eigen_residual * h_scale {
        return Err(Error::Numerical(format!(
            "eigen residuals {residual_left:e} (left), {residual_right:e} (right, sup |h| \
             {h_scale:e}) exceed {:e}",
            tol.eigen_residual
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let discrepancy = (eig.lambda - eig.power_iteration_lambda).abs();
    if discrepancy > 1e-4 * scale {
        return Err(Error::Numerical(format!(
            "power-iteration cross-check disagrees with the dense eigenvalue by {discrepancy:e}"
        )));
    }
    Ok(EigenTriplet {
        mu_inf,
        h,
        lambda: eig.lambda,
        diagnostics: EigenDiagnostics {
            spectral_gap: eig.gap,
            residual_left,
            residual_right,
            power_iteration_discrepancy: discrepancy,
        },
    })
}

/// Conjugated conservative generator: off-diagonal entries
/// Q^h(x,y) = Q(x,y) h(y) / h(x), diagonal set to minus the row sum (which
/// matches Q(x,x) + Lambda(x) - lambda up to the eigen residual). Its
/// stationary law is x -> mu_inf(x) h(x) normalised.
pub fn doob_transform(spec: &ModelSpec, triplet: &EigenTriplet) -> Result<RateMatrix> {
    let n = spec.size();
    if triplet.h.len() != n || triplet.mu_inf.len() != n {
        return Err(Error::SizeMismatch {
            context: "eigen triplet",
            expected: n,
            got: triplet.h.len(),
        });
    }
    let min_h = triplet
        .h
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_h <= 0.0 {
        return Err(Error::NonPositiveH { min: min_h });
    }
    let q = spec.mutation();
    RateMatrix::from_off_diagonal(n, |x, y| q.entry(x, y) * triplet.h.value(y) / triplet.h.value(x))
}

/// Stationary law of a conservative generator: the left eigenvector for
/// eigenvalue 0, which is dominant for a generator.
pub fn stationary_law(q: &RateMatrix) -> Result<Measure> {
    let eig = linalg::dominant_eigen(q.matrix(), 1e-9, 1e-10)?;
    let scale = q.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if eig.lambda.abs() > 1e-8 * scale {
        return Err(Error::Degenerate(format!(
            "dominant eigenvalue {:e} of a conservative generator is not zero",
            eig.lambda
        )));
    }
    Measure::normalized(eig.left)
}

/// Horizon-normalised operator:
/// W(phi) = e^{(T-t)(Q+Lambda)} phi / mu_t(e^{(T-t)(Q+Lambda)} 1).
/// The constant shift of the potential cancels between numerator and
/// denominator, so the shifted generator is used on both.
pub fn w_operator(
    spec: &ModelSpec,
    flow: &FlowTrajectory,
    t: f64,
    horizon: f64,
    phi: &TestFunction,
) -> Result<TestFunction> {
    if horizon < t - TIME_TOL {
        return Err(Error::InvalidParameter(format!(
            "needs t <= T, got t={t}, T={horizon}"
        )));
    }
    if phi.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "test function",
            expected: spec.size(),
            got: phi.len(),
        });
    }
    let mu_t = flow.measure_at(t)?;
    let (a, _beta) = shifted_generator(spec)?;
    let span = (horizon - t).max(0.0);
    let e = linalg::expm(&(a * span))?;
    let numer = &e * nalgebra::DVector::from_column_slice(phi.values());
    let denom_vec = &e * nalgebra::DVector::from_element(spec.size(), 1.0);
    let denom: f64 = mu_t
        .weights()
        .iter()
        .zip(denom_vec.iter())
        .map(|(m, v)| m * v)
        .sum();
    if !denom.is_finite() || denom <= 1e-250 {
        return Err(Error::Numerical(format!(
            "normalisation mass {denom:e} out of range at horizon {span}; \
             evaluate at a shorter horizon"
        )));
    }
    Ok(TestFunction::new(numer.iter().map(|v| v / denom).collect()))
}
