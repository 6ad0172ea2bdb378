//! Limit-fluctuation functionals: the symmetric-kernel form S_mu, the
//! carre-du-champ of a generator, the finite-horizon and stationary
//! variance functionals sigma2_T and sigma2_inf, and the original-versus-
//! reduced variance comparison.
//!
//! All integrals are composite Simpson sums whose nodes sit on the flow
//! sample grid, refined by doubling until the total stabilises.

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{Measure, TestFunction};
use crate::model::{lambda_of, sigma_reduce, ModelSpec, RateMatrix};
use crate::solvers::{eigen_triplet, fk_generator, normalized_flow};
use crate::tolerances::Tolerances;
use nalgebra::{DMatrix, DVector};

/// The three nonnegative summands of a variance functional.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VarianceDecomposition {
    /// Variance of the test function under the terminal measure.
    pub var_term: f64,
    /// Integral contribution of the symmetric kernel part.
    pub symmetric_integral: f64,
    /// Integral contribution of the birth part plus mean death rate.
    pub selection_integral: f64,
}

/// Convergence bookkeeping attached to a [`VarianceReport`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VarianceDiagnostics {
    /// Simpson subintervals at the accepted refinement level.
    pub nodes: usize,
    /// Integration horizon (equals T for the finite-horizon functional).
    pub horizon: f64,
    /// Fitted exponential decay rate of the stationary integrand, if an
    /// improper integral was truncated; compare with twice the spectral
    /// gap (and with 2|lambda| for the conditioned interpretation).
    pub fitted_decay_rate: Option<f64>,
    /// |main - alternative| when the zero-birth alternative formula
    /// applied and was cross-checked.
    pub alternative_route_gap: Option<f64>,
}

/// A variance value with its decomposition and quadrature error bound.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VarianceReport {
    pub sigma2: f64,
    pub decomposition: VarianceDecomposition,
    /// Last refinement change plus any truncation tail bound.
    pub quadrature_error_estimate: f64,
    pub diagnostics: VarianceDiagnostics,
}

impl VarianceReport {
    fn assemble(
        var_term: f64,
        symmetric_integral: f64,
        selection_integral: f64,
        quadrature_error_estimate: f64,
        diagnostics: VarianceDiagnostics,
    ) -> Result<Self> {
        for (name, v) in [
            ("variance term", var_term),
            ("symmetric integral", symmetric_integral),
            ("selection integral", selection_integral),
        ] {
            if v < -1e-12 || !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "{name} must be nonnegative, got {v:e}"
                )));
            }
        }
        let var_term = var_term.max(0.0);
        let symmetric_integral = symmetric_integral.max(0.0);
        let selection_integral = selection_integral.max(0.0);
        Ok(VarianceReport {
            sigma2: var_term + symmetric_integral + selection_integral,
            decomposition: VarianceDecomposition {
                var_term,
                symmetric_integral,
                selection_integral,
            },
            quadrature_error_estimate,
            diagnostics,
        })
    }
}

/// Symmetric-kernel fluctuation form:
/// S_mu(phi) = sum_{x,y} (phi(x) - phi(y))^2 Vs_mu(x,y) mu(x) mu(y).
pub fn s_mu(spec: &ModelSpec, mu: &Measure, phi: &TestFunction) -> Result<f64> {
    let n = spec.size();
    if mu.len() != n || phi.len() != n {
        return Err(Error::SizeMismatch {
            context: "s_mu arguments",
            expected: n,
            got: mu.len().min(phi.len()),
        });
    }
    if spec.selection().symmetric_part().is_zero() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for x in 0..n {
        for y in 0..n {
            if y == x {
                continue;
            }
            let d = phi.value(x) - phi.value(y);
            acc += d * d * spec.selection().sym_eval(mu, x, y) * mu.weight(x) * mu.weight(y);
        }
    }
    Ok(acc.max(0.0))
}

/// Carre-du-champ by its definition: Gamma_L(phi) = L(phi^2) - 2 phi L(phi).
pub fn carre_du_champ(l: &RateMatrix, phi: &TestFunction) -> Result<TestFunction> {
    if phi.len() != l.size() {
        return Err(Error::SizeMismatch {
            context: "carre-du-champ test function",
            expected: l.size(),
            got: phi.len(),
        });
    }
    let phi_sq = TestFunction::new(phi.values().iter().map(|v| v * v).collect());
    let l_phi_sq = l.apply(&phi_sq);
    let l_phi = l.apply(phi);
    Ok(TestFunction::new(
        (0..l.size())
            .map(|x| l_phi_sq.value(x) - 2.0 * phi.value(x) * l_phi.value(x))
            .collect(),
    ))
}

/// Carre-du-champ in jump form: sum_y L(x,y) (phi(y) - phi(x))^2. Agrees
/// with [`carre_du_champ`] for conservative generators; kept as an
/// independent route for cross-checks.
pub fn carre_du_champ_jump(l: &RateMatrix, phi: &TestFunction) -> Result<TestFunction> {
    if phi.len() != l.size() {
        return Err(Error::SizeMismatch {
            context: "carre-du-champ test function",
            expected: l.size(),
            got: phi.len(),
        });
    }
    let n = l.size();
    let mut out = vec![0.0; n];
    for x in 0..n {
        for y in 0..n {
            if y == x {
                continue;
            }
            let d = phi.value(y) - phi.value(x);
            out[x] += l.entry(x, y) * d * d;
        }
    }
    Ok(TestFunction::new(out))
}

fn simpson(values: &[f64], delta: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n >= 2 && n % 2 == 0);
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += v * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * delta / 3.0
}

/// Shifted weighted generator A - (sup Lambda) I and the dominant-part
/// data needed by the variance integrals.
fn shifted_parts(spec: &ModelSpec) -> Result<(DMatrix<f64>, f64)> {
    let lam = lambda_of(spec)?;
    let beta = lam.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut a = fk_generator(spec)?;
    for x in 0..spec.size() {
        a[(x, x)] -= beta;
    }
    Ok((a, beta))
}

struct FiniteHorizonPass {
    var_term: f64,
    symmetric_integral: f64,
    selection_integral: f64,
}

fn sigma2_t_pass(
    spec: &ModelSpec,
    mu0: &Measure,
    t: f64,
    phi: &TestFunction,
    n: usize,
    a_shifted: &DMatrix<f64>,
) -> Result<FiniteHorizonPass> {
    let size = spec.size();
    let delta = t / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * delta).collect();
    let flow = normalized_flow(spec, mu0, &times)?;
    let mu_t = flow.measures().last().expect("nonempty grid");
    let mean_t = mu_t.expect(phi);
    let centred = phi.shifted(mean_t);

    let step = linalg::expm(&(a_shifted * delta))?;
    // v_phi[i] = e^{(T - s_i) A'} centred, marched backward from i = n.
    let mut v_phi = vec![DVector::<f64>::zeros(size); n + 1];
    let mut v_one = vec![DVector::<f64>::zeros(size); n + 1];
    v_phi[n] = DVector::from_column_slice(centred.values());
    v_one[n] = DVector::from_element(size, 1.0);
    for i in (0..n).rev() {
        v_phi[i] = &step * &v_phi[i + 1];
        v_one[i] = &step * &v_one[i + 1];
    }

    let mut integrand_sym = vec![0.0; n + 1];
    let mut integrand_sel = vec![0.0; n + 1];
    for i in 0..=n {
        let mu_s = &flow.measures()[i];
        let denom: f64 = mu_s
            .weights()
            .iter()
            .zip(v_one[i].iter())
            .map(|(m, v)| m * v)
            .sum();
        if !denom.is_finite() || denom <= 0.0 {
            return Err(Error::Numerical(format!(
                "horizon-normalisation mass {denom:e} degenerate at node {i}"
            )));
        }
        let w = TestFunction::new(v_phi[i].iter().map(|v| v / denom).collect());
        integrand_sym[i] = s_mu(spec, mu_s, &w)?;
        let (vd, vb) = spec.selection().additive_parts(mu_s, size)?;
        let mean_death: f64 = mu_s
            .weights()
            .iter()
            .zip(&vd)
            .map(|(m, v)| m * v)
            .sum();
        integrand_sel[i] = 2.0
            * mu_s
                .weights()
                .iter()
                .enumerate()
                .map(|(x, m)| m * w.value(x) * w.value(x) * (vb[x] + mean_death))
                .sum::<f64>();
    }
    Ok(FiniteHorizonPass {
        var_term: mu_t.variance(phi),
        symmetric_integral: simpson(&integrand_sym, delta),
        selection_integral: simpson(&integrand_sel, delta),
    })
}

/// Finite-horizon fluctuation variance
/// sigma2_T = Var_{mu_T}(phi) + int_0^T S_{mu_s}(W_{s,T}(phi_c)) ds
///          + 2 int_0^T mu_s(W_{s,T}(phi_c)^2 (Vb_{mu_s} + mu_s(Vd_{mu_s}))) ds,
/// with phi_c the phi centred at mu_T and W the horizon-normalised
/// semigroup ratio. Simpson nodes are shared with the flow grid and
/// doubled until the total moves less than the relative quadrature
/// tolerance.
pub fn sigma2_t(spec: &ModelSpec, mu0: &Measure, t: f64, phi: &TestFunction) -> Result<VarianceReport> {
    let tol = Tolerances::default_profile();
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "horizon must be finite and nonnegative, got {t}"
        )));
    }
    if phi.len() != spec.size() || mu0.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "sigma2_t arguments",
            expected: spec.size(),
            got: phi.len().min(mu0.len()),
        });
    }
    let (a_shifted, _beta) = shifted_parts(spec)?;
    if t == 0.0 {
        return VarianceReport::assemble(
            mu0.variance(phi),
            0.0,
            0.0,
            0.0,
            VarianceDiagnostics {
                nodes: 0,
                horizon: 0.0,
                fitted_decay_rate: None,
                alternative_route_gap: None,
            },
        );
    }
    let mut n = 32usize;
    let mut prev: Option<(f64, FiniteHorizonPass)> = None;
    while n <= 16384 {
        let pass = sigma2_t_pass(spec, mu0, t, phi, n, &a_shifted)?;
        let total = pass.var_term + pass.symmetric_integral + pass.selection_integral;
        if let Some((prev_total, _)) = prev {
            let diff = (total - prev_total).abs();
            if diff <= tol.quadrature_rel * total.abs().max(1e-15) {
                return VarianceReport::assemble(
                    pass.var_term,
                    pass.symmetric_integral,
                    pass.selection_integral,
                    diff,
                    VarianceDiagnostics {
                        nodes: n,
                        horizon: t,
                        fitted_decay_rate: None,
                        alternative_route_gap: None,
                    },
                );
            }
        }
        prev = Some((total, pass));
        n *= 2;
    }
    Err(Error::Numerical(format!(
        "finite-horizon quadrature did not stabilise below {:e} within 16384 nodes",
        tol.quadrature_rel
    )))
}

/// True when the kernel has no birth part and no symmetric part on
/// inspection (constant zero birth), enabling the alternative stationary
/// formula.
fn is_pure_death(spec: &ModelSpec) -> bool {
    if !spec.selection().symmetric_part().is_zero() {
        return false;
    }
    let size = spec.size();
    for mu in [Measure::uniform(size), Measure::delta(size, 0)] {
        match spec.selection().additive_parts(&mu, size) {
            Ok((_, vb)) => {
                if vb.iter().any(|v| *v != 0.0) {
                    return false;
                }
            }
            Err(_) => return false,
        }
    }
    true
}

/// Stationary fluctuation variance
/// sigma2_inf = Var_{mu_inf}(phi)
///            + int_0^inf e^{-2 lambda s} S_{mu_inf}(P_s(phi_c)) ds
///            + 2 int_0^inf e^{-2 lambda s} mu_inf(P_s(phi_c)^2 (Vb + mu_inf(Vd))) ds,
/// with phi_c centred at mu_inf. The integrand is marched as
/// psi_s = e^{-lambda s} P_s(phi_c), which decays at twice the spectral
/// gap; the horizon is extended until the running blocks are negligible
/// and an exponential fit confirms the decay, then the truncated integral
/// is refined by node doubling.
///
/// For kernels with zero birth and symmetric parts the equivalent form
/// Var_{mu_inf}(phi) - 2 lambda int e^{-2 lambda s} Var_{mu_inf}(P_s(phi_c)) ds
/// is evaluated on the same nodes and cross-checked.
pub fn sigma2_inf(spec: &ModelSpec, phi: &TestFunction) -> Result<VarianceReport> {
    let tol = Tolerances::default_profile();
    if phi.len() != spec.size() {
        return Err(Error::SizeMismatch {
            context: "sigma2_inf test function",
            expected: spec.size(),
            got: phi.len(),
        });
    }
    let size = spec.size();
    let triplet = eigen_triplet(spec)?;
    let mu_inf = &triplet.mu_inf;
    let gap = triplet.diagnostics.spectral_gap;
    let centred = phi.shifted(mu_inf.expect(phi));
    let var_term = mu_inf.variance(phi);

    // B = (Q + Lambda) - lambda I; e^{sB} phi_c decays at the gap rate.
    let mut b = fk_generator(spec)?;
    for x in 0..size {
        b[(x, x)] -= triplet.lambda;
    }
    let (vd, vb) = spec.selection().additive_parts(mu_inf, size)?;
    let mean_death: f64 = mu_inf.weights().iter().zip(&vd).map(|(m, v)| m * v).sum();
    let sym_zero = spec.selection().symmetric_part().is_zero();

    let integrand = |psi: &DVector<f64>| -> Result<(f64, f64)> {
        let i_sym = if sym_zero {
            0.0
        } else {
            s_mu(
                spec,
                mu_inf,
                &TestFunction::new(psi.iter().copied().collect()),
            )?
        };
        let i_sel = 2.0
            * mu_inf
                .weights()
                .iter()
                .enumerate()
                .map(|(x, m)| m * psi[x] * psi[x] * (vb[x] + mean_death))
                .sum::<f64>();
        Ok((i_sym, i_sel))
    };

    // Probe phase: march in blocks until the tail is negligible.
    let probe_delta = 0.05 / gap;
    let block_nodes = 64usize;
    let probe_step = linalg::expm(&(&b * probe_delta))?;
    let mut psi = DVector::from_column_slice(centred.values());
    let mut probe_samples: Vec<(f64, f64)> = Vec::new(); // (s, combined integrand)
    {
        let (i1, i2) = integrand(&psi)?;
        probe_samples.push((0.0, i1 + i2));
    }
    let mut running_total = 0.0f64;
    let mut horizon = 0.0f64;
    let mut decayed = false;
    for _block in 0..200 {
        let mut block_sum = 0.0;
        for _ in 0..block_nodes {
            psi = &probe_step * &psi;
            horizon += probe_delta;
            let (i1, i2) = integrand(&psi)?;
            probe_samples.push((horizon, i1 + i2));
            block_sum += (i1 + i2) * probe_delta;
        }
        running_total += block_sum;
        if block_sum <= tol.improper_tail_rel * running_total.max(1e-300) {
            decayed = true;
            break;
        }
    }
    if !decayed {
        return Err(Error::NonDecayingIntegrand(format!(
            "stationary integrand did not decay below {:e} of the total within horizon {horizon:.3}",
            tol.improper_tail_rel
        )));
    }

    // Exponential fit over the last positive stretch confirms decay and
    // bounds the discarded tail.
    let positive_tail: Vec<(f64, f64)> = probe_samples
        .iter()
        .rev()
        .filter(|(_, g)| *g > 0.0)
        .take(2 * block_nodes)
        .copied()
        .collect();
    let mut fitted_decay_rate = None;
    let mut tail_bound = 0.0;
    if running_total > 0.0 && positive_tail.len() >= 8 {
        let m = positive_tail.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (s, g) in &positive_tail {
            let y = g.ln();
            sx += s;
            sy += y;
            sxx += s * s;
            sxy += s * y;
        }
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        if slope.is_nan() || slope >= 0.0 {
            return Err(Error::NonDecayingIntegrand(format!(
                "tail fit slope {slope:e} does not confirm exponential decay"
            )));
        }
        let rate = -slope;
        fitted_decay_rate = Some(rate);
        let g_end = positive_tail.first().expect("nonempty").1;
        tail_bound = g_end / rate;
    }

    // Refinement phase on the fixed horizon.
    let mut n = {
        let mut n = (horizon / probe_delta).ceil() as usize;
        if n % 2 == 1 {
            n += 1;
        }
        n.max(64)
    };
    let mut prev_result: Option<(f64, f64, f64)> = None; // (sym, sel, total)
    let mut accepted: Option<(f64, f64, f64, usize)> = None;
    while n <= 65536 {
        let delta = horizon / n as f64;
        let step = linalg::expm(&(&b * delta))?;
        let mut psi = DVector::from_column_slice(centred.values());
        let mut sym_vals = Vec::with_capacity(n + 1);
        let mut sel_vals = Vec::with_capacity(n + 1);
        let (i1, i2) = integrand(&psi)?;
        sym_vals.push(i1);
        sel_vals.push(i2);
        for _ in 0..n {
            psi = &step * &psi;
            let (i1, i2) = integrand(&psi)?;
            sym_vals.push(i1);
            sel_vals.push(i2);
        }
        let sym = simpson(&sym_vals, delta);
        let sel = simpson(&sel_vals, delta);
        let total = var_term + sym + sel;
        if let Some((_, _, prev_total)) = prev_result {
            let diff: f64 = (total - prev_total).abs();
            if diff <= tol.quadrature_rel * total.abs().max(1e-15) {
                accepted = Some((sym, sel, diff, n));
                break;
            }
        }
        prev_result = Some((sym, sel, total));
        n *= 2;
    }
    let (sym, sel, refine_diff, nodes) = accepted.ok_or_else(|| {
        Error::Numerical(
            "stationary quadrature did not stabilise within 65536 nodes".into(),
        )
    })?;

    // Alternative route for pure-death kernels, on the same backbone.
    let mut alternative_route_gap = None;
    if is_pure_death(spec) {
        let delta = horizon / nodes as f64;
        let step = linalg::expm(&(&b * delta))?;
        let mut psi = DVector::from_column_slice(centred.values());
        let mut vals = Vec::with_capacity(nodes + 1);
        let var_of = |psi: &DVector<f64>| -> f64 {
            let mean: f64 = mu_inf.weights().iter().zip(psi.iter()).map(|(m, v)| m * v).sum();
            mu_inf
                .weights()
                .iter()
                .zip(psi.iter())
                .map(|(m, v)| m * (v - mean) * (v - mean))
                .sum()
        };
        vals.push(var_of(&psi));
        for _ in 0..nodes {
            psi = &step * &psi;
            vals.push(var_of(&psi));
        }
        let alt = var_term - 2.0 * triplet.lambda * simpson(&vals, delta);
        let main = var_term + sym + sel;
        let gap_alt = (alt - main).abs();
        if gap_alt > tol.variance_cross_check {
            return Err(Error::Numerical(format!(
                "alternative stationary-variance route differs by {gap_alt:e} \
                 (tolerance {:e})",
                tol.variance_cross_check
            )));
        }
        alternative_route_gap = Some(gap_alt);
    }

    VarianceReport::assemble(
        var_term,
        sym,
        sel,
        refine_diff + tail_bound,
        VarianceDiagnostics {
            nodes,
            horizon,
            fitted_decay_rate,
            alternative_route_gap,
        },
    )
}

/// Result of comparing a model against its variance-reduced form.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VarianceComparison {
    pub original: VarianceReport,
    pub reduced: VarianceReport,
    /// original.sigma2 - reduced.sigma2, clamped at zero within the
    /// assertion tolerance.
    pub reduction: f64,
    /// sup-TV distance between the two flows over the comparison grid
    /// (must be negligible: the reduction does not change the limit).
    pub flow_gap: f64,
}

/// Evaluates sigma2_T for the model and for its reduced form, after
/// verifying that both drive the same limiting flow.
pub fn variance_compare(
    spec: &ModelSpec,
    mu0: &Measure,
    phi: &TestFunction,
    t: f64,
) -> Result<VarianceComparison> {
    let tol = Tolerances::default_profile();
    let reduced_spec = sigma_reduce(spec)?;
    let grid: Vec<f64> = (0..=32).map(|i| i as f64 * t.max(1e-9) / 32.0).collect();
    let flow_original = normalized_flow(spec, mu0, &grid)?;
    let flow_reduced = normalized_flow(&reduced_spec, mu0, &grid)?;
    let flow_gap = flow_original.sup_tv(&flow_reduced)?;
    if flow_gap > tol.reduction_flow_gate {
        return Err(Error::FlowMismatch { sup_tv: flow_gap });
    }
    let original = sigma2_t(spec, mu0, t, phi)?;
    let reduced = sigma2_t(&reduced_spec, mu0, t, phi)?;
    let reduction = original.sigma2 - reduced.sigma2;
    if reduction < -1e-10 {
        return Err(Error::Numerical(format!(
            "reduced model has larger variance by {:e}",
            -reduction
        )));
    }
    Ok(VarianceComparison {
        original,
        reduced,
        reduction: reduction.max(0.0),
        flow_gap,
    })
}
