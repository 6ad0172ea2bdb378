//! Reference models and ergodicity checkers: the two-type model with its
//! absorbed-chain companion, truncated birth-death chains, the
//! quasi-stationary uniqueness series, two sufficient ergodicity
//! criteria, and the unbounded-eigenfunction counterexample chain.

use std::collections::BTreeSet;
use std::f64::consts::E;
use std::fmt;

use crate::error::{Error, Result};
use crate::measure::TestFunction;
use crate::model::{
    lambda_of, BoundaryPolicy, ModelSpec, MuFn, RateMatrix, SelectionKernel, StateSpace, SymPart,
    TruncationInfo,
};
use crate::solvers::{eigen_triplet, fk_generator};

/// Two-type model: mutation a (1 to 2) and b (2 to 1), replacement rates
/// p (1 replaced by 2) and q (2 replaced by 1), as an additive kernel
/// with death part (0, q) and birth part (0, p).
pub fn two_allelic(a: f64, b: f64, p: f64, q: f64) -> Result<ModelSpec> {
    if a.is_nan() || b.is_nan() || a <= 0.0 || b <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mutation rates must be positive, got a={a}, b={b}"
        )));
    }
    if p.is_nan() || q.is_nan() || p < 0.0 || q < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "replacement rates must be nonnegative, got p={p}, q={q}"
        )));
    }
    let space = StateSpace::new(2)?.with_labels(vec!["1".into(), "2".into()])?;
    let mutation = RateMatrix::from_rows(&[vec![-a, a], vec![b, -b]])?;
    let selection = SelectionKernel::additive(
        MuFn::Const(vec![0.0, q]),
        MuFn::Const(vec![0.0, p]),
        SymPart::Zero,
    );
    ModelSpec::new(space, mutation, selection)
}

/// Companion three-state chain for [`two_allelic`]: the two transient
/// types plus a cemetery reached from type 1 at rate p and from type 2
/// at rate q. Its law conditioned on not being absorbed matches the
/// normalised flow of the two-type model.
pub fn two_allelic_absorbed(a: f64, b: f64, p: f64, q: f64) -> Result<RateMatrix> {
    if [a, b, p, q].iter().any(|v| v.is_nan()) || a <= 0.0 || b <= 0.0 || p < 0.0 || q < 0.0 {
        return Err(Error::InvalidParameter(
            "absorbed companion needs a,b > 0 and p,q >= 0".into(),
        ));
    }
    RateMatrix::from_rows(&[
        vec![-(a + p), a, p],
        vec![b, -(b + q), q],
        vec![0.0, 0.0, 0.0],
    ])
}

/// Birth and death rates up to a truncation level. Rates are indexed by
/// the chain's states 1..=K; every rate used by a builder or checker must
/// be strictly positive.
pub struct BDParams {
    birth: Box<dyn Fn(usize) -> f64 + Send + Sync>,
    death: Box<dyn Fn(usize) -> f64 + Send + Sync>,
    k: usize,
}

impl fmt::Debug for BDParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BDParams")
            .field("k", &self.k)
            .field("b_1", &self.birth(1))
            .field("d_1", &self.death(1))
            .finish()
    }
}

impl BDParams {
    /// Rates given by functions of the state index (1-based).
    pub fn from_fns(
        k: usize,
        birth: impl Fn(usize) -> f64 + Send + Sync + 'static,
        death: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidParameter(format!(
                "truncation must keep at least 3 states, got {k}"
            )));
        }
        let params = BDParams {
            birth: Box::new(birth),
            death: Box::new(death),
            k,
        };
        params.check_positive(k)?;
        Ok(params)
    }

    /// Constant rates b and d.
    pub fn constant(k: usize, b: f64, d: f64) -> Result<Self> {
        Self::from_fns(k, move |_| b, move |_| d)
    }

    pub fn truncation(&self) -> usize {
        self.k
    }

    pub fn birth(&self, x: usize) -> f64 {
        (self.birth)(x)
    }

    pub fn death(&self, x: usize) -> f64 {
        (self.death)(x)
    }

    fn check_positive(&self, up_to: usize) -> Result<()> {
        for x in 1..=up_to {
            let (b, d) = (self.birth(x), self.death(x));
            if !b.is_finite() || b <= 0.0 || !d.is_finite() || d <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "rates must be positive and finite, got b_{x}={b}, d_{x}={d}"
                )));
            }
        }
        Ok(())
    }
}

/// Truncated birth-death chain on {1..K}: up-rate b_x below K, down-rate
/// d_x above 1, and killing d_1 at state 1 carried by the death part of
/// the kernel (the state below 1 is a cemetery).
pub fn birth_death(params: &BDParams) -> Result<ModelSpec> {
    let k = params.truncation();
    let labels: Vec<String> = (1..=k).map(|x| x.to_string()).collect();
    let space = StateSpace::new(k)?
        .with_labels(labels)?
        .with_truncation(TruncationInfo {
            original: "countable".into(),
            retained: k,
            boundary_policy: BoundaryPolicy::AbsorbForbid,
        });
    let mutation = RateMatrix::from_off_diagonal(k, |x, y| {
        // Matrix indices are 0-based; chain states are 1-based.
        let state = x + 1;
        if y == x + 1 && state < k {
            params.birth(state)
        } else if y + 1 == x && state >= 2 {
            params.death(state)
        } else {
            0.0
        }
    })?;
    let mut death_part = vec![0.0; k];
    death_part[0] = params.death(1);
    let selection =
        SelectionKernel::additive(MuFn::Const(death_part), MuFn::zeros(k), SymPart::Zero);
    ModelSpec::new(space, mutation, selection)
}

/// Verdict of the quasi-stationary uniqueness series checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesVerdict {
    Converging,
    Diverging,
    Inconclusive,
}

/// Truncated evaluation of the uniqueness series
/// sum_{k >= 2} (1 / (d_k alpha_k)) sum_{r >= k} alpha_r, with
/// alpha_r = prod_{i<r} b_i / prod_{1<i<=r} d_r. Finiteness of the series
/// is equivalent to a unique quasi-stationary law with uniform
/// exponential convergence.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeriesReport {
    /// Cumulative sums of the terms for k = 2..=K_terms.
    pub partial_sums: Vec<f64>,
    pub verdict: SeriesVerdict,
    /// Geometric mean of consecutive term ratios over the tail window.
    pub tail_ratio: f64,
    /// Mean of k (1 - t_{k+1}/t_k) over the tail window, used when the
    /// plain ratio is too close to one to decide.
    pub raabe_statistic: f64,
}

/// Evaluates the uniqueness series up to `k_terms` terms. Products and
/// tail sums are carried in log space, so rate sequences growing up to
/// around 10^4 terms do not overflow. The verdict is a heuristic from
/// finitely many terms and reports `Inconclusive` whenever the tail
/// behaviour is not clear-cut; see `SeriesReport` for the statistics it
/// is based on.
pub fn bd_qsd_uniqueness_check(params: &BDParams, k_terms: usize) -> Result<SeriesReport> {
    if k_terms < 10 {
        return Err(Error::InvalidParameter(format!(
            "series check needs at least 10 terms, got {k_terms}"
        )));
    }
    params.check_positive(k_terms)?;

    // log alpha_r for r = 1..=k_terms (alpha_1 = 1).
    let mut log_alpha = vec![0.0f64; k_terms + 1];
    for r in 2..=k_terms {
        log_alpha[r] = log_alpha[r - 1] + params.birth(r - 1).ln() - params.death(r).ln();
    }
    // log of the truncated tails sum_{r=k}^{K} alpha_r, built backward.
    let mut log_tail = vec![f64::NEG_INFINITY; k_terms + 2];
    for k in (1..=k_terms).rev() {
        log_tail[k] = log_sum_exp(log_alpha[k], log_tail[k + 1]);
    }
    // log t_k = log tail_k - log d_k - log alpha_k for k = 2..=k_terms.
    let log_terms: Vec<f64> = (2..=k_terms)
        .map(|k| log_tail[k] - params.death(k).ln() - log_alpha[k])
        .collect();

    let mut partial_sums = Vec::with_capacity(log_terms.len());
    let mut acc = 0.0f64;
    for lt in &log_terms {
        acc += lt.exp();
        partial_sums.push(acc);
    }

    // Tail window away from both the head and the truncated end.
    let lo = ((0.6 * k_terms as f64) as usize).max(2) - 2;
    let hi = ((0.9 * k_terms as f64) as usize).min(k_terms - 1) - 2;
    if hi <= lo + 2 {
        return Err(Error::InvalidParameter(format!(
            "series window degenerate for k_terms={k_terms}"
        )));
    }
    let window = &log_terms[lo..=hi];
    let log_ratios: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    let tail_ratio = (log_ratios.iter().sum::<f64>() / log_ratios.len() as f64).exp();
    let raabe_statistic = log_ratios
        .iter()
        .enumerate()
        .map(|(i, lr)| (lo + 2 + i) as f64 * (1.0 - lr.exp()))
        .sum::<f64>()
        / log_ratios.len() as f64;

    // If the alpha tail itself is not summable the inner sums blow up and
    // the series diverges outright.
    let alpha_tail_growth: f64 = (lo..hi)
        .map(|i| log_alpha[i + 3] - log_alpha[i + 2])
        .sum::<f64>()
        / (hi - lo) as f64;

    let verdict = if alpha_tail_growth >= 0.0 || tail_ratio >= 1.0 {
        SeriesVerdict::Diverging
    } else if tail_ratio <= 0.9 || raabe_statistic >= 1.2 {
        SeriesVerdict::Converging
    } else if raabe_statistic <= 0.8 {
        SeriesVerdict::Diverging
    } else {
        SeriesVerdict::Inconclusive
    };

    Ok(SeriesReport {
        partial_sums,
        verdict,
        tail_ratio,
        raabe_statistic,
    })
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Outcome of the transition-rate ergodicity criterion
/// inf_{y notin K} (Lambda(y) + sum_{x in K} Q(y,x)) > sup Lambda.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RateCriterionReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the rate criterion for a candidate core set `k_set` (0-based
/// state indices). The set must be a proper nonempty subset of the
/// truncation.
pub fn rate_criterion_check(spec: &ModelSpec, k_set: &[usize]) -> Result<RateCriterionReport> {
    let n = spec.size();
    let set: BTreeSet<usize> = k_set.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::InvalidParameter("core set is empty".into()));
    }
    if let Some(&bad) = set.iter().find(|&&x| x >= n) {
        return Err(Error::InvalidParameter(format!(
            "core set contains state {bad} outside the truncation of size {n}"
        )));
    }
    if set.len() == n {
        return Err(Error::InvalidParameter(
            "core set covers the whole truncation; the criterion is vacuous".into(),
        ));
    }
    let lambda = lambda_of(spec)?;
    let rhs = lambda
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lhs = (0..n)
        .filter(|y| !set.contains(y))
        .map(|y| {
            lambda.value(y)
                + set
                    .iter()
                    .map(|&x| spec.mutation().entry(y, x))
                    .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(RateCriterionReport {
        lhs,
        rhs,
        holds: lhs > rhs,
    })
}

/// Growth of the spectral-criterion quantities when the truncation is
/// doubled.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DoublingTest {
    pub base_size: usize,
    pub doubled_size: usize,
    pub k_eps_sizes: (usize, usize),
    pub h_inv_norms: (f64, f64),
    /// K_eps did not grow beyond slack when the truncation doubled.
    pub k_eps_stable: bool,
    /// max 1/h grew by at most a factor 4 when the truncation doubled.
    pub h_inv_stable: bool,
}

/// Outcome of the spectral ergodicity criterion: K_eps = {x : Lambda(x)
/// >= lambda - eps} must stay finite and 1/h bounded.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SpectralCriterionReport {
    /// States (0-based) whose potential is within eps of the eigenvalue.
    pub k_eps: Vec<usize>,
    /// max over the truncation of 1/h.
    pub h_inv_norm: f64,
    pub lambda: f64,
    pub holds: bool,
    pub doubling: Option<DoublingTest>,
}

fn spectral_quantities(spec: &ModelSpec, eps: f64) -> Result<(Vec<usize>, f64, f64)> {
    let triplet = eigen_triplet(spec)?;
    let lambda_fn = lambda_of(spec)?;
    let k_eps: Vec<usize> = (0..spec.size())
        .filter(|&x| lambda_fn.value(x) >= triplet.lambda - eps)
        .collect();
    let h_inv_norm = triplet
        .h
        .values()
        .iter()
        .map(|&h| if h > 0.0 { 1.0 / h } else { f64::INFINITY })
        .fold(0.0f64, f64::max);
    Ok((k_eps, h_inv_norm, triplet.lambda))
}

/// Checks the spectral criterion on a single truncation. On a fixed
/// finite space the criterion reduces to 1/h being finite, so growth
/// with the truncation can only be seen through
/// [`spectral_criterion_check_doubling`].
pub fn spectral_criterion_check(spec: &ModelSpec, eps: f64) -> Result<SpectralCriterionReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let (k_eps, h_inv_norm, lambda) = spectral_quantities(spec, eps)?;
    Ok(SpectralCriterionReport {
        holds: h_inv_norm.is_finite(),
        k_eps,
        h_inv_norm,
        lambda,
        doubling: None,
    })
}

/// Checks the spectral criterion across a doubling of the truncation.
/// `family(k)` must build the model truncated at k states. The criterion
/// holds when K_eps stays essentially the same size (at most 25 percent
/// growth plus one state) and max 1/h grows by at most a factor 4.
pub fn spectral_criterion_check_doubling(
    family: impl Fn(usize) -> Result<ModelSpec>,
    base_size: usize,
    eps: f64,
) -> Result<SpectralCriterionReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let base = family(base_size)?;
    if base.size() != base_size {
        return Err(Error::InvalidParameter(format!(
            "family produced size {} for requested truncation {base_size}",
            base.size()
        )));
    }
    let doubled = family(2 * base_size)?;
    let (k_eps, h_inv, lambda) = spectral_quantities(&base, eps)?;
    let (k_eps_2, h_inv_2, _) = spectral_quantities(&doubled, eps)?;
    let k_eps_stable = k_eps_2.len() <= (1.25 * k_eps.len() as f64).ceil() as usize + 1;
    let h_inv_stable = h_inv_2 <= 4.0 * h_inv;
    let k_eps_sizes = (k_eps.len(), k_eps_2.len());
    Ok(SpectralCriterionReport {
        holds: k_eps_stable && h_inv_stable && h_inv.is_finite() && h_inv_2.is_finite(),
        k_eps,
        h_inv_norm: h_inv,
        lambda,
        doubling: Some(DoublingTest {
            base_size,
            doubled_size: 2 * base_size,
            k_eps_sizes,
            h_inv_norms: (h_inv, h_inv_2),
            k_eps_stable,
            h_inv_stable,
        }),
    })
}

/// How the boundary rates of the counterexample chain are tied together.
/// Taking d_1 = d(e - 1) literally while b_1 > b breaks the first row of
/// the eigen identity; the `Consistent` mode adjusts d_1 so that the
/// identity holds exactly on every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum B1Mode {
    /// d_1 = d(e - 1); the first row then has residual
    /// (b_1 - b)(e^{-1} - 1)e^{-1}.
    Literal,
    /// d_1 = d(e - 1) + (b_1 - b)(1 - e^{-1}); every row is exact.
    Consistent,
}

/// The counterexample chain with its analytic eigen data.
#[derive(Debug)]
pub struct CounterexampleBd {
    pub spec: ModelSpec,
    /// Analytic eigenfunction h(n) = e^{-n} on the truncation.
    pub h: TestFunction,
    /// Analytic eigenvalue b(e^{-1} - 1) + d(e - 1).
    pub lambda: f64,
    pub mode: B1Mode,
    /// Closed-form first-row residual of (Q + Lambda)h - lambda h.
    pub row1_residual_analytic: f64,
    /// Closed-form last-row residual b(1 - e^{-1})e^{-K} caused by
    /// cutting the up-rate at the truncation.
    pub boundary_residual_analytic: f64,
}

/// Eigen-identity residuals of the counterexample chain, computed
/// numerically from the built generator.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CounterexampleResiduals {
    pub row1: f64,
    /// max |residual| over rows 2..K-1, exactly zero in real arithmetic.
    pub interior_max: f64,
    pub boundary: f64,
}

/// Builds the constant-rate chain (b_i = b, d_i = d for i >= 2, b < d)
/// whose weighted generator has the unbounded-from-below eigenfunction
/// h(n) = e^{-n} with positive eigenvalue. The boundary potential is
/// +d_1 at state 1, carried by the birth part of the kernel, matching
/// the algebra that produces the analytic eigen pair.
pub fn counterexample_bd(b: f64, d: f64, b1: f64, mode: B1Mode, k: usize) -> Result<CounterexampleBd> {
    if b.is_nan() || d.is_nan() || b <= 0.0 || d <= 0.0 || b >= d {
        return Err(Error::InvalidParameter(format!(
            "counterexample needs 0 < b < d, got b={b}, d={d}"
        )));
    }
    if !b1.is_finite() || b1 < b {
        return Err(Error::InvalidParameter(format!(
            "boundary birth rate must satisfy b_1 >= b, got b_1={b1}"
        )));
    }
    if k < 10 {
        return Err(Error::InvalidParameter(format!(
            "counterexample needs at least 10 states, got {k}"
        )));
    }
    let e_inv = E.recip();
    let d1 = match mode {
        B1Mode::Literal => d * (E - 1.0),
        B1Mode::Consistent => d * (E - 1.0) + (b1 - b) * (1.0 - e_inv),
    };
    let params = BDParams::from_fns(k, move |x| if x == 1 { b1 } else { b }, move |_| d)?;
    let base = birth_death(&params)?;
    // Replace the kernel: the potential here is +d_1 at state 1.
    let mut birth_part = vec![0.0; k];
    birth_part[0] = d1;
    let selection =
        SelectionKernel::additive(MuFn::zeros(k), MuFn::Const(birth_part), SymPart::Zero);
    let spec = base.with_selection(selection)?;

    let lambda = b * (e_inv - 1.0) + d * (E - 1.0);
    let h = TestFunction::new((1..=k).map(|n| (-(n as f64)).exp()).collect());
    let row1_residual_analytic = match mode {
        B1Mode::Literal => (b1 - b) * (e_inv - 1.0) * e_inv,
        B1Mode::Consistent => 0.0,
    };
    let boundary_residual_analytic = b * (1.0 - e_inv) * (-(k as f64)).exp();
    Ok(CounterexampleBd {
        spec,
        h,
        lambda,
        mode,
        row1_residual_analytic,
        boundary_residual_analytic,
    })
}

impl CounterexampleBd {
    /// Applies the built weighted generator to the analytic h and reports
    /// the residual against lambda h, row by row.
    pub fn residuals(&self) -> Result<CounterexampleResiduals> {
        let a = fk_generator(&self.spec)?;
        let k = self.spec.size();
        let hv = nalgebra::DVector::from_column_slice(self.h.values());
        let r = &a * &hv - self.lambda * &hv;
        let interior_max = (1..k - 1).map(|x| r[x].abs()).fold(0.0f64, f64::max);
        Ok(CounterexampleResiduals {
            row1: r[0],
            interior_max,
            boundary: r[k - 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dominant_eigen;
    use crate::measure::{tv_distance, Measure};
    use crate::model::{sigma_reduce, validate_model, KernelForm};
    use crate::solvers::normalized_flow;

    #[test]
    fn two_allelic_matches_absorbed_companion() {
        for (a, b, p, q) in [(1.0, 1.0, 0.0, 1.0), (0.7, 1.3, 0.5, 1.2)] {
            let spec = two_allelic(a, b, p, q).unwrap();
            assert!(validate_model(&spec).admissible());
            let triplet = eigen_triplet(&spec).unwrap();

            // Restriction of the absorbed chain to the transient states is
            // the weighted generator shifted by -p.
            let absorbed = two_allelic_absorbed(a, b, p, q).unwrap();
            let sub = nalgebra::DMatrix::from_row_slice(
                2,
                2,
                &[
                    absorbed.entry(0, 0),
                    absorbed.entry(0, 1),
                    absorbed.entry(1, 0),
                    absorbed.entry(1, 1),
                ],
            );
            let eig = dominant_eigen(&sub, 1e-9, 1e-10).unwrap();
            assert!((eig.lambda - (triplet.lambda - p)).abs() < 1e-10);
            let mass: f64 = eig.left.iter().sum();
            let qsd = Measure::new(eig.left.iter().map(|v| v / mass).collect()).unwrap();
            assert!(tv_distance(&qsd, &triplet.mu_inf).unwrap() < 1e-10);
        }
    }

    #[test]
    fn two_allelic_golden_eigenvalue() {
        let spec = two_allelic(1.0, 1.0, 0.0, 1.0).unwrap();
        let triplet = eigen_triplet(&spec).unwrap();
        assert!((triplet.lambda - (-3.0 + 5.0f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_allelic_equal_rates_lose_selection() {
        let spec = two_allelic(1.0, 1.0, 0.8, 0.8).unwrap();
        let lambda = lambda_of(&spec).unwrap();
        assert!((lambda.value(0) - lambda.value(1)).abs() < 1e-15);
        // Flow limit is the stationary law of the mutation chain alone.
        let triplet = eigen_triplet(&spec).unwrap();
        assert!((triplet.mu_inf.weight(0) - 0.5).abs() < 1e-10);
        assert!((triplet.mu_inf.weight(1) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn two_allelic_reduction_rates() {
        let (p, q) = (1.0, 2.0);
        let spec = two_allelic(1.0, 1.0, p, q).unwrap();
        let reduced = sigma_reduce(&spec).unwrap();
        let mu = Measure::uniform(2);
        assert!(matches!(
            reduced.selection().form(),
            KernelForm::Additive { .. }
        ));
        assert!((reduced.selection().eval(&mu, 0, 1) - 0.0).abs() < 1e-15);
        assert!((reduced.selection().eval(&mu, 1, 0) - (q - p)).abs() < 1e-15);
    }

    #[test]
    fn birth_death_structure_and_validation() {
        let params = BDParams::from_fns(6, |x| 0.5 + 0.1 * x as f64, |x| 1.0 + 0.2 * x as f64)
            .unwrap();
        let spec = birth_death(&params).unwrap();
        assert!(validate_model(&spec).admissible());
        let q = spec.mutation();
        // Up-rate from state 2 (index 1) and down-rate from state 3 (index 2).
        assert!((q.entry(1, 2) - params.birth(2)).abs() < 1e-15);
        assert!((q.entry(2, 1) - params.death(3)).abs() < 1e-15);
        assert_eq!(q.entry(0, 2), 0.0);
        // Killing sits in the death part at state 1 only.
        let lambda = lambda_of(&spec).unwrap();
        assert!((lambda.value(0) + params.death(1)).abs() < 1e-15);
        assert!(lambda.values()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn birth_death_invalid_parameters() {
        assert!(BDParams::constant(2, 1.0, 2.0).is_err());
        assert!(BDParams::constant(10, 0.0, 2.0).is_err());
        assert!(BDParams::from_fns(10, |x| 1.0 - 0.2 * x as f64, |_| 1.0).is_err());
    }

    #[test]
    fn birth_death_downward_drift_concentrates_near_one() {
        let params = BDParams::constant(15, 0.5, 2.0).unwrap();
        let spec = birth_death(&params).unwrap();
        let triplet = eigen_triplet(&spec).unwrap();
        // The conditioned chain drifts down but is killed from state 1, so
        // the limit law piles up on the low states without touching 1 much.
        let low_mass: f64 = triplet.mu_inf.weights()[..5].iter().sum();
        let high_mass: f64 = triplet.mu_inf.weights()[10..].iter().sum();
        assert!(low_mass > 0.8, "mass near the boundary: {low_mass}");
        assert!(high_mass < 0.05, "mass near the truncation: {high_mass}");
        // The normalised flow reaches the same limit. The truncated gap is
        // only about 0.11, so the horizon must be generous.
        let mu0 = Measure::delta(15, 14);
        let flow = normalized_flow(&spec, &mu0, &[0.0, 65.0, 130.0, 260.0]).unwrap();
        let last = flow.measures().last().unwrap();
        assert!(tv_distance(last, &triplet.mu_inf).unwrap() < 1e-8);
    }

    #[test]
    fn birth_death_truncation_stability() {
        // Quadratic death rates give a unique quasi-stationary law (the
        // uniqueness series converges), so the truncated limit is
        // insensitive to the cutoff. A constant-rate chain with b < d
        // would fail this: its limit keeps drifting as K grows.
        let limit_at = |k: usize| {
            let params = BDParams::from_fns(k, |_| 1.0, |x| (x * x) as f64).unwrap();
            let spec = birth_death(&params).unwrap();
            eigen_triplet(&spec).unwrap().mu_inf
        };
        let small = limit_at(15);
        let large = limit_at(30);
        // Pad the smaller truncation with zero mass and compare.
        let mut padded = small.weights().to_vec();
        padded.resize(30, 0.0);
        let tv = 0.5
            * padded
                .iter()
                .zip(large.weights())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        assert!(tv < 1e-6, "truncation moved the limit by {tv}");
    }

    #[test]
    fn series_constant_rates_diverges() {
        let params = BDParams::constant(400, 1.0, 2.0).unwrap();
        let report = bd_qsd_uniqueness_check(&params, 200).unwrap();
        assert_eq!(report.verdict, SeriesVerdict::Diverging);
        // Terms are 1/(d - b) = 1; truncating the inner tails at K costs
        // a geometric series summing to about one full term.
        let sums = &report.partial_sums;
        let last = *sums.last().unwrap();
        assert!((last - (sums.len() as f64 - 1.0)).abs() < 0.1, "{last}");
        // Stable under doubling the number of terms.
        let doubled = bd_qsd_uniqueness_check(&params, 400).unwrap();
        assert_eq!(doubled.verdict, SeriesVerdict::Diverging);
        // Partial sums are nondecreasing.
        assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn series_quadratic_death_converges() {
        let params = BDParams::from_fns(400, |_| 1.0, |x| (x * x) as f64).unwrap();
        let report = bd_qsd_uniqueness_check(&params, 200).unwrap();
        assert_eq!(report.verdict, SeriesVerdict::Converging);
        let doubled = bd_qsd_uniqueness_check(&params, 400).unwrap();
        assert_eq!(doubled.verdict, SeriesVerdict::Converging);
        // The tail statistic should look like the 1/k^2 Raabe limit.
        assert!(report.raabe_statistic > 1.5, "{}", report.raabe_statistic);
    }

    #[test]
    fn series_upward_drift_diverges() {
        // b > d: the inner tails themselves blow up.
        let params = BDParams::constant(400, 2.0, 1.0).unwrap();
        let report = bd_qsd_uniqueness_check(&params, 120).unwrap();
        assert_eq!(report.verdict, SeriesVerdict::Diverging);
    }

    #[test]
    fn rate_criterion_on_birth_death_core() {
        let params = BDParams::constant(12, 1.0, 2.0).unwrap();
        let spec = birth_death(&params).unwrap();
        // Core {state 1}: only state 2 flows into it; states >= 3 give 0.
        let report = rate_criterion_check(&spec, &[0]).unwrap();
        assert!((report.rhs - 0.0).abs() < 1e-15);
        assert!((report.lhs - 0.0).abs() < 1e-15);
        assert!(!report.holds);
    }

    #[test]
    fn rate_criterion_strongly_inward_chain_holds() {
        // Every state outside the core flows into it at rate 10, well
        // above the potential spread.
        let n = 4;
        let q = RateMatrix::from_off_diagonal(n, |x, y| {
            if x != 0 && y == 0 {
                10.0
            } else if y == x + 1 {
                0.5
            } else {
                0.0
            }
        })
        .unwrap();
        let selection = SelectionKernel::additive(
            MuFn::Const(vec![0.0, 0.3, 0.1, 0.4]),
            MuFn::Const(vec![0.5, 0.0, 0.0, 0.0]),
            SymPart::Zero,
        );
        let spec = ModelSpec::new(StateSpace::new(n).unwrap(), q, selection).unwrap();
        let report = rate_criterion_check(&spec, &[0]).unwrap();
        assert!(report.holds, "lhs {} rhs {}", report.lhs, report.rhs);
    }

    #[test]
    fn rate_criterion_rejects_degenerate_cores() {
        let spec = two_allelic(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!(rate_criterion_check(&spec, &[]).is_err());
        assert!(rate_criterion_check(&spec, &[0, 1]).is_err());
        assert!(rate_criterion_check(&spec, &[7]).is_err());
    }

    #[test]
    fn spectral_criterion_finite_space_holds() {
        let spec = two_allelic(1.0, 1.0, 0.0, 1.0).unwrap();
        let report = spectral_criterion_check(&spec, 0.25).unwrap();
        assert!(report.holds);
        assert!(report.h_inv_norm.is_finite());
        assert!(!report.k_eps.is_empty());
    }

    #[test]
    fn spectral_criterion_counterexample_fails_under_doubling() {
        let family = |k: usize| {
            counterexample_bd(1.0, 2.0, 1.5, B1Mode::Consistent, k).map(|c| c.spec)
        };
        let report = spectral_criterion_check_doubling(family, 10, 0.5).unwrap();
        assert!(!report.holds);
        let doubling = report.doubling.unwrap();
        // The eigenfunction decays like e^{-n}, so max 1/h blows up
        // roughly like e^K across the doubling.
        assert!(!doubling.h_inv_stable);
        assert!(
            doubling.h_inv_norms.1 > 100.0 * doubling.h_inv_norms.0,
            "h_inv grew only from {} to {}",
            doubling.h_inv_norms.0,
            doubling.h_inv_norms.1
        );
        assert!(doubling.k_eps_stable, "K_eps should stay {{state 1}}");
    }

    #[test]
    fn spectral_criterion_killed_chain_core_grows() {
        // Constant-rate chain with killing at state 1: the potential is 0
        // away from the boundary while lambda < 0, so K_eps is the whole
        // truncation and doubles with it.
        let family = |k: usize| birth_death(&BDParams::constant(k, 0.5, 2.0)?);
        let report = spectral_criterion_check_doubling(family, 12, 0.1).unwrap();
        assert!(!report.holds);
        let doubling = report.doubling.unwrap();
        assert!(!doubling.k_eps_stable);
    }

    #[test]
    fn counterexample_lambda_and_interior_rows() {
        let case = counterexample_bd(1.0, 2.0, 1.5, B1Mode::Literal, 20).unwrap();
        assert!((case.lambda - 2.8044430980895323).abs() < 1e-15);
        let residuals = case.residuals().unwrap();
        assert!(
            residuals.interior_max <= 1e-12,
            "interior residual {}",
            residuals.interior_max
        );
        assert!((residuals.boundary - case.boundary_residual_analytic).abs() <= 1e-12);
        assert!(validate_model(&case.spec).admissible());
    }

    #[test]
    fn counterexample_row1_residual_by_mode() {
        let (b, d, b1) = (1.0, 2.0, 1.7);
        let literal = counterexample_bd(b, d, b1, B1Mode::Literal, 15).unwrap();
        let rp = literal.residuals().unwrap();
        let expected = (b1 - b) * (E.recip() - 1.0) * E.recip();
        assert!((literal.row1_residual_analytic - expected).abs() < 1e-15);
        assert!((rp.row1 - expected).abs() <= 1e-12, "row1 {}", rp.row1);

        let consistent = counterexample_bd(b, d, b1, B1Mode::Consistent, 15).unwrap();
        let rc = consistent.residuals().unwrap();
        assert_eq!(consistent.row1_residual_analytic, 0.0);
        assert!(rc.row1.abs() <= 1e-12, "row1 {}", rc.row1);

        // With b_1 = b the two modes coincide and both rows are exact.
        let degenerate = counterexample_bd(b, d, b, B1Mode::Literal, 15).unwrap();
        assert!(degenerate.residuals().unwrap().row1.abs() <= 1e-12);
    }

    #[test]
    fn counterexample_rejects_bad_parameters() {
        assert!(counterexample_bd(2.0, 1.0, 2.5, B1Mode::Literal, 15).is_err());
        assert!(counterexample_bd(1.0, 2.0, 0.5, B1Mode::Literal, 15).is_err());
        assert!(counterexample_bd(1.0, 2.0, 1.5, B1Mode::Literal, 5).is_err());
    }
}
