//! Dense numerical kernels: matrix exponential and dominant eigenpairs.
//!
//! Policy for desk-scale matrices (tens of states): accuracy over speed.
//! The exponential uses scaling-and-squaring with the order-13 Pade
//! approximant; `expm_taylor` is an independent reference route used by
//! cross-checks, and `evolve_law_uniformization` propagates a law under a
//! conservative-or-subconservative generator without forming the
//! exponential, which keeps probabilities nonnegative by construction.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Order-13 Pade coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// 1-norm threshold above which the argument is scaled down.
const PADE13_THETA: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// e^A by scaling-and-squaring with the order-13 Pade approximant. Falls
/// back to the scaled Taylor route if the Pade solve degenerates.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Numerical(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm argument has non-finite entries".into()));
    }
    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);

    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13;

    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = match denom.lu().solve(&numer) {
        Some(r) => r,
        None => return expm_taylor(a),
    };
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm produced non-finite entries".into()));
    }
    Ok(r)
}

/// Reference exponential: scale until the norm is tiny, run the plain
/// Taylor series to machine precision, square back up. Slower than `expm`
/// and used to cross-check it.
pub fn expm_taylor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > 0.0625 {
        (norm / 0.0625).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=40 {
        term = (&term * &scaled) / k as f64;
        sum += &term;
        if one_norm(&term) < 1e-20 * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm_taylor produced non-finite entries".into()));
    }
    Ok(sum)
}

/// Propagates a law row-vector: returns p e^{tM} for a generator M whose
/// off-diagonals are nonnegative and whose row sums are nonpositive
/// (conservative or killed). Uniformization: with c >= max |M_ii| and
/// P = I + M/c, p e^{tM} = sum_k Poisson(ct, k) p P^k.
pub fn evolve_law_uniformization(m: &DMatrix<f64>, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = m.nrows();
    if p0.len() != n {
        return Err(Error::SizeMismatch {
            context: "law vector",
            expected: n,
            got: p0.len(),
        });
    }
    if t < 0.0 {
        return Err(Error::Numerical("uniformization needs t >= 0".into()));
    }
    let c = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max);
    if c == 0.0 || t == 0.0 {
        return Ok(p0.to_vec());
    }
    let ct = c * t;
    if ct > 700.0 {
        // e^{-ct} underflows; split the interval and recurse.
        let half = evolve_law_uniformization(m, p0, t / 2.0)?;
        return evolve_law_uniformization(m, &half, t / 2.0);
    }
    // P = I + M/c has nonnegative entries.
    let p_mat = DMatrix::<f64>::identity(n, n) + m / c;
    let mut w: Vec<f64> = p0.to_vec();
    let mut poisson = (-ct).exp();
    let mut acc: Vec<f64> = w.iter().map(|v| v * poisson).collect();
    let mut tail = 1.0 - poisson;
    let mut k = 0u64;
    while tail > 1e-16 && k < 100_000 {
        k += 1;
        // w <- w P (row-vector multiply).
        let mut next = vec![0.0; n];
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += wi * p_mat[(i, j)];
            }
        }
        w = next;
        poisson *= ct / k as f64;
        for (a, v) in acc.iter_mut().zip(&w) {
            *a += poisson * v;
        }
        tail -= poisson;
    }
    Ok(acc)
}

/// Dominant (rightmost) eigenvalue with left/right eigenvectors and the
/// spectral gap to the rest of the spectrum.
#[derive(Debug, Clone)]
pub struct DominantEigen {
    pub lambda: f64,
    /// Right eigenvector, sign-fixed nonnegative, max-norm 1.
    pub right: Vec<f64>,
    /// Left eigenvector, sign-fixed nonnegative, max-norm 1.
    pub left: Vec<f64>,
    /// lambda minus the largest real part among the remaining eigenvalues.
    pub gap: f64,
    /// Independent estimate from shifted power iteration, for cross-checks.
    pub power_iteration_lambda: f64,
}

/// Computes the dominant eigenpair of a Metzler matrix (off-diagonals >= 0),
/// e.g. Q + diag(Lambda). The eigenvalue comes from the dense Schur form,
/// the eigenvectors from inverse iteration, and a shifted power iteration
/// cross-checks the eigenvalue.
///
/// Errors when the dominant eigenvalue is complex or not simple within
/// `gap_tol`, or when an eigenvector mixes signs beyond `sign_tol` relative
/// to its largest entry (broken Perron structure: reducible or truncated
/// too aggressively).
pub fn dominant_eigen(a: &DMatrix<f64>, gap_tol: f64, sign_tol: f64) -> Result<DominantEigen> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Numerical("dominant_eigen needs a nonempty square matrix".into()));
    }
    if n == 1 {
        return Ok(DominantEigen {
            lambda: a[(0, 0)],
            right: vec![1.0],
            left: vec![1.0],
            gap: f64::INFINITY,
            power_iteration_lambda: a[(0, 0)],
        });
    }

    let scale = one_norm(a).max(1.0);
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let eigs = schur.complex_eigenvalues();

    let mut idx = 0;
    for i in 1..n {
        if eigs[i].re > eigs[idx].re {
            idx = i;
        }
    }
    let lambda = eigs[idx].re;
    if eigs[idx].im.abs() > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "dominant eigenvalue has imaginary part {:e}",
            eigs[idx].im
        )));
    }
    let mut second = f64::NEG_INFINITY;
    for i in 0..n {
        if i != idx {
            second = second.max(eigs[i].re);
        }
    }
    let gap = lambda - second;
    if gap <= gap_tol * scale {
        return Err(Error::EigenNotSimple { gap });
    }

    // The Schur eigenvalue carries an error amplified by the eigenvalue
    // condition number, which floors the eigenvector residuals on badly
    // non-normal matrices. A two-sided Rayleigh-quotient loop refines the
    // eigenvalue and re-runs inverse iteration until the residuals stop
    // improving.
    let at = a.transpose();
    let (right, res_r) = inverse_iteration(a, lambda, scale, None)?;
    let (left, res_l) = inverse_iteration(&at, lambda, scale, None)?;
    let mut best = (lambda, right, left, res_r.max(res_l));
    let mut shift = lambda;
    for _ in 0..5 {
        if best.3 <= 1e-14 * scale {
            break;
        }
        let (_, ref right, ref left, _) = best;
        let denom = left.dot(right);
        if denom.abs() < 1e-300 {
            break;
        }
        let rq = left.dot(&(a * right)) / denom;
        if !rq.is_finite() || ((rq - shift).abs() <= f64::EPSILON * scale && shift != lambda) {
            break;
        }
        shift = rq;
        let (r2, rr) = inverse_iteration(a, shift, scale, Some(right))?;
        let (l2, rl) = inverse_iteration(&at, shift, scale, Some(left))?;
        if rr.max(rl) < best.3 {
            best = (shift, r2, l2, rr.max(rl));
        } else {
            break;
        }
    }
    let (lambda, right, left, worst_residual) = best;
    if worst_residual > 1e-6 * scale {
        return Err(Error::Numerical(format!(
            "eigenvector residual {worst_residual:e} after refinement (scale {scale:e})"
        )));
    }
    let right = fix_sign(right.iter().copied().collect(), sign_tol)?;
    let left = fix_sign(left.iter().copied().collect(), sign_tol)?;

    let power_iteration_lambda = power_iteration_estimate(a, lambda, scale);

    Ok(DominantEigen {
        lambda,
        right,
        left,
        gap,
        power_iteration_lambda,
    })
}

/// Inverse iteration with a slightly perturbed shift; converges in a few
/// steps to the eigenvector of the eigenvalue nearest the shift. Returns
/// the best vector found together with its residual max |Av - lambda v|,
/// leaving acceptance to the caller.
fn inverse_iteration(
    a: &DMatrix<f64>,
    lambda: f64,
    scale: f64,
    start: Option<&nalgebra::DVector<f64>>,
) -> Result<(nalgebra::DVector<f64>, f64)> {
    let n = a.nrows();
    let mut delta = 1e-12 * scale;
    let mut best: Option<(nalgebra::DVector<f64>, f64)> = None;
    'retry: for _ in 0..6 {
        let shifted = a - DMatrix::<f64>::identity(n, n) * (lambda + delta);
        let lu = shifted.lu();
        let mut v = match start {
            Some(v0) => v0.clone(),
            None => nalgebra::DVector::<f64>::from_element(n, 1.0 / (n as f64).sqrt()),
        };
        for _ in 0..200 {
            let next = match lu.solve(&v) {
                Some(x) => x,
                None => {
                    delta *= 16.0;
                    continue 'retry;
                }
            };
            let norm = next.amax();
            if !norm.is_finite() || norm == 0.0 {
                delta *= 16.0;
                continue 'retry;
            }
            let next = next / norm;
            // Residual against the unperturbed eigenvalue.
            let res = (a * &next - &next * lambda).amax();
            v = next;
            if best.as_ref().is_none_or(|(_, b)| res < *b) {
                best = Some((v.clone(), res));
            }
            if res <= 1e-14 * scale {
                break 'retry;
            }
        }
        delta *= 16.0;
    }
    best.ok_or_else(|| {
        Error::Numerical("inverse iteration failed to produce an eigenvector".into())
    })
}

fn fix_sign(mut v: Vec<f64>, sign_tol: f64) -> Result<Vec<f64>> {
    let pos: f64 = v.iter().filter(|x| **x > 0.0).sum();
    let neg: f64 = v.iter().filter(|x| **x < 0.0).map(|x| -x).sum();
    if neg > pos {
        for x in &mut v {
            *x = -*x;
        }
    }
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Err(Error::SignStructure("zero eigenvector".into()));
    }
    let worst_neg = v.iter().copied().fold(0.0f64, |m, x| m.min(x));
    if worst_neg < -sign_tol * max {
        return Err(Error::SignStructure(format!(
            "mixed-sign eigenvector (most negative entry {:e} of max {:e})",
            worst_neg, max
        )));
    }
    for x in &mut v {
        *x = (*x / max).max(0.0);
    }
    Ok(v)
}

/// Shifted power iteration on A + cI (entrywise nonnegative for Metzler A):
/// independent estimate of the dominant eigenvalue.
fn power_iteration_estimate(a: &DMatrix<f64>, lambda_hint: f64, scale: f64) -> f64 {
    let n = a.nrows();
    let c = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max) + 1.0;
    let shifted = a + DMatrix::<f64>::identity(n, n) * c;
    let mut v = nalgebra::DVector::<f64>::from_element(n, 1.0);
    let mut est = lambda_hint + c;
    for _ in 0..200_000 {
        let next = &shifted * &v;
        let norm = next.sum();
        if !norm.is_finite() || norm <= 0.0 {
            break;
        }
        let next = next / norm;
        let new_est = (&shifted * &next).sum() / next.sum();
        let done = (new_est - est).abs() <= 1e-13 * scale.max(c);
        est = new_est;
        v = next;
        if done {
            break;
        }
    }
    est - c
}
