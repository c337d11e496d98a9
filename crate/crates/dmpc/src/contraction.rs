//! Numerical certification of the PDGD's geometric convergence rate: builds
//! the constant metric M, the per-agent update Jacobian blocks, and checks
//! both the block (Schur-complement) test and the direct generalized
//! eigenvalue test  lambda_max(M^{-1/2} Xi' M Xi M^{-1/2}) <= tau^2.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const SYM_TOL: f64 = 1e-12;
/// Symmetric eigensolve noise floor at these dimensions.
pub const PSD_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("sigma bounds must satisfy 0 < sigma_lo <= sigma_hi, got ({sigma_lo}, {sigma_hi})")]
    NonpositiveBounds { sigma_lo: f64, sigma_hi: f64 },
    #[error("metric not positive definite: alpha*beta*d = {product} >= 1")]
    MetricNotPD { product: f64 },
    #[error("theta sample {index} is not symmetric")]
    AsymmetricSample { index: usize },
}

/// Certificate that the per-agent update contracts at rate tau in metric M.
#[derive(Debug, Clone)]
pub struct ContractionCertificate {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub m_metric: DMatrix<f64>,
    pub tau: f64,
    /// Min eigenvalue of the lower-right certificate block, over samples.
    pub upsilon3_mineig: f64,
    /// Min eigenvalue of the Schur complement, over samples.
    pub schur_mineig: f64,
    /// Max generalized eigenvalue of Xi'MXi vs M, over samples.
    pub direct_lambda_max: f64,
    pub valid: bool,
}

/// Eigenvalue bounds of Theta = G H^{-1} G' from the cost curvature interval
/// [m_J, L_J] and the coupling Gram interval [zeta_lo, zeta_hi]. The lower
/// bound presumes G has full row rank; callers must degrade it to the row
/// space when G is wide or rank deficient.
pub fn theta_bounds(m_j: f64, l_j: f64, zeta_lo: f64, zeta_hi: f64) -> Result<(f64, f64), CertError> {
    if !(m_j > 0.0 && l_j >= m_j) {
        return Err(CertError::NonpositiveBounds { sigma_lo: m_j, sigma_hi: l_j });
    }
    if !(zeta_lo > 0.0 && zeta_hi >= zeta_lo) {
        return Err(CertError::NonpositiveBounds { sigma_lo: zeta_lo, sigma_hi: zeta_hi });
    }
    Ok((zeta_lo / l_j, zeta_hi / m_j))
}

/// The 2Np x 2Np block metric [[bd I, abd I], [abd I, a I]].
pub fn metric_matrix(alpha: f64, beta: f64, degree: f64, np_dim: usize) -> DMatrix<f64> {
    let bd = beta * degree;
    let abd = alpha * bd;
    let eye = DMatrix::identity(np_dim, np_dim);
    let mut m = DMatrix::zeros(2 * np_dim, 2 * np_dim);
    m.view_mut((0, 0), (np_dim, np_dim)).copy_from(&(&eye * bd));
    m.view_mut((0, np_dim), (np_dim, np_dim)).copy_from(&(&eye * abd));
    m.view_mut((np_dim, 0), (np_dim, np_dim)).copy_from(&(&eye * abd));
    m.view_mut((np_dim, np_dim), (np_dim, np_dim)).copy_from(&(&eye * alpha));
    m
}

/// Per-agent update Jacobian for a given Theta sample:
/// [[I - a Theta, -a I], [bd I, I]].
pub fn update_jacobian(alpha: f64, beta: f64, degree: f64, theta: &DMatrix<f64>) -> DMatrix<f64> {
    let np_dim = theta.nrows();
    let eye = DMatrix::identity(np_dim, np_dim);
    let mut xi = DMatrix::zeros(2 * np_dim, 2 * np_dim);
    xi.view_mut((0, 0), (np_dim, np_dim)).copy_from(&(&eye - theta * alpha));
    xi.view_mut((0, np_dim), (np_dim, np_dim)).copy_from(&(&eye * (-alpha)));
    xi.view_mut((np_dim, 0), (np_dim, np_dim)).copy_from(&(&eye * (beta * degree)));
    xi.view_mut((np_dim, np_dim), (np_dim, np_dim)).copy_from(&eye);
    xi
}

fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Assembles the energy-difference blocks for every Theta sample and checks
/// positive semidefiniteness two ways: the Schur complement of the block form
/// and the direct generalized eigenvalue test against tau^2 * M.
pub fn build_certificate(
    alpha: f64,
    beta: f64,
    degree: f64,
    rho: f64,
    sigma_lo: f64,
    sigma_hi: f64,
    theta_samples: &[DMatrix<f64>],
) -> Result<ContractionCertificate, CertError> {
    if !(sigma_lo > 0.0 && sigma_hi >= sigma_lo) {
        return Err(CertError::NonpositiveBounds { sigma_lo, sigma_hi });
    }
    let abd = alpha * beta * degree;
    if abd >= 1.0 {
        return Err(CertError::MetricNotPD { product: abd });
    }
    let tau = (1.0 - rho * abd).sqrt();
    let tau2 = tau * tau;

    let np_dim = theta_samples.first().map_or(1, |t| t.nrows());
    let m_metric = metric_matrix(alpha, beta, degree, np_dim);
    let m_chol = m_metric.clone().cholesky().ok_or(CertError::MetricNotPD { product: abd })?;

    let mut upsilon3_mineig = f64::INFINITY;
    let mut schur_mineig = f64::INFINITY;
    let mut direct_lambda_max = f64::NEG_INFINITY;

    for (index, theta) in theta_samples.iter().enumerate() {
        if (theta - theta.transpose()).abs().max() > 1e-9 {
            return Err(CertError::AsymmetricSample { index });
        }
        let np_s = theta.nrows();
        let m_s = if np_s == np_dim { m_metric.clone() } else { metric_matrix(alpha, beta, degree, np_s) };
        let xi = update_jacobian(alpha, beta, degree, theta);
        let pi = xi.transpose() * &m_s * &xi - &m_s;
        let upsilon = &m_s * (tau2 - 1.0) - &pi;

        debug_assert!((&pi - pi.transpose()).abs().max() <= SYM_TOL * (1.0 + pi.abs().max()));
        debug_assert!((&upsilon - upsilon.transpose()).abs().max() <= SYM_TOL * (1.0 + upsilon.abs().max()));

        let u1 = upsilon.view((0, 0), (np_s, np_s)).clone_owned();
        let u2 = upsilon.view((np_s, 0), (np_s, np_s)).clone_owned();
        let u3 = upsilon.view((np_s, np_s), (np_s, np_s)).clone_owned();

        let u3_min = sym_min_eig(&u3);
        upsilon3_mineig = upsilon3_mineig.min(u3_min);
        if u3_min > 0.0 {
            let u3_inv = u3.clone().cholesky().expect("u3 positive definite").inverse();
            let schur = &u1 - u2.transpose() * u3_inv * &u2;
            schur_mineig = schur_mineig.min(sym_min_eig(&schur));
        } else {
            schur_mineig = f64::NEG_INFINITY;
        }

        // direct test: lambda_max of L^{-1} (Xi'MXi) L^{-T} with M = LL'
        let xtmx = xi.transpose() * &m_s * &xi;
        let l_fac = if np_s == np_dim {
            m_chol.l()
        } else {
            m_s.clone().cholesky().ok_or(CertError::MetricNotPD { product: abd })?.l()
        };
        let inv_l = l_fac
            .clone()
            .try_inverse()
            .ok_or(CertError::MetricNotPD { product: abd })?;
        let sym = &inv_l * xtmx * inv_l.transpose();
        direct_lambda_max = direct_lambda_max.max(sym_max_eig(&((&sym + sym.transpose()).scale(0.5))));
    }

    let valid = upsilon3_mineig > 0.0
        && schur_mineig >= -PSD_SLACK
        && direct_lambda_max <= tau2 + PSD_SLACK;

    Ok(ContractionCertificate {
        sigma_lo,
        sigma_hi,
        m_metric,
        tau,
        upsilon3_mineig,
        schur_mineig,
        direct_lambda_max,
        valid,
    })
}

/// Squared M-weighted distance (the Riemannian energy for a constant metric,
/// where geodesics are straight lines).
pub fn riemannian_energy(y: &DVector<f64>, y_star: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    let d = y - y_star;
    d.dot(&(m * &d))
}

/// Step-size bound report: the rate-condition bound as stated (sigma_hi) and
/// the bound actually required by the energy-decrease certificate (sigma_lo).
#[derive(Debug, Clone)]
pub struct StepsizeCheck {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_bound: f64,
    pub beta_bound_nominal: f64,
    pub beta_bound_certified: f64,
    pub alpha_ok: bool,
    pub beta_ok_nominal: bool,
    pub beta_ok_certified: bool,
}

/// Evaluates whether given (alpha, beta) satisfy the step-size bounds for the
/// worst-case agent degree. Diagnostic only; nothing is asserted here.
pub fn check_stepsizes(
    alpha: f64,
    beta: f64,
    sigma_lo: f64,
    sigma_hi: f64,
    degrees: &[f64],
    rho: f64,
) -> StepsizeCheck {
    let mut alpha_bound = f64::INFINITY;
    let mut beta_nom = f64::INFINITY;
    let mut beta_cert = f64::INFINITY;
    for &d in degrees {
        if d <= 0.0 {
            continue;
        }
        beta_nom = beta_nom.min(sigma_hi / (2.0 * d));
        beta_cert = beta_cert.min(sigma_lo / (2.0 * d));
        let den = 2.0 * sigma_hi * sigma_hi - (3.0 + rho) * sigma_lo * beta * d;
        if den > 0.0 {
            alpha_bound = alpha_bound.min((1.0 - rho) * sigma_lo / den);
        } else {
            alpha_bound = 0.0;
        }
    }
    StepsizeCheck {
        alpha,
        beta,
        alpha_bound,
        beta_bound_nominal: beta_nom,
        beta_bound_certified: beta_cert,
        alpha_ok: alpha <= alpha_bound,
        beta_ok_nominal: beta <= beta_nom,
        beta_ok_certified: beta <= beta_cert,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_bounds_identity_case() {
        assert_eq!(theta_bounds(1.0, 1.0, 1.0, 1.0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn theta_bounds_scaled_orthogonal() {
        // G with orthogonal rows scaled by 2 and H = I gives Theta = 4I
        let (lo, hi) = theta_bounds(1.0, 1.0, 4.0, 4.0).unwrap();
        assert_eq!((lo, hi), (4.0, 4.0));
    }

    #[test]
    fn theta_bounds_rejects_bad_input() {
        assert!(theta_bounds(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(theta_bounds(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn certificate_valid_inside_bounds() {
        // sigma_lo = sigma_hi = 1, d = 2, rho = 0.5: beta = 0.2475,
        // alpha bound = 0.5/(2 - 3.5*0.495) = 1.8692; use 0.99 of it
        let beta = 0.2475;
        let alpha = 0.99 * (0.5 / (2.0 - 3.5 * 0.495));
        assert_abs_diff_eq!(alpha, 1.850_467_289_719_626_2, epsilon = 1e-12);
        let theta = DMatrix::identity(3, 3);
        let cert = build_certificate(alpha, beta, 2.0, 0.5, 1.0, 1.0, &[theta]).unwrap();
        assert!(cert.valid, "cert: {cert:?}");
        assert!(cert.upsilon3_mineig > 0.0);
        assert!(cert.schur_mineig >= -PSD_SLACK);
        assert!(cert.direct_lambda_max <= cert.tau * cert.tau + PSD_SLACK);
        let expect_tau = (1.0 - 0.5 * alpha * beta * 2.0).sqrt();
        assert_abs_diff_eq!(cert.tau, expect_tau, epsilon = 1e-14);
    }

    #[test]
    fn certificate_invalid_when_alpha_violates_bound() {
        // alpha an order of magnitude past its bound (beta kept small so the
        // metric stays positive definite); the direct test must fail too
        let alpha = 18.7;
        let beta = 0.02;
        let theta = DMatrix::identity(2, 2);
        let cert = build_certificate(alpha, beta, 2.0, 0.5, 1.0, 1.0, &[theta]).unwrap();
        assert!(!cert.valid);
        assert!(cert.schur_mineig < 0.0);
        assert!(cert.direct_lambda_max > cert.tau * cert.tau + PSD_SLACK);
    }

    #[test]
    fn rho_zero_degenerates_to_no_contraction() {
        let theta = DMatrix::identity(2, 2);
        let cert = build_certificate(0.5, 0.1, 2.0, 0.0, 1.0, 1.0, &[theta]).unwrap();
        assert_abs_diff_eq!(cert.tau, 1.0, epsilon = 1e-15);
        // Upsilon_3 = (1 - rho) a^2 b d I stays positive
        let expect = 0.5 * 0.5 * 0.1 * 2.0;
        assert_abs_diff_eq!(cert.upsilon3_mineig, expect, epsilon = 1e-12);
    }

    #[test]
    fn upsilon3_closed_form() {
        let (alpha, beta, d, rho) = (0.7, 0.12, 3.0, 0.3);
        let theta = DMatrix::identity(2, 2) * 0.8;
        let cert = build_certificate(alpha, beta, d, rho, 0.5, 1.0, &[theta]).unwrap();
        let expect = (1.0 - rho) * alpha * alpha * beta * d;
        assert_abs_diff_eq!(cert.upsilon3_mineig, expect, epsilon = 1e-12);
    }

    #[test]
    fn metric_rejected_when_abd_exceeds_one() {
        let theta = DMatrix::identity(1, 1);
        match build_certificate(3.0, 0.4, 1.0, 0.5, 1.0, 1.0, &[theta]) {
            Err(CertError::MetricNotPD { product }) => assert!(product >= 1.0),
            other => panic!("expected MetricNotPD, got {other:?}"),
        }
    }

    #[test]
    fn energy_basics_and_reordered_accumulation() {
        let m = DMatrix::identity(4, 4);
        let y = DVector::from_row_slice(&[1.0, 2.0, -1.0, 0.5]);
        assert_eq!(riemannian_energy(&y, &y, &m), 0.0);
        let z = DVector::zeros(4);
        assert_abs_diff_eq!(riemannian_energy(&y, &z, &m), y.norm_squared(), epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let m_pd = &a * a.transpose() + DMatrix::identity(4, 4);
            let y1 = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let y2 = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let e = riemannian_energy(&y1, &y2, &m_pd);
            // reordered accumulation: sum over explicit index pairs, reversed
            let d = &y1 - &y2;
            let mut acc = 0.0;
            for i in (0..4).rev() {
                for j in (0..4).rev() {
                    acc += d[i] * m_pd[(i, j)] * d[j];
                }
            }
            assert_abs_diff_eq!(e, acc, epsilon = 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn stepsize_check_reports_both_bounds() {
        // benchmark-scale sigma interval: beta = 0.19 exceeds both bounds
        // (certified 0.0271/4 and rate-form 0.6154/4)
        let chk = check_stepsizes(0.2, 0.19, 0.0271, 0.6154, &[2.0, 2.0, 2.0, 2.0], 0.5);
        assert!(chk.beta_bound_certified < chk.beta_bound_nominal);
        assert!(!chk.beta_ok_certified);
        assert!(!chk.beta_ok_nominal);
        assert!(!chk.alpha_ok);
    }
}
