//! Closed-form quantities that make the optimizer's behavior checkable:
//! spectral diagnostics, a spectrum-driven lower bound on polynomial
//! orthogonalization error, the approximation/preconditioning error split,
//! first-order whitening expansions, convergence-rate constants, measured
//! orthogonalization inexactness, and gradient-alignment margins.
//!
//! Everything here is deterministic given its inputs, so each formula can be
//! (and is) frozen against independent high-precision evaluation in tests.

use crate::equilibrate::{diag_pre, EquilConfig, EquilMode};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_inner, polar_factor, row_col_sq_norms, spectral_norm, svd, Matrix,
};
use crate::newton_schulz::{ns5, ns_run, NsConfig, NsRecord};

// ── spectral diagnostics ─────────────────────────────────────────────────────

/// Scale-free summary of a nonzero matrix's singular spectrum.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Positive singular values, descending; length is the numerical rank r.
    pub singular_values: Vec<f64>,
    /// ||A||_F^2 / sigma_1^2, always in [1, r].
    pub stable_rank: f64,
    /// sigma_1 / sigma_r over the positive spectrum.
    pub condition_number: f64,
    /// Per-index ratios sigma_1 / sigma_i.
    pub kappa: Vec<f64>,
    /// Spectral energy fractions p_i = sigma_i^2 / ||A||_F^2; sums to 1.
    pub energy: Vec<f64>,
    /// Shannon entropy of the energy fractions, natural log, in [0, ln r].
    pub entropy: f64,
}

/// Computes the spectral diagnostics of `a`.
///
/// # Errors
/// `Domain` for the zero matrix (the condition number is undefined);
/// SVD convergence failures propagate.
pub fn spectral_report(a: &Matrix) -> Result<SpectralReport> {
    let s = svd(a)?;
    let r = s.rank();
    if r == 0 {
        return Err(Error::Domain(
            "spectral report is undefined for the zero matrix".into(),
        ));
    }
    let sv = s.singular_values;
    let fro_sq: f64 = sv.iter().map(|x| x * x).sum();
    let top = sv[0];
    let energy: Vec<f64> = sv.iter().map(|x| x * x / fro_sq).collect();
    let entropy = -energy.iter().map(|&p| p * p.ln()).sum::<f64>();
    Ok(SpectralReport {
        stable_rank: fro_sq / (top * top),
        condition_number: top / sv[r - 1],
        kappa: sv.iter().map(|&x| top / x).collect(),
        energy,
        entropy,
        singular_values: sv,
    })
}

// ── orthogonalization error floor ────────────────────────────────────────────

/// Lower bound on the normalized distance to the polar factor after k steps
/// of any validated degree-5 iteration with leading coefficient `a`.
#[derive(Debug, Clone)]
pub struct ErrorLowerBound {
    /// bound_per_k[k] = (1/sqrt(r)) * sqrt(sum_i max(0, 1 - a^k/(kappa_i sqrt(sr)))^2).
    pub bound_per_k: Vec<f64>,
    /// Per-index transition step counts tau_i = log_a(kappa_i * sqrt(sr)):
    /// how many multiplications by `a` direction i needs to leave the linear
    /// regime.
    pub tau: Vec<f64>,
    /// tau_r - tau_1, which collapses to log_a of the condition number.
    pub tau_spread: f64,
}

/// Evaluates the error floor for `g` at k = 0..=k_max.
///
/// Since every validated polynomial satisfies phi(s) <= a s, a singular value
/// starting at sigma_i/||G||_F = 1/(kappa_i sqrt(sr)) cannot exceed a^k times
/// that after k steps, so the gap to 1 in direction i is at least
/// (1 - a^k/(kappa_i sqrt(sr)))_+ no matter which valid coefficients are used.
///
/// # Errors
/// `Domain` for the zero matrix or `a <= 1`; SVD failures propagate.
pub fn error_lower_bound(g: &Matrix, a: f64, k_max: usize) -> Result<ErrorLowerBound> {
    if !(a.is_finite() && a > 1.0) {
        return Err(Error::Domain(format!(
            "leading coefficient a = {a} must exceed 1"
        )));
    }
    let report = spectral_report(g)?;
    let r = report.singular_values.len();
    let sqrt_sr = report.stable_rank.sqrt();
    let ln_a = a.ln();

    let tau: Vec<f64> = report
        .kappa
        .iter()
        .map(|&k| (k * sqrt_sr).ln() / ln_a)
        .collect();
    let tau_spread = tau[r - 1] - tau[0];

    let bound_per_k = (0..=k_max)
        .map(|k| {
            let growth = a.powi(k as i32);
            let sum: f64 = report
                .kappa
                .iter()
                .map(|&kap| {
                    let term = (1.0 - growth / (kap * sqrt_sr)).max(0.0);
                    term * term
                })
                .sum();
            (sum / r as f64).sqrt()
        })
        .collect();

    Ok(ErrorLowerBound {
        bound_per_k,
        tau,
        tau_spread,
    })
}

// ── approximation error vs preconditioning bias ──────────────────────────────

/// Split of the total orthogonalization error into the finite-step
/// approximation part and the part caused by preconditioning first.
#[derive(Debug, Clone, Copy)]
pub struct ErrorDecomposition {
    /// ||ns_run(S(M)) - Orth(S(M))||_F: how far the iteration stops short of
    /// the exact polar factor of the preconditioned matrix.
    pub approx_error: f64,
    /// ||Orth(S(M)) - Orth(M)||_F: how far preconditioning moves the target.
    pub precond_bias: f64,
    /// ||ns_run(S(M)) - Orth(M)||_F.
    pub total: f64,
    /// total <= approx_error + precond_bias + 1e-9.
    pub triangle_ok: bool,
}

/// Decomposes the error of running `ns` on the `equil`-preconditioned copy
/// of `m`, measured against the exact polar factor on both sides.
///
/// # Errors
/// `Domain` for the zero matrix; equilibration, iteration, and SVD errors
/// propagate.
pub fn error_decomposition(
    m: &Matrix,
    equil: &EquilConfig,
    ns: &NsConfig,
) -> Result<ErrorDecomposition> {
    if m.is_all_zero() {
        return Err(Error::Domain(
            "error decomposition is undefined for the zero matrix".into(),
        ));
    }
    let polar_m = polar_factor(m)?;
    let s = diag_pre(m, equil)?.result;
    let polar_s = if equil.mode == EquilMode::None {
        polar_m.clone()
    } else {
        polar_factor(&s)?
    };
    let (out, _) = ns_run(&s, ns, NsRecord::none())?;

    let approx_error = out.sub(&polar_s).frobenius_norm();
    let precond_bias = polar_s.sub(&polar_m).frobenius_norm();
    let total = out.sub(&polar_m).frobenius_norm();
    Ok(ErrorDecomposition {
        approx_error,
        precond_bias,
        total,
        triangle_ok: total <= approx_error + precond_bias + 1e-9,
    })
}

// ── first-order whitening expansions ─────────────────────────────────────────

/// Which marginal scales the whitening expansion is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhitenSide {
    /// Normalize rows; expansion of (MM^T)^{-1/2} M around unit-row N.
    Row,
    /// Normalize columns; expansion of M (M^T M)^{-1/2} around unit-column N.
    Column,
    /// Normalize by the square roots of both marginals jointly.
    TwoSided,
}

impl WhitenSide {
    pub fn label(self) -> &'static str {
        match self {
            WhitenSide::Row => "row",
            WhitenSide::Column => "column",
            WhitenSide::TwoSided => "two_sided",
        }
    }
}

/// Expansion data and measured residuals for one whitening side.
#[derive(Debug, Clone)]
pub struct WhiteningReport {
    pub side: WhitenSide,
    /// The diagonal scale matrix: row norms (Row), column norms (Column), or
    /// the norms on the Gram side used for the two-sided correction.
    pub scale_matrix_diag: Vec<f64>,
    /// ||C||_2, the spectral norm of the normalized Gram residual.
    pub gram_residual_norm: f64,
    /// Closed-form solution of D L + L D = D C D, i.e.
    /// L_ij = d_i C_ij d_j / (d_i + d_j).
    pub sylvester_solution: Matrix,
    /// ||Orth(M) - N||_2: error of the plain normalization.
    pub zeroth_residual: f64,
    /// ||Orth(M) - (N - correction)||_2: error after the first-order term.
    pub first_order_residual: f64,
}

fn sylvester_diag_solve(d: &[f64], c: &Matrix) -> Matrix {
    Matrix::from_fn(c.rows(), c.cols(), |i, j| {
        d[i] * c.get(i, j) * d[j] / (d[i] + d[j])
    })
}

/// Builds the first-order whitening expansion of `m` on the requested side
/// and measures its residuals against the exact polar factor.
///
/// Row side: N = D_r^{-1} M with D_r the row norms, C = N N^T - I, and the
/// corrected approximation is N - D_r^{-1} L N. Column side mirrors this with
/// column norms and N - N L D_c^{-1}. The two-sided form centers at
/// H = D_r^{-1/2} M D_c^{-1/2} and corrects by -(1/2) H C (or -(1/2) C H when
/// the row Gram is smaller); it deliberately no longer corrects the marginal
/// scales themselves, so its Sylvester system has D = I and L = C / 2.
///
/// # Errors
/// `Domain` when `m` lacks the rank the side needs (full column rank, full
/// row rank, or full min-dimension rank with no zero rows or columns).
pub fn whitening_first_order(m: &Matrix, side: WhitenSide) -> Result<WhiteningReport> {
    let (rows, cols) = (m.rows(), m.cols());
    let s = svd(m)?;
    let rank = s.rank();
    let needed = match side {
        WhitenSide::Row => rows,
        WhitenSide::Column => cols,
        WhitenSide::TwoSided => rows.min(cols),
    };
    if rank < needed {
        return Err(Error::Domain(format!(
            "whitening on the {} side needs rank {needed}, but the matrix has rank {rank}",
            side.label()
        )));
    }
    let orth = s.left_vectors.matmul_nt(&s.right_vectors);
    let (row_sq, col_sq) = row_col_sq_norms(m);

    let (scale, l, c_norm, n_approx, first_approx) = match side {
        WhitenSide::Row => {
            let d: Vec<f64> = row_sq.iter().map(|&x| x.sqrt()).collect();
            let inv: Vec<f64> = d.iter().map(|&x| 1.0 / x).collect();
            let n = m.scale_rows(&inv);
            let mut c = n.matmul_nt(&n);
            for i in 0..rows {
                c[(i, i)] -= 1.0;
            }
            let l = sylvester_diag_solve(&d, &c);
            let first = n.sub(&l.matmul(&n).scale_rows(&inv));
            (d, l, spectral_norm(&c)?, n, first)
        }
        WhitenSide::Column => {
            let d: Vec<f64> = col_sq.iter().map(|&x| x.sqrt()).collect();
            let inv: Vec<f64> = d.iter().map(|&x| 1.0 / x).collect();
            let n = m.scale_cols(&inv);
            let mut c = n.matmul_tn(&n);
            for i in 0..cols {
                c[(i, i)] -= 1.0;
            }
            let l = sylvester_diag_solve(&d, &c);
            let first = n.sub(&n.matmul(&l).scale_cols(&inv));
            (d, l, spectral_norm(&c)?, n, first)
        }
        WhitenSide::TwoSided => {
            if row_sq.contains(&0.0) || col_sq.contains(&0.0) {
                return Err(Error::Domain(
                    "two-sided whitening needs every row and column nonzero".into(),
                ));
            }
            let inv_r: Vec<f64> = row_sq.iter().map(|&x| 1.0 / x.sqrt().sqrt()).collect();
            let inv_c: Vec<f64> = col_sq.iter().map(|&x| 1.0 / x.sqrt().sqrt()).collect();
            let h = m.scale_rows(&inv_r).scale_cols(&inv_c);
            // Use the smaller Gram side for the residual and correction.
            let col_side = rows >= cols;
            let mut c = if col_side {
                h.matmul_tn(&h)
            } else {
                h.matmul_nt(&h)
            };
            let dim = c.rows();
            for i in 0..dim {
                c[(i, i)] -= 1.0;
            }
            let l = c.scaled(0.5);
            let first = if col_side {
                h.sub(&h.matmul(&l))
            } else {
                h.sub(&l.matmul(&h))
            };
            let scale = if col_side {
                col_sq.iter().map(|&x| x.sqrt()).collect()
            } else {
                row_sq.iter().map(|&x| x.sqrt()).collect()
            };
            (scale, l, spectral_norm(&c)?, h, first)
        }
    };

    Ok(WhiteningReport {
        side,
        scale_matrix_diag: scale,
        gram_residual_norm: c_norm,
        sylvester_solution: l,
        zeroth_residual: spectral_norm(&orth.sub(&n_approx))?,
        first_order_residual: spectral_norm(&orth.sub(&first_approx))?,
    })
}

// ── convergence-rate constants ───────────────────────────────────────────────

/// The curvature factor chi(rho_r, rho_c) =
/// (rho_r+1)(rho_c+1)/(4 rho_r rho_c) - (3 rho_r rho_c - rho_r - rho_c - 1)/4,
/// strictly decreasing in each argument for rho >= 1, equal to 1 at (1, 1)
/// and to 1/144 at (3/2, 3/2).
pub fn chi_eps(rho_r: f64, rho_c: f64) -> f64 {
    (rho_r + 1.0) * (rho_c + 1.0) / (4.0 * rho_r * rho_c)
        - (3.0 * rho_r * rho_c - rho_r - rho_c - 1.0) / 4.0
}

/// Rate constants for the analyzed optimizer regimes. Built by
/// [`rc_constants`] (two-sided equilibration) or [`r_constants`] (row
/// equilibration, exact or inexact orthogonalization); fields belonging to
/// the regime that was not requested stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConstants {
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub l_smooth: f64,
    pub a: f64,
    pub f_gap: f64,
    // Two-sided (RC) inputs and constants.
    pub g_inf: Option<f64>,
    pub eps: Option<f64>,
    pub rho_r: Option<f64>,
    pub rho_c: Option<f64>,
    pub chi_eps: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// Set when eps sits below (4/5) G_inf^2 max(m, n): the scaler bounds
    /// may then be too loose for chi to stay positive, so rates are reported
    /// but should not be trusted.
    pub eps_floor_warning: bool,
    // Row-mode (R) inputs and constants.
    pub rho: Option<f64>,
    pub eps_ns: Option<f64>,
    /// Constants under exact polar orthogonalization.
    pub c1_exact: Option<f64>,
    pub c2_exact: Option<f64>,
    /// Constants under orthogonalization with spectral gap eps_ns.
    pub c1_ns: Option<f64>,
    pub c2_ns: Option<f64>,
    /// a (1 - eps_ns)/sqrt(m) - rho, the positive margin the rate divides by.
    pub denom_ns: Option<f64>,
}

fn empty_constants(m: usize, n: usize, sigma: f64, l_smooth: f64, a: f64, f_gap: f64) -> ConvergenceConstants {
    ConvergenceConstants {
        m,
        n,
        sigma,
        l_smooth,
        a,
        f_gap,
        g_inf: None,
        eps: None,
        rho_r: None,
        rho_c: None,
        chi_eps: None,
        c1: None,
        c2: None,
        eps_floor_warning: false,
        rho: None,
        eps_ns: None,
        c1_exact: None,
        c2_exact: None,
        c1_ns: None,
        c2_ns: None,
        denom_ns: None,
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Domain(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Domain(format!(
            "{name} must be nonnegative and finite, got {v}"
        )));
    }
    Ok(())
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions(format!(
            "parameter shape must be positive, got {m}x{n}"
        )));
    }
    Ok(())
}

/// Constants for the two-sided equilibrated regime with entry bound `g_inf`
/// and damping `eps`:
///
///   rho_r = sqrt(1 + n g_inf^2 / eps),   rho_c = sqrt(1 + m g_inf^2 / eps),
///   C1 = (a/L)(2 sqrt(2) L^2 a^2 n + sigma^2) + a L (chi + rho_r rho_c sqrt(n))^2,
///   C2 = a sigma^2 / L + 3 L a^2 n / 2.
///
/// When eps >= (4/5) g_inf^2 max(m, n), both rho factors stay at or below 3/2
/// and chi >= 1/144. A smaller eps only sets [`ConvergenceConstants::eps_floor_warning`].
///
/// # Errors
/// `InvalidDimensions`/`Domain` on nonpositive dimensions, `g_inf`, `eps`,
/// `l_smooth`, or `a`, or negative `sigma`/`f_gap`.
#[allow(clippy::too_many_arguments)]
pub fn rc_constants(
    m: usize,
    n: usize,
    g_inf: f64,
    eps: f64,
    sigma: f64,
    l_smooth: f64,
    a: f64,
    f_gap: f64,
) -> Result<ConvergenceConstants> {
    check_dims(m, n)?;
    check_positive("g_inf", g_inf)?;
    check_positive("eps", eps)?;
    check_positive("l_smooth", l_smooth)?;
    check_positive("a", a)?;
    check_nonnegative("sigma", sigma)?;
    check_nonnegative("f_gap", f_gap)?;

    let (mf, nf) = (m as f64, n as f64);
    let rho_r = (1.0 + nf * g_inf * g_inf / eps).sqrt();
    let rho_c = (1.0 + mf * g_inf * g_inf / eps).sqrt();
    let chi = chi_eps(rho_r, rho_c);
    let l = l_smooth;
    let c1 = (a / l) * (2.0 * 2.0f64.sqrt() * l * l * a * a * nf + sigma * sigma)
        + a * l * (chi + rho_r * rho_c * nf.sqrt()).powi(2);
    let c2 = a * sigma * sigma / l + 1.5 * l * a * a * nf;

    let mut out = empty_constants(m, n, sigma, l_smooth, a, f_gap);
    out.g_inf = Some(g_inf);
    out.eps = Some(eps);
    out.rho_r = Some(rho_r);
    out.rho_c = Some(rho_c);
    out.chi_eps = Some(chi);
    out.c1 = Some(c1);
    out.c2 = Some(c2);
    out.eps_floor_warning = eps < 0.8 * g_inf * g_inf * mf.max(nf);
    Ok(out)
}

fn r_c1(a: f64, l: f64, m: f64, n: f64, rho: f64, eps_ns: f64, sigma: f64) -> f64 {
    let drift = a * (1.0 + eps_ns) * n.sqrt() + rho;
    (a / l) * (2.0 * 2.0f64.sqrt() * l * l * drift * drift + sigma * sigma)
        + a * l * ((1.0 - eps_ns) / m.sqrt() + (1.0 + eps_ns) * n.sqrt()).powi(2)
}

fn r_c2(a: f64, l: f64, n: f64, rho: f64, eps_ns: f64, sigma: f64) -> f64 {
    let drift = a * (1.0 + eps_ns) * n.sqrt() + rho;
    a * sigma * sigma / l + 1.5 * l * drift * drift
}

/// Constants for the row-equilibrated regime with weight-decay envelope
/// `rho` and orthogonalization gap `eps_ns`:
///
///   C1 = (a/L)(2 sqrt(2) L^2 (a(1+eps_ns) sqrt(n) + rho)^2 + sigma^2)
///        + a L ((1-eps_ns)/sqrt(m) + (1+eps_ns) sqrt(n))^2,
///   C2 = a sigma^2 / L + (3L/2)(a(1+eps_ns) sqrt(n) + rho)^2,
///   denominator a(1-eps_ns)/sqrt(m) - rho.
///
/// The `_exact` pair is the same formula at eps_ns = 0 (exact polar factor).
///
/// # Errors
/// `Domain` when `eps_ns` is outside [0, 1) or when `rho` is not strictly
/// below a(1-eps_ns)/sqrt(m) (the rate denominator must stay positive), plus
/// the shared positivity checks.
#[allow(clippy::too_many_arguments)]
pub fn r_constants(
    m: usize,
    n: usize,
    rho: f64,
    sigma: f64,
    l_smooth: f64,
    a: f64,
    eps_ns: f64,
    f_gap: f64,
) -> Result<ConvergenceConstants> {
    check_dims(m, n)?;
    check_positive("l_smooth", l_smooth)?;
    check_positive("a", a)?;
    check_nonnegative("sigma", sigma)?;
    check_nonnegative("f_gap", f_gap)?;
    check_nonnegative("rho", rho)?;
    if !(eps_ns.is_finite() && (0.0..1.0).contains(&eps_ns)) {
        return Err(Error::Domain(format!(
            "eps_ns must lie in [0, 1), got {eps_ns}"
        )));
    }
    let (mf, nf) = (m as f64, n as f64);
    let limit = a * (1.0 - eps_ns) / mf.sqrt();
    if rho >= limit {
        return Err(Error::Domain(format!(
            "rho = {rho} must be strictly below a(1 - eps_ns)/sqrt(m) = {limit}; \
             the rate denominator would not be positive"
        )));
    }

    let mut out = empty_constants(m, n, sigma, l_smooth, a, f_gap);
    out.rho = Some(rho);
    out.eps_ns = Some(eps_ns);
    out.c1_exact = Some(r_c1(a, l_smooth, mf, nf, rho, 0.0, sigma));
    out.c2_exact = Some(r_c2(a, l_smooth, nf, rho, 0.0, sigma));
    out.c1_ns = Some(r_c1(a, l_smooth, mf, nf, rho, eps_ns, sigma));
    out.c2_ns = Some(r_c2(a, l_smooth, nf, rho, eps_ns, sigma));
    out.denom_ns = Some(limit - rho);
    Ok(out)
}

impl ConvergenceConstants {
    fn check_horizon(t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain("horizon T must be at least 1".into()));
        }
        Ok(t as f64)
    }

    /// (f_gap + C1 (1 + ln T) + C2) / (a chi T^{1/4}) for the two-sided
    /// regime.
    ///
    /// # Errors
    /// `Domain` when T = 0 or when these constants were not built by
    /// [`rc_constants`].
    pub fn rate_rc(&self, t: u64) -> Result<f64> {
        let tf = Self::check_horizon(t)?;
        let (chi, c1, c2) = match (self.chi_eps, self.c1, self.c2) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => {
                return Err(Error::Domain(
                    "two-sided rate requested from constants built for the row regime".into(),
                ))
            }
        };
        Ok((self.f_gap + c1 * (1.0 + tf.ln()) + c2) / (self.a * chi * tf.powf(0.25)))
    }

    /// Row-regime rate with the exact polar factor:
    /// (f_gap + C1 (1 + ln T) + C2) / ((a/sqrt(m) - rho) T^{1/4}).
    ///
    /// # Errors
    /// As [`ConvergenceConstants::rate_rc`], for the row regime.
    pub fn rate_exact(&self, t: u64) -> Result<f64> {
        let tf = Self::check_horizon(t)?;
        let (rho, c1, c2) = match (self.rho, self.c1_exact, self.c2_exact) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => {
                return Err(Error::Domain(
                    "row-regime rate requested from constants built for the two-sided regime"
                        .into(),
                ))
            }
        };
        let denom = self.a / (self.m as f64).sqrt() - rho;
        Ok((self.f_gap + c1 * (1.0 + tf.ln()) + c2) / (denom * tf.powf(0.25)))
    }

    /// Row-regime rate with inexact orthogonalization; the denominator is
    /// the stored a(1-eps_ns)/sqrt(m) - rho.
    ///
    /// # Errors
    /// As [`ConvergenceConstants::rate_rc`], for the row regime.
    pub fn rate_ns(&self, t: u64) -> Result<f64> {
        let tf = Self::check_horizon(t)?;
        let (denom, c1, c2) = match (self.denom_ns, self.c1_ns, self.c2_ns) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => {
                return Err(Error::Domain(
                    "row-regime rate requested from constants built for the two-sided regime"
                        .into(),
                ))
            }
        };
        Ok((self.f_gap + c1 * (1.0 + tf.ln()) + c2) / (denom * tf.powf(0.25)))
    }
}

// ── orthogonalization inexactness ────────────────────────────────────────────

/// Measured worst-case gap of an iteration over a set of inputs, with the
/// cubic-contraction prediction it should stay below.
#[derive(Debug, Clone, Copy)]
pub struct NsInexactness {
    /// max over inputs of ||ns_run(A) - Orth(A)||_2.
    pub eps_ns: f64,
    /// max over inputs of ||Pi - Y0 Y0^T||_2, where Y0 is the prescaled
    /// input in the orientation the iteration uses and Pi = U U^T projects
    /// onto its range.
    pub delta_0: f64,
    /// 1 - sqrt(1 - delta_0^(3^K)) when delta_0 < 1, else 1: the cubic
    /// contraction of the initial defect over K steps.
    pub lemma_bound: f64,
}

/// Measures `eps_ns` and `delta_0` across `inputs` for the configured
/// iteration, and evaluates the contraction bound at the measured worst
/// initial defect. Empty input lists yield all zeros.
///
/// # Errors
/// Iteration and SVD errors propagate.
pub fn ns_inexactness(inputs: &[Matrix], cfg: &NsConfig) -> Result<NsInexactness> {
    let mut eps_ns = 0.0f64;
    let mut delta_0 = 0.0f64;
    for g in inputs {
        let (out, _) = ns_run(g, cfg, NsRecord::none())?;
        let s = svd(g)?;
        let orth = s.left_vectors.matmul_nt(&s.right_vectors);
        eps_ns = eps_ns.max(spectral_norm(&out.sub(&orth))?);

        // delta on the iterated orientation: rows <= cols.
        let transposed = g.rows() > g.cols();
        let work = if transposed { g.transpose() } else { g.clone() };
        let fro = work.frobenius_norm();
        let denom = match cfg.prescale {
            crate::newton_schulz::Prescale::Frobenius => fro,
            crate::newton_schulz::Prescale::Max1Frobenius => fro.max(1.0),
        };
        let defect = if fro == 0.0 {
            0.0
        } else {
            let y0 = work.scaled(1.0 / denom);
            let basis = if transposed {
                &s.right_vectors
            } else {
                &s.left_vectors
            };
            let gap = basis.matmul_nt(basis).sub(&y0.matmul_nt(&y0));
            spectral_norm(&gap)?
        };
        delta_0 = delta_0.max(defect);
    }
    let exponent = 3.0f64.powi(cfg.steps as i32);
    let lemma_bound = if delta_0 < 1.0 {
        // 1 - sqrt(1 - x) computed as x / (1 + sqrt(1 - x)): same value,
        // no cancellation when x is tiny.
        let x = delta_0.powf(exponent);
        x / (1.0 + (1.0 - x).sqrt())
    } else {
        1.0
    };
    Ok(NsInexactness {
        eps_ns,
        delta_0,
        lemma_bound,
    })
}

// ── alignment margins ────────────────────────────────────────────────────────

/// Inner products between a momentum matrix and the orthogonalized update
/// built from its row-normalized copy, with the guaranteed floors.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentMargin {
    /// <M, Orth(P(M) M)> with P the exact (eps = 0) row scaler.
    pub lhs: f64,
    /// ||M||_F / sqrt(m).
    pub rhs: f64,
    /// <M, NS5(P(M) M)>.
    pub lhs_ns: f64,
    /// (1 - eps_ns) ||M||_F / sqrt(m) with the measured per-input gap.
    pub rhs_ns: f64,
}

/// Evaluates both alignment inner products for `m` (zero matrix allowed:
/// everything is zero).
///
/// # Errors
/// Equilibration, SVD, and iteration errors propagate.
pub fn alignment_margin(m: &Matrix) -> Result<AlignmentMargin> {
    if m.is_all_zero() {
        return Ok(AlignmentMargin {
            lhs: 0.0,
            rhs: 0.0,
            lhs_ns: 0.0,
            rhs_ns: 0.0,
        });
    }
    let rows = m.rows() as f64;
    let scaled = diag_pre(m, &EquilConfig::exact(EquilMode::R))?.result;
    let orth = polar_factor(&scaled)?;
    let ns_out = ns5(&scaled)?;
    let eps_ns = spectral_norm(&ns_out.sub(&orth))?;
    let fro = m.frobenius_norm();
    Ok(AlignmentMargin {
        lhs: frobenius_inner(m, &orth),
        rhs: fro / rows.sqrt(),
        lhs_ns: frobenius_inner(m, &ns_out),
        rhs_ns: (1.0 - eps_ns) * fro / rows.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_thin_q;
    use crate::rng::Rng;

    fn assert_near(got: f64, want: f64, tol: f64, what: &str) {
        assert!(
            (got - want).abs() <= tol,
            "{what}: got {got}, want {want} (tol {tol})"
        );
    }

    fn random_matrix(rng: &mut Rng, m: usize, n: usize) -> Matrix {
        Matrix::from_fn(m, n, |_, _| rng.next_gaussian())
    }

    // ── spectral diagnostics ──

    #[test]
    fn identity_report() {
        let r = spectral_report(&Matrix::identity(2)).unwrap();
        assert_near(r.stable_rank, 2.0, 1e-12, "sr");
        assert_near(r.condition_number, 1.0, 1e-12, "kappa");
        assert_near(r.entropy, 2.0f64.ln(), 1e-12, "H");
    }

    #[test]
    #[allow(clippy::excessive_precision)] // oracle digits kept verbatim
    fn diag_two_one_report() {
        let r = spectral_report(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_near(r.stable_rank, 1.25, 1e-12, "sr");
        assert_near(r.condition_number, 2.0, 1e-12, "kappa");
        assert_near(r.energy[0], 0.8, 1e-12, "p1");
        assert_near(r.energy[1], 0.2, 1e-12, "p2");
        // Independently evaluated at 40 digits: -(0.8 ln 0.8 + 0.2 ln 0.2).
        assert_near(r.entropy, 0.50040242353818788, 1e-12, "H");
        assert_eq!(r.kappa.len(), 2);
        assert_near(r.kappa[1], 2.0, 1e-12, "kappa_2");
    }

    #[test]
    fn rank_one_report() {
        let m = Matrix::from_fn(3, 3, |i, j| ((i + 1) * (j + 1)) as f64);
        let r = spectral_report(&m).unwrap();
        assert_near(r.stable_rank, 1.0, 1e-10, "sr");
        assert_near(r.entropy, 0.0, 1e-10, "H");
        assert_eq!(r.singular_values.len(), 1);
    }

    #[test]
    fn energy_sums_to_one() {
        let mut rng = Rng::new(61);
        let m = random_matrix(&mut rng, 7, 5);
        let r = spectral_report(&m).unwrap();
        let total: f64 = r.energy.iter().sum();
        assert_near(total, 1.0, 1e-10, "sum p_i");
        assert!(r.entropy >= 0.0 && r.entropy <= (r.energy.len() as f64).ln() + 1e-12);
        assert!(r.stable_rank >= 1.0 - 1e-12);
    }

    #[test]
    fn zero_matrix_report_rejected() {
        assert!(matches!(
            spectral_report(&Matrix::zeros(2, 2)),
            Err(Error::Domain(_))
        ));
    }

    // ── error floor ──

    #[test]
    fn equal_spectrum_floor_collapses() {
        // 3x3 orthogonal times 2: kappa_i = 1, sr = 3.
        let mut rng = Rng::new(62);
        let q = qr_thin_q(&random_matrix(&mut rng, 3, 3)).unwrap();
        let g = q.scaled(2.0);
        let a = 1.875;
        let out = error_lower_bound(&g, a, 4).unwrap();
        for (k, &b) in out.bound_per_k.iter().enumerate() {
            let want = (1.0 - a.powi(k as i32) / 3.0f64.sqrt()).max(0.0);
            assert_near(b, want, 1e-9, &format!("bound at k = {k}"));
        }
        let tau_want = 3.0f64.sqrt().ln() / a.ln();
        for &t in &out.tau {
            assert_near(t, tau_want, 1e-9, "tau");
        }
        assert_near(out.tau_spread, 0.0, 1e-9, "spread");
    }

    #[test]
    #[allow(clippy::excessive_precision)] // oracle digits kept verbatim
    fn known_two_by_two_floor() {
        // diag(1, 0.01), a = 15/8: frozen against 40-digit evaluation.
        let g = Matrix::from_diag(&[1.0, 0.01]);
        let out = error_lower_bound(&g, 1.875, 1).unwrap();
        assert_near(out.bound_per_k[0], 0.70003606779423558, 1e-12, "k = 0");
        assert_near(out.bound_per_k[1], 0.69384919190219282, 1e-12, "k = 1");
        assert_near(out.tau_spread, 7.3259731900921679, 1e-10, "spread");
    }

    #[test]
    fn tau_spread_equals_log_condition_number() {
        let mut rng = Rng::new(63);
        for _ in 0..5 {
            let m = random_matrix(&mut rng, 6, 9);
            let a = 1.875;
            let out = error_lower_bound(&m, a, 0).unwrap();
            let rep = spectral_report(&m).unwrap();
            assert_near(
                out.tau_spread,
                rep.condition_number.ln() / a.ln(),
                1e-10,
                "tau identity",
            );
        }
    }

    #[test]
    fn floor_vanishes_once_growth_covers_spectrum() {
        let g = Matrix::from_diag(&[1.0, 0.05]);
        let out = error_lower_bound(&g, 1.875, 12).unwrap();
        assert_eq!(*out.bound_per_k.last().unwrap(), 0.0);
        assert!(out.bound_per_k[0] > 0.0);
    }

    #[test]
    fn floor_rejects_bad_inputs() {
        assert!(error_lower_bound(&Matrix::zeros(2, 2), 1.875, 3).is_err());
        assert!(error_lower_bound(&Matrix::identity(2), 1.0, 3).is_err());
    }

    // ── error decomposition ──

    #[test]
    fn no_preconditioning_means_no_bias() {
        let mut rng = Rng::new(64);
        let m = random_matrix(&mut rng, 5, 8);
        let d = error_decomposition(
            &m,
            &EquilConfig::new(EquilMode::None, 0.0).unwrap(),
            &NsConfig::ns5(),
        )
        .unwrap();
        assert_eq!(d.precond_bias, 0.0);
        assert!(d.triangle_ok);
        assert!(d.approx_error > 0.0);
    }

    #[test]
    fn orthogonal_unit_rows_have_no_row_bias() {
        let mut rng = Rng::new(65);
        let q = qr_thin_q(&random_matrix(&mut rng, 6, 6)).unwrap();
        let d = error_decomposition(
            &q,
            &EquilConfig::exact(EquilMode::R),
            &NsConfig::ns5(),
        )
        .unwrap();
        // Rows of an orthogonal matrix already have unit norm, so the row
        // scaler is the identity up to roundoff.
        assert!(d.precond_bias <= 1e-9, "bias {}", d.precond_bias);
        assert!(d.triangle_ok);
    }

    #[test]
    fn triangle_inequality_holds_across_modes() {
        let mut rng = Rng::new(66);
        let m = random_matrix(&mut rng, 8, 6).scale_rows(&[
            10.0, 1.0, 0.1, 5.0, 0.5, 2.0, 1.0, 0.02,
        ]);
        for mode in EquilMode::ALL {
            let d = error_decomposition(
                &m,
                &EquilConfig::new(mode, 1e-8).unwrap(),
                &NsConfig::ns5(),
            )
            .unwrap();
            assert!(d.triangle_ok, "mode {mode:?}");
            assert!(d.total <= d.approx_error + d.precond_bias + 1e-9);
        }
    }

    // ── whitening ──

    #[test]
    fn sylvester_closed_form_known_answer() {
        let d = [1.0, 2.0];
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let l = sylvester_diag_solve(&d, &c);
        assert_near(l.get(0, 1), 2.0 / 3.0, 1e-15, "L_01");
        assert_near(l.get(1, 0), 2.0 / 3.0, 1e-15, "L_10");
        assert_eq!(l.get(0, 0), 0.0);
    }

    #[test]
    fn sylvester_equation_is_satisfied() {
        let mut rng = Rng::new(67);
        let m = random_matrix(&mut rng, 7, 4);
        let rep = whitening_first_order(&m, WhitenSide::Column).unwrap();
        let d = Matrix::from_diag(&rep.scale_matrix_diag);
        let l = &rep.sylvester_solution;
        // Rebuild C from the report's own N to close the loop.
        let inv: Vec<f64> = rep.scale_matrix_diag.iter().map(|&x| 1.0 / x).collect();
        let n = m.scale_cols(&inv);
        let mut c = n.matmul_tn(&n);
        for i in 0..4 {
            c[(i, i)] -= 1.0;
        }
        let lhs = d.matmul(l).add(&l.matmul(&d));
        let rhs = d.matmul(&c).matmul(&d);
        assert!(lhs.sub(&rhs).max_abs() <= 1e-9);
    }

    #[test]
    fn orthonormal_columns_make_expansion_exact() {
        let mut rng = Rng::new(68);
        let q = qr_thin_q(&random_matrix(&mut rng, 8, 4)).unwrap();
        let rep = whitening_first_order(&q, WhitenSide::Column).unwrap();
        assert!(rep.gram_residual_norm <= 1e-12);
        assert!(rep.zeroth_residual <= 1e-9);
        assert!(rep.first_order_residual <= 1e-9);
    }

    #[test]
    fn residual_orders_on_perturbed_orthogonal_input() {
        // N + t E around an orthonormal frame: the plain normalization should
        // err like t while the corrected form errs like t^2. A crude two-point
        // slope over t = 1e-2, 1e-3 confirms both orders on every side.
        let mut rng = Rng::new(69);
        for side in [WhitenSide::Column, WhitenSide::Row, WhitenSide::TwoSided] {
            let (rows, cols) = match side {
                WhitenSide::Column => (6, 4),
                WhitenSide::Row => (4, 6),
                WhitenSide::TwoSided => (5, 5),
            };
            let q = qr_thin_q(&random_matrix(&mut rng, rows.max(cols), rows.min(cols))).unwrap();
            let q = if rows < cols { q.transpose() } else { q };
            let e = random_matrix(&mut rng, rows, cols);
            let mut zeroth = Vec::new();
            let mut first = Vec::new();
            for &t in &[1e-2, 1e-3] {
                let m = q.add(&e.scaled(t));
                let rep = whitening_first_order(&m, side).unwrap();
                zeroth.push(rep.zeroth_residual);
                first.push(rep.first_order_residual);
            }
            let slope0 = (zeroth[0] / zeroth[1]).log10();
            let slope1 = (first[0] / first[1]).log10();
            assert!(
                (0.7..=1.3).contains(&slope0),
                "{}: zeroth slope {slope0}",
                side.label()
            );
            assert!(
                (1.6..=2.4).contains(&slope1),
                "{}: first slope {slope1}",
                side.label()
            );
        }
    }

    #[test]
    fn whitening_rejects_rank_deficiency() {
        let m = Matrix::from_fn(4, 3, |i, _| i as f64); // rank 1 with a zero row
        for side in [WhitenSide::Row, WhitenSide::Column, WhitenSide::TwoSided] {
            let err = whitening_first_order(&m, side).unwrap_err();
            assert!(matches!(err, Error::Domain(_)), "{side:?}");
        }
        // Wide matrices cannot have full column rank at all.
        let wide = Matrix::from_fn(2, 5, |i, j| ((i + j) as f64).sin() + 0.1);
        assert!(whitening_first_order(&wide, WhitenSide::Column).is_err());
    }

    // ── convergence constants ──

    #[test]
    fn chi_known_values() {
        assert_near(chi_eps(1.5, 1.5), 1.0 / 144.0, 1e-16, "chi(3/2, 3/2)");
        assert_eq!(chi_eps(1.0, 1.0), 1.0);
    }

    #[test]
    fn chi_is_strictly_decreasing_on_the_unit_box() {
        let grid: Vec<f64> = (0..=20).map(|i| 1.0 + 0.025 * i as f64).collect();
        for &x in &grid {
            for &y in &grid {
                let here = chi_eps(x, y);
                if x < 1.5 {
                    assert!(chi_eps(x + 0.025, y) < here, "x step at ({x}, {y})");
                }
                if y < 1.5 {
                    assert!(chi_eps(x, y + 0.025) < here, "y step at ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn rc_constants_formulas() {
        let c = rc_constants(4, 9, 1.0, 2.0, 0.5, 1.0, 1.6, 3.0).unwrap();
        assert_near(
            c.rho_r.unwrap(),
            (1.0f64 + 9.0 / 2.0).sqrt(),
            1e-15,
            "rho_r",
        );
        assert_near(
            c.rho_c.unwrap(),
            (1.0f64 + 4.0 / 2.0).sqrt(),
            1e-15,
            "rho_c",
        );
        let chi = chi_eps(c.rho_r.unwrap(), c.rho_c.unwrap());
        assert_eq!(c.chi_eps.unwrap(), chi);
        // C2 = a sigma^2 / L + 1.5 L a^2 n.
        assert_near(
            c.c2.unwrap(),
            1.6 * 0.25 + 1.5 * 1.6 * 1.6 * 9.0,
            1e-12,
            "c2",
        );
        assert!(c.eps_floor_warning, "eps = 2 < 0.8 * 9");
        let big = rc_constants(4, 9, 1.0, 0.8 * 9.0, 0.5, 1.0, 1.6, 3.0).unwrap();
        assert!(!big.eps_floor_warning);
        assert!(big.chi_eps.unwrap() >= 1.0 / 144.0 - 1e-12);
    }

    #[test]
    fn boundary_eps_gives_three_halves_and_chi_floor() {
        // eps = (4/5) g^2 max(m, n) with m = n makes both rho factors
        // exactly sqrt(1 + 5/4) = 3/2.
        let c = rc_constants(10, 10, 2.0, 0.8 * 4.0 * 10.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_near(c.rho_r.unwrap(), 1.5, 1e-15, "rho_r");
        assert_near(c.rho_c.unwrap(), 1.5, 1e-15, "rho_c");
        assert_near(c.chi_eps.unwrap(), 1.0 / 144.0, 1e-16, "chi");
    }

    #[test]
    fn r_constants_hand_value_and_reduction() {
        // m = n = 1, a = 0.2, sigma = L = 1, rho = 0, eps_ns = 0:
        // C2 = a sigma^2/L + (3L/2) a^2 = 0.2 + 1.5 * 0.04 = 0.26.
        let c = r_constants(1, 1, 0.0, 1.0, 1.0, 0.2, 0.0, 1.0).unwrap();
        assert_near(c.c2_ns.unwrap(), 0.26, 1e-15, "c2");
        assert_eq!(c.c1_ns, c.c1_exact, "eps_ns = 0 must reduce exactly");
        assert_eq!(c.c2_ns, c.c2_exact);
        assert_near(c.denom_ns.unwrap(), 0.2, 1e-15, "denom");
    }

    #[test]
    fn r_constants_rejects_boundary_rho() {
        // rho = a(1 - eps_ns)/sqrt(m) exactly: strict inequality required.
        let limit = 1.6 * (1.0 - 0.25) / 4.0;
        let err = r_constants(16, 8, limit, 0.5, 1.0, 1.6, 0.25, 1.0).unwrap_err();
        assert!(
            err.to_string().contains("strictly below"),
            "unexpected message: {err}"
        );
        assert!(r_constants(16, 8, limit - 1e-9, 0.5, 1.0, 1.6, 0.25, 1.0).is_ok());
        assert!(r_constants(16, 8, 0.0, 0.5, 1.0, 1.6, 1.0, 1.0).is_err());
    }

    #[test]
    fn rates_decrease_in_horizon_eventually() {
        let rc = rc_constants(64, 64, 1.0, 0.8 * 64.0, 0.5, 1.0, 1.6, 2.0).unwrap();
        assert!(rc.rate_rc(10_000).unwrap() < rc.rate_rc(100).unwrap());
        assert!(rc.rate_exact(10).is_err(), "wrong-regime rate must fail");
        let r = r_constants(64, 64, 0.01, 0.5, 1.0, 1.6, 0.1, 2.0).unwrap();
        assert!(r.rate_ns(100_000).unwrap() < r.rate_ns(100).unwrap());
        assert!(r.rate_exact(100).unwrap() <= r.rate_ns(100).unwrap());
        assert!(r.rate_rc(10).is_err());
        assert!(r.rate_ns(0).is_err());
    }

    // ── inexactness ──

    #[test]
    fn fixed_point_has_no_inexactness() {
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let r = ns_inexactness(&[one], &NsConfig::ns5()).unwrap();
        assert_eq!(r.eps_ns, 0.0);
        assert!(r.delta_0 <= 1e-15);
        assert!(r.lemma_bound <= 1e-15);
    }

    #[test]
    fn zero_matrix_has_no_inexactness() {
        let r = ns_inexactness(&[Matrix::zeros(2, 2)], &NsConfig::ns5()).unwrap();
        assert_eq!(r.eps_ns, 0.0);
        assert_eq!(r.delta_0, 0.0);
        assert_eq!(r.lemma_bound, 0.0);
    }

    #[test]
    fn lemma_bound_value_at_095() {
        // Frozen against 40-digit evaluation of 1 - sqrt(1 - 0.95^243).
        let bound = {
            let x = 0.95f64.powf(243.0);
            x / (1.0 + (1.0 - x).sqrt())
        };
        assert_near(bound, 1.9311077592513814e-6, 1e-18, "bound(0.95)");
    }

    #[test]
    fn measured_gap_respects_contraction_bound() {
        // Planted prescaled spectra with min singular value >= sqrt(0.05),
        // so delta_0 <= 0.95 and the cubic contraction applies.
        let mut rng = Rng::new(71);
        let mut inputs = Vec::new();
        for _ in 0..6 {
            let (m, n) = (7, 5);
            let u = qr_thin_q(&random_matrix(&mut rng, m, n)).unwrap();
            let v = qr_thin_q(&random_matrix(&mut rng, n, n)).unwrap();
            let smin = 0.25f64;
            let planted: Vec<f64> = (0..n)
                .map(|i| {
                    if i == 0 {
                        smin
                    } else {
                        rng.next_range(smin, 0.4)
                    }
                })
                .collect();
            // Frobenius norm <= sqrt(5 * 0.16) < 1, so max1 prescale keeps it.
            inputs.push(u.scale_cols(&planted).matmul_nt(&v));
        }
        let r = ns_inexactness(&inputs, &NsConfig::ns5()).unwrap();
        assert!(r.delta_0 <= 0.95, "delta_0 = {}", r.delta_0);
        assert!(r.delta_0 >= 1.0 - 0.4 * 0.4 - 1e-9, "construction sanity");
        assert!(
            r.eps_ns <= r.lemma_bound + 1e-6,
            "eps_ns {} vs bound {}",
            r.eps_ns,
            r.lemma_bound
        );
        assert!(r.eps_ns < 1.0);
    }

    #[test]
    fn empty_input_list_is_all_zero() {
        let r = ns_inexactness(&[], &NsConfig::ns5()).unwrap();
        assert_eq!((r.eps_ns, r.delta_0, r.lemma_bound), (0.0, 0.0, 0.0));
    }

    // ── alignment ──

    #[test]
    fn identity_alignment() {
        let r = alignment_margin(&Matrix::identity(4)).unwrap();
        assert_near(r.lhs, 4.0, 1e-9, "lhs");
        assert_near(r.rhs, 1.0, 1e-15, "rhs");
        assert!(r.lhs_ns >= r.rhs_ns - 1e-9);
    }

    #[test]
    fn zero_alignment() {
        let r = alignment_margin(&Matrix::zeros(3, 5)).unwrap();
        assert_eq!((r.lhs, r.rhs, r.lhs_ns, r.rhs_ns), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn alignment_floor_holds_with_zero_rows() {
        let mut rng = Rng::new(72);
        for trial in 0..20 {
            let (m, n) = (6 + trial % 3, 9);
            let mut g = random_matrix(&mut rng, m, n);
            if trial % 4 == 0 {
                for j in 0..n {
                    g.set(1, j, 0.0);
                }
            }
            let r = alignment_margin(&g).unwrap();
            assert!(r.lhs >= r.rhs - 1e-9, "trial {trial}: {} < {}", r.lhs, r.rhs);
            assert!(
                r.lhs_ns >= r.rhs_ns - 1e-9,
                "trial {trial}: {} < {}",
                r.lhs_ns,
                r.rhs_ns
            );
        }
    }
}
