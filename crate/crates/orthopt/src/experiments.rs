//! Reusable experiment drivers: ensemble construction, the error-floor and
//! alignment audits, per-mode iteration sweeps, the curvature-factor floor
//! scan, calibrated whitening-order families, and trace smoothing. The
//! command-line front end and the acceptance suite both run through these.

use crate::equilibrate::{diag_pre, EquilConfig, EquilMode};
use crate::error::{Error, Result};
use crate::linalg::{qr_thin_q, spectral_norm, svd, Matrix};
use crate::newton_schulz::{ns_run, NsConfig, NsPolynomial, NsRecord, Prescale};
use crate::optimizer::{OptConfig, ScaleRule, ScheduleSpec};
use crate::rng::Rng;
use crate::theory::{
    alignment_margin, error_decomposition, error_lower_bound, rc_constants, spectral_report,
    whitening_first_order, WhitenSide,
};

// ── ensembles ────────────────────────────────────────────────────────────────

/// The four parameter shapes the experiments default to.
pub fn default_shapes() -> Vec<(usize, usize)> {
    vec![(64, 64), (64, 256), (256, 64), (256, 256)]
}

/// Builds `count` ill-scaled matrices cycling round-robin through `shapes`,
/// so matrix_id i has shape `shapes[i % shapes.len()]`. Fully determined by
/// `seed`.
pub fn build_ensemble(
    shapes: &[(usize, usize)],
    spectrum_decades: f64,
    imbalance_decades: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if shapes.is_empty() {
        return Err(Error::Usage("ensemble needs at least one shape".into()));
    }
    if count == 0 {
        return Err(Error::Usage("ensemble needs a positive count".into()));
    }
    let mut per_shape: Vec<std::vec::IntoIter<Matrix>> = Vec::new();
    for (idx, &shape) in shapes.iter().enumerate() {
        let share = count / shapes.len() + usize::from(idx < count % shapes.len());
        if share == 0 {
            per_shape.push(Vec::new().into_iter());
            continue;
        }
        let spec = crate::problems::EnsembleSpec::new(
            shape,
            spectrum_decades,
            imbalance_decades,
            imbalance_decades,
            share,
            seed.wrapping_add(idx as u64),
        )?;
        per_shape.push(crate::problems::ensemble(&spec).into_iter());
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(per_shape[i % shapes.len()].next().expect("share arithmetic"));
    }
    Ok(out)
}

// ── error-floor audit ────────────────────────────────────────────────────────

/// One (matrix, k) comparison of the measured normalized error against the
/// spectrum-derived floor.
#[derive(Debug, Clone, Copy)]
pub struct BoundAuditRow {
    pub matrix_id: usize,
    pub k: usize,
    /// ||X_k - Orth(G)||_F / sqrt(r) for the Frobenius-prescaled iteration.
    pub measured: f64,
    pub bound: f64,
}

/// Per-matrix check that the transition-count spread equals log_a of the
/// condition number.
#[derive(Debug, Clone, Copy)]
pub struct TauIdentityRow {
    pub matrix_id: usize,
    pub tau_spread: f64,
    pub log_a_kappa: f64,
}

#[derive(Debug, Clone)]
pub struct BoundAudit {
    pub rows: Vec<BoundAuditRow>,
    pub tau_rows: Vec<TauIdentityRow>,
    /// min over rows of measured - bound; nonnegative when the floor holds.
    pub min_margin: f64,
    /// Rows with measured < bound - 1e-10.
    pub violations: usize,
    /// max over matrices of |tau_spread - log_a(condition number)|.
    pub max_tau_identity_gap: f64,
}

/// Runs the `poly` iteration for `k_max` steps on every matrix and compares
/// each step's normalized distance from the polar factor against
/// [`error_lower_bound`], which no valid polynomial can beat. Also checks
/// that the transition-count spread collapses to log_a of the condition
/// number.
pub fn bound_audit(matrices: &[Matrix], poly: NsPolynomial, k_max: usize) -> Result<BoundAudit> {
    let cfg = NsConfig::new(poly, k_max, Prescale::Frobenius);
    let mut rows = Vec::with_capacity(matrices.len() * (k_max + 1));
    let mut tau_rows = Vec::with_capacity(matrices.len());
    let mut min_margin = f64::INFINITY;
    let mut violations = 0usize;
    let mut max_tau_identity_gap = 0.0f64;
    for (matrix_id, g) in matrices.iter().enumerate() {
        let (_, traj) = ns_run(g, &cfg, NsRecord::errors())?;
        let errors = traj.per_step_error.expect("errors were requested");
        let floor = error_lower_bound(g, poly.a, k_max)?;
        let report = spectral_report(g)?;
        let sqrt_r = (report.singular_values.len() as f64).sqrt();
        for (k, &err) in errors.iter().enumerate() {
            let measured = err / sqrt_r;
            let bound = floor.bound_per_k[k];
            let margin = measured - bound;
            min_margin = min_margin.min(margin);
            if margin < -1e-10 {
                violations += 1;
            }
            rows.push(BoundAuditRow {
                matrix_id,
                k,
                measured,
                bound,
            });
        }
        let log_a_kappa = report.condition_number.ln() / poly.a.ln();
        max_tau_identity_gap = max_tau_identity_gap.max((floor.tau_spread - log_a_kappa).abs());
        tau_rows.push(TauIdentityRow {
            matrix_id,
            tau_spread: floor.tau_spread,
            log_a_kappa,
        });
    }
    Ok(BoundAudit {
        rows,
        tau_rows,
        min_margin,
        violations,
        max_tau_identity_gap,
    })
}

// ── per-mode iteration sweep ─────────────────────────────────────────────────

/// One (matrix, mode, k) record of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub matrix_id: usize,
    pub mode: EquilMode,
    pub k: usize,
    /// ||X_k - Orth(S(M))||_F / sqrt(rank): the iteration's distance from the
    /// polar factor of the matrix it actually runs on.
    pub error: f64,
    pub kappa_pre: f64,
    pub kappa_post: f64,
    pub stable_rank_pre: f64,
    pub stable_rank_post: f64,
    pub entropy_pre: f64,
    pub entropy_post: f64,
}

/// Per-mode medians across the ensemble.
#[derive(Debug, Clone)]
pub struct ModeCurve {
    pub mode: EquilMode,
    /// median_error_per_k[k] = median over matrices of the step-k error.
    pub median_error_per_k: Vec<f64>,
    pub median_kappa_post: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<ModeCurve>,
    pub median_kappa_pre: f64,
}

/// Runs the iteration on every (matrix, mode) pair with mode order
/// RC, R, C, None, recording per-step errors and pre/post spectra.
pub fn ns_sweep(
    matrices: &[Matrix],
    poly: NsPolynomial,
    k_max: usize,
    eps: f64,
) -> Result<Sweep> {
    let ns_cfg = NsConfig::new(poly, k_max, Prescale::Frobenius);
    let mut rows = Vec::new();
    let mut kappa_pre_all = Vec::with_capacity(matrices.len());
    let mut error_by_mode: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::new(); k_max + 1]; EquilMode::ALL.len()];
    let mut kappa_post_by_mode: Vec<Vec<f64>> = vec![Vec::new(); EquilMode::ALL.len()];

    for (matrix_id, m) in matrices.iter().enumerate() {
        let pre = spectral_report(m)?;
        kappa_pre_all.push(pre.condition_number);
        for (mode_idx, &mode) in EquilMode::ALL.iter().enumerate() {
            let scaled = diag_pre(m, &EquilConfig::new(mode, eps)?)?.result;
            let post = if mode == EquilMode::None {
                pre.clone()
            } else {
                spectral_report(&scaled)?
            };
            let (_, traj) = ns_run(&scaled, &ns_cfg, NsRecord::errors())?;
            let errors = traj.per_step_error.expect("errors were requested");
            let sqrt_r = (post.singular_values.len() as f64).sqrt();
            kappa_post_by_mode[mode_idx].push(post.condition_number);
            for (k, &err) in errors.iter().enumerate() {
                let error = err / sqrt_r;
                error_by_mode[mode_idx][k].push(error);
                rows.push(SweepRow {
                    matrix_id,
                    mode,
                    k,
                    error,
                    kappa_pre: pre.condition_number,
                    kappa_post: post.condition_number,
                    stable_rank_pre: pre.stable_rank,
                    stable_rank_post: post.stable_rank,
                    entropy_pre: pre.entropy,
                    entropy_post: post.entropy,
                });
            }
        }
    }

    let curves = EquilMode::ALL
        .iter()
        .enumerate()
        .map(|(mode_idx, &mode)| ModeCurve {
            mode,
            median_error_per_k: error_by_mode[mode_idx]
                .iter()
                .map(|errs| median(errs))
                .collect(),
            median_kappa_post: median(&kappa_post_by_mode[mode_idx]),
        })
        .collect();

    Ok(Sweep {
        rows,
        curves,
        median_kappa_pre: median(&kappa_pre_all),
    })
}

// ── error-budget decomposition over an ensemble ──────────────────────────────

#[derive(Debug, Clone)]
pub struct DecompositionRow {
    pub matrix_id: usize,
    pub mode: EquilMode,
    pub approx_error: f64,
    pub precond_bias: f64,
    pub total: f64,
    /// total <= approx_error + precond_bias + 1e-9.
    pub within_triangle: bool,
}

/// Splits every (matrix, mode) pair's total error into the finite-step part
/// and the preconditioning bias.
pub fn decompose_ensemble(
    matrices: &[Matrix],
    modes: &[EquilMode],
    eps: f64,
    ns: &NsConfig,
) -> Result<Vec<DecompositionRow>> {
    let mut rows = Vec::with_capacity(matrices.len() * modes.len());
    for (matrix_id, m) in matrices.iter().enumerate() {
        for &mode in modes {
            let d = error_decomposition(m, &EquilConfig::new(mode, eps)?, ns)?;
            rows.push(DecompositionRow {
                matrix_id,
                mode,
                approx_error: d.approx_error,
                precond_bias: d.precond_bias,
                total: d.total,
                within_triangle: d.total <= d.approx_error + d.precond_bias + 1e-9,
            });
        }
    }
    Ok(rows)
}

// ── curvature-factor floor scan ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ChiFloorRow {
    pub m: usize,
    pub n: usize,
    pub g_inf: f64,
    pub eps: f64,
    pub chi: f64,
}

#[derive(Debug, Clone)]
pub struct ChiFloorAudit {
    pub rows: Vec<ChiFloorRow>,
    pub min_chi: f64,
    /// Rows with chi < 1/144 - 1e-12.
    pub violations: usize,
}

/// Samples random (m, n, G_inf) triples, sets the damping to the floor value
/// (4/5) G_inf^2 max(m, n), and confirms the curvature factor never drops
/// below its 1/144 floor.
pub fn chi_floor_audit(count: usize, seed: u64) -> Result<ChiFloorAudit> {
    let mut rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(count);
    let mut min_chi = f64::INFINITY;
    let mut violations = 0usize;
    for _ in 0..count {
        let m = 1 + rng.next_index(512);
        let n = 1 + rng.next_index(512);
        let g_inf = 10f64.powf(rng.next_open_unit() * 4.0 - 2.0);
        let eps = 0.8 * g_inf * g_inf * m.max(n) as f64;
        let cc = rc_constants(m, n, g_inf, eps, 1.0, 1.0, 1.0, 0.0)?;
        let chi = cc.chi_eps.expect("two-sided constants carry chi");
        min_chi = min_chi.min(chi);
        if chi < 1.0 / 144.0 - 1e-12 {
            violations += 1;
        }
        rows.push(ChiFloorRow {
            m,
            n,
            g_inf,
            eps,
            chi,
        });
    }
    Ok(ChiFloorAudit {
        rows,
        min_chi,
        violations,
    })
}

// ── alignment audit ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct AlignmentRow {
    pub matrix_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub zero_rows_planted: usize,
    pub margin: f64,
    pub margin_ns: f64,
}

#[derive(Debug, Clone)]
pub struct AlignmentAudit {
    pub rows: Vec<AlignmentRow>,
    pub min_margin: f64,
    pub min_margin_ns: f64,
    /// Rows where either margin drops below -1e-9.
    pub violations: usize,
}

/// The default shape mix for [`alignment_audit`].
pub fn alignment_shapes() -> Vec<(usize, usize)> {
    vec![(8, 8), (16, 32), (32, 16), (64, 64), (128, 256)]
}

/// Checks the alignment floors <M, Orth(P(M) M)> >= ||M||_F / sqrt(m) (and
/// the inexact variant) on `count` Gaussian matrices cycling through
/// `shapes`; every sixth matrix gets a block of zeroed rows and matrix 0 is
/// all zeros, so the degenerate cases are always on the hook.
pub fn alignment_audit(
    count: usize,
    shapes: &[(usize, usize)],
    seed: u64,
) -> Result<AlignmentAudit> {
    if shapes.is_empty() {
        return Err(Error::Usage("alignment audit needs at least one shape".into()));
    }
    let mut rows = Vec::with_capacity(count);
    let mut min_margin = f64::INFINITY;
    let mut min_margin_ns = f64::INFINITY;
    let mut violations = 0usize;
    for matrix_id in 0..count {
        let (m, n) = shapes[matrix_id % shapes.len()];
        let mut rng = Rng::for_index(seed, matrix_id as u64);
        let zero_rows_planted = if matrix_id == 0 {
            m
        } else if matrix_id % 6 == 0 {
            1 + m / 4
        } else {
            0
        };
        let mat = Matrix::from_fn(m, n, |i, j| {
            let _ = j;
            if i < zero_rows_planted {
                0.0
            } else {
                rng.next_gaussian()
            }
        });
        let margins = alignment_margin(&mat)?;
        let margin = margins.lhs - margins.rhs;
        let margin_ns = margins.lhs_ns - margins.rhs_ns;
        min_margin = min_margin.min(margin);
        min_margin_ns = min_margin_ns.min(margin_ns);
        if margin < -1e-9 || margin_ns < -1e-9 {
            violations += 1;
        }
        rows.push(AlignmentRow {
            matrix_id,
            rows: m,
            cols: n,
            zero_rows_planted,
            margin,
            margin_ns,
        });
    }
    Ok(AlignmentAudit {
        rows,
        min_margin,
        min_margin_ns,
        violations,
    })
}

// ── calibrated whitening families ────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ScalingPoint {
    /// Measured ||C||_2 (lands on the requested t by construction).
    pub c_norm: f64,
    pub zeroth_residual: f64,
    pub first_order_residual: f64,
}

#[derive(Debug, Clone)]
pub struct WhitenScaling {
    pub side: WhitenSide,
    pub points: Vec<ScalingPoint>,
    /// Log-log slope of zeroth_residual against ||C||_2; first order in C.
    pub zeroth_slope: f64,
    /// Log-log slope of first_order_residual; second order in C.
    pub first_slope: f64,
}

/// Builds one family member whose normalized Gram residual has spectral norm
/// exactly `t`, then sweeps `t_grid` and fits both residual slopes.
///
/// Row/column members plant N with unit marginal norms and Gram I + tS
/// (S symmetric, zero diagonal, unit spectral norm), then hide it behind a
/// one-decade diagonal scale spread. Two-sided members are alpha I + beta P
/// on a cyclic shift P, which has exactly unit row and column norms and
/// residual norm 2 alpha beta = t.
pub fn whitening_scaling(side: WhitenSide, t_grid: &[f64], seed: u64) -> Result<WhitenScaling> {
    if t_grid.is_empty() {
        return Err(Error::Usage("whitening scaling needs a nonempty t grid".into()));
    }
    if t_grid.iter().any(|&t| !(t.is_finite() && 0.0 < t && t < 1.0)) {
        return Err(Error::Domain(format!(
            "residual targets must lie strictly inside (0, 1), got {t_grid:?}"
        )));
    }
    let mut points = Vec::with_capacity(t_grid.len());
    for (idx, &t) in t_grid.iter().enumerate() {
        let m = whitening_family_member(side, t, seed.wrapping_add(idx as u64))?;
        let report = whitening_first_order(&m, side)?;
        points.push(ScalingPoint {
            c_norm: report.gram_residual_norm,
            zeroth_residual: report.zeroth_residual,
            first_order_residual: report.first_order_residual,
        });
    }
    let zeroth: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.c_norm.ln(), p.zeroth_residual.ln()))
        .collect();
    let first: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.c_norm.ln(), p.first_order_residual.ln()))
        .collect();
    Ok(WhitenScaling {
        side,
        points,
        zeroth_slope: fit_slope(&zeroth)?,
        first_slope: fit_slope(&first)?,
    })
}

/// A matrix whose `side`-normalized Gram residual C satisfies ||C||_2 = t.
pub fn whitening_family_member(side: WhitenSide, t: f64, seed: u64) -> Result<Matrix> {
    let mut rng = Rng::new(seed);
    match side {
        WhitenSide::Column => {
            let (m, n) = (48, 32);
            let s = symmetric_unit_zero_diag(n, &mut rng)?;
            let h_sqrt = spd_sqrt_of_identity_plus(&s, t)?;
            let q = qr_thin_q(&Matrix::from_fn(m, n, |_, _| rng.next_gaussian()))?;
            Ok(q.matmul(&h_sqrt).scale_cols(&decade_spread(n, 1.0)))
        }
        WhitenSide::Row => {
            let (m, n) = (32, 48);
            let s = symmetric_unit_zero_diag(m, &mut rng)?;
            let h_sqrt = spd_sqrt_of_identity_plus(&s, t)?;
            let q = qr_thin_q(&Matrix::from_fn(n, m, |_, _| rng.next_gaussian()))?;
            Ok(h_sqrt
                .matmul(&q.transpose())
                .scale_rows(&decade_spread(m, 1.0)))
        }
        WhitenSide::TwoSided => {
            let n = 40;
            let alpha = 0.5 * ((1.0 + t).sqrt() + (1.0 - t).sqrt());
            let beta = 0.5 * ((1.0 + t).sqrt() - (1.0 - t).sqrt());
            Ok(Matrix::from_fn(n, n, |i, j| {
                if i == j {
                    alpha
                } else if (i + 1) % n == j {
                    beta
                } else {
                    0.0
                }
            }))
        }
    }
}

/// Random symmetric matrix with zero diagonal scaled to unit spectral norm.
fn symmetric_unit_zero_diag(n: usize, rng: &mut Rng) -> Result<Matrix> {
    let raw = Matrix::from_fn(n, n, |_, _| rng.next_gaussian());
    let sym = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (raw.get(i, j) + raw.get(j, i))
        }
    });
    let norm = spectral_norm(&sym)?;
    Ok(sym.scaled(1.0 / norm))
}

/// Symmetric square root of I + tS for a unit-norm symmetric S and t < 1.
fn spd_sqrt_of_identity_plus(s: &Matrix, t: f64) -> Result<Matrix> {
    let n = s.rows();
    let mut h = s.scaled(t);
    for i in 0..n {
        h.set(i, i, h.get(i, i) + 1.0);
    }
    let dec = svd(&h)?;
    // For a positive-definite symmetric input the singular factors coincide,
    // so V sqrt(Sigma) V^T is the square root; symmetrize away the last bits
    // of drift.
    let v = &dec.right_vectors;
    let sqrt_sigma: Vec<f64> = dec.singular_values.iter().map(|x| x.sqrt()).collect();
    let root = v.scale_cols(&sqrt_sigma).matmul_nt(v);
    Ok(root.add(&root.transpose()).scaled(0.5))
}

/// n log-spread positive scales covering `decades` decades, centered at 1.
fn decade_spread(n: usize, decades: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let u = if n == 1 { 0.5 } else { j as f64 / (n - 1) as f64 };
            10f64.powf((u - 0.5) * decades)
        })
        .collect()
}

/// Least-squares slope of y against x.
///
/// # Errors
/// `Usage` with fewer than two points or a degenerate abscissa.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Usage("slope fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(x, y) in points {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    if var == 0.0 {
        return Err(Error::Usage("slope fit needs distinct abscissas".into()));
    }
    Ok(cov / var)
}

// ── trace post-processing ────────────────────────────────────────────────────

/// Trailing moving average: entry i averages series[i..i + window]. The
/// result has len - window + 1 entries.
///
/// # Errors
/// `Usage` when the window is zero or longer than the series.
pub fn smoothed(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > series.len() {
        return Err(Error::Usage(format!(
            "window {window} does not fit a series of length {}",
            series.len()
        )));
    }
    Ok(series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect())
}

/// True when every forward difference stays at or below `slack`.
pub fn is_monotone_nonincreasing(series: &[f64], slack: f64) -> bool {
    series.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Middle value (mean of the middle pair for even lengths). Empty input is a
/// caller bug.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

// ── theory-schedule training setups ──────────────────────────────────────────

/// The optimizer configuration the convergence analysis assumes: theory
/// learning-rate and momentum schedules, the envelope-respecting decay for
/// `rho` (or none when rho = 0), and the default step scale.
pub fn theory_train_config(
    mode: EquilMode,
    eps: f64,
    shape: (usize, usize),
    rho: f64,
    x1_norm: f64,
    eps_ns: f64,
) -> Result<OptConfig> {
    let a = ScaleRule::MuonDefault.scale_for(shape.0, shape.1)?;
    let weight_decay = if rho == 0.0 {
        ScheduleSpec::Constant(0.0)
    } else {
        ScheduleSpec::TheoryWd {
            rho,
            x1_norm,
            n_dim: shape.1,
            a_scale: a,
            eps_ns,
        }
    };
    Ok(OptConfig {
        equil: EquilConfig::new(mode, eps)?,
        ns: NsConfig::ns5(),
        nesterov: false,
        lr: ScheduleSpec::TheoryLr,
        beta: ScheduleSpec::TheoryBeta,
        weight_decay,
        scale_rule: ScaleRule::MuonDefault,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // ── ensembles ──

    #[test]
    fn ensemble_cycles_shapes_and_regenerates_bitwise() {
        let shapes = [(4, 4), (4, 8), (8, 4)];
        let a = build_ensemble(&shapes, 2.0, 1.5, 10, 7).unwrap();
        assert_eq!(a.len(), 10);
        for (i, m) in a.iter().enumerate() {
            assert_eq!((m.rows(), m.cols()), shapes[i % 3]);
        }
        let b = build_ensemble(&shapes, 2.0, 1.5, 10, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
    }

    // ── bound audit ──

    #[test]
    fn error_floor_holds_on_a_small_ensemble() {
        let mats = build_ensemble(&[(8, 8), (8, 16), (16, 8)], 2.0, 1.0, 12, 11).unwrap();
        let audit = bound_audit(&mats, NsPolynomial::TAYLOR, 8).unwrap();
        assert_eq!(audit.rows.len(), 12 * 9);
        assert_eq!(audit.violations, 0);
        assert!(audit.min_margin >= -1e-10, "margin {}", audit.min_margin);
        assert!(
            audit.max_tau_identity_gap <= 1e-10,
            "tau gap {}",
            audit.max_tau_identity_gap
        );
    }

    // ── sweep ──

    #[test]
    fn sweep_orders_modes_and_compresses_spectra() {
        let mats = build_ensemble(&[(24, 24), (16, 32)], 2.0, 1.5, 16, 13).unwrap();
        let sweep = ns_sweep(&mats, NsPolynomial::TAYLOR, 5, 1e-8).unwrap();
        assert_eq!(sweep.rows.len(), 16 * 4 * 6);
        // Rows come out grouped by matrix, then mode in RC, R, C, None order.
        assert_eq!(sweep.rows[0].mode, EquilMode::Rc);
        assert_eq!(sweep.rows[6].mode, EquilMode::R);
        assert_eq!(sweep.rows[3 * 6].mode, EquilMode::None);
        let rc = &sweep.curves[0];
        let none = &sweep.curves[3];
        assert_eq!(rc.mode, EquilMode::Rc);
        assert_eq!(none.mode, EquilMode::None);
        assert!(
            rc.median_kappa_post <= sweep.median_kappa_pre,
            "two-sided scaling should compress the median condition number: {} vs {}",
            rc.median_kappa_post,
            sweep.median_kappa_pre
        );
        assert!(
            rc.median_error_per_k[5] <= none.median_error_per_k[5],
            "RC error {} vs None error {}",
            rc.median_error_per_k[5],
            none.median_error_per_k[5]
        );
    }

    // ── decomposition ──

    #[test]
    fn decomposition_triangle_holds_everywhere() {
        let mats = build_ensemble(&[(12, 12), (8, 16)], 2.0, 1.5, 8, 17).unwrap();
        let rows = decompose_ensemble(&mats, &EquilMode::ALL, 1e-8, &NsConfig::ns5()).unwrap();
        assert_eq!(rows.len(), 8 * 4);
        for row in &rows {
            assert!(row.within_triangle, "{row:?}");
            if row.mode == EquilMode::None {
                assert_eq!(row.precond_bias, 0.0, "identity preconditioning has no bias");
            }
        }
    }

    // ── chi floor ──

    #[test]
    fn chi_never_falls_below_its_floor() {
        let audit = chi_floor_audit(300, 19).unwrap();
        assert_eq!(audit.violations, 0);
        assert!(audit.min_chi >= 1.0 / 144.0 - 1e-12, "min {}", audit.min_chi);
        // The floor is attained (up to sampling) only as both scaler bounds
        // peak, so the minimum should sit near but not below it.
        assert!(audit.min_chi < 0.02, "floor scan not tight: {}", audit.min_chi);
    }

    // ── alignment ──

    #[test]
    fn alignment_floors_hold_with_planted_zero_rows() {
        let audit = alignment_audit(60, &alignment_shapes(), 23).unwrap();
        assert_eq!(audit.violations, 0);
        assert!(audit.min_margin >= -1e-9);
        assert!(audit.min_margin_ns >= -1e-9);
        let planted: usize = audit.rows.iter().filter(|r| r.zero_rows_planted > 0).count();
        assert!(planted >= 10, "only {planted} degenerate members");
    }

    // ── whitening families ──

    #[test]
    fn family_members_land_on_the_requested_residual_norm() {
        for side in [WhitenSide::Row, WhitenSide::Column, WhitenSide::TwoSided] {
            for &t in &[0.1, 0.01] {
                let m = whitening_family_member(side, t, 31).unwrap();
                let report = whitening_first_order(&m, side).unwrap();
                assert!(
                    (report.gram_residual_norm - t).abs() <= 1e-10,
                    "{side:?} at t = {t}: ||C|| = {}",
                    report.gram_residual_norm
                );
            }
        }
    }

    #[test]
    fn residual_slopes_have_the_predicted_orders() {
        let grid = [1e-1, 1e-2, 1e-3];
        for side in [WhitenSide::Row, WhitenSide::Column, WhitenSide::TwoSided] {
            let scaling = whitening_scaling(side, &grid, 37).unwrap();
            assert!(
                (0.9..=1.1).contains(&scaling.zeroth_slope),
                "{side:?} zeroth slope {}",
                scaling.zeroth_slope
            );
            assert!(
                (1.8..=2.2).contains(&scaling.first_slope),
                "{side:?} first slope {}",
                scaling.first_slope
            );
        }
    }

    // ── smoothing and fits ──

    #[test]
    fn smoothing_and_monotonicity_helpers() {
        let s = smoothed(&[4.0, 2.0, 3.0, 1.0], 2).unwrap();
        assert_eq!(s, vec![3.0, 2.5, 2.0]);
        assert!(is_monotone_nonincreasing(&s, 0.0));
        assert!(!is_monotone_nonincreasing(&[1.0, 2.0], 0.5));
        assert!(is_monotone_nonincreasing(&[1.0, 2.0], 1.5));
        assert!(smoothed(&[1.0], 2).is_err());
        assert!(smoothed(&[1.0], 0).is_err());
    }

    #[test]
    fn slope_fit_recovers_an_exact_line() {
        let points: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        assert!((fit_slope(&points).unwrap() + 2.0).abs() <= 1e-12);
        assert!(fit_slope(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn median_handles_even_and_odd_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    // ── train configs ──

    #[test]
    fn theory_config_wires_the_envelope_decay() {
        let cfg = theory_train_config(EquilMode::R, 1e-8, (64, 32), 0.05, 0.0, 0.0).unwrap();
        match cfg.weight_decay {
            ScheduleSpec::TheoryWd { rho, n_dim, a_scale, .. } => {
                assert_eq!(rho, 0.05);
                assert_eq!(n_dim, 32);
                assert_eq!(a_scale, 0.2 * 8.0);
            }
            other => panic!("expected the envelope decay, got {other:?}"),
        }
        let zero = theory_train_config(EquilMode::R, 1e-8, (64, 32), 0.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.weight_decay, ScheduleSpec::Constant(0.0));
    }
}
