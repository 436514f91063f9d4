//! Diagonal row/column equilibration of momentum matrices.
//!
//! Given M, the scalers are built from squared row and column norms:
//! D_r = diag(rowsum(M .* M) + eps) and D_c = diag(colsum(M .* M) + eps).
//! The four modes rescale M as D_r^{-1/2} M D_c^{-1/2} (both sides), one side
//! only, or not at all. With eps = 0 the inverse square roots are taken in the
//! pseudoinverse sense: an all-zero row or column keeps scale 0 and stays
//! zero, instead of dividing by zero.

use crate::error::{Error, Result};
use crate::linalg::{row_col_sq_norms, Matrix};

/// Which sides get rescaled.
///
/// The ordering here (`Rc` < `R` < `C` < `None`) is also the canonical report
/// ordering used in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EquilMode {
    /// Rows and columns: D_r^{-1/2} M D_c^{-1/2}.
    Rc,
    /// Rows only: D_r^{-1/2} M.
    R,
    /// Columns only: M D_c^{-1/2}.
    C,
    /// Identity (no rescaling).
    None,
}

impl EquilMode {
    pub const ALL: [EquilMode; 4] = [EquilMode::Rc, EquilMode::R, EquilMode::C, EquilMode::None];

    pub fn label(self) -> &'static str {
        match self {
            EquilMode::Rc => "RC",
            EquilMode::R => "R",
            EquilMode::C => "C",
            EquilMode::None => "None",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rc" => Ok(EquilMode::Rc),
            "r" => Ok(EquilMode::R),
            "c" => Ok(EquilMode::C),
            "none" => Ok(EquilMode::None),
            other => Err(Error::Usage(format!(
                "unknown equilibration mode '{other}' (expected rc, r, c, or none)"
            ))),
        }
    }
}

impl std::fmt::Display for EquilMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilConfig {
    pub mode: EquilMode,
    /// Damping added inside the squared-norm sums; must be >= 0. Zero selects
    /// exact (pseudoinverse) scaling.
    pub epsilon: f64,
}

impl EquilConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(mode: EquilMode, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::Domain(format!(
                "equilibration epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self { mode, epsilon })
    }

    pub fn exact(mode: EquilMode) -> Self {
        Self { mode, epsilon: 0.0 }
    }
}

impl Default for EquilConfig {
    fn default() -> Self {
        Self {
            mode: EquilMode::Rc,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Result of one equilibration: the rescaled matrix together with the exact
/// diagonal scales that produced it, so `result = diag(row_scale) * input *
/// diag(col_scale)` entry for entry.
#[derive(Debug, Clone)]
pub struct EquilOutput {
    pub result: Matrix,
    /// Per-row multipliers; all ones when the mode leaves rows alone.
    pub row_scale: Vec<f64>,
    /// Per-column multipliers; all ones when the mode leaves columns alone.
    pub col_scale: Vec<f64>,
}

fn inv_sqrt_scales(sums: &[f64], epsilon: f64) -> Vec<f64> {
    sums.iter()
        .map(|&s| {
            let damped = s + epsilon;
            if damped == 0.0 {
                0.0
            } else {
                1.0 / damped.sqrt()
            }
        })
        .collect()
}

/// Applies the configured diagonal rescaling to `m`.
///
/// # Errors
/// `Domain` if `cfg.epsilon` is negative or non-finite.
pub fn diag_pre(m: &Matrix, cfg: &EquilConfig) -> Result<EquilOutput> {
    if !cfg.epsilon.is_finite() || cfg.epsilon < 0.0 {
        return Err(Error::Domain(format!(
            "equilibration epsilon must be finite and >= 0, got {}",
            cfg.epsilon
        )));
    }
    let (row_sums, col_sums) = row_col_sq_norms(m);
    let row_scale = match cfg.mode {
        EquilMode::Rc | EquilMode::R => inv_sqrt_scales(&row_sums, cfg.epsilon),
        EquilMode::C | EquilMode::None => vec![1.0; m.rows()],
    };
    let col_scale = match cfg.mode {
        EquilMode::Rc | EquilMode::C => inv_sqrt_scales(&col_sums, cfg.epsilon),
        EquilMode::R | EquilMode::None => vec![1.0; m.cols()],
    };
    let result = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        row_scale[i] * m.get(i, j) * col_scale[j]
    });
    Ok(EquilOutput {
        result,
        row_scale,
        col_scale,
    })
}

/// Interval check for the equilibration scales under an entry bound.
#[derive(Debug, Clone, Copy)]
pub struct ScalerBoundsReport {
    /// True when every row scale lies in [(n g^2 + eps)^{-1/2}, eps^{-1/2}]
    /// and every column scale in [(m g^2 + eps)^{-1/2}, eps^{-1/2}].
    pub ok: bool,
    /// Smallest scale observed on either side.
    pub min_scale: f64,
    /// Largest scale observed on either side.
    pub max_scale: f64,
}

/// Checks that the RC scales of `m` stay inside the interval implied by the
/// entry bound `|m_ij| <= g_inf`.
///
/// With eps = 0 the upper endpoint is unbounded; a zero row or column then
/// carries scale 0, which falls below the lower endpoint and is reported as
/// `ok = false` (the interval genuinely requires eps > 0 to absorb it).
///
/// # Errors
/// `Domain` if some entry exceeds `g_inf` in magnitude (the offending entry is
/// named), or if `g_inf`/`epsilon` are out of range.
pub fn scaler_bounds_report(m: &Matrix, g_inf: f64, epsilon: f64) -> Result<ScalerBoundsReport> {
    if !g_inf.is_finite() || g_inf <= 0.0 {
        return Err(Error::Domain(format!(
            "entry bound g_inf must be finite and positive, got {g_inf}"
        )));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Domain(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m.get(i, j);
            if v.abs() > g_inf {
                return Err(Error::Domain(format!(
                    "entry ({i}, {j}) = {v} exceeds the entry bound g_inf = {g_inf}"
                )));
            }
        }
    }

    let out = diag_pre(m, &EquilConfig::new(EquilMode::Rc, epsilon)?)?;
    let (rows, cols) = (m.rows() as f64, m.cols() as f64);
    let upper = if epsilon == 0.0 {
        f64::INFINITY
    } else {
        1.0 / epsilon.sqrt()
    };
    let row_lower = 1.0 / (cols * g_inf * g_inf + epsilon).sqrt();
    let col_lower = 1.0 / (rows * g_inf * g_inf + epsilon).sqrt();

    // Tiny relative slack so exact-boundary cases are not rejected on
    // rounding alone.
    let slack = 1.0 + 1e-12;
    let within = |s: f64, lower: f64| s >= lower / slack && s <= upper * slack;
    let ok = out.row_scale.iter().all(|&s| within(s, row_lower))
        && out.col_scale.iter().all(|&s| within(s, col_lower));

    let all = out.row_scale.iter().chain(out.col_scale.iter());
    let (mut min_scale, mut max_scale) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in all {
        min_scale = min_scale.min(s);
        max_scale = max_scale.max(s);
    }
    Ok(ScalerBoundsReport {
        ok,
        min_scale,
        max_scale,
    })
}
