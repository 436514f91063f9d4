//! Polynomial orthogonalization: the Newton-Schulz family of odd-polynomial
//! iterations that push singular values toward 1 without ever forming an SVD.
//!
//! One step maps X to (aI + b XX^T + c (XX^T)^2) X, which acts on each
//! singular value s as the scalar polynomial phi(s) = a s + b s^3 + c s^5
//! while leaving both singular bases untouched. Iterating from a prescaled
//! copy of G therefore converges toward the polar factor of G when the
//! coefficients are chosen well.

use crate::error::{Error, Result};
use crate::linalg::{polar_factor, Matrix};

/// Coefficients (a, b, c) of phi(s) = a s + b s^3 + c s^5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NsPolynomial {
    /// Degree-5 Taylor coefficients of the matrix sign function: (15/8, -10/8,
    /// 3/8). Monotone on [0, 1] with phi(1) = 1, so iterates never overshoot.
    pub const TAYLOR: NsPolynomial = NsPolynomial {
        a: 1.875,
        b: -1.25,
        c: 0.375,
    };

    /// The aggressive tuned coefficients in common use for training runs.
    /// Faster early progress, but phi(1) != 1, so it trades a fixed point at 1
    /// for speed; audits that depend on the no-overshoot property use
    /// [`NsPolynomial::TAYLOR`] instead.
    pub const PRACTICAL: NsPolynomial = NsPolynomial {
        a: 3.4445,
        b: -4.7750,
        c: 2.0315,
    };

    /// phi(s) = a s + b s^3 + c s^5, the scalar action on a singular value.
    pub fn eval(&self, s: f64) -> f64 {
        let t = s * s;
        (self.a + self.b * t + self.c * t * t) * s
    }

    /// q(t) = a + b t + c t^2, so that phi(s) = s q(s^2).
    pub fn q(&self, t: f64) -> f64 {
        self.a + self.b * t + self.c * t * t
    }
}

/// Checks the coefficient conditions for a usable iteration polynomial:
/// a > 1, and 0 < q(t) <= a for every t in [0, 1].
///
/// The quadratic q is examined in closed form: both endpoints plus the
/// interior vertex when it falls inside (0, 1).
///
/// # Errors
/// `Domain`, stating which condition fails and at which t.
pub fn validate_polynomial(poly: &NsPolynomial) -> Result<()> {
    let (a, b, c) = (poly.a, poly.b, poly.c);
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(Error::Domain("polynomial coefficients must be finite".into()));
    }
    if a <= 1.0 {
        return Err(Error::Domain(format!(
            "leading coefficient a = {a} must exceed 1"
        )));
    }

    let mut candidates = vec![(0.0, poly.q(0.0)), (1.0, poly.q(1.0))];
    if c != 0.0 {
        let vertex = -b / (2.0 * c);
        if vertex > 0.0 && vertex < 1.0 {
            candidates.push((vertex, poly.q(vertex)));
        }
    }
    for &(t, q) in &candidates {
        if q <= 0.0 {
            return Err(Error::Domain(format!(
                "q(t) = {q} is not positive at t = {t}; the iteration would not preserve signs"
            )));
        }
        if q > a {
            return Err(Error::Domain(format!(
                "q(t) = {q} exceeds a = {a} at t = {t}; per-step growth would break the lower-bound analysis"
            )));
        }
    }
    Ok(())
}

/// How the input is normalized before iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prescale {
    /// X_0 = G / ||G||_F: all prescaled singular values lie in (0, 1].
    Frobenius,
    /// X_0 = G / max(1, ||G||_F): same, but inputs already inside the unit
    /// Frobenius ball are left untouched.
    Max1Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsConfig {
    pub polynomial: NsPolynomial,
    /// Iteration count K >= 0 (K = 0 returns the prescaled input).
    pub steps: usize,
    pub prescale: Prescale,
}

impl NsConfig {
    pub fn new(polynomial: NsPolynomial, steps: usize, prescale: Prescale) -> Self {
        Self {
            polynomial,
            steps,
            prescale,
        }
    }

    /// The standard five-step Taylor iteration with max(1, ||.||_F) prescale.
    pub fn ns5() -> Self {
        Self::new(NsPolynomial::TAYLOR, 5, Prescale::Max1Frobenius)
    }
}

impl Default for NsConfig {
    fn default() -> Self {
        Self::ns5()
    }
}

/// What [`ns_run`] should record along the way.
#[derive(Debug, Clone, Copy, Default)]
pub struct NsRecord {
    /// Keep a copy of every iterate X_0 ... X_K.
    pub iterates: bool,
    /// Record ||X_k - Orth(G)||_F for every k (costs one SVD of G).
    pub per_step_error: bool,
}

impl NsRecord {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn errors() -> Self {
        Self {
            iterates: false,
            per_step_error: true,
        }
    }

    pub fn full() -> Self {
        Self {
            iterates: true,
            per_step_error: true,
        }
    }
}

/// Recorded trajectory of one run; populated fields have length K + 1.
#[derive(Debug, Clone, Default)]
pub struct NsTrajectory {
    pub iterates: Option<Vec<Matrix>>,
    pub per_step_error: Option<Vec<f64>>,
}

/// Runs K polynomial-iteration steps on a prescaled copy of `g`.
///
/// The iteration works on whichever orientation has fewer rows (the Gram
/// matrix is formed on the small side) and transposes back, so callers never
/// see the orientation choice. The zero matrix maps to itself.
///
/// # Errors
/// `Domain` if the polynomial fails [`validate_polynomial`];
/// `NumericalFailure` (with the 1-based step index) if an iterate stops being
/// finite, which a valid polynomial and prescale avoid but a caller-supplied
/// combination can still provoke.
pub fn ns_run(g: &Matrix, cfg: &NsConfig, record: NsRecord) -> Result<(Matrix, NsTrajectory)> {
    validate_polynomial(&cfg.polynomial)?;

    if g.is_all_zero() {
        let mut traj = NsTrajectory::default();
        if record.iterates {
            traj.iterates = Some(vec![g.clone(); cfg.steps + 1]);
        }
        if record.per_step_error {
            traj.per_step_error = Some(vec![0.0; cfg.steps + 1]);
        }
        return Ok((g.clone(), traj));
    }

    let fro = g.frobenius_norm();
    let denom = match cfg.prescale {
        Prescale::Frobenius => fro,
        Prescale::Max1Frobenius => fro.max(1.0),
    };

    // Work so that rows <= cols; the Gram product then has the smaller side.
    let transposed = g.rows() > g.cols();
    let mut x = if transposed {
        g.transpose().scaled(1.0 / denom)
    } else {
        g.scaled(1.0 / denom)
    };
    let dim = x.rows();

    // Orth(G) in working orientation, only if errors were requested.
    let orth_work = if record.per_step_error {
        let o = polar_factor(g)?;
        Some(if transposed { o.transpose() } else { o })
    } else {
        None
    };

    let mut iterates = record.iterates.then(Vec::new);
    let mut errors = record.per_step_error.then(Vec::new);
    let push_records = |x: &Matrix, iterates: &mut Option<Vec<Matrix>>, errors: &mut Option<Vec<f64>>| {
        if let Some(list) = iterates.as_mut() {
            list.push(if transposed { x.transpose() } else { x.clone() });
        }
        if let (Some(list), Some(orth)) = (errors.as_mut(), orth_work.as_ref()) {
            list.push(x.sub(orth).frobenius_norm());
        }
    };
    push_records(&x, &mut iterates, &mut errors);

    let poly = cfg.polynomial;
    for step in 1..=cfg.steps {
        let p = x.matmul_nt(&x);
        let p2 = p.matmul(&p);
        let mut q = p2.scaled(poly.c);
        q.add_scaled(poly.b, &p);
        for i in 0..dim {
            q[(i, i)] += poly.a;
        }
        x = q.matmul(&x);
        if !x.is_all_finite() {
            return Err(Error::NumericalFailure { step });
        }
        push_records(&x, &mut iterates, &mut errors);
    }

    let out = if transposed { x.transpose() } else { x };
    Ok((
        out,
        NsTrajectory {
            iterates,
            per_step_error: errors,
        },
    ))
}

/// Five Taylor steps with max(1, ||.||_F) prescale; the workhorse
/// orthogonalizer used by the optimizer.
pub fn ns5(a: &Matrix) -> Result<Matrix> {
    ns_run(a, &NsConfig::ns5(), NsRecord::none()).map(|(out, _)| out)
}
