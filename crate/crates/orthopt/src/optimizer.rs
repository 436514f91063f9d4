//! The equilibrated orthogonalized-momentum optimizer: heavy-ball momentum
//! with an optional Nesterov EMA-buffer lookahead, diagonal pre-scaling,
//! polynomial orthogonalization of the update direction, and a scaled step
//! with decoupled multiplicative weight decay. Also the closed-form schedules
//! the analysis assumes and the checker for its weight-decay envelope.

use crate::equilibrate::{diag_pre, EquilConfig, EquilOutput};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix};
use crate::newton_schulz::{ns_run, NsConfig, NsRecord};
use crate::problems::{evaluate, Batch, Problem};
use crate::rng::Rng;

// ── schedules ────────────────────────────────────────────────────────────────

/// Closed-form step-dependent coefficients, evaluated at 1-based step t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant(f64),
    /// coef * t^exponent.
    Power { coef: f64, exponent: f64 },
    /// t^(-3/4), the learning rate the stationarity analysis assumes.
    TheoryLr,
    /// 1 - t^(-1/2); zero at t = 1, so the first momentum is the first
    /// gradient.
    TheoryBeta,
    /// rho * t^(-1/4) / (x1_norm + 4 a_scale (1 + eps_ns) sqrt(n_dim)): the
    /// largest decay that keeps every step inside the decay envelope.
    TheoryWd {
        rho: f64,
        x1_norm: f64,
        n_dim: usize,
        a_scale: f64,
        eps_ns: f64,
    },
    /// Linear ramp to `peak` over `warmup_steps`, then cosine decay to zero
    /// at `total_steps`.
    WarmupCosine {
        peak: f64,
        warmup_steps: u64,
        total_steps: u64,
    },
}

/// Evaluates `spec` at step `t >= 1`.
///
/// # Errors
/// `Usage` when t = 0 (steps are 1-based); `Domain` when the schedule's
/// parameters are invalid or the evaluated value would be negative or
/// non-finite.
pub fn schedule_eval(spec: &ScheduleSpec, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Usage(
            "schedules are evaluated at 1-based steps; t = 0 is invalid".into(),
        ));
    }
    let tf = t as f64;
    let value = match *spec {
        ScheduleSpec::Constant(v) => v,
        ScheduleSpec::Power { coef, exponent } => coef * tf.powf(exponent),
        ScheduleSpec::TheoryLr => tf.powf(-0.75),
        ScheduleSpec::TheoryBeta => 1.0 - tf.powf(-0.5),
        ScheduleSpec::TheoryWd {
            rho,
            x1_norm,
            n_dim,
            a_scale,
            eps_ns,
        } => {
            if !(rho.is_finite() && rho >= 0.0) || !(x1_norm.is_finite() && x1_norm >= 0.0) {
                return Err(Error::Domain(format!(
                    "decay schedule needs rho >= 0 and x1_norm >= 0, got {rho} and {x1_norm}"
                )));
            }
            if !(a_scale.is_finite() && a_scale > 0.0) || n_dim == 0 {
                return Err(Error::Domain(format!(
                    "decay schedule needs a_scale > 0 and n_dim >= 1, got {a_scale} and {n_dim}"
                )));
            }
            if !(eps_ns.is_finite() && (0.0..1.0).contains(&eps_ns)) {
                return Err(Error::Domain(format!(
                    "decay schedule needs eps_ns in [0, 1), got {eps_ns}"
                )));
            }
            let denom = x1_norm + 4.0 * a_scale * (1.0 + eps_ns) * (n_dim as f64).sqrt();
            rho * tf.powf(-0.25) / denom
        }
        ScheduleSpec::WarmupCosine {
            peak,
            warmup_steps,
            total_steps,
        } => {
            if total_steps < warmup_steps.max(1) {
                return Err(Error::Domain(format!(
                    "warmup_cosine needs total_steps >= max(warmup_steps, 1), \
                     got warmup {warmup_steps}, total {total_steps}"
                )));
            }
            if t <= warmup_steps {
                peak * tf / warmup_steps as f64
            } else if t >= total_steps {
                0.0
            } else {
                let progress =
                    (tf - warmup_steps as f64) / (total_steps - warmup_steps) as f64;
                peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    };
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::Domain(format!(
            "schedule produced {value} at t = {t}; values must be nonnegative and finite"
        )));
    }
    Ok(value)
}

// ── optimizer configuration and state ────────────────────────────────────────

/// How the per-matrix step scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// a = 0.2 sqrt(max(m, n)), recomputed from each parameter's shape.
    MuonDefault,
    /// A fixed caller-supplied a > 0.
    Custom(f64),
}

impl ScaleRule {
    /// The scale for an m x n parameter.
    ///
    /// # Errors
    /// `Domain` for a non-positive custom scale.
    pub fn scale_for(&self, m: usize, n: usize) -> Result<f64> {
        match *self {
            ScaleRule::MuonDefault => Ok(0.2 * (m.max(n) as f64).sqrt()),
            ScaleRule::Custom(a) => {
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::Domain(format!(
                        "custom step scale must be positive and finite, got {a}"
                    )));
                }
                Ok(a)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptConfig {
    pub equil: EquilConfig,
    pub ns: NsConfig,
    /// Lookahead in EMA-buffer form: the orthogonalized direction is built
    /// from beta_{t+1} M_t + (1 - beta_{t+1}) G_t, and the diagonal
    /// pre-scaling reads its sums from that same lookahead matrix.
    pub nesterov: bool,
    pub lr: ScheduleSpec,
    pub beta: ScheduleSpec,
    pub weight_decay: ScheduleSpec,
    pub scale_rule: ScaleRule,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            equil: EquilConfig::default(),
            ns: NsConfig::ns5(),
            nesterov: false,
            lr: ScheduleSpec::Constant(0.02),
            beta: ScheduleSpec::Constant(0.95),
            weight_decay: ScheduleSpec::Constant(0.0),
            scale_rule: ScaleRule::MuonDefault,
        }
    }
}

/// Parameter, momentum buffer, and the 1-based step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub param: Matrix,
    pub momentum: Matrix,
    pub step_count: u64,
}

impl OptState {
    /// Fresh state at X_1 = `param` with zero momentum.
    pub fn init(param: Matrix) -> Self {
        let momentum = Matrix::zeros(param.rows(), param.cols());
        Self {
            param,
            momentum,
            step_count: 1,
        }
    }
}

/// Diagnostics from one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub grad_norm: f64,
    /// Frobenius norm of the updated momentum M_t (no bias correction).
    pub momentum_norm: f64,
    /// ||X_{t+1} - X_t||_F.
    pub update_norm: f64,
    pub equil_out: Option<EquilOutput>,
    pub o_frobenius: f64,
    pub o_spectral: f64,
}

/// Applies one optimizer step at t = `state.step_count`:
///
///   M_t     = beta_t M_{t-1} + (1 - beta_t) G_t
///   M~_t    = beta_{t+1} M_t + (1 - beta_{t+1}) G_t   (nesterov only)
///   M^_t    = diag_pre(M~_t)
///   O_t     = ns_run(M^_t)
///   X_{t+1} = (1 - lambda_t eta_t) X_t - a eta_t O_t
///
/// # Errors
/// `ShapeMismatch` when the gradient shape differs from the parameter;
/// `Usage` for a zero step counter; schedule, equilibration, and iteration
/// errors propagate.
pub fn step(state: OptState, grad: &Matrix, cfg: &OptConfig) -> Result<(OptState, StepReport)> {
    let (rows, cols) = (state.param.rows(), state.param.cols());
    if (grad.rows(), grad.cols()) != (rows, cols) {
        return Err(Error::ShapeMismatch {
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", grad.rows(), grad.cols()),
            context: "gradient",
        });
    }
    let t = state.step_count;
    let beta_t = schedule_eval(&cfg.beta, t)?;
    if beta_t > 1.0 {
        return Err(Error::Domain(format!(
            "momentum coefficient must lie in [0, 1], got {beta_t} at t = {t}"
        )));
    }
    let mut momentum = state.momentum.scaled(beta_t);
    momentum.add_scaled(1.0 - beta_t, grad);

    let lookahead = if cfg.nesterov {
        let beta_next = schedule_eval(&cfg.beta, t + 1)?;
        let mut la = momentum.scaled(beta_next);
        la.add_scaled(1.0 - beta_next, grad);
        la
    } else {
        momentum.clone()
    };

    let equil_out = diag_pre(&lookahead, &cfg.equil)?;
    let (o, _) = ns_run(&equil_out.result, &cfg.ns, NsRecord::none())?;

    let eta_t = schedule_eval(&cfg.lr, t)?;
    let lambda_t = schedule_eval(&cfg.weight_decay, t)?;
    let a = cfg.scale_rule.scale_for(rows, cols)?;

    let mut param = state.param.scaled(1.0 - lambda_t * eta_t);
    param.add_scaled(-(a * eta_t), &o);

    let report = StepReport {
        grad_norm: grad.frobenius_norm(),
        momentum_norm: momentum.frobenius_norm(),
        update_norm: param.sub(&state.param).frobenius_norm(),
        o_frobenius: o.frobenius_norm(),
        o_spectral: spectral_norm(&o)?,
        equil_out: Some(equil_out),
    };
    Ok((
        OptState {
            param,
            momentum,
            step_count: t + 1,
        },
        report,
    ))
}

// ── training loop ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Record the full-data gradient norm (and a parameter snapshot when
    /// enabled) every this many steps.
    pub eval_interval: u64,
    pub snapshots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eval_interval: 50,
            snapshots: false,
        }
    }
}

/// Everything a run records, one entry per step unless noted.
#[derive(Debug, Clone)]
pub struct Trace {
    pub minibatch_loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub momentum_norm: Vec<f64>,
    /// ||X_t||_F before the step, aligned with the step's schedules.
    pub param_norm: Vec<f64>,
    pub update_norm: Vec<f64>,
    pub o_frobenius: Vec<f64>,
    pub o_spectral: Vec<f64>,
    pub lr: Vec<f64>,
    pub beta: Vec<f64>,
    pub weight_decay: Vec<f64>,
    /// (steps completed, full-data gradient norm); the first entry is the
    /// starting point with 0 steps completed.
    pub full_grad_norm: Vec<(u64, f64)>,
    /// (steps completed, parameter copy) at the same cadence, when enabled.
    pub snapshots: Option<Vec<(u64, Matrix)>>,
    pub final_param: Matrix,
    // The exact configuration the trace was produced under, for checkers.
    pub lr_spec: ScheduleSpec,
    pub beta_spec: ScheduleSpec,
    pub wd_spec: ScheduleSpec,
    pub scale_a: f64,
    pub param_cols: usize,
    pub steps: u64,
    pub seed: u64,
}

/// Runs `steps` optimizer steps on `problem` from its default initialization,
/// sampling a fresh mini-batch each step. Deterministic given `seed`.
///
/// # Errors
/// `Usage` when steps = 0; everything from [`step`] propagates.
pub fn run(
    problem: &Problem,
    cfg: &OptConfig,
    steps: u64,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trace> {
    let init = problem.default_init(seed);
    run_from(problem, init, cfg, steps, seed, opts)
}

/// As [`run`], but starting from a caller-chosen X_1.
pub fn run_from(
    problem: &Problem,
    x1: Matrix,
    cfg: &OptConfig,
    steps: u64,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trace> {
    if steps == 0 {
        return Err(Error::Usage("a run needs at least 1 step".into()));
    }
    if opts.eval_interval == 0 {
        return Err(Error::Usage("eval_interval must be at least 1".into()));
    }
    let (rows, cols) = (x1.rows(), x1.cols());
    let scale_a = cfg.scale_rule.scale_for(rows, cols)?;
    let mut batch_rng = Rng::for_index(seed, 1);

    let cap = steps as usize;
    let mut trace = Trace {
        minibatch_loss: Vec::with_capacity(cap),
        grad_norm: Vec::with_capacity(cap),
        momentum_norm: Vec::with_capacity(cap),
        param_norm: Vec::with_capacity(cap),
        update_norm: Vec::with_capacity(cap),
        o_frobenius: Vec::with_capacity(cap),
        o_spectral: Vec::with_capacity(cap),
        lr: Vec::with_capacity(cap),
        beta: Vec::with_capacity(cap),
        weight_decay: Vec::with_capacity(cap),
        full_grad_norm: Vec::new(),
        snapshots: opts.snapshots.then(Vec::new),
        final_param: x1.clone(),
        lr_spec: cfg.lr,
        beta_spec: cfg.beta,
        wd_spec: cfg.weight_decay,
        scale_a,
        param_cols: cols,
        steps,
        seed,
    };

    let full_norm = |x: &Matrix| -> Result<f64> {
        Ok(evaluate(problem, x, Batch::Full)?.grad.frobenius_norm())
    };
    trace.full_grad_norm.push((0, full_norm(&x1)?));
    if let Some(snaps) = trace.snapshots.as_mut() {
        snaps.push((0, x1.clone()));
    }

    let mut state = OptState::init(x1);
    for t in 1..=steps {
        let eval = evaluate(problem, &state.param, Batch::Sample(&mut batch_rng))?;
        trace.minibatch_loss.push(eval.loss);
        trace.param_norm.push(state.param.frobenius_norm());
        trace.lr.push(schedule_eval(&cfg.lr, t)?);
        trace.beta.push(schedule_eval(&cfg.beta, t)?);
        trace.weight_decay.push(schedule_eval(&cfg.weight_decay, t)?);

        let (next, report) = step(state, &eval.grad, cfg)?;
        state = next;
        trace.grad_norm.push(report.grad_norm);
        trace.momentum_norm.push(report.momentum_norm);
        trace.update_norm.push(report.update_norm);
        trace.o_frobenius.push(report.o_frobenius);
        trace.o_spectral.push(report.o_spectral);

        if t % opts.eval_interval == 0 || t == steps {
            trace.full_grad_norm.push((t, full_norm(&state.param)?));
            if let Some(snaps) = trace.snapshots.as_mut() {
                snaps.push((t, state.param.clone()));
            }
        }
    }
    trace.final_param = state.param;
    Ok(trace)
}

// ── weight-decay envelope checker ────────────────────────────────────────────

/// Result of checking a theory-schedule trace against its decay envelope.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeReport {
    /// Both inequalities held at every recorded step (1e-9 slack).
    pub ok: bool,
    /// max over steps of lambda_t ||X_t||_F, which must stay at or below rho.
    pub max_lambda_x: f64,
    /// max over steps of ||X_{t+1} - X_t||_F / ((a(1+eps_ns) sqrt(n) + rho) eta_t),
    /// which must stay at or below 1.
    pub max_step_ratio: f64,
}

/// Checks the two envelope inequalities on every step of `trace`:
/// lambda_t ||X_t||_F <= rho and
/// ||X_{t+1} - X_t||_F <= (a (1 + eps_ns) sqrt(n) + rho) eta_t.
///
/// # Errors
/// `Usage` unless the trace was produced under the theory learning-rate and
/// momentum schedules with either the theory decay schedule or no decay at
/// all; `Domain` for invalid rho or eps_ns.
pub fn wd_envelope_check(trace: &Trace, rho: f64, eps_ns: f64) -> Result<EnvelopeReport> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Domain(format!("rho must be nonnegative, got {rho}")));
    }
    if !(eps_ns.is_finite() && (0.0..1.0).contains(&eps_ns)) {
        return Err(Error::Domain(format!(
            "eps_ns must lie in [0, 1), got {eps_ns}"
        )));
    }
    let theory_schedules = trace.lr_spec == ScheduleSpec::TheoryLr
        && trace.beta_spec == ScheduleSpec::TheoryBeta
        && matches!(
            trace.wd_spec,
            ScheduleSpec::TheoryWd { .. } | ScheduleSpec::Constant(0.0)
        );
    if !theory_schedules {
        return Err(Error::Usage(
            "the decay envelope is only defined for traces run under the theory schedules \
             (lr t^-3/4, beta 1 - t^-1/2, theory decay or zero decay)"
                .into(),
        ));
    }

    let step_scale = trace.scale_a * (1.0 + eps_ns) * (trace.param_cols as f64).sqrt() + rho;
    let mut max_lambda_x = 0.0f64;
    let mut max_step_ratio = 0.0f64;
    let mut ok = true;
    for i in 0..trace.update_norm.len() {
        let lambda_x = trace.weight_decay[i] * trace.param_norm[i];
        max_lambda_x = max_lambda_x.max(lambda_x);
        if lambda_x > rho + 1e-9 {
            ok = false;
        }
        let bound = step_scale * trace.lr[i];
        if trace.update_norm[i] > bound + 1e-9 {
            ok = false;
        }
        if bound > 0.0 {
            max_step_ratio = max_step_ratio.max(trace.update_norm[i] / bound);
        }
    }
    Ok(EnvelopeReport {
        ok,
        max_lambda_x,
        max_step_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrate::EquilMode;
    use crate::newton_schulz::{NsPolynomial, Prescale};
    use crate::problems::{make_problem, ProblemKind};

    fn theory_cfg(mode: EquilMode, eps: f64, wd: ScheduleSpec) -> OptConfig {
        OptConfig {
            equil: EquilConfig::new(mode, eps).unwrap(),
            ns: NsConfig::ns5(),
            nesterov: false,
            lr: ScheduleSpec::TheoryLr,
            beta: ScheduleSpec::TheoryBeta,
            weight_decay: wd,
            scale_rule: ScaleRule::MuonDefault,
        }
    }

    // ── schedules ──

    #[test]
    fn schedule_known_values() {
        assert_eq!(schedule_eval(&ScheduleSpec::TheoryLr, 16).unwrap(), 0.125);
        assert_eq!(schedule_eval(&ScheduleSpec::TheoryBeta, 4).unwrap(), 0.5);
        assert_eq!(schedule_eval(&ScheduleSpec::TheoryBeta, 1).unwrap(), 0.0);
        assert_eq!(
            schedule_eval(&ScheduleSpec::Constant(0.95), 1000).unwrap(),
            0.95
        );
        let p = ScheduleSpec::Power {
            coef: 3.0,
            exponent: -1.0,
        };
        assert!((schedule_eval(&p, 6).unwrap() - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn schedule_rejects_zero_step_and_negative_values() {
        assert!(matches!(
            schedule_eval(&ScheduleSpec::TheoryLr, 0),
            Err(Error::Usage(_))
        ));
        assert!(schedule_eval(&ScheduleSpec::Constant(-0.1), 5).is_err());
    }

    #[test]
    fn theory_wd_closed_form() {
        let spec = ScheduleSpec::TheoryWd {
            rho: 0.5,
            x1_norm: 2.0,
            n_dim: 4,
            a_scale: 1.0,
            eps_ns: 0.0,
        };
        // denom = 2 + 4 * 1 * 2 = 10; t = 16 -> 0.5 / (2 * 10) = 0.025.
        assert!((schedule_eval(&spec, 16).unwrap() - 0.025).abs() <= 1e-15);
    }

    #[test]
    fn warmup_cosine_shape() {
        let s = ScheduleSpec::WarmupCosine {
            peak: 1.0,
            warmup_steps: 10,
            total_steps: 100,
        };
        assert!((schedule_eval(&s, 5).unwrap() - 0.5).abs() <= 1e-15);
        assert_eq!(schedule_eval(&s, 10).unwrap(), 1.0);
        assert!((schedule_eval(&s, 55).unwrap() - 0.5).abs() <= 1e-12);
        assert_eq!(schedule_eval(&s, 100).unwrap(), 0.0);
        assert_eq!(schedule_eval(&s, 5000).unwrap(), 0.0);
        let bad = ScheduleSpec::WarmupCosine {
            peak: 1.0,
            warmup_steps: 10,
            total_steps: 5,
        };
        assert!(schedule_eval(&bad, 1).is_err());
    }

    // ── single steps ──

    #[test]
    fn one_by_one_hand_trace() {
        // X1 = 0, G1 = 2, theory schedules (beta_1 = 0, eta_1 = 1), row mode
        // with eps = 0, lambda = 0. M1 = 2, the row scaler divides by 2, the
        // Taylor iteration fixes 1 exactly, and a = 0.2 sqrt(1), so the step
        // lands on exactly -0.2.
        let cfg = theory_cfg(EquilMode::R, 0.0, ScheduleSpec::Constant(0.0));
        let state = OptState::init(Matrix::zeros(1, 1));
        let g = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let (next, report) = step(state, &g, &cfg).unwrap();
        assert_eq!(next.param.values(), &[-0.2]);
        assert_eq!(next.momentum.values(), &[2.0]);
        assert_eq!(next.step_count, 2);
        assert_eq!(report.o_frobenius, 1.0);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut cfg = theory_cfg(EquilMode::Rc, 1e-8, ScheduleSpec::Constant(0.3));
        cfg.lr = ScheduleSpec::Constant(0.5);
        let x = Matrix::from_fn(3, 4, |i, j| (i + j) as f64 - 2.0);
        let state = OptState::init(x.clone());
        let g = Matrix::zeros(3, 4);
        let (next, report) = step(state, &g, &cfg).unwrap();
        let want = x.scaled(1.0 - 0.3 * 0.5);
        assert_eq!(next.param.values(), want.values());
        assert_eq!(report.o_frobenius, 0.0);
    }

    #[test]
    fn momentum_has_no_bias_correction() {
        let mut cfg = theory_cfg(EquilMode::None, 0.0, ScheduleSpec::Constant(0.0));
        cfg.beta = ScheduleSpec::Constant(0.5);
        let state = OptState::init(Matrix::zeros(1, 1));
        let g = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let (next, report) = step(state, &g, &cfg).unwrap();
        assert_eq!(next.momentum.values(), &[1.0]);
        assert_eq!(report.momentum_norm, 1.0);
    }

    #[test]
    fn first_step_momentum_equals_gradient_under_theory_beta() {
        let cfg = theory_cfg(EquilMode::R, 1e-8, ScheduleSpec::Constant(0.0));
        let state = OptState::init(Matrix::zeros(2, 3));
        let g = Matrix::from_fn(2, 3, |i, j| (i as f64) - 0.7 * (j as f64) + 0.2);
        let (next, _) = step(state, &g, &cfg).unwrap();
        assert_eq!(next.momentum.values(), g.values());
    }

    #[test]
    fn gradient_shape_mismatch_is_rejected() {
        let cfg = OptConfig::default();
        let state = OptState::init(Matrix::zeros(2, 3));
        let g = Matrix::zeros(3, 2);
        assert!(matches!(
            step(state, &g, &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn update_norm_matches_step_size_without_decay() {
        let mut rng = Rng::new(81);
        let cfg = theory_cfg(EquilMode::Rc, 1e-8, ScheduleSpec::Constant(0.0));
        let mut state = OptState::init(Matrix::zeros(6, 9));
        for t in 1..=4u64 {
            let g = Matrix::from_fn(6, 9, |_, _| rng.next_gaussian());
            let (next, report) = step(state, &g, &cfg).unwrap();
            let a = 0.2 * 9.0f64.sqrt();
            let eta = schedule_eval(&ScheduleSpec::TheoryLr, t).unwrap();
            assert!(
                (report.update_norm - a * eta * report.o_frobenius).abs()
                    <= 1e-12 * report.update_norm.max(1.0),
                "t = {t}"
            );
            // The Taylor polynomial never pushes a singular value above 1.
            assert!(report.o_frobenius <= 6.0f64.sqrt() * (1.0 + 1e-12));
            assert!(report.o_spectral <= 1.0 + 1e-12);
            state = next;
        }
    }

    #[test]
    fn row_mode_is_equivariant_to_row_permutation() {
        // Swapping rows of X and every G produces exactly the row-swapped
        // trajectory: row scaling, orthogonalization, and the update all
        // commute with the permutation.
        let mut rng = Rng::new(82);
        let perm = [3usize, 0, 2, 1];
        let cfg = theory_cfg(EquilMode::R, 0.0, ScheduleSpec::Constant(0.0));
        let x0 = Matrix::from_fn(4, 6, |_, _| rng.next_gaussian());
        let x0_p = Matrix::from_fn(4, 6, |i, j| x0.get(perm[i], j));
        let mut plain = OptState::init(x0);
        let mut permuted = OptState::init(x0_p);
        for _ in 0..3 {
            let g = Matrix::from_fn(4, 6, |_, _| rng.next_gaussian());
            let g_p = Matrix::from_fn(4, 6, |i, j| g.get(perm[i], j));
            plain = step(plain, &g, &cfg).unwrap().0;
            permuted = step(permuted, &g_p, &cfg).unwrap().0;
        }
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..6 {
                let gap = (permuted.param.get(i, j) - plain.param.get(pi, j)).abs();
                assert!(gap <= 1e-9, "entry ({i}, {j}) differs by {gap}");
            }
        }
    }

    #[test]
    fn none_mode_with_deep_iteration_matches_straight_line_reference() {
        // Independent single-purpose reimplementation: plain momentum plus an
        // exact polar factor (via the SVD), no equilibration. The optimizer
        // in None mode with a deep Taylor iteration must match it closely.
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[4, 3], 24, 0.2, 83).unwrap();
        let steps = 20u64;
        let seed = 830u64;
        let cfg = OptConfig {
            equil: EquilConfig::new(EquilMode::None, 0.0).unwrap(),
            ns: NsConfig::new(NsPolynomial::TAYLOR, 60, Prescale::Max1Frobenius),
            nesterov: false,
            lr: ScheduleSpec::Constant(0.05),
            beta: ScheduleSpec::Constant(0.9),
            weight_decay: ScheduleSpec::Constant(0.01),
            scale_rule: ScaleRule::MuonDefault,
        };
        let trace = run(&p, &cfg, steps, seed, &RunOptions::default()).unwrap();

        // Straight-line reference sharing only the problem and the rng.
        let mut x = p.default_init(seed);
        let mut momentum = Matrix::zeros(4, 3);
        let mut batch_rng = Rng::for_index(seed, 1);
        let a = 0.2 * 2.0;
        for _ in 1..=steps {
            let g = evaluate(&p, &x, Batch::Sample(&mut batch_rng)).unwrap().grad;
            momentum = momentum.scaled(0.9).add(&g.scaled(0.1));
            let o = crate::linalg::polar_factor(&momentum).unwrap();
            x = x.scaled(1.0 - 0.01 * 0.05).add(&o.scaled(-a * 0.05));
        }
        let gap = trace.final_param.sub(&x).max_abs();
        assert!(gap <= 1e-10, "reference disagreement {gap}");
    }

    // ── runs ──

    #[test]
    fn run_of_one_step_has_unit_length_trace() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[3, 2], 8, 0.1, 84).unwrap();
        let cfg = theory_cfg(EquilMode::R, 1e-8, ScheduleSpec::Constant(0.0));
        let trace = run(&p, &cfg, 1, 84, &RunOptions::default()).unwrap();
        assert_eq!(trace.minibatch_loss.len(), 1);
        assert_eq!(trace.update_norm.len(), 1);
        assert_eq!(trace.full_grad_norm.len(), 2, "baseline plus final");
        assert_eq!(trace.full_grad_norm[0].0, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = make_problem(ProblemKind::Mlp2Classification, &[3, 4, 2], 20, 1.0, 85).unwrap();
        let cfg = OptConfig::default();
        let t1 = run(&p, &cfg, 25, 85, &RunOptions::default()).unwrap();
        let t2 = run(&p, &cfg, 25, 85, &RunOptions::default()).unwrap();
        assert_eq!(t1.minibatch_loss, t2.minibatch_loss);
        assert_eq!(t1.final_param.values(), t2.final_param.values());
        assert_eq!(t1.full_grad_norm, t2.full_grad_norm);
    }

    #[test]
    fn both_modes_reduce_least_squares_loss() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[8, 6], 64, 0.1, 86).unwrap();
        let x1 = p.default_init(86);
        let initial = evaluate(&p, &x1, Batch::Full).unwrap().loss;
        for mode in [EquilMode::None, EquilMode::R] {
            let cfg = theory_cfg(mode, 1e-8, ScheduleSpec::Constant(0.0));
            let trace = run(&p, &cfg, 300, 86, &RunOptions::default()).unwrap();
            let fin = evaluate(&p, &trace.final_param, Batch::Full).unwrap().loss;
            assert!(
                fin < initial,
                "mode {mode:?}: final {fin} not below initial {initial}"
            );
        }
    }

    #[test]
    fn nesterov_lookahead_changes_but_tracks_the_plain_run() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[5, 4], 32, 0.2, 87).unwrap();
        let mut cfg = theory_cfg(EquilMode::Rc, 1e-8, ScheduleSpec::Constant(0.0));
        let plain = run(&p, &cfg, 60, 87, &RunOptions::default()).unwrap();
        cfg.nesterov = true;
        let nesterov = run(&p, &cfg, 60, 87, &RunOptions::default()).unwrap();
        assert_ne!(
            plain.final_param.values(),
            nesterov.final_param.values(),
            "lookahead must change the trajectory"
        );
        let fin = evaluate(&p, &nesterov.final_param, Batch::Full).unwrap().loss;
        let initial = evaluate(&p, &p.default_init(87), Batch::Full).unwrap().loss;
        assert!(fin < initial);
    }

    // ── envelope ──

    #[test]
    fn envelope_holds_for_theory_runs() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[9, 6], 48, 0.05, 88).unwrap();
        let (m, n) = (9usize, 6usize);
        let a = 0.2 * (m.max(n) as f64).sqrt();
        let rho = 0.01 * a / (m as f64).sqrt();
        let wd = ScheduleSpec::TheoryWd {
            rho,
            x1_norm: 0.0,
            n_dim: n,
            a_scale: a,
            eps_ns: 0.0,
        };
        let cfg = theory_cfg(EquilMode::R, 1e-8, wd);
        let trace = run(&p, &cfg, 200, 88, &RunOptions::default()).unwrap();
        let rep = wd_envelope_check(&trace, rho, 0.0).unwrap();
        assert!(rep.ok, "max lambda x = {}, max ratio = {}", rep.max_lambda_x, rep.max_step_ratio);
        assert!(rep.max_lambda_x <= rho + 1e-9);
        assert!(rep.max_step_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn envelope_with_zero_decay_is_trivially_tight() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[4, 4], 16, 0.1, 89).unwrap();
        let cfg = theory_cfg(EquilMode::R, 1e-8, ScheduleSpec::Constant(0.0));
        let trace = run(&p, &cfg, 50, 89, &RunOptions::default()).unwrap();
        let rep = wd_envelope_check(&trace, 0.0, 0.0).unwrap();
        assert!(rep.ok);
        assert_eq!(rep.max_lambda_x, 0.0);
    }

    #[test]
    fn corrupted_decay_entry_fails_the_envelope() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[4, 4], 16, 0.1, 90).unwrap();
        let a = 0.2 * 2.0;
        let rho = 0.01 * a / 2.0;
        let wd = ScheduleSpec::TheoryWd {
            rho,
            x1_norm: 0.0,
            n_dim: 4,
            a_scale: a,
            eps_ns: 0.0,
        };
        let cfg = theory_cfg(EquilMode::R, 1e-8, wd);
        let mut trace = run(&p, &cfg, 50, 90, &RunOptions::default()).unwrap();
        // Inflate one recorded decay value past the envelope.
        let i = 30;
        trace.weight_decay[i] = (rho + 1.0) / trace.param_norm[i].max(1e-12);
        let rep = wd_envelope_check(&trace, rho, 0.0).unwrap();
        assert!(!rep.ok, "corrupted trace must fail");
    }

    #[test]
    fn envelope_rejects_non_theory_traces() {
        let p = make_problem(ProblemKind::StochasticLeastSquares, &[4, 4], 16, 0.1, 91).unwrap();
        let cfg = OptConfig::default();
        let trace = run(&p, &cfg, 10, 91, &RunOptions::default()).unwrap();
        assert!(matches!(
            wd_envelope_check(&trace, 0.1, 0.0),
            Err(Error::Usage(_))
        ));
    }
}
