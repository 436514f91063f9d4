//! Command-line front end: every experiment and audit as a subcommand with
//! deterministic CSV (and optional SVG) outputs, a JSON manifest beside every
//! run, and an exit-code contract CI can gate on — 0 success, 1 audit
//! failure, 2 usage or input errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::equilibrate::{EquilConfig, EquilMode};
use crate::error::{Error, Result};
use crate::experiments::{
    alignment_audit, alignment_shapes, bound_audit, build_ensemble, decompose_ensemble,
    default_shapes, ns_sweep, smoothed, theory_train_config, whitening_scaling,
};
use crate::io::{
    emit_csv, emit_svg, meq1_read, npy_read, AxisScale, Axes, CsvField, CsvTable, Series,
};
use crate::linalg::Matrix;
use crate::newton_schulz::{NsConfig, NsPolynomial, Prescale};
use crate::optimizer::{run, wd_envelope_check, OptConfig, RunOptions, ScaleRule, ScheduleSpec, Trace};
use crate::problems::{evaluate, make_problem, Batch, ProblemKind};
use crate::theory::{ns_inexactness, r_constants, rc_constants, ConvergenceConstants, WhitenSide};

// ── argument grammar ─────────────────────────────────────────────────────────

#[derive(Parser, Debug)]
#[command(
    name = "orthopt",
    version,
    about = "Experiments and audits for equilibrated orthogonalized-momentum optimization",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Base seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Directory the CSV/SVG outputs and the manifest are written into.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// csv writes tables only; csv+svg adds a chart where the subcommand has
    /// one (ns-sweep, whiten-check, train).
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Format {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Coeffs {
    Taylor,
    Practical,
}

impl Coeffs {
    fn polynomial(self) -> NsPolynomial {
        match self {
            Coeffs::Taylor => NsPolynomial::TAYLOR,
            Coeffs::Practical => NsPolynomial::PRACTICAL,
        }
    }
}

/// Flags shared by the subcommands that generate a matrix ensemble.
#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Comma-separated shapes, e.g. 64x64,64x256.
    #[arg(long)]
    shapes: Option<String>,
    /// Singular-value spread in decades.
    #[arg(long, default_value_t = 2.0)]
    spectrum_decades: f64,
    /// Row/column scale spread in decades.
    #[arg(long, default_value_t = 1.5)]
    imbalance_decades: f64,
    #[arg(long, default_value_t = 200)]
    count: usize,
}

impl EnsembleArgs {
    fn build(&self, seed: u64) -> Result<Vec<Matrix>> {
        let shapes = match &self.shapes {
            Some(text) => parse_shapes(text)?,
            None => default_shapes(),
        };
        build_ensemble(
            &shapes,
            self.spectrum_decades,
            self.imbalance_decades,
            self.count,
            seed,
        )
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-mode iteration error curves and spectra over an ill-scaled
    /// ensemble.
    NsSweep {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, value_enum, default_value_t = Coeffs::Taylor)]
        coeffs: Coeffs,
    },
    /// Audit the spectrum-derived error floor; exits 1 on any violation.
    BoundCheck {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, value_enum, default_value_t = Coeffs::Taylor)]
        coeffs: Coeffs,
    },
    /// Split total orthogonalization error into finite-step and
    /// preconditioning parts per (matrix, mode).
    Decompose {
        /// Matrix files (MEQ1 or NPY); omit to use the ensemble flags.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        /// Comma-separated modes out of RC,R,C,None.
        #[arg(long, default_value = "RC,R,C,None")]
        modes: String,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Coeffs::Taylor)]
        coeffs: Coeffs,
    },
    /// Residual-order scaling for the whitening expansion; exits 1 when a
    /// fitted slope leaves its window (zeroth in [0.9, 1.1], first-order in
    /// [1.8, 2.2]).
    WhitenCheck {
        /// row, column, two-sided, or all.
        #[arg(long, default_value = "all")]
        side: String,
        /// Comma-separated residual-norm targets in (0, 1); fractional
        /// exponents like 1e-1.5 are accepted.
        #[arg(long, default_value = "1e-1,1e-1.5,1e-2,1e-2.5,1e-3")]
        t_grid: String,
    },
    /// Audit the alignment floors on random matrices with planted zero rows;
    /// exits 1 on any violation.
    AlignCheck {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Comma-separated shapes the audit cycles through.
        #[arg(long)]
        shapes: Option<String>,
    },
    /// Measured orthogonalization gap, initial defect, and the contraction
    /// bound for a set of matrix files; exits 1 when a full-rank input with
    /// delta_0 <= 0.95 lands above the bound.
    Inexactness {
        /// Matrix files (MEQ1 or NPY).
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Coeffs::Taylor)]
        coeffs: Coeffs,
    },
    /// Convergence-rate constants for one regime as a field,value table.
    Constants {
        #[command(subcommand)]
        regime: ConstantsRegime,
    },
    /// Run the optimizer on a synthetic problem and record traces; exits 1
    /// if a theory-schedule run breaks its decay envelope.
    Train {
        /// least-squares or mlp2.
        #[arg(long, default_value = "least-squares")]
        problem: String,
        /// Dimension list: MxN for least squares, DxHxK for the classifier.
        #[arg(long, default_value = "64x32")]
        dims: String,
        #[arg(long, default_value_t = 256)]
        n_samples: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value = "r")]
        mode: String,
        #[arg(long, default_value_t = false)]
        nesterov: bool,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        /// theory (t^-3/4 rate, 1 - t^-1/2 momentum, envelope decay) or
        /// practical (warmup-cosine rate, constant momentum).
        #[arg(long, default_value = "theory")]
        schedules: String,
        /// Decay envelope radius; 0 disables weight decay.
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        /// Run all four modes under identical seeds and emit a comparison
        /// table.
        #[arg(long, default_value_t = false)]
        compare: bool,
        #[arg(long, default_value_t = 50)]
        eval_interval: u64,
    },
}

#[derive(Subcommand, Debug)]
enum ConstantsRegime {
    /// Two-sided equilibration constants from the entry bound and damping.
    Rc {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        g_inf: f64,
        /// Damping; defaults to the floor (4/5) g_inf^2 max(m, n).
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        l_smooth: f64,
        /// Step scale; defaults to 0.2 sqrt(max(m, n)).
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        f_gap: f64,
        /// Also evaluate the rate at these step counts.
        #[arg(long, num_args = 0..)]
        at: Vec<u64>,
    },
    /// Row-equilibration constants with the decay envelope and an
    /// orthogonalization gap.
    R {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0.0)]
        eps_ns: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        l_smooth: f64,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        f_gap: f64,
        #[arg(long, num_args = 0..)]
        at: Vec<u64>,
    },
}

// ── dispatch ─────────────────────────────────────────────────────────────────

/// Parses `argv` (subcommand first, no binary name) and runs it.
/// Returns the process exit code: 0 success, 1 audit failure, 2 usage or
/// input errors. Help and version requests print and return 0.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let full: Vec<String> = std::iter::once("orthopt".to_string())
        .chain(args.iter().cloned())
        .collect();
    let cli = match Cli::try_parse_from(&full) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &args) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Runs the parsed command; Ok(true) is success, Ok(false) an audit failure.
fn execute(cli: &Cli, argv: &[String]) -> Result<bool> {
    fs::create_dir_all(&cli.out)?;
    write_manifest(cli, argv)?;
    match &cli.command {
        Command::NsSweep {
            ensemble,
            k_max,
            coeffs,
        } => run_ns_sweep(cli, ensemble, *k_max, *coeffs),
        Command::BoundCheck {
            count,
            k_max,
            coeffs,
        } => run_bound_check(cli, *count, *k_max, *coeffs),
        Command::Decompose {
            input,
            ensemble,
            modes,
            steps,
            coeffs,
        } => run_decompose(cli, input, ensemble, modes, *steps, *coeffs),
        Command::WhitenCheck { side, t_grid } => run_whiten_check(cli, side, t_grid),
        Command::AlignCheck { count, shapes } => run_align_check(cli, *count, shapes.as_deref()),
        Command::Inexactness {
            input,
            steps,
            coeffs,
        } => run_inexactness(cli, input, *steps, *coeffs),
        Command::Constants { regime } => run_constants(cli, regime),
        Command::Train {
            problem,
            dims,
            n_samples,
            noise,
            mode,
            nesterov,
            steps,
            schedules,
            rho,
            compare,
            eval_interval,
        } => run_train(
            cli,
            &TrainArgs {
                problem,
                dims,
                n_samples: *n_samples,
                noise: *noise,
                mode,
                nesterov: *nesterov,
                steps: *steps,
                schedules,
                rho: *rho,
                compare: *compare,
                eval_interval: *eval_interval,
            },
        ),
    }
}

/// Records what produced this output directory: subcommand, full argument
/// list, seed, and the artifact version.
fn write_manifest(cli: &Cli, argv: &[String]) -> Result<()> {
    let subcommand = argv.first().cloned().unwrap_or_default();
    let manifest = serde_json::json!({
        "subcommand": subcommand,
        "argv": argv,
        "seed": cli.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("static structure");
    text.push('\n');
    fs::write(cli.out.join("manifest.json"), text)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

// ── subcommand bodies ────────────────────────────────────────────────────────

fn run_ns_sweep(cli: &Cli, ensemble: &EnsembleArgs, k_max: usize, coeffs: Coeffs) -> Result<bool> {
    let matrices = ensemble.build(cli.seed)?;
    let sweep = ns_sweep(&matrices, coeffs.polynomial(), k_max, EquilConfig::DEFAULT_EPSILON)?;

    let mut table = CsvTable::new(&[
        "matrix_id",
        "mode",
        "k",
        "error",
        "kappa_pre",
        "kappa_post",
        "stable_rank_pre",
        "stable_rank_post",
        "entropy_pre",
        "entropy_post",
    ]);
    for row in &sweep.rows {
        table.push_row(vec![
            CsvField::Uint(row.matrix_id as u64),
            CsvField::Text(row.mode.label().into()),
            CsvField::Uint(row.k as u64),
            CsvField::Real(row.error),
            CsvField::Real(row.kappa_pre),
            CsvField::Real(row.kappa_post),
            CsvField::Real(row.stable_rank_pre),
            CsvField::Real(row.stable_rank_post),
            CsvField::Real(row.entropy_pre),
            CsvField::Real(row.entropy_post),
        ])?;
    }
    write_file(&cli.out, "sweep.csv", &emit_csv(&table)?)?;

    let mut curves = CsvTable::new(&["mode", "k", "median_error", "median_kappa_post", "median_kappa_pre"]);
    for curve in &sweep.curves {
        for (k, &err) in curve.median_error_per_k.iter().enumerate() {
            curves.push_row(vec![
                CsvField::Text(curve.mode.label().into()),
                CsvField::Uint(k as u64),
                CsvField::Real(err),
                CsvField::Real(curve.median_kappa_post),
                CsvField::Real(sweep.median_kappa_pre),
            ])?;
        }
    }
    write_file(&cli.out, "curves.csv", &emit_csv(&curves)?)?;

    if cli.format == Format::CsvSvg {
        let series: Vec<Series> = sweep
            .curves
            .iter()
            .map(|c| Series {
                label: c.mode.label().to_string(),
                points: c
                    .median_error_per_k
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| (k as f64, e))
                    .collect(),
            })
            .collect();
        let axes = Axes {
            title: "Median orthogonalization error by preconditioning mode".into(),
            x_label: "iteration step k".into(),
            y_label: "median error".into(),
            x_scale: AxisScale::Linear,
            y_scale: AxisScale::Log,
        };
        write_file(&cli.out, "curves.svg", &emit_svg(&series, &axes)?)?;
    }
    Ok(true)
}

fn run_bound_check(cli: &Cli, count: usize, k_max: usize, coeffs: Coeffs) -> Result<bool> {
    let shapes = [(64, 64), (64, 256), (256, 64)];
    let matrices = build_ensemble(&shapes, 2.0, 1.5, count, cli.seed)?;
    let audit = bound_audit(&matrices, coeffs.polynomial(), k_max)?;

    let mut table = CsvTable::new(&["matrix_id", "k", "measured", "bound", "margin"]);
    for row in &audit.rows {
        table.push_row(vec![
            CsvField::Uint(row.matrix_id as u64),
            CsvField::Uint(row.k as u64),
            CsvField::Real(row.measured),
            CsvField::Real(row.bound),
            CsvField::Real(row.measured - row.bound),
        ])?;
    }
    write_file(&cli.out, "bound.csv", &emit_csv(&table)?)?;

    let mut tau = CsvTable::new(&["matrix_id", "tau_spread", "log_a_kappa", "gap"]);
    for row in &audit.tau_rows {
        tau.push_row(vec![
            CsvField::Uint(row.matrix_id as u64),
            CsvField::Real(row.tau_spread),
            CsvField::Real(row.log_a_kappa),
            CsvField::Real(row.tau_spread - row.log_a_kappa),
        ])?;
    }
    write_file(&cli.out, "tau.csv", &emit_csv(&tau)?)?;

    let ok = audit.violations == 0 && audit.max_tau_identity_gap <= 1e-10;
    if !ok {
        eprintln!(
            "bound audit failed: {} floor violations, worst tau-identity gap {}",
            audit.violations, audit.max_tau_identity_gap
        );
    }
    Ok(ok)
}

fn run_decompose(
    cli: &Cli,
    input: &[PathBuf],
    ensemble: &EnsembleArgs,
    modes: &str,
    steps: usize,
    coeffs: Coeffs,
) -> Result<bool> {
    let matrices = if input.is_empty() {
        ensemble.build(cli.seed)?
    } else {
        input.iter().map(|p| load_matrix(p)).collect::<Result<_>>()?
    };
    let modes = parse_modes(modes)?;
    let ns = NsConfig::new(coeffs.polynomial(), steps, Prescale::Max1Frobenius);
    let rows = decompose_ensemble(&matrices, &modes, EquilConfig::DEFAULT_EPSILON, &ns)?;

    let mut table = CsvTable::new(&[
        "matrix_id",
        "mode",
        "approx_error",
        "precond_bias",
        "total",
        "within_triangle",
    ]);
    let mut ok = true;
    for row in &rows {
        ok &= row.within_triangle;
        table.push_row(vec![
            CsvField::Uint(row.matrix_id as u64),
            CsvField::Text(row.mode.label().into()),
            CsvField::Real(row.approx_error),
            CsvField::Real(row.precond_bias),
            CsvField::Real(row.total),
            CsvField::Text(if row.within_triangle { "yes" } else { "no" }.into()),
        ])?;
    }
    write_file(&cli.out, "decompose.csv", &emit_csv(&table)?)?;
    if !ok {
        eprintln!("decomposition triangle violated; see decompose.csv");
    }
    Ok(ok)
}

fn run_whiten_check(cli: &Cli, side: &str, t_grid: &str) -> Result<bool> {
    let sides = parse_sides(side)?;
    let grid = parse_grid(t_grid)?;

    let mut points = CsvTable::new(&["side", "c_norm", "zeroth_residual", "first_order_residual"]);
    let mut slopes = CsvTable::new(&["side", "zeroth_slope", "first_slope"]);
    let mut series = Vec::new();
    let mut ok = true;
    for &s in &sides {
        let scaling = whitening_scaling(s, &grid, cli.seed)?;
        for p in &scaling.points {
            points.push_row(vec![
                CsvField::Text(s.label().into()),
                CsvField::Real(p.c_norm),
                CsvField::Real(p.zeroth_residual),
                CsvField::Real(p.first_order_residual),
            ])?;
        }
        slopes.push_row(vec![
            CsvField::Text(s.label().into()),
            CsvField::Real(scaling.zeroth_slope),
            CsvField::Real(scaling.first_slope),
        ])?;
        ok &= (0.9..=1.1).contains(&scaling.zeroth_slope)
            && (1.8..=2.2).contains(&scaling.first_slope);
        series.push(Series {
            label: format!("{} zeroth", s.label()),
            points: scaling.points.iter().map(|p| (p.c_norm, p.zeroth_residual)).collect(),
        });
        series.push(Series {
            label: format!("{} first-order", s.label()),
            points: scaling
                .points
                .iter()
                .map(|p| (p.c_norm, p.first_order_residual))
                .collect(),
        });
    }
    write_file(&cli.out, "whiten.csv", &emit_csv(&points)?)?;
    write_file(&cli.out, "slopes.csv", &emit_csv(&slopes)?)?;
    if cli.format == Format::CsvSvg {
        let axes = Axes {
            title: "Whitening residuals against the Gram residual norm".into(),
            x_label: "||C||_2".into(),
            y_label: "residual".into(),
            x_scale: AxisScale::Log,
            y_scale: AxisScale::Log,
        };
        write_file(&cli.out, "whiten.svg", &emit_svg(&series, &axes)?)?;
    }
    if !ok {
        eprintln!("whitening slopes left their windows; see slopes.csv");
    }
    Ok(ok)
}

fn run_align_check(cli: &Cli, count: usize, shapes: Option<&str>) -> Result<bool> {
    let shapes = match shapes {
        Some(text) => parse_shapes(text)?,
        None => alignment_shapes(),
    };
    let audit = alignment_audit(count, &shapes, cli.seed)?;
    let mut table = CsvTable::new(&[
        "matrix_id",
        "rows",
        "cols",
        "zero_rows_planted",
        "margin",
        "margin_ns",
    ]);
    for row in &audit.rows {
        table.push_row(vec![
            CsvField::Uint(row.matrix_id as u64),
            CsvField::Uint(row.rows as u64),
            CsvField::Uint(row.cols as u64),
            CsvField::Uint(row.zero_rows_planted as u64),
            CsvField::Real(row.margin),
            CsvField::Real(row.margin_ns),
        ])?;
    }
    write_file(&cli.out, "align.csv", &emit_csv(&table)?)?;
    if audit.violations > 0 {
        eprintln!(
            "alignment floor violated on {} of {count} matrices (worst margins {} / {})",
            audit.violations, audit.min_margin, audit.min_margin_ns
        );
    }
    Ok(audit.violations == 0)
}

fn run_inexactness(cli: &Cli, input: &[PathBuf], steps: usize, coeffs: Coeffs) -> Result<bool> {
    let cfg = NsConfig::new(coeffs.polynomial(), steps, Prescale::Max1Frobenius);
    let mut table = CsvTable::new(&["input", "eps_ns", "delta_0", "lemma_bound", "within_bound"]);
    let mut ok = true;
    let mut all = Vec::with_capacity(input.len());
    for path in input {
        let matrix = load_matrix(path)?;
        let report = ns_inexactness(std::slice::from_ref(&matrix), &cfg)?;
        // The contraction bound is only claimed for comfortably full-rank
        // starts; report the rest without judging them.
        let applicable = report.delta_0 <= 0.95;
        let within = !applicable || report.eps_ns <= report.lemma_bound + 1e-6;
        ok &= within;
        table.push_row(vec![
            CsvField::Text(path.display().to_string()),
            CsvField::Real(report.eps_ns),
            CsvField::Real(report.delta_0),
            CsvField::Real(report.lemma_bound),
            CsvField::Text(
                if !applicable {
                    "not-applicable"
                } else if within {
                    "yes"
                } else {
                    "no"
                }
                .into(),
            ),
        ])?;
        all.push(matrix);
    }
    let aggregate = ns_inexactness(&all, &cfg)?;
    let applicable = aggregate.delta_0 <= 0.95;
    let within = !applicable || aggregate.eps_ns <= aggregate.lemma_bound + 1e-6;
    ok &= within;
    table.push_row(vec![
        CsvField::Text("(all)".into()),
        CsvField::Real(aggregate.eps_ns),
        CsvField::Real(aggregate.delta_0),
        CsvField::Real(aggregate.lemma_bound),
        CsvField::Text(
            if !applicable {
                "not-applicable"
            } else if within {
                "yes"
            } else {
                "no"
            }
            .into(),
        ),
    ])?;
    write_file(&cli.out, "inexactness.csv", &emit_csv(&table)?)?;
    if !ok {
        eprintln!("measured gap exceeded the contraction bound; see inexactness.csv");
    }
    Ok(ok)
}

fn run_constants(cli: &Cli, regime: &ConstantsRegime) -> Result<bool> {
    let (cc, at, label): (ConvergenceConstants, &[u64], &str) = match regime {
        ConstantsRegime::Rc {
            m,
            n,
            g_inf,
            eps,
            sigma,
            l_smooth,
            a,
            f_gap,
            at,
        } => {
            let eps = eps.unwrap_or(0.8 * g_inf * g_inf * (*m).max(*n) as f64);
            let a = match a {
                Some(a) => *a,
                None => ScaleRule::MuonDefault.scale_for(*m, *n)?,
            };
            (
                rc_constants(*m, *n, *g_inf, eps, *sigma, *l_smooth, a, *f_gap)?,
                at,
                "rc",
            )
        }
        ConstantsRegime::R {
            m,
            n,
            rho,
            eps_ns,
            sigma,
            l_smooth,
            a,
            f_gap,
            at,
        } => {
            let a = match a {
                Some(a) => *a,
                None => ScaleRule::MuonDefault.scale_for(*m, *n)?,
            };
            (
                r_constants(*m, *n, *rho, *sigma, *l_smooth, a, *eps_ns, *f_gap)?,
                at,
                "r",
            )
        }
    };

    let mut table = CsvTable::new(&["field", "value"]);
    let mut push = |name: &str, value: CsvField| table.push_row(vec![CsvField::Text(name.into()), value]);
    push("regime", CsvField::Text(label.into()))?;
    push("m", CsvField::Uint(cc.m as u64))?;
    push("n", CsvField::Uint(cc.n as u64))?;
    push("sigma", CsvField::Real(cc.sigma))?;
    push("l_smooth", CsvField::Real(cc.l_smooth))?;
    push("a", CsvField::Real(cc.a))?;
    push("f_gap", CsvField::Real(cc.f_gap))?;
    let real_fields: [(&str, Option<f64>); 13] = [
        ("g_inf", cc.g_inf),
        ("eps", cc.eps),
        ("rho_r", cc.rho_r),
        ("rho_c", cc.rho_c),
        ("chi_eps", cc.chi_eps),
        ("c1", cc.c1),
        ("c2", cc.c2),
        ("rho", cc.rho),
        ("eps_ns", cc.eps_ns),
        ("c1_exact", cc.c1_exact),
        ("c2_exact", cc.c2_exact),
        ("c1_ns", cc.c1_ns),
        ("c2_ns", cc.c2_ns),
    ];
    for (name, value) in real_fields {
        if let Some(v) = value {
            push(name, CsvField::Real(v))?;
        }
    }
    if let Some(v) = cc.denom_ns {
        push("denom_ns", CsvField::Real(v))?;
    }
    if cc.eps_floor_warning {
        push("eps_floor_warning", CsvField::Text("yes".into()))?;
    }
    for &t in at {
        match label {
            "rc" => push(&format!("rate_rc_at_{t}"), CsvField::Real(cc.rate_rc(t)?))?,
            _ => {
                push(&format!("rate_exact_at_{t}"), CsvField::Real(cc.rate_exact(t)?))?;
                push(&format!("rate_ns_at_{t}"), CsvField::Real(cc.rate_ns(t)?))?;
            }
        }
    }
    write_file(&cli.out, "constants.csv", &emit_csv(&table)?)?;
    Ok(true)
}

struct TrainArgs<'a> {
    problem: &'a str,
    dims: &'a str,
    n_samples: usize,
    noise: f64,
    mode: &'a str,
    nesterov: bool,
    steps: u64,
    schedules: &'a str,
    rho: f64,
    compare: bool,
    eval_interval: u64,
}

fn run_train(cli: &Cli, args: &TrainArgs) -> Result<bool> {
    let kind = match args.problem {
        "least-squares" => ProblemKind::StochasticLeastSquares,
        "mlp2" => ProblemKind::Mlp2Classification,
        other => {
            return Err(Error::Usage(format!(
                "unknown problem '{other}' (expected least-squares or mlp2)"
            )))
        }
    };
    let dims = parse_dims(args.dims)?;
    let problem = make_problem(kind, &dims, args.n_samples, args.noise, cli.seed)?;
    let shape = problem.param_shape();

    let modes: Vec<EquilMode> = if args.compare {
        EquilMode::ALL.to_vec()
    } else {
        vec![EquilMode::parse(args.mode)?]
    };
    let theory = match args.schedules {
        "theory" => true,
        "practical" => false,
        other => {
            return Err(Error::Usage(format!(
                "unknown schedule family '{other}' (expected theory or practical)"
            )))
        }
    };

    let opts = RunOptions {
        eval_interval: args.eval_interval,
        snapshots: false,
    };
    let mut envelope = CsvTable::new(&["mode", "ok", "max_lambda_x", "max_step_ratio"]);
    let mut comparison = CsvTable::new(&[
        "mode",
        "initial_full_grad",
        "final_full_grad",
        "final_loss",
    ]);
    let mut loss_series = Vec::new();
    let mut all_ok = true;

    let x1_norm = problem.default_init(cli.seed).frobenius_norm();
    for &mode in &modes {
        let mut cfg = train_config(mode, shape, args, theory, x1_norm)?;
        cfg.nesterov = args.nesterov;
        let trace = run(&problem, &cfg, args.steps, cli.seed, &opts)?;
        let label = mode.label();
        write_trace_csv(&cli.out, &format!("train_{label}.csv"), &trace)?;
        write_full_grad_csv(&cli.out, &format!("full_grad_{label}.csv"), &trace)?;

        if theory {
            let report = wd_envelope_check(&trace, args.rho, 0.0)?;
            all_ok &= report.ok;
            envelope.push_row(vec![
                CsvField::Text(label.into()),
                CsvField::Text(if report.ok { "yes" } else { "no" }.into()),
                CsvField::Real(report.max_lambda_x),
                CsvField::Real(report.max_step_ratio),
            ])?;
        }

        let final_eval = evaluate(&problem, &trace.final_param, Batch::Full)?;
        comparison.push_row(vec![
            CsvField::Text(label.into()),
            CsvField::Real(trace.full_grad_norm[0].1),
            CsvField::Real(trace.full_grad_norm.last().expect("nonempty").1),
            CsvField::Real(final_eval.loss),
        ])?;

        if cli.format == Format::CsvSvg {
            let window = (args.steps as usize / 20).clamp(1, 50);
            let smooth = smoothed(&trace.minibatch_loss, window)?;
            loss_series.push(Series {
                label: label.to_string(),
                points: smooth
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| ((i + window) as f64, l))
                    .collect(),
            });
        }
    }

    if theory {
        write_file(&cli.out, "envelope.csv", &emit_csv(&envelope)?)?;
    }
    write_file(&cli.out, "summary.csv", &emit_csv(&comparison)?)?;
    if cli.format == Format::CsvSvg {
        let axes = Axes {
            title: "Smoothed mini-batch loss".into(),
            x_label: "step".into(),
            y_label: "loss".into(),
            x_scale: AxisScale::Linear,
            y_scale: AxisScale::Log,
        };
        write_file(&cli.out, "loss.svg", &emit_svg(&loss_series, &axes)?)?;
    }
    if !all_ok {
        eprintln!("a theory-schedule run broke its decay envelope; see envelope.csv");
    }
    Ok(all_ok)
}

fn train_config(
    mode: EquilMode,
    shape: (usize, usize),
    args: &TrainArgs,
    theory: bool,
    x1_norm: f64,
) -> Result<OptConfig> {
    if theory {
        theory_train_config(
            mode,
            EquilConfig::DEFAULT_EPSILON,
            shape,
            args.rho,
            x1_norm,
            0.0,
        )
    } else {
        Ok(OptConfig {
            equil: EquilConfig::new(mode, EquilConfig::DEFAULT_EPSILON)?,
            ns: NsConfig::ns5(),
            nesterov: false,
            lr: ScheduleSpec::WarmupCosine {
                peak: 0.02,
                warmup_steps: (args.steps / 10).max(1),
                total_steps: args.steps.max(2),
            },
            beta: ScheduleSpec::Constant(0.95),
            weight_decay: ScheduleSpec::Constant(0.0),
            scale_rule: ScaleRule::MuonDefault,
        })
    }
}

fn write_trace_csv(dir: &Path, name: &str, trace: &Trace) -> Result<()> {
    let mut table = CsvTable::new(&[
        "step",
        "minibatch_loss",
        "grad_norm",
        "momentum_norm",
        "param_norm",
        "update_norm",
        "o_frobenius",
        "o_spectral",
        "lr",
        "beta",
        "weight_decay",
    ]);
    for i in 0..trace.minibatch_loss.len() {
        table.push_row(vec![
            CsvField::Uint(i as u64 + 1),
            CsvField::Real(trace.minibatch_loss[i]),
            CsvField::Real(trace.grad_norm[i]),
            CsvField::Real(trace.momentum_norm[i]),
            CsvField::Real(trace.param_norm[i]),
            CsvField::Real(trace.update_norm[i]),
            CsvField::Real(trace.o_frobenius[i]),
            CsvField::Real(trace.o_spectral[i]),
            CsvField::Real(trace.lr[i]),
            CsvField::Real(trace.beta[i]),
            CsvField::Real(trace.weight_decay[i]),
        ])?;
    }
    write_file(dir, name, &emit_csv(&table)?)
}

fn write_full_grad_csv(dir: &Path, name: &str, trace: &Trace) -> Result<()> {
    let mut table = CsvTable::new(&["steps_completed", "full_grad_norm"]);
    for &(t, norm) in &trace.full_grad_norm {
        table.push_row(vec![CsvField::Uint(t), CsvField::Real(norm)])?;
    }
    write_file(dir, name, &emit_csv(&table)?)
}

// ── flag parsing helpers ─────────────────────────────────────────────────────

fn parse_shapes(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|part| {
            let dims = parse_dims(part)?;
            if dims.len() != 2 {
                return Err(Error::Usage(format!(
                    "shape '{part}' must be two dimensions like 64x64"
                )));
            }
            Ok((dims[0], dims[1]))
        })
        .collect()
}

fn parse_dims(text: &str) -> Result<Vec<usize>> {
    text.trim()
        .split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("bad dimension '{p}' in '{text}'")))
        })
        .collect()
}

fn parse_modes(text: &str) -> Result<Vec<EquilMode>> {
    text.split(',').map(|p| EquilMode::parse(p.trim())).collect()
}

fn parse_sides(text: &str) -> Result<Vec<WhitenSide>> {
    match text.to_ascii_lowercase().as_str() {
        "all" => Ok(vec![WhitenSide::Row, WhitenSide::Column, WhitenSide::TwoSided]),
        "row" => Ok(vec![WhitenSide::Row]),
        "column" => Ok(vec![WhitenSide::Column]),
        "two-sided" => Ok(vec![WhitenSide::TwoSided]),
        other => Err(Error::Usage(format!(
            "unknown side '{other}' (expected row, column, two-sided, or all)"
        ))),
    }
}

/// Parses a comma-separated float list, additionally accepting fractional
/// powers of ten like "1e-1.5".
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            let part = part.trim();
            if let Ok(v) = part.parse::<f64>() {
                return Ok(v);
            }
            let (mantissa, exponent) = part
                .split_once(['e', 'E'])
                .ok_or_else(|| Error::Usage(format!("bad grid value '{part}'")))?;
            let m: f64 = mantissa
                .parse()
                .map_err(|_| Error::Usage(format!("bad grid value '{part}'")))?;
            let e: f64 = exponent
                .parse()
                .map_err(|_| Error::Usage(format!("bad grid value '{part}'")))?;
            Ok(m * 10f64.powf(e))
        })
        .collect()
}

/// Reads a matrix file, telling the two supported containers apart by their
/// magic bytes.
fn load_matrix(path: &Path) -> Result<Matrix> {
    let mut magic = [0u8; 6];
    {
        use std::io::Read;
        let mut f = fs::File::open(path)?;
        let n = f.read(&mut magic)?;
        if n < 4 {
            return Err(Error::Parse(format!(
                "{} is too short to identify",
                path.display()
            )));
        }
    }
    if &magic[0..4] == b"MEQ1" {
        meq1_read(path)
    } else if &magic == b"\x93NUMPY" {
        npy_read(path)
    } else {
        Err(Error::Parse(format!(
            "{} is neither an MEQ1 nor an NPY file",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::meq1_write;

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("orthopt-cli-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn run_args(args: &[&str]) -> i32 {
        dispatch(args.iter().map(|s| s.to_string()))
    }

    // ── exit codes ──

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run_args(&["nosuch"]), 2);
    }

    #[test]
    fn help_and_version_exit_cleanly() {
        assert_eq!(run_args(&["--help"]), 0);
        assert_eq!(run_args(&["--version"]), 0);
        assert_eq!(run_args(&["train", "--help"]), 0);
    }

    #[test]
    fn unknown_flags_are_rejected() {
        let out = tmp_dir("unknown-flag");
        assert_eq!(
            run_args(&["bound-check", "--out", out.to_str().unwrap(), "--frobulate", "3"]),
            2
        );
    }

    #[test]
    fn corrupt_input_files_never_pass() {
        let out = tmp_dir("corrupt");
        let bad = out.join("bad.meq1");
        fs::write(&bad, b"XXXXgarbage").unwrap();
        let code = run_args(&[
            "inexactness",
            "--input",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        let code = run_args(&[
            "decompose",
            "--input",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    // ── small honest runs ──

    #[test]
    fn bound_check_small_run_passes_and_writes_outputs() {
        let out = tmp_dir("bound");
        let code = run_args(&[
            "bound-check",
            "--count",
            "6",
            "--k-max",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let bound = fs::read_to_string(out.join("bound.csv")).unwrap();
        assert!(bound.lines().count() == 1 + 6 * 5);
        assert!(out.join("tau.csv").exists());
        let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"subcommand\": \"bound-check\""));
        assert!(manifest.contains("\"seed\": 42"));
    }

    #[test]
    fn align_check_small_run_passes() {
        let out = tmp_dir("align");
        let code = run_args(&[
            "align-check",
            "--count",
            "12",
            "--shapes",
            "6x6,8x12",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(out.join("align.csv").exists());
    }

    #[test]
    fn ns_sweep_writes_tables_and_chart() {
        let out = tmp_dir("sweep");
        let code = run_args(&[
            "ns-sweep",
            "--shapes",
            "12x12,8x16",
            "--count",
            "6",
            "--k-max",
            "3",
            "--format",
            "csv+svg",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 1 + 6 * 4 * 4);
        assert!(out.join("curves.csv").exists());
        assert!(fs::read_to_string(out.join("curves.svg")).unwrap().contains("<svg"));
    }

    #[test]
    fn whiten_check_reports_slopes() {
        let out = tmp_dir("whiten");
        let code = run_args(&[
            "whiten-check",
            "--side",
            "two-sided",
            "--t-grid",
            "1e-1,1e-1.5,1e-2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let slopes = fs::read_to_string(out.join("slopes.csv")).unwrap();
        assert_eq!(slopes.lines().count(), 2);
        assert!(slopes.starts_with("side,zeroth_slope,first_slope"));
    }

    #[test]
    fn inexactness_reads_matrix_files() {
        let out = tmp_dir("inexact");
        let path = out.join("m.meq1");
        let m = Matrix::from_fn(6, 6, |i, j| if i == j { 1.0 + 0.1 * i as f64 } else { 0.01 });
        meq1_write(&path, &m).unwrap();
        let code = run_args(&[
            "inexactness",
            "--input",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let csv = fs::read_to_string(out.join("inexactness.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3, "one input row plus the aggregate");
        assert!(csv.contains("(all)"));
    }

    #[test]
    fn constants_tables_cover_both_regimes() {
        let out = tmp_dir("constants");
        let code = run_args(&[
            "constants",
            "rc",
            "--m",
            "4",
            "--n",
            "4",
            "--at",
            "100",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let csv = fs::read_to_string(out.join("constants.csv")).unwrap();
        assert!(csv.contains("chi_eps,"));
        assert!(csv.contains("rate_rc_at_100,"));

        let code = run_args(&[
            "constants",
            "r",
            "--m",
            "4",
            "--n",
            "4",
            "--rho",
            "0.05",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let csv = fs::read_to_string(out.join("constants.csv")).unwrap();
        assert!(csv.contains("denom_ns,"));
    }

    #[test]
    fn train_single_step_matches_the_hand_trace_structure() {
        let out = tmp_dir("train-one");
        let code = run_args(&[
            "train",
            "--problem",
            "least-squares",
            "--dims",
            "1x1",
            "--n-samples",
            "4",
            "--mode",
            "r",
            "--steps",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let trace = fs::read_to_string(out.join("train_R.csv")).unwrap();
        let lines: Vec<&str> = trace.lines().collect();
        assert_eq!(lines.len(), 2);
        let fields: Vec<f64> = lines[1]
            .split(',')
            .map(|f| f.parse::<f64>().unwrap())
            .collect();
        let header: Vec<&str> = lines[0].split(',').collect();
        let get = |name: &str| fields[header.iter().position(|&h| h == name).unwrap()];
        // First step under the theory schedules: beta_1 = 0 makes the
        // momentum the raw gradient, eta_1 = 1 and a = 0.2 make the update
        // exactly 0.2 times the orthogonalized direction.
        assert_eq!(get("beta"), 0.0);
        assert_eq!(get("lr"), 1.0);
        assert_eq!(get("momentum_norm"), get("grad_norm"));
        assert!((get("update_norm") - 0.2 * get("o_frobenius")).abs() <= 1e-15);
        assert!(out.join("envelope.csv").exists());
        assert!(out.join("summary.csv").exists());
    }

    #[test]
    fn train_compare_runs_all_modes_deterministically() {
        let out1 = tmp_dir("cmp1");
        let out2 = tmp_dir("cmp2");
        for out in [&out1, &out2] {
            let code = run_args(&[
                "train",
                "--problem",
                "mlp2",
                "--dims",
                "3x4x2",
                "--n-samples",
                "24",
                "--noise",
                "1.0",
                "--steps",
                "12",
                "--schedules",
                "practical",
                "--compare",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0);
        }
        for name in ["train_RC.csv", "train_R.csv", "train_C.csv", "train_None.csv", "summary.csv"] {
            let a = fs::read(out1.join(name)).unwrap();
            let b = fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let summary = fs::read_to_string(out1.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 5, "header plus one row per mode");
        assert!(!out1.join("envelope.csv").exists(), "practical runs skip the envelope");
    }

    // ── parsers ──

    #[test]
    fn grid_parser_accepts_fractional_exponents() {
        let grid = parse_grid("1e-1,1e-1.5,0.25").unwrap();
        assert_eq!(grid[0], 0.1);
        assert!((grid[1] - 10f64.powf(-1.5)).abs() <= 1e-18);
        assert_eq!(grid[2], 0.25);
        assert!(parse_grid("abc").is_err());
    }

    #[test]
    fn shape_parser_round_trips() {
        assert_eq!(parse_shapes("64x64,8x256").unwrap(), vec![(64, 64), (8, 256)]);
        assert!(parse_shapes("64").is_err());
        assert!(parse_shapes("axb").is_err());
    }
}
