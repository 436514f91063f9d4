//! Synthetic training objectives with analytic stochastic gradients, plus the
//! controlled-spectrum matrix ensembles used by the sweep experiments.
//!
//! Two problem families are enough to exercise every optimizer path: a
//! stochastic linear least-squares objective (closed-form gradient, exact
//! smoothness constant, closed-form minimum) and a small two-layer tanh
//! classifier over a Gaussian mixture (nonconvex, hand-written backprop).

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::rng::Rng;

// ── problem definitions ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// f(X) = (1/2N) sum_i ||X a_i - b_i||^2 with b_i = X* a_i + noise * nu_i.
    StochasticLeastSquares,
    /// Two-layer tanh network with softmax cross-entropy on a Gaussian
    /// mixture; the parameter is the single packed matrix [W1 | W2^T].
    Mlp2Classification,
}

#[derive(Debug, Clone)]
enum Data {
    LeastSquares {
        /// d x N inputs, one sample per column.
        a: Matrix,
        /// m x N targets, one per column.
        b: Matrix,
        /// The hidden m x d generator of the targets.
        x_star: Matrix,
    },
    Mlp2 {
        /// d x N inputs, one sample per column.
        inputs: Matrix,
        /// Class index per sample.
        labels: Vec<usize>,
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
}

/// A fixed synthetic dataset together with its objective.
#[derive(Debug, Clone)]
pub struct Problem {
    kind: ProblemKind,
    data: Data,
    n_samples: usize,
    noise: f64,
    /// Mini-batch size used when `Batch::Sample` draws indices; defaults to
    /// min(32, n_samples) and can be reassigned before running.
    pub batch_size: usize,
}

/// Builds a problem instance from its dimension list.
///
/// `dims` is `[m, d]` for least squares (parameter X is m x d) and
/// `[d, h, k]` for the classifier (input dim, hidden width, classes; the
/// packed parameter is h x (d + k)).
///
/// For least squares, `noise` scales the Gaussian perturbation added to the
/// targets; zero noise makes the hidden generator interpolate the data
/// exactly. For the classifier, `noise` is the within-cluster standard
/// deviation around each class center.
///
/// # Errors
/// `InvalidDimensions` when the dimension list has the wrong arity or a zero
/// entry, when `n_samples` is zero, or when `noise` is negative or non-finite.
pub fn make_problem(
    kind: ProblemKind,
    dims: &[usize],
    n_samples: usize,
    noise: f64,
    seed: u64,
) -> Result<Problem> {
    if n_samples == 0 {
        return Err(Error::InvalidDimensions(
            "n_samples must be at least 1".into(),
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidDimensions(format!(
            "noise must be finite and nonnegative, got {noise}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidDimensions(format!(
            "all dimensions must be positive, got {dims:?}"
        )));
    }
    let mut rng = Rng::new(seed);
    let data = match kind {
        ProblemKind::StochasticLeastSquares => {
            let [m, d]: [usize; 2] = dims.try_into().map_err(|_| {
                Error::InvalidDimensions(format!(
                    "least squares takes dims [m, d], got {dims:?}"
                ))
            })?;
            let x_star = Matrix::from_fn(m, d, |_, _| rng.next_gaussian());
            let a = Matrix::from_fn(d, n_samples, |_, _| rng.next_gaussian());
            let mut b = x_star.matmul(&a);
            if noise > 0.0 {
                let pert = Matrix::from_fn(m, n_samples, |_, _| noise * rng.next_gaussian());
                b = b.add(&pert);
            }
            Data::LeastSquares { a, b, x_star }
        }
        ProblemKind::Mlp2Classification => {
            let [d, h, k]: [usize; 3] = dims.try_into().map_err(|_| {
                Error::InvalidDimensions(format!(
                    "the classifier takes dims [d, h, k], got {dims:?}"
                ))
            })?;
            let centers = Matrix::from_fn(k, d, |_, _| 2.0 * rng.next_gaussian());
            let labels: Vec<usize> = (0..n_samples).map(|i| i % k).collect();
            let mut inputs = Matrix::zeros(d, n_samples);
            for (s, &label) in labels.iter().enumerate() {
                for j in 0..d {
                    inputs.set(j, s, centers.get(label, j) + noise * rng.next_gaussian());
                }
            }
            Data::Mlp2 {
                inputs,
                labels,
                input_dim: d,
                hidden: h,
                classes: k,
            }
        }
    };
    Ok(Problem {
        kind,
        data,
        n_samples,
        noise,
        batch_size: n_samples.min(32),
    })
}

impl Problem {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Shape (rows, cols) of the parameter matrix X.
    pub fn param_shape(&self) -> (usize, usize) {
        match &self.data {
            Data::LeastSquares { x_star, .. } => (x_star.rows(), x_star.cols()),
            Data::Mlp2 {
                input_dim,
                hidden,
                classes,
                ..
            } => (*hidden, *input_dim + *classes),
        }
    }

    /// The hidden generator X* of a least-squares instance.
    pub fn planted_parameter(&self) -> Option<&Matrix> {
        match &self.data {
            Data::LeastSquares { x_star, .. } => Some(x_star),
            Data::Mlp2 { .. } => None,
        }
    }

    /// Exact smoothness constant where available: for least squares the
    /// gradient map is X -> (XA - B)A^T / N, whose Lipschitz constant is
    /// sigma_1(A)^2 / N. The classifier has no closed form and returns None.
    pub fn smoothness(&self) -> Option<f64> {
        match &self.data {
            Data::LeastSquares { a, .. } => {
                let s = svd(a).expect("problem dataMatrices are finite");
                let top = s.singular_values.first().copied().unwrap_or(0.0);
                Some(top * top / self.n_samples as f64)
            }
            Data::Mlp2 { .. } => None,
        }
    }

    /// Closed-form minimum of the objective where available: for least
    /// squares, f at X_hat = B A^+ (the pseudoinverse solution). None for the
    /// classifier.
    pub fn optimal_loss(&self) -> Option<f64> {
        match &self.data {
            Data::LeastSquares { a, b, .. } => {
                let s = svd(a).expect("problem data matrices are finite");
                // A = U S V^T (d x N), so A^+ = V S^-1 U^T and
                // X_hat = B V S^-1 U^T.
                let r = s.rank();
                if r == 0 {
                    let loss = b.frobenius_norm().powi(2) / (2.0 * self.n_samples as f64);
                    return Some(loss);
                }
                let bv = b.matmul(&s.right_vectors);
                let inv: Vec<f64> = s.singular_values.iter().map(|&x| 1.0 / x).collect();
                let x_hat = bv.scale_cols(&inv).matmul_nt(&s.left_vectors);
                let resid = x_hat.matmul(a).sub(b);
                Some(resid.frobenius_norm().powi(2) / (2.0 * self.n_samples as f64))
            }
            Data::Mlp2 { .. } => None,
        }
    }

    /// A reasonable starting parameter: zero for least squares, and a small
    /// Gaussian matrix for the classifier (an exactly-zero classifier
    /// parameter is a saddle where both layers' gradients vanish).
    pub fn default_init(&self, seed: u64) -> Matrix {
        let (rows, cols) = self.param_shape();
        match self.kind {
            ProblemKind::StochasticLeastSquares => Matrix::zeros(rows, cols),
            ProblemKind::Mlp2Classification => {
                let mut rng = Rng::new(seed);
                let scale = 1.0 / (cols as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| scale * rng.next_gaussian())
            }
        }
    }
}

// ── evaluation ───────────────────────────────────────────────────────────────

/// Which samples a single evaluation sees.
pub enum Batch<'a> {
    /// Every sample, in dataset order.
    Full,
    /// An explicit index list (duplicates allowed).
    Indices(&'a [usize]),
    /// `problem.batch_size` indices drawn uniformly with replacement, so the
    /// mini-batch gradient is unbiased for the full gradient by construction.
    Sample(&'a mut Rng),
}

#[derive(Debug, Clone)]
pub struct Eval {
    pub loss: f64,
    pub grad: Matrix,
}

/// Loss and gradient of `problem` at `x` over the requested batch.
///
/// # Errors
/// `ShapeMismatch` when `x` does not match the parameter shape; `Domain` when
/// an explicit index is out of range or empty.
pub fn evaluate(problem: &Problem, x: &Matrix, batch: Batch) -> Result<Eval> {
    let shape = problem.param_shape();
    if (x.rows(), x.cols()) != shape {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", shape.0, shape.1),
            got: format!("{}x{}", x.rows(), x.cols()),
            context: "parameter matrix",
        });
    }
    let n = problem.n_samples;
    let owned_indices: Option<Vec<usize>> = match batch {
        Batch::Full => None,
        Batch::Indices(list) => {
            if list.is_empty() {
                return Err(Error::Domain("batch index list is empty".into()));
            }
            if let Some(&bad) = list.iter().find(|&&i| i >= n) {
                return Err(Error::Domain(format!(
                    "batch index {bad} out of range for {n} samples"
                )));
            }
            Some(list.to_vec())
        }
        Batch::Sample(rng) => Some((0..problem.batch_size).map(|_| rng.next_index(n)).collect()),
    };

    match &problem.data {
        Data::LeastSquares { a, b, .. } => {
            let (a_batch, b_batch);
            let (a, b) = match &owned_indices {
                None => (a, b),
                Some(idx) => {
                    a_batch = gather_cols(a, idx);
                    b_batch = gather_cols(b, idx);
                    (&a_batch, &b_batch)
                }
            };
            let count = a.cols() as f64;
            let resid = x.matmul(a).sub(b);
            let loss = resid.frobenius_norm().powi(2) / (2.0 * count);
            let grad = resid.matmul_nt(a).scaled(1.0 / count);
            Ok(Eval { loss, grad })
        }
        Data::Mlp2 {
            inputs,
            labels,
            input_dim,
            hidden,
            classes,
        } => {
            let full_range: Vec<usize>;
            let idx: &[usize] = match &owned_indices {
                None => {
                    full_range = (0..n).collect();
                    &full_range
                }
                Some(list) => list,
            };
            Ok(mlp2_eval(
                x, inputs, labels, idx, *input_dim, *hidden, *classes,
            ))
        }
    }
}

fn gather_cols(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), idx.len(), |i, j| m.get(i, idx[j]))
}

/// Forward and backward pass for the packed two-layer network.
///
/// X = [W1 | W2^T] with W1 of shape h x d and W2 of shape k x h. Per sample:
/// z = W1 x, u = tanh(z), logits = W2 u, softmax cross-entropy against the
/// label. Gradients flow back by hand into the same packing.
fn mlp2_eval(
    x: &Matrix,
    inputs: &Matrix,
    labels: &[usize],
    idx: &[usize],
    d: usize,
    h: usize,
    k: usize,
) -> Eval {
    let count = idx.len() as f64;
    let mut grad = Matrix::zeros(h, d + k);
    let mut loss = 0.0;
    let mut z = vec![0.0; h];
    let mut logits = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut dz = vec![0.0; h];

    for &s in idx {
        let label = labels[s];
        // z = W1 x_s, u = tanh(z) stored back into z.
        for (i, zi) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += x.get(i, j) * inputs.get(j, s);
            }
            *zi = acc.tanh();
        }
        // logits = W2 u; W2[c][i] lives at x[(i, d + c)].
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, zi) in z.iter().enumerate() {
                acc += x.get(i, d + c) * zi;
            }
            *logit = acc;
        }
        // Numerically stable log-softmax.
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - logits[label];
        for (c, pc) in p.iter_mut().enumerate() {
            *pc = (logits[c] - log_z).exp();
        }
        p[label] -= 1.0;

        // Backward: dW2 = (p - e_y) u^T, du = W2^T (p - e_y),
        // dz = du * (1 - u^2), dW1 = dz x_s^T.
        for (i, &ui) in z.iter().enumerate() {
            let mut du = 0.0;
            for (c, &pc) in p.iter().enumerate() {
                grad[(i, d + c)] += pc * ui;
                du += x.get(i, d + c) * pc;
            }
            dz[i] = du * (1.0 - ui * ui);
        }
        for (i, &dzi) in dz.iter().enumerate() {
            for j in 0..d {
                grad[(i, j)] += dzi * inputs.get(j, s);
            }
        }
    }
    Eval {
        loss: loss / count,
        grad: grad.scaled(1.0 / count),
    }
}

// ── matrix ensembles ─────────────────────────────────────────────────────────

/// Recipe for a family of random matrices with a planted singular spectrum
/// and row/column scale imbalance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub shape: (usize, usize),
    /// Singular values are 10^(-u * spectrum_decades), u uniform in [0, 1).
    pub spectrum_decades: f64,
    /// Row scales are 10^((v - 1/2) * row_scale_decades), v uniform in [0, 1).
    pub row_scale_decades: f64,
    /// Column scales, same law as rows.
    pub col_scale_decades: f64,
    pub count: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    /// # Errors
    /// `InvalidDimensions` for a zero dimension or zero count; `Domain` for a
    /// negative or non-finite decade parameter.
    pub fn new(
        shape: (usize, usize),
        spectrum_decades: f64,
        row_scale_decades: f64,
        col_scale_decades: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidDimensions(format!(
                "ensemble shape must be positive, got {}x{}",
                shape.0, shape.1
            )));
        }
        if count == 0 {
            return Err(Error::InvalidDimensions(
                "ensemble count must be at least 1".into(),
            ));
        }
        for (name, d) in [
            ("spectrum_decades", spectrum_decades),
            ("row_scale_decades", row_scale_decades),
            ("col_scale_decades", col_scale_decades),
        ] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Domain(format!(
                    "{name} must be finite and nonnegative, got {d}"
                )));
            }
        }
        Ok(Self {
            shape,
            spectrum_decades,
            row_scale_decades,
            col_scale_decades,
            count,
            seed,
        })
    }
}

/// Generates the ensemble: member i is diag(r) U diag(sigma) V^T diag(c),
/// with U, V orthonormal factors of Gaussian matrices (QR with positive
/// diagonal, so the factors are unique), sigma log-uniform over
/// `spectrum_decades`, and r, c log-uniform over their decade windows.
///
/// Each member draws from its own stream derived from (seed, index), so
/// regeneration is bit-for-bit deterministic.
pub fn ensemble(spec: &EnsembleSpec) -> Vec<Matrix> {
    (0..spec.count)
        .map(|i| ensemble_member(spec, i as u64))
        .collect()
}

fn ensemble_member(spec: &EnsembleSpec, index: u64) -> Matrix {
    let mut rng = Rng::for_index(spec.seed, index);
    let (m, n) = spec.shape;
    let r_dim = m.min(n);

    let mut sigma: Vec<f64> = (0..r_dim)
        .map(|_| 10f64.powf(-rng.next_open_unit() * spec.spectrum_decades))
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let row_scales: Vec<f64> = (0..m)
        .map(|_| 10f64.powf((rng.next_open_unit() - 0.5) * spec.row_scale_decades))
        .collect();
    let col_scales: Vec<f64> = (0..n)
        .map(|_| 10f64.powf((rng.next_open_unit() - 0.5) * spec.col_scale_decades))
        .collect();

    let gu = Matrix::from_fn(m, r_dim, |_, _| rng.next_gaussian());
    let gv = Matrix::from_fn(n, r_dim, |_, _| rng.next_gaussian());
    let u = crate::linalg::qr_thin_q(&gu).expect("Gaussian draws are full rank");
    let v = crate::linalg::qr_thin_q(&gv).expect("Gaussian draws are full rank");

    u.scale_cols(&sigma)
        .matmul_nt(&v)
        .scale_rows(&row_scales)
        .scale_cols(&col_scales)
}

// ── gradient verification ────────────────────────────────────────────────────

/// Maximum number of coordinates checked exhaustively; larger parameters are
/// probed on a fixed-seed random subset of this size so the check stays fast
/// and reproducible.
const GRAD_CHECK_EXHAUSTIVE_LIMIT: usize = 2048;

/// Central-difference verification of the analytic full gradient at `x`.
///
/// Each probed coordinate compares (f(x + h e) - f(x - h e)) / 2h against the
/// analytic entry with relative denominator max(|analytic|, |numeric|, 1).
/// Returns the worst relative error seen.
///
/// # Errors
/// `Domain` if `h` is not positive and finite; shape errors propagate from
/// evaluation.
pub fn grad_check(problem: &Problem, x: &Matrix, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!(
            "step size h must be positive and finite, got {h}"
        )));
    }
    let analytic = evaluate(problem, x, Batch::Full)?.grad;
    let (rows, cols) = (x.rows(), x.cols());
    let total = rows * cols;

    let coords: Vec<(usize, usize)> = if total <= GRAD_CHECK_EXHAUSTIVE_LIMIT {
        (0..total).map(|t| (t / cols, t % cols)).collect()
    } else {
        let mut sub_rng = Rng::new(GRAD_CHECK_EXHAUSTIVE_LIMIT as u64);
        (0..GRAD_CHECK_EXHAUSTIVE_LIMIT)
            .map(|_| {
                let t = sub_rng.next_index(total);
                (t / cols, t % cols)
            })
            .collect()
    };

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for (i, j) in coords {
        let orig = probe.get(i, j);
        probe.set(i, j, orig + h);
        let plus = evaluate(problem, &probe, Batch::Full)?.loss;
        probe.set(i, j, orig - h);
        let minus = evaluate(problem, &probe, Batch::Full)?.loss;
        probe.set(i, j, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic.get(i, j);
        let denom = exact.abs().max(numeric.abs()).max(1.0);
        worst = worst.max((numeric - exact).abs() / denom);
    }
    Ok(worst)
}
