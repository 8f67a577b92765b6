//! Echo state network: fixed sparse reservoir, leaky-integrator state
//! evolution, sequence-level feature harvesting and the ridge readout.
//!
//! The reservoir is never trained. A sequence of input vectors is pushed
//! through
//!
//! ```text
//! x(t+1) = (1 - a) * x(t) + a * tanh(W_rec x(t) + W_in u(t))
//! ```
//!
//! starting from the zero state; after discarding `washout` steps the
//! remaining states are averaged and a constant `1` is appended. Those
//! vectors are the columns of the feature matrix `Φ`, and the readout
//! `Θ = Y Φᵀ (Φ Φᵀ + βI)⁻¹` is obtained from a Cholesky solve.

use nalgebra::{Cholesky, DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeded_stream;
use crate::sums;

const STREAM_RECURRENT: u64 = 1;
const STREAM_INPUT: u64 = 2;
const STREAM_POWER: u64 = 3;

/// Iteration cap for the spectral radius estimate.
pub const POWER_MAX_ITER: usize = 1000;
/// Relative residual `|A x - theta x| / (|theta| |x|)` of the dominant Ritz
/// pair that counts as converged. The change between iterates is not used:
/// near the spectral edge it shrinks long before the estimate is accurate.
pub const POWER_TOLERANCE: f64 = 1e-6;
/// Width of the iterated subspace. Wide enough to hold the cluster of
/// near-maximal eigenvalues a random sparse matrix has at the edge of its
/// spectrum.
pub const POWER_BLOCK: usize = 24;

/// Relative residual bound enforced on every readout solve.
pub const READOUT_RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirConfig {
    pub units: usize,
    pub spectral_radius: f64,
    pub leaking_rate: f64,
    pub input_scaling: f64,
    /// Exact number of nonzero input weights per reservoir unit.
    pub input_connectivity: usize,
    /// Exact number of nonzero recurrent weights per reservoir unit.
    pub recurrent_connectivity: usize,
    pub input_dim: usize,
    pub washout: usize,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            units: 500,
            spectral_radius: 0.1,
            leaking_rate: 0.1,
            input_scaling: 0.1,
            input_connectivity: 3,
            recurrent_connectivity: 8,
            input_dim: 256,
            washout: 16,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::Config("units must be at least 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.input_connectivity == 0 || self.input_connectivity > self.input_dim {
            return Err(Error::Config(format!(
                "input_connectivity {} must lie in 1..={} (input_dim)",
                self.input_connectivity, self.input_dim
            )));
        }
        if self.recurrent_connectivity == 0 || self.recurrent_connectivity > self.units {
            return Err(Error::Config(format!(
                "recurrent_connectivity {} must lie in 1..={} (units)",
                self.recurrent_connectivity, self.units
            )));
        }
        if !(self.leaking_rate > 0.0 && self.leaking_rate <= 1.0) {
            return Err(Error::Config(format!(
                "leaking_rate {} must lie in (0, 1]",
                self.leaking_rate
            )));
        }
        if !(self.spectral_radius >= 0.0 && self.spectral_radius.is_finite()) {
            return Err(Error::Config(format!(
                "spectral_radius {} must be finite and nonnegative",
                self.spectral_radius
            )));
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return Err(Error::Config(format!(
                "input_scaling {} must be finite and positive",
                self.input_scaling
            )));
        }
        Ok(())
    }
}

/// Sparse matrix with the same number of stored entries in every row.
///
/// Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: usize,
    per_row: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRows {
    /// Positions drawn without replacement per row, values uniform on [-1, 1].
    fn random(rows: usize, cols: usize, per_row: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut indices = Vec::with_capacity(rows * per_row);
        let mut values = Vec::with_capacity(rows * per_row);
        for _ in 0..rows {
            let mut picked = index::sample(rng, cols, per_row).into_vec();
            picked.sort_unstable();
            for col in picked {
                indices.push(col as u32);
                values.push(rng.random_range(-1.0..=1.0));
            }
        }
        Self {
            rows,
            cols,
            per_row,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = i * self.per_row..(i + 1) * self.per_row;
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of stored entries in row `i` that are not exactly zero.
    pub fn row_nonzeros(&self, i: usize) -> usize {
        self.row(i).1.iter().filter(|v| **v != 0.0).count()
    }

    fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `out[i] += (A x)[i]`
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let k = self.per_row;
        for (i, o) in out.iter_mut().enumerate() {
            let cols = &self.indices[i * k..(i + 1) * k];
            let vals = &self.values[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *o += acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[(i, c as usize)] = v;
            }
        }
        dense
    }

    /// `A Q` for a dense block `Q` with `cols` rows.
    fn mul_dense(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, q.ncols());
        for j in 0..q.ncols() {
            let src = q.column(j);
            let mut dst = out.column_mut(j);
            for i in 0..self.rows {
                let (cols, vals) = self.row(i);
                dst[i] = cols
                    .iter()
                    .zip(vals)
                    .map(|(&c, &v)| v * src[c as usize])
                    .sum();
            }
        }
        out
    }
}

/// Estimates the spectral radius of a square sparse matrix by block power
/// iteration with Rayleigh-Ritz extraction.
///
/// A block (rather than a single vector) is iterated so that a dominant
/// complex-conjugate pair, or a cluster of eigenvalues of nearly equal
/// modulus, does not stall convergence.
pub fn spectral_radius(matrix: &SparseRows, seed: u64) -> Result<f64> {
    let n = matrix.rows();
    if n != matrix.cols() {
        return Err(Error::Input(format!(
            "spectral radius needs a square matrix, got {}x{}",
            n,
            matrix.cols()
        )));
    }
    let width = POWER_BLOCK.min(n);
    let mut rng = seeded_stream(seed, STREAM_POWER);
    let start = DMatrix::from_fn(n, width, |_, _| rng.random_range(-1.0..1.0));
    let mut basis = start.qr().q();

    for _ in 0..POWER_MAX_ITER {
        let image = matrix.mul_dense(&basis);
        if image.norm() == 0.0 {
            return Ok(0.0);
        }
        let ritz = basis.transpose() * &image;
        let values = ritz.complex_eigenvalues();
        let theta = values
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or_default();
        if width == n {
            // The block spans the whole space: Ritz values are the eigenvalues.
            return Ok(theta.norm());
        }
        if theta.norm() > 0.0 && ritz_residual(&ritz, &basis, &image, theta) <= POWER_TOLERANCE {
            return Ok(theta.norm());
        }
        basis = image.qr().q();
    }
    Err(Error::Numeric(format!(
        "spectral radius power iteration did not converge in {POWER_MAX_ITER} iterations (seed {seed})"
    )))
}

/// Relative residual of the Ritz pair `(theta, Q y)`, where `y` spans the
/// (numerical) null space of `H - theta I` and `image = A Q`.
fn ritz_residual(ritz: &DMatrix<f64>, basis: &DMatrix<f64>, image: &DMatrix<f64>, theta: Complex64) -> f64 {
    let p = ritz.nrows();
    let shifted = DMatrix::from_fn(p, p, |i, j| {
        Complex64::new(ritz[(i, j)], 0.0) - if i == j { theta } else { Complex64::new(0.0, 0.0) }
    });
    let svd = shifted.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return f64::INFINITY;
    };
    let k = svd.singular_values.imin();
    let y_re = DVector::from_fn(p, |j, _| v_t[(k, j)].re);
    let y_im = DVector::from_fn(p, |j, _| -v_t[(k, j)].im);
    let (az_re, az_im) = (image * &y_re, image * &y_im);
    let (x_re, x_im) = (basis * &y_re, basis * &y_im);
    let r_re = az_re - (&x_re * theta.re - &x_im * theta.im);
    let r_im = az_im - (&x_im * theta.re + &x_re * theta.im);
    let x_norm = (x_re.norm_squared() + x_im.norm_squared()).sqrt();
    (r_re.norm_squared() + r_im.norm_squared()).sqrt() / (theta.norm() * x_norm)
}

/// Fixed reservoir matrices. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirWeights {
    pub w_rec: SparseRows,
    pub w_in: SparseRows,
    pub config: ReservoirConfig,
}

pub fn init_reservoir(config: &ReservoirConfig) -> Result<ReservoirWeights> {
    config.validate()?;
    let mut rng = seeded_stream(config.seed, STREAM_RECURRENT);
    let mut w_rec = SparseRows::random(
        config.units,
        config.units,
        config.recurrent_connectivity,
        &mut rng,
    );
    let mut rng = seeded_stream(config.seed, STREAM_INPUT);
    let mut w_in = SparseRows::random(
        config.units,
        config.input_dim,
        config.input_connectivity,
        &mut rng,
    );
    w_in.scale(config.input_scaling);

    if config.spectral_radius == 0.0 {
        w_rec.scale(0.0);
    } else {
        let rho = spectral_radius(&w_rec, config.seed)?;
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Numeric(format!(
                "recurrent matrix drawn from seed {} has spectral radius {rho}; choose another seed",
                config.seed
            )));
        }
        w_rec.scale(config.spectral_radius / rho);
    }

    Ok(ReservoirWeights {
        w_rec,
        w_in,
        config: config.clone(),
    })
}

impl ReservoirWeights {
    pub fn units(&self) -> usize {
        self.config.units
    }

    /// Length of the harvested feature vector (units plus bias).
    pub fn feature_dim(&self) -> usize {
        self.config.units + 1
    }

    /// One leaky-integrator update of `state` in place. `scratch` must have
    /// `units` entries; its contents are overwritten.
    pub fn step(&self, state: &mut [f64], scratch: &mut [f64], input: &[f64]) {
        scratch.iter_mut().for_each(|s| *s = 0.0);
        self.w_rec.mul_add(state, scratch);
        self.w_in.mul_add(input, scratch);
        let a = self.config.leaking_rate;
        for (x, pre) in state.iter_mut().zip(scratch.iter()) {
            *x = (1.0 - a) * *x + a * pre.tanh();
        }
    }

    fn check_inputs<S: AsRef<[f64]>>(&self, sequence: &[S]) -> Result<()> {
        let dim = self.config.input_dim;
        if let Some((t, bad)) = sequence
            .iter()
            .enumerate()
            .find(|(_, u)| u.as_ref().len() != dim)
        {
            return Err(Error::Input(format!(
                "input step {t} has dimension {}, reservoir expects {dim}",
                bad.as_ref().len()
            )));
        }
        Ok(())
    }

    /// Runs `sequence` from an arbitrary initial state and returns the final state.
    pub fn final_state<S: AsRef<[f64]>>(&self, sequence: &[S], initial: &[f64]) -> Result<Vec<f64>> {
        if initial.len() != self.units() {
            return Err(Error::Input(format!(
                "initial state has {} entries, reservoir has {} units",
                initial.len(),
                self.units()
            )));
        }
        self.check_inputs(sequence)?;
        let mut state = initial.to_vec();
        let mut scratch = vec![0.0; self.units()];
        for u in sequence {
            self.step(&mut state, &mut scratch, u.as_ref());
        }
        Ok(state)
    }
}

/// Time-mean of the post-washout reservoir states with a trailing bias `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Harvests the feature vector of one input sequence.
pub fn run_sequence<S: AsRef<[f64]>>(
    weights: &ReservoirWeights,
    sequence: &[S],
) -> Result<FeatureVector> {
    let washout = weights.config.washout;
    if sequence.len() <= washout {
        return Err(Error::Input(format!(
            "sequence of length {} does not exceed washout {washout}",
            sequence.len()
        )));
    }
    weights.check_inputs(sequence)?;

    let n = weights.units();
    let mut state = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for (t, u) in sequence.iter().enumerate() {
        weights.step(&mut state, &mut scratch, u.as_ref());
        if t >= washout {
            sum.iter_mut().zip(&state).for_each(|(s, x)| *s += x);
        }
    }
    let kept = (sequence.len() - washout) as f64;
    let mut values: Vec<f64> = sum.into_iter().map(|s| s / kept).collect();
    values.push(1.0);
    Ok(FeatureVector { values })
}

/// Linear map from features to class scores, `classes × features`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutWeights {
    theta: DMatrix<f64>,
}

impl ReadoutWeights {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("readout weights contain non-finite entries".into()));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn classes(&self) -> usize {
        self.theta.nrows()
    }

    pub fn features(&self) -> usize {
        self.theta.ncols()
    }

    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.features() {
            return Err(Error::Input(format!(
                "feature has dimension {}, readout expects {}",
                feature.len(),
                self.features()
            )));
        }
        Ok((0..self.classes())
            .map(|c| {
                self.theta
                    .row(c)
                    .iter()
                    .zip(feature)
                    .map(|(w, f)| w * f)
                    .sum()
            })
            .collect())
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn classify(theta: &ReadoutWeights, feature: &FeatureVector) -> Result<(Vec<f64>, usize)> {
    let scores = theta.scores(feature.as_slice())?;
    let label = argmax(&scores);
    Ok((scores, label))
}

/// Centralized ridge readout over a `features × samples` matrix and a
/// `classes × samples` target matrix.
pub fn solve_readout(phi: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<ReadoutWeights> {
    if phi.ncols() != y.ncols() {
        return Err(Error::Input(format!(
            "phi has {} samples but y has {}",
            phi.ncols(),
            y.ncols()
        )));
    }
    // Compensated sums round to the same matrices the federated path builds.
    let (gamma, _) = sums::cross(y, phi);
    let (omega, _) = sums::gram(phi);
    ridge_solve(&gamma, &omega, beta)
}

/// Solves `Θ (Ω + βI) = Γ` for `Θ` with a Cholesky factorization of the
/// symmetric system matrix, then checks the normal-equation residual.
pub(crate) fn ridge_solve(gamma: &DMatrix<f64>, omega: &DMatrix<f64>, beta: f64) -> Result<ReadoutWeights> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Input(format!("beta {beta} must be finite and nonnegative")));
    }
    let n = omega.nrows();
    if omega.ncols() != n || gamma.ncols() != n {
        return Err(Error::Input(format!(
            "gamma is {}x{}, omega is {}x{}",
            gamma.nrows(),
            gamma.ncols(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let mut system = omega.clone();
    for i in 0..n {
        system[(i, i)] += beta;
    }
    let singular = || {
        Error::Numeric(format!(
            "readout system is singular or indefinite at beta = {beta}; use beta > 0"
        ))
    };
    let chol = Cholesky::new(system.clone()).ok_or_else(singular)?;

    let max_diag = system.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v * v));
    if n > 0 && min_pivot <= n as f64 * f64::EPSILON * max_diag {
        return Err(singular());
    }

    let theta = chol.solve(&gamma.transpose()).transpose();
    let residual = (&theta * &system - gamma).norm();
    if residual > READOUT_RESIDUAL_TOLERANCE * gamma.norm() {
        return Err(Error::Numeric(format!(
            "readout residual {residual:.3e} exceeds tolerance relative to |gamma| = {:.3e}",
            gamma.norm()
        )));
    }
    ReadoutWeights::new(theta)
}
