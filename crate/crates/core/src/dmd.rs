//! Trailing snapshot window over the optimizee state `[theta; loss]` and the
//! rank-truncated exact DMD computed from it.
//!
//! The window keeps the last `m + 1` states. Consecutive states form the
//! snapshot matrices `X = [s_0 .. s_{m-1}]` and `Y = [s_1 .. s_m]`. The window
//! maintains the Gram matrix of its states incrementally, so the reduced
//! operator
//!
//! ```text
//! A~ = U~^T Y V~ S~^-1 = S~^-1 V~^T (X^T Y) V~ S~^-1
//! ```
//!
//! is formed from inner products only and `U` is never materialized.

use std::collections::VecDeque;

use log::warn;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{default_tol, eig_small, svd_from_gram, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DmdError {
    #[error("invalid DMD configuration: rank {rank}, snapshots {snapshots} (need 1 <= rank <= snapshots)")]
    Config { rank: usize, snapshots: usize },
    #[error("snapshot length changed from {expected} to {got}")]
    DimensionChanged { expected: usize, got: usize },
    #[error("snapshot contains NaN or infinity")]
    NonFinite,
    #[error("window holds {have} states but {need} are required")]
    Underfilled { have: usize, need: usize },
    #[error("window capacity {capacity} cannot serve {snapshots} snapshots")]
    Capacity { capacity: usize, snapshots: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// DMD approximation rank `R` and snapshot count `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DmdConfig {
    pub rank: usize,
    pub snapshots: usize,
}

impl DmdConfig {
    pub fn new(rank: usize, snapshots: usize) -> Result<Self, DmdError> {
        if rank == 0 || rank > snapshots {
            return Err(DmdError::Config { rank, snapshots });
        }
        Ok(DmdConfig { rank, snapshots })
    }

    /// Width of the encoded feature vector.
    pub fn feature_len(&self) -> usize {
        2 * self.rank
    }
}

/// Ring buffer of the most recent `m + 1` states `[theta_i; L_i]`.
#[derive(Clone, Debug)]
pub struct SnapshotWindow {
    capacity: usize,
    dim: Option<usize>,
    states: VecDeque<Vec<f64>>,
    // gram[i][j] = <states[i], states[j]>
    gram: VecDeque<VecDeque<f64>>,
    pushed: usize,
}

impl SnapshotWindow {
    /// Window sized for `snapshots` columns in each of X and Y.
    pub fn new(snapshots: usize) -> Self {
        SnapshotWindow {
            capacity: snapshots,
            dim: None,
            states: VecDeque::with_capacity(snapshots + 1),
            gram: VecDeque::with_capacity(snapshots + 1),
            pushed: 0,
        }
    }

    /// The snapshot count `m`.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// States currently retained (at most `m + 1`).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Total number of states pushed over the window's lifetime.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    /// Length `n + 1` of each state, once known.
    pub fn state_dim(&self) -> Option<usize> {
        self.dim
    }

    /// Retained states, oldest first.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.iter().map(|s| s.as_slice())
    }

    /// True once X and Y with `m` columns each can be formed.
    pub fn is_full(&self) -> bool {
        self.states.len() == self.capacity + 1
    }

    /// Appends `[theta; loss]`, evicting the oldest state beyond `m + 1`.
    pub fn push(&mut self, theta: &[f64], loss: f64) -> Result<(), DmdError> {
        let mut state = Vec::with_capacity(theta.len() + 1);
        state.extend_from_slice(theta);
        state.push(loss);
        self.push_state(state)
    }

    /// Appends an arbitrary state vector of fixed length.
    pub fn push_state(&mut self, state: Vec<f64>) -> Result<(), DmdError> {
        let dim = state.len();
        if let Some(expected) = self.dim {
            if expected != dim {
                return Err(DmdError::DimensionChanged { expected, got: dim });
            }
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(DmdError::NonFinite);
        }
        self.dim = Some(dim);

        if self.states.len() == self.capacity + 1 {
            self.states.pop_front();
            self.gram.pop_front();
            for row in &mut self.gram {
                row.pop_front();
            }
        }
        let dots: Vec<f64> = self.states.iter().map(|s| dot(s, &state)).collect();
        let self_dot = dot(&state, &state);
        for (row, &d) in self.gram.iter_mut().zip(&dots) {
            row.push_back(d);
        }
        let mut new_row: VecDeque<f64> = dots.into_iter().collect();
        new_row.push_back(self_dot);
        self.gram.push_back(new_row);
        self.states.push_back(state);
        self.pushed += 1;
        Ok(())
    }

    fn gram_block(&self, row0: usize, col0: usize, size: usize) -> Matrix {
        let mut g = Matrix::zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                g[(i, j)] = self.gram[row0 + i][col0 + j];
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// DMD eigenvalues encoded as `(re_1, im_1, re_2, im_2, ...)`, zero-padded
/// to `2R` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DmdFeatures {
    values: Vec<f64>,
}

impl DmdFeatures {
    pub fn zeros(rank: usize) -> Self {
        DmdFeatures {
            values: vec![0.0; 2 * rank],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// The encoded eigenvalues as complex numbers (padding included).
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.values.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
    }
}

/// Reduced operator pieces shared by eigenvalue and mode computations.
struct Reduced {
    sigma: Vec<f64>,
    v: Matrix,
    a_tilde: Matrix,
}

fn reduced_operator(window: &SnapshotWindow, config: &DmdConfig) -> Result<Option<Reduced>, DmdError> {
    let m = config.snapshots;
    if window.capacity < m {
        return Err(DmdError::Capacity {
            capacity: window.capacity,
            snapshots: m,
        });
    }
    let have = window.len();
    if have < m + 1 {
        return Err(DmdError::Underfilled { have, need: m + 1 });
    }
    let first = have - (m + 1);
    let xtx = window.gram_block(first, first, m);
    let xty = window.gram_block(first, first + 1, m);
    let n = window.dim.unwrap_or(0);
    let svd = svd_from_gram(&xtx, default_tol(n, m));
    let r = svd.sigma.len().min(config.rank);
    if r == 0 {
        return Ok(None);
    }
    let sigma = svd.sigma[..r].to_vec();
    let mut v = Matrix::zeros(m, r);
    for i in 0..m {
        for j in 0..r {
            v[(i, j)] = svd.v[(i, j)];
        }
    }
    let mut a_tilde = v.transpose().matmul(&xty).matmul(&v);
    for i in 0..r {
        for j in 0..r {
            a_tilde[(i, j)] /= sigma[i] * sigma[j];
        }
    }
    Ok(Some(Reduced { sigma, v, a_tilde }))
}

/// Strict variant of [`dmd_eigenvalues`] that reports numerical failures.
pub fn try_dmd_eigenvalues(window: &SnapshotWindow, config: &DmdConfig) -> Result<DmdFeatures, DmdError> {
    let mut features = DmdFeatures::zeros(config.rank);
    if window.len() < config.snapshots + 1 {
        return Ok(features);
    }
    let Some(reduced) = reduced_operator(window, config)? else {
        return Ok(features);
    };
    let spectrum = eig_small(&reduced.a_tilde)?;
    for (slot, lambda) in features.values.chunks_mut(2).zip(&spectrum.values) {
        slot[0] = lambda.re;
        slot[1] = lambda.im;
    }
    if features.values.iter().any(|v| !v.is_finite()) {
        return Err(DmdError::NonFinite);
    }
    Ok(features)
}

/// Rank-`R` DMD eigenvalue features of the window.
///
/// Returns all zeros while fewer than `m + 1` states are available, and
/// degrades to all zeros (with a warning) if the numerical kernels fail.
pub fn dmd_eigenvalues(window: &SnapshotWindow, config: &DmdConfig) -> DmdFeatures {
    match try_dmd_eigenvalues(window, config) {
        Ok(features) => features,
        Err(err) => {
            warn!("DMD failed, using zero features: {err}");
            DmdFeatures::zeros(config.rank)
        }
    }
}

/// Exact DMD modes `Phi = Y V~ S~^-1 W`, one column of length `n + 1` per
/// eigenvalue in spectral order. Columns beyond the effective rank are zero.
/// Each nonzero mode has unit norm with its largest entry real and positive.
pub fn dmd_modes(window: &SnapshotWindow, config: &DmdConfig) -> Result<Vec<Vec<Complex64>>, DmdError> {
    let dim = window.dim.unwrap_or(0);
    let mut modes = vec![vec![Complex64::new(0.0, 0.0); dim]; config.rank];
    let Some(reduced) = reduced_operator(window, config)? else {
        return Ok(modes);
    };
    let spectrum = eig_small(&reduced.a_tilde)?;
    let r = reduced.sigma.len();
    let m = config.snapshots;
    let first = window.len() - (m + 1);
    // Y V~ S~^-1 : (n+1) x r
    let mut yvs = vec![vec![0.0; r]; dim];
    for (col, state) in window.states.iter().skip(first + 1).take(m).enumerate() {
        for (row, &x) in state.iter().enumerate() {
            for k in 0..r {
                yvs[row][k] += x * reduced.v[(col, k)] / reduced.sigma[k];
            }
        }
    }
    for (slot, &lambda) in modes.iter_mut().zip(&spectrum.values) {
        let w = eigenvector(&reduced.a_tilde, lambda);
        let mut phi: Vec<Complex64> = yvs
            .iter()
            .map(|row| row.iter().zip(&w).map(|(&a, &b)| b * a).sum())
            .collect();
        normalize_mode(&mut phi);
        *slot = phi;
    }
    Ok(modes)
}

fn normalize_mode(phi: &mut [Complex64]) {
    let norm = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let pivot = phi
        .iter()
        .copied()
        .fold(Complex64::new(0.0, 0.0), |best, c| if c.norm() > best.norm() { c } else { best });
    let phase = pivot.conj() / pivot.norm();
    for c in phi.iter_mut() {
        *c = *c * phase / norm;
    }
}

/// Eigenvector of a small real matrix for a known eigenvalue, by inverse
/// iteration on a slightly shifted complex system.
fn eigenvector(a: &Matrix, lambda: Complex64) -> Vec<Complex64> {
    let r = a.rows();
    let shift = lambda + Complex64::new(1e-10 * (1.0 + lambda.norm()), 0.0);
    let mut x: Vec<Complex64> = (0..r).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.0)).collect();
    for _ in 0..3 {
        let mut m: Vec<Vec<Complex64>> = (0..r)
            .map(|i| {
                (0..r)
                    .map(|j| Complex64::new(a[(i, j)], 0.0) - if i == j { shift } else { Complex64::new(0.0, 0.0) })
                    .collect()
            })
            .collect();
        x = solve_complex(&mut m, x);
        let norm = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        x.iter_mut().for_each(|c| *c /= norm);
    }
    x
}

/// Gaussian elimination with partial pivoting; singular pivots are nudged.
fn solve_complex(m: &mut [Vec<Complex64>], mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))
            .unwrap_or(col);
        m.swap(col, piv);
        b.swap(col, piv);
        if m[col][col].norm() == 0.0 {
            m[col][col] = Complex64::new(f64::EPSILON, 0.0);
        }
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let t = m[col][k];
                m[row][k] -= f * t;
            }
            let t = b[col];
            b[row] -= f * t;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pseudoinverse;

    fn window_from(states: &[Vec<f64>], m: usize) -> SnapshotWindow {
        let mut w = SnapshotWindow::new(m);
        for s in states {
            let (theta, loss) = s.split_at(s.len() - 1);
            w.push(theta, loss[0]).unwrap();
        }
        w
    }

    #[test]
    fn push_counts_and_eviction() {
        let mut w = SnapshotWindow::new(3);
        w.push(&[1.0], 0.0).unwrap();
        assert_eq!(w.len(), 1);
        assert!(dmd_eigenvalues(&w, &DmdConfig::new(1, 3).unwrap()).is_zero());
        for k in 2..=5 {
            w.push(&[k as f64], 0.0).unwrap();
        }
        let kept: Vec<f64> = w.states().map(|s| s[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(w.pushed(), 5);
    }

    #[test]
    fn push_rejects_nan_and_dimension_change() {
        let mut w = SnapshotWindow::new(3);
        assert_eq!(w.push(&[1.0], f64::NAN), Err(DmdError::NonFinite));
        assert!(w.is_empty());
        w.push(&[1.0, 2.0], 0.5).unwrap();
        assert_eq!(w.push(&[1.0], 0.5), Err(DmdError::DimensionChanged { expected: 3, got: 2 }));
    }

    #[test]
    fn config_validation() {
        assert!(DmdConfig::new(0, 5).is_err());
        assert!(DmdConfig::new(6, 5).is_err());
        assert_eq!(DmdConfig::new(2, 5).unwrap().feature_len(), 4);
    }

    #[test]
    fn gram_matches_direct_products_after_eviction() {
        let states: Vec<Vec<f64>> = (0..9).map(|k| vec![(k as f64).sin(), (k as f64 * 0.3).cos(), k as f64]).collect();
        let w = window_from(&states, 4);
        let g = w.gram_block(0, 0, 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g[(i, j)], dot(&states[4 + i], &states[4 + j]));
            }
        }
    }

    #[test]
    fn constant_trajectory_has_unit_eigenvalue() {
        let states = vec![vec![1.0, 2.0, 3.0, 4.0, 0.5]; 6];
        let w = window_from(&states, 5);
        let f = dmd_eigenvalues(&w, &DmdConfig::new(1, 5).unwrap());
        assert!((f.values()[0] - 1.0).abs() < 1e-12 && f.values()[1] == 0.0, "{:?}", f);
    }

    #[test]
    fn geometric_trajectory_has_half_eigenvalue() {
        let states: Vec<Vec<f64>> = (0..5).map(|k| {
            let s = 0.5f64.powi(k);
            vec![s, 2.0 * s, s]
        }).collect();
        let w = window_from(&states, 4);
        let config = DmdConfig::new(1, 4).unwrap();
        let f = dmd_eigenvalues(&w, &config);
        assert!((f.values()[0] - 0.5).abs() < 1e-12 && f.values()[1].abs() < 1e-12, "{:?}", f);

        // oracle: A = Y X^+ restricted to the trajectory
        let x = Matrix::from_columns(&states[..4]);
        let y = Matrix::from_columns(&states[1..]);
        let a = y.matmul(&pseudoinverse(&x, 1e-12));
        let s0 = Matrix::from_columns(&states[..1]);
        let image = a.matmul(&s0);
        for i in 0..3 {
            assert!((image[(i, 0)] - 0.5 * s0[(i, 0)]).abs() < 1e-12);
        }

        let modes = dmd_modes(&w, &config).unwrap();
        let phi = &modes[0];
        let scale = (1.0f64 + 4.0 + 1.0).sqrt();
        for (c, expect) in phi.iter().zip([1.0, 2.0, 1.0]) {
            assert!((c.re - expect / scale).abs() < 1e-10 && c.im.abs() < 1e-10, "{phi:?}");
        }
    }

    #[test]
    fn rotation_gives_conjugate_pair() {
        let angle = std::f64::consts::PI / 3.0;
        let states: Vec<Vec<f64>> = (0..7)
            .map(|k| {
                let t = angle * k as f64;
                vec![t.cos(), t.sin(), 0.0, 0.0, 0.0]
            })
            .collect();
        let w = window_from(&states, 6);
        let f = dmd_eigenvalues(&w, &DmdConfig::new(2, 6).unwrap());
        let expect = [0.5, 3f64.sqrt() / 2.0, 0.5, -(3f64.sqrt()) / 2.0];
        for (g, e) in f.values().iter().zip(expect) {
            assert!((g - e).abs() < 1e-10, "{:?}", f);
        }
    }

    #[test]
    fn rank_beyond_effective_rank_is_zero_padded() {
        let states: Vec<Vec<f64>> = (0..5).map(|k| {
            let s = 0.5f64.powi(k);
            vec![s, 2.0 * s, s]
        }).collect();
        let w = window_from(&states, 4);
        let config = DmdConfig::new(3, 4).unwrap();
        let f = dmd_eigenvalues(&w, &config);
        assert_eq!(f.values().len(), 6);
        assert_eq!(&f.values()[2..], &[0.0; 4]);
        let modes = dmd_modes(&w, &config).unwrap();
        assert!(modes[1].iter().chain(&modes[2]).all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_window_gives_zero_features() {
        let w = window_from(&vec![vec![0.0; 4]; 5], 4);
        assert!(dmd_eigenvalues(&w, &DmdConfig::new(2, 4).unwrap()).is_zero());
    }

    #[test]
    fn modes_require_full_window() {
        let w = window_from(&vec![vec![1.0; 3]; 2], 4);
        assert!(matches!(
            dmd_modes(&w, &DmdConfig::new(1, 4).unwrap()),
            Err(DmdError::Underfilled { have: 2, need: 5 })
        ));
    }
}
