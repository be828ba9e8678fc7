//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the autodiff tape or the linear-algebra module of
//! the crate under test; every oracle is written directly from its textbook
//! definition.

#![allow(dead_code)]

pub mod gradcheck;

use dmd_l2o::optimizer_net::LstmOptimizerParams;
use num_complex::Complex64;
use rand::Rng;

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance between analytic and finite-difference gradients.
pub const FD_REL_TOL: f64 = 1e-6;

/// Row-major `a (r x k) * b (k x c)` by the triple loop.
pub fn matmul_naive(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Central differences of `f` at `x` for the coordinates in `coords`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Ratio of the analytic/finite-difference disagreement to the allowed
/// error; the check passes when the ratio is at most one.
///
/// The allowance is the relative tolerance plus the rounding floor of a
/// central difference, about `eps * |f| / h`, with a safety factor of five.
pub fn fd_ratio(analytic: f64, numeric: f64, f_scale: f64) -> f64 {
    let rounding = 5.0 * f64::EPSILON * f_scale.abs().max(1.0) / FD_STEP;
    let allowed = FD_REL_TOL * analytic.abs().max(numeric.abs()) + rounding;
    (analytic - numeric).abs() / allowed
}

/// Worst [`fd_ratio`] over paired gradient entries.
pub fn worst_ratio(analytic: &[f64], numeric: &[f64], f_scale: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| fd_ratio(a, n, f_scale))
        .fold(0.0, f64::max)
}

/// Characteristic polynomial coefficients `c[0..=n]` of `a` (`c[n] = 1`) by
/// the Faddeev-LeVerrier recursion.
pub fn charpoly(a: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = vec![0.0; n * n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I
        let mut next = matmul_naive(a, &m, n, n, n);
        for i in 0..n {
            next[i * n + i] += c[n - k + 1];
        }
        m = next;
        let am = matmul_naive(a, &m, n, n, n);
        let trace: f64 = (0..n).map(|i| am[i * n + i]).sum();
        c[n - k] = -trace / k as f64;
    }
    c
}

/// Roots of the monic polynomial `c` by Durand-Kerner iteration.
pub fn poly_roots(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let eval = |z: Complex64| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * z + k);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|i| seed.powu(i as u32)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    // Newton polish on the original polynomial.
    let deriv: Vec<f64> = (1..=n).map(|k| k as f64 * c[k]).collect();
    let eval_d = |z: Complex64| deriv.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * z + k);
    for r in &mut roots {
        for _ in 0..3 {
            let d = eval_d(*r);
            if d.norm() > 0.0 {
                *r -= eval(*r) / d;
            }
        }
    }
    roots
}

/// Largest distance between two spectra after matching every value of `a`
/// to its nearest unused value of `b`, taking the closest pairs first.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spectra differ in size");
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            pairs.push(((x - y).norm(), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut worst = 0.0f64;
    for (d, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            worst = worst.max(d);
        }
    }
    worst
}

/// A real matrix with prescribed eigenvalues: block diagonal with `2 x 2`
/// rotation-scaling blocks for conjugate pairs, conjugated by a random
/// well-conditioned matrix `P = I + 0.3 G`. Moduli lie in `[0.8, 1)` and
/// distinct eigenvalues are at least 0.08 apart. Returns `(A, eigenvalues)`.
pub fn matrix_with_spectrum<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<Complex64>) {
    let mut eig: Vec<Complex64> = Vec::new();
    let mut block = vec![0.0; n * n];
    let mut i = 0;
    let separated = |eig: &[Complex64], z: Complex64| eig.iter().all(|e| (e - z).norm() > 0.08 && (e.conj() - z).norm() > 0.08);
    // At most four real eigenvalues fit comfortably in the two real
    // intervals at this separation; the rest come in conjugate pairs.
    let min_pairs = n.saturating_sub(4).div_ceil(2);
    let pairs = rng.random_range(min_pairs..=n / 2);
    while i < n {
        let pair = i < 2 * pairs;
        loop {
            let modulus = rng.random_range(0.8..1.0);
            if pair {
                let angle = rng.random_range(0.15..2.9);
                let z = Complex64::from_polar(modulus, angle);
                if separated(&eig, z) && separated(&eig, z.conj()) {
                    let (re, im) = (z.re, z.im);
                    block[i * n + i] = re;
                    block[i * n + i + 1] = -im;
                    block[(i + 1) * n + i] = im;
                    block[(i + 1) * n + i + 1] = re;
                    eig.push(z);
                    eig.push(z.conj());
                    i += 2;
                    break;
                }
            } else {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let z = Complex64::new(sign * modulus, 0.0);
                if separated(&eig, z) {
                    block[i * n + i] = z.re;
                    eig.push(z);
                    i += 1;
                    break;
                }
            }
        }
    }
    let mut p = vec![0.0; n * n];
    for (k, v) in p.iter_mut().enumerate() {
        *v = 0.3 * rng.random_range(-1.0..1.0) + if k % (n + 1) == 0 { 1.0 } else { 0.0 };
    }
    let p_inv = invert(&p, n).expect("P = I + 0.3 G is invertible for the sampled G");
    let a = matmul_naive(&matmul_naive(&p, &block, n, n, n), &p_inv, n, n, n);
    (a, eig)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))?;
        if m[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[r * n + k] -= f * m[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Hidden and cell state of one coordinate in both LSTM layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl ScalarState {
    pub fn zeros(hidden: usize) -> Self {
        ScalarState {
            h1: vec![0.0; hidden],
            c1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
            c2: vec![0.0; hidden],
        }
    }
}

/// One LSTM cell with gates ordered input, forget, candidate, output and
/// weights laid out as `(in + H) x 4H` acting on `[x, h]`.
fn scalar_cell(weight: &[f64], bias: &[f64], x: &[f64], h: &mut [f64], c: &mut [f64]) {
    let hidden = h.len();
    let width = 4 * hidden;
    let xh: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
    let mut z = bias.to_vec();
    for (r, &v) in xh.iter().enumerate() {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += v * weight[r * width + j];
        }
    }
    for j in 0..hidden {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hidden + j]);
        let g = z[2 * hidden + j].tanh();
        let o = sigmoid(z[3 * hidden + j]);
        c[j] = f * c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

/// Update proposed for one coordinate with input row `x`.
pub fn scalar_lstm_step(params: &LstmOptimizerParams, x: &[f64], state: &mut ScalarState) -> f64 {
    scalar_cell(params.layer1.weight.data(), params.layer1.bias.data(), x, &mut state.h1, &mut state.c1);
    let h1 = state.h1.clone();
    scalar_cell(params.layer2.weight.data(), params.layer2.bias.data(), &h1, &mut state.h2, &mut state.c2);
    let head = params.head_weight.data();
    let out: f64 = state.h2.iter().zip(head).map(|(h, w)| h * w).sum::<f64>() + params.head_bias.data()[0];
    params.output_scale * out
}

/// `||W theta - y||^2` with `W` row-major `k x k`.
pub fn quadratic_loss(w: &[f64], y: &[f64], theta: &[f64]) -> f64 {
    let k = y.len();
    (0..k)
        .map(|i| {
            let r: f64 = (0..k).map(|j| w[i * k + j] * theta[j]).sum::<f64>() - y[i];
            r * r
        })
        .sum()
}

/// Pre-activations of every hidden layer and the mean cross-entropy of a
/// fully connected classifier, evaluated with plain loops.
///
/// Layer `l` reads an `in x out` weight block followed by `out` biases from
/// `theta`, in order.
pub fn mlp_forward(
    sizes: &[usize],
    relu: bool,
    theta: &[f64],
    images: &[f64],
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut x = images.to_vec();
    let mut offset = 0;
    let mut hidden_pre = Vec::new();
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &theta[offset..offset + fan_in * fan_out];
        let b = &theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let mut z = matmul_naive(&x, w, batch, fan_in, fan_out);
        for r in 0..batch {
            for j in 0..fan_out {
                z[r * fan_out + j] += b[j];
            }
        }
        if l + 1 < layers {
            hidden_pre.extend_from_slice(&z);
            x = z
                .iter()
                .map(|&v| if relu { v.max(0.0) } else { sigmoid(v) })
                .collect();
        } else {
            x = z;
        }
    }
    let classes = sizes[layers];
    let mut loss = 0.0;
    for r in 0..batch {
        let row = &x[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[r]];
    }
    (loss / batch as f64, hidden_pre)
}

/// Textbook Adam with bias correction, returning every iterate.
pub fn adam_reference(x0: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>, lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(&x);
        for i in 0..x.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
        out.push(x.clone());
    }
    out
}
