use super::Matrix;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Reduced singular value decomposition `X = U diag(sigma) V^T`.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// n x r, orthonormal columns.
    pub u: Matrix,
    /// r positive singular values, nonincreasing.
    pub sigma: Vec<f64>,
    /// m x r, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    /// Effective rank after truncation.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Right singular pairs of a matrix recovered from its Gram matrix.
#[derive(Clone, Debug)]
pub struct GramSvd {
    pub sigma: Vec<f64>,
    /// m x r
    pub v: Matrix,
}

/// Default relative truncation threshold for an n x m matrix.
pub fn default_tol(n: usize, m: usize) -> f64 {
    1e-12 * n.max(m) as f64
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in nonincreasing order and the matching orthonormal
/// eigenvectors as columns. Each eigenvector's largest-magnitude entry is
/// made positive so the output is sign-deterministic.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                if apq.abs() <= f64::EPSILON * (app * aqq).abs().sqrt() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (k, x) in col.into_iter().enumerate() {
            vectors[(k, dst)] = x;
        }
    }
    (values, vectors)
}

/// Singular values and right singular vectors of X from `gram = X^T X`.
///
/// Values at or below `tol * sigma_max` are dropped. Because squaring the
/// matrix halves the attainable relative precision, the cutoff is never
/// allowed below the Gram round-off floor `sqrt(10 m eps)`.
pub fn svd_from_gram(gram: &Matrix, tol: f64) -> GramSvd {
    let m = gram.rows();
    let (values, vectors) = symmetric_eigen(gram);
    let sigma_max = values.first().map_or(0.0, |&l| l.max(0.0).sqrt());
    if sigma_max == 0.0 || !sigma_max.is_finite() {
        return GramSvd {
            sigma: Vec::new(),
            v: Matrix::zeros(m, 0),
        };
    }
    let floor = (10.0 * m as f64 * f64::EPSILON).sqrt();
    let cutoff = tol.max(floor) * sigma_max;
    let sigma: Vec<f64> = values
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .take_while(|&s| s > cutoff)
        .collect();
    let r = sigma.len();
    let mut v = Matrix::zeros(m, r);
    for i in 0..m {
        for j in 0..r {
            v[(i, j)] = vectors[(i, j)];
        }
    }
    GramSvd { sigma, v }
}

/// Thin SVD via the Gram matrix: `V, sigma` from `X^T X`, then `U = X V sigma^-1`.
pub fn thin_svd(x: &Matrix, tol: f64) -> ThinSvd {
    let GramSvd { sigma, v } = svd_from_gram(&x.gram(), tol);
    let mut u = x.matmul(&v);
    let r = sigma.len();
    for i in 0..u.rows() {
        for j in 0..r {
            u[(i, j)] /= sigma[j];
        }
    }
    ThinSvd { u, sigma, v }
}

/// Moore-Penrose pseudoinverse `V sigma^-1 U^T` over the retained components.
pub fn pseudoinverse(x: &Matrix, tol: f64) -> Matrix {
    let svd = thin_svd(x, tol);
    let (n, m, r) = (x.rows(), x.cols(), svd.rank());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..r {
                s += svd.v[(i, k)] * svd.u[(j, k)] / svd.sigma[k];
            }
            out[(i, j)] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_matrix(rng: &mut Xoshiro256PlusPlus, n: usize, m: usize) -> Matrix {
        Matrix::from_vec(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn reconstruct(svd: &ThinSvd) -> Matrix {
        let mut us = svd.u.clone();
        for i in 0..us.rows() {
            for j in 0..svd.rank() {
                us[(i, j)] *= svd.sigma[j];
            }
        }
        us.matmul(&svd.v.transpose())
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = thin_svd(&Matrix::identity(2), 1e-10);
        assert_eq!(svd.rank(), 2);
        for s in &svd.sigma {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_column_pair() {
        let x = Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 0.0]]);
        let svd = thin_svd(&x, 1e-10);
        assert_eq!(svd.rank(), 1);
        assert!((svd.sigma[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let svd = thin_svd(&Matrix::zeros(4, 3), default_tol(4, 3));
        assert_eq!(svd.rank(), 0);
        assert_eq!(svd.u.cols(), 0);
        assert_eq!(pseudoinverse(&Matrix::zeros(4, 3), 1e-12), Matrix::zeros(3, 4));
    }

    #[test]
    fn random_tall_matrices_reconstruct() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for _ in 0..50 {
            let x = random_matrix(&mut rng, 200, 20);
            let svd = thin_svd(&x, default_tol(200, 20));
            assert_eq!(svd.rank(), 20);
            let err = reconstruct(&svd).sub(&x).frobenius_norm();
            assert!(err <= 1e-8 * x.frobenius_norm(), "reconstruction error {err}");
            let utu = svd.u.transpose().matmul(&svd.u).sub(&Matrix::identity(20)).max_abs();
            let vtv = svd.v.transpose().matmul(&svd.v).sub(&Matrix::identity(20)).max_abs();
            assert!(utu < 1e-8 && vtv < 1e-8, "orthogonality {utu} {vtv}");
            assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn pseudoinverse_small_cases() {
        assert_eq!(pseudoinverse(&Matrix::from_rows(&[vec![2.0]]), 1e-12), Matrix::from_rows(&[vec![0.5]]));
        let p = pseudoinverse(&Matrix::identity(3), 1e-12);
        assert!(p.sub(&Matrix::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn pseudoinverse_satisfies_penrose_conditions() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_matrix(&mut rng, 20, 5);
            let p = pseudoinverse(&x, default_tol(20, 5));
            let xf = x.frobenius_norm();
            let pf = p.frobenius_norm();
            assert!(x.matmul(&p).matmul(&x).sub(&x).frobenius_norm() <= 1e-8 * xf);
            assert!(p.matmul(&x).matmul(&p).sub(&p).frobenius_norm() <= 1e-8 * pf);
            let xp = x.matmul(&p);
            assert!(xp.sub(&xp.transpose()).max_abs() < 1e-8);
            let px = p.matmul(&x);
            assert!(px.sub(&px.transpose()).max_abs() < 1e-8);
            // full column rank: left inverse
            assert!(px.sub(&Matrix::identity(5)).max_abs() < 1e-8);
        }
    }

    #[test]
    fn jacobi_diagonalizes_symmetric_matrix() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let b = random_matrix(&mut rng, 6, 6);
        let a = b.transpose().matmul(&b);
        let (vals, vecs) = symmetric_eigen(&a);
        let d = vecs.transpose().matmul(&a).matmul(&vecs);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { vals[i] } else { 0.0 };
                assert!((d[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }
}
