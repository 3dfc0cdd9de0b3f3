//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues sorted ascending and the
/// eigenvector columns permuted to match.
pub fn sorted_sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Counts of (positive, negative, near-zero) eigenvalues; near-zero means
/// `|λ| ≤ rel_tol · max|λ|` (or below `rel_tol` for the zero matrix).
pub fn inertia(m: &DMatrix<f64>, rel_tol: f64) -> (usize, usize, usize) {
    let (vals, _) = sorted_sym_eigen(m);
    let scale = vals.amax().max(1e-300);
    let mut counts = (0, 0, 0);
    for &v in vals.iter() {
        if v.abs() <= rel_tol * scale {
            counts.2 += 1;
        } else if v > 0.0 {
            counts.0 += 1;
        } else {
            counts.1 += 1;
        }
    }
    counts
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of quantities in `values_abs` treated as zero: those at most
/// `rel_threshold · scale`, trimmed back to a spectral gap of at least
/// `gap_factor` when the cut would otherwise fall inside a cluster.
pub fn kernel_count(values_abs: &[f64], scale: f64, rel_threshold: f64, gap_factor: f64) -> usize {
    let mut a: Vec<f64> = values_abs.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| x.total_cmp(y));
    let cut = rel_threshold * scale;
    let mut k = a.iter().take_while(|&&v| v <= cut).count();
    let gap_ok = |k: usize| -> bool {
        if k == 0 || k == a.len() {
            return true;
        }
        a[k] >= gap_factor * a[k - 1].max(f64::MIN_POSITIVE)
    };
    while k > 0 && !gap_ok(k) {
        k -= 1;
    }
    k
}

/// Right null space of `a` (columns), using the relative singular-value
/// threshold and gap rule of [`kernel_count`]. Also returns all singular
/// values of `a` in ascending order (padded with zeros for wide matrices).
pub fn null_space(a: &DMatrix<f64>, rel_threshold: f64, gap_factor: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.ncols();
    if n == 0 {
        return (DMatrix::zeros(0, 0), Vec::new());
    }
    // Eigen-decomposition of AᵀA gives right singular vectors for every column,
    // including the ones a thin SVD of a wide matrix would drop.
    let ata = a.transpose() * a;
    let (vals, vecs) = sorted_sym_eigen(&ata);
    let sv: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let scale = sv.last().copied().unwrap_or(0.0);
    let k = if scale == 0.0 { n } else { kernel_count(&sv, scale, rel_threshold, gap_factor) };
    (vecs.columns(0, k).into_owned(), sv)
}

/// Minimum-norm least-squares solve via SVD with relative cutoff.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let eps = (rcond * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Orthonormalizes the columns of `m` with respect to the inner product
/// `gram`; columns that become numerically dependent are dropped.
pub fn gram_schmidt(m: &DMatrix<f64>, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        let norm0 = (v.transpose() * gram * &v)[(0, 0)].abs().sqrt();
        for _ in 0..2 {
            for u in &out {
                let c = (u.transpose() * gram * &v)[(0, 0)];
                v -= u * c;
            }
        }
        let norm = (v.transpose() * gram * &v)[(0, 0)].abs().sqrt();
        if norm > 1e-10 * norm0.max(1e-300) && norm > 1e-300 {
            out.push(v / norm);
        }
    }
    let rows = m.nrows();
    DMatrix::from_columns(&out).resize(rows, out.len(), 0.0)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
    (idx.iter().map(|&i| nodes[i]).collect(), idx.iter().map(|&i| weights[i]).collect())
}

/// Gauss–Lobatto nodes on `[0, 1]` (endpoints included).
pub fn gauss_lobatto_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let p = n - 1;
    let mut nodes = Vec::with_capacity(n);
    nodes.push(0.0);
    for i in 1..p {
        // Roots of P'_p, started from Chebyshev–Gauss–Lobatto points.
        let mut x = -(std::f64::consts::PI * i as f64 / p as f64).cos();
        for _ in 0..100 {
            let (mut l0, mut l1) = (1.0, x);
            for k in 2..=p {
                let l2 = ((2 * k - 1) as f64 * x * l1 - (k - 1) as f64 * l0) / k as f64;
                l0 = l1;
                l1 = l2;
            }
            // P'_p and P''_p from the Legendre ODE.
            let d1 = p as f64 * (l0 - x * l1) / (1.0 - x * x);
            let d2 = (2.0 * x * d1 - (p * (p + 1)) as f64 * l1) / (1.0 - x * x);
            let dx = d1 / d2;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 + x));
    }
    nodes.push(1.0);
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn lobatto_nodes_are_symmetric() {
        let x = gauss_lobatto_nodes(5);
        assert_eq!(x.len(), 5);
        assert!((x[2] - 0.5).abs() < 1e-14);
        assert!((x[1] + x[3] - 1.0).abs() < 1e-14);
        // P'_4 roots: ±sqrt(3/7).
        assert!((2.0 * x[3] - 1.0 - (3.0f64 / 7.0).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn kernel_count_respects_gap() {
        assert_eq!(kernel_count(&[1e-9, 0.5, 1.0], 1.0, 1e-6, 100.0), 1);
        assert_eq!(kernel_count(&[1e-9, 5e-9, 1.0], 1.0, 1e-6, 100.0), 2);
        // Cut falls inside a cluster: back off to the last clear gap.
        assert_eq!(kernel_count(&[1e-12, 9e-7, 2e-6, 1.0], 1.0, 1e-6, 100.0), 1);
        assert_eq!(kernel_count(&[0.3, 1.0], 1.0, 1e-6, 100.0), 0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let (ns, _) = null_space(&a, 1e-10, 100.0);
        assert_eq!(ns.ncols(), 2);
        assert!((&a * &ns).amax() < 1e-12);
    }

    #[test]
    fn inertia_counts_signs() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0, 3.0, 0.0]));
        assert_eq!(inertia(&m, 1e-12), (2, 1, 1));
    }
}
