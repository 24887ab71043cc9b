//! Small dense complex linear-algebra helpers shared by the design routines.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Real inner product `Re{u^H v}` on the complex vector space viewed as R^2n.
pub fn re_inner(u: &CVec, v: &CVec) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// `vec(X)` in column-major order.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols, "unvectorize: length mismatch");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == Complex64::new(0.0, 0.0) {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// `log2 det(A)` for a Hermitian positive-definite matrix.
pub fn log2_det_hpd(a: &CMat) -> f64 {
    match a.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() / std::f64::consts::LN_2
        }
        None => {
            // Numerically semidefinite: fall back to the Hermitian eigenvalues.
            let herm = (a + a.adjoint()) * c(0.5);
            herm.symmetric_eigenvalues()
                .iter()
                .map(|&l| l.max(f64::MIN_POSITIVE).log2())
                .sum()
        }
    }
}

/// Moore-Penrose pseudo-inverse with singular values below `rel_tol * s_max` dropped.
pub fn pinv(a: &CMat, rel_tol: f64) -> CMat {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return CMat::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = CMat::zeros(n, m);
    if smax == 0.0 {
        return out;
    }
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            let vi = vt.row(i).adjoint();
            let ui = u.column(i).adjoint();
            out += (vi * ui) * c(1.0 / s);
        }
    }
    out
}

/// Right singular vectors of `h` ordered by descending singular value.
pub fn right_singular_vectors_sorted(h: &CMat) -> (Vec<f64>, CMat) {
    let svd = h.clone().svd(false, true);
    let vt = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n = h.ncols();
    let mut v = CMat::zeros(n, order.len());
    for (j, &i) in order.iter().enumerate() {
        v.set_column(j, &vt.row(i).adjoint());
    }
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    (s, v)
}
