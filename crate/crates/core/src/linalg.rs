//! Dense complex Hermitian linear algebra.
//!
//! Everything the optimization layers need from a matrix library: Hermitian
//! eigendecomposition, PSD square-root factors, the generalized Rayleigh
//! quotient maximizer and a numeric rank estimate. Dense eigen and Cholesky
//! kernels come from `nalgebra`; this module adds validation, ordering and
//! the factorizations built on top of them.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Numeric tolerances shared by the kernel routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSettings {
    /// Max |m - m^H| (relative to the largest entry) accepted as Hermitian.
    pub hermitian_tol: f64,
    /// Eigenvalues below `-psd_tol * max(1, λ_max)` are treated as a PSD violation.
    pub psd_tol: f64,
    /// Below `singular_tol * max(1, λ_max)` the smallest eigenvalue counts as zero
    /// and Cholesky switches to the eigenvalue square-root factor.
    pub singular_tol: f64,
    /// Default relative threshold for [`numeric_rank`].
    pub rank_rel_tol: f64,
}

impl Default for NumericSettings {
    fn default() -> Self {
        Self {
            hermitian_tol: 1e-10,
            psd_tol: 1e-6,
            singular_tol: 1e-10,
            rank_rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// A square complex matrix that equals its conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermitian(CMat);

impl Hermitian {
    /// Validates `m` against the default Hermitian tolerance and stores its
    /// exactly-symmetrized version.
    pub fn new(m: CMat) -> Result<Self, LinalgError> {
        Self::with_tol(m, NumericSettings::default().hermitian_tol)
    }

    pub fn with_tol(m: CMat, tol: f64) -> Result<Self, LinalgError> {
        if !m.is_square() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let asym = asymmetry(&m);
        let scale = max_abs(&m).max(1.0);
        if asym > tol * scale {
            return Err(LinalgError::NotHermitian { asymmetry: asym });
        }
        Ok(Self::symmetrized(m))
    }

    /// `(m + m^H) / 2` without validation.
    pub fn symmetrized(m: CMat) -> Self {
        let h = (&m + m.adjoint()).scale(0.5);
        Hermitian(h)
    }

    pub fn zeros(n: usize) -> Self {
        Hermitian(CMat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Hermitian(CMat::identity(n, n))
    }

    /// `v v^H`.
    pub fn outer(v: &CVec) -> Self {
        Hermitian(v * v.adjoint())
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let v = DVector::from_iterator(d.len(), d.iter().map(|&x| C64::new(x, 0.0)));
        Hermitian(CMat::from_diagonal(&v))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    /// `Re(v^H M v)`.
    pub fn quad(&self, v: &CVec) -> f64 {
        quad_form(&self.0, v)
    }

    pub fn scale(&self, s: f64) -> Self {
        Hermitian(self.0.scale(s))
    }

    pub fn add(&self, other: &Hermitian) -> Self {
        Hermitian(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Hermitian) -> Self {
        Hermitian(&self.0 - &other.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eig(self).values[0]
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub vectors: CMat,
}

fn asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

/// `Re(v^H M v)`.
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// Real inner product `Re Tr(A^H B)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.dotc(b).re
}

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn hermitian_eig(m: &Hermitian) -> Eigen {
    let n = m.dim();
    if n == 0 {
        return Eigen {
            values: DVector::zeros(0),
            vectors: CMat::zeros(0, 0),
        };
    }
    let eig = m.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Eigen { values, vectors }
}

/// Validating wrapper for a raw matrix.
pub fn hermitian_eig_checked(m: &CMat) -> Result<Eigen, LinalgError> {
    let h = Hermitian::new(m.clone())?;
    Ok(hermitian_eig(&h))
}

/// Returns `L` with `L L^H = m`.
///
/// Positive definite input goes through a standard lower-triangular Cholesky.
/// When the smallest eigenvalue is numerically zero the factor is
/// `V diag(sqrt(max(λ, 0)))` with columns ordered by decreasing eigenvalue, so
/// a rank-`r` input yields `r` leading nonzero columns.
pub fn cholesky_psd(m: &Hermitian) -> Result<CMat, LinalgError> {
    cholesky_psd_with(m, &NumericSettings::default())
}

pub fn cholesky_psd_with(m: &Hermitian, settings: &NumericSettings) -> Result<CMat, LinalgError> {
    let n = m.dim();
    let eig = hermitian_eig(m);
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let lmax = eig.values[n - 1].max(0.0);
    let scale = lmax.max(1.0);
    let lmin = eig.values[0];
    if lmin < -settings.psd_tol * scale {
        return Err(LinalgError::NotPsd { min_eig: lmin });
    }
    if lmin > settings.singular_tol * scale {
        if let Some(ch) = m.0.clone().cholesky() {
            return Ok(ch.l());
        }
    }
    let mut l = CMat::zeros(n, n);
    for (dst, src) in (0..n).rev().enumerate() {
        let s = eig.values[src].max(0.0).sqrt();
        l.set_column(dst, &eig.vectors.column(src).scale(s));
    }
    Ok(l)
}

/// Maximizer of `u^H a u / u^H b u`, normalized to unit norm, together with
/// the attained ratio (the largest generalized eigenvalue).
///
/// `b` is whitened by its Cholesky factor, reducing the problem to a standard
/// Hermitian eigenproblem of `L^{-1} a L^{-H}`.
pub fn generalized_max_eigvec(a: &Hermitian, b: &Hermitian) -> Result<(CVec, f64), LinalgError> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: b.dim(),
            got: a.dim(),
        });
    }
    let chol = b.0.clone().cholesky().ok_or(LinalgError::Singular)?;
    let l = chol.l();
    let n = a.dim();
    // L^{-1} a L^{-H}
    let linv_a = l
        .solve_lower_triangular(&a.0)
        .ok_or(LinalgError::Singular)?;
    let c = l
        .solve_lower_triangular(&linv_a.adjoint())
        .ok_or(LinalgError::Singular)?;
    let c = Hermitian::symmetrized(c.adjoint());
    let eig = hermitian_eig(&c);
    let top = eig.vectors.column(n - 1).into_owned();
    let u = l
        .adjoint()
        .solve_upper_triangular(&top)
        .ok_or(LinalgError::Singular)?;
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(LinalgError::Singular);
    }
    let u = u.unscale(norm);
    let ratio = a.quad(&u) / b.quad(&u);
    Ok((u, ratio))
}

/// Number of eigenvalues at or above `rel_tol * λ_max`.
pub fn numeric_rank(m: &Hermitian, rel_tol: f64) -> Result<usize, LinalgError> {
    let eig = hermitian_eig(m);
    let n = m.dim();
    if n == 0 {
        return Ok(0);
    }
    let lmax = eig.values[n - 1];
    let settings = NumericSettings::default();
    if eig.values[0] < -settings.psd_tol * lmax.max(1.0) {
        return Err(LinalgError::NotPsd {
            min_eig: eig.values[0],
        });
    }
    if lmax <= 0.0 {
        return Ok(0);
    }
    Ok(eig.values.iter().filter(|&&l| l >= rel_tol * lmax).count())
}

/// Orthonormal basis (as columns) of the orthogonal complement of the span of
/// `vectors`. Directions whose Gram eigenvalue falls below `1e-10` of the
/// largest are treated as outside the span.
pub fn null_space_basis(dim: usize, vectors: &[CVec]) -> CMat {
    if vectors.is_empty() {
        return CMat::identity(dim, dim);
    }
    let mut gram = CMat::zeros(dim, dim);
    for v in vectors {
        gram += v * v.adjoint();
    }
    let eig = hermitian_eig(&Hermitian::symmetrized(gram));
    let lmax = eig.values[dim - 1].max(0.0);
    let cols: Vec<usize> = (0..dim)
        .filter(|&i| eig.values[i] <= 1e-10 * lmax.max(f64::MIN_POSITIVE))
        .collect();
    let mut basis = CMat::zeros(dim, cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        basis.set_column(dst, &eig.vectors.column(src));
    }
    basis
}

/// Hermitian square root `V diag(sqrt(max(λ,0))) V^H`.
pub fn psd_sqrt(m: &Hermitian) -> CMat {
    let eig = hermitian_eig(m);
    let d = DVector::from_iterator(
        m.dim(),
        eig.values.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
    );
    &eig.vectors * CMat::from_diagonal(&d) * eig.vectors.adjoint()
}

/// Plain serializable form of a complex matrix (row-major real and imaginary parts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMat> for MatrixData {
    fn from(m: &CMat) -> Self {
        let (rows, cols) = m.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { rows, cols, re, im }
    }
}

impl MatrixData {
    pub fn to_matrix(&self) -> Result<CMat, LinalgError> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: self.re.len().min(self.im.len()),
            });
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| {
            C64::new(self.re[i * self.cols + j], self.im[i * self.cols + j])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> Hermitian {
        let g = random_matrix(rng, n, n);
        Hermitian::symmetrized(&g + g.adjoint())
    }

    fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> Hermitian {
        let g = random_matrix(rng, n, rank);
        Hermitian::symmetrized(&g * g.adjoint())
    }

    fn frob(m: &CMat) -> f64 {
        m.norm()
    }

    #[test]
    fn identity_eigenvalues() {
        let e = hermitian_eig(&Hermitian::identity(3));
        for v in e.values.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_eigenpairs() {
        let e = hermitian_eig(&Hermitian::from_real_diagonal(&[5.0, 2.0]));
        assert!((e.values[0] - 2.0).abs() < 1e-14);
        assert!((e.values[1] - 5.0).abs() < 1e-14);
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-12);
        assert!((e.vectors[(0, 1)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_and_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 4, 9, 16] {
            let m = random_hermitian(&mut rng, n);
            let e = hermitian_eig(&m);
            let d = CMat::from_diagonal(&e.values.map(|x| c64(x, 0.0)));
            let rec = &e.vectors * d * e.vectors.adjoint();
            assert!(frob(&(rec - m.matrix())) / frob(m.matrix()) < 1e-8);
            let gram = e.vectors.adjoint() * &e.vectors;
            assert!(frob(&(gram - CMat::identity(n, n))) < 1e-8);
            for w in e.values.as_slice().windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMat::identity(2, 2);
        m[(0, 1)] = c64(1.0, 0.0);
        assert!(matches!(Hermitian::new(m), Err(LinalgError::NotHermitian { .. })));
        let m = CMat::from_diagonal(&DVector::from_vec(vec![c64(1.0, 1e-3), c64(1.0, 0.0)]));
        assert!(Hermitian::new(m).is_err());
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_psd(&Hermitian::identity(2)).unwrap();
        assert!(frob(&(l - CMat::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn cholesky_rank_one() {
        let v = CVec::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]);
        let l = cholesky_psd(&Hermitian::outer(&v)).unwrap();
        assert!((l[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!(l[(1, 0)].norm() < 1e-14);
        assert!(l.column(1).norm() < 1e-14);
    }

    #[test]
    fn cholesky_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 4, 8, 16] {
            for rank in [1, n / 2, n] {
                let m = random_psd(&mut rng, n, rank.max(1));
                let l = cholesky_psd(&m).unwrap();
                let err = frob(&(&l * l.adjoint() - m.matrix()));
                assert!(err <= 1e-8 * frob(m.matrix()).max(1.0), "n={n} rank={rank} err={err}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Hermitian::from_real_diagonal(&[1.0, -1e-3]);
        assert!(matches!(cholesky_psd(&m), Err(LinalgError::NotPsd { .. })));
        // tiny negative round-off is clipped
        let m = Hermitian::from_real_diagonal(&[1.0, -1e-12]);
        assert!(cholesky_psd(&m).is_ok());
    }

    #[test]
    fn generalized_diag_identity() {
        let (u, r) =
            generalized_max_eigvec(&Hermitian::from_real_diagonal(&[3.0, 1.0]), &Hermitian::identity(2))
                .unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        assert!((u[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generalized_rank_one_numerator() {
        let v = CVec::from_vec(vec![c64(1.0, 1.0), c64(-0.5, 2.0), c64(0.3, 0.0)]);
        let (u, r) = generalized_max_eigvec(&Hermitian::outer(&v), &Hermitian::identity(3)).unwrap();
        let align = (v.dotc(&u)).norm() / v.norm();
        assert!((align - 1.0).abs() < 1e-10);
        assert!((r - v.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn generalized_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_psd(&mut rng, 4, 4);
        let b = {
            let p = random_psd(&mut rng, 4, 4);
            p.add(&Hermitian::identity(4).scale(0.5))
        };
        let (u, r) = generalized_max_eigvec(&a, &b).unwrap();
        assert!((u.norm() - 1.0).abs() < 1e-12);
        assert!((a.quad(&u) / b.quad(&u) - r).abs() <= 1e-8 * r);
        let mut best = 0.0_f64;
        for _ in 0..100_000 {
            let x = CVec::from_fn(4, |_, _| {
                c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            best = best.max(a.quad(&x) / b.quad(&x));
        }
        assert!(best <= r * (1.0 + 1e-12));
        assert!((r - best) / r < 1e-2, "r={r} best={best}");
    }

    #[test]
    fn generalized_requires_pd_denominator() {
        let b = Hermitian::from_real_diagonal(&[1.0, 0.0]);
        assert_eq!(
            generalized_max_eigvec(&Hermitian::identity(2), &b).unwrap_err(),
            LinalgError::Singular
        );
    }

    #[test]
    fn rank_examples() {
        let v = CVec::from_vec(vec![c64(1.0, 0.0), c64(0.0, 2.0), c64(1.0, -1.0), c64(0.5, 0.5)]);
        let vv = Hermitian::outer(&v);
        assert_eq!(numeric_rank(&vv, 1e-6).unwrap(), 1);
        assert_eq!(numeric_rank(&Hermitian::identity(4), 1e-6).unwrap(), 4);
        let noisy = vv.add(&Hermitian::identity(4).scale(1e-12));
        assert_eq!(numeric_rank(&noisy, 1e-6).unwrap(), 1);
    }

    #[test]
    fn null_space_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs: Vec<CVec> = (0..3)
            .map(|_| CVec::from_fn(6, |_, _| c64(rng.random::<f64>(), rng.random::<f64>())))
            .collect();
        let b = null_space_basis(6, &vs);
        assert_eq!(b.ncols(), 3);
        for v in &vs {
            assert!((b.adjoint() * v).norm() < 1e-10);
        }
        assert!(frob(&(b.adjoint() * &b - CMat::identity(3, 3))) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn gram_factor_roundtrip(seed in any::<u64>(), n in 1usize..=16, rank_frac in 0.0f64..1.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rank = ((n as f64 * rank_frac).ceil() as usize).clamp(1, n);
                let m = random_psd(&mut rng, n, rank);
                let l = cholesky_psd(&m).unwrap();
                let err = frob(&(&l * l.adjoint() - m.matrix()));
                prop_assert!(err <= 1e-8 * frob(m.matrix()).max(1.0));
            }

            #[test]
            fn rayleigh_ratio_phase_invariant(seed in any::<u64>(), phase in 0.0f64..std::f64::consts::TAU) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_psd(&mut rng, 5, 3);
                let b = random_psd(&mut rng, 5, 5).add(&Hermitian::identity(5));
                let (u, r) = generalized_max_eigvec(&a, &b).unwrap();
                let rot = u.map(|z| z * C64::from_polar(1.0, phase));
                let r2 = a.quad(&rot) / b.quad(&rot);
                prop_assert!((r - r2).abs() <= 1e-10 * r.max(1.0));
            }
        }
    }
}
