//! Dense complex vectors and square matrices.
//!
//! Everything downstream works in the eigenbasis of the bare Hamiltonian, so
//! interaction-picture conjugation reduces to the elementwise phase rotation
//! in [`phase_rotate`].

use std::ops::{Deref, DerefMut, Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Largest entrywise |H - H^dagger| accepted by [`hermitian_eig`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix data of length {len} is not square")]
    NotSquare { len: usize },
    #[error("matrix is not Hermitian (max |H - H^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("Hermitian eigensolver did not converge")]
    ConvergenceFailure,
}

/// A ket of complex amplitudes.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ComplexVector(Vec<C64>);

impl ComplexVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![ZERO; dim])
    }

    /// Unit vector `e_k` of length `dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[k] = ONE;
        v
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.0)
    }

    pub fn scaled(&self, z: C64) -> Self {
        Self(self.0.iter().map(|&x| x * z).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl From<Vec<C64>> for ComplexVector {
    fn from(v: Vec<C64>) -> Self {
        Self(v)
    }
}

impl Deref for ComplexVector {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl DerefMut for ComplexVector {
    fn deref_mut(&mut self) -> &mut [C64] {
        &mut self.0
    }
}

/// Square complex matrix, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &z) in diag.iter().enumerate() {
            m[(k, k)] = z;
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &x) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(x, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(LinalgError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            for (j, &z) in row.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for j in 0..dim {
            for i in 0..dim {
                m.data[i + j * dim] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Column-major backing storage.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> &[C64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scaled(&self, z: C64) -> Self {
        self.map(|x| x * z)
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += z * other`
    pub fn add_scaled(&mut self, z: C64, other: &Self) -> Result<(), LinalgError> {
        check_dim(self.dim, other.dim)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += z * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        check_dim(self.dim, other.dim)?;
        let d = self.dim;
        let mut out = Self::zeros(d);
        if d == 0 {
            return Ok(out);
        }
        // SAFETY: Complex<f64> is repr(C) with layout [f64; 2]; all three
        // buffers are d x d column-major.
        unsafe {
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                d,
                d,
                d,
                [1.0, 0.0],
                self.data.as_ptr() as *const [f64; 2],
                1,
                d as isize,
                other.data.as_ptr() as *const [f64; 2],
                1,
                d as isize,
                [0.0, 0.0],
                out.data.as_mut_ptr() as *mut [f64; 2],
                1,
                d as isize,
            );
        }
        Ok(out)
    }

    /// `y = A x`, overwriting `y`. This is the inner kernel of every
    /// trajectory step.
    #[inline]
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        y.fill(ZERO);
        for (col, &xj) in self.data.chunks_exact(self.dim).zip(x) {
            for (yi, &a) in y.iter_mut().zip(col) {
                yi.re += a.re * xj.re - a.im * xj.im;
                yi.im += a.re * xj.im + a.im * xj.re;
            }
        }
    }

    /// `y = A^dagger x`.
    pub fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        for (yi, col) in y.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *yi = inner_unchecked(col, x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Max entrywise |A - A^dagger|.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for j in 0..d {
            for i in 0..=j {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.data)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i + j * self.dim]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i + j * self.dim]
    }
}

fn check_dim(expected: usize, found: usize) -> Result<(), LinalgError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found })
    }
}

/// `<x|y>`, conjugating the first argument.
pub fn inner(x: &[C64], y: &[C64]) -> Result<C64, LinalgError> {
    check_dim(x.len(), y.len())?;
    Ok(inner_unchecked(x, y))
}

#[inline]
pub(crate) fn inner_unchecked(x: &[C64], y: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        re += a.re * b.re + a.im * b.im;
        im += a.re * b.im - a.im * b.re;
    }
    C64::new(re, im)
}

#[inline]
pub(crate) fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|z| z.re * z.re + z.im * z.im).sum()
}

/// `y += z x`
#[inline]
pub(crate) fn axpy(z: C64, x: &[C64], y: &mut [C64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += z * xi;
    }
}

pub fn matvec(a: &ComplexMatrix, x: &[C64]) -> Result<ComplexVector, LinalgError> {
    check_dim(a.dim(), x.len())?;
    let mut y = ComplexVector::zeros(a.dim());
    a.apply_into(x, &mut y);
    Ok(y)
}

pub fn adjoint(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.dim(), |i, j| a[(j, i)].conj())
}

pub fn trace(a: &ComplexMatrix) -> C64 {
    (0..a.dim()).map(|k| a[(k, k)]).sum()
}

pub fn frobenius_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: ComplexMatrix,
}

impl EigenSystem {
    /// Eigensystem of a matrix that is already diagonal in the working basis.
    pub fn diagonal(values: Vec<f64>) -> Self {
        let vectors = ComplexMatrix::identity(values.len());
        Self { values, vectors }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unitary matrix whose columns are the eigenvectors.
    pub fn vectors(&self) -> &ComplexMatrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(E) V^dagger`
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = self.dim();
        ComplexMatrix::from_fn(d, |i, j| {
            (0..d)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)].conj())
                .sum()
        })
    }

    /// Expresses a site-basis operator in the eigenbasis: `V^dagger A V`.
    pub fn to_eigenbasis(&self, a: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
        adjoint(&self.vectors).matmul(&a.matmul(&self.vectors)?)
    }

    /// Eigenbasis coordinates of a site-basis ket.
    pub fn ket_to_eigenbasis(&self, psi: &[C64]) -> Result<ComplexVector, LinalgError> {
        check_dim(self.dim(), psi.len())?;
        let mut out = ComplexVector::zeros(self.dim());
        self.vectors.apply_adjoint_into(psi, &mut out);
        Ok(out)
    }

    /// Site-basis ket from eigenbasis coordinates.
    pub fn ket_from_eigenbasis(&self, c: &[C64]) -> Result<ComplexVector, LinalgError> {
        matvec(&self.vectors, c)
    }
}

pub fn hermitian_eig(h: &ComplexMatrix) -> Result<EigenSystem, LinalgError> {
    let deviation = h.hermiticity_error();
    if deviation > HERMITIAN_TOLERANCE || !h.is_finite() {
        return Err(LinalgError::NotHermitian { deviation });
    }
    // Symmetrize away the sub-tolerance residue before handing off.
    let m = h.to_nalgebra();
    let sym = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(LinalgError::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let d = order.len();
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(d, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenSystem { values, vectors })
}

/// Phase factors `e^{i E_m t}`.
pub fn phases(energies: &[f64], t: f64) -> Vec<C64> {
    energies.iter().map(|&e| C64::from_polar(1.0, e * t)).collect()
}

/// Interaction-picture conjugation `e^{iHt} A e^{-iHt}` of an operator given
/// in the eigenbasis of `H`: `A(t)_{mn} = e^{i(E_m - E_n)t} A_{mn}`.
pub fn phase_rotate(a: &ComplexMatrix, energies: &[f64], t: f64) -> ComplexMatrix {
    let p = phases(energies, t);
    phase_rotate_with(a, &p)
}

pub(crate) fn phase_rotate_with(a: &ComplexMatrix, p: &[C64]) -> ComplexMatrix {
    let d = a.dim();
    let mut out = a.clone();
    for j in 0..d {
        let right = p[j].conj();
        for (i, z) in out.data[j * d..(j + 1) * d].iter_mut().enumerate() {
            *z *= p[i] * right;
        }
    }
    out
}

/// `[H, A]` for `H = diag(E)`: entries `(E_m - E_n) A_{mn}`.
pub fn commutator_with_diagonal(energies: &[f64], a: &ComplexMatrix) -> ComplexMatrix {
    let d = a.dim();
    let mut out = a.clone();
    for j in 0..d {
        for (i, z) in out.data[j * d..(j + 1) * d].iter_mut().enumerate() {
            *z *= energies[i] - energies[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = ComplexMatrix::from_fn(d, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        a.add(&adjoint(&a)).unwrap()
    }

    #[test]
    fn diagonal_eig_is_sorted_permutation() {
        let h = ComplexMatrix::from_real_diagonal(&[2.0, 1.0]);
        let eig = hermitian_eig(&h).unwrap();
        assert_eq!(eig.values(), &[1.0, 2.0]);
        let v = eig.vectors();
        assert_abs_diff_eq!(v[(1, 0)].norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[(0, 1)].norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[(0, 0)].norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let h = random_hermitian(8, 3);
        let eig = hermitian_eig(&h).unwrap();
        let err = frobenius_distance(&eig.reconstruct(), &h).unwrap() / h.frobenius_norm();
        assert!(err < 1e-10, "relative reconstruction error {err}");
        let v = eig.vectors();
        let vdv = adjoint(v).matmul(v).unwrap();
        assert!(frobenius_distance(&vdv, &ComplexMatrix::identity(8)).unwrap() < 1e-10);
        assert!(eig.values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut h = ComplexMatrix::identity(3);
        h[(0, 1)] = C64::new(1e-6, 0.0);
        assert!(matches!(
            hermitian_eig(&h),
            Err(LinalgError::NotHermitian { .. })
        ));
    }

    #[test]
    fn eigenvectors_satisfy_eigen_equation() {
        let h = random_hermitian(6, 11);
        let eig = hermitian_eig(&h).unwrap();
        for n in 0..6 {
            let psi = eig.vectors().column(n);
            let hpsi = matvec(&h, psi).unwrap();
            for (a, b) in hpsi.iter().zip(psi) {
                assert_abs_diff_eq!((a - b * eig.values()[n]).norm(), 0.0, epsilon = 1e-10);
            }
        }
        // In the eigenbasis the same identity reads diag(E) e_n = E_n e_n.
        let diag = ComplexMatrix::from_real_diagonal(eig.values());
        let e3 = ComplexVector::basis(6, 3);
        let out = matvec(&diag, &e3).unwrap();
        assert_eq!(out, e3.scaled(C64::new(eig.values()[3], 0.0)));
    }

    #[test]
    fn phase_rotate_identities() {
        let a = random_hermitian(5, 1);
        let e = [0.3, -1.0, 2.0, 0.7, 4.1];
        assert_eq!(phase_rotate(&a, &e, 0.0), a);
        let diag = ComplexMatrix::from_real_diagonal(&e);
        assert!(frobenius_distance(&phase_rotate(&diag, &e, 3.7), &diag).unwrap() < 1e-15);
    }

    #[test]
    fn phase_rotate_sigma_x() {
        // sigma_x in the sigma_z eigenbasis with E = (-1, 1), t = pi/2:
        // off-diagonals pick up e^{-+ i pi} = -1.
        let sx = ComplexMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap();
        let r = phase_rotate(&sx, &[-1.0, 1.0], std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!((r[(0, 1)] + ONE).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((r[(1, 0)] + ONE).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(r[(0, 0)], ZERO);
    }

    #[test]
    fn plumbing_examples() {
        let e1 = ComplexVector::basis(4, 0);
        assert_eq!(inner(&e1, &e1).unwrap(), ONE);
        assert_eq!(trace(&ComplexMatrix::identity(31)), C64::new(31.0, 0.0));
        assert!(matches!(
            inner(&e1, &ComplexVector::zeros(3)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
        let x = vec![C64::new(1.0, 2.0), C64::new(0.0, -1.0)];
        let y = vec![C64::new(3.0, 0.5), C64::new(2.0, 2.0)];
        // conjugates the first argument
        let expected = x[0].conj() * y[0] + x[1].conj() * y[1];
        assert_eq!(inner(&x, &y).unwrap(), expected);
        let a = ComplexMatrix::from_rows(&[
            vec![C64::new(1.0, 1.0), C64::new(2.0, 0.0)],
            vec![C64::new(0.0, -3.0), C64::new(1.0, 0.5)],
        ])
        .unwrap();
        let ax = matvec(&a, &x).unwrap();
        assert_eq!(ax[0], a[(0, 0)] * x[0] + a[(0, 1)] * x[1]);
        let mut adx = ComplexVector::zeros(2);
        a.apply_adjoint_into(&x, &mut adx);
        assert_eq!(adx, matvec(&adjoint(&a), &x).unwrap());
    }

    #[test]
    fn commutator_matches_products() {
        let a = random_hermitian(4, 9);
        let e = [0.1, 0.5, -2.0, 3.0];
        let h = ComplexMatrix::from_real_diagonal(&e);
        let direct = h.matmul(&a).unwrap().sub(&a.matmul(&h).unwrap()).unwrap();
        assert!(frobenius_distance(&direct, &commutator_with_diagonal(&e, &a)).unwrap() < 1e-13);
    }

    proptest! {
        #[test]
        fn phase_rotate_group_and_hermiticity(seed in 0u64..1000, t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
            let a = random_hermitian(4, seed);
            let e = [0.0, 0.49, 1.3, -2.2];
            let once = phase_rotate(&a, &e, t1 + t2);
            let twice = phase_rotate(&phase_rotate(&a, &e, t1), &e, t2);
            prop_assert!(frobenius_distance(&once, &twice).unwrap() < 1e-12);
            prop_assert!(once.hermiticity_error() < 1e-12);
        }

        #[test]
        fn inner_self_is_real_nonnegative(re in prop::collection::vec(-10.0f64..10.0, 6), im in prop::collection::vec(-10.0f64..10.0, 6)) {
            let x: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
            let z = inner(&x, &x).unwrap();
            prop_assert!(z.im == 0.0 || z.im.abs() < 1e-12 * z.re.abs());
            prop_assert!(z.re >= 0.0);
        }
    }
}
