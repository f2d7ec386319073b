//! Linear symplectic algebra on the standard phase space `(R^2n, dp ∧ dx)`.
//!
//! Phase-space vectors are stacked as `z = (x, p)`. Lagrangian planes are
//! carried by frames `[X; P]` and charted by the Souriau map
//! `ℓ ↦ w = u uᵀ`, `u = P - iX`, which sends planes to symmetric unitary
//! matrices. In one degree of freedom the line `ℓ(θ)` spanned by
//! `(-sin θ, cos θ)` is sent to `e^{2iθ}`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use std::f64::consts::{PI, TAU};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Default eigenvalue tolerance for transversality, intersection dimension
/// and the signature zero cutoff.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: p.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::InvalidSpec("phase point needs n >= 1".into()));
        }
        if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite phase point".into()));
        }
        Ok(Self { x, p })
    }

    pub fn from_slices(x: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(p))
    }

    /// Splits a stacked `(x, p)` vector of length `2n`.
    pub fn from_stacked(z: &DVector<f64>) -> Result<Self> {
        if !z.len().is_multiple_of(2) {
            return Err(Error::OddDimension(z.len()));
        }
        let n = z.len() / 2;
        Self::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.x);
        z.rows_mut(n, n).copy_from(&self.p);
        z
    }
}

/// `Ω(z, z') = Σ_j (p_j x'_j - p'_j x_j)`.
pub fn symplectic_form(z: &PhasePoint, zp: &PhasePoint) -> Result<f64> {
    if z.dim() != zp.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.dim(),
            found: zp.dim(),
        });
    }
    Ok(z.p.dot(&zp.x) - zp.p.dot(&z.x))
}

/// The matrix `J = [[0, I], [-I, 0]]` of Hamilton's equations, `ż = J ∇H`.
/// In this convention `Ω(z, z') = z'ᵀ J z`.
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = 1.0;
        j[(n + k, k)] = -1.0;
    }
    j
}

/// Gram matrix of `Ω` in stacked coordinates: `Ω(z, z') = zᵀ G z'`.
fn omega_matrix(n: usize) -> DMatrix<f64> {
    canonical_j(n).transpose()
}

/// True iff `‖SᵀJS - J‖_F ≤ tol`.
pub fn is_symplectic_matrix(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(symplectic_defect(s)? <= tol)
}

/// `‖SᵀJS - J‖_F`.
pub fn symplectic_defect(s: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() != s.ncols() {
        return Err(Error::InvalidSpec(format!(
            "matrix is {}x{}, not square",
            s.nrows(),
            s.ncols()
        )));
    }
    if !s.nrows().is_multiple_of(2) {
        return Err(Error::OddDimension(s.nrows()));
    }
    let j = canonical_j(s.nrows() / 2);
    Ok((s.transpose() * &j * s - j).norm())
}

/// A `2n×2n` matrix that has been checked to be symplectic.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix(DMatrix<f64>);

impl SymplecticMatrix {
    pub fn new(s: DMatrix<f64>, tol: f64) -> Result<Self> {
        let defect = symplectic_defect(&s)?;
        if defect > tol {
            return Err(Error::InvalidSpec(format!(
                "matrix is not symplectic (defect {defect:e})"
            )));
        }
        Ok(Self(s))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(2 * n, 2 * n))
    }

    /// `exp(J A)` for symmetric `A` with entries uniform in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Self {
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..2 * n {
            for k in i..2 * n {
                let v = rng.random_range(-scale..=scale);
                a[(i, k)] = v;
                a[(k, i)] = v;
            }
        }
        Self::exp_hamiltonian(&a, 1.0)
    }

    /// `exp(τ J A)` for symmetric `A`.
    pub fn exp_hamiltonian(a: &DMatrix<f64>, tau: f64) -> Self {
        let n = a.nrows() / 2;
        Self((canonical_j(n) * a * tau).exp())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, z: &PhasePoint) -> Result<PhasePoint> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.dim(),
            });
        }
        PhasePoint::from_stacked(&(&self.0 * z.stacked()))
    }

    pub fn apply_frame(&self, f: &LagrangianFrame) -> Result<LagrangianFrame> {
        apply_linear(&self.0, f)
    }

    pub fn compose(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        SymplecticMatrix(&self.0 * &other.0)
    }
}

/// Image of a frame under an arbitrary `2n×2n` matrix (no symplecticity check).
pub fn apply_linear(s: &DMatrix<f64>, f: &LagrangianFrame) -> Result<LagrangianFrame> {
    let n = f.dim();
    if s.nrows() != 2 * n || s.ncols() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            found: s.nrows(),
        });
    }
    let img = s * f.stacked();
    LagrangianFrame::new(img.rows(0, n).into_owned(), img.rows(n, n).into_owned())
}

/// Columns of `[X; P]` span a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianFrame {
    pub x: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl LagrangianFrame {
    pub fn new(x: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() != n || p.nrows() != n || p.ncols() != n {
            return Err(Error::InvalidFrame(format!(
                "X is {}x{}, P is {}x{}; both must be n×n",
                x.nrows(),
                x.ncols(),
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(Self { x, p })
    }

    /// The vertical plane `R^n_p` (`X = 0`, `P = I`).
    pub fn vertical(n: usize) -> Self {
        Self {
            x: DMatrix::zeros(n, n),
            p: DMatrix::identity(n, n),
        }
    }

    /// The horizontal plane `R^n_x`.
    pub fn horizontal(n: usize) -> Self {
        Self {
            x: DMatrix::identity(n, n),
            p: DMatrix::zeros(n, n),
        }
    }

    /// Product `ℓ(θ_1) × … × ℓ(θ_n)` of lines `ℓ(θ) = span(-sin θ, cos θ)`.
    pub fn from_angles(thetas: &[f64]) -> Self {
        let x = DMatrix::from_diagonal(&DVector::from_iterator(
            thetas.len(),
            thetas.iter().map(|t| -t.sin()),
        ));
        let p = DMatrix::from_diagonal(&DVector::from_iterator(
            thetas.len(),
            thetas.iter().map(|t| t.cos()),
        ));
        Self { x, p }
    }

    /// The plane `u(R^n_p)` for a unitary `u`: `P = Re u`, `X = -Im u`.
    pub fn from_unitary(u: &DMatrix<C64>) -> Self {
        Self {
            x: u.map(|c| -c.im),
            p: u.map(|c| c.re),
        }
    }

    /// Graph `{(x, A x)}` of a linear map.
    pub fn graph(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(DMatrix::identity(n, n), a)
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, n);
        m.rows_mut(0, n).copy_from(&self.x);
        m.rows_mut(n, n).copy_from(&self.p);
        m
    }

    fn from_stacked(m: &DMatrix<f64>) -> Self {
        let n = m.ncols();
        Self {
            x: m.rows(0, n).into_owned(),
            p: m.rows(n, n).into_owned(),
        }
    }

    /// `‖XᵀP - PᵀX‖_F`.
    pub fn isotropy_defect(&self) -> f64 {
        let xtp = self.x.transpose() * &self.p;
        (&xtp - xtp.transpose()).norm()
    }

    pub fn smallest_singular_value(&self) -> f64 {
        self.stacked()
            .singular_values()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_lagrangian(&self, tol: f64) -> bool {
        self.smallest_singular_value() > tol && self.isotropy_defect() <= tol
    }

    /// Same span, orthonormal columns.
    pub fn orthonormalize(&self) -> Result<Self> {
        let stacked = self.stacked();
        let scale = stacked.norm().max(f64::MIN_POSITIVE);
        let smin = self.smallest_singular_value();
        if smin <= 1e-12 * scale {
            return Err(Error::RankDeficient(smin));
        }
        let q = stacked.qr().q();
        Ok(Self::from_stacked(&q))
    }

    /// Image under a symplectic matrix.
    pub fn transform(&self, s: &SymplecticMatrix) -> Result<Self> {
        s.apply_frame(self)
    }

    /// Vector of phase space from frame coefficients.
    pub fn point(&self, coeffs: &DVector<f64>) -> PhasePoint {
        PhasePoint {
            x: &self.x * coeffs,
            p: &self.p * coeffs,
        }
    }
}

/// Lagrangian-plane chart value: symmetric unitary `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SouriauPoint {
    pub w: DMatrix<C64>,
}

impl SouriauPoint {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn det(&self) -> C64 {
        self.w.determinant()
    }

    /// `max(‖w - wᵀ‖, ‖w w* - I‖)`.
    pub fn defect(&self) -> f64 {
        let n = self.dim();
        let sym = (&self.w - self.w.transpose()).norm();
        let uni = (&self.w * self.w.adjoint() - DMatrix::<C64>::identity(n, n)).norm();
        sym.max(uni)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.defect() <= tol
    }

    /// An orthonormal frame of the plane, from the symmetric square root
    /// `u = w^{1/2}` (so `u uᵀ = w`).
    pub fn frame(&self) -> LagrangianFrame {
        let n = self.dim();
        let (q, t) = self.w.clone().schur().unpack();
        let args: Vec<f64> = (0..n).map(|k| t[(k, k)].arg()).collect();
        // cut the circle away from the spectrum so clustered eigenvalues
        // get the same branch of the square root
        let cut = largest_gap_midpoint(&args);
        let root = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            args.iter()
                .map(|&a| C64::from_polar(1.0, 0.5 * (cut + (a - cut).rem_euclid(TAU)))),
        ));
        let u = &q * root * q.adjoint();
        let u = (&u + u.transpose()) * C64::new(0.5, 0.0);
        LagrangianFrame::from_unitary(&u)
    }

    /// `w (w')^{-1} = w w'*` for unitary `w'`.
    pub fn relative(&self, other: &SouriauPoint) -> DMatrix<C64> {
        &self.w * other.w.adjoint()
    }
}

/// `w(ℓ) = u uᵀ` with `u = P - iX` taken from an orthonormalized frame.
pub fn souriau_w(frame: &LagrangianFrame) -> Result<SouriauPoint> {
    if frame.isotropy_defect() > 1e-8 * (1.0 + frame.stacked().norm_squared()) {
        return Err(Error::InvalidFrame(format!(
            "isotropy defect {:e}",
            frame.isotropy_defect()
        )));
    }
    let f = frame.orthonormalize()?;
    let u = complex_u(&f);
    Ok(SouriauPoint {
        w: &u * u.transpose(),
    })
}

/// `u = P - iX` of an (already orthonormal) frame.
pub fn complex_u(frame: &LagrangianFrame) -> DMatrix<C64> {
    frame
        .p
        .zip_map(&frame.x, |p, x| C64::new(p, -x))
}

/// Distances `|λ_j - 1|` for the eigenvalues of `w w'^{-1}`, ascending.
/// Uses singular values of `w w'^{-1} - I`, which equal those distances
/// because the matrix is normal.
pub fn distances_to_one(a: &SouriauPoint, b: &SouriauPoint) -> Vec<f64> {
    let n = a.dim();
    let m = a.relative(b) - DMatrix::<C64>::identity(n, n);
    let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sv
}

/// No eigenvalue of `w w'^{-1}` within `tol` of 1.
pub fn transversal(a: &SouriauPoint, b: &SouriauPoint, tol: f64) -> bool {
    intersection_dim(a, b, tol) == 0
}

/// `dim(ℓ ∩ ℓ')` as the multiplicity of the eigenvalue 1 of `w w'^{-1}`.
pub fn intersection_dim(a: &SouriauPoint, b: &SouriauPoint, tol: f64) -> usize {
    distances_to_one(a, b).iter().filter(|&&d| d <= tol).count()
}

/// Angle on the unit circle farthest from all of `angles`.
pub fn largest_gap_midpoint(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return PI;
    }
    let mut a: Vec<f64> = angles.iter().map(|t| t.rem_euclid(TAU)).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut best = (TAU - a[a.len() - 1] + a[0], a[a.len() - 1]);
    for pair in a.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > best.0 {
            best = (gap, pair[0]);
        }
    }
    (best.1 + 0.5 * best.0).rem_euclid(TAU)
}

/// Eigenvalues of a general complex square matrix from its Schur form.
pub fn complex_eigenvalues(m: &DMatrix<C64>) -> Vec<C64> {
    let (_, t) = m.clone().schur().unpack();
    (0..t.nrows()).map(|k| t[(k, k)]).collect()
}

/// `σ(ℓ, ℓ', ℓ'')`: signature of `Q = Ω(z,z') + Ω(z',z'') + Ω(z'',z)` on
/// `ℓ ⊕ ℓ' ⊕ ℓ''`, eigenvalues with `|λ| ≤ tol` counted as zero.
pub fn signature(
    a: &LagrangianFrame,
    b: &LagrangianFrame,
    c: &LagrangianFrame,
    tol: f64,
) -> Result<i64> {
    let n = a.dim();
    for f in [b, c] {
        if f.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.dim(),
            });
        }
    }
    let frames = [a.orthonormalize()?, b.orthonormalize()?, c.orthonormalize()?];
    let stacked: Vec<DMatrix<f64>> = frames.iter().map(|f| f.stacked()).collect();
    let g = omega_matrix(n);
    let form = |i: usize, k: usize| stacked[i].transpose() * &g * &stacked[k];

    let mut q = DMatrix::zeros(3 * n, 3 * n);
    for (i, k) in [(0usize, 1usize), (1, 2), (2, 0)] {
        let half = form(i, k) * 0.5;
        q.view_mut((i * n, k * n), (n, n)).add_assign(&half);
        q.view_mut((k * n, i * n), (n, n))
            .add_assign(&half.transpose());
    }
    let eig = SymmetricEigen::new(q);
    let pos = eig.eigenvalues.iter().filter(|&&l| l > tol).count() as i64;
    let neg = eig.eigenvalues.iter().filter(|&&l| l < -tol).count() as i64;
    Ok(pos - neg)
}

trait AddAssignView {
    fn add_assign(&mut self, other: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &DMatrix<f64>) {
        for i in 0..other.nrows() {
            for k in 0..other.ncols() {
                self[(i, k)] += other[(i, k)];
            }
        }
    }
}

/// Haar-ish random unitary from the QR factorisation of a complex Gaussian
/// matrix, with the phases of `R`'s diagonal removed.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::<C64>::from_fn(n, n, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let d = r[(k, k)];
            if d.norm() > 0.0 {
                d / d.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        }),
    ));
    q * phases
}

/// Random Lagrangian plane `u(R^n_p)`, `u` random unitary.
pub fn random_lagrangian_frame<R: Rng + ?Sized>(n: usize, rng: &mut R) -> LagrangianFrame {
    LagrangianFrame::from_unitary(&random_unitary(n, rng))
}
