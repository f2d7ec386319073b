//! Hamiltonian flows with variational (Jacobian) transport and the action
//! `∫ p dx - H dt`, plus generating-function and Hamilton–Jacobi diagnostics.
//!
//! Quadratic Hamiltonians are propagated exactly with matrix exponentials.
//! The separable quartic family uses a fourth-order triple-jump composition
//! of leapfrog, everything else the same composition of implicit midpoint.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::symplectic::{canonical_j, PhasePoint};

const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3;

/// Monotone reparameterization `g(H) = Σ_k c_k H^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reparam {
    pub coeffs: Vec<f64>,
}

impl Reparam {
    pub fn affine(a: f64, b: f64) -> Self {
        Self { coeffs: vec![b, a] }
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * h + c)
    }

    pub fn d1(&self, h: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * h + k as f64 * c)
    }

    pub fn d2(&self, h: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * h + (k * (k - 1)) as f64 * c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianSpec {
    /// `H(z) = ½ zᵀ M z` with `z = (x, p)`.
    Quadratic { m: Vec<Vec<f64>> },
    /// `H = Σ_j (ω_j / 2)(x_j² + p_j²)`; orbits are the circles
    /// `x_j² + p_j² = r_j²` with energy `ω_j r_j² / 2`.
    Harmonic { omegas: Vec<f64> },
    /// `H = Σ_j (p_j² + ω_j² x_j²)/2 + λ Σ_j x_j⁴`.
    Quartic { omegas: Vec<f64>, lambda: f64 },
    /// `H = Σ_j (p_j - A_j(x,t))² / (2 m_j) + U(x,t)`; the polynomials take
    /// `n + 1` variables `(x_1, …, x_n, t)`.
    Magnetic {
        masses: Vec<f64>,
        vector_potential: Vec<Polynomial>,
        scalar_potential: Polynomial,
    },
    /// `K = g ∘ H`.
    Reparameterized { inner: Box<HamiltonianSpec>, g: Reparam },
}

enum Integrator {
    Exact(DMatrix<f64>),
    Splitting,
    Midpoint,
}

impl HamiltonianSpec {
    pub fn harmonic(omegas: &[f64]) -> Self {
        Self::Harmonic {
            omegas: omegas.to_vec(),
        }
    }

    pub fn free_particle(n: usize) -> Self {
        let mut m = vec![vec![0.0; 2 * n]; 2 * n];
        for (k, row) in m.iter_mut().enumerate().skip(n) {
            row[k] = 1.0;
        }
        Self::Quadratic { m }
    }

    pub fn quadratic(m: &DMatrix<f64>) -> Self {
        Self::Quadratic {
            m: (0..m.nrows())
                .map(|i| m.row(i).iter().cloned().collect())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic { m } => m.len() / 2,
            Self::Harmonic { omegas } | Self::Quartic { omegas, .. } => omegas.len(),
            Self::Magnetic { masses, .. } => masses.len(),
            Self::Reparameterized { inner, .. } => inner.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { m } => {
                let k = m.len();
                if k == 0 || k % 2 != 0 {
                    return Err(Error::OddDimension(k));
                }
                if m.iter().any(|r| r.len() != k) {
                    return Err(Error::InvalidSpec("quadratic form must be square".into()));
                }
                for i in 0..k {
                    for j in 0..k {
                        if !m[i][j].is_finite() || (m[i][j] - m[j][i]).abs() > 1e-12 * (1.0 + m[i][j].abs()) {
                            return Err(Error::InvalidSpec("quadratic form must be symmetric".into()));
                        }
                    }
                }
            }
            Self::Harmonic { omegas } => {
                if omegas.is_empty() || omegas.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidSpec("frequencies must be positive".into()));
                }
            }
            Self::Quartic { omegas, lambda } => {
                if omegas.is_empty() || omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !lambda.is_finite() {
                    return Err(Error::InvalidSpec("quartic needs ω ≥ 0 and finite λ".into()));
                }
            }
            Self::Magnetic {
                masses,
                vector_potential,
                scalar_potential,
            } => {
                let n = masses.len();
                if n == 0 || masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                    return Err(Error::InvalidSpec("masses must be positive".into()));
                }
                if vector_potential.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: vector_potential.len(),
                    });
                }
                for p in vector_potential.iter().chain(std::iter::once(scalar_potential)) {
                    if p.nvars() != n + 1 {
                        return Err(Error::DimensionMismatch {
                            expected: n + 1,
                            found: p.nvars(),
                        });
                    }
                }
            }
            Self::Reparameterized { inner, .. } => inner.validate()?,
        }
        Ok(())
    }

    pub fn time_dependent(&self) -> bool {
        match self {
            Self::Magnetic {
                vector_potential,
                scalar_potential,
                masses,
            } => {
                let n = masses.len();
                vector_potential.iter().any(|a| a.depends_on(n)) || scalar_potential.depends_on(n)
            }
            Self::Reparameterized { inner, .. } => inner.time_dependent(),
            _ => false,
        }
    }

    /// The matrix `M` when `H = ½ zᵀ M z`.
    pub fn quadratic_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Quadratic { m } => {
                let k = m.len();
                Some(DMatrix::from_fn(k, k, |i, j| m[i][j]))
            }
            Self::Harmonic { omegas } => {
                let n = omegas.len();
                Some(DMatrix::from_diagonal(&DVector::from_fn(2 * n, |i, _| omegas[i % n])))
            }
            _ => None,
        }
    }

    fn integrator(&self) -> Integrator {
        if let Some(m) = self.quadratic_matrix() {
            return Integrator::Exact(m);
        }
        match self {
            Self::Quartic { .. } => Integrator::Splitting,
            _ => Integrator::Midpoint,
        }
    }

    pub fn energy(&self, z: &[f64], t: f64) -> f64 {
        let n = self.dim();
        let (x, p) = z.split_at(n);
        match self {
            Self::Quadratic { .. } | Self::Harmonic { .. } => {
                let m = self.quadratic_matrix().unwrap();
                let v = DVector::from_column_slice(z);
                0.5 * v.dot(&(&m * &v))
            }
            Self::Quartic { omegas, lambda } => x
                .iter()
                .zip(p)
                .zip(omegas)
                .map(|((x, p), w)| 0.5 * p * p + 0.5 * w * w * x * x + lambda * x.powi(4))
                .sum(),
            Self::Magnetic {
                masses,
                vector_potential,
                scalar_potential,
            } => {
                let xt = with_time(x, t);
                let kinetic: f64 = (0..n)
                    .map(|j| {
                        let v = p[j] - vector_potential[j].eval(&xt);
                        v * v / (2.0 * masses[j])
                    })
                    .sum();
                kinetic + scalar_potential.eval(&xt)
            }
            Self::Reparameterized { inner, g } => g.eval(inner.energy(z, t)),
        }
    }

    /// `∇H = (∂H/∂x, ∂H/∂p)` stacked.
    pub fn gradient(&self, z: &[f64], t: f64) -> DVector<f64> {
        let n = self.dim();
        let (x, p) = z.split_at(n);
        match self {
            Self::Quadratic { .. } | Self::Harmonic { .. } => {
                self.quadratic_matrix().unwrap() * DVector::from_column_slice(z)
            }
            Self::Quartic { omegas, lambda } => {
                let mut g = DVector::zeros(2 * n);
                for j in 0..n {
                    g[j] = omegas[j] * omegas[j] * x[j] + 4.0 * lambda * x[j].powi(3);
                    g[n + j] = p[j];
                }
                g
            }
            Self::Magnetic {
                masses,
                vector_potential,
                scalar_potential,
            } => {
                let xt = with_time(x, t);
                let mut g = DVector::zeros(2 * n);
                let du = scalar_potential.gradient(&xt);
                for k in 0..n {
                    g[k] = du[k];
                }
                for j in 0..n {
                    let v = (p[j] - vector_potential[j].eval(&xt)) / masses[j];
                    g[n + j] = v;
                    let da = vector_potential[j].gradient(&xt);
                    for k in 0..n {
                        g[k] -= v * da[k];
                    }
                }
                g
            }
            Self::Reparameterized { inner, g } => inner.gradient(z, t) * g.d1(inner.energy(z, t)),
        }
    }

    /// Hessian of `H` in `(x, p)`.
    pub fn hessian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let (x, p) = z.split_at(n);
        match self {
            Self::Quadratic { .. } | Self::Harmonic { .. } => self.quadratic_matrix().unwrap(),
            Self::Quartic { omegas, lambda } => {
                let mut h = DMatrix::zeros(2 * n, 2 * n);
                for j in 0..n {
                    h[(j, j)] = omegas[j] * omegas[j] + 12.0 * lambda * x[j] * x[j];
                    h[(n + j, n + j)] = 1.0;
                }
                h
            }
            Self::Magnetic {
                masses,
                vector_potential,
                scalar_potential,
            } => {
                let xt = with_time(x, t);
                let mut h = DMatrix::zeros(2 * n, 2 * n);
                let hu = scalar_potential.hessian(&xt);
                for k in 0..n {
                    for l in 0..n {
                        h[(k, l)] = hu[(k, l)];
                    }
                }
                for j in 0..n {
                    let mj = masses[j];
                    let v = (p[j] - vector_potential[j].eval(&xt)) / mj;
                    let da = vector_potential[j].gradient(&xt);
                    let ha = vector_potential[j].hessian(&xt);
                    h[(n + j, n + j)] = 1.0 / mj;
                    for k in 0..n {
                        h[(n + j, k)] = -da[k] / mj;
                        h[(k, n + j)] = -da[k] / mj;
                        for l in 0..n {
                            h[(k, l)] += da[k] * da[l] / mj - v * ha[(k, l)];
                        }
                    }
                }
                h
            }
            Self::Reparameterized { inner, g } => {
                let e = inner.energy(z, t);
                let gr = inner.gradient(z, t);
                inner.hessian(z, t) * g.d1(e) + &gr * gr.transpose() * g.d2(e)
            }
        }
    }
}

fn with_time(x: &[f64], t: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(t);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// `s_{t,t0}(z0)`, the derivative of the flow map at each sample.
    pub jacobians: Vec<DMatrix<f64>>,
    /// `∫ p dx - H dt` accumulated from the first sample.
    pub action: Vec<f64>,
}

impl Trajectory {
    pub fn last_point(&self) -> &PhasePoint {
        self.points.last().unwrap()
    }

    pub fn last_jacobian(&self) -> &DMatrix<f64> {
        self.jacobians.last().unwrap()
    }

    pub fn total_action(&self) -> f64 {
        *self.action.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_point(h: &HamiltonianSpec, z: &PhasePoint) -> Result<()> {
    if z.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: z.dim(),
        });
    }
    Ok(())
}

fn finite_or(time: f64, z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { time })
    }
}

/// Integrates Hamilton's equations from `t0` to `t1` (either direction) in
/// `steps` equal steps, recording every step.
pub fn integrate(h: &HamiltonianSpec, z0: &PhasePoint, t0: f64, t1: f64, steps: usize) -> Result<Trajectory> {
    h.validate()?;
    check_point(h, z0)?;
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(Error::InvalidSpec("non-finite time".into()));
    }
    let n = h.dim();
    if t0 == t1 {
        return Ok(Trajectory {
            times: vec![t0],
            points: vec![z0.clone()],
            jacobians: vec![DMatrix::identity(2 * n, 2 * n)],
            action: vec![0.0],
        });
    }
    if steps == 0 {
        return Err(Error::InvalidSpec("steps must be at least 1".into()));
    }
    match h.integrator() {
        Integrator::Exact(m) => integrate_exact(&m, z0, t0, t1, steps),
        Integrator::Splitting => integrate_stepper(h, z0, t0, t1, steps, leapfrog_step),
        Integrator::Midpoint => integrate_stepper(h, z0, t0, t1, steps, midpoint_step),
    }
}

// 8-point Gauss–Legendre on [-1, 1]
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn integrate_exact(m: &DMatrix<f64>, z0: &PhasePoint, t0: f64, t1: f64, steps: usize) -> Result<Trajectory> {
    let n = z0.dim();
    let a = canonical_j(n) * m;
    let h = (t1 - t0) / steps as f64;
    // Lagrangian p·∂H/∂p - H as a quadratic form in z
    let mut pp = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        pp[(n + k, n + k)] = 1.0;
    }
    let lag = (&pp * m + m * &pp) * 0.5 - m * 0.5;
    // sub-panels keep |h ρ(JM)| small so Gauss–Legendre is accurate
    let rho = a.norm().max(1e-300);
    let panels = ((h.abs() * rho / 0.5).ceil() as usize).max(1);
    let hp = h / panels as f64;
    let node_exps: Vec<DMatrix<f64>> = GL_X.iter().map(|x| (&a * (0.5 * hp * (1.0 + x))).exp()).collect();
    let panel_exp = (&a * hp).exp();

    let z0v = z0.stacked();
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut jacobians = Vec::with_capacity(steps + 1);
    let mut action = Vec::with_capacity(steps + 1);
    times.push(t0);
    points.push(z0.clone());
    jacobians.push(DMatrix::identity(2 * n, 2 * n));
    action.push(0.0);
    let mut acc = 0.0;
    for k in 1..=steps {
        let tk = t0 + h * k as f64;
        // state at the start of the step, from the exact exponential
        let mut zs = (&a * (h * (k - 1) as f64)).exp() * &z0v;
        for _ in 0..panels {
            for (e, w) in node_exps.iter().zip(GL_W.iter()) {
                let zn = e * &zs;
                acc += 0.5 * hp * w * zn.dot(&(&lag * &zn));
            }
            zs = &panel_exp * zs;
        }
        let e = (&a * (tk - t0)).exp();
        let z = &e * &z0v;
        finite_or(tk, z.as_slice())?;
        times.push(tk);
        points.push(PhasePoint::from_stacked(&z)?);
        jacobians.push(e);
        action.push(acc);
    }
    Ok(Trajectory {
        times,
        points,
        jacobians,
        action,
    })
}

/// One second-order step of size `tau` starting at time `t`: updates `z`,
/// multiplies `jac` on the left by the step derivative, returns the action.
type Step = fn(&HamiltonianSpec, &mut DVector<f64>, &mut DMatrix<f64>, f64, f64) -> Result<f64>;

fn integrate_stepper(
    h: &HamiltonianSpec,
    z0: &PhasePoint,
    t0: f64,
    t1: f64,
    steps: usize,
    step: Step,
) -> Result<Trajectory> {
    let n = h.dim();
    let dt = (t1 - t0) / steps as f64;
    let mut z = z0.stacked();
    let mut jac = DMatrix::identity(2 * n, 2 * n);
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut jacobians = Vec::with_capacity(steps + 1);
    let mut action = Vec::with_capacity(steps + 1);
    times.push(t0);
    points.push(z0.clone());
    jacobians.push(jac.clone());
    action.push(0.0);
    for k in 0..steps {
        let mut t = t0 + dt * k as f64;
        for w in [YOSHIDA_W1, YOSHIDA_W0, YOSHIDA_W1] {
            acc += step(h, &mut z, &mut jac, t, w * dt)?;
            t += w * dt;
        }
        let tk = t0 + dt * (k + 1) as f64;
        finite_or(tk, z.as_slice())?;
        times.push(tk);
        points.push(PhasePoint::from_stacked(&z)?);
        jacobians.push(jac.clone());
        action.push(acc);
    }
    Ok(Trajectory {
        times,
        points,
        jacobians,
        action,
    })
}

fn leapfrog_step(h: &HamiltonianSpec, z: &mut DVector<f64>, jac: &mut DMatrix<f64>, _t: f64, tau: f64) -> Result<f64> {
    let HamiltonianSpec::Quartic { omegas, lambda } = h else {
        return Err(Error::Unsupported("splitting needs a separable Hamiltonian".into()));
    };
    let n = omegas.len();
    let potential = |x: f64, w: f64| 0.5 * w * w * x * x + lambda * x.powi(4);
    let force = |x: f64, w: f64| -(w * w * x + 4.0 * lambda * x.powi(3));
    let stiffness = |x: f64, w: f64| w * w + 12.0 * lambda * x * x;
    let mut s = 0.0;
    let half = 0.5 * tau;
    let kick = |z: &mut DVector<f64>, jac: &mut DMatrix<f64>, s: &mut f64| {
        for j in 0..n {
            let x = z[j];
            *s -= half * potential(x, omegas[j]);
            z[n + j] += half * force(x, omegas[j]);
            // row p_j += -half V''(x_j) row x_j
            let c = -half * stiffness(x, omegas[j]);
            for col in 0..2 * n {
                let v = jac[(j, col)];
                jac[(n + j, col)] += c * v;
            }
        }
    };
    kick(z, jac, &mut s);
    for j in 0..n {
        let p = z[n + j];
        s += half * p * p;
        z[j] += tau * p;
        for col in 0..2 * n {
            let v = jac[(n + j, col)];
            jac[(j, col)] += tau * v;
        }
    }
    kick(z, jac, &mut s);
    Ok(s)
}

fn midpoint_step(h: &HamiltonianSpec, z: &mut DVector<f64>, jac: &mut DMatrix<f64>, t: f64, tau: f64) -> Result<f64> {
    let n = h.dim();
    let j = canonical_j(n);
    let tm = t + 0.5 * tau;
    let id = DMatrix::<f64>::identity(2 * n, 2 * n);
    // explicit Euler guess, then Newton on z1 - z0 - τ J ∇H((z0+z1)/2)
    let mut z1 = &*z + &j * h.gradient(z.as_slice(), t) * tau;
    let scale = 1.0 + z.norm();
    let mut converged = false;
    for _ in 0..50 {
        let mid = (&*z + &z1) * 0.5;
        let f = &z1 - &*z - &j * h.gradient(mid.as_slice(), tm) * tau;
        let dfm = &id - &j * h.hessian(mid.as_slice(), tm) * (0.5 * tau);
        let delta = dfm
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Solver("singular implicit-midpoint Jacobian".into()))?;
        z1 -= &delta;
        if !z1.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        if delta.norm() <= 1e-15 * scale {
            converged = true;
            break;
        }
    }
    let mid = (&*z + &z1) * 0.5;
    if !converged {
        let f = &z1 - &*z - &j * h.gradient(mid.as_slice(), tm) * tau;
        if f.norm() > 1e-12 * scale {
            return Err(Error::Solver(format!("implicit midpoint did not converge at t = {t}")));
        }
    }
    let hm = j.clone() * h.hessian(mid.as_slice(), tm) * (0.5 * tau);
    let step_jac = (&id - &hm)
        .lu()
        .solve(&(&id + &hm))
        .ok_or_else(|| Error::Solver("singular Cayley factor".into()))?;
    *jac = step_jac * &*jac;
    let g = h.gradient(mid.as_slice(), tm);
    let p_dot_hp: f64 = (0..n).map(|k| mid[n + k] * g[n + k]).sum();
    let s = tau * (p_dot_hp - h.energy(mid.as_slice(), tm));
    *z = z1;
    Ok(s)
}

/// `‖f_{t,t'}(f_{t',t''}(z0)) - f_{t,t''}(z0)‖`, with `steps` steps per leg.
pub fn chapman_kolmogorov_residual(
    h: &HamiltonianSpec,
    z0: &PhasePoint,
    t: f64,
    tp: f64,
    tpp: f64,
    steps: usize,
) -> Result<f64> {
    let mid = integrate(h, z0, tpp, tp, steps)?;
    let two = integrate(h, mid.last_point(), tp, t, steps)?;
    let direct = integrate(h, z0, tpp, t, steps)?;
    Ok((two.last_point().stacked() - direct.last_point().stacked()).norm())
}

/// Same for the Jacobians: `‖s_{t,t'} s_{t',t''} - s_{t,t''}‖`.
pub fn chapman_kolmogorov_jacobian_residual(
    h: &HamiltonianSpec,
    z0: &PhasePoint,
    t: f64,
    tp: f64,
    tpp: f64,
    steps: usize,
) -> Result<f64> {
    let mid = integrate(h, z0, tpp, tp, steps)?;
    let two = integrate(h, mid.last_point(), tp, t, steps)?;
    let direct = integrate(h, z0, tpp, t, steps)?;
    Ok((two.last_jacobian() * mid.last_jacobian() - direct.last_jacobian()).norm())
}

/// `∫ p dx - H dt` along the trajectory from `(x', p')` at `t'` to `t`.
pub fn action_integral(
    h: &HamiltonianSpec,
    xp: &[f64],
    pp: &[f64],
    tp: f64,
    t: f64,
    steps: usize,
) -> Result<(f64, PhasePoint)> {
    let z = PhasePoint::from_slices(xp, pp)?;
    let traj = integrate(h, &z, tp, t, steps)?;
    Ok((traj.total_action(), traj.last_point().clone()))
}

/// `φ(ž, t) = φ(ž, t') + ∫ p dx - H dt`.
pub fn phase_transport(phi0: f64, h: &HamiltonianSpec, z: &PhasePoint, tp: f64, t: f64, steps: usize) -> Result<f64> {
    Ok(phi0 + integrate(h, z, tp, t, steps)?.total_action())
}

/// `½(p·x - p'·x')`, which equals `∫ p dx - H dt` along any trajectory of a
/// homogeneous quadratic `H` (Euler's identity `z·∇H = 2H`).
pub fn euler_phase_shortcut(start: &PhasePoint, end: &PhasePoint) -> f64 {
    0.5 * (end.p.dot(&end.x) - start.p.dot(&start.x))
}

/// Upper-right `n×n` block `∂x/∂p'` of a `2n×2n` Jacobian.
pub fn block_x_p(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jac.nrows() / 2;
    jac.view((0, n), (n, n)).into_owned()
}

/// Upper-left block `∂x/∂x'`.
pub fn block_x_x(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jac.nrows() / 2;
    jac.view((0, 0), (n, n)).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointSolution {
    pub p_start: DVector<f64>,
    pub p_end: DVector<f64>,
    pub action: f64,
    pub jacobian: DMatrix<f64>,
}

/// Finds `p'` with `x(t; x', p') = x` by Newton iteration on `∂x/∂p'`.
pub fn solve_two_point(
    h: &HamiltonianSpec,
    x: &[f64],
    xp: &[f64],
    tp: f64,
    t: f64,
    p_guess: &[f64],
    steps: usize,
) -> Result<TwoPointSolution> {
    let target = DVector::from_column_slice(x);
    let mut p = DVector::from_column_slice(p_guess);
    let scale = 1.0 + target.norm();
    for _ in 0..60 {
        let z = PhasePoint::new(DVector::from_column_slice(xp), p.clone())?;
        let traj = integrate(h, &z, tp, t, steps)?;
        let end = traj.last_point();
        let resid = &end.x - &target;
        let b = block_x_p(traj.last_jacobian());
        if resid.norm() <= 1e-13 * scale {
            return Ok(TwoPointSolution {
                p_start: p,
                p_end: end.p.clone(),
                action: traj.total_action(),
                jacobian: traj.last_jacobian().clone(),
            });
        }
        let det = b.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::FreeWindowViolation { time: t, det });
        }
        let delta = b
            .lu()
            .solve(&resid)
            .ok_or_else(|| Error::Solver("singular ∂x/∂p'".into()))?;
        // damp large corrections
        let lim = 1.0 + p.norm();
        let factor = if delta.norm() > lim { lim / delta.norm() } else { 1.0 };
        p -= delta * factor;
    }
    Err(Error::Solver("two-point shooting did not converge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingReport {
    pub samples: usize,
    pub min_abs_det: f64,
    /// `max |∂S/∂x - p|` over samples and components.
    pub max_momentum_error: f64,
    /// `max |∂S/∂x' + p'|`.
    pub max_source_momentum_error: f64,
    pub fd_step: f64,
    pub passed: bool,
}

/// Checks `det ∂x/∂p' ≠ 0`, `p = ∂S/∂x` and `p' = -∂S/∂x'` at points drawn
/// uniformly from `[-1, 1]^{2n}`.
#[allow(clippy::too_many_arguments)]
pub fn generating_function_check(
    h: &HamiltonianSpec,
    tp: f64,
    t: f64,
    samples: usize,
    seed: u64,
    det_tol: f64,
    grad_tol: f64,
    steps: usize,
) -> Result<GeneratingReport> {
    h.validate()?;
    let n = h.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fd = 1e-4;
    let mut min_det = f64::INFINITY;
    let mut err_p: f64 = 0.0;
    let mut err_pp: f64 = 0.0;
    for _ in 0..samples {
        let xp: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let pp: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let z = PhasePoint::from_slices(&xp, &pp)?;
        let traj = integrate(h, &z, tp, t, steps)?;
        let det = block_x_p(traj.last_jacobian()).determinant();
        min_det = min_det.min(det.abs());
        if det.abs() < det_tol {
            return Err(Error::FreeWindowViolation { time: t, det });
        }
        let end = traj.last_point();
        let x: Vec<f64> = end.x.iter().cloned().collect();
        let action_at = |xe: &[f64], xs: &[f64]| -> Result<f64> {
            Ok(solve_two_point(h, xe, xs, tp, t, &pp, steps)?.action)
        };
        for k in 0..n {
            let mut xa = x.clone();
            let mut xb = x.clone();
            xa[k] += fd;
            xb[k] -= fd;
            let g = (action_at(&xa, &xp)? - action_at(&xb, &xp)?) / (2.0 * fd);
            err_p = err_p.max((g - end.p[k]).abs());
            let mut sa = xp.clone();
            let mut sb = xp.clone();
            sa[k] += fd;
            sb[k] -= fd;
            let g = (action_at(&x, &sa)? - action_at(&x, &sb)?) / (2.0 * fd);
            err_pp = err_pp.max((g + pp[k]).abs());
        }
    }
    Ok(GeneratingReport {
        samples,
        min_abs_det: min_det,
        max_momentum_error: err_p,
        max_source_momentum_error: err_pp,
        fd_step: fd,
        passed: err_p <= grad_tol && err_pp <= grad_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjReport {
    pub max_residual: f64,
    pub dx: f64,
    pub dt: f64,
    pub interior_points: usize,
}

fn uniform_spacing(v: &[f64], what: &str) -> Result<f64> {
    if v.len() < 7 {
        return Err(Error::GridTooCoarse(format!("{what} grid needs at least 7 points")));
    }
    let d = v[1] - v[0];
    if !(d > 0.0) || v.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > 1e-9 * d.abs().max(1.0)) {
        return Err(Error::GridTooCoarse(format!("{what} grid must be uniform and increasing")));
    }
    Ok(d)
}

/// Sixth-order central first derivative.
fn d6(f: impl Fn(isize) -> f64, h: f64) -> f64 {
    (-f(-3) + 9.0 * f(-2) - 45.0 * f(-1) + 45.0 * f(1) - 9.0 * f(2) + f(3)) / (60.0 * h)
}

/// `max |∂S/∂t + H(x, ∂S/∂x, t)|` over interior points of a one-dimensional
/// `(x, t)` grid, with sixth-order central differences. `s[it][ix]`.
pub fn hamilton_jacobi_residual(h: &HamiltonianSpec, xs: &[f64], ts: &[f64], s: &[Vec<f64>]) -> Result<HjReport> {
    if h.dim() != 1 {
        return Err(Error::Unsupported("Hamilton–Jacobi grids are one-dimensional".into()));
    }
    let dx = uniform_spacing(xs, "x")?;
    let dt = uniform_spacing(ts, "t")?;
    if s.len() != ts.len() || s.iter().any(|r| r.len() != xs.len()) {
        return Err(Error::DimensionMismatch {
            expected: ts.len(),
            found: s.len(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for it in 3..ts.len() - 3 {
        for ix in 3..xs.len() - 3 {
            let st = d6(|k| s[(it as isize + k) as usize][ix], dt);
            let sx = d6(|k| s[it][(ix as isize + k) as usize], dx);
            let r = st + h.energy(&[xs[ix], sx], ts[it]);
            worst = worst.max(r.abs());
            count += 1;
        }
    }
    Ok(HjReport {
        max_residual: worst,
        dx,
        dt,
        interior_points: count,
    })
}

/// Max distance between `K = g∘H` orbit points at `τ_k` and `H` orbit points at
/// `g'(H(z0)) τ_k`, `τ_k = kT/steps`.
pub fn shared_level_set_orbit_check(h: &HamiltonianSpec, g: &Reparam, z0: &PhasePoint, period: f64, steps: usize) -> Result<f64> {
    let e0 = h.energy(z0.stacked().as_slice(), 0.0);
    let speed = g.d1(e0);
    if !(speed > 0.0) {
        return Err(Error::InvalidSpec("g' must be positive at H(z0)".into()));
    }
    let k = HamiltonianSpec::Reparameterized {
        inner: Box::new(h.clone()),
        g: g.clone(),
    };
    let tk = integrate(&k, z0, 0.0, period, steps)?;
    let th = integrate(h, z0, 0.0, speed * period, steps)?;
    Ok(tk
        .points
        .iter()
        .zip(&th.points)
        .map(|(a, b)| (a.stacked() - b.stacked()).norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;
    use crate::symplectic::symplectic_defect;
    use std::f64::consts::PI;

    fn pt(x: &[f64], p: &[f64]) -> PhasePoint {
        PhasePoint::from_slices(x, p).unwrap()
    }

    fn quartic() -> HamiltonianSpec {
        HamiltonianSpec::Quartic {
            omegas: vec![1.0, 1.3],
            lambda: 0.2,
        }
    }

    #[test]
    fn harmonic_quarter_period() {
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let tr = integrate(&h, &pt(&[1.0], &[0.0]), 0.0, PI / 2.0, 10).unwrap();
        let z = tr.last_point();
        assert!(z.x[0].abs() < 1e-10 && (z.p[0] + 1.0).abs() < 1e-10);
        let same = integrate(&h, &pt(&[1.0], &[0.0]), 0.3, 0.3, 10).unwrap();
        assert_eq!(same.len(), 1);
        assert_eq!(same.points[0], pt(&[1.0], &[0.0]));
    }

    #[test]
    fn quartic_conserves_energy_and_symplecticity() {
        let h = quartic();
        let z0 = pt(&[0.7, -0.4], &[0.1, 0.5]);
        let tr = integrate(&h, &z0, 0.0, 5.0, 10_000).unwrap();
        let e0 = h.energy(z0.stacked().as_slice(), 0.0);
        for (z, j) in tr.points.iter().zip(&tr.jacobians) {
            assert!((h.energy(z.stacked().as_slice(), 0.0) - e0).abs() < 1e-8);
            assert!(symplectic_defect(j).unwrap() < 1e-6);
        }
    }

    #[test]
    fn splitting_jacobian_matches_finite_differences() {
        let h = quartic();
        let z0 = pt(&[0.7, -0.4], &[0.1, 0.5]);
        let tr = integrate(&h, &z0, 0.0, 2.0, 2000).unwrap();
        let eps = 1e-6;
        for k in 0..4 {
            let mut a = z0.stacked();
            let mut b = z0.stacked();
            a[k] += eps;
            b[k] -= eps;
            let za = integrate(&h, &PhasePoint::from_stacked(&a).unwrap(), 0.0, 2.0, 2000).unwrap();
            let zb = integrate(&h, &PhasePoint::from_stacked(&b).unwrap(), 0.0, 2.0, 2000).unwrap();
            let col = (za.last_point().stacked() - zb.last_point().stacked()) / (2.0 * eps);
            assert!((col - tr.last_jacobian().column(k)).norm() < 1e-6);
        }
    }

    fn lagrangian_quadrature(h: &HamiltonianSpec, tr: &Trajectory) -> f64 {
        // Simpson on the recorded samples of p·∂H/∂p - H
        let n = h.dim();
        let f: Vec<f64> = tr
            .points
            .iter()
            .zip(&tr.times)
            .map(|(z, &t)| {
                let v = z.stacked();
                let g = h.gradient(v.as_slice(), t);
                (0..n).map(|k| v[n + k] * g[n + k]).sum::<f64>() - h.energy(v.as_slice(), t)
            })
            .collect();
        let dt = tr.times[1] - tr.times[0];
        let m = f.len() - 1;
        assert!(m.is_multiple_of(2));
        let mut acc = f[0] + f[m];
        for (k, v) in f.iter().enumerate().take(m).skip(1) {
            acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc * dt / 3.0
    }

    #[test]
    fn splitting_action_matches_lagrangian_quadrature() {
        let h = quartic();
        let tr = integrate(&h, &pt(&[0.7, -0.4], &[0.1, 0.5]), 0.0, 3.0, 4000).unwrap();
        assert!((tr.total_action() - lagrangian_quadrature(&h, &tr)).abs() < 1e-8);
    }

    fn magnetic() -> HamiltonianSpec {
        // A = (-b y/2, b x/2) with b = 1 + 0.3 t, U = x⁴/4 + y²/2
        let a1 = Polynomial::new(
            3,
            vec![
                Monomial { coeff: -0.5, powers: vec![0, 1, 0] },
                Monomial { coeff: -0.15, powers: vec![0, 1, 1] },
            ],
        )
        .unwrap();
        let a2 = Polynomial::new(
            3,
            vec![
                Monomial { coeff: 0.5, powers: vec![1, 0, 0] },
                Monomial { coeff: 0.15, powers: vec![1, 0, 1] },
            ],
        )
        .unwrap();
        let u = Polynomial::new(
            3,
            vec![
                Monomial { coeff: 0.25, powers: vec![4, 0, 0] },
                Monomial { coeff: 0.5, powers: vec![0, 2, 0] },
            ],
        )
        .unwrap();
        HamiltonianSpec::Magnetic {
            masses: vec![1.0, 2.0],
            vector_potential: vec![a1, a2],
            scalar_potential: u,
        }
    }

    #[test]
    fn magnetic_derivatives_match_finite_differences() {
        let h = magnetic();
        assert!(h.time_dependent());
        let z = [0.3, -0.5, 0.8, 0.1];
        let t = 0.7;
        let g = h.gradient(&z, t);
        let hs = h.hessian(&z, t);
        let eps = 1e-5;
        for k in 0..4 {
            let mut a = z;
            let mut b = z;
            a[k] += eps;
            b[k] -= eps;
            let fd = (h.energy(&a, t) - h.energy(&b, t)) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-8);
            let col = (h.gradient(&a, t) - h.gradient(&b, t)) / (2.0 * eps);
            assert!((col - hs.column(k)).norm() < 1e-7);
        }
    }

    #[test]
    fn magnetic_flow_is_symplectic_and_convergent() {
        let h = magnetic();
        let z0 = pt(&[0.3, -0.5], &[0.8, 0.1]);
        let coarse = integrate(&h, &z0, 0.0, 2.0, 200).unwrap();
        let fine = integrate(&h, &z0, 0.0, 2.0, 400).unwrap();
        for j in &fine.jacobians {
            assert!(symplectic_defect(j).unwrap() < 1e-9);
        }
        let diff = (coarse.last_point().stacked() - fine.last_point().stacked()).norm();
        // fourth order: halving the step shrinks the error by ~16
        let finer = integrate(&h, &z0, 0.0, 2.0, 800).unwrap();
        let diff2 = (fine.last_point().stacked() - finer.last_point().stacked()).norm();
        assert!(diff2 < diff / 10.0, "{diff} {diff2}");
        assert!((fine.total_action() - lagrangian_quadrature(&h, &fine)).abs() < 1e-6);
    }

    #[test]
    fn static_magnetic_field_conserves_energy() {
        let mut h = magnetic();
        if let HamiltonianSpec::Magnetic { vector_potential, .. } = &mut h {
            for a in vector_potential.iter_mut() {
                let terms: Vec<Monomial> = a.terms().iter().filter(|m| m.powers[2] == 0).cloned().collect();
                *a = Polynomial::new(3, terms).unwrap();
            }
        }
        assert!(!h.time_dependent());
        let z0 = pt(&[0.3, -0.5], &[0.8, 0.1]);
        let tr = integrate(&h, &z0, 0.0, 4.0, 2000).unwrap();
        let e0 = h.energy(z0.stacked().as_slice(), 0.0);
        for z in &tr.points {
            assert!((h.energy(z.stacked().as_slice(), 0.0) - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn chapman_kolmogorov_examples() {
        let h = HamiltonianSpec::harmonic(&[1.0, 2.0]);
        let z0 = pt(&[0.3, -1.0], &[0.2, 0.4]);
        assert_eq!(chapman_kolmogorov_residual(&h, &z0, 0.5, 0.5, 0.5, 10).unwrap(), 0.0);
        assert!(chapman_kolmogorov_residual(&h, &z0, 2.0, -0.7, 0.4, 10).unwrap() < 1e-10);
        let q = quartic();
        assert!(chapman_kolmogorov_residual(&q, &z0, 1.5, 0.6, 0.0, 10_000).unwrap() < 1e-6);
        assert!(chapman_kolmogorov_jacobian_residual(&q, &z0, 1.5, 0.6, 0.0, 10_000).unwrap() < 1e-6);
    }

    fn harmonic_s(x: f64, xp: f64, tau: f64) -> f64 {
        ((x * x + xp * xp) * tau.cos() - 2.0 * x * xp) / (2.0 * tau.sin())
    }

    #[test]
    fn action_matches_closed_forms() {
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let (s0, _) = action_integral(&h, &[0.4], &[0.2], 1.0, 1.0, 10).unwrap();
        assert_eq!(s0, 0.0);
        let tau: f64 = 0.8;
        let (xp, pp) = (0.4, -0.3);
        let (s, end) = action_integral(&h, &[xp], &[pp], 0.0, tau, 7).unwrap();
        assert!((s - harmonic_s(end.x[0], xp, tau)).abs() < 1e-12);

        let free = HamiltonianSpec::free_particle(1);
        let (s, end) = action_integral(&free, &[xp], &[pp], 0.5, 2.0, 3).unwrap();
        assert!((s - (end.x[0] - xp).powi(2) / (2.0 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn harmonic_closed_form_solves_hamilton_jacobi() {
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let xs: Vec<f64> = (0..100).map(|k| -1.0 + 2.0 * k as f64 / 99.0).collect();
        let ts: Vec<f64> = (0..100).map(|k| 0.5 + 1.5 * k as f64 / 99.0).collect();
        let s: Vec<Vec<f64>> = ts.iter().map(|&t| xs.iter().map(|&x| harmonic_s(x, 0.3, t)).collect()).collect();
        let rep = hamilton_jacobi_residual(&h, &xs, &ts, &s).unwrap();
        assert!(rep.max_residual < 1e-6, "{}", rep.max_residual);
        assert_eq!(rep.interior_points, 94 * 94);
    }

    #[test]
    fn hamilton_jacobi_trivial_and_coarse() {
        let zero = HamiltonianSpec::Quadratic { m: vec![vec![0.0; 2]; 2] };
        let xs: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let s = vec![vec![3.0; 8]; 8];
        assert_eq!(hamilton_jacobi_residual(&zero, &xs, &xs, &s).unwrap().max_residual, 0.0);
        let short = [0.0, 1.0, 2.0];
        assert!(matches!(
            hamilton_jacobi_residual(&zero, &short, &xs, &s),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn generating_function_examples() {
        let h = HamiltonianSpec::harmonic(&[1.0, 1.0]);
        let rep = generating_function_check(&h, 0.0, 0.1, 10, 1, 1e-9, 1e-5, 5).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!((rep.min_abs_det - 0.1f64.sin().powi(2)).abs() < 1e-12);
        assert!(matches!(
            generating_function_check(&h, 0.0, PI, 3, 1, 1e-9, 1e-5, 5),
            Err(Error::FreeWindowViolation { .. })
        ));
        let free = HamiltonianSpec::free_particle(2);
        assert!(generating_function_check(&free, 0.0, 2.5, 10, 2, 1e-9, 1e-5, 5).unwrap().passed);
        let q = quartic();
        let rep = generating_function_check(&q, 0.0, 0.5, 5, 3, 1e-9, 1e-5, 500).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn euler_shortcut_and_phase_transport() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let h = HamiltonianSpec::quadratic(&m);
        let z = pt(&[0.5], &[-0.2]);
        let tr = integrate(&h, &z, 0.2, 1.7, 9).unwrap();
        let shortcut = euler_phase_shortcut(&z, tr.last_point());
        assert!((tr.total_action() - shortcut).abs() < 1e-8);
        assert_eq!(phase_transport(0.7, &h, &z, 0.4, 0.4, 3).unwrap(), 0.7);
        let ph = phase_transport(0.7, &h, &z, 0.2, 1.7, 9).unwrap();
        assert!((ph - 0.7 - shortcut).abs() < 1e-8);
    }

    #[test]
    fn circle_phase_transport_matches_closed_form() {
        // under H = (x²+p²)/2 the point at angle θ moves to θ - t
        let phi = |th: f64, r: f64| 0.5 * r * r * (th.sin() * th.cos() - th);
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let (r, th, t) = (1.3_f64, 0.4_f64, 0.9_f64);
        let z = pt(&[r * th.cos()], &[r * th.sin()]);
        let moved = phase_transport(phi(th, r), &h, &z, 0.0, t, 20).unwrap();
        let energy = 0.5 * r * r;
        assert!((moved - (phi(th - t, r) - energy * t)).abs() < 1e-10);
    }

    #[test]
    fn shared_level_sets() {
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let z0 = pt(&[0.8], &[0.1]);
        assert!(shared_level_set_orbit_check(&h, &Reparam::affine(2.0, 0.0), &z0, 2.0 * PI, 2000).unwrap() < 1e-8);
        let sq = Reparam { coeffs: vec![0.0, 1.0, 1.0] };
        assert!(shared_level_set_orbit_check(&h, &sq, &z0, 2.0 * PI, 2000).unwrap() < 1e-8);
        assert!(shared_level_set_orbit_check(&h, &Reparam::affine(1.0, 0.0), &z0, 2.0 * PI, 2000).unwrap() < 1e-8);
    }
}
