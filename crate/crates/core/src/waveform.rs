//! Semiclassical waveforms `e^{iφ/ħ} i^m √ρ` on quantized circles, product
//! tori and gradient graphs, their Hamiltonian evolution and their
//! configuration-space shadows.
//!
//! Points of the universal cover are given by unwrapped coordinates: circle
//! angles followed by flat coordinates for a torus, positions for a graph.
//! Densities live in these parameter coordinates, so evolution leaves them
//! untouched and the conversion to the x-chart happens in [`shadow`].

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::capacity::{keller_maslov_check, QuantizationRule, TorusSpec};
use crate::error::{Error, Result};
use crate::flow::{block_x_p, block_x_x, integrate, HamiltonianSpec, Trajectory};
use crate::leray::{leray_index, lift_path, LagrangianLift, LagrangianPath, MAX_CHART_STEP};
use crate::poly::Polynomial;
use crate::symplectic::{apply_linear, intersection_dim, souriau_w, LagrangianFrame, PhasePoint, C64, DEFAULT_TOL};

const MAX_TRANSPORT_DOUBLINGS: u32 = 8;

/// `φ(θ) = (r²/2)(sin θ cos θ - θ)`, normalized by `φ(0) = 0`.
pub fn circle_phase(theta: f64, r: f64) -> f64 {
    0.5 * r * r * (theta.sin() * theta.cos() - theta)
}

/// `⌊θ/π⌋ + 1`.
pub fn circle_argument_index(theta: f64) -> i64 {
    (theta / PI).floor() as i64 + 1
}

/// `i^m`.
pub fn i_pow(m: i64) -> C64 {
    match m.rem_euclid(4) {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// Graph `p = ∇Φ(x)` over the box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientGraph {
    pub potential: Polynomial,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GradientGraph {
    pub fn new(potential: Polynomial, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let g = Self {
            potential,
            lower,
            upper,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.potential.nvars();
        if n == 0 || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::InvalidSpec("graph domain must match the potential's variables".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidSpec("graph domain must have lower < upper".into()));
        }
        Ok(())
    }

    fn base(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// The supported Lagrangian manifolds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    Torus(TorusSpec),
    Graph(GradientGraph),
}

/// A point of the universal cover in unwrapped coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverPoint {
    pub coords: Vec<f64>,
}

impl CoverPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl Manifold {
    pub fn circle(r: f64) -> Result<Self> {
        Ok(Self::Torus(TorusSpec::new(vec![r], 0)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Torus(t) => t.dim(),
            Self::Graph(g) => g.potential.nvars(),
        }
    }

    /// Number of generator loops of the fundamental group.
    pub fn generators(&self) -> usize {
        match self {
            Self::Torus(t) => t.k(),
            Self::Graph(_) => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Torus(t) => TorusSpec::new(t.circle_radii.clone(), t.flat_dims).map(|_| ()),
            Self::Graph(g) => g.validate(),
        }
    }

    fn check(&self, c: &CoverPoint) -> Result<()> {
        if c.coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: c.coords.len(),
            });
        }
        if c.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite cover coordinate".into()));
        }
        Ok(())
    }

    /// Reference point of the cover: all angles and flat coordinates zero
    /// for a torus, the centre of the domain for a graph.
    pub fn base_cover(&self) -> CoverPoint {
        match self {
            Self::Torus(t) => CoverPoint::new(vec![0.0; t.dim()]),
            Self::Graph(g) => CoverPoint::new(g.base()),
        }
    }

    /// Projection `π(ž)` into phase space.
    pub fn point(&self, c: &CoverPoint) -> Result<PhasePoint> {
        self.check(c)?;
        let n = self.dim();
        match self {
            Self::Torus(t) => {
                let mut x = DVector::zeros(n);
                let mut p = DVector::zeros(n);
                for j in 0..n {
                    if j < t.k() {
                        let r = t.circle_radii[j];
                        x[j] = r * c.coords[j].cos();
                        p[j] = r * c.coords[j].sin();
                    } else {
                        x[j] = c.coords[j];
                    }
                }
                PhasePoint::new(x, p)
            }
            Self::Graph(g) => PhasePoint::new(DVector::from_column_slice(&c.coords), g.potential.gradient(&c.coords)),
        }
    }

    /// `2n×n` matrix of coordinate tangent vectors `∂z/∂c_j`.
    pub fn tangent_vectors(&self, c: &CoverPoint) -> Result<DMatrix<f64>> {
        self.check(c)?;
        let n = self.dim();
        let mut v = DMatrix::zeros(2 * n, n);
        match self {
            Self::Torus(t) => {
                for j in 0..n {
                    if j < t.k() {
                        let r = t.circle_radii[j];
                        v[(j, j)] = -r * c.coords[j].sin();
                        v[(n + j, j)] = r * c.coords[j].cos();
                    } else {
                        v[(j, j)] = 1.0;
                    }
                }
            }
            Self::Graph(g) => {
                let hess = g.potential.hessian(&c.coords);
                for j in 0..n {
                    v[(j, j)] = 1.0;
                    for i in 0..n {
                        v[(n + i, j)] = hess[(i, j)];
                    }
                }
            }
        }
        Ok(v)
    }

    /// Tangent plane at `π(ž)`.
    pub fn tangent(&self, c: &CoverPoint) -> Result<LagrangianFrame> {
        let v = self.tangent_vectors(c)?;
        let n = self.dim();
        LagrangianFrame::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }

    /// `φ(ž) = ∫ p dx` from the base point. Graphs use `φ = Φ` directly.
    pub fn phase(&self, c: &CoverPoint) -> Result<f64> {
        self.check(c)?;
        Ok(match self {
            Self::Torus(t) => t
                .circle_radii
                .iter()
                .zip(&c.coords)
                .map(|(&r, &th)| circle_phase(th, r))
                .sum(),
            Self::Graph(g) => g.potential.eval(&c.coords),
        })
    }

    /// Lift of the tangent plane at the base point. Flat factors and graphs
    /// start from `R^n_x` lifted to `α = -π` per dimension, which puts them at
    /// argument index 0 relative to `(R^n_p, 0)`.
    pub fn base_lift(&self) -> Result<LagrangianLift> {
        match self {
            Self::Torus(t) => {
                let mut angles = vec![0.0; t.k()];
                angles.resize(t.dim(), -FRAC_PI_2);
                Ok(LagrangianLift::from_angles(&angles))
            }
            Self::Graph(g) => {
                let n = g.potential.nvars();
                let hess = g.potential.hessian(&g.base());
                let start = LagrangianLift::new(souriau_w(&LagrangianFrame::horizontal(n))?, -(n as f64) * PI)?;
                if hess.norm() == 0.0 {
                    return Ok(start);
                }
                let path = LagrangianPath::sample_adaptive(
                    |s| LagrangianFrame {
                        x: DMatrix::identity(n, n),
                        p: &hess * s,
                    },
                    0.0,
                    1.0,
                    4,
                )?;
                Ok(lift_path(&path, start.alpha)?.pop().unwrap())
            }
        }
    }

    /// `ℓ∞(ž)`: the tangent plane lifted along the straight cover path from
    /// the base point.
    pub fn tangent_lift(&self, c: &CoverPoint) -> Result<LagrangianLift> {
        self.check(c)?;
        let base = self.base_cover();
        let start = self.base_lift()?;
        if base == *c {
            return Ok(start);
        }
        let at = |s: f64| {
            let coords = base
                .coords
                .iter()
                .zip(&c.coords)
                .map(|(a, b)| a + s * (b - a))
                .collect();
            self.tangent(&CoverPoint::new(coords))
                .expect("dimension checked above")
        };
        let path = LagrangianPath::sample_adaptive(at, 0.0, 1.0, 8)?;
        Ok(lift_path(&path, start.alpha)?.pop().unwrap())
    }

    /// Distance of a phase-space point from the manifold.
    pub fn residual(&self, z: &PhasePoint) -> Result<f64> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.dim(),
            });
        }
        Ok(match self {
            Self::Torus(t) => (0..t.dim())
                .map(|j| {
                    if j < t.k() {
                        (z.x[j].hypot(z.p[j]) - t.circle_radii[j]).abs()
                    } else {
                        z.p[j].abs()
                    }
                })
                .fold(0.0, f64::max),
            Self::Graph(g) => (g.potential.gradient(z.x.as_slice()) - &z.p).amax(),
        })
    }

    /// `γ_j^count ž`: shift of the j-th angle by `2π·count`.
    pub fn deck(&self, c: &CoverPoint, j: usize, count: i64) -> Result<CoverPoint> {
        self.check(c)?;
        if j >= self.generators() {
            return Err(Error::InvalidSpec(format!("no generator loop {j}")));
        }
        let mut out = c.clone();
        out.coords[j] += TAU * count as f64;
        Ok(out)
    }
}

/// `∫ p dx` along a discretized path on the manifold (trapezoid rule).
pub fn cover_phase(path: &[PhasePoint], manifold: &Manifold, tol: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (k, z) in path.iter().enumerate() {
        let res = manifold.residual(z)?;
        if res > tol {
            return Err(Error::OffManifold(res));
        }
        if k > 0 {
            let prev = &path[k - 1];
            acc += 0.5 * (&prev.p + &z.p).dot(&(&z.x - &prev.x));
        }
    }
    Ok(acc)
}

/// `m_α(ž) = m(ℓ∞(ž), ℓ_{α,∞})`.
pub fn argument_index_on_manifold(manifold: &Manifold, c: &CoverPoint, base: &LagrangianLift) -> Result<i64> {
    leray_index(&manifold.tangent_lift(c)?, base)
}

/// `i^{m} √ρ` with `m = m_α(ž)` for orientation +1 and `m_α(ž) - 1` for -1.
pub fn sqrt_de_rham(
    amplitude: f64,
    manifold: &Manifold,
    c: &CoverPoint,
    base: &LagrangianLift,
    orientation: i32,
) -> Result<C64> {
    if !(amplitude >= 0.0) {
        return Err(Error::NegativeAmplitude(amplitude));
    }
    let shift = match orientation {
        1 => 0,
        -1 => 1,
        o => return Err(Error::InvalidSpec(format!("orientation must be ±1, got {o}"))),
    };
    if amplitude == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let m = argument_index_on_manifold(manifold, c, base)? - shift;
    Ok(i_pow(m) * amplitude.sqrt())
}

/// Keller–Maslov condition on every generator; graphs are simply connected
/// and always pass.
pub fn is_quantized(manifold: &Manifold, hbar: f64, tol: f64) -> Result<bool> {
    match manifold {
        Manifold::Torus(t) => Ok(keller_maslov_check(t, hbar, tol)?.passed),
        Manifold::Graph(g) => {
            g.validate()?;
            if !(hbar > 0.0) {
                return Err(Error::InvalidSpec("hbar must be positive".into()));
            }
            Ok(true)
        }
    }
}

/// `exp(i[(1/ħ)∮ p dx + (π/2) m(γ)])` for the j-th generator, oriented by
/// increasing angle (`∮ p dx = -π r²`, `m = 2`).
pub fn deck_defect(manifold: &Manifold, j: usize, hbar: f64) -> Result<C64> {
    match manifold {
        Manifold::Torus(t) if j < t.k() => {
            let r = t.circle_radii[j];
            Ok(C64::from_polar(1.0, -PI * r * r / hbar + PI))
        }
        _ => Err(Error::InvalidSpec(format!("no generator loop {j}"))),
    }
}

/// One sampling axis of a density table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Periodic axes have `count` nodes on `[lower, upper)`, others `count`
    /// nodes on `[lower, upper]` and vanish outside.
    pub periodic: bool,
}

impl Axis {
    pub fn periodic_angle(count: usize) -> Self {
        Self {
            lower: 0.0,
            upper: TAU,
            count,
            periodic: true,
        }
    }

    fn step(&self) -> f64 {
        if self.periodic {
            (self.upper - self.lower) / self.count as f64
        } else {
            (self.upper - self.lower) / (self.count - 1) as f64
        }
    }

    pub fn node(&self, k: usize) -> f64 {
        self.lower + self.step() * k as f64
    }

    /// Neighbouring node indices and the weight of the right one.
    fn locate(&self, v: f64) -> Option<(usize, usize, f64)> {
        let u = (v - self.lower) / self.step();
        if self.periodic {
            let u = u.rem_euclid(self.count as f64);
            let i = (u.floor() as usize).min(self.count - 1);
            Some((i, (i + 1) % self.count, u - i as f64))
        } else {
            let last = (self.count - 1) as f64;
            if !(u >= -1e-12 && u <= last + 1e-12) {
                return None;
            }
            let u = u.clamp(0.0, last);
            let i = (u.floor() as usize).min(self.count - 2);
            Some((i, i + 1, u - i as f64))
        }
    }
}

/// Nonnegative density in cover coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Constant { value: f64 },
    /// Multilinear interpolation of row-major samples (last axis fastest).
    Table { axes: Vec<Axis>, values: Vec<f64> },
}

impl Density {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::NegativeAmplitude(value));
        }
        Ok(Self::Constant { value })
    }

    pub fn table(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let d = Self::Table { axes, values };
        d.validate()?;
        Ok(d)
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(axes: Vec<Axis>, f: F) -> Result<Self> {
        let total: usize = axes.iter().map(|a| a.count).product();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        let mut at = vec![0.0; axes.len()];
        for _ in 0..total {
            for (k, a) in axes.iter().enumerate() {
                at[k] = a.node(idx[k]);
            }
            values.push(f(&at));
            for k in (0..axes.len()).rev() {
                idx[k] += 1;
                if idx[k] < axes[k].count {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::table(axes, values)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { value } => Self::constant(*value).map(|_| ()),
            Self::Table { axes, values } => {
                if axes.is_empty() {
                    return Err(Error::InvalidSpec("density table needs at least one axis".into()));
                }
                for a in axes {
                    let min = if a.periodic { 1 } else { 2 };
                    if a.count < min || !(a.lower < a.upper) {
                        return Err(Error::InvalidSpec("degenerate density axis".into()));
                    }
                }
                let total: usize = axes.iter().map(|a| a.count).product();
                if values.len() != total {
                    return Err(Error::InvalidSpec(format!(
                        "density table has {} values, axes need {total}",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::NegativeAmplitude(*v));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, c: &[f64]) -> Result<f64> {
        match self {
            Self::Constant { value } => Ok(*value),
            Self::Table { axes, values } => {
                if c.len() != axes.len() {
                    return Err(Error::DimensionMismatch {
                        expected: axes.len(),
                        found: c.len(),
                    });
                }
                let mut cells = Vec::with_capacity(axes.len());
                for (a, &v) in axes.iter().zip(c) {
                    match a.locate(v) {
                        Some(cell) => cells.push(cell),
                        None => return Ok(0.0),
                    }
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << axes.len()) {
                    let mut flat = 0;
                    let mut weight = 1.0;
                    for (k, (i0, i1, w)) in cells.iter().enumerate() {
                        let hi = corner >> (axes.len() - 1 - k) & 1 == 1;
                        flat = flat * axes[k].count + if hi { *i1 } else { *i0 };
                        weight *= if hi { *w } else { 1.0 - w };
                    }
                    if weight != 0.0 {
                        acc += weight * values[flat];
                    }
                }
                Ok(acc)
            }
        }
    }
}

/// Flow applied to the manifold from `t_start` to `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub hamiltonian: HamiltonianSpec,
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub manifold: Manifold,
    pub density: Density,
    /// Reference `ℓ_{α,∞}` for the argument index.
    pub base: LagrangianLift,
    pub hbar: f64,
    /// Flows applied since construction, oldest first.
    pub flows: Vec<FlowSegment>,
}

/// Everything a waveform knows at one cover point.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub point: PhasePoint,
    pub phase: f64,
    pub index: i64,
    pub density: f64,
    pub lift: LagrangianLift,
}

impl WaveState {
    pub fn value(&self, hbar: f64) -> C64 {
        C64::from_polar(self.density.sqrt(), self.phase / hbar) * i_pow(self.index)
    }
}

impl Waveform {
    /// Waveform with base `(R^n_p, α = 0)`.
    pub fn new(manifold: Manifold, density: Density, hbar: f64) -> Result<Self> {
        let n = manifold.dim();
        let base = LagrangianLift::new(souriau_w(&LagrangianFrame::vertical(n))?, 0.0)?;
        Self::with_base(manifold, density, base, hbar)
    }

    pub fn with_base(manifold: Manifold, density: Density, base: LagrangianLift, hbar: f64) -> Result<Self> {
        manifold.validate()?;
        density.validate()?;
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidSpec("hbar must be positive".into()));
        }
        if base.dim() != manifold.dim() {
            return Err(Error::DimensionMismatch {
                expected: manifold.dim(),
                found: base.dim(),
            });
        }
        Ok(Self {
            manifold,
            density,
            base,
            hbar,
            flows: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn state(&self, c: &CoverPoint) -> Result<WaveState> {
        let mut lift = self.manifold.tangent_lift(c)?;
        let mut point = self.manifold.point(c)?;
        let mut phase = self.manifold.phase(c)?;
        for seg in &self.flows {
            let (traj, moved) = transport(seg, &point, &lift)?;
            phase += traj.total_action();
            point = traj.last_point().clone();
            lift = moved;
        }
        let density = self.density.eval(&c.coords)?;
        let index = leray_index(&lift, &self.base)?;
        Ok(WaveState {
            point,
            phase,
            index,
            density,
            lift,
        })
    }

    /// `Ψ(ž) = e^{iφ(ž)/ħ} i^{m(ž)} √ρ`.
    pub fn value(&self, c: &CoverPoint) -> Result<C64> {
        Ok(self.state(c)?.value(self.hbar))
    }

    /// The density-only construction `e^{iφ/ħ} √ρ` without the index factor.
    pub fn density_only_value(&self, c: &CoverPoint) -> Result<C64> {
        let s = self.state(c)?;
        Ok(C64::from_polar(s.density.sqrt(), s.phase / self.hbar))
    }

    pub fn evolve(&self, h: &HamiltonianSpec, tp: f64, t: f64, steps: usize) -> Result<Self> {
        evolve(self, h, tp, t, steps)
    }
}

/// Carries a point and a lifted plane along the flow. Steps are doubled
/// until consecutive planes are close enough to lift unambiguously.
fn transport(seg: &FlowSegment, z: &PhasePoint, lift: &LagrangianLift) -> Result<(Trajectory, LagrangianLift)> {
    let frame = lift.frame();
    let mut steps = seg.steps.max(1);
    for _ in 0..=MAX_TRANSPORT_DOUBLINGS {
        let traj = integrate(&seg.hamiltonian, z, seg.t_start, seg.t_end, steps)?;
        let frames = traj
            .jacobians
            .iter()
            .map(|j| apply_linear(j, &frame))
            .collect::<Result<Vec<_>>>()?;
        let ws = frames.iter().map(souriau_w).collect::<Result<Vec<_>>>()?;
        let coarse = ws.windows(2).any(|p| (&p[1].w - &p[0].w).norm() >= MAX_CHART_STEP);
        if !coarse {
            let stamps = (0..frames.len()).map(|k| k as f64).collect();
            match lift_path(&LagrangianPath::new(frames, stamps)?, lift.alpha) {
                Ok(mut lifts) => return Ok((traj, lifts.pop().unwrap())),
                Err(Error::Refinement { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        steps *= 2;
    }
    Err(Error::GridTooCoarse(format!(
        "tangent transport still unresolved with {steps} steps"
    )))
}

/// `Ψ(·, t)` from `Ψ(·, t')`: the phase gains `∫ p dx - H dt`, the tangent
/// lift follows `s_{t,t'}(z)` continuously and the density stays in cover
/// coordinates.
pub fn evolve(psi: &Waveform, h: &HamiltonianSpec, tp: f64, t: f64, steps: usize) -> Result<Waveform> {
    h.validate()?;
    if h.dim() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim(),
            found: h.dim(),
        });
    }
    if tp == t {
        return Ok(psi.clone());
    }
    let mut out = psi.clone();
    out.flows.push(FlowSegment {
        hamiltonian: h.clone(),
        t_start: tp,
        t_end: t,
        steps: steps.max(1),
    });
    // probe the flow once so blow-up surfaces here
    out.state(&out.manifold.base_cover())?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowOptions {
    /// Parameter samples used to bracket branches and turning points.
    pub scan_points: usize,
    /// Positions this close to a turning value are flagged as caustic.
    pub caustic_tol: f64,
}

impl Default for ShadowOptions {
    fn default() -> Self {
        Self {
            scan_points: 1024,
            caustic_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shadow {
    pub positions: Vec<f64>,
    /// `Σ_j i^{m_j} e^{iφ_j/ħ} √(ρ_j |ds/dx|_j)`; NaN at caustics.
    pub values: Vec<C64>,
    /// Incoherent density `Σ_j ρ_j |ds/dx|_j`; NaN at caustics.
    pub density: Vec<f64>,
    pub branch_count: Vec<usize>,
    pub caustic: Vec<bool>,
    /// Argument index of each branch, in parameter order.
    pub branch_indices: Vec<Vec<i64>>,
}

struct Curve<'a> {
    psi: &'a Waveform,
    lo: f64,
    hi: f64,
    periodic: bool,
}

impl Curve<'_> {
    /// Transported point and `d/ds` of its x-coordinate.
    fn track(&self, s: f64) -> Result<(f64, f64)> {
        let c = CoverPoint::new(vec![s]);
        let mut z = self.psi.manifold.point(&c)?.stacked();
        let mut v = self.psi.manifold.tangent_vectors(&c)?.column(0).into_owned();
        for seg in &self.psi.flows {
            let traj = integrate(
                &seg.hamiltonian,
                &PhasePoint::from_stacked(&z)?,
                seg.t_start,
                seg.t_end,
                seg.steps,
            )?;
            v = traj.last_jacobian() * v;
            z = traj.last_point().stacked();
        }
        Ok((z[0], v[0]))
    }
}

/// Sign classes of samples; values below `eps` in magnitude count as zero.
fn sign_roots(vals: &[f64], eps: f64, periodic: bool) -> Vec<(usize, bool)> {
    let sign = |v: f64| if v.abs() <= eps { 0 } else if v > 0.0 { 1 } else { -1 };
    let mut out = Vec::new();
    for i in 0..vals.len() - 1 {
        let (a, b) = (sign(vals[i]), sign(vals[i + 1]));
        if a == 0 {
            out.push((i, true));
        } else if a * b < 0 {
            out.push((i, false));
        }
    }
    if !periodic && sign(vals[vals.len() - 1]) == 0 {
        out.push((vals.len() - 1, true));
    }
    out
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a)?;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Configuration-space expression of a one-dimensional waveform, summed over
/// all branches of the (possibly evolved) manifold above each position.
pub fn shadow(psi: &Waveform, x_grid: &[f64], opts: &ShadowOptions) -> Result<Shadow> {
    if psi.dim() != 1 {
        return Err(Error::Unsupported("shadows are implemented for n = 1".into()));
    }
    if opts.scan_points < 8 {
        return Err(Error::InvalidSpec("scan_points must be at least 8".into()));
    }
    let curve = match &psi.manifold {
        Manifold::Torus(_) => Curve {
            psi,
            lo: -PI,
            hi: PI,
            periodic: true,
        },
        Manifold::Graph(g) => Curve {
            psi,
            lo: g.lower[0],
            hi: g.upper[0],
            periodic: false,
        },
    };
    let m = opts.scan_points;
    let nodes: Vec<f64> = (0..=m)
        .map(|i| curve.lo + (curve.hi - curve.lo) * i as f64 / m as f64)
        .collect();
    let samples = nodes.iter().map(|&s| curve.track(s)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let dxs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let scale = dxs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);

    let mut turning = Vec::new();
    for (i, at_node) in sign_roots(&dxs, 1e-13 * scale, curve.periodic) {
        let s = if at_node {
            nodes[i]
        } else {
            bisect(|s| curve.track(s).map(|v| v.1), nodes[i], nodes[i + 1])?
        };
        turning.push(curve.track(s)?.0);
    }

    let mut shadow = Shadow {
        positions: x_grid.to_vec(),
        values: Vec::with_capacity(x_grid.len()),
        density: Vec::with_capacity(x_grid.len()),
        branch_count: Vec::with_capacity(x_grid.len()),
        caustic: Vec::with_capacity(x_grid.len()),
        branch_indices: Vec::with_capacity(x_grid.len()),
    };
    let xscale = xs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for &x in x_grid {
        let g: Vec<f64> = xs.iter().map(|v| v - x).collect();
        let mut value = C64::new(0.0, 0.0);
        let mut dens = 0.0;
        let mut indices = Vec::new();
        let mut caustic = turning.iter().any(|xt| (xt - x).abs() <= opts.caustic_tol);
        for (i, at_node) in sign_roots(&g, 1e-14 * xscale, curve.periodic) {
            let s = if at_node {
                nodes[i]
            } else {
                bisect(|s| curve.track(s).map(|v| v.0 - x), nodes[i], nodes[i + 1])?
            };
            let (_, dx) = curve.track(s)?;
            if dx.abs() <= opts.caustic_tol * scale {
                caustic = true;
                continue;
            }
            let st = psi.state(&CoverPoint::new(vec![s]))?;
            indices.push(st.index);
            dens += st.density / dx.abs();
            value += C64::from_polar((st.density / dx.abs()).sqrt(), st.phase / psi.hbar) * i_pow(st.index);
        }
        shadow.branch_count.push(indices.len());
        shadow.branch_indices.push(indices);
        shadow.caustic.push(caustic);
        if caustic {
            shadow.values.push(C64::new(f64::NAN, f64::NAN));
            shadow.density.push(f64::NAN);
        } else {
            shadow.values.push(value);
            shadow.density.push(dens);
        }
    }
    Ok(shadow)
}

/// Complex Gaussian `exp(i/ħ (½ xᵀ c x + bᵀ x))` with `Im c ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianData {
    pub c_re: Vec<Vec<f64>>,
    pub c_im: Vec<Vec<f64>>,
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
}

impl GaussianData {
    pub fn new(c: &DMatrix<C64>, b: &DVector<C64>) -> Result<Self> {
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..c.nrows())
                .map(|i| (0..c.ncols()).map(|j| f(&c[(i, j)])).collect())
                .collect()
        };
        let g = Self {
            c_re: rows(|z| z.re),
            c_im: rows(|z| z.im),
            b_re: b.iter().map(|z| z.re).collect(),
            b_im: b.iter().map(|z| z.im).collect(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.b_re.len()
    }

    pub fn c(&self) -> DMatrix<C64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| C64::new(self.c_re[i][j], self.c_im[i][j]))
    }

    pub fn b(&self) -> DVector<C64> {
        DVector::from_fn(self.dim(), |i, _| C64::new(self.b_re[i], self.b_im[i]))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.b_re.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if n == 0 || self.b_im.len() != n || !square(&self.c_re) || !square(&self.c_im) {
            return Err(Error::InvalidSpec("Gaussian data must be n×n and length n".into()));
        }
        let c = self.c();
        if (&c - c.transpose()).norm() > 1e-12 * (1.0 + c.norm()) {
            return Err(Error::InvalidSpec("Gaussian c must be symmetric".into()));
        }
        let im = DMatrix::from_fn(n, n, |i, j| self.c_im[i][j]);
        if im.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::InvalidSpec("Gaussian Im c must be positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], hbar: f64) -> C64 {
        let xv = DVector::from_fn(x.len(), |i, _| C64::new(x[i], 0.0));
        let q = (xv.transpose() * self.c() * &xv)[(0, 0)] * 0.5 + (self.b().transpose() * &xv)[(0, 0)];
        (C64::new(0.0, 1.0) * q / hbar).exp()
    }
}

/// Real WKB data `a(x) e^{iΦ(x)/ħ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WkbData {
    pub phase: Polynomial,
    pub amplitude: Polynomial,
}

impl WkbData {
    pub fn value(&self, x: &[f64], hbar: f64) -> Result<C64> {
        let a = self.amplitude.eval(x);
        if a < 0.0 {
            return Err(Error::NegativeAmplitude(a));
        }
        Ok(C64::from_polar(a, self.phase.eval(x) / hbar))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Gaussian(GaussianData),
    Wkb(WkbData),
}

impl InitialData {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Wkb(w) => w.phase.nvars(),
        }
    }

    pub fn value(&self, x: &[f64], hbar: f64) -> Result<C64> {
        match self {
            Self::Gaussian(g) => Ok(g.value(x, hbar)),
            Self::Wkb(w) => w.value(x, hbar),
        }
    }
}

/// `Ψ(x,t) = e^{iS/ħ} Ψ(x',t') |det ∂x/∂x'|^{-1/2}` on a grid. Gaussian data
/// needs a quadratic `H` and is propagated exactly with complex linear
/// algebra; WKB data goes through Newton shooting on the flow.
pub fn van_vleck_propagate(
    data: &InitialData,
    h: &HamiltonianSpec,
    tp: f64,
    t: f64,
    xs: &[Vec<f64>],
    hbar: f64,
    steps: usize,
) -> Result<Vec<C64>> {
    h.validate()?;
    let n = data.dim();
    if h.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: h.dim(),
        });
    }
    if xs.is_empty() {
        return Err(Error::InvalidSpec("empty position grid".into()));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if !(hbar > 0.0) {
        return Err(Error::InvalidSpec("hbar must be positive".into()));
    }
    if tp == t {
        return xs.iter().map(|x| data.value(x, hbar)).collect();
    }
    match data {
        InitialData::Gaussian(g) => gaussian_propagate(g, h, tp, t, xs, hbar, steps),
        InitialData::Wkb(w) => wkb_propagate(w, h, tp, t, xs, hbar, steps),
    }
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

fn gaussian_propagate(
    g: &GaussianData,
    h: &HamiltonianSpec,
    tp: f64,
    t: f64,
    xs: &[Vec<f64>],
    hbar: f64,
    steps: usize,
) -> Result<Vec<C64>> {
    if h.quadratic_matrix().is_none() {
        return Err(Error::Unsupported(
            "Gaussian data needs a quadratic Hamiltonian".into(),
        ));
    }
    let n = g.dim();
    let c = g.c();
    let b = g.b();
    let origin = PhasePoint::from_slices(&vec![0.0; n], &vec![0.0; n])?;
    // the branch of det(A + Bc)^{1/2} follows t continuously from 1
    let mut k = steps.max(16);
    let (jac, arg, modulus) = loop {
        let traj = integrate(h, &origin, tp, t, k)?;
        let mut arg = 0.0;
        let mut prev: Option<C64> = None;
        let mut smooth = true;
        let mut last = C64::new(1.0, 0.0);
        for (s, jm) in traj.times.iter().zip(&traj.jacobians) {
            let d = (to_complex(&block_x_x(jm)) + to_complex(&block_x_p(jm)) * &c).determinant();
            if d.norm() < 1e-14 {
                return Err(Error::ConjugatePoint { time: *s });
            }
            if let Some(p) = prev {
                let step = (d / p).arg();
                if step.abs() >= FRAC_PI_2 {
                    smooth = false;
                    break;
                }
                arg += step;
            } else {
                arg = d.arg();
            }
            prev = Some(d);
            last = d;
        }
        if smooth {
            break (traj.last_jacobian().clone(), arg, last.norm());
        }
        if k > 1 << 20 {
            return Err(Error::GridTooCoarse("determinant branch unresolved".into()));
        }
        k *= 2;
    };
    let a = to_complex(&block_x_x(&jac));
    let bm = to_complex(&block_x_p(&jac));
    let cm = to_complex(&jac.view((n, 0), (n, n)).into_owned());
    let dm = to_complex(&jac.view((n, n), (n, n)).into_owned());
    let lu = (&a + &bm * &c).lu();
    let root = C64::from_polar(modulus.sqrt(), 0.5 * arg);
    let shift = &bm * &b;
    let i = C64::new(0.0, 1.0);
    xs.iter()
        .map(|x| {
            let xv = DVector::from_fn(n, |j, _| C64::new(x[j], 0.0));
            let src = lu
                .solve(&(&xv - &shift))
                .ok_or(Error::ConjugatePoint { time: t })?;
            let p_src = &c * &src + &b;
            let p_end = &cm * &src + &dm * &p_src;
            let phi0 = (src.transpose() * &c * &src)[(0, 0)] * 0.5 + (b.transpose() * &src)[(0, 0)];
            // ∫ p dx - H dt = ½(p·x - p'·x') for homogeneous quadratic H
            let action = ((p_end.transpose() * &xv)[(0, 0)] - (p_src.transpose() * &src)[(0, 0)]) * 0.5;
            Ok((i * (phi0 + action) / hbar).exp() / root)
        })
        .collect()
}

fn wkb_propagate(
    w: &WkbData,
    h: &HamiltonianSpec,
    tp: f64,
    t: f64,
    xs: &[Vec<f64>],
    hbar: f64,
    steps: usize,
) -> Result<Vec<C64>> {
    let n = w.phase.nvars();
    let mut guess = DVector::from_column_slice(&xs[0]);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let target = DVector::from_column_slice(x);
        let scale = 1.0 + target.norm();
        let mut src = guess.clone();
        let mut solved = None;
        for _ in 0..80 {
            let z = PhasePoint::new(src.clone(), w.phase.gradient(src.as_slice()))?;
            let traj = integrate(h, &z, tp, t, steps)?;
            let resid = &traj.last_point().x - &target;
            let hess = w.phase.hessian(src.as_slice());
            let jm = traj.last_jacobian();
            let dxdx = block_x_x(jm) + block_x_p(jm) * &hess;
            if resid.norm() <= 1e-12 * scale {
                solved = Some((traj, hess));
                break;
            }
            let delta = dxdx
                .lu()
                .solve(&resid)
                .ok_or(Error::ConjugatePoint { time: t })?;
            let lim = 1.0 + src.norm();
            let factor = if delta.norm() > lim { lim / delta.norm() } else { 1.0 };
            src -= delta * factor;
        }
        let (traj, hess) = solved.ok_or_else(|| Error::Solver(format!("no source point for x = {x:?}")))?;
        // det ∂x/∂x' must stay positive between t' and t
        let mut det = 1.0;
        for (s, jm) in traj.times.iter().zip(&traj.jacobians) {
            det = (block_x_x(jm) + block_x_p(jm) * &hess).determinant();
            if det <= 1e-12 {
                return Err(Error::ConjugatePoint { time: *s });
            }
        }
        let a = w.amplitude.eval(src.as_slice());
        if a < 0.0 {
            return Err(Error::NegativeAmplitude(a));
        }
        let phase = w.phase.eval(src.as_slice()) + traj.total_action();
        out.push(C64::from_polar(a / det.sqrt(), phase / hbar));
        debug_assert_eq!(src.len(), n);
        guess = src;
    }
    Ok(out)
}

/// Number of conjugate points `det ∂x/∂p'(s) = 0` for `s ∈ (t', t)`, counted
/// with multiplicity: the drop of `m(s_{s,t'} R^n_p, R^n_p)` along the lifted
/// path of `s_{s,t'}(z) R^n_p`, measured from the first sample after `t'`.
pub fn morse_index(h: &HamiltonianSpec, xp: &[f64], pp: &[f64], tp: f64, t: f64, steps: usize) -> Result<i64> {
    if !(t > tp) {
        return Err(Error::InvalidSpec("Morse window needs t > t'".into()));
    }
    let z = PhasePoint::from_slices(xp, pp)?;
    let n = z.dim();
    let vertical = LagrangianFrame::vertical(n);
    let reference = LagrangianLift::new(souriau_w(&vertical)?, 0.0)?;
    let seg = FlowSegment {
        hamiltonian: h.clone(),
        t_start: tp,
        t_end: t,
        steps: steps.max(2),
    };
    let (traj, _) = transport(&seg, &z, &reference)?;
    let frames = traj
        .jacobians
        .iter()
        .map(|j| apply_linear(j, &vertical))
        .collect::<Result<Vec<_>>>()?;
    let ws = frames.iter().map(souriau_w).collect::<Result<Vec<_>>>()?;
    let end_det = block_x_p(traj.last_jacobian()).determinant();
    if intersection_dim(ws.last().unwrap(), &reference.w, DEFAULT_TOL) > 0 {
        return Err(Error::ConjugateEndpoint { det: end_det });
    }
    let stamps = (0..frames.len()).map(|k| k as f64).collect();
    let lifts = lift_path(&LagrangianPath::new(frames, stamps)?, 0.0)?;
    let first = lifts[1..]
        .iter()
        .find(|l| intersection_dim(&l.w, &reference.w, DEFAULT_TOL) == 0)
        .ok_or_else(|| Error::Solver("no transversal sample after t'".into()))?;
    Ok(leray_index(first, &reference)? - leray_index(lifts.last().unwrap(), &reference)?)
}

/// Energies `r²/2` of the circles `x² + p² = r²` whose waveform is
/// single-valued, scanning `r²` in steps of `ħ/100` until `n_max + 1` levels
/// are found. The area-only rule drops the index factor from the waveform.
pub fn oscillator_spectrum_from_waveforms(hbar: f64, n_max: usize, rule: QuantizationRule) -> Result<Vec<f64>> {
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(Error::InvalidSpec("hbar must be positive".into()));
    }
    let density = Density::constant(1.0 / TAU)?;
    let probe = CoverPoint::new(vec![0.3]);
    let limit = 100 * (2 * n_max + 4);
    let mut levels = Vec::new();
    for k in 1..=limit {
        let r2 = k as f64 * hbar / 100.0;
        let psi = Waveform::new(Manifold::circle(r2.sqrt())?, density.clone(), hbar)?;
        let turned = psi.manifold.deck(&probe, 0, 1)?;
        let (a, b) = match rule {
            QuantizationRule::KellerMaslov => (psi.value(&probe)?, psi.value(&turned)?),
            QuantizationRule::AreaOnly => (psi.density_only_value(&probe)?, psi.density_only_value(&turned)?),
        };
        if (a - b).norm() <= 1e-9 * a.norm() {
            levels.push(0.5 * r2);
            if levels.len() > n_max {
                return Ok(levels);
            }
        }
    }
    Err(Error::Solver(format!("found only {} levels", levels.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::LagrangianFrame;

    fn circle_wave(r2: f64, hbar: f64) -> Waveform {
        Waveform::new(Manifold::circle(r2.sqrt()).unwrap(), Density::constant(1.0 / TAU).unwrap(), hbar).unwrap()
    }

    fn at(v: &[f64]) -> CoverPoint {
        CoverPoint::new(v.to_vec())
    }

    #[test]
    fn circle_phase_examples() {
        assert_eq!(circle_phase(0.0, 1.0), 0.0);
        assert!((circle_phase(FRAC_PI_2, 1.0) + PI / 4.0).abs() < 1e-15);
        assert!((circle_phase(TAU, 1.0) + PI).abs() < 1e-14);
        // dφ/dθ = -r² sin²θ
        let (r, h) = (1.7, 1e-5);
        for k in 0..50 {
            let th = -4.0 + 0.17 * k as f64;
            let fd = (circle_phase(th + h, r) - circle_phase(th - h, r)) / (2.0 * h);
            assert!((fd + r * r * th.sin().powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn circle_argument_index_examples() {
        assert_eq!(circle_argument_index(FRAC_PI_2), 1);
        assert_eq!(circle_argument_index(-PI / 4.0), 0);
        for k in 0..40 {
            let th = -7.0 + 0.37 * k as f64;
            assert_eq!(circle_argument_index(th + TAU), circle_argument_index(th) + 2);
        }
    }

    fn circle_path(r: f64, t0: f64, t1: f64, n: usize, warp: bool) -> Vec<PhasePoint> {
        (0..=n)
            .map(|k| {
                let mut s = k as f64 / n as f64;
                if warp {
                    s = s * s;
                }
                let th = t0 + (t1 - t0) * s;
                PhasePoint::from_slices(&[r * th.cos()], &[r * th.sin()]).unwrap()
            })
            .collect()
    }

    #[test]
    fn cover_phase_matches_closed_form() {
        let m = Manifold::circle(1.3).unwrap();
        let one = circle_path(1.3, 0.0, 0.0, 1, false);
        assert_eq!(cover_phase(&one, &m, 1e-12).unwrap(), 0.0);
        for &th in &[0.4, 2.0, -1.1, 5.0] {
            let a = cover_phase(&circle_path(1.3, 0.0, th, 20000, false), &m, 1e-12).unwrap();
            let b = cover_phase(&circle_path(1.3, 0.0, th, 40000, true), &m, 1e-12).unwrap();
            assert!((a - circle_phase(th, 1.3)).abs() < 1e-6);
            assert!((a - b).abs() < 1e-6);
        }
        let full = cover_phase(&circle_path(1.3, 0.7, 0.7 + TAU, 20000, false), &m, 1e-12).unwrap();
        assert!((full + PI * 1.69).abs() < 1e-6);
        let off = vec![PhasePoint::from_slices(&[2.0], &[0.0]).unwrap()];
        assert!(matches!(cover_phase(&off, &m, 1e-9), Err(Error::OffManifold(_))));
    }

    #[test]
    fn phase_differential_is_p_dx() {
        let torus = Manifold::Torus(TorusSpec::new(vec![1.0, 0.6], 1).unwrap());
        let graph = Manifold::Graph(
            GradientGraph::new(
                Polynomial::new(
                    2,
                    vec![
                        crate::poly::Monomial {
                            coeff: 0.3,
                            powers: vec![2, 1],
                        },
                        crate::poly::Monomial {
                            coeff: -0.2,
                            powers: vec![0, 3],
                        },
                    ],
                )
                .unwrap(),
                vec![-1.0, -1.0],
                vec![1.0, 1.0],
            )
            .unwrap(),
        );
        let h = 1e-5;
        for (m, c) in [(&torus, vec![0.3, -2.0, 0.4]), (&graph, vec![0.2, -0.5])] {
            let z = m.point(&at(&c)).unwrap();
            let v = m.tangent_vectors(&at(&c)).unwrap();
            let n = m.dim();
            for j in 0..n {
                let mut a = c.clone();
                let mut b = c.clone();
                a[j] -= h;
                b[j] += h;
                let fd = (m.phase(&at(&b)).unwrap() - m.phase(&at(&a)).unwrap()) / (2.0 * h);
                let pdx: f64 = (0..n).map(|i| z.p[i] * v[(i, j)]).sum();
                assert!((fd - pdx).abs() < 1e-6, "{fd} vs {pdx}");
            }
        }
    }

    #[test]
    fn argument_index_on_circle_reproduces_floor() {
        let m = Manifold::circle(1.0).unwrap();
        let base = LagrangianLift::from_angles(&[0.0]);
        for k in 0..60 {
            let th = -9.0 + 0.31 * k as f64;
            if (th / PI - (th / PI).round()).abs() < 1e-6 {
                continue;
            }
            assert_eq!(
                argument_index_on_manifold(&m, &at(&[th]), &base).unwrap(),
                circle_argument_index(th),
                "θ = {th}"
            );
        }
        assert_eq!(argument_index_on_manifold(&m, &at(&[1.0]), &base).unwrap(), 1);
    }

    #[test]
    fn torus_loop_adds_twice_the_winding() {
        let m = Manifold::Torus(TorusSpec::new(vec![1.0, 2.0], 0).unwrap());
        let base = LagrangianLift::from_angles(&[0.0, 0.0]);
        let c = at(&[0.7, 2.1]);
        let m0 = argument_index_on_manifold(&m, &c, &base).unwrap();
        let moved = m.deck(&m.deck(&c, 0, 1).unwrap(), 1, 1).unwrap();
        assert_eq!(argument_index_on_manifold(&m, &moved, &base).unwrap(), m0 + 4);
        // closed form: lifts of products of lines add
        assert_eq!(m0, circle_argument_index(0.7) + circle_argument_index(2.1));
    }

    #[test]
    fn base_change_follows_floor_differences() {
        let m = Manifold::circle(1.0).unwrap();
        for &(a, b) in &[(0.3, 1.9), (-0.8, 2.5), (1.0, -2.0)] {
            let la = LagrangianLift::from_angles(&[a]);
            let lb = LagrangianLift::from_angles(&[b]);
            for k in 0..25 {
                let th = -6.0 + 0.5 * k as f64 + 0.013;
                let ma = argument_index_on_manifold(&m, &at(&[th]), &la).unwrap();
                let mb = argument_index_on_manifold(&m, &at(&[th]), &lb).unwrap();
                let expect = ((th - a) / PI).floor() as i64 - ((th - b) / PI).floor() as i64;
                assert_eq!(ma - mb, expect);
                // chart change of the square root is i^{m_α - m_β}
                let ra = sqrt_de_rham(2.0, &m, &at(&[th]), &la, 1).unwrap();
                let rb = sqrt_de_rham(2.0, &m, &at(&[th]), &lb, 1).unwrap();
                assert!((ra - i_pow(expect) * rb).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn sqrt_de_rham_examples() {
        let m = Manifold::circle(1.0).unwrap();
        let base = LagrangianLift::from_angles(&[0.0]);
        let c = at(&[1.2]);
        assert_eq!(sqrt_de_rham(0.0, &m, &c, &base, 1).unwrap(), C64::new(0.0, 0.0));
        let plus = sqrt_de_rham(4.0, &m, &c, &base, 1).unwrap();
        let minus = sqrt_de_rham(4.0, &m, &c, &base, -1).unwrap();
        assert!((plus - C64::new(0.0, 2.0)).norm() < 1e-15);
        assert!((minus - plus * C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!(matches!(
            sqrt_de_rham(-1.0, &m, &c, &base, 1),
            Err(Error::NegativeAmplitude(_))
        ));
        assert!(sqrt_de_rham(1.0, &m, &c, &base, 0).is_err());
    }

    #[test]
    fn is_quantized_examples() {
        for n in 0..4 {
            let odd = (2 * n + 1) as f64;
            assert!(is_quantized(&Manifold::circle(odd.sqrt()).unwrap(), 1.0, 1e-9).unwrap());
            assert!(!is_quantized(&Manifold::circle((2.0 * (n + 1) as f64).sqrt()).unwrap(), 1.0, 1e-9).unwrap());
        }
        let graph = Manifold::Graph(GradientGraph::new(Polynomial::diagonal_quadratic(&[0.7]), vec![-1.0], vec![1.0]).unwrap());
        assert!(is_quantized(&graph, 0.37, 1e-9).unwrap());
    }

    #[test]
    fn deck_covariance_and_single_valuedness() {
        let hbar = 0.8;
        for &r2 in &[hbar, 3.0 * hbar, 2.0 * hbar, 1.37] {
            let psi = circle_wave(r2, hbar);
            let m = &psi.manifold;
            let defect = deck_defect(m, 0, hbar).unwrap();
            for &th in &[0.3, 2.0, -2.5] {
                let c = at(&[th]);
                let a = psi.value(&c).unwrap();
                let b = psi.value(&m.deck(&c, 0, 1).unwrap()).unwrap();
                assert!((b - defect * a).norm() < 1e-10);
                let quantized = is_quantized(m, hbar, 1e-9).unwrap();
                assert_eq!(quantized, (b - a).norm() < 1e-10, "r² = {r2}");
            }
        }
    }

    #[test]
    fn density_table_interpolates_and_wraps() {
        let d = Density::from_fn(vec![Axis::periodic_angle(64)], |c| 1.0 + c[0].cos()).unwrap();
        assert!((d.eval(&[0.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((d.eval(&[TAU + 0.5]).unwrap() - d.eval(&[0.5]).unwrap()).abs() < 1e-12);
        assert!((d.eval(&[1.0]).unwrap() - (1.0 + 1.0f64.cos())).abs() < 2e-3);
        let flat = Density::table(
            vec![Axis {
                lower: 0.0,
                upper: 1.0,
                count: 2,
                periodic: false,
            }],
            vec![1.0, 3.0],
        )
        .unwrap();
        assert!((flat.eval(&[0.25]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(flat.eval(&[1.5]).unwrap(), 0.0);
        assert!(Density::table(vec![Axis::periodic_angle(2)], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn evolve_identity_and_full_period() {
        let hbar = 1.0;
        let h = HamiltonianSpec::harmonic(&[1.0]);
        for n in 0..3 {
            let e = (n as f64 + 0.5) * hbar;
            let psi = circle_wave(2.0 * e, hbar);
            let same = evolve(&psi, &h, 0.4, 0.4, 10).unwrap();
            assert_eq!(same, psi);
            let later = evolve(&psi, &h, 0.0, TAU, 64).unwrap();
            let global = C64::from_polar(1.0, -e * TAU / hbar);
            for &th in &[0.2, 1.9, -2.2] {
                let c = at(&[th]);
                let a = psi.value(&c).unwrap();
                let b = later.value(&c).unwrap();
                assert!((b - global * a).norm() < 1e-10);
                let turned = later.value(&later.manifold.deck(&c, 0, 1).unwrap()).unwrap();
                assert!((turned - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn evolve_composes() {
        let psi = circle_wave(3.0, 1.0);
        let quad = HamiltonianSpec::quadratic(&DMatrix::from_row_slice(2, 2, &[1.3, 0.4, 0.4, 0.8]));
        let quartic = HamiltonianSpec::Quartic {
            omegas: vec![1.0],
            lambda: 0.1,
        };
        for (h, steps, tol) in [(quad, 40, 1e-10), (quartic, 4000, 1e-7)] {
            let two = psi.evolve(&h, 0.0, 0.7, steps).unwrap().evolve(&h, 0.7, 1.6, steps).unwrap();
            let one = psi.evolve(&h, 0.0, 1.6, 2 * steps).unwrap();
            for &th in &[0.5, 2.4, -1.0] {
                let c = at(&[th]);
                let a = two.state(&c).unwrap();
                let b = one.state(&c).unwrap();
                assert_eq!(a.index, b.index);
                assert!((two.value(&c).unwrap() - one.value(&c).unwrap()).norm() < tol * 1e2);
                assert!((&a.point.x - &b.point.x).norm() < tol);
            }
        }
    }

    fn wkb_circle_oracle(x: f64, r2: f64, hbar: f64) -> C64 {
        // two branches θ = ±acos(x/r), index 1 above and 0 below
        let r = r2.sqrt();
        let th = (x / r).acos();
        let amp = (1.0 / (TAU * (r2 - x * x).sqrt())).sqrt();
        let up = C64::from_polar(amp, circle_phase(th, r) / hbar) * C64::new(0.0, 1.0);
        let down = C64::from_polar(amp, circle_phase(-th, r) / hbar);
        up + down
    }

    #[test]
    fn circle_shadow_two_branches() {
        let hbar = 1.0;
        let r2 = 5.0 * hbar;
        let psi = circle_wave(r2, hbar);
        let r = r2.sqrt();
        let xs: Vec<f64> = (0..41).map(|k| -r + 2.0 * r * k as f64 / 40.0).collect();
        let sh = shadow(&psi, &xs, &ShadowOptions::default()).unwrap();
        assert!(sh.caustic[0] && sh.caustic[40]);
        for k in 1..40 {
            assert!(!sh.caustic[k]);
            assert_eq!(sh.branch_count[k], 2);
            let want = wkb_circle_oracle(xs[k], r2, hbar);
            assert!((sh.values[k] - want).norm() < 1e-9 * want.norm().max(1.0), "x = {}", xs[k]);
            // connection formula: |S| = 2 a |cos(∫_x^r p dx / ħ - π/4)|
            let th = (xs[k] / r).acos();
            let area = 0.5 * r2 * (th - th.sin() * th.cos());
            let amp = (1.0 / (TAU * (r2 - xs[k] * xs[k]).sqrt())).sqrt();
            assert!((sh.values[k].norm() - 2.0 * amp * (area / hbar - PI / 4.0).cos().abs()).abs() < 1e-9);
        }
        let outside = shadow(&psi, &[r + 0.5], &ShadowOptions::default()).unwrap();
        assert_eq!(outside.branch_count[0], 0);
        assert_eq!(outside.values[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn graph_shadow_is_plain_wkb() {
        let phi = Polynomial::diagonal_quadratic(&[0.6]);
        let graph = Manifold::Graph(GradientGraph::new(phi.clone(), vec![-2.0], vec![2.0]).unwrap());
        let axis = Axis {
            lower: -2.0,
            upper: 2.0,
            count: 401,
            periodic: false,
        };
        let dens = Density::from_fn(vec![axis], |c| (-c[0] * c[0]).exp()).unwrap();
        let psi = Waveform::new(graph, dens.clone(), 0.5).unwrap();
        let xs: Vec<f64> = (0..21).map(|k| -1.5 + 0.15 * k as f64).collect();
        let sh = shadow(&psi, &xs, &ShadowOptions::default()).unwrap();
        for (k, &x) in xs.iter().enumerate() {
            assert_eq!(sh.branch_count[k], 1);
            let want = C64::from_polar(dens.eval(&[x]).unwrap().sqrt(), phi.eval(&[x]) / 0.5);
            assert!((sh.values[k] - want).norm() < 1e-12);
        }
        let zero = Waveform::new(psi.manifold.clone(), Density::constant(0.0).unwrap(), 0.5).unwrap();
        let sz = shadow(&zero, &xs, &ShadowOptions::default()).unwrap();
        assert!(sz.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn evolved_graph_index_drops_at_focal_points() {
        // p = c x under the harmonic flow: ∂x/∂x' = cos t + c sin t
        let c = 0.5;
        let phi = Polynomial::diagonal_quadratic(&[c]);
        let graph = Manifold::Graph(GradientGraph::new(phi, vec![-1.0], vec![1.0]).unwrap());
        let psi = Waveform::new(graph, Density::constant(1.0).unwrap(), 1.0).unwrap();
        let h = HamiltonianSpec::harmonic(&[1.0]);
        let c0 = at(&[0.3]);
        let m0 = psi.state(&c0).unwrap().index;
        for k in 1..30 {
            let t = 0.23 * k as f64;
            let focal = (1..=2000)
                .filter(|&j| {
                    let s0 = t * (j - 1) as f64 / 2000.0;
                    let s1 = t * j as f64 / 2000.0;
                    (s0.cos() + c * s0.sin()) * (s1.cos() + c * s1.sin()) < 0.0
                })
                .count() as i64;
            let mt = psi.evolve(&h, 0.0, t, 50).unwrap().state(&c0).unwrap().index;
            assert_eq!(mt, m0 - focal, "t = {t}");
        }
    }

    #[test]
    fn evolved_shadow_conserves_mass() {
        // ρ(θ) ∝ (dx/dθ)² keeps ρ |dθ/dx| bounded at the turning points
        let h = HamiltonianSpec::quadratic(&DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.7]));
        let r = 2.0f64.sqrt();
        let jac = integrate(&h, &PhasePoint::from_slices(&[0.0], &[0.0]).unwrap(), 0.0, 0.9, 1)
            .unwrap()
            .last_jacobian()
            .clone();
        let dxdth = |th: f64| r * (jac[(0, 1)] * th.cos() - jac[(0, 0)] * th.sin());
        let axis = Axis::periodic_angle(4096);
        let dens = Density::from_fn(vec![axis.clone()], |c| dxdth(c[0]).powi(2)).unwrap();
        let total: f64 = (0..axis.count).map(|k| dens.eval(&[axis.node(k)]).unwrap()).sum::<f64>() * axis.step();
        let psi = Waveform::new(Manifold::circle(r).unwrap(), dens, 1.0)
            .unwrap()
            .evolve(&h, 0.0, 0.9, 20)
            .unwrap();
        let n = 4000;
        let (lo, hi) = (-4.0, 4.0);
        let dx = (hi - lo) / n as f64;
        let xs: Vec<f64> = (0..n).map(|k| lo + (k as f64 + 0.5) * dx).collect();
        let sh = shadow(&psi, &xs, &ShadowOptions::default()).unwrap();
        let mass: f64 = sh.density.iter().filter(|v| v.is_finite()).sum::<f64>() * dx;
        assert!(sh.branch_count.contains(&2));
        assert!((mass / total - 1.0).abs() < 1e-4, "mass {mass} vs {total}");
    }

    fn mehler(x: f64, tau: f64, c: C64, b: f64, hbar: f64) -> C64 {
        let alpha = C64::new(1.0 / tau.tan(), 0.0) + c;
        let beta = b - x / tau.sin();
        let i = C64::new(0.0, 1.0);
        let exponent = i / hbar * (x * x * tau.cos() / (2.0 * tau.sin()) - beta * beta / (2.0 * alpha));
        exponent.exp() / (C64::new(tau.cos(), 0.0) + c * tau.sin()).sqrt()
    }

    fn free_kernel(x: f64, tau: f64, c: C64, b: f64, hbar: f64) -> C64 {
        let alpha = C64::new(1.0 / tau, 0.0) + c;
        let beta = b - x / tau;
        let i = C64::new(0.0, 1.0);
        let exponent = i / hbar * (x * x / (2.0 * tau) - beta * beta / (2.0 * alpha));
        exponent.exp() / (1.0 + c * tau).sqrt()
    }

    fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).norm_sqr()).sum();
        let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn gaussian_matches_mehler_and_free_kernels() {
        let hbar = 0.7;
        let c = C64::new(0.3, 1.0);
        let b = 0.4;
        let data = InitialData::Gaussian(
            GaussianData::new(&DMatrix::from_element(1, 1, c), &DVector::from_element(1, C64::new(b, 0.0))).unwrap(),
        );
        let xs: Vec<Vec<f64>> = (0..256).map(|k| vec![-5.0 + 10.0 * k as f64 / 255.0]).collect();
        for &tau in &[0.1, 0.3, 1.0] {
            let got = van_vleck_propagate(&data, &HamiltonianSpec::harmonic(&[1.0]), 0.2, 0.2 + tau, &xs, hbar, 16).unwrap();
            let want: Vec<C64> = xs.iter().map(|x| mehler(x[0], tau, c, b, hbar)).collect();
            assert!(rel_l2(&got, &want) < 1e-10);
            let got = van_vleck_propagate(&data, &HamiltonianSpec::free_particle(1), 0.0, tau, &xs, hbar, 16).unwrap();
            let want: Vec<C64> = xs.iter().map(|x| free_kernel(x[0], tau, c, b, hbar)).collect();
            assert!(rel_l2(&got, &want) < 1e-10);
        }
        let same = van_vleck_propagate(&data, &HamiltonianSpec::harmonic(&[1.0]), 1.0, 1.0, &xs, hbar, 4).unwrap();
        for (x, v) in xs.iter().zip(&same) {
            assert!((v - data.value(x, hbar).unwrap()).norm() < 1e-15);
        }
        assert!(van_vleck_propagate(&data, &HamiltonianSpec::harmonic(&[1.0]), 0.0, 0.3, &[], hbar, 4).is_err());
    }

    #[test]
    fn real_wkb_shooting_matches_closed_forms() {
        let hbar = 0.5;
        let c = 0.4;
        let b = -0.3;
        let phase = Polynomial::new(
            1,
            vec![
                crate::poly::Monomial {
                    coeff: 0.5 * c,
                    powers: vec![2],
                },
                crate::poly::Monomial {
                    coeff: b,
                    powers: vec![1],
                },
            ],
        )
        .unwrap();
        let data = InitialData::Wkb(WkbData {
            phase,
            amplitude: Polynomial::new(
                1,
                vec![crate::poly::Monomial {
                    coeff: 1.0,
                    powers: vec![0],
                }],
            )
            .unwrap(),
        });
        let xs: Vec<Vec<f64>> = (0..64).map(|k| vec![-3.0 + 6.0 * k as f64 / 63.0]).collect();
        for &tau in &[0.2, 0.9] {
            let got = van_vleck_propagate(&data, &HamiltonianSpec::free_particle(1), 0.0, tau, &xs, hbar, 8).unwrap();
            let want: Vec<C64> = xs.iter().map(|x| free_kernel(x[0], tau, C64::new(c, 0.0), b, hbar)).collect();
            assert!(rel_l2(&got, &want) < 1e-9);
            let got = van_vleck_propagate(&data, &HamiltonianSpec::harmonic(&[1.0]), 0.0, tau, &xs, hbar, 8).unwrap();
            let want: Vec<C64> = xs.iter().map(|x| mehler(x[0], tau, C64::new(c, 0.0), b, hbar)).collect();
            assert!(rel_l2(&got, &want) < 1e-9);
        }
        // cos t + c sin t vanishes at t = π - atan(1/c)
        let late = PI - (1.0 / c).atan() + 0.2;
        assert!(matches!(
            van_vleck_propagate(&data, &HamiltonianSpec::harmonic(&[1.0]), 0.0, late, &xs, hbar, 64),
            Err(Error::ConjugatePoint { .. })
        ));
    }

    fn det_sign_changes(h: &HamiltonianSpec, tp: f64, t: f64) -> i64 {
        let z = PhasePoint::from_slices(&[0.3], &[0.2]).unwrap();
        let traj = integrate(h, &z, tp, t, 4000).unwrap();
        let dets: Vec<f64> = traj.jacobians.iter().map(|j| block_x_p(j)[(0, 0)]).collect();
        dets[1..].windows(2).filter(|w| w[0] * w[1] < 0.0).count() as i64
    }

    #[test]
    fn morse_index_counts_half_periods() {
        let h = HamiltonianSpec::harmonic(&[1.0]);
        for k in 0..5 {
            for &frac in &[0.1, 0.5, 0.9] {
                let t = (k as f64 + frac) * PI;
                let mu = morse_index(&h, &[0.3], &[0.2], 0.0, t, 64).unwrap();
                assert_eq!(mu, k);
                assert_eq!(mu, det_sign_changes(&h, 0.0, t));
            }
        }
        let free = HamiltonianSpec::free_particle(1);
        assert_eq!(morse_index(&free, &[1.0], &[-2.0], 0.0, 7.0, 16).unwrap(), 0);
        assert!(matches!(
            morse_index(&h, &[0.3], &[0.2], 0.0, PI, 64),
            Err(Error::ConjugateEndpoint { .. })
        ));
        // quartic oscillator: the lifted count agrees with sign changes too
        let q = HamiltonianSpec::Quartic {
            omegas: vec![1.0],
            lambda: 0.2,
        };
        for &t in &[1.0, 4.0, 7.5] {
            assert_eq!(morse_index(&q, &[0.3], &[0.2], 0.0, t, 4000).unwrap(), det_sign_changes(&q, 0.0, t));
        }
    }

    #[test]
    fn morse_index_counts_multiplicity() {
        // isotropic oscillator in n = 2: det ∂x/∂p' = sin² t never changes sign
        let h = HamiltonianSpec::harmonic(&[1.0, 1.0]);
        assert_eq!(morse_index(&h, &[0.1, 0.2], &[0.3, -0.1], 0.0, 1.5 * PI, 64).unwrap(), 2);
        let h = HamiltonianSpec::harmonic(&[1.0, 2.0]);
        // sin 2t vanishes at π/2 and π, sin t at π
        assert_eq!(morse_index(&h, &[0.1, 0.2], &[0.3, -0.1], 0.0, 1.2 * PI, 64).unwrap(), 3);
        assert_eq!(morse_index(&h, &[0.1, 0.2], &[0.3, -0.1], 0.0, 0.8 * PI, 64).unwrap(), 1);
    }

    #[test]
    fn spectrum_from_waveforms() {
        let levels = oscillator_spectrum_from_waveforms(1.0, 2, QuantizationRule::KellerMaslov).unwrap();
        assert_eq!(levels, vec![0.5, 1.5, 2.5]);
        let doubled = oscillator_spectrum_from_waveforms(2.0, 2, QuantizationRule::KellerMaslov).unwrap();
        assert_eq!(doubled, vec![1.0, 3.0, 5.0]);
        let contrast = oscillator_spectrum_from_waveforms(1.0, 2, QuantizationRule::AreaOnly).unwrap();
        assert_eq!(contrast, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn base_lift_of_graph_has_index_zero() {
        let graph = Manifold::Graph(
            GradientGraph::new(Polynomial::diagonal_quadratic(&[-3.0, 2.0]), vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        );
        let base = LagrangianLift::from_frame(&LagrangianFrame::vertical(2), 0.0).unwrap();
        assert_eq!(argument_index_on_manifold(&graph, &at(&[0.4, -0.2]), &base).unwrap(), 0);
    }
}
