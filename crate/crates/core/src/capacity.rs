//! Closed-form symplectic areas, the Monte Carlo non-squeezing experiment
//! and quantization of invariant tori by minimal symplectic area.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::symplectic::{PhasePoint, SymplecticMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSpec {
    radii: Vec<f64>,
    pub center: PhasePoint,
}

impl EllipsoidSpec {
    /// `Σ_j ((x_j - c_j)² + (p_j - d_j)²) / R_j² ≤ 1`; radii are sorted.
    pub fn new(radii: &[f64], center: PhasePoint) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidSpec("ellipsoid radii must be positive".into()));
        }
        if center.dim() != radii.len() {
            return Err(Error::DimensionMismatch {
                expected: radii.len(),
                found: center.dim(),
            });
        }
        let mut radii = radii.to_vec();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { radii, center })
    }

    pub fn centered(radii: &[f64]) -> Result<Self> {
        let n = radii.len().max(1);
        Self::new(radii, PhasePoint::new(DVector::zeros(n), DVector::zeros(n))?)
    }

    pub fn ball(n: usize, r: f64) -> Result<Self> {
        Self::centered(&vec![r; n])
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

/// `A(E) = π R_1²` with `R_1` the smallest radius.
pub fn ellipsoid_capacity(e: &EllipsoidSpec) -> f64 {
    PI * e.radii[0] * e.radii[0]
}

/// Area of the conjugate-plane cylinder `x_j² + p_j² ≤ R²`.
pub fn cylinder_capacity(r: f64) -> f64 {
    PI * r * r
}

/// `π^n R^{2n} / n!`.
pub fn ball_volume(n: usize, r: f64) -> Result<f64> {
    if n == 0 || !(r > 0.0) {
        return Err(Error::InvalidSpec("ball_volume needs n >= 1 and R > 0".into()));
    }
    let mut v = 1.0;
    for k in 1..=n {
        v *= PI * r * r / k as f64;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Linear(SymplecticMatrix),
    /// `(x, p) ↦ (x, p + ∇V(x))`.
    XShear(Polynomial),
    /// `(x, p) ↦ (x + ∇T(p), p)`.
    PShear(Polynomial),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplectomorphismSpec {
    n: usize,
    stages: Vec<Stage>,
}

impl SymplectomorphismSpec {
    pub fn new(n: usize, stages: Vec<Stage>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        for s in &stages {
            let d = match s {
                Stage::Linear(m) => m.dim(),
                Stage::XShear(v) | Stage::PShear(v) => v.nvars(),
            };
            if d != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: d,
                });
            }
        }
        Ok(Self { n, stages })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            stages: Vec::new(),
        }
    }

    /// 3 to 7 stages alternating `exp(JA)` (entries of `A` uniform in
    /// `[-1, 1]`) with x- or p-shears by polynomials of degree ≤ 4 with
    /// coefficients uniform in `[-0.5, 0.5]`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let count = rng.random_range(3..=7);
        let mut stages = Vec::with_capacity(count);
        for k in 0..count {
            if k % 2 == 0 {
                stages.push(Stage::Linear(SymplecticMatrix::random(n, 1.0, rng)));
            } else {
                let poly = Polynomial::random(n, 4, 0.5, rng);
                if rng.random_bool(0.5) {
                    stages.push(Stage::XShear(poly));
                } else {
                    stages.push(Stage::PShear(poly));
                }
            }
        }
        Self { n, stages }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// In-place evaluation on a stacked `(x, p)` slice; `scratch` must have
    /// length `2n`.
    pub fn apply_in_place(&self, z: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        for s in &self.stages {
            match s {
                Stage::Linear(m) => {
                    let m = m.matrix();
                    for (i, out) in scratch.iter_mut().enumerate() {
                        *out = (0..2 * n).map(|k| m[(i, k)] * z[k]).sum();
                    }
                    z.copy_from_slice(scratch);
                }
                Stage::XShear(v) => {
                    let (x, p) = z.split_at_mut(n);
                    v.gradient_into(x, &mut scratch[..n]);
                    p.iter_mut().zip(&scratch[..n]).for_each(|(a, g)| *a += g);
                }
                Stage::PShear(t) => {
                    let (x, p) = z.split_at_mut(n);
                    t.gradient_into(p, &mut scratch[..n]);
                    x.iter_mut().zip(&scratch[..n]).for_each(|(a, g)| *a += g);
                }
            }
        }
    }

    pub fn apply(&self, z: &PhasePoint) -> Result<PhasePoint> {
        self.check(z)?;
        let mut v = z.stacked();
        let mut scratch = vec![0.0; 2 * self.n];
        self.apply_in_place(v.as_mut_slice(), &mut scratch);
        PhasePoint::from_stacked(&v)
    }

    /// Jacobian of the composite by the chain rule.
    pub fn jacobian(&self, z: &PhasePoint) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let n = self.n;
        let mut v = z.stacked();
        let mut jac = DMatrix::identity(2 * n, 2 * n);
        let mut scratch = vec![0.0; 2 * n];
        for s in &self.stages {
            let mut d = DMatrix::identity(2 * n, 2 * n);
            match s {
                Stage::Linear(m) => d.copy_from(m.matrix()),
                Stage::XShear(pot) => {
                    let h = pot.hessian(&v.as_slice()[..n]);
                    d.view_mut((n, 0), (n, n)).copy_from(&h);
                }
                Stage::PShear(pot) => {
                    let h = pot.hessian(&v.as_slice()[n..]);
                    d.view_mut((0, n), (n, n)).copy_from(&h);
                }
            }
            jac = d * jac;
            let single = SymplectomorphismSpec {
                n,
                stages: vec![s.clone()],
            };
            single.apply_in_place(v.as_mut_slice(), &mut scratch);
        }
        Ok(jac)
    }

    fn check(&self, z: &PhasePoint) -> Result<()> {
        if z.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: z.dim(),
            });
        }
        Ok(())
    }
}

pub fn apply_symplectomorphism(f: &SymplectomorphismSpec, z: &PhasePoint) -> Result<PhasePoint> {
    f.apply(z)
}

/// A coordinate plane `(x_i, p_j)`, zero-based; conjugate when `i == j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plane {
    pub x: usize,
    pub p: usize,
}

impl Plane {
    pub fn conjugate(j: usize) -> Self {
        Self { x: j, p: j }
    }

    pub fn is_conjugate(&self) -> bool {
        self.x == self.p
    }
}

/// How points of `B(R)` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallSampling {
    /// Uniform in the solid ball.
    Solid,
    /// Uniform on the boundary sphere. For `n ≥ 2` every fibre of a plane
    /// projection has positive dimension, so `Pr f(B) = Pr f(∂B)`.
    Boundary,
    /// `Boundary` for `n ≥ 2`, `Solid` for `n = 1`.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowOptions {
    pub grid_res: usize,
    pub samples: usize,
    pub seed: u64,
    pub sampling: BallSampling,
    /// Mark empty cells enclosed on all four sides by occupied cells.
    pub fill_holes: bool,
    pub partitions: usize,
}

impl Default for ShadowOptions {
    fn default() -> Self {
        Self {
            grid_res: 512,
            samples: 1_000_000,
            seed: 0,
            sampling: BallSampling::Auto,
            fill_holes: false,
            partitions: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEstimate {
    /// Zero-based momentum index `j`; equals `x_index` for conjugate planes.
    pub plane_index: usize,
    pub x_index: usize,
    pub area: f64,
    pub grid_res: usize,
    pub grid_cells: usize,
    pub occupied_cells: usize,
    pub samples: usize,
    pub seed: u64,
    pub bbox: [f64; 4],
}

fn sample_ball<R: Rng + ?Sized>(z: &mut [f64], r: f64, solid: bool, rng: &mut R) {
    loop {
        let mut norm2 = 0.0;
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
            norm2 += *v * *v;
        }
        if norm2 > 1e-300 {
            let mut scale = r / norm2.sqrt();
            if solid {
                let u: f64 = rng.random();
                scale *= u.powf(1.0 / z.len() as f64);
            }
            z.iter_mut().for_each(|v| *v *= scale);
            return;
        }
    }
}

/// Shadows of `f(B(R))` on several planes from one seeded sample set.
pub fn shadow_areas(
    f: &SymplectomorphismSpec,
    r: f64,
    planes: &[Plane],
    opts: &ShadowOptions,
) -> Result<Vec<ShadowEstimate>> {
    let n = f.dim();
    if !(r > 0.0) || opts.grid_res == 0 || opts.samples == 0 || opts.partitions == 0 {
        return Err(Error::InvalidSpec(
            "radius, grid resolution, sample and partition counts must be positive".into(),
        ));
    }
    for pl in planes {
        if pl.x >= n || pl.p >= n {
            return Err(Error::InvalidSpec(format!(
                "plane ({}, {}) out of range for n = {n}",
                pl.x, pl.p
            )));
        }
    }
    let solid = match opts.sampling {
        BallSampling::Solid => true,
        BallSampling::Boundary => false,
        BallSampling::Auto => n == 1,
    };
    let parts = opts.partitions;
    let base = opts.samples / parts;
    let extra = opts.samples % parts;
    let np = planes.len();

    // each partition has its own stream, so the result does not depend on
    // how rayon schedules the work
    let chunks: Vec<Vec<f64>> = (0..parts)
        .into_par_iter()
        .map(|k| {
            let count = base + usize::from(k < extra);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let mut z = vec![0.0; 2 * n];
            let mut scratch = vec![0.0; 2 * n];
            let mut out = Vec::with_capacity(count * 2 * np);
            for _ in 0..count {
                sample_ball(&mut z, r, solid, &mut rng);
                f.apply_in_place(&mut z, &mut scratch);
                for pl in planes {
                    out.push(z[pl.x]);
                    out.push(z[n + pl.p]);
                }
            }
            out
        })
        .collect();

    let mut results = Vec::with_capacity(np);
    for (ip, pl) in planes.iter().enumerate() {
        let points = || {
            chunks
                .iter()
                .flat_map(move |c| c.chunks_exact(2 * np).map(move |s| (s[2 * ip], s[2 * ip + 1])))
        };
        let mut bbox = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for (a, b) in points() {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Divergence { time: 0.0 });
            }
            bbox[0] = bbox[0].min(a);
            bbox[1] = bbox[1].max(a);
            bbox[2] = bbox[2].min(b);
            bbox[3] = bbox[3].max(b);
        }
        let g = opts.grid_res;
        let wx = (bbox[1] - bbox[0]).max(f64::MIN_POSITIVE);
        let wp = (bbox[3] - bbox[2]).max(f64::MIN_POSITIVE);
        let mut grid = vec![false; g * g];
        for (a, b) in points() {
            let i = (((a - bbox[0]) / wx * g as f64) as usize).min(g - 1);
            let k = (((b - bbox[2]) / wp * g as f64) as usize).min(g - 1);
            grid[k * g + i] = true;
        }
        if opts.fill_holes {
            fill_enclosed(&mut grid, g);
        }
        let occupied = grid.iter().filter(|&&c| c).count();
        let cell = wx * wp / (g * g) as f64;
        results.push(ShadowEstimate {
            plane_index: pl.p,
            x_index: pl.x,
            area: occupied as f64 * cell,
            grid_res: g,
            grid_cells: g * g,
            occupied_cells: occupied,
            samples: opts.samples,
            seed: opts.seed,
            bbox,
        });
    }
    Ok(results)
}

fn fill_enclosed(grid: &mut [bool], g: usize) {
    let snapshot = grid.to_vec();
    for k in 1..g.saturating_sub(1) {
        for i in 1..g - 1 {
            let at = |a: usize, b: usize| snapshot[b * g + a];
            if !at(i, k) && at(i - 1, k) && at(i + 1, k) && at(i, k - 1) && at(i, k + 1) {
                grid[k * g + i] = true;
            }
        }
    }
}

/// Shadow of `f(B(R))` on the conjugate plane `(x_j, p_j)`, `j` zero-based.
pub fn shadow_area(
    f: &SymplectomorphismSpec,
    r: f64,
    j: usize,
    grid_res: usize,
    samples: usize,
    seed: u64,
) -> Result<ShadowEstimate> {
    let opts = ShadowOptions {
        grid_res,
        samples,
        seed,
        ..ShadowOptions::default()
    };
    Ok(shadow_areas(f, r, &[Plane::conjugate(j)], &opts)?.remove(0))
}

fn check_hbar(hbar: f64) -> Result<()> {
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(Error::InvalidSpec("hbar must be positive".into()));
    }
    Ok(())
}

/// `Σ_j ħ ω_j / 2`.
pub fn ground_energy(omegas: &[f64], hbar: f64) -> Result<f64> {
    check_hbar(hbar)?;
    if omegas.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidSpec("frequencies must be positive".into()));
    }
    Ok(omegas.iter().map(|w| 0.5 * hbar * w).sum())
}

/// `h / 2 = π ħ`.
pub fn minimal_orbit_action(hbar: f64) -> Result<f64> {
    check_hbar(hbar)?;
    Ok(PI * hbar)
}

/// `(S¹)^k × R^{n-k}` with circles `x_j² + p_j² = r_j²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusSpec {
    pub circle_radii: Vec<f64>,
    #[serde(default)]
    pub flat_dims: usize,
}

impl TorusSpec {
    pub fn new(circle_radii: Vec<f64>, flat_dims: usize) -> Result<Self> {
        if circle_radii.is_empty() || circle_radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidSpec("torus needs k >= 1 positive radii".into()));
        }
        Ok(Self {
            circle_radii,
            flat_dims,
        })
    }

    /// Circles with `r_j² = squares[j]`.
    pub fn from_squared_radii(squares: &[f64], flat_dims: usize) -> Result<Self> {
        Self::new(squares.iter().map(|s| s.sqrt()).collect(), flat_dims)
    }

    pub fn k(&self) -> usize {
        self.circle_radii.len()
    }

    pub fn dim(&self) -> usize {
        self.k() + self.flat_dims
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.circle_radii.clone(), self.flat_dims).map(|_| ())
    }
}

/// `Σ_j μ_j π r_j²`, the action of the loop winding `μ_j` times around the
/// j-th circle in the direction of the harmonic flow.
pub fn loop_action(t: &TorusSpec, mu: &[i64]) -> Result<f64> {
    t.validate()?;
    if mu.len() != t.k() {
        return Err(Error::DimensionMismatch {
            expected: t.k(),
            found: mu.len(),
        });
    }
    Ok(mu
        .iter()
        .zip(&t.circle_radii)
        .map(|(&m, r)| m as f64 * PI * r * r)
        .sum())
}

/// Which loops count as quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizationRule {
    /// `(1/2πħ) ∮ p dx - m(γ)/4 ∈ Z`.
    KellerMaslov,
    /// `(1/2πħ) ∮ p dx ∈ Z`, ignoring the Maslov correction.
    AreaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub index: usize,
    /// `∮ p dx` along the generator oriented by the circle angle.
    pub action: f64,
    pub maslov: i64,
    /// Distance of the quantization expression from the nearest integer.
    pub residual: f64,
    pub passed: bool,
    /// `N_j` with `r_j² = (2N_j + 1)ħ` (or `2N_jħ` for the area-only rule).
    pub quantum_number: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KellerReport {
    pub passed: bool,
    pub generators: Vec<GeneratorReport>,
}

/// Checks every generator loop. A circle `x = r cos θ, p = r sin θ` traversed
/// with increasing θ has `∮ p dx = -π r²` and Maslov index 2.
pub fn keller_maslov_check(t: &TorusSpec, hbar: f64, tol: f64) -> Result<KellerReport> {
    quantization_check(t, hbar, tol, QuantizationRule::KellerMaslov)
}

pub fn quantization_check(
    t: &TorusSpec,
    hbar: f64,
    tol: f64,
    rule: QuantizationRule,
) -> Result<KellerReport> {
    check_hbar(hbar)?;
    t.validate()?;
    let mut generators = Vec::with_capacity(t.k());
    for (index, r) in t.circle_radii.iter().enumerate() {
        let action = -PI * r * r;
        let maslov = 2;
        let shift = match rule {
            QuantizationRule::KellerMaslov => 0.25 * maslov as f64,
            QuantizationRule::AreaOnly => 0.0,
        };
        let v = action / (2.0 * PI * hbar) - shift;
        let nearest = v.round();
        let residual = (v - nearest).abs();
        let passed = residual <= tol;
        // v = -(N + 1) for r² = (2N+1)ħ; v = -N for r² = 2Nħ
        let quantum_number = passed.then(|| match rule {
            QuantizationRule::KellerMaslov => -(nearest as i64) - 1,
            QuantizationRule::AreaOnly => -(nearest as i64),
        });
        generators.push(GeneratorReport {
            index,
            action,
            maslov,
            residual,
            passed,
            quantum_number,
        });
    }
    Ok(KellerReport {
        passed: generators.iter().all(|g| g.passed),
        generators,
    })
}

/// `E = Σ_j ω_j r_j² / 2` on a quantized torus.
pub fn oscillator_levels(t: &TorusSpec, omegas: &[f64], hbar: f64) -> Result<f64> {
    if omegas.len() != t.k() {
        return Err(Error::DimensionMismatch {
            expected: t.k(),
            found: omegas.len(),
        });
    }
    let report = keller_maslov_check(t, hbar, 1e-9)?;
    if !report.passed {
        return Err(Error::Unquantized);
    }
    Ok(omegas
        .iter()
        .zip(&t.circle_radii)
        .map(|(w, r)| 0.5 * w * r * r)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScan {
    /// Values of `r²/ħ` at which the rule passed.
    pub passing_r2_over_hbar: Vec<f64>,
    /// Energies `ω r²/2` of the first passing levels, ascending.
    pub levels: Vec<f64>,
}

/// Scans `r² = k ħ / steps_per_hbar` for `k = 1..=r2_max_over_hbar·steps`
/// on a single circle of frequency `ω` and returns where `rule` passes.
pub fn scan_circle_levels(
    omega: f64,
    hbar: f64,
    r2_max_over_hbar: f64,
    steps_per_hbar: usize,
    rule: QuantizationRule,
    tol: f64,
) -> Result<SpectrumScan> {
    check_hbar(hbar)?;
    if !(omega > 0.0) || steps_per_hbar == 0 {
        return Err(Error::InvalidSpec("omega and scan resolution must be positive".into()));
    }
    let kmax = (r2_max_over_hbar * steps_per_hbar as f64).round() as usize;
    let mut passing = Vec::new();
    let mut levels = Vec::new();
    for k in 1..=kmax {
        let r2 = k as f64 * hbar / steps_per_hbar as f64;
        let t = TorusSpec::from_squared_radii(&[r2], 0)?;
        if quantization_check(&t, hbar, tol, rule)?.passed {
            passing.push(r2 / hbar);
            levels.push(0.5 * omega * r2);
        }
    }
    Ok(SpectrumScan {
        passing_r2_over_hbar: passing,
        levels,
    })
}

/// First `count` levels of a one-dimensional oscillator under `rule`:
/// `(N + ½)ħω` for Keller–Maslov, `Nħω` (`N ≥ 1`) for the area-only rule.
pub fn oscillator_spectrum(omega: f64, hbar: f64, count: usize, rule: QuantizationRule) -> Result<Vec<f64>> {
    check_hbar(hbar)?;
    if !(omega > 0.0) {
        return Err(Error::InvalidSpec("omega must be positive".into()));
    }
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let r2 = match rule {
            QuantizationRule::KellerMaslov => (2 * n + 1) as f64 * hbar,
            QuantizationRule::AreaOnly => (2 * n + 2) as f64 * hbar,
        };
        let t = TorusSpec::from_squared_radii(&[r2], 0)?;
        let report = quantization_check(&t, hbar, 1e-9, rule)?;
        if !report.passed {
            return Err(Error::Unquantized);
        }
        out.push(0.5 * omega * r2);
    }
    Ok(out)
}
