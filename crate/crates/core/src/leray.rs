//! The universal cover of the Lagrangian Grassmannian, path lifting, the
//! Leray index and the Maslov index of loops.
//!
//! A point of the cover is a pair `(w, α)` with `det w = e^{iα}`. The deck
//! group acts by `α ↦ α + 2kπ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::symplectic::{
    complex_eigenvalues, intersection_dim, largest_gap_midpoint, random_unitary, signature,
    souriau_w, LagrangianFrame, SouriauPoint, C64, DEFAULT_TOL,
};

/// Tolerance on `|det w - e^{iα}|`.
pub const LIFT_TOL: f64 = 1e-8;
/// Allowed distance of an index formula from the nearest integer.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Target per-step change of `arg det w` for adaptive sampling.
pub const REFINE_STEP: f64 = PI / 4.0;
/// A sampled step whose `arg det w` jumps this much is rejected as too coarse.
pub const MAX_STEP: f64 = 0.75 * PI;

/// Largest Frobenius step of `w` accepted by adaptive sampling.
pub const MAX_CHART_STEP: f64 = 0.5;

const AUX_SEED: u64 = 0x4c65_7261_7900_0001;
const AUX_MIN_GAP: f64 = 1e-3;
const AUX_RETRIES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianLift {
    pub w: SouriauPoint,
    pub alpha: f64,
}

impl LagrangianLift {
    pub fn new(w: SouriauPoint, alpha: f64) -> Result<Self> {
        let err = (w.det() - C64::from_polar(1.0, alpha)).norm();
        if !alpha.is_finite() || err > LIFT_TOL {
            return Err(Error::InvalidLift(err));
        }
        Ok(Self { w, alpha })
    }

    pub fn from_frame(frame: &LagrangianFrame, alpha: f64) -> Result<Self> {
        Self::new(souriau_w(frame)?, alpha)
    }

    /// Lift with `α = arg det w ∈ [0, 2π)`.
    pub fn with_principal_alpha(w: SouriauPoint) -> Self {
        let alpha = w.det().arg().rem_euclid(TAU);
        Self { w, alpha }
    }

    /// Product of lines `ℓ(θ_j)` lifted to `(diag e^{2iθ_j}, 2 Σ θ_j)`.
    pub fn from_angles(thetas: &[f64]) -> Self {
        let n = thetas.len();
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            thetas.iter().map(|&t| C64::from_polar(1.0, 2.0 * t)),
        ));
        Self {
            w: SouriauPoint { w },
            alpha: 2.0 * thetas.iter().sum::<f64>(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn frame(&self) -> LagrangianFrame {
        self.w.frame()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeckAction {
    pub k: i64,
}

/// `(w, α) ↦ (w, α + 2kπ)`.
pub fn deck_act(k: i64, lift: &LagrangianLift) -> LagrangianLift {
    LagrangianLift {
        w: lift.w.clone(),
        alpha: lift.alpha + TAU * k as f64,
    }
}

impl DeckAction {
    pub fn apply(&self, lift: &LagrangianLift) -> LagrangianLift {
        deck_act(self.k, lift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianPath {
    pub samples: Vec<LagrangianFrame>,
    pub timestamps: Vec<f64>,
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

fn det_arg(w: &SouriauPoint) -> f64 {
    w.det().arg()
}

impl LagrangianPath {
    pub fn new(samples: Vec<LagrangianFrame>, timestamps: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.len() != timestamps.len() {
            return Err(Error::InvalidSpec(format!(
                "{} samples against {} timestamps",
                samples.len(),
                timestamps.len()
            )));
        }
        let n = samples[0].dim();
        if let Some(f) = samples.iter().find(|f| f.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.dim(),
            });
        }
        if timestamps.windows(2).any(|t| !(t[1] > t[0])) {
            return Err(Error::InvalidSpec("timestamps must increase".into()));
        }
        Ok(Self {
            samples,
            timestamps,
        })
    }

    /// Samples `f` on `[t0, t1]` starting from `initial` uniform points and
    /// bisecting until every step changes `arg det w` by less than π/4 and
    /// the midpoint agrees with the chord.
    pub fn sample_adaptive<F>(f: F, t0: f64, t1: f64, initial: usize) -> Result<Self>
    where
        F: Fn(f64) -> LagrangianFrame,
    {
        if !(t1 > t0) {
            return Err(Error::InvalidSpec("empty parameter interval".into()));
        }
        let initial = initial.max(2);
        let eval = |t: f64| -> Result<(LagrangianFrame, f64, SouriauPoint)> {
            let fr = f(t);
            let w = souriau_w(&fr)?;
            let a = det_arg(&w);
            Ok((fr, a, w))
        };
        let mut samples = Vec::new();
        let mut times = Vec::new();
        let grid: Vec<f64> = (0..initial)
            .map(|k| t0 + (t1 - t0) * k as f64 / (initial - 1) as f64)
            .collect();
        let mut left = eval(grid[0])?;
        samples.push(left.0.clone());
        times.push(grid[0]);
        for &tr in &grid[1..] {
            let right = eval(tr)?;
            let mut stack = vec![(*times.last().unwrap(), left.clone(), tr, right, 0u32)];
            // depth-first refinement keeps output ordered
            while let Some((ta, a, tb, b, depth)) = stack.pop() {
                let aa = a.1;
                let d = wrap(b.1 - aa);
                // a small chart step rules out aliasing of arg det w
                let far = (&b.2.w - &a.2.w).norm() >= MAX_CHART_STEP;
                let tm = 0.5 * (ta + tb);
                let split = if depth >= 48 {
                    None
                } else {
                    let m = eval(tm)?;
                    let d1 = wrap(m.1 - aa);
                    let d2 = wrap(b.1 - m.1);
                    if far || d.abs() >= REFINE_STEP || (d1 + d2 - d).abs() > 1e-9 {
                        Some(m)
                    } else {
                        None
                    }
                };
                match split {
                    Some(m) => {
                        stack.push((tm, m.clone(), tb, b, depth + 1));
                        stack.push((ta, a, tm, m, depth + 1));
                    }
                    None => {
                        if far || d.abs() >= REFINE_STEP {
                            return Err(Error::Refinement {
                                index: samples.len(),
                                delta: d.abs(),
                            });
                        }
                        samples.push(b.0.clone());
                        times.push(tb);
                        left = b;
                    }
                }
            }
        }
        Self::new(samples, times)
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Lifts a path of planes to the universal cover, starting at `alpha0`.
pub fn lift_path(path: &LagrangianPath, alpha0: f64) -> Result<Vec<LagrangianLift>> {
    let ws = path
        .samples
        .iter()
        .map(souriau_w)
        .collect::<Result<Vec<_>>>()?;
    lift_souriau_path(ws, alpha0)
}

/// Same as [`lift_path`] for a sequence of chart values.
pub fn lift_souriau_path(ws: Vec<SouriauPoint>, alpha0: f64) -> Result<Vec<LagrangianLift>> {
    let mut out: Vec<LagrangianLift> = Vec::with_capacity(ws.len());
    let mut prev_arg = 0.0;
    for (index, w) in ws.into_iter().enumerate() {
        let a = det_arg(&w);
        let alpha = match out.last() {
            None => {
                let err = (w.det() - C64::from_polar(1.0, alpha0)).norm();
                if err > LIFT_TOL {
                    return Err(Error::InvalidLift(err));
                }
                alpha0
            }
            Some(last) => {
                let d = wrap(a - prev_arg);
                if d.abs() >= MAX_STEP {
                    return Err(Error::Refinement {
                        index,
                        delta: d.abs(),
                    });
                }
                last.alpha + d
            }
        };
        prev_arg = a;
        out.push(LagrangianLift { w, alpha });
    }
    Ok(out)
}

/// `Tr Log M` with the principal branch, `Σ_j (ln|λ_j| + i arg λ_j)`.
pub fn principal_log_trace(m: &DMatrix<C64>, tol: f64) -> Result<C64> {
    let mut acc = C64::new(0.0, 0.0);
    for l in complex_eigenvalues(m) {
        if l.re < 0.0 && l.im.abs() <= tol * l.norm().max(1.0) {
            return Err(Error::BranchCut { re: l.re, im: l.im });
        }
        if l.norm() == 0.0 {
            return Err(Error::BranchCut { re: 0.0, im: 0.0 });
        }
        acc += l.ln();
    }
    Ok(acc)
}

fn round_checked(v: f64) -> Result<i64> {
    let r = v.round();
    let residual = (v - r).abs();
    if residual > INTEGRALITY_TOL || !v.is_finite() {
        return Err(Error::Integrality { value: v, residual });
    }
    Ok(r as i64)
}

fn check_dims(a: &LagrangianLift, b: &LagrangianLift) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `m(a, b) = (α - α' + i Tr Log(-w w'^{-1}))/2π + n/2` for transversal planes.
pub fn leray_index_transversal(a: &LagrangianLift, b: &LagrangianLift) -> Result<i64> {
    check_dims(a, b)?;
    if intersection_dim(&a.w, &b.w, DEFAULT_TOL) != 0 {
        return Err(Error::NotTransversal);
    }
    let minus = -a.w.relative(&b.w);
    let log_tr = principal_log_trace(&minus, DEFAULT_TOL)?;
    let i_log = C64::new(0.0, 1.0) * log_tr;
    let n = a.dim() as f64;
    round_checked((a.alpha - b.alpha + i_log.re) / TAU + 0.5 * n)
}

/// `∂dim(ℓ, ℓ', ℓ'') = dim(ℓ∩ℓ') - dim(ℓ∩ℓ'') + dim(ℓ'∩ℓ'')`.
pub fn coboundary_dim(a: &SouriauPoint, b: &SouriauPoint, c: &SouriauPoint) -> i64 {
    intersection_dim(a, b, DEFAULT_TOL) as i64 - intersection_dim(a, c, DEFAULT_TOL) as i64
        + intersection_dim(b, c, DEFAULT_TOL) as i64
}

/// Index of inertia `½(σ(ℓ, ℓ', ℓ'') + n + ∂dim(ℓ, ℓ', ℓ''))`.
pub fn inert(a: &LagrangianFrame, b: &LagrangianFrame, c: &LagrangianFrame) -> Result<i64> {
    let sigma = signature(a, b, c, DEFAULT_TOL)?;
    let (wa, wb, wc) = (souriau_w(a)?, souriau_w(b)?, souriau_w(c)?);
    let total = sigma + a.dim() as i64 + coboundary_dim(&wa, &wb, &wc);
    if total.rem_euclid(2) != 0 {
        return Err(Error::Integrality {
            value: total as f64 / 2.0,
            residual: 0.5,
        });
    }
    Ok(total / 2)
}

fn min_gap(w: &SouriauPoint, target: C64) -> f64 {
    complex_eigenvalues(&w.w)
        .into_iter()
        .map(|l| (l - target).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Scalar rotation `e^{iφ} R^n_p` of the vertical plane whose chart value
/// `e^{2iφ} I` is as far as possible from the spectra of both arguments.
fn rotation_auxiliary(a: &SouriauPoint, b: &SouriauPoint) -> LagrangianLift {
    let n = a.dim();
    let args: Vec<f64> = complex_eigenvalues(&a.w)
        .into_iter()
        .chain(complex_eigenvalues(&b.w))
        .map(|l| l.arg())
        .collect();
    let two_phi = largest_gap_midpoint(&args);
    let w = DMatrix::<C64>::identity(n, n) * C64::from_polar(1.0, two_phi);
    LagrangianLift::with_principal_alpha(SouriauPoint { w })
}

/// Random plane `u(R^n_p)` transversal to both arguments.
fn random_auxiliary<R: Rng + ?Sized>(
    a: &SouriauPoint,
    b: &SouriauPoint,
    rng: &mut R,
) -> Result<LagrangianLift> {
    let n = a.dim();
    for _ in 0..AUX_RETRIES {
        let u = random_unitary(n, rng);
        let w = SouriauPoint {
            w: &u * u.transpose(),
        };
        // eigenvalues of w_a w* near 1 are exactly the non-transversal directions
        let near = |x: &SouriauPoint| min_gap(&SouriauPoint { w: x.relative(&w) }, C64::new(1.0, 0.0));
        if near(a) >= AUX_MIN_GAP && near(b) >= AUX_MIN_GAP {
            return Ok(LagrangianLift::with_principal_alpha(w));
        }
    }
    Err(Error::NoAuxiliaryPlane)
}

fn leray_via(a: &LagrangianLift, b: &LagrangianLift, c: &LagrangianLift) -> Result<i64> {
    let fa = a.frame();
    let fb = b.frame();
    let fc = c.frame();
    Ok(leray_index_transversal(a, c)? - leray_index_transversal(b, c)? + inert(&fa, &fb, &fc)?)
}

/// Leray index for arbitrary pairs, using a fixed internal seed for the
/// random auxiliary plane.
pub fn leray_index(a: &LagrangianLift, b: &LagrangianLift) -> Result<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(AUX_SEED);
    leray_index_with_rng(a, b, &mut rng)
}

/// Leray index for arbitrary pairs. Non-transversal pairs go through
/// `m(a,c) - m(b,c) + Inert(a,b,c)` with two independent auxiliary planes
/// `c`; the two answers must agree.
pub fn leray_index_with_rng<R: Rng + ?Sized>(
    a: &LagrangianLift,
    b: &LagrangianLift,
    rng: &mut R,
) -> Result<i64> {
    check_dims(a, b)?;
    if intersection_dim(&a.w, &b.w, DEFAULT_TOL) == 0 {
        return leray_index_transversal(a, b);
    }
    let first = leray_via(a, b, &rotation_auxiliary(&a.w, &b.w))?;
    let second = leray_via(a, b, &random_auxiliary(&a.w, &b.w, rng)?)?;
    if first != second {
        return Err(Error::AuxiliaryMismatch { first, second });
    }
    Ok(first)
}

/// Maslov index of a closed loop, `(α(end) - α(start)) / 2π` along the lift.
pub fn maslov_loop_index(path: &LagrangianPath) -> Result<i64> {
    let first = souriau_w(&path.samples[0])?;
    let last = souriau_w(path.samples.last().unwrap())?;
    if intersection_dim(&first, &last, DEFAULT_TOL) != first.dim() {
        return Err(Error::NotClosed);
    }
    let lifts = lift_path(path, det_arg(&first))?;
    round_checked((lifts.last().unwrap().alpha - lifts[0].alpha) / TAU)
}

/// `m(ℓ∞(ž), base)` where `ℓ∞(ž)` is the endpoint of the lifted tangent path.
pub fn argument_index(tangent_lift_path: &[LagrangianLift], base: &LagrangianLift) -> Result<i64> {
    let end = tangent_lift_path
        .last()
        .ok_or_else(|| Error::InvalidSpec("empty tangent path".into()))?;
    leray_index(end, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{random_lagrangian_frame, SymplecticMatrix};

    fn line(theta: f64) -> LagrangianLift {
        LagrangianLift::from_angles(&[theta])
    }

    fn floor_formula(t: f64, tp: f64) -> i64 {
        ((t - tp) / PI).floor() as i64 + 1
    }

    #[test]
    fn lift_validation() {
        let w = souriau_w(&LagrangianFrame::vertical(1)).unwrap();
        assert!(LagrangianLift::new(w.clone(), 0.0).is_ok());
        assert!(LagrangianLift::new(w.clone(), TAU).is_ok());
        assert!(matches!(LagrangianLift::new(w, 1.0), Err(Error::InvalidLift(_))));
    }

    #[test]
    fn deck_action_examples() {
        let base = LagrangianLift::from_frame(&LagrangianFrame::vertical(1), 0.0).unwrap();
        assert_eq!(deck_act(0, &base), base);
        assert!((deck_act(1, &base).alpha - TAU).abs() < 1e-15);
        assert_eq!(deck_act(2, &deck_act(-2, &base)), base);
    }

    #[test]
    fn constant_path_lifts_to_constant() {
        let f = LagrangianFrame::vertical(1);
        let path = LagrangianPath::new(vec![f.clone(), f.clone(), f], vec![0.0, 0.5, 1.0]).unwrap();
        for l in lift_path(&path, 0.0).unwrap() {
            assert_eq!(l.alpha, 0.0);
            assert!((l.w.w[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_lifts_to_pi() {
        let path = LagrangianPath::sample_adaptive(
            |t| LagrangianFrame::from_angles(&[t]),
            0.0,
            PI / 2.0,
            2,
        )
        .unwrap();
        let lifts = lift_path(&path, 0.0).unwrap();
        assert!((lifts.last().unwrap().alpha - PI).abs() < 1e-12);
        assert!(path.len() >= 5);
    }

    #[test]
    fn coarse_path_is_rejected() {
        let frames = vec![LagrangianFrame::from_angles(&[0.0]), LagrangianFrame::from_angles(&[PI / 2.0 - 0.1])];
        let path = LagrangianPath::new(frames, vec![0.0, 1.0]).unwrap();
        assert!(matches!(lift_path(&path, 0.0), Err(Error::Refinement { .. })));
        let frames = vec![LagrangianFrame::from_angles(&[0.0]), LagrangianFrame::from_angles(&[0.2])];
        let path = LagrangianPath::new(frames, vec![0.0, 1.0]).unwrap();
        assert!(lift_path(&path, 0.0).is_ok());
    }

    #[test]
    fn wrong_initial_argument_is_rejected() {
        let path = LagrangianPath::new(vec![LagrangianFrame::vertical(1)], vec![0.0]).unwrap();
        assert!(matches!(lift_path(&path, 1.0), Err(Error::InvalidLift(_))));
    }

    fn circle_tangent(theta: f64) -> LagrangianFrame {
        // tangent to x = r cos θ, p = r sin θ is spanned by (-sin θ, cos θ)
        LagrangianFrame::from_angles(&[theta])
    }

    #[test]
    fn circle_loop_winds_twice() {
        let path = LagrangianPath::sample_adaptive(circle_tangent, 0.0, TAU, 8).unwrap();
        let lifts = lift_path(&path, 0.0).unwrap();
        assert!((lifts.last().unwrap().alpha - 2.0 * TAU).abs() < 1e-12);
        assert_eq!(maslov_loop_index(&path).unwrap(), 2);
    }

    #[test]
    fn torus_loop_index() {
        let mu = [1.0, 2.0];
        let path = LagrangianPath::sample_adaptive(
            |t| LagrangianFrame::from_angles(&[TAU * mu[0] * t, TAU * mu[1] * t]),
            0.0,
            1.0,
            4,
        )
        .unwrap();
        assert_eq!(maslov_loop_index(&path).unwrap(), 6);
        let back = LagrangianPath::sample_adaptive(
            |t| LagrangianFrame::from_angles(&[-TAU * t, 0.3]),
            0.0,
            1.0,
            4,
        )
        .unwrap();
        assert_eq!(maslov_loop_index(&back).unwrap(), -2);
    }

    #[test]
    fn constant_loop_has_zero_index() {
        let f = LagrangianFrame::from_angles(&[0.4, 1.0]);
        let path = LagrangianPath::new(vec![f.clone(), f], vec![0.0, 1.0]).unwrap();
        assert_eq!(maslov_loop_index(&path).unwrap(), 0);
    }

    #[test]
    fn open_loop_is_rejected() {
        let path = LagrangianPath::sample_adaptive(circle_tangent, 0.0, 1.0, 4).unwrap();
        assert_eq!(maslov_loop_index(&path), Err(Error::NotClosed));
    }

    #[test]
    fn principal_log_examples() {
        let id = DMatrix::<C64>::identity(3, 3);
        assert!(principal_log_trace(&id, DEFAULT_TOL).unwrap().norm() < 1e-15);
        let q = DMatrix::from_element(1, 1, C64::new(0.0, 1.0));
        let l = principal_log_trace(&q, DEFAULT_TOL).unwrap();
        assert!((l - C64::new(0.0, PI / 2.0)).norm() < 1e-15);
        let neg = DMatrix::from_element(1, 1, C64::new(-1.0, 0.0));
        assert!(matches!(principal_log_trace(&neg, DEFAULT_TOL), Err(Error::BranchCut { .. })));
    }

    /// `∫_{-∞}^0 Tr{(λI - M)^{-1} - (λ-1)^{-1} I} dλ` with `λ = -tan s`,
    /// composite 8-point Gauss-Legendre on `s ∈ [0, π/2]`.
    fn log_trace_quadrature(m: &DMatrix<C64>) -> C64 {
        const X: [f64; 4] = [
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        const W: [f64; 4] = [
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        let n = m.nrows();
        let id = DMatrix::<C64>::identity(n, n);
        let integrand = |s: f64| -> C64 {
            let lam = -s.tan();
            let sec2 = 1.0 + lam * lam;
            let r = (id.clone() * C64::new(lam, 0.0) - m).try_inverse().unwrap();
            (r.trace() - C64::new(n as f64 / (lam - 1.0), 0.0)) * sec2
        };
        let panels = 4000;
        let h = 0.5 * PI / panels as f64;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..panels {
            let c = (k as f64 + 0.5) * h;
            for (x, w) in X.iter().zip(W.iter()) {
                for sgn in [-1.0, 1.0] {
                    acc += integrand(c + sgn * x * 0.5 * h) * (w * 0.5 * h);
                }
            }
        }
        acc
    }

    #[test]
    fn principal_log_matches_resolvent_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut checked = 0;
        while checked < 100 {
            let f = random_lagrangian_frame(3, &mut rng);
            let w = souriau_w(&f).unwrap();
            if min_gap(&w, C64::new(-1.0, 0.0)) < 0.3 {
                continue;
            }
            let fast = principal_log_trace(&w.w, DEFAULT_TOL).unwrap();
            let oracle = log_trace_quadrature(&w.w);
            assert!((fast - oracle).norm() < 1e-6, "{fast} vs {oracle}");
            checked += 1;
        }
    }

    #[test]
    fn transversal_index_examples() {
        let b = line(0.0);
        assert_eq!(leray_index_transversal(&line(PI / 2.0), &b).unwrap(), 1);
        assert_eq!(leray_index_transversal(&line(-PI / 4.0), &b).unwrap(), 0);
        assert_eq!(leray_index_transversal(&b, &b), Err(Error::NotTransversal));
    }

    #[test]
    fn transversal_index_is_additive() {
        let pairs = [(0.3, -0.9), (2.0, 0.1), (-1.2, 1.4), (5.0, -2.5)];
        for &(t1, t2) in &pairs {
            for &(s1, s2) in &pairs {
                let a = LagrangianLift::from_angles(&[t1, s1]);
                let b = LagrangianLift::from_angles(&[t2, s2]);
                let sum = leray_index_transversal(&line(t1), &line(t2)).unwrap()
                    + leray_index_transversal(&line(s1), &line(s2)).unwrap();
                assert_eq!(leray_index_transversal(&a, &b).unwrap(), sum);
            }
        }
    }

    #[test]
    fn inert_examples() {
        let v = LagrangianFrame::vertical(1);
        assert_eq!(inert(&v, &v, &v).unwrap(), 1);
        let l = |t: f64| LagrangianFrame::from_angles(&[t]);
        let sigma = signature(&l(0.0), &l(PI / 3.0), &l(2.0 * PI / 3.0), DEFAULT_TOL).unwrap();
        assert_eq!(inert(&l(0.0), &l(PI / 3.0), &l(2.0 * PI / 3.0)).unwrap(), (sigma + 1) / 2);
        assert_eq!(inert(&l(0.0), &l(PI / 3.0), &l(2.0 * PI / 3.0)).unwrap(), 0);
    }

    #[test]
    fn n1_closed_form_dense_grid() {
        for i in 0..60 {
            for j in 0..60 {
                let t = -2.0 * PI + (i as f64 + 0.5) * 4.0 * PI / 60.0;
                let tp = -2.0 * PI + (j as f64 + 0.37) * 4.0 * PI / 60.0;
                assert_eq!(leray_index(&line(t), &line(tp)).unwrap(), floor_formula(t, tp), "{t} {tp}");
            }
        }
    }

    #[test]
    fn n1_degenerate_lattice() {
        for k in -4..=4 {
            for &tp in &[0.0, 0.7, -2.1] {
                let t = tp + k as f64 * PI;
                assert_eq!(leray_index(&line(t), &line(tp)).unwrap(), k + 1);
            }
        }
    }

    #[test]
    fn self_index_and_swap_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for n in 1..=3 {
            for trial in 0..30 {
                let a = LagrangianLift::with_principal_alpha(souriau_w(&random_lagrangian_frame(n, &mut rng)).unwrap());
                assert_eq!(leray_index(&a, &a).unwrap(), n as i64);
                let b = if trial % 3 == 0 {
                    a.clone()
                } else {
                    LagrangianLift::with_principal_alpha(souriau_w(&random_lagrangian_frame(n, &mut rng)).unwrap())
                };
                let d = intersection_dim(&a.w, &b.w, DEFAULT_TOL) as i64;
                assert_eq!(leray_index(&a, &b).unwrap() + leray_index(&b, &a).unwrap(), n as i64 + d);
            }
        }
    }

    #[test]
    fn sp_transport_preserves_index() {
        let a_lift = line(0.4);
        let b_lift = line(1.1);
        let mut h = DMatrix::zeros(2, 2);
        h[(0, 0)] = 0.7;
        h[(0, 1)] = -0.3;
        h[(1, 0)] = -0.3;
        h[(1, 1)] = 1.9;
        let transport = |lift: &LagrangianLift| {
            let f = lift.frame();
            let path = LagrangianPath::sample_adaptive(
                |tau| SymplecticMatrix::exp_hamiltonian(&h, tau).apply_frame(&f).unwrap(),
                0.0,
                3.0,
                8,
            )
            .unwrap();
            // the frame may differ from lift.frame() by an orthogonal change,
            // which leaves w unchanged
            lift_path(&path, lift.alpha).unwrap().pop().unwrap()
        };
        let (ta, tb) = (transport(&a_lift), transport(&b_lift));
        assert_eq!(leray_index(&ta, &tb).unwrap(), leray_index(&a_lift, &b_lift).unwrap());
    }
}
