use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use symquant::capacity::{
    ball_volume, ellipsoid_capacity, ground_energy, keller_maslov_check, oscillator_levels, oscillator_spectrum,
    shadow_areas, EllipsoidSpec, Plane, QuantizationRule, ShadowOptions, SymplectomorphismSpec, TorusSpec,
};
use symquant::flow::{integrate, HamiltonianSpec};
use symquant::leray::{deck_act, inert, leray_index, maslov_loop_index, LagrangianLift, LagrangianPath};
use symquant::symplectic::{random_lagrangian_frame, souriau_w, symplectic_defect, LagrangianFrame, PhasePoint, C64};
use symquant::waveform::{
    self, morse_index, oscillator_spectrum_from_waveforms, van_vleck_propagate, Density, InitialData, Waveform,
};
use symquant::Error;

use crate::config::{
    CapacityParams, EvolveParams, IndexParams, NonsqueezeParams, Oracle, PointSpec, QuantizeParams,
};

/// Failure with its exit code: 2 for bad input, 3 for numerical trouble.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Self {
                code: 3,
                kind: "numerical",
                message: e.to_string(),
            }
        } else {
            Self::config(e.to_string())
        }
    }
}

pub type Outcome = std::result::Result<(Value, Table), Failure>;

/// Plain rows for CSV output.
#[derive(Debug, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Serialize)]
struct Complex {
    re: f64,
    im: f64,
}

fn cx(z: C64) -> Complex {
    Complex { re: z.re, im: z.im }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn floor_formula(t: f64, tp: f64) -> i64 {
    ((t - tp) / PI).floor() as i64 + 1
}

pub fn run_index(p: &IndexParams, seed: u64) -> Outcome {
    let mut results = serde_json::Map::new();
    let mut grid_table = Table::new(&["theta", "theta_prime", "index", "closed_form", "matches"]);
    if let Some(g) = &p.grid {
        let nodes = g.nodes();
        if nodes.is_empty() {
            return Err(Failure::config("index grid needs at least one point"));
        }
        let mut rows = Vec::new();
        let mut mismatches = 0;
        for &t in &nodes {
            for &tp in &nodes {
                let m = leray_index(&LagrangianLift::from_angles(&[t]), &LagrangianLift::from_angles(&[tp]))?;
                let closed = floor_formula(t, tp);
                mismatches += usize::from(m != closed);
                rows.push(json!({"theta": t, "theta_prime": tp, "index": m, "closed_form": closed}));
                grid_table.push(vec![s(t), s(tp), s(m), s(closed), s(m == closed)]);
            }
        }
        results.insert("grid".into(), json!({"rows": rows, "mismatches": mismatches}));
    }

    let mut loop_table = Table::new(&["loop", "winding", "index", "expected"]);
    let mut loops = Vec::new();
    for (k, l) in p.loops.iter().enumerate() {
        let torus = TorusSpec::new(l.radii.clone(), 0)?;
        if l.winding.len() != torus.k() {
            return Err(Failure::config(format!("loop {k}: winding length must equal the number of radii")));
        }
        let index = if l.winding.iter().all(|&m| m == 0) {
            0
        } else {
            let path = LagrangianPath::sample_adaptive(
                |t| {
                    let angles: Vec<f64> = l.winding.iter().map(|&m| TAU * m as f64 * t).collect();
                    LagrangianFrame::from_angles(&angles)
                },
                0.0,
                1.0,
                16,
            )?;
            maslov_loop_index(&path)?
        };
        let expected = 2 * l.winding.iter().sum::<i64>();
        loops.push(json!({"radii": l.radii, "winding": l.winding, "index": index, "expected": expected}));
        loop_table.push(vec![s(k), format!("{:?}", l.winding), s(index), s(expected)]);
    }
    results.insert("loops".into(), Value::Array(loops));

    let mut pairs = Vec::new();
    for (k, pr) in p.pairs.iter().enumerate() {
        if pr.a.len() != pr.b.len() || pr.a.is_empty() {
            return Err(Failure::config(format!("pair {k}: angle lists must be non-empty and equally long")));
        }
        let a = deck_act(pr.shift_a, &LagrangianLift::from_angles(&pr.a));
        let b = deck_act(pr.shift_b, &LagrangianLift::from_angles(&pr.b));
        pairs.push(json!({"a": pr.a, "b": pr.b, "shift_a": pr.shift_a, "shift_b": pr.shift_b, "index": leray_index(&a, &b)?}));
    }
    results.insert("pairs".into(), Value::Array(pairs));

    let mut reports = Vec::new();
    for &n in &p.identity_dims {
        if n == 0 {
            return Err(Failure::config("identity dimensions must be positive"));
        }
        reports.push(identity_report(n, p.identity_trials, seed)?);
    }
    results.insert("identities".into(), Value::Array(reports));

    let table = if p.grid.is_some() { grid_table } else { loop_table };
    Ok((Value::Object(results), table))
}

fn random_lift(n: usize, rng: &mut ChaCha8Rng) -> Result<(LagrangianFrame, LagrangianLift), Error> {
    let f = random_lagrangian_frame(n, rng);
    let lift = LagrangianLift::with_principal_alpha(souriau_w(&f)?);
    let k = rng.random_range(-2..=2);
    Ok((f, deck_act(k, &lift)))
}

/// Cocycle, diagonal and deck-shift identities on random lifted planes.
fn identity_report(n: usize, trials: usize, seed: u64) -> Result<Value, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    let (mut cocycle, mut diagonal, mut shifts) = (0usize, 0usize, 0usize);
    for _ in 0..trials {
        let (fa, a) = random_lift(n, &mut rng)?;
        let (fb, b) = random_lift(n, &mut rng)?;
        let (fc, c) = random_lift(n, &mut rng)?;
        let mab = leray_index(&a, &b)?;
        if mab - leray_index(&a, &c)? + leray_index(&b, &c)? != inert(&fa, &fb, &fc)? {
            cocycle += 1;
        }
        if leray_index(&a, &a)? != n as i64 {
            diagonal += 1;
        }
        let (r, rp) = (rng.random_range(-3..=3), rng.random_range(-3..=3));
        if leray_index(&deck_act(r, &a), &deck_act(rp, &b))? != mab + r - rp {
            shifts += 1;
        }
    }
    Ok(json!({
        "n": n,
        "trials": trials,
        "cocycle_failures": cocycle,
        "diagonal_failures": diagonal,
        "shift_failures": shifts,
    }))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn run_capacity(p: &CapacityParams, tol: f64) -> Outcome {
    let mut table = Table::new(&["kind", "radii", "capacity", "volume", "consistent"]);
    let mut ellipsoids = Vec::new();
    for radii in &p.ellipsoids {
        let e = EllipsoidSpec::centered(radii)?;
        let cap = ellipsoid_capacity(&e);
        let n = radii.len();
        let volume = PI.powi(n as i32) * radii.iter().map(|r| r * r).product::<f64>() / factorial(n);
        ellipsoids.push(json!({"radii": e.radii(), "capacity": cap, "volume": volume}));
        table.push(vec![s("ellipsoid"), format!("{:?}", e.radii()), s(cap), s(volume), s("")]);
    }
    let mut balls = Vec::new();
    for b in &p.balls {
        let e = EllipsoidSpec::ball(b.n, b.r)?;
        let cap = ellipsoid_capacity(&e);
        let volume = ball_volume(b.n, b.r)?;
        let from_capacity = cap.powi(b.n as i32) / factorial(b.n);
        let consistent = (volume - from_capacity).abs() <= tol * volume;
        balls.push(json!({
            "n": b.n,
            "r": b.r,
            "capacity": cap,
            "volume": volume,
            "volume_from_capacity": from_capacity,
            "consistent": consistent,
        }));
        table.push(vec![s("ball"), format!("{:?}", vec![b.r; b.n]), s(cap), s(volume), s(consistent)]);
    }
    Ok((json!({"ellipsoids": ellipsoids, "balls": balls}), table))
}

pub fn run_nonsqueeze(p: &NonsqueezeParams, seed: u64) -> Outcome {
    if p.n == 0 || !(p.r > 0.0) || p.grid_res == 0 || p.samples == 0 {
        return Err(Failure::config("n, r, grid_res and samples must be positive"));
    }
    if !(0.0..1.0).contains(&p.margin) {
        return Err(Failure::config("margin must lie in [0, 1)"));
    }
    let reference = PI * p.r * p.r;
    let conjugate: Vec<Plane> = (0..p.n).map(Plane::conjugate).collect();
    let mut planes = conjugate.clone();
    if p.control {
        for i in 0..p.n {
            for j in 0..p.n {
                if i != j {
                    planes.push(Plane { x: i, p: j });
                }
            }
        }
    }
    let opts = |sample_seed: u64| ShadowOptions {
        grid_res: p.grid_res,
        samples: p.samples,
        seed: sample_seed,
        sampling: p.sampling,
        fill_holes: p.fill_holes,
        ..ShadowOptions::default()
    };
    let mut table = Table::new(&["map", "x_index", "p_index", "conjugate", "area", "ratio", "passed"]);

    let identity = if p.identity {
        let est = shadow_areas(&SymplectomorphismSpec::identity(p.n), p.r, &conjugate, &opts(seed))?;
        let ratios: Vec<f64> = est.iter().map(|e| e.area / reference).collect();
        let within = ratios.iter().all(|q| (q - 1.0).abs() <= 0.01);
        Some(json!({"estimates": est, "ratios": ratios, "within_one_percent": within}))
    } else {
        None
    };

    let mut map_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = Vec::with_capacity(p.maps);
    let mut min_conjugate = f64::INFINITY;
    let mut min_control = f64::INFINITY;
    for k in 0..p.maps {
        let f = SymplectomorphismSpec::random(p.n, &mut map_rng);
        let sample_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64 + 1);
        let est = shadow_areas(&f, p.r, &planes, &opts(sample_seed))?;
        for e in &est {
            let conj = e.x_index == e.plane_index;
            let ratio = e.area / reference;
            let passed = ratio >= 1.0 - p.margin;
            if conj {
                min_conjugate = min_conjugate.min(e.area);
            } else {
                min_control = min_control.min(e.area);
            }
            table.push(vec![s(k), s(e.x_index), s(e.plane_index), s(conj), s(e.area), s(ratio), s(passed)]);
        }
        maps.push(json!({"map": k, "stages": f.stages().len(), "sample_seed": sample_seed, "estimates": est}));
    }
    let bound = reference * (1.0 - p.margin);
    let finite = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
    Ok((
        json!({
            "reference_area": reference,
            "bound": bound,
            "identity": identity,
            "maps": maps,
            "min_conjugate_area": finite(min_conjugate),
            "min_control_area": finite(min_control),
            "passed": p.maps == 0 || min_conjugate >= bound,
        }),
        table,
    ))
}

pub fn run_quantize(p: &QuantizeParams, tol: f64) -> Outcome {
    let hbar = p.hbar;
    let mut tori = Vec::new();
    let mut torus_table = Table::new(&["torus", "generator", "action", "maslov", "residual", "passed"]);
    for (k, t) in p.tori.iter().enumerate() {
        let squares: Vec<f64> = t.r2_over_hbar.iter().map(|v| v * hbar).collect();
        let spec = TorusSpec::from_squared_radii(&squares, t.flat_dims)?;
        let report = keller_maslov_check(&spec, hbar, tol)?;
        for g in &report.generators {
            torus_table.push(vec![s(k), s(g.index), s(g.action), s(g.maslov), s(g.residual), s(g.passed)]);
        }
        let level = match (&t.omegas, report.passed) {
            (Some(w), true) => Some(oscillator_levels(&spec, w, hbar)?),
            _ => None,
        };
        tori.push(json!({"r2_over_hbar": t.r2_over_hbar, "report": report, "energy": level}));
    }
    let ground = match &p.ground {
        Some(w) => Some(json!({"omegas": w, "energy": ground_energy(w, hbar)?})),
        None => None,
    };
    let mut spectrum_table = Table::new(&["n", "keller_maslov", "closed_form", "area_only"]);
    let spectrum = match &p.spectrum {
        Some(sp) => {
            let levels = oscillator_spectrum_from_waveforms(hbar, sp.n_max, QuantizationRule::KellerMaslov)?;
            let closed = oscillator_spectrum(1.0, hbar, sp.n_max + 1, QuantizationRule::KellerMaslov)?;
            let contrast = if sp.contrast {
                Some(oscillator_spectrum_from_waveforms(hbar, sp.n_max, QuantizationRule::AreaOnly)?)
            } else {
                None
            };
            for (n, (l, c)) in levels.iter().zip(&closed).enumerate() {
                let area = contrast.as_ref().map(|v| s(v[n])).unwrap_or_default();
                spectrum_table.push(vec![s(n), s(l), s(c), area]);
            }
            Some(json!({"levels": levels, "closed_form": closed, "area_only": contrast}))
        }
        None => None,
    };
    let table = if p.spectrum.is_some() { spectrum_table } else { torus_table };
    Ok((json!({"hbar": hbar, "tori": tori, "ground": ground, "spectrum": spectrum}), table))
}

fn mehler(x: f64, tau: f64, c: C64, b: C64, hbar: f64) -> C64 {
    let alpha = C64::new(1.0 / tau.tan(), 0.0) + c;
    let beta = b - x / tau.sin();
    let i = C64::new(0.0, 1.0);
    (i / hbar * (x * x * tau.cos() / (2.0 * tau.sin()) - beta * beta / (2.0 * alpha))).exp()
        / (C64::new(tau.cos(), 0.0) + c * tau.sin()).sqrt()
}

fn free(x: f64, tau: f64, c: C64, b: C64, hbar: f64) -> C64 {
    let alpha = C64::new(1.0 / tau, 0.0) + c;
    let beta = b - x / tau;
    let i = C64::new(0.0, 1.0);
    (i / hbar * (x * x / (2.0 * tau) - beta * beta / (2.0 * alpha))).exp() / (1.0 + c * tau).sqrt()
}

fn point(p: &PointSpec) -> Result<PhasePoint, Error> {
    PhasePoint::from_slices(&p.x, &p.p)
}

pub fn run_evolve(p: &EvolveParams) -> Outcome {
    let h: &HamiltonianSpec = &p.hamiltonian;
    h.validate()?;
    let xs = p.grid.nodes();
    if xs.is_empty() {
        return Err(Failure::config("evolve needs a non-empty position grid"));
    }
    let (t0, t1) = (p.t_start, p.t_end);
    let mut results = serde_json::Map::new();
    let mut headers = vec!["x"];
    let mut columns: Vec<Vec<String>> = vec![xs.iter().map(s).collect()];

    if let Some(data) = &p.initial {
        let grid: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let values = van_vleck_propagate(data, h, t0, t1, &grid, p.hbar, p.steps)?;
        headers.extend(["re", "im"]);
        columns.push(values.iter().map(|v| s(v.re)).collect());
        columns.push(values.iter().map(|v| s(v.im)).collect());
        let mut entry = json!({"values": values.iter().map(|&v| cx(v)).collect::<Vec<_>>()});
        if let Some(oracle) = p.oracle {
            let g = match data {
                InitialData::Gaussian(g) if g.dim() == 1 => g,
                _ => return Err(Failure::config("oracles need one-dimensional Gaussian data")),
            };
            let (c, b) = (g.c()[(0, 0)], g.b()[0]);
            let tau = t1 - t0;
            let want: Vec<C64> = xs
                .iter()
                .map(|&x| match oracle {
                    _ if tau == 0.0 => g.value(&[x], p.hbar),
                    Oracle::Mehler => mehler(x, tau, c, b, p.hbar),
                    Oracle::Free => free(x, tau, c, b, p.hbar),
                })
                .collect();
            let num: f64 = values.iter().zip(&want).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = want.iter().map(|v| v.norm_sqr()).sum();
            headers.extend(["oracle_re", "oracle_im"]);
            columns.push(want.iter().map(|v| s(v.re)).collect());
            columns.push(want.iter().map(|v| s(v.im)).collect());
            entry["oracle"] = json!(oracle);
            entry["relative_l2_error"] = json!((num / den).sqrt());
        }
        results.insert("propagation".into(), entry);
    }

    if let Some(start) = &p.trajectory {
        let traj = integrate(h, &point(start)?, t0, t1, p.steps)?;
        let samples: Vec<Value> = traj
            .times
            .iter()
            .zip(&traj.points)
            .zip(&traj.action)
            .map(|((t, z), a)| json!({"t": t, "x": z.x.as_slice(), "p": z.p.as_slice(), "action": a}))
            .collect();
        results.insert(
            "trajectory".into(),
            json!({
                "samples": samples,
                "transported_phase": traj.total_action(),
                "symplectic_defect": symplectic_defect(traj.last_jacobian())?,
            }),
        );
    }

    if let Some(start) = &p.morse {
        let mu = morse_index(h, &start.x, &start.p, t0, t1, p.steps)?;
        results.insert("morse".into(), json!({"count": mu}));
    }

    if let Some(w) = &p.waveform {
        let density = match &w.density {
            Some(d) => d.clone(),
            None => Density::constant(1.0)?,
        };
        let psi = Waveform::new(w.manifold.clone(), density, p.hbar)?.evolve(h, t0, t1, p.steps)?;
        let mut opts = waveform::ShadowOptions::default();
        if let Some(m) = w.scan_points {
            opts.scan_points = m;
        }
        let sh = waveform::shadow(&psi, &xs, &opts)?;
        headers.extend(["shadow_re", "shadow_im", "branches", "caustic"]);
        columns.push(sh.values.iter().map(|v| s(v.re)).collect());
        columns.push(sh.values.iter().map(|v| s(v.im)).collect());
        columns.push(sh.branch_count.iter().map(s).collect());
        columns.push(sh.caustic.iter().map(s).collect());
        let values: Vec<Value> = sh
            .values
            .iter()
            .map(|&v| if v.re.is_finite() { json!(cx(v)) } else { Value::Null })
            .collect();
        results.insert(
            "shadow".into(),
            json!({
                "values": values,
                "branch_count": sh.branch_count,
                "branch_indices": sh.branch_indices,
                "caustic": sh.caustic,
            }),
        );
    }

    let mut table = Table::new(&headers);
    for k in 0..xs.len() {
        table.push(columns.iter().map(|c| c[k].clone()).collect());
    }
    Ok((Value::Object(results), table))
}
