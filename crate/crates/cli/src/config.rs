//! Parameter records for each subcommand. Every field has a default, so an
//! absent config file runs the documented reference experiment; unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};
use symquant::capacity::BallSampling;
use symquant::flow::HamiltonianSpec;
use symquant::waveform::{Density, GaussianData, InitialData, Manifold};

use nalgebra::{DMatrix, DVector};
use symquant::symplectic::C64;

/// Top-level document: `{"seed": .., "tol": .., "params": {..}}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile<P> {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub params: Option<P>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridSpec {
    /// Uniform nodes including both ends.
    pub fn nodes(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.lo],
            m => (0..m)
                .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (m - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub radii: Vec<f64>,
    pub winding: Vec<i64>,
}

/// Two products of lines `ℓ(θ_1) × … × ℓ(θ_n)` with deck shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub shift_a: i64,
    #[serde(default)]
    pub shift_b: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexParams {
    pub grid: Option<GridSpec>,
    pub loops: Vec<LoopSpec>,
    pub pairs: Vec<PairSpec>,
    /// Random triples per dimension for the identity report.
    pub identity_trials: usize,
    pub identity_dims: Vec<usize>,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            grid: Some(GridSpec {
                points: 16,
                lo: -6.0,
                hi: 6.0,
            }),
            loops: vec![LoopSpec {
                radii: vec![1.0],
                winding: vec![1],
            }],
            pairs: Vec::new(),
            identity_trials: 100,
            identity_dims: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub n: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityParams {
    pub ellipsoids: Vec<Vec<f64>>,
    pub balls: Vec<BallSpec>,
}

impl Default for CapacityParams {
    fn default() -> Self {
        Self {
            ellipsoids: vec![vec![1.0, 2.0]],
            balls: vec![BallSpec { n: 2, r: 1.0 }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonsqueezeParams {
    pub n: usize,
    pub r: f64,
    pub maps: usize,
    pub grid_res: usize,
    pub samples: usize,
    /// Relative margin below `πR²` still counted as a pass.
    pub margin: f64,
    pub identity: bool,
    /// Also measure the mixed planes `(x_i, p_j)`, `i ≠ j`.
    pub control: bool,
    pub sampling: BallSampling,
    pub fill_holes: bool,
}

impl Default for NonsqueezeParams {
    fn default() -> Self {
        Self {
            n: 2,
            r: 1.0,
            maps: 200,
            grid_res: 512,
            samples: 1_000_000,
            margin: 0.05,
            identity: true,
            control: true,
            sampling: BallSampling::Auto,
            fill_holes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusEntry {
    /// `r_j² / ħ` for each circle factor.
    pub r2_over_hbar: Vec<f64>,
    #[serde(default)]
    pub flat_dims: usize,
    #[serde(default)]
    pub omegas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    pub n_max: usize,
    #[serde(default)]
    pub contrast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeParams {
    pub hbar: f64,
    pub tori: Vec<TorusEntry>,
    pub ground: Option<Vec<f64>>,
    pub spectrum: Option<SpectrumSpec>,
}

impl Default for QuantizeParams {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            tori: vec![
                TorusEntry {
                    r2_over_hbar: vec![3.0],
                    flat_dims: 0,
                    omegas: Some(vec![1.0]),
                },
                TorusEntry {
                    r2_over_hbar: vec![2.0],
                    flat_dims: 0,
                    omegas: None,
                },
            ],
            ground: Some(vec![1.0, 2.0, 3.0]),
            spectrum: Some(SpectrumSpec {
                n_max: 2,
                contrast: true,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    /// Harmonic `ω = 1` propagator applied to one-dimensional Gaussian data.
    Mehler,
    /// Free-particle propagator applied to one-dimensional Gaussian data.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    pub manifold: Manifold,
    #[serde(default)]
    pub density: Option<Density>,
    #[serde(default)]
    pub scan_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveParams {
    pub hamiltonian: HamiltonianSpec,
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub hbar: f64,
    pub grid: GridSpec,
    pub initial: Option<InitialData>,
    pub oracle: Option<Oracle>,
    pub trajectory: Option<PointSpec>,
    pub morse: Option<PointSpec>,
    pub waveform: Option<WaveSpec>,
}

impl Default for EvolveParams {
    fn default() -> Self {
        let c = DMatrix::from_element(1, 1, C64::new(0.0, 1.0));
        let b = DVector::from_element(1, C64::new(0.0, 0.0));
        Self {
            hamiltonian: HamiltonianSpec::harmonic(&[1.0]),
            t_start: 0.0,
            t_end: 0.3,
            steps: 64,
            hbar: 1.0,
            grid: GridSpec {
                points: 1024,
                lo: -6.0,
                hi: 6.0,
            },
            initial: Some(InitialData::Gaussian(
                GaussianData::new(&c, &b).expect("static data is valid"),
            )),
            oracle: Some(Oracle::Mehler),
            trajectory: None,
            morse: None,
            waveform: None,
        }
    }
}
