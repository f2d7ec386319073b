//! Sparse multivariate polynomials used for potentials, gauge fields and
//! gradient-graph phases.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

fn ipow(x: f64, k: u32) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        4 => {
            let x2 = x * x;
            x2 * x2
        }
        _ => x.powi(k as i32),
    }
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    found: t.powers.len(),
                });
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidSpec("non-finite polynomial coefficient".into()));
            }
        }
        Ok(Self { nvars, terms })
    }

    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: Vec::new() }
    }

    /// `Σ_k c_k x_k^2 / 2`.
    pub fn diagonal_quadratic(coeffs: &[f64]) -> Self {
        let nvars = coeffs.len();
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut powers = vec![0; nvars];
                powers[k] = 2;
                Monomial { coeff: 0.5 * c, powers }
            })
            .collect();
        Self { nvars, terms }
    }

    /// Random polynomial containing every monomial of total degree
    /// `1..=max_degree`, coefficients uniform in `[-amplitude, amplitude]`.
    pub fn random<R: Rng + ?Sized>(nvars: usize, max_degree: u32, amplitude: f64, rng: &mut R) -> Self {
        let mut terms = Vec::new();
        for powers in exponents_up_to(nvars, max_degree) {
            if powers.iter().sum::<u32>() == 0 {
                continue;
            }
            terms.push(Monomial {
                coeff: rng.random_range(-amplitude..=amplitude),
                powers,
            });
        }
        Self { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Whether any monomial depends on variable `k`.
    pub fn depends_on(&self, k: usize) -> bool {
        self.terms.iter().any(|t| t.coeff != 0.0 && t.powers[k] > 0)
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.nvars);
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.powers
                        .iter()
                        .zip(v)
                        .map(|(&k, &x)| ipow(x, k))
                        .product::<f64>()
            })
            .sum()
    }

    /// Gradient written into `out` (length `nvars`), no allocation.
    pub fn gradient_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            for k in 0..self.nvars {
                let pk = t.powers[k];
                if pk == 0 {
                    continue;
                }
                let mut prod = t.coeff * pk as f64;
                for (m, (&pm, &x)) in t.powers.iter().zip(v).enumerate() {
                    let e = if m == k { pm - 1 } else { pm };
                    prod *= ipow(x, e);
                }
                out[k] += prod;
            }
        }
    }

    pub fn gradient(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.nvars);
        self.gradient_into(v, out.as_mut_slice());
        out
    }

    pub fn hessian(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.nvars;
        let mut h = DMatrix::zeros(n, n);
        let mut e = vec![0u32; n];
        for t in &self.terms {
            for a in 0..n {
                for b in a..n {
                    let (pa, pb) = (t.powers[a], t.powers[b]);
                    let factor = if a == b {
                        if pa < 2 {
                            continue;
                        }
                        (pa * (pa - 1)) as f64
                    } else {
                        if pa == 0 || pb == 0 {
                            continue;
                        }
                        (pa * pb) as f64
                    };
                    e.copy_from_slice(&t.powers);
                    e[a] -= 1;
                    e[b] -= 1;
                    let prod: f64 = e.iter().zip(v).map(|(&k, &x)| ipow(x, k)).product();
                    let val = t.coeff * factor * prod;
                    h[(a, b)] += val;
                    if a != b {
                        h[(b, a)] += val;
                    }
                }
            }
        }
        h
    }
}

fn exponents_up_to(nvars: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn rec(k: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[k] = e;
            rec(k + 1, left - e, cur, out);
        }
        cur[k] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0; nvars];
    rec(0, max_degree, &mut cur, &mut out);
    out
}
