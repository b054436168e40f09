use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::hybrid_state::{Branch, Diag, MixedState, Pol, C64};
use crate::registry::{DvMode, ModeRegistry};
use crate::rng::Sampler;

use super::pair_ket;

/// Two-photon input `ρ = Σ σ_i |Λ_i><Λ_i|`, with `|Λ_i>` given as row `i` of
/// `coeffs` over `{HH, HV, VH, VV}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPairState {
    sigmas: [f64; 4],
    coeffs: [[C64; 4]; 4],
}

fn basis_index(a: Pol, b: Pol) -> usize {
    let i = |p| if p == Pol::H { 0 } else { 1 };
    2 * i(a) + i(b)
}

impl InputPairState {
    pub fn new(sigmas: [f64; 4], coeffs: [[C64; 4]; 4]) -> Result<Self> {
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("negative eigenvalue weight".into()));
        }
        let total: f64 = sigmas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("eigenvalue weights sum to {total}")));
        }
        for (i, row) in coeffs.iter().enumerate() {
            let n2: f64 = row.iter().map(|c| c.norm_sqr()).sum();
            if (n2 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("component {i} has squared norm {n2}")));
            }
        }
        Ok(InputPairState { sigmas, coeffs })
    }

    /// Pure input `c_1|HH> + c_2|HV> + c_3|VH> + c_4|VV>`.
    pub fn pure(c: [C64; 4]) -> Result<Self> {
        let e = |k: usize| {
            let mut r = [C64::new(0.0, 0.0); 4];
            r[k] = C64::new(1.0, 0.0);
            r
        };
        Self::new([1.0, 0.0, 0.0, 0.0], [c, e(1), e(2), e(3)])
    }

    pub fn basis(a: Pol, b: Pol) -> Self {
        let mut c = [C64::new(0.0, 0.0); 4];
        c[basis_index(a, b)] = C64::new(1.0, 0.0);
        Self::pure(c).expect("basis state is normalized")
    }

    /// Product of diagonal-basis states, e.g. `|+->`.
    pub fn diagonal(a: Diag, b: Diag) -> Self {
        let mut c = [C64::new(0.0, 0.0); 4];
        for (pa, ca) in a.hv_amplitudes() {
            for (pb, cb) in b.hv_amplitudes() {
                c[basis_index(pa, pb)] = ca * cb;
            }
        }
        Self::pure(c).expect("diagonal state is normalized")
    }

    pub fn sigmas(&self) -> [f64; 4] {
        self.sigmas
    }

    pub fn coeffs(&self) -> &[[C64; 4]; 4] {
        &self.coeffs
    }

    pub fn rank(&self) -> usize {
        self.sigmas.iter().filter(|s| **s > 0.0).count()
    }

    /// 4×4 density matrix over `{HH, HV, VH, VV}`.
    pub fn density(&self) -> DMatrix<C64> {
        let mut rho = DMatrix::<C64>::zeros(4, 4);
        for (s, row) in self.sigmas.iter().zip(&self.coeffs) {
            for i in 0..4 {
                for j in 0..4 {
                    rho[(i, j)] += row[i] * row[j].conj() * *s;
                }
            }
        }
        rho
    }

    /// Places photon A in `a` and photon B in `b`.
    pub fn to_mixed(&self, registry: Arc<ModeRegistry>, a: DvMode, b: DvMode) -> Result<MixedState> {
        let mut branches = Vec::new();
        for (s, row) in self.sigmas.iter().zip(&self.coeffs) {
            if *s > 0.0 {
                branches.push(Branch { weight: *s, ket: pair_ket(registry.clone(), a, b, *row)? });
            }
        }
        MixedState::new(branches)
    }
}

/// Random input of the given rank: weights uniform on the simplex,
/// components from a Haar-random unitary.
pub fn random_input(sampler: &mut Sampler, rank: usize) -> Result<InputPairState> {
    if !(1..=4).contains(&rank) {
        return Err(Error::InvalidInput(format!("rank {rank} outside 1..=4")));
    }
    let rng = sampler.rng();
    let mut sigmas = [0.0; 4];
    for s in sigmas.iter_mut().take(rank) {
        *s = Exp1.sample(rng);
    }
    let total: f64 = sigmas.iter().sum();
    for s in sigmas.iter_mut() {
        *s /= total;
    }
    // renormalize the last entry so the sum is 1 to rounding
    let head: f64 = sigmas[..rank - 1].iter().sum();
    sigmas[rank - 1] = 1.0 - head;

    let g = DMatrix::<C64>::from_fn(4, 4, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut coeffs = [[C64::new(0.0, 0.0); 4]; 4];
    for (i, row) in coeffs.iter_mut().enumerate() {
        let d = r[(i, i)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let n2: f64 = (0..4).map(|k| q[(k, i)].norm_sqr()).sum();
        for (k, c) in row.iter_mut().enumerate() {
            *c = q[(k, i)] * phase / n2.sqrt();
        }
    }
    InputPairState::new(sigmas, coeffs)
}
