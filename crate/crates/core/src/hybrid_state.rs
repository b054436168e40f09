//! Hybrid discrete/continuous-variable states.
//!
//! A [`HybridKet`] is a finite superposition of terms, each a complex
//! coefficient times a photon occupation label times one coherent state per
//! active bus mode. Everything the protocol does keeps states inside this
//! manifold, so the algebra here is exact: overlaps of coherent states are
//! closed-form and partial traces reduce to small Gram matrices.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::registry::{BusMode, DvMode, ModeRegistry, Side};

pub type C64 = Complex64;

/// Absolute tolerance for treating two coherent labels as the same state.
pub const TOL_AMP: f64 = 1e-9;
/// Largest admissible coherent amplitude magnitude.
pub const MAX_AMP: f64 = 1e6;
/// Coefficients below this magnitude are dropped when canonicalizing.
pub const COEFF_FLOOR: f64 = 1e-16;
/// Exponents below this are treated as exact zeros.
const EXP_FLOOR: f64 = -700.0;

/// `exp(re + i im)`, with underflowing moduli mapped to an exact zero.
pub(crate) fn cexp_clamped(re: f64, im: f64) -> C64 {
    if re < EXP_FLOOR {
        C64::new(0.0, 0.0)
    } else {
        C64::from_polar(re.exp(), im)
    }
}

/// `exp(z) - 1` without cancellation for small `z`.
pub(crate) fn cexpm1(z: C64) -> C64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    let em1 = z.re.exp_m1();
    C64::new(em1 * c - 2.0 * half * half, z.re.exp() * s)
}

/// Overlap `<b|a>` of two coherent states.
///
/// Equals `exp(-|a|^2/2 - |b|^2/2 + conj(b) a)`; the real part of the exponent
/// is evaluated as `-|a-b|^2/2` so large amplitudes do not cancel
/// catastrophically.
pub fn coherent_overlap(a: C64, b: C64) -> C64 {
    let re = -0.5 * (a - b).norm_sqr();
    let im = (b.conj() * a).im;
    cexp_clamped(re, im)
}

/// Photon polarization in the rectilinear basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
}

/// Diagonal polarization basis `|±> = (|H> ± |V>)/√2`.
///
/// Only a construction helper: states always store rectilinear labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diag {
    Plus,
    Minus,
}

impl Diag {
    pub fn hv_amplitudes(self) -> [(Pol, C64); 2] {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Diag::Plus => [(Pol::H, C64::new(r, 0.0)), (Pol::V, C64::new(r, 0.0))],
            Diag::Minus => [(Pol::H, C64::new(r, 0.0)), (Pol::V, C64::new(-r, 0.0))],
        }
    }

    /// Amplitude `<self|pol>`.
    pub fn project(self, pol: Pol) -> f64 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match (self, pol) {
            (Diag::Minus, Pol::V) => -r,
            _ => r,
        }
    }
}

/// Occupation of photon modes: a sorted list of `(mode, polarization)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DvLabel(Vec<(DvMode, Pol)>);

impl DvLabel {
    pub fn vacuum() -> Self {
        DvLabel(Vec::new())
    }

    pub fn single(mode: DvMode, pol: Pol) -> Self {
        DvLabel(vec![(mode, pol)])
    }

    pub fn pair(a: (DvMode, Pol), b: (DvMode, Pol)) -> Self {
        Self::from_photons(vec![a, b])
    }

    pub fn from_photons(mut photons: Vec<(DvMode, Pol)>) -> Self {
        photons.sort();
        DvLabel(photons)
    }

    pub fn photons(&self) -> &[(DvMode, Pol)] {
        &self.0
    }

    pub fn pol_in(&self, mode: DvMode) -> Option<Pol> {
        self.0.iter().find(|(m, _)| *m == mode).map(|(_, p)| *p)
    }

    pub fn occupies(&self, mode: DvMode) -> bool {
        self.pol_in(mode).is_some()
    }

    pub fn photon_count(&self) -> usize {
        self.0.len()
    }

    /// At most one photon per side and per mode.
    pub fn validate(&self, registry: &ModeRegistry) -> Result<()> {
        let mut seen_modes = BTreeSet::new();
        let mut seen_sides = BTreeSet::new();
        for &(mode, _) in &self.0 {
            registry.check_dv(mode)?;
            if !seen_modes.insert(mode) {
                return Err(Error::ModeCollision(registry.dv_name(mode).to_string()));
            }
            let side = registry.side(mode);
            if !seen_sides.insert(side) {
                return Err(Error::SideOverfilled(side.to_string()));
            }
        }
        Ok(())
    }

    pub fn photon_on(&self, registry: &ModeRegistry, side: Side) -> Option<(DvMode, Pol)> {
        self.0.iter().copied().find(|(m, _)| registry.side(*m) == side)
    }

    pub fn describe(&self, registry: &ModeRegistry) -> String {
        if self.0.is_empty() {
            return "vac".to_string();
        }
        self.0.iter().map(|(m, p)| format!("{:?}@{}", p, registry.dv_name(*m))).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTerm {
    pub coeff: C64,
    pub dv: DvLabel,
    /// Coherent labels, aligned with the owning ket's bus list.
    pub bus: Vec<C64>,
}

fn check_label(label: C64) -> Result<()> {
    if !label.re.is_finite() || !label.im.is_finite() {
        return Err(Error::NonFinite);
    }
    let mag = label.norm();
    if mag > MAX_AMP {
        return Err(Error::AmplitudeTooLarge(mag));
    }
    Ok(())
}

fn labels_close(a: &[C64], b: &[C64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
}

fn cmp_labels(a: &[C64], b: &[C64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// A finite superposition of photon labels times multimode coherent states.
#[derive(Debug, Clone)]
pub struct HybridKet {
    registry: Arc<ModeRegistry>,
    buses: Vec<BusMode>,
    terms: Vec<HybridTerm>,
}

impl HybridKet {
    /// The zero vector on the given active buses.
    pub fn zero(registry: Arc<ModeRegistry>, mut buses: Vec<BusMode>) -> Result<Self> {
        for &b in &buses {
            registry.check_bus(b)?;
        }
        buses.sort();
        buses.dedup();
        Ok(HybridKet { registry, buses, terms: Vec::new() })
    }

    /// A photon-only state with no active buses.
    pub fn from_dv(registry: Arc<ModeRegistry>, terms: impl IntoIterator<Item = (C64, DvLabel)>) -> Result<Self> {
        let mut ket = Self::zero(registry, Vec::new())?;
        for (c, dv) in terms {
            ket.push_term(c, dv, &[])?;
        }
        Ok(ket)
    }

    /// Appends a term; `labels` are aligned with [`HybridKet::buses`].
    pub fn push_term(&mut self, coeff: C64, dv: DvLabel, labels: &[C64]) -> Result<()> {
        if labels.len() != self.buses.len() {
            return Err(Error::RegistryMismatch);
        }
        dv.validate(&self.registry)?;
        for &l in labels {
            check_label(l)?;
        }
        self.terms.push(HybridTerm { coeff, dv, bus: labels.to_vec() });
        Ok(())
    }

    pub(crate) fn from_parts(registry: Arc<ModeRegistry>, buses: Vec<BusMode>, terms: Vec<HybridTerm>) -> Self {
        HybridKet { registry, buses, terms }
    }

    pub fn registry(&self) -> &Arc<ModeRegistry> {
        &self.registry
    }

    pub fn buses(&self) -> &[BusMode] {
        &self.buses
    }

    pub fn terms(&self) -> &[HybridTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn bus_index(&self, bus: BusMode) -> Result<usize> {
        self.buses
            .iter()
            .position(|&b| b == bus)
            .ok_or_else(|| Error::UnknownMode(format!("bus {} is not active", self.registry.bus_name(bus))))
    }

    /// Tensors a fresh coherent state `|label>` on `bus` onto every term.
    pub fn with_bus(&self, bus: BusMode, label: C64) -> Result<Self> {
        self.registry.check_bus(bus)?;
        check_label(label)?;
        if self.buses.contains(&bus) {
            return Err(Error::UnknownMode(format!("bus {} is already active", self.registry.bus_name(bus))));
        }
        let mut buses = self.buses.clone();
        buses.push(bus);
        buses.sort();
        let pos = buses.iter().position(|&b| b == bus).unwrap();
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut labels = t.bus.clone();
                labels.insert(pos, label);
                HybridTerm { coeff: t.coeff, dv: t.dv.clone(), bus: labels }
            })
            .collect();
        Ok(HybridKet { registry: self.registry.clone(), buses, terms })
    }

    pub fn same_space(&self, other: &HybridKet) -> bool {
        (Arc::ptr_eq(&self.registry, &other.registry) || *self.registry == *other.registry) && self.buses == other.buses
    }

    pub fn scaled(&self, factor: C64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= factor;
        }
        out
    }

    /// Vector sum (terms concatenated, then canonicalized).
    pub fn plus(&self, other: &HybridKet) -> Result<Self> {
        if !self.same_space(other) {
            return Err(Error::RegistryMismatch);
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out.canonical())
    }

    /// Rewrites every term through `f`, which may emit several terms.
    pub(crate) fn flat_map_terms<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&HybridTerm, &mut Vec<HybridTerm>) -> Result<()>,
    {
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            f(t, &mut out)?;
        }
        for t in &out {
            t.dv.validate(&self.registry)?;
            for &l in &t.bus {
                check_label(l)?;
            }
        }
        Ok(HybridKet { registry: self.registry.clone(), buses: self.buses.clone(), terms: out }.canonical())
    }

    pub fn norm_sqr(&self) -> f64 {
        inner_unchecked(self, self).re.max(0.0)
    }

    /// Canonical form with the default tolerances.
    pub fn canonical(&self) -> Self {
        canonicalize_with(self, TOL_AMP, COEFF_FLOOR)
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            let _ = write!(s, "({:+.6}{:+.6}i) [{}]", t.coeff.re, t.coeff.im, t.dv.describe(&self.registry));
            for (b, l) in self.buses.iter().zip(&t.bus) {
                let _ = write!(s, " |{:.6}{:+.6}i>_{}", l.re, l.im, self.registry.bus_name(*b));
            }
            s.push('\n');
        }
        s
    }
}

fn inner_unchecked(x: &HybridKet, y: &HybridKet) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for tx in &x.terms {
        for ty in &y.terms {
            if tx.dv != ty.dv {
                continue;
            }
            let mut prod = tx.coeff.conj() * ty.coeff;
            for (lx, ly) in tx.bus.iter().zip(&ty.bus) {
                prod *= coherent_overlap(*ly, *lx);
                if prod == C64::new(0.0, 0.0) {
                    break;
                }
            }
            acc += prod;
        }
    }
    acc
}

/// Inner product `<x|y>`, antilinear in `x`.
pub fn inner(x: &HybridKet, y: &HybridKet) -> Result<C64> {
    if !x.same_space(y) {
        return Err(Error::RegistryMismatch);
    }
    Ok(inner_unchecked(x, y))
}

/// Merges terms with equal photon labels and coherent labels within `tol`
/// on every bus, drops coefficients below `tol`, and sorts the result.
pub fn canonicalize(x: &HybridKet, tol: f64) -> HybridKet {
    canonicalize_with(x, tol, tol)
}

pub(crate) fn canonicalize_with(x: &HybridKet, label_tol: f64, coeff_tol: f64) -> HybridKet {
    let mut merged: Vec<HybridTerm> = Vec::with_capacity(x.terms.len());
    for t in &x.terms {
        match merged.iter_mut().find(|m| m.dv == t.dv && labels_close(&m.bus, &t.bus, label_tol)) {
            Some(m) => m.coeff += t.coeff,
            None => merged.push(t.clone()),
        }
    }
    merged.retain(|t| t.coeff.norm() >= coeff_tol && t.coeff.norm() > 0.0);
    merged.sort_by(|a, b| a.dv.cmp(&b.dv).then_with(|| cmp_labels(&a.bus, &b.bus)));
    HybridKet { registry: x.registry.clone(), buses: x.buses.clone(), terms: merged }
}

pub fn normalize(x: &HybridKet) -> Result<HybridKet> {
    let n2 = x.norm_sqr();
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(x.scaled(C64::new(1.0 / n2.sqrt(), 0.0)))
}

/// One pure component of a mixture.
#[derive(Debug, Clone)]
pub struct Branch {
    pub weight: f64,
    pub ket: HybridKet,
}

/// Convex combination of normalized kets.
#[derive(Debug, Clone)]
pub struct MixedState {
    branches: Vec<Branch>,
}

/// Weights below this are dropped when assembling mixtures.
const WEIGHT_FLOOR: f64 = 1e-300;

impl MixedState {
    pub fn pure(ket: HybridKet) -> Result<Self> {
        Ok(MixedState { branches: vec![Branch { weight: 1.0, ket: normalize(&ket)? }] })
    }

    /// Validated constructor: weights must sum to one and kets be normalized.
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        let total: f64 = branches.iter().map(|b| b.weight).sum();
        if branches.iter().any(|b| b.weight < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}")));
        }
        for b in &branches {
            let n2 = b.ket.norm_sqr();
            if (n2 - 1.0).abs() > 1e-12 {
                return Err(Error::NonNormalizedTarget(n2));
            }
        }
        Ok(MixedState { branches })
    }

    /// Builds a mixture from `(weight, ket)` pairs with arbitrary ket norms.
    ///
    /// Returns the total trace `Σ w ||ket||²` and the normalized mixture, or
    /// `None` when the trace vanishes.
    pub fn from_weighted(parts: Vec<(f64, HybridKet)>) -> Option<(f64, MixedState)> {
        let mut branches = Vec::with_capacity(parts.len());
        let mut total = 0.0;
        for (w, ket) in parts {
            let n2 = ket.norm_sqr();
            let weight = w * n2;
            if !(weight > WEIGHT_FLOOR) {
                continue;
            }
            total += weight;
            let ket = ket.scaled(C64::new(1.0 / n2.sqrt(), 0.0));
            branches.push(Branch { weight, ket });
        }
        if !(total > 0.0) {
            return None;
        }
        for b in &mut branches {
            b.weight /= total;
        }
        Some((total, MixedState { branches }))
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn registry(&self) -> &Arc<ModeRegistry> {
        self.branches[0].ket.registry()
    }

    pub fn buses(&self) -> &[BusMode] {
        self.branches[0].ket.buses()
    }

    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(|b| b.weight).sum()
    }

    /// Applies a ket-to-ket map (a unitary element) to every branch.
    pub fn map_kets<F>(&self, mut f: F) -> Result<MixedState>
    where
        F: FnMut(&HybridKet) -> Result<HybridKet>,
    {
        let branches = self
            .branches
            .iter()
            .map(|b| Ok(Branch { weight: b.weight, ket: f(&b.ket)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedState { branches })
    }

    /// Hilbert–Schmidt distance between two mixtures on the same space.
    pub fn hs_distance(&self, other: &MixedState) -> Result<f64> {
        let cross = |x: &MixedState, y: &MixedState| -> Result<f64> {
            let mut acc = 0.0;
            for a in &x.branches {
                for b in &y.branches {
                    acc += a.weight * b.weight * inner(&a.ket, &b.ket)?.norm_sqr();
                }
            }
            Ok(acc)
        };
        let d2 = cross(self, self)? + cross(other, other)? - 2.0 * cross(self, other)?;
        Ok(d2.max(0.0).sqrt())
    }

    /// Purity `Tr ρ²`.
    pub fn purity(&self) -> Result<f64> {
        let mut acc = 0.0;
        for a in &self.branches {
            for b in &self.branches {
                acc += a.weight * b.weight * inner(&a.ket, &b.ket)?.norm_sqr();
            }
        }
        Ok(acc)
    }

    /// Dense density matrix over the photon labels, for states without buses.
    pub fn dv_density(&self) -> Result<DvDensity> {
        if !self.buses().is_empty() {
            return Err(Error::InvalidInput("dv_density needs all buses traced out".into()));
        }
        let basis: Vec<DvLabel> = self
            .branches
            .iter()
            .flat_map(|b| b.ket.terms().iter().map(|t| t.dv.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let n = basis.len();
        let mut rho = DMatrix::<C64>::zeros(n, n);
        for b in &self.branches {
            let mut v = vec![C64::new(0.0, 0.0); n];
            for t in b.ket.terms() {
                let i = basis.binary_search(&t.dv).unwrap();
                v[i] += t.coeff;
            }
            for i in 0..n {
                for j in 0..n {
                    rho[(i, j)] += v[i] * v[j].conj() * b.weight;
                }
            }
        }
        Ok(DvDensity { basis, matrix: rho })
    }

    /// Stable digest of the branch data, rounded to 12 significant digits.
    pub fn checksum(&self) -> String {
        let mut s = String::new();
        let fmt = |s: &mut String, v: f64| {
            let _ = write!(s, "{:.11e};", v + 0.0);
        };
        for b in &self.branches {
            fmt(&mut s, b.weight);
            for &bus in b.ket.buses() {
                let _ = write!(s, "b{};", bus.0);
            }
            for t in b.ket.terms() {
                for &(m, p) in t.dv.photons() {
                    let _ = write!(s, "{}{:?};", m.0, p);
                }
                fmt(&mut s, t.coeff.re);
                fmt(&mut s, t.coeff.im);
                for l in &t.bus {
                    fmt(&mut s, l.re);
                    fmt(&mut s, l.im);
                }
            }
            s.push('|');
        }
        let digest = Sha256::digest(s.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Photon-only density matrix in an explicit label basis.
#[derive(Debug, Clone)]
pub struct DvDensity {
    pub basis: Vec<DvLabel>,
    pub matrix: DMatrix<C64>,
}

impl DvDensity {
    /// Frobenius distance, embedding both matrices in the union basis.
    pub fn distance(&self, other: &DvDensity) -> f64 {
        let basis: Vec<DvLabel> =
            self.basis.iter().chain(&other.basis).cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let embed = |d: &DvDensity| {
            let n = basis.len();
            let mut m = DMatrix::<C64>::zeros(n, n);
            for (i, li) in d.basis.iter().enumerate() {
                let bi = basis.binary_search(li).unwrap();
                for (j, lj) in d.basis.iter().enumerate() {
                    let bj = basis.binary_search(lj).unwrap();
                    m[(bi, bj)] = d.matrix[(i, j)];
                }
            }
            m
        };
        (embed(self) - embed(other)).norm()
    }
}

/// Fidelity `Σ w |<branch|target>|²` of a mixture with a pure target.
pub fn fidelity(x: &MixedState, target: &HybridKet) -> Result<f64> {
    let n2 = target.norm_sqr();
    if (n2 - 1.0).abs() > 1e-10 {
        return Err(Error::NonNormalizedTarget(n2));
    }
    let mut f = 0.0;
    for b in x.branches() {
        f += b.weight * inner(&b.ket, target)?.norm_sqr();
    }
    Ok(f.clamp(0.0, 1.0))
}

/// Terms of a ket grouped by their labels on a subset of buses.
pub(crate) struct PatternSplit {
    /// Distinct label vectors on the selected buses.
    pub patterns: Vec<Vec<C64>>,
    /// For each pattern, the remaining part of the ket.
    pub subkets: Vec<HybridKet>,
}

/// Groups terms by their labels on `selected`. When `remove` is set the
/// selected buses are dropped from the sub-kets.
pub(crate) fn split_by_buses(ket: &HybridKet, selected: &[BusMode], remove: bool) -> Result<PatternSplit> {
    let idx: Vec<usize> = selected.iter().map(|&b| ket.bus_index(b)).collect::<Result<_>>()?;
    let sub_buses: Vec<BusMode> =
        if remove { ket.buses.iter().copied().filter(|b| !selected.contains(b)).collect() } else { ket.buses.clone() };
    let mut patterns: Vec<Vec<C64>> = Vec::new();
    let mut groups: Vec<Vec<HybridTerm>> = Vec::new();
    for t in &ket.terms {
        let pat: Vec<C64> = idx.iter().map(|&i| t.bus[i]).collect();
        let rest = if remove {
            HybridTerm {
                coeff: t.coeff,
                dv: t.dv.clone(),
                bus: (0..t.bus.len()).filter(|i| !idx.contains(i)).map(|i| t.bus[i]).collect(),
            }
        } else {
            t.clone()
        };
        match patterns.iter().position(|p| labels_close(p, &pat, TOL_AMP)) {
            Some(g) => groups[g].push(rest),
            None => {
                patterns.push(pat);
                groups.push(vec![rest]);
            }
        }
    }
    let subkets = groups
        .into_iter()
        .map(|terms| {
            canonicalize_with(&HybridKet::from_parts(ket.registry.clone(), sub_buses.clone(), terms), TOL_AMP, 0.0)
        })
        .collect();
    Ok(PatternSplit { patterns, subkets })
}

/// Eigen-decomposition of a small Hermitian PSD matrix; returns
/// `(eigenvalue, eigenvector)` pairs.
pub(crate) fn hermitian_eigen(m: &DMatrix<C64>) -> Vec<(f64, Vec<C64>)> {
    let n = m.nrows();
    match n {
        0 => Vec::new(),
        1 => vec![(m[(0, 0)].re, vec![C64::new(1.0, 0.0)])],
        2 => {
            // symmetric/antisymmetric closed form
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = m[(0, 1)];
            let mean = 0.5 * (a + d);
            let half = 0.5 * (a - d);
            let r = (half * half + b.norm_sqr()).sqrt();
            if b.norm() <= 1e-300 {
                return vec![
                    (a, vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
                    (d, vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]),
                ];
            }
            [mean + r, mean - r]
                .into_iter()
                .map(|lam| {
                    // (a - λ) x + b y = 0  →  (x, y) ∝ (b, λ - a)
                    let v = [b, C64::new(lam - a, 0.0)];
                    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
                    (lam, vec![v[0] / norm, v[1] / norm])
                })
                .collect()
        }
        _ => {
            let eig = m.clone().symmetric_eigen();
            (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect())).collect()
        }
    }
}

/// Turns `ρ = Σ_pq M_pq |ψ_p><ψ_q|` into weighted pure branches.
///
/// Output weights are the trace contributions `λ ||φ||²`; kets are normalized.
pub(crate) fn mixture_from_kernel(subkets: &[HybridKet], m: &DMatrix<C64>) -> Vec<(f64, HybridKet)> {
    let mut out = Vec::new();
    for (lam, vec) in hermitian_eigen(m) {
        if !(lam > 0.0) {
            continue;
        }
        let mut terms = Vec::new();
        for (p, sub) in subkets.iter().enumerate() {
            if vec[p] == C64::new(0.0, 0.0) {
                continue;
            }
            terms.extend(sub.terms.iter().map(|t| HybridTerm {
                coeff: t.coeff * vec[p],
                dv: t.dv.clone(),
                bus: t.bus.clone(),
            }));
        }
        let phi = canonicalize_with(
            &HybridKet::from_parts(subkets[0].registry.clone(), subkets[0].buses.clone(), terms),
            TOL_AMP,
            0.0,
        );
        let n2 = phi.norm_sqr();
        let w = lam * n2;
        if w > WEIGHT_FLOOR {
            out.push((w, phi.scaled(C64::new(1.0 / n2.sqrt(), 0.0))));
        }
    }
    out
}

/// Applies `ρ ↦ Tr_S[(I ⊗ E) ρ]` for a bus operator `E` on buses `S`, given
/// its coherent-state matrix elements `kernel(γ_bra, γ_ket) = <γ_bra|E|γ_ket>`.
pub(crate) fn reduce_ket<K>(ket: &HybridKet, traced: &[BusMode], kernel: K) -> Result<Vec<(f64, HybridKet)>>
where
    K: Fn(&[C64], &[C64]) -> C64,
{
    let split = split_by_buses(ket, traced, true)?;
    let n = split.patterns.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = DMatrix::<C64>::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            m[(p, q)] = kernel(&split.patterns[q], &split.patterns[p]);
        }
    }
    Ok(mixture_from_kernel(&split.subkets, &m))
}

/// Applies a bus operator and partial trace to every branch of a mixture.
/// Returns the outcome probability `Tr[(I ⊗ E) ρ]` and the conditional state.
pub(crate) fn reduce_mixed<K>(x: &MixedState, traced: &[BusMode], kernel: K) -> Result<Option<(f64, MixedState)>>
where
    K: Fn(&[C64], &[C64]) -> C64,
{
    let mut parts = Vec::new();
    for b in x.branches() {
        for (w, ket) in reduce_ket(&b.ket, traced, &kernel)? {
            parts.push((b.weight * w, ket));
        }
    }
    Ok(MixedState::from_weighted(parts))
}

fn overlap_product(bra: &[C64], ket: &[C64]) -> C64 {
    bra.iter().zip(ket).fold(C64::new(1.0, 0.0), |acc, (b, k)| acc * coherent_overlap(*k, *b))
}

/// Partial trace over the given bus modes.
pub fn trace_out_bus(x: &MixedState, modes: &[BusMode]) -> Result<MixedState> {
    for &m in modes {
        x.registry().check_bus(m)?;
        if !x.buses().contains(&m) {
            return Err(Error::UnknownMode(format!("bus {} is not active", x.registry().bus_name(m))));
        }
    }
    if modes.is_empty() {
        return Ok(x.clone());
    }
    let (_, out) = reduce_mixed(x, modes, overlap_product)?.ok_or(Error::ZeroNorm)?;
    Ok(out)
}

/// Traces out every active bus.
pub fn trace_out_all(x: &MixedState) -> Result<MixedState> {
    let all = x.buses().to_vec();
    trace_out_bus(x, &all)
}
