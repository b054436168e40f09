//! Truncated Fock-space simulation of the same optics.
//!
//! Photon labels are expanded in a dense basis holding at most one photon per
//! side; each bus is a number basis cut off at `N`. Everything here is built
//! from matrices, independently of the label algebra, and is only meant for
//! small amplitudes and at most two buses.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::elements::{ElementOp, PbsPorts};
use crate::error::{Error, Result};
use crate::hybrid_state::{DvDensity, DvLabel, HybridKet, MixedState, Pol, C64};
use crate::registry::{BusMode, DvMode, ModeRegistry, Side};

/// Largest tolerated Poisson tail beyond the cutoff when encoding.
pub const ENCODE_TAIL_TOL: f64 = 1e-12;
/// Largest tolerated norm pushed beyond the cutoff by a beam splitter.
pub const LEAK_TOL: f64 = 1e-10;
pub const MAX_ORACLE_BUSES: usize = 2;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const PRUNE: f64 = 1e-30;

/// `max(40, ⌈|γ|² + 10|γ| + 20⌉)`.
pub fn default_cutoff(max_amp: f64) -> usize {
    let a = max_amp.abs();
    40usize.max((a * a + 10.0 * a + 20.0).ceil() as usize)
}

/// Number-basis amplitudes `e^{-|γ|²/2} γⁿ/√n!` for `n ≤ cutoff`.
pub fn coherent_fock(gamma: C64, cutoff: usize) -> Result<Vec<C64>> {
    let mut c = Vec::with_capacity(cutoff + 1);
    let mut cur = C64::new((-0.5 * gamma.norm_sqr()).exp(), 0.0);
    c.push(cur);
    for n in 1..=cutoff {
        cur = cur * gamma / (n as f64).sqrt();
        c.push(cur);
    }
    let mean = gamma.norm_sqr();
    let mut tail = 0.0;
    let mut n = cutoff + 1;
    loop {
        cur = cur * gamma / (n as f64).sqrt();
        let t = cur.norm_sqr();
        tail += t;
        if (n as f64 > mean && t < 1e-40) || t == 0.0 {
            break;
        }
        n += 1;
    }
    if tail >= ENCODE_TAIL_TOL {
        return Err(Error::TailTooHeavy { amp: gamma.norm(), cutoff });
    }
    Ok(c)
}

fn side_index(s: Side) -> usize {
    match s {
        Side::A => 0,
        Side::B => 1,
    }
}

/// Basis of the truncated space: per side, "empty" plus one photon in each
/// listed mode and polarization; buses in the given order.
#[derive(Debug)]
pub struct FockSpace {
    registry: Arc<ModeRegistry>,
    sides: [Vec<(DvMode, Pol)>; 2],
    buses: Vec<BusMode>,
    cutoff: usize,
}

impl FockSpace {
    pub fn new(
        registry: Arc<ModeRegistry>,
        dv_modes: &[DvMode],
        buses: &[BusMode],
        cutoff: usize,
    ) -> Result<Arc<Self>> {
        if buses.len() > MAX_ORACLE_BUSES {
            return Err(Error::TooManyBuses { max: MAX_ORACLE_BUSES, got: buses.len() });
        }
        let mut sides: [Vec<(DvMode, Pol)>; 2] = [Vec::new(), Vec::new()];
        let mut modes = dv_modes.to_vec();
        modes.sort();
        modes.dedup();
        for m in modes {
            registry.check_dv(m)?;
            let s = side_index(registry.side(m));
            sides[s].push((m, Pol::H));
            sides[s].push((m, Pol::V));
        }
        for (i, b) in buses.iter().enumerate() {
            registry.check_bus(*b)?;
            if buses[..i].contains(b) {
                return Err(Error::InvalidInput("repeated bus in oracle space".into()));
            }
        }
        Ok(Arc::new(FockSpace { registry, sides, buses: buses.to_vec(), cutoff }))
    }

    /// Every photon mode of the registry.
    pub fn for_registry(registry: Arc<ModeRegistry>, buses: &[BusMode], cutoff: usize) -> Result<Arc<Self>> {
        let modes: Vec<DvMode> = registry.dv_modes().collect();
        Self::new(registry, &modes, buses, cutoff)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn buses(&self) -> &[BusMode] {
        &self.buses
    }

    fn side_dim(&self, s: usize) -> usize {
        self.sides[s].len() + 1
    }

    fn bus_dim(&self) -> usize {
        (self.cutoff + 1).pow(self.buses.len() as u32)
    }

    fn dv_dim(&self) -> usize {
        self.side_dim(0) * self.side_dim(1)
    }

    pub fn dim(&self) -> usize {
        self.dv_dim() * self.bus_dim()
    }

    fn bus_pos(&self, bus: BusMode) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| *b == bus)
            .ok_or_else(|| Error::UnknownMode(self.registry.bus_name(bus).to_string()))
    }

    fn photon_pos(&self, s: usize, mode: DvMode, pol: Pol) -> Result<usize> {
        self.sides[s]
            .iter()
            .position(|&(m, p)| m == mode && p == pol)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownMode(self.registry.dv_name(mode).to_string()))
    }

    fn dv_index(&self, label: &DvLabel) -> Result<usize> {
        let mut idx = [0usize; 2];
        for &(m, p) in label.photons() {
            let s = side_index(self.registry.side(m));
            if idx[s] != 0 {
                return Err(Error::InvalidInput("oracle basis holds one photon per side".into()));
            }
            idx[s] = self.photon_pos(s, m, p)?;
        }
        Ok(idx[0] * self.side_dim(1) + idx[1])
    }

    fn dv_label(&self, idx: usize) -> DvLabel {
        let (ia, ib) = (idx / self.side_dim(1), idx % self.side_dim(1));
        let mut photons = Vec::new();
        if ia > 0 {
            photons.push(self.sides[0][ia - 1]);
        }
        if ib > 0 {
            photons.push(self.sides[1][ib - 1]);
        }
        DvLabel::from_photons(photons)
    }

    /// `(outer, dim, inner)` strides of a tensor axis: 0 and 1 are the two
    /// photon sides, `2 + i` is bus `i`.
    fn axis(&self, axis: usize) -> (usize, usize, usize) {
        let n1 = self.cutoff + 1;
        let nb = self.buses.len();
        match axis {
            0 => (1, self.side_dim(0), self.side_dim(1) * self.bus_dim()),
            1 => (self.side_dim(0), self.side_dim(1), self.bus_dim()),
            k => {
                let i = k - 2;
                (self.dv_dim() * n1.pow(i as u32), n1, n1.pow((nb - 1 - i) as u32))
            }
        }
    }

    /// Photon number on bus position `pos` for a flat index.
    fn bus_level(&self, flat: usize, pos: usize) -> usize {
        let n1 = self.cutoff + 1;
        let inner = n1.pow((self.buses.len() - 1 - pos) as u32);
        (flat / inner) % n1
    }

    fn same(&self, other: &FockSpace) -> bool {
        std::ptr::eq(self, other)
            || (Arc::ptr_eq(&self.registry, &other.registry)
                && self.sides == other.sides
                && self.buses == other.buses
                && self.cutoff == other.cutoff)
    }
}

/// Dense amplitude vector on a [`FockSpace`].
#[derive(Debug, Clone)]
pub struct FockVector {
    space: Arc<FockSpace>,
    amps: Vec<C64>,
}

impl FockVector {
    pub fn zeros(space: Arc<FockSpace>) -> Self {
        let n = space.dim();
        FockVector { space, amps: vec![ZERO; n] }
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> Result<C64> {
        if !self.space.same(&other.space) {
            return Err(Error::RegistryMismatch);
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn distance(&self, other: &FockVector) -> Result<f64> {
        if !self.space.same(&other.space) {
            return Err(Error::RegistryMismatch);
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
    }

    fn map_axis(&self, axis: usize, m: &DMatrix<C64>) -> FockVector {
        let (outer, dim, inner) = self.space.axis(axis);
        let mut out = vec![ZERO; self.amps.len()];
        let mut col = vec![ZERO; dim];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * dim + i) * inner + r;
                for (i, c) in col.iter_mut().enumerate() {
                    *c = self.amps[at(i)];
                }
                if col.iter().all(|c| *c == ZERO) {
                    continue;
                }
                for i2 in 0..dim {
                    let mut acc = ZERO;
                    for (i, c) in col.iter().enumerate() {
                        acc += m[(i2, i)] * c;
                    }
                    out[at(i2)] = acc;
                }
            }
        }
        FockVector { space: self.space.clone(), amps: out }
    }

    fn scale_bus(&self, pos: usize, factor: impl Fn(usize, usize) -> C64) -> FockVector {
        let bd = self.space.bus_dim();
        let amps =
            self.amps.iter().enumerate().map(|(i, a)| a * factor(i / bd, self.space.bus_level(i % bd, pos))).collect();
        FockVector { space: self.space.clone(), amps }
    }
}

/// Expands a ket with the default cutoff for its largest label, over every
/// photon mode of its registry.
pub fn encode_default(x: &HybridKet) -> Result<FockVector> {
    let max = x.terms().iter().flat_map(|t| t.bus.iter().map(|l| l.norm())).fold(0.0, f64::max);
    encode(x, default_cutoff(max))
}

pub fn encode(x: &HybridKet, cutoff: usize) -> Result<FockVector> {
    let space = FockSpace::for_registry(x.registry().clone(), x.buses(), cutoff)?;
    encode_in(&space, x)
}

/// Expands `x` in a given space; its buses must match the space's.
pub fn encode_in(space: &Arc<FockSpace>, x: &HybridKet) -> Result<FockVector> {
    if !Arc::ptr_eq(x.registry(), &space.registry) {
        return Err(Error::RegistryMismatch);
    }
    let order: Vec<usize> = space.buses.iter().map(|b| x.bus_index(*b)).collect::<Result<_>>()?;
    if order.len() != x.buses().len() {
        return Err(Error::RegistryMismatch);
    }
    let mut v = FockVector::zeros(space.clone());
    let bd = space.bus_dim();
    let n1 = space.cutoff + 1;
    for t in x.terms() {
        let base = space.dv_index(&t.dv)? * bd;
        let mut block = vec![t.coeff];
        for &i in &order {
            let c = coherent_fock(t.bus[i], space.cutoff)?;
            let mut next = Vec::with_capacity(block.len() * n1);
            for b in &block {
                next.extend(c.iter().map(|a| b * a));
            }
            block = next;
        }
        for (k, a) in block.into_iter().enumerate() {
            v.amps[base + k] += a;
        }
    }
    Ok(v)
}

type Jones = [[f64; 2]; 2];

const PASS_H: Jones = [[1.0, 0.0], [0.0, 0.0]];
const PASS_V: Jones = [[0.0, 0.0], [0.0, 1.0]];
const PASS_P: Jones = [[0.5, 0.5], [0.5, 0.5]];
const PASS_M: Jones = [[0.5, -0.5], [-0.5, 0.5]];
const HALF_ID: Jones = [[FRAC_1_SQRT_2, 0.0], [0.0, FRAC_1_SQRT_2]];
const HALF_NEG: Jones = [[-FRAC_1_SQRT_2, 0.0], [0.0, -FRAC_1_SQRT_2]];

fn pol_index(p: Pol) -> usize {
    match p {
        Pol::H => 0,
        Pol::V => 1,
    }
}

/// Single-photon transfer blocks `(in, out, J)` with `J[out_pol][in_pol]`.
fn transfer_blocks(op: &ElementOp) -> Option<Vec<(DvMode, DvMode, Jones)>> {
    Some(match *op {
        ElementOp::PbsSplit { input, out_h, out_v } => vec![(input, out_h, PASS_H), (input, out_v, PASS_V)],
        ElementOp::Pbs(PbsPorts { in_a, in_b, out_t, out_r }) => {
            vec![(in_a, out_t, PASS_H), (in_a, out_r, PASS_V), (in_b, out_r, PASS_H), (in_b, out_t, PASS_V)]
        }
        ElementOp::PbsPm { input, out_p, out_m } => vec![(input, out_p, PASS_P), (input, out_m, PASS_M)],
        ElementOp::Hwp { mode, angle } => {
            let (s, c) = (2.0 * angle).sin_cos();
            vec![(mode, mode, [[c, s], [s, -c]])]
        }
        ElementOp::Bs50Dv { c, d } => vec![(c, c, HALF_ID), (c, d, HALF_ID), (d, c, HALF_ID), (d, d, HALF_NEG)],
        _ => return None,
    })
}

fn apply_transfer(v: &FockVector, blocks: &[(DvMode, DvMode, Jones)]) -> Result<FockVector> {
    let sp = &v.space;
    let mut side = None;
    for &(i, o, _) in blocks {
        for m in [i, o] {
            sp.registry.check_dv(m)?;
            let s = side_index(sp.registry.side(m));
            if side.is_some_and(|x| x != s) {
                return Err(Error::InvalidInput("element spans both sides".into()));
            }
            side = Some(s);
        }
    }
    let s = side.expect("element has ports");
    let d = sp.side_dim(s);
    let mut m = DMatrix::<C64>::identity(d, d);
    for (col, &(mode, pol)) in sp.sides[s].iter().enumerate().map(|(i, x)| (i + 1, x)) {
        let mine: Vec<_> = blocks.iter().filter(|b| b.0 == mode).collect();
        if mine.is_empty() {
            continue;
        }
        m[(col, col)] = ZERO;
        for &&(_, out, j) in &mine {
            for p2 in [Pol::H, Pol::V] {
                let a = j[pol_index(p2)][pol_index(pol)];
                if a != 0.0 {
                    m[(sp.photon_pos(s, out, p2)?, col)] += C64::new(a, 0.0);
                }
            }
        }
    }
    Ok(v.map_axis(s, &m))
}

/// Blocks `U_K[j][n] = <j, K-j|U|n, K-n>` of a two-mode number-conserving
/// unitary defined by the images `A` of `a†` and `B` of `b†`, each given as
/// coefficients on `(a†, b†)`.
fn two_mode_blocks(max_total: usize, img_a: [f64; 2], img_b: [f64; 2]) -> Vec<DMatrix<f64>> {
    let raise = |prev: &DMatrix<f64>, col: usize, k: usize, img: [f64; 2]| -> Vec<f64> {
        // apply img[0] a† + img[1] b† to a column of total k-1
        let mut out = vec![0.0; k + 1];
        for j in 0..k {
            let c = prev[(j, col)];
            if c == 0.0 {
                continue;
            }
            out[j + 1] += img[0] * c * ((j + 1) as f64).sqrt();
            out[j] += img[1] * c * ((k - j) as f64).sqrt();
        }
        out
    };
    let mut blocks = vec![DMatrix::from_element(1, 1, 1.0)];
    for k in 1..=max_total {
        let prev = &blocks[k - 1];
        let mut u = DMatrix::<f64>::zeros(k + 1, k + 1);
        let c0 = raise(prev, 0, k, img_b);
        for (j, x) in c0.into_iter().enumerate() {
            u[(j, 0)] = x / (k as f64).sqrt();
        }
        for n in 1..=k {
            let c = raise(prev, n - 1, k, img_a);
            for (j, x) in c.into_iter().enumerate() {
                u[(j, n)] = x / (n as f64).sqrt();
            }
        }
        blocks.push(u);
    }
    blocks
}

fn apply_two_mode(v: &FockVector, bus1: BusMode, bus2: BusMode, inverse: bool) -> Result<FockVector> {
    let sp = &v.space;
    let (p1, p2) = (sp.bus_pos(bus1)?, sp.bus_pos(bus2)?);
    if p1 == p2 {
        return Err(Error::InvalidInput("beam splitter needs two distinct buses".into()));
    }
    let s = FRAC_1_SQRT_2;
    // forward: a† → (a† + b†)/√2, b† → (b† - a†)/√2
    let (img_a, img_b) = if inverse { ([s, -s], [s, s]) } else { ([s, s], [-s, s]) };
    let n = sp.cutoff;
    let blocks = two_mode_blocks(2 * n, img_a, img_b);
    let n1 = n + 1;
    let flat = |a: usize, b: usize| if p1 == 0 { a * n1 + b } else { b * n1 + a };
    let bd = sp.bus_dim();
    let mut out = vec![ZERO; v.amps.len()];
    let mut leak = 0.0;
    let mut total = 0.0;
    for dv in 0..sp.dv_dim() {
        let base = dv * bd;
        for k in 0..=2 * n {
            let lo = k.saturating_sub(n);
            let hi = k.min(n);
            let input: Vec<(usize, C64)> =
                (lo..=hi).map(|a| (a, v.amps[base + flat(a, k - a)])).filter(|(_, c)| *c != ZERO).collect();
            if input.is_empty() {
                continue;
            }
            let u = &blocks[k];
            for j in 0..=k {
                let mut acc = ZERO;
                for &(a, c) in &input {
                    acc += c * u[(j, a)];
                }
                let w = acc.norm_sqr();
                total += w;
                if j > n || k - j > n {
                    leak += w;
                } else {
                    out[base + flat(j, k - j)] = acc;
                }
            }
        }
    }
    let rel = if total > 0.0 { leak / total } else { 0.0 };
    if rel > LEAK_TOL {
        return Err(Error::CutoffLeakage { cutoff: n, leak: rel });
    }
    Ok(FockVector { space: sp.clone(), amps: out })
}

/// Applies one element as a dense operator.
pub fn oracle_apply(op: &ElementOp, v: &FockVector) -> Result<FockVector> {
    if let Some(blocks) = transfer_blocks(op) {
        return apply_transfer(v, &blocks);
    }
    let sp = &v.space;
    match *op {
        ElementOp::Bs50Bus { bus1, bus2 } => apply_two_mode(v, bus1, bus2, false),
        ElementOp::Bs50BusInverse { bus1, bus2 } => apply_two_mode(v, bus1, bus2, true),
        ElementOp::Phase { bus, phi } => {
            let pos = sp.bus_pos(bus)?;
            Ok(v.scale_bus(pos, |_, n| C64::from_polar(1.0, phi * n as f64)))
        }
        ElementOp::Xpm { dv, bus, params } => {
            sp.registry.check_dv(dv)?;
            let pos = sp.bus_pos(bus)?;
            let occupied: Vec<bool> = (0..sp.dv_dim()).map(|i| sp.dv_label(i).occupies(dv)).collect();
            Ok(v.scale_bus(pos, |d, n| if occupied[d] { C64::from_polar(1.0, params.theta * n as f64) } else { ONE }))
        }
        _ => unreachable!("photon elements handled above"),
    }
}

pub fn oracle_apply_all(ops: &[ElementOp], v: &FockVector) -> Result<FockVector> {
    ops.iter().try_fold(v.clone(), |acc, op| oracle_apply(op, &acc))
}

#[derive(Debug, Clone)]
enum Stage {
    Op(ElementOp),
    Damp { pos: usize, eta: f64 },
}

/// A density operator kept as a pure vector followed by channels and
/// elements; its Kraus images are generated on demand.
#[derive(Debug, Clone)]
pub struct FockMixture {
    base: FockVector,
    stages: Vec<Stage>,
}

impl From<FockVector> for FockMixture {
    fn from(v: FockVector) -> Self {
        FockMixture { base: v, stages: Vec::new() }
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// Kraus images `K_k w`, `K_k|n> = √C(n,k) η^{(n-k)/2} (1-η)^{k/2} |n-k>`.
fn damp_images(w: &FockVector, pos: usize, eta: f64) -> Vec<FockVector> {
    let sp = &w.space;
    let n = sp.cutoff;
    let lf = ln_factorials(n);
    let (outer, dim, inner) = sp.axis(2 + pos);
    let mut images = Vec::new();
    for k in 0..=n {
        let mut img = vec![ZERO; w.amps.len()];
        let mut any = false;
        for lvl in k..dim {
            let binom = (lf[lvl] - lf[k] - lf[lvl - k]).exp();
            let c = binom.sqrt() * eta.powf((lvl - k) as f64 / 2.0) * (1.0 - eta).powf(k as f64 / 2.0);
            if c == 0.0 {
                continue;
            }
            for o in 0..outer {
                for r in 0..inner {
                    let a = w.amps[(o * dim + lvl) * inner + r];
                    if a != ZERO {
                        img[(o * dim + lvl - k) * inner + r] = a * c;
                        any = true;
                    }
                }
            }
        }
        let img = FockVector { space: sp.clone(), amps: img };
        if any && img.norm_sqr() > PRUNE {
            images.push(img);
        }
    }
    images
}

impl FockMixture {
    pub fn space(&self) -> &Arc<FockSpace> {
        &self.base.space
    }

    /// Calls `f` on every (unnormalized) Kraus image; `ρ = Σ |w><w|`.
    pub fn for_each_image<F>(&self, mut f: F) -> Result<()>
    where
        F: FnMut(&FockVector) -> Result<()>,
    {
        fn walk<F>(v: FockVector, stages: &[Stage], f: &mut F) -> Result<()>
        where
            F: FnMut(&FockVector) -> Result<()>,
        {
            match stages.split_first() {
                None => f(&v),
                Some((Stage::Op(op), rest)) => walk(oracle_apply(op, &v)?, rest, f),
                Some((Stage::Damp { pos, eta }, rest)) => {
                    for img in damp_images(&v, *pos, *eta) {
                        walk(img, rest, f)?;
                    }
                    Ok(())
                }
            }
        }
        walk(self.base.clone(), &self.stages, &mut f)
    }

    pub fn apply(&self, op: &ElementOp) -> Result<FockMixture> {
        // validate eagerly on the base vector's space
        oracle_apply(op, &FockVector::zeros(self.space().clone()))?;
        let mut m = self.clone();
        m.stages.push(Stage::Op(*op));
        Ok(m)
    }

    pub fn trace(&self) -> Result<f64> {
        let mut t = 0.0;
        self.for_each_image(|w| {
            t += w.norm_sqr();
            Ok(())
        })?;
        Ok(t)
    }

    /// Dense density matrix; only for small spaces.
    pub fn density(&self) -> Result<DMatrix<C64>> {
        let d = self.space().dim();
        if d > 4096 {
            return Err(Error::InvalidInput(format!("dense density of dimension {d}")));
        }
        let mut rho = DMatrix::<C64>::zeros(d, d);
        self.for_each_image(|w| {
            for i in 0..d {
                if w.amps[i] == ZERO {
                    continue;
                }
                for j in 0..d {
                    rho[(i, j)] += w.amps[i] * w.amps[j].conj();
                }
            }
            Ok(())
        })?;
        Ok(rho)
    }
}

/// Amplitude damping with transmissivity `eta` on each listed bus.
pub fn oracle_damp(m: &FockMixture, buses: &[BusMode], eta: f64) -> Result<FockMixture> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("transmissivity {eta} outside [0, 1]")));
    }
    let mut out = m.clone();
    for &b in buses {
        let pos = m.space().bus_pos(b)?;
        out.stages.push(Stage::Damp { pos, eta });
    }
    Ok(out)
}

/// Diagonal POVMs on one bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FockPovm {
    /// `[P(no click), P(click)]` for efficiency `eta_d`.
    Apd { eta_d: f64 },
    /// Photon-number distribution up to the cutoff.
    Pnr,
}

impl FockPovm {
    fn outcomes(&self, cutoff: usize) -> usize {
        match self {
            FockPovm::Apd { .. } => 2,
            FockPovm::Pnr => cutoff + 1,
        }
    }

    /// Weight of outcome `k` on number state `n`.
    pub fn weight(&self, k: usize, n: usize) -> f64 {
        match *self {
            FockPovm::Apd { eta_d } => {
                let off = (1.0 - eta_d).powi(n as i32);
                if k == 0 {
                    off
                } else {
                    1.0 - off
                }
            }
            FockPovm::Pnr => f64::from(u8::from(k == n)),
        }
    }
}

pub fn oracle_measure(m: &FockMixture, bus: BusMode, povm: FockPovm) -> Result<Vec<f64>> {
    let sp = m.space().clone();
    let pos = sp.bus_pos(bus)?;
    let bd = sp.bus_dim();
    let mut levels = vec![0.0; sp.cutoff + 1];
    m.for_each_image(|w| {
        for (i, a) in w.amps.iter().enumerate() {
            levels[sp.bus_level(i % bd, pos)] += a.norm_sqr();
        }
        Ok(())
    })?;
    Ok((0..povm.outcomes(sp.cutoff))
        .map(|k| levels.iter().enumerate().map(|(n, p)| p * povm.weight(k, n)).sum())
        .collect())
}

/// Photon density after a diagonal POVM element `weight(n)` on `bus` and a
/// trace over all buses; returns the outcome probability and the normalized
/// density.
pub fn conditional_dv_density<W>(m: &FockMixture, bus: Option<BusMode>, weight: W) -> Result<(f64, DvDensity)>
where
    W: Fn(usize) -> f64,
{
    let sp = m.space().clone();
    let pos = bus.map(|b| sp.bus_pos(b)).transpose()?;
    let bd = sp.bus_dim();
    let dd = sp.dv_dim();
    let mut rho = DMatrix::<C64>::zeros(dd, dd);
    m.for_each_image(|w| {
        for f in 0..bd {
            let wt = pos.map_or(1.0, |p| weight(sp.bus_level(f, p)));
            if wt == 0.0 {
                continue;
            }
            for i in 0..dd {
                let a = w.amps[i * bd + f];
                if a == ZERO {
                    continue;
                }
                for j in 0..dd {
                    rho[(i, j)] += a * w.amps[j * bd + f].conj() * wt;
                }
            }
        }
        Ok(())
    })?;
    let p: f64 = (0..dd).map(|i| rho[(i, i)].re).sum();
    if p > 0.0 {
        rho /= C64::new(p, 0.0);
    }
    let mut order: Vec<(DvLabel, usize)> = (0..dd).map(|i| (sp.dv_label(i), i)).collect();
    order.sort();
    let basis: Vec<DvLabel> = order.iter().map(|(l, _)| l.clone()).collect();
    let matrix = DMatrix::from_fn(dd, dd, |i, j| rho[(order[i].1, order[j].1)]);
    Ok((p, DvDensity { basis, matrix }))
}

/// Oracle density compared with a label-algebra mixture, inside the span of
/// the latter's encoded branches.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// Frobenius distance of the two operators compressed to the span.
    pub distance: f64,
    /// Oracle weight outside the span.
    pub residual: f64,
    pub oracle_trace: f64,
    /// Eigenvalues of the oracle operator inside the span, descending.
    pub spectrum: Vec<f64>,
}

pub fn compare_with(m: &FockMixture, x: &MixedState) -> Result<Comparison> {
    let sp = m.space().clone();
    let encoded: Vec<(f64, FockVector)> =
        x.branches().iter().map(|b| Ok((b.weight, encode_in(&sp, &b.ket)?))).collect::<Result<_>>()?;
    // modified Gram-Schmidt, run twice
    let mut basis: Vec<FockVector> = Vec::new();
    for (_, v) in &encoded {
        let mut u = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.inner(&u)?;
                for (a, b) in u.amps.iter_mut().zip(&q.amps) {
                    *a -= c * b;
                }
            }
        }
        let n = u.norm_sqr().sqrt();
        if n > 1e-9 {
            u.amps.iter_mut().for_each(|a| *a /= n);
            basis.push(u);
        }
    }
    let r = basis.len();
    let compress = |v: &FockVector| -> Result<Vec<C64>> { basis.iter().map(|q| q.inner(v)).collect() };
    let mut closed = DMatrix::<C64>::zeros(r, r);
    for (w, v) in &encoded {
        let c = compress(v)?;
        for i in 0..r {
            for j in 0..r {
                closed[(i, j)] += c[i] * c[j].conj() * *w;
            }
        }
    }
    let mut oracle = DMatrix::<C64>::zeros(r, r);
    let mut trace = 0.0;
    m.for_each_image(|w| {
        trace += w.norm_sqr();
        let c = compress(w)?;
        for i in 0..r {
            for j in 0..r {
                oracle[(i, j)] += c[i] * c[j].conj();
            }
        }
        Ok(())
    })?;
    let inside: f64 = (0..r).map(|i| oracle[(i, i)].re).sum();
    let mut spectrum: Vec<f64> = oracle.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    Ok(Comparison {
        distance: (oracle - closed).norm(),
        residual: (trace - inside).max(0.0),
        oracle_trace: trace,
        spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::XpmParams;
    use crate::hybrid_state::coherent_overlap;

    fn reg() -> (Arc<ModeRegistry>, DvMode, DvMode, BusMode, BusMode) {
        let mut r = ModeRegistry::new();
        let m0 = r.add_dv("a0", Side::A);
        let m1 = r.add_dv("a1", Side::A);
        let b0 = r.add_bus("b0");
        let b1 = r.add_bus("b1");
        (r.into_shared(), m0, m1, b0, b1)
    }

    fn coherent(reg: &Arc<ModeRegistry>, bus: BusMode, g: C64) -> HybridKet {
        let mut k = HybridKet::zero(reg.clone(), vec![bus]).unwrap();
        k.push_term(ONE, DvLabel::vacuum(), &[g]).unwrap();
        k
    }

    #[test]
    fn vacuum_and_unit_norm() {
        let (r, _, _, b0, _) = reg();
        let v = encode(&coherent(&r, b0, ZERO), 40).unwrap();
        assert_eq!(v.amps()[0], ONE);
        assert!(v.amps()[1..].iter().all(|a| *a == ZERO));
        let v = encode(&coherent(&r, b0, ONE), 40).unwrap();
        assert!((v.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_tail_is_rejected() {
        let (r, _, _, b0, _) = reg();
        let err = encode(&coherent(&r, b0, C64::new(5.0, 0.0)), 20).unwrap_err();
        assert!(matches!(err, Error::TailTooHeavy { .. }));
        assert!(matches!(FockSpace::for_registry(r.clone(), &[b0, b0, b0], 10), Err(Error::TooManyBuses { .. })));
    }

    #[test]
    fn overlaps_match_closed_form() {
        let (r, _, _, b0, _) = reg();
        let pts = [C64::new(0.3, -1.2), C64::new(-1.5, 0.4), C64::new(1.9, 0.1), C64::new(0.0, 2.0)];
        for a in pts {
            for b in pts {
                let sp = FockSpace::for_registry(r.clone(), &[b0], 40).unwrap();
                let va = encode_in(&sp, &coherent(&r, b0, a)).unwrap();
                let vb = encode_in(&sp, &coherent(&r, b0, b)).unwrap();
                assert!((vb.inner(&va).unwrap() - coherent_overlap(a, b)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn beam_splitter_maps_coherent_labels() {
        let (r, _, _, b0, b1) = reg();
        let (a, b) = (C64::new(1.2, 0.3), C64::new(-0.4, 0.9));
        let mut k = HybridKet::zero(r.clone(), vec![b0, b1]).unwrap();
        k.push_term(ONE, DvLabel::vacuum(), &[a, b]).unwrap();
        let mut want = HybridKet::zero(r.clone(), vec![b0, b1]).unwrap();
        let s = FRAC_1_SQRT_2;
        want.push_term(ONE, DvLabel::vacuum(), &[(a - b) * s, (a + b) * s]).unwrap();
        let sp = FockSpace::for_registry(r.clone(), &[b0, b1], 40).unwrap();
        let v = encode_in(&sp, &k).unwrap();
        let out = oracle_apply(&ElementOp::Bs50Bus { bus1: b0, bus2: b1 }, &v).unwrap();
        assert!(out.distance(&encode_in(&sp, &want).unwrap()).unwrap() < 1e-10);
        let back = oracle_apply(&ElementOp::Bs50BusInverse { bus1: b0, bus2: b1 }, &out).unwrap();
        assert!(back.distance(&v).unwrap() < 1e-10);
        // swapped port order
        let sw = oracle_apply(&ElementOp::Bs50Bus { bus1: b1, bus2: b0 }, &v).unwrap();
        let mut want2 = HybridKet::zero(r.clone(), vec![b0, b1]).unwrap();
        want2.push_term(ONE, DvLabel::vacuum(), &[(a + b) * s, (b - a) * s]).unwrap();
        assert!(sw.distance(&encode_in(&sp, &want2).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn leakage_is_detected() {
        let (r, _, _, b0, b1) = reg();
        let mut k = HybridKet::zero(r.clone(), vec![b0, b1]).unwrap();
        k.push_term(ONE, DvLabel::vacuum(), &[C64::new(2.4, 0.0), C64::new(-2.4, 0.0)]).unwrap();
        let v = encode(&k, 30).unwrap();
        let err = oracle_apply(&ElementOp::Bs50Bus { bus1: b0, bus2: b1 }, &v).unwrap_err();
        assert!(matches!(err, Error::CutoffLeakage { .. }));
    }

    #[test]
    fn xpm_on_occupied_mode() {
        let (r, m0, _, b0, _) = reg();
        let alpha = C64::new(1.0, 0.0);
        let mut k = HybridKet::zero(r.clone(), vec![b0]).unwrap();
        k.push_term(ONE, DvLabel::single(m0, Pol::H), &[alpha]).unwrap();
        let op = ElementOp::Xpm { dv: m0, bus: b0, params: XpmParams::new(0.7).unwrap() };
        let v = encode(&k, 40).unwrap();
        let got = oracle_apply(&op, &v).unwrap();
        let want = encode_in(v.space(), &op.apply(&k).unwrap()).unwrap();
        assert!(got.distance(&want).unwrap() < 1e-8);
    }

    #[test]
    fn no_loss_keeps_the_projector() {
        let (r, m0, _, b0, _) = reg();
        let mut k = HybridKet::zero(r.clone(), vec![b0]).unwrap();
        k.push_term(ONE, DvLabel::single(m0, Pol::H), &[C64::new(0.5, 0.2)]).unwrap();
        let v = encode(&k, 40).unwrap();
        let m = oracle_damp(&FockMixture::from(v.clone()), &[b0], 1.0).unwrap();
        let mut images = Vec::new();
        m.for_each_image(|w| {
            images.push(w.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(images.len(), 1);
        assert!(images[0].distance(&v).unwrap() < 1e-15);
    }

    #[test]
    fn apd_click_on_unit_amplitude() {
        let (r, _, _, b0, _) = reg();
        let v = encode(&coherent(&r, b0, ONE), 40).unwrap();
        let p = oracle_measure(&v.into(), b0, FockPovm::Apd { eta_d: 0.5 }).unwrap();
        assert!((p[1] - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dense_density_is_hermitian() {
        let mut rr = ModeRegistry::new();
        let b0 = rr.add_bus("b0");
        let r = rr.into_shared();
        let v = encode(&coherent(&r, b0, C64::new(0.6, 0.0)), 40).unwrap();
        let rho = oracle_damp(&v.into(), &[b0], 0.3).unwrap().density().unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!((rho.adjoint() - &rho).norm() < 1e-14);
    }
}
