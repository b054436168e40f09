//! Unitary optical elements as term-wise label rewrites.
//!
//! Photon elements act on the single photon of a side through its
//! `(mode, polarization)` label; bus elements rewrite coherent labels.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8, PI};

use crate::error::{Error, Result};
use crate::hybrid_state::{HybridKet, HybridTerm, MixedState, Pol, C64};
use crate::registry::{BusMode, DvMode};

/// HWP angle exchanging H and V (used to merge paths on a PBS).
pub const HWP_PATH_MERGE: f64 = FRAC_PI_4;
/// HWP angle mapping `|±>` to `|H>`/`|V>` (and back).
pub const HWP_DIAGONAL: f64 = FRAC_PI_8;
/// HWP angle acting as a polarization sign flip `|V> → -|V>`.
pub const HWP_SIGN_FLIP: f64 = 0.0;

/// Conditional phase imprinted on a bus per signal photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XpmParams {
    pub theta: f64,
}

impl XpmParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() || theta.abs() > PI {
            return Err(Error::Domain(format!("XPM phase {theta} outside [-π, π]")));
        }
        Ok(XpmParams { theta })
    }
}

/// Two-input polarizing beam splitter: H is transmitted, V reflected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbsPorts {
    pub in_a: DvMode,
    pub in_b: DvMode,
    /// Receives H from `in_a` and V from `in_b`.
    pub out_t: DvMode,
    /// Receives V from `in_a` and H from `in_b`.
    pub out_r: DvMode,
}

/// Descriptor of one optical element; shared by the label algebra and the
/// Fock-space oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementOp {
    /// Single-input PBS: H to `out_h`, V to `out_v`.
    PbsSplit {
        input: DvMode,
        out_h: DvMode,
        out_v: DvMode,
    },
    Pbs(PbsPorts),
    /// Diagonal-basis PBS: `|+>` to `out_p`, `|->` to `out_m`.
    PbsPm {
        input: DvMode,
        out_p: DvMode,
        out_m: DvMode,
    },
    Hwp {
        mode: DvMode,
        angle: f64,
    },
    Bs50Dv {
        c: DvMode,
        d: DvMode,
    },
    Bs50Bus {
        bus1: BusMode,
        bus2: BusMode,
    },
    Bs50BusInverse {
        bus1: BusMode,
        bus2: BusMode,
    },
    Phase {
        bus: BusMode,
        phi: f64,
    },
    Xpm {
        dv: DvMode,
        bus: BusMode,
        params: XpmParams,
    },
}

impl ElementOp {
    pub fn apply(&self, x: &HybridKet) -> Result<HybridKet> {
        match *self {
            ElementOp::PbsSplit { input, out_h, out_v } => apply_pbs(x, input, out_h, out_v),
            ElementOp::Pbs(ports) => apply_pbs2(x, ports),
            ElementOp::PbsPm { input, out_p, out_m } => apply_pbs_pm(x, input, out_p, out_m),
            ElementOp::Hwp { mode, angle } => apply_hwp(x, mode, angle),
            ElementOp::Bs50Dv { c, d } => apply_bs50_dv(x, c, d),
            ElementOp::Bs50Bus { bus1, bus2 } => apply_bs50_bus(x, bus1, bus2),
            ElementOp::Bs50BusInverse { bus1, bus2 } => apply_bs50_bus_inverse(x, bus1, bus2),
            ElementOp::Phase { bus, phi } => apply_phase(x, bus, phi),
            ElementOp::Xpm { dv, bus, params } => apply_xpm(x, dv, bus, params),
        }
    }

    pub fn apply_mixed(&self, x: &MixedState) -> Result<MixedState> {
        x.map_kets(|k| self.apply(k))
    }
}

/// Applies a sequence of elements in order.
pub fn apply_all(x: &HybridKet, ops: &[ElementOp]) -> Result<HybridKet> {
    ops.iter().try_fold(x.clone(), |k, op| op.apply(&k))
}

pub fn apply_all_mixed(x: &MixedState, ops: &[ElementOp]) -> Result<MixedState> {
    x.map_kets(|k| apply_all(k, ops))
}

type PhotonImage = Vec<(C64, DvMode, Pol)>;

/// Rewrites each photon through `f`; photons for which `f` returns `None`
/// are left untouched.
fn map_photons<F>(x: &HybridKet, inputs: &[DvMode], outputs: &[DvMode], f: F) -> Result<HybridKet>
where
    F: Fn(DvMode, Pol) -> Option<PhotonImage>,
{
    for modes in [inputs, outputs] {
        for (i, m) in modes.iter().enumerate() {
            x.registry().check_dv(*m)?;
            if modes[..i].contains(m) {
                return Err(Error::InvalidInput(format!(
                    "element ports must be distinct ({})",
                    x.registry().dv_name(*m)
                )));
            }
        }
    }
    x.flat_map_terms(|t, out| {
        let mut partial: Vec<(C64, Vec<(DvMode, Pol)>)> = vec![(t.coeff, Vec::new())];
        for &(mode, pol) in t.dv.photons() {
            let image = f(mode, pol).unwrap_or_else(|| vec![(C64::new(1.0, 0.0), mode, pol)]);
            let mut next = Vec::with_capacity(partial.len() * image.len());
            for (c, photons) in &partial {
                for &(a, m, p) in &image {
                    if a == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut ph = photons.clone();
                    ph.push((m, p));
                    next.push((c * a, ph));
                }
            }
            partial = next;
        }
        for (coeff, photons) in partial {
            let mut sorted = photons.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::ModeCollision(x.registry().dv_name(sorted[0].0).to_string()));
            }
            out.push(HybridTerm { coeff, dv: crate::hybrid_state::DvLabel::from_photons(photons), bus: t.bus.clone() });
        }
        Ok(())
    })
}

fn r(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// Single-input PBS: H to `out_h`, V to `out_v`.
pub fn apply_pbs(x: &HybridKet, input: DvMode, out_h: DvMode, out_v: DvMode) -> Result<HybridKet> {
    map_photons(x, &[input], &[out_h, out_v], |m, p| {
        (m == input).then(|| match p {
            Pol::H => vec![(r(1.0), out_h, Pol::H)],
            Pol::V => vec![(r(1.0), out_v, Pol::V)],
        })
    })
}

pub fn apply_pbs2(x: &HybridKet, ports: PbsPorts) -> Result<HybridKet> {
    let PbsPorts { in_a, in_b, out_t, out_r } = ports;
    map_photons(x, &[in_a, in_b], &[out_t, out_r], |m, p| {
        if m == in_a {
            Some(match p {
                Pol::H => vec![(r(1.0), out_t, Pol::H)],
                Pol::V => vec![(r(1.0), out_r, Pol::V)],
            })
        } else if m == in_b {
            Some(match p {
                Pol::H => vec![(r(1.0), out_r, Pol::H)],
                Pol::V => vec![(r(1.0), out_t, Pol::V)],
            })
        } else {
            None
        }
    })
}

/// Diagonal PBS: transmits `|+>` into `out_p`, reflects `|->` into `out_m`.
pub fn apply_pbs_pm(x: &HybridKet, input: DvMode, out_p: DvMode, out_m: DvMode) -> Result<HybridKet> {
    map_photons(x, &[input], &[out_p, out_m], |m, p| {
        (m == input).then(|| {
            // <+|p>|+>_P + <-|p>|->_M, with |±> = (H ± V)/√2
            let plus = FRAC_1_SQRT_2;
            let minus = if p == Pol::H { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            vec![
                (r(plus * FRAC_1_SQRT_2), out_p, Pol::H),
                (r(plus * FRAC_1_SQRT_2), out_p, Pol::V),
                (r(minus * FRAC_1_SQRT_2), out_m, Pol::H),
                (r(-minus * FRAC_1_SQRT_2), out_m, Pol::V),
            ]
        })
    })
}

/// Half-wave plate with fast axis at `angle`: Jones matrix
/// `[[cos 2φ, sin 2φ], [sin 2φ, -cos 2φ]]`.
pub fn apply_hwp(x: &HybridKet, mode: DvMode, angle: f64) -> Result<HybridKet> {
    let (s, c) = (2.0 * angle).sin_cos();
    map_photons(x, &[mode], &[], |m, p| {
        (m == mode).then(|| match p {
            Pol::H => vec![(r(c), mode, Pol::H), (r(s), mode, Pol::V)],
            Pol::V => vec![(r(s), mode, Pol::H), (r(-c), mode, Pol::V)],
        })
    })
}

/// 50/50 beam splitter on photon modes: `c† → (c† + d†)/√2`, `d† → (c† - d†)/√2`.
pub fn apply_bs50_dv(x: &HybridKet, c: DvMode, d: DvMode) -> Result<HybridKet> {
    map_photons(x, &[c, d], &[], |m, p| {
        if m == c {
            Some(vec![(r(FRAC_1_SQRT_2), c, p), (r(FRAC_1_SQRT_2), d, p)])
        } else if m == d {
            Some(vec![(r(FRAC_1_SQRT_2), c, p), (r(-FRAC_1_SQRT_2), d, p)])
        } else {
            None
        }
    })
}

fn bus_pair(x: &HybridKet, bus1: BusMode, bus2: BusMode) -> Result<(usize, usize)> {
    if bus1 == bus2 {
        return Err(Error::InvalidInput("beam splitter needs two distinct buses".into()));
    }
    Ok((x.bus_index(bus1)?, x.bus_index(bus2)?))
}

/// 50/50 beam splitter on buses: `(a, b) → ((a - b)/√2, (a + b)/√2)`.
pub fn apply_bs50_bus(x: &HybridKet, bus1: BusMode, bus2: BusMode) -> Result<HybridKet> {
    let (i, j) = bus_pair(x, bus1, bus2)?;
    x.flat_map_terms(|t, out| {
        let mut t = t.clone();
        let (a, b) = (t.bus[i], t.bus[j]);
        t.bus[i] = (a - b) * FRAC_1_SQRT_2;
        t.bus[j] = (a + b) * FRAC_1_SQRT_2;
        out.push(t);
        Ok(())
    })
}

/// Inverse of [`apply_bs50_bus`]: `(a, b) → ((a + b)/√2, (b - a)/√2)`.
pub fn apply_bs50_bus_inverse(x: &HybridKet, bus1: BusMode, bus2: BusMode) -> Result<HybridKet> {
    let (i, j) = bus_pair(x, bus1, bus2)?;
    x.flat_map_terms(|t, out| {
        let mut t = t.clone();
        let (a, b) = (t.bus[i], t.bus[j]);
        t.bus[i] = (a + b) * FRAC_1_SQRT_2;
        t.bus[j] = (b - a) * FRAC_1_SQRT_2;
        out.push(t);
        Ok(())
    })
}

pub fn apply_phase(x: &HybridKet, bus: BusMode, phi: f64) -> Result<HybridKet> {
    let i = x.bus_index(bus)?;
    let rot = C64::from_polar(1.0, phi);
    x.flat_map_terms(|t, out| {
        let mut t = t.clone();
        t.bus[i] *= rot;
        out.push(t);
        Ok(())
    })
}

/// Cross-Kerr coupling: terms with a photon in `dv` rotate the bus label by `e^{iθ}`.
pub fn apply_xpm(x: &HybridKet, dv: DvMode, bus: BusMode, p: XpmParams) -> Result<HybridKet> {
    x.registry().check_dv(dv)?;
    let i = x.bus_index(bus)?;
    let rot = C64::from_polar(1.0, p.theta);
    x.flat_map_terms(|t, out| {
        let mut t = t.clone();
        if t.dv.occupies(dv) {
            t.bus[i] *= rot;
        }
        out.push(t);
        Ok(())
    })
}
