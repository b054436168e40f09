#![allow(dead_code)]

use std::sync::Arc;

use entangler::hybrid_state::{normalize, DvLabel, HybridKet, Pol, C64};
use entangler::registry::{BusMode, DvMode, ModeRegistry, Side};
use proptest::prelude::*;

pub struct Small {
    pub reg: Arc<ModeRegistry>,
    pub a: [DvMode; 4],
    pub b: [DvMode; 2],
    pub bus: [BusMode; 2],
}

pub fn small() -> Small {
    let mut r = ModeRegistry::new();
    let a = [0, 1, 2, 3].map(|i| r.add_dv(&format!("a{i}"), Side::A));
    let b = [0, 1].map(|i| r.add_dv(&format!("b{i}"), Side::B));
    let bus = [r.add_bus("u0"), r.add_bus("u1")];
    Small { reg: r.into_shared(), a, b, bus }
}

/// One random term: photon on side A, optional photon on side B, two labels.
#[derive(Debug, Clone)]
pub struct TermSpec {
    pub coeff: (f64, f64),
    pub a: (usize, bool),
    pub b: Option<(usize, bool)>,
    pub labels: [(f64, f64); 2],
}

pub fn term_spec(max_amp: f64) -> impl Strategy<Value = TermSpec> {
    let lab = (0.0..max_amp, -std::f64::consts::PI..std::f64::consts::PI);
    (
        (-1.0..1.0f64, -1.0..1.0f64),
        (0..4usize, any::<bool>()),
        proptest::option::of((0..2usize, any::<bool>())),
        [lab.clone(), lab],
    )
        .prop_map(|(coeff, a, b, labels)| TermSpec { coeff, a, b, labels: labels.map(|(r, phi)| (r, phi)) })
}

pub fn ket_specs(max_amp: f64) -> impl Strategy<Value = Vec<TermSpec>> {
    proptest::collection::vec(term_spec(max_amp), 1..4)
}

fn pol(v: bool) -> Pol {
    if v {
        Pol::V
    } else {
        Pol::H
    }
}

pub fn build(s: &Small, specs: &[TermSpec]) -> Option<HybridKet> {
    let mut k = HybridKet::zero(s.reg.clone(), s.bus.to_vec()).unwrap();
    for t in specs {
        let mut photons = vec![(s.a[t.a.0], pol(t.a.1))];
        if let Some((i, p)) = t.b {
            photons.push((s.b[i], pol(p)));
        }
        let labels = t.labels.map(|(r, phi)| C64::from_polar(r, phi));
        k.push_term(C64::new(t.coeff.0, t.coeff.1), DvLabel::from_photons(photons), &labels).unwrap();
    }
    normalize(&k).ok()
}
