//! Protocol circuits: input preparation, decomposition with QND heralding,
//! the double-XPM parity gate with its detection back-ends, and full runs.

mod input;
mod parity;
mod stage1;
mod trace;

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use input::{random_input, InputPairState};
pub use parity::{
    frame_correct, parity_gate, parity_projection, pauli_frame_correct, pnr_backend, pnr_outcomes, pre_detection_state,
    reference_mixture, threshold_backend, threshold_outcomes, usd_backend, usd_outcomes, EntangleOutcome, GateConfig,
    GateOutcome, Parity,
};
pub use stage1::{
    expected_port_state, side_ops, stage1_decompose, stage1_outcomes, stage1_state, Heralding, Pattern, Port,
    QndConfig, StageOneResult, SEPARATION_EXPONENT,
};
pub use trace::{run_end_to_end, JsonlSink, MemorySink, RunConfig, RunReport, TraceRecord, TraceSink};

use crate::error::{Error, Result};
use crate::hybrid_state::{DvLabel, HybridKet, Pol, C64};
use crate::registry::{BusMode, DvMode, ModeRegistry, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellLabel {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellLabel {
    pub const ALL: [BellLabel; 4] = [BellLabel::PhiPlus, BellLabel::PhiMinus, BellLabel::PsiPlus, BellLabel::PsiMinus];

    /// Amplitudes on `{HH, HV, VH, VV}`.
    pub fn amplitudes(self) -> [f64; 4] {
        let h = FRAC_1_SQRT_2;
        match self {
            BellLabel::PhiPlus => [h, 0.0, 0.0, h],
            BellLabel::PhiMinus => [h, 0.0, 0.0, -h],
            BellLabel::PsiPlus => [0.0, h, h, 0.0],
            BellLabel::PsiMinus => [0.0, h, -h, 0.0],
        }
    }

    pub fn is_even(self) -> bool {
        matches!(self, BellLabel::PhiPlus | BellLabel::PhiMinus)
    }
}

impl fmt::Display for BellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BellLabel::PhiPlus => "phi+",
            BellLabel::PhiMinus => "phi-",
            BellLabel::PsiPlus => "psi+",
            BellLabel::PsiMinus => "psi-",
        })
    }
}

const POLS: [Pol; 2] = [Pol::H, Pol::V];

/// Two-photon ket `Σ c_k |k>` over `{HH, HV, VH, VV}` on modes `a` and `b`.
pub fn pair_ket(registry: Arc<ModeRegistry>, a: DvMode, b: DvMode, amps: [C64; 4]) -> Result<HybridKet> {
    let mut terms = Vec::new();
    for (i, pa) in POLS.iter().enumerate() {
        for (j, pb) in POLS.iter().enumerate() {
            let c = amps[2 * i + j];
            if c != C64::new(0.0, 0.0) {
                terms.push((c, DvLabel::pair((a, *pa), (b, *pb))));
            }
        }
    }
    HybridKet::from_dv(registry, terms)
}

pub fn bell_ket(registry: Arc<ModeRegistry>, a: DvMode, b: DvMode, label: BellLabel) -> Result<HybridKet> {
    pair_ket(registry, a, b, label.amplitudes().map(|v| C64::new(v, 0.0)))
}

/// Decomposition circuit variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Split in the H/V basis.
    Fig1,
    /// Split in the ± basis.
    Fig3,
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig1" => Ok(Design::Fig1),
            "fig3" => Ok(Design::Fig3),
            _ => Err(Error::InvalidInput(format!("unknown design '{s}'"))),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Fig1 => "fig1",
            Design::Fig3 => "fig3",
        })
    }
}

/// Detection back-end of the parity gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Pnr,
    Threshold,
    Usd,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pnr" => Ok(Backend::Pnr),
            "threshold" => Ok(Backend::Threshold),
            "usd" => Ok(Backend::Usd),
            _ => Err(Error::InvalidInput(format!("unknown backend '{s}'"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Pnr => "pnr",
            Backend::Threshold => "threshold",
            Backend::Usd => "usd",
        })
    }
}

/// Modes of one side of the decomposition circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideModes {
    pub side: Side,
    pub input: DvMode,
    pub p1: DvMode,
    pub p2: DvMode,
    pub p3: DvMode,
    pub p4: DvMode,
    pub k: DvMode,
    pub r: DvMode,
    /// Unused PBS outputs; they stay empty when the circuit works.
    pub kx: DvMode,
    pub rx: DvMode,
    pub q1: BusMode,
    pub q2: BusMode,
}

impl SideModes {
    pub fn register(reg: &mut ModeRegistry, side: Side) -> Self {
        let s = side.to_string();
        let dv = |reg: &mut ModeRegistry, n: &str| reg.add_dv(&format!("{n}_{s}"), side);
        SideModes {
            side,
            input: dv(reg, "in"),
            p1: dv(reg, "p1"),
            p2: dv(reg, "p2"),
            p3: dv(reg, "p3"),
            p4: dv(reg, "p4"),
            k: dv(reg, "K"),
            r: dv(reg, "R"),
            kx: dv(reg, "Kx"),
            rx: dv(reg, "Rx"),
            q1: reg.add_bus(&format!("Q{s}1")),
            q2: reg.add_bus(&format!("Q{s}2")),
        }
    }

    pub fn port(&self, p: Port) -> DvMode {
        match p {
            Port::K => self.k,
            Port::R => self.r,
        }
    }
}

/// Modes one side contributes to the parity gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSideModes {
    pub t1: DvMode,
    pub t2: DvMode,
    pub out: DvMode,
    pub out_x: DvMode,
}

impl GateSideModes {
    pub fn register(reg: &mut ModeRegistry, side: Side) -> Self {
        let s = side.to_string();
        GateSideModes {
            t1: reg.add_dv(&format!("t1_{s}"), side),
            t2: reg.add_dv(&format!("t2_{s}"), side),
            out: reg.add_dv(&format!("{s}2"), side),
            out_x: reg.add_dv(&format!("{s}2x"), side),
        }
    }
}

/// Full mode layout of the entangler.
#[derive(Debug, Clone)]
pub struct ProtocolModes {
    pub registry: Arc<ModeRegistry>,
    pub a: SideModes,
    pub b: SideModes,
    pub gate_a: GateSideModes,
    pub gate_b: GateSideModes,
    /// Parity-gate buses; `p[2]` and `p[3]` hold the comparison beams.
    pub p: [BusMode; 4],
}

impl ProtocolModes {
    pub fn new() -> Self {
        let mut reg = ModeRegistry::new();
        let a = SideModes::register(&mut reg, Side::A);
        let b = SideModes::register(&mut reg, Side::B);
        let gate_a = GateSideModes::register(&mut reg, Side::A);
        let gate_b = GateSideModes::register(&mut reg, Side::B);
        let p = [reg.add_bus("P1"), reg.add_bus("P2"), reg.add_bus("P3"), reg.add_bus("P4")];
        ProtocolModes { registry: reg.into_shared(), a, b, gate_a, gate_b, p }
    }

    pub fn side(&self, side: Side) -> &SideModes {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn bell(&self, label: BellLabel) -> Result<HybridKet> {
        bell_ket(self.registry.clone(), self.gate_a.out, self.gate_b.out, label)
    }
}

impl Default for ProtocolModes {
    fn default() -> Self {
        Self::new()
    }
}
