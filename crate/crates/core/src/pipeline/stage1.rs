use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detection::{ideal_vacuum_records, threshold_records, ApdModel, DetectionRecord, DetectorOutcome};
use crate::elements::{apply_all_mixed, ElementOp, PbsPorts, XpmParams, HWP_DIAGONAL, HWP_PATH_MERGE};
use crate::error::{Error, Result};
use crate::hybrid_state::{trace_out_bus, HybridKet, MixedState, C64};
use crate::registry::DvMode;
use crate::rng::{Sampler, SeedPath};

use super::{pair_ket, Design, InputPairState, ProtocolModes, SideModes};

/// `ln 10^12`: the no-click probability of the shifted QND beam must be
/// below `10^-12` for ideal heralding.
pub const SEPARATION_EXPONENT: f64 = 27.631021115928547;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heralding {
    /// Projective vacuum / non-vacuum discrimination of the QND beam.
    Ideal,
    /// Exact threshold-detector POVM; conditional states may be mixed.
    Povm,
}

impl std::str::FromStr for Heralding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(Heralding::Ideal),
            "povm" => Ok(Heralding::Povm),
            _ => Err(Error::InvalidInput(format!("unknown heralding mode '{s}'"))),
        }
    }
}

impl fmt::Display for Heralding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heralding::Ideal => "ideal",
            Heralding::Povm => "povm",
        })
    }
}

/// QND module parameters for the decomposition stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QndConfig {
    pub alpha: C64,
    pub theta: f64,
    pub apd: ApdModel,
    pub heralding: Heralding,
}

impl Default for QndConfig {
    fn default() -> Self {
        QndConfig { alpha: C64::new(100.0, 0.0), theta: 0.3, apd: ApdModel::ideal(), heralding: Heralding::Ideal }
    }
}

impl QndConfig {
    /// `η_D |α(e^{iθ} - 1)|² / 2`, minus the log of the no-click probability
    /// of a shifted beam.
    pub fn separation_exponent(&self) -> f64 {
        let s = (self.alpha * (C64::from_polar(1.0, self.theta) - 1.0)).norm_sqr() / 2.0;
        self.apd.eta_d() * s
    }

    pub fn validate(&self) -> Result<()> {
        XpmParams::new(self.theta)?;
        if self.heralding == Heralding::Ideal {
            let exponent = self.separation_exponent();
            if exponent < SEPARATION_EXPONENT {
                return Err(Error::SeparationTooSmall { exponent, required: SEPARATION_EXPONENT });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    K,
    R,
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Port::K => "K",
            Port::R => "R",
        })
    }
}

/// Click pattern of the two QND modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub a_on: bool,
    pub b_on: bool,
}

impl Pattern {
    pub fn ports(self) -> (Port, Port) {
        let p = |on| if on { Port::R } else { Port::K };
        (p(self.a_on), p(self.b_on))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |on| if on { "on" } else { "off" };
        write!(f, "{}-{}", s(self.a_on), s(self.b_on))
    }
}

#[derive(Debug, Clone)]
pub struct StageOneResult {
    pub design: Design,
    pub pattern: Pattern,
    pub ports: (Port, Port),
    pub port_modes: (DvMode, DvMode),
    /// Ports whose state carries `|H> - |V>` (second design, R ports).
    pub sign_flip: (bool, bool),
    pub probability: f64,
    pub post_state: MixedState,
    pub seed_path: Option<SeedPath>,
}

/// Photon-side elements of one half of the decomposition circuit, up to the
/// point where the QND beams are compared.
pub fn side_ops(design: Design, s: &SideModes, xpm: XpmParams) -> Vec<ElementOp> {
    let mut ops = match design {
        Design::Fig1 => vec![
            ElementOp::PbsSplit { input: s.input, out_h: s.p1, out_v: s.p3 },
            ElementOp::Xpm { dv: s.p3, bus: s.q1, params: xpm },
            ElementOp::Bs50Dv { c: s.p1, d: s.p2 },
            ElementOp::Bs50Dv { c: s.p3, d: s.p4 },
        ],
        Design::Fig3 => vec![
            ElementOp::PbsPm { input: s.input, out_p: s.p1, out_m: s.p3 },
            ElementOp::Hwp { mode: s.p1, angle: HWP_DIAGONAL },
            ElementOp::Hwp { mode: s.p3, angle: HWP_DIAGONAL },
            ElementOp::Xpm { dv: s.p3, bus: s.q1, params: xpm },
            ElementOp::Bs50Dv { c: s.p1, d: s.p2 },
            ElementOp::Bs50Dv { c: s.p4, d: s.p3 },
        ],
    };
    ops.extend([
        ElementOp::Hwp { mode: s.p2, angle: HWP_PATH_MERGE },
        ElementOp::Hwp { mode: s.p4, angle: HWP_PATH_MERGE },
        ElementOp::Pbs(PbsPorts { in_a: s.p1, in_b: s.p2, out_t: s.k, out_r: s.kx }),
        ElementOp::Pbs(PbsPorts { in_a: s.p4, in_b: s.p3, out_t: s.r, out_r: s.rx }),
        ElementOp::Bs50Bus { bus1: s.q1, bus2: s.q2 },
    ]);
    ops
}

fn inject_qnd(x: &MixedState, s: &SideModes, alpha: C64) -> Result<MixedState> {
    x.map_kets(|k| k.with_bus(s.q1, alpha)?.with_bus(s.q2, alpha))
}

/// State after both sides' circuits, just before the QND detectors fire.
pub fn stage1_state(
    input: &InputPairState,
    design: Design,
    modes: &ProtocolModes,
    qnd: &QndConfig,
) -> Result<MixedState> {
    let xpm = XpmParams::new(qnd.theta)?;
    let mut x = input.to_mixed(modes.registry.clone(), modes.a.input, modes.b.input)?;
    for s in [&modes.a, &modes.b] {
        x = inject_qnd(&x, s, qnd.alpha)?;
        x = apply_all_mixed(&x, &side_ops(design, s, xpm))?;
    }
    Ok(x)
}

fn herald_side(x: &MixedState, s: &SideModes, qnd: &QndConfig) -> Result<Vec<DetectionRecord>> {
    let recs = match qnd.heralding {
        Heralding::Ideal => ideal_vacuum_records(x, s.q1)?,
        Heralding::Povm => threshold_records(x, s.q1, qnd.apd)?,
    };
    recs.into_iter()
        .map(|mut r| {
            r.post_state = trace_out_bus(&r.post_state, &[s.q2])?;
            Ok(r)
        })
        .collect()
}

/// Every heralding pattern with its exact probability and conditional state.
pub fn stage1_outcomes(
    input: &InputPairState,
    design: Design,
    modes: &ProtocolModes,
    qnd: &QndConfig,
) -> Result<Vec<StageOneResult>> {
    qnd.validate()?;
    let x = stage1_state(input, design, modes, qnd)?;
    let mut out = Vec::new();
    for ra in herald_side(&x, &modes.a, qnd)? {
        for rb in herald_side(&ra.post_state, &modes.b, qnd)? {
            let pattern = Pattern { a_on: ra.outcome == DetectorOutcome::On, b_on: rb.outcome == DetectorOutcome::On };
            let ports = pattern.ports();
            let flip = |p| design == Design::Fig3 && p == Port::R;
            out.push(StageOneResult {
                design,
                pattern,
                ports,
                port_modes: (modes.a.port(ports.0), modes.b.port(ports.1)),
                sign_flip: (flip(ports.0), flip(ports.1)),
                probability: ra.probability * rb.probability,
                post_state: rb.post_state,
                seed_path: None,
            });
        }
    }
    Ok(out)
}

/// Runs the decomposition and samples one heralding pattern.
pub fn stage1_decompose(
    input: &InputPairState,
    design: Design,
    modes: &ProtocolModes,
    qnd: &QndConfig,
    sampler: &mut Sampler,
) -> Result<StageOneResult> {
    let outcomes = stage1_outcomes(input, design, modes, qnd)?;
    let path = sampler.path();
    let weights: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
    let idx = sampler.categorical(&weights);
    let mut res = outcomes.into_iter().nth(idx).expect("at least one pattern");
    res.seed_path = Some(path);
    Ok(res)
}

/// `(|H> ± |V>)(|H> ± |V>)/2` on the heralded ports.
pub fn expected_port_state(modes: &ProtocolModes, res: &StageOneResult) -> Result<HybridKet> {
    let sa = if res.sign_flip.0 { -1.0 } else { 1.0 };
    let sb = if res.sign_flip.1 { -1.0 } else { 1.0 };
    let h = 0.5;
    let amps = [h, h * sb, h * sa, h * sa * sb].map(|v| C64::new(v, 0.0));
    pair_ket(modes.registry.clone(), res.port_modes.0, res.port_modes.1, amps)
}
