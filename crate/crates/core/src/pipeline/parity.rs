use serde::{Deserialize, Serialize};

use crate::detection::{pnr_distribution, pnr_post_state, threshold_records, ApdModel, DetectorOutcome, IndirectPnr};
use crate::elements::{apply_all_mixed, ElementOp, PbsPorts, XpmParams, HWP_SIGN_FLIP};
use crate::error::{Error, Result};
use crate::hybrid_state::{fidelity, normalize, trace_out_all, DvLabel, HybridKet, MixedState, Pol, C64};
use crate::loss::{damp, fidelity_after_loss, ChannelParams};
use crate::registry::{BusMode, DvMode};
use crate::rng::{Sampler, SeedPath};

use super::{Backend, BellLabel, GateSideModes, ProtocolModes, StageOneResult};

/// Parity-gate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub alpha: C64,
    pub theta: f64,
    pub channel: ChannelParams,
    pub backend: Backend,
    pub apd: ApdModel,
    /// Rotate odd-n number outcomes from `|Ψ->` to `|Ψ+>` with a Z on photon A.
    pub canonical_frame: bool,
    /// Read photon numbers through a QND probe instead of a direct projection.
    pub indirect: Option<IndirectPnr>,
}

impl GateConfig {
    pub fn new(alpha: C64, theta: f64, backend: Backend) -> Self {
        GateConfig {
            alpha,
            theta,
            channel: ChannelParams::lossless(),
            backend,
            apd: ApdModel::ideal(),
            canonical_frame: false,
            indirect: None,
        }
    }

    pub fn with_channel(mut self, channel: ChannelParams) -> Self {
        self.channel = channel;
        self
    }

    /// Fidelity of the lossy output mixture.
    pub fn fidelity(&self) -> f64 {
        fidelity_after_loss(self.alpha, self.theta, self.channel)
    }
}

/// One exhaustive outcome of a detection back-end.
#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub name: String,
    pub probability: f64,
    pub success: bool,
    pub bell: Option<BellLabel>,
    pub photon_count: Option<u64>,
    /// Photon-only conditional state on the gate outputs.
    pub post_state: MixedState,
}

#[derive(Debug, Clone)]
pub struct EntangleOutcome {
    pub success: bool,
    pub bell: Option<BellLabel>,
    pub pair_state: MixedState,
    pub photon_count: Option<u64>,
    /// Fidelity of `pair_state` to `bell`, computed rather than assumed.
    pub fidelity: Option<f64>,
    pub detector: String,
    pub probability: f64,
    pub branch_probabilities: Vec<(String, f64)>,
    pub seed_path: Option<SeedPath>,
}

impl EntangleOutcome {
    fn from_gate(
        o: GateOutcome,
        modes: &ProtocolModes,
        branches: Vec<(String, f64)>,
        path: Option<SeedPath>,
    ) -> Result<Self> {
        let fid = match o.bell {
            Some(b) => Some(fidelity(&o.post_state, &modes.bell(b)?)?),
            None => None,
        };
        Ok(EntangleOutcome {
            success: o.success,
            bell: o.bell,
            pair_state: o.post_state,
            photon_count: o.photon_count,
            fidelity: fid,
            detector: o.name,
            probability: o.probability,
            branch_probabilities: branches,
            seed_path: path,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Feed-forward correction of the ± design: a sign flip on every port that
/// carries `|H> - |V>`.
pub fn frame_correct(stage1: &StageOneResult) -> Result<MixedState> {
    let mut ops = Vec::new();
    if stage1.sign_flip.0 {
        ops.push(ElementOp::Hwp { mode: stage1.port_modes.0, angle: HWP_SIGN_FLIP });
    }
    if stage1.sign_flip.1 {
        ops.push(ElementOp::Hwp { mode: stage1.port_modes.1, angle: HWP_SIGN_FLIP });
    }
    apply_all_mixed(&stage1.post_state, &ops)
}

/// Couples one side's photon to both buses: H path to `bus_h`, V path to `bus_v`.
fn side_coupling(port: DvMode, g: &GateSideModes, bus_h: BusMode, bus_v: BusMode, xpm: XpmParams) -> [ElementOp; 4] {
    [
        ElementOp::PbsSplit { input: port, out_h: g.t1, out_v: g.t2 },
        ElementOp::Xpm { dv: g.t1, bus: bus_h, params: xpm },
        ElementOp::Xpm { dv: g.t2, bus: bus_v, params: xpm },
        ElementOp::Pbs(PbsPorts { in_a: g.t1, in_b: g.t2, out_t: g.out, out_r: g.out_x }),
    ]
}

/// State of the photons and the two buses just before detection.
pub fn pre_detection_state(stage1: &StageOneResult, modes: &ProtocolModes, gate: &GateConfig) -> Result<MixedState> {
    let xpm = XpmParams::new(gate.theta)?;
    let [p1, p2, _, _] = modes.p;
    let x = frame_correct(stage1)?;
    let x = x.map_kets(|k| k.with_bus(p1, gate.alpha)?.with_bus(p2, gate.alpha))?;
    // at B the first beam sees the V path and the second the H path
    let x = apply_all_mixed(&x, &side_coupling(stage1.port_modes.1, &modes.gate_b, p2, p1, xpm))?;
    let x = damp(&x, &[p1, p2], gate.channel)?;
    let mut ops = side_coupling(stage1.port_modes.0, &modes.gate_a, p1, p2, xpm).to_vec();
    ops.extend([
        ElementOp::Phase { bus: p1, phi: -gate.theta },
        ElementOp::Phase { bus: p2, phi: -gate.theta },
        ElementOp::Bs50Bus { bus1: p1, bus2: p2 },
    ]);
    apply_all_mixed(&x, &ops)
}

/// Projects the gate outputs onto one parity sector.
pub fn parity_projection(x: &MixedState, modes: &ProtocolModes, parity: Parity) -> Option<(f64, MixedState)> {
    let (a, b) = (modes.gate_a.out, modes.gate_b.out);
    let parts = x
        .branches()
        .iter()
        .map(|br| {
            let terms = br
                .ket
                .terms()
                .iter()
                .filter(|t| {
                    let same = t.dv.pol_in(a).is_some() && t.dv.pol_in(a) == t.dv.pol_in(b);
                    same == (parity == Parity::Even)
                })
                .cloned()
                .collect();
            (br.weight, HybridKet::from_parts(br.ket.registry().clone(), br.ket.buses().to_vec(), terms))
        })
        .collect();
    MixedState::from_weighted(parts)
}

/// The two components of the lossy output mixture and the weight `F` of the
/// first, written directly on the gate outputs and buses `P1`, `P2`.
pub fn reference_mixture(modes: &ProtocolModes, gate: &GateConfig) -> Result<(f64, HybridKet, HybridKet)> {
    let [p1, p2, _, _] = modes.p;
    let (a, b) = (modes.gate_a.out, modes.gate_b.out);
    let s = (2.0 * gate.channel.eta()).sqrt();
    let even = [C64::new(0.0, 0.0), gate.alpha * s];
    let odd_p2 = gate.alpha * s * gate.theta.cos();
    let odd_p1 = C64::new(0.0, 1.0) * gate.alpha * s * gate.theta.sin();
    let build = |sign: f64| -> Result<HybridKet> {
        let mut k = HybridKet::zero(modes.registry.clone(), vec![p1, p2])?;
        let h = C64::new(0.5, 0.0);
        k.push_term(h, DvLabel::pair((a, Pol::H), (b, Pol::H)), &even)?;
        k.push_term(h * sign, DvLabel::pair((a, Pol::V), (b, Pol::V)), &even)?;
        k.push_term(h * sign, DvLabel::pair((a, Pol::H), (b, Pol::V)), &[odd_p1, odd_p2])?;
        k.push_term(h, DvLabel::pair((a, Pol::V), (b, Pol::H)), &[-odd_p1, odd_p2])?;
        normalize(&k)
    };
    Ok((gate.fidelity(), build(1.0)?, build(-1.0)?))
}

fn number_label(n: u64) -> BellLabel {
    if n == 0 {
        BellLabel::PhiPlus
    } else if n.is_multiple_of(2) {
        BellLabel::PsiPlus
    } else {
        BellLabel::PsiMinus
    }
}

/// Z on photon A when the label is `|Ψ->`, turning it into `|Ψ+>`.
pub fn pauli_frame_correct(outcome: &EntangleOutcome, modes: &ProtocolModes) -> Result<EntangleOutcome> {
    let mut out = outcome.clone();
    if outcome.bell == Some(BellLabel::PsiMinus) {
        out.pair_state =
            apply_all_mixed(&outcome.pair_state, &[ElementOp::Hwp { mode: modes.gate_a.out, angle: HWP_SIGN_FLIP }])?;
        out.bell = Some(BellLabel::PsiPlus);
        out.fidelity = Some(fidelity(&out.pair_state, &modes.bell(BellLabel::PsiPlus)?)?);
    }
    Ok(out)
}

fn pnr_outcome(x: &MixedState, modes: &ProtocolModes, n: u64, label_n: u64) -> Result<GateOutcome> {
    let (p, post) = pnr_post_state(x, modes.p[0], n)?.ok_or(Error::ZeroNorm)?;
    Ok(GateOutcome {
        name: format!("n={label_n}"),
        probability: p,
        success: true,
        bell: Some(number_label(label_n)),
        photon_count: Some(label_n),
        post_state: trace_out_all(&post)?,
    })
}

fn pnr_summary(probs: &[f64]) -> Vec<(String, f64)> {
    let zero = probs.first().copied().unwrap_or(0.0);
    let even: f64 = probs.iter().skip(2).step_by(2).sum();
    let odd: f64 = probs.iter().skip(1).step_by(2).sum();
    vec![("n=0".into(), zero), ("n even>0".into(), even), ("n odd".into(), odd)]
}

/// Every number outcome up to the truncation point.
pub fn pnr_outcomes(x: &MixedState, modes: &ProtocolModes) -> Result<Vec<GateOutcome>> {
    let probs = pnr_distribution(x, modes.p[0])?;
    (0..probs.len() as u64).filter(|&n| probs[n as usize] > 0.0).map(|n| pnr_outcome(x, modes, n, n)).collect()
}

/// Number-resolving detection of `P1`, direct or through a QND probe.
pub fn pnr_backend(
    x: &MixedState,
    modes: &ProtocolModes,
    gate: &GateConfig,
    sampler: &mut Sampler,
) -> Result<EntangleOutcome> {
    let probs = pnr_distribution(x, modes.p[0])?;
    let path = sampler.path();
    let (n_true, n_label) = match gate.indirect {
        None => {
            let n = sampler.categorical(&probs) as u64;
            (n, n)
        }
        Some(det) => {
            let rec = det.measure(x, modes.p[0], sampler)?;
            (rec.n_true, rec.n_hat)
        }
    };
    let out = pnr_outcome(x, modes, n_true, n_label)?;
    let res = EntangleOutcome::from_gate(out, modes, pnr_summary(&probs), Some(path))?;
    if gate.canonical_frame {
        pauli_frame_correct(&res, modes)
    } else {
        Ok(res)
    }
}

fn inject(x: &MixedState, buses: &[(BusMode, C64)]) -> Result<MixedState> {
    x.map_kets(|k| buses.iter().try_fold(k.clone(), |k, &(b, g)| k.with_bus(b, g)))
}

/// Threshold detectors only: `P2` is compared against a prepared
/// `|√(2η) α cos θ>` and `P1` is monitored directly.
pub fn threshold_outcomes(x: &MixedState, modes: &ProtocolModes, gate: &GateConfig) -> Result<Vec<GateOutcome>> {
    let [p1, p2, p3, _] = modes.p;
    let reference = gate.alpha * (2.0 * gate.channel.eta()).sqrt() * gate.theta.cos();
    let x = apply_all_mixed(&inject(x, &[(p3, reference)])?, &[ElementOp::Bs50Bus { bus1: p2, bus2: p3 }])?;
    let mut out = Vec::new();
    for r2 in threshold_records(&x, p2, gate.apd)? {
        if r2.outcome == DetectorOutcome::On {
            out.push(GateOutcome {
                name: "P2:on".into(),
                probability: r2.probability,
                success: true,
                bell: Some(BellLabel::PhiPlus),
                photon_count: None,
                post_state: trace_out_all(&r2.post_state)?,
            });
            continue;
        }
        for r1 in threshold_records(&r2.post_state, p1, gate.apd)? {
            let on = r1.outcome == DetectorOutcome::On;
            out.push(GateOutcome {
                name: if on { "P1:on".into() } else { "none".into() },
                probability: r2.probability * r1.probability,
                success: false,
                bell: None,
                photon_count: None,
                post_state: trace_out_all(&r1.post_state)?,
            });
        }
    }
    Ok(out)
}

/// Comparison with `|0>_3 |√(2η) α>_4` through two 50/50 splitters; a click
/// on either output heralds `|Ψ->`.
pub fn usd_outcomes(x: &MixedState, modes: &ProtocolModes, gate: &GateConfig) -> Result<Vec<GateOutcome>> {
    if gate.alpha.im != 0.0 {
        return Err(Error::NonRealAlpha);
    }
    let [p1, p2, p3, p4] = modes.p;
    let reference = gate.alpha * (2.0 * gate.channel.eta()).sqrt();
    let x = apply_all_mixed(
        &inject(x, &[(p3, C64::new(0.0, 0.0)), (p4, reference)])?,
        &[ElementOp::Bs50Bus { bus1: p1, bus2: p3 }, ElementOp::Bs50Bus { bus1: p2, bus2: p4 }],
    )?;
    let mut out = Vec::new();
    for r1 in threshold_records(&x, p1, gate.apd)? {
        if r1.outcome == DetectorOutcome::On {
            out.push(GateOutcome {
                name: "P1:on".into(),
                probability: r1.probability,
                success: true,
                bell: Some(BellLabel::PsiMinus),
                photon_count: None,
                post_state: trace_out_all(&r1.post_state)?,
            });
            continue;
        }
        for r2 in threshold_records(&r1.post_state, p2, gate.apd)? {
            let on = r2.outcome == DetectorOutcome::On;
            out.push(GateOutcome {
                name: if on { "P2:on".into() } else { "none".into() },
                probability: r1.probability * r2.probability,
                success: on,
                bell: on.then_some(BellLabel::PsiMinus),
                photon_count: None,
                post_state: trace_out_all(&r2.post_state)?,
            });
        }
    }
    Ok(out)
}

fn sample_outcome(outcomes: Vec<GateOutcome>, modes: &ProtocolModes, sampler: &mut Sampler) -> Result<EntangleOutcome> {
    let branches: Vec<(String, f64)> = outcomes.iter().map(|o| (o.name.clone(), o.probability)).collect();
    let path = sampler.path();
    let weights: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
    let idx = sampler.categorical(&weights);
    let chosen = outcomes.into_iter().nth(idx).ok_or(Error::ZeroNorm)?;
    EntangleOutcome::from_gate(chosen, modes, branches, Some(path))
}

pub fn threshold_backend(
    x: &MixedState,
    modes: &ProtocolModes,
    gate: &GateConfig,
    sampler: &mut Sampler,
) -> Result<EntangleOutcome> {
    sample_outcome(threshold_outcomes(x, modes, gate)?, modes, sampler)
}

pub fn usd_backend(
    x: &MixedState,
    modes: &ProtocolModes,
    gate: &GateConfig,
    sampler: &mut Sampler,
) -> Result<EntangleOutcome> {
    sample_outcome(usd_outcomes(x, modes, gate)?, modes, sampler)
}

/// Double-XPM parity gate on a heralded decomposition result.
pub fn parity_gate(
    stage1: &StageOneResult,
    modes: &ProtocolModes,
    gate: &GateConfig,
    sampler: &mut Sampler,
) -> Result<EntangleOutcome> {
    let x = pre_detection_state(stage1, modes, gate)?;
    match gate.backend {
        Backend::Pnr => pnr_backend(&x, modes, gate, sampler),
        Backend::Threshold => threshold_backend(&x, modes, gate, sampler),
        Backend::Usd => usd_backend(&x, modes, gate, sampler),
    }
}
