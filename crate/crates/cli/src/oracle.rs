use std::io::Write;
use std::sync::Arc;

use entangler::detection::{apd_no_click_prob, pnr_distribution, threshold_records, ApdModel, DetectorOutcome};
use entangler::elements::{apply_all, ElementOp, PbsPorts, XpmParams};
use entangler::fock_oracle::*;
use entangler::hybrid_state::{normalize, trace_out_all, trace_out_bus, DvLabel, HybridKet, MixedState, Pol, C64};
use entangler::loss::{damp, xi_squared, ChannelParams};
use entangler::pipeline::{
    pre_detection_state, side_ops, stage1_outcomes, Backend, Design, GateConfig, InputPairState, ProtocolModes,
    QndConfig, SideModes,
};
use entangler::registry::{BusMode, DvMode, ModeRegistry, Side};
use entangler::rng::Sampler;

use crate::config::Overrides;
use crate::CliError;

/// Largest deviation accepted between the label algebra and the Fock space.
pub const ORACLE_TOL: f64 = 1e-8;

/// Random kets drawn per element check.
const RANDOM_KETS: u64 = 12;

/// Largest bus-label modulus of the random kets.
const RANDOM_AMP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Elements,
    Channel,
    Measurement,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Elements, Scope::Channel, Scope::Measurement];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Elements => "elements",
            Scope::Channel => "channel",
            Scope::Measurement => "measurement",
        }
    }
}

pub fn parse_scopes(names: &[String]) -> Result<Vec<Scope>, CliError> {
    let mut out = Vec::new();
    for n in names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        match n.to_ascii_lowercase().as_str() {
            "all" => out.extend(Scope::ALL),
            "elements" => out.push(Scope::Elements),
            "channel" => out.push(Scope::Channel),
            "measurement" => out.push(Scope::Measurement),
            _ => return Err(CliError::Usage(format!("unknown oracle scope '{n}'"))),
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::Usage("--scope must name at least one of elements, channel, measurement, all".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub scope: Scope,
    pub name: String,
    pub deviation: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.deviation < ORACLE_TOL
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn max_deviation(&self, scope: Scope) -> f64 {
        self.checks.iter().filter(|c| c.scope == scope).map(|c| c.deviation).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    fn push(&mut self, scope: Scope, name: impl Into<String>, deviation: f64) {
        let deviation = if deviation.is_nan() { f64::INFINITY } else { deviation };
        self.checks.push(Check { scope, name: name.into(), deviation });
    }
}

pub fn run_oracle(scopes: &[Scope], seed: u64) -> Result<OracleReport, CliError> {
    let mut r = OracleReport::default();
    for &s in scopes {
        match s {
            Scope::Elements => elements(&mut r, seed)?,
            Scope::Channel => channel(&mut r, seed)?,
            Scope::Measurement => measurement(&mut r, seed)?,
        }
    }
    Ok(r)
}

pub fn cmd_oracle(s: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = s.require_seed()?;
    let scopes = parse_scopes(s.scope.as_deref().unwrap_or(&["all".to_string()]))?;
    let report = run_oracle(&scopes, seed)?;
    for c in &report.checks {
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        writeln!(out, "{verdict} {} {} deviation={:.3e}", c.scope.name(), c.name, c.deviation)?;
    }
    for &sc in &scopes {
        writeln!(out, "max {} {:.3e}", sc.name(), report.max_deviation(sc))?;
    }
    if !report.passed() {
        return Err(CliError::Assertion(format!("oracle deviation above {ORACLE_TOL:e}")));
    }
    Ok(())
}

struct Small {
    reg: Arc<ModeRegistry>,
    a: [DvMode; 4],
    b: [DvMode; 2],
    bus: [BusMode; 2],
}

fn small() -> Small {
    let mut r = ModeRegistry::new();
    let a = [0, 1, 2, 3].map(|i| r.add_dv(&format!("a{i}"), Side::A));
    let b = [0, 1].map(|i| r.add_dv(&format!("b{i}"), Side::B));
    let bus = [r.add_bus("u0"), r.add_bus("u1")];
    Small { reg: r.into_shared(), a, b, bus }
}

/// Up to three terms with one photon on side A, maybe one on side B, and bus
/// labels of modulus below `max_amp`.
fn random_ket(s: &Small, sampler: &mut Sampler, max_amp: f64) -> Result<HybridKet, CliError> {
    let pol = |u: f64| if u < 0.5 { Pol::H } else { Pol::V };
    let pick = |u: f64, n: usize| ((u * n as f64) as usize).min(n - 1);
    let mut k = HybridKet::zero(s.reg.clone(), s.bus.to_vec())?;
    let terms = 1 + pick(sampler.uniform(), 3);
    for _ in 0..terms {
        let c = C64::new(2.0 * sampler.uniform() - 1.0, 2.0 * sampler.uniform() - 1.0);
        let mut photons = vec![(s.a[pick(sampler.uniform(), 4)], pol(sampler.uniform()))];
        if sampler.uniform() < 0.5 {
            photons.push((s.b[pick(sampler.uniform(), 2)], pol(sampler.uniform())));
        }
        let mut lab = || C64::from_polar(max_amp * sampler.uniform(), std::f64::consts::TAU * sampler.uniform());
        let labels = [lab(), lab()];
        k.push_term(c, DvLabel::from_photons(photons), &labels)?;
    }
    Ok(normalize(&k)?)
}

/// Room for labels of modulus up to `RANDOM_AMP √2`, the largest a beam
/// splitter can produce.
fn random_space(s: &Small) -> Result<Arc<FockSpace>, CliError> {
    Ok(FockSpace::for_registry(s.reg.clone(), &s.bus, default_cutoff(RANDOM_AMP * std::f64::consts::SQRT_2))?)
}

fn element_ops(s: &Small, theta: f64) -> Result<Vec<ElementOp>, CliError> {
    let [a0, a1, a2, a3] = s.a;
    let [u0, u1] = s.bus;
    let xpm = XpmParams::new(theta)?;
    Ok(vec![
        ElementOp::PbsSplit { input: a0, out_h: a1, out_v: a2 },
        ElementOp::Pbs(PbsPorts { in_a: a0, in_b: a1, out_t: a2, out_r: a3 }),
        ElementOp::PbsPm { input: a1, out_p: a2, out_m: a3 },
        ElementOp::Hwp { mode: a0, angle: 0.4 * theta },
        ElementOp::Bs50Dv { c: a0, d: a3 },
        ElementOp::Bs50Dv { c: s.b[0], d: s.b[1] },
        ElementOp::Bs50Bus { bus1: u0, bus2: u1 },
        ElementOp::Bs50BusInverse { bus1: u0, bus2: u1 },
        ElementOp::Phase { bus: u1, phi: theta },
        ElementOp::Xpm { dv: a2, bus: u0, params: xpm },
        ElementOp::Xpm { dv: s.b[1], bus: u1, params: xpm },
    ])
}

fn op_name(op: &ElementOp) -> &'static str {
    match op {
        ElementOp::PbsSplit { .. } => "pbs_split",
        ElementOp::Pbs(_) => "pbs",
        ElementOp::PbsPm { .. } => "pbs_pm",
        ElementOp::Hwp { .. } => "hwp",
        ElementOp::Bs50Dv { .. } => "bs50_dv",
        ElementOp::Bs50Bus { .. } => "bs50_bus",
        ElementOp::Bs50BusInverse { .. } => "bs50_bus_inverse",
        ElementOp::Phase { .. } => "phase",
        ElementOp::Xpm { .. } => "xpm",
    }
}

fn elements(r: &mut OracleReport, seed: u64) -> Result<(), CliError> {
    let s = small();
    let space = random_space(&s)?;
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for i in 0..RANDOM_KETS {
        let mut sampler = Sampler::substream(seed, i);
        let x = random_ket(&s, &mut sampler, RANDOM_AMP)?;
        let theta = 6.0 * sampler.uniform() - 3.0;
        let v = encode_in(&space, &x)?;
        for op in element_ops(&s, theta)? {
            // operations undefined on this ket (occupied output modes) are skipped
            let Ok(y) = op.apply(&x) else { continue };
            let d = oracle_apply(&op, &v)?.distance(&encode_in(&space, &y)?)?;
            let name = op_name(&op);
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(d),
                None => worst.push((name, d)),
            }
        }
    }
    for (name, d) in worst {
        r.push(Scope::Elements, name, d);
    }
    Ok(())
}

/// `(|H>|α, αe^{iθ}> + |V>|αe^{iθ}, α>)/√2`.
fn two_pattern(alpha: f64, theta: f64) -> Result<(HybridKet, [BusMode; 2]), CliError> {
    let mut reg = ModeRegistry::new();
    let m = reg.add_dv("m", Side::A);
    let b = [reg.add_bus("u0"), reg.add_bus("u1")];
    let a = C64::new(alpha, 0.0);
    let ar = a * C64::from_polar(1.0, theta);
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut k = HybridKet::zero(reg.into_shared(), b.to_vec())?;
    k.push_term(h, DvLabel::single(m, Pol::H), &[a, ar])?;
    k.push_term(h, DvLabel::single(m, Pol::V), &[ar, a])?;
    Ok((k, b))
}

fn mixture_deviation(m: &FockMixture, x: &MixedState) -> Result<f64, CliError> {
    let c = compare_with(m, x)?;
    Ok(c.distance.max(c.residual).max((c.oracle_trace - x.total_weight()).abs()))
}

fn gate_space(modes: &ProtocolModes, cutoff: usize) -> Result<Arc<FockSpace>, CliError> {
    let (ga, gb) = (modes.gate_a, modes.gate_b);
    let dv = [modes.a.k, ga.t1, ga.t2, ga.out, ga.out_x, modes.b.k, gb.t1, gb.t2, gb.out, gb.out_x];
    Ok(FockSpace::new(modes.registry.clone(), &dv, &modes.p[..2], cutoff)?)
}

fn gate_ops(modes: &ProtocolModes, theta: f64, side: Side) -> Result<Vec<ElementOp>, CliError> {
    let xpm = XpmParams::new(theta)?;
    let [p1, p2, _, _] = modes.p;
    let (g, port, bh, bv) = match side {
        Side::A => (modes.gate_a, modes.a.k, p1, p2),
        Side::B => (modes.gate_b, modes.b.k, p2, p1),
    };
    Ok(vec![
        ElementOp::PbsSplit { input: port, out_h: g.t1, out_v: g.t2 },
        ElementOp::Xpm { dv: g.t1, bus: bh, params: xpm },
        ElementOp::Xpm { dv: g.t2, bus: bv, params: xpm },
        ElementOp::Pbs(PbsPorts { in_a: g.t1, in_b: g.t2, out_t: g.out, out_r: g.out_x }),
    ])
}

/// The parity gate on the heralded K/K state, element by element in the
/// truncated space, next to the closed-form pre-detection state.
fn oracle_gate(modes: &ProtocolModes, gate: &GateConfig, cutoff: usize) -> Result<(FockMixture, MixedState), CliError> {
    let s1 =
        stage1_outcomes(&InputPairState::basis(Pol::H, Pol::H), Design::Fig1, modes, &QndConfig::default())?.remove(0);
    let [p1, p2, _, _] = modes.p;
    let start = s1.post_state.branches()[0].ket.with_bus(p1, gate.alpha)?.with_bus(p2, gate.alpha)?;
    let space = gate_space(modes, cutoff)?;
    let v = oracle_apply_all(&gate_ops(modes, gate.theta, Side::B)?, &encode_in(&space, &start)?)?;
    let mut m = oracle_damp(&v.into(), &[p1, p2], gate.channel.eta())?;
    let mut tail = gate_ops(modes, gate.theta, Side::A)?;
    tail.extend([
        ElementOp::Phase { bus: p1, phi: -gate.theta },
        ElementOp::Phase { bus: p2, phi: -gate.theta },
        ElementOp::Bs50Bus { bus1: p1, bus2: p2 },
    ]);
    for op in &tail {
        m = m.apply(op)?;
    }
    Ok((m, pre_detection_state(&s1, modes, gate)?))
}

fn channel(r: &mut OracleReport, seed: u64) -> Result<(), CliError> {
    let eta = 0.6;
    let ch = ChannelParams::new(eta)?;
    let mut dev = 0.0f64;
    for theta in [0.3, 0.8] {
        let (k, buses) = two_pattern(2.0, theta)?;
        let closed = damp(&MixedState::pure(k.clone())?, &buses, ch)?;
        let m = oracle_damp(&encode(&k, 40)?.into(), &buses, eta)?;
        let c = compare_with(&m, &closed)?;
        let xi2 = xi_squared(C64::new(2.0, 0.0), theta, ch);
        let want = [0.5 * (1.0 + xi2), 0.5 * (1.0 - xi2)];
        let spec = if c.spectrum.len() == 2 {
            (c.spectrum[0] - want[0]).abs().max((c.spectrum[1] - want[1]).abs())
        } else {
            f64::INFINITY
        };
        dev = dev.max(mixture_deviation(&m, &closed)?).max(spec);
    }
    r.push(Scope::Channel, "two_pattern_weights", dev);

    let s = small();
    let space = random_space(&s)?;
    let mut dev = 0.0f64;
    for i in 0..4 {
        let mut sampler = Sampler::substream(seed, 100 + i);
        let x = random_ket(&s, &mut sampler, RANDOM_AMP)?;
        let e = 0.2 + 0.7 * sampler.uniform();
        let closed = damp(&MixedState::pure(x.clone())?, &s.bus, ChannelParams::new(e)?)?;
        let m = oracle_damp(&encode_in(&space, &x)?.into(), &s.bus, e)?;
        dev = dev.max(mixture_deviation(&m, &closed)?);
    }
    r.push(Scope::Channel, "random_damping", dev);

    let (k, [u0, u1]) = two_pattern(1.3, 0.7)?;
    let bs = ElementOp::Bs50Bus { bus1: u0, bus2: u1 };
    let v = encode(&k, 40)?;
    let before = oracle_damp(&FockMixture::from(oracle_apply(&bs, &v)?), &[u0, u1], 0.55)?;
    let after = oracle_damp(&FockMixture::from(v), &[u0, u1], 0.55)?.apply(&bs)?;
    let closed = damp(&MixedState::pure(apply_all(&k, &[bs])?)?, &[u0, u1], ChannelParams::new(0.55)?)?;
    let dev = mixture_deviation(&before, &closed)?.max(mixture_deviation(&after, &closed)?);
    r.push(Scope::Channel, "loss_beam_splitter_commute", dev);

    let modes = ProtocolModes::new();
    let gate = GateConfig::new(C64::new(1.0, 0.0), 0.8, Backend::Pnr).with_channel(ch);
    let (m, closed) = oracle_gate(&modes, &gate, 40)?;
    let (_, dv) = conditional_dv_density(&m, None, |_| 1.0)?;
    let want = trace_out_all(&closed)?.dv_density()?;
    r.push(Scope::Channel, "lossy_parity_gate", mixture_deviation(&m, &closed)?.max(dv.distance(&want)));
    Ok(())
}

fn measurement(r: &mut OracleReport, seed: u64) -> Result<(), CliError> {
    let s = small();
    let space = random_space(&s)?;
    let (mut pnr, mut apd) = (0.0f64, 0.0f64);
    for i in 0..6 {
        let mut sampler = Sampler::substream(seed, 200 + i);
        let x = random_ket(&s, &mut sampler, RANDOM_AMP)?;
        let eta_d = 0.3 + 0.7 * sampler.uniform();
        let m = FockMixture::from(encode_in(&space, &x)?);
        let xm = MixedState::pure(x)?;
        for &bus in &s.bus {
            let oracle = oracle_measure(&m, bus, FockPovm::Pnr)?;
            let closed = pnr_distribution(&xm, bus)?;
            for (n, p) in oracle.iter().enumerate() {
                pnr = pnr.max((p - closed.get(n).copied().unwrap_or(0.0)).abs());
            }
            let off = oracle_measure(&m, bus, FockPovm::Apd { eta_d })?[0];
            apd = apd.max((off - apd_no_click_prob(&xm, bus, ApdModel::new(eta_d)?)?).abs());
        }
    }
    r.push(Scope::Measurement, "pnr_distribution", pnr);
    r.push(Scope::Measurement, "apd_no_click", apd);

    let modes = ProtocolModes::new();
    let (alpha, theta) = (1.2, 0.9);
    let gate = GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Pnr);
    let (m, closed) = oracle_gate(&modes, &gate, 40)?;
    let oracle = oracle_measure(&m, modes.p[0], FockPovm::Pnr)?;
    let closed_p = pnr_distribution(&closed, modes.p[0])?;
    let lam = 2.0 * (alpha * theta.sin()).powi(2);
    let (mut poisson, mut dev) = ((-lam).exp(), mixture_deviation(&m, &closed)?);
    for (n, p) in oracle.iter().enumerate() {
        if n > 0 {
            poisson *= lam / n as f64;
        }
        let want = 0.5 * poisson + if n == 0 { 0.5 } else { 0.0 };
        dev = dev.max((p - want).abs()).max((p - closed_p.get(n).copied().unwrap_or(0.0)).abs());
    }
    r.push(Scope::Measurement, "parity_gate_counts", dev);

    let mut reg = ModeRegistry::new();
    let sm = SideModes::register(&mut reg, Side::A);
    let reg = reg.into_shared();
    let a = C64::new(2.0, 0.0);
    let apd_m = ApdModel::new(0.9)?;
    let mut k = HybridKet::zero(reg, vec![sm.q1, sm.q2])?;
    k.push_term(C64::new(0.6, 0.0), DvLabel::single(sm.input, Pol::H), &[a, a])?;
    k.push_term(C64::new(0.0, 0.8), DvLabel::single(sm.input, Pol::V), &[a, a])?;
    let ops = side_ops(Design::Fig1, &sm, XpmParams::new(0.8)?);
    let x = MixedState::pure(apply_all(&k, &ops)?)?;
    let m = FockMixture::from(oracle_apply_all(&ops, &encode_default(&k)?)?);
    let povm = FockPovm::Apd { eta_d: 0.9 };
    let mut dev = 0.0f64;
    for rec in threshold_records(&x, sm.q1, apd_m)? {
        let k_out = usize::from(rec.outcome == DetectorOutcome::On);
        let (p, dv) = conditional_dv_density(&m, Some(sm.q1), |n| povm.weight(k_out, n))?;
        let want = trace_out_bus(&rec.post_state, &[sm.q2])?.dv_density()?;
        dev = dev.max((p - rec.probability).abs()).max(dv.distance(&want));
    }
    r.push(Scope::Measurement, "qnd_threshold_herald", dev);
    Ok(())
}
