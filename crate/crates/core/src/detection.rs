//! Detector models: threshold (APD) POVM, QND beam comparison, photon-number
//! projection and the indirect number-resolving scheme built from a QND probe.

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elements::apply_bs50_bus;
use crate::error::{Error, Result};
use crate::hybrid_state::{
    cexp_clamped, cexpm1, coherent_overlap, reduce_mixed, split_by_buses, trace_out_bus, MixedState, C64,
};
use crate::registry::BusMode;
use crate::rng::{Sampler, SeedPath};

/// Residual probability mass allowed beyond the last enumerated photon number.
pub const PNR_TAIL_TOL: f64 = 1e-12;

/// Threshold detector with efficiency `eta_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApdModel {
    eta_d: f64,
}

impl ApdModel {
    pub fn new(eta_d: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta_d) {
            return Err(Error::Domain(format!("detector efficiency {eta_d} outside [0, 1]")));
        }
        Ok(ApdModel { eta_d })
    }

    pub fn ideal() -> Self {
        ApdModel { eta_d: 1.0 }
    }

    pub fn eta_d(&self) -> f64 {
        self.eta_d
    }

    /// `<γ_bra| (1-η_D)^n̂ |γ_ket>`.
    pub fn no_click_kernel(&self, bra: C64, ket: C64) -> C64 {
        let cross = bra.conj() * ket;
        let re = -0.5 * (bra - ket).norm_sqr() - self.eta_d * cross.re;
        let im = (1.0 - self.eta_d) * cross.im;
        cexp_clamped(re, im)
    }

    /// `<γ_bra| 1 - (1-η_D)^n̂ |γ_ket>`.
    pub fn click_kernel(&self, bra: C64, ket: C64) -> C64 {
        let overlap = coherent_overlap(ket, bra);
        let z = -(bra.conj() * ket) * self.eta_d;
        if z.norm() < 1.0 {
            -overlap * cexpm1(z)
        } else {
            overlap - self.no_click_kernel(bra, ket)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorOutcome {
    Off,
    On,
    Count(u64),
}

impl fmt::Display for DetectorOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorOutcome::Off => write!(f, "off"),
            DetectorOutcome::On => write!(f, "on"),
            DetectorOutcome::Count(n) => write!(f, "n={n}"),
        }
    }
}

/// One measurement outcome with its probability and conditional state.
#[derive(Debug, Clone)]
pub struct DetectionRecord {
    pub outcome: DetectorOutcome,
    pub probability: f64,
    pub post_state: MixedState,
    pub seed_path: Option<SeedPath>,
}

fn single(bus: &[C64]) -> C64 {
    bus[0]
}

/// Probability that a threshold detector on `bus` stays dark.
pub fn apd_no_click_prob(state: &MixedState, bus: BusMode, m: ApdModel) -> Result<f64> {
    state.registry().check_bus(bus)?;
    Ok(reduce_mixed(state, &[bus], |b, k| m.no_click_kernel(single(b), single(k)))?.map_or(0.0, |(p, _)| p))
}

/// Both threshold outcomes with their exact probabilities. The measured bus is
/// discarded from the post-states; impossible outcomes are omitted.
pub fn threshold_records(state: &MixedState, bus: BusMode, m: ApdModel) -> Result<Vec<DetectionRecord>> {
    state.registry().check_bus(bus)?;
    let off = reduce_mixed(state, &[bus], |b, k| m.no_click_kernel(single(b), single(k)))?;
    let on = reduce_mixed(state, &[bus], |b, k| m.click_kernel(single(b), single(k)))?;
    let mut out = Vec::new();
    for (outcome, res) in [(DetectorOutcome::Off, off), (DetectorOutcome::On, on)] {
        if let Some((p, post)) = res {
            out.push(DetectionRecord { outcome, probability: p.clamp(0.0, 1.0), post_state: post, seed_path: None });
        }
    }
    Ok(out)
}

/// Projective discrimination of a bus between "exactly vacuum" and "anything
/// else", valid when the non-vacuum labels are far enough from the origin.
/// Returns `(outcome, probability, post_state)` with the bus traced out.
pub fn ideal_vacuum_records(state: &MixedState, bus: BusMode) -> Result<Vec<DetectionRecord>> {
    use crate::hybrid_state::{HybridKet, TOL_AMP};
    let mut off_parts = Vec::new();
    let mut on_parts = Vec::new();
    for b in state.branches() {
        let idx = b.ket.bus_index(bus)?;
        let split = |keep_vacuum: bool| -> HybridKet {
            let terms =
                b.ket.terms().iter().filter(|t| (t.bus[idx].norm() < TOL_AMP) == keep_vacuum).cloned().collect();
            HybridKet::from_parts(b.ket.registry().clone(), b.ket.buses().to_vec(), terms)
        };
        off_parts.push((b.weight, split(true)));
        on_parts.push((b.weight, split(false)));
    }
    let mut out = Vec::new();
    for (outcome, parts) in [(DetectorOutcome::Off, off_parts), (DetectorOutcome::On, on_parts)] {
        if let Some((p, post)) = MixedState::from_weighted(parts) {
            out.push(DetectionRecord {
                outcome,
                probability: p.clamp(0.0, 1.0),
                post_state: trace_out_bus(&post, &[bus])?,
                seed_path: None,
            });
        }
    }
    Ok(out)
}

/// Samples one record from an exhaustive outcome list.
pub fn sample_record(records: Vec<DetectionRecord>, sampler: &mut Sampler) -> DetectionRecord {
    let path = sampler.path();
    let weights: Vec<f64> = records.iter().map(|r| r.probability).collect();
    let idx = sampler.categorical(&weights);
    let mut rec = records.into_iter().nth(idx).expect("non-empty outcome list");
    rec.seed_path = Some(path);
    rec
}

pub fn measure_threshold(
    state: &MixedState,
    bus: BusMode,
    m: ApdModel,
    sampler: &mut Sampler,
) -> Result<DetectionRecord> {
    Ok(sample_record(threshold_records(state, bus, m)?, sampler))
}

/// QND comparison module: interferes `bus1` and `bus2` on a 50/50 splitter and
/// watches the difference port (`bus1`) with a threshold detector. Both beams
/// are discarded afterwards.
pub fn qnd_compare_records(
    state: &MixedState,
    bus1: BusMode,
    bus2: BusMode,
    m: ApdModel,
) -> Result<Vec<DetectionRecord>> {
    let mixed = state.map_kets(|k| apply_bs50_bus(k, bus1, bus2))?;
    threshold_records(&mixed, bus1, m)?
        .into_iter()
        .map(|mut r| {
            r.post_state = trace_out_bus(&r.post_state, &[bus2])?;
            Ok(r)
        })
        .collect()
}

pub fn qnd_compare(
    state: &MixedState,
    bus1: BusMode,
    bus2: BusMode,
    m: ApdModel,
    sampler: &mut Sampler,
) -> Result<DetectionRecord> {
    Ok(sample_record(qnd_compare_records(state, bus1, bus2, m)?, sampler))
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Fock amplitude `<n|γ>` computed in log space.
fn fock_amplitude(gamma: C64, n: u64, ln_fact: f64) -> C64 {
    if gamma.norm() == 0.0 {
        return if n == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
    }
    let ln_mag = -0.5 * gamma.norm_sqr() + n as f64 * gamma.norm().ln() - 0.5 * ln_fact;
    cexp_clamped(ln_mag, n as f64 * gamma.arg())
}

struct PnrPrep {
    weight: f64,
    patterns: Vec<C64>,
    subkets: Vec<crate::hybrid_state::HybridKet>,
    gram: Vec<Vec<C64>>,
}

fn pnr_prepare(state: &MixedState, bus: BusMode) -> Result<(Vec<PnrPrep>, f64)> {
    state.registry().check_bus(bus)?;
    let mut preps = Vec::new();
    let mut max_mean: f64 = 0.0;
    for b in state.branches() {
        let split = split_by_buses(&b.ket, &[bus], true)?;
        let patterns: Vec<C64> = split.patterns.iter().map(|p| p[0]).collect();
        for p in &patterns {
            max_mean = max_mean.max(p.norm_sqr());
        }
        let n = patterns.len();
        let gram = (0..n)
            .map(|q| (0..n).map(|p| crate::hybrid_state::inner(&split.subkets[q], &split.subkets[p])).collect())
            .collect::<Result<Vec<Vec<C64>>>>()?;
        preps.push(PnrPrep { weight: b.weight, patterns, subkets: split.subkets, gram });
    }
    Ok((preps, max_mean))
}

/// Photon-number distribution on `bus`, enumerated until the remaining tail
/// is below [`PNR_TAIL_TOL`].
pub fn pnr_distribution(state: &MixedState, bus: BusMode) -> Result<Vec<f64>> {
    let (preps, max_mean) = pnr_prepare(state, bus)?;
    let norms: Vec<Vec<f64>> =
        preps.iter().map(|p| (0..p.patterns.len()).map(|i| p.gram[i][i].re.max(0.0).sqrt()).collect()).collect();
    let total: f64 = preps
        .iter()
        .map(|p| {
            let mut s = C64::new(0.0, 0.0);
            for (q, row) in p.gram.iter().enumerate() {
                for (r, g) in row.iter().enumerate() {
                    s += g * coherent_overlap(p.patterns[r], p.patterns[q]);
                }
            }
            p.weight * s.re
        })
        .sum();
    let n_cap = (max_mean + 40.0 * max_mean.sqrt() + 60.0).ceil() as usize;
    let ln_fact = ln_factorials(n_cap);
    let mut probs = Vec::new();
    let mut cumulative = 0.0;
    for (n, &lf) in ln_fact.iter().enumerate().take(n_cap + 1) {
        let mut pn = 0.0;
        // incoherent upper bound on p(n); its successive ratio is at most
        // max_mean / (n + 1), which bounds the remaining tail geometrically
        let mut bound = 0.0;
        for (prep, norm) in preps.iter().zip(&norms) {
            let amps: Vec<C64> = prep.patterns.iter().map(|&g| fock_amplitude(g, n as u64, lf)).collect();
            let mut s = C64::new(0.0, 0.0);
            for (q, row) in prep.gram.iter().enumerate() {
                if amps[q] == C64::new(0.0, 0.0) {
                    continue;
                }
                for (p, g) in row.iter().enumerate() {
                    s += amps[q].conj() * amps[p] * g;
                }
            }
            pn += prep.weight * s.re.max(0.0);
            let b: f64 = amps.iter().zip(norm).map(|(a, v)| a.norm() * v).sum();
            bound += prep.weight * b * b;
        }
        cumulative += pn;
        probs.push(pn);
        let ratio = max_mean / (n as f64 + 1.0);
        let tail_bound = if ratio < 1.0 { bound * ratio / (1.0 - ratio) } else { f64::INFINITY };
        if tail_bound < PNR_TAIL_TOL || (total - cumulative < PNR_TAIL_TOL && n as f64 >= max_mean) {
            return Ok(probs);
        }
    }
    Err(Error::TruncationFailure { n_max: n_cap as u64, tail: total - cumulative })
}

/// Conditional state after detecting `n` photons on `bus` (bus removed).
pub fn pnr_post_state(state: &MixedState, bus: BusMode, n: u64) -> Result<Option<(f64, MixedState)>> {
    let (preps, _) = pnr_prepare(state, bus)?;
    let lf = ln_factorials(n as usize)[n as usize];
    let mut parts = Vec::new();
    for prep in &preps {
        let mut acc: Option<crate::hybrid_state::HybridKet> = None;
        for (g, sub) in prep.patterns.iter().zip(&prep.subkets) {
            let a = fock_amplitude(*g, n, lf);
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            let piece = sub.scaled(a);
            acc = Some(match acc {
                None => piece,
                Some(k) => k.plus(&piece)?,
            });
        }
        if let Some(k) = acc {
            parts.push((prep.weight, k));
        }
    }
    Ok(MixedState::from_weighted(parts))
}

/// Ideal photon-number-resolving measurement of `bus`.
pub fn measure_pnr(state: &MixedState, bus: BusMode, sampler: &mut Sampler) -> Result<DetectionRecord> {
    let probs = pnr_distribution(state, bus)?;
    let path = sampler.path();
    let n = sampler.categorical(&probs) as u64;
    let (p, post) = pnr_post_state(state, bus, n)?.ok_or(Error::ZeroNorm)?;
    Ok(DetectionRecord { outcome: DetectorOutcome::Count(n), probability: p, post_state: post, seed_path: Some(path) })
}

/// Click probability of the QND probe's difference port when `n` photons
/// imprinted phase `nθ` on a probe of amplitude `probe_amp`:
/// `1 - exp(-η_D |γ (e^{inθ} - 1)|² / 2)`.
pub fn qnd_pnr_signal(n: u64, probe_amp: C64, theta: f64, m: ApdModel) -> f64 {
    let half = 0.5 * n as f64 * theta;
    let diff_sqr = probe_amp.norm_sqr() * 4.0 * half.sin().powi(2) / 2.0;
    -(-m.eta_d() * diff_sqr).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IndirectMode {
    /// Behaves as an ideal number projection.
    Ideal,
    /// Reports the analog signal with Gaussian read noise of this width.
    Signal { read_noise: f64 },
}

/// Indirect number-resolving detector: a probe beam picks up phase `nθ` and is
/// read out through a QND comparison module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndirectPnr {
    pub probe_amp: C64,
    pub theta: f64,
    pub apd: ApdModel,
    pub mode: IndirectMode,
}

#[derive(Debug, Clone)]
pub struct IndirectRecord {
    /// Photon number actually projected.
    pub n_true: u64,
    /// Photon number inferred from the signal.
    pub n_hat: u64,
    pub signal: f64,
    pub record: DetectionRecord,
}

impl IndirectPnr {
    pub fn signal(&self, n: u64) -> f64 {
        qnd_pnr_signal(n, self.probe_amp, self.theta, self.apd)
    }

    /// Largest `n` for which the signal is still monotone (`nθ ≤ π`).
    pub fn monotone_window(&self) -> u64 {
        if self.theta.abs() == 0.0 {
            0
        } else {
            (std::f64::consts::PI / self.theta.abs()).floor() as u64
        }
    }

    /// True when signals for consecutive `n ≤ n_max` differ by more than `delta`.
    pub fn resolvable(&self, n_max: u64, delta: f64) -> bool {
        n_max <= self.monotone_window() && (0..n_max).all(|n| (self.signal(n + 1) - self.signal(n)).abs() > delta)
    }

    fn nearest(&self, observed: f64) -> u64 {
        (0..=self.monotone_window())
            .min_by(|&a, &b| (self.signal(a) - observed).abs().total_cmp(&(self.signal(b) - observed).abs()))
            .unwrap_or(0)
    }

    pub fn measure(&self, state: &MixedState, bus: BusMode, sampler: &mut Sampler) -> Result<IndirectRecord> {
        let record = measure_pnr(state, bus, sampler)?;
        let DetectorOutcome::Count(n_true) = record.outcome else { unreachable!() };
        let (n_hat, signal) = match self.mode {
            IndirectMode::Ideal => (n_true, self.signal(n_true)),
            IndirectMode::Signal { read_noise } => {
                let clean = self.signal(n_true);
                let observed = if read_noise > 0.0 {
                    let normal = Normal::new(0.0, read_noise).map_err(|e| Error::Domain(format!("read noise: {e}")))?;
                    clean + normal.sample(sampler.rng())
                } else {
                    clean
                };
                (self.nearest(observed), observed)
            }
        };
        Ok(IndirectRecord { n_true, n_hat, signal, record })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_state::{DvLabel, HybridKet, Pol};
    use crate::registry::{DvMode, ModeRegistry, Side};
    use std::sync::Arc;

    fn setup() -> (Arc<ModeRegistry>, DvMode, DvMode, BusMode, BusMode) {
        let mut r = ModeRegistry::new();
        let a = r.add_dv("a", Side::A);
        let b = r.add_dv("b", Side::B);
        let b1 = r.add_bus("1");
        let b2 = r.add_bus("2");
        (r.into_shared(), a, b, b1, b2)
    }

    fn coherent(gamma: C64) -> (MixedState, BusMode) {
        let (r, a, _, b1, _) = setup();
        let k = HybridKet::from_dv(r, [(C64::new(1.0, 0.0), DvLabel::single(a, Pol::H))])
            .unwrap()
            .with_bus(b1, gamma)
            .unwrap();
        (MixedState::pure(k).unwrap(), b1)
    }

    #[test]
    fn vacuum_never_clicks() {
        let (s, b) = coherent(C64::new(0.0, 0.0));
        assert!((apd_no_click_prob(&s, b, ApdModel::ideal()).unwrap() - 1.0).abs() < 1e-15);
        let mut sampler = Sampler::new(1);
        for _ in 0..100 {
            assert_eq!(
                measure_threshold(&s, b, ApdModel::ideal(), &mut sampler).unwrap().outcome,
                DetectorOutcome::Off
            );
        }
    }

    #[test]
    fn no_click_closed_form() {
        let (s, b) = coherent(C64::new(2f64.ln().sqrt(), 0.0));
        assert!((apd_no_click_prob(&s, b, ApdModel::ideal()).unwrap() - 0.5).abs() < 1e-14);
        let (s, b) = coherent(C64::new(0.3, 1.2));
        let m = ApdModel::new(0.37).unwrap();
        let expected = (-0.37 * (0.09 + 1.44f64)).exp();
        assert!((apd_no_click_prob(&s, b, m).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn large_separation_always_clicks() {
        let (alpha, theta) = (300.0, 0.3);
        let g = (C64::from_polar(alpha, theta) - alpha) / 2f64.sqrt();
        let (s, b) = coherent(g);
        assert!(apd_no_click_prob(&s, b, ApdModel::ideal()).unwrap() < 1e-300);
        let recs = threshold_records(&s, b, ApdModel::ideal()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].outcome, DetectorOutcome::On);
    }

    #[test]
    fn threshold_records_are_complete() {
        let (r, a, _, b1, _) = setup();
        let mut k = HybridKet::zero(r, vec![b1]).unwrap();
        k.push_term(C64::new(0.6, 0.0), DvLabel::single(a, Pol::H), &[C64::new(0.4, 0.1)]).unwrap();
        k.push_term(C64::new(0.0, 0.8), DvLabel::single(a, Pol::V), &[C64::new(-0.9, 0.5)]).unwrap();
        k.push_term(C64::new(0.3, 0.1), DvLabel::single(a, Pol::H), &[C64::new(1.1, -0.2)]).unwrap();
        let s = MixedState::pure(k).unwrap();
        for eta in [0.0, 0.3, 1.0] {
            let recs = threshold_records(&s, b1, ApdModel::new(eta).unwrap()).unwrap();
            let total: f64 = recs.iter().map(|r| r.probability).sum();
            assert!((total - 1.0).abs() < 1e-10);
            for r in &recs {
                assert!((r.post_state.total_weight() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qnd_identical_beams_stay_dark() {
        let (r, a, _, b1, b2) = setup();
        let alpha = C64::new(3.0, 0.0);
        let k = HybridKet::from_dv(r, [(C64::new(1.0, 0.0), DvLabel::single(a, Pol::H))])
            .unwrap()
            .with_bus(b1, alpha)
            .unwrap()
            .with_bus(b2, alpha)
            .unwrap();
        let recs = qnd_compare_records(&MixedState::pure(k).unwrap(), b1, b2, ApdModel::ideal()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].outcome, DetectorOutcome::Off);
        assert!(recs[0].post_state.buses().is_empty());
    }

    #[test]
    fn qnd_shifted_beam_click_probability() {
        let (r, a, _, b1, b2) = setup();
        let (alpha, theta) = (1.3f64, 0.9f64);
        let k = HybridKet::from_dv(r, [(C64::new(1.0, 0.0), DvLabel::single(a, Pol::H))])
            .unwrap()
            .with_bus(b1, C64::from_polar(alpha, theta))
            .unwrap()
            .with_bus(b2, C64::new(alpha, 0.0))
            .unwrap();
        let recs = qnd_compare_records(&MixedState::pure(k).unwrap(), b1, b2, ApdModel::ideal()).unwrap();
        let on = recs.iter().find(|r| r.outcome == DetectorOutcome::On).unwrap().probability;
        let diff = (C64::from_polar(alpha, theta) - alpha).norm_sqr() / 2.0;
        assert!((on - (1.0 - (-diff).exp())).abs() < 1e-14);
    }

    #[test]
    fn pnr_on_coherent_state_is_poisson() {
        let g = C64::new(0.0, 1.4);
        let (s, b) = coherent(g);
        let probs = pnr_distribution(&s, b).unwrap();
        let mean = g.norm_sqr();
        let mut fact = 1.0;
        for (n, p) in probs.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            let poisson = (-mean).exp() * mean.powi(n as i32) / fact;
            assert!((p - poisson).abs() < 1e-14, "n={n}");
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pnr_parity_phases_on_odd_branch() {
        // (|HV>|iγ> + |VH>|-iγ>)/√2: n photons give (i^n |HV> + (-i)^n |VH>)/√2
        let (r, a, b, b1, _) = setup();
        let g = C64::new(0.0, 1.1);
        let mut k = HybridKet::zero(r.clone(), vec![b1]).unwrap();
        k.push_term(C64::new(1.0, 0.0), DvLabel::pair((a, Pol::H), (b, Pol::V)), &[g]).unwrap();
        k.push_term(C64::new(1.0, 0.0), DvLabel::pair((a, Pol::V), (b, Pol::H)), &[-g]).unwrap();
        let s = MixedState::pure(k).unwrap();
        for n in 1..6u64 {
            let (_, post) = pnr_post_state(&s, b1, n).unwrap().unwrap();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let target = HybridKet::from_dv(
                r.clone(),
                [
                    (C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0), DvLabel::pair((a, Pol::H), (b, Pol::V))),
                    (C64::new(sign * std::f64::consts::FRAC_1_SQRT_2, 0.0), DvLabel::pair((a, Pol::V), (b, Pol::H))),
                ],
            )
            .unwrap();
            let f = crate::hybrid_state::fidelity(&post, &target).unwrap();
            assert!((f - 1.0).abs() < 1e-12, "n={n} f={f}");
        }
    }

    #[test]
    fn pnr_truncation_failure_is_reported() {
        // mean 1e8 needs far more levels than the cap permits only when the
        // label is absurd; here we simply check a big but finite case succeeds
        let (s, b) = coherent(C64::new(30.0, 0.0));
        let probs = pnr_distribution(&s, b).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn pnr_signal_examples() {
        let m = ApdModel::new(0.8).unwrap();
        let g = C64::new(2.5, 0.0);
        assert_eq!(qnd_pnr_signal(0, g, 0.3, m), 0.0);
        let expected = 1.0 - (-0.8 * 6.25 * (1.0 - 0.3f64.cos())).exp();
        assert!((qnd_pnr_signal(1, g, 0.3, m) - expected).abs() < 1e-15);
        let det = IndirectPnr { probe_amp: g, theta: 0.3, apd: m, mode: IndirectMode::Ideal };
        assert!(det.resolvable(3, 0.05));
        let dim = IndirectPnr { probe_amp: C64::new(0.05, 0.0), ..det };
        assert!(!dim.resolvable(3, 0.05));
        for n in 0..det.monotone_window() {
            assert!(det.signal(n + 1) >= det.signal(n));
        }
    }

    #[test]
    fn indirect_signal_mode_recovers_n_without_noise() {
        let (s, b) = coherent(C64::new(1.2, 0.0));
        let det = IndirectPnr {
            probe_amp: C64::new(2.0, 0.0),
            theta: 0.25,
            apd: ApdModel::ideal(),
            mode: IndirectMode::Signal { read_noise: 0.0 },
        };
        let mut sampler = Sampler::new(3);
        for _ in 0..50 {
            let rec = det.measure(&s, b, &mut sampler).unwrap();
            assert_eq!(rec.n_true, rec.n_hat);
        }
    }

    #[test]
    fn efficiency_domain() {
        assert!(ApdModel::new(1.2).is_err());
        assert!(ApdModel::new(-0.1).is_err());
    }
}
