//! Photon loss on the bus beams and the fidelity/efficiency laws it implies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elements::{apply_bs50_bus, apply_bs50_bus_inverse};
use crate::error::{Error, Result};
use crate::hybrid_state::{
    coherent_overlap, mixture_from_kernel, split_by_buses, HybridKet, HybridTerm, MixedState, C64,
};
use crate::pipeline::Backend;
use crate::registry::BusMode;

/// Fiber channel. `eta` is the transmission `e^{-loss_rate * duration}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    eta: f64,
    loss_rate: Option<f64>,
    duration: Option<f64>,
}

impl ChannelParams {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Domain(format!("transmission {eta} outside (0, 1]")));
        }
        Ok(ChannelParams { eta, loss_rate: None, duration: None })
    }

    pub fn lossless() -> Self {
        ChannelParams { eta: 1.0, loss_rate: None, duration: None }
    }

    pub fn from_loss_rate(loss_rate: f64, duration: f64) -> Result<Self> {
        if !(loss_rate >= 0.0 && duration >= 0.0) || !(loss_rate * duration).is_finite() {
            return Err(Error::Domain(format!("loss rate {loss_rate} and duration {duration} must be non-negative")));
        }
        let mut ch = Self::new((-loss_rate * duration).exp())?;
        ch.loss_rate = Some(loss_rate);
        ch.duration = Some(duration);
        Ok(ch)
    }

    /// All three parameters, checked for consistency.
    pub fn with_loss_rate(eta: f64, loss_rate: f64, duration: f64) -> Result<Self> {
        let derived = Self::from_loss_rate(loss_rate, duration)?;
        if (derived.eta - eta).abs() > 1e-12 * eta.max(1e-300) {
            return Err(Error::Domain(format!(
                "transmission {eta} inconsistent with exp(-{loss_rate} * {duration}) = {}",
                derived.eta
            )));
        }
        Ok(derived)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn loss_rate(&self) -> Option<f64> {
        self.loss_rate
    }

    pub fn duration(&self) -> Option<f64> {
        self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub eta: f64,
    pub fidelity: f64,
    pub success: f64,
    pub backend: Backend,
}

impl TradeoffPoint {
    pub fn new(eta: f64, fidelity: f64, success: f64, backend: Backend) -> Result<Self> {
        if !(0.5..=1.0).contains(&fidelity) || !(0.0..=1.0).contains(&success) {
            return Err(Error::Domain(format!("trade-off point F={fidelity}, P={success} out of range")));
        }
        Ok(TradeoffPoint { eta, fidelity, success, backend })
    }
}

fn scale_labels(ket: &HybridKet, idx: &[usize], s: f64) -> HybridKet {
    let terms = ket
        .terms()
        .iter()
        .map(|t| {
            let mut bus = t.bus.clone();
            for &i in idx {
                bus[i] *= s;
            }
            HybridTerm { coeff: t.coeff, dv: t.dv.clone(), bus }
        })
        .collect();
    HybridKet::from_parts(ket.registry().clone(), ket.buses().to_vec(), terms)
}

/// Amplitude damping with transmission `eta` on each listed bus.
///
/// `|γ_p><γ_q| ↦ <√(1-η)γ_q|√(1-η)γ_p> |√η γ_p><√η γ_q|`, with the result
/// re-expressed as a mixture through the eigenvectors of the coherence matrix.
pub fn damp(state: &MixedState, buses: &[BusMode], ch: ChannelParams) -> Result<MixedState> {
    for &b in buses {
        state.registry().check_bus(b)?;
    }
    if ch.eta == 1.0 || buses.is_empty() {
        return Ok(state.clone());
    }
    let keep = ch.eta.sqrt();
    let lost = (1.0 - ch.eta).sqrt();
    let mut parts = Vec::new();
    for b in state.branches() {
        let idx: Vec<usize> = buses.iter().map(|&m| b.ket.bus_index(m)).collect::<Result<_>>()?;
        let split = split_by_buses(&b.ket, buses, false)?;
        let n = split.patterns.len();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                m[(p, q)] = split.patterns[p]
                    .iter()
                    .zip(&split.patterns[q])
                    .fold(C64::new(1.0, 0.0), |acc, (gp, gq)| acc * coherent_overlap(gp * lost, gq * lost));
            }
        }
        let scaled: Vec<HybridKet> = split.subkets.iter().map(|k| scale_labels(k, &idx, keep)).collect();
        for (w, ket) in mixture_from_kernel(&scaled, &m) {
            parts.push((b.weight * w, ket));
        }
    }
    let (_, out) = MixedState::from_weighted(parts).ok_or(Error::ZeroNorm)?;
    Ok(out)
}

/// `|<√(1-η)α e^{iθ}|√(1-η)α>|² = e^{-(1-η)|αe^{iθ} - α|²}`.
pub fn xi_squared(alpha: C64, theta: f64, ch: ChannelParams) -> f64 {
    let d = (alpha * C64::from_polar(1.0, theta) - alpha).norm_sqr();
    (-(1.0 - ch.eta) * d).exp()
}

pub fn fidelity_after_loss(alpha: C64, theta: f64, ch: ChannelParams) -> f64 {
    0.5 * (1.0 + xi_squared(alpha, theta, ch))
}

fn check_law_domain(f: f64, eta: f64) -> Result<()> {
    if !(f > 0.5 && f < 1.0) {
        return Err(Error::Domain(format!("fidelity {f} outside (1/2, 1)")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("transmission {eta} outside (0, 1)")));
    }
    Ok(())
}

/// Number-resolving upper bound `1 - (2F-1)^{2η/(1-η)}` (small-θ form).
pub fn success_bound(f: f64, eta: f64) -> Result<f64> {
    check_law_domain(f, eta)?;
    Ok(-((2.0 * eta / (1.0 - eta)) * (2.0 * f - 1.0).ln()).exp_m1())
}

/// Exact-θ counterpart of [`success_bound`]: `1 - e^{-2η(α sin θ)²}`.
pub fn success_bound_exact(alpha: f64, theta: f64, eta: f64) -> f64 {
    -(-2.0 * eta * (alpha * theta.sin()).powi(2)).exp_m1()
}

/// Unambiguous-discrimination success `½(1 - (2F-1)^{η/(1-η)})`.
pub fn success_usd(f: f64, eta: f64) -> Result<f64> {
    check_law_domain(f, eta)?;
    Ok(-0.5 * ((eta / (1.0 - eta)) * (2.0 * f - 1.0).ln()).exp_m1())
}

/// Transmission at which [`success_bound`] reaches `p` for fidelity `f`.
pub fn eta_for_target(f: f64, p: f64) -> Result<f64> {
    if !(f > 0.5 && f < 1.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("targets F={f}, P={p} out of range")));
    }
    let x = (1.0 - p).ln() / (2.0 * f - 1.0).ln();
    Ok(x / (2.0 + x))
}

/// Real amplitude giving fidelity `f` after loss `eta` at phase `theta`.
pub fn alpha_for_fidelity(f: f64, eta: f64, theta: f64) -> Result<f64> {
    check_law_domain(f, eta)?;
    let half = (0.5 * theta).sin();
    if half == 0.0 || !half.is_finite() {
        return Err(Error::Domain(format!("phase {theta} gives no distinguishability")));
    }
    let d = -(2.0 * f - 1.0).ln() / (1.0 - eta);
    Ok(d.sqrt() / (2.0 * half.abs()))
}

/// Interferes the two buses so that the state becomes a cat state on `bus1`
/// times a coherent state on `bus2`.
pub fn to_cat_frame(x: &HybridKet, bus1: BusMode, bus2: BusMode) -> Result<HybridKet> {
    apply_bs50_bus(x, bus1, bus2)
}

pub fn from_cat_frame(x: &HybridKet, bus1: BusMode, bus2: BusMode) -> Result<HybridKet> {
    apply_bs50_bus_inverse(x, bus1, bus2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_state::{fidelity, inner, normalize, DvLabel, Pol};
    use crate::registry::{ModeRegistry, Side};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn eq9(alpha: f64, theta: f64) -> (HybridKet, BusMode, BusMode) {
        let mut r = ModeRegistry::new();
        let a = r.add_dv("a", Side::A);
        let b1 = r.add_bus("1");
        let b2 = r.add_bus("2");
        let r = r.into_shared();
        let al = C64::new(alpha, 0.0);
        let ar = C64::from_polar(alpha, theta);
        let mut k = HybridKet::zero(r, vec![b1, b2]).unwrap();
        k.push_term(C64::new(FRAC_1_SQRT_2, 0.0), DvLabel::single(a, Pol::H), &[al, ar]).unwrap();
        k.push_term(C64::new(FRAC_1_SQRT_2, 0.0), DvLabel::single(a, Pol::V), &[ar, al]).unwrap();
        (k, b1, b2)
    }

    #[test]
    fn channel_domain_and_consistency() {
        assert!(ChannelParams::new(0.0).is_err());
        assert!(ChannelParams::new(1.1).is_err());
        let ch = ChannelParams::from_loss_rate(0.2, 3.0).unwrap();
        assert!((ch.eta() - (-0.6f64).exp()).abs() < 1e-15);
        assert!(ChannelParams::with_loss_rate((-0.6f64).exp(), 0.2, 3.0).is_ok());
        assert!(ChannelParams::with_loss_rate(0.5, 0.2, 3.0).is_err());
    }

    #[test]
    fn two_pattern_weights() {
        let (alpha, theta, eta) = (1.7, 0.8, 0.6);
        let (k, b1, b2) = eq9(alpha, theta);
        let ch = ChannelParams::new(eta).unwrap();
        let out = damp(&MixedState::pure(k).unwrap(), &[b1, b2], ch).unwrap();
        let xi2 = xi_squared(C64::new(alpha, 0.0), theta, ch);
        let mut w: Vec<f64> = out.branches().iter().map(|b| b.weight).collect();
        w.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(w.len(), 2);
        assert!((w[0] - 0.5 * (1.0 + xi2)).abs() < 1e-12);
        assert!((w[1] - 0.5 * (1.0 - xi2)).abs() < 1e-12);
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
        // labels shrink by √η
        let s = eta.sqrt();
        for b in out.branches() {
            for t in b.ket.terms() {
                assert!((t.bus.iter().map(|g| g.norm()).fold(0.0, f64::max) - s * alpha).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_semigroup() {
        let (k, b1, b2) = eq9(1.2, 1.1);
        let x = MixedState::pure(k).unwrap();
        let same = damp(&x, &[b1, b2], ChannelParams::lossless()).unwrap();
        assert!(x.hs_distance(&same).unwrap() < 1e-7);
        let e1 = ChannelParams::new(0.7).unwrap();
        let e2 = ChannelParams::new(0.55).unwrap();
        let twice = damp(&damp(&x, &[b1, b2], e1).unwrap(), &[b1, b2], e2).unwrap();
        let once = damp(&x, &[b1, b2], ChannelParams::new(0.7 * 0.55).unwrap()).unwrap();
        assert!(twice.hs_distance(&once).unwrap() < 1e-7);
        assert!((twice.purity().unwrap() - once.purity().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cat_frame_round_trip() {
        let (k, b1, b2) = eq9(1.5, 0.4);
        let cat = to_cat_frame(&k, b1, b2).unwrap();
        let expect = (C64::new(1.5, 0.0) - C64::from_polar(1.5, 0.4)) / 2f64.sqrt();
        assert!((cat.terms()[0].bus[0].norm() - expect.norm()).abs() < 1e-15);
        let back = from_cat_frame(&cat, b1, b2).unwrap();
        assert!((inner(&back, &k).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn damp_commutes_with_bus_splitter() {
        let (k, b1, b2) = eq9(1.3, 0.9);
        let ch = ChannelParams::new(0.45).unwrap();
        let x = MixedState::pure(k).unwrap();
        let a = damp(&x, &[b1, b2], ch).unwrap().map_kets(|k| to_cat_frame(k, b1, b2)).unwrap();
        let b = damp(&x.map_kets(|k| to_cat_frame(k, b1, b2)).unwrap(), &[b1, b2], ch).unwrap();
        assert!(a.hs_distance(&b).unwrap() < 1e-7);
        let target = normalize(&a.branches()[0].ket).unwrap();
        assert!((fidelity(&a, &target).unwrap() - fidelity(&b, &target).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn laws_spot_values() {
        assert!((success_bound(0.9, 0.5).unwrap() - 0.36).abs() < 1e-12);
        assert!((success_usd(0.9, 0.5).unwrap() - 0.1).abs() < 1e-12);
        let eta = eta_for_target(0.99, 0.99).unwrap();
        assert!((eta - 0.991).abs() < 1e-3);
        assert!((success_bound(0.99, eta).unwrap() - 0.99).abs() < 1e-12);
        assert!(success_bound(1.0, 0.5).is_err());
        assert!(success_usd(0.9, 1.0).is_err());
        assert!(success_bound(1.0 - 1e-12, 0.5).unwrap() < 1e-10);
    }

    #[test]
    fn large_alpha_tiny_theta_is_nearly_perfect() {
        for eta in [1e-9, 0.13, 0.5, 0.99, 1.0] {
            let ch = ChannelParams::new(eta).unwrap();
            assert!(fidelity_after_loss(C64::new(1e3, 0.0), 1e-5, ch) > 1.0 - 1e-4);
        }
    }

    #[test]
    fn alpha_solve_inverts_fidelity() {
        let (f, eta, theta) = (0.87, 0.33, 1e-3);
        let a = alpha_for_fidelity(f, eta, theta).unwrap();
        let ch = ChannelParams::new(eta).unwrap();
        assert!((fidelity_after_loss(C64::new(a, 0.0), theta, ch) - f).abs() < 1e-12);
    }
}
