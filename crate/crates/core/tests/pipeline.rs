use entangler::detection::pnr_distribution;
use entangler::hybrid_state::{fidelity, Diag, MixedState, Pol, C64};
use entangler::loss::ChannelParams;
use entangler::pipeline::*;
use entangler::rng::Sampler;
use entangler::Error;

fn qnd() -> QndConfig {
    QndConfig::default()
}

fn only_pattern(input: &InputPairState, design: Design) -> StageOneResult {
    let modes = ProtocolModes::new();
    let mut outs = stage1_outcomes(input, design, &modes, &qnd()).unwrap();
    assert_eq!(outs.len(), 1, "basis input should herald a single pattern");
    outs.remove(0)
}

#[test]
fn table1_basis_rows() {
    let modes = ProtocolModes::new();
    let rows = [
        (Pol::H, Pol::H, "off-off", (Port::K, Port::K)),
        (Pol::V, Pol::V, "on-on", (Port::R, Port::R)),
        (Pol::H, Pol::V, "off-on", (Port::K, Port::R)),
        (Pol::V, Pol::H, "on-off", (Port::R, Port::K)),
    ];
    for (a, b, pattern, ports) in rows {
        let res = only_pattern(&InputPairState::basis(a, b), Design::Fig1);
        assert_eq!(res.pattern.to_string(), pattern);
        assert_eq!(res.ports, ports);
        assert!((res.probability - 1.0).abs() < 1e-12);
        let target = expected_port_state(&modes, &res).unwrap();
        assert!((fidelity(&res.post_state, &target).unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn random_inputs_give_the_same_port_state() {
    let modes = ProtocolModes::new();
    let mut sampler = Sampler::new(11);
    for _ in 0..100 {
        let input = random_input(&mut sampler, 4).unwrap();
        let outs = stage1_outcomes(&input, Design::Fig1, &modes, &qnd()).unwrap();
        let total: f64 = outs.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for o in &outs {
            let target = expected_port_state(&modes, o).unwrap();
            assert!((fidelity(&o.post_state, &target).unwrap() - 1.0).abs() < 1e-10);
            assert!((o.post_state.purity().unwrap() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn pattern_probabilities_follow_the_diagonal() {
    let modes = ProtocolModes::new();
    let input = random_input(&mut Sampler::new(5), 3).unwrap();
    let rho = input.density();
    for o in stage1_outcomes(&input, Design::Fig1, &modes, &qnd()).unwrap() {
        let idx = 2 * usize::from(o.pattern.a_on) + usize::from(o.pattern.b_on);
        assert!((o.probability - rho[(idx, idx)].re).abs() < 1e-12);
    }
}

#[test]
fn diagonal_design_signs() {
    let modes = ProtocolModes::new();
    let cases = [
        (Diag::Plus, Diag::Plus, (Port::K, Port::K), [1.0, 1.0, 1.0, 1.0]),
        (Diag::Minus, Diag::Minus, (Port::R, Port::R), [1.0, -1.0, -1.0, 1.0]),
        (Diag::Plus, Diag::Minus, (Port::K, Port::R), [1.0, -1.0, 1.0, -1.0]),
        (Diag::Minus, Diag::Plus, (Port::R, Port::K), [1.0, 1.0, -1.0, -1.0]),
    ];
    for (a, b, ports, signs) in cases {
        let res = only_pattern(&InputPairState::diagonal(a, b), Design::Fig3);
        assert_eq!(res.ports, ports);
        let amps = signs.map(|s| C64::new(0.5 * s, 0.0));
        let target = pair_ket(modes.registry.clone(), res.port_modes.0, res.port_modes.1, amps).unwrap();
        assert!((fidelity(&res.post_state, &target).unwrap() - 1.0).abs() < 1e-10);
        // after feed-forward every pattern carries (Φ+ + Ψ+)/√2
        let fixed = frame_correct(&res).unwrap();
        let plus =
            pair_ket(modes.registry.clone(), res.port_modes.0, res.port_modes.1, [C64::new(0.5, 0.0); 4]).unwrap();
        assert!((fidelity(&fixed, &plus).unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn ideal_heralding_needs_separation() {
    let modes = ProtocolModes::new();
    let weak = QndConfig { alpha: C64::new(5.0, 0.0), ..QndConfig::default() };
    let err = stage1_outcomes(&InputPairState::basis(Pol::H, Pol::H), Design::Fig1, &modes, &weak).unwrap_err();
    assert!(matches!(err, Error::SeparationTooSmall { .. }));
}

#[test]
fn povm_heralding_at_small_amplitude_is_mixed_but_complete() {
    let modes = ProtocolModes::new();
    let cfg = QndConfig { alpha: C64::new(2.0, 0.0), theta: 0.8, heralding: Heralding::Povm, ..QndConfig::default() };
    let input = random_input(&mut Sampler::new(2), 4).unwrap();
    let outs = stage1_outcomes(&input, Design::Fig1, &modes, &cfg).unwrap();
    let total: f64 = outs.iter().map(|o| o.probability).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

fn heralded_kk() -> (ProtocolModes, StageOneResult) {
    let modes = ProtocolModes::new();
    let res = only_pattern(&InputPairState::basis(Pol::H, Pol::H), Design::Fig1);
    (modes, res)
}

#[test]
fn lossless_pre_detection_matches_closed_form() {
    let (modes, s1) = heralded_kk();
    let gate = GateConfig::new(C64::new(1.3, 0.0), 0.6, Backend::Pnr);
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let (f, psi1, _) = reference_mixture(&modes, &gate).unwrap();
    assert_eq!(f, 1.0);
    assert!((fidelity(&x, &psi1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn lossy_pre_detection_is_the_two_component_mixture() {
    let (modes, s1) = heralded_kk();
    for (alpha, theta, eta) in [(2.0, 0.5, 0.6), (30.0, 0.01, 0.13), (0.5, 0.02, 0.99)] {
        let gate =
            GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Pnr).with_channel(ChannelParams::new(eta).unwrap());
        let x = pre_detection_state(&s1, &modes, &gate).unwrap();
        let (f, psi1, psi2) = reference_mixture(&modes, &gate).unwrap();
        assert!((fidelity(&x, &psi1).unwrap() - f).abs() < 1e-10);
        assert!((fidelity(&x, &psi2).unwrap() - (1.0 - f)).abs() < 1e-10);
        let purity = f * f + (1.0 - f) * (1.0 - f);
        assert!((x.purity().unwrap() - purity).abs() < 1e-10);
    }
}

#[test]
fn pnr_labels_and_error_law() {
    let (modes, s1) = heralded_kk();
    let (alpha, theta) = (1.1, 0.7);
    let gate = GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Pnr);
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let p_err = (-2.0 * (alpha * theta.sin()).powi(2)).exp();
    let outs = pnr_outcomes(&x, &modes).unwrap();
    let total: f64 = outs.iter().map(|o| o.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let zero = &outs[0];
    assert!((zero.probability - 0.5 * (1.0 + p_err)).abs() < 1e-12);
    let phi = modes.bell(BellLabel::PhiPlus).unwrap();
    let f0 = fidelity(&zero.post_state, &phi).unwrap();
    assert!((f0 - 1.0 / (1.0 + p_err)).abs() < 1e-12);
    for o in outs.iter().skip(1) {
        let n = o.photon_count.unwrap();
        let want = if n % 2 == 0 { BellLabel::PsiPlus } else { BellLabel::PsiMinus };
        assert_eq!(o.bell, Some(want));
        assert!((fidelity(&o.post_state, &modes.bell(want).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let lam = 2.0 * (alpha * theta.sin()).powi(2);
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        let pn = (-lam).exp() * lam.powi(n as i32) / fact;
        assert!((o.probability - 0.5 * pn).abs() < 1e-13);
    }
    let (_, odd) = parity_projection(&x, &modes, Parity::Odd).unwrap();
    let dist = pnr_distribution(&odd, modes.p[0]).unwrap();
    assert!((dist[0] - p_err).abs() < 1e-12);
}

#[test]
fn frame_correction_canonicalizes_odd_counts() {
    let (modes, s1) = heralded_kk();
    let mut gate = GateConfig::new(C64::new(3.0, 0.0), 0.5, Backend::Pnr);
    gate.canonical_frame = true;
    let mut sampler = Sampler::new(9);
    for _ in 0..20 {
        let out = parity_gate(&s1, &modes, &gate, &mut sampler).unwrap();
        assert_ne!(out.bell, Some(BellLabel::PsiMinus));
        if out.photon_count.unwrap_or(0) > 0 {
            assert!((out.fidelity.unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn threshold_ideal_regime() {
    let (modes, s1) = heralded_kk();
    let gate = GateConfig::new(C64::new(100.0, 0.0), 0.5, Backend::Threshold);
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let outs = threshold_outcomes(&x, &modes, &gate).unwrap();
    let success: f64 = outs.iter().filter(|o| o.success).map(|o| o.probability).sum();
    assert!((success - 0.5).abs() < 1e-12);
    for o in outs.iter().filter(|o| o.success) {
        assert_eq!(o.bell, Some(BellLabel::PhiPlus));
        let f = fidelity(&o.post_state, &modes.bell(BellLabel::PhiPlus).unwrap()).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }
}

#[test]
fn threshold_without_phase_never_heralds() {
    let (modes, s1) = heralded_kk();
    let gate = GateConfig::new(C64::new(5.0, 0.0), 0.0, Backend::Threshold);
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let outs = threshold_outcomes(&x, &modes, &gate).unwrap();
    assert!(outs.iter().all(|o| !o.success || o.probability == 0.0));
}

#[test]
fn usd_matches_closed_form() {
    let (modes, s1) = heralded_kk();
    let (eta, f, theta) = (0.5, 0.9, 0.05);
    let alpha = entangler::loss::alpha_for_fidelity(f, eta, theta).unwrap();
    let gate =
        GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Usd).with_channel(ChannelParams::new(eta).unwrap());
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let outs = usd_outcomes(&x, &modes, &gate).unwrap();
    let p: f64 = outs.iter().filter(|o| o.success).map(|o| o.probability).sum();
    assert!((p - entangler::loss::success_usd(f, eta).unwrap()).abs() < 1e-12);
    assert!((p - 0.1).abs() < 1e-12);
    let complex = GateConfig { alpha: C64::new(1.0, 0.5), ..gate };
    assert!(matches!(usd_outcomes(&x, &modes, &complex), Err(Error::NonRealAlpha)));
}

#[test]
fn end_to_end_hh_lossless_pnr() {
    let modes = ProtocolModes::new();
    let cfg = RunConfig {
        design: Design::Fig1,
        qnd: QndConfig::default(),
        gate: GateConfig::new(C64::new(10.0, 0.0), 0.3, Backend::Pnr),
    };
    let mut sampler = Sampler::new(4);
    let report = run_end_to_end(&InputPairState::basis(Pol::H, Pol::H), &cfg, &modes, &mut sampler, 0).unwrap();
    assert!(report.outcome.success);
    assert!((report.outcome.fidelity.unwrap() - 1.0).abs() < 1e-10);
    let stages: Vec<&str> = report.trace.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(stages, ["input", "stage1", "frame", "pre_detection", "detection", "output"]);
    let again = run_end_to_end(&InputPairState::basis(Pol::H, Pol::H), &cfg, &modes, &mut Sampler::new(4), 0).unwrap();
    assert_eq!(report.trace, again.trace);
}

#[test]
fn output_is_independent_of_the_input() {
    let modes = ProtocolModes::new();
    let gate = GateConfig::new(C64::new(1.5, 0.0), 0.4, Backend::Pnr).with_channel(ChannelParams::new(0.7).unwrap());
    let mut reference: Option<MixedState> = None;
    let mut sampler = Sampler::new(21);
    for _ in 0..5 {
        let input = random_input(&mut sampler, 4).unwrap();
        let s1 = stage1_outcomes(&input, Design::Fig1, &modes, &qnd())
            .unwrap()
            .into_iter()
            .find(|o| o.pattern == Pattern { a_on: false, b_on: true })
            .unwrap();
        let x = pre_detection_state(&s1, &modes, &gate).unwrap();
        let (_, odd) = parity_projection(&x, &modes, Parity::Odd).unwrap();
        let dist = pnr_distribution(&odd, modes.p[0]).unwrap();
        assert!((dist[0] - (-2.0 * 0.7 * (1.5 * 0.4f64.sin()).powi(2)).exp()).abs() < 1e-12);
        let out = pnr_outcomes(&x, &modes).unwrap().remove(0).post_state;
        if let Some(r) = &reference {
            let d = out.dv_density().unwrap().distance(&r.dv_density().unwrap());
            assert!(d < 1e-10);
        } else {
            reference = Some(out);
        }
    }
}

#[test]
fn composed_elements_reproduce_the_four_port_state() {
    use entangler::hybrid_state::{canonicalize, HybridKet};
    let modes = ProtocolModes::new();
    let q = QndConfig::default();
    let (a, th) = (q.alpha, q.theta);
    let rot = a * C64::from_polar(1.0, th);
    let s2 = std::f64::consts::SQRT_2;
    let k_labels = [C64::new(0.0, 0.0), a * s2];
    let r_labels = [(rot - a) / s2, (rot + a) / s2];
    let mut sampler = Sampler::new(3);
    for _ in 0..5 {
        let input = random_input(&mut sampler, 1).unwrap();
        let c = input.coeffs()[0];
        let got = stage1_state(&input, Design::Fig1, &modes, &q).unwrap();
        assert_eq!(got.branches().len(), 1);
        let got = &got.branches()[0].ket;
        let buses = vec![modes.a.q1, modes.a.q2, modes.b.q1, modes.b.q2];
        let mut want = HybridKet::zero(modes.registry.clone(), buses).unwrap();
        for (i, (pa, pb)) in
            [(Port::K, Port::K), (Port::K, Port::R), (Port::R, Port::K), (Port::R, Port::R)].into_iter().enumerate()
        {
            let la = if pa == Port::K { k_labels } else { r_labels };
            let lb = if pb == Port::K { k_labels } else { r_labels };
            let labels = [la[0], la[1], lb[0], lb[1]];
            for (x, y) in [(Pol::H, Pol::H), (Pol::H, Pol::V), (Pol::V, Pol::H), (Pol::V, Pol::V)] {
                let dv = entangler::DvLabel::pair((modes.a.port(pa), x), (modes.b.port(pb), y));
                want.push_term(c[i] * 0.5, dv, &labels).unwrap();
            }
        }
        let diff = canonicalize(&got.plus(&want.scaled(C64::new(-1.0, 0.0))).unwrap(), 1e-12);
        let worst = diff.terms().iter().map(|t| t.coeff.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }
}

#[test]
fn every_stage_keeps_unit_norm() {
    let modes = ProtocolModes::new();
    let mut sampler = Sampler::new(8);
    let input = random_input(&mut sampler, 4).unwrap();
    for design in [Design::Fig1, Design::Fig3] {
        let x = stage1_state(&input, design, &modes, &qnd()).unwrap();
        assert!((x.total_weight() - 1.0).abs() < 1e-12);
        for b in x.branches() {
            assert!((b.ket.norm_sqr() - 1.0).abs() < 1e-12);
        }
        for s1 in stage1_outcomes(&input, design, &modes, &qnd()).unwrap() {
            let gate = GateConfig::new(C64::new(2.0, 0.0), 0.5, Backend::Pnr);
            let x = pre_detection_state(&s1, &modes, &gate).unwrap();
            for b in x.branches() {
                assert!((b.ket.norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pnr_error_given_even_claim() {
    let (modes, s1) = heralded_kk();
    let (alpha, theta) = (0.9, 0.8);
    let gate = GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Pnr);
    let x = pre_detection_state(&s1, &modes, &gate).unwrap();
    let outs = pnr_outcomes(&x, &modes).unwrap();
    let p_err = (-2.0 * (alpha * theta.sin()).powi(2)).exp();
    let clicks: f64 = outs.iter().skip(1).map(|o| o.probability).sum();
    assert!((clicks - 0.5 * (1.0 - p_err)).abs() < 1e-12);
    // odd-sector weight leaking into the n = 0 claim
    let (_, odd) = parity_projection(&x, &modes, Parity::Odd).unwrap();
    let odd_zero = 0.5 * pnr_distribution(&odd, modes.p[0]).unwrap()[0];
    let err = odd_zero / outs[0].probability;
    assert!((err - p_err * 0.5 / outs[0].probability).abs() < 1e-12);
}
