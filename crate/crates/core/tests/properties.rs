//! Property tests for the module invariants.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

use cvqkd_eq::channel::{
    char_function, fiber_transmittance, free_space_transmittance, sample_intensity, sample_phase_drift, Fading,
    FiberConfig, FluctuationMoments, FreeSpaceConfig, GammaGammaParams, LogNormalParams, PhaseNoiseConfig,
};
use cvqkd_eq::classifier::{classification_report, EllipseZones, QualityLabel, N_CLASSES};
use cvqkd_eq::equalizer::{gradient_check, init_model, EqualizerMode};
use cvqkd_eq::experiment::run::suppression_ratio;
use cvqkd_eq::rng::stream;
use cvqkd_eq::security::{
    build_covariance, holevo_bound, key_rate_at, mutual_information, symplectic_spectrum, CovarianceSpec,
    SecurityConfig,
};
use cvqkd_eq::signal::{
    build_frame_with_pilots, detect_homodyne, modulate_gmcs, shape_pulse, DetectorModel, ProtocolParams, SlotKind,
};
use cvqkd_eq::channel::ChannelRealization;
use cvqkd_eq::Real;

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(20), failure_persistence: None, ..Config::default() }
}

const DRAWS: usize = 1_000_000;

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn fiber_loss_is_strictly_monotone(alpha in 0.01f64..2.0, l in 0.0f64..100.0, dl in 0.01f64..10.0) {
        let at = |length_km| fiber_transmittance(&FiberConfig { alpha_f: alpha, length_km });
        prop_assert_eq!(at(0.0), 1.0);
        prop_assert!(at(l + dl) < at(l));
    }

    #[test]
    fn free_space_loss_is_strictly_monotone(alpha in 0.1f64..30.0, l in 0.0f64..2.0, dl in 0.001f64..1.0) {
        let base = FreeSpaceConfig::with_target_transmittance(alpha, 0.5).unwrap();
        let at = |length_km| free_space_transmittance(&FreeSpaceConfig { length_km, ..base });
        prop_assert_eq!(at(0.0), 1.0);
        prop_assert!(at(l + dl) < at(l));
    }

    #[test]
    fn characteristic_function_is_a_damping(omega in -10.0f64..10.0, s2 in 0.0f64..5.0) {
        let m = char_function(omega, s2);
        prop_assert!(m > 0.0 && m <= 1.0);
        prop_assert_eq!(m == 1.0, omega * s2.sqrt() == 0.0 || omega * omega * s2 / 2.0 < f64::EPSILON / 2.0);
    }

    #[test]
    fn analytic_moments_split_the_intensity(e_sqrt in 0.1f64..1.0, extra in 0.0f64..1.0, s2 in 0.0f64..3.0) {
        let e_i = e_sqrt * e_sqrt + extra;
        let m = FluctuationMoments::from_intensity_moments(e_sqrt, e_i, s2);
        prop_assert!((m.e_a2_cos2 + m.e_a2_sin2 - m.e_a2).abs() <= 4.0 * f64::EPSILON * e_i);
    }

    #[test]
    fn frames_alternate_pilot_and_signal(n in 1usize..200, seed in any::<u64>()) {
        let params = ProtocolParams::new(4.0, 20.0).unwrap();
        let mut rng = stream(seed, "frame");
        let x: Vec<f64> = modulate_gmcs(&params, n, &mut rng).unwrap().into_iter().map(|(q, _)| q).collect();
        let frame = build_frame_with_pilots(&x, &vec![20.0; n]).unwrap();
        prop_assert_eq!(frame.len(), 2 * n);
        for (i, slot) in frame.iter().enumerate() {
            let expected = if i % 2 == 0 { SlotKind::Pilot } else { SlotKind::Signal };
            prop_assert_eq!(slot.kind, expected);
        }
    }

    #[test]
    fn noiseless_detection_is_linear(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -3.0f64..3.0, t in 0.01f64..1.0, phase in -1.0f64..1.0) {
        let det = DetectorModel { eta: 0.7, nu_el: 0.0, n0: 1.0 };
        let mut r = ChannelRealization::fixed(t, 0.0, &det);
        r.noise_var = 0.0;
        r.phase_drift = phase;
        let mut rng = stream(0, "linear");
        let d = |v: f64, rng: &mut _| detect_homodyne(&shape_pulse(v), &r, &det, rng).samples;
        let (ya, yb, yab) = (d(a, &mut rng), d(b, &mut rng), d(c * a + b, &mut rng));
        for k in 0..ya.len() {
            prop_assert!((c * ya[k] + yb[k] - yab[k]).abs() <= 1e-12 * (1.0 + yab[k].abs()));
        }
    }

    #[test]
    fn zones_never_improve_with_distance(d1 in 0.0f64..6.0, step in 0.0f64..3.0, k1 in 0.5f64..2.0, g1 in 0.1f64..2.0, g2 in 0.1f64..2.0) {
        let zones = EllipseZones { mean: [0.0, 0.0], cov: [[1.0, 0.0], [0.0, 1.0]], k1, k2: k1 + g1, k3: k1 + g1 + g2 };
        prop_assert!(zones.label_distance(d1) <= zones.label_distance(d1 + step));
    }

    #[test]
    fn report_rows_match_support(pairs in proptest::collection::vec((0usize..3, 0usize..3, 0.0f64..1.0), 1..300)) {
        let truth: Vec<QualityLabel> = pairs.iter().map(|p| QualityLabel::KEPT[p.0]).collect();
        let pred: Vec<QualityLabel> = pairs.iter().map(|p| QualityLabel::KEPT[p.1]).collect();
        let scores: Vec<[f64; N_CLASSES]> = pairs.iter().map(|p| {
            let mut s = [0.0; N_CLASSES];
            s[p.1] = p.2;
            s
        }).collect();
        let r = classification_report(&pred, &truth, &scores).unwrap();
        for c in 0..N_CLASSES {
            prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), r.support[c]);
            prop_assert_eq!(r.per_class_tpr[c] + r.per_class_fnr[c], 1.0);
        }
    }

    #[test]
    fn covariance_is_physical(v in 1.0f64..50.0, t in 1e-6f64..1.0, eps in 0.0f64..0.5, amp in 0.0f64..1.0, phase in -0.5f64..0.5) {
        let gamma = build_covariance(&CovarianceSpec { v, transmittance: t, excess: eps, amp_ratio: amp, phase_residual: phase }).unwrap();
        let (n1, n2) = symplectic_spectrum(&gamma).unwrap();
        prop_assert!(n1 >= 1.0 - 1e-9 && n2 >= 1.0 - 1e-9, "spectrum {n1} {n2}");
    }

    #[test]
    fn pure_channel_leaks_nothing(v_a in 1e-3f64..20.0) {
        let gamma = build_covariance(&CovarianceSpec::ideal(v_a + 1.0, 1.0, 0.0)).unwrap();
        prop_assert!(holevo_bound(&gamma).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn key_rate_falls_with_noise_and_loss(t in 0.01f64..1.0, shrink in 0.5f64..0.999, eps in 0.0f64..0.1, de in 1e-4f64..0.05) {
        let sec = SecurityConfig::default();
        let k = |t, e| key_rate_at(4.0, t, e, 0.6, 0.01, &sec).unwrap().k_raw;
        prop_assert!(k(t, eps + de) <= k(t, eps));
        prop_assert!(k(t * shrink, eps) <= k(t, eps));
    }

    #[test]
    fn mutual_information_matches_channel_capacity(v_a in 0.01f64..20.0, t in 0.01f64..1.0) {
        // Ideal detector, no excess noise: Bob sees T·V_A signal over unit vacuum noise.
        let capacity = 0.5 * (1.0 + t * v_a).log2();
        prop_assert!((mutual_information(v_a, t, 0.0, 1.0, 0.0) - capacity).abs() <= 1e-12);
    }

    #[test]
    fn suppression_never_exceeds_one(raw in 1e-6f64..1.0, eq in 0.0f64..2.0) {
        prop_assert!(suppression_ratio(raw, eq) <= 1.0);
    }

    #[test]
    fn one_hidden_gradients_match_differences(seed in any::<u64>(), x in -10.0f64..10.0, factor in 1.0f64..3.0) {
        let mut rng = stream(seed, "gradient");
        let mut m = init_model(EqualizerMode::OneHidden, 16, 0.6, &mut rng).unwrap();
        let mut pulse = shape_pulse(0.7 * x);
        for s in &mut pulse.samples {
            *s += f64::sample_std_normal(&mut rng);
        }
        // Training normalizes by the pilot RMS, so inputs stay O(1).
        let rms = (pulse.samples.iter().map(|s| s * s).sum::<f64>() / pulse.samples.len() as f64).sqrt();
        m.input_scale = Some(factor * rms.max(1.0));
        prop_assert!(gradient_check(&m, &pulse, x).unwrap() < 1e-6);
    }
}

proptest! {
    #![proptest_config(config(4))]

    // Below α, β ≈ 1 the fourth intensity moment blows up and 10⁶ draws can no
    // longer pin the scintillation index to 2%, so the range starts at 1.
    #[test]
    fn gamma_gamma_sampler_matches_moments(a in 1.0f64..50.0, b in 1.0f64..50.0, seed in any::<u64>()) {
        let params = GammaGammaParams::from_effective(a, b).unwrap();
        let dist = Fading::GammaGamma(params);
        let mut rng = stream(seed, "gg");
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..DRAWS {
            let v = sample_intensity(&dist, &mut rng);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / DRAWS as f64;
        let si = s2 / DRAWS as f64 / (mean * mean) - 1.0;
        prop_assert!((mean - 1.0).abs() <= 0.01);
        prop_assert!((si / params.scintillation_index() - 1.0).abs() <= 0.02, "SI {si} vs {}", params.scintillation_index());
    }

    #[test]
    fn log_normal_sampler_matches_mean(mu in 0.1f64..1.0, s in 0.0f64..1.0, seed in any::<u64>()) {
        let dist = Fading::LogNormal(LogNormalParams { mean_intensity: mu, scint_index: s });
        let mut rng = stream(seed, "ln");
        let mean = (0..DRAWS).map(|_| sample_intensity(&dist, &mut rng)).sum::<f64>() / DRAWS as f64;
        prop_assert!((mean / mu - 1.0).abs() <= 0.01);
    }

    #[test]
    fn phase_drift_matches_characteristic_function(s2 in 1e-4f64..2.0, seed in any::<u64>()) {
        let cfg = PhaseNoiseConfig::from_variance(s2).unwrap();
        let mut rng = stream(seed, "phase");
        let draws: Vec<f64> = (0..DRAWS).map(|_| sample_phase_drift(&cfg, &mut rng).cos()).collect();
        let mean = draws.iter().sum::<f64>() / DRAWS as f64;
        let var = draws.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
        let se = (var / DRAWS as f64).sqrt();
        prop_assert!((mean - char_function(1.0, s2)).abs() <= 3.0 * se);
    }

    #[test]
    fn modulation_variance_matches(v_a in 0.5f64..20.0, seed in any::<u64>()) {
        let params = ProtocolParams::new(v_a, 10.0 * v_a.sqrt()).unwrap();
        let q = modulate_gmcs(&params, DRAWS, &mut stream(seed, "mod")).unwrap();
        let var = q.iter().map(|(x, _)| x * x).sum::<f64>() / DRAWS as f64;
        prop_assert!((var / v_a - 1.0).abs() <= 0.01);
    }
}
