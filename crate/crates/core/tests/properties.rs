//! Property tests for the geometric invariants.

use proptest::prelude::*;
use simlab_core::attack::{targeted_attack, untargeted_attack, AttackStatus};
use simlab_core::codebook::build_codebook;
use simlab_core::compressor::sample_compressor;
use simlab_core::detection::{detect, guarantee_radius};
use simlab_core::nonlinear::{fragility_ratio, LinearMap};
use simlab_core::pipeline::rho_max;
use simlab_core::rng::{gaussian_matrix, gaussian_vector, stream_rng, unit_vector};
use simlab_core::robustness::sample_sphere;
use simlab_core::scenario::{draw_near_codeword, draw_other_label};
use simlab_core::{Classifier, CodebookConfig, DVector, Label, Outcome};

fn small_config() -> impl Strategy<Value = CodebookConfig> {
    (20usize..80, 2usize..5, 1usize..4, 0.5f64..3.0, any::<u64>()).prop_map(|(dimension, labels, nuisances, r0, seed)| {
        CodebookConfig { dimension, labels, nuisances, r0, seed, ..Default::default() }
    })
}

fn projector_shape() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..60).prop_flat_map(|n| (1..n, Just(n), any::<u64>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codebook_separation_holds(cfg in small_config()) {
        let cb = build_codebook(&cfg).unwrap();
        for a in cb.iter() {
            for b in cb.iter().filter(|b| b.label != a.label) {
                prop_assert!((&a.signal - &b.signal).norm() >= 2.0 * cfg.r0);
            }
        }
        prop_assert!(cb.radius() < cb.r0());
    }

    #[test]
    fn nearest_codeword_is_a_minimum(cfg in small_config(), k in 0u64..1000) {
        let cb = build_codebook(&cfg).unwrap();
        let y = gaussian_vector(cfg.dimension, &mut stream_rng(k, 0)) * cfg.r0;
        for l in cb.labels() {
            let (_, d) = cb.nearest_codeword(&y, l).unwrap();
            for c in cb.codewords(l).unwrap() {
                prop_assert!(d <= (&y - &c.signal).norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn inside_a_sphere_means_that_label(cfg in small_config(), k in 0u64..1000, frac in 0.0f64..0.999) {
        let cb = build_codebook(&cfg).unwrap();
        let mut rng = stream_rng(k, 1);
        let d = draw_near_codeword(&cb, frac * cb.radius(), &mut rng);
        prop_assert_eq!(cb.nearest_codeword_any(&d.x).unwrap().0, d.label);
    }

    #[test]
    fn projector_laws((m, n, seed) in projector_shape()) {
        let lc = sample_compressor(m, n, seed).unwrap();
        let d = lc.diagnostics();
        prop_assert!(d.symmetry_error <= 1e-9);
        prop_assert!(d.idempotence_error <= 1e-8);
        prop_assert_eq!(d.rank, m);
        let v = gaussian_vector(n, &mut stream_rng(seed, 2));
        prop_assert!(lc.projected_norm(&v).unwrap() <= v.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn null_space_blindness(cfg in small_config(), m in 1usize..10, k in 0u64..1000, scale in 0.0f64..50.0) {
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(m.min(cfg.dimension - 1), cfg.dimension, k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let mut rng = stream_rng(k, 3);
        let y = draw_near_codeword(&cb, cb.radius(), &mut rng).x;
        let n = lc.null_component(&gaussian_vector(cfg.dimension, &mut rng)).unwrap() * scale;
        let a = clf.classify(&y).unwrap();
        let b = clf.classify(&(&y + &n)).unwrap();
        prop_assert_eq!(a.outcome, b.outcome);
        for (ra, rb) in a.residuals.iter().zip(&b.residuals) {
            prop_assert!((ra - rb).abs() <= 1e-8 * ra.max(1.0));
        }
    }

    #[test]
    fn decided_label_has_small_residual(cfg in small_config(), m in 1usize..10, k in 0u64..1000, frac in 0.0f64..2.0) {
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(m.min(cfg.dimension - 1), cfg.dimension, k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let y = draw_near_codeword(&cb, frac * cb.radius(), &mut stream_rng(k, 4)).x;
        let d = clf.classify(&y).unwrap();
        if let Outcome::Label(l) = d.outcome {
            prop_assert!(d.residual(l) < cb.radius());
            prop_assert!(d.residuals.iter().all(|&r| r >= d.residual(l)));
        } else {
            prop_assert!(d.residuals.iter().all(|&r| r >= cb.radius()));
        }
    }

    #[test]
    fn targeted_attacks_stay_in_row_space_and_succeed(cfg in small_config(), m in 1usize..10, k in 0u64..1000) {
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(m.min(cfg.dimension - 1), cfg.dimension, k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let mut rng = stream_rng(k, 5);
        let d = draw_near_codeword(&cb, 0.5 * cb.radius(), &mut rng);
        let target = draw_other_label(&cb, d.label, &mut rng);
        let p = targeted_attack(&clf, &d.x, target, 0.99).unwrap();
        prop_assert!((p.norm - p.w.norm()).abs() <= 1e-10 * p.norm.max(f64::MIN_POSITIVE));
        if p.status == AttackStatus::Constructed {
            let off = lc.null_component(&p.w).unwrap().norm();
            prop_assert!(off <= 1e-8 * p.norm);
            prop_assert_eq!(clf.classify(&(&d.x + &p.w)).unwrap().outcome, Outcome::Label(target));
            // Deeper landings only happen when another label interferes.
            if p.landing_radius == 0.99 * cb.radius() {
                prop_assert!(p.norm <= p.projected_distance - 0.99 * cb.radius() + 1e-9 * p.projected_distance);
            }
        }
    }

    #[test]
    fn untargeted_attacks_leave_the_label(cfg in small_config(), m in 1usize..10, k in 0u64..1000) {
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(m.min(cfg.dimension - 1), cfg.dimension, k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let d = draw_near_codeword(&cb, 0.5 * cb.radius(), &mut stream_rng(k, 6));
        let before = clf.classify(&d.x).unwrap().outcome;
        let p = untargeted_attack(&clf, &d.x, 0.01).unwrap();
        if p.status == AttackStatus::Constructed {
            prop_assert!(lc.null_component(&p.w).unwrap().norm() <= 1e-8 * p.norm);
            prop_assert_ne!(clf.classify(&(&d.x + &p.w)).unwrap().outcome, before);
        }
    }

    #[test]
    fn guarantee_is_sound(cfg in small_config(), m in 1usize..10, k in 0u64..1000, shrink in 0.0f64..1.0) {
        let cb = build_codebook(&cfg).unwrap();
        let lc = sample_compressor(m.min(cfg.dimension - 1), cfg.dimension, k).unwrap();
        let clf = Classifier::new(&lc, &cb).unwrap();
        let mut rng = stream_rng(k, 7);
        let d = draw_near_codeword(&cb, 0.5 * cb.radius(), &mut rng);
        let target = draw_other_label(&cb, d.label, &mut rng);
        // Any perturbation, not only the constructed attack.
        let g = guarantee_radius(&cb, &d.x, target).unwrap();
        prop_assume!(g > 0.0);
        let w = unit_vector(cfg.dimension, &mut rng) * (shrink * g);
        let y = &d.x + &w;
        if clf.classify(&y).unwrap().outcome == Outcome::Label(target) {
            prop_assert!(detect(&cb, &y, target, cb.radius()).unwrap().flagged);
        }
        prop_assert!(detect(&cb, &y, target, cb.radius()).unwrap().residual > cb.radius());
    }

    #[test]
    fn flagging_is_monotone_in_threshold(cfg in small_config(), k in 0u64..1000, t1 in 0.01f64..5.0, t2 in 0.01f64..5.0) {
        let cb = build_codebook(&cfg).unwrap();
        let y = gaussian_vector(cfg.dimension, &mut stream_rng(k, 8));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = detect(&cb, &y, Label(1), lo).unwrap();
        let b = detect(&cb, &y, Label(1), hi).unwrap();
        prop_assert!(!b.flagged || a.flagged);
        prop_assert_eq!(a.flagged, a.residual > lo);
    }

    #[test]
    fn sphere_samples_have_radius(n in 1usize..200, l in 1e-3f64..1e3, k in any::<u64>()) {
        let w = sample_sphere(n, l, &mut stream_rng(k, 9)).unwrap();
        prop_assert!((w.norm() - l).abs() <= 1e-12 * l);
    }

    #[test]
    fn fragility_ratio_at_least_one(n in 2usize..40, m in 1usize..10, k in any::<u64>()) {
        let a = gaussian_matrix(m.min(n), n, &mut stream_rng(k, 10));
        let r = fragility_ratio(&LinearMap { a }, &DVector::zeros(n), 200, k).unwrap();
        prop_assert!(r.ratio >= 1.0);
    }

    #[test]
    fn rho_max_in_unit_interval_and_symmetric(n1 in 2usize..300, n2 in 2usize..300, k in any::<u64>()) {
        let mut rng = stream_rng(k, 11);
        let a = gaussian_vector(n1, &mut rng);
        let b = gaussian_vector(n2, &mut rng);
        let ab = rho_max(&a, &b, 1.0).unwrap();
        let ba = rho_max(&b, &a, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}
