use chrono::NaiveDate;
use ipsi_core::estimator::{estimate_over_days, usable_days, window_weight};
use ipsi_core::features::{build_filtration_features, FeatureSpec};
use ipsi_core::io::{read_curve_csv, read_panels_csv, write_curve_csv, write_panels_csv};
use ipsi_core::meta::StudyEstimate;
use ipsi_core::panel::{DayMask, DayRecord, TimeSeriesPanel};
use ipsi_core::propensity::IncrementalPolicy;
use ipsi_core::{
    effect_curve, expected_treatment_count, incremental_propensity, incremental_weight, pool_random_effects,
    temporal_average, variance_estimate, EstimationConfig, Series,
};
use proptest::prelude::*;

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Series made of several seasons with matching propensities.
fn arb_series() -> impl Strategy<Value = (Series, Vec<f64>)> {
    prop::collection::vec(2usize..15, 1..4).prop_flat_map(|lens| {
        let n: usize = lens.iter().sum();
        (
            Just(lens),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.02f64..0.98, n),
        )
            .prop_map(|(lens, y, w, p)| {
                let season_pos = lens.iter().flat_map(|&l| 0..l).collect();
                let s = Series {
                    outcomes: y,
                    treatments: w,
                    season_pos,
                    n_seasons: lens.len(),
                };
                (s, p)
            })
    })
}

proptest! {
    #[test]
    fn incremental_propensity_odds_identity(p in 1e-3f64..0.999, d in 0.01f64..100.0) {
        let q = incremental_propensity(p, d).unwrap();
        // Forming 1 - q amplifies rounding by 1 / min(q, 1 - q).
        let tol = 1e-12 + 8.0 * f64::EPSILON / q.min(1.0 - q);
        prop_assert!(rel_close(odds(q), d * odds(p), tol));
    }

    #[test]
    fn incremental_propensity_monotone(p in 0.01f64..0.99, d in 0.01f64..50.0, k in 1.01f64..3.0) {
        prop_assert!(incremental_propensity(p, d * k).unwrap() > incremental_propensity(p, d).unwrap());
        let p2 = (p * k).min(0.995);
        if p2 > p {
            prop_assert!(incremental_propensity(p2, d).unwrap() > incremental_propensity(p, d).unwrap());
        }
    }

    #[test]
    fn incremental_propensity_composes(p in 0.0f64..=1.0, d1 in 0.05f64..20.0, d2 in 0.05f64..20.0) {
        let step = incremental_propensity(incremental_propensity(p, d1).unwrap(), d2).unwrap();
        let once = incremental_propensity(p, d1 * d2).unwrap();
        prop_assert!((step - once).abs() <= 1e-12);
    }

    #[test]
    fn clipped_inputs_stay_interior(d in 1e-3f64..1e3, hi in any::<bool>()) {
        let p = if hi { 1.0 - 1e-6 } else { 1e-6 };
        let q = incremental_propensity(p, d).unwrap();
        prop_assert!(q > 0.0 && q < 1.0);
    }

    #[test]
    fn weights_average_to_one_in_expectation(p in 0.01f64..0.99, d in 0.05f64..20.0) {
        let e = p * incremental_weight(true, p, d) + (1.0 - p) * incremental_weight(false, p, d);
        prop_assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_delta_is_plain_mean((s, p) in arb_series(), t0 in 1usize..3) {
        let cfg = EstimationConfig::new(t0, vec![0.5, 1.0, 2.0]);
        let days = usable_days(&s, t0, None);
        prop_assume!(!days.is_empty());
        let one = IncrementalPolicy::Constant(1.0);
        for &t in &days {
            prop_assert_eq!(window_weight(&s, &p, &one, t0, t), 1.0);
        }
        let (tau, n) = temporal_average(&s, &p, &one, &cfg).unwrap();
        let mean = days.iter().map(|&t| s.outcomes[t]).sum::<f64>() / days.len() as f64;
        prop_assert_eq!(n, days.len());
        prop_assert!((tau - mean).abs() <= 1e-12);
        let curve = effect_curve(&s, &p, &cfg).unwrap();
        let at_one = curve.point_at(1.0).unwrap();
        prop_assert_eq!(at_one.effect, 0.0);
        prop_assert_eq!(at_one.effect_lo, 0.0);
        prop_assert_eq!(at_one.effect_hi, 0.0);
        for pt in &curve.points {
            prop_assert!(pt.band_lo <= pt.tau_hat && pt.tau_hat <= pt.band_hi);
        }
    }

    #[test]
    fn scale_equivariance((s, p) in arb_series(), c in -4.0f64..4.0, d in 0.2f64..5.0) {
        let cfg = EstimationConfig::new(1, vec![d]);
        let pol = IncrementalPolicy::Constant(d);
        let (a, _) = temporal_average(&s, &p, &pol, &cfg).unwrap();
        let (b, _) = temporal_average(&s.scaled(c), &p, &pol, &cfg).unwrap();
        prop_assert!(rel_close(b, c * a, 1e-10));
        let days = usable_days(&s, 1, None);
        // Compare raw second moments, since the zero floor is not equivariant.
        let m = estimate_over_days(&s, &p, &pol, 1, &days).unwrap();
        let m2 = estimate_over_days(&s.scaled(c), &p, &pol, 1, &days).unwrap();
        prop_assert!(rel_close(m2.sigma_hat + m2.tau_hat.powi(2), c * c * (m.sigma_hat + m.tau_hat.powi(2)), 1e-9));
        let v = variance_estimate(&s, &p, &pol, &cfg).unwrap();
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn full_mask_matches_no_mask((s, p) in arb_series(), d in 0.2f64..5.0) {
        let pol = IncrementalPolicy::Constant(d);
        let plain = EstimationConfig::new(2, vec![d]);
        prop_assume!(!usable_days(&s, 2, None).is_empty());
        let masked = EstimationConfig { day_filter: Some(DayMask::all(s.len())), ..plain.clone() };
        prop_assert_eq!(
            temporal_average(&s, &p, &pol, &plain).unwrap(),
            temporal_average(&s, &p, &pol, &masked).unwrap()
        );
    }

    #[test]
    fn treatment_count_monotone(p in prop::collection::vec(0.0f64..=1.0, 1..40), d in 0.05f64..10.0, k in 1.01f64..4.0) {
        let a = expected_treatment_count(&p, d, None).unwrap();
        let b = expected_treatment_count(&p, d * k, None).unwrap();
        prop_assert!(b >= a);
        if p.iter().any(|&x| x > 0.0 && x < 1.0) {
            prop_assert!(b > a);
        }
    }

    #[test]
    fn meta_permutation_and_hull(
        studies in prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 2..8),
        rot in 0usize..8,
    ) {
        let s: Vec<StudyEstimate> = studies
            .iter()
            .enumerate()
            .map(|(i, &(e, v))| StudyEstimate::new(format!("u{i}"), e, v))
            .collect();
        let r = pool_random_effects(&s).unwrap();
        let lo = s.iter().map(|x| x.estimate).fold(f64::INFINITY, f64::min);
        let hi = s.iter().map(|x| x.estimate).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.estimate >= lo && r.estimate <= hi);
        prop_assert!(r.tau2 >= 0.0 && r.heterogeneity.q >= 0.0);
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));

        let mut perm = s.clone();
        perm.rotate_left(rot % s.len());
        perm.reverse();
        let r2 = pool_random_effects(&perm).unwrap();
        prop_assert_eq!(r.estimate, r2.estimate);
        prop_assert_eq!(r.variance, r2.variance);
        prop_assert_eq!(r.tau2, r2.tau2);
        prop_assert_eq!(r.heterogeneity.clone(), r2.heterogeneity.clone());
        for (i, st) in s.iter().enumerate() {
            let j = perm.iter().position(|x| x.unit_id == st.unit_id).unwrap();
            prop_assert_eq!(r.weights[i], r2.weights[j]);
        }
    }

    #[test]
    fn panel_csv_roundtrip_is_exact(
        rows in prop::collection::vec((any::<bool>(), -1e6f64..1e6, any::<bool>(), -1e3f64..1e3, any::<f64>()), 1..20)
    ) {
        let start = NaiveDate::from_ymd_opt(2011, 6, 1).unwrap();
        let mut panel = TimeSeriesPanel::new("u,1", vec!["heat".into(), "rh".into()]);
        for (k, (w, y, h, c1, c2)) in rows.iter().enumerate() {
            let c2 = if c2.is_finite() { *c2 } else { 0.0 };
            panel.records.push(DayRecord {
                date: start + chrono::Duration::days(k as i64),
                season_id: "2011".into(),
                treatment: f64::from(u8::from(*w)),
                outcome: *y,
                is_holiday: *h,
                covariates: vec![*c1, c2],
            });
        }
        let mut buf = Vec::new();
        write_panels_csv(&mut buf, std::slice::from_ref(&panel)).unwrap();
        let back = read_panels_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![panel]);
    }

    #[test]
    fn curve_csv_roundtrip_is_exact((s, p) in arb_series(), d in 0.1f64..10.0) {
        prop_assume!(!usable_days(&s, 1, None).is_empty());
        let curve = effect_curve(&s, &p, &EstimationConfig::new(1, vec![d, 1.0])).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve.points).unwrap();
        prop_assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), curve.points);
    }

    #[test]
    fn features_are_causal_and_season_isolated(
        y in prop::collection::vec(-3.0f64..3.0, 12),
        w in prop::collection::vec(any::<bool>(), 12),
        heat in prop::collection::vec(60.0f64..110.0, 12),
        cut in 0usize..12,
        bump in 0.5f64..5.0,
    ) {
        let build = |y: &[f64], w: &[bool], heat: &[f64]| {
            let mut panel = TimeSeriesPanel::new("u", vec!["heat".into()]);
            for t in 0..12 {
                // Two seasons of six days each, one year apart.
                let (year, day) = if t < 6 { (2010, t) } else { (2011, t - 6) };
                panel.records.push(DayRecord {
                    date: NaiveDate::from_ymd_opt(year, 6, 1).unwrap() + chrono::Duration::days(day as i64),
                    season_id: year.to_string(),
                    treatment: f64::from(u8::from(w[t])),
                    outcome: y[t],
                    is_holiday: false,
                    covariates: vec![heat[t]],
                });
            }
            let spec = FeatureSpec { heat_index_column: Some("heat".into()), ..FeatureSpec::default() };
            build_filtration_features(&panel, &spec).unwrap()
        };
        let base = build(&y, &w, &heat);
        let (mut y2, mut w2, mut h2) = (y.clone(), w.clone(), heat.clone());
        y2[cut] += bump;
        w2[cut] = !w2[cut];
        let f_yw = build(&y2, &w2, &heat);
        for t in 0..=cut {
            prop_assert_eq!(base.row(t), f_yw.row(t));
        }
        h2[cut] += bump;
        let f_h = build(&y, &w, &h2);
        for t in 0..cut {
            prop_assert_eq!(base.row(t), f_h.row(t));
        }
        // Nothing done in one season reaches the other.
        let other: Vec<usize> = if cut < 6 { (6..12).collect() } else { (0..6).collect() };
        for t in other {
            prop_assert_eq!(base.row(t), f_yw.row(t));
            prop_assert_eq!(base.row(t), f_h.row(t));
        }
    }
}

#[test]
fn fixed_effect_recovered_when_tau2_is_zero() {
    let s = vec![
        StudyEstimate::new("a", 1.0, 1.0),
        StudyEstimate::new("b", 1.5, 2.0),
        StudyEstimate::new("c", 1.2, 0.5),
    ];
    let r = pool_random_effects(&s).unwrap();
    assert_eq!(r.tau2, 0.0);
    let w: Vec<f64> = s.iter().map(|x| 1.0 / x.within_variance).collect();
    let sw: f64 = w.iter().sum();
    let fe = s.iter().zip(&w).map(|(x, w)| w * x.estimate).sum::<f64>() / sw;
    assert!((r.estimate - fe).abs() < 1e-12);
    assert!((r.variance - 1.0 / sw).abs() < 1e-12);
}

#[test]
fn vanishing_study_leaves_homogeneous_pool_unchanged() {
    // With equal estimates tau^2 stays 0 whatever N is, so a study with a huge
    // variance only contributes a negligible weight.
    let base = vec![StudyEstimate::new("a", 2.0, 1.0), StudyEstimate::new("b", 2.0, 0.5)];
    let mut more = base.clone();
    more.push(StudyEstimate::new("c", -40.0, 1e12));
    let a = pool_random_effects(&base).unwrap();
    let b = pool_random_effects(&more).unwrap();
    assert!((a.estimate - b.estimate).abs() < 1e-6);
}
