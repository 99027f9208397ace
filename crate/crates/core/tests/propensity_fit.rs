use ipsi_core::predict_propensity;
use ipsi_core::propensity::ensemble::{fit_stacked_ensemble, log_loss, out_of_fold, BaseLearner};
use ipsi_core::propensity::logistic::{fit_logistic, gradient_sup_norm};
use ipsi_core::propensity::{LearnerKind, Predictor, PropensityConfig, PropensityModel, DEFAULT_EPSILON};
use ipsi_core::sim::{generate_dgp, DgpConfig};

#[test]
fn logistic_converges_on_simulated_series() {
    let s = generate_dgp(DgpConfig { t_len: 1000, seed: 11 });
    let x = s.features();
    let (fit, diag) = fit_logistic(&x, &s.treatments, 1e-4).unwrap();
    assert!(diag.converged, "{diag:?}");
    assert!(gradient_sup_norm(&fit, &x, &s.treatments) <= 1e-8);
    // Correct specification: slopes near 10 on every covariate and -1 on the lag.
    let (_, slopes) = fit.original_scale();
    for &b in &slopes[..5] {
        assert!((b - 10.0).abs() < 3.0, "{slopes:?}");
    }
}

#[test]
fn singleton_library_matches_plain_logistic() {
    let s = generate_dgp(DgpConfig { t_len: 400, seed: 5 });
    let x = s.features();
    let lib = [BaseLearner::Logistic { ridge: 1e-3 }];
    let (ens, _) = fit_stacked_ensemble(&x, &s.treatments, &lib, 5, DEFAULT_EPSILON).unwrap();
    assert_eq!(ens.weights(), vec![1.0]);
    let (fit, _) = fit_logistic(&x, &s.treatments, 1e-3).unwrap();
    for row in x.rows() {
        assert_eq!(ens.raw_probability(row), fit.raw_probability(row));
    }
}

#[test]
fn ensemble_cv_loss_not_worse_than_any_member() {
    let s = generate_dgp(DgpConfig { t_len: 1000, seed: 2 });
    let x = s.features();
    let lib = BaseLearner::default_library(1e-4);
    let (ens, _) = fit_stacked_ensemble(&x, &s.treatments, &lib, 5, DEFAULT_EPSILON).unwrap();
    assert!(ens.dropped.is_empty(), "{:?}", ens.dropped);
    let w = ens.weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for learner in &lib {
        let oof = out_of_fold(learner, &x, &s.treatments, 5).unwrap();
        let single = log_loss(&oof, &s.treatments, DEFAULT_EPSILON);
        assert!(ens.cv_log_loss <= single + 1e-9, "{} > {single}", ens.cv_log_loss);
    }
}

#[test]
fn ensemble_model_predictions_are_clipped_and_persist() {
    let s = generate_dgp(DgpConfig { t_len: 300, seed: 8 });
    let x = s.features();
    let cfg = PropensityConfig {
        model: LearnerKind::Ensemble,
        ..PropensityConfig::default()
    };
    let model = PropensityModel::fit(&x, &s.treatments, &cfg).unwrap();
    assert!(matches!(model.predictor, Predictor::Ensemble(_)));
    let p = predict_propensity(&model, &x).unwrap();
    assert!(p.iter().all(|&v| (cfg.epsilon..=1.0 - cfg.epsilon).contains(&v)));
    let back = PropensityModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(predict_propensity(&back, &x).unwrap(), p);
}
