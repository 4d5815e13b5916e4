use nalgebra::DVector;
use proptest::prelude::*;

use tcblran::evaluation::{evaluate_model, relative_error_series, time_averaged_relative_error, EvalConfig, ModelLabel};
use tcblran::oracle::make_synthetic;

fn states(raw: Vec<(f64, f64)>) -> Vec<DVector<f64>> {
    raw.into_iter().map(|(a, b)| DVector::from_vec(vec![a, b])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn error_series_is_scale_invariant(
        pred in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
        shift in (-0.5f64..0.5, -0.5f64..0.5),
        c in 0.01f64..100.0,
    ) {
        let truth: Vec<DVector<f64>> = states(pred.clone())
            .into_iter()
            .map(|x| x + DVector::from_vec(vec![1.0 + shift.0.abs(), shift.1]))
            .collect();
        let pred = states(pred);
        let base = relative_error_series(&pred, &truth).unwrap();
        let scaled_pred: Vec<_> = pred.iter().map(|x| x * c).collect();
        let scaled_truth: Vec<_> = truth.iter().map(|x| x * c).collect();
        let scaled = relative_error_series(&scaled_pred, &scaled_truth).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn average_is_recomputable_from_series(series in proptest::collection::vec(0.0f64..2.0, 1..50)) {
        let avg = time_averaged_relative_error(&series).unwrap();
        let direct = series.iter().sum::<f64>() / series.len() as f64;
        prop_assert!((avg - direct).abs() <= 1e-15 * (1.0 + direct));
    }
}

#[test]
fn true_synthetic_model_evaluates_to_zero_error() {
    let (sys, ds) = make_synthetic(4, 3, 0.1).unwrap();
    let cfg = EvalConfig {
        horizon_steps: 250,
        n_ics: 30,
        control_seed: 5,
        control_lo: -0.15,
        control_hi: 0.15,
    };
    let label = ModelLabel {
        model: "true".into(),
        seed: 0,
    };
    let report = evaluate_model(&sys.true_model(), &sys, &ds, &cfg, &label).unwrap();
    let worst = report.time_averaged().into_iter().fold(0.0, f64::max);
    assert!(worst <= 1e-6, "worst {worst}");
    for ic in &report.ics {
        assert_eq!(ic.series.len(), 250);
    }
}
