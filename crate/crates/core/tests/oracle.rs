use fbcomm::simulate::exact_conditioning_oracle;
use fbcomm::{predict, MeasurementSpec, RegimeKind, ResidualRecursion, SystemSchedule};
use proptest::prelude::*;

fn feedback_noise(kind: RegimeKind, nf: f64) -> f64 {
    match kind {
        RegimeKind::NoFeedback => f64::INFINITY,
        RegimeKind::NoiselessFeedback => 0.0,
        _ => nf,
    }
}

fn regime() -> impl Strategy<Value = RegimeKind> {
    proptest::sample::select(RegimeKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The realized decoder error has exactly the predicted second moment.
    #[test]
    fn decoder_error_matches_prediction(
        kind in regime(),
        a in -0.95f64..0.95,
        b in 0.1f64..2.0,
        power in 0.1f64..5.0,
        noise in 0.1f64..5.0,
        nf in 0.01f64..5.0,
        v0 in 0.0f64..3.0,
        c in 0.2f64..2.0,
        d in 0.0f64..1.5,
        v_vv in 0.1f64..2.0,
    ) {
        let s = SystemSchedule::constant(6, a, b, power, noise, feedback_noise(kind, nf), v0).unwrap();
        let m = MeasurementSpec::constant(c, d, 1.0, 0.0, v_vv).validate(6).unwrap();
        let pred = predict(kind, &s, Some(&m), ResidualRecursion::default()).unwrap();
        let r = exact_conditioning_oracle(&s, Some(&m), kind, None).unwrap();
        for t in 0..6 {
            prop_assert!((r.decoder_mse[t] - pred.mse[t]).abs() < 1e-8,
                "{kind} t={} oracle {} prediction {}", t + 1, r.decoder_mse[t], pred.mse[t]);
            prop_assert!((r.sigma2[t] - pred.sigma2[t]).abs() < 1e-8);
            prop_assert!(r.lmmse[t] <= r.decoder_mse[t] + 1e-9);
            prop_assert!(r.lmmse[t] <= r.open_loop[t] + 1e-9);
        }
        for zp in &r.zpow {
            prop_assert!((zp - power).abs() < 1e-9 * power);
        }
    }

    /// Under noiseless feedback the scheme's decoder is the conditional mean.
    #[test]
    fn noiseless_decoder_is_conditional_mean(
        a in -1.5f64..1.5,
        b in 0.1f64..2.0,
        power in 0.1f64..5.0,
        noise in 0.1f64..5.0,
        v0 in 0.0f64..3.0,
    ) {
        let s = SystemSchedule::constant(8, a, b, power, noise, 0.0, v0).unwrap();
        let pred = predict(RegimeKind::NoiselessFeedback, &s, None, ResidualRecursion::default()).unwrap();
        let r = exact_conditioning_oracle(&s, None, RegimeKind::NoiselessFeedback, None).unwrap();
        for t in 0..8 {
            prop_assert!((r.lmmse[t] - pred.mse[t]).abs() < 1e-8 * (1.0 + pred.mse[t]));
        }
    }
}
