use fbcomm::simulate::{monte_carlo, McConfig, McSummary};
use fbcomm::{MeasurementModel, MeasurementSpec, RegimeKind, ResidualRecursion, SystemSchedule};

const FORM: ResidualRecursion = ResidualRecursion::StateEquations;

fn schedule(kind: RegimeKind, horizon: usize) -> SystemSchedule {
    let nf = match kind {
        RegimeKind::NoFeedback => f64::INFINITY,
        RegimeKind::NoiselessFeedback => 0.0,
        _ => 0.5,
    };
    SystemSchedule::constant(horizon, 0.9, 1.0, 1.0, 1.0, nf, 1.0).unwrap()
}

fn measurement(horizon: usize) -> MeasurementModel {
    MeasurementSpec::constant(1.0, 0.5, 1.0, 0.0, 0.8).validate(horizon).unwrap()
}

fn run(kind: RegimeKind, horizon: usize, trials: usize, seed: u64) -> McSummary {
    let s = schedule(kind, horizon);
    let m = measurement(horizon);
    monte_carlo(&s, Some(&m), kind, &McConfig::new(trials, seed), FORM).unwrap()
}

#[test]
fn empirical_mse_tracks_prediction_in_every_regime() {
    for kind in RegimeKind::ALL {
        let summary = run(kind, 20, 20_000, 11);
        let z = summary.max_mse_z_score();
        assert!(z < 4.5, "{kind}: max |emp - pred| / se = {z}");
    }
}

#[test]
fn transmit_power_is_met_in_every_regime() {
    for kind in RegimeKind::ALL {
        let summary = run(kind, 20, 20_000, 12);
        for (t, s) in summary.zpow.iter().enumerate() {
            assert!((s.mean - 1.0).abs() < 4.5 * s.se, "{kind} t={}: E z^2 = {} +- {}", t + 1, s.mean, s.se);
        }
    }
}

#[test]
fn no_feedback_is_output_feedback_without_feedback() {
    let s = schedule(RegimeKind::NoFeedback, 15);
    let cfg = McConfig::new(3_000, 5);
    let none = monte_carlo(&s, None, RegimeKind::NoFeedback, &cfg, FORM).unwrap();
    let output = monte_carlo(&s, None, RegimeKind::OutputFeedback, &cfg, FORM).unwrap();
    assert_eq!(none.sq_err, output.sq_err);
    assert_eq!(none.zpow, output.zpow);
    assert_eq!(none.prediction, output.prediction);
}

#[test]
fn summary_independent_of_thread_count() {
    let s = schedule(RegimeKind::OutputFeedback, 10);
    let cfg = McConfig::new(5_000, 77);
    let run_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo(&s, None, RegimeKind::OutputFeedback, &cfg, FORM).unwrap())
    };
    let one = run_with(1);
    let four = run_with(4);
    let mut a = Vec::new();
    let mut b = Vec::new();
    one.write_csv(&mut a).unwrap();
    four.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(one, four);
}

#[test]
fn different_seeds_differ() {
    let a = run(RegimeKind::OutputFeedback, 5, 500, 1);
    let b = run(RegimeKind::OutputFeedback, 5, 500, 2);
    assert_ne!(a.sq_err, b.sq_err);
}
