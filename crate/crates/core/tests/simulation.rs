use v2v_core::approx::CaseLabel;
use v2v_core::exact::{mean_receivers, success_prob};
use v2v_core::model::{ReceiverSpec, ScenarioConfig, Side};
use v2v_core::montecarlo::{estimate_mean, estimate_p, SimSpec};
use v2v_core::quad::QuadratureSpec;

#[test]
fn doubling_the_window_changes_little() {
    let cfg = ScenarioConfig::reference();
    for (case, rx) in [
        (CaseLabel::A, ReceiverSpec::queue(3)),
        (CaseLabel::B, ReceiverSpec::RunningX { r: 60.0, side: Side::Positive }),
        (CaseLabel::A, ReceiverSpec::RunningY { r: 20.0 }),
    ] {
        let base = SimSpec::new(200_000, 11);
        let wide = SimSpec { window_half_width: 4000.0, ..base };
        let a = estimate_p(&cfg, case.transmitter(), rx, &base).unwrap();
        let b = estimate_p(&cfg, case.transmitter(), rx, &wide).unwrap();
        assert!((a.value - b.value).abs() < a.half_width(), "{case} {rx:?}: {} vs {}", a.value, b.value);
    }
}

#[test]
fn exact_value_covered_across_seeds() {
    let q = QuadratureSpec::default();
    for (case, rho, i) in [(CaseLabel::A, 0.1, 2), (CaseLabel::B, 0.3, 1), (CaseLabel::C, 0.1, 4)] {
        let cfg = ScenarioConfig::reference().with_rho(rho);
        let rx = ReceiverSpec::queue(i);
        let exact = success_prob(&cfg, case.transmitter(), rx, &q).unwrap();
        let hits = (0..20u64)
            .filter(|&s| estimate_p(&cfg, case.transmitter(), rx, &SimSpec::new(50_000, 100 + s)).unwrap().contains(exact))
            .count();
        // 95% intervals: 16 or more of 20 covers with probability above 0.98.
        assert!(hits >= 16, "{case} rho={rho} i={i}: {hits}/20");
    }
}

#[test]
fn sampled_mean_brackets_exact_mean() {
    let q = QuadratureSpec::default();
    let cfg = ScenarioConfig::reference();
    for case in [CaseLabel::A, CaseLabel::C] {
        let exact = mean_receivers(&cfg, case.queue_index(&cfg), &q).unwrap();
        let sim = estimate_mean(&cfg, case.transmitter(), &SimSpec::new(20_000, 5)).unwrap();
        let slack = 0.5 * sim.total.half_width();
        assert!(
            sim.total.ci_low - slack <= exact.total() && exact.total() <= sim.total.ci_high + slack,
            "{case}: {:?} vs {}",
            sim.total,
            exact.total()
        );
    }
}
