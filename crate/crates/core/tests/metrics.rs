mod common;

use bayescall::layers::{HeadKind, Model, ModelSpec};
use bayescall::metrics::*;
use bayescall::pileup::{simulate_dataset, SimulatorConfig};
use bayescall::rng::stream;
use common::*;
use proptest::prelude::*;

fn small_sim(seed: u64) -> SimulatorConfig {
    SimulatorConfig {
        depth: 4,
        width: 3,
        coverage: 3.0,
        seed,
        ..SimulatorConfig::default()
    }
}

#[test]
fn mc_spread_shrinks_with_more_draws() {
    let model = toy_model(HeadKind::VariationalFlipout, 41);
    let x = uniform(&[4, 18], 0.0, 1.0, &mut stream(41, 2, 0));
    let spread = |n_mc: usize| {
        let p: Vec<f64> = (0..200)
            .map(|i| mc_predict(&model, &x, n_mc, &mut stream(41, 3, i)).unwrap().probs[1])
            .collect();
        let (_, se) = mean_and_se(&p);
        se * se * 200.0
    };
    let (v1, v10, v100) = (spread(1), spread(10), spread(100));
    assert!(v1 > v10 && v10 > v100, "{v1:e} {v10:e} {v100:e}");
    assert!(v1 > 0.0);
}

#[test]
fn predictive_mean_is_normalized() {
    let model = toy_model(HeadKind::VariationalFlipout, 42);
    let ds = simulate_dataset(&small_sim(42), 50).unwrap();
    let xs = encode_dataset(&ds, None).unwrap();
    for p in predict_all(&model, &xs, 20, 42).unwrap() {
        assert_eq!(p.n_mc(), 20);
        assert!((p.probs[0] + p.probs[1] - 1.0).abs() < 1e-9);
        for d in &p.draws {
            assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn parallel_prediction_matches_one_at_a_time() {
    let model = toy_model(HeadKind::VariationalFlipout, 43);
    let ds = simulate_dataset(&small_sim(43), 150).unwrap();
    let xs = encode_dataset(&ds, None).unwrap();
    let all = predict_all(&model, &xs, 5, 9).unwrap();
    for (i, x) in xs.iter().enumerate().step_by(37) {
        let one = mc_predict(&model, x, 5, &mut stream(9, bayescall::rng::purpose::EVAL_NOISE, i as u64))
            .unwrap();
        for (a, b) in one.draws.iter().zip(&all[i].draws) {
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn fully_masked_inputs_collapse_to_one_bin() {
    let spec = ModelSpec::new(4, 3, 3, 2, 3, HeadKind::Deterministic).unwrap();
    let model = Model::init(spec, &mut stream(44, 1, 0)).unwrap();
    let ds = simulate_dataset(&small_sim(44), 40).unwrap();
    let (report, preds) = evaluate_dataset(&model, &ds, Some(1..=4), 1, 0.6, 44).unwrap();
    assert!(preds.windows(2).all(|w| w[0].probs == w[1].probs));
    assert_eq!(report.histogram.bin_counts.iter().filter(|&&c| c > 0).count(), 1);
}

#[test]
fn ood_summary_is_the_difference_of_reports() {
    let model = toy_model(HeadKind::VariationalFlipout, 45);
    let ds = simulate_dataset(&small_sim(45), 60).unwrap();
    let (a, _) = evaluate_dataset(&model, &ds, None, 10, 0.6, 45).unwrap();
    let (b, _) = evaluate_dataset(&model, &ds, Some(2..=4), 10, 0.6, 45).unwrap();
    let s = ood_report(&a, &b).unwrap();
    assert_eq!(s.entropy_delta, b.mean_entropy - a.mean_entropy);
    assert_eq!(s.uncertain_fraction_delta, b.uncertain_fraction - a.uncertain_fraction);
    assert_eq!(s.mid_mass_in, a.histogram.mid_mass());
    assert_eq!(s.tail_mass_masked, b.histogram.tail_mass());
    assert!((0.0..=1.0).contains(&a.accuracy));
}

#[test]
fn mismatched_reports_are_rejected() {
    let model = toy_model(HeadKind::VariationalFlipout, 46);
    let ds = simulate_dataset(&small_sim(46), 20).unwrap();
    let (a, _) = evaluate_dataset(&model, &ds, None, 4, 0.6, 1).unwrap();
    let (b, _) = evaluate_dataset(&model, &ds, None, 5, 0.6, 1).unwrap();
    assert!(matches!(ood_report(&a, &b), Err(bayescall::Error::Contract(_))));
}

#[test]
fn report_and_histogram_round_trip() {
    let model = toy_model(HeadKind::VariationalFlipout, 47);
    let ds = simulate_dataset(&small_sim(47), 30).unwrap();
    let (r, _) = evaluate_dataset(&model, &ds, None, 3, 0.6, 47).unwrap();
    assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    assert_eq!(Histogram::from_csv(&r.histogram.to_csv()).unwrap(), r.histogram);
}

proptest! {
    #[test]
    fn averaged_draws_sum_to_one(raw in prop::collection::vec(0.0f64..1.0, 1..50)) {
        let draws: Vec<[f64; 2]> = raw.iter().map(|&p| [1.0 - p, p]).collect();
        let pd = PredictiveDistribution::from_draws(draws).unwrap();
        prop_assert!((pd.probs[0] + pd.probs[1] - 1.0).abs() < 1e-9);
        prop_assert!(pd.entropy() >= 0.0 && pd.entropy() <= std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn histogram_counts_sum_to_total(values in prop::collection::vec(0.0f64..=1.0, 0..200)) {
        let mut h = Histogram::uniform(DEFAULT_BINS).unwrap();
        for v in &values {
            h.add(*v);
        }
        prop_assert_eq!(h.bin_counts.iter().sum::<u64>(), values.len() as u64);
        prop_assert_eq!(h.total, values.len() as u64);
    }
}
