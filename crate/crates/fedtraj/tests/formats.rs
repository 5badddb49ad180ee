use fedtraj::checkpoint::{format_params, parse_params};
use fedtraj::trajfile::{flatten, format_trajectories, parse_trajectories, HEADER};
use fedtraj_core::env::TransitionConfig;
use fedtraj_core::evaluation::{evaluate, EvalConfig, Metric};
use fedtraj_core::neuro::{ParameterSet, Tensor};
use fedtraj_core::seed::{stream, Purpose};
use fedtraj_core::synth::{synth_ground_truth, BehaviorPolicy};
use fedtraj_core::{LocationGrid, Point, Trajectory, UserId};
use proptest::prelude::*;

fn grid() -> LocationGrid {
    LocationGrid::new(10, 10, 250.0, (0.0, 0.0)).unwrap()
}

#[test]
fn three_users_ten_records() {
    let mut text = format!("{HEADER}\n");
    for u in 0..3 {
        for s in 0..10 {
            text.push_str(&format!("{u},{s},{}\n", (u * 7 + s) % 100));
        }
    }
    let ds = parse_trajectories(&text, &grid(), 48).unwrap();
    assert_eq!(ds.len(), 3);
    for d in &ds {
        assert_eq!(d.trajectories().len(), 1);
        assert_eq!(d.trajectories()[0].len(), 10);
    }
    assert_eq!(format_trajectories(flatten(&ds).iter()).unwrap(), text);
}

#[test]
fn ground_truth_survives_save_and_load() {
    let env = TransitionConfig::new(0.55, grid()).unwrap();
    let mut rng = stream(3, Purpose::Data, 0, 0);
    let data = synth_ground_truth(8, 3, &env, &BehaviorPolicy::default(), 48, 0, &mut rng).unwrap();
    let text = format_trajectories(flatten(&data).iter()).unwrap();
    let back = parse_trajectories(&text, &grid(), 48).unwrap();
    assert_eq!(back, data);
    assert_eq!(format_trajectories(flatten(&back).iter()).unwrap(), text);
}

#[test]
fn independent_ground_truth_draws_are_close() {
    let env = TransitionConfig::new(0.55, grid()).unwrap();
    let b = BehaviorPolicy::default();
    let draw = |k| {
        let mut rng = stream(21, Purpose::Data, k, 0);
        flatten(&synth_ground_truth(25, 20, &env, &b, 48, 0, &mut rng).unwrap())
    };
    let (x, y) = (draw(0), draw(1));
    assert_eq!(x.len(), 500);
    let report = evaluate(&x, &y, &grid(), &EvalConfig::new(48)).unwrap();
    for m in Metric::ALL {
        let d = report.jsd(m).unwrap();
        assert!(d < 0.05, "{} jsd {d}", m.name());
    }
}

fn trajectories() -> impl Strategy<Value = Vec<Trajectory>> {
    let visits = prop::collection::btree_map(0u32..200, 0u32..100, 1..20);
    prop::collection::btree_map(0u32..5, visits, 0..5).prop_map(|users| {
        users
            .into_iter()
            .map(|(u, v)| Trajectory::new(UserId(u), v.into_iter().map(|(s, l)| Point::new(s, l)).collect()).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn saved_text_reloads_to_the_same_text(trajs in trajectories()) {
        let text = format_trajectories(trajs.iter()).unwrap();
        let loaded = parse_trajectories(&text, &grid(), 48).unwrap();
        prop_assert_eq!(format_trajectories(flatten(&loaded).iter()).unwrap(), text);
    }

    #[test]
    fn params_reload_bit_exact(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
        let mut p = ParameterSet::new();
        p.add("w", Tensor::vector(values.clone())).unwrap();
        let back = parse_params(&format_params(&p)).unwrap();
        let got: Vec<u64> = back.iter().flat_map(|(_, t)| t.values().to_vec()).map(f64::to_bits).collect();
        let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }
}
