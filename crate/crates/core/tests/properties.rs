use fedtraj_core::aggregation::{aggregate_mean, budget_for, DPBudget};
use fedtraj_core::discriminator::extract_pairs;
use fedtraj_core::env::{transition_distribution, TransitionConfig};
use fedtraj_core::evaluation::jsd;
use fedtraj_core::seed::{stream, Purpose};
use fedtraj_core::{Action, LocationGrid, LocationId, Point, State, Trajectory, UserId};
use proptest::prelude::*;

fn grid() -> LocationGrid {
    LocationGrid::new(5, 5, 100.0, (0.0, 0.0)).unwrap()
}

fn locations() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..25, 1..12)
}

fn state_of(locs: &[u32], home: u32) -> State {
    let pts = locs.iter().enumerate().map(|(i, &l)| Point::new(i as u32, l)).collect();
    State::new(pts, LocationId(home)).unwrap()
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..10)
}

proptest! {
    #[test]
    fn grid_distance_is_a_metric(a in 0u32..25, b in 0u32..25, c in 0u32..25) {
        let g = grid();
        let d = |x, y| g.distance(LocationId(x), LocationId(y)).unwrap();
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert_eq!(d(a, b) == 0.0, a == b);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-9);
        prop_assert!(d(a, b) <= g.diagonal() + 1e-9);
    }

    #[test]
    fn transitions_are_distributions(locs in locations(), home in 0u32..25, alpha in 0.1f64..2.0) {
        let env = TransitionConfig::new(alpha, grid()).unwrap();
        let state = state_of(&locs, home);
        for a in Action::ALL {
            let d = transition_distribution(&state, a, &env);
            let total: f64 = d.support.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(d.support.iter().all(|&(_, p)| p > 0.0));
            if a == Action::Explore && !d.fallback {
                prop_assert!(d.support.iter().all(|&(l, _)| !state.is_visited(l)));
            }
        }
    }

    #[test]
    fn labeled_moves_are_possible(locs in prop::collection::vec(0u32..25, 2..15), home in 0u32..25) {
        let env = TransitionConfig::new(0.55, grid()).unwrap();
        let pts: Vec<Point> = locs.iter().enumerate().map(|(i, &l)| Point::new(i as u32, l)).collect();
        let traj = Trajectory::new(UserId(0), pts.clone()).unwrap();
        let pairs = extract_pairs(&traj, LocationId(home));
        prop_assert_eq!(pairs.len(), pts.len() - 1);
        for (t, (state, action)) in pairs.iter().enumerate() {
            let d = transition_distribution(state, *action, &env);
            prop_assert!(d.probability(pts[t + 1].loc) > 0.0, "step {} {:?}", t, action);
        }
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(p in distribution(), q in distribution()) {
        let n = p.len().min(q.len());
        let norm = |v: &[f64]| {
            let t: f64 = v.iter().sum();
            v.iter().map(|x| x / t).collect::<Vec<f64>>()
        };
        prop_assume!(p[..n].iter().sum::<f64>() > 0.0 && q[..n].iter().sum::<f64>() > 0.0);
        let (p, q) = (&norm(&p[..n])[..], &norm(&q[..n])[..]);
        let a = jsd(p, q).unwrap();
        let b = jsd(q, p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1e-12..=core::f64::consts::LN_2 + 1e-12).contains(&a));
        prop_assert!(jsd(p, p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn neighbouring_means_differ_by_at_most_one_over_n(
        scores in prop::collection::vec(0.0f64..=1.0, 2..60),
        replacement in 0.0f64..=1.0,
        which in any::<prop::sample::Index>(),
    ) {
        let n = scores.len();
        let mut other = scores.clone();
        other[which.index(n)] = replacement;
        let free = DPBudget::noise_free(n).unwrap();
        let mut rng = stream(0, Purpose::Noise, 0, 0);
        let a = aggregate_mean(&scores, &free, &mut rng).unwrap();
        let b = aggregate_mean(&other, &free, &mut rng).unwrap();
        prop_assert!((a - b).abs() <= 1.0 / n as f64 + 1e-15);
    }

    #[test]
    fn budget_noise_shrinks_with_epsilon(eps in 0.05f64..5.0, n in 2usize..500) {
        let small = budget_for(eps, n, Some(2.0)).unwrap();
        let large = budget_for(2.0 * eps, n, Some(2.0)).unwrap();
        prop_assert!(large.lambda_mean < small.lambda_mean);
        prop_assert!(large.lambda_var < small.lambda_var);
    }
}
