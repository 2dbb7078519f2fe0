mod common;

use adaptive_replay::bandit::{
    regret_diagnostic, sample_buffer_from, tempered_softmax, BanditState,
};
use adaptive_replay::model::Example;
use common::*;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    vec(-5.0f64..5.0, 1..10)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(mu in scores(), t in 0.01f64..10.0) {
        let p = tempered_softmax(&mu, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn softmax_ignores_a_common_shift(mu in scores(), t in 0.01f64..10.0, c in -1e3f64..1e3) {
        let shifted: Vec<f64> = mu.iter().map(|m| m + c).collect();
        for (a, b) in tempered_softmax(&mu, t).iter().zip(tempered_softmax(&shifted, t)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn colder_temperature_sharpens_the_argmax(mu in vec(-2.0f64..2.0, 2..8), t in 0.05f64..5.0) {
        let best = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let second = mu.iter().copied().filter(|m| *m < best).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(mu.iter().filter(|m| **m == best).count() == 1);
        prop_assume!(best - second > 1e-3);
        let i = mu.iter().position(|m| *m == best).unwrap();
        let warm = tempered_softmax(&mu, t)[i];
        let cold = tempered_softmax(&mu, t / 2.0)[i];
        prop_assert!(cold > warm || warm == 1.0, "{} <= {}", cold, warm);
    }

    #[test]
    fn moving_average_contracts(f in -3.0f64..3.0, beta in 0.001f64..1.0, steps in 1usize..300) {
        let mut b = BanditState::new(1, beta, 0.1).unwrap();
        for j in 1..=steps {
            b.update_means(&[f]).unwrap();
            let bound = (1.0 - beta).powi(j as i32) * f.abs();
            prop_assert!((b.means()[0] - f).abs() <= bound + 1e-12);
        }
        prop_assert_eq!(b.iteration(), steps as u64);
    }

    #[test]
    fn regret_is_nonnegative_and_matches_brute_force(seed in any::<u64>(), m in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, scores) = scored_store(&[7, 12, 5], &[0.3, -0.2, 0.5], 0.4, &mut rng);
        let probs = tempered_softmax(&[0.0, 0.3, -0.1], 0.5);
        let buffer = sample_buffer_from(&probs, &store, m, &mut rng).unwrap();
        let mut source = |ex: &Example| Ok(scores[&ex.id]);
        let r = regret_diagnostic(&mut source, &store, &buffer).unwrap();
        let ids: Vec<u64> = buffer.examples.iter().map(|e| e.id).collect();
        prop_assert!(r >= 0.0);
        prop_assert!((r - brute_force_regret(&scores, &ids)).abs() < 1e-12);
    }
}

#[test]
fn buffer_examples_come_from_their_recorded_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (store, _) = scored_store(&[3, 9, 4, 6], &[0.0; 4], 0.0, &mut rng);
    let mut b = BanditState::new(4, 0.5, 0.3).unwrap();
    b.update_means(&[0.1, -0.4, 0.9, 0.0]).unwrap();
    let buf = b.sample_replay_buffer(&store, 500, &mut rng).unwrap();
    assert_eq!(buf.len(), 500);
    for (ex, c) in buf.examples.iter().zip(&buf.source_clusters) {
        assert_eq!(ex.task_id, *c);
        assert!(store.cluster(*c).unwrap().examples().contains(ex));
    }
}

#[test]
fn high_forgetting_cluster_is_picked_most_after_burn_in() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (store, scores) = scored_store(&[30, 30, 30], &[1.0, 0.1, 0.1], 0.05, &mut rng);
    let mut source = |ex: &Example| Ok(scores[&ex.id]);
    let mut b = BanditState::new(3, 0.01, 0.1).unwrap();
    let mut counts = [0usize; 3];
    for j in 0..400 {
        let probe: Vec<f64> = store
            .clusters()
            .iter()
            .map(|c| {
                adaptive_replay::forgetting::mean_cluster_forgetting(&mut source, c, 2, &mut rng)
                    .unwrap()
            })
            .collect();
        b.update_means(&probe).unwrap();
        let buf = b.sample_replay_buffer(&store, 8, &mut rng).unwrap();
        if j >= 200 {
            for c in buf.source_clusters {
                counts[c] += 1;
            }
        }
    }
    assert!(counts[0] > counts[1] && counts[0] > counts[2], "{counts:?}");
}
