use hpo_core::envs::Transition;
use hpo_core::replay::ReplayBuffer;
use hpo_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tr(i: usize) -> Transition {
    Transition {
        state: vec![i as f64],
        action: vec![0.0],
        reward: i as f64,
        cost: 0.0,
        next_state: vec![i as f64 + 1.0],
        done: false,
        terminal: false,
    }
}

#[test]
fn sampled_indices_are_uniform() {
    let mut buf = ReplayBuffer::new(100, 1, 1).unwrap();
    for i in 0..100 {
        buf.push(tr(i)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 100];
    let draws = 100_000;
    for _ in 0..draws / 100 {
        for i in buf.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    // a full batch is a permutation, so pool single draws instead
    let mut single = [0usize; 100];
    for _ in 0..draws {
        single[buf.sample_indices(1, &mut rng).unwrap()[0]] += 1;
    }
    assert!(counts.iter().all(|&c| c == draws / 100));
    let expected = draws as f64 / 100.0;
    let stat: f64 = single.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-squared {stat}, p = {p}");
}

#[test]
fn partial_fill_only_samples_filled_slots() {
    let mut buf = ReplayBuffer::new(50, 1, 1).unwrap();
    for i in 0..7 {
        buf.push(tr(i)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let idx = buf.sample_indices(5, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i < 7));
        let mut u = idx.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 5, "batches are drawn without replacement");
    }
    match buf.sample(8, &mut rng) {
        Err(Error::BufferUnderflow { size: 7, requested: 8 }) => {}
        other => panic!("{:?}", other.map(|b| b.len())),
    }
}

#[test]
fn batch_columns_follow_transitions() {
    let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
    for i in 0..4 {
        let mut t = tr(i);
        t.terminal = i == 2;
        t.done = i >= 2;
        buf.push(t).unwrap();
    }
    let b = buf.sample(4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for r in 0..4 {
        let i = b.states.data()[r] as usize;
        assert_eq!(b.rewards.data()[r], i as f64);
        assert_eq!(b.next_states.data()[r], i as f64 + 1.0);
        assert_eq!(b.terminals.data()[r], if i == 2 { 1.0 } else { 0.0 });
    }
}

proptest! {
    #[test]
    fn ring_keeps_the_most_recent(capacity in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(capacity, 1, 1).unwrap();
        for i in 0..pushes {
            buf.push(tr(i)).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        prop_assert_eq!(buf.cursor(), pushes % capacity);
        let kept: Vec<usize> = buf.iter_ordered().map(|t| t.reward as usize).collect();
        let expect: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expect);
    }
}
