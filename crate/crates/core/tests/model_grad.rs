mod common;

use aen::model::forward;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_model_gradients_match_finite_differences() {
    let (params, config, batch) = tiny_problem(11);
    assert_eq!(params.param_count(), 287);
    for seed in [None, Some(5)] {
        let r = grad_check(&params, &config, &batch, seed, 1e-5);
        assert!(r.missing.is_empty(), "no gradient for {:?}", r.missing);
        assert_eq!(r.checked, 287);
        assert!(r.worst <= 1e-4, "dropout {seed:?}: worst {} at {}", r.worst, r.worst_name);
    }
}

#[test]
fn shared_alignment_weights_pass_the_same_check() {
    let (_, mut config, batch) = tiny_problem(12);
    config.shared_att_weights = true;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = aen::model::init_params(&config, 8, &mut rng).unwrap();
    params.embedding = tiny_problem(12).0.embedding;
    let r = grad_check(&params, &config, &batch, None, 1e-5);
    assert!(r.missing.is_empty());
    assert!(r.worst <= 1e-4, "worst {} at {}", r.worst, r.worst_name);
}

#[test]
fn embedding_receives_no_gradient() {
    let (params, config, batch) = tiny_problem(13);
    let (_, grads) = loss_and_grads(&params, &config, &batch, Some(1));
    // one slot per trainable tensor and nothing for the table
    assert_eq!(grads.len(), params.trainable().len());
    assert!(params.trainable().iter().all(|(n, _)| n != "embedding"));
    assert!(params.embedding.grad().is_none());
}

#[test]
fn forward_matches_straight_line_oracle() {
    for seed in 0..5 {
        let (params, config, batch) = tiny_problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for e in &batch {
            let got = forward(&params, &config, inputs(e), false, &mut rng).unwrap();
            let expect = oracle_probs(&params, e);
            for (a, b) in got.probs.data().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
            }
            assert!((got.probs.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn padding_the_context_leaves_eval_output_unchanged() {
    let (params, config, batch) = tiny_problem(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for e in &batch {
        let base = forward(&params, &config, inputs(e), false, &mut rng).unwrap();
        let mut padded = e.clone();
        padded.0.extend([0, 0, 0]);
        padded.2.extend([false; 3]);
        let more = forward(&params, &config, inputs(&padded), false, &mut rng).unwrap();
        for (a, b) in base.probs.data().iter().zip(more.probs.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let (params, config, batch) = tiny_problem(4);
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(99);
    for e in &batch {
        let a = forward(&params, &config, inputs(e), false, &mut r1).unwrap();
        let b = forward(&params, &config, inputs(e), false, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}
