use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpadam::nn::{Activation, Mlp};
use warpadam::optim::{adam_step, baseline_step, warpadam_step, AdamState, HyperParams, OptimizerKind};
use warpadam::tasks::Batch;
use warpadam::tensor::Tensor;
use warpadam::warp::{kron, WarpMatrix};

fn grads(n: usize, steps: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), steps)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #[test]
    fn identity_warp_reduces_to_adam(gs in grads(4, 1..40), eta in 1e-5f64..0.5, eps in 0.0f64..1e-3) {
        let h = HyperParams { eta, epsilon: eps, ..HyperParams::default() };
        let p = WarpMatrix::identity(4);
        let mut w = (Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]), Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]));
        let mut s = (AdamState::new(&[4]), AdamState::new(&[4]));
        for g in gs {
            let g = Tensor::vector(g);
            let a = adam_step(&s.0, &w.0, &g, &h).unwrap();
            let b = warpadam_step(&s.1, &w.1, &g, &p, &h).unwrap();
            prop_assert_eq!(bits(&a.1), bits(&b.1));
            prop_assert_eq!(bits(&a.0.v), bits(&b.0.v));
            s = (a.0, b.0);
            w = (a.1, b.1);
        }
    }

    #[test]
    fn positive_diagonal_cancels_without_epsilon(
        gs in grads(3, 1..50),
        diag in prop::collection::vec(0.1f64..10.0, 3),
    ) {
        let h = HyperParams { eta: 0.01, epsilon: 0.0, ..HyperParams::default() };
        let p = WarpMatrix::diagonal(diag).unwrap();
        let start = Tensor::vector(vec![1.0, -1.0, 0.5]);
        let (mut wa, mut wb) = (start.clone(), start);
        let (mut sa, mut sb) = (AdamState::new(&[3]), AdamState::new(&[3]));
        for g in gs {
            let g = Tensor::vector(g);
            (sa, wa) = adam_step(&sa, &wa, &g, &h).unwrap();
            (sb, wb) = warpadam_step(&sb, &wb, &g, &p, &h).unwrap();
        }
        for (a, b) in wa.data().iter().zip(wb.data()) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "{} vs {}", a, b);
        }
    }

    #[test]
    fn steps_are_pure(g in prop::collection::vec(-3.0f64..3.0, 5), t in 0u64..20) {
        let w = Tensor::vector(vec![0.5; 5]);
        let mut s = AdamState::new(&[5]);
        s.t = t;
        let h = HyperParams::default();
        for kind in OptimizerKind::ALL.into_iter().filter(|k| *k != OptimizerKind::WarpAdam) {
            let g = Tensor::vector(g.clone());
            let a = baseline_step(kind, &s, &w, &g, &h).unwrap();
            let b = baseline_step(kind, &s, &w, &g, &h).unwrap();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(s.t, t);
    }

    #[test]
    fn zero_gradient_never_moves_weights(w in prop::collection::vec(-5.0f64..5.0, 3), steps in 1usize..30, eps in prop_oneof![Just(0.0), Just(1e-8)]) {
        let h = HyperParams { epsilon: eps, ..HyperParams::default() };
        let zero = Tensor::zeros(&[3]);
        for kind in OptimizerKind::ALL.into_iter().filter(|k| *k != OptimizerKind::WarpAdam) {
            let mut cur = Tensor::vector(w.clone());
            let mut s = AdamState::new(&[3]);
            for _ in 0..steps {
                let prev = cur.clone();
                (s, cur) = baseline_step(kind, &s, &cur, &zero, &h).unwrap();
                for (x, y) in prev.data().iter().zip(cur.data()) {
                    let want = if kind == OptimizerKind::AdamW { x * (1.0 - h.eta * h.weight_decay) } else { *x };
                    prop_assert!((y - want).abs() <= 1e-15 * x.abs(), "{:?}: {} -> {}", kind, x, y);
                }
            }
        }
        // warped Adam with an arbitrary dense P as well
        let p = WarpMatrix::dense(3, (0..9).map(|i| i as f64 - 4.0).collect()).unwrap();
        let (_, next) = warpadam_step(&AdamState::new(&[3]), &Tensor::vector(w.clone()), &zero, &p, &h).unwrap();
        prop_assert_eq!(next.data(), &w[..]);
    }

    #[test]
    fn kronecker_apply_equals_dense_product(
        a in prop::collection::vec(-2.0f64..2.0, 9),
        b in prop::collection::vec(-2.0f64..2.0, 4),
        g in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let k = WarpMatrix::kronecker(3, 2, a.clone(), b.clone()).unwrap();
        let dense = WarpMatrix::dense(6, kron(&a, 3, &b, 2).into_data()).unwrap();
        let g = Tensor::vector(g);
        let (x, y) = (k.apply(&g).unwrap(), dense.apply(&g).unwrap());
        for (p, q) in x.data().iter().zip(y.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let model = Mlp::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init(&mut rng);
        let batch = Batch {
            inputs: Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 0.3, 0.2, -0.7]).unwrap(),
            labels: vec![1, 0],
        };
        let a = model.evaluate(&params, &batch).unwrap();
        let b = model.evaluate(&params, &batch).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        for (x, y) in a.grads.iter().zip(&b.grads) {
            prop_assert_eq!(bits(x), bits(y));
        }
    }
}
