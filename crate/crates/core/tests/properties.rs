use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentgram_core::gaussian::{sum, Component, GaussianMixture};
use sentgram_core::oracle::random_tree;
use sentgram_core::treebank::{parse_ptb, to_binary_task, TaskSpec};

fn tree_strategy() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 1usize..20)
}

fn component(d: usize) -> impl Strategy<Value = Component> {
    (
        -3.0f64..3.0,
        prop::collection::vec(-3.0f64..3.0, d),
        prop::collection::vec(0.05f64..4.0, d),
    )
        .prop_map(|(c, m, v)| Component::new(c, m, v))
}

fn mixture(d: usize) -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec(component(d), 1..5).prop_map(move |cs| GaussianMixture::new(d, cs).unwrap())
}

proptest! {
    #[test]
    fn sexpr_round_trip((seed, tokens) in tree_strategy()) {
        let tree = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), tokens, 5);
        prop_assert_eq!(parse_ptb(&tree.to_sexpr()).unwrap(), tree);
    }

    #[test]
    fn binary_skeleton_counts((seed, tokens) in tree_strategy()) {
        let tree = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), tokens, 5);
        let leaves = tree.nodes.iter().filter(|n| n.is_leaf()).count();
        prop_assert_eq!(leaves, tokens);
        prop_assert_eq!(tree.len() - leaves, leaves - 1);
        prop_assert!(tree.validate().is_ok());
    }

    #[test]
    fn task_mapping_is_idempotent((seed, tokens) in tree_strategy()) {
        let tree = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), tokens, 5);
        let spec = TaskSpec::sst2();
        if let Some(once) = to_binary_task(&tree, &spec) {
            prop_assert_eq!(to_binary_task(&once, &spec), Some(once.clone()));
            prop_assert!(once.nodes.iter().all(|n| n.gold.is_none_or(|l| l < 2)));
        }
    }

    #[test]
    fn product_integral_matches_pointwise_product(a in mixture(1), b in mixture(1), x in -3.0f64..3.0) {
        let p = a.product(&b).unwrap();
        let direct = a.density(&[x]) * b.density(&[x]);
        prop_assert!((p.density(&[x]) - direct).abs() <= 1e-10 * direct.max(1e-300));
    }

    #[test]
    fn product_is_commutative_in_mass(a in mixture(2), b in mixture(2)) {
        let ab = a.product(&b).unwrap().total_integral();
        let ba = b.product(&a).unwrap().total_integral();
        prop_assert!((ab - ba).abs() < 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn sum_adds_mass(a in mixture(2), b in mixture(2)) {
        let s = sum(&[a.clone(), b.clone()], 2).unwrap();
        let expect = (a.total_integral().exp() + b.total_integral().exp()).ln();
        prop_assert!((s.total_integral() - expect).abs() < 1e-12);
        prop_assert_eq!(s.len(), a.len() + b.len());
    }

    #[test]
    fn pruning_keeps_heaviest(a in mixture(1), k in 1usize..4) {
        let p = a.prune(k);
        prop_assert_eq!(p.len(), a.len().min(k));
        prop_assert!(p.total_integral() <= a.total_integral() + 1e-12);
        let min_kept = p.components.iter().map(|c| c.log_coef).fold(f64::INFINITY, f64::min);
        let dropped = a.components.iter().filter(|c| c.log_coef > min_kept).count();
        prop_assert!(dropped <= p.len());
    }
}
