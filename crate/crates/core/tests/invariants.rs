use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svqgc::car::{car_precision, CarGraph};
use svqgc::graph::{components, split_subset, uniform_spanning_tree, RegionGraph};
use svqgc::posterior::{pooled_effect, quantile_sorted, summarize_sample, waic, PsiDraws, SignFlag};

/// Random connected graph: a random tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = RegionGraph> {
    (2usize..14)
        .prop_flat_map(|n| {
            let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
            let extra = prop::collection::vec((0..n, 0..n), 0..n);
            (Just(n), parents, extra)
        })
        .prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.into_iter().enumerate().map(|(i, p)| (i + 1, p)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            edges.iter_mut().for_each(|e| *e = (e.0.min(e.1), e.0.max(e.1)));
            edges.sort_unstable();
            edges.dedup();
            RegionGraph::new(n, edges).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splits_are_connected_partitions(g in connected_graph(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..g.n_regions()).collect();
        let part = split_subset(&g, &all, &mut rng).unwrap();
        prop_assert!(!part.left.is_empty() && !part.right.is_empty());
        prop_assert!(part.left.contains(&0));
        let mut union = part.left.clone();
        union.extend(&part.right);
        union.sort_unstable();
        prop_assert_eq!(union, all);
        prop_assert_eq!(components(&g, &part.left).len(), 1);
        prop_assert_eq!(components(&g, &part.right).len(), 1);
    }

    #[test]
    fn spanning_trees_span(g in connected_graph(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..g.n_regions()).collect();
        let tree = uniform_spanning_tree(&g, &all, &mut rng).unwrap();
        prop_assert_eq!(tree.len(), g.n_regions() - 1);
        for &(a, b) in &tree {
            prop_assert!(g.neighbors(a).contains(&b));
        }
        let t = RegionGraph::new(g.n_regions(), tree).unwrap();
        prop_assert!(t.is_connected());
    }

    #[test]
    fn car_log_det_matches_dense(g in connected_graph(), rho in 0.0f64..0.99) {
        let n = g.n_regions();
        let q = DMatrix::from_row_slice(n, n, &car_precision(&g, rho, 1.0));
        prop_assert_eq!(&q, &q.transpose());
        let dense = q.cholesky().expect("proper CAR is PD").l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
        let fast = CarGraph::new(&g).unwrap().log_det(rho);
        prop_assert!((dense - fast).abs() < 1e-9 * (1.0 + dense.abs()), "{} vs {}", dense, fast);
    }

    #[test]
    fn intervals_bracket_and_flag(values in prop::collection::vec(-50.0f64..50.0, 2..200), level in 0.5f64..0.99) {
        let s = summarize_sample(&values, level);
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(lo <= s.lower && s.lower <= s.upper && s.upper <= hi);
        let expected = if s.upper < 0.0 {
            SignFlag::Negative
        } else if s.lower > 0.0 {
            SignFlag::Positive
        } else {
            SignFlag::Indeterminate
        };
        prop_assert_eq!(s.sign, expected);
    }

    #[test]
    fn quantiles_are_monotone(mut values in prop::collection::vec(-1e3f64..1e3, 1..100), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        values.sort_by(f64::total_cmp);
        let (p, q) = (a.min(b), a.max(b));
        prop_assert!(quantile_sorted(&values, p) <= quantile_sorted(&values, q));
        prop_assert_eq!(quantile_sorted(&values, 0.0), values[0]);
        prop_assert_eq!(quantile_sorted(&values, 1.0), values[values.len() - 1]);
    }

    #[test]
    fn pooled_effect_is_a_weighted_mean(
        draws in 2usize..30,
        regions in 1usize..6,
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..draws * regions).map(|_| rng.random_range(-2.0..2.0)).collect();
        let psi = PsiDraws { n_draws: draws, n_regions: regions, values };
        let w: Vec<f64> = (0..regions).map(|_| rng.random_range(0.1..3.0)).collect();
        let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = pooled_effect(&psi, Some(&w), 0.9).unwrap();
        let b = pooled_effect(&psi, Some(&ws), 0.9).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        let equal = pooled_effect(&psi, Some(&vec![1.0; regions]), 0.9).unwrap();
        prop_assert_eq!(equal, pooled_effect(&psi, None, 0.9).unwrap());
    }

    #[test]
    fn waic_is_invariant_to_draw_order(
        draws in 2usize..20,
        obs in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ll: Vec<f64> = (0..draws * obs).map(|_| rng.random_range(-8.0..0.0)).collect();
        let w = waic(&ll, draws, obs).unwrap();
        prop_assert!(w.p_waic >= 0.0);
        prop_assert!((w.waic - (-2.0 * (w.lppd - w.p_waic))).abs() < 1e-12 * (1.0 + w.waic.abs()));
        let mut order: Vec<usize> = (0..draws).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<f64> = order.iter().flat_map(|&d| ll[d * obs..(d + 1) * obs].to_vec()).collect();
        let v = waic(&shuffled, draws, obs).unwrap();
        prop_assert!((w.waic - v.waic).abs() < 1e-9 * (1.0 + w.waic.abs()));
    }
}
