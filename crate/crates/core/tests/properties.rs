use hypattn::geometry::{
    einstein_midpoint, hyperboloid_distance, lift_from_klein, lift_pseudo_polar, project_to_klein, HyperboloidPoint,
    KleinPoint, PseudoPolar,
};
use hypattn::graphgen::{all_pairs_bfs, bfs_distances, floyd_warshall, sample_lp_example, HypGraph, SplpSampler};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIM: usize = 3;

fn direction() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, DIM).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
}

fn lifted() -> impl Strategy<Value = HyperboloidPoint> {
    (direction(), -4.0f64..4.0).prop_map(|(d, r)| lift_pseudo_polar(&PseudoPolar::new(d, r).unwrap()))
}

fn klein() -> impl Strategy<Value = KleinPoint> {
    (direction(), 0.0f64..0.95).prop_map(|(d, s)| {
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        KleinPoint::new(d.iter().map(|x| s * x / n).collect()).unwrap()
    })
}

fn edge_list() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..25).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..60)))
}

proptest! {
    #[test]
    fn lift_lands_on_the_hyperboloid(x in lifted()) {
        prop_assert!(x.membership_defect() <= 1e-9 * x.time() * x.time());
        prop_assert!(x.time() >= 1.0);
    }

    #[test]
    fn lift_sits_at_distance_abs_radius(d in direction(), r in -4.0f64..4.0) {
        let x = lift_pseudo_polar(&PseudoPolar::new(d, r).unwrap());
        let dist = hyperboloid_distance(&HyperboloidPoint::origin(DIM), &x).unwrap();
        prop_assert!((dist - r.abs()).abs() <= 1e-9 * (1.0 + r.abs()));
    }

    #[test]
    fn distance_is_a_metric(a in lifted(), b in lifted(), c in lifted()) {
        let ab = hyperboloid_distance(&a, &b).unwrap();
        let ba = hyperboloid_distance(&b, &a).unwrap();
        let bc = hyperboloid_distance(&b, &c).unwrap();
        let ac = hyperboloid_distance(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(hyperboloid_distance(&a, &a).unwrap() <= 1e-7);
    }

    #[test]
    fn klein_round_trip(v in klein()) {
        let back = project_to_klein(&lift_from_klein(&v));
        for (x, y) in v.coords().iter().zip(back.coords()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn midpoint_stays_in_the_ball_and_ignores_weight_scale(
        points in proptest::collection::vec(klein(), 1..6),
        raw in proptest::collection::vec(0.01f64..1.0, 6),
        scale in 0.1f64..10.0,
    ) {
        let weights = &raw[..points.len()];
        let m = einstein_midpoint(weights, &points).unwrap();
        prop_assert!(m.norm() < 1.0);
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let m2 = einstein_midpoint(&scaled, &points).unwrap();
        for (x, y) in m.coords().iter().zip(m2.coords()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let max_norm = points.iter().map(KleinPoint::norm).fold(0.0, f64::max);
        prop_assert!(m.norm() <= max_norm + 1e-12, "midpoint leaves the ball spanned by the points");
    }

    #[test]
    fn bfs_agrees_with_floyd_warshall((n, pairs) in edge_list()) {
        let edges: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let g = HypGraph::from_edges(n, &edges).unwrap();
        prop_assert_eq!(all_pairs_bfs(&g), floyd_warshall(&g));
    }

    #[test]
    fn task_labels_match_the_graph((n, pairs) in edge_list(), seed in any::<u64>()) {
        let edges: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let g = HypGraph::from_edges(n, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(ex) = sample_lp_example(&g, &mut rng) {
            prop_assert_ne!(ex.src, ex.dst);
            prop_assert_eq!(ex.label == 1, g.has_edge(ex.src, ex.dst));
        }
        if let Ok(sampler) = SplpSampler::new(&g) {
            for uniformize in [false, true] {
                let ex = sampler.sample(&mut rng, uniformize);
                prop_assert_eq!(bfs_distances(&g, ex.src)[ex.dst], Some(ex.label));
            }
        }
    }
}
