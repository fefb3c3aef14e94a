use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dflprivacy::attack::{ssim, synthetic_image, ToyImage};
use dflprivacy::infotheory::{analytic_mi_cfl_sa, analytic_mi_dfl_sa_average, ksg_mi};
use dflprivacy::protocol::{
    extract_observation, fedsgd_round, gossip_round, GradientVector, ModelState, ObservedLabel,
};
use dflprivacy::topology::{generate_graph, metropolis_weights, Graph};
use dflprivacy::{Mode, Topology};

/// A feasible `(n, density)` pair.
fn graph_params(max_n: usize) -> impl Strategy<Value = (usize, f64)> {
    (3..=max_n).prop_flat_map(|n| {
        let lo = 2.0 / n as f64;
        (Just(n), lo..=1.0)
    })
}

fn topology(n: usize, density: f64, seed: u64) -> Topology {
    let graph = generate_graph(n, density, seed).unwrap();
    let weights = metropolis_weights(&graph).unwrap();
    Topology { graph, weights }
}

fn gradients(n: usize, d: usize, seed: u64) -> Vec<GradientVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| GradientVector::new(i, (0..d).map(|_| rng.sample(StandardNormal)).collect()))
        .collect()
}

fn bfs_reaches_all(g: &Graph) -> bool {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for u in g.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn gaussian_pair(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y = x
        .iter()
        .map(|&a| rho * a + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_graphs_are_connected_and_reproducible((n, density) in graph_params(40), seed in any::<u64>()) {
        let g = generate_graph(n, density, seed).unwrap();
        prop_assert!(bfs_reaches_all(&g));
        prop_assert_eq!(&g, &generate_graph(n, density, seed).unwrap());
    }

    #[test]
    fn metropolis_matrix_is_doubly_stochastic_on_the_graph((n, density) in graph_params(25), seed in any::<u64>()) {
        let t = topology(n, density, seed);
        for k in 0..n {
            let row: f64 = t.weights.row(k).iter().sum();
            let col: f64 = (0..n).map(|j| t.weights.get(j, k)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
            for j in 0..n {
                let a = t.weights.get(k, j);
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a, t.weights.get(j, k));
                if j != k {
                    prop_assert_eq!(a > 0.0, t.graph.is_adjacent(k, j));
                }
            }
        }
    }

    #[test]
    fn gossip_preserves_the_global_sum((n, density) in graph_params(20), seed in any::<u64>(), d in 1usize..5) {
        let t = topology(n, density, seed);
        let g = gradients(n, d, seed ^ 1);
        let mixed = gossip_round(&g, &t.weights).unwrap();
        for idx in 0..d {
            let before: f64 = g.iter().map(|v| v.values[idx]).sum();
            let after: f64 = mixed.iter().map(|v| v.values[idx]).sum();
            prop_assert!((before - after).abs() < 1e-12 * n as f64, "{} vs {}", before, after);
        }
    }

    #[test]
    fn fedsgd_shift_is_linear_in_gradients(n in 1usize..8, d in 1usize..6, alpha in -3.0f64..3.0, seed in any::<u64>()) {
        let g = gradients(n, d, seed);
        let scaled: Vec<GradientVector> = g
            .iter()
            .map(|v| GradientVector::new(v.owner, v.values.iter().map(|x| alpha * x).collect()))
            .collect();
        let w0: Vec<f64> = (0..d).map(|i| i as f64 * 0.3 - 1.0).collect();
        let states = vec![ModelState::new(w0.clone()); n];
        let base = fedsgd_round(&states, &g, 0.2).unwrap();
        let shifted = fedsgd_round(&states, &scaled, 0.2).unwrap();
        for i in 0..d {
            let s1 = base.weights[i] - w0[i];
            let s2 = shifted.weights[i] - w0[i];
            prop_assert!((s2 - alpha * s1).abs() < 1e-12);
        }
    }

    #[test]
    fn dfl_observation_never_contains_non_neighbors((n, density) in graph_params(15), seed in any::<u64>(), k in 0usize..15) {
        let k = k % n;
        let t = topology(n, density, seed);
        let g = gradients(n, 2, seed);
        let obs = extract_observation(Mode::Dfl, k, &g, Some(&t)).unwrap();
        for item in &obs.items {
            if let ObservedLabel::Gradient(j) = item.label {
                prop_assert!(t.graph.is_adjacent(k, j));
                prop_assert_eq!(&item.values, &g[j].values);
            }
        }
        prop_assert_eq!(obs, extract_observation(Mode::Dfl, k, &g, Some(&t)).unwrap());
    }

    #[test]
    fn dfl_sa_closed_form_dominates_cfl_sa((n, density) in graph_params(20), seed in any::<u64>()) {
        let t = topology(n, density, seed);
        let avg = analytic_mi_dfl_sa_average(&t.weights);
        let cfl = analytic_mi_cfl_sa(n).unwrap();
        if t.graph.is_complete() {
            prop_assert!((avg - cfl).abs() < 1e-12);
        } else {
            prop_assert!(avg >= cfl - 1e-12, "{} < {}", avg, cfl);
        }
    }

    #[test]
    fn ssim_is_symmetric(seed in any::<u64>(), la in 0usize..4, lb in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = synthetic_image(8, 8, 4, la, &mut rng);
        let b = synthetic_image(8, 8, 4, lb, &mut rng);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_against_flat_image_is_far_from_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = synthetic_image(8, 8, 4, 1, &mut rng);
        let flat = ToyImage::new(8, 8, vec![0.5; 64], 1).unwrap();
        prop_assert!(ssim(&a, &flat).unwrap() < 0.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn knn_mi_is_permutation_equivariant(seed in any::<u64>(), rho in -0.9f64..0.9) {
        let (x, y) = gaussian_pair(rho, 400, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        let mut perm: Vec<usize> = (0..x.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = ksg_mi(&[&x], &[&y], 3).unwrap();
        let b = ksg_mi(&[&px], &[&py], 3).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn knn_mi_tolerates_marginal_rescaling(seed in any::<u64>(), rho in 0.0f64..0.9) {
        let (x, y) = gaussian_pair(rho, 1000, seed);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = ksg_mi(&[&x], &[&y], 3).unwrap();
        let b = ksg_mi(&[&doubled], &[&y], 3).unwrap();
        prop_assert!((a - b).abs() < 0.05, "{} vs {}", a, b);
    }
}

#[test]
fn knn_mi_matches_gaussian_closed_form() {
    for (rho, seed) in [(0.0, 1), (0.5, 2), (0.9, 3)] {
        let (x, y) = gaussian_pair(rho, 1000, seed);
        let exact = -0.5 * (1.0f64 - rho * rho).ln();
        let est = ksg_mi(&[&x], &[&y], 3).unwrap();
        assert!((est - exact).abs() < 0.05, "rho {rho}: {est} vs {exact}");
    }
}
