use std::sync::Arc;

use proptest::prelude::*;

use popmf::dynamics::{coordination_utility, logit_policy, sis_model};
use popmf::meanfield::solve_nimfa;
use popmf::oracle::{build_generator, exact_marginals};
use popmf::simulator::{derive_seed_list, replicate_map, simulate_ct, simulate_dt};
use popmf::{InteractionMatrix, MixedProfile, PopulationModel, PopulationState, StateSpace};

fn logit_model(w: InteractionMatrix, eta: f64) -> PopulationModel {
    PopulationModel::with_uniform_rate(
        StateSpace::new(["1", "2"]).unwrap(),
        1.0,
        logit_policy(coordination_utility(), eta).unwrap(),
        Arc::new(w),
    )
    .unwrap()
}

/// Connected undirected graph: a random spanning path plus extra edges.
fn graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_n).prop_flat_map(|n| {
        let extra = proptest::collection::vec((0..n, 0..n), 0..2 * n);
        let perm = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
        (Just(n), perm, extra).prop_map(|(n, perm, extra)| {
            let mut edges: Vec<(usize, usize)> = perm.windows(2).map(|w| (w[0], w[1])).collect();
            edges.extend(extra.into_iter().filter(|(u, v)| u != v));
            let mut norm: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            norm.sort_unstable();
            norm.dedup();
            (n, norm)
        })
    })
}

fn adjacency_rows(n: usize, edges: &[(usize, usize)], weight: f64) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); n];
    for &(u, v) in edges {
        rows[u].push((v, weight));
        rows[v].push((u, weight));
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nearest_neighbor_rows_are_stochastic(n in 3usize..400, density in 0.01f64..0.99) {
        let d = InteractionMatrix::nearest_neighbor_degree(n, density);
        prop_assume!(d.is_ok());
        let d = d.unwrap();
        prop_assert!(d.is_multiple_of(2) && (d as f64 - density * n as f64).abs() <= 1.0 + 1e-9);
        let w = InteractionMatrix::nearest_neighbor(n, density).unwrap();
        for i in 0..n {
            let s: f64 = w.row(i).iter().map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(w.row(i).iter().all(|(j, v)| j != i && v > 0.0));
        }
        prop_assert!((w.max_column_sum() - 1.0).abs() < 1e-12);
        prop_assert!((w.local_density() - 1.0 / (d as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn graph_walk_rows_are_stochastic((n, edges) in graph(30)) {
        let w = InteractionMatrix::from_adjacency(&edges, n).unwrap();
        let mut col = vec![0.0; n];
        for i in 0..n {
            let s: f64 = w.row(i).iter().map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for (j, v) in w.row(i).iter() {
                col[j] += v;
            }
        }
        let r = col.iter().copied().fold(0.0, f64::max);
        prop_assert!((w.max_column_sum() - r).abs() < 1e-12);
        // θ² = (1/N) Σ_i 1/deg_i for random walks
        let theta2: f64 = (0..n).map(|i| 1.0 / w.row(i).iter().count() as f64).sum::<f64>() / n as f64;
        prop_assert!((w.local_density().powi(2) - theta2).abs() < 1e-12);
    }

    #[test]
    fn spectral_density_bounds((n, edges) in graph(20)) {
        let w = InteractionMatrix::from_adjacency(&edges, n).unwrap();
        let theta = w.local_density();
        let lam = w.spectral_density(1e-14, 200_000).unwrap().lambda;
        prop_assert!(lam >= -1e-12);
        // λ ≤ ‖W‖₂ ≤ ‖W‖_F = θ√N
        prop_assert!(lam <= theta * (n as f64).sqrt() + 1e-9);
    }

    #[test]
    fn generator_rows_sum_to_zero((n, edges) in graph(6), b in 0.01f64..2.0, g in 0.01f64..2.0) {
        let model = sis_model(&adjacency_rows(n, &edges, 1.0), b, g).unwrap();
        let gen = build_generator(&model, 1 << 12).unwrap();
        for x in 0..gen.size() {
            let s: f64 = gen.row(x).map(|(_, v)| v).sum::<f64>() + gen.entry(x, x);
            prop_assert!(s.abs() < 1e-12);
            prop_assert!(gen.row(x).all(|(y, v)| y != x && v >= 0.0));
        }
    }

    #[test]
    fn exact_marginals_are_invariant_under_relabeling(
        (n, edges) in graph(6),
        infected in proptest::collection::vec(any::<bool>(), 6),
        shift in 0usize..6,
    ) {
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let model = sis_model(&adjacency_rows(n, &edges, 1.0), 0.7, 1.1).unwrap();
        let moved: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let model_p = sis_model(&adjacency_rows(n, &moved, 1.0), 0.7, 1.1).unwrap();
        let init: Vec<usize> = (0..n).map(|i| usize::from(infected[i])).collect();
        let mut init_p = vec![0; n];
        for i in 0..n {
            init_p[perm[i]] = init[i];
        }
        let grid = [0.3, 1.0, 2.5];
        let g = build_generator(&model, 1 << 12).unwrap();
        let gp = build_generator(&model_p, 1 << 12).unwrap();
        let a = exact_marginals(&g, &g.point_distribution(&PopulationState::new(init, 2).unwrap()).unwrap(), &grid).unwrap();
        let b = exact_marginals(&gp, &gp.point_distribution(&PopulationState::new(init_p, 2).unwrap()).unwrap(), &grid).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn nimfa_stays_on_the_simplex(n in 10usize..60, density in 0.1f64..0.9, eta in 0.05f64..2.0, seed in any::<u64>()) {
        prop_assume!(InteractionMatrix::nearest_neighbor_degree(n, density).is_ok());
        let model = logit_model(InteractionMatrix::nearest_neighbor(n, density).unwrap(), eta);
        let mut state = seed;
        let data: Vec<f64> = (0..n)
            .flat_map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let p = (state >> 11) as f64 / (1u64 << 53) as f64;
                [p, 1.0 - p]
            })
            .collect();
        let y0 = MixedProfile::new(n, 2, data).unwrap();
        let sol = solve_nimfa(&model, &y0, 3.0, 0.01, 10).unwrap();
        prop_assert!(sol.max_projection_correction < 1e-9);
        for y in &sol.states {
            for blk in y.chunks(2) {
                prop_assert!(blk.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
                prop_assert!((blk[0] + blk[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectories_are_consistent(n in 2usize..50, seed in any::<u64>(), horizon in 0.0f64..5.0) {
        let model = logit_model(InteractionMatrix::complete(n).unwrap(), 0.2);
        let init = PopulationState::new((0..n).map(|i| i % 2).collect(), 2).unwrap();
        let traj = simulate_ct(&model, &init, horizon, seed).unwrap();
        let mut cur = init.clone();
        let mut last = 0.0;
        for e in &traj.events {
            prop_assert!(e.time >= last && e.time <= horizon);
            prop_assert_eq!(cur.state(e.agent), e.from);
            prop_assert_ne!(e.from, e.to);
            cur.set(e.agent, e.to);
            last = e.time;
        }
        let fin = traj.final_state();
        prop_assert_eq!(cur.assignment(), fin.assignment());
        let again = simulate_ct(&model, &init, horizon, seed).unwrap();
        prop_assert_eq!(traj.events.len(), again.events.len());
    }

    #[test]
    fn dt_events_fall_on_the_lattice(n in 2usize..20, k in 1usize..8, seed in any::<u64>()) {
        let model = logit_model(InteractionMatrix::complete(n).unwrap(), 0.5);
        let xi = 1.0 / (n as f64 * k as f64);
        let init = PopulationState::uniform(n, 0, 2).unwrap();
        let traj = simulate_dt(&model, &init, 1.0, xi, seed).unwrap();
        for e in &traj.events {
            let steps = e.time / xi;
            prop_assert!((steps - steps.round()).abs() < 1e-6);
            prop_assert!(steps.round() >= 1.0);
        }
    }

    #[test]
    fn replicate_seeds_do_not_depend_on_order(base in any::<u64>(), m in 1usize..40) {
        let seeds = derive_seed_list(base, m);
        let got = replicate_map(m, base, |k, seed| Ok((k, seed))).unwrap();
        for (k, (idx, seed)) in got.into_iter().enumerate() {
            prop_assert_eq!(idx, k);
            prop_assert_eq!(seed, seeds[k]);
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
    }
}
