use proptest::prelude::*;
use spatcount::model::{kernel, AugmentedState, ModelParams};
use spatcount::oracle::allocation_marginal_check;
use spatcount::posterior::{quantile, rhat, summarize};
use spatcount::sampler::run_chain;
use spatcount::*;

fn grid_and_center() -> impl Strategy<Value = (usize, usize, f64, f64, f64, f64)> {
    (1usize..7, 1usize..7, 0.2f64..2.0, -3.0f64..8.0, -3.0f64..8.0, 0.1f64..3.0)
}

proptest! {
    #[test]
    fn factored_kernel_matches_direct((rows, cols, spacing, cx, cy, sigma) in grid_and_center()) {
        let traps = TrapArray::grid(rows, cols, spacing, Point::new(0.0, 0.0)).unwrap();
        let c = Point::new(cx, cy);
        let mut row = vec![0.0; traps.len()];
        let sum = traps.kernel_row(c, sigma, &mut row);
        let mut repr = vec![0.0; traps.kernel_repr_len()];
        let repr_sum = traps.kernel_repr(c, sigma, &mut repr);
        let mut direct_sum = 0.0;
        for (r, x) in traps.coords().iter().enumerate() {
            let k = kernel(c.dist(x), sigma).unwrap();
            direct_sum += k;
            // Rounding of the exponent scales with its magnitude.
            let tol = if k > 0.0 { 1e-15 * (2.0 + k.ln().abs()) * k } else { 0.0 } + 1e-290;
            prop_assert!((row[r] - k).abs() <= tol, "{} vs {}", row[r], k);
            prop_assert!((traps.kernel_at(&repr, r) - k).abs() <= tol);
        }
        let tol = 1e-12 * direct_sum + 1e-290;
        prop_assert!((sum - direct_sum).abs() <= tol);
        prop_assert!((repr_sum - direct_sum).abs() <= tol);
    }

    #[test]
    fn rhat_affine_invariant(
        a in proptest::collection::vec(-5.0f64..5.0, 12),
        b in proptest::collection::vec(-5.0f64..5.0, 12),
        shift in -100.0f64..100.0,
        scale in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
    ) {
        let base = rhat(&[&a, &b]).unwrap();
        let ta: Vec<f64> = a.iter().map(|v| shift + scale * v).collect();
        let tb: Vec<f64> = b.iter().map(|v| shift + scale * v).collect();
        let moved = rhat(&[&ta, &tb]).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base);
        prop_assert!(base > 0.0);
    }

    #[test]
    fn quantiles_are_monotone(mut x in proptest::collection::vec(-50.0f64..50.0, 1..200)) {
        x.sort_by(|a, b| a.total_cmp(b));
        let q: Vec<f64> = [0.0, 0.025, 0.5, 0.975, 1.0].iter().map(|&p| quantile(&x, p)).collect();
        prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(q[0], x[0]);
        prop_assert_eq!(q[4], x[x.len() - 1]);
    }

    #[test]
    fn allocation_identity(n in 0u32..4, l in proptest::collection::vec(0.0f64..3.0, 1..4)) {
        let c = allocation_marginal_check(n, &l).unwrap();
        prop_assert!(c.holds, "{:?}", c);
    }

    #[test]
    fn marginal_likelihood_ignores_inactive_centers(
        cx in -1.0f64..4.0, cy in -1.0f64..4.0, ox in -1.0f64..4.0, oy in -1.0f64..4.0,
    ) {
        let traps = TrapArray::grid(2, 3, 1.0, Point::new(0.0, 0.0)).unwrap();
        let data = CountData::new(vec![vec![1, 0]; 6]).unwrap();
        let params = ModelParams::new(0.7, 0.4, 0.5).unwrap();
        let a = AugmentedState::new(vec![Point::new(cx, cy), Point::new(0.0, 0.0)], vec![true, false]).unwrap();
        let b = AugmentedState::new(vec![Point::new(cx, cy), Point::new(ox, oy)], vec![true, false]).unwrap();
        prop_assert_eq!(
            model::marginal_loglik(&data, &params, &a, &traps),
            model::marginal_loglik(&data, &params, &b, &traps)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn summaries_are_ordered_and_bounded(seed in 0u64..1_000) {
        let scn = Scenario {
            name: "p".into(),
            layout: TrapLayout::Grid { rows: 3, cols: 3, spacing: 1.0 },
            buffer: 1.5,
            sigma: 0.6,
            lambda0: 0.5,
            n_true: 5,
            occasions: 2,
            marked: 0,
            seed,
        };
        let truth = simulator::simulate_dataset(&scn).unwrap();
        let problem = Problem { data: &truth.counts, traps: &truth.traps, space: &truth.space, marked: None };
        let cfg = McmcConfig { augmentation: 15, iterations: 600, burn_in: 100, thin: 2, seed, ..Default::default() };
        let chains: Vec<ChainOutput> = (0..2)
            .map(|c| run_chain(problem, &PriorSpec::default(), &cfg, c).unwrap())
            .collect();
        let s = summarize(&chains, &truth.space).unwrap();
        for (_, p) in s.rows() {
            prop_assert!(p.q025 <= p.q50 && p.q50 <= p.q975);
            prop_assert!(p.sd >= 0.0);
        }
        prop_assert!(s.n.q025 >= 0.0 && s.n.q975 <= 15.0 && s.n.mode >= 0.0 && s.n.mode <= 15.0);
        let area = truth.space.area();
        prop_assert_eq!(s.density.mean, s.n.mean / area);
        prop_assert_eq!(s.density.q975, s.n.q975 / area);
        prop_assert_eq!(s.density.mode, s.n.mode / area);
        prop_assert!(s.n.rhat.is_some());
    }
}
