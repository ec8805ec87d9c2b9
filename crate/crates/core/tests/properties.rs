use dfcrp::io::{parse_crater_reader, read_draws, write_draws};
use dfcrp::mixture::Annotation;
use dfcrp::mixture::{ClusterCovariance, Hyperparams};
use dfcrp::partition::{
    dfcrp_marginal_logprob_exact, enumerate_valid_partitions, Concentration, FamilyVector,
    Permutation,
};
use dfcrp::sampler::{chain_rng, run_chain, ChainConfig, Draw};
use dfcrp::simulation::{generate_dataset, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family_vectors(max_n: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max_n).prop_flat_map(|n| proptest::collection::vec(0..n, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn marginals_normalize_and_ignore_item_order(
        fams in family_vectors(7),
        a in prop_oneof![Just(0.5), Just(1.0), Just(5.0)],
        seed in any::<u64>(),
    ) {
        let x = FamilyVector::new(fams).unwrap();
        let alpha = Concentration::new(a).unwrap();
        let order = Permutation::random(x.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let xp = x.reindexed(&order);
        let mut total = 0.0;
        for c in enumerate_valid_partitions(&x, 9).unwrap() {
            let p = dfcrp_marginal_logprob_exact(&c, alpha, &x, 9).unwrap();
            let q = dfcrp_marginal_logprob_exact(&c.reindexed(&order), alpha, &xp, 9).unwrap();
            prop_assert!((p.exp() - q.exp()).abs() < 1e-12);
            total += p.exp();
        }
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn covariance_is_psd_for_admissible_lambda(
        var_x in 1e-3f64..1e4,
        var_d in 1e-4f64..10.0,
        lambda in -1.0f64..=1.0,
    ) {
        let cov = ClusterCovariance::from_lambda(var_x, var_d, lambda);
        let m = cov.matrix();
        let closed = var_x * var_x * var_d * (1.0 - lambda * lambda);
        let scale = var_x * var_x * var_d;
        prop_assert!((m.determinant() - closed).abs() <= 1e-9 * scale);
        prop_assert!(closed >= 0.0);
        // Leading and all 2x2 principal minors.
        prop_assert!(var_x * var_x >= 0.0);
        prop_assert!(var_x * var_d - cov.cov_xd * cov.cov_xd >= -1e-12 * var_x * var_d);
    }

    #[test]
    fn simulated_truth_respects_families(seed in any::<u64>()) {
        let cfg = SimConfig { k_true: 12, ..SimConfig::default() };
        let data = generate_dataset(&cfg, &mut chain_rng(seed, 0)).unwrap();
        let x = data.families().unwrap();
        prop_assert!(data.truth.is_valid(&x));
        prop_assert_eq!(data.truth.len(), data.annotations.len());
    }

    #[test]
    fn ingestion_keeps_every_row(rows in proptest::collection::vec((0usize..5, -1e4f64..1e4, -1e4f64..1e4, 0.5f64..500.0), 1..60)) {
        let mut text = String::from("expert_id,x_px,y_px,diameter_px\n");
        for (e, x, y, d) in &rows {
            text.push_str(&format!("ex{e},{x},{y},{d}\n"));
        }
        let data = parse_crater_reader(text.as_bytes()).unwrap();
        prop_assert_eq!(data.annotations.len(), rows.len());
        for (a, (_, x, y, d)) in data.annotations.iter().zip(&rows) {
            prop_assert_eq!(a.x, *x);
            prop_assert_eq!(a.y, *y);
            prop_assert!((a.ld - d.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn draw_files_round_trip(
        alphas in proptest::collection::vec(1e-6f64..1e6, 0..20),
        n in 1usize..12,
    ) {
        let draws: Vec<Draw> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| Draw { chain_id: i % 4, scan_index: i * 7, alpha: a, labels: (0..n).map(|k| k % (i + 1)).collect() })
            .collect();
        let mut buf = Vec::new();
        write_draws(&mut buf, n, &draws).unwrap();
        let (m, back) = read_draws(buf.as_slice()).unwrap();
        prop_assert_eq!(m, n);
        prop_assert_eq!(back, draws);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_draw_respects_families(seed in any::<u64>(), n in 4usize..30, experts in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Annotation> = (0..n)
            .map(|i| Annotation {
                family: i % experts,
                x: 300.0 + rand::Rng::random_range(&mut rng, -30.0..30.0),
                y: 200.0 + rand::Rng::random_range(&mut rng, -30.0..30.0),
                ld: rand::Rng::random_range(&mut rng, 3.0..4.0),
            })
            .collect();
        let x = FamilyVector::new(data.iter().map(|a| a.family).collect()).unwrap();
        let config = ChainConfig {
            num_scans: 20,
            burn_in_scans: 0,
            thin_every: 1,
            seed,
            hyper: Hyperparams::simulation(),
            ..ChainConfig::default()
        };
        for d in run_chain(&data, &x, &config).unwrap() {
            prop_assert!(d.partition().is_valid(&x));
        }
    }
}
