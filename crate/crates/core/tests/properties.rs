//! Property tests for model ingestion and simulation invariants.

use kyleback::feedback::Strategy as TradingStrategy;
use kyleback::model::{load_model, to_config_string};
use kyleback::simulate::{filter_exact, filter_sde, PathBundle};
use kyleback::{Discretization64, MarketModel64};
use proptest::prelude::*;

/// Random valid config documents: distinct values, positive prior entries,
/// positive horizon.
fn valid_config() -> impl Strategy<Value = String> {
    let values = proptest::collection::vec(-10.0f64..10.0, 1..=4).prop_filter(
        "pairwise distinct values",
        |v| {
            v.iter()
                .enumerate()
                .all(|(i, a)| v[i + 1..].iter().all(|b| (a - b).abs() > 1e-6))
        },
    );
    let weights = proptest::collection::vec(0.05f64..1.0, 1..=4);
    (values, weights, 0.01f64..4.0, 1u64..1000).prop_filter_map(
        "matched lengths",
        |(values, weights, horizon, seed)| {
            if values.len() != weights.len() {
                return None;
            }
            let total: f64 = weights.iter().sum();
            let prior: Vec<String> = weights.iter().map(|w| format!("{:?}", w / total)).collect();
            let vals: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
            Some(format!(
                "[model]\nvalues = [{}]\nprior = [{}]\nhorizon = {horizon:?}\n\
                 [model.cost]\nvariant = \"sqrt\"\n\
                 [discretization]\nnum_steps = 8\nnum_paths = 16\nseed = {seed}\n",
                vals.join(", "),
                prior.join(", ")
            ))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loaded_models_satisfy_invariants(config in valid_config()) {
        let (model, disc): (MarketModel64, Discretization64) = load_model(&config).unwrap();
        let sum: f64 = model.prior.iter().sum();
        prop_assert_eq!(sum, 1.0);
        prop_assert!(model.prior.iter().all(|&p| p > 0.0));
        prop_assert!(model.horizon > 0.0);
        for i in 0..model.n_types() {
            for j in i + 1..model.n_types() {
                prop_assert_ne!(model.values[i], model.values[j]);
            }
        }
        prop_assert!(disc.num_steps >= 1 && disc.num_paths >= 1);
    }

    #[test]
    fn reload_is_idempotent(config in valid_config()) {
        let (model, disc): (MarketModel64, Discretization64) = load_model(&config).unwrap();
        let text = to_config_string(&model, &disc);
        let (model2, disc2): (MarketModel64, Discretization64) = load_model(&text).unwrap();
        // Bit-for-bit equality of every numeric field.
        prop_assert_eq!(&model, &model2);
        prop_assert_eq!(&disc, &disc2);
        prop_assert_eq!(text.clone(), to_config_string(&model2, &disc2));
    }

    #[test]
    fn filters_respect_price_bounds(
        config in valid_config(),
        rate_seed in 0u64..100,
    ) {
        let (model, disc): (MarketModel64, Discretization64) = load_model(&config).unwrap();
        let bundle = PathBundle::generate(&disc, model.horizon);
        // Random bounded constant strategy.
        let mut rng = kyleback::rng::SubstreamRng::new(rate_seed, 17);
        let rates: Vec<f64> = (0..model.n_types())
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        let strategy = TradingStrategy::Constant(rates);
        let lo = model.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = model.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for filter in [
            filter_exact(&model, &strategy, &bundle).unwrap(),
            filter_sde(&model, &strategy, &bundle).unwrap(),
        ] {
            for j in 0..bundle.num_paths() {
                for k in 0..=bundle.num_steps() {
                    let p = filter.price[(j, k)];
                    prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
                    let mass: f64 = (0..model.n_types())
                        .map(|i| filter.x[(j, k, i)])
                        .sum();
                    prop_assert_eq!(mass, 1.0);
                    for i in 0..model.n_types() {
                        let xi = filter.x[(j, k, i)];
                        if model.n_types() == 1 {
                            // Degenerate no-information instance: all mass
                            // on the single type.
                            prop_assert_eq!(xi, 1.0);
                        } else {
                            prop_assert!(xi > 0.0 && xi < 1.0);
                        }
                    }
                }
            }
        }
    }
}
