mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use polymodel::backtest::metrics::max_drawdown;
use polymodel::backtest::{rebalance, PortfolioState, WeightScheme};
use polymodel::risk::lts;
use polymodel::{ols_fit, predict, pvalue_score, ridge_fit, select_factors, AlignedPair, MonthIndex, PValueScore, ShuffleConfig};

fn pair_strategy() -> impl Strategy<Value = AlignedPair> {
    (20usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-0.1f64..0.1, n),
            prop::collection::vec(-0.1f64..0.1, n),
            prop::collection::vec(-1.0f64..1.0, 5),
        )
            .prop_map(|(x, noise, beta)| {
                let y = x
                    .iter()
                    .zip(&noise)
                    .map(|(v, e)| beta[0] + beta[1] * v + beta[2] * v * v + 0.2 * e)
                    .collect();
                AlignedPair::from_vectors(y, x).unwrap()
            })
    })
}

fn well_spread(pair: &AlignedPair) -> bool {
    let n = pair.x.len() as f64;
    let mean = pair.x.iter().sum::<f64>() / n;
    pair.x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n > 1e-4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_shrinks_coefficient_norm(pair in pair_strategy(), l1 in 0.0f64..1.0, dl in 1e-3f64..5.0) {
        prop_assume!(well_spread(&pair));
        let a = ridge_fit(&pair, l1).unwrap();
        let b = ridge_fit(&pair, l1 + dl).unwrap();
        prop_assert!(b.coeffs.norm() <= a.coeffs.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn ridge_r2_never_beats_ols(pair in pair_strategy(), lambda in 1e-6f64..2.0) {
        prop_assume!(well_spread(&pair));
        if let Ok(ols) = ols_fit(&pair) {
            let r = ridge_fit(&pair, lambda).unwrap();
            prop_assert!(r.r_squared <= ols.r_squared + 1e-12);
        }
    }

    #[test]
    fn prediction_ignores_affine_rescaling(pair in pair_strategy(), scale in 0.1f64..50.0, shift in -5.0f64..5.0, probe in -0.1f64..0.1) {
        prop_assume!(well_spread(&pair));
        let moved = AlignedPair::from_vectors(pair.y.clone(), pair.x.iter().map(|v| v * scale + shift).collect()).unwrap();
        let a = ridge_fit(&pair, 1e-4).unwrap();
        let b = ridge_fit(&moved, 1e-4).unwrap();
        prop_assert!((predict(&a, probe) - predict(&b, probe * scale + shift)).abs() < 1e-9);
    }

    #[test]
    fn pvalue_bounds(pair in pair_strategy(), n in 50usize..200, seed in any::<u64>()) {
        prop_assume!(well_spread(&pair));
        let s = pvalue_score(&pair, &ShuffleConfig { n_shuffles: n, seed, ..Default::default() }).unwrap();
        prop_assert!(s.p_value >= 1.0 / (n as f64 + 1.0) && s.p_value <= 1.0);
        prop_assert!(s.score >= 0.0);
        prop_assert!((s.score + s.p_value.ln()).abs() < 1e-12);
    }

    #[test]
    fn raising_the_threshold_never_grows_gamma(scores in prop::collection::vec(0.0f64..7.0, 1..20), t1 in 0.0f64..7.0, dt in 0.0f64..3.0) {
        let as_of = MonthIndex::new(2020, 1).unwrap();
        let scores: Vec<PValueScore> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| PValueScore {
                fund: "F".into(),
                factor: format!("X{i}"),
                as_of,
                r2_observed: 0.1,
                p_value: (-s).exp(),
                score: *s,
                degenerate: false,
            })
            .collect();
        let lo = select_factors(&scores, t1).unwrap();
        let hi = select_factors(&scores, t1 + dt).unwrap();
        prop_assert!(hi.gamma.is_subset(&lo.gamma));
    }

    #[test]
    fn weights_sum_to_one(aum in prop::collection::vec(0.0f64..1e9, 1..12), weighted in any::<bool>()) {
        let funds: Vec<String> = (0..aum.len()).map(|i| format!("F{i}")).collect();
        let selected: BTreeSet<String> = funds.iter().cloned().collect();
        let aum_map: BTreeMap<String, f64> = funds.iter().cloned().zip(aum.iter().copied()).collect();
        let scheme = if weighted { WeightScheme::AumWeighted } else { WeightScheme::Even };
        let state = rebalance(&PortfolioState::initial(MonthIndex::new(2020, 1).unwrap()), &selected, scheme, &aum_map);
        let total: f64 = state.holdings.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(state.holdings.values().all(|w| *w >= 0.0));
    }

    #[test]
    fn aum_weights_are_scale_invariant(aum in prop::collection::vec(1.0f64..1e9, 1..12), k in 1e-3f64..1e3) {
        let funds: Vec<String> = (0..aum.len()).map(|i| format!("F{i}")).collect();
        let selected: BTreeSet<String> = funds.iter().cloned().collect();
        let a: BTreeMap<String, f64> = funds.iter().cloned().zip(aum.iter().copied()).collect();
        let b: BTreeMap<String, f64> = a.iter().map(|(f, v)| (f.clone(), v * k)).collect();
        let s0 = PortfolioState::initial(MonthIndex::new(2020, 1).unwrap());
        let wa = rebalance(&s0, &selected, WeightScheme::AumWeighted, &a);
        let wb = rebalance(&s0, &selected, WeightScheme::AumWeighted, &b);
        for (f, w) in &wa.holdings {
            prop_assert!((w - wb.holdings[f]).abs() < 1e-12);
        }
    }

    #[test]
    fn drawdown_is_a_fraction(values in prop::collection::vec(0.01f64..10.0, 1..50)) {
        let d = max_drawdown(&values);
        prop_assert!((0.0..1.0).contains(&d));
    }

    #[test]
    fn kappa_penalizes_lts(lta in -0.1f64..0.1, svar in 1e-4f64..1.0, k1 in 0.0f64..1.0, dk in 1e-3f64..1.0) {
        prop_assert!(lts(lta, svar, k1 + dk) < lts(lta, svar, k1));
    }
}
