use gftlab::audits::{first_best_gft, EvalMode};
use gftlab::oracle::{second_best_lp, second_best_lp_with, verify_ub_chain, Budget, DiscreteMarket};
use gftlab::{Constraint, Dist, MarketInstance};
use proptest::prelude::*;

fn small_discrete() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::btree_map(0u32..12, 1u32..6, 1..4).prop_map(|raw| {
        let total: u32 = raw.values().sum();
        raw.iter().map(|(&v, &w)| (v as f64 / 4.0, w as f64 / total as f64)).collect()
    })
}

fn bilateral(b: &[(f64, f64)], s: &[(f64, f64)], scale: f64) -> gftlab::Result<MarketInstance> {
    let scaled = |atoms: &[(f64, f64)]| Dist::discrete(atoms.iter().map(|&(v, p)| (v * scale, p)).collect()).unwrap();
    MarketInstance::bilateral(scaled(b), scaled(s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn second_best_is_homogeneous_and_below_first_best(b in small_discrete(), s in small_discrete()) {
        let Ok(inst) = bilateral(&b, &s, 1.0) else { return Ok(()) };
        let sb = second_best_lp(&DiscreteMarket::new(&inst).unwrap()).unwrap();
        let sb2 = second_best_lp(&DiscreteMarket::new(&bilateral(&b, &s, 2.0).unwrap()).unwrap()).unwrap();
        prop_assert!((sb2 - 2.0 * sb).abs() <= 1e-6 * (1.0 + sb.abs()), "{sb} vs {sb2}");
        let fb = first_best_gft(&inst, EvalMode::Exact).unwrap().mean;
        prop_assert!(sb <= fb + 1e-6);
        let post = second_best_lp_with(&DiscreteMarket::new(&inst).unwrap(), Budget::ExPost).unwrap();
        prop_assert!(post <= sb + 1e-6);
    }

    #[test]
    fn chain_holds_on_two_item_unit_demand(b0 in small_discrete(), s0 in small_discrete(), b1 in small_discrete(), s1 in small_discrete()) {
        let d = |a: &[(f64, f64)]| Dist::discrete(a.to_vec()).unwrap();
        let Ok(inst) = MarketInstance::new(vec![d(&b0), d(&b1)], vec![d(&s0), d(&s1)], Constraint::unit_demand(2)) else {
            return Ok(());
        };
        let report = verify_ub_chain(&DiscreteMarket::new(&inst).unwrap()).unwrap();
        prop_assert!(report.all_hold(), "{report:?}");
    }
}
