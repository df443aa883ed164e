use gftlab::distributions::{iron, quantile_pair_check, trade_probability, Dist, Side};
use proptest::prelude::*;

fn discrete() -> impl Strategy<Value = Dist> {
    prop::collection::btree_map(0u32..40, 1u32..20, 1..7).prop_map(|raw| {
        let total: u32 = raw.values().sum();
        let atoms = raw.iter().map(|(&v, &w)| (v as f64 / 4.0, w as f64 / total as f64)).collect();
        Dist::discrete(atoms).unwrap()
    })
}

fn uniform() -> impl Strategy<Value = Dist> {
    (0.0f64..5.0, 0.1f64..5.0).prop_map(|(lo, w)| Dist::uniform(lo, lo + w).unwrap())
}

fn any_dist() -> impl Strategy<Value = Dist> {
    prop_oneof![discrete(), uniform()]
}

proptest! {
    #[test]
    fn quantile_pair_dominates(b in any_dist(), s in any_dist()) {
        prop_assume!(trade_probability(&b, &s) > 1e-9);
        let pair = quantile_pair_check(&b, &s).unwrap();
        prop_assert!(pair.ok, "x={} y={}", pair.x, pair.y);
    }

    #[test]
    fn ironed_virtual_values_are_monotone(d in any_dist()) {
        let (lo, hi) = d.support();
        for side in [Side::Buyer, Side::Seller] {
            let ir = iron(&d, side);
            let points: Vec<f64> = match d.as_discrete() {
                Some(disc) => disc.values().to_vec(),
                None => (1..40).map(|k| lo + (hi - lo) * k as f64 / 40.0).collect(),
            };
            let vals: Vec<f64> = points.iter().map(|&v| ir.value(v).unwrap()).collect();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-9, "{side:?}: {vals:?}");
            }
        }
    }

    #[test]
    fn discrete_trade_probability_is_the_double_sum(b in discrete(), s in discrete()) {
        let (bd, sd) = (b.as_discrete().unwrap(), s.as_discrete().unwrap());
        let brute: f64 = bd.atoms().flat_map(|(x, p)| sd.atoms().map(move |(y, q)| if x >= y { p * q } else { 0.0 })).sum();
        prop_assert!((trade_probability(&b, &s) - brute).abs() < 1e-12);
    }
}

#[test]
fn uniform_buyer_needs_no_ironing() {
    let d = Dist::uniform(0.0, 1.0).unwrap();
    let ir = iron(&d, Side::Buyer);
    for k in 0..=20 {
        let b = k as f64 / 20.0;
        assert!((ir.value(b).unwrap() - (2.0 * b - 1.0)).abs() < 1e-9);
    }
}

#[test]
fn revenue_equals_virtual_value_integral() {
    // ∫_p^hi φ̃ f = p (1 - F(p)) for a buyer.
    for d in [Dist::uniform(0.0, 1.0).unwrap(), Dist::uniform(1.0, 3.0).unwrap()] {
        let ir = iron(&d, Side::Buyer);
        let (lo, hi) = d.support();
        for k in 1..10 {
            let p = lo + (hi - lo) * k as f64 / 10.0;
            let tail = ir.integral_to(1.0 - d.cdf(p));
            let area = p * (1.0 - d.cdf(p));
            assert!((tail - area).abs() < 1e-6, "p={p}: {tail} vs {area}");
        }
    }
}
