use gftlab::instances::{
    a1_first_best, a1_fpp_gft, a1_trade_probability, example_a1, random_instance, ExampleA3, InstanceSpec, RandomFamily,
    Rational,
};
use gftlab::Dist;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = RandomFamily> {
    prop_oneof![Just(RandomFamily::TwoAtom), Just(RandomFamily::LognormalDiscretized)]
}

fn atom_bits(d: &Dist) -> Vec<(u64, u64)> {
    d.as_discrete().unwrap().atoms().map(|(v, p)| (v.to_bits(), p.to_bits())).collect()
}

proptest! {
    #[test]
    fn discrete_instances_round_trip_bit_for_bit(n in 1usize..5, fam in family(), seed in any::<u64>()) {
        let inst = random_instance(n, fam, seed).unwrap();
        let text = InstanceSpec::from_instance(&inst).unwrap().to_json().unwrap();
        let back = InstanceSpec::from_json(&text).unwrap().realize().unwrap();
        prop_assert_eq!(back.n(), inst.n());
        prop_assert_eq!(back.constraint(), inst.constraint());
        for i in 0..n {
            prop_assert_eq!(atom_bits(back.buyer(i)), atom_bits(inst.buyer(i)));
            prop_assert_eq!(atom_bits(back.seller(i)), atom_bits(inst.seller(i)));
        }
        prop_assert_eq!(InstanceSpec::from_instance(&back).unwrap().to_json().unwrap(), text);
    }
}

#[test]
fn powers_of_two_prefix_sums() {
    // Σ_{j≤k} p_j = p_{k+1}(m − k − 1), checked independently of the constructor's own check.
    for m in 3..=40u32 {
        let ex = ExampleA3::new(m).unwrap();
        let expected_l = (m as f64 - (m as f64).log2()).ceil() as u32;
        assert_eq!(ex.l, expected_l, "m={m}");
        let total: Rational = ex.p.iter().copied().sum();
        assert_eq!(total, Rational::from_integer(1));
        let mut prefix = Rational::from_integer(0);
        for k in 0..ex.l as usize {
            prefix += ex.p[k];
            assert_eq!(prefix, ex.p[k + 1] * Rational::from_integer(m as i128 - k as i128 - 1), "m={m} k={k}");
        }
        let seller_mass: Rational = ex.seller.iter().map(|a| a.1).sum();
        assert_eq!(seller_mass, Rational::from_integer(1));
    }
}

#[test]
fn powers_of_two_m8_weights() {
    let ex = ExampleA3::new(8).unwrap();
    let r = |a, b| Rational::new(a, b);
    assert_eq!(ex.q, vec![r(1, 1), r(1, 7), r(4, 21), r(4, 15), r(2, 5), r(2, 3)]);
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::double_exponential::integrate(f, a, b, 1e-11).integral
}

#[test]
fn truncated_exponential_closed_forms_match_quadrature() {
    for t in [2.0, 5.0, 8.0, 12.0] {
        let inst = example_a1(t).unwrap();
        let (b, s) = (inst.buyer(0), inst.seller(0));
        let (lo, hi) = (0.0, t);
        // E[(b − s)⁺] = ∫ G(x)(1 − F(x)) dx for independent b and s.
        let fb = integrate(|x| s.cdf(x) * (1.0 - b.cdf(x)), lo, hi);
        assert!((fb - a1_first_best(t)).abs() < 1e-6 * fb.max(1e-3), "t={t}: {fb} vs {}", a1_first_best(t));
        let h = 1e-6;
        let r = integrate(|x| s.cdf(x) * (b.cdf(x + h) - b.cdf(x - h)) / (2.0 * h), lo + h, hi - h);
        assert!((r - a1_trade_probability(t)).abs() < 1e-6, "t={t}: {r} vs {}", a1_trade_probability(t));
        for p in [0.5, 1.0, t / 2.0, t - 1.0] {
            let b_tail = p * (1.0 - b.cdf(p)) + integrate(|x| 1.0 - b.cdf(x), p, hi);
            let s_head = p * s.cdf(p) - integrate(|x| s.cdf(x), lo, p);
            let gft = s.cdf(p) * b_tail - (1.0 - b.cdf(p)) * s_head;
            assert!((gft - a1_fpp_gft(t, p)).abs() < 1e-6 * gft.max(1e-3), "t={t} p={p}: {gft} vs {}", a1_fpp_gft(t, p));
        }
    }
}

#[test]
fn named_continuous_examples_round_trip() {
    let spec = InstanceSpec::named("a1", &[("t", 6.0)]);
    let again = InstanceSpec::from_json(&spec.to_json().unwrap()).unwrap();
    assert_eq!(again, spec);
    assert!(again.realize().is_ok());
    assert!(InstanceSpec::named("a1", &[]).realize().is_err());
}
