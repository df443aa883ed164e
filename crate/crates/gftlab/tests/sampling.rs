use gftlab::audits::estimate_gft;
use gftlab::feasibility::ItemSet;
use gftlab::instances::{random_instance, RandomFamily};
use gftlab::mechanisms::MechanismSpec;
use gftlab::ocrs::{compose_ocrs, k_uniform_ocrs, knapsack_ocrs, unit_demand_ocrs, GreedyOcrs};
use proptest::prelude::*;

fn schemes() -> Vec<GreedyOcrs> {
    let sizes = vec![0.6, 0.3, 0.2, 0.7, 0.1, 0.4];
    vec![
        unit_demand_ocrs(6, 0.25).unwrap(),
        k_uniform_ocrs(6, 2, 0.25).unwrap(),
        knapsack_ocrs(sizes.clone(), 0.25).unwrap(),
        compose_ocrs(unit_demand_ocrs(6, 0.25).unwrap(), knapsack_ocrs(sizes, 0.25).unwrap()).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_subconstraints_are_subfamilies(seed in any::<u64>()) {
        let qhat = vec![0.2 / 6.0; 6];
        for o in schemes() {
            let sub = o.sample_subconstraint(&qhat, seed).unwrap();
            for s in ItemSet::full(6).subsets() {
                if s.is_subset(sub.ground()) && sub.is_feasible(s).unwrap() {
                    prop_assert!(o.base().is_feasible(s).unwrap(), "{}: {s:?}", o.name());
                }
            }
        }
    }
}

#[test]
fn estimates_do_not_depend_on_the_thread_count() {
    let inst = random_instance(4, RandomFamily::Uniform, 5).unwrap();
    let p: Vec<f64> = (0..4).map(|i| inst.buyer(i).survival_quantile(0.5).unwrap()).collect();
    let m = MechanismSpec::Fpp { theta_b: p.clone(), theta_s: p }.build(&inst).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate_gft(m.as_ref(), &inst, 30_001, 99).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    assert_ne!(one, estimate_gft(m.as_ref(), &inst, 30_001, 100).unwrap());
}
