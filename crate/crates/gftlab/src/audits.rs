//! Estimation and certification of mechanism properties: gains from trade,
//! first-best, budget balance, individual rationality and seller
//! truthfulness.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::ItemSet;
use crate::mc::{self, Estimate, McConfig, McRng};
use crate::mechanisms::{MarketInstance, Mechanism, Outcome, Profile};

/// Header line opening every CSV table.
pub const CSV_VERSION: &str = "#gft-lab-v1";
/// Utility tolerance under which a deviation does not count as profitable.
pub const DSIC_TOL: f64 = 1e-9;
const IR_TOL: f64 = 1e-9;
/// Quantile points used for continuous sellers in deviation grids.
pub const CONTINUOUS_GRID_POINTS: usize = 33;

/// How an expectation over profiles is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EvalMode {
    /// Weighted enumeration of every profile; needs discrete distributions.
    Exact,
    Mc { samples: u64, seed: u64 },
}

/// Expectations of the `cols` columns written by `f` for each profile.
pub fn expectation<F>(inst: &MarketInstance, mode: EvalMode, cols: usize, f: F) -> Result<Vec<Estimate>>
where
    F: Fn(&Profile, &mut [f64]) -> Result<()> + Sync,
{
    match mode {
        EvalMode::Exact => {
            let grid = inst.profile_space()?;
            let mut acc = vec![0.0; cols];
            let mut row = vec![0.0; cols];
            for (flat, p) in grid.iter() {
                if p == 0.0 {
                    continue;
                }
                row.iter_mut().for_each(|x| *x = 0.0);
                f(&Profile::from_flat(&flat), &mut row)?;
                acc.iter_mut().zip(&row).for_each(|(a, x)| *a += p * x);
            }
            Ok(acc.into_iter().map(Estimate::exact).collect())
        }
        EvalMode::Mc { samples, seed } => {
            check_samples(samples)?;
            let tally = mc::try_run(&McConfig::new(samples, seed), cols, |rng, row| f(&inst.sample_profile(rng), row))?;
            Ok((0..cols).map(|c| tally.estimate(c)).collect())
        }
    }
}

fn check_samples(samples: u64) -> Result<()> {
    if samples == 0 {
        return Err(Error::Parameter("at least one sample is required".into()));
    }
    Ok(())
}

/// Monte Carlo gains from trade of `m`.
pub fn estimate_gft(m: &dyn Mechanism, inst: &MarketInstance, samples: u64, seed: u64) -> Result<Estimate> {
    check_samples(samples)?;
    let tally = mc::try_run(&McConfig::new(samples, seed), 1, |rng, row| {
        let profile = inst.sample_profile(rng);
        row[0] = m.outcome(inst, &profile, rng)?.gft;
        Ok(())
    })?;
    Ok(tally.estimate(0))
}

/// Exact gains from trade of `m` on a discrete instance.
pub fn exact_gft(m: &dyn Mechanism, inst: &MarketInstance) -> Result<f64> {
    Ok(m.exact(inst)?.gft)
}

/// `E[max_{S ∈ F} Σ_{i ∈ S} (b_i - s_i)^+]`.
pub fn first_best_gft(inst: &MarketInstance, mode: EvalMode) -> Result<Estimate> {
    first_best_gft_on(inst, ItemSet::full(inst.n()), mode)
}

/// First-best restricted to `items`, under the constraint restricted to them.
pub fn first_best_gft_on(inst: &MarketInstance, items: ItemSet, mode: EvalMode) -> Result<Estimate> {
    let n = inst.n();
    let est = expectation(inst, mode, 1, |p, row| {
        let w: Vec<f64> = (0..n).map(|i| if items.contains(i) { (p.b[i] - p.s[i]).max(0.0) } else { 0.0 }).collect();
        row[0] = inst.constraint().max_weight_set(&w)?.1;
        Ok(())
    })?;
    Ok(est[0])
}

/// Per-profile and ex-ante budget slack, buyer payment minus seller payments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetAudit {
    pub expost_min_slack: f64,
    pub exante_slack: Estimate,
}

pub fn budget_audit(m: &dyn Mechanism, inst: &MarketInstance, samples: u64, seed: u64) -> Result<BudgetAudit> {
    check_samples(samples)?;
    let tally = mc::try_run(&McConfig::new(samples, seed), 1, |rng, row| {
        let profile = inst.sample_profile(rng);
        row[0] = m.outcome(inst, &profile, rng)?.budget_slack();
        Ok(())
    })?;
    Ok(BudgetAudit { expost_min_slack: tally.min(0), exante_slack: tally.estimate(0) })
}

/// Exact budget audit by enumeration.
pub fn budget_audit_exact(m: &dyn Mechanism, inst: &MarketInstance) -> Result<BudgetAudit> {
    let summary = m.exact(inst)?;
    let expost = match summary.expost_min_slack {
        Some(v) => v,
        None => min_over_profiles(inst, |p| Ok(m.outcome(inst, p, &mut McRng::seed_from_u64(0))?.budget_slack()))?,
    };
    Ok(BudgetAudit { expost_min_slack: expost, exante_slack: Estimate::exact(summary.exante_slack()) })
}

fn min_over_profiles(inst: &MarketInstance, f: impl Fn(&Profile) -> Result<f64>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (flat, p) in inst.profile_space()?.iter() {
        if p > 0.0 {
            best = best.min(f(&Profile::from_flat(&flat))?);
        }
    }
    Ok(best)
}

fn ir_violated(out: &Outcome, profile: &Profile, n: usize) -> bool {
    out.buyer_utility(profile) < -IR_TOL || (0..n).any(|i| out.seller_utility(profile, i) < -IR_TOL)
}

/// Deviation reports per seller: support atoms for discrete sellers,
/// midpoint quantiles `(k + ½)/33` for continuous ones.
pub fn default_deviation_grid(inst: &MarketInstance) -> Result<Vec<Vec<f64>>> {
    (0..inst.n())
        .map(|i| match inst.seller(i).as_discrete() {
            Some(d) => Ok(d.values().to_vec()),
            None => (0..CONTINUOUS_GRID_POINTS)
                .map(|k| inst.seller(i).quantile((k as f64 + 0.5) / CONTINUOUS_GRID_POINTS as f64))
                .collect(),
        })
        .collect()
}

/// Best gain of seller `i` from a misreport in `grid` at one profile.
/// Randomized mechanisms see identical randomness under every report.
fn deviation_gain(m: &dyn Mechanism, inst: &MarketInstance, profile: &Profile, grid: &[Vec<f64>], rng: &McRng) -> Result<f64> {
    let truthful = m.outcome(inst, profile, &mut rng.clone())?;
    let mut best = f64::NEG_INFINITY;
    for (i, reports) in grid.iter().enumerate() {
        let honest = truthful.seller_utility(profile, i);
        for &r in reports {
            let out = m.outcome(inst, &profile.with_seller(i, r), &mut rng.clone())?;
            best = best.max(out.seller_utility(profile, i) - honest);
        }
    }
    Ok(best)
}

fn check_grid(inst: &MarketInstance, grid: &[Vec<f64>]) -> Result<()> {
    if grid.len() != inst.n() || grid.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Parameter(format!("deviation grid needs {} finite rows", inst.n())));
    }
    Ok(())
}

/// Largest single-seller misreport gain over sampled opponent profiles.
pub fn dsic_audit_sellers(m: &dyn Mechanism, inst: &MarketInstance, grid: &[Vec<f64>], samples: u64, seed: u64) -> Result<f64> {
    check_samples(samples)?;
    check_grid(inst, grid)?;
    let tally = mc::try_run(&McConfig::new(samples, seed), 1, |rng, row| {
        let profile = inst.sample_profile(rng);
        row[0] = deviation_gain(m, inst, &profile, grid, rng)?;
        Ok(())
    })?;
    Ok(tally.max(0))
}

/// Largest single-seller misreport gain over every profile of a discrete
/// instance.
pub fn dsic_audit_sellers_exact(m: &dyn Mechanism, inst: &MarketInstance, grid: &[Vec<f64>]) -> Result<f64> {
    check_grid(inst, grid)?;
    let rng = McRng::seed_from_u64(0);
    let worst = min_over_profiles(inst, |p| Ok(-deviation_gain(m, inst, p, grid, &rng)?))?;
    Ok(-worst)
}

/// One row of an audit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub instance: String,
    /// Monte Carlo draws, or the number of enumerated profiles when exact.
    pub samples: u64,
    pub seed: u64,
    pub exact: bool,
    pub gft_mean: f64,
    pub gft_stderr: f64,
    pub bb_expost_min_slack: f64,
    pub bb_exante_slack: Estimate,
    pub ir_violations: u64,
    pub dsic_max_gain: f64,
}

impl AuditReport {
    pub const COLUMNS: [&'static str; 10] =
        ["mechanism", "instance", "samples", "seed", "gft_mean", "gft_stderr", "bb_expost_min", "bb_exante", "ir_viol", "dsic_gain"];

    /// Version line followed by the column header.
    pub fn csv_header() -> String {
        format!("{CSV_VERSION}\n{}", Self::COLUMNS.join(","))
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&self.mechanism),
            csv_field(&self.instance),
            self.samples,
            self.seed,
            self.gft_mean,
            self.gft_stderr,
            self.bb_expost_min_slack,
            self.bb_exante_slack.mean,
            self.ir_violations,
            self.dsic_max_gain
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Full Monte Carlo audit; truthfulness is checked on a tenth of the draws.
pub fn audit(m: &dyn Mechanism, inst: &MarketInstance, instance: &str, samples: u64, seed: u64) -> Result<AuditReport> {
    check_samples(samples)?;
    let n = inst.n();
    let tally = mc::try_run(&McConfig::new(samples, seed), 3, |rng, row| {
        let profile = inst.sample_profile(rng);
        let out = m.outcome(inst, &profile, rng)?;
        row[0] = out.gft;
        row[1] = out.budget_slack();
        row[2] = f64::from(u8::from(ir_violated(&out, &profile, n)));
        Ok(())
    })?;
    let grid = default_deviation_grid(inst)?;
    let dsic = dsic_audit_sellers(m, inst, &grid, (samples / 10).max(1), mc::derive_seed(seed, 1))?;
    Ok(AuditReport {
        mechanism: m.name(),
        instance: instance.to_string(),
        samples,
        seed,
        exact: false,
        gft_mean: tally.mean(0),
        gft_stderr: tally.stderr(0),
        bb_expost_min_slack: tally.min(1),
        bb_exante_slack: tally.estimate(1),
        ir_violations: (tally.mean(2) * tally.count() as f64).round() as u64,
        dsic_max_gain: dsic.max(0.0),
    })
}

/// Exact audit of a deterministic mechanism on a discrete instance.
pub fn audit_exact(m: &dyn Mechanism, inst: &MarketInstance, instance: &str) -> Result<AuditReport> {
    let summary = m.exact(inst)?;
    let n = inst.n();
    let mut rng = McRng::seed_from_u64(0);
    let (mut min_slack, mut ir) = (f64::INFINITY, 0u64);
    let space = inst.profile_space()?;
    for (flat, p) in space.iter() {
        if p == 0.0 {
            continue;
        }
        let profile = Profile::from_flat(&flat);
        let out = m.outcome(inst, &profile, &mut rng)?;
        min_slack = min_slack.min(out.budget_slack());
        ir += u64::from(ir_violated(&out, &profile, n));
    }
    let grid = default_deviation_grid(inst)?;
    let dsic = dsic_audit_sellers_exact(m, inst, &grid)?;
    Ok(AuditReport {
        mechanism: m.name(),
        instance: instance.to_string(),
        samples: space.len() as u64,
        seed: 0,
        exact: true,
        gft_mean: summary.gft,
        gft_stderr: 0.0,
        bb_expost_min_slack: min_slack,
        bb_exante_slack: Estimate::exact(summary.exante_slack()),
        ir_violations: ir,
        dsic_max_gain: dsic.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Dist;
    use crate::feasibility::Constraint;
    use crate::mechanisms::{BuyerOffering, Fpp};

    fn uniform_bilateral() -> MarketInstance {
        MarketInstance::bilateral(Dist::uniform(0.0, 1.0).unwrap(), Dist::uniform(0.0, 1.0).unwrap()).unwrap()
    }

    fn grid(k: usize) -> Dist {
        Dist::discrete((1..=k).map(|j| (j as f64 / k as f64, 1.0 / k as f64)).collect()).unwrap()
    }

    /// Posted prices where the seller is paid its own report.
    struct PayAsBid(Vec<f64>);

    impl Mechanism for PayAsBid {
        fn name(&self) -> String {
            "pay_as_bid".into()
        }

        fn outcome(&self, inst: &MarketInstance, profile: &Profile, rng: &mut McRng) -> Result<Outcome> {
            let mut out = Fpp::symmetric(self.0.clone()).outcome(inst, profile, rng)?;
            for i in out.traded.iter() {
                out.seller_payments[i] = profile.s[i];
            }
            Ok(out)
        }
    }

    #[test]
    fn degenerate_always_trade_has_zero_error() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(0.0)).unwrap();
        let m = Fpp::symmetric(vec![0.5]);
        let e = estimate_gft(&m, &inst, 1000, 1).unwrap();
        assert_eq!(e, Estimate { mean: 1.0, stderr: 0.0 });
    }

    #[test]
    fn half_price_on_uniform_bilateral_tends_to_one_eighth() {
        let e = estimate_gft(&Fpp::symmetric(vec![0.5]), &uniform_bilateral(), 200_000, 5).unwrap();
        assert!((e.mean - 0.125).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn first_best_examples() {
        let fb = first_best_gft(&uniform_bilateral(), EvalMode::Mc { samples: 200_000, seed: 3 }).unwrap();
        assert!((fb.mean - 1.0 / 6.0).abs() < 4.0 * fb.stderr);
        let sure = MarketInstance::new(vec![Dist::point(1.0); 3], vec![Dist::point(0.0); 3], Constraint::unit_demand(3)).unwrap();
        assert_eq!(first_best_gft(&sure, EvalMode::Exact).unwrap().mean, 1.0);
        let add = sure.with_constraint(Constraint::additive(3)).unwrap();
        assert_eq!(first_best_gft_on(&add, ItemSet::from_indices([0, 2]), EvalMode::Exact).unwrap().mean, 2.0);
    }

    #[test]
    fn no_trade_instance_has_zero_gft() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(1.0)).unwrap();
        assert_eq!(exact_gft(&Fpp::symmetric(vec![1.5]), &inst).unwrap(), 0.0);
    }

    #[test]
    fn exact_and_mc_gft_agree() {
        let inst = MarketInstance::bilateral(grid(5), grid(4)).unwrap();
        for m in [Box::new(Fpp::symmetric(vec![0.6])) as Box<dyn Mechanism>, Box::new(BuyerOffering)] {
            let exact = exact_gft(m.as_ref(), &inst).unwrap();
            let e = estimate_gft(m.as_ref(), &inst, 100_000, 9).unwrap();
            assert!((e.mean - exact).abs() <= 4.0 * e.stderr, "{}: {exact} vs {e:?}", m.name());
        }
    }

    #[test]
    fn posted_prices_are_expost_balanced_and_truthful() {
        let inst = MarketInstance::bilateral(grid(6), grid(6)).unwrap();
        let m = Fpp::new(vec![0.7], vec![0.5]).unwrap();
        let bb = budget_audit(&m, &inst, 20_000, 2).unwrap();
        assert!(bb.expost_min_slack >= 0.0);
        let exact = budget_audit_exact(&m, &inst).unwrap();
        assert!(exact.expost_min_slack >= 0.0);
        let g = default_deviation_grid(&inst).unwrap();
        assert!(dsic_audit_sellers_exact(&m, &inst, &g).unwrap() <= DSIC_TOL);
        assert!(dsic_audit_sellers(&m, &inst, &g, 2_000, 4).unwrap() <= DSIC_TOL);
    }

    #[test]
    fn pay_as_bid_is_caught() {
        let inst = MarketInstance::bilateral(grid(4), grid(4)).unwrap();
        let m = PayAsBid(vec![0.75]);
        let g = default_deviation_grid(&inst).unwrap();
        assert!(dsic_audit_sellers_exact(&m, &inst, &g).unwrap() > 0.2);
        assert!(dsic_audit_sellers(&m, &inst, &g, 500, 1).unwrap() > 0.2);
    }

    #[test]
    fn buyer_offering_is_exante_balanced() {
        let inst = MarketInstance::bilateral(grid(5), grid(5)).unwrap();
        let bb = budget_audit(&BuyerOffering, &inst, 100_000, 8).unwrap();
        assert!(bb.exante_slack.mean.abs() <= 3.0 * bb.exante_slack.stderr.max(1e-12), "{bb:?}");
    }

    #[test]
    fn continuous_grid_uses_midpoint_quantiles() {
        let g = default_deviation_grid(&uniform_bilateral()).unwrap();
        assert_eq!(g[0].len(), 33);
        assert!((g[0][0] - 0.5 / 33.0).abs() < 1e-12);
    }

    #[test]
    fn report_csv_and_json() {
        let inst = MarketInstance::bilateral(grid(3), grid(3)).unwrap();
        let r = audit_exact(&Fpp::symmetric(vec![2.0 / 3.0]), &inst, "grid3").unwrap();
        assert!(r.exact && r.samples == 9 && r.ir_violations == 0);
        assert!(AuditReport::csv_header().starts_with("#gft-lab-v1\nmechanism,instance,samples"));
        assert_eq!(r.csv_row().split(',').count(), 10);
        let back: AuditReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let mc = audit(&Fpp::symmetric(vec![2.0 / 3.0]), &inst, "grid3", 5_000, 1).unwrap();
        assert!((mc.gft_mean - r.gft_mean).abs() < 4.0 * mc.gft_stderr);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(estimate_gft(&BuyerOffering, &uniform_bilateral(), 0, 1), Err(Error::Parameter(_))));
    }
}
