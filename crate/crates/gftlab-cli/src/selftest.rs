//! Acceptance suite: one verdict per criterion, each made of named checks.

use std::f64::consts::E;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gftlab::audits::{
    budget_audit, default_deviation_grid, dsic_audit_sellers_exact, estimate_gft, exact_gft,
    expectation, first_best_gft, EvalMode,
};
use gftlab::bounds::{
    benchmark_decomposition, best_bilateral_fpp, bilateral_first_best, brustle_sd_upper, hl_split, opt_b,
    prophet_fpp, prophet_reward, prophet_threshold, virtual_surplus_sum, z_concentration_check,
};
use gftlab::distributions::quantile_pair_check;
use gftlab::instances::{
    a1_first_best, a1_fpp_gft, a1_trade_probability, example_a1, example_a2, example_a2_discrete, matching_market,
    random_instance, ratio_f64, ExampleA3, RandomFamily,
};
use gftlab::mc::Estimate;
use gftlab::mechanisms::{
    reduction_rule, run_fpp, run_sapp, sapp_exact, unlikely_trade_rule, AllocationRule, BuyerOffering, Fpp, Sapp,
    SellerOffering,
};
use gftlab::numeric::golden_max;
use gftlab::ocrs::{compose_ocrs, estimate_selectability, knapsack_ocrs, unit_demand_ocrs};
use gftlab::oracle::{marginal_check, verify_ub_chain, DiscreteMarket, CHAIN_TOL};
use gftlab::{Constraint, Dist, ItemSet, MarketInstance, Mechanism, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Width of every Monte Carlo band, in standard errors.
pub const SIGMA_BAND: f64 = 3.0;
/// Band for Monte Carlo against exact agreement.
pub const AGREEMENT_BAND: f64 = 4.0;
/// Tolerance on exact rational and float identities.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance on quadrature quantities.
pub const QUADRATURE_TOL: f64 = 1e-4;
/// Sample multiplier for the single rerun of a failed Monte Carlo criterion.
pub const RERUN_FACTOR: u64 = 4;

const BASE_SEED: u64 = 20_240_601;

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    /// Whether the verdict comes from the rerun at [`RERUN_FACTOR`] samples.
    pub rerun: bool,
    pub elapsed: Duration,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn line(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        format!(
            "criterion {} {}: {} checks, {} failed, {:.2}s{} [{}]",
            self.id,
            self.title,
            self.checks.len(),
            failed,
            self.elapsed.as_secs_f64(),
            if self.rerun { ", rerun at 4x samples" } else { "" },
            if self.passed { "PASS" } else { "FAIL" }
        )
    }

    pub fn report(&self) -> String {
        let mut out = self.line();
        for c in &self.checks {
            let _ = write!(out, "\n    [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.label, c.detail);
        }
        out
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, label: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(Check { label: label.into(), passed, detail: detail.into() });
    }

    /// Records an error as a failed check instead of aborting the criterion.
    fn attempt(&mut self, label: &str, f: impl FnOnce(&mut Checks) -> Result<()>) {
        if let Err(e) = f(self) {
            self.push(label, false, format!("error: {e}"));
        }
    }

    fn all_passed(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(|c| c.passed)
    }
}

struct Criterion {
    id: u8,
    title: &'static str,
    /// Monte Carlo criteria are rerun once at larger sample counts.
    sampled: bool,
    /// Wall-clock limit that is part of the criterion.
    limit: Option<Duration>,
    body: fn(u64, &mut Checks),
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, title: "powers-of-two bilateral exact suite", sampled: false, limit: Some(Duration::from_secs(5)), body: criterion_1 },
    Criterion { id: 2, title: "truncated-exponential ratio trend", sampled: false, limit: Some(Duration::from_secs(30)), body: criterion_2 },
    Criterion { id: 3, title: "prophet fixed prices", sampled: true, limit: None, body: criterion_3 },
    Criterion { id: 4, title: "seller-adjusted posted prices", sampled: true, limit: None, body: criterion_4 },
    Criterion { id: 5, title: "OCRS selectability", sampled: true, limit: None, body: criterion_5 },
    Criterion { id: 6, title: "Z concentration", sampled: true, limit: None, body: criterion_6 },
    Criterion { id: 7, title: "LP oracle chain", sampled: false, limit: Some(Duration::from_secs(60)), body: criterion_7 },
    Criterion { id: 8, title: "matching-market reduction", sampled: false, limit: None, body: criterion_8 },
    Criterion { id: 9, title: "foundation properties", sampled: true, limit: None, body: criterion_9 },
];

pub fn criterion_ids() -> Vec<u8> {
    CRITERIA.iter().map(|c| c.id).collect()
}

fn run_once(c: &Criterion, scale: u64) -> (Checks, Duration) {
    let start = Instant::now();
    let mut checks = Checks::default();
    (c.body)(scale, &mut checks);
    let elapsed = start.elapsed();
    if let Some(limit) = c.limit {
        checks.push(
            "runtime",
            elapsed <= limit,
            format!("{:.2}s against a {:.0}s limit", elapsed.as_secs_f64(), limit.as_secs_f64()),
        );
    }
    (checks, elapsed)
}

pub fn run_criterion(id: u8) -> Option<Verdict> {
    let c = CRITERIA.iter().find(|c| c.id == id)?;
    let (mut checks, mut elapsed) = run_once(c, 1);
    let mut rerun = false;
    if c.sampled && !checks.all_passed() {
        let (again, t) = run_once(c, RERUN_FACTOR);
        checks = again;
        elapsed += t;
        rerun = true;
    }
    Some(Verdict { id: c.id, title: c.title, passed: checks.all_passed(), rerun, elapsed, checks: checks.0 })
}

pub fn run_all() -> Vec<Verdict> {
    CRITERIA.iter().filter_map(|c| run_criterion(c.id)).collect()
}

fn lg(x: f64) -> f64 {
    x.log2()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

/// Paired-difference band: passes when `e.mean >= -k·σ`.
fn nonnegative_within(e: &Estimate, k: f64) -> bool {
    e.mean >= -k * e.stderr - 1e-12
}

fn criterion_1(_: u64, checks: &mut Checks) {
    for m in [6u32, 8, 10] {
        checks.attempt(&format!("m={m}"), |checks| {
            let ex = ExampleA3::new(m)?;
            let inst = ex.instance()?;
            let lm = lg(m as f64);
            checks.push(format!("m={m} prefix-sum identity"), ex.recurrence_holds(), "exact rationals");

            let bo = exact_gft(&BuyerOffering, &inst)?;
            let bo_exact = ratio_f64(&ex.buyer_offering_gft());
            checks.push(
                format!("m={m} (a) GFT_BO <= 1"),
                bo <= 1.0 + EXACT_TOL && close(bo, bo_exact, EXACT_TOL),
                format!("enumerated {bo:.12}, rational {bo_exact:.12}"),
            );

            let mut worst: f64 = 0.0;
            let mut agree = true;
            for p in ex.support_points() {
                let g = exact_gft(&Fpp::symmetric(vec![ratio_f64(&p)]), &inst)?;
                agree &= close(g, ratio_f64(&ex.fixed_price_gft(p)), EXACT_TOL);
                worst = worst.max(g);
            }
            checks.push(
                format!("m={m} (b) every symmetric fixed price <= log m"),
                worst <= lm + EXACT_TOL && agree,
                format!("best {worst:.9} against {lm:.9}, rational agreement {agree}"),
            );

            let fb = first_best_gft(&inst, EvalMode::Exact)?.mean;
            let fb_exact = ratio_f64(&ex.first_best());
            let lo = 0.25 * lm.floor() * (lm - lg(lm) - 1.0);
            let hi = lm * (lm + 1.0);
            checks.push(
                format!("m={m} (c) FB range"),
                lo - EXACT_TOL <= fb && fb <= hi + EXACT_TOL && close(fb, fb_exact, EXACT_TOL),
                format!("FB {fb:.9} in [{lo:.9}, {hi:.9}], rational {fb_exact:.9}"),
            );

            let so = exact_gft(&SellerOffering, &inst)?;
            let gap = fb - so;
            let (glo, ghi) = ((lg(lm) - 1.0) / 4.0, lg(m as f64 + 2.0) / 2.0);
            checks.push(
                format!("m={m} (d) FB - GFT_SO range"),
                gap > glo - EXACT_TOL && gap <= ghi + EXACT_TOL,
                format!("gap {gap:.9} in ({glo:.9}, {ghi:.9}]"),
            );
            Ok(())
        });
    }
}

fn criterion_2(_: u64, checks: &mut Checks) {
    for t in [8.0f64, 10.0, 12.0] {
        checks.attempt(&format!("t={t}"), |checks| {
            let inst = example_a1(t)?;
            let r = inst.trade_probability(0);
            let fb = bilateral_first_best(&inst)?;
            let best = best_bilateral_fpp(&inst, 256)?;
            let (_, closed_best) = golden_max(|p| a1_fpp_gft(t, p), 0.0, t, 1e-12);
            let fit = (r - a1_trade_probability(t)).abs() <= QUADRATURE_TOL * a1_trade_probability(t)
                && (fb - a1_first_best(t)).abs() <= QUADRATURE_TOL * a1_first_best(t)
                && (best.gft - closed_best).abs() <= QUADRATURE_TOL * closed_best;
            checks.push(
                format!("t={t} quadrature against closed forms"),
                fit,
                format!("r {r:.6e}, FB {fb:.6e}, best fixed price {:.6e} at p={:.4}, closed {:.6e}", best.gft, best.price, closed_best),
            );
            let ratio = fb / best.gft;
            let floor = 0.1 * lg(1.0 / r);
            checks.push(format!("t={t} FB / best fixed price >= 0.1 log(1/r)"), ratio >= floor, format!("{ratio:.4} against {floor:.4}"));
            Ok(())
        });
    }
}

fn criterion_3(scale: u64, checks: &mut Checks) {
    let samples = 100_000 * scale;
    for k in 0..20u64 {
        checks.attempt(&format!("instance {k}"), |checks| {
            let inst = random_instance(5, RandomFamily::Uniform, BASE_SEED + k)?;
            let n = inst.n();
            let p: Vec<f64> = (0..n).map(|i| inst.buyer(i).survival_quantile(0.5)).collect::<Result<_>>()?;
            let xi = prophet_threshold(&inst, &p, EvalMode::Mc { samples, seed: BASE_SEED + 100 + k })?.mean;
            let fpp = prophet_fpp(&p, xi)?;
            let est = expectation(&inst, EvalMode::Mc { samples, seed: BASE_SEED + 200 + k }, 3, |prof, row| {
                let out = run_fpp(&inst, &fpp.theta_b, &fpp.theta_s, prof)?;
                let half_max = 0.5 * (0..n).map(|i| prophet_reward(p[i], prof.b[i], prof.s[i])).fold(0.0, f64::max);
                row[0] = out.gft;
                row[1] = half_max;
                row[2] = out.gft - half_max;
                Ok(())
            })?;
            checks.push(
                format!("instance {k}"),
                nonnegative_within(&est[2], SIGMA_BAND),
                format!("GFT {:.5} against half max {:.5}, difference {:.2e} ± {:.1e}", est[0].mean, est[1].mean, est[2].mean, est[2].stderr),
            );
            Ok(())
        });
    }
}

/// Discrete unlikely-trade market: sellers are cheap only with a small
/// probability, so every `r_i < 1/n`.
fn unlikely_trade_fixture(n: usize, seed: u64) -> Result<MarketInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buyers = Vec::new();
    let mut sellers = Vec::new();
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0.5..1.0), rng.gen_range(1.0..1.5));
        let w = rng.gen_range(0.3..0.7);
        buyers.push(Dist::discrete(vec![(a, w), (b, 1.0 - w)])?);
        let low = rng.gen_range(0.05..(0.5 / n as f64));
        sellers.push(Dist::discrete(vec![(rng.gen_range(0.0..0.9), low), (2.0, 1.0 - low)])?);
    }
    MarketInstance::new(buyers, sellers, Constraint::unit_demand(n))
}

fn sapp_for(inst: &MarketInstance, items: ItemSet) -> Result<(Sapp, Arc<dyn AllocationRule>)> {
    let rule: Arc<dyn AllocationRule> = Arc::new(unlikely_trade_rule(inst, items)?);
    Ok((Sapp::new(inst, rule.clone())?, rule))
}

fn sapp_exact_checks(name: &str, inst: &MarketInstance, checks: &mut Checks) -> Result<()> {
    let (_, l) = hl_split(inst);
    let (sapp, _) = sapp_for(inst, l)?;
    let ex = sapp_exact(&sapp.map, inst)?;
    let gft = ex.summary.gft;
    let slack = ex.summary.exante_slack();
    checks.push(format!("{name} ex-ante budget (exact)"), slack >= -EXACT_TOL, format!("slack {slack:.3e}"));
    checks.push(
        format!("{name} (q + q²)/4 <= x̂ <= q/2 (exact)"),
        ex.sandwich_slack >= -1e-12,
        format!("smallest slack {:.3e}", ex.sandwich_slack),
    );
    checks.push(
        format!("{name} GFT >= virtual surplus / 4 (exact)"),
        gft >= 0.25 * ex.virtual_surplus - EXACT_TOL,
        format!("GFT {gft:.6e}, virtual surplus {:.6e}", ex.virtual_surplus),
    );
    let vs_l = virtual_surplus_sum(inst, l)?;
    checks.push(
        format!("{name} GFT >= Σ E[(φ̃ - s)⁺] / 4e (exact)"),
        gft >= vs_l / (4.0 * E) - EXACT_TOL,
        format!("GFT {gft:.6e}, sum {vs_l:.6e}"),
    );
    let gain = dsic_audit_sellers_exact(&sapp, inst, &default_deviation_grid(inst)?)?;
    checks.push(format!("{name} seller deviation gain <= 1e-9 (exact)"), gain <= EXACT_TOL, format!("max gain {gain:.3e}"));
    Ok(())
}

fn criterion_4(scale: u64, checks: &mut Checks) {
    checks.attempt("mixed-market discrete n=2", |c| sapp_exact_checks("mixed-market discrete n=2", &example_a2_discrete(2, 1.0, 10.0, 0.5)?, c));
    for k in 0..3u64 {
        let name = format!("unlikely-trade fixture {k}");
        checks.attempt(&name.clone(), |c| sapp_exact_checks(&name, &unlikely_trade_fixture(3, BASE_SEED + 300 + k)?, c));
    }
    checks.attempt("mixed-market continuous n=3", |checks| {
        let inst = example_a2(3, 1.0, 10.0, 0.5)?;
        let (_, l) = hl_split(&inst);
        let (sapp, rule) = sapp_for(&inst, l)?;
        let samples = 100_000 * scale;
        let seed = BASE_SEED + 400;
        let budget = budget_audit(&sapp, &inst, samples, seed)?;
        checks.push(
            "mixed-market continuous ex-ante budget",
            nonnegative_within(&budget.exante_slack, SIGMA_BAND),
            format!("slack {:.3e} ± {:.1e}", budget.exante_slack.mean, budget.exante_slack.stderr),
        );
        let est = expectation(&inst, EvalMode::Mc { samples, seed }, 4, |prof, row| {
            let out = run_sapp(&sapp.map, &inst, prof)?;
            let x = rule.allocate(&inst, &prof.b, &prof.s)?;
            let mut vs = 0.0;
            for i in x.iter() {
                vs += inst.phi_tilde(i, prof.b[i])? - prof.s[i];
            }
            let mut pos = 0.0;
            for i in l.iter() {
                pos += (inst.phi_tilde(i, prof.b[i])? - prof.s[i]).max(0.0);
            }
            row[0] = out.gft;
            row[1] = out.gft - 0.25 * vs;
            row[2] = out.gft - pos / (4.0 * E);
            row[3] = vs;
            Ok(())
        })?;
        checks.push(
            "mixed-market continuous GFT >= virtual surplus / 4",
            nonnegative_within(&est[1], SIGMA_BAND),
            format!("GFT {:.4e}, virtual surplus {:.4e}, difference {:.2e} ± {:.1e}", est[0].mean, est[3].mean, est[1].mean, est[1].stderr),
        );
        checks.push(
            "mixed-market continuous GFT >= Σ E[(φ̃ - s)⁺] / 4e",
            nonnegative_within(&est[2], SIGMA_BAND),
            format!("difference {:.2e} ± {:.1e}", est[2].mean, est[2].stderr),
        );
        Ok(())
    });
}

fn selectability_check(
    checks: &mut Checks,
    label: &str,
    o: &gftlab::ocrs::GreedyOcrs,
    qhat: &[f64],
    floor: impl Fn(usize) -> (f64, f64),
    samples: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let mut out = Vec::new();
    for i in 0..qhat.len() {
        let rep = estimate_selectability(o, qhat, i, samples, seed + i as u64)?;
        let (bound, bound_sd) = floor(i);
        let band = SIGMA_BAND * (rep.stderr.powi(2) + bound_sd.powi(2)).sqrt();
        checks.push(
            format!("{label} item {i}"),
            rep.eta_hat >= bound - band,
            format!("η̂ {:.5} ± {:.1e} against {bound:.5}", rep.eta_hat, rep.stderr),
        );
        out.push(Estimate { mean: rep.eta_hat, stderr: rep.stderr });
    }
    Ok(out)
}

fn criterion_5(scale: u64, checks: &mut Checks) {
    let samples = 100_000 * scale;
    let n = 5;
    for delta in [0.25, 0.5] {
        checks.attempt(&format!("unit demand δ={delta}"), |checks| {
            let o = unit_demand_ocrs(n, delta)?;
            let skew = [0.4, 0.25, 0.15, 0.1, 0.1];
            let qhat: Vec<f64> = skew.iter().map(|w| w * delta).collect();
            selectability_check(checks, &format!("unit demand δ={delta}"), &o, &qhat, |_| (1.0 - delta, 0.0), samples, BASE_SEED + 500)?;
            Ok(())
        });
    }
    let sizes = vec![0.6, 0.3, 0.2, 0.7, 0.1];
    let delta = 0.25;
    let total: f64 = sizes.iter().sum();
    let qhat: Vec<f64> = vec![0.9 * delta / total; n];
    checks.attempt("knapsack δ=0.25", |checks| {
        let o = knapsack_ocrs(sizes.clone(), delta)?;
        let floor = (1.0 - 2.0 * delta) / (2.0 - 2.0 * delta);
        selectability_check(checks, "knapsack δ=0.25", &o, &qhat, |_| (floor, 0.0), samples, BASE_SEED + 510)?;
        Ok(())
    });
    // Inside both scaled polytopes: Σq̂ ≤ δ for unit demand and Σ c q̂ ≤ δ for the knapsack.
    let qhat: Vec<f64> = vec![0.9 * delta / total.max(n as f64); n];
    checks.attempt("composition", |checks| {
        let mut scratch = Checks::default();
        let a = unit_demand_ocrs(n, delta)?;
        let b = knapsack_ocrs(sizes.clone(), delta)?;
        let ea = selectability_check(&mut scratch, "unit", &a, &qhat, |_| (0.0, 0.0), samples, BASE_SEED + 520)?;
        let eb = selectability_check(&mut scratch, "knapsack", &b, &qhat, |_| (0.0, 0.0), samples, BASE_SEED + 530)?;
        let comp = compose_ocrs(a, b)?;
        selectability_check(
            checks,
            "composition",
            &comp,
            &qhat,
            |i| {
                let prod = ea[i].mean * eb[i].mean;
                let sd = ((eb[i].mean * ea[i].stderr).powi(2) + (ea[i].mean * eb[i].stderr).powi(2)).sqrt();
                (prod, sd)
            },
            samples,
            BASE_SEED + 540,
        )?;
        Ok(())
    });
}

fn criterion_6(scale: u64, checks: &mut Checks) {
    let samples = 100_000 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 600);
    for n in [6usize, 8, 10] {
        let t: Vec<Dist> = (0..n)
            .map(|_| {
                let zero = rng.gen_range(0.3..0.9);
                let mid: f64 = rng.gen_range(0.5..1.0);
                let split = rng.gen_range(0.2..0.8);
                Dist::discrete(vec![(0.0, zero), (mid.min(0.999), (1.0 - zero) * split), (1.0, (1.0 - zero) * (1.0 - split))])
            })
            .collect::<Result<_>>()
            .unwrap_or_default();
        for (name, constraint) in [("unit demand", Constraint::unit_demand(n)), ("3-uniform", Constraint::k_uniform(n, 3))] {
            for c in [0.25, 0.5, 0.75] {
                let label = format!("{name} n={n} c={c}");
                checks.attempt(&label.clone(), |checks| {
                    let z = z_concentration_check(&constraint, &t, c, samples, BASE_SEED + 610 + n as u64)?;
                    checks.push(
                        label,
                        z.holds(SIGMA_BAND),
                        format!("tail {:.4} ± {:.1e} against {:.4}, E[Z] {:.4}", z.tail.mean, z.tail.stderr, z.rhs, z.expected_z.mean),
                    );
                    Ok(())
                });
            }
        }
    }
}

fn grid_bilateral(k: usize) -> Result<MarketInstance> {
    let grid: Vec<(f64, f64)> = (1..=k).map(|j| (j as f64 / k as f64, 1.0 / k as f64)).collect();
    MarketInstance::bilateral(Dist::discrete(grid.clone())?, Dist::discrete(grid)?)
}

fn chain_checks(name: &str, inst: &MarketInstance, strict: bool, checks: &mut Checks) -> Result<()> {
    let m = DiscreteMarket::new(inst)?;
    let rep = verify_ub_chain(&m)?;
    let tol = CHAIN_TOL * (1.0 + rep.sb.abs());
    let sb_fb = if strict { rep.sb < rep.fb - tol } else { rep.sb_le_fb };
    checks.push(
        format!("{name} SB {} FB", if strict { "<" } else { "<=" }),
        sb_fb,
        format!("SB {:.8}, FB {:.8}", rep.sb, rep.fb),
    );
    checks.push(
        format!("{name} SB <= OPT-B + OPT-S"),
        rep.sb_le_opt_s_plus_opt_b,
        format!("OPT-B {:.8}, OPT-S {:.8}", rep.opt_b, rep.opt_s),
    );
    let worst = rep.mechanisms.iter().filter(|c| !c.holds).map(|c| c.mechanism.clone()).collect::<Vec<_>>();
    let listed = rep.mechanisms.iter().map(|c| format!("{} {:.6}", c.mechanism, c.gft)).collect::<Vec<_>>().join(", ");
    checks.push(format!("{name} mechanisms <= SB"), worst.is_empty(), format!("{listed}; violations {worst:?}"));
    if inst.n() == 2 {
        for kept in [ItemSet::singleton(0), ItemSet::singleton(1)] {
            let mc = marginal_check(inst, kept)?;
            checks.push(
                format!("{name} OPT-S([2]) <= OPT-S({{{}}}) + FB(rest)", kept.to_vec()[0]),
                mc.holds,
                format!("{:.8} <= {:.8} + {:.8}", mc.opt_s_all, mc.opt_s_kept, mc.fb_rest),
            );
        }
    }
    Ok(())
}

fn criterion_7(_: u64, checks: &mut Checks) {
    for k in 2..=8usize {
        let name = format!("{k}x{k} grid");
        checks.attempt(&name.clone(), |c| chain_checks(&name, &grid_bilateral(k)?, k == 8, c));
    }
    for j in 0..3u64 {
        let name = format!("2-item two-atom {j}");
        checks.attempt(&name.clone(), |c| chain_checks(&name, &random_instance(2, RandomFamily::TwoAtom, BASE_SEED + 700 + j)?, false, c));
    }
    let name = "2-item lognormal".to_string();
    checks.attempt(&name.clone(), |c| chain_checks(&name, &random_instance(2, RandomFamily::LognormalDiscretized, BASE_SEED + 710)?, false, c));
}

fn matching_fixture(k: u64) -> Result<MarketInstance> {
    let (n, family) = match k {
        0 => (2, RandomFamily::TwoAtom),
        1 => (2, RandomFamily::LognormalDiscretized),
        2 => (3, RandomFamily::TwoAtom),
        3 => (3, RandomFamily::LognormalDiscretized),
        _ => (3, RandomFamily::TwoAtom),
    };
    let inst = random_instance(n, family, BASE_SEED + 800 + k)?;
    matching_market(inst.buyers().iter().cloned().zip(inst.sellers().iter().cloned()).collect())
}

fn criterion_8(_: u64, checks: &mut Checks) {
    for k in 0..5u64 {
        checks.attempt(&format!("fixture {k}"), |checks| {
            let inst = matching_fixture(k)?;
            let ob = opt_b(&inst, EvalMode::Exact)?.mean;
            let sapp = Sapp::new(&inst, Arc::new(reduction_rule(&inst)?))?;
            let ex = sapp_exact(&sapp.map, &inst)?;
            let upper = brustle_sd_upper(&inst, EvalMode::Exact)?;
            let (total, virtual_term, cost_term) = (upper.total.mean, upper.virtual_term.mean, upper.cost_term.mean);
            let lhs = ob.max(ex.summary.gft);
            checks.push(
                format!("fixture {k} (n={}) max(OPT-B, GFT_SAPP) >= upper / 2", inst.n()),
                lhs >= 0.5 * total - EXACT_TOL,
                format!(
                    "OPT-B {ob:.6}, SAPP {:.6}, upper {:.6} (virtual {:.6}, cost {:.6}), ratio {:.4}",
                    ex.summary.gft,
                    total,
                    virtual_term,
                    cost_term,
                    lhs / total
                ),
            );
            Ok(())
        });
    }
}

fn family_of(k: u64) -> RandomFamily {
    match k % 3 {
        0 => RandomFamily::Uniform,
        1 => RandomFamily::LognormalDiscretized,
        _ => RandomFamily::TwoAtom,
    }
}

fn brute_max_weight(c: &Constraint, w: &[f64]) -> Result<f64> {
    Ok(c.feasible_sets()?.into_iter().map(|s| s.iter().map(|i| w[i]).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max))
}

fn weight_variants() -> Result<Vec<(&'static str, Constraint)>> {
    let edges: Vec<(u32, u32)> = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 2), (1, 3), (2, 4), (3, 5), (4, 0), (5, 1)];
    Ok(vec![
        ("additive", Constraint::additive(12)),
        ("unit demand", Constraint::unit_demand(12)),
        ("3-uniform", Constraint::k_uniform(12, 3)),
        ("knapsack", Constraint::knapsack((0..12).map(|i| 0.08 + 0.05 * (i % 7) as f64).collect())?),
        ("matching", Constraint::matching(edges.clone())),
        ("graphic matroid", Constraint::graphic_matroid(&edges)?),
        ("intersection", Constraint::intersection(vec![Constraint::k_uniform(12, 4), Constraint::knapsack((0..12).map(|i| 0.1 + 0.04 * i as f64).collect())?])?),
        ("size floor", Constraint::size_floor(Constraint::k_uniform(10, 4), 2)),
    ])
}

fn criterion_9(scale: u64, checks: &mut Checks) {
    checks.attempt("quantile pairs", |checks| {
        let mut bad = Vec::new();
        let mut count = 0;
        for k in 0..100u64 {
            let inst = random_instance(2, family_of(k), BASE_SEED + 900 + k)?;
            for i in 0..inst.n() {
                count += 1;
                if !quantile_pair_check(inst.buyer(i), inst.seller(i))?.ok {
                    bad.push((k, i));
                }
            }
        }
        checks.push("r/2 quantile pair on 100 random instances", bad.is_empty(), format!("{count} items, failures {bad:?}"));
        Ok(())
    });
    checks.attempt("decomposition", |checks| {
        for k in 0..10u64 {
            let mut inst = random_instance(2 + (k % 2) as usize, family_of(k), BASE_SEED + 1000 + k)?;
            if k >= 6 {
                inst = inst.with_constraint(Constraint::additive(inst.n()))?;
            }
            let mode = if inst.is_discrete() { EvalMode::Exact } else { EvalMode::Mc { samples: 100_000 * scale, seed: BASE_SEED + 1100 + k } };
            let rep = benchmark_decomposition(&inst, mode)?;
            checks.push(
                format!("decomposition chain, instance {k}"),
                rep.chain_holds(SIGMA_BAND),
                format!("FB {:.5}, terms 1-2 {:.5} {:.5}", rep.fb_gft.mean, rep.terms[0].mean, rep.terms[1].mean),
            );
        }
        Ok(())
    });
    checks.attempt("uniform first best", |checks| {
        let inst = MarketInstance::bilateral(Dist::uniform(0.0, 1.0)?, Dist::uniform(0.0, 1.0)?)?;
        let fb = first_best_gft(&inst, EvalMode::Mc { samples: 1_000_000 * scale, seed: BASE_SEED + 1200 })?;
        checks.push(
            "uniform bilateral FB = 1/6",
            (fb.mean - 1.0 / 6.0).abs() <= SIGMA_BAND * fb.stderr,
            format!("{:.6} ± {:.1e}", fb.mean, fb.stderr),
        );
        Ok(())
    });
    checks.attempt("max weight set", |checks| {
        let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 1300);
        for (name, c) in weight_variants()? {
            let n = c.ground().len();
            let mut ok = true;
            for _ in 0..40 {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.0)).collect();
                let (set, value) = c.max_weight_set(&w)?;
                let brute = brute_max_weight(&c, &w)?;
                ok &= c.is_feasible(set)? && (value - brute).abs() <= 1e-12 && (set.iter().map(|i| w[i]).sum::<f64>() - value).abs() <= 1e-12;
            }
            checks.push(format!("max_weight_set against enumeration: {name}"), ok, format!("{n} items, 40 weight draws"));
        }
        Ok(())
    });
    checks.attempt("Monte Carlo against exact", |checks| {
        let samples = 100_000 * scale;
        let mut fixtures: Vec<(String, MarketInstance)> = vec![
            ("4x4 grid".into(), grid_bilateral(4)?),
            ("powers-of-two m=6".into(), ExampleA3::new(6)?.instance()?),
        ];
        for k in 0..2u64 {
            fixtures.push((format!("two-atom {k}"), random_instance(2, RandomFamily::TwoAtom, BASE_SEED + 1400 + k)?));
        }
        fixtures.push(("unlikely-trade".into(), unlikely_trade_fixture(2, BASE_SEED + 1410)?));
        for (j, (name, inst)) in fixtures.iter().enumerate() {
            let mut mechs: Vec<Box<dyn Mechanism>> = vec![Box::new(BuyerOffering)];
            let medians: Vec<f64> = (0..inst.n()).map(|i| inst.buyer(i).survival_quantile(0.5)).collect::<Result<_>>()?;
            mechs.push(Box::new(Fpp::symmetric(medians)));
            if inst.n() == 1 {
                mechs.push(Box::new(SellerOffering));
            } else {
                mechs.push(Box::new(sapp_for(inst, ItemSet::full(inst.n()))?.0));
            }
            for m in mechs {
                let exact = m.exact(inst)?.gft;
                let est = estimate_gft(m.as_ref(), inst, samples, BASE_SEED + 1500 + j as u64)?;
                let ok = (est.mean - exact).abs() <= AGREEMENT_BAND * est.stderr + 1e-12;
                checks.push(
                    format!("{name} {}", m.name()),
                    ok,
                    format!("MC {:.6} ± {:.1e}, exact {exact:.6}", est.mean, est.stderr),
                );
            }
        }
        Ok(())
    });
}
