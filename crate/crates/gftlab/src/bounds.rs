//! Benchmarks and upper bounds: the first-best decomposition over quantile
//! ladders, prophet thresholds, the super-buyer optimum, separate-sale and
//! second-best upper bounds, and the concentration check for `Z(t)`.

use serde::{Deserialize, Serialize};

use crate::audits::{expectation, first_best_gft_on, EvalMode};
use crate::distributions::{quantile_ladder, Dist, Side};
use crate::error::{domain, Error, Result};
use crate::feasibility::{Constraint, ItemSet};
use crate::mc::{self, Estimate, McConfig};
use crate::mechanisms::{run_fpp, Fpp, MarketInstance};
use crate::numeric;

/// Ladder length `⌈log₂(2/r)⌉` for trade probability `r`.
pub fn ladder_levels(r: f64) -> Result<usize> {
    Ok(quantile_ladder(&Dist::point(0.0), r, Side::Buyer)?.len())
}

/// Quantities of one ladder level `j`, without the factor 2 of the sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTerms {
    pub level: usize,
    /// `E[max_S Σ (b_i - θ_ij)^+ 1[s_i <= θ_ij]]`.
    pub buyer_surplus: Estimate,
    /// `E[max_S Σ (θ_ij - s_i)^+ 1[b_i >= θ_ij]]`.
    pub seller_surplus: Estimate,
    /// Buyer surplus at the seller rung `θ'_ij`.
    pub buyer_surplus_seller_rung: Estimate,
    /// Seller surplus at the seller rung `θ'_ij`.
    pub seller_surplus_seller_rung: Estimate,
    /// GFT of the posted price `θ_ij` on both sides.
    pub fpp_gft: Estimate,
    /// GFT of the posted price `θ'_ij` on both sides.
    pub fpp_gft_seller_rung: Estimate,
    /// Paired estimate of `buyer_surplus - fpp_gft`.
    pub buyer_surplus_excess: Estimate,
    /// Paired estimate of `buyer_surplus_seller_rung - fpp_gft_seller_rung`.
    pub buyer_surplus_excess_seller_rung: Estimate,
}

/// First-best GFT split into the six ladder terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub fb_gft: Estimate,
    /// Terms ① to ⑥; ③ to ⑥ include the factor 2 and the sum over levels.
    pub terms: [Estimate; 6],
    /// Buyer rungs `θ_ij = F̄_i^{-1}(2^{-j})`, one row per item.
    pub theta: Vec<Vec<f64>>,
    /// Seller rungs `θ'_ij = G_i^{-1}(2^{-j})`, one row per item.
    pub theta_prime: Vec<Vec<f64>>,
    /// Per-item cut points `x_i = F̄_i^{-1}(r_i/2)` and `y_i = G_i^{-1}(r_i/2)`.
    pub cuts: Vec<(f64, f64)>,
    pub levels: Vec<LevelTerms>,
    /// Paired estimate of `FB - ① - ②`.
    pub fb_excess: Estimate,
    /// Paired estimate of `① - ③ - ④`.
    pub term1_excess: Estimate,
    /// Paired estimate of `② - ⑤ - ⑥`.
    pub term2_excess: Estimate,
    pub log_base: u32,
}

/// `true` when a paired excess estimate is at most `k` standard errors
/// above zero, with a small absolute slack for exact evaluations.
pub fn excess_within(e: &Estimate, k: f64) -> bool {
    e.mean <= k * e.stderr + 1e-9
}

impl BenchmarkReport {
    /// The three decomposition inequalities at `k` standard errors.
    pub fn chain_holds(&self, k: f64) -> bool {
        [self.fb_excess, self.term1_excess, self.term2_excess].iter().all(|e| excess_within(e, k))
    }

    /// Every level's buyer-surplus term is covered by its posted price.
    pub fn buyer_surplus_covered(&self, k: f64) -> bool {
        self.levels.iter().all(|l| excess_within(&l.buyer_surplus_excess, k) && excess_within(&l.buyer_surplus_excess_seller_rung, k))
    }
}

/// Estimates the six terms and the paired differences behind the chain
/// `FB <= ① + ②`, `① <= ③ + ④`, `② <= ⑤ + ⑥`.
pub fn benchmark_decomposition(inst: &MarketInstance, mode: EvalMode) -> Result<BenchmarkReport> {
    let n = inst.n();
    let r = inst.min_trade_probability();
    let theta: Vec<Vec<f64>> = (0..n).map(|i| quantile_ladder(inst.buyer(i), r, Side::Buyer)).collect::<Result<_>>()?;
    let theta_prime: Vec<Vec<f64>> = (0..n).map(|i| quantile_ladder(inst.seller(i), r, Side::Seller)).collect::<Result<_>>()?;
    let cuts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let ri = inst.trade_probability(i);
            Ok((inst.buyer(i).survival_quantile(ri / 2.0)?, inst.seller(i).quantile(ri / 2.0)?))
        })
        .collect::<Result<_>>()?;
    let levels = theta[0].len();
    let rung = |rows: &[Vec<f64>], j: usize| -> Vec<f64> { rows.iter().map(|row| row[j]).collect() };
    let fpps: Vec<(Vec<f64>, Vec<f64>)> = (0..levels).map(|j| (rung(&theta, j), rung(&theta_prime, j))).collect();
    let f = inst.constraint();
    // Columns: FB, ①..⑥, three chain excesses, then eight per level.
    let cols = 10 + 8 * levels;
    let est = expectation(inst, mode, cols, |p, row| {
        let (b, s) = (&p.b, &p.s);
        let gains: Vec<f64> = (0..n).map(|i| b[i] - s[i]).collect();
        let (star, fb) = f.max_weight_set(&gains)?;
        row[0] = fb;
        for i in star.iter() {
            if b[i] >= s[i] && s[i] < cuts[i].0 {
                row[1] += gains[i];
            }
            if b[i] >= s[i] && s[i] >= cuts[i].1 {
                row[2] += gains[i];
            }
        }
        for (j, (tb, ts)) in fpps.iter().enumerate() {
            let base = 10 + 8 * j;
            let mut level = [0.0; 4];
            for (k, price) in [tb, ts].into_iter().enumerate() {
                let wb: Vec<f64> = (0..n).map(|i| if s[i] <= price[i] { (b[i] - price[i]).max(0.0) } else { 0.0 }).collect();
                let ws: Vec<f64> = (0..n).map(|i| if b[i] >= price[i] { (price[i] - s[i]).max(0.0) } else { 0.0 }).collect();
                level[2 * k] = f.max_weight_set(&wb)?.1;
                level[2 * k + 1] = f.max_weight_set(&ws)?.1;
            }
            let g = run_fpp(inst, tb, tb, p)?.gft;
            let gp = run_fpp(inst, ts, ts, p)?.gft;
            row[base..base + 4].copy_from_slice(&level);
            row[base + 4] = g;
            row[base + 5] = gp;
            row[base + 6] = level[0] - g;
            row[base + 7] = level[2] - gp;
            row[3] += 2.0 * level[0];
            row[4] += 2.0 * level[1];
            row[5] += 2.0 * level[2];
            row[6] += 2.0 * level[3];
        }
        row[7] = row[0] - row[1] - row[2];
        row[8] = row[1] - row[3] - row[4];
        row[9] = row[2] - row[5] - row[6];
        Ok(())
    })?;
    let levels = (0..levels)
        .map(|j| {
            let c = 10 + 8 * j;
            LevelTerms {
                level: j + 1,
                buyer_surplus: est[c],
                seller_surplus: est[c + 1],
                buyer_surplus_seller_rung: est[c + 2],
                seller_surplus_seller_rung: est[c + 3],
                fpp_gft: est[c + 4],
                fpp_gft_seller_rung: est[c + 5],
                buyer_surplus_excess: est[c + 6],
                buyer_surplus_excess_seller_rung: est[c + 7],
            }
        })
        .collect();
    Ok(BenchmarkReport {
        fb_gft: est[0],
        terms: [est[1], est[2], est[3], est[4], est[5], est[6]],
        theta,
        theta_prime,
        cuts,
        levels,
        fb_excess: est[7],
        term1_excess: est[8],
        term2_excess: est[9],
        log_base: 2,
    })
}

/// Prophet threshold `ξ = ½ E[max_i (p_i - s_i)^+ 1[b_i >= p_i]]`.
pub fn prophet_threshold(inst: &MarketInstance, p: &[f64], mode: EvalMode) -> Result<Estimate> {
    if !matches!(inst.constraint(), Constraint::UnitDemand { .. }) {
        return Err(Error::Precondition("prophet thresholds need a unit-demand buyer".into()));
    }
    let n = inst.n();
    if p.len() != n {
        return Err(domain(format!("need {n} prices")));
    }
    let est = expectation(inst, mode, 1, |prof, row| {
        row[0] = 0.5 * (0..n).map(|i| prophet_reward(p[i], prof.b[i], prof.s[i])).fold(0.0, f64::max);
        Ok(())
    })?;
    Ok(est[0])
}

/// `(p - s)^+ 1[b >= p]`.
pub fn prophet_reward(p: f64, b: f64, s: f64) -> f64 {
    if b >= p {
        (p - s).max(0.0)
    } else {
        0.0
    }
}

/// Posted prices `θᴮ = p`, `θˢ = p - ξ`.
pub fn prophet_fpp(p: &[f64], xi: f64) -> Result<Fpp> {
    if !(xi >= 0.0) {
        return Err(domain(format!("threshold {xi} must be nonnegative")));
    }
    Fpp::new(p.to_vec(), p.iter().map(|x| x - xi).collect())
}

/// `OPT-B = E[max_{S ∈ F} Σ_{i ∈ S} (b_i - τ̃_i(s_i))^+]`.
pub fn opt_b(inst: &MarketInstance, mode: EvalMode) -> Result<Estimate> {
    let n = inst.n();
    let est = expectation(inst, mode, 1, |p, row| {
        let w: Vec<f64> = (0..n).map(|i| Ok((p.b[i] - inst.tau_tilde(i, p.s[i])?).max(0.0))).collect::<Result<_>>()?;
        row[0] = inst.constraint().max_weight_set(&w)?.1;
        Ok(())
    })?;
    Ok(est[0])
}

/// Splits items into likely (`r_i >= 1/n`) and unlikely trade.
pub fn hl_split(inst: &MarketInstance) -> (ItemSet, ItemSet) {
    let cut = 1.0 / inst.n() as f64;
    let high = ItemSet::from_indices((0..inst.n()).filter(|&i| inst.trade_probability(i) >= cut));
    (high, ItemSet::full(inst.n()).minus(high))
}

/// `E[(φ̃_i(b_i) - s_i)^+]`, by enumeration over discrete sellers and
/// quadrature over continuous ones.
pub fn item_virtual_surplus(inst: &MarketInstance, i: usize) -> Result<f64> {
    // Ironed values never exceed the value itself, so the tail over
    // `b >= s` captures every positive term.
    let tail = |s: f64| inst.virtual_tail(i, s).1;
    let seller = inst.seller(i);
    let v = match seller.as_discrete() {
        Some(d) => d.atoms().map(|(s, p)| p * tail(s)).sum(),
        None => seller.expect(tail, &[]),
    };
    if !v.is_finite() {
        return Err(Error::Precondition(format!("virtual surplus of item {i} is not finite")));
    }
    Ok(v.max(0.0))
}

/// `Σ_{i ∈ items} E[(φ̃_i(b_i) - s_i)^+]`.
pub fn virtual_surplus_sum(inst: &MarketInstance, items: ItemSet) -> Result<f64> {
    items.iter().map(|i| item_virtual_surplus(inst, i)).sum()
}

/// Separate-sale profit bound on a set of unlikely-trade items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparateSale {
    /// `max(1, log₂|L|)`.
    pub factor: f64,
    pub virtual_surplus: f64,
    pub bound: f64,
}

pub fn separate_sale_bound(inst: &MarketInstance, items: ItemSet) -> Result<SeparateSale> {
    if items.is_empty() {
        return Err(Error::Precondition("separate-sale bound needs at least one item".into()));
    }
    let factor = (items.len() as f64).log2().max(1.0);
    let virtual_surplus = virtual_surplus_sum(inst, items)?;
    Ok(SeparateSale { factor, virtual_surplus, bound: factor * virtual_surplus })
}

/// Components of the second-best upper bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbUpper {
    pub likely: ItemSet,
    pub unlikely: ItemSet,
    pub opt_b: Estimate,
    /// Zero when every item is likely to trade.
    pub separate_sale: f64,
    pub fb_likely: Estimate,
    pub total: Estimate,
}

/// `OPT-B + separate_sale_bound(L) + FB-GFT(H)`.
pub fn sb_gft_upper(inst: &MarketInstance, mode: EvalMode) -> Result<SbUpper> {
    let (likely, unlikely) = hl_split(inst);
    let ob = opt_b(inst, mode)?;
    let sep = if unlikely.is_empty() { 0.0 } else { separate_sale_bound(inst, unlikely)?.bound };
    let fb = if likely.is_empty() { Estimate::exact(0.0) } else { first_best_gft_on(inst, likely, sub_mode(mode, 1))? };
    let total = Estimate { mean: ob.mean + sep + fb.mean, stderr: ob.stderr.hypot(fb.stderr) };
    Ok(SbUpper { likely, unlikely, opt_b: ob, separate_sale: sep, fb_likely: fb, total })
}

fn sub_mode(mode: EvalMode, tag: u64) -> EvalMode {
    match mode {
        EvalMode::Exact => EvalMode::Exact,
        EvalMode::Mc { samples, seed } => EvalMode::Mc { samples, seed: mc::derive_seed(seed, tag) },
    }
}

/// Single-dimensional second-best upper bound for a unit-demand buyer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdUpper {
    /// `E[max_i (φ̃_i(b_i) - s_i)^+]`.
    pub virtual_term: Estimate,
    /// `E[max_i (b_i - τ̃_i(s_i))^+]`.
    pub cost_term: Estimate,
    pub total: Estimate,
}

/// `E[max_i(φ̃_i(b_i) - s_i)^+] + E[max_i(b_i - τ̃_i(s_i))^+]`; exact mode
/// needs discrete distributions and uses the product of per-item CDFs.
pub fn brustle_sd_upper(inst: &MarketInstance, mode: EvalMode) -> Result<SdUpper> {
    if !matches!(inst.constraint(), Constraint::UnitDemand { .. }) {
        return Err(Error::Unsupported("the single-dimensional bound needs a unit-demand buyer".into()));
    }
    let n = inst.n();
    let (virtual_term, cost_term) = match mode {
        EvalMode::Exact => {
            let mut virt = Vec::with_capacity(n);
            let mut cost = Vec::with_capacity(n);
            for i in 0..n {
                let (b, s) = discrete_pair(inst, i)?;
                let phi = inst.buyer_ironing(i).atom_values().expect("discrete buyers store ironed atoms");
                let tau = inst.seller_ironing(i).atom_values().expect("discrete sellers store ironed atoms");
                let mut xv = Vec::new();
                let mut xc = Vec::new();
                for (k, (bv, bp)) in b.atoms().enumerate() {
                    for (m, (sv, sp)) in s.atoms().enumerate() {
                        xv.push(((phi[k] - sv).max(0.0), bp * sp));
                        xc.push(((bv - tau[m]).max(0.0), bp * sp));
                    }
                }
                virt.push(xv);
                cost.push(xc);
            }
            (Estimate::exact(expected_max(&virt)), Estimate::exact(expected_max(&cost)))
        }
        EvalMode::Mc { samples, seed } => {
            let tally = mc::try_run(&McConfig::new(samples, seed), 2, |rng, row| {
                let p = inst.sample_profile(rng);
                for i in 0..n {
                    row[0] = row[0].max(inst.phi_tilde(i, p.b[i])? - p.s[i]);
                    row[1] = row[1].max(p.b[i] - inst.tau_tilde(i, p.s[i])?);
                }
                Ok(())
            })?;
            (tally.estimate(0), tally.estimate(1))
        }
    };
    let total = Estimate { mean: virtual_term.mean + cost_term.mean, stderr: virtual_term.stderr.hypot(cost_term.stderr) };
    Ok(SdUpper { virtual_term, cost_term, total })
}

fn discrete_pair(inst: &MarketInstance, i: usize) -> Result<(&crate::distributions::Discrete, &crate::distributions::Discrete)> {
    match (inst.buyer(i).as_discrete(), inst.seller(i).as_discrete()) {
        (Some(b), Some(s)) => Ok((b, s)),
        _ => Err(Error::Unsupported("exact evaluation needs discrete distributions; discretize first".into())),
    }
}

/// `E[max_i X_i]` for independent nonnegative discrete `X_i` given as atoms.
pub fn expected_max(items: &[Vec<(f64, f64)>]) -> f64 {
    let mut points: Vec<f64> = items.iter().flatten().map(|a| a.0).filter(|v| *v > 0.0).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let cdf_all = |x: f64| -> f64 { items.iter().map(|atoms| atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum::<f64>()).product() };
    let mut total = 0.0;
    let mut prev = 0.0;
    for &v in &points {
        total += (v - prev) * (1.0 - cdf_all(prev).min(1.0));
        prev = v;
    }
    total
}

/// Outcome of the low-activation posted-price inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowActivation {
    /// `Σ_i Pr[b_i >= θᴮ_i ∧ s_i <= θˢ_i]`.
    pub activation: f64,
    pub gft: Estimate,
    /// `½ Σ_i E[(b_i - s_i) 1[b_i >= θᴮ_i ∧ s_i <= θˢ_i]]`.
    pub half_sum: Estimate,
    /// Paired estimate of `half_sum - gft`.
    pub excess: Estimate,
}

/// Checks that posted prices with total activation at most ½ earn half the
/// active surplus.
pub fn low_activation_fpp(inst: &MarketInstance, theta_b: &[f64], theta_s: &[f64], mode: EvalMode) -> Result<LowActivation> {
    let n = inst.n();
    let fpp = Fpp::new(theta_b.to_vec(), theta_s.to_vec())?;
    let activation: f64 = (0..n).map(|i| inst.buyer(i).prob_ge(theta_b[i]) * inst.seller(i).cdf(theta_s[i])).sum();
    if activation > 0.5 + 1e-12 {
        return Err(Error::Precondition(format!("total activation {activation} exceeds 1/2")));
    }
    let est = expectation(inst, mode, 3, |p, row| {
        row[0] = run_fpp(inst, &fpp.theta_b, &fpp.theta_s, p)?.gft;
        row[1] = 0.5 * (0..n).filter(|&i| p.b[i] >= theta_b[i] && p.s[i] <= theta_s[i]).map(|i| p.b[i] - p.s[i]).sum::<f64>();
        row[2] = row[1] - row[0];
        Ok(())
    })?;
    Ok(LowActivation { activation, gft: est[0], half_sum: est[1], excess: est[2] })
}

/// Both sides of `Pr[Z >= c E[Z]] >= (1-c)²/(1 + 1/E[Z])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZCheck {
    pub c: f64,
    pub expected_z: Estimate,
    pub tail: Estimate,
    pub rhs: f64,
}

impl ZCheck {
    pub fn holds(&self, k: f64) -> bool {
        self.tail.mean >= self.rhs - k * self.tail.stderr
    }
}

/// Monte Carlo check of the concentration of `Z(t) = max_{T ∈ F} Σ_{i ∈ T} t_i`
/// for independent `t_i` supported on `{0} ∪ [½, 1]`.
pub fn z_concentration_check(constraint: &Constraint, t: &[Dist], c: f64, samples: u64, seed: u64) -> Result<ZCheck> {
    if !(c > 0.0 && c < 1.0) {
        return Err(domain(format!("c = {c} must lie in (0, 1)")));
    }
    if constraint.ground() != ItemSet::full(t.len()) {
        return Err(domain("constraint ground set must match the variables"));
    }
    for (i, d) in t.iter().enumerate() {
        if !support_in_z_range(d) {
            return Err(Error::Precondition(format!("t_{i} must be supported on {{0}} ∪ [1/2, 1]")));
        }
    }
    let cfg = McConfig::new(samples.max(1), seed);
    let draw = |rng: &mut mc::McRng| -> Result<f64> {
        let w: Vec<f64> = t.iter().map(|d| d.sample(rng)).collect();
        Ok(constraint.max_weight_set(&w)?.1)
    };
    let first = mc::try_run(&cfg, 1, |rng, row| {
        row[0] = draw(rng)?;
        Ok(())
    })?;
    let mean = first.mean(0);
    // Same seed: the tail is evaluated on the draws that produced the mean.
    let second = mc::try_run(&cfg, 1, |rng, row| {
        row[0] = f64::from(u8::from(draw(rng)? >= c * mean));
        Ok(())
    })?;
    let rhs = if mean > 0.0 { (1.0 - c).powi(2) / (1.0 + 1.0 / mean) } else { 0.0 };
    Ok(ZCheck { c, expected_z: first.estimate(0), tail: second.estimate(0), rhs })
}

fn support_in_z_range(d: &Dist) -> bool {
    let ok = |v: f64| v == 0.0 || (0.5..=1.0).contains(&v);
    match d.as_discrete() {
        Some(dd) => dd.atoms().all(|(v, p)| p == 0.0 || ok(v)),
        None => {
            let (lo, hi) = d.support();
            lo >= 0.5 && hi <= 1.0
        }
    }
}

/// GFT of a single-item posted price `p` on both sides:
/// `G(p) ∫_p^∞ Pr[b > x] dx + Pr[b >= p] ∫_{-∞}^p G(x) dx`, by quadrature
/// for continuous items and enumeration for discrete ones.
pub fn bilateral_fpp_gft(inst: &MarketInstance, p: f64) -> Result<f64> {
    let (b, s) = bilateral(inst)?;
    if let (Some(bd), Some(sd)) = (b.as_discrete(), s.as_discrete()) {
        let eb: f64 = bd.atoms().filter(|a| a.0 >= p).map(|(v, q)| q * v).sum();
        let es: f64 = sd.atoms().filter(|a| a.0 <= p).map(|(v, q)| q * v).sum();
        return Ok(sd.prob_le(p) * eb - bd.prob_ge(p) * es);
    }
    let (blo, bhi) = finite_support(b)?;
    let (slo, shi) = finite_support(s)?;
    let above = numeric::integrate(&|x| b.prob_gt(x), p.max(blo), bhi, 1e-13) + (blo - p).max(0.0);
    let below = numeric::integrate(&|x| s.cdf(x), slo, p.min(shi), 1e-13) + (p - shi).max(0.0);
    Ok(s.cdf(p) * above + b.prob_ge(p) * below)
}

/// First-best GFT `E[(b - s)^+] = ∫ G(x) Pr[b > x] dx` of a single item.
pub fn bilateral_first_best(inst: &MarketInstance) -> Result<f64> {
    let (b, s) = bilateral(inst)?;
    if let (Some(bd), Some(sd)) = (b.as_discrete(), s.as_discrete()) {
        return Ok(bd.atoms().map(|(bv, bp)| bp * sd.atoms().map(|(sv, sp)| sp * (bv - sv).max(0.0)).sum::<f64>()).sum());
    }
    let (_, bhi) = finite_support(b)?;
    let (slo, _) = finite_support(s)?;
    Ok(numeric::integrate(&|x| s.cdf(x) * b.prob_gt(x), slo, bhi, 1e-13))
}

/// Support with an infinite end replaced by the `1e-14` tail quantile.
fn finite_support(d: &Dist) -> Result<(f64, f64)> {
    let (lo, hi) = d.support();
    let lo = if lo.is_finite() { lo } else { d.quantile(1e-14)? };
    let hi = if hi.is_finite() { hi } else { d.quantile(1.0 - 1e-14)? };
    Ok((lo, hi))
}

fn bilateral(inst: &MarketInstance) -> Result<(&Dist, &Dist)> {
    if inst.n() != 1 {
        return Err(domain("bilateral quadrature needs a single item"));
    }
    Ok((inst.buyer(0), inst.seller(0)))
}

/// Best symmetric posted price for one item over a quantile grid of both
/// distributions refined by golden-section search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPrice {
    pub price: f64,
    pub gft: f64,
}

pub fn best_bilateral_fpp(inst: &MarketInstance, grid_points: usize) -> Result<BestPrice> {
    let (b, s) = bilateral(inst)?;
    let mut cands: Vec<f64> = Vec::new();
    for k in 0..=grid_points {
        let q = k as f64 / grid_points as f64;
        cands.push(b.quantile(q)?);
        cands.push(s.quantile(q)?);
    }
    if let Some(d) = b.as_discrete() {
        cands.extend(d.values());
    }
    if let Some(d) = s.as_discrete() {
        cands.extend(d.values());
    }
    cands.retain(|x| x.is_finite());
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = BestPrice { price: cands[0], gft: f64::NEG_INFINITY };
    let mut at = Vec::with_capacity(cands.len());
    for &p in &cands {
        let g = bilateral_fpp_gft(inst, p)?;
        at.push(g);
        if g > best.gft {
            best = BestPrice { price: p, gft: g };
        }
    }
    if !inst.is_discrete() {
        let k = cands.iter().position(|&p| p == best.price).expect("best price is a candidate");
        let lo = cands[k.saturating_sub(1)];
        let hi = cands[(k + 1).min(cands.len() - 1)];
        let (p, g) = numeric::golden_max(|x| bilateral_fpp_gft(inst, x).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-12 * (1.0 + hi.abs()));
        if g > best.gft {
            best = BestPrice { price: p, gft: g };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audits::{exact_gft, first_best_gft};
    use crate::mechanisms::{BuyerOffering, Mechanism};
    use proptest::prelude::*;

    fn u01() -> Dist {
        Dist::uniform(0.0, 1.0).unwrap()
    }

    fn grid(k: usize, shift: f64) -> Dist {
        Dist::discrete((1..=k).map(|j| (shift + j as f64 / k as f64, 1.0 / k as f64)).collect()).unwrap()
    }

    fn mc(samples: u64, seed: u64) -> EvalMode {
        EvalMode::Mc { samples, seed }
    }

    #[test]
    fn uniform_bilateral_decomposition() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        let rep = benchmark_decomposition(&inst, mc(100_000, 1)).unwrap();
        assert!((rep.fb_gft.mean - 1.0 / 6.0).abs() < 4.0 * rep.fb_gft.stderr);
        assert!(rep.terms.iter().all(|t| t.mean.is_finite() && t.mean >= 0.0));
        assert!(rep.chain_holds(3.0), "{rep:?}");
        assert!(rep.buyer_surplus_covered(3.0));
        // r = 1/2 gives two rungs.
        assert_eq!(rep.levels.len(), 2);
        assert!((rep.theta[0][0] - 0.5).abs() < 1e-12 && (rep.theta[0][1] - 0.75).abs() < 1e-12);
        assert!((rep.theta_prime[0][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sure_trade_has_one_rung() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(0.0)).unwrap();
        let rep = benchmark_decomposition(&inst, EvalMode::Exact).unwrap();
        assert_eq!(rep.levels.len(), 1);
        assert_eq!(rep.fb_gft.mean, 1.0);
        assert!(rep.chain_holds(0.0));
    }

    #[test]
    fn exact_decomposition_on_discrete_grid() {
        let inst = MarketInstance::new(vec![grid(4, 0.0), grid(3, 0.2)], vec![grid(5, 0.1), grid(4, 0.0)], Constraint::unit_demand(2)).unwrap();
        let rep = benchmark_decomposition(&inst, EvalMode::Exact).unwrap();
        assert!(rep.chain_holds(0.0), "{rep:?}");
        assert!(rep.buyer_surplus_covered(0.0));
        let fb = first_best_gft(&inst, EvalMode::Exact).unwrap();
        assert!((fb.mean - rep.fb_gft.mean).abs() < 1e-12);
    }

    #[test]
    fn prophet_threshold_examples() {
        let inst = MarketInstance::new(vec![Dist::point(1.0), Dist::point(2.0)], vec![Dist::point(0.0); 2], Constraint::unit_demand(2)).unwrap();
        let xi = prophet_threshold(&inst, &[0.8, 1.5], EvalMode::Exact).unwrap();
        assert_eq!(xi.mean, 0.75);

        let inst = MarketInstance::new(vec![u01(), u01()], vec![u01(), u01()], Constraint::unit_demand(2)).unwrap();
        // v = (½ - s)^+ 1[b >= ½] has CDF ¾ + x/2 on [0, ½].
        let oracle = 0.5 * numeric::integrate(&|x: f64| 1.0 - (0.75 + 0.5 * x).powi(2), 0.0, 0.5, 1e-14);
        let xi = prophet_threshold(&inst, &[0.5, 0.5], mc(200_000, 4)).unwrap();
        assert!((xi.mean - oracle).abs() < 4.0 * xi.stderr, "{xi:?} vs {oracle}");
        let fpp = prophet_fpp(&[0.5, 0.5], xi.mean).unwrap();
        let g = crate::audits::estimate_gft(&fpp, &inst, 200_000, 5).unwrap();
        assert!(g.mean >= oracle - 3.0 * g.stderr);
    }

    #[test]
    fn prophet_needs_unit_demand() {
        let inst = MarketInstance::new(vec![u01(); 2], vec![u01(); 2], Constraint::additive(2)).unwrap();
        assert!(matches!(prophet_threshold(&inst, &[0.5, 0.5], EvalMode::Exact), Err(Error::Precondition(_))));
    }

    #[test]
    fn opt_b_examples() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(0.0)).unwrap();
        assert_eq!(opt_b(&inst, EvalMode::Exact).unwrap().mean, 1.0);
        let inst = MarketInstance::new(vec![grid(4, 0.0), grid(5, 0.0)], vec![grid(3, 0.0), grid(4, -0.1)], Constraint::unit_demand(2)).unwrap();
        let ob = opt_b(&inst, EvalMode::Exact).unwrap().mean;
        let bo = exact_gft(&BuyerOffering, &inst).unwrap();
        assert!(bo >= ob - 1e-12, "{bo} < {ob}");
    }

    #[test]
    fn hl_split_examples() {
        let halves = Dist::discrete(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let inst = MarketInstance::new(vec![Dist::point(1.0); 3], vec![halves.clone(); 3], Constraint::additive(3)).unwrap();
        assert_eq!(hl_split(&inst), (ItemSet::full(3), ItemSet::EMPTY));
        let rare = Dist::discrete(vec![(0.0, 0.1), (2.0, 0.9)]).unwrap();
        let inst = MarketInstance::new(vec![Dist::point(1.0); 3], vec![halves, rare.clone(), rare], Constraint::additive(3)).unwrap();
        let (h, l) = hl_split(&inst);
        assert_eq!((h, l), (ItemSet::singleton(0), ItemSet::from_indices([1, 2])));
    }

    #[test]
    fn separate_sale_examples() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        let sep = separate_sale_bound(&inst, ItemSet::singleton(0)).unwrap();
        assert_eq!(sep.factor, 1.0);
        assert!((sep.bound - 1.0 / 12.0).abs() < 1e-6, "{sep:?}");
        let add = MarketInstance::new(vec![u01(); 4], vec![u01(); 4], Constraint::additive(4)).unwrap();
        let sep = separate_sale_bound(&add, ItemSet::full(4)).unwrap();
        assert_eq!(sep.factor, 2.0);
        assert!((sep.bound - 2.0 * 4.0 / 12.0).abs() < 1e-5);
    }

    #[test]
    fn discrete_virtual_surplus_matches_enumeration() {
        let inst = MarketInstance::bilateral(grid(5, 0.0), grid(4, 0.0)).unwrap();
        let phi = inst.buyer_ironing(0).atom_values().unwrap().to_vec();
        let b = inst.buyer(0).as_discrete().unwrap();
        let s = inst.seller(0).as_discrete().unwrap();
        let brute: f64 = b.atoms().enumerate().map(|(k, (_, p))| p * s.atoms().map(|(sv, q)| q * (phi[k] - sv).max(0.0)).sum::<f64>()).sum();
        assert!((item_virtual_surplus(&inst, 0).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn sb_upper_without_unlikely_items() {
        let inst = MarketInstance::new(vec![grid(3, 0.0); 2], vec![grid(3, 0.0); 2], Constraint::additive(2)).unwrap();
        let up = sb_gft_upper(&inst, EvalMode::Exact).unwrap();
        assert!(up.unlikely.is_empty() && up.separate_sale == 0.0);
        let expect = opt_b(&inst, EvalMode::Exact).unwrap().mean + first_best_gft(&inst, EvalMode::Exact).unwrap().mean;
        assert!((up.total.mean - expect).abs() < 1e-12);
        assert!(up.total.mean >= exact_gft(&BuyerOffering, &inst).unwrap());
    }

    #[test]
    fn brustle_bound_examples() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(0.0)).unwrap();
        assert_eq!(brustle_sd_upper(&inst, EvalMode::Exact).unwrap().total.mean, 2.0);
        let inst = MarketInstance::new(vec![grid(4, 0.0), grid(3, 0.1)], vec![grid(3, 0.0), grid(5, 0.0)], Constraint::unit_demand(2)).unwrap();
        let exact = brustle_sd_upper(&inst, EvalMode::Exact).unwrap();
        let est = brustle_sd_upper(&inst, mc(200_000, 2)).unwrap();
        assert!((exact.virtual_term.mean - est.virtual_term.mean).abs() < 4.0 * est.virtual_term.stderr);
        assert!((exact.cost_term.mean - est.cost_term.mean).abs() < 4.0 * est.cost_term.stderr);
        let add = inst.with_constraint(Constraint::additive(2)).unwrap();
        assert!(matches!(brustle_sd_upper(&add, EvalMode::Exact), Err(Error::Unsupported(_))));
    }

    #[test]
    fn z_check_examples() {
        let t = vec![Dist::point(1.0); 4];
        let z = z_concentration_check(&Constraint::unit_demand(4), &t, 0.5, 1_000, 1).unwrap();
        assert_eq!(z.tail.mean, 1.0);
        assert!(z.holds(0.0));
        let t = vec![Dist::discrete(vec![(0.0, 0.5), (0.75, 0.5)]).unwrap(); 6];
        let z = z_concentration_check(&Constraint::k_uniform(6, 3), &t, 0.5, 100_000, 2).unwrap();
        assert!(z.holds(3.0), "{z:?}");
        let bad = vec![Dist::point(0.3)];
        assert!(z_concentration_check(&Constraint::unit_demand(1), &bad, 0.5, 10, 1).is_err());
    }

    #[test]
    fn low_activation_fpp_earns_half() {
        let inst = MarketInstance::new(vec![u01(); 3], vec![u01(); 3], Constraint::unit_demand(3)).unwrap();
        // Each item activates with probability 0.3 · 0.4 = 0.12.
        let check = low_activation_fpp(&inst, &[0.7; 3], &[0.4; 3], mc(100_000, 3)).unwrap();
        assert!((check.activation - 0.36).abs() < 1e-12);
        assert!(excess_within(&check.excess, 3.0), "{check:?}");
        assert!(low_activation_fpp(&inst, &[0.3; 3], &[0.3; 3], mc(10, 3)).is_err());
    }

    #[test]
    fn bilateral_quadratures() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        assert!((bilateral_fpp_gft(&inst, 0.5).unwrap() - 0.125).abs() < 1e-12);
        assert!((bilateral_fpp_gft(&inst, 0.2).unwrap() - 0.08).abs() < 1e-12);
        assert!((bilateral_first_best(&inst).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        let best = best_bilateral_fpp(&inst, 64).unwrap();
        assert!((best.price - 0.5).abs() < 1e-6 && (best.gft - 0.125).abs() < 1e-12);
        let disc = MarketInstance::bilateral(grid(4, 0.0), grid(4, 0.0)).unwrap();
        let fpp = Fpp::symmetric(vec![0.5]);
        assert!((bilateral_fpp_gft(&disc, 0.5).unwrap() - fpp.exact(&disc).unwrap().gft).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn expected_max_matches_enumeration(a in prop::collection::vec((0.0f64..3.0, 0.05f64..1.0), 1..4),
                                            b in prop::collection::vec((0.0f64..3.0, 0.05f64..1.0), 1..4)) {
            let norm = |v: &[(f64, f64)]| { let t: f64 = v.iter().map(|x| x.1).sum(); v.iter().map(|x| (x.0, x.1 / t)).collect::<Vec<_>>() };
            let (a, b) = (norm(&a), norm(&b));
            let brute: f64 = a.iter().flat_map(|x| b.iter().map(move |y| x.1 * y.1 * x.0.max(y.0))).sum();
            prop_assert!((expected_max(&[a, b]) - brute).abs() < 1e-9);
        }

        #[test]
        fn ladder_length_is_ceil_log2(r in 1e-6f64..1.0) {
            let expect = (2.0 / r).log2().ceil() as usize;
            let got = ladder_levels(r).unwrap();
            // Powers of two sit on the boundary of the ceiling.
            prop_assert!(got == expect || ((2.0 / r).log2().fract() < 1e-9 && got == expect + 1));
        }
    }
}
