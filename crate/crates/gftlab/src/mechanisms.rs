//! Market instances, profiles, outcomes, and the executable mechanisms:
//! fixed and constrained posted prices, seller-adjusted posted prices,
//! buyer offering and seller offering.

use std::cell::RefCell;
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{iron, trade_probability, Dist, IronedVirtual, Side};
use crate::error::{domain, Error, Result};
use crate::feasibility::{Constraint, ItemSet};
use crate::mc::{derive_seed, McRng};
use crate::numeric::bisect_first_true;
use crate::ocrs::{cfpp_prices, GreedyOcrs};

/// Largest profile count accepted by exact enumeration.
pub const EXACT_PROFILE_LIMIT: u128 = 10_000_000;
/// Buyer draws behind one Monte Carlo evaluation of `q(s)`.
pub const SAPP_INNER_SAMPLES: u64 = 20_000;
const SAPP_INNER_SEED: u64 = 0x5A99_1E55;
const HYPOTHESIS_SAMPLES: usize = 2_000;
const THRESHOLD_TOL: f64 = 1e-9;

/// A single buyer facing `n` unit-supply sellers under a feasibility constraint.
#[derive(Clone, Debug)]
pub struct MarketInstance {
    buyers: Vec<Dist>,
    sellers: Vec<Dist>,
    constraint: Constraint,
    trade_probs: Vec<f64>,
    buyer_iron: Vec<IronedVirtual>,
    seller_iron: Vec<IronedVirtual>,
}

impl MarketInstance {
    pub fn new(buyers: Vec<Dist>, sellers: Vec<Dist>, constraint: Constraint) -> Result<Self> {
        let n = buyers.len();
        if n == 0 {
            return Err(domain("a market needs at least one item"));
        }
        if sellers.len() != n {
            return Err(domain(format!("{n} buyer distributions but {} seller distributions", sellers.len())));
        }
        if constraint.ground() != ItemSet::full(n) {
            return Err(domain("constraint ground set must be exactly the market items"));
        }
        constraint.validate()?;
        let trade_probs: Vec<f64> = buyers.iter().zip(&sellers).map(|(b, s)| trade_probability(b, s)).collect();
        if let Some(i) = trade_probs.iter().position(|r| !(*r > 0.0)) {
            return Err(Error::Precondition(format!("item {i} never trades; remove it from the market")));
        }
        let buyer_iron = buyers.iter().map(|d| iron(d, Side::Buyer)).collect();
        let seller_iron = sellers.iter().map(|d| iron(d, Side::Seller)).collect();
        Ok(Self { buyers, sellers, constraint, trade_probs, buyer_iron, seller_iron })
    }

    /// One buyer, one seller, one item.
    pub fn bilateral(buyer: Dist, seller: Dist) -> Result<Self> {
        Self::new(vec![buyer], vec![seller], Constraint::unit_demand(1))
    }

    pub fn n(&self) -> usize {
        self.buyers.len()
    }

    pub fn buyer(&self, i: usize) -> &Dist {
        &self.buyers[i]
    }

    pub fn seller(&self, i: usize) -> &Dist {
        &self.sellers[i]
    }

    pub fn buyers(&self) -> &[Dist] {
        &self.buyers
    }

    pub fn sellers(&self) -> &[Dist] {
        &self.sellers
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    /// Same items under a different constraint.
    pub fn with_constraint(&self, constraint: Constraint) -> Result<Self> {
        Self::new(self.buyers.clone(), self.sellers.clone(), constraint)
    }

    /// `r_i = Pr[b_i >= s_i]`.
    pub fn trade_probability(&self, i: usize) -> f64 {
        self.trade_probs[i]
    }

    pub fn trade_probabilities(&self) -> &[f64] {
        &self.trade_probs
    }

    /// `r = min_i r_i`.
    pub fn min_trade_probability(&self) -> f64 {
        self.trade_probs.iter().copied().fold(1.0, f64::min)
    }

    pub fn buyer_ironing(&self, i: usize) -> &IronedVirtual {
        &self.buyer_iron[i]
    }

    pub fn seller_ironing(&self, i: usize) -> &IronedVirtual {
        &self.seller_iron[i]
    }

    /// Ironed buyer virtual value `φ̃_i(b)`.
    pub fn phi_tilde(&self, i: usize, b: f64) -> Result<f64> {
        self.buyer_iron[i].value(b)
    }

    /// Ironed seller virtual cost `τ̃_i(s)`.
    pub fn tau_tilde(&self, i: usize, s: f64) -> Result<f64> {
        self.seller_iron[i].value(s)
    }

    /// `(Pr[b_i >= s ∧ φ̃_i(b_i) >= s], E[(φ̃_i(b_i) - s)·1[b_i >= s ∧ φ̃_i(b_i) >= s]])`.
    pub fn virtual_tail(&self, i: usize, s: f64) -> (f64, f64) {
        match &self.buyers[i] {
            Dist::Discrete(d) => {
                let vals = self.buyer_iron[i].atom_values().expect("discrete ironing stores atom values");
                d.atoms().zip(vals).filter(|((v, _), phi)| *v >= s && **phi >= s).fold((0.0, 0.0), |acc, ((_, p), phi)| {
                    (acc.0 + p, acc.1 + p * (phi - s))
                })
            }
            Dist::Continuous(_) => match self.buyer_iron[i].threshold(s) {
                None => (0.0, 0.0),
                Some(beta) => {
                    let p = self.buyers[i].prob_ge(beta.max(s));
                    (p, self.buyer_iron[i].integral_to(p) - s * p)
                }
            },
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.buyers.iter().chain(&self.sellers).all(Dist::is_discrete)
    }

    /// Draws a profile together with the buyer's upper-tail ranks.
    pub fn sample_profile(&self, rng: &mut McRng) -> Profile {
        let n = self.n();
        let mut b = Vec::with_capacity(n);
        let mut ranks = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for i in 0..n {
            let (v, w) = self.buyers[i].sample_ranked(rng);
            b.push(v);
            ranks.push(w);
            s.push(self.sellers[i].sample(rng));
        }
        Profile { b, s, ranks: Some(ranks) }
    }

    /// All `(b, s)` profiles of a fully discrete instance.
    pub fn profile_space(&self) -> Result<Grid> {
        let mut coords = self.atom_lists(&self.buyers)?;
        coords.extend(self.atom_lists(&self.sellers)?);
        Grid::new(coords)
    }

    /// All seller profiles of an instance with discrete sellers.
    pub fn seller_space(&self) -> Result<Grid> {
        Grid::new(self.atom_lists(&self.sellers)?)
    }

    /// All buyer profiles of an instance with discrete buyers.
    pub fn buyer_space(&self) -> Result<Grid> {
        Grid::new(self.atom_lists(&self.buyers)?)
    }

    fn atom_lists(&self, dists: &[Dist]) -> Result<Vec<Vec<(f64, f64)>>> {
        dists
            .iter()
            .map(|d| {
                d.as_discrete()
                    .map(|dd| dd.atoms().collect())
                    .ok_or_else(|| Error::Unsupported("exact evaluation needs discrete distributions; discretize first".into()))
            })
            .collect()
    }
}

/// Cartesian product of finite coordinate distributions, enumerated in
/// mixed-radix order with the first coordinate varying slowest.
#[derive(Clone, Debug)]
pub struct Grid {
    coords: Vec<Vec<(f64, f64)>>,
    count: usize,
}

impl Grid {
    pub fn new(coords: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let mut count: u128 = 1;
        for c in &coords {
            count = count.saturating_mul(c.len() as u128);
        }
        if count > EXACT_PROFILE_LIMIT {
            return Err(Error::Capacity {
                what: "profile enumeration",
                size: count.min(usize::MAX as u128) as usize,
                limit: EXACT_PROFILE_LIMIT as usize,
            });
        }
        Ok(Self { coords, count: count as usize })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        self.coords.iter().map(Vec::len).collect()
    }

    /// Digits of point `idx`.
    pub fn digits(&self, mut idx: usize) -> Vec<usize> {
        let mut d = vec![0; self.coords.len()];
        for (k, c) in self.coords.iter().enumerate().rev() {
            d[k] = idx % c.len();
            idx /= c.len();
        }
        d
    }

    /// Values and probability of point `idx`.
    pub fn point(&self, idx: usize) -> (Vec<f64>, f64) {
        let digits = self.digits(idx);
        let mut p = 1.0;
        let vals = digits
            .iter()
            .zip(&self.coords)
            .map(|(&k, c)| {
                p *= c[k].1;
                c[k].0
            })
            .collect();
        (vals, p)
    }

    /// Distance in flat index between neighbours along coordinate `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.coords[k + 1..].iter().map(Vec::len).product()
    }

    pub fn coord(&self, k: usize) -> &[(f64, f64)] {
        &self.coords[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        (0..self.count).map(|i| self.point(i))
    }
}

/// Realized values and costs. `ranks` holds the buyer's upper-tail rank per
/// item; when absent, the smallest rank consistent with `b` is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<f64>>,
}

impl Profile {
    pub fn new(b: Vec<f64>, s: Vec<f64>) -> Self {
        Self { b, s, ranks: None }
    }

    /// Splits a flat `(b..., s...)` point of [`MarketInstance::profile_space`].
    pub fn from_flat(flat: &[f64]) -> Self {
        let n = flat.len() / 2;
        Self::new(flat[..n].to_vec(), flat[n..].to_vec())
    }

    pub fn with_seller(&self, i: usize, s: f64) -> Self {
        let mut p = self.clone();
        p.s[i] = s;
        p
    }

    /// Upper-tail rank of the buyer value for item `i`.
    pub fn rank(&self, inst: &MarketInstance, i: usize) -> f64 {
        if let Some(r) = &self.ranks {
            return r[i];
        }
        match inst.buyer(i) {
            Dist::Discrete(d) => d.prob_gt(self.b[i]),
            Dist::Continuous(c) => c.sf(self.b[i]),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.b.len() != n || self.s.len() != n || self.ranks.as_ref().is_some_and(|r| r.len() != n) {
            return Err(domain(format!("profile does not have {n} items")));
        }
        Ok(())
    }
}

/// Result of running a mechanism on one profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub traded: ItemSet,
    pub buyer_payment: f64,
    pub seller_payments: Vec<f64>,
    pub gft: f64,
}

impl Outcome {
    pub fn no_trade(n: usize) -> Self {
        Self { traded: ItemSet::EMPTY, buyer_payment: 0.0, seller_payments: vec![0.0; n], gft: 0.0 }
    }

    fn settle(profile: &Profile, traded: ItemSet, buyer_payment: f64, seller_payments: Vec<f64>) -> Self {
        let gft = traded.iter().map(|i| profile.b[i] - profile.s[i]).sum();
        Self { traded, buyer_payment, seller_payments, gft }
    }

    /// Buyer payment minus the sum of seller payments.
    pub fn budget_slack(&self) -> f64 {
        self.buyer_payment - self.seller_payments.iter().sum::<f64>()
    }

    pub fn buyer_utility(&self, profile: &Profile) -> f64 {
        self.traded.iter().map(|i| profile.b[i]).sum::<f64>() - self.buyer_payment
    }

    pub fn seller_utility(&self, profile: &Profile, i: usize) -> f64 {
        if self.traded.contains(i) {
            self.seller_payments[i] - profile.s[i]
        } else {
            self.seller_payments[i]
        }
    }
}

/// Exact ex-ante quantities of a mechanism on a discrete instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactSummary {
    pub gft: f64,
    pub buyer_payment: f64,
    pub seller_payments: Vec<f64>,
    /// Smallest per-profile budget slack, when tracked.
    pub expost_min_slack: Option<f64>,
    /// Profiles of positive probability with an IR violation, when tracked.
    pub ir_violations: Option<u64>,
}

impl ExactSummary {
    pub fn exante_slack(&self) -> f64 {
        self.buyer_payment - self.seller_payments.iter().sum::<f64>()
    }
}

/// A mechanism mapping profiles to outcomes.
pub trait Mechanism: Send + Sync {
    fn name(&self) -> String;

    /// Outcome on one profile; `rng` feeds any internal randomization.
    fn outcome(&self, inst: &MarketInstance, profile: &Profile, rng: &mut McRng) -> Result<Outcome>;

    /// Whether the outcome depends on `rng`.
    fn is_randomized(&self) -> bool {
        false
    }

    /// Whether prices are fixed before reports arrive.
    fn is_posted_price(&self) -> bool {
        false
    }

    fn exact(&self, inst: &MarketInstance) -> Result<ExactSummary> {
        exact_by_enumeration(self, inst)
    }
}

/// Tolerance for IR checks during enumeration.
const IR_TOL: f64 = 1e-9;

/// Weighted enumeration of every profile of a discrete instance.
pub fn exact_by_enumeration<M: Mechanism + ?Sized>(m: &M, inst: &MarketInstance) -> Result<ExactSummary> {
    if m.is_randomized() {
        return Err(Error::Unsupported(format!("{} randomizes internally; use Monte Carlo", m.name())));
    }
    let grid = inst.profile_space()?;
    let n = inst.n();
    let mut rng = McRng::seed_from_u64(0);
    let mut gft = 0.0;
    let mut pay_b = 0.0;
    let mut pay_s = vec![0.0; n];
    let mut min_slack = f64::INFINITY;
    let mut ir = 0u64;
    for (flat, p) in grid.iter() {
        let profile = Profile::from_flat(&flat);
        let out = m.outcome(inst, &profile, &mut rng)?;
        gft += p * out.gft;
        pay_b += p * out.buyer_payment;
        for (acc, paid) in pay_s.iter_mut().zip(&out.seller_payments) {
            *acc += p * paid;
        }
        min_slack = min_slack.min(out.budget_slack());
        if out.buyer_utility(&profile) < -IR_TOL || (0..n).any(|i| out.seller_utility(&profile, i) < -IR_TOL) {
            ir += 1;
        }
    }
    Ok(ExactSummary { gft, buyer_payment: pay_b, seller_payments: pay_s, expost_min_slack: Some(min_slack), ir_violations: Some(ir) })
}

fn check_prices(n: usize, theta_b: &[f64], theta_s: &[f64]) -> Result<()> {
    if theta_b.len() != n || theta_s.len() != n {
        return Err(domain(format!("price vectors must have {n} entries")));
    }
    if let Some(i) = (0..n).find(|&i| !(theta_b[i] >= theta_s[i])) {
        return Err(Error::WbbViolation { item: i });
    }
    Ok(())
}

/// Posted-price trade: willing sellers form the menu, the buyer takes a
/// utility-maximizing set from `sub` and buys zero-utility items when they fit.
fn run_posted(inst: &MarketInstance, theta_b: &[f64], theta_s: &[f64], sub: &Constraint, profile: &Profile) -> Result<Outcome> {
    let n = inst.n();
    check_prices(n, theta_b, theta_s)?;
    profile.check(n)?;
    let willing = ItemSet::from_indices((0..n).filter(|&i| profile.s[i] <= theta_s[i]));
    let menu = sub.restrict(willing.intersect(sub.ground()))?;
    let w: Vec<f64> = (0..n).map(|i| profile.b[i] - theta_b[i]).collect();
    let (mut set, _) = menu.max_weight_set(&w)?;
    for i in menu.ground().iter() {
        if !set.contains(i) && w[i] == 0.0 && menu.admits(set.with(i)) {
            set = set.with(i);
        }
    }
    let buyer_payment = set.iter().map(|i| theta_b[i]).sum();
    let seller_payments = (0..n).map(|i| if set.contains(i) { theta_s[i] } else { 0.0 }).collect();
    Ok(Outcome::settle(profile, set, buyer_payment, seller_payments))
}

/// Fixed posted prices under the market constraint.
pub fn run_fpp(inst: &MarketInstance, theta_b: &[f64], theta_s: &[f64], profile: &Profile) -> Result<Outcome> {
    run_posted(inst, theta_b, theta_s, inst.constraint(), profile)
}

/// Fixed posted prices where the buyer may only take sets feasible in `sub`.
pub fn run_cfpp(inst: &MarketInstance, theta_b: &[f64], theta_s: &[f64], sub: &Constraint, profile: &Profile) -> Result<Outcome> {
    run_posted(inst, theta_b, theta_s, sub, profile)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fpp {
    pub theta_b: Vec<f64>,
    pub theta_s: Vec<f64>,
}

impl Fpp {
    pub fn new(theta_b: Vec<f64>, theta_s: Vec<f64>) -> Result<Self> {
        check_prices(theta_b.len(), &theta_b, &theta_s)?;
        Ok(Self { theta_b, theta_s })
    }

    /// The same price `p_i` on both sides of every item.
    pub fn symmetric(p: Vec<f64>) -> Self {
        Self { theta_s: p.clone(), theta_b: p }
    }
}

impl Mechanism for Fpp {
    fn name(&self) -> String {
        "fpp".into()
    }

    fn outcome(&self, inst: &MarketInstance, profile: &Profile, _: &mut McRng) -> Result<Outcome> {
        run_fpp(inst, &self.theta_b, &self.theta_s, profile)
    }

    fn is_posted_price(&self) -> bool {
        true
    }
}

/// Where a constrained posted-price mechanism gets its subconstraint.
#[derive(Clone, Debug)]
pub enum SubConstraint {
    Fixed(Constraint),
    /// Drawn afresh per profile from an OCRS at activation probabilities `qhat`.
    Ocrs { scheme: GreedyOcrs, qhat: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Cfpp {
    pub theta_b: Vec<f64>,
    pub theta_s: Vec<f64>,
    pub sub: SubConstraint,
}

impl Cfpp {
    pub fn new(theta_b: Vec<f64>, theta_s: Vec<f64>, sub: SubConstraint) -> Result<Self> {
        check_prices(theta_b.len(), &theta_b, &theta_s)?;
        Ok(Self { theta_b, theta_s, sub })
    }

    /// Buyer must take at least `h` items or nothing.
    pub fn size_floor(inst: &MarketInstance, theta_b: Vec<f64>, theta_s: Vec<f64>, h: usize) -> Result<Self> {
        Self::new(theta_b, theta_s, SubConstraint::Fixed(Constraint::size_floor(inst.constraint().clone(), h)))
    }
}

impl Mechanism for Cfpp {
    fn name(&self) -> String {
        match &self.sub {
            SubConstraint::Fixed(Constraint::SizeFloor { h, .. }) => format!("cfpp_h{h}"),
            SubConstraint::Fixed(_) => "cfpp".into(),
            SubConstraint::Ocrs { scheme, .. } => format!("cfpp_{}", scheme.name()),
        }
    }

    fn outcome(&self, inst: &MarketInstance, profile: &Profile, rng: &mut McRng) -> Result<Outcome> {
        match &self.sub {
            SubConstraint::Fixed(sub) => run_cfpp(inst, &self.theta_b, &self.theta_s, sub, profile),
            SubConstraint::Ocrs { scheme, qhat } => {
                let sub = scheme.sample_with(qhat, rng)?;
                run_cfpp(inst, &self.theta_b, &self.theta_s, &sub, profile)
            }
        }
    }

    fn is_randomized(&self) -> bool {
        matches!(self.sub, SubConstraint::Ocrs { .. })
    }

    fn is_posted_price(&self) -> bool {
        true
    }
}

/// Largest report of seller `i` at or above `s` at which `trades` still holds.
///
/// Discrete sellers are scanned atom by atom; continuous sellers are bisected
/// to [`THRESHOLD_TOL`], capped at the support top.
fn seller_threshold(seller: &Dist, s: f64, trades: &dyn Fn(f64) -> Result<bool>) -> Result<f64> {
    match seller {
        Dist::Discrete(d) => {
            let start = d.values().partition_point(|v| *v < s - 1e-12 * s.abs().max(1.0));
            let mut last = s;
            for &v in &d.values()[start..] {
                if trades(v)? {
                    last = v;
                } else {
                    break;
                }
            }
            Ok(last.max(s))
        }
        Dist::Continuous(c) => {
            let (_, hi) = c.support();
            let top = if hi.is_finite() { hi } else { c.quantile(1.0 - 1e-12) };
            if top <= s {
                return Ok(s);
            }
            if trades(top)? {
                return Ok(top);
            }
            let err = RefCell::new(None);
            let t = bisect_first_true(
                |z| match trades(z) {
                    Ok(v) => !v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        true
                    }
                },
                s,
                top,
                THRESHOLD_TOL,
            );
            match err.into_inner() {
                Some(e) => Err(e),
                None => Ok(t),
            }
        }
    }
}

fn bo_allocation(inst: &MarketInstance, b: &[f64], tau: &[f64]) -> Result<ItemSet> {
    let w: Vec<f64> = b.iter().zip(tau).map(|(b, t)| b - t).collect();
    Ok(inst.constraint().max_weight_set(&w)?.0)
}

/// Buyer offering: trade the max-weight set under weights `b_i - τ̃_i(s_i)`;
/// the buyer pays `Σ τ̃_i(s_i)` and each traded seller its threshold cost.
pub fn run_buyer_offering(inst: &MarketInstance, profile: &Profile) -> Result<Outcome> {
    let n = inst.n();
    profile.check(n)?;
    let tau: Vec<f64> = (0..n).map(|i| inst.tau_tilde(i, profile.s[i])).collect::<Result<_>>()?;
    let traded = bo_allocation(inst, &profile.b, &tau)?;
    let buyer_payment = traded.iter().map(|i| tau[i]).sum();
    let mut seller_payments = vec![0.0; n];
    for i in traded.iter() {
        let trades = |z: f64| -> Result<bool> {
            let mut t = tau.clone();
            t[i] = inst.tau_tilde(i, z)?;
            Ok(bo_allocation(inst, &profile.b, &t)?.contains(i))
        };
        seller_payments[i] = seller_threshold(inst.seller(i), profile.s[i], &trades)?;
    }
    Ok(Outcome::settle(profile, traded, buyer_payment, seller_payments))
}

/// Seller offering on a bilateral market: trade iff `φ̃(b) >= s`; the buyer
/// pays the smallest value that still trades and the seller receives it.
pub fn run_seller_offering(inst: &MarketInstance, profile: &Profile) -> Result<Outcome> {
    if inst.n() != 1 {
        return Err(Error::Unsupported("seller offering is defined for bilateral trade only".into()));
    }
    profile.check(1)?;
    let (b, s) = (profile.b[0], profile.s[0]);
    if inst.phi_tilde(0, b)? < s {
        return Ok(Outcome::no_trade(1));
    }
    let price = inst.buyer_ironing(0).threshold(s).unwrap_or(b).min(b);
    Ok(Outcome::settle(profile, ItemSet::singleton(0), price, vec![price]))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuyerOffering;

impl Mechanism for BuyerOffering {
    fn name(&self) -> String {
        "buyer_offering".into()
    }

    fn outcome(&self, inst: &MarketInstance, profile: &Profile, _: &mut McRng) -> Result<Outcome> {
        run_buyer_offering(inst, profile)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SellerOffering;

impl Mechanism for SellerOffering {
    fn name(&self) -> String {
        "seller_offering".into()
    }

    fn outcome(&self, inst: &MarketInstance, profile: &Profile, _: &mut McRng) -> Result<Outcome> {
        run_seller_offering(inst, profile)
    }
}

/// `q_i(s) = E_b[x_i(b, s)·1[φ̃_i(b_i) >= s_i]]` and
/// `E_b[(φ̃_i(b_i) - s_i)·x_i(b, s)]` at a fixed seller profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleMoments {
    pub q: Vec<f64>,
    pub virtual_surplus: Vec<f64>,
    /// Standard errors of `q` when it was estimated by sampling.
    pub q_stderr: Option<Vec<f64>>,
}

/// Allocation rule `x(b, s)` feeding a seller-adjusted posted price map.
pub trait AllocationRule: Send + Sync + std::fmt::Debug {
    fn name(&self) -> String;

    fn allocate(&self, inst: &MarketInstance, b: &[f64], s: &[f64]) -> Result<ItemSet>;

    /// Closed-form moments, when the rule has them.
    fn closed_moments(&self, _inst: &MarketInstance, _s: &[f64]) -> Option<Result<RuleMoments>> {
        None
    }
}

/// Moments of `rule` at seller profile `s`: closed form, exact enumeration
/// over discrete buyers, or a fixed-seed Monte Carlo estimate.
pub fn rule_moments(rule: &dyn AllocationRule, inst: &MarketInstance, s: &[f64]) -> Result<RuleMoments> {
    if let Some(m) = rule.closed_moments(inst, s) {
        return m;
    }
    let n = inst.n();
    let phi_gap = |b: &[f64], x: ItemSet| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut q = vec![0.0; n];
        let mut vs = vec![0.0; n];
        for i in x.iter() {
            let gap = inst.phi_tilde(i, b[i])? - s[i];
            vs[i] = gap;
            if gap >= 0.0 {
                q[i] = 1.0;
            }
        }
        Ok((q, vs))
    };
    if let Ok(grid) = inst.buyer_space() {
        let mut q = vec![0.0; n];
        let mut vs = vec![0.0; n];
        for (b, p) in grid.iter() {
            let x = rule.allocate(inst, &b, s)?;
            let (dq, dv) = phi_gap(&b, x)?;
            for i in 0..n {
                q[i] += p * dq[i];
                vs[i] += p * dv[i];
            }
        }
        return Ok(RuleMoments { q, virtual_surplus: vs, q_stderr: None });
    }
    let tag = s.iter().fold(0u64, |h, v| derive_seed(h, v.to_bits()));
    let mut rng = McRng::seed_from_u64(derive_seed(SAPP_INNER_SEED, tag));
    let mut tally = crate::mc::Tally::new(2 * n);
    let mut row = vec![0.0; 2 * n];
    for _ in 0..SAPP_INNER_SAMPLES {
        let b: Vec<f64> = inst.buyers().iter().map(|d| d.sample(&mut rng)).collect();
        let x = rule.allocate(inst, &b, s)?;
        let (dq, dv) = phi_gap(&b, x)?;
        row[..n].copy_from_slice(&dq);
        row[n..].copy_from_slice(&dv);
        tally.push(&row);
    }
    Ok(RuleMoments {
        q: (0..n).map(|i| tally.mean(i)).collect(),
        virtual_surplus: (0..n).map(|i| tally.mean(n + i)).collect(),
        q_stderr: Some((0..n).map(|i| tally.stderr(i)).collect()),
    })
}

/// Trade item `i ∈ L` only when it is the sole item of `L` with `b_j >= s_j`
/// and `φ̃_i(b_i) >= s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlikelyTradeRule {
    pub items: ItemSet,
}

pub fn unlikely_trade_rule(inst: &MarketInstance, items: ItemSet) -> Result<UnlikelyTradeRule> {
    if !items.is_subset(ItemSet::full(inst.n())) {
        return Err(domain("rule items must be market items"));
    }
    Ok(UnlikelyTradeRule { items })
}

impl AllocationRule for UnlikelyTradeRule {
    fn name(&self) -> String {
        "unlikely_trade".into()
    }

    fn allocate(&self, inst: &MarketInstance, b: &[f64], s: &[f64]) -> Result<ItemSet> {
        let mut tradeable = self.items.iter().filter(|&j| b[j] >= s[j]);
        let (Some(i), None) = (tradeable.next(), tradeable.next()) else {
            return Ok(ItemSet::EMPTY);
        };
        Ok(if inst.phi_tilde(i, b[i])? >= s[i] { ItemSet::singleton(i) } else { ItemSet::EMPTY })
    }

    fn closed_moments(&self, inst: &MarketInstance, s: &[f64]) -> Option<Result<RuleMoments>> {
        let n = inst.n();
        let below: Vec<f64> = (0..n).map(|j| inst.buyer(j).prob_lt(s[j])).collect();
        let mut q = vec![0.0; n];
        let mut vs = vec![0.0; n];
        for i in self.items.iter() {
            let others: f64 = self.items.without(i).iter().map(|j| below[j]).product();
            let (p, surplus) = inst.virtual_tail(i, s[i]);
            q[i] = p * others;
            vs[i] = surplus * others;
        }
        Some(Ok(RuleMoments { q, virtual_surplus: vs, q_stderr: None }))
    }
}

/// Trade the item maximizing `φ̃_k(b_k) - s_k` when that score is
/// nonnegative; ties go to the lowest index.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReductionRule;

pub fn reduction_rule(inst: &MarketInstance) -> Result<ReductionRule> {
    match inst.constraint() {
        Constraint::UnitDemand { .. } => Ok(ReductionRule),
        _ => Err(Error::Precondition("the reduction rule needs a unit-demand market".into())),
    }
}

impl AllocationRule for ReductionRule {
    fn name(&self) -> String {
        "reduction".into()
    }

    fn allocate(&self, inst: &MarketInstance, b: &[f64], s: &[f64]) -> Result<ItemSet> {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..inst.n() {
            let y = inst.phi_tilde(k, b[k])? - s[k];
            if best.is_none_or(|(_, v)| y > v) {
                best = Some((k, y));
            }
        }
        Ok(match best {
            Some((i, y)) if y >= 0.0 => ItemSet::singleton(i),
            _ => ItemSet::EMPTY,
        })
    }

    fn closed_moments(&self, inst: &MarketInstance, s: &[f64]) -> Option<Result<RuleMoments>> {
        // Scores Y_k = φ̃_k(b_k) - s_k are independent atoms for discrete buyers.
        let n = inst.n();
        let mut scores: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n);
        for (k, &sk) in s.iter().enumerate().take(n) {
            let d = inst.buyer(k).as_discrete()?;
            let vals = inst.buyer_ironing(k).atom_values()?;
            scores.push(vals.iter().zip(d.masses()).map(|(phi, p)| (phi - sk, *p)).collect());
        }
        let below = |k: usize, y: f64, strict: bool| -> f64 {
            scores[k].iter().filter(|(v, _)| if strict { *v < y } else { *v <= y }).map(|a| a.1).sum()
        };
        let mut q = vec![0.0; n];
        let mut vs = vec![0.0; n];
        for i in 0..n {
            for &(y, p) in &scores[i] {
                if y < 0.0 {
                    continue;
                }
                let mut w = p;
                for k in 0..n {
                    if k != i {
                        w *= below(k, y, k < i);
                    }
                }
                q[i] += w;
                vs[i] += w * y;
            }
        }
        Some(Ok(RuleMoments { q, virtual_surplus: vs, q_stderr: None }))
    }
}

/// Seller-adjusted prices `θ_i(s) = F_i^{-1}(1 - q_i(s)/2)` derived from an
/// allocation rule.
#[derive(Clone, Debug)]
pub struct SappPriceMap {
    rule: Arc<dyn AllocationRule>,
}

/// Prices quoted at one seller profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SappQuote {
    pub q: Vec<f64>,
    pub theta: Vec<f64>,
    pub virtual_surplus: Vec<f64>,
}

impl SappQuote {
    /// Largest upper-tail rank at which item `i` is affordable.
    pub fn reach(&self, i: usize) -> f64 {
        0.5 * self.q[i]
    }
}

/// Checks the rule hypotheses on sampled profiles: at most one item trades,
/// `x_i` is nonincreasing in `s_i` and nondecreasing in every other `s_j`.
pub fn check_rule_hypotheses(rule: &dyn AllocationRule, inst: &MarketInstance, samples: usize, seed: u64) -> Result<()> {
    let mut rng = McRng::seed_from_u64(seed);
    let n = inst.n();
    for _ in 0..samples {
        let p = inst.sample_profile(&mut rng);
        let x = rule.allocate(inst, &p.b, &p.s)?;
        if x.len() > 1 {
            return Err(Error::Construction(format!("{} trades {} items at once", rule.name(), x.len())));
        }
        for j in 0..n {
            let raised = inst.seller(j).sample(&mut rng).max(p.s[j]);
            let mut s2 = p.s.clone();
            s2[j] = raised;
            let y = rule.allocate(inst, &p.b, &s2)?;
            if y.contains(j) && !x.contains(j) {
                return Err(Error::Construction(format!("x_{j} increases with its own cost")));
            }
            if let Some(i) = x.iter().find(|&i| i != j && !y.contains(i)) {
                return Err(Error::Construction(format!("x_{i} decreases with the cost of item {j}")));
            }
        }
    }
    Ok(())
}

/// Builds the price map after checking the rule hypotheses on sampled profiles.
pub fn sapp_build(inst: &MarketInstance, rule: Arc<dyn AllocationRule>) -> Result<SappPriceMap> {
    check_rule_hypotheses(rule.as_ref(), inst, HYPOTHESIS_SAMPLES, SAPP_INNER_SEED)?;
    Ok(SappPriceMap { rule })
}

impl SappPriceMap {
    pub fn rule(&self) -> &dyn AllocationRule {
        self.rule.as_ref()
    }

    pub fn quote(&self, inst: &MarketInstance, s: &[f64]) -> Result<SappQuote> {
        let m = rule_moments(self.rule.as_ref(), inst, s)?;
        let theta = m
            .q
            .iter()
            .enumerate()
            .map(|(i, q)| inst.buyer(i).quantile((1.0 - 0.5 * q).clamp(0.0, 1.0)))
            .collect::<Result<_>>()?;
        Ok(SappQuote { q: m.q, theta, virtual_surplus: m.virtual_surplus })
    }

    /// Checks bi-monotonicity of `θ` over every seller profile of a discrete
    /// instance; returns the number of violating neighbour pairs.
    pub fn monotonicity_violations(&self, inst: &MarketInstance) -> Result<usize> {
        let grid = inst.seller_space()?;
        let n = inst.n();
        let quotes: Vec<SappQuote> = (0..grid.len()).into_par_iter().map(|k| self.quote(inst, &grid.point(k).0)).collect::<Result<_>>()?;
        let mut bad = 0;
        for k in 0..grid.len() {
            let d = grid.digits(k);
            for j in 0..n {
                if d[j] + 1 == grid.dims()[j] {
                    continue;
                }
                let up = &quotes[k + grid.stride(j)];
                for i in 0..n {
                    let (a, b) = (quotes[k].theta[i], up.theta[i]);
                    if (i == j && b < a - 1e-12) || (i != j && b > a + 1e-12) {
                        bad += 1;
                    }
                }
            }
        }
        Ok(bad)
    }
}

/// Item the buyer buys under `quote`: the best affordable utility, ties to
/// the lowest index.
fn sapp_choice(inst: &MarketInstance, profile: &Profile, quote: &SappQuote) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..inst.n() {
        let reach = quote.reach(i);
        if !(reach > 0.0) || profile.rank(inst, i) > reach {
            continue;
        }
        let u = profile.b[i] - quote.theta[i];
        if best.is_none_or(|(_, v)| u > v) {
            best = Some((i, u));
        }
    }
    best.map(|(i, _)| i)
}

/// Offers every item at `θ_i(s)`; the buyer buys at most one, and the traded
/// seller receives the largest cost at which the buyer would still buy.
pub fn run_sapp(map: &SappPriceMap, inst: &MarketInstance, profile: &Profile) -> Result<Outcome> {
    let n = inst.n();
    profile.check(n)?;
    let quote = map.quote(inst, &profile.s)?;
    let Some(i) = sapp_choice(inst, profile, &quote) else {
        return Ok(Outcome::no_trade(n));
    };
    let trades = |z: f64| -> Result<bool> {
        let moved = profile.with_seller(i, z);
        let q = map.quote(inst, &moved.s)?;
        Ok(sapp_choice(inst, &moved, &q) == Some(i))
    };
    let mut seller_payments = vec![0.0; n];
    seller_payments[i] = seller_threshold(inst.seller(i), profile.s[i], &trades)?;
    Ok(Outcome::settle(profile, ItemSet::singleton(i), quote.theta[i], seller_payments))
}

/// Exact SAPP quantities on a fully discrete instance, integrating the
/// buyer's ranks cell by cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SappExact {
    pub summary: ExactSummary,
    /// `E[Σ_i (φ̃_i(b_i) - s_i)·x_i(b, s)]` of the underlying rule.
    pub virtual_surplus: f64,
    /// Smallest `min(x̂ - (q + q²)/4, q/2 - x̂)` over seller profiles and items.
    pub sandwich_slack: f64,
}

struct SellerCell {
    xhat: Vec<f64>,
    gft: f64,
    pay: f64,
    vs: f64,
    slack: f64,
}

fn sapp_cell(map: &SappPriceMap, inst: &MarketInstance, s: &[f64]) -> Result<SellerCell> {
    let n = inst.n();
    let quote = map.quote(inst, s)?;
    // Affordable rank cells per item: (utility, value, probability).
    let cells: Vec<Vec<(f64, f64, f64)>> = (0..n)
        .map(|j| {
            let d = inst.buyer(j).as_discrete().expect("checked discrete");
            let reach = quote.reach(j);
            (0..d.len())
                .filter_map(|k| {
                    let len = d.tail_at(k).min(reach) - d.tail_at(k + 1);
                    (len > 0.0).then(|| (d.values()[k] - quote.theta[j], d.values()[k], len))
                })
                .collect()
        })
        .collect();
    let mut xhat = vec![0.0; n];
    let mut gft = 0.0;
    for i in 0..n {
        for &(u, v, a) in &cells[i] {
            let mut p = a;
            for (j, cj) in cells.iter().enumerate() {
                if j == i {
                    continue;
                }
                let beats: f64 = cj.iter().filter(|c| if j < i { c.0 >= u } else { c.0 > u }).map(|c| c.2).sum();
                p *= 1.0 - beats;
            }
            xhat[i] += p;
            gft += p * (v - s[i]);
        }
    }
    let pay = (0..n).map(|i| xhat[i] * quote.theta[i]).sum();
    let slack = (0..n)
        .map(|i| {
            let q = quote.q[i];
            (xhat[i] - 0.25 * (q + q * q)).min(0.5 * q - xhat[i])
        })
        .fold(f64::INFINITY, f64::min);
    Ok(SellerCell { xhat, gft, pay, vs: quote.virtual_surplus.iter().sum(), slack })
}

/// Exact ex-ante GFT, payments, virtual surplus and sandwich slack of a SAPP.
///
/// Seller payments use the monotonicity of trade in the own report: at cost
/// atom `c_k` the expected threshold is `Σ_{m>=k} c_m (x̂(c_m) - x̂(c_{m+1}))`.
pub fn sapp_exact(map: &SappPriceMap, inst: &MarketInstance) -> Result<SappExact> {
    if !inst.is_discrete() {
        return Err(Error::Unsupported("exact SAPP evaluation needs discrete distributions".into()));
    }
    let n = inst.n();
    let grid = inst.seller_space()?;
    let cells: Vec<SellerCell> = (0..grid.len()).into_par_iter().map(|k| sapp_cell(map, inst, &grid.point(k).0)).collect::<Result<_>>()?;
    let probs: Vec<f64> = (0..grid.len()).map(|k| grid.point(k).1).collect();
    let mut gft = 0.0;
    let mut pay_b = 0.0;
    let mut vs = 0.0;
    let mut slack = f64::INFINITY;
    for (c, p) in cells.iter().zip(&probs) {
        gft += p * c.gft;
        pay_b += p * c.pay;
        vs += p * c.vs;
        slack = slack.min(c.slack);
    }
    let dims = grid.dims();
    let mut pay_s = vec![0.0; n];
    for i in 0..n {
        let stride = grid.stride(i);
        let atoms = grid.coord(i);
        for base in (0..grid.len()).filter(|&k| grid.digits(k)[i] == 0) {
            let others = probs[base] / atoms[0].1;
            let mut tail = 0.0;
            for k in (0..dims[i]).rev() {
                let x = cells[base + k * stride].xhat[i];
                let next = if k + 1 < dims[i] { cells[base + (k + 1) * stride].xhat[i] } else { 0.0 };
                tail += atoms[k].0 * (x - next);
                pay_s[i] += others * atoms[k].1 * tail;
            }
        }
    }
    Ok(SappExact {
        summary: ExactSummary { gft, buyer_payment: pay_b, seller_payments: pay_s, expost_min_slack: None, ir_violations: None },
        virtual_surplus: vs,
        sandwich_slack: slack,
    })
}

#[derive(Clone, Debug)]
pub struct Sapp {
    pub map: SappPriceMap,
}

impl Sapp {
    pub fn new(inst: &MarketInstance, rule: Arc<dyn AllocationRule>) -> Result<Self> {
        Ok(Self { map: sapp_build(inst, rule)? })
    }
}

impl Mechanism for Sapp {
    fn name(&self) -> String {
        format!("sapp_{}", self.map.rule().name())
    }

    fn outcome(&self, inst: &MarketInstance, profile: &Profile, _: &mut McRng) -> Result<Outcome> {
        run_sapp(&self.map, inst, profile)
    }

    fn exact(&self, inst: &MarketInstance) -> Result<ExactSummary> {
        Ok(sapp_exact(&self.map, inst)?.summary)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    UnlikelyTrade,
    Reduction,
}

/// JSON configuration of a mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MechanismSpec {
    Fpp {
        theta_b: Vec<f64>,
        theta_s: Vec<f64>,
    },
    /// Size floor `h` with explicit seller prices, or OCRS-derived seller
    /// prices from `q` and `delta` with `theta_b` as the buyer prices.
    Cfpp {
        theta_b: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_s: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Sapp {
        rule: RuleName,
        /// Items eligible under the unlikely-trade rule; all items by default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        items: Option<Vec<usize>>,
    },
    BuyerOffering,
    SellerOffering,
}

impl MechanismSpec {
    pub fn build(&self, inst: &MarketInstance) -> Result<Box<dyn Mechanism>> {
        Ok(match self {
            MechanismSpec::Fpp { theta_b, theta_s } => Box::new(Fpp::new(theta_b.clone(), theta_s.clone())?),
            MechanismSpec::Cfpp { theta_b, theta_s, h, q, delta } => match (h, theta_s, q, delta) {
                (Some(h), Some(ts), _, _) => Box::new(Cfpp::size_floor(inst, theta_b.clone(), ts.clone(), *h)?),
                (None, _, Some(q), Some(delta)) => Box::new(cfpp_prices(inst, theta_b, q, *delta)?.mechanism()),
                _ => return Err(Error::Parameter("cfpp needs either h with theta_s, or q with delta".into())),
            },
            MechanismSpec::Sapp { rule, items } => {
                let rule: Arc<dyn AllocationRule> = match rule {
                    RuleName::UnlikelyTrade => {
                        let set = items.as_ref().map_or(ItemSet::full(inst.n()), |v| ItemSet::from_indices(v.iter().copied()));
                        Arc::new(unlikely_trade_rule(inst, set)?)
                    }
                    RuleName::Reduction => Arc::new(reduction_rule(inst)?),
                };
                Box::new(Sapp::new(inst, rule)?)
            }
            MechanismSpec::BuyerOffering => Box::new(BuyerOffering),
            MechanismSpec::SellerOffering => {
                if inst.n() != 1 {
                    return Err(Error::Unsupported("seller offering is defined for bilateral trade only".into()));
                }
                Box::new(SellerOffering)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u01() -> Dist {
        Dist::uniform(0.0, 1.0).unwrap()
    }

    fn grid(k: usize) -> Dist {
        let vals: Vec<f64> = (1..=k).map(|j| j as f64 / k as f64).collect();
        Dist::Discrete(crate::distributions::Discrete::uniform_on(&vals).unwrap())
    }

    fn rng() -> McRng {
        McRng::seed_from_u64(1)
    }

    #[test]
    fn fpp_examples() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        let out = run_fpp(&inst, &[0.5], &[0.5], &Profile::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!(out.traded, ItemSet::singleton(0));
        assert_eq!((out.gft, out.buyer_payment, out.seller_payments[0]), (1.0, 0.5, 0.5));
        let out = run_fpp(&inst, &[0.5], &[0.5], &Profile::new(vec![0.4], vec![0.0])).unwrap();
        assert_eq!(out, Outcome::no_trade(1));
        assert!(matches!(run_fpp(&inst, &[0.4], &[0.5], &Profile::new(vec![1.0], vec![0.0])), Err(Error::WbbViolation { item: 0 })));
    }

    #[test]
    fn fpp_buys_at_equality() {
        let inst = MarketInstance::new(vec![u01(), u01()], vec![u01(), u01()], Constraint::additive(2)).unwrap();
        let out = run_fpp(&inst, &[0.5, 0.5], &[0.5, 0.5], &Profile::new(vec![0.5, 0.9], vec![0.1, 0.2])).unwrap();
        assert_eq!(out.traded, ItemSet::full(2));
    }

    #[test]
    fn size_floor_one_matches_fpp() {
        let inst = MarketInstance::new(vec![u01(); 4], vec![u01(); 4], Constraint::k_uniform(4, 2)).unwrap();
        let sub = Constraint::size_floor(inst.constraint().clone(), 1);
        let (tb, ts) = ([0.6, 0.5, 0.7, 0.55], [0.4, 0.5, 0.3, 0.45]);
        let mut r = rng();
        for _ in 0..1000 {
            let p = inst.sample_profile(&mut r);
            assert_eq!(run_fpp(&inst, &tb, &ts, &p).unwrap(), run_cfpp(&inst, &tb, &ts, &sub, &p).unwrap());
        }
    }

    #[test]
    fn size_floor_two_examples() {
        let inst = MarketInstance::new(vec![u01(); 3], vec![u01(); 3], Constraint::additive(3)).unwrap();
        let sub = Constraint::size_floor(inst.constraint().clone(), 2);
        let (tb, ts) = ([0.5; 3], [0.5; 3]);
        let out = run_cfpp(&inst, &tb, &ts, &sub, &Profile::new(vec![0.9, 0.2, 0.1], vec![0.1, 0.9, 0.9])).unwrap();
        assert_eq!(out.traded, ItemSet::EMPTY);
        let out = run_cfpp(&inst, &tb, &ts, &sub, &Profile::new(vec![0.9, 0.8, 0.1], vec![0.1, 0.2, 0.9])).unwrap();
        assert!(out.traded.len() >= 2);
        let p = Profile::new(vec![0.9, 0.8, 0.1], vec![0.1, 0.2, 0.9]);
        for i in out.traded.iter() {
            assert!(p.b[i] - p.s[i] >= tb[i] - ts[i]);
        }
    }

    #[test]
    fn buyer_offering_degenerate_trade() {
        let inst = MarketInstance::bilateral(Dist::point(1.0), Dist::point(0.0)).unwrap();
        let out = run_buyer_offering(&inst, &Profile::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!((out.gft, out.buyer_payment), (1.0, 0.0));
    }

    #[test]
    fn buyer_offering_is_exante_strongly_balanced_on_grids() {
        let inst = MarketInstance::new(vec![grid(5), grid(4)], vec![grid(4), grid(5)], Constraint::unit_demand(2)).unwrap();
        let ex = BuyerOffering.exact(&inst).unwrap();
        assert!(ex.exante_slack().abs() < 1e-12, "{}", ex.exante_slack());
        assert_eq!(ex.ir_violations, Some(0));
    }

    #[test]
    fn seller_offering_uniform_region() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        let out = run_seller_offering(&inst, &Profile::new(vec![0.8], vec![0.5])).unwrap();
        assert_eq!(out.traded, ItemSet::singleton(0));
        assert!((out.buyer_payment - 0.75).abs() < 1e-6);
        let out = run_seller_offering(&inst, &Profile::new(vec![0.7], vec![0.5])).unwrap();
        assert_eq!(out.traded, ItemSet::EMPTY);
    }

    #[test]
    fn unlikely_trade_rule_examples() {
        let inst = MarketInstance::new(vec![u01(), u01()], vec![u01(), u01()], Constraint::additive(2)).unwrap();
        let rule = unlikely_trade_rule(&inst, ItemSet::full(2)).unwrap();
        assert_eq!(rule.allocate(&inst, &[0.9, 0.9], &[0.1, 0.1]).unwrap(), ItemSet::EMPTY);
        assert_eq!(rule.allocate(&inst, &[0.9, 0.05], &[0.3, 0.1]).unwrap(), ItemSet::singleton(0));
    }

    #[test]
    fn reduction_rule_examples() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        assert_eq!(ReductionRule.allocate(&inst, &[0.9], &[0.5]).unwrap(), ItemSet::singleton(0));
        assert_eq!(ReductionRule.allocate(&inst, &[0.6], &[0.5]).unwrap(), ItemSet::EMPTY);
    }

    #[test]
    fn closed_moments_match_enumeration() {
        let inst = MarketInstance::new(vec![grid(4), grid(3), grid(5)], vec![grid(3), grid(4), grid(2)], Constraint::unit_demand(3)).unwrap();
        let rules: Vec<Arc<dyn AllocationRule>> =
            vec![Arc::new(ReductionRule), Arc::new(unlikely_trade_rule(&inst, ItemSet::from_indices([0, 2])).unwrap())];
        #[derive(Debug)]
        struct Plain(Arc<dyn AllocationRule>);
        impl AllocationRule for Plain {
            fn name(&self) -> String {
                self.0.name()
            }
            fn allocate(&self, inst: &MarketInstance, b: &[f64], s: &[f64]) -> Result<ItemSet> {
                self.0.allocate(inst, b, s)
            }
        }
        for rule in rules {
            for (s, _) in inst.seller_space().unwrap().iter() {
                let a = rule_moments(rule.as_ref(), &inst, &s).unwrap();
                let b = rule_moments(&Plain(rule.clone()), &inst, &s).unwrap();
                for i in 0..3 {
                    assert!((a.q[i] - b.q[i]).abs() < 1e-12 && (a.virtual_surplus[i] - b.virtual_surplus[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sapp_quote_uses_buyer_quantile() {
        let inst = MarketInstance::bilateral(u01(), u01()).unwrap();
        #[derive(Debug)]
        struct Half;
        impl AllocationRule for Half {
            fn name(&self) -> String {
                "half".into()
            }
            fn allocate(&self, _: &MarketInstance, _: &[f64], _: &[f64]) -> Result<ItemSet> {
                Ok(ItemSet::EMPTY)
            }
            fn closed_moments(&self, _: &MarketInstance, _: &[f64]) -> Option<Result<RuleMoments>> {
                Some(Ok(RuleMoments { q: vec![0.5], virtual_surplus: vec![0.0], q_stderr: None }))
            }
        }
        let map = SappPriceMap { rule: Arc::new(Half) };
        let quote = map.quote(&inst, &[0.3]).unwrap();
        assert!((quote.theta[0] - 0.75).abs() < 1e-12);
        // Constant prices: a traded seller is paid the support top.
        let out = run_sapp(&map, &inst, &Profile::new(vec![0.9], vec![0.3])).unwrap();
        assert_eq!(out.traded, ItemSet::singleton(0));
        assert!((out.seller_payments[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sapp_threshold_matches_grid_scan() {
        let inst = MarketInstance::bilateral(grid(6), grid(6)).unwrap();
        let map = sapp_build(&inst, Arc::new(ReductionRule)).unwrap();
        assert_eq!(map.monotonicity_violations(&inst).unwrap(), 0);
        let mut r = rng();
        for _ in 0..200 {
            let p = inst.sample_profile(&mut r);
            let out = run_sapp(&map, &inst, &p).unwrap();
            if out.traded.is_empty() {
                continue;
            }
            let brute = grid(6)
                .as_discrete()
                .unwrap()
                .values()
                .iter()
                .copied()
                .filter(|&z| z >= p.s[0] && run_sapp(&map, &inst, &p.with_seller(0, z)).unwrap().traded.contains(0))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(out.seller_payments[0], brute);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let specs = [
            r#"{"type":"fpp","theta_b":[0.5],"theta_s":[0.5]}"#,
            r#"{"type":"cfpp","theta_b":[0.5],"theta_s":[0.4],"h":2}"#,
            r#"{"type":"sapp","rule":"unlikely_trade"}"#,
            r#"{"type":"sapp","rule":"reduction"}"#,
            r#"{"type":"buyer_offering"}"#,
            r#"{"type":"seller_offering"}"#,
        ];
        for s in specs {
            let spec: MechanismSpec = serde_json::from_str(s).unwrap();
            assert_eq!(serde_json::to_string(&spec).unwrap(), s);
        }
    }
}
