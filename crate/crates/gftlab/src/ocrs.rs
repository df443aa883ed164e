//! Greedy online contention resolution schemes, selectability estimates,
//! constrained posted-price derivation and the concave choice of target
//! trade probabilities.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::distributions::Dist;
use crate::error::{domain, Error, Result};
use crate::feasibility::{Constraint, ItemSet};
use crate::mc::{self, McConfig, McRng};
use crate::mechanisms::{Cfpp, MarketInstance, SubConstraint};
use crate::numeric;

/// User-supplied subconstraint sampler for schemes not constructed here.
pub trait SubconstraintSampler: Send + Sync + fmt::Debug {
    fn sample(&self, base: &Constraint, qhat: &[f64], rng: &mut McRng) -> Result<Constraint>;
}

#[derive(Clone, Debug)]
enum Scheme {
    /// The subconstraint is the base family: accept whatever still fits.
    Full,
    /// Either only big items (size above one half) or only small ones.
    KnapsackSplit { sizes: Vec<f64> },
    Composed(Box<GreedyOcrs>, Box<GreedyOcrs>),
    Custom(Arc<dyn SubconstraintSampler>),
}

/// A greedy OCRS: a random subconstraint of `base`, drawn once from the
/// activation probabilities, then every active item that keeps the accepted
/// set feasible in it is accepted.
#[derive(Clone, Debug)]
pub struct GreedyOcrs {
    base: Constraint,
    delta: f64,
    name: String,
    claimed_eta: Option<f64>,
    scheme: Scheme,
}

fn check_scale(delta: f64, below: f64) -> Result<()> {
    if delta > 0.0 && delta < below {
        Ok(())
    } else {
        Err(domain(format!("scale {delta} outside (0, {below})")))
    }
}

/// Accept-if-it-fits on the unit-demand family; `(δ, 1 - δ)`-selectable.
pub fn unit_demand_ocrs(n: usize, delta: f64) -> Result<GreedyOcrs> {
    check_scale(delta, 1.0)?;
    Ok(GreedyOcrs { base: Constraint::unit_demand(n), delta, name: "unit_demand".into(), claimed_eta: Some(1.0 - delta), scheme: Scheme::Full })
}

/// Accept-if-it-fits on the `k`-uniform matroid; `(δ, 1 - δ)`-selectable by Markov.
pub fn k_uniform_ocrs(n: usize, k: usize, delta: f64) -> Result<GreedyOcrs> {
    check_scale(delta, 1.0)?;
    Ok(GreedyOcrs { base: Constraint::k_uniform(n, k), delta, name: format!("k_uniform_{k}"), claimed_eta: Some(1.0 - delta), scheme: Scheme::Full })
}

/// Knapsack scheme with capacity 1.
///
/// With `β` the activation mass of big items (size > 1/2), the scheme keeps
/// only big items with probability `α = (1 - 2δ + β)/(2 - 2δ)` and only small
/// items otherwise. A big item survives when no other big item is active,
/// a small one when the other active small items fill at most half the
/// knapsack, so every item is selectable with probability at least
/// `(1 - β)(1 - 2δ + β)/(2 - 2δ) >= (1 - 2δ)/(2 - 2δ)`.
pub fn knapsack_ocrs(sizes: Vec<f64>, delta: f64) -> Result<GreedyOcrs> {
    check_scale(delta, 0.5)?;
    let base = Constraint::knapsack(sizes.clone())?;
    Ok(GreedyOcrs {
        base,
        delta,
        name: "knapsack".into(),
        claimed_eta: Some((1.0 - 2.0 * delta) / (2.0 - 2.0 * delta)),
        scheme: Scheme::KnapsackSplit { sizes },
    })
}

/// Accept-if-it-fits on an arbitrary family. Only the additive family has a
/// known selectability (1); other families are validated empirically.
pub fn full_family_ocrs(base: Constraint, delta: f64) -> Result<GreedyOcrs> {
    check_scale(delta, 1.0)?;
    let claimed_eta = matches!(base, Constraint::Additive { .. }).then_some(1.0);
    Ok(GreedyOcrs { base, delta, name: "full".into(), claimed_eta, scheme: Scheme::Full })
}

/// Intersects the subconstraints of two schemes over the same ground set.
pub fn compose_ocrs(a: GreedyOcrs, b: GreedyOcrs) -> Result<GreedyOcrs> {
    if a.base.ground() != b.base.ground() {
        return Err(domain("composed schemes must share a ground set"));
    }
    if (a.delta - b.delta).abs() > 1e-12 {
        return Err(domain("composed schemes must share a scale"));
    }
    let base = Constraint::intersection(vec![a.base.clone(), b.base.clone()])?;
    let claimed_eta = a.claimed_eta.zip(b.claimed_eta).map(|(x, y)| x * y);
    Ok(GreedyOcrs {
        base,
        delta: a.delta,
        name: format!("{}+{}", a.name, b.name),
        claimed_eta,
        scheme: Scheme::Composed(Box::new(a), Box::new(b)),
    })
}

/// Scheme for an instance constraint: the constructed schemes where they
/// exist, composition for intersections, accept-if-it-fits otherwise.
pub fn ocrs_for(constraint: &Constraint, delta: f64) -> Result<GreedyOcrs> {
    let n_of = |g: ItemSet| -> Result<usize> {
        if g == ItemSet::full(g.len()) {
            Ok(g.len())
        } else {
            Err(Error::Unsupported("schemes are built on ground sets of the form 0..n".into()))
        }
    };
    match constraint {
        Constraint::UnitDemand { ground } => unit_demand_ocrs(n_of(*ground)?, delta),
        Constraint::KUniform { ground, k } => k_uniform_ocrs(n_of(*ground)?, *k, delta),
        Constraint::Knapsack { ground, sizes } => {
            n_of(*ground)?;
            knapsack_ocrs(sizes.clone(), delta)
        }
        Constraint::Intersection { parts, .. } => {
            let mut schemes = parts.iter().map(|p| ocrs_for(p, delta));
            let first = schemes.next().ok_or_else(|| domain("empty intersection"))??;
            schemes.try_fold(first, |acc, s| compose_ocrs(acc, s?))
        }
        other => full_family_ocrs(other.clone(), delta),
    }
}

impl GreedyOcrs {
    /// Scheme with a caller-provided subconstraint sampler.
    pub fn custom(base: Constraint, delta: f64, name: impl Into<String>, sampler: Arc<dyn SubconstraintSampler>, claimed_eta: Option<f64>) -> Result<Self> {
        check_scale(delta, 1.0)?;
        Ok(Self { base, delta, name: name.into(), claimed_eta, scheme: Scheme::Custom(sampler) })
    }

    pub fn base(&self) -> &Constraint {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Selectability the construction guarantees, if known.
    pub fn claimed_eta(&self) -> Option<f64> {
        self.claimed_eta
    }

    /// Draws the subconstraint for activation probabilities `qhat`.
    pub fn sample_with(&self, qhat: &[f64], rng: &mut McRng) -> Result<Constraint> {
        match &self.scheme {
            Scheme::Full => Ok(self.base.clone()),
            Scheme::KnapsackSplit { sizes } => {
                let ground = self.base.ground();
                let big = ItemSet::from_indices(ground.iter().filter(|&i| sizes[i] > 0.5));
                let small = ground.minus(big);
                let beta: f64 = big.iter().map(|i| qhat[i]).sum();
                let alpha = if big.is_empty() {
                    0.0
                } else if small.is_empty() {
                    1.0
                } else {
                    ((1.0 - 2.0 * self.delta + beta) / (2.0 - 2.0 * self.delta)).clamp(0.0, 1.0)
                };
                let pick = if rng.gen::<f64>() < alpha { big } else { small };
                self.base.restrict(pick)
            }
            Scheme::Composed(a, b) => {
                let (x, y) = (a.sample_with(qhat, rng)?, b.sample_with(qhat, rng)?);
                let common = x.ground().intersect(y.ground());
                Constraint::intersection(vec![x.restrict(common)?, y.restrict(common)?])
            }
            Scheme::Custom(s) => s.sample(&self.base, qhat, rng),
        }
    }

    /// Deterministic draw for a given seed.
    pub fn sample_subconstraint(&self, qhat: &[f64], seed: u64) -> Result<Constraint> {
        self.sample_with(qhat, &mut McRng::seed_from_u64(seed))
    }
}

/// Whether `item` can join every feasible subset of `active` in `sub`.
fn admits_everywhere(sub: &Constraint, active: &[usize], item: usize) -> bool {
    fn dfs(sub: &Constraint, active: &[usize], item: usize, k: usize, cur: ItemSet) -> bool {
        if !sub.admits(cur.with(item)) {
            return false;
        }
        for (j, &a) in active.iter().enumerate().skip(k) {
            let next = cur.with(a);
            if sub.admits(next) && !dfs(sub, active, item, j + 1, next) {
                return false;
            }
        }
        true
    }
    dfs(sub, active, item, 0, ItemSet::EMPTY)
}

/// Monte Carlo selectability of one item.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectabilityReport {
    pub scheme: String,
    pub delta: f64,
    pub qhat: Vec<f64>,
    pub item: usize,
    pub eta_hat: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Estimates `Pr[S ∪ {i} feasible in the subconstraint for every feasible S ⊆ R]`
/// with `R` the active set.
pub fn estimate_selectability(o: &GreedyOcrs, qhat: &[f64], item: usize, samples: u64, seed: u64) -> Result<SelectabilityReport> {
    if !o.base.ground().contains(item) {
        return Err(domain(format!("item {item} is not in the ground set")));
    }
    if !o.base.in_scaled_polytope(qhat, o.delta)? {
        return Err(Error::Precondition(format!("activation probabilities lie outside {}·P", o.delta)));
    }
    let ground = o.base.ground().to_vec();
    let failure: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
    let tally = mc::run(&McConfig::new(samples, seed), 1, |rng, row| {
        let active: Vec<usize> = ground.iter().copied().filter(|&j| rng.gen::<f64>() < qhat[j] && j != item).collect();
        match o.sample_with(qhat, rng) {
            Ok(sub) => row[0] = f64::from(u8::from(admits_everywhere(&sub, &active, item))),
            Err(e) => {
                failure.lock().expect("selectability error slot").get_or_insert(e);
            }
        }
    });
    if let Some(e) = failure.into_inner().expect("selectability error slot") {
        return Err(e);
    }
    Ok(SelectabilityReport {
        scheme: o.name.clone(),
        delta: o.delta,
        qhat: qhat.to_vec(),
        item,
        eta_hat: tally.mean(0),
        stderr: tally.stderr(0),
        samples,
    })
}

/// Constrained posted prices derived from target trade probabilities.
#[derive(Clone, Debug)]
pub struct CfppPrices {
    pub theta_b: Vec<f64>,
    pub theta_s: Vec<f64>,
    /// Scaled activation targets `δ·q`.
    pub qhat: Vec<f64>,
    /// `Pr[b_i >= θ_i^B ∧ s_i <= θ_i^S]` at the derived prices.
    pub activation: Vec<f64>,
    pub scheme: GreedyOcrs,
}

impl CfppPrices {
    pub fn mechanism(&self) -> Cfpp {
        Cfpp {
            theta_b: self.theta_b.clone(),
            theta_s: self.theta_s.clone(),
            sub: SubConstraint::Ocrs { scheme: self.scheme.clone(), qhat: self.qhat.clone() },
        }
    }
}

/// `Pr[b >= p]` and the cap `Pr[b >= p > s]` on the target probability.
fn caps(inst: &MarketInstance, p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != inst.n() {
        return Err(domain(format!("need {} prices", inst.n())));
    }
    let up: Vec<f64> = (0..inst.n()).map(|i| inst.buyer(i).prob_ge(p[i])).collect();
    let cap = (0..inst.n()).map(|i| up[i] * inst.seller(i).prob_lt(p[i])).collect();
    Ok((up, cap))
}

/// Seller prices `θ_i^S = G_i^{-1}(δ q_i / Pr[b_i >= p_i])` and the instance's
/// OCRS at activation targets `δ q`.
pub fn cfpp_prices(inst: &MarketInstance, p: &[f64], q: &[f64], delta: f64) -> Result<CfppPrices> {
    let (up, cap) = caps(inst, p)?;
    if q.len() != inst.n() {
        return Err(domain(format!("need {} target probabilities", inst.n())));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(domain(format!("scale {delta} outside (0, 1]")));
    }
    if !inst.constraint().in_scaled_polytope(q, 1.0)? {
        return Err(domain("target probabilities lie outside the constraint polytope"));
    }
    if let Some(i) = (0..inst.n()).find(|&i| q[i] > cap[i] + 1e-12) {
        return Err(domain(format!("q_{i} = {} exceeds Pr[b >= p > s] = {}", q[i], cap[i])));
    }
    let qhat: Vec<f64> = q.iter().map(|x| delta * x).collect();
    let mut theta_s = Vec::with_capacity(inst.n());
    let mut activation = Vec::with_capacity(inst.n());
    for i in 0..inst.n() {
        let level = if up[i] > 0.0 { (qhat[i] / up[i]).min(1.0) } else { 0.0 };
        let t = inst.seller(i).quantile(level)?;
        activation.push(up[i] * inst.seller(i).cdf(t));
        theta_s.push(t);
    }
    let scheme = if delta < 1.0 {
        ocrs_for(inst.constraint(), delta)?
    } else {
        GreedyOcrs { base: inst.constraint().clone(), delta, name: "full".into(), claimed_eta: None, scheme: Scheme::Full }
    };
    Ok(CfppPrices { theta_b: p.to_vec(), theta_s, qhat, activation, scheme })
}

/// `∫_0^x G^{-1}(v) dv`.
fn quantile_integral(d: &Dist, x: f64) -> f64 {
    match d {
        Dist::Discrete(dd) => {
            let mut acc = 0.0;
            let mut lo = 0.0;
            for (v, m) in dd.atoms() {
                let hi = (lo + m).min(x);
                if hi > lo {
                    acc += v * (hi - lo);
                }
                lo += m;
                if lo >= x {
                    break;
                }
            }
            acc
        }
        Dist::Continuous(c) => numeric::integrate(&|v| c.quantile(v), 0.0, x, 1e-12),
    }
}

/// Objective `Σ_i h_i(q_i)` with `h_i(q) = Pr[b_i >= p_i]·∫_0^{p_i - ξ_i} (p_i - s) dG_i(s)`,
/// taken constant beyond the cap `Pr[b_i >= p_i > s_i]`.
pub fn q_objective(inst: &MarketInstance, p: &[f64], q: &[f64]) -> Result<f64> {
    let (up, cap) = caps(inst, p)?;
    Ok((0..inst.n())
        .map(|i| {
            if up[i] <= 0.0 {
                return 0.0;
            }
            let x = q[i].clamp(0.0, cap[i]) / up[i];
            up[i] * (p[i] * x - quantile_integral(inst.seller(i), x))
        })
        .sum())
}

/// Result of [`optimize_q`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QOptimum {
    pub q: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gap: f64,
}

pub const FW_ITERATIONS: usize = 500;
pub const FW_GAP: f64 = 1e-8;

/// Frank–Wolfe over the constraint polytope with the max-weight oracle as
/// the linear step and step size `2/(t + 2)`.
pub fn optimize_q(inst: &MarketInstance, p: &[f64]) -> Result<QOptimum> {
    let (up, cap) = caps(inst, p)?;
    let n = inst.n();
    let grad = |x: &[f64]| -> Result<Vec<f64>> {
        (0..n)
            .map(|i| {
                if up[i] <= 0.0 || x[i] >= cap[i] {
                    return Ok(0.0);
                }
                Ok((p[i] - inst.seller(i).quantile((x[i] / up[i]).min(1.0))?).max(0.0))
            })
            .collect()
    };
    let mut x = vec![0.0; n];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    for t in 0..FW_ITERATIONS {
        let g = grad(&x)?;
        let (vertex, value) = inst.constraint().max_weight_set(&g)?;
        gap = value - g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        iterations = t;
        if gap <= FW_GAP {
            break;
        }
        let step = 2.0 / (t as f64 + 2.0);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (1.0 - step) * *xi + if vertex.contains(i) { step } else { 0.0 };
        }
    }
    let q: Vec<f64> = x.iter().zip(&cap).map(|(a, c)| a.min(*c)).collect();
    let objective = q_objective(inst, p, &q)?;
    Ok(QOptimum { q, objective, iterations, gap })
}
