//! Named example markets, random generators and the instance JSON format.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distributions::{Continuous, Discrete, DistSpec};
use crate::error::{Error, Result};
use crate::feasibility::{Constraint, ItemSet};
use crate::mechanisms::MarketInstance;
use crate::numeric;
use crate::Dist;

/// Cells used when the truncated-exponential pair has to be made discrete.
pub const A1_GRID_CELLS: usize = 64;
/// Quantile cells per side in the lognormal random family.
pub const LOGNORMAL_CELLS: usize = 4;
const RANDOM_ATTEMPTS: usize = 10_000;

fn lambda(t: f64) -> f64 {
    1.0 / -(-t).exp_m1()
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("t must be positive and finite, got {t}")))
    }
}

/// Bilateral market with buyer cdf `λ(1 − e^{−b})` and seller cdf
/// `λ(e^{s−t} − e^{−t})` on `[0, t]`, `λ = 1/(1 − e^{−t})`.
pub fn example_a1(t: f64) -> Result<MarketInstance> {
    check_t(t)?;
    MarketInstance::bilateral(
        Continuous::truncated_exp(t)?.into(),
        Continuous::mirrored_truncated_exp(t)?.into(),
    )
}

/// Closed-form `Pr[b ≥ s]` of [`example_a1`].
pub fn a1_trade_probability(t: f64) -> f64 {
    let d = t.exp_m1();
    (t - 1.0) / d + t / (d * d)
}

/// Closed-form first-best GFT of [`example_a1`].
pub fn a1_first_best(t: f64) -> f64 {
    let l = lambda(t);
    l * l * ((t - 2.0) * (-t).exp() + (t + 2.0) * (-2.0 * t).exp())
}

/// Closed-form GFT of the symmetric fixed price `p ∈ [0, t]` on [`example_a1`].
pub fn a1_fpp_gft(t: f64, p: f64) -> f64 {
    let l = lambda(t);
    let e2t = (-2.0 * t).exp();
    l * l * ((t + 2.0) * e2t + 2.0 * (-t).exp() - (p + 2.0) * (-(p + t)).exp() - p.exp() * (t + 2.0 - p) * e2t)
}

/// Strict upper bound on [`a1_fpp_gft`] over all prices.
pub fn a1_fpp_gft_cap(t: f64) -> f64 {
    let l = lambda(t);
    l * l * ((t + 2.0) * (-2.0 * t).exp() + 2.0 * (-t).exp())
}

/// Collapses a continuous distribution onto its conditional means over the
/// value cells `[edges[k], edges[k+1]]`. Empty cells are dropped.
pub fn discretize_on_values(d: &Continuous, edges: &[f64]) -> Result<Discrete> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter("cell edges must be strictly increasing, at least two".into()));
    }
    let mut atoms = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let (a, c) = (w[0], w[1]);
        let mass = d.cdf(c) - d.cdf(a);
        if mass <= 0.0 {
            continue;
        }
        let first_moment = numeric::integrate(&|x: f64| x * d.density(x), a, c, 1e-13);
        atoms.push(((first_moment / mass).clamp(a, c), mass));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in &mut atoms {
        a.1 /= total;
    }
    Discrete::new(atoms)
}

/// [`example_a1`] with both sides collapsed onto `cells` equal-width value
/// cells of `[0, t]`. Cell masses then fall geometrically (ratio `e^{−t/cells}`)
/// away from each side's mode.
pub fn example_a1_discretized(t: f64, cells: usize) -> Result<MarketInstance> {
    check_t(t)?;
    let (buyer, seller) = a1_discrete_pair(t, cells)?;
    MarketInstance::bilateral(buyer.into(), seller.into())
}

fn a1_discrete_pair(t: f64, cells: usize) -> Result<(Discrete, Discrete)> {
    if cells == 0 {
        return Err(Error::Parameter("need at least one cell".into()));
    }
    let edges: Vec<f64> = (0..=cells).map(|k| t * k as f64 / cells as f64).collect();
    Ok((
        discretize_on_values(&Continuous::truncated_exp(t)?, &edges)?,
        discretize_on_values(&Continuous::mirrored_truncated_exp(t)?, &edges)?,
    ))
}

fn a2_tail_items(n: usize, c: f64, eps: f64) -> Result<(Vec<Dist>, Vec<Dist>)> {
    let low = 1.0 / (2.0 * n as f64);
    let mut buyers = Vec::with_capacity(n - 1);
    let mut sellers = Vec::with_capacity(n - 1);
    for _ in 1..n {
        buyers.push(Dist::point(c));
        sellers.push(Dist::discrete(vec![(c, low), (c + eps, 1.0 - low)])?);
    }
    Ok((buyers, sellers))
}

fn check_a2(n: usize, c: f64, t: f64, eps: f64, r1: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2 items, got {n}")));
    }
    if !(c > 0.0 && c.is_finite() && eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("need C > 0 and eps > 0, got C={c}, eps={eps}")));
    }
    check_t(t)?;
    if r1 >= 1.0 / n as f64 {
        return Err(Error::Parameter(format!("t={t} gives r_1={r1} >= 1/n={}", 1.0 / n as f64)));
    }
    Ok(())
}

/// Additive market: item 0 is the [`example_a1`] pair, items `1..n` have a
/// buyer fixed at `C` and a seller at `C` w.p. `1/(2n)`, else `C + ε`.
pub fn example_a2(n: usize, c: f64, t: f64, eps: f64) -> Result<MarketInstance> {
    check_a2(n, c, t, eps, a1_trade_probability(t))?;
    let (mut buyers, mut sellers) = a2_tail_items(n, c, eps)?;
    buyers.insert(0, Continuous::truncated_exp(t)?.into());
    sellers.insert(0, Continuous::mirrored_truncated_exp(t)?.into());
    MarketInstance::new(buyers, sellers, Constraint::additive(n))
}

/// [`example_a2`] with item 0 on the [`A1_GRID_CELLS`]-cell grid of
/// [`example_a1_discretized`].
pub fn example_a2_discrete(n: usize, c: f64, t: f64, eps: f64) -> Result<MarketInstance> {
    let (b0, s0) = a1_discrete_pair(t, A1_GRID_CELLS)?;
    let r1 = crate::distributions::trade_probability(&b0.clone().into(), &s0.clone().into());
    check_a2(n, c, t, eps, r1)?;
    let (mut buyers, mut sellers) = a2_tail_items(n, c, eps)?;
    buyers.insert(0, b0.into());
    sellers.insert(0, s0.into());
    MarketInstance::new(buyers, sellers, Constraint::additive(n))
}

pub type Rational = Ratio<i128>;

/// The discrete bilateral example whose values are `2^m − 2^k`, held in exact
/// rationals. Atom lists are sorted by increasing value.
#[derive(Clone, Debug)]
pub struct ExampleA3 {
    pub m: u32,
    /// Lowest buyer exponent: buyer values are `2^m − 2^k` for `k = L..=0`.
    pub l: u32,
    /// Unnormalized buyer weights `q_k`, indexed by `k`.
    pub q: Vec<Rational>,
    /// Buyer masses `p_k = q_k / Σ q`, indexed by `k`.
    pub p: Vec<Rational>,
    pub buyer: Vec<(Rational, Rational)>,
    pub seller: Vec<(Rational, Rational)>,
}

/// Largest `d` with `2^d ≤ m`.
fn floor_log2(m: u32) -> u32 {
    31 - m.leading_zeros()
}

impl ExampleA3 {
    pub fn new(m: u32) -> Result<Self> {
        if !(3..=40).contains(&m) {
            return Err(Error::Parameter(format!("m must lie in 3..=40, got {m}")));
        }
        let top = Rational::from_integer(1i128 << m);
        let pow = |k: u32| Rational::from_integer(1i128 << k);
        let l = m - floor_log2(m);
        let mut q = vec![Rational::from_integer(1), Rational::new(1, (m - 1) as i128)];
        for k in 2..=l {
            let prev = q[k as usize - 1];
            q.push(prev * Rational::new((m - k + 2) as i128, (m - k) as i128));
        }
        q.truncate(l as usize + 1);
        let total: Rational = q.iter().copied().sum();
        let p: Vec<Rational> = q.iter().map(|qk| qk / total).collect();
        let buyer = (0..=l).rev().map(|k| (top - pow(k), p[k as usize])).collect();
        let mut seller = vec![(Rational::from_integer(0), top.recip())];
        seller.extend((0..m).rev().map(|k| (top - pow(k), pow(k + 1).recip())));
        let ex = Self { m, l, q, p, buyer, seller };
        if !ex.recurrence_holds() {
            return Err(Error::Construction("buyer masses violate the prefix-sum recurrence".into()));
        }
        Ok(ex)
    }

    /// `Σ_{j≤k} p_j = p_{k+1}(m − k − 1)` for every `k < L`, exactly.
    pub fn recurrence_holds(&self) -> bool {
        let mut prefix = Rational::from_integer(0);
        (0..self.l as usize).all(|k| {
            prefix += self.p[k];
            prefix == self.p[k + 1] * Rational::from_integer((self.m as usize - k - 1) as i128)
        })
    }

    fn to_float(atoms: &[(Rational, Rational)]) -> Result<Dist> {
        Dist::discrete(atoms.iter().map(|(v, p)| (ratio_f64(v), ratio_f64(p))).collect())
    }

    pub fn instance(&self) -> Result<MarketInstance> {
        MarketInstance::bilateral(Self::to_float(&self.buyer)?, Self::to_float(&self.seller)?)
    }

    fn expect_pairs(&self, gain: impl Fn(Rational, Rational) -> Rational) -> Rational {
        let mut acc = Rational::from_integer(0);
        for &(b, pb) in &self.buyer {
            for &(s, ps) in &self.seller {
                acc += pb * ps * gain(b, s);
            }
        }
        acc
    }

    /// `E[(b − s)⁺]`.
    pub fn first_best(&self) -> Rational {
        let zero = Rational::from_integer(0);
        self.expect_pairs(|b, s| if b >= s { b - s } else { zero })
    }

    /// GFT when trade happens exactly at `s = 0`.
    pub fn buyer_offering_gft(&self) -> Rational {
        let zero = Rational::from_integer(0);
        self.expect_pairs(|b, s| if s == zero { b } else { zero })
    }

    /// GFT of the symmetric posted price `price`.
    pub fn fixed_price_gft(&self, price: Rational) -> Rational {
        let zero = Rational::from_integer(0);
        self.expect_pairs(|b, s| if b >= price && s <= price { b - s } else { zero })
    }

    /// Every buyer and seller support point, ascending, without repeats.
    pub fn support_points(&self) -> Vec<Rational> {
        let mut v: Vec<Rational> = self.buyer.iter().chain(&self.seller).map(|a| a.0).collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn ratio_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn example_a3(m: u32) -> Result<MarketInstance> {
    ExampleA3::new(m)?.instance()
}

/// Unit-demand market where pair `i` trades only with itself.
pub fn matching_market(pairs: Vec<(Dist, Dist)>) -> Result<MarketInstance> {
    if pairs.is_empty() {
        return Err(Error::Parameter("a matching market needs at least one pair".into()));
    }
    let n = pairs.len();
    let (buyers, sellers) = pairs.into_iter().unzip();
    MarketInstance::new(buyers, sellers, Constraint::unit_demand(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomFamily {
    /// Buyer and seller uniform on random intervals of width in `[0.5, 1.5)`.
    Uniform,
    /// Lognormals collapsed onto [`LOGNORMAL_CELLS`] equal-mass cells.
    LognormalDiscretized,
    /// Two random atoms per side.
    TwoAtom,
}

impl std::str::FromStr for RandomFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "lognormal_discretized" | "lognormal-discretized" | "lognormal" => Ok(Self::LognormalDiscretized),
            "two_atom" | "two-atom" => Ok(Self::TwoAtom),
            other => Err(Error::Parameter(format!("unknown random family `{other}`"))),
        }
    }
}

/// Lognormal partial expectation `E[X; X ≤ x]`.
fn lognormal_partial_mean(mu: f64, sigma: f64, x: f64, std_normal: &Normal) -> f64 {
    let mean = (mu + 0.5 * sigma * sigma).exp();
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return mean;
    }
    mean * std_normal.cdf((x.ln() - mu - sigma * sigma) / sigma)
}

/// Lognormal collapsed onto `cells` equal-mass quantile cells at their
/// conditional means.
pub fn discretized_lognormal(mu: f64, sigma: f64, cells: usize) -> Result<Discrete> {
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) || cells == 0 {
        return Err(Error::Parameter(format!("lognormal({mu}, {sigma}) with {cells} cells")));
    }
    let std_normal = Normal::new(0.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let edge = |k: usize| {
        if k == 0 {
            0.0
        } else if k == cells {
            f64::INFINITY
        } else {
            (mu + sigma * std_normal.inverse_cdf(k as f64 / cells as f64)).exp()
        }
    };
    let mass = 1.0 / cells as f64;
    let atoms = (0..cells)
        .map(|k| {
            let inner = lognormal_partial_mean(mu, sigma, edge(k + 1), &std_normal)
                - lognormal_partial_mean(mu, sigma, edge(k), &std_normal);
            (inner / mass, mass)
        })
        .collect();
    Discrete::new(atoms)
}

fn random_pair(family: RandomFamily, rng: &mut ChaCha8Rng) -> Result<(Dist, Dist)> {
    match family {
        RandomFamily::Uniform => {
            let (bl, bw) = (rng.gen::<f64>(), rng.gen_range(0.5..1.5));
            let (sl, sw) = (rng.gen::<f64>(), rng.gen_range(0.5..1.5));
            Ok((Dist::uniform(bl, bl + bw)?, Dist::uniform(sl, sl + sw)?))
        }
        RandomFamily::LognormalDiscretized => {
            let buyer = discretized_lognormal(rng.gen_range(-0.3..0.5), rng.gen_range(0.3..0.8), LOGNORMAL_CELLS)?;
            let seller = discretized_lognormal(rng.gen_range(-0.5..0.3), rng.gen_range(0.3..0.8), LOGNORMAL_CELLS)?;
            Ok((buyer.into(), seller.into()))
        }
        RandomFamily::TwoAtom => {
            let side = |rng: &mut ChaCha8Rng| -> Result<Dist> {
                let a: f64 = rng.gen_range(0.0..2.0);
                let b: f64 = rng.gen_range(0.0..2.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                if hi - lo < 1e-6 {
                    return Ok(Dist::point(lo));
                }
                let w = rng.gen_range(0.2..0.8);
                Dist::discrete(vec![(lo, w), (hi, 1.0 - w)])
            };
            Ok((side(rng)?, side(rng)?))
        }
    }
}

/// Reproducible unit-demand market with `n` items drawn from `family`; item
/// pairs that could never trade are redrawn.
pub fn random_instance(n: usize, family: RandomFamily, seed: u64) -> Result<MarketInstance> {
    if n == 0 {
        return Err(Error::Parameter("need at least one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buyers = Vec::with_capacity(n);
    let mut sellers = Vec::with_capacity(n);
    for _ in 0..n {
        let mut drawn = None;
        for _ in 0..RANDOM_ATTEMPTS {
            let (b, s) = random_pair(family, &mut rng)?;
            if crate::distributions::trade_probability(&b, &s) > 0.0 {
                drawn = Some((b, s));
                break;
            }
        }
        let (b, s) = drawn.ok_or_else(|| Error::Construction("rejection sampling found no tradable pair".into()))?;
        buyers.push(b);
        sellers.push(s);
    }
    MarketInstance::new(buyers, sellers, Constraint::unit_demand(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub buyer: DistSpec,
    pub seller: DistSpec,
}

/// Instance JSON: either a named example with numeric parameters or an
/// explicit list of item distributions with a constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSpec {
    Named {
        example: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    #[serde(rename_all = "snake_case")]
    Explicit { n: usize, items: Vec<ItemSpec>, constraint: Constraint },
}

/// Names accepted by [`InstanceSpec::Named`], with their parameters.
pub const NAMED_EXAMPLES: &[(&str, &str)] = &[
    ("a1", "t"),
    ("a1_discrete", "t, cells (default 64)"),
    ("a2", "n, C, t, eps"),
    ("a2_discrete", "n, C, t, eps"),
    ("a3", "m"),
    ("uniform_bilateral", "none: U[0,1] buyer and seller"),
    ("grid_bilateral", "k: both sides uniform on {1/k, ..., k/k}"),
    ("random_uniform", "n, seed"),
    ("random_lognormal", "n, seed"),
    ("random_two_atom", "n, seed"),
];

impl InstanceSpec {
    pub fn named(example: &str, params: &[(&str, f64)]) -> Self {
        Self::Named {
            example: example.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Explicit form of an existing instance; fails for distributions with no
    /// JSON form.
    pub fn from_instance(inst: &MarketInstance) -> Result<Self> {
        let items = inst
            .buyers()
            .iter()
            .zip(inst.sellers())
            .map(|(b, s)| Ok(ItemSpec { buyer: b.to_spec()?, seller: s.to_spec()? }))
            .collect::<Result<_>>()?;
        Ok(Self::Explicit { n: inst.n(), items, constraint: inst.constraint().clone() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn realize(&self) -> Result<MarketInstance> {
        match self {
            Self::Explicit { n, items, constraint } => {
                if items.len() != *n {
                    return Err(Error::Parameter(format!("n = {n} but {} items listed", items.len())));
                }
                if constraint.ground() != ItemSet::full(*n) {
                    return Err(Error::Parameter("constraint ground set does not match the items".into()));
                }
                let mut buyers = Vec::with_capacity(*n);
                let mut sellers = Vec::with_capacity(*n);
                for it in items {
                    buyers.push(it.buyer.build()?);
                    sellers.push(it.seller.build()?);
                }
                MarketInstance::new(buyers, sellers, constraint.clone())
            }
            Self::Named { example, params } => realize_named(example, params),
        }
    }
}

fn realize_named(example: &str, params: &BTreeMap<String, f64>) -> Result<MarketInstance> {
    let get = |key: &str| {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("example `{example}` needs parameter `{key}`")))
    };
    let count = |key: &str| -> Result<usize> {
        let v = get(key)?;
        if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
            Ok(v as usize)
        } else {
            Err(Error::Parameter(format!("parameter `{key}` must be a non-negative integer, got {v}")))
        }
    };
    let random = |family| random_instance(count("n")?, family, count("seed")? as u64);
    match example {
        "a1" => example_a1(get("t")?),
        "a1_discrete" => {
            let cells = if params.contains_key("cells") { count("cells")? } else { A1_GRID_CELLS };
            example_a1_discretized(get("t")?, cells)
        }
        "a2" => example_a2(count("n")?, get("C")?, get("t")?, get("eps")?),
        "a2_discrete" => example_a2_discrete(count("n")?, get("C")?, get("t")?, get("eps")?),
        "a3" => {
            let m = count("m")?;
            example_a3(u32::try_from(m).map_err(|_| Error::Parameter(format!("m = {m} is too large")))?)
        }
        "uniform_bilateral" => MarketInstance::bilateral(Dist::uniform(0.0, 1.0)?, Dist::uniform(0.0, 1.0)?),
        "grid_bilateral" => {
            let k = count("k")?;
            if k == 0 {
                return Err(Error::Parameter("grid_bilateral needs k >= 1".into()));
            }
            let grid: Vec<f64> = (1..=k).map(|j| j as f64 / k as f64).collect();
            MarketInstance::bilateral(Discrete::uniform_on(&grid)?.into(), Discrete::uniform_on(&grid)?.into())
        }
        "random_uniform" => random(RandomFamily::Uniform),
        "random_lognormal" => random(RandomFamily::LognormalDiscretized),
        "random_two_atom" => random(RandomFamily::TwoAtom),
        other => Err(Error::Parameter(format!("unknown example `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn a3_weights_at_m8() {
        let ex = ExampleA3::new(8).unwrap();
        assert_eq!(ex.l, 5);
        assert_eq!(ex.q, vec![r(1, 1), r(1, 7), r(4, 21), r(4, 15), r(2, 5), r(2, 3)]);
        assert_eq!(ex.q.iter().copied().sum::<Rational>(), r(8, 3));
        assert_eq!(ex.p[0], ex.p[1] * r(7, 1));
    }

    #[test]
    fn a3_lowest_exponent_matches_ceiling() {
        for m in 3..=20u32 {
            let ex = ExampleA3::new(m).unwrap();
            let expect = (m as f64 - (m as f64).log2()).ceil() as u32;
            assert_eq!(ex.l, expect, "m={m}");
            assert!(ex.recurrence_holds());
        }
    }

    #[test]
    fn a3_masses_sum_to_one_exactly() {
        for m in [6, 8, 10] {
            let ex = ExampleA3::new(m).unwrap();
            let one = Rational::from_integer(1);
            assert_eq!(ex.buyer.iter().map(|a| a.1).sum::<Rational>(), one);
            assert_eq!(ex.seller.iter().map(|a| a.1).sum::<Rational>(), one);
            assert_eq!(ex.seller.len(), m as usize + 1);
            assert_eq!(ex.buyer.last().unwrap().0, Rational::from_integer((1 << m) - 1));
        }
    }

    #[test]
    fn a3_seller_virtual_cost_is_zero_then_top() {
        let inst = example_a3(8).unwrap();
        let d = inst.seller(0);
        for (s, _) in d.as_discrete().unwrap().atoms() {
            let tau = crate::distributions::seller_virtual(d, s).unwrap();
            let want = if s == 0.0 { 0.0 } else { 256.0 };
            assert!((tau - want).abs() < 1e-9, "tau({s}) = {tau}");
        }
    }

    #[test]
    fn a3_float_instance_matches_rationals() {
        let ex = ExampleA3::new(6).unwrap();
        let inst = ex.instance().unwrap();
        let b = inst.buyer(0).as_discrete().unwrap();
        for ((v, p), (rv, rp)) in b.atoms().zip(&ex.buyer) {
            assert_eq!(v, ratio_f64(rv));
            assert!((p - ratio_f64(rp)).abs() < 1e-15);
        }
    }

    #[test]
    fn a1_closed_forms_match_quadrature() {
        for t in [2.0, 5.0, 10.0] {
            let inst = example_a1(t).unwrap();
            let (b, s) = (inst.buyer(0), inst.seller(0));
            let r_num = numeric::integrate(&|x: f64| match b {
                Dist::Continuous(c) => c.density(x) * s.cdf(x),
                _ => unreachable!(),
            }, 0.0, t, 1e-13);
            assert!((r_num - a1_trade_probability(t)).abs() < 1e-6, "t={t}");
            let fb_num = numeric::integrate(&|x: f64| s.cdf(x) * b.prob_gt(x), 0.0, t, 1e-13);
            assert!((fb_num - a1_first_best(t)).abs() < 1e-6, "t={t}");
            assert!((b.cdf(t) - 1.0).abs() < 1e-12 && (s.cdf(t) - 1.0).abs() < 1e-12);
            for k in 0..=10 {
                let p = t * k as f64 / 10.0;
                let num = s.cdf(p) * numeric::integrate(&|x: f64| b.prob_gt(x), p, t, 1e-13)
                    + b.prob_ge(p) * numeric::integrate(&|x: f64| s.cdf(x), 0.0, p, 1e-13);
                assert!((num - a1_fpp_gft(t, p)).abs() < 1e-6, "t={t} p={p}");
                assert!(a1_fpp_gft(t, p) < a1_fpp_gft_cap(t));
            }
        }
    }

    #[test]
    fn a1_t10_published_quantities() {
        let t = 10.0_f64;
        let d = t.exp() - 1.0;
        assert!((a1_trade_probability(t) - ((t - 1.0) / d + t / (d * d))).abs() < 1e-15);
        let l = 1.0 / (1.0 - (-t).exp());
        let fb = l * l * ((t - 2.0) / t.exp() + (t + 2.0) / (2.0 * t).exp());
        assert!((a1_first_best(t) - fb).abs() < 1e-15);
        assert!((example_a1(t).unwrap().trade_probability(0) - a1_trade_probability(t)).abs() < 1e-9);
    }

    #[test]
    fn a1_discretization_keeps_means() {
        let inst = example_a1_discretized(10.0, A1_GRID_CELLS).unwrap();
        let cont = example_a1(10.0).unwrap();
        assert_eq!(inst.buyer(0).as_discrete().unwrap().len(), A1_GRID_CELLS);
        assert!((inst.buyer(0).mean() - cont.buyer(0).mean()).abs() < 1e-9);
        assert!((inst.seller(0).mean() - cont.seller(0).mean()).abs() < 1e-9);
    }

    #[test]
    fn a2_tail_items_trade_rarely() {
        let inst = example_a2(4, 1.0, 10.0, 0.5).unwrap();
        for i in 1..4 {
            assert!((inst.trade_probability(i) - 1.0 / 8.0).abs() < 1e-15);
        }
        assert!(inst.trade_probability(0) < 0.25);
        let (h, l) = crate::bounds::hl_split(&inst);
        assert!(h.is_empty());
        assert_eq!(l, ItemSet::full(4));
        assert!(matches!(example_a2(4, 1.0, 1.0, 0.5), Err(Error::Parameter(_))));
        assert!(example_a2_discrete(3, 1.0, 10.0, 0.5).unwrap().is_discrete());
    }

    #[test]
    fn matching_market_is_unit_demand() {
        let inst = matching_market(vec![(Dist::uniform(0.0, 1.0).unwrap(), Dist::uniform(0.0, 1.0).unwrap())]).unwrap();
        assert_eq!(inst.n(), 1);
        assert_eq!(inst.constraint(), &Constraint::unit_demand(1));
        assert!(matching_market(vec![]).is_err());
    }

    #[test]
    fn random_instances_are_reproducible_and_tradable() {
        for family in [RandomFamily::Uniform, RandomFamily::LognormalDiscretized, RandomFamily::TwoAtom] {
            let a = InstanceSpec::from_instance(&random_instance(3, family, 7).unwrap()).unwrap();
            let b = InstanceSpec::from_instance(&random_instance(3, family, 7).unwrap()).unwrap();
            assert_eq!(a, b);
            let inst = a.realize().unwrap();
            assert!((0..3).all(|i| inst.trade_probability(i) > 0.0));
        }
    }

    #[test]
    fn discretized_lognormal_preserves_mean() {
        let d = discretized_lognormal(0.2, 0.6, 4).unwrap();
        let mean: f64 = d.atoms().map(|(v, p)| v * p).sum();
        assert!((mean - (0.2f64 + 0.18).exp()).abs() < 1e-12);
    }

    #[test]
    fn named_spec_parses() {
        let spec = InstanceSpec::from_json(r#"{"example":"a3","params":{"m":8}}"#).unwrap();
        assert_eq!(spec, InstanceSpec::named("a3", &[("m", 8.0)]));
        assert_eq!(spec.realize().unwrap().buyer(0).as_discrete().unwrap().len(), 6);
        assert!(InstanceSpec::named("a3", &[]).realize().is_err());
        assert!(InstanceSpec::named("nope", &[]).realize().is_err());
    }

    #[test]
    fn continuous_round_trip_through_builtins() {
        let spec = InstanceSpec::from_instance(&example_a1(10.0).unwrap()).unwrap();
        let back = InstanceSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);
        assert!((back.realize().unwrap().trade_probability(0) - a1_trade_probability(10.0)).abs() < 1e-9);
    }
}
