//! One-dimensional value and cost distributions, quantiles, Myerson virtual
//! values, ironing, and per-item trade probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous as _, ContinuousCDF, LogNormal};

use crate::error::{domain, Error, Result};
use crate::numeric;

/// Which side of the market a distribution describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buyer,
    Seller,
}

/// Finite distribution over strictly increasing support points.
#[derive(Clone, Debug, PartialEq)]
pub struct Discrete {
    values: Vec<f64>,
    masses: Vec<f64>,
    /// `below[k] = Pr[X < v_k]`, with a trailing total.
    below: Vec<f64>,
    /// `above[k] = Pr[X >= v_k]`, with a trailing zero.
    above: Vec<f64>,
}

impl Discrete {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(domain("discrete distribution needs at least one atom"));
        }
        let (values, masses): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("atom values must be finite"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain("atom values must be strictly increasing"));
        }
        if masses.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(domain("atom masses must be positive"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(domain(format!("atom masses sum to {total}, not 1")));
        }
        let k = values.len();
        let mut below = vec![0.0; k + 1];
        for i in 0..k {
            below[i + 1] = below[i] + masses[i];
        }
        let mut above = vec![0.0; k + 1];
        for i in (0..k).rev() {
            above[i] = above[i + 1] + masses[i];
        }
        Ok(Self { values, masses, below, above })
    }

    pub fn point(v: f64) -> Self {
        Self::new(vec![(v, 1.0)]).expect("a single finite atom is valid")
    }

    /// Equal masses on the given support points.
    pub fn uniform_on(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len().max(1) as f64;
        let atoms: Vec<(f64, f64)> = values.iter().map(|&v| (v, p)).collect();
        if atoms.is_empty() {
            return Err(domain("empty support"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mut atoms = atoms;
        let last = atoms.len() - 1;
        atoms[last].1 += 1.0 - total;
        Self::new(atoms)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.masses.iter().copied())
    }

    /// Index of the support point equal to `v`.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let i = self.values.partition_point(|x| *x < v);
        let tol = 1e-12 * v.abs().max(1.0);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .find(|&j| j < self.values.len() && (self.values[j] - v).abs() <= tol)
    }

    pub fn prob_lt(&self, v: f64) -> f64 {
        self.below[self.values.partition_point(|x| *x < v)]
    }

    pub fn prob_le(&self, v: f64) -> f64 {
        self.below[self.values.partition_point(|x| *x <= v)]
    }

    pub fn prob_ge(&self, v: f64) -> f64 {
        self.above[self.values.partition_point(|x| *x < v)]
    }

    pub fn prob_gt(&self, v: f64) -> f64 {
        self.above[self.values.partition_point(|x| *x <= v)]
    }

    /// `Pr[X >= v_k]` for the k-th atom.
    pub fn tail_at(&self, k: usize) -> f64 {
        self.above[k]
    }

    /// `Pr[X <= v_k]` for the k-th atom.
    pub fn cum_at(&self, k: usize) -> f64 {
        self.below[k + 1]
    }

    /// Replaces every atom `a` by a uniform distribution on `[a - eps, a + eps]`.
    pub fn smoothed(&self, eps: f64) -> Result<Dist> {
        let gap = self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if !(eps > 0.0) || 2.0 * eps > gap {
            return Err(Error::Parameter(format!("smoothing width {eps} must be positive and below half the atom gap")));
        }
        Ok(Dist::Continuous(Continuous { shape: Shape::Smoothed { atoms: Arc::new(self.clone()), eps } }))
    }
}

/// Closures describing a user-supplied continuous distribution.
///
/// The distribution must be atomless on `[lo, hi]`; smooth point masses first
/// (see [`Discrete::smoothed`]) or use a discrete distribution.
pub struct CustomShape {
    pub lo: f64,
    pub hi: f64,
    pub cdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub density: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub quantile: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

#[derive(Clone)]
enum Shape {
    Uniform { lo: f64, hi: f64 },
    /// `F(b) = λ(1 - e^{-b})` on `[0, t]`.
    TruncatedExp { t: f64 },
    /// `G(s) = λ(e^{s-t} - e^{-t})` on `[0, t]`.
    MirroredTruncatedExp { t: f64 },
    LogNormal { mu: f64, sigma: f64, inner: LogNormal },
    Smoothed { atoms: Arc<Discrete>, eps: f64 },
    Custom(Arc<CustomShape>),
}

/// Atomless distribution with a density on its support.
#[derive(Clone)]
pub struct Continuous {
    shape: Shape,
}

fn lambda(t: f64) -> f64 {
    1.0 / -(-t).exp_m1()
}

impl Continuous {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Parameter(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { shape: Shape::Uniform { lo, hi } })
    }

    pub fn truncated_exp(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parameter(format!("truncation point must be positive, got {t}")));
        }
        Ok(Self { shape: Shape::TruncatedExp { t } })
    }

    pub fn mirrored_truncated_exp(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parameter(format!("truncation point must be positive, got {t}")));
        }
        Ok(Self { shape: Shape::MirroredTruncatedExp { t } })
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        let inner = LogNormal::new(mu, sigma).map_err(|e| Error::Parameter(format!("lognormal: {e}")))?;
        Ok(Self { shape: Shape::LogNormal { mu, sigma, inner } })
    }

    pub fn custom(shape: CustomShape) -> Result<Self> {
        if !(shape.lo < shape.hi) {
            return Err(Error::Parameter("custom support must satisfy lo < hi".into()));
        }
        let lo_mass = (shape.cdf)(shape.lo);
        let hi_mass = (shape.cdf)(shape.hi);
        if lo_mass.abs() > 1e-9 || (hi_mass - 1.0).abs() > 1e-9 {
            return Err(domain("custom cdf must run from 0 at lo to 1 at hi"));
        }
        Ok(Self { shape: Shape::Custom(Arc::new(shape)) })
    }

    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            Shape::Uniform { lo, hi } => (*lo, *hi),
            Shape::TruncatedExp { t } | Shape::MirroredTruncatedExp { t } => (0.0, *t),
            Shape::LogNormal { .. } => (0.0, f64::INFINITY),
            Shape::Smoothed { atoms, eps } => (atoms.values[0] - eps, atoms.values[atoms.len() - 1] + eps),
            Shape::Custom(c) => (c.lo, c.hi),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v <= lo {
            return 0.0;
        }
        if v >= hi {
            return 1.0;
        }
        match &self.shape {
            Shape::Uniform { lo, hi } => (v - lo) / (hi - lo),
            Shape::TruncatedExp { t } => -lambda(*t) * (-v).exp_m1(),
            Shape::MirroredTruncatedExp { t } => lambda(*t) * ((v - t).exp() - (-t).exp()),
            Shape::LogNormal { inner, .. } => inner.cdf(v),
            Shape::Smoothed { atoms, eps } => atoms
                .atoms()
                .map(|(a, p)| p * ((v - (a - eps)) / (2.0 * eps)).clamp(0.0, 1.0))
                .sum(),
            Shape::Custom(c) => (c.cdf)(v).clamp(0.0, 1.0),
        }
    }

    /// `1 - F(v)`, evaluated without cancellation where a closed form exists.
    pub fn sf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v <= lo {
            return 1.0;
        }
        if v >= hi {
            return 0.0;
        }
        match &self.shape {
            Shape::TruncatedExp { t } => lambda(*t) * ((-v).exp() - (-t).exp()),
            Shape::MirroredTruncatedExp { t } => -lambda(*t) * (v - t).exp_m1(),
            Shape::LogNormal { inner, .. } => inner.sf(v),
            _ => 1.0 - self.cdf(v),
        }
    }

    pub fn density(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo || v > hi {
            return 0.0;
        }
        match &self.shape {
            Shape::Uniform { lo, hi } => 1.0 / (hi - lo),
            Shape::TruncatedExp { t } => lambda(*t) * (-v).exp(),
            Shape::MirroredTruncatedExp { t } => lambda(*t) * (v - t).exp(),
            Shape::LogNormal { inner, .. } => inner.pdf(v),
            Shape::Smoothed { atoms, eps } => atoms
                .atoms()
                .filter(|(a, _)| (v - a).abs() <= *eps)
                .map(|(_, p)| p / (2.0 * eps))
                .sum(),
            Shape::Custom(c) => match &c.density {
                Some(d) => d(v),
                None => {
                    let h = 1e-6;
                    let a = (v - h).max(c.lo);
                    let b = (v + h).min(c.hi);
                    ((c.cdf)(b) - (c.cdf)(a)) / (b - a)
                }
            },
        }
    }

    /// Lower quantile `inf{v : F(v) >= q}`.
    pub fn quantile(&self, q: f64) -> f64 {
        let (lo, hi) = self.support();
        if q <= 0.0 {
            return lo;
        }
        if q >= 1.0 {
            return hi;
        }
        match &self.shape {
            Shape::Uniform { lo, hi } => lo + q * (hi - lo),
            Shape::TruncatedExp { t } => -(-q * -(-t).exp_m1()).ln_1p(),
            Shape::MirroredTruncatedExp { t } => t + (q * -(-t).exp_m1() + (-t).exp()).ln(),
            Shape::LogNormal { inner, .. } => inner.inverse_cdf(q),
            Shape::Smoothed { .. } => numeric::bisect_first_true(|v| self.cdf(v) >= q, lo, hi, 1e-13),
            Shape::Custom(c) => (c.quantile)(q),
        }
    }

    /// Upper quantile `F̄^{-1}(q)`: the value `v` with `1 - F(v) = q`.
    pub fn survival_quantile(&self, q: f64) -> f64 {
        let (lo, hi) = self.support();
        if q <= 0.0 {
            return hi;
        }
        if q >= 1.0 {
            return lo;
        }
        match &self.shape {
            Shape::TruncatedExp { t } => -(q / lambda(*t) + (-t).exp()).ln(),
            Shape::MirroredTruncatedExp { t } => t + (-q / lambda(*t)).ln_1p(),
            Shape::LogNormal { inner, .. } => inner.inverse_cdf(1.0 - q),
            _ => self.quantile(1.0 - q),
        }
    }

    fn builtin(&self) -> Option<(&'static str, BTreeMap<String, f64>)> {
        let mut params = BTreeMap::new();
        let name = match &self.shape {
            Shape::Uniform { lo, hi } => {
                params.insert("lo".into(), *lo);
                params.insert("hi".into(), *hi);
                "uniform"
            }
            Shape::TruncatedExp { t } => {
                params.insert("t".into(), *t);
                "exponential_truncated"
            }
            Shape::MirroredTruncatedExp { t } => {
                params.insert("t".into(), *t);
                "exponential_truncated_mirrored"
            }
            Shape::LogNormal { mu, sigma, .. } => {
                params.insert("mu".into(), *mu);
                params.insert("sigma".into(), *sigma);
                "lognormal"
            }
            Shape::Smoothed { .. } | Shape::Custom(_) => return None,
        };
        Some((name, params))
    }
}

impl fmt::Debug for Continuous {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.builtin() {
            Some((name, params)) => write!(f, "Continuous({name}, {params:?})"),
            None => write!(f, "Continuous(custom on {:?})", self.support()),
        }
    }
}

/// A buyer value or seller cost distribution.
#[derive(Clone, Debug)]
pub enum Dist {
    Discrete(Discrete),
    Continuous(Continuous),
}

impl From<Discrete> for Dist {
    fn from(d: Discrete) -> Self {
        Dist::Discrete(d)
    }
}

impl From<Continuous> for Dist {
    fn from(c: Continuous) -> Self {
        Dist::Continuous(c)
    }
}

impl Dist {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Continuous::uniform(lo, hi).map(Dist::Continuous)
    }

    pub fn point(v: f64) -> Self {
        Dist::Discrete(Discrete::point(v))
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Discrete::new(atoms).map(Dist::Discrete)
    }

    pub fn as_discrete(&self) -> Option<&Discrete> {
        match self {
            Dist::Discrete(d) => Some(d),
            Dist::Continuous(_) => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Dist::Discrete(_))
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Dist::Discrete(d) => (d.values[0], d.values[d.len() - 1]),
            Dist::Continuous(c) => c.support(),
        }
    }

    /// `Pr[X <= v]`.
    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            Dist::Discrete(d) => d.prob_le(v),
            Dist::Continuous(c) => c.cdf(v),
        }
    }

    pub fn prob_lt(&self, v: f64) -> f64 {
        match self {
            Dist::Discrete(d) => d.prob_lt(v),
            Dist::Continuous(c) => c.cdf(v),
        }
    }

    pub fn prob_ge(&self, v: f64) -> f64 {
        match self {
            Dist::Discrete(d) => d.prob_ge(v),
            Dist::Continuous(c) => c.sf(v),
        }
    }

    pub fn prob_gt(&self, v: f64) -> f64 {
        match self {
            Dist::Discrete(d) => d.prob_gt(v),
            Dist::Continuous(c) => c.sf(v),
        }
    }

    /// Lower quantile `inf{v : F(v) >= q}`; `q = 0` maps to the support bottom.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        check_prob(q)?;
        Ok(match self {
            Dist::Discrete(d) => {
                let k = d.below[1..].partition_point(|c| *c < q - 1e-15);
                d.values[k.min(d.len() - 1)]
            }
            Dist::Continuous(c) => c.quantile(q),
        })
    }

    /// Upper quantile `sup{v : Pr[X >= v] >= q}`; `q = 0` maps to the support top.
    pub fn survival_quantile(&self, q: f64) -> Result<f64> {
        check_prob(q)?;
        Ok(match self {
            Dist::Discrete(d) => {
                let k = d.above[..d.len()].partition_point(|a| *a >= q - 1e-15);
                d.values[k.max(1) - 1]
            }
            Dist::Continuous(c) => c.survival_quantile(q),
        })
    }

    /// Value whose upper-tail band contains rank `w`: the buyer value drawn
    /// when the buyer's upper quantile rank is `w`.
    pub fn value_at_upper_rank(&self, w: f64) -> f64 {
        match self {
            Dist::Discrete(d) => {
                let k = d.above[..d.len()].partition_point(|a| *a >= w);
                d.values[k.max(1) - 1]
            }
            Dist::Continuous(c) => c.survival_quantile(w),
        }
    }

    /// Draws one value by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        match self {
            Dist::Discrete(_) => self.quantile(u).expect("u lies in [0, 1)"),
            Dist::Continuous(c) => c.quantile(u),
        }
    }

    /// Draws an upper quantile rank `w ~ U(0, 1)` together with its value.
    pub fn sample_ranked<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let w: f64 = 1.0 - rng.gen::<f64>();
        (self.value_at_upper_rank(w), w)
    }

    /// `E[g(X)]`; `kinks` lists points where `g` is not smooth.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G, kinks: &[f64]) -> f64 {
        match self {
            Dist::Discrete(d) => d.atoms().map(|(v, p)| p * g(v)).sum(),
            Dist::Continuous(c) => {
                let (lo, hi) = c.support();
                if hi.is_finite() {
                    let mut breaks = kinks.to_vec();
                    if let Shape::Smoothed { atoms, eps } = &c.shape {
                        for &a in atoms.values() {
                            breaks.push(a - eps);
                            breaks.push(a + eps);
                        }
                    }
                    numeric::integrate_split(&|x| g(x) * c.density(x), lo, hi, &breaks, 1e-13)
                } else {
                    let qbreaks: Vec<f64> = kinks.iter().map(|k| c.cdf(*k)).collect();
                    numeric::integrate_split(&|u| g(c.quantile(u)), 0.0, 1.0, &qbreaks, 1e-12)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x, &[])
    }

    pub fn to_spec(&self) -> Result<DistSpec> {
        match self {
            Dist::Discrete(d) => Ok(DistSpec::Discrete { atoms: d.atoms().collect() }),
            Dist::Continuous(c) => c
                .builtin()
                .map(|(name, params)| DistSpec::Builtin { name: name.to_string(), params })
                .ok_or_else(|| Error::Unsupported("custom distributions have no JSON form".into())),
        }
    }
}

fn check_prob(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(domain(format!("probability {q} outside [0, 1]")))
    }
}

/// JSON form of a [`Dist`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistSpec {
    Discrete { atoms: Vec<(f64, f64)> },
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

impl DistSpec {
    pub fn build(&self) -> Result<Dist> {
        match self {
            DistSpec::Discrete { atoms } => Dist::discrete(atoms.clone()),
            DistSpec::Builtin { name, params } => {
                let get = |key: &str| {
                    params
                        .get(key)
                        .copied()
                        .ok_or_else(|| Error::Parameter(format!("builtin `{name}` needs parameter `{key}`")))
                };
                match name.as_str() {
                    "uniform" => Dist::uniform(get("lo")?, get("hi")?),
                    "exponential_truncated" => Continuous::truncated_exp(get("t")?).map(Dist::from),
                    "exponential_truncated_mirrored" => Continuous::mirrored_truncated_exp(get("t")?).map(Dist::from),
                    "lognormal" => Continuous::lognormal(get("mu")?, get("sigma")?).map(Dist::from),
                    "point" => Ok(Dist::point(get("v")?)),
                    other => Err(Error::Parameter(format!("unknown builtin distribution `{other}`"))),
                }
            }
        }
    }
}

impl Serialize for Dist {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().map_err(serde::ser::Error::custom)?.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Dist {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        DistSpec::deserialize(deserializer)?.build().map_err(serde::de::Error::custom)
    }
}

/// `Pr[b >= s]` for independent `b ~ buyer`, `s ~ seller`.
pub fn trade_probability(buyer: &Dist, seller: &Dist) -> f64 {
    match (buyer, seller) {
        (Dist::Discrete(b), _) => b.atoms().map(|(v, p)| p * seller.cdf(v)).sum(),
        (_, Dist::Discrete(s)) => s.atoms().map(|(v, p)| p * buyer.prob_ge(v)).sum(),
        _ => {
            let (lo, hi) = seller.support();
            buyer.expect(|b| seller.cdf(b), &[lo, hi])
        }
    }
}

/// Unironed buyer virtual value `φ(b)`.
///
/// Discrete distributions use the next larger support point; the top atom
/// has `φ(b) = b`.
pub fn buyer_virtual(d: &Dist, b: f64) -> Result<f64> {
    match d {
        Dist::Discrete(dd) => {
            let k = dd.index_of(b).ok_or(Error::Singularity { value: b })?;
            if k + 1 == dd.len() {
                return Ok(dd.values[k]);
            }
            let v = dd.values[k];
            Ok(v - dd.above[k + 1] * (dd.values[k + 1] - v) / dd.masses[k])
        }
        Dist::Continuous(c) => {
            let f = c.density(b);
            if !(f > 0.0) {
                return Err(Error::Singularity { value: b });
            }
            Ok(b - c.sf(b) / f)
        }
    }
}

/// Unironed seller virtual cost `τ(s)`.
///
/// Discrete distributions use the next smaller support point; the bottom atom
/// has `τ(s) = s`.
pub fn seller_virtual(d: &Dist, s: f64) -> Result<f64> {
    match d {
        Dist::Discrete(dd) => {
            let k = dd.index_of(s).ok_or(Error::Singularity { value: s })?;
            if k == 0 {
                return Ok(dd.values[0]);
            }
            let v = dd.values[k];
            Ok(v + dd.below[k] * (v - dd.values[k - 1]) / dd.masses[k])
        }
        Dist::Continuous(c) => {
            let g = c.density(s);
            if !(g > 0.0) {
                return Err(Error::Singularity { value: s });
            }
            Ok(s + c.cdf(s) / g)
        }
    }
}

/// Value of an ironed virtual function on one quantile interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum PieceValue {
    Constant(f64),
    /// The unironed virtual value applies on this interval.
    Unironed,
}

/// Interval of quantile space with its ironed value.
///
/// Buyer quantiles are upper-tail probabilities `Pr[b >= v]`; seller
/// quantiles are `Pr[s <= v]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IronPiece {
    pub lo: f64,
    pub hi: f64,
    pub value: PieceValue,
}

/// Ironed virtual value `φ̃` (buyer) or `τ̃` (seller).
#[derive(Clone, Debug)]
pub struct IronedVirtual {
    side: Side,
    dist: Dist,
    pieces: Vec<IronPiece>,
    atom_values: Option<Vec<f64>>,
}

const IRON_GRID: usize = 4096;

impl IronedVirtual {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn pieces(&self) -> &[IronPiece] {
        &self.pieces
    }

    /// Ironed values at each support point of a discrete distribution.
    pub fn atom_values(&self) -> Option<&[f64]> {
        self.atom_values.as_deref()
    }

    /// Evaluates the ironed function at value `v`.
    pub fn value(&self, v: f64) -> Result<f64> {
        match (&self.dist, &self.atom_values) {
            (Dist::Discrete(d), Some(vals)) => {
                let k = d.index_of(v).ok_or(Error::Singularity { value: v })?;
                Ok(vals[k])
            }
            (Dist::Continuous(c), _) => {
                let u = match self.side {
                    Side::Buyer => c.sf(v),
                    Side::Seller => c.cdf(v),
                };
                let k = self.pieces.partition_point(|p| p.hi < u).min(self.pieces.len() - 1);
                match self.pieces[k].value {
                    PieceValue::Constant(x) => Ok(x),
                    PieceValue::Unironed => match self.side {
                        Side::Buyer => buyer_virtual(&self.dist, v),
                        Side::Seller => seller_virtual(&self.dist, v),
                    },
                }
            }
            _ => unreachable!("discrete ironing always stores atom values"),
        }
    }
}

impl IronedVirtual {
    /// Integral of the ironed function over quantiles `[0, u]`: the ironed
    /// revenue curve for a buyer, the ironed cost curve for a seller.
    pub fn integral_to(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let curve = |x: f64| -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            let v = match (&self.dist, self.side) {
                (Dist::Continuous(c), Side::Buyer) => c.survival_quantile(x),
                (Dist::Continuous(c), Side::Seller) => c.quantile(x),
                _ => unreachable!("discrete pieces are all constant"),
            };
            x * v
        };
        let mut total = 0.0;
        for p in &self.pieces {
            if p.lo >= u {
                break;
            }
            let top = p.hi.min(u);
            total += match p.value {
                PieceValue::Constant(x) => x * (top - p.lo),
                PieceValue::Unironed => curve(top) - curve(p.lo),
            };
        }
        total
    }

    /// Smallest value `v` of a buyer distribution with `φ̃(v) >= c`, or
    /// `None` when no value reaches `c`.
    pub fn threshold(&self, c: f64) -> Option<f64> {
        match (&self.dist, &self.atom_values) {
            (Dist::Discrete(d), Some(vals)) => {
                let k = vals.partition_point(|x| *x < c);
                (k < vals.len()).then(|| d.values[k])
            }
            (Dist::Continuous(cd), _) => {
                let at = |u: f64| self.value(cd.survival_quantile(u)).unwrap_or(f64::NEG_INFINITY);
                let (lo, hi) = (1e-12, 1.0 - 1e-12);
                if at(lo) < c {
                    return None;
                }
                if at(hi) >= c {
                    return Some(cd.support().0);
                }
                let u = numeric::bisect_first_true(|u| at(u) < c, lo, hi, 1e-13);
                Some(cd.survival_quantile(u))
            }
            _ => unreachable!("discrete ironing always stores atom values"),
        }
    }
}

/// Upper (concave) hull of points sorted by x, returned as point indices.
fn upper_hull(pts: &[(f64, f64)]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        while hull.len() >= 2 {
            let a = pts[hull[hull.len() - 2]];
            let b = pts[hull[hull.len() - 1]];
            let c = pts[i];
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Computes the ironed virtual value of `d` for the given side.
pub fn iron(d: &Dist, side: Side) -> IronedVirtual {
    match d {
        Dist::Discrete(dd) => iron_discrete(d, dd, side),
        Dist::Continuous(c) => iron_continuous(d, c, side),
    }
}

fn iron_discrete(d: &Dist, dd: &Discrete, side: Side) -> IronedVirtual {
    let k = dd.len();
    // Points in quantile order with the origin first; `order[j]` is the atom
    // whose band ends at point j + 1.
    let order: Vec<usize> = match side {
        Side::Buyer => (0..k).rev().collect(),
        Side::Seller => (0..k).collect(),
    };
    let mut pts = vec![(0.0, 0.0)];
    for &a in &order {
        let u = match side {
            Side::Buyer => dd.above[a],
            Side::Seller => dd.below[a + 1],
        };
        let y = dd.values[a] * u;
        pts.push(match side {
            Side::Buyer => (u, y),
            Side::Seller => (u, -y),
        });
    }
    let hull = upper_hull(&pts);
    let mut vals = vec![0.0; k];
    let mut pieces = Vec::with_capacity(k);
    for seg in hull.windows(2) {
        let (i, j) = (seg[0], seg[1]);
        let slope = (pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0);
        for p in i..j {
            let atom = order[p];
            let x = if j == i + 1 {
                match side {
                    Side::Buyer => buyer_virtual(d, dd.values[atom]).expect("atom of d"),
                    Side::Seller => seller_virtual(d, dd.values[atom]).expect("atom of d"),
                }
            } else {
                match side {
                    Side::Buyer => slope,
                    Side::Seller => -slope,
                }
            };
            vals[atom] = x;
            pieces.push(IronPiece { lo: pts[p].0, hi: pts[p + 1].0, value: PieceValue::Constant(x) });
        }
    }
    IronedVirtual { side, dist: d.clone(), pieces, atom_values: Some(vals) }
}

fn iron_continuous(d: &Dist, c: &Continuous, side: Side) -> IronedVirtual {
    let n = IRON_GRID;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            if i == 0 {
                return (0.0, 0.0);
            }
            match side {
                Side::Buyer => (u, u * c.survival_quantile(u)),
                Side::Seller => (u, -u * c.quantile(u)),
            }
        })
        .collect();
    let scale = pts.iter().map(|p| p.1.abs()).fold(1e-300, f64::max);
    let hull = upper_hull(&pts);
    let mut pieces: Vec<IronPiece> = Vec::new();
    for seg in hull.windows(2) {
        let (i, j) = (seg[0], seg[1]);
        let slope = (pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0);
        let gap = (i + 1..j)
            .map(|p| pts[i].1 + slope * (pts[p].0 - pts[i].0) - pts[p].1)
            .fold(0.0, f64::max);
        let value = if gap > 1e-9 * scale {
            PieceValue::Constant(match side {
                Side::Buyer => slope,
                Side::Seller => -slope,
            })
        } else {
            PieceValue::Unironed
        };
        match pieces.last_mut() {
            Some(last) if last.value == PieceValue::Unironed && value == PieceValue::Unironed => last.hi = pts[j].0,
            _ => pieces.push(IronPiece { lo: pts[i].0, hi: pts[j].0, value }),
        }
    }
    IronedVirtual { side, dist: d.clone(), pieces, atom_values: None }
}

/// Quantile ladder `θ_j` for `j = 1..=⌈log₂(2/r)⌉`.
///
/// Buyer rungs are upper quantiles `F̄^{-1}(2^{-j})`; seller rungs are lower
/// quantiles `G^{-1}(2^{-j})`.
pub fn quantile_ladder(d: &Dist, r: f64, side: Side) -> Result<Vec<f64>> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(domain(format!("trade probability {r} must lie in (0, 1]")));
    }
    let mut levels = 1usize;
    let mut reach = r;
    while reach < 1.0 - 1e-9 {
        reach *= 2.0;
        levels += 1;
    }
    let levels = levels.max(1);
    (1..=levels)
        .map(|j| {
            let q = 0.5f64.powi(j as i32);
            match side {
                Side::Buyer => d.survival_quantile(q),
                Side::Seller => d.quantile(q),
            }
        })
        .collect()
}

/// The two `r/2`-quantiles of an item and whether the buyer one dominates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantilePair {
    pub x: f64,
    pub y: f64,
    pub ok: bool,
}

/// Computes `x = F̄^{-1}(r/2)` and `y = G^{-1}(r/2)` and reports `x >= y`.
pub fn quantile_pair_check(buyer: &Dist, seller: &Dist) -> Result<QuantilePair> {
    let r = trade_probability(buyer, seller);
    if !(r > 0.0) {
        return Err(Error::Precondition("trade probability is zero".into()));
    }
    let x = buyer.survival_quantile(r / 2.0)?;
    let y = seller.quantile(r / 2.0)?;
    let ok = x >= y - 1e-9 * x.abs().max(y.abs()).max(1.0);
    Ok(QuantilePair { x, y, ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u01() -> Dist {
        Dist::uniform(0.0, 1.0).unwrap()
    }

    fn halves() -> Dist {
        Dist::discrete(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(u01().quantile(0.75).unwrap(), 0.75);
        assert_eq!(u01().quantile(0.0).unwrap(), 0.0);
        let d = halves();
        let brute = |q: f64| {
            let mut acc = 0.0;
            for (v, p) in d.as_discrete().unwrap().atoms() {
                acc += p;
                if acc >= q {
                    return v;
                }
            }
            unreachable!()
        };
        assert_eq!(d.quantile(0.5).unwrap(), brute(0.5));
        assert_eq!(d.quantile(0.5).unwrap(), 0.0);
        assert!(u01().quantile(1.5).is_err());
        assert!(u01().quantile(-0.1).is_err());
    }

    #[test]
    fn survival_quantile_is_largest_price_selling_with_q() {
        let d = halves();
        assert_eq!(d.survival_quantile(0.5).unwrap(), 1.0);
        assert_eq!(d.survival_quantile(0.6).unwrap(), 0.0);
        assert_eq!(d.survival_quantile(0.0).unwrap(), 1.0);
        assert!((u01().survival_quantile(0.25).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn trade_probability_examples() {
        assert!((trade_probability(&u01(), &u01()) - 0.5).abs() < 1e-10);
        assert_eq!(trade_probability(&Dist::point(1.0), &Dist::point(0.0)), 1.0);
        let b = Dist::discrete(vec![(0.2, 0.3), (0.5, 0.7)]).unwrap();
        let s = Dist::discrete(vec![(0.1, 0.4), (0.5, 0.6)]).unwrap();
        let brute: f64 = [(0.2, 0.3), (0.5, 0.7)]
            .iter()
            .flat_map(|&(bv, bp)| [(0.1, 0.4), (0.5, 0.6)].map(move |(sv, sp)| if bv >= sv { bp * sp } else { 0.0 }))
            .sum();
        assert_eq!(trade_probability(&b, &s), brute);
    }

    #[test]
    fn virtual_value_examples() {
        assert!(buyer_virtual(&u01(), 0.5).unwrap().abs() < 1e-12);
        assert!((buyer_virtual(&u01(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((seller_virtual(&u01(), 0.5).unwrap() - 1.0).abs() < 1e-12);
        let d = halves();
        assert!(matches!(buyer_virtual(&d, 0.5), Err(Error::Singularity { .. })));
        assert!(matches!(buyer_virtual(&u01(), 2.0), Err(Error::Singularity { .. })));
    }

    #[test]
    fn two_atom_ironing_matches_brute_force() {
        let d = Dist::discrete(vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let iv = iron(&d, Side::Buyer);
        assert_eq!(iv.value(1.0).unwrap(), 0.0);
        assert_eq!(iv.value(2.0).unwrap(), 2.0);
    }

    #[test]
    fn ironing_flattens_a_non_monotone_buyer() {
        // φ = (−3, −5, 3): ironing pools the lower two atoms.
        let d = Dist::discrete(vec![(1.0, 0.2), (2.0, 0.1), (3.0, 0.7)]).unwrap();
        let raw: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&v| buyer_virtual(&d, v).unwrap()).collect();
        assert!(raw[0] > raw[1]);
        let iv = iron(&d, Side::Buyer);
        let vals = iv.atom_values().unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let pooled = (raw[0] * 0.2 + raw[1] * 0.1) / 0.3;
        assert!((vals[0] - pooled).abs() < 1e-12 && (vals[1] - pooled).abs() < 1e-12);
        assert!((vals[2] - raw[2]).abs() < 1e-12);
    }

    #[test]
    fn uniform_ironing_is_identity() {
        let d = u01();
        let iv = iron(&d, Side::Buyer);
        for v in [0.05, 0.3, 0.5, 0.77, 0.99] {
            assert!((iv.value(v).unwrap() - (2.0 * v - 1.0)).abs() < 1e-12);
        }
        let iv = iron(&d, Side::Seller);
        assert!((iv.value(0.3).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ladder_examples() {
        let b = quantile_ladder(&u01(), 0.5, Side::Buyer).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b[0] - 0.5).abs() < 1e-15 && (b[1] - 0.75).abs() < 1e-15);
        let s = quantile_ladder(&u01(), 0.5, Side::Seller).unwrap();
        assert_eq!(s, vec![0.5, 0.25]);
        assert_eq!(quantile_ladder(&u01(), 1.0, Side::Seller).unwrap(), vec![0.5]);
        assert!(quantile_ladder(&u01(), 0.0, Side::Buyer).is_err());
    }

    #[test]
    fn pair_check_examples() {
        let p = quantile_pair_check(&u01(), &u01()).unwrap();
        assert!((p.x - 0.75).abs() < 1e-9 && (p.y - 0.25).abs() < 1e-9 && p.ok);
        let p = quantile_pair_check(&Dist::point(1.0), &Dist::point(0.0)).unwrap();
        assert_eq!((p.x, p.y, p.ok), (1.0, 0.0, true));
    }

    #[test]
    fn closed_form_exponential_pair() {
        let t = 10.0;
        let b = Dist::from(Continuous::truncated_exp(t).unwrap());
        let s = Dist::from(Continuous::mirrored_truncated_exp(t).unwrap());
        let et = f64::exp(t);
        let r = (t - 1.0) / (et - 1.0) + t / ((et - 1.0) * (et - 1.0));
        assert!((trade_probability(&b, &s) - r).abs() < 1e-12);
        for v in [0.5, 3.0, 9.0] {
            let phi = v - 1.0 + (v - t).exp();
            assert!((buyer_virtual(&b, v).unwrap() - phi).abs() < 1e-9);
        }
        assert!((b.cdf(t) - 1.0).abs() < 1e-12 && (s.cdf(t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let d = Dist::discrete(vec![(0.1, 0.3), (0.7, 0.7)]).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"kind":"discrete","atoms":[[0.1,0.3],[0.7,0.7]]}"#);
        let back: Dist = serde_json::from_str(&text).unwrap();
        assert_eq!(back.as_discrete(), d.as_discrete());
        let u: Dist = serde_json::from_str(r#"{"kind":"builtin","name":"uniform","params":{"lo":0,"hi":2}}"#).unwrap();
        assert_eq!(u.support(), (0.0, 2.0));
    }

    #[test]
    fn smoothing_spreads_atoms() {
        let d = halves().as_discrete().unwrap().smoothed(0.1).unwrap();
        assert!((d.cdf(0.0) - 0.25).abs() < 1e-12);
        assert!((d.cdf(0.5) - 0.5).abs() < 1e-12);
        assert!((d.quantile(0.75).unwrap() - 1.0).abs() < 1e-9);
        assert!(halves().as_discrete().unwrap().smoothed(0.6).is_err());
    }
}
