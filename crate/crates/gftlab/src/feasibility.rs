//! Downward-closed feasibility constraints over item indices.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};

/// A set of item indices below 64, stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemSet(pub u64);

pub const MAX_ITEMS: usize = 64;

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_ITEMS, "at most {MAX_ITEMS} items");
        if n == MAX_ITEMS {
            ItemSet(u64::MAX)
        } else {
            ItemSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        ItemSet(1u64 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(it: I) -> Self {
        ItemSet(it.into_iter().fold(0, |m, i| m | (1u64 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_ITEMS && self.0 >> i & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn with(self, i: usize) -> Self {
        ItemSet(self.0 | 1u64 << i)
    }

    pub fn without(self, i: usize) -> Self {
        ItemSet(self.0 & !(1u64 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: ItemSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ItemSet) -> Self {
        ItemSet(self.0 | other.0)
    }

    pub fn intersect(self, other: ItemSet) -> Self {
        ItemSet(self.0 & other.0)
    }

    pub fn minus(self, other: ItemSet) -> Self {
        ItemSet(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(i)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// All subsets of `self`, in increasing bitmask order.
    pub fn subsets(self) -> impl Iterator<Item = ItemSet> {
        let full = self.0;
        let mut cur = Some(0u64);
        std::iter::from_fn(move || {
            let c = cur?;
            cur = if c == full { None } else { Some((c.wrapping_sub(full)) & full) };
            Some(ItemSet(c))
        })
    }

    /// Position of `i` among the members of `self`.
    fn rank_of(self, i: usize) -> usize {
        (self.0 & ((1u64 << i) - 1)).count_ones() as usize
    }

    /// Compresses `s ⊆ self` to a bitmask over the members of `self`.
    fn compress(self, s: ItemSet) -> usize {
        s.iter().fold(0usize, |m, i| m | (1usize << self.rank_of(i)))
    }

    /// `true` when `self` precedes `other` as sorted index lists.
    pub fn lex_less(self, other: ItemSet) -> bool {
        self.iter().lt(other.iter())
    }
}

impl fmt::Debug for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for ItemSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ItemSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if let Some(bad) = v.iter().find(|i| **i >= MAX_ITEMS) {
            return Err(serde::de::Error::custom(format!("item index {bad} exceeds {}", MAX_ITEMS - 1)));
        }
        Ok(ItemSet::from_indices(v))
    }
}

/// Sizes above this are refused by the exhaustive solvers.
pub const SEARCH_LIMIT: usize = 24;
/// Largest ground set on which matroid polytope membership is checked exactly.
pub const MATROID_EXACT_LIMIT: usize = 20;

/// A feasibility constraint over a ground set of item indices.
///
/// Every variant is downward closed except [`Constraint::SizeFloor`], which
/// only appears as a posted-price subconstraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum Constraint {
    Additive { ground: ItemSet },
    UnitDemand { ground: ItemSet },
    KUniform { ground: ItemSet, k: usize },
    /// Rank function given as a table over bitmasks of the ground members
    /// (bit `j` stands for the `j`-th smallest ground index).
    MatroidOracle { ground: ItemSet, rank: Vec<u32> },
    /// Items are edges of a graph; `edges[i]` holds the endpoints of item `i`.
    Matching { ground: ItemSet, edges: Vec<(u32, u32)> },
    /// `sizes[i]` is the size of item `i`; capacity is 1.
    Knapsack { ground: ItemSet, sizes: Vec<f64> },
    Intersection { ground: ItemSet, parts: Vec<Constraint> },
    /// Sets feasible in `base` that are empty or have at least `h` items.
    SizeFloor { base: Box<Constraint>, h: usize },
}


impl Constraint {
    pub fn additive(n: usize) -> Self {
        Constraint::Additive { ground: ItemSet::full(n) }
    }

    pub fn unit_demand(n: usize) -> Self {
        Constraint::UnitDemand { ground: ItemSet::full(n) }
    }

    pub fn k_uniform(n: usize, k: usize) -> Self {
        Constraint::KUniform { ground: ItemSet::full(n), k }
    }

    pub fn knapsack(sizes: Vec<f64>) -> Result<Self> {
        if sizes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(domain("knapsack sizes must lie in [0, 1]"));
        }
        Ok(Constraint::Knapsack { ground: ItemSet::full(sizes.len()), sizes })
    }

    pub fn matching(edges: Vec<(u32, u32)>) -> Self {
        Constraint::Matching { ground: ItemSet::full(edges.len()), edges }
    }

    /// Matroid over `{0..n-1}` from a rank table indexed by bitmask.
    pub fn matroid(n: usize, rank: Vec<u32>) -> Result<Self> {
        if rank.len() != 1usize << n {
            return Err(domain(format!("rank table needs {} entries", 1usize << n)));
        }
        let c = Constraint::MatroidOracle { ground: ItemSet::full(n), rank };
        c.validate()?;
        Ok(c)
    }

    /// Graphic matroid: item `i` is an edge; independent sets are forests.
    pub fn graphic_matroid(edges: &[(u32, u32)]) -> Result<Self> {
        let n = edges.len();
        if n > MATROID_EXACT_LIMIT {
            return Err(Error::Capacity { what: "rank table", size: n, limit: MATROID_EXACT_LIMIT });
        }
        let rank = (0..1u64 << n)
            .map(|m| forest_rank(edges, ItemSet(m)))
            .collect();
        Constraint::matroid(n, rank)
    }

    pub fn intersection(parts: Vec<Constraint>) -> Result<Self> {
        let ground = parts.first().map(|p| p.ground()).ok_or_else(|| domain("empty intersection"))?;
        if parts.iter().any(|p| p.ground() != ground) {
            return Err(domain("intersection members must share a ground set"));
        }
        Ok(Constraint::Intersection { ground, parts })
    }

    pub fn size_floor(base: Constraint, h: usize) -> Self {
        Constraint::SizeFloor { base: Box::new(base), h }
    }

    pub fn ground(&self) -> ItemSet {
        match self {
            Constraint::Additive { ground }
            | Constraint::UnitDemand { ground }
            | Constraint::KUniform { ground, .. }
            | Constraint::MatroidOracle { ground, .. }
            | Constraint::Matching { ground, .. }
            | Constraint::Knapsack { ground, .. }
            | Constraint::Intersection { ground, .. } => *ground,
            Constraint::SizeFloor { base, .. } => base.ground(),
        }
    }

    pub fn is_downward_closed(&self) -> bool {
        match self {
            Constraint::SizeFloor { h, .. } => *h <= 1,
            Constraint::Intersection { parts, .. } => parts.iter().all(|p| p.is_downward_closed()),
            _ => true,
        }
    }

    /// Whether the constraint is a matroid (greedy is exact).
    pub fn is_matroid(&self) -> bool {
        matches!(
            self,
            Constraint::Additive { .. }
                | Constraint::UnitDemand { .. }
                | Constraint::KUniform { .. }
                | Constraint::MatroidOracle { .. }
        )
    }

    /// Structural checks: rank axioms on matroids, sizes in range, edges present.
    pub fn validate(&self) -> Result<()> {
        match self {
            Constraint::MatroidOracle { ground, rank } => {
                let g = ground.len();
                if rank.len() != 1usize << g {
                    return Err(domain("rank table size does not match ground"));
                }
                if rank[0] != 0 {
                    return Err(domain("rank of the empty set must be 0"));
                }
                for m in 0..rank.len() {
                    for j in 0..g {
                        if m >> j & 1 == 0 {
                            let up = rank[m | 1 << j] as i64 - rank[m] as i64;
                            if !(0..=1).contains(&up) {
                                return Err(domain("rank increments must be 0 or 1"));
                            }
                            for l in j + 1..g {
                                if m >> l & 1 == 0 {
                                    let a = rank[m | 1 << j] + rank[m | 1 << l];
                                    let b = rank[m] + rank[m | 1 << j | 1 << l];
                                    if a < b {
                                        return Err(domain("rank function is not submodular"));
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(())
            }
            Constraint::Knapsack { ground, sizes } => {
                if ground.iter().any(|i| i >= sizes.len() || !(0.0..=1.0).contains(&sizes[i])) {
                    return Err(domain("knapsack sizes must lie in [0, 1] for every ground item"));
                }
                Ok(())
            }
            Constraint::Matching { ground, edges } => {
                if ground.iter().any(|i| i >= edges.len()) {
                    return Err(domain("matching needs an edge for every ground item"));
                }
                Ok(())
            }
            Constraint::Intersection { ground, parts } => {
                if parts.iter().any(|p| p.ground() != *ground) {
                    return Err(domain("intersection members must share a ground set"));
                }
                parts.iter().try_for_each(|p| p.validate())
            }
            Constraint::SizeFloor { base, .. } => base.validate(),
            _ => Ok(()),
        }
    }

    /// Membership test; `S` must lie inside the ground set.
    pub fn is_feasible(&self, s: ItemSet) -> Result<bool> {
        if !s.is_subset(self.ground()) {
            return Err(domain(format!("set {s:?} is not inside the ground set {:?}", self.ground())));
        }
        Ok(self.contains(s))
    }

    /// Membership test that treats sets leaving the ground set as infeasible.
    pub fn admits(&self, s: ItemSet) -> bool {
        s.is_subset(self.ground()) && self.contains(s)
    }

    fn contains(&self, s: ItemSet) -> bool {
        match self {
            Constraint::Additive { .. } => true,
            Constraint::UnitDemand { .. } => s.len() <= 1,
            Constraint::KUniform { k, .. } => s.len() <= *k,
            Constraint::MatroidOracle { ground, rank } => rank[ground.compress(s)] as usize == s.len(),
            Constraint::Matching { edges, .. } => {
                let mut seen: u128 = 0;
                let mut extra: Vec<u32> = Vec::new();
                for i in s.iter() {
                    let (a, b) = edges[i];
                    for v in [a, b] {
                        if v < 128 {
                            if seen >> v & 1 == 1 {
                                return false;
                            }
                            seen |= 1 << v;
                        } else if extra.contains(&v) {
                            return false;
                        } else {
                            extra.push(v);
                        }
                    }
                }
                true
            }
            Constraint::Knapsack { sizes, .. } => s.iter().map(|i| sizes[i]).sum::<f64>() <= 1.0 + 1e-12,
            Constraint::Intersection { parts, .. } => parts.iter().all(|p| p.contains(s)),
            Constraint::SizeFloor { base, h } => base.contains(s) && (s.is_empty() || s.len() >= *h),
        }
    }

    /// Exact maximum-weight feasible set.
    ///
    /// `w` is indexed by item. Items outside the ground set are ignored. Ties
    /// go to the smaller set, then to the lexicographically smaller index list.
    pub fn max_weight_set(&self, w: &[f64]) -> Result<(ItemSet, f64)> {
        let ground = self.ground();
        if let Some(i) = ground.iter().find(|&i| i >= w.len() || !w[i].is_finite()) {
            return Err(domain(format!("missing or non-finite weight for item {i}")));
        }
        let positive = ItemSet::from_indices(ground.iter().filter(|&i| w[i] > 0.0));
        let best = match self {
            Constraint::Additive { .. } => positive,
            Constraint::UnitDemand { .. } => {
                let mut best: Option<usize> = None;
                for i in positive.iter() {
                    if best.is_none_or(|b| w[i] > w[b]) {
                        best = Some(i);
                    }
                }
                best.map_or(ItemSet::EMPTY, ItemSet::singleton)
            }
            Constraint::KUniform { .. } | Constraint::MatroidOracle { .. } => self.greedy(positive, w),
            Constraint::SizeFloor { h, .. } if *h > 1 => {
                if ground.len() > SEARCH_LIMIT {
                    return Err(Error::Capacity { what: "size-floor search", size: ground.len(), limit: SEARCH_LIMIT });
                }
                return Ok(self.search_all(w));
            }
            _ => {
                if ground.len() > SEARCH_LIMIT {
                    return Err(Error::Capacity { what: "exhaustive max-weight search", size: ground.len(), limit: SEARCH_LIMIT });
                }
                self.search_positive(positive, w)
            }
        };
        Ok((best, set_weight(best, w)))
    }

    fn greedy(&self, positive: ItemSet, w: &[f64]) -> ItemSet {
        let mut order: Vec<usize> = positive.to_vec();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let mut chosen = ItemSet::EMPTY;
        for i in order {
            let cand = chosen.with(i);
            if self.contains(cand) {
                chosen = cand;
            }
        }
        chosen
    }

    /// Depth-first search over feasible subsets of the positive items.
    fn search_positive(&self, positive: ItemSet, w: &[f64]) -> ItemSet {
        let items = positive.to_vec();
        let mut suffix = vec![0.0; items.len() + 1];
        for k in (0..items.len()).rev() {
            suffix[k] = suffix[k + 1] + w[items[k]];
        }
        let mut best = (ItemSet::EMPTY, 0.0);
        self.dfs(&items, &suffix, w, 0, ItemSet::EMPTY, 0.0, &mut best);
        best.0
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(&self, items: &[usize], suffix: &[f64], w: &[f64], k: usize, cur: ItemSet, cur_w: f64, best: &mut (ItemSet, f64)) {
        if better(cur, cur_w, best.0, best.1) {
            *best = (cur, cur_w);
        }
        if k == items.len() || cur_w + suffix[k] < best.1 {
            return;
        }
        let next = cur.with(items[k]);
        if self.contains(next) {
            self.dfs(items, suffix, w, k + 1, next, cur_w + w[items[k]], best);
        }
        self.dfs(items, suffix, w, k + 1, cur, cur_w, best);
    }

    fn search_all(&self, w: &[f64]) -> (ItemSet, f64) {
        let mut best = (ItemSet::EMPTY, 0.0);
        for s in self.ground().subsets() {
            if self.contains(s) {
                let sw = set_weight(s, w);
                if better(s, sw, best.0, best.1) {
                    best = (s, sw);
                }
            }
        }
        best
    }

    /// `F|_T`: the feasible sets of `self` that lie inside `T`.
    pub fn restrict(&self, t: ItemSet) -> Result<Constraint> {
        if !t.is_subset(self.ground()) {
            return Err(domain("restriction set must lie inside the ground set"));
        }
        Ok(match self {
            Constraint::Additive { .. } => Constraint::Additive { ground: t },
            Constraint::UnitDemand { .. } => Constraint::UnitDemand { ground: t },
            Constraint::KUniform { k, .. } => Constraint::KUniform { ground: t, k: *k },
            Constraint::MatroidOracle { ground, rank } => {
                let members = t.to_vec();
                let table = (0..1usize << members.len())
                    .map(|m| {
                        let s = ItemSet::from_indices(members.iter().enumerate().filter(|(j, _)| m >> j & 1 == 1).map(|(_, &i)| i));
                        rank[ground.compress(s)]
                    })
                    .collect();
                Constraint::MatroidOracle { ground: t, rank: table }
            }
            Constraint::Matching { edges, .. } => Constraint::Matching { ground: t, edges: edges.clone() },
            Constraint::Knapsack { sizes, .. } => Constraint::Knapsack { ground: t, sizes: sizes.clone() },
            Constraint::Intersection { parts, .. } => Constraint::Intersection {
                ground: t,
                parts: parts.iter().map(|p| p.restrict(t)).collect::<Result<_>>()?,
            },
            Constraint::SizeFloor { base, h } => Constraint::SizeFloor { base: Box::new(base.restrict(t)?), h: *h },
        })
    }

    /// Whether `q / δ` lies in the constraint polytope.
    ///
    /// Knapsack uses its fractional relaxation and intersections require every
    /// member to pass. Matroids above [`MATROID_EXACT_LIMIT`] ground items
    /// are refused.
    pub fn in_scaled_polytope(&self, q: &[f64], delta: f64) -> Result<bool> {
        let ground = self.ground();
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(domain(format!("scale {delta} outside (0, 1]")));
        }
        if ground.iter().any(|i| i >= q.len() || !(0.0..=1.0).contains(&q[i])) {
            return Err(domain("probabilities must lie in [0, 1] for every ground item"));
        }
        let eps = 1e-12;
        let sum: f64 = ground.iter().map(|i| q[i]).sum();
        let each = ground.iter().all(|i| q[i] <= delta + eps);
        Ok(match self {
            Constraint::Additive { .. } => each,
            Constraint::UnitDemand { .. } => sum <= delta + eps,
            Constraint::KUniform { k, .. } => each && sum <= delta * *k as f64 + eps,
            Constraint::Knapsack { sizes, .. } => {
                each && ground.iter().map(|i| q[i] * sizes[i]).sum::<f64>() <= delta + eps
            }
            Constraint::MatroidOracle { ground, rank } => {
                if ground.len() > MATROID_EXACT_LIMIT {
                    return Err(Error::Capacity { what: "matroid polytope check", size: ground.len(), limit: MATROID_EXACT_LIMIT });
                }
                ground.subsets().all(|s| {
                    s.iter().map(|i| q[i]).sum::<f64>() <= delta * rank[ground.compress(s)] as f64 + eps
                })
            }
            Constraint::Matching { ground, edges } => {
                let mut verts: Vec<u32> = ground.iter().flat_map(|i| [edges[i].0, edges[i].1]).collect();
                verts.sort_unstable();
                verts.dedup();
                if verts.len() > SEARCH_LIMIT {
                    return Err(Error::Capacity { what: "matching polytope check", size: verts.len(), limit: SEARCH_LIMIT });
                }
                let degree_ok = verts.iter().all(|v| {
                    ground.iter().filter(|&i| edges[i].0 == *v || edges[i].1 == *v).map(|i| q[i]).sum::<f64>() <= delta + eps
                });
                // Odd-set inequalities complete the description of the matching polytope.
                degree_ok
                    && (0u64..1 << verts.len()).filter(|m| m.count_ones() >= 3 && m.count_ones() % 2 == 1).all(|m| {
                        let inside = |v: u32| {
                            let j = verts.binary_search(&v).expect("vertex list covers every endpoint");
                            m >> j & 1 == 1
                        };
                        let load: f64 = ground.iter().filter(|&i| inside(edges[i].0) && inside(edges[i].1)).map(|i| q[i]).sum();
                        load <= delta * ((m.count_ones() - 1) / 2) as f64 + eps
                    })
            }
            Constraint::Intersection { parts, .. } => {
                for p in parts {
                    if !p.in_scaled_polytope(q, delta)? {
                        return Ok(false);
                    }
                }
                true
            }
            Constraint::SizeFloor { base, .. } => base.in_scaled_polytope(q, delta)?,
        })
    }

    /// All feasible sets, by exhaustive enumeration of the ground subsets.
    pub fn feasible_sets(&self) -> Result<Vec<ItemSet>> {
        let g = self.ground().len();
        if g > SEARCH_LIMIT {
            return Err(Error::Capacity { what: "feasible-set enumeration", size: g, limit: SEARCH_LIMIT });
        }
        Ok(self.ground().subsets().filter(|s| self.contains(*s)).collect())
    }
}

fn set_weight(s: ItemSet, w: &[f64]) -> f64 {
    s.iter().map(|i| w[i]).sum()
}

/// Heavier first, then smaller, then lexicographically smaller.
fn better(s: ItemSet, sw: f64, t: ItemSet, tw: f64) -> bool {
    if sw != tw {
        return sw > tw;
    }
    if s.len() != t.len() {
        return s.len() < t.len();
    }
    s.lex_less(t)
}

fn forest_rank(edges: &[(u32, u32)], s: ItemSet) -> u32 {
    let mut parent: Vec<u32> = Vec::new();
    let mut ids: Vec<u32> = Vec::new();
    let find = |parent: &mut Vec<u32>, ids: &mut Vec<u32>, v: u32| -> usize {
        let mut x = match ids.iter().position(|&u| u == v) {
            Some(p) => p,
            None => {
                ids.push(v);
                parent.push((ids.len() - 1) as u32);
                ids.len() - 1
            }
        };
        while parent[x] as usize != x {
            x = parent[x] as usize;
        }
        x
    };
    let mut rank = 0;
    for i in s.iter() {
        let (a, b) = edges[i];
        let ra = find(&mut parent, &mut ids, a);
        let rb = find(&mut parent, &mut ids, b);
        if ra != rb {
            parent[ra] = rb as u32;
            rank += 1;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> ItemSet {
        ItemSet::from_indices(v.iter().copied())
    }

    #[test]
    fn membership_examples() {
        assert!(!Constraint::unit_demand(3).is_feasible(set(&[0, 1])).unwrap());
        let ks = Constraint::knapsack(vec![0.6, 0.5, 0.5]).unwrap();
        assert!(ks.is_feasible(set(&[1, 2])).unwrap());
        let both = Constraint::intersection(vec![Constraint::k_uniform(3, 2), ks]).unwrap();
        assert!(!both.is_feasible(set(&[0, 1, 2])).unwrap());
        assert!(Constraint::unit_demand(2).is_feasible(set(&[3])).is_err());
        let floor = Constraint::size_floor(Constraint::additive(3), 2);
        assert!(floor.is_feasible(ItemSet::EMPTY).unwrap());
        assert!(!floor.is_feasible(set(&[1])).unwrap());
        assert!(floor.is_feasible(set(&[1, 2])).unwrap());
    }

    #[test]
    fn max_weight_examples() {
        let w = [3.0, 1.0, 2.0];
        assert_eq!(Constraint::unit_demand(3).max_weight_set(&w).unwrap(), (set(&[0]), 3.0));
        assert_eq!(Constraint::k_uniform(3, 2).max_weight_set(&w).unwrap(), (set(&[0, 2]), 5.0));
        let ks = Constraint::knapsack(vec![0.6, 0.5, 0.5]).unwrap();
        assert_eq!(ks.max_weight_set(&[3.0, 2.0, 2.0]).unwrap(), (set(&[1, 2]), 4.0));
    }

    #[test]
    fn ties_prefer_small_then_lexicographic() {
        let ud = Constraint::unit_demand(3);
        assert_eq!(ud.max_weight_set(&[1.0, 1.0, 0.5]).unwrap().0, set(&[0]));
        let ks = Constraint::knapsack(vec![0.6, 0.5, 0.5]).unwrap();
        // {0} and {1, 2} both weigh 2; the singleton wins.
        assert_eq!(ks.max_weight_set(&[2.0, 1.0, 1.0]).unwrap().0, set(&[0]));
        assert_eq!(Constraint::additive(3).max_weight_set(&[0.0, 1.0, -1.0]).unwrap().0, set(&[1]));
        assert!(set(&[0, 3]).lex_less(set(&[1, 2])));
        assert!(set(&[0]).lex_less(set(&[0, 1])));
        assert!(!set(&[0, 1]).lex_less(set(&[0])));
        assert!(set(&[1, 2]).lex_less(set(&[1, 3])));
        assert!(!set(&[1, 3]).lex_less(set(&[1, 2])));
    }

    #[test]
    fn restrict_examples() {
        let t = set(&[1, 3]);
        assert_eq!(Constraint::unit_demand(5).restrict(t).unwrap(), Constraint::UnitDemand { ground: t });
        match Constraint::knapsack(vec![0.1, 0.2, 0.3, 0.4]).unwrap().restrict(t).unwrap() {
            Constraint::Knapsack { ground, sizes } => {
                assert_eq!(ground, t);
                assert_eq!(ground.iter().map(|i| sizes[i]).collect::<Vec<_>>(), vec![0.2, 0.4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn polytope_examples() {
        let ud = Constraint::unit_demand(2);
        assert!(ud.in_scaled_polytope(&[0.3, 0.1], 0.5).unwrap());
        assert!(!ud.in_scaled_polytope(&[0.4, 0.2], 0.5).unwrap());
        assert!(Constraint::k_uniform(3, 2).in_scaled_polytope(&[0.5, 0.5, 0.5], 1.0).unwrap());
        // Triangle: the all-½ point violates the odd-set inequality.
        let tri = Constraint::matching(vec![(0, 1), (1, 2), (0, 2)]);
        assert!(!tri.in_scaled_polytope(&[0.5, 0.5, 0.5], 1.0).unwrap());
        assert!(tri.in_scaled_polytope(&[1.0 / 3.0; 3], 1.0).unwrap());
    }

    #[test]
    fn graphic_matroid_ranks_forests() {
        let m = Constraint::graphic_matroid(&[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        assert!(m.is_feasible(set(&[0, 1, 3])).unwrap());
        assert!(!m.is_feasible(set(&[0, 1, 2])).unwrap());
        assert!(Constraint::matroid(2, vec![0, 1, 1, 3]).is_err());
    }

    #[test]
    fn subsets_enumerates_all() {
        let s = set(&[1, 4, 6]);
        let all: Vec<ItemSet> = s.subsets().collect();
        assert_eq!(all.len(), 8);
        assert!(all.iter().all(|t| t.is_subset(s)));
        assert_eq!(ItemSet::EMPTY.subsets().count(), 1);
    }
}
