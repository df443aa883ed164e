//! Exact linear programs for second-best GFT and super-seller profit on
//! fully discrete markets.

use std::fmt::Write as _;
use std::sync::Arc;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::audits::{exact_gft, first_best_gft, first_best_gft_on, EvalMode};
use crate::bounds::{opt_b, prophet_fpp};
use crate::error::{Error, Result};
use crate::feasibility::{Constraint, ItemSet};
use crate::mechanisms::{
    reduction_rule, unlikely_trade_rule, BuyerOffering, Fpp, Grid, MarketInstance, Mechanism, Sapp, SellerOffering,
};

/// Largest number of (buyer type, seller profile) cells an LP may have.
pub const LP_CELL_LIMIT: usize = 100_000;
/// Slack allowed when checking inequalities against LP optima.
pub const CHAIN_TOL: f64 = 1e-6;

/// Budget balance imposed by [`second_best_lp`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    #[default]
    ExAnte,
    ExPost,
}

/// Type spaces of a discrete market restricted to a set of active items.
/// Inactive items are never allocated and their values are ignored.
#[derive(Clone, Debug)]
pub struct DiscreteMarket {
    inst: MarketInstance,
    active: Vec<usize>,
    buyers: Grid,
    sellers: Grid,
    /// Nonempty feasible sets inside the active items.
    sets: Vec<ItemSet>,
}

impl DiscreteMarket {
    pub fn new(inst: &MarketInstance) -> Result<Self> {
        Self::on(inst, ItemSet::full(inst.n()))
    }

    pub fn on(inst: &MarketInstance, items: ItemSet) -> Result<Self> {
        if !inst.is_discrete() {
            return Err(Error::Unsupported("the LP oracle needs discrete distributions; discretize first".into()));
        }
        if !items.is_subset(ItemSet::full(inst.n())) {
            return Err(Error::Parameter("active items must be market items".into()));
        }
        let active = items.to_vec();
        let atoms = |d: &crate::Dist| d.as_discrete().map(|dd| dd.atoms().collect::<Vec<_>>()).unwrap_or_default();
        let mut cells: usize = 1;
        for &i in &active {
            let k = inst.buyer(i).as_discrete().map_or(0, |d| d.len()) * inst.seller(i).as_discrete().map_or(0, |d| d.len());
            cells = cells.saturating_mul(k);
        }
        if cells > LP_CELL_LIMIT {
            return Err(Error::Capacity { what: "LP type cells", size: cells, limit: LP_CELL_LIMIT });
        }
        let buyers = Grid::new(active.iter().map(|&i| atoms(inst.buyer(i))).collect())?;
        let sellers = Grid::new(active.iter().map(|&i| atoms(inst.seller(i))).collect())?;
        let sets = inst.constraint().restrict(items)?.feasible_sets()?.into_iter().filter(|s| !s.is_empty()).collect();
        Ok(Self { inst: inst.clone(), active, buyers, sellers, sets })
    }

    pub fn instance(&self) -> &MarketInstance {
        &self.inst
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn cells(&self) -> usize {
        self.buyers.len() * self.sellers.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A maximization LP with named variables, kept in a form that can be both
/// solved and printed.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LpModel {
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpSolution {
    pub objective: f64,
    pub values: Vec<f64>,
}

impl LpModel {
    fn var(&mut self, name: String, obj: f64, bounds: (f64, f64)) -> usize {
        self.names.push(name);
        self.objective.push(obj);
        self.bounds.push(bounds);
        self.names.len() - 1
    }

    fn row(&mut self, name: String, mut terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        terms.sort_by_key(|t| t.0);
        terms.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        terms.retain(|t| t.1 != 0.0);
        self.rows.push(Row { name, terms, sense, rhs });
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self.objective.iter().zip(&self.bounds).map(|(&c, &b)| problem.add_var(c, b)).collect();
        for row in &self.rows {
            let expr: Vec<_> = row.terms.iter().map(|&(j, a)| (vars[j], a)).collect();
            let op = match row.sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(expr.as_slice(), op, row.rhs);
        }
        let sol = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
        Ok(LpSolution { objective: sol.objective(), values: vars.iter().map(|v| *sol.var_value(*v)).collect() })
    }

    /// CPLEX-style LP text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let expr = |terms: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut s = String::new();
            for (k, (j, a)) in terms.enumerate() {
                let sign = if a < 0.0 { "-" } else if k > 0 { "+" } else { "" };
                let _ = write!(s, " {sign} {} {}", a.abs(), self.names[j]);
            }
            if s.is_empty() {
                s.push_str(" 0");
            }
            s
        };
        let _ = writeln!(out, "Maximize");
        let obj = expr(&mut self.objective.iter().copied().enumerate().filter(|t| t.1 != 0.0));
        let _ = writeln!(out, " obj:{obj}");
        let _ = writeln!(out, "Subject To");
        for row in &self.rows {
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let lhs = expr(&mut row.terms.iter().copied());
            let _ = writeln!(out, " {}:{lhs} {op} {}", row.name, row.rhs);
        }
        let _ = writeln!(out, "Bounds");
        for (name, &(lo, hi)) in self.names.iter().zip(&self.bounds) {
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
                (true, true) => {
                    let _ = writeln!(out, " {lo} <= {name} <= {hi}");
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {lo}");
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {hi}");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Variable indices shared by both programs.
struct Layout {
    /// `x[k][c]` for local item `k` and cell `c`.
    x: Vec<Vec<usize>>,
    /// `pB[c]`.
    pay_b: Vec<usize>,
    /// `pS[k][c]`, empty when seller payments are absent.
    pay_s: Vec<Vec<usize>>,
}

/// Box for payment variables. Some optimum always has interim buyer payments
/// within `Σ max b` of zero and seller rents below `Σ max s`, so four times
/// their sum never binds.
fn payment_box(m: &DiscreteMarket) -> (f64, f64) {
    let top = |d: &crate::Dist| d.support().1.abs().max(d.support().0.abs());
    let total: f64 = m.active.iter().map(|&i| top(m.inst.buyer(i)) + top(m.inst.seller(i))).sum();
    let bound = 4.0 * total + 1.0;
    (-bound, bound)
}

fn cell_name(prefix: &str, b: usize, s: usize) -> String {
    format!("{prefix}[b{b},s{s}]")
}

/// Allocation variables, per-cell feasibility and payments.
fn base_layout(m: &DiscreteMarket, lp: &mut LpModel, seller_payments: bool, gain: impl Fn(usize, usize, usize) -> f64) -> Layout {
    let (nb, ns) = (m.buyers.len(), m.sellers.len());
    let k_items = m.active.len();
    let cells = nb * ns;
    let mut x = vec![Vec::with_capacity(cells); k_items];
    for b in 0..nb {
        for s in 0..ns {
            for (k, xs) in x.iter_mut().enumerate() {
                let item = m.active[k];
                xs.push(lp.var(cell_name(&format!("x{item}"), b, s), gain(k, b, s), (0.0, 1.0)));
            }
        }
    }
    let ground = ItemSet::from_indices(m.active.iter().copied());
    let additive = m.sets.contains(&ground);
    let singletons_only = m.sets.iter().all(|s| s.len() == 1);
    for c in 0..cells {
        let (b, s) = (c / ns, c % ns);
        if additive {
            continue;
        }
        if singletons_only {
            let terms = (0..k_items).map(|k| (x[k][c], 1.0)).collect();
            lp.row(format!("unit[b{b},s{s}]"), terms, Sense::Le, 1.0);
            continue;
        }
        let lambdas: Vec<(usize, ItemSet)> = m
            .sets
            .iter()
            .enumerate()
            .map(|(j, set)| (lp.var(format!("lam{j}[b{b},s{s}]"), 0.0, (0.0, 1.0)), *set))
            .collect();
        lp.row(format!("hull[b{b},s{s}]"), lambdas.iter().map(|l| (l.0, 1.0)).collect(), Sense::Le, 1.0);
        for (k, xs) in x.iter().enumerate() {
            let mut terms = vec![(xs[c], 1.0)];
            terms.extend(lambdas.iter().filter(|l| l.1.contains(m.active[k])).map(|l| (l.0, -1.0)));
            lp.row(format!("marg{}[b{b},s{s}]", m.active[k]), terms, Sense::Eq, 0.0);
        }
    }
    let pay = payment_box(m);
    let pay_b = (0..cells).map(|c| lp.var(cell_name("pB", c / ns, c % ns), 0.0, pay)).collect();
    let pay_s = if seller_payments {
        (0..k_items)
            .map(|k| (0..cells).map(|c| lp.var(cell_name(&format!("pS{}", m.active[k]), c / ns, c % ns), 0.0, pay)).collect())
            .collect()
    } else {
        Vec::new()
    };
    Layout { x, pay_b, pay_s }
}

fn buyer_constraints(m: &DiscreteMarket, lp: &mut LpModel, layout: &Layout) {
    let (nb, ns) = (m.buyers.len(), m.sellers.len());
    let points: Vec<(Vec<f64>, f64)> = m.buyers.iter().collect();
    let seller_probs: Vec<f64> = m.sellers.iter().map(|p| p.1).collect();
    // Interim utility of true type `b` reporting `r`, as terms.
    let utility = |b: usize, r: usize, sign: f64, terms: &mut Vec<(usize, f64)>| {
        for (s, &ps) in seller_probs.iter().enumerate() {
            let c = r * ns + s;
            for (k, xs) in layout.x.iter().enumerate() {
                terms.push((xs[c], sign * ps * points[b].0[k]));
            }
            terms.push((layout.pay_b[c], -sign * ps));
        }
    };
    for b in 0..nb {
        let mut ir = Vec::new();
        utility(b, b, 1.0, &mut ir);
        lp.row(format!("irB[b{b}]"), ir, Sense::Ge, 0.0);
        for r in (0..nb).filter(|&r| r != b) {
            let mut terms = Vec::new();
            utility(b, b, 1.0, &mut terms);
            utility(b, r, -1.0, &mut terms);
            lp.row(format!("bicB[b{b},b{r}]"), terms, Sense::Ge, 0.0);
        }
    }
}

fn seller_constraints(m: &DiscreteMarket, lp: &mut LpModel, layout: &Layout) {
    let ns = m.sellers.len();
    let buyer_probs: Vec<f64> = m.buyers.iter().map(|p| p.1).collect();
    for (k, &item) in m.active.iter().enumerate() {
        let coord = m.sellers.coord(k).to_vec();
        let stride = m.sellers.stride(k);
        // Seller profiles grouped by own type.
        let mut by_own: Vec<Vec<(usize, f64)>> = vec![Vec::new(); coord.len()];
        for (s, (_, p)) in m.sellers.iter().enumerate() {
            let own = (s / stride) % coord.len();
            by_own[own].push((s, p / coord[own].1));
        }
        let interim = |a: usize, r: usize, sign: f64, terms: &mut Vec<(usize, f64)>| {
            let cost = coord[a].0;
            // Profiles with own type `r` are those of `a` shifted by the digit difference.
            for &(s, p_others) in &by_own[a] {
                let shifted = s + r * stride - a * stride;
                for (b, &pb) in buyer_probs.iter().enumerate() {
                    let c = b * ns + shifted;
                    let w = sign * pb * p_others;
                    terms.push((layout.pay_s[k][c], w));
                    terms.push((layout.x[k][c], -w * cost));
                }
            }
        };
        for a in 0..coord.len() {
            let mut ir = Vec::new();
            interim(a, a, 1.0, &mut ir);
            lp.row(format!("irS{item}[s{a}]"), ir, Sense::Ge, 0.0);
            for r in (0..coord.len()).filter(|&r| r != a) {
                let mut terms = Vec::new();
                interim(a, a, 1.0, &mut terms);
                interim(a, r, -1.0, &mut terms);
                lp.row(format!("bicS{item}[s{a},s{r}]"), terms, Sense::Ge, 0.0);
            }
        }
    }
}

fn cell_prob(m: &DiscreteMarket) -> Vec<f64> {
    let sp: Vec<f64> = m.sellers.iter().map(|p| p.1).collect();
    m.buyers.iter().flat_map(|(_, pb)| sp.iter().map(move |ps| pb * ps).collect::<Vec<_>>()).collect()
}

/// The second-best program: maximize expected GFT over interim BIC and IR
/// mechanisms for the buyer and every seller, under the chosen budget balance.
pub fn second_best_model(m: &DiscreteMarket, budget: Budget) -> LpModel {
    let mut lp = LpModel::default();
    let ns = m.sellers.len();
    let probs = cell_prob(m);
    let bvals: Vec<Vec<f64>> = m.buyers.iter().map(|p| p.0).collect();
    let svals: Vec<Vec<f64>> = m.sellers.iter().map(|p| p.0).collect();
    let layout = base_layout(m, &mut lp, true, |k, b, s| probs[b * ns + s] * (bvals[b][k] - svals[s][k]));
    buyer_constraints(m, &mut lp, &layout);
    seller_constraints(m, &mut lp, &layout);
    let balance = |c: usize, w: f64, terms: &mut Vec<(usize, f64)>| {
        terms.push((layout.pay_b[c], w));
        terms.extend(layout.pay_s.iter().map(|ps| (ps[c], -w)));
    };
    match budget {
        Budget::ExAnte => {
            let mut terms = Vec::new();
            for (c, &p) in probs.iter().enumerate() {
                balance(c, p, &mut terms);
            }
            lp.row("wbb".into(), terms, Sense::Ge, 0.0);
        }
        Budget::ExPost => {
            for c in 0..probs.len() {
                let mut terms = Vec::new();
                balance(c, 1.0, &mut terms);
                lp.row(format!("wbb[b{},s{}]", c / ns, c % ns), terms, Sense::Ge, 0.0);
            }
        }
    }
    lp
}

/// The super-seller program: maximize `E[p^B − Σ x_i s_i]` with costs known
/// to the designer, subject to buyer interim BIC and IR only.
pub fn opt_s_model(m: &DiscreteMarket) -> LpModel {
    let mut lp = LpModel::default();
    let ns = m.sellers.len();
    let probs = cell_prob(m);
    let svals: Vec<Vec<f64>> = m.sellers.iter().map(|p| p.0).collect();
    let layout = base_layout(m, &mut lp, false, |k, b, s| -probs[b * ns + s] * svals[s][k]);
    for (c, &p) in probs.iter().enumerate() {
        lp.objective[layout.pay_b[c]] = p;
    }
    buyer_constraints(m, &mut lp, &layout);
    lp
}

pub fn second_best_lp(m: &DiscreteMarket) -> Result<f64> {
    second_best_lp_with(m, Budget::ExAnte)
}

pub fn second_best_lp_with(m: &DiscreteMarket, budget: Budget) -> Result<f64> {
    Ok(second_best_model(m, budget).solve()?.objective)
}

pub fn opt_s_lp(m: &DiscreteMarket) -> Result<f64> {
    Ok(opt_s_model(m).solve()?.objective)
}

#[derive(Clone, Debug, Serialize)]
pub struct MechanismCheck {
    pub mechanism: String,
    pub gft: f64,
    pub exante_slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct UbChainReport {
    pub sb: f64,
    pub opt_s: f64,
    pub opt_b: f64,
    pub fb: f64,
    pub sb_le_fb: bool,
    pub sb_le_opt_s_plus_opt_b: bool,
    pub mechanisms: Vec<MechanismCheck>,
}

impl UbChainReport {
    pub fn all_hold(&self) -> bool {
        self.sb_le_fb && self.sb_le_opt_s_plus_opt_b && self.mechanisms.iter().all(|m| m.holds)
    }
}

/// Mechanisms whose exact GFT is compared against the second best.
pub fn reference_mechanisms(inst: &MarketInstance) -> Vec<Box<dyn Mechanism>> {
    let n = inst.n();
    let mut out: Vec<Box<dyn Mechanism>> = vec![Box::new(BuyerOffering)];
    if n == 1 {
        out.push(Box::new(SellerOffering));
    }
    let medians: Vec<f64> = (0..n).map(|i| inst.buyer(i).survival_quantile(0.5).unwrap_or(0.0)).collect();
    out.push(Box::new(Fpp::symmetric(medians.clone())));
    if matches!(inst.constraint(), Constraint::UnitDemand { .. }) {
        if let Ok(fpp) = prophet_fpp(&medians, 0.0) {
            out.push(Box::new(fpp));
        }
        if let Ok(rule) = reduction_rule(inst) {
            if let Ok(m) = Sapp::new(inst, Arc::new(rule)) {
                out.push(Box::new(m));
            }
        }
    }
    if let Ok(rule) = unlikely_trade_rule(inst, ItemSet::full(n)) {
        if let Ok(m) = Sapp::new(inst, Arc::new(rule)) {
            out.push(Box::new(m));
        }
    }
    out
}

/// Second best against OPT-S + OPT-B, first best, and the exact GFT of every
/// reference mechanism that is ex-ante budget balanced.
pub fn verify_ub_chain(m: &DiscreteMarket) -> Result<UbChainReport> {
    let inst = m.instance();
    if m.active.len() != inst.n() {
        return Err(Error::Precondition("the chain check needs every item active".into()));
    }
    let sb = second_best_lp(m)?;
    let opt_s = opt_s_lp(m)?;
    let opt_b = opt_b(inst, EvalMode::Exact)?.mean;
    let fb = first_best_gft(inst, EvalMode::Exact)?.mean;
    let tol = CHAIN_TOL * (1.0 + sb.abs());
    let mut mechanisms = Vec::new();
    for mech in reference_mechanisms(inst) {
        let summary = mech.exact(inst)?;
        let exante_slack = summary.exante_slack();
        let in_class = exante_slack >= -1e-9 && summary.ir_violations.unwrap_or(0) == 0;
        mechanisms.push(MechanismCheck {
            mechanism: mech.name(),
            gft: summary.gft,
            exante_slack,
            holds: !in_class || summary.gft <= sb + tol,
        });
    }
    Ok(UbChainReport {
        sb,
        opt_s,
        opt_b,
        fb,
        sb_le_fb: sb <= fb + tol,
        sb_le_opt_s_plus_opt_b: sb <= opt_s + opt_b + tol,
        mechanisms,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MarginalCheck {
    pub kept: Vec<usize>,
    pub opt_s_all: f64,
    pub opt_s_kept: f64,
    pub fb_rest: f64,
    pub holds: bool,
}

/// `OPT-S(all) ≤ OPT-S(R) + FB-GFT(complement of R)`.
pub fn marginal_check(inst: &MarketInstance, kept: ItemSet) -> Result<MarginalCheck> {
    let full = ItemSet::full(inst.n());
    let opt_s_all = opt_s_lp(&DiscreteMarket::new(inst)?)?;
    let opt_s_kept = if kept.is_empty() { 0.0 } else { opt_s_lp(&DiscreteMarket::on(inst, kept)?)? };
    let fb_rest = first_best_gft_on(inst, full.minus(kept), EvalMode::Exact)?.mean;
    Ok(MarginalCheck {
        kept: kept.to_vec(),
        opt_s_all,
        opt_s_kept,
        fb_rest,
        holds: opt_s_all <= opt_s_kept + fb_rest + CHAIN_TOL * (1.0 + opt_s_all.abs()),
    })
}

/// Exact GFT of a mechanism on the market of `m`, for reports next to LP values.
pub fn mechanism_gft(m: &DiscreteMarket, mech: &dyn Mechanism) -> Result<f64> {
    exact_gft(mech, m.instance())
}
