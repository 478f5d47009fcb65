//! The residue pipeline: commutator products `A`, `B`, their composition,
//! the order `-2m` piece of `AB D^{-2m}` at x0, trace and sphere integral.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::clifford::trace_expr;
use crate::expr_core::{Atom, Coefficient, Expr, ExprError, FnId, Result, Term};
use crate::normal_coords::{at_origin, RuleTable};
use crate::pdo_calculus::{
    clifford_differential, commutator_symbol, compose, composition_pieces_with, dirac_inverse_power_symbol,
    dirac_squared_symbol, inverse_power_subleading_parts, GradedSymbol,
};
use crate::sphere_integrals::{integrate_expr, sphere_area, PiMultiple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    I,
    II,
    III,
    IV,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::I, Part::II, Part::III, Part::IV];

    pub fn name(self) -> &'static str {
        match self {
            Part::I => "i",
            Part::II => "ii",
            Part::III => "iii",
            Part::IV => "iv",
        }
    }

    pub fn parse(s: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A commutator factor: `[D², a^f]` or `[D, a^f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Squared(FnId),
    Dirac(FnId),
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Squared(k) => write!(f, "[D^2,a{}]", k),
            Factor::Dirac(k) => write!(f, "[D,a{}]", k),
        }
    }
}

/// The split `P = A B` of one part of the cocycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartSpec {
    pub part: Part,
    pub left: Vec<Factor>,
    pub right: Vec<Factor>,
}

impl PartSpec {
    pub fn of(part: Part) -> PartSpec {
        use Factor::*;
        let (left, right) = match part {
            Part::I => (vec![Squared(1)], vec![Squared(2), Dirac(3), Dirac(4)]),
            Part::II => (vec![Dirac(1), Squared(2)], vec![Squared(3), Dirac(4)]),
            Part::III => (vec![Dirac(1), Dirac(2), Squared(3)], vec![Squared(4)]),
            Part::IV => (vec![Squared(1), Dirac(2), Dirac(3)], vec![Squared(4)]),
        };
        PartSpec { part, left, right }
    }
}

/// A ξ-free density at x0 in function jets and curvature. The factor
/// `tr[id]·area(S_n)` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub dim: u32,
    pub expr: Expr,
}

pub const PREFACTOR_LABEL: &str = "tr[id]*area(S_n)";

impl Density {
    /// Wraps an expression after checking that only jets and curvature remain.
    pub fn new(expr: Expr) -> Result<Density> {
        for t in &expr.terms {
            if !t.word.is_empty() {
                return Err(ExprError::Precondition("Clifford word left in a density".into()));
            }
            for a in &t.atoms {
                match a {
                    Atom::FnJet { derivs, .. } if derivs.len() <= 3 => {}
                    Atom::Riemann(_) | Atom::ScalarCurv => {}
                    other => return Err(ExprError::Precondition(format!("atom {} left in a density", other))),
                }
            }
        }
        Ok(Density { dim: expr.dim, expr })
    }

    pub fn zero(dim: u32) -> Density {
        Density { dim, expr: Expr::zero(dim) }
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    pub fn add(&self, o: &Density) -> Result<Density> {
        Ok(Density { dim: self.dim, expr: self.expr.add(&o.expr)? })
    }

    pub fn sub(&self, o: &Density) -> Result<Density> {
        Ok(Density { dim: self.dim, expr: self.expr.sub(&o.expr)? })
    }

    /// `tr[id] = 2^{n/2}`.
    pub fn trace_identity(&self) -> i128 {
        1 << (self.dim / 2)
    }

    /// `tr[id]·area(S_n)` as a multiple of a power of π.
    pub fn prefactor(&self) -> PiMultiple {
        let a = sphere_area(self.dim);
        PiMultiple { rational: a.rational * self.trace_identity(), pi_power: a.pi_power }
    }

    /// Terms sorted by curvature degree, then total jet order, then atoms.
    pub fn ordered_terms(&self) -> Vec<&Term> {
        let mut v: Vec<&Term> = self.expr.terms.iter().collect();
        v.sort_by_cached_key(|t| (curvature_degree(t), jet_order(t), t.atoms.clone()));
        v
    }

    /// One canonical jet term per line; `0` when empty.
    pub fn render_jets(&self) -> String {
        if self.is_zero() {
            return "0\n".into();
        }
        let mut s = String::new();
        for t in self.ordered_terms() {
            s.push_str(&t.to_string());
            s.push('\n');
        }
        s
    }
}

fn curvature_degree(t: &Term) -> usize {
    t.atoms.iter().filter(|a| matches!(a, Atom::Riemann(_) | Atom::ScalarCurv)).count()
}

fn jet_order(t: &Term) -> usize {
    t.atoms
        .iter()
        .map(|a| match a {
            Atom::FnJet { derivs, .. } => derivs.len(),
            _ => 0,
        })
        .sum()
}

/// The summands of the order `-2m` composition, indexed by the orders
/// `(j, k, r)` of `∂_ξ^r σ_j(AB) ∂_x^r σ_k(D^{-2m})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Contribution {
    /// `σ_0(AB) σ_{-2m}`
    Zeroth,
    /// `σ_1(AB) σ_{-2m-1}`
    FirstSub,
    /// `σ_2(AB) σ_{-2m-2}`
    SecondSubSub,
    /// `-i ∂_ξ σ_2(AB) ∂_x σ_{-2m-1}`
    MixedSecondSub,
    /// `-i ∂_ξ σ_1(AB) ∂_x σ_{-2m}`
    MixedFirst,
    /// `-½ ∂_ξ∂_ξ σ_2(AB) ∂_x∂_x σ_{-2m}`
    DoubleMixed,
}

impl Contribution {
    pub const ALL: [Contribution; 6] = [
        Contribution::Zeroth,
        Contribution::FirstSub,
        Contribution::SecondSubSub,
        Contribution::MixedSecondSub,
        Contribution::MixedFirst,
        Contribution::DoubleMixed,
    ];

    /// 1-based position in the six-term list.
    pub fn number(self) -> u8 {
        Contribution::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Contribution::Zeroth => "σ₀·σ₋₂ₘ",
            Contribution::FirstSub => "σ₁·σ₋₂ₘ₋₁",
            Contribution::SecondSubSub => "σ₂·σ₋₂ₘ₋₂",
            Contribution::MixedSecondSub => "∂ξσ₂·∂ₓσ₋₂ₘ₋₁",
            Contribution::MixedFirst => "∂ξσ₁·∂ₓσ₋₂ₘ",
            Contribution::DoubleMixed => "∂ξ∂ξσ₂·∂ₓ∂ₓσ₋₂ₘ",
        }
    }

    fn from_orders(m: i32, j: i32, k: i32, r: i32) -> Option<Contribution> {
        let d = -2 * m - k;
        Some(match (j, d, r) {
            (0, 0, 0) => Contribution::Zeroth,
            (1, 1, 0) => Contribution::FirstSub,
            (2, 2, 0) => Contribution::SecondSubSub,
            (2, 1, 1) => Contribution::MixedSecondSub,
            (1, 0, 1) => Contribution::MixedFirst,
            (2, 0, 2) => Contribution::DoubleMixed,
            _ => return None,
        })
    }
}

fn check_dim(n: u32) -> Result<i32> {
    if n % 2 == 1 || !(4..=8).contains(&n) {
        return Err(ExprError::Precondition(format!("dimension {} outside the supported range 4, 6, 8", n)));
    }
    Ok(n as i32 / 2)
}

fn factor_symbol(f: Factor, n: u32) -> Result<GradedSymbol> {
    match f {
        Factor::Squared(k) => commutator_symbol(&dirac_squared_symbol(n), k, 2),
        Factor::Dirac(k) => Ok(clifford_differential(n, k)),
    }
}

fn product_symbol(fs: &[Factor], n: u32) -> Result<GradedSymbol> {
    let mut acc = GradedSymbol::identity(n);
    for &f in fs {
        acc = compose(&acc, &factor_symbol(f, n)?, 0)?;
    }
    Ok(acc)
}

/// Symbol of `AB` at general x. `AB` is a differential operator of order 2,
/// so orders below 0 are absent; this is checked rather than assumed.
pub fn product_ab_symbol(p: &PartSpec, n: u32) -> Result<GradedSymbol> {
    let a = product_symbol(&p.left, n)?;
    let b = product_symbol(&p.right, n)?;
    let ab = compose(&a, &b, 0)?;
    if !ab.is_differential() || ab.orders.keys().any(|&k| k < 0) || ab.top_order != 2 {
        return Err(ExprError::Precondition("σ(AB) is expected to be polynomial of order 2".into()));
    }
    Ok(ab)
}

fn density_of(e: &Expr) -> Result<Density> {
    Density::new(integrate_expr(&trace_expr(e)?)?)
}

fn x0(e: &Expr) -> Result<Expr> {
    at_origin(e, &RuleTable::default())
}

/// The six per-summand densities; their sum is [`residue_density`].
pub fn contribution_breakdown(p: &PartSpec, n: u32) -> Result<BTreeMap<Contribution, Density>> {
    let m = check_dim(n)?;
    let ab = product_ab_symbol(p, n)?;
    let dm = dirac_inverse_power_symbol(m, n)?;
    let pieces = composition_pieces_with(&ab, &dm, -2 * m, &x0)?;
    let mut grouped: BTreeMap<Contribution, Vec<Expr>> = Contribution::ALL.iter().map(|&c| (c, vec![])).collect();
    for pc in pieces {
        let c = Contribution::from_orders(m, pc.p_order, pc.q_order, pc.r).ok_or_else(|| {
            ExprError::Precondition(format!("unexpected composition summand ({}, {}, {})", pc.p_order, pc.q_order, pc.r))
        })?;
        grouped.get_mut(&c).unwrap().push(pc.expr);
    }
    grouped
        .into_par_iter()
        .map(|(c, es)| Ok((c, density_of(&Expr::sum(n, &es)?)?)))
        .collect()
}

/// Contribution (4) split by the summands of `σ_{-2m-1}(D^{-2m})`:
/// `gamma`, `sigma`, `metric` and `correction`.
pub fn mixed_subleading_split(p: &PartSpec, n: u32) -> Result<Vec<(&'static str, Density)>> {
    let m = check_dim(n)?;
    let ab = product_ab_symbol(p, n)?;
    let parts = inverse_power_subleading_parts(m, n);
    parts
        .into_par_iter()
        .map(|(label, e)| {
            let mut q = GradedSymbol::new(n, -2 * m - 1, Some(-2 * m - 2));
            q.insert(-2 * m - 1, e)?;
            let pieces = composition_pieces_with(&ab, &q, -2 * m, &x0)?;
            let es: Vec<Expr> = pieces.into_iter().filter(|pc| pc.r == 1 && pc.p_order == 2).map(|pc| pc.expr).collect();
            Ok((label, density_of(&Expr::sum(n, &es)?)?))
        })
        .collect()
}

/// The density of `∫ P ds^n` for one part, without the `a^0` factor.
pub fn residue_density(p: &PartSpec, n: u32) -> Result<Density> {
    let parts = contribution_breakdown(p, n)?;
    let mut acc = Density::zero(n);
    for d in parts.values() {
        acc = acc.add(d)?;
    }
    Ok(acc)
}

/// `i - ii + iii - iv`.
pub fn cocycle_density(n: u32) -> Result<Density> {
    check_dim(n)?;
    let ds: Vec<Density> = Part::ALL.par_iter().map(|&p| residue_density(&PartSpec::of(p), n)).collect::<Result<_>>()?;
    let mut acc = Density::zero(n);
    for (k, d) in ds.iter().enumerate() {
        acc = if k % 2 == 0 { acc.add(d)? } else { acc.sub(d)? };
    }
    Ok(acc)
}

/// A coefficient in front of a single-term jet pattern, read off a density.
pub fn coefficient_of(d: &Density, pattern: &Expr) -> Option<Coefficient> {
    if pattern.terms.len() != 1 {
        return None;
    }
    let t = &pattern.terms[0];
    let found = d.expr.terms.iter().find(|u| u.atoms == t.atoms && u.word == t.word)?;
    let r = found.coeff.rational / t.coeff.rational;
    Some(Coefficient::new(r, (4 + found.coeff.i_power - t.coeff.i_power) % 4))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ab_is_second_order_polynomial() {
        for part in Part::ALL {
            let ab = product_ab_symbol(&PartSpec::of(part), 4).unwrap();
            assert_eq!(ab.orders.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        }
    }

    #[test]
    fn odd_or_large_dimension_rejected() {
        assert!(residue_density(&PartSpec::of(Part::I), 5).is_err());
        assert!(residue_density(&PartSpec::of(Part::I), 10).is_err());
    }

    #[test]
    fn breakdown_sums_to_density() {
        let p = PartSpec::of(Part::I);
        let parts = contribution_breakdown(&p, 4).unwrap();
        assert_eq!(parts.len(), 6);
        assert!(parts[&Contribution::FirstSub].is_zero());
        assert!(parts[&Contribution::MixedFirst].is_zero());
    }

    #[test]
    fn prefactor_in_six_dimensions() {
        let d = Density::zero(6);
        assert_eq!(d.prefactor(), PiMultiple { rational: 8.into(), pi_power: 3 });
    }
}
