//! Graded symbols of pseudodifferential operators and the calculus rules:
//! composition, commutators with functions, and symbols of powers of the
//! Dirac operator.

use std::collections::{BTreeMap, BTreeSet};

use crate::clifford::Letter;
use crate::expr_core::{
    diff_many, diff_x, diff_xi, fresh_free, q, Atom, Coefficient, Expr, ExprError, FnId, Idx, Rational, Result,
    Term,
};
use crate::normal_coords::{at_origin, RuleTable};

/// Total symbol as a map from homogeneity order to expression.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedSymbol {
    pub dim: u32,
    pub top_order: i32,
    pub orders: BTreeMap<i32, Expr>,
    /// Orders at and above this value are exact. `None` marks a differential
    /// operator, whose symbol has no components below those stored.
    pub complete_to: Option<i32>,
    /// Orders whose entry is only valid at the base point.
    pub x0_only: BTreeSet<i32>,
}

impl GradedSymbol {
    pub fn new(dim: u32, top_order: i32, complete_to: Option<i32>) -> GradedSymbol {
        GradedSymbol { dim, top_order, orders: BTreeMap::new(), complete_to, x0_only: BTreeSet::new() }
    }

    /// Identity operator.
    pub fn identity(dim: u32) -> GradedSymbol {
        let mut s = GradedSymbol::new(dim, 0, None);
        s.insert(0, Expr::one(dim)).expect("homogeneous");
        s
    }

    /// Multiplication by a function `a^f`.
    pub fn function(dim: u32, f: FnId) -> GradedSymbol {
        let mut s = GradedSymbol::new(dim, 0, None);
        let e = Expr::from_term(dim, Term::scalar(Coefficient::one(), vec![Atom::fn_jet(f, &[])])).unwrap();
        s.insert(0, e).expect("homogeneous");
        s
    }

    /// Stores an order, checking ξ-homogeneity.
    pub fn insert(&mut self, order: i32, e: Expr) -> Result<()> {
        if order > self.top_order {
            return Err(ExprError::Degree(format!("order {} above top order {}", order, self.top_order)));
        }
        if let Some(d) = e.xi_degree() {
            if d != order {
                return Err(ExprError::Degree(format!("entry of ξ-degree {} stored at order {}", d, order)));
            }
        } else if !e.is_zero() {
            return Err(ExprError::Degree(format!("inhomogeneous entry at order {}", order)));
        }
        if e.is_zero() {
            self.orders.remove(&order);
        } else {
            self.orders.insert(order, e);
        }
        Ok(())
    }

    /// The entry of a given order; missing orders inside the exact range are zero.
    pub fn get(&self, order: i32) -> Result<Expr> {
        if order > self.top_order {
            return Ok(Expr::zero(self.dim));
        }
        if let Some(c) = self.complete_to {
            if order < c {
                return Err(ExprError::Precondition(format!("missing σ_{} (symbol known down to order {})", order, c)));
            }
        }
        Ok(self.orders.get(&order).cloned().unwrap_or_else(|| Expr::zero(self.dim)))
    }

    pub fn is_differential(&self) -> bool {
        self.complete_to.is_none()
    }

    /// Applies `f` to every stored order.
    pub fn map(&self, f: impl Fn(&Expr) -> Result<Expr>) -> Result<GradedSymbol> {
        let mut out = GradedSymbol { orders: BTreeMap::new(), ..self.clone() };
        for (&k, e) in &self.orders {
            out.insert(k, f(e)?)?;
        }
        Ok(out)
    }
}

/// `Σ_{j≥1} D_x^β f / β! ∂_ξ^β` applied to the orders of `s`: the commutator
/// `[S, a^f]` down to order `top - depth`, with `D_x = -i ∂_x`.
pub fn commutator_symbol(s: &GradedSymbol, f: FnId, depth: i32) -> Result<GradedSymbol> {
    if depth < 1 {
        return Err(ExprError::Precondition("commutator depth must be at least 1".into()));
    }
    let k = s.top_order;
    let lowest_needed = k - depth + 1;
    if let Some(c) = s.complete_to {
        if lowest_needed < c {
            return Err(ExprError::Precondition(format!("missing σ_{} of the operator", lowest_needed)));
        }
    }
    let differential = s.is_differential() && depth >= k;
    let mut out = GradedSymbol::new(s.dim, k - 1, if differential { None } else { Some(k - depth) });
    for j in 1..=depth {
        let mut acc = vec![];
        for r in 1..=j {
            let src = s.get(k - (j - r))?;
            if src.is_zero() {
                continue;
            }
            let names = fresh_free(&[&src], r as usize);
            let dxi = diff_many(&src, &names, diff_xi)?;
            if dxi.is_zero() {
                continue;
            }
            let derivs: Vec<Idx> = names.iter().map(|&x| Idx::Free(x)).collect();
            let fj = Expr::from_term(s.dim, Term::scalar(Coefficient::one(), vec![Atom::fn_jet(f, &derivs)]))?;
            let c = Coefficient::minus_i_pow(r as u32).scale(&Rational::new(1, factorial(r as i128)));
            acc.push(fj.mul(&dxi)?.scale(&c));
        }
        out.insert(k - j, Expr::sum(s.dim, &acc)?)?;
    }
    Ok(out)
}

fn factorial(k: i128) -> i128 {
    (1..=k).product()
}

/// One summand `(-i)^r/r! ∂_ξ^r σ_j(P) ∂_x^r σ_k(Q)` of a composition.
#[derive(Debug, Clone)]
pub struct CompositionPiece {
    pub p_order: i32,
    pub q_order: i32,
    pub r: i32,
    pub expr: Expr,
}

/// All composition summands landing on order `target`, with `post` applied
/// to each differentiated factor before multiplying.
pub fn composition_pieces_with(
    p: &GradedSymbol,
    qs: &GradedSymbol,
    target: i32,
    post: &dyn Fn(&Expr) -> Result<Expr>,
) -> Result<Vec<CompositionPiece>> {
    let mut out = vec![];
    let jmin = target - qs.top_order;
    let j_lo = if p.is_differential() { jmin.max(p.orders.keys().next().copied().unwrap_or(0)) } else { jmin };
    let mut fresh_pool: Vec<&Expr> = p.orders.values().collect();
    fresh_pool.extend(qs.orders.values());
    for j in (j_lo..=p.top_order).rev() {
        let pj = p.get(j)?;
        if pj.is_zero() {
            continue;
        }
        let rmax = j + qs.top_order - target;
        for r in 0..=rmax {
            // polynomial symbols vanish after more ξ-derivatives than their degree
            if p.is_differential() && r > j {
                break;
            }
            let k = target - j + r;
            let names = fresh_free(&fresh_pool, r as usize);
            let dxi = diff_many(&pj, &names, diff_xi)?;
            if dxi.is_zero() {
                continue;
            }
            let qk = qs.get(k)?;
            if qk.is_zero() {
                continue;
            }
            if r > 0 && qs.x0_only.contains(&k) {
                return Err(ExprError::UnsupportedJet(format!("x-derivative of σ_{}, which is only known at x0", k)));
            }
            let dp = post(&dxi)?;
            if dp.is_zero() {
                continue;
            }
            let dq = post(&diff_many(&qk, &names, diff_x)?)?;
            if dq.is_zero() {
                continue;
            }
            let c = Coefficient::minus_i_pow(r as u32).scale(&Rational::new(1, factorial(r as i128)));
            let e = dp.mul(&dq)?.scale(&c);
            out.push(CompositionPiece { p_order: j, q_order: k, r, expr: e });
        }
    }
    Ok(out)
}

pub fn composition_pieces(p: &GradedSymbol, qs: &GradedSymbol, target: i32) -> Result<Vec<CompositionPiece>> {
    composition_pieces_with(p, qs, target, &|e| Ok(e.clone()))
}

/// `σ(PQ)` for every order from the top down to `lowest_order`.
pub fn compose(p: &GradedSymbol, qs: &GradedSymbol, lowest_order: i32) -> Result<GradedSymbol> {
    compose_with(p, qs, lowest_order, &|e| Ok(e.clone()))
}

/// As [`compose`], post-processing every factor (e.g. evaluation at x0).
pub fn compose_with(
    p: &GradedSymbol,
    qs: &GradedSymbol,
    lowest_order: i32,
    post: &dyn Fn(&Expr) -> Result<Expr>,
) -> Result<GradedSymbol> {
    let top = p.top_order + qs.top_order;
    if lowest_order > top {
        return Err(ExprError::Precondition("lowest order above the top order of the product".into()));
    }
    let q_lowest_stored = qs.orders.keys().next().copied().unwrap_or(0);
    let differential = p.is_differential() && qs.is_differential() && lowest_order <= q_lowest_stored.min(0);
    let mut out = GradedSymbol::new(p.dim, top, if differential { None } else { Some(lowest_order) });
    for t in (lowest_order..=top).rev() {
        let pieces = composition_pieces_with(p, qs, t, post)?;
        let mut x0 = false;
        for pc in &pieces {
            if qs.x0_only.contains(&pc.q_order) || p.x0_only.contains(&pc.p_order) {
                x0 = true;
            }
        }
        let e = Expr::sum(p.dim, pieces.iter().map(|pc| &pc.expr))?;
        if x0 && !e.is_zero() {
            out.x0_only.insert(t);
        }
        out.insert(t, e)?;
    }
    Ok(out)
}

fn term(c: Coefficient, atoms: Vec<Atom>, word: Vec<Letter>) -> Term {
    Term::new(c, atoms, word)
}

/// Symbol of `D²`: orders 2, 1 and 0.
pub fn dirac_squared_symbol(dim: u32) -> GradedSymbol {
    use Idx::Dummy as D;
    let mut s = GradedSymbol::new(dim, 2, None);
    let o2 = Expr::from_term(dim, Term::scalar(Coefficient::one(), vec![Atom::NormSq(1)])).unwrap();
    // i (Γ^μ - 2σ^μ) ξ_μ
    let o1 = Expr::from_terms(
        dim,
        vec![
            Term::scalar(Coefficient::i(), vec![Atom::GammaContracted { upper: D(0), derivs: vec![] }, Atom::Xi(D(0))]),
            term(Coefficient::new(q(-2, 1), 1), vec![Atom::Xi(D(0))], vec![Letter::sigma(D(0), false)]),
        ],
    )
    .unwrap();
    // -g^{μν}(∂_μσ_ν + σ_μσ_ν - Γ^α_{μν}σ_α) + s/4
    let o0 = Expr::from_terms(
        dim,
        vec![
            term(
                Coefficient::int(-1),
                vec![Atom::metric(D(0), D(1))],
                vec![Letter::Sigma { index: D(1), lowered: true, derivs: vec![D(0)] }],
            ),
            term(
                Coefficient::int(-1),
                vec![Atom::metric(D(0), D(1))],
                vec![Letter::sigma(D(0), true), Letter::sigma(D(1), true)],
            ),
            term(
                Coefficient::one(),
                vec![Atom::metric(D(0), D(1)), Atom::Christoffel { upper: D(2), lower: [D(0), D(1)], derivs: vec![] }],
                vec![Letter::sigma(D(2), true)],
            ),
            Term::scalar(Coefficient::real(q(1, 4)), vec![Atom::ScalarCurv]),
        ],
    )
    .unwrap();
    s.insert(2, o2).unwrap();
    s.insert(1, o1).unwrap();
    s.insert(0, o0).unwrap();
    s
}

/// Symbol of `[D, a^f] = c(da^f) = Σ_μ e_μ(a^f) c(e_μ)`.
pub fn clifford_differential(dim: u32, f: FnId) -> GradedSymbol {
    let mut s = GradedSymbol::new(dim, 0, None);
    let e = Expr::from_term(
        dim,
        term(
            Coefficient::one(),
            vec![Atom::FrameJet { f, frame: Idx::Dummy(0), derivs: vec![] }],
            vec![Letter::Gen(Idx::Dummy(0))],
        ),
    )
    .unwrap();
    s.insert(0, e).unwrap();
    s
}

/// The summands of `σ_{-2m-1}(D^{-2m})`, labeled by origin.
pub fn inverse_power_subleading_parts(m: i32, dim: u32) -> Vec<(&'static str, Expr)> {
    use Idx::Dummy as D;
    let mi = m as i128;
    // m |ξ|^{-(2m-2)} (-i|ξ|^{-4} ξ_k Γ^k)
    let gamma = Expr::from_term(
        dim,
        Term::scalar(
            Coefficient::new(q(-mi, 1), 1),
            vec![Atom::NormSq(-m - 1), Atom::Xi(D(0)), Atom::GammaContracted { upper: D(0), derivs: vec![] }],
        ),
    )
    .unwrap();
    // m |ξ|^{-(2m-2)} (2i|ξ|^{-4} ξ_k σ^k)
    let sigma = Expr::from_term(
        dim,
        term(Coefficient::new(q(2 * mi, 1), 1), vec![Atom::NormSq(-m - 1), Atom::Xi(D(0))], vec![Letter::sigma(D(0), false)]),
    )
    .unwrap();
    let dg = |c: Coefficient| {
        Expr::from_term(
            dim,
            Term::scalar(
                c,
                vec![
                    Atom::NormSq(-m - 2),
                    Atom::metric(D(0), D(1)),
                    Atom::Xi(D(1)),
                    Atom::Xi(D(2)),
                    Atom::Xi(D(3)),
                    Atom::MetricInv { upper: [D(2), D(3)], derivs: vec![D(0)] },
                ],
            ),
        )
        .unwrap()
    };
    // m |ξ|^{-(2m-2)} (-2i|ξ|^{-6} ξ^j ξ_α ξ_β ∂_j g^{αβ})
    let metric = dg(Coefficient::new(q(-2 * mi, 1), 1));
    // 2i Σ_{k=0}^{m-2} (k+1-m) |ξ|^{-2m-4} ξ^μ ξ_α ξ_β ∂_μ g^{αβ}
    let sum: i128 = (0..=mi - 2).map(|k| k + 1 - mi).sum();
    let correction = dg(Coefficient::new(q(2 * sum, 1), 1));
    vec![("gamma", gamma), ("sigma", sigma), ("metric", metric), ("correction", correction)]
}

/// Orders `-2m`, `-2m-1`, `-2m-2` of the symbol of `D^{-2m}`; the last one
/// holds at the base point only.
pub fn dirac_inverse_power_symbol(m: i32, dim: u32) -> Result<GradedSymbol> {
    use Idx::Dummy as D;
    if m < 1 {
        return Err(ExprError::Precondition("m must be positive".into()));
    }
    let mut s = GradedSymbol::new(dim, -2 * m, Some(-2 * m - 2));
    s.insert(-2 * m, Expr::from_term(dim, Term::scalar(Coefficient::one(), vec![Atom::NormSq(-m)]))?)?;
    let parts = inverse_power_subleading_parts(m, dim);
    s.insert(-2 * m - 1, Expr::sum(dim, parts.iter().map(|(_, e)| e))?)?;
    let mi = m as i128;
    let low = Expr::from_terms(
        dim,
        vec![
            Term::scalar(Coefficient::real(q(-mi, 4)), vec![Atom::NormSq(-m - 1), Atom::ScalarCurv]),
            Term::scalar(
                Coefficient::real(q(mi * (mi + 1), 3)),
                vec![Atom::NormSq(-m - 2), Atom::Xi(D(0)), Atom::Xi(D(1)), Atom::Riemann([D(0), D(2), D(1), D(2)])],
            ),
        ],
    )?;
    s.insert(-2 * m - 2, low)?;
    s.x0_only.insert(-2 * m - 2);
    Ok(s)
}

/// Symbols `b_{-2}, b_{-3}, b_{-4}` of the parametrix of `D²`, at general x.
pub fn parametrix_of_dirac_squared(dim: u32) -> Result<GradedSymbol> {
    let d2 = dirac_squared_symbol(dim);
    let inv = Expr::from_term(dim, Term::scalar(Coefficient::one(), vec![Atom::NormSq(-1)]))?;
    let mut b = GradedSymbol::new(dim, -2, Some(-2));
    b.insert(-2, inv.clone())?;
    for k in 1..=2 {
        // provisional zero at the new order, then solve σ_2 b_{-2-k} = -(rest)
        b.complete_to = Some(-2 - k);
        let pieces = composition_pieces(&d2, &b, -k)?;
        let rest = Expr::sum(dim, pieces.iter().map(|p| &p.expr))?;
        let bk = inv.mul(&rest)?.neg();
        b.insert(-2 - k, bk)?;
    }
    Ok(b)
}

/// Symbol of `D^{-2m}` at the base point obtained by composing the parametrix
/// of `D²` with itself `m` times.
pub fn parametrix_cross_check(m: i32, dim: u32) -> Result<GradedSymbol> {
    let rules = RuleTable::default();
    let post = |e: &Expr| at_origin(e, &rules);
    let b = parametrix_of_dirac_squared(dim)?;
    let mut p = b.map(|e| post(e))?;
    for k in 2..=m {
        p = compose_with(&p, &b, -2 * k - 2, &post)?;
    }
    p.x0_only.clear();
    Ok(p)
}

/// `σ_{-2m-2}(D^{-2m})(x0)` from the closed iteration formula in terms of
/// `b_{-4}` and `σ_0(D²)`, with `n = 2m + 2`.
pub fn inverse_power_closed_form(m: i32, dim: u32) -> Result<Expr> {
    let rules = RuleTable::default();
    let b = parametrix_of_dirac_squared(dim)?;
    let b4 = at_origin(&b.get(-4)?, &rules)?;
    let s0 = at_origin(&dirac_squared_symbol(dim).get(0)?, &rules)?;
    let n = 2 * m + 2;
    let ni = n as i128;
    let pow = |k: i32| Expr::from_term(dim, Term::scalar(Coefficient::one(), vec![Atom::NormSq(k)]));
    // ((n-2)/8) [ n σ_2^{-n/2+2} b_{-4} + (n-4) σ_2^{-n/2} σ_0 ]
    let a = pow(-n / 2 + 2)?.mul(&b4)?.scale(&Coefficient::int(ni));
    let c = pow(-n / 2)?.mul(&s0)?.scale(&Coefficient::int(ni - 4));
    Ok(a.add(&c)?.scale(&Coefficient::real(q(ni - 2, 8))))
}
