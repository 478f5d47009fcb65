//! Named geometric invariants of four functions, their jet expansions at x0,
//! the inverse decomposition of a jet density, and text rendering.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::clifford::{trace_expr, Letter};
use crate::expr_core::{q, Atom, Coefficient, Expr, ExprError, FnId, Idx, Rational, Result, Term};
use crate::normal_coords::{at_origin, RuleTable};
use crate::residue_engine::{Density, Part, PREFACTOR_LABEL};
use crate::sphere_integrals::integrate_expr;

/// The closed vocabulary. Slot meanings with slots `[p, q, r, t]`:
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Form {
    /// `R(∇a^p, ∇a^q, ∇a^r, ∇a^t)`
    Riemann,
    /// `Σ_α R(∇a^p, e_α, ∇a^q, e_α) g(da^r, da^t)`
    RicciMetric,
    /// `g(∇a^p, ∇a^q) g(da^r, da^t) s`
    ScalarMetric,
    /// `g(∇a^p, ∇_{∇a^q}∇_{∇a^r}∇a^t)`
    NestedCov,
    /// `∇a^p[Δa^q] g(da^r, da^t)`
    GradLap,
    /// `∇a^p∇a^q[g(da^r, da^t)]`
    GradGradMetric,
    /// `Δa^p Δa^q g(da^r, da^t)`
    LapLapMetric,
    /// `Δa^p g(∇a^q, ∇g(da^r, da^t))`
    LapGradMetric,
    /// `Δa^p g(∇a^q, ∇_{∇a^r}∇a^t)`
    LapHess,
    /// `g(∇_{∇a^p}∇a^q, ∇_{∇a^r}∇a^t)`
    HessPair,
    /// `g(∇a^p, ∇_{∇_{∇a^q}∇a^r}∇a^t)`
    CovOfCov,
}

impl Form {
    /// Matching priority: curvature-bearing forms first.
    pub const ALL: [Form; 11] = [
        Form::Riemann,
        Form::RicciMetric,
        Form::ScalarMetric,
        Form::NestedCov,
        Form::GradLap,
        Form::GradGradMetric,
        Form::LapLapMetric,
        Form::LapGradMetric,
        Form::LapHess,
        Form::HessPair,
        Form::CovOfCov,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Invariant {
    pub form: Form,
    pub slots: [FnId; 4],
}

impl Invariant {
    pub fn new(form: Form, slots: [FnId; 4]) -> Invariant {
        Invariant { form, slots }
    }

    /// Plain UTF-8 notation.
    pub fn plain(&self) -> String {
        let [p, q, r, t] = self.slots;
        match self.form {
            Form::Riemann => format!("R(∇a{},∇a{},∇a{},∇a{})", p, q, r, t),
            Form::RicciMetric => format!("Σ_α R(∇a{},e_α,∇a{},e_α)g(da{},da{})", p, q, r, t),
            Form::ScalarMetric => format!("g(∇a{},∇a{})g(da{},da{})s", p, q, r, t),
            Form::NestedCov => format!("g(∇a{},∇_{{∇a{}}}∇_{{∇a{}}}∇a{})", p, q, r, t),
            Form::GradLap => format!("∇a{}[Δa{}]g(da{},da{})", p, q, r, t),
            Form::GradGradMetric => format!("∇a{}∇a{}[g(da{},da{})]", p, q, r, t),
            Form::LapLapMetric => format!("Δ(a{})Δ(a{})g(da{},da{})", p, q, r, t),
            Form::LapGradMetric => format!("Δ(a{})g(∇a{},∇g(da{},da{}))", p, q, r, t),
            Form::LapHess => format!("Δ(a{})g(∇a{},∇_{{∇a{}}}∇a{})", p, q, r, t),
            Form::HessPair => format!("g(∇_{{∇a{}}}∇a{},∇_{{∇a{}}}∇a{})", p, q, r, t),
            Form::CovOfCov => format!("g(∇a{},∇_{{∇_{{∇a{}}}∇a{}}}∇a{})", p, q, r, t),
        }
    }

    pub fn latex(&self) -> String {
        let [p, q, r, t] = self.slots;
        let na = |k: FnId| format!("\\nabla(a^{})", k);
        let cov = |x: String, y: String| format!("\\nabla_{{{}}}{}", x, y);
        let g = |x: String, y: String| format!("g({}, {})", x, y);
        let dm = |x: FnId, y: FnId| format!("g(da^{}, da^{})", x, y);
        let lap = |k: FnId| format!("\\Delta(a^{})", k);
        match self.form {
            Form::Riemann => format!("R({}, {}, {}, {})", na(p), na(q), na(r), na(t)),
            Form::RicciMetric => {
                format!("\\sum_{{\\alpha}} R({}, e_\\alpha, {}, e_\\alpha){}", na(p), na(q), dm(r, t))
            }
            Form::ScalarMetric => format!("{}{}s", g(na(p), na(q)), dm(r, t)),
            Form::NestedCov => g(na(p), cov(na(q), cov(na(r), na(t)))),
            Form::GradLap => format!("{}[{}]{}", na(p), lap(q), dm(r, t)),
            Form::GradGradMetric => format!("{}{}[{}]", na(p), na(q), dm(r, t)),
            Form::LapLapMetric => format!("{}{}{}", lap(p), lap(q), dm(r, t)),
            Form::LapGradMetric => format!("{}{}", lap(p), g(na(q), format!("\\nabla {}", dm(r, t)))),
            Form::LapHess => format!("{}{}", lap(p), g(na(q), cov(na(r), na(t)))),
            Form::HessPair => g(cov(na(p), na(q)), cov(na(r), na(t))),
            Form::CovOfCov => g(na(p), cov(cov(na(q), na(r)), na(t))),
        }
    }

    /// Canonical jets at x0 with the default rule table.
    pub fn to_jets(&self, n: u32) -> Result<Expr> {
        self.to_jets_with(n, &RuleTable::default())
    }

    /// Expansion from the covariant definition: metric and Christoffel
    /// jets are written symbolically and evaluated at x0 by `rules`.
    pub fn to_jets_with(&self, n: u32, rules: &RuleTable) -> Result<Expr> {
        let raw = Expr::from_terms(n, raw_terms(self))?;
        at_origin(&raw, rules)
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.plain())
    }
}

// ---------------------------------------------------------------- expansion

/// Allocates free index names local to one expansion.
struct Names(u32);

impl Names {
    fn next(&mut self) -> Idx {
        self.0 += 1;
        Idx::Free(10_000 + self.0)
    }
}

fn jet(f: FnId, d: &[Idx]) -> Atom {
    Atom::FnJet { f, derivs: d.to_vec() }
}

fn term(c: Rational, atoms: Vec<Atom>) -> Term {
    Term::scalar(Coefficient::real(c), atoms)
}

fn with(mut base: Vec<Atom>, extra: &[Atom]) -> Vec<Atom> {
    base.extend(extra.iter().cloned());
    base
}

/// `∂_i ∂_k g(da^r, da^t)` at x0 with the metric jet kept symbolic.
fn metric_second(r: FnId, t: FnId, i: Idx, k: Idx, x: &mut Names) -> Vec<Term> {
    let (l, m) = (x.next(), x.next());
    vec![
        term(q(1, 1), vec![jet(r, &[i, k, l]), jet(t, &[l])]),
        term(q(1, 1), vec![jet(r, &[k, l]), jet(t, &[i, l])]),
        term(q(1, 1), vec![jet(r, &[i, l]), jet(t, &[k, l])]),
        term(q(1, 1), vec![jet(r, &[l]), jet(t, &[i, k, l])]),
        term(q(1, 1), vec![Atom::MetricInv { upper: [l, m], derivs: vec![i, k] }, jet(r, &[l]), jet(t, &[m])]),
    ]
}

fn raw_terms(inv: &Invariant) -> Vec<Term> {
    let [p, qq, r, t] = inv.slots;
    let mut x = Names(0);
    let one = q(1, 1);
    let metric = |x: &mut Names| {
        let k = x.next();
        vec![jet(r, &[k]), jet(t, &[k])]
    };
    match inv.form {
        Form::Riemann => {
            let (i, j, k, l) = (x.next(), x.next(), x.next(), x.next());
            vec![term(one, vec![Atom::Riemann([i, j, k, l]), jet(p, &[i]), jet(qq, &[j]), jet(r, &[k]), jet(t, &[l])])]
        }
        Form::RicciMetric => {
            let (i, a, j) = (x.next(), x.next(), x.next());
            let g = metric(&mut x);
            vec![term(one, with(vec![Atom::Riemann([i, a, j, a]), jet(p, &[i]), jet(qq, &[j])], &g))]
        }
        Form::ScalarMetric => {
            let i = x.next();
            let g = metric(&mut x);
            vec![term(one, with(vec![Atom::ScalarCurv, jet(p, &[i]), jet(qq, &[i])], &g))]
        }
        Form::GradLap => {
            // ∂_j(-g^{ab}∂_a∂_b a^q + Γ^k ∂_k a^q) at x0
            let (j, i, k) = (x.next(), x.next(), x.next());
            let g = metric(&mut x);
            vec![
                term(-one, with(vec![jet(p, &[j]), jet(qq, &[j, i, i])], &g)),
                term(
                    one,
                    with(vec![jet(p, &[j]), Atom::GammaContracted { upper: k, derivs: vec![j] }, jet(qq, &[k])], &g),
                ),
            ]
        }
        Form::GradGradMetric => {
            // ∇a^p[∇a^q[F]] = ∂_i a^p (∂_i∂_k a^q ∂_k F + ∂_k a^q ∂_i∂_k F) at x0
            let (i, k, l) = (x.next(), x.next(), x.next());
            let mut out = vec![
                term(one, vec![jet(p, &[i]), jet(qq, &[i, k]), jet(r, &[k, l]), jet(t, &[l])]),
                term(one, vec![jet(p, &[i]), jet(qq, &[i, k]), jet(r, &[l]), jet(t, &[k, l])]),
            ];
            for u in metric_second(r, t, i, k, &mut x) {
                out.push(Term::scalar(u.coeff, with(vec![jet(p, &[i]), jet(qq, &[k])], &u.atoms)));
            }
            out
        }
        Form::LapLapMetric => {
            let (i, j) = (x.next(), x.next());
            let g = metric(&mut x);
            vec![term(one, with(vec![jet(p, &[i, i]), jet(qq, &[j, j])], &g))]
        }
        Form::LapGradMetric => {
            let (i, j, k) = (x.next(), x.next(), x.next());
            vec![
                term(-one, vec![jet(p, &[i, i]), jet(qq, &[j]), jet(r, &[j, k]), jet(t, &[k])]),
                term(-one, vec![jet(p, &[i, i]), jet(qq, &[j]), jet(r, &[k]), jet(t, &[j, k])]),
            ]
        }
        Form::LapHess => {
            let (i, mu, j) = (x.next(), x.next(), x.next());
            vec![term(-one, vec![jet(p, &[i, i]), jet(qq, &[mu]), jet(r, &[j]), jet(t, &[j, mu])])]
        }
        Form::HessPair => {
            let (i, mu, j) = (x.next(), x.next(), x.next());
            vec![term(one, vec![jet(p, &[i]), jet(qq, &[i, mu]), jet(r, &[j]), jet(t, &[j, mu])])]
        }
        Form::CovOfCov => {
            let (mu, i, j) = (x.next(), x.next(), x.next());
            vec![term(one, vec![jet(p, &[mu]), jet(qq, &[i]), jet(r, &[i, j]), jet(t, &[j, mu])])]
        }
        Form::NestedCov => {
            // Y = ∇_{∇a^r}∇a^t, Z = ∇_{∇a^q} Y, value ∂_μ a^p Z^μ at x0
            let (mu, j, k, nu) = (x.next(), x.next(), x.next(), x.next());
            let head = vec![jet(p, &[mu]), jet(qq, &[j])];
            vec![
                term(one, with(head.clone(), &[jet(r, &[j, k]), jet(t, &[k, mu])])),
                term(one, with(head.clone(), &[jet(r, &[k]), jet(t, &[j, k, mu])])),
                term(
                    one,
                    with(
                        head.clone(),
                        &[jet(r, &[k]), jet(t, &[nu]), Atom::MetricInv { upper: [mu, nu], derivs: vec![j, k] }],
                    ),
                ),
                term(
                    one,
                    with(
                        head,
                        &[jet(r, &[k]), jet(t, &[nu]), Atom::Christoffel { upper: mu, lower: [k, nu], derivs: vec![j] }],
                    ),
                ),
            ]
        }
    }
}

// ---------------------------------------------------------------- terms

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantTerm {
    pub coeff: Coefficient,
    pub inv: Invariant,
}

impl InvariantTerm {
    pub fn new(c: Rational, form: Form, slots: [FnId; 4]) -> InvariantTerm {
        InvariantTerm { coeff: Coefficient::real(c), inv: Invariant::new(form, slots) }
    }
}

/// Sum of the jet expansions of a term list.
pub fn invariants_to_jets(terms: &[InvariantTerm], n: u32) -> Result<Expr> {
    let mut acc = Expr::zero(n);
    for t in terms {
        acc = acc.add(&t.inv.to_jets(n)?.scale(&t.coeff))?;
    }
    Ok(acc)
}

/// Every vocabulary element with slots a permutation of `1..=4`, in
/// matching priority.
pub fn vocabulary() -> Vec<Invariant> {
    let mut perms = vec![];
    for a in 1..=4u8 {
        for b in 1..=4u8 {
            for c in 1..=4u8 {
                for d in 1..=4u8 {
                    let s = [a, b, c, d];
                    if (1..=4u8).all(|k| s.contains(&k)) {
                        perms.push(s);
                    }
                }
            }
        }
    }
    Form::ALL.iter().flat_map(|&f| perms.iter().map(move |&s| Invariant::new(f, s))).collect()
}

// ---------------------------------------------------------------- decomposition

type Key = Vec<Atom>;
type Vector = BTreeMap<Key, Rational>;

fn to_vector(e: &Expr) -> Result<Vector> {
    let mut v = Vector::new();
    for t in &e.terms {
        if t.coeff.i_power != 0 || !t.word.is_empty() {
            return Err(ExprError::Precondition("decomposition needs real scalar jet terms".into()));
        }
        *v.entry(t.atoms.clone()).or_insert_with(Rational::zero) += t.coeff.rational;
    }
    v.retain(|_, c| !c.is_zero());
    Ok(v)
}

fn from_vector(n: u32, v: &Vector) -> Result<Expr> {
    Expr::from_terms(n, v.iter().map(|(k, c)| term(*c, k.clone())).collect())
}

/// Cyclic first-Bianchi sums over each Riemann atom of each term; all vanish.
fn bianchi_relations(e: &Expr) -> Result<Vec<Expr>> {
    let mut out = vec![];
    for t in &e.terms {
        for (pos, a) in t.atoms.iter().enumerate() {
            if let Atom::Riemann([i, j, k, l]) = a {
                let mut terms = vec![];
                for r in [[*i, *j, *k, *l], [*i, *k, *l, *j], [*i, *l, *j, *k]] {
                    let mut atoms = t.atoms.clone();
                    atoms[pos] = Atom::Riemann(r);
                    terms.push(Term::new(Coefficient::one(), atoms, vec![]));
                }
                let z = Expr::from_terms(e.dim, terms)?;
                if !z.is_zero() {
                    out.push(z);
                }
            }
        }
    }
    Ok(out)
}

struct Row {
    pivot: Key,
    v: Vector,
    combo: BTreeMap<usize, Rational>,
}

fn reduce(rows: &[Row], v: &mut Vector, combo: &mut BTreeMap<usize, Rational>) {
    for r in rows {
        let Some(f) = v.get(&r.pivot).copied() else { continue };
        for (k, c) in &r.v {
            let e = v.entry(k.clone()).or_insert_with(Rational::zero);
            *e -= f * c;
            if e.is_zero() {
                v.remove(k);
            }
        }
        for (k, c) in &r.combo {
            let e = combo.entry(*k).or_insert_with(Rational::zero);
            *e -= f * c;
            if e.is_zero() {
                combo.remove(k);
            }
        }
    }
}

/// Result of [`jets_to_invariants`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub terms: Vec<InvariantTerm>,
    /// Jet terms outside the span of the vocabulary, if any.
    pub residual: Option<Expr>,
}

/// Exact linear decomposition of a density over the vocabulary, modulo the
/// first Bianchi identity. `preferred` invariants are tried before the
/// generic vocabulary; later candidates dependent on earlier ones are
/// skipped, so the result is deterministic.
pub fn jets_to_invariants(d: &Density, preferred: &[Invariant]) -> Result<Decomposition> {
    let n = d.dim;
    if d.is_zero() {
        return Ok(Decomposition { terms: vec![], residual: None });
    }
    let mut cands: Vec<Invariant> = preferred.to_vec();
    for v in vocabulary() {
        if !cands.contains(&v) {
            cands.push(v);
        }
    }
    let expansions: Vec<Expr> = cands.iter().map(|c| c.to_jets(n)).collect::<Result<_>>()?;
    // vanishing relations come first so that Bianchi-equivalent candidates
    // are recognized as dependent
    let mut nulls = vec![];
    let mut seen = std::collections::BTreeSet::new();
    let mut frontier: Vec<Expr> = expansions.iter().cloned().chain(std::iter::once(d.expr.clone())).collect();
    for _ in 0..3 {
        let mut next = vec![];
        for e in &frontier {
            for z in bianchi_relations(e)? {
                let key = format!("{:?}", z.terms);
                if seen.insert(key) {
                    next.push(z.clone());
                    nulls.push(z);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let null_base = cands.len();
    let mut rows: Vec<Row> = vec![];
    let insert = |id: usize, e: &Expr, rows: &mut Vec<Row>| -> Result<()> {
        let mut v = to_vector(e)?;
        let mut combo: BTreeMap<usize, Rational> = [(id, Rational::one())].into();
        reduce(rows, &mut v, &mut combo);
        if let Some((k, c)) = v.iter().next().map(|(k, c)| (k.clone(), *c)) {
            for x in v.values_mut() {
                *x /= c;
            }
            for x in combo.values_mut() {
                *x /= c;
            }
            rows.push(Row { pivot: k, v, combo });
        }
        Ok(())
    };
    for (k, z) in nulls.iter().enumerate() {
        insert(null_base + k, z, &mut rows)?;
    }
    for (k, e) in expansions.iter().enumerate() {
        insert(k, e, &mut rows)?;
    }
    let mut v = to_vector(&d.expr)?;
    let mut combo = BTreeMap::new();
    reduce(&rows, &mut v, &mut combo);
    // d = -combo + leftover
    let terms = combo
        .iter()
        .filter(|(k, _)| **k < null_base)
        .map(|(k, c)| InvariantTerm { coeff: Coefficient::real(-*c), inv: cands[*k] })
        .collect();
    let residual = if v.is_empty() { None } else { Some(from_vector(n, &v)?) };
    Ok(Decomposition { terms, residual })
}

/// Whether two jet expressions agree modulo the first Bianchi identity.
pub fn equal_modulo_bianchi(a: &Expr, b: &Expr) -> Result<bool> {
    let diff = a.sub(b)?;
    if diff.is_zero() {
        return Ok(true);
    }
    let d = Density { dim: diff.dim, expr: diff };
    let dec = jets_to_invariants(&d, &[])?;
    // a difference in the span must still vanish once re-expanded
    if dec.residual.is_some() {
        return Ok(false);
    }
    Ok(dec.terms.is_empty())
}

// ---------------------------------------------------------------- reference

/// A computation target: one part or the alternating sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Part(Part),
    Cocycle,
}

impl Target {
    pub fn parse(s: &str) -> Option<Target> {
        if s == "cocycle" {
            Some(Target::Cocycle)
        } else {
            Part::parse(s).map(Target::Part)
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Part(p) => p.name(),
            Target::Cocycle => "cocycle",
        }
    }
}

/// The Ricci coefficient `2m/(3(m+1))` of the reference formulas.
pub fn reference_ricci_coefficient(n: u32) -> Rational {
    let m = n as i128 / 2;
    q(2 * m, 3 * (m + 1))
}

fn part_reference(p: Part, n: u32) -> Vec<InvariantTerm> {
    use Form::*;
    let c = reference_ricci_coefficient(n);
    let t = InvariantTerm::new;
    match p {
        Part::I => vec![
            t(q(-1, 1), LapLapMetric, [1, 2, 3, 4]),
            t(q(-2, 1), LapGradMetric, [1, 2, 3, 4]),
            t(q(-1, 1), Riemann, [1, 2, 4, 3]),
            t(q(2, 1), GradLap, [1, 2, 3, 4]),
            t(q(-4, 1), GradGradMetric, [1, 2, 3, 4]),
            t(q(-1, 6), ScalarMetric, [1, 2, 3, 4]),
            t(c, RicciMetric, [1, 2, 3, 4]),
        ],
        Part::II => vec![
            t(q(-1, 1), LapLapMetric, [2, 3, 1, 4]),
            t(q(2, 1), LapHess, [2, 1, 3, 4]),
            t(q(-1, 1), Riemann, [2, 3, 4, 1]),
            t(q(2, 1), GradLap, [2, 3, 1, 4]),
            t(q(2, 1), LapHess, [3, 1, 2, 4]),
            t(q(-4, 1), NestedCov, [1, 2, 3, 4]),
            t(q(4, 1), HessPair, [1, 4, 2, 3]),
            t(q(2, 1), Riemann, [1, 3, 2, 4]),
            t(q(4, 1), CovOfCov, [1, 2, 3, 4]),
            t(q(-1, 6), ScalarMetric, [2, 3, 1, 4]),
            t(c, RicciMetric, [2, 3, 1, 4]),
        ],
        Part::III => vec![
            t(q(-1, 1), LapLapMetric, [3, 4, 1, 2]),
            t(q(2, 1), GradLap, [3, 4, 1, 2]),
            t(q(-1, 1), Riemann, [3, 4, 2, 1]),
            t(q(-1, 6), ScalarMetric, [3, 4, 1, 2]),
            t(c, RicciMetric, [3, 4, 1, 2]),
        ],
        Part::IV => vec![
            t(q(-1, 1), LapLapMetric, [1, 4, 2, 3]),
            t(q(-2, 1), LapGradMetric, [1, 4, 2, 3]),
            t(q(-1, 1), Riemann, [1, 4, 3, 2]),
            t(q(2, 1), GradLap, [1, 4, 2, 3]),
            t(c, RicciMetric, [1, 4, 2, 3]),
            t(q(-1, 6), ScalarMetric, [1, 4, 2, 3]),
        ],
    }
}

/// The reference cocycle formula transcribed term by term (with the
/// readings in [`reading_notes`] applied).
fn cocycle_reference(n: u32) -> Vec<InvariantTerm> {
    use Form::*;
    let c = reference_ricci_coefficient(n);
    let t = InvariantTerm::new;
    vec![
        t(q(-2, 1), LapGradMetric, [1, 2, 3, 4]),
        t(q(-4, 1), GradGradMetric, [1, 2, 3, 4]),
        t(q(-2, 1), Riemann, [1, 2, 4, 3]),
        t(q(2, 1), GradLap, [1, 2, 3, 4]),
        t(q(-1, 1), LapLapMetric, [1, 2, 3, 4]),
        t(q(-1, 6), ScalarMetric, [1, 2, 3, 4]),
        t(c, RicciMetric, [1, 2, 3, 4]),
        t(q(1, 1), LapLapMetric, [2, 3, 1, 4]),
        t(q(-2, 1), LapHess, [2, 1, 3, 4]),
        t(q(2, 1), Riemann, [2, 3, 4, 1]),
        t(q(-2, 1), GradLap, [2, 3, 1, 4]),
        t(q(-2, 1), LapHess, [3, 1, 2, 4]),
        t(q(4, 1), NestedCov, [1, 2, 3, 4]),
        t(q(-4, 1), HessPair, [1, 4, 2, 3]),
        t(q(-2, 1), Riemann, [1, 3, 2, 4]),
        t(q(-4, 1), CovOfCov, [1, 2, 3, 4]),
        t(q(1, 6), ScalarMetric, [2, 3, 1, 4]),
        t(-c, RicciMetric, [2, 3, 1, 4]),
        t(q(2, 1), GradLap, [3, 4, 1, 2]),
        t(q(-1, 1), LapLapMetric, [3, 4, 1, 2]),
        t(q(-1, 6), ScalarMetric, [3, 4, 1, 2]),
        t(c, RicciMetric, [3, 4, 1, 2]),
        t(q(1, 1), LapLapMetric, [1, 4, 2, 3]),
        t(q(2, 1), LapGradMetric, [1, 4, 2, 3]),
        t(q(-2, 1), GradLap, [1, 4, 2, 3]),
        t(-c, RicciMetric, [1, 4, 2, 3]),
        t(q(1, 6), ScalarMetric, [1, 4, 2, 3]),
    ]
}

/// Reference formula in invariant form for dimension `n`.
pub fn reference_terms(target: Target, n: u32) -> Vec<InvariantTerm> {
    match target {
        Target::Part(p) => part_reference(p, n),
        Target::Cocycle => cocycle_reference(n),
    }
}

const HESS_NOTE: &str =
    "g(∇_{∇a1}∇a4,∇_{∇a2}∇a3) and g(∇a1,∇_{∇_{∇a2}∇a3}∇a4) are the same invariant and are merged";
const NESTED_NOTE: &str = "nested covariant identity: jets confirm the correction -½R(∇a2,∇a3,∇a1,∇a4); \
     the variant R(∇a1,∇a3,∇a2,∇a4) does not hold";

/// How notational slips in the reference formulas are read.
pub fn reading_notes(target: Target) -> Vec<&'static str> {
    let mut v = vec!["str[id] in intermediate traces read as tr[id]"];
    match target {
        Target::Part(Part::II) => {
            v.push("g(∇a1,∇_{∇a2}∇a3)∇a4 read as g(∇a1,∇_{∇_{∇a2}∇a3}∇a4)");
            v.push(HESS_NOTE);
            v.push(NESTED_NOTE);
        }
        Target::Part(Part::III) => {
            v.push("R(∇a3,∇a4,∇a2,∇a1) read as a standalone term, not multiplied by g(da1,da2)");
        }
        Target::Cocycle => {
            v.push("g(∇a2,∇g(a3,a4)) read as g(∇a2,∇g(da3,da4))");
            v.push("leading -2R(∇a2,∇a3,∇a4,∇a1) read as -2R(∇a1,∇a2,∇a4,∇a3); as printed it cancels +2R(∇a2,∇a3,∇a4,∇a1)");
            v.push("-4g(∇a1,∇_{∇a2}∇a3)∇a4 read as -4g(∇a1,∇_{∇_{∇a2}∇a3}∇a4)");
            v.push("misplaced closing brace before Δ(a1)Δ(a4)g(da2,da3) ignored");
            v.push(HESS_NOTE);
            v.push(NESTED_NOTE);
        }
        _ => {}
    }
    v
}

// ---------------------------------------------------------------- comparison

/// Coefficient-wise comparison of a computed density with the reference
/// formula. Both sides are decomposed with the same candidate order, so
/// jet-identical invariants are merged the same way on each side.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// `(invariant, reference, computed)` for every coefficient that differs.
    pub mismatches: Vec<(Invariant, Rational, Rational)>,
    pub residual: Option<Expr>,
}

impl Comparison {
    pub fn agrees(&self) -> bool {
        self.mismatches.is_empty() && self.residual.is_none()
    }

    pub fn discrepancy_lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .mismatches
            .iter()
            .map(|(inv, r, c)| format!("{}: reference {}, computed {}", inv, fmt_rational(r), fmt_rational(c)))
            .collect();
        if let Some(res) = &self.residual {
            out.push(format!("jet residual outside the vocabulary: {}", res));
        }
        out
    }
}

fn coefficient_map(terms: &[InvariantTerm]) -> BTreeMap<Invariant, Rational> {
    let mut m = BTreeMap::new();
    for t in terms {
        *m.entry(t.inv).or_insert_with(Rational::zero) += t.coeff.rational;
    }
    m.retain(|_, c| !c.is_zero());
    m
}

pub fn compare_with_reference(d: &Density, target: Target) -> Result<Comparison> {
    let reference = reference_terms(target, d.dim);
    let prefer: Vec<Invariant> = reference.iter().map(|t| t.inv).collect();
    let ref_jets = Density { dim: d.dim, expr: invariants_to_jets(&reference, d.dim)? };
    let want = coefficient_map(&jets_to_invariants(&ref_jets, &prefer)?.terms);
    let dec = jets_to_invariants(d, &prefer)?;
    let got = coefficient_map(&dec.terms);
    let mut keys: Vec<Invariant> = want.keys().chain(got.keys()).copied().collect();
    keys.sort_by_key(|k| (prefer.iter().position(|p| p == k).unwrap_or(usize::MAX), *k));
    keys.dedup();
    let zero = Rational::zero();
    let mismatches = keys
        .into_iter()
        .filter_map(|k| {
            let (r, c) = (*want.get(&k).unwrap_or(&zero), *got.get(&k).unwrap_or(&zero));
            (r != c).then_some((k, r, c))
        })
        .collect();
    Ok(Comparison { mismatches, residual: dec.residual })
}

// ---------------------------------------------------------------- rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Latex,
    Json,
    Jets,
}

impl Format {
    pub fn parse(s: &str) -> Option<Format> {
        match s {
            "latex" => Some(Format::Latex),
            "json" => Some(Format::Json),
            "jets" => Some(Format::Jets),
            _ => None,
        }
    }
}

pub fn fmt_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// LaTeX sum of invariant terms; `0` when empty.
pub fn render_latex(terms: &[InvariantTerm]) -> String {
    if terms.is_empty() {
        return "0".into();
    }
    let mut s = String::new();
    for (k, t) in terms.iter().enumerate() {
        let c = t.coeff.rational;
        let neg = c < Rational::zero();
        let a = c.abs();
        if k == 0 {
            if neg {
                s.push('-');
            }
        } else {
            s.push_str(if neg { " - " } else { " + " });
        }
        if !a.is_one() {
            if a.denom().is_one() {
                s.push_str(&a.numer().to_string());
            } else {
                s.push_str(&format!("\\frac{{{}}}{{{}}}", a.numer(), a.denom()));
            }
        }
        s.push_str(&t.inv.latex());
    }
    s
}

#[derive(Debug, Serialize)]
struct JsonTerm {
    coeff: String,
    invariant: String,
}

#[derive(Debug, Serialize)]
struct JsonDensity<'a> {
    dim: u32,
    part: &'a str,
    prefactor: &'a str,
    terms: Vec<JsonTerm>,
    residual: Option<String>,
    discrepancies: Vec<String>,
}

/// A rendered density with its invariant form and reference comparison.
#[derive(Debug, Clone)]
pub struct Report {
    pub target: Target,
    pub density: Density,
    pub terms: Vec<InvariantTerm>,
    pub residual: Option<Expr>,
    pub discrepancies: Vec<String>,
}

/// Decomposes a computed density (reference invariants preferred) and
/// compares it with the reference formula.
pub fn report(target: Target, density: Density) -> Result<Report> {
    let reference = reference_terms(target, density.dim);
    let prefer: Vec<Invariant> = reference.iter().map(|t| t.inv).collect();
    let dec = jets_to_invariants(&density, &prefer)?;
    let cmp = compare_with_reference(&density, target)?;
    let mut discrepancies: Vec<String> = cmp.discrepancy_lines().into_iter().map(|l| format!("paper-discrepancy: {}", l)).collect();
    discrepancies.extend(reading_notes(target).into_iter().map(|l| format!("reading: {}", l)));
    Ok(Report {
        target,
        density,
        terms: order_terms(dec.terms, &prefer),
        residual: dec.residual,
        discrepancies,
    })
}

fn order_terms(mut terms: Vec<InvariantTerm>, prefer: &[Invariant]) -> Vec<InvariantTerm> {
    terms.sort_by_key(|t| (prefer.iter().position(|p| *p == t.inv).unwrap_or(usize::MAX), t.inv));
    terms
}

impl Report {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Jets => self.density.render_jets(),
            Format::Latex => {
                let mut s = render_latex(&self.terms);
                if let Some(r) = &self.residual {
                    s.push_str(&format!(" + \\text{{residual}}({})", r));
                }
                s.push('\n');
                s
            }
            Format::Json => {
                let j = JsonDensity {
                    dim: self.density.dim,
                    part: self.target.name(),
                    prefactor: PREFACTOR_LABEL,
                    terms: self
                        .terms
                        .iter()
                        .map(|t| JsonTerm { coeff: fmt_rational(&t.coeff.rational), invariant: t.inv.plain() })
                        .collect(),
                    residual: self.residual.as_ref().map(|r| r.to_string()),
                    discrepancies: self.discrepancies.clone(),
                };
                let mut s = serde_json::to_string_pretty(&j).expect("serializable");
                s.push('\n');
                s
            }
        }
    }
}

// ---------------------------------------------------------------- identities

/// A jet-level identity: a traced Clifford integrand and its claimed value.
#[derive(Debug, Clone)]
pub struct Identity {
    pub name: &'static str,
    pub lhs: Expr,
    pub rhs: Vec<InvariantTerm>,
}

fn cd(f: FnId, frame: Idx, derivs: &[Idx]) -> (Atom, Letter) {
    (Atom::FrameJet { f, frame, derivs: derivs.to_vec() }, Letter::Gen(frame))
}

fn clifford_term(c: Rational, mut atoms: Vec<Atom>, cliffs: Vec<(Atom, Letter)>) -> Term {
    let mut word = vec![];
    for (a, l) in cliffs {
        atoms.push(a);
        word.push(l);
    }
    Term::new(Coefficient::real(c), atoms, word)
}

/// The traced integrand as a density with the usual implicit prefactor.
pub fn integrand_density(e: &Expr, rules: &RuleTable) -> Result<Density> {
    Density::new(integrate_expr(&trace_expr(&at_origin(e, rules)?)?)?)
}

/// Integrand identities used to convert traced jets into invariants.
pub fn integrand_identities(n: u32) -> Result<Vec<Identity>> {
    use Form::*;
    let mut x = Names(0);
    let mut ids = vec![];
    let t = InvariantTerm::new;
    // 2 Σ ∂_j a1 ∂_j ∂_r ∂_r a2 c(da3) c(da4)
    {
        let (j, r, mu, nu) = (x.next(), x.next(), x.next(), x.next());
        let lhs = Expr::from_term(
            n,
            clifford_term(q(2, 1), vec![jet(1, &[j]), jet(2, &[j, r, r])], vec![cd(3, mu, &[]), cd(4, nu, &[])]),
        )?;
        ids.push(Identity {
            name: "gradient of a laplacian",
            lhs,
            rhs: vec![t(q(2, 1), GradLap, [1, 2, 3, 4]), t(q(-4, 3), RicciMetric, [1, 2, 3, 4])],
        });
    }
    // 4 Σ ∂_j a1 ∂_j(∂_p a2 ∂_p[c(da3) c(da4)])
    {
        let (j, p, mu, nu) = (x.next(), x.next(), x.next(), x.next());
        let f = |c, a: Vec<Atom>, d3: &[Idx], d4: &[Idx]| {
            clifford_term(c, a, vec![cd(3, mu, d3), cd(4, nu, d4)])
        };
        let lhs = Expr::from_terms(
            n,
            vec![
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[j, p])], &[p], &[]),
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[j, p])], &[], &[p]),
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[p])], &[p, j], &[]),
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[p])], &[p], &[j]),
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[p])], &[j], &[p]),
                f(q(4, 1), vec![jet(1, &[j]), jet(2, &[p])], &[], &[p, j]),
            ],
        )?;
        ids.push(Identity { name: "second derivative of a metric pairing", lhs, rhs: vec![t(q(-4, 1), GradGradMetric, [1, 2, 3, 4])] });
    }
    // 2 Σ ∂_k ∂_k a2 ∂_p a3 c(da1) ∂_p[c(da4)]
    {
        let (k, p, mu, nu) = (x.next(), x.next(), x.next(), x.next());
        let lhs = Expr::from_term(
            n,
            clifford_term(q(2, 1), vec![jet(2, &[k, k]), jet(3, &[p])], vec![cd(1, mu, &[]), cd(4, nu, &[p])]),
        )?;
        ids.push(Identity { name: "laplacian times hessian", lhs, rhs: vec![t(q(2, 1), LapHess, [2, 1, 3, 4])] });
    }
    // 4 Σ ∂_j a2 ∂_p a3 c(da1) ∂_j ∂_p[c(da4)]
    {
        let (j, p, mu, nu) = (x.next(), x.next(), x.next(), x.next());
        let lhs = Expr::from_term(
            n,
            clifford_term(q(4, 1), vec![jet(2, &[j]), jet(3, &[p])], vec![cd(1, mu, &[]), cd(4, nu, &[j, p])]),
        )?;
        ids.push(Identity {
            name: "nested covariant derivative",
            lhs,
            rhs: vec![
                t(q(-4, 1), NestedCov, [1, 2, 3, 4]),
                t(q(4, 1), HessPair, [1, 4, 2, 3]),
                t(q(2, 1), Riemann, [2, 3, 1, 4]),
            ],
        });
    }
    // 4 Σ ∂_j a2 ∂_j ∂_p a3 c(da1) ∂_p[c(da4)]
    {
        let (j, p, mu, nu) = (x.next(), x.next(), x.next(), x.next());
        let lhs = Expr::from_term(
            n,
            clifford_term(q(4, 1), vec![jet(2, &[j]), jet(3, &[j, p])], vec![cd(1, mu, &[]), cd(4, nu, &[p])]),
        )?;
        ids.push(Identity { name: "covariant derivative along a covariant derivative", lhs, rhs: vec![t(q(-4, 1), CovOfCov, [1, 2, 3, 4])] });
    }
    Ok(ids)
}

/// `Σ_{jr} ∂_j a1 ∂_j ∂_r ∂_r a2 = (2/3) Σ_α R(∇a1,e_α,∇a2,e_α) - ∇a1[Δa2]`,
/// both sides multiplied by `g(da3, da4)`.
pub fn third_jet_identity(n: u32) -> Result<(Expr, Expr)> {
    let mut x = Names(0);
    let (j, r, k) = (x.next(), x.next(), x.next());
    let lhs = Expr::from_term(n, term(q(1, 1), vec![jet(1, &[j]), jet(2, &[j, r, r]), jet(3, &[k]), jet(4, &[k])]))?;
    let rhs = invariants_to_jets(
        &[InvariantTerm::new(q(2, 3), Form::RicciMetric, [1, 2, 3, 4]), InvariantTerm::new(q(-1, 1), Form::GradLap, [1, 2, 3, 4])],
        n,
    )?;
    Ok((lhs, rhs))
}

/// Solves `defect(κ) = 0` modulo Bianchi for a defect affine in κ. `None` when no single
/// κ annihilates every jet coefficient.
fn solve_affine(defect: impl Fn(Rational) -> Result<Expr>) -> Result<Option<Rational>> {
    // coordinates modulo Bianchi: invariant coefficients plus any residual jets
    let coords = |e: Expr| -> Result<BTreeMap<String, Rational>> {
        let dec = jets_to_invariants(&Density { dim: e.dim, expr: e }, &[])?;
        let mut m: BTreeMap<String, Rational> =
            coefficient_map(&dec.terms).into_iter().map(|(k, v)| (format!("{:?}", k), v)).collect();
        if let Some(r) = dec.residual {
            for (k, v) in to_vector(&r)? {
                m.insert(format!("{:?}", k), v);
            }
        }
        Ok(m)
    };
    let d0 = coords(defect(Rational::zero())?)?;
    let d1 = coords(defect(Rational::one())?)?;
    let mut kappa: Option<Rational> = None;
    let keys: std::collections::BTreeSet<&String> = d0.keys().chain(d1.keys()).collect();
    let zero = Rational::zero();
    for k in keys {
        let a = *d0.get(k).unwrap_or(&zero);
        let slope = *d1.get(k).unwrap_or(&zero) - a;
        if slope.is_zero() {
            if !a.is_zero() {
                return Ok(None);
            }
            continue;
        }
        let v = -a / slope;
        match kappa {
            Some(w) if w != v => return Ok(None),
            _ => kappa = Some(v),
        }
    }
    Ok(kappa)
}

/// κ_g fixed by requiring the reference coefficient 2/3 in
/// `Σ ∂_j a1 ∂_j ∂_r ∂_r a2 = (2/3) Ric(∇a1,∇a2) - ∇a1[Δa2]`.
pub fn kappa_g_from_matching(n: u32) -> Result<Option<Rational>> {
    let (lhs, _) = third_jet_identity(n)?;
    let ric = InvariantTerm::new(q(2, 3), Form::RicciMetric, [1, 2, 3, 4]);
    let ric = invariants_to_jets(&[ric], n)?;
    solve_affine(|k| {
        let rules = RuleTable { kappa_g: k, ..RuleTable::default() };
        let gl = Invariant::new(Form::GradLap, [1, 2, 3, 4]).to_jets_with(n, &rules)?;
        lhs.sub(&ric.sub(&gl)?)
    })
}

/// κ_F fixed by requiring the nested covariant integrand identity, whose
/// traced left side is affine in κ_F.
pub fn kappa_f_from_matching(n: u32) -> Result<Option<Rational>> {
    let id = integrand_identities(n)?.into_iter().find(|i| i.name == "nested covariant derivative").expect("present");
    let rhs = invariants_to_jets(&id.rhs, n)?;
    solve_affine(|k| {
        let rules = RuleTable { kappa_f: k, ..RuleTable::default() };
        integrand_density(&id.lhs, &rules)?.expr.sub(&rhs)
    })
}
