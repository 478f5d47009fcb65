//! Exact symbolic expressions with Einstein-summation indices.
//!
//! A [`Term`] is a coefficient times a multiset of scalar [`Atom`]s times an
//! ordered Clifford word. An [`Expr`] is a sum of terms in a fixed dimension.
//! Every public operation returns expressions in canonical form: dummy indices
//! renamed deterministically, deltas contracted, Riemann monoterm symmetries
//! applied with sign, like terms merged and zeros dropped.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};

use crate::clifford::Letter;

/// Exact rationals used for every coefficient.
pub type Rational = Ratio<i128>;

/// Shorthand for the rational `p/q`.
pub fn q(p: i128, d: i128) -> Rational {
    Rational::new(p, d)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("structural error: index {0} appears {1} times in a term")]
    Structural(String, usize),
    #[error("unsupported jet: {0}")]
    UnsupportedJet(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("homogeneity error: {0}")]
    Degree(String),
}

pub type Result<T> = std::result::Result<T, ExprError>;

/// Rational times a power of the imaginary unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coefficient {
    pub rational: Rational,
    pub i_power: u8,
}

impl Coefficient {
    /// Builds a coefficient, folding `i^2 = -1` into the rational part.
    pub fn new(rational: Rational, i_power: u8) -> Self {
        let mut r = rational;
        let mut p = i_power % 4;
        if p >= 2 {
            r = -r;
            p -= 2;
        }
        Coefficient { rational: r, i_power: p }
    }

    pub fn real(r: Rational) -> Self {
        Coefficient::new(r, 0)
    }

    pub fn int(k: i128) -> Self {
        Coefficient::new(Rational::from_integer(k), 0)
    }

    pub fn one() -> Self {
        Coefficient::int(1)
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        Coefficient::new(Rational::one(), 1)
    }

    /// `(-i)^k`.
    pub fn minus_i_pow(k: u32) -> Self {
        let r = if k % 2 == 0 { 1 } else { -1 };
        Coefficient::new(Rational::from_integer(r), (k % 4) as u8)
    }

    pub fn is_zero(&self) -> bool {
        self.rational.is_zero()
    }

    pub fn mul(&self, o: &Coefficient) -> Coefficient {
        Coefficient::new(&self.rational * &o.rational, self.i_power + o.i_power)
    }

    pub fn scale(&self, r: &Rational) -> Coefficient {
        Coefficient::new(&self.rational * r, self.i_power)
    }

    pub fn neg(&self) -> Coefficient {
        Coefficient::new(-self.rational, self.i_power)
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.rational;
        let s = if r.denom().is_one() {
            format!("{}", r.numer())
        } else {
            format!("{}/{}", r.numer(), r.denom())
        };
        if self.i_power == 1 {
            write!(f, "{}i", s)
        } else {
            write!(f, "{}", s)
        }
    }
}

/// A tensor index. `Free` indices carry an external name, `Dummy` indices are
/// summed and appear exactly twice in a term, `Fixed` is a concrete value 1..n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Idx {
    Fixed(u8),
    Free(u32),
    Dummy(u32),
}

impl fmt::Display for Idx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Idx::Fixed(k) => write!(f, "{}", k),
            Idx::Free(k) => write!(f, "f{}", k),
            Idx::Dummy(k) => write!(f, "d{}", k),
        }
    }
}

/// Function identifier for `a^0 .. a^4`.
pub type FnId = u8;

/// Scalar building blocks of a term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    /// Partial derivatives of a coordinate-scalar function.
    FnJet { f: FnId, derivs: Vec<Idx> },
    /// Partial derivatives of the frame scalar `e_frame(a^f)`.
    FrameJet { f: FnId, frame: Idx, derivs: Vec<Idx> },
    /// Derivatives of the inverse metric `g^{ab}`.
    MetricInv { upper: [Idx; 2], derivs: Vec<Idx> },
    /// Derivatives of `Γ^k = g^{ij} Γ^k_{ij}`.
    GammaContracted { upper: Idx, derivs: Vec<Idx> },
    /// Derivatives of the Christoffel symbol `Γ^k_{ij}`.
    Christoffel { upper: Idx, lower: [Idx; 2], derivs: Vec<Idx> },
    Riemann([Idx; 4]),
    ScalarCurv,
    Xi(Idx),
    /// `|ξ|^(2k)`.
    NormSq(i32),
    Delta(Idx, Idx),
}

impl Atom {
    pub fn fn_jet(f: FnId, derivs: &[Idx]) -> Atom {
        Atom::FnJet { f, derivs: derivs.to_vec() }
    }

    pub fn metric(a: Idx, b: Idx) -> Atom {
        Atom::MetricInv { upper: [a, b], derivs: vec![] }
    }

    pub(crate) fn for_each_idx(&self, mut f: impl FnMut(Idx)) {
        match self {
            Atom::FnJet { derivs, .. } => derivs.iter().for_each(|&i| f(i)),
            Atom::FrameJet { frame, derivs, .. } => {
                f(*frame);
                derivs.iter().for_each(|&i| f(i));
            }
            Atom::MetricInv { upper, derivs } => {
                upper.iter().for_each(|&i| f(i));
                derivs.iter().for_each(|&i| f(i));
            }
            Atom::GammaContracted { upper, derivs } => {
                f(*upper);
                derivs.iter().for_each(|&i| f(i));
            }
            Atom::Christoffel { upper, lower, derivs } => {
                f(*upper);
                lower.iter().for_each(|&i| f(i));
                derivs.iter().for_each(|&i| f(i));
            }
            Atom::Riemann(ix) => ix.iter().for_each(|&i| f(i)),
            Atom::ScalarCurv | Atom::NormSq(_) => {}
            Atom::Xi(i) => f(*i),
            Atom::Delta(a, b) => {
                f(*a);
                f(*b);
            }
        }
    }

    pub(crate) fn map_idx(&mut self, f: &mut impl FnMut(Idx) -> Idx) {
        match self {
            Atom::FnJet { derivs, .. } => derivs.iter_mut().for_each(|i| *i = f(*i)),
            Atom::FrameJet { frame, derivs, .. } => {
                *frame = f(*frame);
                derivs.iter_mut().for_each(|i| *i = f(*i));
            }
            Atom::MetricInv { upper, derivs } => {
                upper.iter_mut().for_each(|i| *i = f(*i));
                derivs.iter_mut().for_each(|i| *i = f(*i));
            }
            Atom::GammaContracted { upper, derivs } => {
                *upper = f(*upper);
                derivs.iter_mut().for_each(|i| *i = f(*i));
            }
            Atom::Christoffel { upper, lower, derivs } => {
                *upper = f(*upper);
                lower.iter_mut().for_each(|i| *i = f(*i));
                derivs.iter_mut().for_each(|i| *i = f(*i));
            }
            Atom::Riemann(ix) => ix.iter_mut().for_each(|i| *i = f(*i)),
            Atom::ScalarCurv | Atom::NormSq(_) => {}
            Atom::Xi(i) => *i = f(*i),
            Atom::Delta(a, b) => {
                *a = f(*a);
                *b = f(*b);
            }
        }
    }

    fn xi_degree(&self) -> i32 {
        match self {
            Atom::Xi(_) => 1,
            Atom::NormSq(k) => 2 * k,
            _ => 0,
        }
    }
}

/// One summand: coefficient, scalar atoms and a Clifford word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub coeff: Coefficient,
    pub atoms: Vec<Atom>,
    pub word: Vec<Letter>,
}

impl Term {
    pub fn new(coeff: Coefficient, atoms: Vec<Atom>, word: Vec<Letter>) -> Term {
        Term { coeff, atoms, word }
    }

    pub fn scalar(coeff: Coefficient, atoms: Vec<Atom>) -> Term {
        Term { coeff, atoms, word: vec![] }
    }

    pub(crate) fn for_each_idx(&self, mut f: impl FnMut(Idx)) {
        for a in &self.atoms {
            a.for_each_idx(&mut f);
        }
        for l in &self.word {
            l.for_each_idx(&mut f);
        }
    }

    pub(crate) fn map_idx(&mut self, mut f: impl FnMut(Idx) -> Idx) {
        for a in &mut self.atoms {
            a.map_idx(&mut f);
        }
        for l in &mut self.word {
            l.map_idx(&mut f);
        }
    }

    /// ξ-monomial degree plus twice the `|ξ|²` exponent.
    pub fn xi_degree(&self) -> i32 {
        self.atoms.iter().map(Atom::xi_degree).sum()
    }

    fn max_dummy(&self) -> Option<u32> {
        let mut m = None;
        self.for_each_idx(|i| {
            if let Idx::Dummy(d) = i {
                m = Some(m.map_or(d, |x: u32| x.max(d)));
            }
        });
        m
    }

    fn next_dummy(&self) -> u32 {
        self.max_dummy().map_or(0, |d| d + 1)
    }

    /// Product of two terms with the dummies of `o` shifted apart.
    pub fn mul(&self, o: &Term) -> Term {
        let off = self.next_dummy();
        let mut o2 = o.clone();
        o2.map_idx(|i| match i {
            Idx::Dummy(d) => Idx::Dummy(d + off),
            x => x,
        });
        let mut atoms = self.atoms.clone();
        atoms.extend(o2.atoms);
        let mut word = self.word.clone();
        word.extend(o2.word);
        Term { coeff: self.coeff.mul(&o.coeff), atoms, word }
    }

    pub fn free_indices(&self) -> Vec<u32> {
        let mut v = vec![];
        self.for_each_idx(|i| {
            if let Idx::Free(x) = i {
                v.push(x);
            }
        });
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// A sum of terms in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub dim: u32,
    pub terms: Vec<Term>,
}

impl Expr {
    pub fn zero(dim: u32) -> Expr {
        Expr { dim, terms: vec![] }
    }

    pub fn one(dim: u32) -> Expr {
        Expr { dim, terms: vec![Term::scalar(Coefficient::one(), vec![])] }
    }

    pub fn constant(dim: u32, c: Coefficient) -> Expr {
        Expr::from_terms(dim, vec![Term::scalar(c, vec![])]).expect("constant is well formed")
    }

    /// Builds and normalizes an expression from raw terms.
    pub fn from_terms(dim: u32, terms: Vec<Term>) -> Result<Expr> {
        normalize(&Expr { dim, terms })
    }

    pub fn from_term(dim: u32, t: Term) -> Result<Expr> {
        Expr::from_terms(dim, vec![t])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &Expr) -> Result<Expr> {
        let mut t = self.terms.clone();
        t.extend(o.terms.iter().cloned());
        Expr::from_terms(self.dim, t)
    }

    pub fn sub(&self, o: &Expr) -> Result<Expr> {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Expr {
        self.scale(&Coefficient::int(-1))
    }

    /// Multiplies every coefficient; canonical form is preserved.
    pub fn scale(&self, c: &Coefficient) -> Expr {
        if c.is_zero() {
            return Expr::zero(self.dim);
        }
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coeff: t.coeff.mul(c), ..t.clone() })
            .collect();
        Expr { dim: self.dim, terms }
    }

    pub fn mul(&self, o: &Expr) -> Result<Expr> {
        let mut out = Vec::with_capacity(self.terms.len() * o.terms.len());
        for a in &self.terms {
            for b in &o.terms {
                out.push(a.mul(b));
            }
        }
        Expr::from_terms(self.dim, out)
    }

    /// Sum of several expressions in the same dimension.
    pub fn sum<'a>(dim: u32, parts: impl IntoIterator<Item = &'a Expr>) -> Result<Expr> {
        let mut t = vec![];
        for p in parts {
            t.extend(p.terms.iter().cloned());
        }
        Expr::from_terms(dim, t)
    }

    /// The common ξ-degree of all terms, if homogeneous.
    pub fn xi_degree(&self) -> Option<i32> {
        let mut d = None;
        for t in &self.terms {
            let k = t.xi_degree();
            match d {
                None => d = Some(k),
                Some(x) if x != k => return None,
                _ => {}
            }
        }
        d
    }

    /// Largest free index name in use.
    pub fn max_free(&self) -> Option<u32> {
        self.terms.iter().flat_map(|t| t.free_indices()).max()
    }

    /// Renames a free index.
    pub fn rename_free(&self, from: u32, to: u32) -> Result<Expr> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.map_idx(|i| if i == Idx::Free(from) { Idx::Free(to) } else { i });
                t
            })
            .collect();
        Expr::from_terms(self.dim, terms)
    }

    /// Keeps the terms accepted by `keep`.
    pub fn filter(&self, keep: impl Fn(&Term) -> bool) -> Expr {
        Expr { dim: self.dim, terms: self.terms.iter().filter(|t| keep(t)).cloned().collect() }
    }
}

/// Fresh free index names not used by any of the given expressions.
pub fn fresh_free(exprs: &[&Expr], count: usize) -> Vec<u32> {
    let base = exprs.iter().filter_map(|e| e.max_free()).max().map_or(1000, |m| m.max(999) + 1);
    (0..count as u32).map(|k| base + k).collect()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", t)?;
        }
        Ok(())
    }
}

fn fmt_idx_list(v: &[Idx]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::FnJet { f: g, derivs } => write!(f, "a{}[{}]", g, fmt_idx_list(derivs)),
            Atom::FrameJet { f: g, frame, derivs } => {
                write!(f, "e{}(a{})[{}]", frame, g, fmt_idx_list(derivs))
            }
            Atom::MetricInv { upper, derivs } => {
                write!(f, "g^{}{}[{}]", upper[0], upper[1], fmt_idx_list(derivs))
            }
            Atom::GammaContracted { upper, derivs } => {
                write!(f, "G^{}[{}]", upper, fmt_idx_list(derivs))
            }
            Atom::Christoffel { upper, lower, derivs } => write!(
                f,
                "Chr^{}_{}{}[{}]",
                upper,
                lower[0],
                lower[1],
                fmt_idx_list(derivs)
            ),
            Atom::Riemann(ix) => write!(f, "R[{}]", fmt_idx_list(ix)),
            Atom::ScalarCurv => write!(f, "s"),
            Atom::Xi(i) => write!(f, "xi{}", i),
            Atom::NormSq(k) => write!(f, "|xi|^{}", 2 * k),
            Atom::Delta(a, b) => write!(f, "delta{},{}", a, b),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.coeff)?;
        for a in &self.atoms {
            write!(f, " {}", a)?;
        }
        for l in &self.word {
            write!(f, " {}", l)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// normalization

/// Canonical form of an expression.
pub fn normalize(e: &Expr) -> Result<Expr> {
    let mut acc: HashMap<(Vec<Atom>, Vec<Letter>), [Rational; 2]> = HashMap::new();
    for t in &e.terms {
        if let Some(c) = canonical_term(t, e.dim)? {
            let slot = acc
                .entry((c.atoms, c.word))
                .or_insert_with(|| [Rational::zero(), Rational::zero()]);
            slot[c.coeff.i_power as usize] += c.coeff.rational;
        }
    }
    let mut terms: Vec<Term> = Vec::with_capacity(acc.len() * 2);
    for ((atoms, word), [re, im]) in acc {
        if !im.is_zero() {
            terms.push(Term { coeff: Coefficient::new(im, 1), atoms: atoms.clone(), word: word.clone() });
        }
        if !re.is_zero() {
            terms.push(Term { coeff: Coefficient::new(re, 0), atoms, word });
        }
    }
    terms.sort_by(|a, b| {
        (&a.atoms, &a.word, a.coeff.i_power).cmp(&(&b.atoms, &b.word, b.coeff.i_power))
    });
    Ok(Expr { dim: e.dim, terms })
}

/// Canonical form of one term, or `None` if it vanishes.
pub(crate) fn canonical_term(t: &Term, dim: u32) -> Result<Option<Term>> {
    if t.coeff.is_zero() {
        return Ok(None);
    }
    let mut t = t.clone();
    promote_and_check(&mut t)?;
    if !contract_deltas(&mut t, dim) {
        return Ok(None);
    }
    fold_xi(&mut t);
    if !fold_curvature(&mut t) {
        return Ok(None);
    }
    if t.coeff.is_zero() {
        return Ok(None);
    }
    Ok(canonical_labeling(&t))
}

/// Turns doubly occurring free indices into dummies and checks counts.
fn promote_and_check(t: &mut Term) -> Result<()> {
    let mut counts: HashMap<Idx, usize> = HashMap::new();
    t.for_each_idx(|i| {
        if !matches!(i, Idx::Fixed(_)) {
            *counts.entry(i).or_insert(0) += 1;
        }
    });
    let mut next = t.next_dummy();
    let mut remap: HashMap<Idx, Idx> = HashMap::new();
    let mut keys: Vec<_> = counts.iter().map(|(k, v)| (*k, *v)).collect();
    keys.sort();
    for (i, c) in keys {
        match i {
            Idx::Free(_) if c == 2 => {
                remap.insert(i, Idx::Dummy(next));
                next += 1;
            }
            Idx::Free(_) if c > 2 => return Err(ExprError::Structural(i.to_string(), c)),
            Idx::Dummy(_) if c != 2 => return Err(ExprError::Structural(i.to_string(), c)),
            _ => {}
        }
    }
    if !remap.is_empty() {
        t.map_idx(|i| *remap.get(&i).unwrap_or(&i));
    }
    Ok(())
}

/// Contracts Kronecker deltas. Returns false if the term vanishes.
fn contract_deltas(t: &mut Term, dim: u32) -> bool {
    loop {
        let pos = t.atoms.iter().position(|a| match a {
            Atom::Delta(x, y) => {
                x == y
                    || matches!(x, Idx::Dummy(_))
                    || matches!(y, Idx::Dummy(_))
                    || (matches!(x, Idx::Fixed(_)) && matches!(y, Idx::Fixed(_)))
            }
            _ => false,
        });
        let Some(p) = pos else { return true };
        let Atom::Delta(x, y) = t.atoms.remove(p) else { unreachable!() };
        if x == y {
            if let Idx::Dummy(_) = x {
                t.coeff = t.coeff.scale(&Rational::from_integer(dim as i128));
            }
            continue;
        }
        match (x, y) {
            (Idx::Fixed(_), Idx::Fixed(_)) => return false,
            (Idx::Dummy(_), other) => t.map_idx(|i| if i == x { other } else { i }),
            (other, Idx::Dummy(_)) => t.map_idx(|i| if i == y { other } else { i }),
            _ => unreachable!(),
        }
    }
}

/// `ξ_j ξ_j -> |ξ|²` and merges `|ξ|` powers.
fn fold_xi(t: &mut Term) {
    let mut power = 0i32;
    let mut had_power = false;
    let mut xis: Vec<Idx> = vec![];
    let mut rest = vec![];
    for a in t.atoms.drain(..) {
        match a {
            Atom::NormSq(k) => {
                power += k;
                had_power = true;
            }
            Atom::Xi(i) => xis.push(i),
            other => rest.push(other),
        }
    }
    let mut kept = vec![];
    let mut used = vec![false; xis.len()];
    for a in 0..xis.len() {
        if used[a] {
            continue;
        }
        if let Idx::Dummy(_) = xis[a] {
            if let Some(b) = (a + 1..xis.len()).find(|&b| !used[b] && xis[b] == xis[a]) {
                used[a] = true;
                used[b] = true;
                power += 1;
                had_power = true;
                continue;
            }
        }
        kept.push(xis[a]);
    }
    rest.extend(kept.into_iter().map(Atom::Xi));
    if had_power && power != 0 {
        rest.push(Atom::NormSq(power));
    }
    t.atoms = rest;
}

/// Riemann zero rules and full self-contraction to `s`. Returns false if zero.
fn fold_curvature(t: &mut Term) -> bool {
    let mut i = 0;
    while i < t.atoms.len() {
        if let Atom::Riemann(ix) = t.atoms[i] {
            if ix[0] == ix[1] || ix[2] == ix[3] {
                return false;
            }
            let full = |a: Idx, b: Idx| a == b && matches!(a, Idx::Dummy(_));
            if full(ix[0], ix[2]) && full(ix[1], ix[3]) {
                t.atoms[i] = Atom::ScalarCurv;
            } else if full(ix[0], ix[3]) && full(ix[1], ix[2]) {
                t.atoms[i] = Atom::ScalarCurv;
                t.coeff = t.coeff.neg();
            }
        }
        i += 1;
    }
    true
}

// ---------------------------------------------------------------------------
// canonical labeling

/// One way of reading an item's index slots, with the sign it costs.
struct Variant {
    sign: i8,
    slots: Vec<Idx>,
}

struct Item {
    header: Vec<u64>,
    variants: Vec<Variant>,
    build: fn(&[u64], &[Idx]) -> ItemOut,
}

enum ItemOut {
    Atom(Atom),
    Letter(Letter),
}

fn perms(v: &[Idx]) -> Vec<Vec<Idx>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out: Vec<Vec<Idx>> = vec![];
    for k in 0..v.len() {
        if v[..k].contains(&v[k]) {
            continue;
        }
        let mut rest = v.to_vec();
        let x = rest.remove(k);
        for mut p in perms(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn cat(a: &[Idx], b: &[Idx]) -> Vec<Idx> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

fn item_of_atom(a: &Atom) -> Item {
    use Atom::*;
    match a {
        Riemann(ix) => {
            let [i, j, k, l] = *ix;
            let raw = [
                (1, [i, j, k, l]),
                (-1, [j, i, k, l]),
                (-1, [i, j, l, k]),
                (1, [j, i, l, k]),
                (1, [k, l, i, j]),
                (-1, [l, k, i, j]),
                (-1, [k, l, j, i]),
                (1, [l, k, j, i]),
            ];
            Item {
                header: vec![0],
                variants: raw.iter().map(|(s, v)| Variant { sign: *s, slots: v.to_vec() }).collect(),
                build: |_, s| ItemOut::Atom(Riemann([s[0], s[1], s[2], s[3]])),
            }
        }
        FnJet { f, derivs } => Item {
            header: vec![1, *f as u64, derivs.len() as u64],
            variants: perms(derivs).into_iter().map(|p| Variant { sign: 1, slots: p }).collect(),
            build: |h, s| ItemOut::Atom(FnJet { f: h[1] as u8, derivs: s.to_vec() }),
        },
        FrameJet { f, frame, derivs } => Item {
            header: vec![2, *f as u64, derivs.len() as u64],
            variants: perms(derivs)
                .into_iter()
                .map(|p| Variant { sign: 1, slots: cat(&[*frame], &p) })
                .collect(),
            build: |h, s| ItemOut::Atom(FrameJet { f: h[1] as u8, frame: s[0], derivs: s[1..].to_vec() }),
        },
        MetricInv { upper, derivs } => {
            let mut vs = vec![];
            for u in perms(upper) {
                for p in perms(derivs) {
                    vs.push(Variant { sign: 1, slots: cat(&u, &p) });
                }
            }
            Item {
                header: vec![3, derivs.len() as u64],
                variants: vs,
                build: |_, s| ItemOut::Atom(MetricInv { upper: [s[0], s[1]], derivs: s[2..].to_vec() }),
            }
        }
        Christoffel { upper, lower, derivs } => {
            let mut vs = vec![];
            for u in perms(lower) {
                for p in perms(derivs) {
                    vs.push(Variant { sign: 1, slots: cat(&cat(&[*upper], &u), &p) });
                }
            }
            Item {
                header: vec![4, derivs.len() as u64],
                variants: vs,
                build: |_, s| {
                    ItemOut::Atom(Christoffel { upper: s[0], lower: [s[1], s[2]], derivs: s[3..].to_vec() })
                },
            }
        }
        GammaContracted { upper, derivs } => Item {
            header: vec![5, derivs.len() as u64],
            variants: perms(derivs)
                .into_iter()
                .map(|p| Variant { sign: 1, slots: cat(&[*upper], &p) })
                .collect(),
            build: |_, s| ItemOut::Atom(GammaContracted { upper: s[0], derivs: s[1..].to_vec() }),
        },
        ScalarCurv => Item {
            header: vec![6],
            variants: vec![Variant { sign: 1, slots: vec![] }],
            build: |_, _| ItemOut::Atom(ScalarCurv),
        },
        NormSq(k) => Item {
            header: vec![7, (*k as i64 + (1 << 31)) as u64],
            variants: vec![Variant { sign: 1, slots: vec![] }],
            build: |h, _| ItemOut::Atom(NormSq((h[1] as i64 - (1 << 31)) as i32)),
        },
        Delta(x, y) => Item {
            header: vec![8],
            variants: vec![Variant { sign: 1, slots: vec![*x, *y] }, Variant { sign: 1, slots: vec![*y, *x] }],
            build: |_, s| ItemOut::Atom(Delta(s[0], s[1])),
        },
        Xi(i) => Item {
            header: vec![9],
            variants: vec![Variant { sign: 1, slots: vec![*i] }],
            build: |_, s| ItemOut::Atom(Xi(s[0])),
        },
    }
}

fn item_of_letter(l: &Letter) -> Item {
    match l {
        Letter::Gen(i) => Item {
            header: vec![20],
            variants: vec![Variant { sign: 1, slots: vec![*i] }],
            build: |_, s| ItemOut::Letter(Letter::Gen(s[0])),
        },
        Letter::Sigma { index, lowered, derivs } => Item {
            header: vec![21, *lowered as u64, derivs.len() as u64],
            variants: perms(derivs)
                .into_iter()
                .map(|p| Variant { sign: 1, slots: cat(&[*index], &p) })
                .collect(),
            build: |h, s| {
                ItemOut::Letter(Letter::Sigma { index: s[0], lowered: h[1] == 1, derivs: s[1..].to_vec() })
            },
        },
    }
}

/// Group order for atoms: rich atoms first so that cheap leaf atoms see
/// mostly labeled dummies.
fn group_rank(h: &[u64]) -> u64 {
    h[0]
}

#[derive(Clone)]
struct State {
    labels: Vec<u32>,
    next: u32,
    used: Vec<bool>,
    sign: i8,
    choice: Vec<(usize, usize)>,
}

const UNSET: u32 = u32::MAX;

fn encode(st: &State, slots: &[Idx], tokens: &mut Vec<u64>) -> (Vec<u32>, u32) {
    let mut labels = st.labels.clone();
    let mut next = st.next;
    tokens.clear();
    for s in slots {
        let tok = match *s {
            Idx::Fixed(k) => k as u64,
            Idx::Free(x) => (1u64 << 32) | x as u64,
            Idx::Dummy(d) => {
                let d = d as usize;
                if labels[d] == UNSET {
                    labels[d] = next;
                    next += 1;
                }
                (2u64 << 32) | labels[d] as u64
            }
        };
        tokens.push(tok);
    }
    (labels, next)
}

/// Deterministic dummy renaming and atom ordering. Returns `None` when the
/// term equals its own negative.
fn canonical_labeling(t: &Term) -> Option<Term> {
    // compact dummy ids
    let mut ids: Vec<u32> = vec![];
    t.for_each_idx(|i| {
        if let Idx::Dummy(d) = i {
            ids.push(d);
        }
    });
    ids.sort_unstable();
    ids.dedup();
    let mut t = t.clone();
    t.map_idx(|i| match i {
        Idx::Dummy(d) => Idx::Dummy(ids.binary_search(&d).unwrap() as u32),
        x => x,
    });
    let nd = ids.len();

    let letters: Vec<Item> = t.word.iter().map(item_of_letter).collect();
    let mut atoms: Vec<Item> = t.atoms.iter().map(item_of_atom).collect();
    atoms.sort_by(|a, b| (group_rank(&a.header), &a.header).cmp(&(group_rank(&b.header), &b.header)));

    let mut positions: Vec<(bool, usize, usize)> = vec![]; // (is_word, lo, hi) candidate ranges
    for k in 0..letters.len() {
        positions.push((true, k, k + 1));
    }
    let mut k = 0;
    while k < atoms.len() {
        let mut e = k + 1;
        while e < atoms.len() && atoms[e].header == atoms[k].header {
            e += 1;
        }
        for _ in k..e {
            positions.push((false, k, e));
        }
        k = e;
    }

    let mut states = vec![State {
        labels: vec![UNSET; nd],
        next: 0,
        used: vec![false; atoms.len()],
        sign: 1,
        choice: vec![],
    }];
    let mut zero = false;
    let mut tokens = Vec::new();
    for &(is_word, lo, hi) in &positions {
        let items = if is_word { &letters } else { &atoms };
        let mut best: Option<Vec<u64>> = None;
        let mut cands: Vec<State> = vec![];
        for st in &states {
            for it in lo..hi {
                if !is_word && st.used[it] {
                    continue;
                }
                for (vi, var) in items[it].variants.iter().enumerate() {
                    let (labels, next) = encode(st, &var.slots, &mut tokens);
                    let ord = best.as_ref().map(|b| tokens.cmp(b));
                    match ord {
                        Some(std::cmp::Ordering::Greater) => continue,
                        Some(std::cmp::Ordering::Less) | None => {
                            best = Some(tokens.clone());
                            cands.clear();
                        }
                        Some(std::cmp::Ordering::Equal) => {}
                    }
                    let mut used = st.used.clone();
                    if !is_word {
                        used[it] = true;
                    }
                    let mut choice = st.choice.clone();
                    choice.push((it, vi));
                    cands.push(State { labels, next, used, sign: st.sign * var.sign, choice });
                }
            }
        }
        // dedupe identical states
        let mut seen: HashMap<(Vec<u32>, Vec<bool>), i8> = HashMap::new();
        let mut kept = vec![];
        for c in cands {
            match seen.get(&(c.labels.clone(), c.used.clone())) {
                Some(&s) => {
                    if s != c.sign {
                        zero = true;
                    }
                }
                None => {
                    seen.insert((c.labels.clone(), c.used.clone()), c.sign);
                    kept.push(c);
                }
            }
        }
        if zero {
            return None;
        }
        states = kept;
    }
    // every survivor rewrites the term into the same serialization; mixed
    // signs mean the term equals its own negative
    if states.iter().any(|s| s.sign != states[0].sign) {
        return None;
    }
    let st = &states[0];
    let relabel = |i: Idx| match i {
        Idx::Dummy(d) => Idx::Dummy(st.labels[d as usize]),
        x => x,
    };
    let mut out_atoms = vec![];
    let mut out_word = vec![];
    for (p, &(it, vi)) in st.choice.iter().enumerate() {
        let is_word = positions[p].0;
        let item = if is_word { &letters[it] } else { &atoms[it] };
        let slots: Vec<Idx> = item.variants[vi].slots.iter().map(|&i| relabel(i)).collect();
        match (item.build)(&item.header, &slots) {
            ItemOut::Atom(a) => out_atoms.push(a),
            ItemOut::Letter(l) => out_word.push(l),
        }
    }
    let coeff = if st.sign < 0 { t.coeff.neg() } else { t.coeff.clone() };
    Some(Term { coeff, atoms: out_atoms, word: out_word })
}

// ---------------------------------------------------------------------------
// derivatives

fn push_deriv(v: &[Idx], j: Idx) -> Vec<Idx> {
    let mut d = v.to_vec();
    d.push(j);
    d
}

/// `∂/∂x_j` of an expression; `j` must be a free index name.
pub fn diff_x(e: &Expr, j: u32) -> Result<Expr> {
    let jx = Idx::Free(j);
    let mut out = vec![];
    for t in &e.terms {
        for p in 0..t.atoms.len() {
            let mut nt = t.clone();
            let a = &t.atoms[p];
            match a {
                Atom::FnJet { f, derivs } => nt.atoms[p] = Atom::FnJet { f: *f, derivs: push_deriv(derivs, jx) },
                Atom::FrameJet { f, frame, derivs } => {
                    nt.atoms[p] = Atom::FrameJet { f: *f, frame: *frame, derivs: push_deriv(derivs, jx) }
                }
                Atom::MetricInv { upper, derivs } => {
                    nt.atoms[p] = Atom::MetricInv { upper: *upper, derivs: push_deriv(derivs, jx) }
                }
                Atom::GammaContracted { upper, derivs } => {
                    nt.atoms[p] = Atom::GammaContracted { upper: *upper, derivs: push_deriv(derivs, jx) }
                }
                Atom::Christoffel { upper, lower, derivs } => {
                    nt.atoms[p] = Atom::Christoffel { upper: *upper, lower: *lower, derivs: push_deriv(derivs, jx) }
                }
                Atom::Riemann(_) | Atom::ScalarCurv => {
                    return Err(ExprError::UnsupportedJet(format!("x-derivative of {}", a)))
                }
                Atom::NormSq(k) => {
                    let k = *k;
                    let d0 = nt.next_dummy();
                    let (al, be) = (Idx::Dummy(d0), Idx::Dummy(d0 + 1));
                    nt.coeff = nt.coeff.scale(&Rational::from_integer(k as i128));
                    nt.atoms[p] = Atom::NormSq(k - 1);
                    nt.atoms.push(Atom::MetricInv { upper: [al, be], derivs: vec![jx] });
                    nt.atoms.push(Atom::Xi(al));
                    nt.atoms.push(Atom::Xi(be));
                }
                Atom::Xi(_) | Atom::Delta(..) => continue,
            }
            out.push(nt);
        }
        for p in 0..t.word.len() {
            if let Letter::Sigma { index, lowered, derivs } = &t.word[p] {
                let mut nt = t.clone();
                nt.word[p] = Letter::Sigma { index: *index, lowered: *lowered, derivs: push_deriv(derivs, jx) };
                out.push(nt);
            }
        }
    }
    Expr::from_terms(e.dim, out)
}

/// `∂/∂ξ_j` of an expression; `j` must be a free index name.
pub fn diff_xi(e: &Expr, j: u32) -> Result<Expr> {
    let jx = Idx::Free(j);
    let mut out = vec![];
    for t in &e.terms {
        for p in 0..t.atoms.len() {
            match t.atoms[p] {
                Atom::Xi(l) => {
                    let mut nt = t.clone();
                    nt.atoms[p] = Atom::Delta(jx, l);
                    out.push(nt);
                }
                Atom::NormSq(k) => {
                    let mut nt = t.clone();
                    let al = Idx::Dummy(nt.next_dummy());
                    nt.coeff = nt.coeff.scale(&Rational::from_integer(2 * k as i128));
                    nt.atoms[p] = Atom::NormSq(k - 1);
                    nt.atoms.push(Atom::MetricInv { upper: [jx, al], derivs: vec![] });
                    nt.atoms.push(Atom::Xi(al));
                    out.push(nt);
                }
                _ => {}
            }
        }
    }
    Expr::from_terms(e.dim, out)
}

/// Applies `diff` for each name in order.
pub fn diff_many(e: &Expr, names: &[u32], diff: fn(&Expr, u32) -> Result<Expr>) -> Result<Expr> {
    let mut cur = e.clone();
    for &n in names {
        if cur.is_zero() {
            break;
        }
        cur = diff(&cur, n)?;
    }
    Ok(cur)
}

/// Sign of a rational, for rendering.
pub fn is_negative(r: &Rational) -> bool {
    r.is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Idx::*;

    fn jet(f: u8, d: &[Idx]) -> Atom {
        Atom::fn_jet(f, d)
    }

    #[test]
    fn coefficient_folds_i_squared() {
        let c = Coefficient::i().mul(&Coefficient::i());
        assert_eq!(c, Coefficient::int(-1));
        assert_eq!(Coefficient::minus_i_pow(2), Coefficient::int(-1));
        assert_eq!(Coefficient::minus_i_pow(3), Coefficient::i());
    }

    #[test]
    fn delta_contraction() {
        let t = Term::scalar(
            Coefficient::one(),
            vec![Atom::Delta(Dummy(0), Dummy(1)), jet(1, &[Dummy(0)]), jet(2, &[Dummy(1)])],
        );
        let e = Expr::from_term(6, t).unwrap();
        assert_eq!(e.terms.len(), 1);
        assert_eq!(e.terms[0].atoms, vec![jet(1, &[Dummy(0)]), jet(2, &[Dummy(0)])]);
    }

    #[test]
    fn trace_of_delta_gives_dimension() {
        let t = Term::scalar(Coefficient::one(), vec![Atom::Delta(Dummy(3), Dummy(3))]);
        let e = Expr::from_term(6, t).unwrap();
        assert_eq!(e, Expr::constant(6, Coefficient::int(6)));
    }

    #[test]
    fn riemann_first_pair_trace_vanishes() {
        let t = Term::scalar(
            Coefficient::one(),
            vec![Atom::Riemann([Dummy(0), Dummy(0), Free(1), Free(2)])],
        );
        assert!(Expr::from_term(4, t).unwrap().is_zero());
    }

    #[test]
    fn riemann_self_contraction_is_scalar_curvature() {
        let a = Term::scalar(Coefficient::one(), vec![Atom::Riemann([Dummy(0), Dummy(1), Dummy(0), Dummy(1)])]);
        let b = Term::scalar(Coefficient::one(), vec![Atom::Riemann([Dummy(0), Dummy(1), Dummy(1), Dummy(0)])]);
        let ea = Expr::from_term(4, a).unwrap();
        let eb = Expr::from_term(4, b).unwrap();
        assert_eq!(ea.terms[0].atoms, vec![Atom::ScalarCurv]);
        assert_eq!(eb, ea.neg());
    }

    #[test]
    fn renaming_invariance() {
        let mk = |x: u32, y: u32| {
            Term::scalar(
                Coefficient::int(-4),
                vec![
                    jet(1, &[Dummy(x)]),
                    jet(2, &[Dummy(y)]),
                    Atom::Riemann([Dummy(x), Dummy(y), Fixed(1), Fixed(2)]),
                ],
            )
        };
        let a = Expr::from_term(6, mk(0, 1)).unwrap();
        let b = Expr::from_term(6, mk(7, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn riemann_symmetric_contraction_vanishes() {
        // R_{abcd} ∂_a f ∂_b f is zero by antisymmetry
        let t = Term::scalar(
            Coefficient::one(),
            vec![
                jet(1, &[Dummy(0)]),
                jet(1, &[Dummy(1)]),
                Atom::Riemann([Dummy(0), Dummy(1), Free(5), Free(6)]),
            ],
        );
        assert!(Expr::from_term(4, t).unwrap().is_zero());
    }

    #[test]
    fn like_terms_merge() {
        let t1 = Term::scalar(Coefficient::int(2), vec![jet(1, &[Dummy(0)]), jet(2, &[Dummy(0)])]);
        let t2 = Term::scalar(Coefficient::int(-2), vec![jet(2, &[Dummy(4)]), jet(1, &[Dummy(4)])]);
        assert!(Expr::from_terms(4, vec![t1, t2]).unwrap().is_zero());
    }

    #[test]
    fn triple_index_is_structural_error() {
        let t = Term::scalar(Coefficient::one(), vec![jet(1, &[Free(0), Free(0), Free(0)])]);
        assert!(matches!(Expr::from_term(4, t), Err(ExprError::Structural(..))));
    }

    #[test]
    fn xi_pair_folds_into_norm() {
        let t = Term::scalar(Coefficient::one(), vec![Atom::Xi(Dummy(0)), Atom::Xi(Dummy(0)), Atom::NormSq(-3)]);
        let e = Expr::from_term(4, t).unwrap();
        assert_eq!(e.terms[0].atoms, vec![Atom::NormSq(-2)]);
    }

    #[test]
    fn diff_x_of_jet() {
        let e = Expr::from_term(4, Term::scalar(Coefficient::one(), vec![jet(1, &[])])).unwrap();
        let d = diff_x(&e, 9).unwrap();
        assert_eq!(d.terms[0].atoms, vec![jet(1, &[Free(9)])]);
    }

    #[test]
    fn diff_x_of_norm_power() {
        let e = Expr::from_term(6, Term::scalar(Coefficient::one(), vec![Atom::NormSq(-3)])).unwrap();
        let d = diff_x(&e, 9).unwrap();
        assert_eq!(d.terms.len(), 1);
        let t = &d.terms[0];
        assert_eq!(t.coeff, Coefficient::int(-3));
        assert!(t.atoms.contains(&Atom::NormSq(-4)));
        assert!(t.atoms.contains(&Atom::MetricInv { upper: [Dummy(0), Dummy(1)], derivs: vec![Free(9)] }));
    }

    #[test]
    fn diff_xi_rules() {
        let e = Expr::from_term(4, Term::scalar(Coefficient::one(), vec![Atom::NormSq(1)])).unwrap();
        let d = diff_xi(&e, 9).unwrap();
        assert_eq!(d.terms[0].coeff, Coefficient::int(2));
        assert_eq!(d.xi_degree(), Some(1));
        let e = Expr::from_term(4, Term::scalar(Coefficient::one(), vec![Atom::Xi(Free(1)), Atom::Xi(Free(2))]))
            .unwrap();
        let d = diff_xi(&e, 9).unwrap();
        assert_eq!(d.terms.len(), 2);
    }

    #[test]
    fn riemann_orbit_is_canonical() {
        let base = [Free(1), Free(2), Free(3), Free(4)];
        let e = Expr::from_term(4, Term::scalar(Coefficient::one(), vec![Atom::Riemann(base)])).unwrap();
        let f = Expr::from_term(
            4,
            Term::scalar(Coefficient::int(-1), vec![Atom::Riemann([Free(4), Free(3), Free(2), Free(1)])]),
        )
        .unwrap();
        let g = Expr::from_term(
            4,
            Term::scalar(Coefficient::int(-1), vec![Atom::Riemann([Free(2), Free(1), Free(3), Free(4)])]),
        )
        .unwrap();
        assert!(e.sub(&g).unwrap().is_zero());
        assert_eq!(f, e.neg());
    }
}
