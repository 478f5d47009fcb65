//! Clifford words over generators with `c_i c_j + c_j c_i = -2δ_ij`, the
//! normalized trace, and the spin-connection letter.

use std::fmt;

use crate::expr_core::{Atom, Coefficient, Expr, ExprError, Idx, Result, Term};

/// A letter of a Clifford word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Letter {
    /// The generator `c(e_i)`.
    Gen(Idx),
    /// Spin connection `σ^i` (or `σ_i` when `lowered`) with x-derivatives.
    Sigma { index: Idx, lowered: bool, derivs: Vec<Idx> },
}

pub type CliffordWord = Vec<Letter>;

impl Letter {
    pub fn sigma(index: Idx, lowered: bool) -> Letter {
        Letter::Sigma { index, lowered, derivs: vec![] }
    }

    pub(crate) fn for_each_idx(&self, mut f: impl FnMut(Idx)) {
        match self {
            Letter::Gen(i) => f(*i),
            Letter::Sigma { index, derivs, .. } => {
                f(*index);
                derivs.iter().for_each(|&i| f(i));
            }
        }
    }

    pub(crate) fn map_idx(&mut self, f: &mut impl FnMut(Idx) -> Idx) {
        match self {
            Letter::Gen(i) => *i = f(*i),
            Letter::Sigma { index, derivs, .. } => {
                *index = f(*index);
                derivs.iter_mut().for_each(|i| *i = f(*i));
            }
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Letter::Gen(i) => write!(f, "c{}", i),
            Letter::Sigma { index, lowered, derivs } => {
                let d: Vec<String> = derivs.iter().map(|i| i.to_string()).collect();
                let pos = if *lowered { "_" } else { "^" };
                write!(f, "sigma{}{}[{}]", pos, index, d.join(","))
            }
        }
    }
}

pub fn word_concat(u: &[Letter], v: &[Letter]) -> CliffordWord {
    let mut w = u.to_vec();
    w.extend_from_slice(v);
    w
}

/// All pairings of the positions `0..len` with the sign of the trace
/// recursion `tr(c_1..c_m) = Σ_j (-1)^j (-δ_{1j}) tr(rest)`.
fn pairings(len: usize) -> Vec<(i32, Vec<(usize, usize)>)> {
    fn go(pos: &[usize]) -> Vec<(i32, Vec<(usize, usize)>)> {
        if pos.is_empty() {
            return vec![(1, vec![])];
        }
        let mut out = vec![];
        for j in 1..pos.len() {
            // (-1)^(j+1) with 1-based position j+1, times the -δ
            let sign = if j % 2 == 1 { -1 } else { 1 };
            let rest: Vec<usize> = pos.iter().enumerate().filter(|&(k, _)| k != 0 && k != j).map(|(_, &p)| p).collect();
            for (s, mut ps) in go(&rest) {
                ps.insert(0, (pos[0], pos[j]));
                out.push((sign * s, ps));
            }
        }
        out
    }
    if len % 2 == 1 {
        return vec![];
    }
    go(&(0..len).collect::<Vec<_>>())
}

/// Normalized trace `tr[w] / tr[id]` as δ-chains.
pub fn trace_word(w: &[Letter], dim: u32) -> Result<Expr> {
    let t = Term::new(Coefficient::one(), vec![], w.to_vec());
    trace_expr(&Expr { dim, terms: vec![t] })
}

/// Replaces the Clifford word of every term by its normalized trace.
pub fn trace_expr(e: &Expr) -> Result<Expr> {
    let mut out = vec![];
    for t in &e.terms {
        let mut gens = Vec::with_capacity(t.word.len());
        for l in &t.word {
            match l {
                Letter::Gen(i) => gens.push(*i),
                Letter::Sigma { .. } => {
                    return Err(ExprError::Precondition("spin connection letter inside a trace".into()))
                }
            }
        }
        for (sign, ps) in pairings(gens.len()) {
            let mut atoms = t.atoms.clone();
            atoms.extend(ps.iter().map(|&(a, b)| Atom::Delta(gens[a], gens[b])));
            out.push(Term::scalar(t.coeff.scale(&(sign as i128).into()), atoms));
        }
    }
    Expr::from_terms(e.dim, out)
}
