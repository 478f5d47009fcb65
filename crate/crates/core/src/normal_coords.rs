//! Evaluation at the base point `x0` of normal coordinates with a radial
//! gauge frame. Metric, Christoffel, frame and spin-connection jets are
//! replaced by curvature.

use crate::clifford::Letter;
use crate::expr_core::{q, Atom, Coefficient, Expr, ExprError, Idx, Rational, Result, Term};

/// Constants of the normal-coordinate expansion:
/// `∂_μ∂_ν g^{αβ}(x0) = κ_g (R_{αμβν} + R_{ανβμ})` and
/// `∂_j∂_p E_a^μ(x0) = κ_F (R_{ajμp} + R_{apμj})` for the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    pub kappa_g: Rational,
    pub kappa_f: Rational,
}

impl Default for RuleTable {
    fn default() -> Self {
        RuleTable { kappa_g: q(1, 3), kappa_f: q(1, 6) }
    }
}

/// A factor in the expansion of one atom or letter.
struct Piece {
    coeff: Coefficient,
    atoms: Vec<Atom>,
    word: Vec<Letter>,
}

fn piece(c: Rational, atoms: Vec<Atom>) -> Piece {
    Piece { coeff: Coefficient::real(c), atoms, word: vec![] }
}

/// Expands a term whose atoms/letters are each replaced by a sum of pieces.
/// `rule` receives the next free dummy counter.
fn expand_term(
    t: &Term,
    atom_rule: &dyn Fn(&Atom, &mut u32) -> Result<Option<Vec<Piece>>>,
    letter_rule: &dyn Fn(&Letter, &mut u32) -> Result<Option<Vec<Piece>>>,
) -> Result<Vec<Term>> {
    let mut next = 0u32;
    t.for_each_idx(|i| {
        if let Idx::Dummy(d) = i {
            next = next.max(d + 1);
        }
    });
    let mut acc = vec![Term::new(t.coeff.clone(), vec![], vec![])];
    for a in &t.atoms {
        let pieces = match atom_rule(a, &mut next)? {
            None => vec![piece(q(1, 1), vec![a.clone()])],
            Some(p) => p,
        };
        acc = product(&acc, &pieces, false);
        if acc.is_empty() {
            return Ok(acc);
        }
    }
    for l in &t.word {
        let pieces = match letter_rule(l, &mut next)? {
            None => vec![Piece { coeff: Coefficient::one(), atoms: vec![], word: vec![l.clone()] }],
            Some(p) => p,
        };
        acc = product(&acc, &pieces, true);
        if acc.is_empty() {
            return Ok(acc);
        }
    }
    Ok(acc)
}

fn product(acc: &[Term], pieces: &[Piece], word: bool) -> Vec<Term> {
    let mut out = Vec::with_capacity(acc.len() * pieces.len());
    for t in acc {
        for p in pieces {
            let mut atoms = t.atoms.clone();
            atoms.extend(p.atoms.iter().cloned());
            let mut w = t.word.clone();
            if word {
                w.extend(p.word.iter().cloned());
            }
            out.push(Term::new(t.coeff.mul(&p.coeff), atoms, w));
        }
    }
    out
}

fn fresh(next: &mut u32) -> Idx {
    *next += 1;
    Idx::Dummy(*next - 1)
}

/// `σ -> 0` and `∂_k σ^μ -> (1/8) Σ R_{kμts} c_s c_t` in place.
pub fn substitute_spin_connection(e: &Expr) -> Result<Expr> {
    let no_atoms = |_: &Atom, _: &mut u32| Ok(None);
    let letter = |l: &Letter, next: &mut u32| -> Result<Option<Vec<Piece>>> {
        match l {
            Letter::Gen(_) => Ok(None),
            Letter::Sigma { index, derivs, .. } => match derivs.len() {
                0 => Ok(Some(vec![])),
                1 => {
                    let (s, t) = (fresh(next), fresh(next));
                    Ok(Some(vec![Piece {
                        coeff: Coefficient::real(q(1, 8)),
                        atoms: vec![Atom::Riemann([derivs[0], *index, t, s])],
                        word: vec![Letter::Gen(s), Letter::Gen(t)],
                    }]))
                }
                k => Err(ExprError::UnsupportedJet(format!("spin connection with {} derivatives", k))),
            },
        }
    };
    let mut out = vec![];
    for t in &e.terms {
        out.extend(expand_term(t, &no_atoms, &letter)?);
    }
    Expr::from_terms(e.dim, out)
}

/// Second derivative of the lower metric at x0:
/// `∂_a∂_b g_{cd} = -κ_g (R_{cadb} + R_{cbda})`.
fn lower_metric_jet(c: Idx, d: Idx, a: Idx, b: Idx, kg: Rational) -> Vec<(Rational, [Idx; 4])> {
    vec![(-kg, [c, a, d, b]), (-kg, [c, b, d, a])]
}

/// Replaces every metric, Christoffel and frame atom by its value at x0.
pub fn evaluate_at_origin(e: &Expr, rules: &RuleTable) -> Result<Expr> {
    let kg = rules.kappa_g;
    let kf = rules.kappa_f;
    let atom = move |a: &Atom, next: &mut u32| -> Result<Option<Vec<Piece>>> {
        let unsupported = || Err(ExprError::UnsupportedJet(format!("{}", a)));
        match a {
            Atom::MetricInv { upper, derivs } => match derivs.len() {
                0 => Ok(Some(vec![piece(q(1, 1), vec![Atom::Delta(upper[0], upper[1])])])),
                1 => Ok(Some(vec![])),
                2 => {
                    let [al, be] = *upper;
                    let (m, n) = (derivs[0], derivs[1]);
                    Ok(Some(vec![
                        piece(kg, vec![Atom::Riemann([al, m, be, n])]),
                        piece(kg, vec![Atom::Riemann([al, n, be, m])]),
                    ]))
                }
                _ => unsupported(),
            },
            Atom::GammaContracted { upper, derivs } => match derivs.len() {
                0 => Ok(Some(vec![])),
                1 => {
                    let al = fresh(next);
                    Ok(Some(vec![piece(kg * q(2, 1), vec![Atom::Riemann([derivs[0], al, *upper, al])])]))
                }
                _ => unsupported(),
            },
            Atom::Christoffel { upper, lower, derivs } => match derivs.len() {
                0 => Ok(Some(vec![])),
                1 => {
                    // ∂_j Γ^μ_{pq} = ½(∂_j∂_p g_{qμ} + ∂_j∂_q g_{pμ} - ∂_j∂_μ g_{pq})
                    let (j, mu, p, qq) = (derivs[0], *upper, lower[0], lower[1]);
                    let mut v = vec![];
                    for (c, r) in lower_metric_jet(qq, mu, j, p, kg) {
                        v.push(piece(c * q(1, 2), vec![Atom::Riemann(r)]));
                    }
                    for (c, r) in lower_metric_jet(p, mu, j, qq, kg) {
                        v.push(piece(c * q(1, 2), vec![Atom::Riemann(r)]));
                    }
                    for (c, r) in lower_metric_jet(p, qq, j, mu, kg) {
                        v.push(piece(-c * q(1, 2), vec![Atom::Riemann(r)]));
                    }
                    Ok(Some(v))
                }
                _ => unsupported(),
            },
            Atom::FrameJet { f, frame, derivs } => {
                let mut d = vec![*frame];
                d.extend(derivs.iter().copied());
                match derivs.len() {
                    0 | 1 => Ok(Some(vec![piece(q(1, 1), vec![Atom::FnJet { f: *f, derivs: d }])])),
                    2 => {
                        let nu = fresh(next);
                        let (j, p) = (derivs[0], derivs[1]);
                        let jet = |x: Idx| Atom::FnJet { f: *f, derivs: vec![x] };
                        Ok(Some(vec![
                            piece(q(1, 1), vec![Atom::FnJet { f: *f, derivs: d }]),
                            piece(kf, vec![Atom::Riemann([*frame, j, nu, p]), jet(nu)]),
                            piece(kf, vec![Atom::Riemann([*frame, p, nu, j]), jet(nu)]),
                        ]))
                    }
                    _ => unsupported(),
                }
            }
            _ => Ok(None),
        }
    };
    let letter = |l: &Letter, _: &mut u32| -> Result<Option<Vec<Piece>>> {
        match l {
            Letter::Gen(_) => Ok(None),
            Letter::Sigma { .. } => {
                Err(ExprError::Precondition("substitute the spin connection before evaluating at x0".into()))
            }
        }
    };
    let mut out = vec![];
    for t in &e.terms {
        out.extend(expand_term(t, &atom, &letter)?);
    }
    let r = Expr::from_terms(e.dim, out)?;
    debug_assert!(r.terms.iter().all(|t| t.atoms.iter().all(|a| matches!(
        a,
        Atom::FnJet { .. } | Atom::Riemann(_) | Atom::ScalarCurv | Atom::Xi(_) | Atom::NormSq(_) | Atom::Delta(..)
    ))));
    Ok(r)
}

/// Spin-connection substitution followed by evaluation at x0.
pub fn at_origin(e: &Expr, rules: &RuleTable) -> Result<Expr> {
    evaluate_at_origin(&substitute_spin_connection(e)?, rules)
}
