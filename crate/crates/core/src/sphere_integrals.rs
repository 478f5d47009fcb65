//! Integrals of ξ-monomials over the unit sphere `S^{n-1}`.
//!
//! Symbolic results carry `area(S_n)` as an implicit factor.

use num_traits::{One, Zero};

use crate::expr_core::{Atom, Expr, ExprError, Idx, Rational, Result, Term};

/// A rational multiple of `π^pi_power`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiMultiple {
    pub rational: Rational,
    pub pi_power: u32,
}

impl PiMultiple {
    pub fn to_f64(&self) -> f64 {
        let r = *self.rational.numer() as f64 / *self.rational.denom() as f64;
        r * std::f64::consts::PI.powi(self.pi_power as i32)
    }
}

fn factorial(k: u64) -> i128 {
    (1..=k as i128).product()
}

/// `area(S_n) = 2 π^{n/2} / Γ(n/2)` for even `n`.
pub fn sphere_area(n: u32) -> PiMultiple {
    assert!(n % 2 == 0 && n >= 2, "even dimension expected");
    PiMultiple { rational: Rational::new(2, factorial((n / 2 - 1) as u64)), pi_power: n / 2 }
}

/// Closed form `2 Π Γ((β_i+1)/2) / Γ((n+|β|)/2)`; `β` lists the exponents of
/// the nonzero coordinates (missing entries are zero).
pub fn gamma_formula_oracle(beta: &[u32], n: u32) -> PiMultiple {
    assert!(beta.len() <= n as usize);
    if beta.iter().any(|b| b % 2 == 1) {
        return PiMultiple { rational: Rational::zero(), pi_power: n / 2 };
    }
    // Γ(k+1/2) = (2k)! / (4^k k!) √π
    let mut r = Rational::from_integer(2);
    for &b in beta {
        let k = (b / 2) as u64;
        r *= Rational::new(factorial(2 * k), 4i128.pow(k as u32) * factorial(k));
    }
    let total: u32 = beta.iter().sum();
    let half = (n + total) / 2;
    r /= Rational::from_integer(factorial((half - 1) as u64));
    PiMultiple { rational: r, pi_power: n / 2 }
}

/// Weighted δ-chains of `∫ ξ_{γ1}…ξ_{γk} / area(S_n)`, unnormalized.
fn pairing_chains(g: &[Idx], n: u32) -> Vec<(Rational, Vec<Atom>)> {
    if g.len() % 2 == 1 {
        return vec![];
    }
    if g.is_empty() {
        return vec![(Rational::one(), vec![])];
    }
    let k = g.len() as i128;
    let pre = Rational::new(1, k - 2 + n as i128);
    let mut out = vec![];
    for j in 1..g.len() {
        let rest: Vec<Idx> = g.iter().enumerate().filter(|&(p, _)| p != 0 && p != j).map(|(_, &x)| x).collect();
        for (c, mut atoms) in pairing_chains(&rest, n) {
            atoms.push(Atom::Delta(g[0], g[j]));
            out.push((c * pre, atoms));
        }
    }
    out
}

/// The δ-chain expansion of `∫ ξ_{γ1}…ξ_{γk}` divided by `area(S_n)`.
pub fn integrate_monomial(gamma: &[Idx], n: u32) -> Result<Expr> {
    let terms = pairing_chains(gamma, n)
        .into_iter()
        .map(|(c, atoms)| Term::scalar(crate::expr_core::Coefficient::real(c), atoms))
        .collect();
    Expr::from_terms(n, terms)
}

/// Sets `|ξ| = 1` and integrates every ξ-monomial over the sphere. The result
/// is ξ-free and carries an implicit `area(S_n)`.
pub fn integrate_expr(e: &Expr) -> Result<Expr> {
    if !e.is_zero() && e.xi_degree().is_none() {
        return Err(ExprError::Degree("integrand is not ξ-homogeneous".into()));
    }
    let n = e.dim;
    let mut out = vec![];
    for t in &e.terms {
        let mut xis = vec![];
        let mut rest = vec![];
        for a in &t.atoms {
            match a {
                Atom::Xi(i) => xis.push(*i),
                Atom::NormSq(_) => {}
                other => rest.push(other.clone()),
            }
        }
        for (c, chain) in pairing_chains(&xis, n) {
            let mut atoms = rest.clone();
            atoms.extend(chain);
            out.push(Term::new(t.coeff.scale(&c), atoms, t.word.clone()));
        }
    }
    Expr::from_terms(n, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr_core::{q, Coefficient};
    use Idx::*;

    #[test]
    fn area_values() {
        assert_eq!(sphere_area(6), PiMultiple { rational: q(1, 1), pi_power: 3 });
        assert_eq!(sphere_area(4), PiMultiple { rational: q(2, 1), pi_power: 2 });
        assert_eq!(gamma_formula_oracle(&[], 6), sphere_area(6));
    }

    #[test]
    fn spot_values() {
        assert_eq!(gamma_formula_oracle(&[4], 6), PiMultiple { rational: q(1, 16), pi_power: 3 });
        assert_eq!(gamma_formula_oracle(&[2, 2], 6), PiMultiple { rational: q(1, 48), pi_power: 3 });
        assert_eq!(gamma_formula_oracle(&[3, 1], 6).rational, q(0, 1));
    }

    #[test]
    fn quadratic_moment() {
        let e = integrate_monomial(&[Free(1), Free(2)], 6).unwrap();
        assert_eq!(e.terms.len(), 1);
        assert_eq!(e.terms[0].coeff, Coefficient::real(q(1, 6)));
    }

    #[test]
    fn quartic_moment_has_three_pairings() {
        let e = integrate_monomial(&[Free(1), Free(2), Free(3), Free(4)], 6).unwrap();
        assert_eq!(e.terms.len(), 3);
        assert!(e.terms.iter().all(|t| t.coeff == Coefficient::real(q(1, 48))));
    }

    #[test]
    fn odd_moment_vanishes() {
        assert!(integrate_monomial(&[Free(1); 5], 6).unwrap().is_zero());
    }
}
