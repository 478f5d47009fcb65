#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wres_core::numeric_oracle::{GammaRep, Geometry};
use wres_core::*;

/// Value of an expression without atoms or words.
pub fn constant(e: &Expr) -> Option<Rational> {
    let mut acc = Rational::from_integer(0);
    for t in &e.terms {
        if !t.atoms.is_empty() || !t.word.is_empty() || t.coeff.i_power != 0 {
            return None;
        }
        acc += t.coeff.rational;
    }
    Some(acc)
}

pub fn gens(ix: &[u8]) -> Vec<Letter> {
    ix.iter().map(|&i| Letter::Gen(Idx::Fixed(i + 1))).collect()
}

/// `tr[γ_{i1} … γ_{ik}] / tr[id]` from explicit matrices.
pub fn matrix_trace(g: &GammaRep, ix: &[u8]) -> Complex64 {
    let d = g.spinor_dim();
    let mut m = nalgebra::DMatrix::<Complex64>::identity(d, d);
    for &i in ix {
        m *= &g.matrices[i as usize];
    }
    m.trace() / Complex64::new(d as f64, 0.0)
}

/// Sphere moment `∫ ξ^β / area` from the recursion, with `β` as exponents.
pub fn recursion_moment(beta: &[u32], n: u32) -> Rational {
    let mut gamma = vec![];
    for (k, &b) in beta.iter().enumerate() {
        gamma.extend(std::iter::repeat(Idx::Fixed(k as u8 + 1)).take(b as usize));
    }
    constant(&integrate_monomial(&gamma, n).unwrap()).expect("fixed indices give a number")
}

pub fn oracle_moment(beta: &[u32], n: u32) -> Rational {
    let v = gamma_formula_oracle(beta, n);
    let a = sphere_area(n);
    assert_eq!(v.pi_power, a.pi_power);
    v.rational / a.rational
}

/// Random jet expression with atoms drawn from `kinds`, scalar (no free
/// indices) unless `free` is given. Dummies are written as repeated Free
/// names so that canonicalization has work to do.
pub fn random_expr(seed: u64, n: u32, curvature: bool, xi: bool, free: &[u32]) -> Expr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nterms = rng.gen_range(1..=3);
    let mut terms = vec![];
    for _ in 0..nterms {
        let mut pool: Vec<Idx> = free.iter().map(|&f| Idx::Free(f)).collect();
        let pairs = rng.gen_range(1..=3);
        for k in 0..pairs {
            let name = Idx::Free(500 + rng.gen_range(0..1000) * 4 + k);
            pool.push(name);
            pool.push(name);
        }
        // shuffle
        for i in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=i);
            pool.swap(i, j);
        }
        let mut atoms = vec![];
        if curvature && pool.len() >= 4 && rng.gen_bool(0.5) {
            let r: Vec<Idx> = pool.drain(..4).collect();
            atoms.push(Atom::Riemann([r[0], r[1], r[2], r[3]]));
        }
        if xi && !pool.is_empty() && rng.gen_bool(0.6) {
            atoms.push(Atom::Xi(pool.pop().unwrap()));
        }
        if xi && rng.gen_bool(0.3) {
            atoms.push(Atom::NormSq(-rng.gen_range(1..=3)));
        }
        let njets = rng.gen_range(1..=3usize).max(pool.len().div_ceil(3));
        let mut derivs: Vec<Vec<Idx>> = vec![vec![]; njets];
        let _ = rng.gen::<u8>();
        for (k, i) in pool.into_iter().enumerate() {
            derivs[k % njets].push(i);
        }
        for d in derivs {
            atoms.push(Atom::FnJet { f: rng.gen_range(1..=4), derivs: d });
        }
        let c = Rational::new(rng.gen_range(-5..=5), rng.gen_range(1..=4));
        terms.push(Term::scalar(Coefficient::real(c), atoms));
    }
    Expr::from_terms(n, terms).unwrap()
}

/// Renames every index name `>= 500` by a fixed bijection.
pub fn rename_dummies(e: &Expr, shift: u32) -> Expr {
    let map = |i: Idx| match i {
        Idx::Free(k) if k >= 500 => Idx::Free(k + shift),
        Idx::Dummy(k) => Idx::Dummy(k + shift),
        other => other,
    };
    let terms = e
        .terms
        .iter()
        .map(|t| {
            let atoms = t
                .atoms
                .iter()
                .map(|a| match a {
                    Atom::FnJet { f, derivs } => Atom::FnJet { f: *f, derivs: derivs.iter().map(|&i| map(i)).collect() },
                    Atom::Riemann(r) => Atom::Riemann(r.map(map)),
                    Atom::Xi(i) => Atom::Xi(map(*i)),
                    other => other.clone(),
                })
                .collect();
            Term::new(t.coeff.clone(), atoms, t.word.clone())
        })
        .collect();
    Expr::from_terms(e.dim, terms).unwrap()
}

/// Direct summation over all index values of a scalar jet/curvature
/// expression: the numeric meaning of an Expr, with no canonicalization.
pub fn brute_sum(e: &Expr, geo: &Geometry) -> f64 {
    let n = geo.n;
    let mut total = 0.0;
    for t in &e.terms {
        let mut names: Vec<Idx> = vec![];
        let mut note = |i: &Idx| {
            if !names.contains(i) {
                names.push(*i);
            }
        };
        for a in &t.atoms {
            match a {
                Atom::FnJet { derivs, .. } => derivs.iter().for_each(&mut note),
                Atom::Riemann(r) => r.iter().for_each(&mut note),
                Atom::Delta(a, b) => {
                    note(a);
                    note(b)
                }
                Atom::ScalarCurv => {}
                other => panic!("unexpected atom {:?}", other),
            }
        }
        let k = names.len();
        let mut vals = vec![0usize; k];
        let c = *t.coeff.rational.numer() as f64 / *t.coeff.rational.denom() as f64;
        loop {
            let v = |i: &Idx| match i {
                Idx::Fixed(f) => *f as usize - 1,
                other => vals[names.iter().position(|x| x == other).unwrap()],
            };
            let mut p = c;
            for a in &t.atoms {
                p *= match a {
                    Atom::FnJet { f, derivs } => {
                        let d: Vec<usize> = derivs.iter().map(v).collect();
                        rf(&geo.jet(*f as usize, &d))
                    }
                    Atom::Riemann(r) => rf(&geo.r(v(&r[0]), v(&r[1]), v(&r[2]), v(&r[3]))),
                    Atom::Delta(a, b) => (v(a) == v(b)) as u8 as f64,
                    Atom::ScalarCurv => rf(&geo.scalar_s),
                    _ => unreachable!(),
                };
            }
            total += p;
            let mut j = 0;
            while j < k {
                vals[j] += 1;
                if vals[j] < n {
                    break;
                }
                vals[j] = 0;
                j += 1;
            }
            if j == k {
                break;
            }
        }
    }
    total
}

pub fn rf(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
