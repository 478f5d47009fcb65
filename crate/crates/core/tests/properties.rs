mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use wres_core::invariant_forms::{equal_modulo_bianchi, invariants_to_jets, jets_to_invariants, vocabulary, InvariantTerm};
use wres_core::numeric_oracle::{eval_expr, gamma_matrices, random_geometry};
use wres_core::pdo_calculus::{clifford_differential, GradedSymbol};
use wres_core::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>(), n in prop::sample::select(vec![4u32, 6, 8])) {
        let e = random_expr(seed, n, true, true, &[1]);
        prop_assert_eq!(normalize(&e).unwrap(), e);
    }

    #[test]
    fn dummy_renaming_is_invisible(seed in any::<u64>(), shift in 1u32..50) {
        let e = random_expr(seed, 6, true, true, &[]);
        prop_assert_eq!(rename_dummies(&e, shift * 4 + 1), e);
    }

    #[test]
    fn leibniz_rule(s1 in any::<u64>(), s2 in any::<u64>()) {
        let e = random_expr(s1, 6, false, true, &[]);
        let f = random_expr(s2, 6, false, true, &[]);
        let lhs = diff_x(&e.mul(&f).unwrap(), 1).unwrap();
        let rhs = diff_x(&e, 1).unwrap().mul(&f).unwrap().add(&e.mul(&diff_x(&f, 1).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn x_partials_commute(seed in any::<u64>()) {
        let e = random_expr(seed, 6, false, true, &[]);
        let a = diff_x(&diff_x(&e, 1).unwrap(), 2).unwrap();
        let b = diff_x(&diff_x(&e, 2).unwrap(), 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn xi_derivative_lowers_degree(seed in any::<u64>()) {
        let e = random_expr(seed, 6, false, true, &[]);
        let d = diff_xi(&e, 1).unwrap();
        if let (Some(a), Some(b)) = (e.xi_degree(), d.xi_degree()) {
            prop_assert_eq!(b, a - 1);
        }
    }

    #[test]
    fn canonical_form_keeps_numeric_value(seed in any::<u64>()) {
        // built from the same atoms but summed directly over index values
        let e = random_expr(seed, 4, true, false, &[]);
        let geo = random_geometry(4, seed % 7);
        let direct = brute_sum(&e, &geo);
        let fast = eval_expr(&e, &geo).unwrap();
        prop_assert!((direct - fast).abs() <= 1e-9 * direct.abs().max(1.0), "{} vs {}", direct, fast);
    }

    #[test]
    fn riemann_symmetries_with_sign(seed in any::<u64>()) {
        let e = random_expr(seed, 6, true, false, &[]);
        // swapping the two pairs of every curvature atom is the identity
        let swapped = Expr::from_terms(6, e.terms.iter().map(|t| {
            let atoms = t.atoms.iter().map(|a| match a {
                Atom::Riemann([i, j, k, l]) => Atom::Riemann([*k, *l, *i, *j]),
                o => o.clone(),
            }).collect();
            Term::scalar(t.coeff.clone(), atoms)
        }).collect()).unwrap();
        prop_assert_eq!(&swapped, &e);
        // antisymmetry in the first pair flips the sign once per atom
        let flipped = Expr::from_terms(6, e.terms.iter().map(|t| {
            let mut c = t.coeff.clone();
            let atoms = t.atoms.iter().map(|a| match a {
                Atom::Riemann([i, j, k, l]) => { c = c.neg(); Atom::Riemann([*j, *i, *k, *l]) }
                o => o.clone(),
            }).collect();
            Term::scalar(c, atoms)
        }).collect()).unwrap();
        prop_assert_eq!(flipped, e);
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn trace_is_cyclic(word in prop::collection::vec(0u8..6, 0..=8), shift in 0usize..8) {
        let k = if word.is_empty() { 0 } else { shift % word.len() };
        let mut rot = word.clone();
        rot.rotate_left(k);
        prop_assert_eq!(trace_word(&gens(&word), 6).unwrap(), trace_word(&gens(&rot), 6).unwrap());
    }

    #[test]
    fn anticommutation_relation(word in prop::collection::vec(0u8..6, 2..=7), pos in 0usize..6) {
        // c_i c_j = -c_j c_i - 2 δ_ij
        let p = pos % (word.len() - 1);
        let t = |w: &[u8]| constant(&trace_word(&gens(w), 6).unwrap()).unwrap();
        let mut swapped = word.clone();
        swapped.swap(p, p + 1);
        let mut dropped = word.clone();
        let delta = word[p] == word[p + 1];
        dropped.drain(p..p + 2);
        let rhs = -t(&swapped) - if delta { Rational::from_integer(2) * t(&dropped) } else { Rational::from_integer(0) };
        prop_assert_eq!(t(&word), rhs);
    }

    #[test]
    fn trace_matches_gamma_matrices(word in prop::collection::vec(0u8..6, 0..=8)) {
        let g = gamma_matrices(6).unwrap();
        let sym = constant(&trace_word(&gens(&word), 6).unwrap()).unwrap();
        let num = matrix_trace(&g, &word);
        prop_assert!((num - Complex64::new(rf(&sym), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sphere_recursion_matches_closed_form(
        beta in prop::collection::vec(0u32..=4, 1..=4),
        n in prop::sample::select(vec![4u32, 6, 8]),
    ) {
        let beta: Vec<u32> = beta.into_iter().take(n as usize).collect();
        prop_assert_eq!(recursion_moment(&beta, n), oracle_moment(&beta, n));
    }

    #[test]
    fn invariant_round_trip(
        picks in prop::collection::vec((0usize..264, -6i128..=6, 1i128..=3), 1..=5),
        n in prop::sample::select(vec![4u32, 6, 8]),
    ) {
        let voc = vocabulary();
        let terms: Vec<InvariantTerm> = picks.iter().filter(|p| p.1 != 0).map(|&(k, a, b)| InvariantTerm {
            coeff: Coefficient::real(Rational::new(a, b)),
            inv: voc[k],
        }).collect();
        let jets = invariants_to_jets(&terms, n).unwrap();
        let dec = jets_to_invariants(&Density { dim: n, expr: jets.clone() }, &[]).unwrap();
        prop_assert!(dec.residual.is_none());
        // canonical jets carry only the monoterm curvature symmetries
        let back = invariants_to_jets(&dec.terms, n).unwrap();
        prop_assert!(equal_modulo_bianchi(&back, &jets).unwrap());
        if n <= 6 {
            let geo = random_geometry(n as usize, 1);
            let (a, b) = (eval_expr(&back, &geo).unwrap(), eval_expr(&jets, &geo).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn composition_is_associative(f in 1u8..=4, g in 1u8..=4, h in 1u8..=4) {
        let n = 4;
        let p = clifford_differential(n, f);
        let q = commutator_symbol(&dirac_squared_symbol(n), g, 2).unwrap();
        let r = GradedSymbol::function(n, h);
        let left = compose(&compose(&p, &q, -4).unwrap(), &r, -4).unwrap();
        let right = compose(&p, &compose(&q, &r, -4).unwrap(), -4).unwrap();
        prop_assert_eq!(left.orders, right.orders);
    }
}
