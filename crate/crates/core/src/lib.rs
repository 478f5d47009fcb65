//! Symbolic computation of noncommutative residues `Wres(P D^{-n})` for
//! products of commutators with the Dirac operator on even-dimensional spin
//! manifolds, together with an independent numeric brute-force oracle.

pub mod clifford;
pub mod expr_core;
pub mod invariant_forms;
pub mod normal_coords;
pub mod numeric_oracle;
pub mod pdo_calculus;
pub mod residue_engine;
pub mod sphere_integrals;

pub use clifford::{trace_word, word_concat, CliffordWord, Letter};
pub use expr_core::{diff_x, diff_xi, normalize, Atom, Coefficient, Expr, ExprError, FnId, Idx, Rational, Term};
pub use normal_coords::{evaluate_at_origin, substitute_spin_connection, RuleTable};
pub use pdo_calculus::{
    commutator_symbol, compose, dirac_inverse_power_symbol, dirac_squared_symbol, parametrix_cross_check,
    GradedSymbol,
};
pub use sphere_integrals::{gamma_formula_oracle, integrate_expr, integrate_monomial, sphere_area, PiMultiple};
pub use residue_engine::{
    cocycle_density, contribution_breakdown, residue_density, Contribution, Density, Factor, Part, PartSpec,
};
pub use invariant_forms::{
    invariants_to_jets, jets_to_invariants, reference_terms, Decomposition, Form, Invariant, InvariantTerm, Report,
    Target,
};
