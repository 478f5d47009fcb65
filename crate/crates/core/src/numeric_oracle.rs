//! Numeric brute-force oracle, independent of the symbolic rule table and of
//! the sphere recursion.
//!
//! The metric, frame and spin connection are Taylor polynomials in normal
//! coordinates built from a curvature tensor. Symbols are matrix-valued sums
//! of `x^a ξ^b |ξ|^{-2k}` with one exactness degree per homogeneous layer:
//! the x-degree up to which the layer is known. Composition lowers exactness
//! by the number of x-derivatives it takes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr_core::{Atom, Expr, ExprError, FnId, Idx, Rational, Result};
use crate::invariant_forms::{Form, Invariant};
use crate::residue_engine::{Contribution, Density, Factor, PartSpec};
use crate::sphere_integrals::{gamma_formula_oracle, sphere_area};

type C = Complex64;
type CMat = DMatrix<C>;

pub const MAX_DIM: usize = 8;
/// Exactness of layers known to every order (polynomials).
const ALL: i32 = 1000;

fn c(re: f64) -> C {
    C::new(re, 0.0)
}

fn rf(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap() / r.denom().to_f64().unwrap()
}

// ---------------------------------------------------------------- gamma

/// Clifford generators with `γ_i γ_j + γ_j γ_i = -2 δ_ij`.
#[derive(Debug, Clone)]
pub struct GammaRep {
    pub n: usize,
    pub matrices: Vec<CMat>,
}

impl GammaRep {
    pub fn spinor_dim(&self) -> usize {
        1 << (self.n / 2)
    }

    /// Checks the anticommutation relations exactly.
    pub fn verify(&self) -> bool {
        let d = self.spinor_dim();
        for i in 0..self.n {
            for j in 0..self.n {
                let a = &self.matrices[i] * &self.matrices[j] + &self.matrices[j] * &self.matrices[i];
                let expect = if i == j { CMat::identity(d, d) * c(-2.0) } else { CMat::zeros(d, d) };
                if a != expect {
                    return false;
                }
            }
        }
        true
    }
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Pauli-based tensor-product construction multiplied by `i`.
pub fn gamma_matrices(n: usize) -> Result<GammaRep> {
    if !(n == 4 || n == 6 || n == 8) {
        return Err(ExprError::Precondition(format!("gamma matrices for n = {} are not provided", n)));
    }
    let z = C::zero();
    let one = c(1.0);
    let i = C::i();
    let s1 = CMat::from_row_slice(2, 2, &[z, one, one, z]);
    let s2 = CMat::from_row_slice(2, 2, &[z, -i, i, z]);
    let s3 = CMat::from_row_slice(2, 2, &[one, z, z, -one]);
    let id = CMat::identity(2, 2);
    let k = n / 2;
    let mut out = vec![];
    for j in 0..k {
        for s in [&s1, &s2] {
            let mut m = CMat::identity(1, 1);
            for p in 0..k {
                let f = if p < j {
                    &s3
                } else if p == j {
                    s
                } else {
                    &id
                };
                m = kron(&m, f);
            }
            out.push(m * i);
        }
    }
    let g = GammaRep { n, matrices: out };
    debug_assert!(g.verify());
    Ok(g)
}

// ---------------------------------------------------------------- geometry

/// Jets of one function at x0; derivative tensors are symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct FnJets {
    pub value: Rational,
    pub d1: Vec<Rational>,
    pub d2: Vec<Rational>,
    pub d3: Vec<Rational>,
}

/// Curvature and function jets at x0.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub n: usize,
    pub riemann: Vec<Rational>,
    pub scalar_s: Rational,
    pub jets: Vec<FnJets>,
    pub seed: u64,
}

impl Geometry {
    pub fn r(&self, i: usize, j: usize, k: usize, l: usize) -> Rational {
        let n = self.n;
        self.riemann[((i * n + j) * n + k) * n + l]
    }

    /// `∂^{derivs} a^f` at x0.
    pub fn jet(&self, f: usize, derivs: &[usize]) -> Rational {
        let j = &self.jets[f];
        let n = self.n;
        match derivs {
            [] => j.value,
            [a] => j.d1[*a],
            [a, b] => j.d2[a * n + b],
            [a, b, c] => j.d3[(a * n + b) * n + c],
            _ => Rational::zero(),
        }
    }

    pub fn is_flat(&self) -> bool {
        self.riemann.iter().all(|r| r.is_zero())
    }
}

fn sym_tensor(rng: &mut ChaCha8Rng, n: usize, order: usize) -> Vec<Rational> {
    let size = n.pow(order as u32);
    let mut out = vec![Rational::zero(); size];
    let mut filled = vec![false; size];
    for flat in 0..size {
        let mut idx = vec![0usize; order];
        let mut r = flat;
        for p in (0..order).rev() {
            idx[p] = r % n;
            r /= n;
        }
        let mut sorted = idx.clone();
        sorted.sort();
        let key = sorted.iter().fold(0, |acc, &x| acc * n + x);
        if !filled[key] {
            out[key] = Rational::from_integer(rng.gen_range(-3..=3));
            filled[key] = true;
        }
        out[flat] = out[key];
    }
    out
}

fn random_jets(rng: &mut ChaCha8Rng, n: usize) -> Vec<FnJets> {
    (0..5)
        .map(|_| FnJets {
            value: Rational::from_integer(rng.gen_range(-3..=3)),
            d1: sym_tensor(rng, n, 1),
            d2: sym_tensor(rng, n, 2),
            d3: sym_tensor(rng, n, 3),
        })
        .collect()
}

/// An algebraic curvature tensor: a random element of `Sym²(Λ²)` minus its
/// totally antisymmetric part.
fn random_riemann(rng: &mut ChaCha8Rng, n: usize) -> Vec<Rational> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let p = pairs.len();
    let mut m = vec![vec![0i128; p]; p];
    for a in 0..p {
        for b in a..p {
            let v = rng.gen_range(-3..=3);
            m[a][b] = v;
            m[b][a] = v;
        }
    }
    let pair_val = |i: usize, j: usize| -> Option<(usize, i128)> {
        if i == j {
            return None;
        }
        let (a, b, s) = if i < j { (i, j, 1) } else { (j, i, -1) };
        Some((pairs.iter().position(|&q| q == (a, b)).unwrap(), s))
    };
    let at = |i, j, k, l| -> Rational {
        match (pair_val(i, j), pair_val(k, l)) {
            (Some((x, s1)), Some((y, s2))) => Rational::from_integer(s1 * s2 * m[x][y]),
            _ => Rational::zero(),
        }
    };
    let mut t = vec![Rational::zero(); n.pow(4)];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    t[((i * n + j) * n + k) * n + l] = at(i, j, k, l);
                }
            }
        }
    }
    let get = |t: &Vec<Rational>, i: usize, j: usize, k: usize, l: usize| t[((i * n + j) * n + k) * n + l];
    let mut r = vec![Rational::zero(); n.pow(4)];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let b = (get(&t, i, j, k, l) + get(&t, i, k, l, j) + get(&t, i, l, j, k)) / Rational::from_integer(3);
                    r[((i * n + j) * n + k) * n + l] = get(&t, i, j, k, l) - b;
                }
            }
        }
    }
    r
}

fn scalar_of(r: &[Rational], n: usize) -> Rational {
    let mut s = Rational::zero();
    for a in 0..n {
        for b in 0..n {
            s += r[((a * n + b) * n + a) * n + b];
        }
    }
    s
}

/// Deterministic random curvature and jets.
pub fn random_geometry(n: usize, seed: u64) -> Geometry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let riemann = random_riemann(&mut rng, n);
    let jets = random_jets(&mut rng, n);
    let scalar_s = scalar_of(&riemann, n);
    Geometry { n, riemann, scalar_s, jets, seed }
}

/// Zero curvature with the same random jets as [`random_geometry`].
pub fn flat_geometry(n: usize, seed: u64) -> Geometry {
    let mut g = random_geometry(n, seed);
    g.riemann.iter_mut().for_each(|r| *r = Rational::zero());
    g.scalar_s = Rational::zero();
    g
}

// ---------------------------------------------------------------- x-polynomials

type Exps = [u8; MAX_DIM];

fn deg(e: &Exps) -> i32 {
    e.iter().map(|&x| x as i32).sum()
}

fn unit(j: usize) -> Exps {
    let mut e = [0u8; MAX_DIM];
    e[j] = 1;
    e
}

fn add_exps(a: &Exps, b: &Exps) -> Exps {
    let mut e = [0u8; MAX_DIM];
    for k in 0..MAX_DIM {
        e[k] = a[k] + b[k];
    }
    e
}

/// Real Taylor polynomial in x, known up to x-degree `exact`.
#[derive(Debug, Clone)]
pub(crate) struct XPoly {
    pub terms: BTreeMap<Exps, f64>,
    pub exact: i32,
}

impl XPoly {
    pub fn constant(v: f64) -> XPoly {
        let mut terms = BTreeMap::new();
        if v != 0.0 {
            terms.insert([0; MAX_DIM], v);
        }
        XPoly { terms, exact: ALL }
    }

    pub fn zero() -> XPoly {
        XPoly::constant(0.0)
    }

    fn push(&mut self, e: Exps, v: f64) {
        if deg(&e) > self.exact {
            return;
        }
        *self.terms.entry(e).or_insert(0.0) += v;
    }

    pub fn add(&self, o: &XPoly) -> XPoly {
        let mut r = XPoly { terms: BTreeMap::new(), exact: self.exact.min(o.exact) };
        for (e, v) in self.terms.iter().chain(o.terms.iter()) {
            r.push(*e, *v);
        }
        r
    }

    pub fn scale(&self, s: f64) -> XPoly {
        XPoly { terms: self.terms.iter().map(|(e, v)| (*e, v * s)).collect(), exact: self.exact }
    }

    pub fn mul(&self, o: &XPoly) -> XPoly {
        let mut r = XPoly { terms: BTreeMap::new(), exact: self.exact.min(o.exact) };
        for (ea, va) in &self.terms {
            for (eb, vb) in &o.terms {
                if deg(ea) + deg(eb) <= r.exact {
                    r.push(add_exps(ea, eb), va * vb);
                }
            }
        }
        r
    }

    pub fn diff(&self, j: usize) -> XPoly {
        let mut r = XPoly { terms: BTreeMap::new(), exact: if self.exact >= ALL { ALL } else { self.exact - 1 } };
        for (e, v) in &self.terms {
            if e[j] > 0 {
                let mut f = *e;
                f[j] -= 1;
                r.push(f, v * e[j] as f64);
            }
        }
        r
    }

    /// Value at x0.
    pub fn at0(&self) -> Result<f64> {
        if self.exact < 0 {
            return Err(ExprError::UnsupportedJet("value at x0 of an unknown Taylor coefficient".into()));
        }
        Ok(self.terms.get(&[0; MAX_DIM]).copied().unwrap_or(0.0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(e, v)| v * (0..x.len()).map(|k| x[k].powi(e[k] as i32)).product::<f64>()).sum()
    }
}

type XMat = Vec<Vec<XPoly>>;

fn xmat_mul(a: &XMat, b: &XMat) -> XMat {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut acc = XPoly::zero();
                    for k in 0..n {
                        acc = acc.add(&a[i][k].mul(&b[k][j]));
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn xmat_identity(n: usize) -> XMat {
    (0..n).map(|i| (0..n).map(|j| XPoly::constant(if i == j { 1.0 } else { 0.0 })).collect()).collect()
}

fn xmat_add_scaled(a: &XMat, b: &XMat, s: f64) -> XMat {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.add(&y.scale(s))).collect()).collect()
}

fn xmat_min_degree(a: &XMat) -> i32 {
    a.iter().flatten().flat_map(|p| p.terms.iter().filter(|(_, v)| **v != 0.0).map(|(e, _)| deg(e))).min().unwrap_or(ALL)
}

/// `Σ_k coeff(k) H^k` for `H = O(x²)`, truncated at the exactness of `H`.
fn xmat_series(h: &XMat, coeff: impl Fn(usize) -> f64) -> XMat {
    let n = h.len();
    let exact = h.iter().flatten().map(|p| p.exact).min().unwrap_or(ALL);
    let mut acc = xmat_identity(n);
    let mut pow = xmat_identity(n);
    for k in 1.. {
        pow = xmat_mul(&pow, h);
        if xmat_min_degree(&pow) > exact {
            break;
        }
        acc = xmat_add_scaled(&acc, &pow, coeff(k));
    }
    for row in acc.iter_mut() {
        for p in row.iter_mut() {
            p.exact = p.exact.min(exact);
        }
    }
    acc
}

/// Normal-coordinate data: inverse metric, metric, Christoffel symbols,
/// radial-gauge frame and spin connection, as Taylor polynomials.
pub(crate) struct NormalFrame {
    pub n: usize,
    pub ginv: XMat,
    pub g: XMat,
    /// `chr[ν][μ][κ] = Γ^ν_{μκ}`.
    pub chr: Vec<Vec<Vec<XPoly>>>,
    /// `frame[a][μ] = E_a^μ`.
    pub frame: XMat,
    /// `omega[μ][s][t] = ⟨∇_{∂μ} e_s, e_t⟩`.
    pub omega: Vec<Vec<Vec<XPoly>>>,
}

/// `g^{αβ}(x) = δ + κ_g R_{αμβν} x^μ x^ν`, exact to second order.
pub(crate) fn inverse_metric(geo: &Geometry, kappa_g: f64) -> XMat {
    let n = geo.n;
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let mut p = XPoly::constant(if a == b { 1.0 } else { 0.0 });
                    for mu in 0..n {
                        for nu in 0..n {
                            let v = rf(&geo.r(a, mu, b, nu)) * kappa_g;
                            if v != 0.0 {
                                p.push(add_exps(&unit(mu), &unit(nu)), v);
                            }
                        }
                    }
                    p.exact = 2;
                    p
                })
                .collect()
        })
        .collect()
}

pub(crate) fn normal_frame(geo: &Geometry) -> NormalFrame {
    let n = geo.n;
    let ginv = inverse_metric(geo, 1.0 / 3.0);
    let h = xmat_add_scaled(&ginv, &xmat_identity(n), -1.0);
    // g = (1 + H)^{-1}
    let g = xmat_series(&h, |k| if k % 2 == 0 { 1.0 } else { -1.0 });
    // symmetric square root of g^{-1}: binomial series of (1 + H)^{1/2}
    let frame = xmat_series(&h, |k| {
        let mut b = 1.0;
        for i in 0..k {
            b *= (0.5 - i as f64) / (i as f64 + 1.0);
        }
        b
    });
    let dg: Vec<XMat> = (0..n).map(|k| g.iter().map(|row| row.iter().map(|p| p.diff(k)).collect()).collect()).collect();
    let chr: Vec<Vec<Vec<XPoly>>> = (0..n)
        .map(|nu| {
            (0..n)
                .map(|mu| {
                    (0..n)
                        .map(|ka| {
                            let mut acc = XPoly::zero();
                            for rho in 0..n {
                                let t = dg[mu][rho][ka].add(&dg[ka][rho][mu]).add(&dg[rho][mu][ka].scale(-1.0));
                                acc = acc.add(&ginv[nu][rho].mul(&t));
                            }
                            acc.scale(0.5)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let omega = (0..n)
        .map(|mu| {
            (0..n)
                .map(|s| {
                    // (∇_μ e_s)^ν
                    let v: Vec<XPoly> = (0..n)
                        .map(|nu| {
                            let mut acc = frame[s][nu].diff(mu);
                            for ka in 0..n {
                                acc = acc.add(&chr[nu][mu][ka].mul(&frame[s][ka]));
                            }
                            acc
                        })
                        .collect();
                    (0..n)
                        .map(|t| {
                            let mut acc = XPoly::zero();
                            for nu in 0..n {
                                for rho in 0..n {
                                    acc = acc.add(&g[nu][rho].mul(&v[nu]).mul(&frame[t][rho]));
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    NormalFrame { n, ginv, g, chr, frame, omega }
}

/// Taylor polynomial of `a^f` to third order.
pub(crate) fn function_poly(geo: &Geometry, f: usize) -> XPoly {
    let n = geo.n;
    let mut p = XPoly::constant(rf(&geo.jets[f].value));
    let fact = [1.0, 1.0, 2.0, 6.0];
    for order in 1..=3usize {
        let mut idx = vec![0usize; order];
        loop {
            let mut e = [0u8; MAX_DIM];
            idx.iter().for_each(|&k| e[k] += 1);
            // each multiset is visited order!/α! times
            p.push(e, rf(&geo.jet(f, &idx)) / fact[order]);
            let mut k = order;
            while k > 0 {
                idx[k - 1] += 1;
                if idx[k - 1] < n {
                    break;
                }
                idx[k - 1] = 0;
                k -= 1;
            }
            if k == 0 {
                break;
            }
        }
    }
    p.exact = 3;
    p
}

// ---------------------------------------------------------------- symbols

#[derive(Debug, Clone)]
enum Val {
    S(C),
    M(CMat),
}

impl Val {
    fn mul(&self, o: &Val) -> Val {
        match (self, o) {
            (Val::S(a), Val::S(b)) => Val::S(a * b),
            (Val::S(a), Val::M(m)) | (Val::M(m), Val::S(a)) => Val::M(m * *a),
            (Val::M(a), Val::M(b)) => Val::M(a * b),
        }
    }

    fn scale(&self, s: C) -> Val {
        match self {
            Val::S(a) => Val::S(a * s),
            Val::M(m) => Val::M(m * s),
        }
    }

    fn add_assign(&mut self, o: &Val) {
        let new = match (&*self, o) {
            (Val::S(a), Val::S(b)) => Val::S(a + b),
            (Val::M(m), Val::S(b)) => Val::M(m + CMat::identity(m.nrows(), m.ncols()) * *b),
            (Val::S(a), Val::M(m)) => Val::M(m + CMat::identity(m.nrows(), m.ncols()) * *a),
            (Val::M(a), Val::M(b)) => Val::M(a + b),
        };
        *self = new;
    }

    fn trace(&self, spinor_dim: usize) -> C {
        match self {
            Val::S(a) => a * c(spinor_dim as f64),
            Val::M(m) => m.trace(),
        }
    }
}

/// `x^x ξ^xi |ξ|^{-2 inv}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Mono {
    x: Exps,
    xi: Exps,
    inv: u16,
}

/// One homogeneous layer of a numeric symbol.
#[derive(Debug, Clone)]
struct Layer {
    terms: BTreeMap<Mono, Val>,
    exact: i32,
}

impl Layer {
    fn empty(exact: i32) -> Layer {
        Layer { terms: BTreeMap::new(), exact }
    }

    fn push(&mut self, m: Mono, v: Val) {
        if deg(&m.x) > self.exact {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(x) => x.add_assign(&v),
            None => {
                self.terms.insert(m, v);
            }
        }
    }

    fn add(&self, o: &Layer) -> Layer {
        let mut r = Layer::empty(self.exact.min(o.exact));
        for (m, v) in self.terms.iter().chain(o.terms.iter()) {
            r.push(*m, v.clone());
        }
        r
    }

    fn scale(&self, s: C) -> Layer {
        Layer { terms: self.terms.iter().map(|(m, v)| (*m, v.scale(s))).collect(), exact: self.exact }
    }

    fn mul(&self, o: &Layer, limit: i32) -> Layer {
        let mut r = Layer::empty(self.exact.min(o.exact).min(limit));
        for (ma, va) in &self.terms {
            let da = deg(&ma.x);
            if da > r.exact {
                continue;
            }
            for (mb, vb) in &o.terms {
                if da + deg(&mb.x) > r.exact {
                    continue;
                }
                let m = Mono { x: add_exps(&ma.x, &mb.x), xi: add_exps(&ma.xi, &mb.xi), inv: ma.inv + mb.inv };
                r.push(m, va.mul(vb));
            }
        }
        r
    }

    fn diff_x(&self, j: usize) -> Layer {
        let mut r = Layer::empty(if self.exact >= ALL { ALL } else { self.exact - 1 });
        for (m, v) in &self.terms {
            if m.x[j] > 0 {
                let mut mm = *m;
                mm.x[j] -= 1;
                r.push(mm, v.scale(c(m.x[j] as f64)));
            }
        }
        r
    }

    fn diff_xi(&self, j: usize) -> Layer {
        let mut r = Layer::empty(self.exact);
        for (m, v) in &self.terms {
            if m.xi[j] > 0 {
                let mut mm = *m;
                mm.xi[j] -= 1;
                r.push(mm, v.scale(c(m.xi[j] as f64)));
            }
            if m.inv > 0 {
                let mut mm = *m;
                mm.xi[j] += 1;
                mm.inv += 1;
                r.push(mm, v.scale(c(-2.0 * m.inv as f64)));
            }
        }
        r
    }

    fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|m| m.inv == 0)
    }

    fn truncate(&self, e: i32) -> Layer {
        let mut r = Layer::empty(self.exact.min(e));
        for (m, v) in &self.terms {
            r.push(*m, v.clone());
        }
        r
    }
}

/// A numeric total symbol.
#[derive(Debug, Clone)]
struct NumSymbol {
    top: i32,
    layers: BTreeMap<i32, Layer>,
    /// Orders below the lowest stored one are zero (otherwise unknown).
    differential: bool,
}

impl NumSymbol {
    fn low(&self) -> i32 {
        self.layers.keys().next().copied().unwrap_or(self.top)
    }

    fn layer(&self, k: i32) -> Result<Option<&Layer>> {
        if k > self.top {
            return Ok(None);
        }
        if k < self.low() && !self.differential {
            return Err(ExprError::Precondition(format!("numeric symbol unknown at order {}", k)));
        }
        Ok(self.layers.get(&k))
    }

    fn add(&self, o: &NumSymbol) -> NumSymbol {
        let mut layers = self.layers.clone();
        for (k, l) in &o.layers {
            let new = match layers.get(k) {
                Some(x) => x.add(l),
                None => l.clone(),
            };
            layers.insert(*k, new);
        }
        NumSymbol { top: self.top.max(o.top), layers, differential: self.differential && o.differential }
    }
}

fn multisets(n: usize, r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for s in multisets(n, r - 1) {
        let start = s.last().copied().unwrap_or(0);
        for j in start..n {
            let mut t = s.clone();
            t.push(j);
            out.push(t);
        }
    }
    out
}

fn multiset_factorial(a: &[usize]) -> f64 {
    let mut f = 1.0;
    let mut run = 1.0;
    for w in 1..a.len() {
        if a[w] == a[w - 1] {
            run += 1.0;
            f *= run;
        } else {
            run = 1.0;
        }
    }
    f
}

/// Summands of `σ(PQ)` at order `t`, keyed by `(j, k, r)`.
fn compose_pieces(p: &NumSymbol, q: &NumSymbol, t: i32, n: usize) -> Result<Vec<((i32, i32, i32), Layer)>> {
    let mut combos = vec![];
    let j_lo = if p.differential { p.low() } else { t - q.top };
    if !p.differential && t - q.top < p.low() {
        return Err(ExprError::Precondition(format!("order {} of the product needs σ_{} of the left factor", t, t - q.top)));
    }
    for j in (j_lo..=p.top).rev() {
        let Some(pj) = p.layer(j)? else { continue };
        for r in 0.. {
            let k = t - j + r;
            if k > q.top {
                break;
            }
            if pj.is_polynomial() && r > j {
                break;
            }
            let Some(qk) = q.layer(k)? else { continue };
            combos.push((j, k, r, pj, qk));
        }
    }
    let exact = combos
        .iter()
        .map(|(_, _, r, pj, qk)| pj.exact.min(if qk.exact >= ALL { ALL } else { qk.exact - r }))
        .min()
        .unwrap_or(ALL);
    let mut out = vec![];
    for (j, k, r, pj, qk) in combos {
        let mut acc = Layer::empty(exact);
        if exact >= 0 {
            for alpha in multisets(n, r as usize) {
                let mut dp = pj.truncate(exact);
                let mut dq = qk.clone();
                for &a in &alpha {
                    dp = dp.diff_xi(a);
                    dq = dq.diff_x(a);
                }
                if dp.terms.is_empty() || dq.terms.is_empty() {
                    continue;
                }
                // (-i)^r / α!
                let coef = (-C::i()).powu(r as u32) / c(multiset_factorial(&alpha));
                acc = acc.add(&dp.mul(&dq.truncate(exact), exact).scale(coef));
            }
        }
        out.push(((j, k, r), acc));
    }
    Ok(out)
}

fn compose_layer(p: &NumSymbol, q: &NumSymbol, t: i32, n: usize) -> Result<Layer> {
    let pieces = compose_pieces(p, q, t, n)?;
    let exact = pieces.iter().map(|(_, l)| l.exact).min().unwrap_or(ALL);
    let mut acc = Layer::empty(exact);
    for (_, l) in pieces {
        acc = acc.add(&l);
    }
    Ok(acc)
}

fn compose(p: &NumSymbol, q: &NumSymbol, lowest: i32, n: usize) -> Result<NumSymbol> {
    let top = p.top + q.top;
    let mut layers = BTreeMap::new();
    for t in (lowest..=top).rev() {
        layers.insert(t, compose_layer(p, q, t, n)?);
    }
    let differential = p.differential && q.differential && lowest <= p.low() + q.low();
    Ok(NumSymbol { top, layers, differential })
}

/// Builds the symbols of `D`, `[D, a]` and `D^{-2m}` for one geometry.
struct SymbolFactory {
    n: usize,
    gamma: GammaRep,
    nf: NormalFrame,
    fns: Vec<XPoly>,
}

impl SymbolFactory {
    fn new(geo: &Geometry) -> Result<SymbolFactory> {
        let gamma = gamma_matrices(geo.n)?;
        let nf = normal_frame(geo);
        let fns = (0..5).map(|f| function_poly(geo, f)).collect();
        Ok(SymbolFactory { n: geo.n, gamma, nf, fns })
    }

    fn spin_connection(&self, mu: usize) -> (BTreeMap<Exps, CMat>, i32) {
        let n = self.n;
        let d = self.gamma.spinor_dim();
        let mut out: BTreeMap<Exps, CMat> = BTreeMap::new();
        let mut exact = ALL;
        for s in 0..n {
            for t in 0..n {
                let w = &self.nf.omega[mu][s][t];
                exact = exact.min(w.exact);
                let ct = &self.gamma.matrices[s] * &self.gamma.matrices[t];
                for (e, v) in &w.terms {
                    let m = out.entry(*e).or_insert_with(|| CMat::zeros(d, d));
                    *m += &ct * c(0.25 * v);
                }
            }
        }
        (out, exact)
    }

    /// Symbol of `D = Σ c(e_a) E_a^μ (∂_μ + σ_μ)`.
    fn dirac(&self) -> NumSymbol {
        let n = self.n;
        let mut l1 = Layer::empty(ALL);
        let mut l0 = Layer::empty(ALL);
        let sig: Vec<_> = (0..n).map(|mu| self.spin_connection(mu)).collect();
        for a in 0..n {
            for mu in 0..n {
                let e = &self.nf.frame[a][mu];
                l1.exact = l1.exact.min(e.exact);
                for (ex, v) in &e.terms {
                    let m = Mono { x: *ex, xi: unit(mu), inv: 0 };
                    l1.push(m, Val::M(&self.gamma.matrices[a] * (C::i() * *v)));
                }
                let (s, se) = &sig[mu];
                l0.exact = l0.exact.min(e.exact).min(*se);
                for (ex, v) in &e.terms {
                    for (ey, sm) in s {
                        if deg(ex) + deg(ey) > l0.exact {
                            continue;
                        }
                        let m = Mono { x: add_exps(ex, ey), xi: [0; MAX_DIM], inv: 0 };
                        l0.push(m, Val::M(&self.gamma.matrices[a] * sm * c(*v)));
                    }
                }
            }
        }
        l1 = l1.truncate(l1.exact);
        l0 = l0.truncate(l0.exact);
        let mut layers = BTreeMap::new();
        layers.insert(1, l1);
        layers.insert(0, l0);
        NumSymbol { top: 1, layers, differential: true }
    }

    /// `[D, a^f] = Σ c(e_a) E_a^μ ∂_μ a^f`.
    fn clifford_differential(&self, f: usize) -> NumSymbol {
        let n = self.n;
        let mut l0 = Layer::empty(ALL);
        for a in 0..n {
            for mu in 0..n {
                let p = self.nf.frame[a][mu].mul(&self.fns[f].diff(mu));
                l0.exact = l0.exact.min(p.exact);
                for (ex, v) in &p.terms {
                    l0.push(Mono { x: *ex, xi: [0; MAX_DIM], inv: 0 }, Val::M(&self.gamma.matrices[a] * c(*v)));
                }
            }
        }
        let l0 = l0.truncate(l0.exact);
        NumSymbol { top: 0, layers: [(0, l0)].into_iter().collect(), differential: true }
    }

    fn factor(&self, f: Factor, d: &NumSymbol) -> Result<NumSymbol> {
        Ok(match f {
            Factor::Dirac(k) => self.clifford_differential(k as usize),
            Factor::Squared(k) => {
                // [D², a] = D [D, a] + [D, a] D
                let cd = self.clifford_differential(k as usize);
                compose(d, &cd, 0, self.n)?.add(&compose(&cd, d, 0, self.n)?)
            }
        })
    }

    fn product(&self, fs: &[Factor], d: &NumSymbol) -> Result<NumSymbol> {
        let mut acc = self.factor(fs[0], d)?;
        for &f in &fs[1..] {
            acc = compose(&acc, &self.factor(f, d)?, 0, self.n)?;
        }
        Ok(acc)
    }

    /// Parametrix `b_{-2}, b_{-3}, b_{-4}` of `D²`.
    fn parametrix(&self, d2: &NumSymbol) -> Result<NumSymbol> {
        let n = self.n;
        let s2 = d2.layer(2)?.cloned().unwrap_or_else(|| Layer::empty(ALL));
        // σ_2 = |ξ|² + h with h = O(x²); b_{-2} = |ξ|^{-2} Σ (-h |ξ|^{-2})^k
        let mut h = s2.clone();
        for j in 0..n {
            let mut m = Mono { x: [0; MAX_DIM], xi: [0; MAX_DIM], inv: 0 };
            m.xi[j] = 2;
            h.push(m, Val::S(c(-1.0)));
        }
        h.terms.retain(|_, v| match v {
            Val::S(a) => a.norm() > 1e-14,
            Val::M(m) => m.norm() > 1e-14,
        });
        let inv1 = Layer { terms: [(Mono { x: [0; MAX_DIM], xi: [0; MAX_DIM], inv: 1 }, Val::S(c(1.0)))].into(), exact: ALL };
        let step = h.mul(&inv1, ALL).scale(c(-1.0));
        let mut b2 = inv1.clone();
        let mut pow = inv1.clone();
        loop {
            pow = pow.mul(&step, s2.exact);
            if pow.terms.is_empty() {
                break;
            }
            b2 = b2.add(&pow);
        }
        let b2 = b2.truncate(s2.exact);
        let mut b = NumSymbol { top: -2, layers: [(-2, b2.clone())].into(), differential: false };
        for k in 1..=2 {
            b.layers.insert(-2 - k, Layer::empty(ALL));
            let rest = compose_layer(d2, &b, -k, n)?;
            let bk = b2.mul(&rest, rest.exact.min(b2.exact)).scale(c(-1.0));
            b.layers.insert(-2 - k, bk);
        }
        Ok(b)
    }

    /// `D^{-2m}` down to order `-2m-2`.
    fn inverse_power(&self, m: i32, d: &NumSymbol) -> Result<NumSymbol> {
        let d2 = compose(d, d, 0, self.n)?;
        let b = self.parametrix(&d2)?;
        let mut acc = b.clone();
        for k in 2..=m {
            acc = compose(&acc, &b, -2 * k - 2, self.n)?;
        }
        Ok(acc)
    }

    /// `∫_{|ξ|=1} tr` of an order `-n` layer at x0.
    fn residue_of(&self, l: &Layer) -> Result<f64> {
        if l.exact < 0 {
            return Err(ExprError::UnsupportedJet("residue layer not known at x0".into()));
        }
        let n = self.n as u32;
        let d = self.gamma.spinor_dim();
        let mut total = C::zero();
        for (m, v) in &l.terms {
            if deg(&m.x) != 0 {
                continue;
            }
            let beta: Vec<u32> = m.xi[..self.n].iter().map(|&b| b as u32).collect();
            let w = gamma_formula_oracle(&beta, n).to_f64();
            if w != 0.0 {
                total += v.trace(d) * w;
            }
        }
        if total.im.abs() > 1e-8 * total.re.abs().max(1.0) {
            return Err(ExprError::Precondition(format!("residue has imaginary part {}", total.im)));
        }
        Ok(total.re)
    }
}

fn check_oracle_dim(n: usize) -> Result<i32> {
    if !(n == 4 || n == 6 || n == 8) {
        return Err(ExprError::Precondition(format!("oracle dimension {} not supported", n)));
    }
    Ok(n as i32 / 2)
}

/// `∫_{|ξ|=1} tr σ_{-n}(A B D^{-n})(x0, ξ)` computed numerically.
pub fn brute_force_residue(p: &PartSpec, n: usize, geo: &Geometry) -> Result<f64> {
    Ok(brute_force_contributions(p, n, geo)?.values().sum())
}

/// The six composition summands of [`brute_force_residue`] separately.
pub fn brute_force_contributions(p: &PartSpec, n: usize, geo: &Geometry) -> Result<BTreeMap<Contribution, f64>> {
    let m = check_oracle_dim(n)?;
    if geo.n != n {
        return Err(ExprError::Precondition("geometry dimension mismatch".into()));
    }
    let f = SymbolFactory::new(geo)?;
    let d = f.dirac();
    let a = f.product(&p.left, &d)?;
    let b = f.product(&p.right, &d)?;
    let ab = compose(&a, &b, 0, n)?;
    if ab.top != 2 || !ab.differential {
        return Err(ExprError::Precondition("σ(AB) is expected to be polynomial of order 2".into()));
    }
    let dm = f.inverse_power(m, &d)?;
    let mut out: BTreeMap<Contribution, f64> = Contribution::ALL.iter().map(|&c| (c, 0.0)).collect();
    for ((j, k, r), l) in compose_pieces(&ab, &dm, -2 * m, n)? {
        let label = match (j, -2 * m - k, r) {
            (0, 0, 0) => Contribution::Zeroth,
            (1, 1, 0) => Contribution::FirstSub,
            (2, 2, 0) => Contribution::SecondSubSub,
            (2, 1, 1) => Contribution::MixedSecondSub,
            (1, 0, 1) => Contribution::MixedFirst,
            (2, 0, 2) => Contribution::DoubleMixed,
            _ => return Err(ExprError::Precondition(format!("unexpected summand ({}, {}, {})", j, k, r))),
        };
        *out.get_mut(&label).unwrap() += f.residue_of(&l)?;
    }
    Ok(out)
}

/// `∫_{|ξ|=1} tr σ_{-2m-2}(D^{-2m})(x0, ξ)` and the coefficients of the
/// order `-2m-2` symbol, for cross-checking the inverse-power formula.
pub fn inverse_power_residue(m: i32, geo: &Geometry) -> Result<f64> {
    let f = SymbolFactory::new(geo)?;
    let d = f.dirac();
    let dm = f.inverse_power(m, &d)?;
    let l = dm.layer(-2 * m - 2)?.cloned().unwrap_or_else(|| Layer::empty(ALL));
    f.residue_of(&l)
}

// ---------------------------------------------------------------- evaluation

/// Numeric value of a scalar expression without free indices.
pub fn eval_expr(e: &Expr, geo: &Geometry) -> Result<f64> {
    eval_terms(e, geo, None)
}

/// Frame scalars `e_a(a^f) = E_a^μ ∂_μ a^f` on the explicit radial-gauge frame.
struct FrameScalars {
    polys: Vec<Vec<XPoly>>,
}

impl FrameScalars {
    fn new(geo: &Geometry) -> Self {
        let nf = normal_frame(geo);
        let n = geo.n;
        let polys = (0..geo.jets.len())
            .map(|f| {
                let fp = function_poly(geo, f);
                (0..n)
                    .map(|a| (0..n).fold(XPoly::zero(), |acc, mu| acc.add(&nf.frame[a][mu].mul(&fp.diff(mu)))))
                    .collect()
            })
            .collect();
        FrameScalars { polys }
    }

    fn jet(&self, f: usize, a: usize, derivs: &[usize]) -> Result<f64> {
        derivs.iter().fold(self.polys[f][a].clone(), |p, &j| p.diff(j)).at0()
    }
}

/// Value of a ξ-free Clifford integrand: the word is traced symbolically
/// and frame jets are read off the explicit frame, not the rule table.
pub fn eval_frame_integrand(e: &Expr, geo: &Geometry) -> Result<f64> {
    if e.xi_degree().is_some_and(|d| d != 0) {
        return Err(ExprError::Precondition("integrand depends on ξ".into()));
    }
    let traced = crate::clifford::trace_expr(e)?;
    eval_terms(&traced, geo, Some(&FrameScalars::new(geo)))
}

fn eval_terms(e: &Expr, geo: &Geometry, frame: Option<&FrameScalars>) -> Result<f64> {
    let n = geo.n;
    let mut total = 0.0;
    for t in &e.terms {
        if !t.word.is_empty() {
            return Err(ExprError::Precondition("Clifford word in a scalar evaluation".into()));
        }
        if t.coeff.i_power != 0 {
            return Err(ExprError::Precondition("imaginary coefficient in a density".into()));
        }
        let mut dummies = vec![];
        let mut bad = None;
        t.for_each_idx(|i| match i {
            Idx::Dummy(d) => {
                if !dummies.contains(&d) {
                    dummies.push(d)
                }
            }
            Idx::Free(f) => bad = Some(f),
            Idx::Fixed(_) => {}
        });
        if let Some(f) = bad {
            return Err(ExprError::Precondition(format!("free index f{} in a scalar evaluation", f)));
        }
        let slot = |i: Idx, vals: &[usize]| -> usize {
            match i {
                Idx::Dummy(d) => vals[dummies.iter().position(|&x| x == d).unwrap()],
                Idx::Fixed(k) => k as usize - 1,
                Idx::Free(_) => unreachable!(),
            }
        };
        let k = dummies.len();
        let mut vals = vec![0usize; k];
        let mut sum = 0.0;
        loop {
            let mut prod = 1.0;
            for a in &t.atoms {
                let v = match a {
                    Atom::FnJet { f, derivs } => {
                        let ix: Vec<usize> = derivs.iter().map(|&i| slot(i, &vals)).collect();
                        if ix.len() > 3 {
                            return Err(ExprError::UnsupportedJet("jet of order above 3".into()));
                        }
                        rf(&geo.jet(*f as usize, &ix))
                    }
                    Atom::Riemann(ix) => {
                        rf(&geo.r(slot(ix[0], &vals), slot(ix[1], &vals), slot(ix[2], &vals), slot(ix[3], &vals)))
                    }
                    Atom::ScalarCurv => rf(&geo.scalar_s),
                    Atom::FrameJet { f, frame: a, derivs } if frame.is_some() => {
                        let ix: Vec<usize> = derivs.iter().map(|&i| slot(i, &vals)).collect();
                        frame.unwrap().jet(*f as usize, slot(*a, &vals), &ix)?
                    }
                    Atom::Delta(x, y) => {
                        if slot(*x, &vals) == slot(*y, &vals) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    other => return Err(ExprError::Precondition(format!("atom {} has no numeric value", other))),
                };
                prod *= v;
                if prod == 0.0 {
                    break;
                }
            }
            sum += prod;
            let mut p = k;
            while p > 0 {
                vals[p - 1] += 1;
                if vals[p - 1] < n {
                    break;
                }
                vals[p - 1] = 0;
                p -= 1;
            }
            if p == 0 {
                break;
            }
        }
        total += rf(&t.coeff.rational) * sum;
    }
    Ok(total)
}

/// Value of a density including `tr[id]·area(S_n)`.
pub fn eval_density(d: &Density, geo: &Geometry) -> Result<f64> {
    if d.dim as usize != geo.n {
        return Err(ExprError::Precondition("density and geometry dimensions differ".into()));
    }
    let pre = d.trace_identity() as f64 * sphere_area(d.dim).to_f64();
    Ok(eval_expr(&d.expr, geo)? * pre)
}

/// `|a - b| / max(1, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Least-squares coefficients of `target` in the span of `basis`, sampled on
/// the given geometries; returns the coefficients and the largest residual.
pub fn recover_coefficients(
    basis: &[Expr],
    geos: &[Geometry],
    target: impl Fn(&Geometry) -> Result<f64>,
) -> Result<(Vec<f64>, f64)> {
    let rows = geos.len();
    let cols = basis.len();
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, g) in geos.iter().enumerate() {
        for (j, e) in basis.iter().enumerate() {
            a[(i, j)] = eval_expr(e, g)?;
        }
        b[i] = target(g)?;
    }
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-10).map_err(|e| ExprError::Precondition(e.to_string()))?;
    let res = (&a * &x - &b).amax();
    Ok((x.iter().copied().collect(), res))
}

// ---------------------------------------------------------------- constants

/// Curvature `R_{abcd} = ∂_a Γ^c_{bd} - ∂_b Γ^c_{ad}` at x0 of the metric with
/// `g^{αβ} = δ + κ R_{αμβν} x^μ x^ν`, by central finite differences.
pub fn metric_curvature_fd(geo: &Geometry, kappa: f64, h: f64) -> Vec<f64> {
    let n = geo.n;
    let ginv = inverse_metric(geo, kappa);
    let metric_at = |x: &[f64]| -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| ginv[i][j].eval(x));
        m.try_inverse().expect("metric invertible near x0")
    };
    let christoffel_at = |x: &[f64]| -> Vec<f64> {
        // Γ^c_{bd}, index (c, b, d)
        let mut dg = vec![DMatrix::<f64>::zeros(n, n); n];
        for (k, dgk) in dg.iter_mut().enumerate() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            *dgk = (metric_at(&xp) - metric_at(&xm)) / (2.0 * h);
        }
        let gi = metric_at(x).try_inverse().unwrap();
        let mut out = vec![0.0; n * n * n];
        for cc in 0..n {
            for b in 0..n {
                for d in 0..n {
                    let mut v = 0.0;
                    for r in 0..n {
                        v += 0.5 * gi[(cc, r)] * (dg[b][(r, d)] + dg[d][(r, b)] - dg[r][(b, d)]);
                    }
                    out[(cc * n + b) * n + d] = v;
                }
            }
        }
        out
    };
    let mut dchr = vec![vec![0.0; n * n * n]; n];
    for (a, slot) in dchr.iter_mut().enumerate() {
        let mut xp = vec![0.0; n];
        let mut xm = vec![0.0; n];
        xp[a] = h;
        xm[a] = -h;
        let p = christoffel_at(&xp);
        let m = christoffel_at(&xm);
        *slot = p.iter().zip(&m).map(|(u, v)| (u - v) / (2.0 * h)).collect();
    }
    let mut r = vec![0.0; n.pow(4)];
    for a in 0..n {
        for b in 0..n {
            for cc in 0..n {
                for d in 0..n {
                    r[((a * n + b) * n + cc) * n + d] = dchr[a][(cc * n + b) * n + d] - dchr[b][(cc * n + a) * n + d];
                }
            }
        }
    }
    r
}

/// The κ for which the metric expansion reproduces the curvature tensor.
pub fn fit_kappa_g(geo: &Geometry) -> f64 {
    let unit_curv = metric_curvature_fd(geo, 1.0, 1e-3);
    let target: Vec<f64> = geo.riemann.iter().map(rf).collect();
    let num: f64 = unit_curv.iter().zip(&target).map(|(u, t)| u * t).sum();
    let den: f64 = unit_curv.iter().map(|u| u * u).sum();
    // curvature is linear in κ at x0
    let first = num / den;
    // one refinement against the exact nonlinear finite-difference curvature
    let r1 = metric_curvature_fd(geo, first, 1e-3);
    let num2: f64 = r1.iter().zip(&target).map(|(u, t)| u * t).sum();
    let den2: f64 = r1.iter().map(|u| u * u).sum();
    first * num2 / den2
}

/// The κ_F with `∂_j∂_p E_a^μ(x0) = κ_F (R_{ajμp} + R_{apμj})` for the
/// symmetric square root frame `E² = g^{-1}`, by finite differences.
pub fn fit_kappa_f(geo: &Geometry) -> f64 {
    let n = geo.n;
    let h = 1e-3;
    let ginv = inverse_metric(geo, 1.0 / 3.0);
    let frame_at = |x: &[f64]| -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| ginv[i][j].eval(x));
        let e = SymmetricEigen::new(m);
        let sq = e.eigenvalues.map(|v| v.sqrt());
        &e.eigenvectors * DMatrix::from_diagonal(&sq) * e.eigenvectors.transpose()
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..n {
        for p in 0..n {
            let at = |sj: f64, sp: f64| {
                let mut x = vec![0.0; n];
                x[j] += sj * h;
                x[p] += sp * h;
                frame_at(&x)
            };
            let d2 = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
            for a in 0..n {
                for mu in 0..n {
                    let pattern = rf(&geo.r(a, j, mu, p)) + rf(&geo.r(a, p, mu, j));
                    num += d2[(a, mu)] * pattern;
                    den += pattern * pattern;
                }
            }
        }
    }
    num / den
}

// ---------------------------------------------------------------- covariant evaluation

/// Covariant calculus on the explicit Taylor data of [`normal_frame`].
struct Covariant<'a> {
    geo: &'a Geometry,
    nf: NormalFrame,
}

impl<'a> Covariant<'a> {
    fn new(geo: &'a Geometry) -> Self {
        Covariant { geo, nf: normal_frame(geo) }
    }

    fn n(&self) -> usize {
        self.nf.n
    }

    fn f(&self, k: FnId) -> XPoly {
        function_poly(self.geo, k as usize)
    }

    /// `(∇f)^μ = g^{μν} ∂_ν f`
    fn grad(&self, f: &XPoly) -> Vec<XPoly> {
        (0..self.n())
            .map(|mu| (0..self.n()).fold(XPoly::zero(), |acc, nu| acc.add(&self.nf.ginv[mu][nu].mul(&f.diff(nu)))))
            .collect()
    }

    /// `X[f]`
    fn apply(&self, x: &[XPoly], f: &XPoly) -> XPoly {
        (0..self.n()).fold(XPoly::zero(), |acc, k| acc.add(&x[k].mul(&f.diff(k))))
    }

    /// `(∇_X V)^μ = X^k (∂_k V^μ + Γ^μ_{kν} V^ν)`
    fn cov(&self, x: &[XPoly], v: &[XPoly]) -> Vec<XPoly> {
        let n = self.n();
        (0..n)
            .map(|mu| {
                let mut acc = self.apply(x, &v[mu]);
                for k in 0..n {
                    for nu in 0..n {
                        acc = acc.add(&x[k].mul(&self.nf.chr[mu][k][nu]).mul(&v[nu]));
                    }
                }
                acc
            })
            .collect()
    }

    fn inner(&self, v: &[XPoly], w: &[XPoly]) -> XPoly {
        let n = self.n();
        let mut acc = XPoly::zero();
        for a in 0..n {
            for b in 0..n {
                acc = acc.add(&self.nf.g[a][b].mul(&v[a]).mul(&w[b]));
            }
        }
        acc
    }

    /// `Δf = -g^{ij}(∂_i∂_j f - Γ^k_{ij} ∂_k f)`
    fn laplacian(&self, f: &XPoly) -> XPoly {
        let n = self.n();
        let mut acc = XPoly::zero();
        for i in 0..n {
            for j in 0..n {
                let mut h = f.diff(i).diff(j);
                for k in 0..n {
                    h = h.add(&self.nf.chr[k][i][j].mul(&f.diff(k)).scale(-1.0));
                }
                acc = acc.add(&self.nf.ginv[i][j].mul(&h));
            }
        }
        acc.scale(-1.0)
    }

    /// `R_{abcd} = ∂_a Γ^c_{bd} - ∂_b Γ^c_{ad}` at x0, from the Taylor data.
    fn riemann(&self) -> Result<Vec<f64>> {
        let n = self.n();
        let mut r = vec![0.0; n.pow(4)];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        r[((a * n + b) * n + c) * n + d] =
                            self.nf.chr[c][b][d].diff(a).at0()? - self.nf.chr[c][a][d].diff(b).at0()?;
                    }
                }
            }
        }
        Ok(r)
    }

    fn value(&self, inv: &Invariant) -> Result<f64> {
        let n = self.n();
        let [p, q, r, t] = inv.slots;
        let gp = self.grad(&self.f(p));
        let gq = self.grad(&self.f(q));
        let gr = self.grad(&self.f(r));
        let gt = self.grad(&self.f(t));
        let metric_rt = || self.inner(&gr, &gt);
        let at = |x: Vec<XPoly>| -> Result<Vec<f64>> { x.iter().map(|v| v.at0()).collect() };
        let curv = || -> Result<f64> {
            let rm = self.riemann()?;
            let (u, v, w, z) = (at(gp.clone())?, at(gq.clone())?, at(gr.clone())?, at(gt.clone())?);
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            s += rm[((a * n + b) * n + c) * n + d] * u[a] * v[b] * w[c] * z[d];
                        }
                    }
                }
            }
            Ok(s)
        };
        match inv.form {
            Form::Riemann => curv(),
            Form::RicciMetric => {
                let rm = self.riemann()?;
                let (u, v) = (at(gp.clone())?, at(gq.clone())?);
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for al in 0..n {
                            s += rm[((i * n + al) * n + j) * n + al] * u[i] * v[j];
                        }
                    }
                }
                Ok(s * metric_rt().at0()?)
            }
            Form::ScalarMetric => {
                let rm = self.riemann()?;
                let s: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| rm[((a * n + b) * n + a) * n + b]).sum();
                Ok(s * self.inner(&gp, &gq).at0()? * metric_rt().at0()?)
            }
            Form::NestedCov => self.inner(&gp, &self.cov(&gq, &self.cov(&gr, &gt))).at0(),
            Form::GradLap => Ok(self.apply(&gp, &self.laplacian(&self.f(q))).at0()? * metric_rt().at0()?),
            Form::GradGradMetric => self.apply(&gp, &self.apply(&gq, &metric_rt())).at0(),
            Form::LapLapMetric => Ok(self.laplacian(&self.f(p)).at0()?
                * self.laplacian(&self.f(q)).at0()?
                * metric_rt().at0()?),
            Form::LapGradMetric => Ok(self.laplacian(&self.f(p)).at0()? * self.apply(&gq, &metric_rt()).at0()?),
            Form::LapHess => Ok(self.laplacian(&self.f(p)).at0()? * self.inner(&gq, &self.cov(&gr, &gt)).at0()?),
            Form::HessPair => self.inner(&self.cov(&gp, &gq), &self.cov(&gr, &gt)).at0(),
            Form::CovOfCov => self.inner(&gp, &self.cov(&self.cov(&gq, &gr), &gt)).at0(),
        }
    }
}

/// Value at x0 of an invariant from its covariant definition, evaluated on
/// the explicit normal-coordinate metric; independent of the jet expansion.
pub fn covariant_value(inv: &Invariant, geo: &Geometry) -> Result<f64> {
    Covariant::new(geo).value(inv)
}

/// Curvature at x0 recomputed from the explicit metric's Christoffel symbols.
pub fn christoffel_curvature(geo: &Geometry) -> Result<Vec<f64>> {
    Covariant::new(geo).riemann()
}
