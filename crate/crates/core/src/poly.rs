//! Sparse multivariate polynomials over `f64`.
//!
//! Variables are addressed by position. Dynamics polynomials live in the
//! space `(x_1..x_n, u_1..u_l)`: state variables first, then uncertainty
//! variables. Barrier polynomials usually live in the state space only and are
//! embedded with [`Polynomial::extend_vars`] when needed.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Terms whose coefficient magnitude is at or below this value are dropped.
pub const ZERO_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector field has {got} components but the polynomial has only {nvars} variables")]
    FieldTooLong { got: usize, nvars: usize },
    #[error("polynomial depends on variable {var}, which is not a state variable")]
    NotStateOnly { var: usize },
}

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

/// Every multi-index of length `len` with total degree at most `max_total`, in
/// graded order: by total degree, then lexicographically descending, so for
/// two variables the sequence is `00, 10, 01, 20, 11, 02, ...`.
pub fn graded_multi_indices(len: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=max_total {
        let mut cur = vec![0u32; len];
        fill_desc(&mut cur, 0, total, &mut out);
    }
    out
}

fn fill_desc(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        if remaining == 0 {
            out.push(cur.clone());
        }
        return;
    }
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        fill_desc(cur, pos + 1, remaining - e, out);
    }
    cur[pos] = 0;
}

/// Binomial coefficient as `usize`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, i), 1.0);
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs; repeated
    /// exponent vectors are summed.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (exp, c) in terms {
            if exp.len() != nvars {
                return Err(PolyError::DimensionMismatch { expected: nvars, got: exp.len() });
            }
            p.add_term(Monomial(exp), c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest coefficient magnitude, 0 for the zero polynomial.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Adds `c * m` in place and keeps the normalized form.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        let v = self.terms.get(&m).copied().unwrap_or(0.0) + c;
        if v.abs() <= ZERO_TOL {
            self.terms.remove(&m);
        } else {
            self.terms.insert(m, v);
        }
    }

    fn normalize(&mut self) {
        self.terms.retain(|_, c| c.abs() > ZERO_TOL);
    }

    fn check_dim(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: other.nvars });
        }
        Ok(())
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    /// Evaluation without the length check; `point` must have `nvars` entries.
    pub fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.normalize();
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        out.normalize();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Polynomial { nvars: self.nvars, terms };
        out.normalize();
        Ok(out)
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..e {
            acc = acc.mul(self).expect("same space");
        }
        acc
    }

    /// Partial derivative with respect to variable `i`.
    pub fn partial(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            dm.0[i] -= 1;
            *out.terms.entry(dm).or_insert(0.0) += c * f64::from(e);
        }
        out.normalize();
        out
    }

    /// Pads the exponent vectors with zeros so the polynomial lives in a space
    /// with `nvars` variables (the existing variables keep their positions).
    pub fn extend_vars(&self, nvars: usize) -> Polynomial {
        assert!(nvars >= self.nvars);
        Polynomial {
            nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| {
                    let mut e = m.0.clone();
                    e.resize(nvars, 0);
                    (Monomial(e), *c)
                })
                .collect(),
        }
    }

    /// Drops trailing variables; fails if the polynomial depends on them.
    pub fn truncate_vars(&self, nvars: usize) -> Result<Polynomial, PolyError> {
        let mut out = Polynomial::zero(nvars);
        for (m, c) in &self.terms {
            if let Some(var) = m.0[nvars..].iter().position(|&e| e > 0) {
                return Err(PolyError::NotStateOnly { var: nvars + var });
            }
            out.terms.insert(Monomial(m.0[..nvars].to_vec()), *c);
        }
        Ok(out)
    }

    /// Substitutes `x_i = shift_i + scale_i * z_i` and expands in `z`.
    pub fn affine_substitute(&self, shift: &[f64], scale: &[f64]) -> Polynomial {
        assert_eq!(shift.len(), self.nvars);
        assert_eq!(scale.len(), self.nvars);
        let maxdeg = self
            .terms
            .keys()
            .flat_map(|m| m.0.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        // expansions[i][e] = coefficients of (shift_i + scale_i z)^e in powers of z
        let expansions: Vec<Vec<Vec<f64>>> = (0..self.nvars)
            .map(|i| {
                (0..=maxdeg)
                    .map(|e| {
                        (0..=e)
                            .map(|k| {
                                binomial(e, k) as f64
                                    * scale[i].powi(k as i32)
                                    * shift[i].powi((e - k) as i32)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let mut partial: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(self.nvars), *c)];
            for (i, &e) in m.0.iter().enumerate() {
                let exp = &expansions[i][e as usize];
                let mut next = Vec::with_capacity(partial.len() * exp.len());
                for (prefix, pc) in &partial {
                    for (k, &ec) in exp.iter().enumerate() {
                        if ec == 0.0 {
                            continue;
                        }
                        let mut p = prefix.clone();
                        p.push(k as u32);
                        next.push((p, pc * ec));
                    }
                }
                partial = next;
            }
            for (e, v) in partial {
                *terms.entry(Monomial(e)).or_insert(0.0) += v;
            }
        }
        let mut out = Polynomial { nvars: self.nvars, terms };
        out.normalize();
        out
    }

    /// Lie derivative `sum_i dp/dx_i * f_i`.
    ///
    /// `f` holds one component per state variable, each over the full
    /// `(x, u)` space. `self` may live in the state space only (it is embedded)
    /// or in the full space, but must not depend on uncertainty variables.
    pub fn lie_derivative(&self, f: &[Polynomial]) -> Result<Polynomial, PolyError> {
        let full = match f.first() {
            Some(fi) => fi.nvars,
            None => return Ok(Polynomial::zero(self.nvars)),
        };
        if let Some(bad) = f.iter().find(|fi| fi.nvars != full) {
            return Err(PolyError::DimensionMismatch { expected: full, got: bad.nvars });
        }
        if f.len() > full {
            return Err(PolyError::FieldTooLong { got: f.len(), nvars: full });
        }
        let p = if self.nvars == f.len() {
            self.extend_vars(full)
        } else if self.nvars == full {
            // must not depend on uncertainty variables
            self.truncate_vars(f.len())?;
            self.clone()
        } else {
            return Err(PolyError::DimensionMismatch { expected: f.len(), got: self.nvars });
        };
        let mut out = Polynomial::zero(full);
        for (i, fi) in f.iter().enumerate() {
            let d = p.partial(i);
            if d.is_zero() {
                continue;
            }
            out = out.add(&d.mul(fi)?)?;
        }
        Ok(out)
    }

    /// Formats with the given variable names, e.g. `1.5*x - x*y^2`. The output
    /// parses back with [`crate::modelio::parse_expression`].
    pub fn to_string_with(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut s = String::new();
        for (k, (m, c)) in self.terms.iter().enumerate() {
            let neg = *c < 0.0;
            if k == 0 {
                if neg {
                    s.push('-');
                }
            } else {
                s.push_str(if neg { " - " } else { " + " });
            }
            let mag = c.abs();
            let factors: Vec<String> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| if e == 1 { names[i].clone() } else { format!("{}^{}", names[i], e) })
                .collect();
            if factors.is_empty() {
                s.push_str(&format!("{mag:?}"));
            } else if mag == 1.0 {
                s.push_str(&factors.join("*"));
            } else {
                s.push_str(&format!("{mag:?}*{}", factors.join("*")));
            }
        }
        s
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (1..=self.nvars).map(|i| format!("x{i}")).collect();
        f.write_str(&self.to_string_with(&names))
    }
}

/// An affine polynomial `constant + gradient . x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolynomial {
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl LinearPolynomial {
    pub fn new(constant: f64, gradient: Vec<f64>) -> Self {
        LinearPolynomial { constant, gradient }
    }

    pub fn nvars(&self) -> usize {
        self.gradient.len()
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.constant + self.gradient.iter().zip(point).map(|(g, x)| g * x).sum::<f64>()
    }

    pub fn to_polynomial(&self) -> Polynomial {
        let n = self.nvars();
        let mut p = Polynomial::constant(n, self.constant);
        for (i, &g) in self.gradient.iter().enumerate() {
            if g != 0.0 {
                p.add_term(Monomial::var(n, i), g);
            }
        }
        p
    }

    /// Same affine function in a larger variable space.
    pub fn extend_vars(&self, nvars: usize) -> LinearPolynomial {
        let mut g = self.gradient.clone();
        g.resize(nvars, 0.0);
        LinearPolynomial::new(self.constant, g)
    }

    /// Moves the variables to positions `offset..offset+len` of an `nvars` space.
    pub fn shift_vars(&self, offset: usize, nvars: usize) -> LinearPolynomial {
        let mut g = vec![0.0; nvars];
        g[offset..offset + self.gradient.len()].copy_from_slice(&self.gradient);
        LinearPolynomial::new(self.constant, g)
    }
}

/// All Handelman products `prod_i gens_i^alpha_i` with `|alpha| <= order`, in
/// graded order over `alpha` (see [`graded_multi_indices`]). The first entry is
/// the constant 1.
pub fn handelman_products(gens: &[LinearPolynomial], order: u32) -> Vec<Polynomial> {
    handelman_products_with_indices(gens, order).into_iter().map(|(_, p)| p).collect()
}

/// Like [`handelman_products`] but also returns each multi-index.
pub fn handelman_products_with_indices(
    gens: &[LinearPolynomial],
    order: u32,
) -> Vec<(Vec<u32>, Polynomial)> {
    let nvars = gens.first().map(LinearPolynomial::nvars).unwrap_or(0);
    let gpolys: Vec<Polynomial> = gens.iter().map(LinearPolynomial::to_polynomial).collect();
    let indices = graded_multi_indices(gens.len(), order);
    let mut cache: std::collections::HashMap<Vec<u32>, Polynomial> =
        std::collections::HashMap::with_capacity(indices.len());
    let mut out = Vec::with_capacity(indices.len());
    for alpha in indices {
        let prod = match alpha.iter().rposition(|&a| a > 0) {
            None => Polynomial::constant(nvars, 1.0),
            Some(k) => {
                let mut prev = alpha.clone();
                prev[k] -= 1;
                // graded order guarantees `prev` was produced earlier
                cache[&prev].mul(&gpolys[k]).expect("generators share a space")
            }
        };
        cache.insert(alpha.clone(), prod.clone());
        out.push((alpha, prod));
    }
    out
}

/// A polynomial with undetermined coefficients `sum_k c_{ids[k]} * monomials[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplatePolynomial {
    pub nvars: usize,
    pub degree: u32,
    pub monomials: Vec<Monomial>,
    pub ids: Vec<usize>,
}

impl TemplatePolynomial {
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Instantiates the template with the coefficient values `values[ids[k]]`.
    pub fn instantiate(&self, values: &[f64]) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m, &id) in self.monomials.iter().zip(&self.ids) {
            p.add_term(m.clone(), values[id]);
        }
        p
    }
}

/// Full template of total degree `degree` over `nstate` variables; coefficient
/// ids are `first_id, first_id + 1, ...` in graded monomial order.
pub fn make_template(nstate: usize, degree: u32, first_id: usize) -> TemplatePolynomial {
    let monomials: Vec<Monomial> =
        graded_multi_indices(nstate, degree).into_iter().map(Monomial).collect();
    let ids = (first_id..first_id + monomials.len()).collect();
    TemplatePolynomial { nvars: nstate, degree, monomials, ids }
}
