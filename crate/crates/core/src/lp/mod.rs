//! Linear feasibility programs built from Handelman polynomial identities.

mod mps;
mod simplex;

pub use mps::write_mps;
pub use simplex::{solve_feasible, LpOutcome, SolverError};

use std::collections::BTreeMap;

use crate::poly::{Monomial, Polynomial, TemplatePolynomial};

/// One equality row `sum coeffs[k].1 * x[coeffs[k].0] = rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Equality-constrained feasibility problem. `lower[j] == None` marks a free
/// variable, `Some(lb)` a variable with `x_j >= lb`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub lower: Vec<Option<f64>>,
    pub names: Vec<String>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        LinearProgram { lower: Vec::new(), names: Vec::new(), rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>) -> usize {
        self.lower.push(lower);
        self.names.push(name.into());
        self.lower.len() - 1
    }

    /// Adds `count` nonnegative variables named `{prefix}{k}`; returns their ids.
    pub fn add_nonneg_vars(&mut self, prefix: &str, count: usize) -> Vec<usize> {
        (0..count).map(|k| self.add_var(format!("{prefix}{k}"), Some(0.0))).collect()
    }

    /// Largest `|sum a x - b|` over rows.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - r.rhs).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for LinearProgram {
    fn default() -> Self {
        Self::new()
    }
}

/// Coefficient that is affine in the LP variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineCoeff {
    pub vars: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineCoeff {
    fn eval(&self, x: &[f64]) -> (f64, f64) {
        let mut s = self.constant;
        let mut m = self.constant.abs();
        for &(j, a) in &self.vars {
            let t = a * x[j];
            s += t;
            m = m.max(t.abs());
        }
        (s, m)
    }
}

/// A polynomial whose coefficients are affine functions of LP variables,
/// such as a template `B(c, x)` or its Lie derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyForm {
    pub nvars: usize,
    pub terms: BTreeMap<Monomial, AffineCoeff>,
}

impl PolyForm {
    /// The template itself.
    pub fn from_template(t: &TemplatePolynomial) -> Self {
        let mut terms = BTreeMap::new();
        for (m, &id) in t.monomials.iter().zip(&t.ids) {
            terms.insert(m.clone(), AffineCoeff { vars: vec![(id, 1.0)], constant: 0.0 });
        }
        PolyForm { nvars: t.nvars, terms }
    }

    /// `L_f B(c, x) = sum_m c_m L_f m`, over the `(x, u)` space of `f`.
    pub fn lie_of_template(t: &TemplatePolynomial, f: &[Polynomial]) -> Self {
        let nvars = f.first().map(Polynomial::nvars).unwrap_or(t.nvars);
        let mut terms: BTreeMap<Monomial, AffineCoeff> = BTreeMap::new();
        for (m, &id) in t.monomials.iter().zip(&t.ids) {
            let mut mono = Polynomial::zero(t.nvars);
            mono.add_term(m.clone(), 1.0);
            let l = mono.lie_derivative(f).expect("template over the state space of f");
            for (lm, c) in l.terms() {
                terms.entry(lm.clone()).or_default().vars.push((id, c));
            }
        }
        PolyForm { nvars, terms }
    }

    /// A fixed polynomial (no LP variables).
    pub fn from_polynomial(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(m, c)| (m.clone(), AffineCoeff { vars: Vec::new(), constant: c }))
            .collect();
        PolyForm { nvars: p.nvars(), terms }
    }

    pub fn negate(mut self) -> Self {
        for c in self.terms.values_mut() {
            c.constant = -c.constant;
            for v in &mut c.vars {
                v.1 = -v.1;
            }
        }
        self
    }

    pub fn instantiate(&self, x: &[f64]) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            p.add_term(m.clone(), c.eval(x).0);
        }
        p
    }
}

/// One Handelman identity `lhs - sum_k lambda_k products_k - eps == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityBlock {
    pub lhs: PolyForm,
    pub products: Vec<Polynomial>,
    pub lambda_ids: Vec<usize>,
    /// The margin, or its lower bound when `epsilon_id` is set.
    pub epsilon: f64,
    /// When set, the margin is this LP variable instead of a constant.
    pub epsilon_id: Option<usize>,
}

/// One equality row per monomial appearing on either side of the identity,
/// in monomial order: `lhs_m(c) - sum_k lambda_k [m]products_k = [m = 1] eps`.
pub fn encode_identity(block: &IdentityBlock) -> Vec<Row> {
    assert!(block.epsilon > 0.0, "epsilon must be positive");
    assert_eq!(block.products.len(), block.lambda_ids.len());
    let mut rows: BTreeMap<Monomial, (BTreeMap<usize, f64>, f64)> = BTreeMap::new();
    for (m, c) in &block.lhs.terms {
        let e = rows.entry(m.clone()).or_default();
        for &(j, a) in &c.vars {
            *e.0.entry(j).or_insert(0.0) += a;
        }
        e.1 -= c.constant;
    }
    for (p, &lid) in block.products.iter().zip(&block.lambda_ids) {
        for (m, c) in p.terms() {
            let e = rows.entry(m.clone()).or_default();
            *e.0.entry(lid).or_insert(0.0) -= c;
        }
    }
    let one = Monomial::one(block.lhs.nvars);
    let e = rows.entry(one).or_default();
    match block.epsilon_id {
        Some(id) => *e.0.entry(id).or_insert(0.0) -= 1.0,
        None => e.1 += block.epsilon,
    }
    rows.into_values()
        .map(|(coeffs, rhs)| Row {
            coeffs: coeffs.into_iter().filter(|&(_, a)| a != 0.0).collect(),
            rhs,
        })
        .collect()
}

/// Largest scaled residual of the identities under `assignment`.
///
/// For every block and monomial the residual `lhs - sum lambda*product - eps`
/// is divided by `max(1, largest magnitude among the summed terms)`, so the
/// measure is absolute for unit-scale identities and relative for identities
/// whose terms are large.
pub fn residual_check(assignment: &[f64], blocks: &[IdentityBlock]) -> f64 {
    let mut worst: f64 = 0.0;
    for b in blocks {
        let mut acc: BTreeMap<&Monomial, (f64, f64)> = BTreeMap::new();
        for (m, c) in &b.lhs.terms {
            let (s, mag) = c.eval(assignment);
            let e = acc.entry(m).or_insert((0.0, 0.0));
            e.0 += s;
            e.1 = e.1.max(mag);
        }
        for (p, &lid) in b.products.iter().zip(&b.lambda_ids) {
            let lam = assignment[lid];
            if lam == 0.0 {
                continue;
            }
            for (m, c) in p.terms() {
                let t = lam * c;
                let e = acc.entry(m).or_insert((0.0, 0.0));
                e.0 -= t;
                e.1 = e.1.max(t.abs());
            }
        }
        let eps = b.epsilon_id.map_or(b.epsilon, |id| assignment[id]);
        let one = Monomial::one(b.lhs.nvars);
        let e = acc.entry(&one).or_insert((0.0, 0.0));
        e.0 -= eps;
        e.1 = e.1.max(eps.abs());
        for (s, mag) in acc.values() {
            worst = worst.max(s.abs() / mag.max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::Hyperrect;
    use crate::poly::{handelman_products, make_template};

    fn const_block() -> (LinearProgram, IdentityBlock) {
        let mut lp = LinearProgram::new();
        let t = make_template(1, 0, lp.num_vars());
        lp.add_var("c0", None);
        let products = vec![Polynomial::constant(1, 1.0)];
        let lambda_ids = lp.add_nonneg_vars("l", 1);
        let block = IdentityBlock {
            lhs: PolyForm::from_template(&t),
            products,
            lambda_ids,
            epsilon: 1.0,
            epsilon_id: None,
        };
        lp.rows = encode_identity(&block);
        (lp, block)
    }

    #[test]
    fn constant_template_identity() {
        let (lp, block) = const_block();
        assert_eq!(lp.rows.len(), 1);
        assert_eq!(lp.rows[0], Row { coeffs: vec![(0, 1.0), (1, -1.0)], rhs: 1.0 });
        assert_eq!(residual_check(&[1.0, 0.0], std::slice::from_ref(&block)), 0.0);
        assert!((residual_check(&[1.0, 0.1], std::slice::from_ref(&block)) - 0.1).abs() < 1e-15);
        match solve_feasible(&lp).unwrap() {
            LpOutcome::Feasible(x) => assert!(residual_check(&x, &[block]) < 1e-9),
            LpOutcome::Infeasible => panic!("feasible system reported infeasible"),
        }
    }

    #[test]
    fn zero_template_is_infeasible() {
        let mut lp = LinearProgram::new();
        let lambda_ids = lp.add_nonneg_vars("l", 1);
        let block = IdentityBlock {
            lhs: PolyForm::from_polynomial(&Polynomial::zero(1)),
            products: vec![Polynomial::constant(1, 1.0)],
            lambda_ids,
            epsilon: 1.0,
            epsilon_id: None,
        };
        lp.rows = encode_identity(&block);
        assert_eq!(lp.rows, vec![Row { coeffs: vec![(0, -1.0)], rhs: 1.0 }]);
        assert_eq!(solve_feasible(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn example_one_init_block_rows() {
        let x0 = Hyperrect::new(vec![(-100.0, -90.0), (-45.0, -40.0)]).unwrap();
        let mut lp = LinearProgram::new();
        let t = make_template(2, 1, 0);
        for k in 0..t.len() {
            lp.add_var(format!("c{k}"), None);
        }
        let products = handelman_products(&x0.to_halfspaces(), 1);
        let lambda_ids = lp.add_nonneg_vars("l", products.len());
        let block = IdentityBlock {
            lhs: PolyForm::from_template(&t),
            products,
            lambda_ids,
            epsilon: 1.0,
            epsilon_id: None,
        };
        let rows = encode_identity(&block);
        assert_eq!(rows.len(), 3);
        assert_eq!(lp.num_vars(), 8);
        // constant row: c0 - l0 - 100 l1 + 90 l2 - 45 l3 + 40 l4 = 1
        let konst = rows.iter().find(|r| r.rhs == 1.0).unwrap();
        assert!(konst.coeffs.contains(&(0, 1.0)));
        assert!(konst.coeffs.contains(&(3, -1.0)));
        assert!(konst.coeffs.contains(&(4, -100.0)));
    }
}
