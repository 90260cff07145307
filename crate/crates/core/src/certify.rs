//! Robust barrier certificates and Handelman positivity witnesses.
//!
//! Every LP is posed in normalized coordinates: the domain box is mapped onto
//! `[-1, 1]^n`, the uncertainty box onto `[-1, 1]^l` and the vector field is
//! divided by its largest coefficient (a time rescaling, which leaves the sign
//! of every Lie derivative unchanged). Solutions are mapped back and the
//! identities are re-checked in the original coordinates before a certificate
//! is returned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{
    encode_identity, residual_check, solve_feasible, IdentityBlock, LinearProgram, LpOutcome,
    PolyForm, SolverError,
};
use crate::modelio::Hyperrect;
use crate::poly::{
    graded_multi_indices, handelman_products, make_template, LinearPolynomial, Polynomial,
};

/// Bound on the scaled identity residual of an emitted certificate.
pub const RESIDUAL_BOUND: f64 = 1e-6;
/// Most negative multiplier tolerated in an emitted certificate.
pub const LAMBDA_FLOOR: f64 = -1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("degree {degree}: solution failed re-verification (residual {residual:e}, min multiplier {min_lambda:e})")]
    Unverified { degree: u32, residual: f64, min_lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertKind {
    /// Keeps the flowpipe away from a non-exit facet of an enclosure box.
    Facet,
    /// Keeps the flowpipe away from an auxiliary slab on the exit facet.
    Slab,
    /// A single query.
    Query,
}

/// A barrier polynomial `B` over the states together with the Handelman
/// multipliers witnessing `B > 0` on `init`, `L_f B > 0` on
/// `domain x uncertainty` and `B < 0` on `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierCertificate {
    pub kind: CertKind,
    pub b: Polynomial,
    pub degree: u32,
    pub orders: [u32; 3],
    pub eps: [f64; 3],
    pub lambda_init: Vec<f64>,
    pub lambda_lie: Vec<f64>,
    pub lambda_target: Vec<f64>,
    pub init: Hyperrect,
    pub domain: Hyperrect,
    pub uncertainty: Hyperrect,
    pub target: Hyperrect,
}

impl BarrierCertificate {
    pub fn min_lambda(&self) -> f64 {
        self.lambda_init
            .iter()
            .chain(&self.lambda_lie)
            .chain(&self.lambda_target)
            .fold(f64::INFINITY, |a, &v| a.min(v))
    }

    /// The three identities with `B` substituted, and the multiplier vector
    /// they index into. Rebuilt from the boxes alone.
    pub fn identity_blocks(&self, dynamics: &[Polynomial]) -> (Vec<IdentityBlock>, Vec<f64>) {
        let n = self.b.nvars();
        let full = dynamics.first().map_or(n, Polynomial::nvars);
        let lie = self.b.lie_derivative(dynamics).expect("certificate over the state space");
        let init_p = handelman_products(&self.init.to_halfspaces(), self.orders[0]);
        let lie_p = handelman_products(&lie_generators(&self.domain, &self.uncertainty, full), self.orders[1]);
        let tgt_p = handelman_products(&self.target.to_halfspaces(), self.orders[2]);
        let mut assignment = Vec::new();
        let mut ids = |len: usize, vals: &[f64]| {
            let start = assignment.len();
            assignment.extend_from_slice(&vals[..len.min(vals.len())]);
            assignment.resize(start + len, 0.0);
            (start..start + len).collect::<Vec<usize>>()
        };
        let i_ids = ids(init_p.len(), &self.lambda_init);
        let l_ids = ids(lie_p.len(), &self.lambda_lie);
        let t_ids = ids(tgt_p.len(), &self.lambda_target);
        let blocks = vec![
            IdentityBlock {
                lhs: PolyForm::from_polynomial(&self.b),
                products: init_p,
                lambda_ids: i_ids,
                epsilon: self.eps[0],
                epsilon_id: None,
            },
            IdentityBlock {
                lhs: PolyForm::from_polynomial(&lie),
                products: lie_p,
                lambda_ids: l_ids,
                epsilon: self.eps[1],
                epsilon_id: None,
            },
            IdentityBlock {
                lhs: PolyForm::from_polynomial(&self.b.scale(-1.0)),
                products: tgt_p,
                lambda_ids: t_ids,
                epsilon: self.eps[2],
                epsilon_id: None,
            },
        ];
        (blocks, assignment)
    }

    /// Scaled identity residual, see [`residual_check`]. Multiplier vectors of
    /// the wrong length are reported as an infinite residual.
    pub fn residual(&self, dynamics: &[Polynomial]) -> f64 {
        let (blocks, assignment) = self.identity_blocks(dynamics);
        let lens = [self.lambda_init.len(), self.lambda_lie.len(), self.lambda_target.len()];
        if blocks.iter().zip(lens).any(|(b, l)| b.products.len() != l) {
            return f64::INFINITY;
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return f64::INFINITY;
        }
        residual_check(&assignment, &blocks)
    }
}

/// Generators of `domain x uncertainty`: the domain halfspaces followed by the
/// uncertainty halfspaces, all over the `(x, u)` space of size `full`.
pub fn lie_generators(domain: &Hyperrect, uncertainty: &Hyperrect, full: usize) -> Vec<LinearPolynomial> {
    let n = domain.dim();
    let mut g: Vec<LinearPolynomial> =
        domain.to_halfspaces().into_iter().map(|h| h.extend_vars(full)).collect();
    g.extend(uncertainty.to_halfspaces().into_iter().map(|h| h.shift_vars(n, full)));
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyOptions {
    pub degrees: Vec<u32>,
    pub eps: [f64; 3],
    /// Handelman orders; `None` picks the smallest orders spanning each identity.
    pub orders: Option<[u32; 3]>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { degrees: vec![1, 2, 3, 4], eps: [1.0; 3], orders: None }
    }
}

/// One barrier query: `B > 0` on `init`, `L_f B > 0` on `domain x uncertainty`,
/// `B < 0` on `target`.
#[derive(Clone, Copy, Debug)]
pub struct BarrierProblem<'a> {
    pub init: &'a Hyperrect,
    pub domain: &'a Hyperrect,
    pub uncertainty: &'a Hyperrect,
    pub target: &'a Hyperrect,
    pub dynamics: &'a [Polynomial],
}

fn scales(b: &Hyperrect) -> (Vec<f64>, Vec<f64>) {
    let c = b.center();
    let r = b.widths().iter().map(|&w| if w > 0.0 { 0.5 * w } else { 1.0 }).collect();
    (c, r)
}

fn to_unit(b: &Hyperrect, c: &[f64], r: &[f64]) -> Hyperrect {
    Hyperrect::new(
        b.bounds()
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| ((lo - c[i]) / r[i], (hi - c[i]) / r[i]))
            .collect(),
    )
    .expect("affine image of a box")
}

/// `prod_k scale_k^alpha_k` for each multi-index, in Handelman order.
fn product_scales(gen_scales: &[f64], order: u32) -> Vec<f64> {
    graded_multi_indices(gen_scales.len(), order)
        .into_iter()
        .map(|a| a.iter().zip(gen_scales).map(|(&e, &s)| s.powi(e as i32)).product())
        .collect()
}

struct Normalized {
    fz: Vec<Polynomial>,
    time_scale: f64,
    c: Vec<f64>,
    r: Vec<f64>,
    ru: Vec<f64>,
    init: Hyperrect,
    domain: Hyperrect,
    unc: Hyperrect,
    target: Hyperrect,
}

fn normalize(p: &BarrierProblem) -> Normalized {
    let (c, r) = scales(p.domain);
    let (cu, ru) = scales(p.uncertainty);
    let shift: Vec<f64> = c.iter().chain(&cu).copied().collect();
    let scale: Vec<f64> = r.iter().chain(&ru).copied().collect();
    let mut fz: Vec<Polynomial> = p
        .dynamics
        .iter()
        .enumerate()
        .map(|(i, fi)| fi.affine_substitute(&shift, &scale).scale(1.0 / r[i]))
        .collect();
    let mx = fz.iter().map(Polynomial::max_abs_coeff).fold(0.0, f64::max);
    let time_scale = if mx > 0.0 { mx } else { 1.0 };
    fz = fz.iter().map(|q| q.scale(1.0 / time_scale)).collect();
    Normalized {
        fz,
        time_scale,
        init: to_unit(p.init, &c, &r),
        domain: to_unit(p.domain, &c, &r),
        unc: to_unit(p.uncertainty, &cu, &ru),
        target: to_unit(p.target, &c, &r),
        c,
        r,
        ru,
    }
}

fn default_orders(degree: u32, dynamics: &[Polynomial]) -> [u32; 3] {
    let df = dynamics.iter().map(Polynomial::degree).max().unwrap_or(0);
    [degree, (degree + df).saturating_sub(1), degree]
}

/// The LP for one degree together with the pieces needed to read it back.
pub struct EncodedBarrier {
    pub lp: LinearProgram,
    pub blocks: Vec<IdentityBlock>,
    pub orders: [u32; 3],
    ncoef: usize,
    norm: Normalized,
}

/// Builds the normalized feasibility program for one template degree.
pub fn encode_barrier(p: &BarrierProblem, degree: u32, opts: &CertifyOptions) -> EncodedBarrier {
    let n = p.domain.dim();
    let norm = normalize(p);
    let full = n + p.uncertainty.dim();
    let orders = opts.orders.unwrap_or_else(|| default_orders(degree, &norm.fz));
    let mut lp = LinearProgram::new();
    let t = make_template(n, degree, 0);
    for k in 0..t.len() {
        lp.add_var(format!("c{k}"), None);
    }
    let init_p = handelman_products(&norm.init.to_halfspaces(), orders[0]);
    let lie_p = handelman_products(&lie_generators(&norm.domain, &norm.unc, full), orders[1]);
    let tgt_p = handelman_products(&norm.target.to_halfspaces(), orders[2]);
    let i_ids = lp.add_nonneg_vars("li", init_p.len());
    let l_ids = lp.add_nonneg_vars("ll", lie_p.len());
    let t_ids = lp.add_nonneg_vars("lt", tgt_p.len());
    let blocks = vec![
        IdentityBlock {
            lhs: PolyForm::from_template(&t),
            products: init_p,
            lambda_ids: i_ids,
            epsilon: opts.eps[0],
            epsilon_id: None,
        },
        IdentityBlock {
            lhs: PolyForm::lie_of_template(&t, &norm.fz),
            products: lie_p,
            lambda_ids: l_ids,
            epsilon: opts.eps[1],
            epsilon_id: None,
        },
        IdentityBlock {
            lhs: PolyForm::from_template(&t).negate(),
            products: tgt_p,
            lambda_ids: t_ids,
            epsilon: opts.eps[2],
            epsilon_id: None,
        },
    ];
    for b in &blocks {
        lp.rows.extend(encode_identity(b));
    }
    EncodedBarrier { lp, blocks, orders, ncoef: t.len(), norm }
}

fn decode(
    p: &BarrierProblem,
    enc: &EncodedBarrier,
    degree: u32,
    x: &[f64],
    kind: CertKind,
    opts: &CertifyOptions,
) -> BarrierCertificate {
    let n = p.domain.dim();
    let norm = &enc.norm;
    let bz = PolyForm::from_template(&make_template(n, degree, 0)).instantiate(&x[..enc.ncoef]);
    let inv_r: Vec<f64> = norm.r.iter().map(|r| 1.0 / r).collect();
    let shift: Vec<f64> = norm.c.iter().zip(&norm.r).map(|(c, r)| -c / r).collect();
    let b = bz.affine_substitute(&shift, &inv_r);
    let state_scales: Vec<f64> = norm.r.iter().flat_map(|&r| [r, r]).collect();
    let unc_scales: Vec<f64> = norm.ru.iter().flat_map(|&r| [r, r]).collect();
    let lie_scales: Vec<f64> = state_scales.iter().chain(&unc_scales).copied().collect();
    let read = |block: &IdentityBlock, gscales: &[f64], order: u32, factor: f64| -> Vec<f64> {
        let ps = product_scales(gscales, order);
        block.lambda_ids.iter().zip(ps).map(|(&id, s)| factor * x[id] / s).collect()
    };
    let ts = norm.time_scale;
    BarrierCertificate {
        kind,
        b,
        degree,
        orders: enc.orders,
        eps: [opts.eps[0], opts.eps[1] * ts, opts.eps[2]],
        lambda_init: read(&enc.blocks[0], &state_scales, enc.orders[0], 1.0),
        lambda_lie: read(&enc.blocks[1], &lie_scales, enc.orders[1], ts),
        lambda_target: read(&enc.blocks[2], &state_scales, enc.orders[2], 1.0),
        init: p.init.clone(),
        domain: p.domain.clone(),
        uncertainty: p.uncertainty.clone(),
        target: p.target.clone(),
    }
}

/// Tries each degree in `opts.degrees` in turn and returns the first
/// certificate that passes the identity check. Solver failures and
/// certificates failing the check are logged and skipped.
pub fn find_robust_barrier(
    p: &BarrierProblem,
    opts: &CertifyOptions,
    kind: CertKind,
) -> Result<Option<BarrierCertificate>, CertifyError> {
    for &degree in &opts.degrees {
        let enc = encode_barrier(p, degree, opts);
        let x = match solve_feasible(&enc.lp) {
            Ok(LpOutcome::Feasible(x)) => x,
            Ok(LpOutcome::Infeasible) => continue,
            Err(e) => {
                log::warn!("degree {degree}: {e}");
                continue;
            }
        };
        let cert = decode(p, &enc, degree, &x, kind, opts);
        let residual = cert.residual(p.dynamics);
        let min_lambda = cert.min_lambda();
        if residual > RESIDUAL_BOUND || min_lambda < LAMBDA_FLOOR {
            log::warn!("{}", CertifyError::Unverified { degree, residual, min_lambda });
            continue;
        }
        return Ok(Some(cert));
    }
    Ok(None)
}

/// Sign-grid and identity check of a certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub min_init: f64,
    pub min_lie: f64,
    pub max_target: f64,
    pub residual: f64,
    pub min_lambda: f64,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.min_init > 0.0
            && self.min_lie > 0.0
            && self.max_target < 0.0
            && self.residual <= RESIDUAL_BOUND
            && self.min_lambda >= LAMBDA_FLOOR
    }
}

/// Evaluates `B` on a `grid`-per-dimension lattice of the init and target
/// boxes and `L_f B` on a lattice of `domain x uncertainty` (box vertices are
/// always part of the lattice), and recomputes the identity residual.
pub fn verify_certificate(cert: &BarrierCertificate, dynamics: &[Polynomial], grid: usize) -> VerifyReport {
    let grid = grid.max(2);
    let lie = cert.b.lie_derivative(dynamics).expect("certificate over the state space");
    let min_init = cert
        .init
        .grid(grid)
        .iter()
        .map(|x| cert.b.eval_unchecked(x))
        .fold(f64::INFINITY, f64::min);
    let min_lie = cert
        .domain
        .product(&cert.uncertainty)
        .grid(grid)
        .iter()
        .map(|x| lie.eval_unchecked(x))
        .fold(f64::INFINITY, f64::min);
    let max_target = cert
        .target
        .grid(grid)
        .iter()
        .map(|x| cert.b.eval_unchecked(x))
        .fold(f64::NEG_INFINITY, f64::max);
    VerifyReport {
        min_init,
        min_lie,
        max_target,
        residual: cert.residual(dynamics),
        min_lambda: cert.min_lambda(),
    }
}

/// Witness that `p >= eps > 0` on `bx`: `p - sum lambda_k products_k - eps == 0`
/// with the Handelman products of the box halfspaces up to `order`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositivityWitness {
    pub order: u32,
    pub lambdas: Vec<f64>,
    pub eps: f64,
}

impl PositivityWitness {
    pub fn residual(&self, p: &Polynomial, bx: &Hyperrect) -> f64 {
        let products = handelman_products(&bx.to_halfspaces(), self.order);
        if products.len() != self.lambdas.len() || !(self.eps > 0.0) {
            return f64::INFINITY;
        }
        let block = IdentityBlock {
            lhs: PolyForm::from_polynomial(p),
            products,
            lambda_ids: (0..self.lambdas.len()).collect(),
            epsilon: self.eps,
            epsilon_id: None,
        };
        residual_check(&self.lambdas, &[block])
    }
}

/// Searches a Handelman witness of `p > 0` on `bx` with products up to `order`.
pub fn positivity_certificate(
    p: &Polynomial,
    bx: &Hyperrect,
    order: u32,
) -> Result<Option<PositivityWitness>, CertifyError> {
    let (c, r) = scales(bx);
    let zb = to_unit(bx, &c, &r);
    let pz = p.affine_substitute(&c, &r);
    let sp = pz.max_abs_coeff();
    if sp == 0.0 {
        return Ok(None);
    }
    let pz = pz.scale(1.0 / sp);
    let products = handelman_products(&zb.to_halfspaces(), order);
    let mut lp = LinearProgram::new();
    let ids = lp.add_nonneg_vars("l", products.len());
    let eps_min = 1e-7;
    let eid = lp.add_var("eps", Some(eps_min));
    let block = IdentityBlock {
        lhs: PolyForm::from_polynomial(&pz),
        products,
        lambda_ids: ids,
        epsilon: eps_min,
        epsilon_id: Some(eid),
    };
    lp.rows = encode_identity(&block);
    let LpOutcome::Feasible(x) = solve_feasible(&lp)? else {
        return Ok(None);
    };
    let gscales: Vec<f64> = r.iter().flat_map(|&v| [v, v]).collect();
    let ps = product_scales(&gscales, order);
    let lambdas: Vec<f64> = block.lambda_ids.iter().zip(ps).map(|(&id, s)| sp * x[id] / s).collect();
    let w = PositivityWitness { order, lambdas, eps: sp * x[eid] };
    let residual = w.residual(p, bx);
    let min_lambda = w.lambdas.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if residual > RESIDUAL_BOUND || min_lambda < LAMBDA_FLOOR {
        return Err(CertifyError::Unverified { degree: order, residual, min_lambda });
    }
    Ok(Some(w))
}
