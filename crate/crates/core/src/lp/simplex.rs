//! Dense phase-1 simplex for `A x = b` with free and lower-bounded variables.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::LinearProgram;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const AMBIGUOUS_TOL: f64 = 1e-7;
const RESIDUAL_TOL: f64 = 1e-7;
const BOUND_TOL: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Feasible(Vec<f64>),
    Infeasible,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("solution residual {0:e} exceeds tolerance")]
    Residual(f64),
    #[error("variable {var} violates its bound by {amount:e}")]
    Bound { var: usize, amount: f64 },
    #[error("non-finite data in linear program")]
    NonFinite,
}

/// Column of the standard form: original variable, sign, lower bound shift.
#[derive(Clone, Copy)]
struct ColMap {
    var: usize,
    sign: f64,
}

struct Standard {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    cols: Vec<ColMap>,
    col_scale: Vec<f64>,
    shift: Vec<f64>,
}

fn pow2_scale(max: f64) -> f64 {
    if max == 0.0 || !max.is_finite() {
        1.0
    } else {
        (2f64).powi(-(max.log2().round() as i32))
    }
}

fn standardize(lp: &LinearProgram) -> Result<Option<Standard>, SolverError> {
    let mut cols = Vec::new();
    let mut first_col = Vec::with_capacity(lp.num_vars());
    let mut shift = vec![0.0; lp.num_vars()];
    for (j, lb) in lp.lower.iter().enumerate() {
        first_col.push(cols.len());
        cols.push(ColMap { var: j, sign: 1.0 });
        match lb {
            None => cols.push(ColMap { var: j, sign: -1.0 }),
            Some(v) => shift[j] = *v,
        }
    }
    let ncols = cols.len();
    let mut a = Vec::with_capacity(lp.rows.len());
    let mut b = Vec::with_capacity(lp.rows.len());
    for r in &lp.rows {
        let mut row = vec![0.0; ncols];
        let mut rhs = r.rhs;
        for &(j, v) in &r.coeffs {
            if !v.is_finite() {
                return Err(SolverError::NonFinite);
            }
            let c = first_col[j];
            row[c] += v;
            if lp.lower[j].is_none() {
                row[c + 1] -= v;
            }
            rhs -= v * shift[j];
        }
        if !rhs.is_finite() {
            return Err(SolverError::NonFinite);
        }
        if row.iter().all(|&v| v == 0.0) {
            if rhs.abs() > 0.0 {
                return Ok(None);
            }
            continue;
        }
        a.push(row);
        b.push(rhs);
    }
    // equilibration with power-of-two factors, exact in binary
    let m = a.len();
    let mut col_scale = vec![1.0; ncols];
    for _ in 0..3 {
        for (row, rhs) in a.iter_mut().zip(b.iter_mut()) {
            let s = pow2_scale(row.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
            row.iter_mut().for_each(|v| *v *= s);
            *rhs *= s;
        }
        for (j, cs) in col_scale.iter_mut().enumerate() {
            let mx = (0..m).fold(0.0f64, |acc, i| acc.max(a[i][j].abs()));
            let s = pow2_scale(mx);
            if s != 1.0 {
                for row in a.iter_mut() {
                    row[j] *= s;
                }
                *cs *= s;
            }
        }
    }
    for (row, rhs) in a.iter_mut().zip(b.iter_mut()) {
        let mx = row.iter().fold(rhs.abs(), |acc, v| acc.max(v.abs()));
        let s = pow2_scale(mx);
        row.iter_mut().for_each(|v| *v *= s);
        *rhs *= s;
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
        }
    }
    Ok(Some(Standard { a, b, cols, col_scale, shift }))
}

/// Sparse revised simplex on the equilibrated standard form. `None` when the
/// solver gives up or its point misses the residual tolerance.
fn solve_sparse(std: &Standard) -> Option<LpOutcome> {
    use microlp::{ComparisonOp, Error, OptimizationDirection, Problem, SolveOutcome};
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..std.cols.len()).map(|_| pb.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for (row, &b) in std.a.iter().zip(&std.b) {
        let expr: Vec<_> = row.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, &a)| (vars[j], a)).collect();
        pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, b);
    }
    match pb.solve() {
        Ok(SolveOutcome::Solution(sol)) => {
            let x: Vec<f64> = vars.iter().map(|&v| sol[v].max(0.0)).collect();
            (scaled_residual(std, &x) <= RESIDUAL_TOL).then_some(LpOutcome::Feasible(x))
        }
        Err(Error::Infeasible) => Some(LpOutcome::Infeasible),
        Ok(SolveOutcome::Interrupted(_)) | Err(_) => None,
    }
}

/// Finds a point satisfying the program or proves none exists.
///
/// The sparse solver runs first; when it fails, a dense phase-1 simplex on the equilibrated standard form, Dantzig pricing with a
/// switch to Bland's rule after a run of degenerate pivots, then one basis
/// re-solve through an LU factorization to clean up accumulated error.
pub fn solve_feasible(lp: &LinearProgram) -> Result<LpOutcome, SolverError> {
    let Some(std) = standardize(lp)? else {
        return Ok(LpOutcome::Infeasible);
    };
    let m = std.a.len();
    let n = std.cols.len();
    if m == 0 {
        return finish(lp, &std, &vec![0.0; n]);
    }
    match solve_sparse(&std) {
        Some(LpOutcome::Feasible(x)) => return finish(lp, &std, &x),
        Some(LpOutcome::Infeasible) => return Ok(LpOutcome::Infeasible),
        None => log::debug!("sparse solve failed; dense fallback"),
    }
    let mut t = std.a.clone();
    let mut rhs = std.b.clone();
    // basis[i] < n: structural column; >= n: artificial of row basis[i] - n
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut d: Vec<f64> = (0..n).map(|j| -(0..m).map(|i| t[i][j]).sum::<f64>()).collect();
    let mut obj: f64 = rhs.iter().sum();
    let scale_obj = 1.0 + obj.abs();

    let max_iter = 50 * (m + n) + 1000;
    let mut degenerate_run = 0usize;
    let mut iter = 0usize;
    let mut pivot_nz: Vec<usize> = Vec::with_capacity(n);
    loop {
        if obj <= FEAS_TOL * scale_obj * 1e-3 {
            break;
        }
        iter += 1;
        if iter > max_iter {
            return Err(SolverError::IterationLimit(max_iter));
        }
        let bland = degenerate_run >= DEGENERATE_SWITCH;
        let enter = if bland {
            (0..n).find(|&j| d[j] < -COST_TOL)
        } else {
            let mut best = None;
            let mut best_v = -COST_TOL;
            for (j, &v) in d.iter().enumerate() {
                if v < best_v {
                    best_v = v;
                    best = Some(j);
                }
            }
            best
        };
        let Some(q) = enter else { break };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = t[i][q];
            if a <= PIVOT_TOL {
                continue;
            }
            let r = rhs[i].max(0.0) / a;
            let better = match leave {
                None => true,
                Some(l) => {
                    if r < best_ratio - 1e-12 * (1.0 + best_ratio) {
                        true
                    } else if r <= best_ratio + 1e-12 * (1.0 + best_ratio) {
                        if bland {
                            basis[i] < basis[l]
                        } else {
                            a > t[l][q]
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                leave = Some(i);
                best_ratio = r;
            }
        }
        let Some(p) = leave else {
            // phase-1 objective is bounded below, so an unbounded ray means
            // the reduced cost is noise; drop it and continue
            d[q] = 0.0;
            continue;
        };
        if best_ratio == 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        let piv = t[p][q];
        let inv = 1.0 / piv;
        pivot_nz.clear();
        for (j, v) in t[p].iter_mut().enumerate() {
            if *v != 0.0 {
                *v *= inv;
                if v.abs() < 1e-15 {
                    *v = 0.0;
                } else {
                    pivot_nz.push(j);
                }
            }
        }
        rhs[p] *= inv;
        t[p][q] = 1.0;
        let prow = std::mem::take(&mut t[p]);
        for i in 0..m {
            if i == p {
                continue;
            }
            let f = t[i][q];
            if f == 0.0 {
                continue;
            }
            let row = &mut t[i];
            for &j in &pivot_nz {
                row[j] -= f * prow[j];
            }
            row[q] = 0.0;
            rhs[i] -= f * rhs[p];
            if rhs[i] < 0.0 && rhs[i] > -1e-13 {
                rhs[i] = 0.0;
            }
        }
        let f = d[q];
        for &j in &pivot_nz {
            d[j] -= f * prow[j];
        }
        d[q] = 0.0;
        t[p] = prow;
        basis[p] = q;
        // recompute the objective exactly from the artificial levels
        obj = basis
            .iter()
            .zip(&rhs)
            .filter(|(&bv, _)| bv >= n)
            .map(|(_, &v)| v)
            .sum();
    }
    let phase1 = obj.max(0.0);
    if phase1 > AMBIGUOUS_TOL * scale_obj {
        return Ok(LpOutcome::Infeasible);
    }
    // candidate from the tableau
    let mut x_tab = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x_tab[bv] = rhs[i];
        }
    }
    let x_lu = refine(&std, &basis).unwrap_or_else(|| x_tab.clone());
    let res_tab = scaled_residual(&std, &x_tab);
    let res_lu = scaled_residual(&std, &x_lu);
    let x = if res_lu <= res_tab && x_lu.iter().all(|&v| v >= -1e-7) { x_lu } else { x_tab };
    let res = scaled_residual(&std, &x);
    if res > RESIDUAL_TOL {
        if phase1 > FEAS_TOL * scale_obj {
            return Ok(LpOutcome::Infeasible);
        }
        return Err(SolverError::Residual(res));
    }
    finish(lp, &std, &x)
}

/// Re-solves `B x_B = b` for the final basis (artificial columns are unit
/// vectors).
fn refine(std: &Standard, basis: &[usize]) -> Option<Vec<f64>> {
    let m = std.a.len();
    let n = std.cols.len();
    let mut bm = DMatrix::<f64>::zeros(m, m);
    for (k, &bv) in basis.iter().enumerate() {
        if bv < n {
            for i in 0..m {
                bm[(i, k)] = std.a[i][bv];
            }
        } else {
            bm[(bv - n, k)] = 1.0;
        }
    }
    let lu = bm.lu();
    let sol = lu.solve(&DVector::from_column_slice(&std.b))?;
    let mut x = vec![0.0; n];
    for (k, &bv) in basis.iter().enumerate() {
        if bv < n {
            if !sol[k].is_finite() {
                return None;
            }
            x[bv] = sol[k];
        }
    }
    Some(x)
}

fn scaled_residual(std: &Standard, x: &[f64]) -> f64 {
    std.a
        .iter()
        .zip(&std.b)
        .map(|(row, &b)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
        .fold(0.0, f64::max)
}

fn finish(lp: &LinearProgram, std: &Standard, xs: &[f64]) -> Result<LpOutcome, SolverError> {
    let mut x = std.shift.clone();
    for (k, c) in std.cols.iter().enumerate() {
        let v = xs[k] * std.col_scale[k];
        if v < 0.0 {
            if v < -BOUND_TOL * (1.0 + std.col_scale[k]) {
                return Err(SolverError::Bound { var: c.var, amount: -v });
            }
            continue;
        }
        x[c.var] += c.sign * v;
    }
    for (j, lb) in lp.lower.iter().enumerate() {
        if let Some(l) = lb {
            if x[j] < *l {
                x[j] = *l;
            }
        }
    }
    Ok(LpOutcome::Feasible(x))
}
