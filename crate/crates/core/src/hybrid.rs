//! Discrete transitions: guard detection, tubes that end on a guard plane,
//! and images of crossing boxes under linear resets.
//!
//! A transition fires when a trajectory crosses its guard plane from the
//! open non-guard side. Starting on the plane does not fire it.

use std::collections::VecDeque;

use thiserror::Error;

use crate::certify::{positivity_certificate, CertifyError, CertifyOptions};
use crate::enclosure::{
    certify_facets, enclose_runs, plane_valid, run_sample, sample_initial, ExitFacet, Flow, Side,
};
use crate::modelio::{Guard, GuardOp, Hyperrect, Transition};
use crate::par;
use crate::tube::{compute_rbt, RobustBarrierTube};

pub const QUEUE_BUDGET: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("transitions {first} and {second} both reach one enclosure")]
    Unsupported { first: usize, second: usize },
    #[error("guard crossing needs more than {0} sub-boxes")]
    Budget(usize),
    #[error("no tube reaches the guard from a point-like box: {0}")]
    NoCrossing(String),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// The guard plane as an exit facet, oriented into the guard region.
pub fn guard_plane(g: &Guard) -> ExitFacet {
    let side = match g.op {
        GuardOp::Le => Side::Low,
        GuardOp::Ge => Side::High,
    };
    ExitFacet { dim: g.var, side, value: g.bound }
}

/// First transition out of `mode` whose closed guard halfspace meets `e`.
pub fn detect_guard(e: &Hyperrect, transitions: &[Transition], mode: usize) -> Result<Option<usize>, HybridError> {
    detect_guard_where(e, transitions, mode, |_| Ok(true))
}

/// Like [`detect_guard`], skipping transitions for which `reachable` is false.
pub fn detect_guard_where(
    e: &Hyperrect,
    transitions: &[Transition],
    mode: usize,
    mut reachable: impl FnMut(&Transition) -> Result<bool, HybridError>,
) -> Result<Option<usize>, HybridError> {
    let mut hit = None;
    for (i, t) in transitions.iter().enumerate() {
        if t.from != mode || t.guard.clip(e).is_none() || !reachable(t)? {
            continue;
        }
        match hit {
            None => hit = Some(i),
            Some(first) => return Err(HybridError::Unsupported { first, second: i }),
        }
    }
    Ok(hit)
}

/// True when the field points strictly away from the guard region on the
/// slice of `e` at the guard plane, for every uncertainty value. Trajectories
/// inside `e` then cannot cross into the guard.
pub fn guard_repelled(flow: &Flow, e: &Hyperrect, g: &Guard) -> Result<bool, CertifyError> {
    let (lo, hi) = e.bounds()[g.var];
    if g.bound < lo || g.bound > hi {
        return Ok(false);
    }
    let slice = e.with_bounds(g.var, g.bound, g.bound).product(flow.uncertainty);
    let away = flow.dynamics[g.var].scale(-guard_plane(g).side.sign());
    let deg = away.degree().max(1);
    for order in deg..=deg + 2 {
        if positivity_certificate(&away, &slice, order)?.is_some() {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Tight box around `{a x + offset : x in b}`.
pub fn box_linear_image(a: &[Vec<f64>], offset: &[f64], b: &Hyperrect) -> Hyperrect {
    let bounds = a
        .iter()
        .zip(offset)
        .map(|(row, &o)| {
            row.iter().zip(b.bounds()).fold((o, o), |(lo, hi), (&aij, &(l, h))| {
                let (p, q) = (aij * l, aij * h);
                (lo + p.min(q), hi + p.max(q))
            })
        })
        .collect();
    Hyperrect::new(bounds).expect("image of a box")
}

#[derive(Clone, Copy, Debug)]
pub struct GuardParams<'a> {
    pub opts: &'a CertifyOptions,
    pub eps_rel: f64,
    /// Samples give up after travelling `4 d` without reaching the guard.
    pub d: f64,
    pub budget: usize,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuardOutcome {
    /// One tube per processed sub-box, each exiting through the guard plane.
    pub tubes: Vec<RobustBarrierTube>,
    pub crossing: Hyperrect,
    pub image: Hyperrect,
    pub pops: usize,
}

fn guard_tube(
    flow: &Flow,
    mode: usize,
    x0: &Hyperrect,
    plane: ExitFacet,
    prm: &GuardParams,
) -> Result<RobustBarrierTube, String> {
    let u = flow.center_input();
    let samples = sample_initial(x0);
    let planes = [plane];
    let runs = par::map(&samples, prm.parallel, |s| run_sample(flow, &u, s, &planes, prm.d));
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    if !plane_valid(&samples, &runs, &planes, 0) {
        return Err("some sample does not reach the guard".into());
    }
    let enc = enclose_runs(flow, x0, &runs, &planes, 0).map_err(|e| e.to_string())?;
    let enc = certify_facets(flow, x0, enc, prm.opts, prm.parallel).map_err(|e| e.to_string())?;
    compute_rbt(flow, mode, x0, enc, prm.eps_rel, prm.opts, prm.parallel).map_err(|e| e.to_string())
}

fn split_widest(b: &Hyperrect) -> Option<(Hyperrect, Hyperrect)> {
    let w = b.widths();
    let i = (0..w.len()).max_by(|&a, &c| w[a].total_cmp(&w[c]).then(c.cmp(&a)))?;
    if w[i] <= 0.0 {
        return None;
    }
    let mid = 0.5 * (b.lo(i) + b.hi(i));
    Some((b.with_bounds(i, b.lo(i), mid), b.with_bounds(i, mid, b.hi(i))))
}

/// Builds tubes from `x0` to the guard plane of `tr`, splitting sub-boxes
/// whose tube fails, and maps the hull of the crossing boxes through the reset.
pub fn handle_transition(
    flow: &Flow,
    mode: usize,
    x0: &Hyperrect,
    tr: &Transition,
    prm: &GuardParams,
) -> Result<GuardOutcome, HybridError> {
    let plane = guard_plane(&tr.guard);
    let mut queue = VecDeque::from([x0.clone()]);
    let mut tubes = Vec::new();
    let mut pops = 0;
    while let Some(b) = queue.pop_front() {
        pops += 1;
        if pops > prm.budget {
            return Err(HybridError::Budget(prm.budget));
        }
        match guard_tube(flow, mode, &b, plane, prm) {
            Ok(t) => tubes.push(t),
            Err(msg) => {
                log::debug!("guard tube from {:?} failed: {msg}", b.bounds());
                let (l, r) = split_widest(&b).ok_or(HybridError::NoCrossing(msg))?;
                queue.push_back(l);
                queue.push_back(r);
            }
        }
    }
    let crossing = tubes
        .iter()
        .map(|t| t.exit_region.clone())
        .reduce(|a, b| a.hull(&b))
        .expect("at least one tube");
    let image = box_linear_image(&tr.reset, &tr.offset, &crossing);
    Ok(GuardOutcome { tubes, crossing, image, pops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use crate::simulate::VectorField;

    fn bx(v: &[(f64, f64)]) -> Hyperrect {
        Hyperrect::new(v.to_vec()).unwrap()
    }

    fn tr(var: usize, op: GuardOp, bound: f64, scale: f64) -> Transition {
        Transition {
            from: 0,
            to: 1,
            guard: Guard { var, op, bound },
            reset: vec![vec![scale, 0.0], vec![0.0, scale]],
            offset: vec![0.0, 0.0],
        }
    }

    #[test]
    fn guard_detection() {
        let e = bx(&[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(detect_guard(&e, &[tr(0, GuardOp::Ge, 0.5, 1.0)], 0), Ok(Some(0)));
        assert_eq!(detect_guard(&e, &[tr(0, GuardOp::Ge, 2.0, 1.0)], 0), Ok(None));
        let two = [tr(0, GuardOp::Ge, 0.5, 1.0), tr(1, GuardOp::Ge, 0.5, 1.0)];
        assert_eq!(detect_guard(&e, &two, 0), Err(HybridError::Unsupported { first: 0, second: 1 }));
        let mut other = tr(0, GuardOp::Ge, 0.5, 1.0);
        other.from = 1;
        assert_eq!(detect_guard(&e, &[other], 0), Ok(None));
    }

    #[test]
    fn linear_images() {
        let b = bx(&[(0.0, 1.0), (2.0, 3.0)]);
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(box_linear_image(&id, &[0.0, 0.0], &b), b);
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(box_linear_image(&swap, &[0.0, 0.0], &b), bx(&[(2.0, 3.0), (0.0, 1.0)]));
        let shear = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        let u = bx(&[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(box_linear_image(&shear, &[0.0, 0.0], &u), bx(&[(0.0, 2.0), (0.0, 1.0)]));
    }

    fn translation() -> Vec<Polynomial> {
        vec![Polynomial::constant(2, 1.0), Polynomial::zero(2)]
    }

    #[test]
    fn repelled_guard_is_skipped() {
        let dynamics = vec![Polynomial::constant(2, -1.0), Polynomial::zero(2)];
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let e = bx(&[(0.0, 1.0), (0.0, 1.0)]);
        let t = tr(0, GuardOp::Ge, 0.5, 1.0);
        assert!(guard_repelled(&flow, &e, &t.guard).unwrap());
        let dynamics = translation();
        let field = VectorField::new(&dynamics);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        assert!(!guard_repelled(&flow, &e, &t.guard).unwrap());
    }

    #[test]
    fn translation_crossing_and_image() {
        let dynamics = translation();
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(0.0, 0.1), (0.0, 0.1)]);
        let opts = CertifyOptions::default();
        let prm = GuardParams { opts: &opts, eps_rel: 0.01, d: 0.5, budget: QUEUE_BUDGET, parallel: true };
        let out = handle_transition(&flow, 0, &x0, &tr(0, GuardOp::Ge, 1.0, 2.0), &prm).unwrap();
        assert_eq!(out.pops, 1);
        assert_eq!(out.tubes.len(), 1);
        let c = &out.crossing;
        assert_eq!((c.lo(0), c.hi(0)), (1.0, 1.0));
        assert!(c.lo(1) <= 0.0 && c.lo(1) > -0.02 && c.hi(1) >= 0.1 && c.hi(1) < 0.12, "{c:?}");
        let im = &out.image;
        assert_eq!((im.lo(0), im.hi(0)), (2.0, 2.0));
        assert!(im.lo(1) > -0.04 && im.hi(1) < 0.24);
    }

    #[test]
    fn partial_crossing_exhausts_budget() {
        // x1' = x2: the lower half of the box drifts away from the guard
        let dynamics = vec![Polynomial::var(2, 1), Polynomial::zero(2)];
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(0.0, 0.1), (-0.1, 0.1)]);
        let opts = CertifyOptions::default();
        let prm = GuardParams { opts: &opts, eps_rel: 0.01, d: 0.5, budget: 1, parallel: false };
        assert_eq!(
            handle_transition(&flow, 0, &x0, &tr(0, GuardOp::Ge, 1.0, 1.0), &prm),
            Err(HybridError::Budget(1))
        );
    }
}
