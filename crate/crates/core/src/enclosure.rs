//! Enclosure boxes: a box around one flowpipe segment whose only exit is a
//! designated facet, the other facets being certified unreachable.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{find_robust_barrier, BarrierCertificate, BarrierProblem, CertKind, CertifyError, CertifyOptions};
use crate::modelio::Hyperrect;
use crate::par;
use crate::poly::Polynomial;
use crate::simulate::{rk4_step, theta_d_simulation, SimError, StepRule, VectorField};

/// Non-exit facets are pushed out by this fraction of the trace extent.
pub const FACET_BLOAT: f64 = 0.10;
/// Crossing-region bloat, relative to its own extent.
pub const G_BLOAT: f64 = 0.05;
/// Bloat per failed certification round, relative to the box width.
pub const RETRY_BLOAT: f64 = 0.10;
pub const MAX_BLOAT_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Low => "low",
            Side::High => "high",
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// The plane `x_dim = value`, crossed towards `side`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitFacet {
    pub dim: usize,
    pub side: Side,
    pub value: f64,
}

/// A facet of a box: `x_dim = lo_dim` or `x_dim = hi_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FacetId {
    pub dim: usize,
    pub side: Side,
}

impl fmt::Display for FacetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{} {}", self.dim + 1, self.side.as_str())
    }
}

/// The facet of `b` named by `id`, as a box with zero width in `id.dim`.
pub fn facet_box(b: &Hyperrect, id: FacetId) -> Hyperrect {
    let v = match id.side {
        Side::Low => b.lo(id.dim),
        Side::High => b.hi(id.dim),
    };
    b.with_bounds(id.dim, v, v)
}

/// The dynamics of one mode as seen by the tube construction.
#[derive(Clone, Copy)]
pub struct Flow<'a> {
    pub dynamics: &'a [Polynomial],
    pub field: &'a VectorField,
    pub invariant: &'a Hyperrect,
    pub uncertainty: &'a Hyperrect,
}

impl Flow<'_> {
    pub fn center_input(&self) -> Vec<f64> {
        self.uncertainty.center()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnclosureError {
    #[error("no exit plane: {0}")]
    NoExitPlane(String),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("facet {0} could not be certified")]
    FacetFail(FacetId),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// Uncertified enclosure: box, exit facet and estimated crossing region.
#[derive(Clone, Debug, PartialEq)]
pub struct Enclosure {
    pub e: Hyperrect,
    pub exit: ExitFacet,
    pub g: Hyperrect,
}

impl Enclosure {
    pub fn exit_facet_box(&self) -> Hyperrect {
        self.e.with_bounds(self.exit.dim, self.exit.value, self.exit.value)
    }

    /// The `2n - 1` facets other than the exit facet, by dimension then side.
    pub fn non_exit_facets(&self) -> Vec<FacetId> {
        let mut v = Vec::with_capacity(2 * self.e.dim());
        for dim in 0..self.e.dim() {
            for side in [Side::Low, Side::High] {
                if !(dim == self.exit.dim && side == self.exit.side) {
                    v.push(FacetId { dim, side });
                }
            }
        }
        v
    }
}

/// A certified enclosure: one certificate per non-exit facet, in
/// [`Enclosure::non_exit_facets`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct EnclosureBox {
    pub enclosure: Enclosure,
    pub facet_certs: Vec<(FacetId, BarrierCertificate)>,
}

/// Vertices, center and facet centers of `x0`, deduplicated. Above 12
/// dimensions the vertices are replaced by 4096 pseudo-random corners.
pub fn sample_initial(x0: &Hyperrect) -> Vec<Vec<f64>> {
    let n = x0.dim();
    let mut pts: Vec<Vec<f64>> = if n <= 12 {
        x0.vertices()
    } else {
        let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
        (0..4096)
            .map(|_| {
                (0..n)
                    .map(|i| {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        if state & 1 == 0 { x0.lo(i) } else { x0.hi(i) }
                    })
                    .collect()
            })
            .collect()
    };
    let c = x0.center();
    pts.push(c.clone());
    for i in 0..n {
        for v in [x0.lo(i), x0.hi(i)] {
            let mut p = c.clone();
            p[i] = v;
            pts.push(p);
        }
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// One simulated sample: its path and, per candidate plane, the index of the
/// first sample past the plane and the interpolated crossing point.
pub(crate) struct SampleRun {
    path: Vec<Vec<f64>>,
    crossings: Vec<Option<(usize, Vec<f64>)>>,
    left_invariant: Option<usize>,
}

pub(crate) fn run_sample(
    flow: &Flow,
    u: &[f64],
    x0: &[f64],
    planes: &[ExitFacet],
    d: f64,
) -> Result<SampleRun, SimError> {
    let rule = StepRule::for_distance(d);
    let max_arc = 4.0 * d;
    let mut path = vec![x0.to_vec()];
    let mut crossings: Vec<Option<(usize, Vec<f64>)>> = vec![None; planes.len()];
    let mut left = None;
    let mut x = x0.to_vec();
    let mut arc = 0.0;
    let mut t = 0.0;
    for _ in 0..rule.max_steps {
        let dx = flow.field.eval(&x, u);
        let h = rule.step(flow.field, &x, u, &dx, t)?;
        let xn = rk4_step(flow.field, &x, u, h);
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { t, partial: Default::default() });
        }
        arc += x.iter().zip(&xn).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        t += h;
        let k = path.len();
        for (pi, pl) in planes.iter().enumerate() {
            if crossings[pi].is_some() {
                continue;
            }
            let before = (x[pl.dim] - pl.value) * pl.side.sign();
            let after = (xn[pl.dim] - pl.value) * pl.side.sign();
            if before < 0.0 && after >= 0.0 {
                let s = before / (before - after);
                let mut cp: Vec<f64> = x.iter().zip(&xn).map(|(a, b)| a + s * (b - a)).collect();
                cp[pl.dim] = pl.value;
                crossings[pi] = Some((k, cp));
            }
        }
        if left.is_none() && !flow.invariant.contains_point(&xn, 0.0) {
            left = Some(k);
        }
        path.push(xn.clone());
        x = xn;
        if left.is_some() || crossings.iter().all(Option::is_some) || arc > max_arc {
            break;
        }
    }
    Ok(SampleRun { path, crossings, left_invariant: left })
}

/// Simulates the center of `x0` to pick candidate exit planes, simulates all
/// samples, and builds the bloated box around the traces up to the first
/// plane crossed by every sample.
pub fn construct_enclosure(
    flow: &Flow,
    x0: &Hyperrect,
    theta: f64,
    d: f64,
    parallel: bool,
) -> Result<Enclosure, EnclosureError> {
    let n = x0.dim();
    let u = flow.center_input();
    let center = x0.center();
    let run = theta_d_simulation(flow.field, &u, &center, theta, d)?;
    let xe = &run.endpoint;
    let planes: Vec<ExitFacet> = (0..n)
        .filter(|&i| xe[i] != center[i])
        .map(|i| ExitFacet {
            dim: i,
            side: if xe[i] > center[i] { Side::High } else { Side::Low },
            value: xe[i],
        })
        .collect();
    if planes.is_empty() {
        return Err(EnclosureError::NoExitPlane("center simulation did not move".into()));
    }
    let samples = sample_initial(x0);
    let runs = par::map(&samples, parallel, |s| run_sample(flow, &u, s, &planes, d));
    let runs: Vec<SampleRun> = runs.into_iter().collect::<Result<_, _>>()?;

    let fc = flow.field.eval(&center, &u);
    let mut best: Option<usize> = None;
    for (pi, pl) in planes.iter().enumerate() {
        let valid = plane_valid(&samples, &runs, &planes, pi);
        if valid && best.is_none_or(|b| fc[pl.dim].abs() > fc[planes[b].dim].abs()) {
            best = Some(pi);
        }
    }
    let Some(pi) = best else {
        return Err(EnclosureError::NoExitPlane(
            "no candidate plane is crossed by every sample inside the invariant".into(),
        ));
    };
    enclose_runs(flow, x0, &runs, &planes, pi)
}

/// Whether every sample starts strictly before plane `pi` and crosses it no
/// later than it leaves the invariant.
pub(crate) fn plane_valid(samples: &[Vec<f64>], runs: &[SampleRun], planes: &[ExitFacet], pi: usize) -> bool {
    let pl = &planes[pi];
    samples.iter().zip(runs).all(|(s, r)| {
        (s[pl.dim] - pl.value) * pl.side.sign() < 0.0
            && match (&r.crossings[pi], r.left_invariant) {
                (Some((k, _)), Some(l)) => *k <= l,
                (Some(_), None) => true,
                (None, _) => false,
            }
    })
}

/// Bloated box around the sample paths up to their crossing of plane `pi`,
/// with the crossing box `G` on that plane.
pub(crate) fn enclose_runs(
    flow: &Flow,
    x0: &Hyperrect,
    runs: &[SampleRun],
    planes: &[ExitFacet],
    pi: usize,
) -> Result<Enclosure, EnclosureError> {
    let n = x0.dim();
    let exit = planes[pi];
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut cross: Vec<Vec<f64>> = Vec::with_capacity(runs.len());
    for r in runs {
        let (k, cp) = r.crossings[pi].as_ref().expect("valid plane");
        pts.extend(r.path[..*k].iter().cloned());
        pts.push(cp.clone());
        cross.push(cp.clone());
    }
    let raw = Hyperrect::bounding(&pts).expect("samples").hull(x0);
    let raw = raw.with_bounds(
        exit.dim,
        if exit.side == Side::Low { exit.value } else { raw.lo(exit.dim) },
        if exit.side == Side::High { exit.value } else { raw.hi(exit.dim) },
    );
    let widths = raw.widths();
    let floor = 0.01 * widths.iter().copied().fold(0.0, f64::max);
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let pad = if widths[i] > 0.0 { FACET_BLOAT * widths[i] } else { floor };
        let lo = if i == exit.dim && exit.side == Side::Low { raw.lo(i) } else { raw.lo(i) - pad };
        let hi = if i == exit.dim && exit.side == Side::High { raw.hi(i) } else { raw.hi(i) + pad };
        bounds.push((lo, hi));
    }
    let e = Hyperrect::new(bounds)
        .expect("bloated box")
        .intersect(flow.invariant)
        .ok_or_else(|| EnclosureError::NoExitPlane("enclosure outside the invariant".into()))?;
    let gb = Hyperrect::bounding(&cross).expect("crossings");
    let mut gbounds = Vec::with_capacity(n);
    for i in 0..n {
        if i == exit.dim {
            gbounds.push((exit.value, exit.value));
        } else {
            let pad = G_BLOAT * gb.width(i);
            gbounds.push(((gb.lo(i) - pad).max(e.lo(i)), (gb.hi(i) + pad).min(e.hi(i))));
        }
    }
    let g = Hyperrect::new(gbounds).expect("crossing box");
    Ok(Enclosure { e, exit, g })
}

/// Certifies the non-exit facets of one enclosure, bloating failing facets
/// and recertifying everything up to [`MAX_BLOAT_ROUNDS`] times.
pub fn certify_facets(
    flow: &Flow,
    x0: &Hyperrect,
    enc: Enclosure,
    opts: &CertifyOptions,
    parallel: bool,
) -> Result<EnclosureBox, EnclosureError> {
    let mut enc = enc;
    let facets = enc.non_exit_facets();
    for round in 0..=MAX_BLOAT_ROUNDS {
        let results = par::map(&facets, parallel, |&id| {
            let target = facet_box(&enc.e, id);
            let p = BarrierProblem {
                init: x0,
                domain: &enc.e,
                uncertainty: flow.uncertainty,
                target: &target,
                dynamics: flow.dynamics,
            };
            find_robust_barrier(&p, opts, CertKind::Facet)
        });
        let mut certs = Vec::with_capacity(facets.len());
        let mut failed = Vec::new();
        for (id, r) in facets.iter().zip(results) {
            match r? {
                Some(c) => certs.push((*id, c)),
                None => failed.push(*id),
            }
        }
        if failed.is_empty() {
            return Ok(EnclosureBox { enclosure: enc, facet_certs: certs });
        }
        log::debug!("round {round}: facets {failed:?} of {:?} failed", enc.e.bounds());
        if round == MAX_BLOAT_ROUNDS {
            return Err(EnclosureError::FacetFail(failed[0]));
        }
        let mut e = enc.e.clone();
        let mut moved = false;
        for id in &failed {
            let w = enc.e.width(id.dim).max(1e-12);
            let (lo, hi) = (e.lo(id.dim), e.hi(id.dim));
            let (ilo, ihi) = flow.invariant.bounds()[id.dim];
            let nb = match id.side {
                Side::Low => ((lo - RETRY_BLOAT * w).max(ilo), hi),
                Side::High => (lo, (hi + RETRY_BLOAT * w).min(ihi)),
            };
            moved |= nb != (lo, hi);
            e = e.with_bounds(id.dim, nb.0, nb.1);
        }
        if !moved {
            return Err(EnclosureError::FacetFail(failed[0]));
        }
        enc.e = e;
    }
    unreachable!("loop returns on the last round")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(v: &[(f64, f64)]) -> Hyperrect {
        Hyperrect::new(v.to_vec()).unwrap()
    }

    fn polys(n: usize, comps: &[&[(&[u32], f64)]]) -> Vec<Polynomial> {
        comps
            .iter()
            .map(|c| Polynomial::from_terms(n, c.iter().map(|(e, v)| (e.to_vec(), *v))).unwrap())
            .collect()
    }

    #[test]
    fn sample_counts() {
        assert_eq!(sample_initial(&bx(&[(0.0, 1.0), (0.0, 1.0)])).len(), 9);
        // the two x2-facet centers coincide with the two vertices
        assert_eq!(sample_initial(&bx(&[(0.5, 0.5), (0.0, 1.0)])).len(), 3);
        assert_eq!(sample_initial(&bx(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)])).len(), 15);
    }

    #[test]
    fn translation_flow_enclosure() {
        let dynamics = polys(2, &[&[(&[0, 0], 1.0)], &[]]);
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(0.0, 0.1), (0.0, 0.1)]);
        let enc = construct_enclosure(&flow, &x0, 0.3, 1.0, true).unwrap();
        assert_eq!(enc.exit.dim, 0);
        assert_eq!(enc.exit.side, Side::High);
        assert!((enc.exit.value - 1.05).abs() < 0.01, "{:?}", enc.exit);
        assert!(enc.e.lo(1) < 0.0 && enc.e.hi(1) > 0.1);
        assert!(enc.e.contains_box(&x0, 0.0));
        assert!((enc.g.lo(1) - 0.0).abs() < 0.01 && (enc.g.hi(1) - 0.1).abs() < 0.01);
        let cert = certify_facets(&flow, &x0, enc, &CertifyOptions::default(), true).unwrap();
        assert_eq!(cert.facet_certs.len(), 3);
        assert!(cert.facet_certs.iter().all(|(_, c)| c.degree == 1));
    }

    #[test]
    fn saddle_has_no_exit_plane() {
        // samples left and right of the stable manifold drift out of the
        // narrow invariant on opposite sides before reaching any plane
        let dynamics = polys(2, &[&[(&[1, 0], 1.0)], &[(&[0, 1], -1.0)]]);
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-0.15, 0.15), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(-0.1, 0.1), (0.9, 1.0)]);
        assert!(matches!(
            construct_enclosure(&flow, &x0, 0.3, 0.5, false),
            Err(EnclosureError::NoExitPlane(_))
        ));
    }

    #[test]
    fn touching_facet_fails_then_bloats() {
        let dynamics = polys(2, &[&[(&[0, 0], 1.0)], &[]]);
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(0.0, 0.1), (0.0, 0.1)]);
        let enc = Enclosure {
            e: bx(&[(-0.1, 1.0), (0.0, 0.2)]),
            exit: ExitFacet { dim: 0, side: Side::High, value: 1.0 },
            g: bx(&[(1.0, 1.0), (0.0, 0.1)]),
        };
        let cert = certify_facets(&flow, &x0, enc, &CertifyOptions::default(), false).unwrap();
        assert!(cert.enclosure.e.lo(1) < 0.0);
    }
}
