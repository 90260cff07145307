//! Robust barrier tubes: certificates that pin the flowpipe to a sub-box of
//! the exit facet, found by bisecting auxiliary slabs.

use thiserror::Error;

use crate::certify::{find_robust_barrier, BarrierCertificate, BarrierProblem, CertKind, CertifyError, CertifyOptions};
use crate::enclosure::{EnclosureBox, Flow, Side};
use crate::modelio::Hyperrect;
use crate::par;

/// Hard cap on LP probes per slab.
pub const MAX_PROBES: usize = 20;

/// Region of the exit facet beyond one side of `G` in one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliarySet {
    pub dim: usize,
    pub side: Side,
    /// Bound of `G` on this side: the tightest admissible inner edge.
    pub tight: f64,
    /// Facet boundary on this side: the loosest inner edge.
    pub loose: f64,
}

impl AuxiliarySet {
    pub fn is_degenerate(&self) -> bool {
        self.tight == self.loose
    }

    /// The slab between the facet boundary and the inner edge `edge`.
    pub fn slab(&self, facet: &Hyperrect, edge: f64) -> Hyperrect {
        match self.side {
            Side::Low => facet.with_bounds(self.dim, self.loose, edge),
            Side::High => facet.with_bounds(self.dim, edge, self.loose),
        }
    }
}

/// One auxiliary set after bisection: its final inner edge and certificate
/// (absent for degenerate slabs).
#[derive(Clone, Debug, PartialEq)]
pub struct SlabResult {
    pub aux: AuxiliarySet,
    pub edge: f64,
    pub target: Hyperrect,
    pub cert: Option<BarrierCertificate>,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustBarrierTube {
    pub mode: usize,
    pub x0: Hyperrect,
    pub enclosure: EnclosureBox,
    pub slabs: Vec<SlabResult>,
    pub exit_region: Hyperrect,
}

impl RobustBarrierTube {
    pub fn e(&self) -> &Hyperrect {
        &self.enclosure.enclosure.e
    }

    /// Facet certificates followed by slab certificates.
    pub fn certificates(&self) -> Vec<&BarrierCertificate> {
        self.enclosure
            .facet_certs
            .iter()
            .map(|(_, c)| c)
            .chain(self.slabs.iter().filter_map(|s| s.cert.as_ref()))
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TubeError {
    #[error("no certificate for the loosest {} slab in x{}", .side.as_str(), .dim + 1)]
    RbtFail { dim: usize, side: Side },
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// `2(n-1)` slabs: for each non-exit dimension and side, the part of the
/// exit facet beyond `g`.
pub fn create_aux_sets(g: &Hyperrect, facet: &Hyperrect, exit_dim: usize) -> Vec<AuxiliarySet> {
    let mut out = Vec::with_capacity(2 * facet.dim().saturating_sub(1));
    for j in 0..facet.dim() {
        if j == exit_dim {
            continue;
        }
        out.push(AuxiliarySet { dim: j, side: Side::Low, tight: g.lo(j), loose: facet.lo(j) });
        out.push(AuxiliarySet { dim: j, side: Side::High, tight: g.hi(j), loose: facet.hi(j) });
    }
    out
}

fn bisect(
    flow: &Flow,
    x0: &Hyperrect,
    e: &Hyperrect,
    facet: &Hyperrect,
    aux: &AuxiliarySet,
    eps_rel: f64,
    opts: &CertifyOptions,
) -> Result<SlabResult, TubeError> {
    if aux.is_degenerate() {
        return Ok(SlabResult {
            aux: aux.clone(),
            edge: aux.loose,
            target: aux.slab(facet, aux.loose),
            cert: None,
            probes: 0,
        });
    }
    let probe = |edge: f64| -> Result<Option<BarrierCertificate>, CertifyError> {
        let target = aux.slab(facet, edge);
        let p = BarrierProblem {
            init: x0,
            domain: e,
            uncertainty: flow.uncertainty,
            target: &target,
            dynamics: flow.dynamics,
        };
        find_robust_barrier(&p, opts, CertKind::Slab)
    };
    let tol = eps_rel * facet.width(aux.dim);
    let mut probes = 1;
    if let Some(c) = probe(aux.tight)? {
        return Ok(SlabResult {
            aux: aux.clone(),
            edge: aux.tight,
            target: aux.slab(facet, aux.tight),
            cert: Some(c),
            probes,
        });
    }
    let mut fail = aux.tight;
    let mut ok: Option<(f64, BarrierCertificate)> = None;
    while probes < MAX_PROBES - 1 {
        let ok_edge = ok.as_ref().map_or(aux.loose, |(v, _)| *v);
        if (ok_edge - fail).abs() <= tol {
            break;
        }
        let mid = 0.5 * (fail + ok_edge);
        probes += 1;
        match probe(mid)? {
            Some(c) => ok = Some((mid, c)),
            None => fail = mid,
        }
    }
    if ok.is_none() {
        probes += 1;
        match probe(aux.loose)? {
            Some(c) => ok = Some((aux.loose, c)),
            None => return Err(TubeError::RbtFail { dim: aux.dim, side: aux.side }),
        }
    }
    let (edge, cert) = ok.expect("set above");
    Ok(SlabResult { aux: aux.clone(), edge, target: aux.slab(facet, edge), cert: Some(cert), probes })
}

/// Builds the tube inside a certified enclosure and its exit region.
pub fn compute_rbt(
    flow: &Flow,
    mode: usize,
    x0: &Hyperrect,
    enc: EnclosureBox,
    eps_rel: f64,
    opts: &CertifyOptions,
    parallel: bool,
) -> Result<RobustBarrierTube, TubeError> {
    let en = &enc.enclosure;
    let facet = en.exit_facet_box();
    let aux = create_aux_sets(&en.g, &facet, en.exit.dim);
    let results = par::map(&aux, parallel, |a| bisect(flow, x0, &en.e, &facet, a, eps_rel, opts));
    let slabs: Vec<SlabResult> = results.into_iter().collect::<Result<_, _>>()?;
    let exit_region = exit_region(&facet, &slabs);
    Ok(RobustBarrierTube { mode, x0: x0.clone(), enclosure: enc, slabs, exit_region })
}

/// The hollow of the exit facet bounded by the final inner edges.
pub fn exit_region(facet: &Hyperrect, slabs: &[SlabResult]) -> Hyperrect {
    let mut r = facet.clone();
    for s in slabs {
        let (lo, hi) = r.bounds()[s.aux.dim];
        r = match s.aux.side {
            Side::Low => r.with_bounds(s.aux.dim, s.edge, hi),
            Side::High => r.with_bounds(s.aux.dim, lo, s.edge),
        };
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enclosure::{certify_facets, construct_enclosure};
    use crate::poly::Polynomial;
    use crate::simulate::VectorField;

    fn bx(v: &[(f64, f64)]) -> Hyperrect {
        Hyperrect::new(v.to_vec()).unwrap()
    }

    #[test]
    fn aux_set_shapes() {
        let facet = bx(&[(1.0, 1.0), (0.0, 1.0)]);
        let g = bx(&[(1.0, 1.0), (0.4, 0.6)]);
        let a = create_aux_sets(&g, &facet, 0);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].slab(&facet, a[0].tight), bx(&[(1.0, 1.0), (0.0, 0.4)]));
        assert_eq!(a[1].slab(&facet, a[1].tight), bx(&[(1.0, 1.0), (0.6, 1.0)]));
        let f3 = bx(&[(0.0, 1.0), (2.0, 2.0), (0.0, 1.0)]);
        assert_eq!(create_aux_sets(&f3, &f3, 1).len(), 4);
        assert!(create_aux_sets(&f3, &f3, 1).iter().all(AuxiliarySet::is_degenerate));
    }

    #[test]
    fn whole_facet_g_gives_facet() {
        let facet = bx(&[(1.0, 1.0), (0.0, 1.0)]);
        let slabs: Vec<SlabResult> = create_aux_sets(&facet, &facet, 0)
            .into_iter()
            .map(|aux| SlabResult { edge: aux.loose, target: aux.slab(&facet, aux.loose), aux, cert: None, probes: 0 })
            .collect();
        assert_eq!(exit_region(&facet, &slabs), facet);
    }

    #[test]
    fn translation_flow_tube() {
        let dynamics = vec![Polynomial::constant(2, 1.0), Polynomial::zero(2)];
        let field = VectorField::new(&dynamics);
        let inv = bx(&[(-10.0, 10.0), (-10.0, 10.0)]);
        let unc = bx(&[]);
        let flow = Flow { dynamics: &dynamics, field: &field, invariant: &inv, uncertainty: &unc };
        let x0 = bx(&[(0.0, 0.1), (0.0, 0.1)]);
        let opts = CertifyOptions::default();
        let enc = construct_enclosure(&flow, &x0, 0.3, 1.0, true).unwrap();
        let enc = certify_facets(&flow, &x0, enc, &opts, true).unwrap();
        let tube = compute_rbt(&flow, 0, &x0, enc, 0.01, &opts, true).unwrap();
        assert_eq!(tube.slabs.len(), 2);
        let r = &tube.exit_region;
        assert!(r.lo(1) <= 0.0 && r.lo(1) > -0.02, "{r:?}");
        assert!(r.hi(1) >= 0.1 && r.hi(1) < 0.12, "{r:?}");
        for s in &tube.slabs {
            assert!(s.probes <= 9);
        }
    }
}
