//! Every certificate the engine emits must reconstruct its Handelman
//! identities and keep its multipliers nonnegative.

use std::path::PathBuf;

use proptest::prelude::*;

use prbt_core::certify::{
    find_robust_barrier, verify_certificate, BarrierCertificate, BarrierProblem, CertKind, CertifyOptions,
    LAMBDA_FLOOR, RESIDUAL_BOUND,
};
use prbt_core::pipeline::{compute_prbt, Params};
use prbt_core::{Hyperrect, Model, Polynomial};

fn model(name: &str) -> Model {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "models", name].iter().collect();
    Model::load(&p).unwrap()
}

fn assert_sound(c: &BarrierCertificate, dynamics: &[Polynomial], what: &str) {
    let r = c.residual(dynamics);
    assert!(r <= RESIDUAL_BOUND, "{what}: residual {r:e}");
    assert!(c.min_lambda() >= LAMBDA_FLOOR, "{what}: multiplier {:e}", c.min_lambda());
}

fn chain(name: &str, n: usize, degrees: &[u32], theta0: f64) -> usize {
    let m = model(name);
    let p = Params {
        theta0,
        opts: CertifyOptions { degrees: degrees.to_vec(), ..CertifyOptions::default() },
        ..Params::default()
    };
    let prbt = compute_prbt(&m, n, &p).unwrap();
    assert_eq!(prbt.segments.len(), n, "{name}: {:?}", prbt.failure);
    let mut count = 0;
    for (k, s) in prbt.segments.iter().enumerate() {
        for (i, c) in s.certs.iter().enumerate() {
            assert_sound(c, &m.modes[s.mode].dynamics, &format!("{name} tube {k} cert {i}"));
            count += 1;
        }
    }
    count
}

#[test]
fn example_one_certificates() {
    let m = model("example1.json");
    let target = &m.unsafe_sets[0].1;
    let p = BarrierProblem {
        init: &m.init,
        domain: &m.modes[0].invariant,
        uncertainty: &m.uncertainty,
        target,
        dynamics: &m.modes[0].dynamics,
    };
    for d in 1..=3 {
        let opts = CertifyOptions { degrees: vec![d], ..CertifyOptions::default() };
        let c = find_robust_barrier(&p, &opts, CertKind::Query).unwrap().expect("feasible");
        assert_sound(&c, p.dynamics, &format!("example 1 degree {d}"));
        assert!(verify_certificate(&c, p.dynamics, 5).pass());
    }
}

#[test]
fn benchmark_chain_certificates() {
    let n = chain("lotka_volterra.json", 9, &[3, 4], 0.5)
        + chain("buckling_column.json", 4, &[3], 0.3)
        + chain("van_der_pol.json", 3, &[4], 0.3)
        + chain("jet_engine.json", 3, &[2, 3, 4], 0.3);
    // three facets and two slabs per planar tube
    assert_eq!(n, 5 * (9 + 4 + 3 + 3));
}

fn affine_field() -> impl Strategy<Value = Vec<Polynomial>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 2).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (c, a, b))| {
                // state (x, y) plus one uncertain input added to each component
                let mut p = Polynomial::constant(3, c);
                p = p.add(&Polynomial::var(3, 0).scale(a)).unwrap();
                p = p.add(&Polynomial::var(3, 1).scale(b)).unwrap();
                if i == 0 {
                    p = p.add(&Polynomial::var(3, 2)).unwrap();
                }
                p
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_queries_are_sound(
        f in affine_field(),
        x0 in (-1.0f64..0.0, -1.0f64..0.0),
        t in (0.5f64..1.5, -1.0f64..1.0),
        u in 0.0f64..0.2,
        degree in 1u32..=3,
    ) {
        let domain = Hyperrect::new(vec![(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        let init = Hyperrect::new(vec![(x0.0, x0.0 + 0.3), (x0.1, x0.1 + 0.3)]).unwrap();
        let target = Hyperrect::new(vec![(t.0, t.0 + 0.4), (t.1, t.1 + 0.4)]).unwrap();
        let unc = Hyperrect::new(vec![(-u, u)]).unwrap();
        let p = BarrierProblem { init: &init, domain: &domain, uncertainty: &unc, target: &target, dynamics: &f };
        let opts = CertifyOptions { degrees: vec![degree], ..CertifyOptions::default() };
        if let Some(c) = find_robust_barrier(&p, &opts, CertKind::Query).unwrap() {
            prop_assert!(c.residual(&f) <= RESIDUAL_BOUND);
            prop_assert!(c.min_lambda() >= LAMBDA_FLOOR);
            prop_assert!(verify_certificate(&c, &f, 4).pass());
        }
    }
}
