use proptest::prelude::*;

use prbt_core::hybrid::box_linear_image;
use prbt_core::modelio::box_to_halfspaces;
use prbt_core::poly::{binomial, handelman_products, graded_multi_indices, Monomial};
use prbt_core::{Hyperrect, LinearPolynomial, Polynomial};

fn poly_strategy(nvars: usize, max_deg: u32) -> impl Strategy<Value = Polynomial> {
    let exps = prop::collection::vec(0..=max_deg, nvars);
    prop::collection::vec((exps, -5.0f64..5.0), 0..8).prop_map(move |terms| {
        let mut p = Polynomial::zero(nvars);
        for (e, c) in terms {
            if e.iter().sum::<u32>() <= max_deg {
                p.add_term(Monomial(e), c);
            }
        }
        p
    })
}

fn box_strategy(n: usize) -> impl Strategy<Value = Hyperrect> {
    prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), n)
        .prop_map(|v| Hyperrect::new(v.into_iter().map(|(lo, w)| (lo, lo + w)).collect()).unwrap())
}

fn point_in(b: &Hyperrect, t: &[f64]) -> Vec<f64> {
    b.bounds().iter().zip(t).map(|(&(lo, hi), &s)| lo + s * (hi - lo)).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn handelman_counts_match_binomial() {
    for m in 1..=8usize {
        for order in 0..=4u32 {
            let gens: Vec<LinearPolynomial> =
                (0..m).map(|i| LinearPolynomial::new(i as f64, vec![1.0, -(i as f64)])).collect();
            let expected = binomial(m + order as usize, order as usize);
            assert_eq!(graded_multi_indices(m, order).len(), expected, "m={m} order={order}");
            assert_eq!(handelman_products(&gens, order).len(), expected, "m={m} order={order}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn product_evaluates_to_product_of_values(
        p in poly_strategy(3, 3),
        q in poly_strategy(3, 3),
        x in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let pq = p.mul(&q).unwrap();
        let want = p.eval(&x).unwrap() * q.eval(&x).unwrap();
        prop_assert!(close(pq.eval(&x).unwrap(), want, 1e-9));
        let sum = p.add(&q).unwrap();
        prop_assert!(close(sum.eval(&x).unwrap(), p.eval(&x).unwrap() + q.eval(&x).unwrap(), 1e-12));
    }

    #[test]
    fn lie_derivative_is_linear(
        p in poly_strategy(2, 3),
        q in poly_strategy(2, 3),
        f0 in poly_strategy(2, 2),
        f1 in poly_strategy(2, 2),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let f = [f0, f1];
        let combo = p.scale(a).add(&q.scale(b)).unwrap();
        let lhs = combo.lie_derivative(&f).unwrap();
        let rhs = p.lie_derivative(&f).unwrap().scale(a).add(&q.lie_derivative(&f).unwrap().scale(b)).unwrap();
        let diff = lhs.sub(&rhs).unwrap();
        let scale = 1.0 + lhs.max_abs_coeff().max(rhs.max_abs_coeff());
        prop_assert!(diff.terms().all(|(_, c)| c.abs() <= 1e-12 * scale));
    }

    #[test]
    fn halfspaces_describe_the_box(
        b in box_strategy(3),
        t in prop::collection::vec(0.0f64..=1.0, 3),
        dir in 0usize..3,
        out in 0.01f64..3.0,
    ) {
        let hs = box_to_halfspaces(&b);
        prop_assert_eq!(hs.len(), 6);
        let inside = point_in(&b, &t);
        prop_assert!(hs.iter().all(|h| h.eval(&inside) >= -1e-12));
        let mut outside = inside.clone();
        outside[dir] = b.hi(dir) + out;
        prop_assert!(hs.iter().any(|h| h.eval(&outside) < 0.0));
        outside[dir] = b.lo(dir) - out;
        prop_assert!(hs.iter().any(|h| h.eval(&outside) < 0.0));
    }

    #[test]
    fn linear_image_contains_sampled_images(
        b in box_strategy(3),
        a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 3),
        offset in prop::collection::vec(-5.0f64..5.0, 3),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let img = box_linear_image(&a, &offset, &b);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tol = 1e-9 * (1.0 + img.max_width());
        for _ in 0..1000 {
            let t: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let x = point_in(&b, &t);
            let y: Vec<f64> = a.iter().zip(&offset).map(|(row, o)| o + row.iter().zip(&x).map(|(r, v)| r * v).sum::<f64>()).collect();
            prop_assert!(img.contains_point(&y, tol));
        }
        // the hull is attained: every face of the image holds some vertex image
        let imgs: Vec<Vec<f64>> = b
            .vertices()
            .iter()
            .map(|x| a.iter().zip(&offset).map(|(row, o)| o + row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>()).collect())
            .collect();
        for i in 0..3 {
            prop_assert!(imgs.iter().any(|y| (y[i] - img.lo(i)).abs() <= tol));
            prop_assert!(imgs.iter().any(|y| (y[i] - img.hi(i)).abs() <= tol));
        }
    }
}
