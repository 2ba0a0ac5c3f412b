use proptest::prelude::*;

use fracrfk::geometry::{make_mask, DomainMask, GridSpec, Shape};
use fracrfk::hull::IntHull;
use fracrfk::rearrangement::{symmetric_decreasing_rearrangement, unit_ball_form};
use fracrfk::shape_opt::{convexify_to, resize_mask};
use fracrfk::special::{gamma, hardy_constant};
use fracrfk::RegionalForm;

fn small_form(sigma: f64) -> RegionalForm {
    let g = GridSpec::cube(2, 10, -1.2, 1.2).unwrap();
    let mask = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
    RegionalForm::new(&mask, sigma).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn form_is_symmetric_nonnegative_and_quadratic(s in 0.55f64..0.95, seed in any::<u64>(), t in -3.0f64..3.0) {
        let form = small_form(s);
        let n = form.num_dofs();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rand::Rng::random_range(rng, -1.0..1.0)).collect()
        };
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let e = form.energy(&u).unwrap();
        prop_assert!(e >= 0.0);
        let tu: Vec<f64> = u.iter().map(|x| t * x).collect();
        prop_assert!((form.energy(&tu).unwrap() - t * t * e).abs() <= 1e-12 * e.max(1e-300) * (1.0 + t * t));
        let a = form.bilinear(&u, &v).unwrap();
        let b = form.bilinear(&v, &u).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (a.abs() + 1.0));
        prop_assert!(form.full_space_form(&u).unwrap() >= e);
    }

    #[test]
    fn rearrangement_preserves_values_and_is_idempotent(raw in values(400)) {
        let form = unit_ball_form(2, 10, 0.75).unwrap();
        let u: Vec<f64> = raw[..form.num_dofs()].iter().map(|x| x.abs()).collect();
        let s = symmetric_decreasing_rearrangement(&form, &u).unwrap();
        let mut a = u.clone();
        let mut b = s.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(symmetric_decreasing_rearrangement(&form, &s).unwrap(), s);
    }

    #[test]
    fn hull_contains_its_points(pts in prop::collection::vec((-6i64..6, -6i64..6, -6i64..6), 1..20)) {
        let pts: Vec<[i64; 3]> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        let h = IntHull::new(&pts);
        for p in &pts {
            prop_assert!(h.contains(p));
        }
    }

    #[test]
    fn convexify_and_resize_hit_the_target(bits in prop::collection::vec(any::<bool>(), 144), target in 1usize..100) {
        let g = GridSpec::cube(2, 12, 0.0, 1.0).unwrap();
        prop_assume!(bits.iter().any(|&b| b));
        let mask = DomainMask::from_flags(g, bits).unwrap();
        prop_assert_eq!(resize_mask(&mask, target).unwrap().active_count(), target);
        prop_assert_eq!(convexify_to(&mask, target).unwrap().active_count(), target);
    }

    #[test]
    fn gamma_recurrence(x in 0.05f64..30.0) {
        let lhs = gamma(x + 1.0).unwrap();
        prop_assert!((lhs - x * gamma(x).unwrap()).abs() <= 1e-12 * lhs);
    }

    #[test]
    fn hardy_constant_positive(n in 1usize..4, s in 0.51f64..0.99) {
        let c = hardy_constant(n, 2.0, s).unwrap().value;
        prop_assert!(c.is_finite() && c > 0.0);
    }
}
