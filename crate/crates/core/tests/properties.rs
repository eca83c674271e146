use num_bigint::BigInt;
use num_traits::Zero;
use proptest::prelude::*;

use removability::criterion::{self, GraphSample, ModulusOfContinuity};
use removability::exact::{self, int, ratio, ExactScalar};
use removability::tower::{self, ConstructionParams};

fn unit_rational() -> impl Strategy<Value = ExactScalar> {
    (1i64..=5000).prop_flat_map(|den| (0..=den).prop_map(move |num| ratio(num, den)))
}

fn small_params() -> impl Strategy<Value = ConstructionParams> {
    (2u32..=4, 2u32..=4).prop_map(|(a, b)| ConstructionParams::with_exponents(a, b, 3).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity(params in small_params(), s in unit_rational()) {
        let top = params.rows() - 2;
        let mut i = BigInt::zero();
        let mut sum = int(0);
        while i <= top {
            let v = tower::phi_eval(&params, &i, &s).unwrap();
            prop_assert!(v >= int(0));
            sum += v;
            i += 1;
        }
        prop_assert_eq!(sum, int(1));
    }

    #[test]
    fn u_is_nondecreasing_in_x(params in small_params(), n in 1usize..=3, x0 in unit_rational(), x1 in unit_rational(), y in unit_rational()) {
        let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
        let u_lo = tower::u_eval(&params, n, &lo, &y).unwrap();
        let u_hi = tower::u_eval(&params, n, &hi, &y).unwrap();
        prop_assert!(u_lo <= u_hi);
        prop_assert!(u_lo >= int(0));
        prop_assert!(u_hi <= tower::tent(&y));
    }

    #[test]
    fn line_mass_is_the_tent(params in small_params(), n in 1usize..=3, y in unit_rational()) {
        prop_assert_eq!(tower::u_eval(&params, n, &int(1), &y).unwrap(), tower::tent(&y));
    }

    #[test]
    fn fraction_strings_round_trip(num in -10_000i64..10_000, den in 1i64..10_000) {
        let v = ratio(num, den);
        prop_assert_eq!(exact::parse(&exact::to_fraction_string(&v)).unwrap(), v);
    }

    #[test]
    fn power_law_inverse_round_trips(c in 0.1f64..10.0, alpha in 0.05f64..1.0, t in 1e-6f64..1.0) {
        let h = ModulusOfContinuity::power_law(c, alpha).unwrap();
        let back = criterion::modulus_inverse(&h, criterion::modulus_eval(&h, t).unwrap()).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * t);
    }

    #[test]
    fn tabulated_inverse_round_trips(steps in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 2..12), k in 0usize..11, w in 0.0f64..1.0) {
        let mut knots = Vec::new();
        let (mut t, mut h) = (0.0, 0.0);
        for (dt, dh) in steps {
            t += dt;
            h += dh;
            knots.push((t, h));
        }
        let table = ModulusOfContinuity::Tabulated(criterion::ModulusTable::new(&knots).unwrap());
        let (a, b) = if k == 0 { ((0.0, 0.0), knots[0]) } else { (knots[(k - 1) % knots.len()], knots[k % knots.len()]) };
        if b.0 > a.0 {
            let t = a.0 + w * (b.0 - a.0);
            let back = criterion::modulus_inverse(&table, criterion::modulus_eval(&table, t).unwrap()).unwrap();
            prop_assert!((back - t).abs() <= 1e-9);
        }
    }

    #[test]
    fn linear_graph_modulus_is_reach_times_slope(slope in 0.05f64..2.0) {
        let n = 1 << 10;
        let points = (0..=n).map(|i| { let x = i as f64 / n as f64; (x, slope * x) }).collect();
        let graph = GraphSample::new(points).unwrap();
        match criterion::oscillation_modulus(&graph, 1.0).unwrap() {
            ModulusOfContinuity::PowerLaw { c, alpha } => {
                prop_assert_eq!(alpha, 1.0);
                let expected = slope * criterion::WHITNEY_REACH as f64;
                prop_assert!((c - expected).abs() <= 1e-9 * expected);
            }
            other => prop_assert!(false, "unexpected modulus {other:?}"),
        }
    }
}
