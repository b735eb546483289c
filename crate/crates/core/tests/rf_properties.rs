use motif_core::rfnet::{
    add_shunt_caps, gamma_in, loss_mag, mixed_mode_reduce, parse_touchstone, s_to_y, s_to_z, touchstone_string, y_to_s,
    z_to_s, ComplexPortSpec, Complex64, Mat2, Z_DIFF,
};
use motif_core::{FrequencyGrid, SParamTensor};
use proptest::prelude::*;

fn cplx(r: f64) -> impl Strategy<Value = Complex64> {
    (-r..r, -r..r).prop_map(|(a, b)| Complex64::new(a, b))
}

fn tensor() -> impl Strategy<Value = SParamTensor> {
    (2usize..12, 0.1f64..5.0, 0.1f64..2.0).prop_flat_map(|(k, f0, df)| {
        prop::collection::vec(cplx(1.0), 6 * k)
            .prop_map(move |d| SParamTensor::new(FrequencyGrid::new(f0, df, k).unwrap(), d).unwrap())
    })
}

/// A passive-looking 2-port: small reflections, moderate transmission.
fn sdd() -> impl Strategy<Value = Mat2> {
    (cplx(0.3), cplx(0.5), cplx(0.3)).prop_map(|(a, b, c)| Mat2::new(a, b, b, c))
}

fn impedance() -> impl Strategy<Value = Complex64> {
    (1.0f64..500.0, -300.0f64..300.0).prop_map(|(r, x)| Complex64::new(r, x))
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(t in tensor()) {
        let v = t.pack();
        prop_assert_eq!(v.len(), 12 * t.grid().k);
        prop_assert_eq!(SParamTensor::unpack(&v, *t.grid()).unwrap(), t);
    }

    #[test]
    fn touchstone_round_trip(t in tensor()) {
        let back = parse_touchstone(&touchstone_string(&t).unwrap()).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.tensor.grid().k, t.grid().k);
        for (a, b) in t.pack().iter().zip(back.tensor.pack()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn z_and_y_conversions_invert(s in sdd()) {
        let z = s_to_z(&s, Z_DIFF).unwrap();
        let y = s_to_y(&s, Z_DIFF).unwrap();
        prop_assert!((z_to_s(&z, Z_DIFF).unwrap() - s).norm() < 1e-9);
        prop_assert!((y_to_s(&y, Z_DIFF).unwrap() - s).norm() < 1e-9);
        prop_assert!((z * y - Mat2::identity()).norm() < 1e-9);
    }

    #[test]
    fn zero_caps_are_identity(s in sdd(), w in 1e9f64..1e12) {
        prop_assert_eq!(add_shunt_caps(&s, w, 0.0, 0.0).unwrap(), s);
    }

    #[test]
    fn gamma_and_gain_bounded_for_passive_network(s in sdd(), z1 in impedance(), z2 in impedance()) {
        let ports = ComplexPortSpec::new(z1, z2).unwrap();
        let sv = s.singular_values();
        prop_assume!(sv.max() < 1.0);
        let g = gamma_in(&s, &ports).unwrap();
        let l = loss_mag(&s, &ports).unwrap();
        prop_assert!(g.norm() <= 1.0 + 1e-9);
        prop_assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn mixed_mode_of_symmetric_is_symmetric(a in prop::collection::vec(cplx(1.0), 10)) {
        let mut s = motif_core::rfnet::Mat4::zeros();
        let mut it = a.into_iter();
        for r in 0..4 {
            for c in r..4 {
                let v = it.next().unwrap();
                s[(r, c)] = v;
                s[(c, r)] = v;
            }
        }
        let d = mixed_mode_reduce(&s);
        prop_assert!((d - d.transpose()).norm() < 1e-12);
    }
}
