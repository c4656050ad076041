mod common;

use common::*;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nightrider_core::lie::{
    adjoint_se23, right_invariant_error, se23_exp, skew, so3_exp, so3_log, ExtendedPose, Rotation, TangentXi, Vector9,
};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn tangent(r: f64) -> impl Strategy<Value = TangentXi> {
    (vec3(r), vec3(r), vec3(r)).prop_map(|(rot, vel, pos)| TangentXi { rot, vel, pos })
}

proptest! {
    #[test]
    fn skew_is_cross_product(v in vec3(10.0), w in vec3(10.0)) {
        prop_assert!((skew(&v) * w - v.cross(&w)).amax() < 1e-12);
        prop_assert_eq!(skew(&v).transpose(), -skew(&v));
        prop_assert!((skew(&v) - cross_matrix_oracle(&v)).amax() < 1e-15);
    }

    #[test]
    fn hat_vee_roundtrip(xi in tangent(5.0)) {
        prop_assert_eq!(TangentXi::vee(&xi.hat()), xi);
    }

    #[test]
    fn se23_exp_matches_series(xi in tangent(1.0 / 3f64.sqrt())) {
        prop_assume!(xi.norm() <= 1.0);
        let series = series_exp5(&xi.hat(), 20);
        prop_assert!((se23_exp(&xi).to_matrix() - series).amax() < 1e-10);
    }

    #[test]
    fn right_invariant_error_is_matrix_product(a in tangent(2.0), b in tangent(2.0)) {
        let (est, truth) = (se23_exp(&a), se23_exp(&b));
        let eta = est.to_matrix() * truth.to_matrix().try_inverse().unwrap();
        let recon = se23_exp(&right_invariant_error(&est, &truth)).to_matrix();
        prop_assert!((eta - recon).amax() < 1e-10);
    }
}

#[test]
fn so3_roundtrip_ten_thousand() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let axis = gaussian3(&mut rng, 1.0).normalize();
        let angle = rand::Rng::random_range(&mut rng, 1e-6..std::f64::consts::PI - 1e-3);
        let phi = axis * angle;
        let back = so3_log(&so3_exp(&phi)).unwrap();
        assert!((back - phi).norm() < 1e-9, "{phi:?} -> {back:?}");
        let r = random_rotation(&mut rng);
        let again = so3_exp(&so3_log(r.matrix()).unwrap());
        assert!((again - r.matrix()).amax() < 1e-9);
    }
}

#[test]
fn adjoint_conjugation_thousand() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let x = random_pose(&mut rng);
        let xi = TangentXi { rot: gaussian3(&mut rng, 1.0), vel: gaussian3(&mut rng, 1.0), pos: gaussian3(&mut rng, 1.0) };
        let m = x.to_matrix() * xi.hat() * x.to_matrix().try_inverse().unwrap();
        let expected = TangentXi::vee(&m).to_vector();
        let got = adjoint_se23(&x) * xi.to_vector();
        assert!((got - expected).amax() < 1e-10 * (1.0 + expected.amax()));
    }
}

#[test]
fn self_error_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x = random_pose(&mut rng);
        let e = right_invariant_error(&x, &x);
        assert_eq!(e.rot, Vector3::zeros());
        assert!(e.vel.amax() < 1e-12 && e.pos.amax() < 1e-12);
    }
}

#[test]
fn pure_translation_exponential_is_exact() {
    let xi = TangentXi { rot: Vector3::zeros(), vel: Vector3::new(1.0, -2.0, 3.0), pos: Vector3::new(0.5, 0.0, -4.0) };
    let x = se23_exp(&xi);
    assert_eq!(x, ExtendedPose::new(Rotation::identity(), xi.vel, xi.pos));
    assert_eq!(se23_exp(&TangentXi::from_vector(&Vector9::zeros())), ExtendedPose::identity());
    assert_eq!(*Rotation::identity().matrix(), Matrix3::identity());
}
