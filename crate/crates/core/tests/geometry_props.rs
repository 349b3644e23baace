use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use teleop_core::geometry::{orientation_error, PoseRepr};
use teleop_core::{RigidTransform, Rotation};

fn unit_axis() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (unit_axis(), 0.0..std::f64::consts::PI).prop_map(|(a, t)| Rotation::from_axis_angle(&a, t))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (rotation(), -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64)
        .prop_map(|(r, x, y, z)| RigidTransform::new(r, Vector3::new(x, y, z)))
}

fn max_abs_diff(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let dr = (a.rotation.matrix() - b.rotation.matrix()).amax();
    let dt = (a.translation - b.translation).amax();
    dr.max(dt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn composition_is_associative(a in transform(), b in transform(), c in transform()) {
        let left = a.compose(&b.compose(&c));
        let right = a.compose(&b).compose(&c);
        prop_assert!(max_abs_diff(&left, &right) <= 1e-10);
    }

    #[test]
    fn orientation_error_recovers_angle(r in rotation(), axis in unit_axis(), theta in 0.0..=std::f64::consts::PI) {
        let rotated = r * Rotation::from_axis_angle(&axis, theta);
        let e = orientation_error(&r, &rotated);
        prop_assert!((e - theta).abs() <= 1e-9, "e = {e}, theta = {theta}");
    }

    #[test]
    fn orientation_error_clamps_perturbed_identity(r in rotation(), i in 0usize..3, j in 0usize..3, sign in prop::bool::ANY) {
        let mut m: Matrix3<f64> = *r.matrix();
        m[(i, j)] += if sign { 1e-15 } else { -1e-15 };
        let perturbed = Rotation::from_matrix_unchecked(m);
        let e = orientation_error(&r, &perturbed);
        prop_assert!(e.is_finite());
        prop_assert!(e < 1e-7);
        let scaled = Rotation::from_matrix_unchecked(*r.matrix() * (1.0 + 1e-15));
        prop_assert!(orientation_error(&r, &scaled).is_finite());
    }

    #[test]
    fn quaternion_round_trip(r in rotation()) {
        let back = Rotation::from_quaternion(&r.to_quaternion());
        prop_assert!((back.matrix() - r.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity(a in transform()) {
        let id = a.compose(&a.inverse());
        prop_assert!(max_abs_diff(&id, &RigidTransform::identity()) <= 1e-12);
    }

    #[test]
    fn pose_repr_json_round_trip(a in transform()) {
        let repr = PoseRepr::from(a);
        let json = serde_json::to_string(&repr).unwrap();
        let back: PoseRepr = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(repr, back);
    }
}

#[test]
fn independent_acos_oracle() {
    // acos form evaluated directly, away from the ill-conditioned ends.
    for k in 1..100 {
        let theta = k as f64 * 0.031;
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let a = Rotation::rot_z(0.3);
        let b = a * Rotation::from_axis_angle(&axis, theta);
        let m = a.matrix().transpose() * b.matrix();
        let oracle = ((m.trace() - 1.0) / 2.0).acos();
        assert!((orientation_error(&a, &b) - oracle).abs() < 1e-9);
    }
}
