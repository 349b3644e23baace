use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teleop_core::geometry::{orientation_error, position_error};
use teleop_core::perception::{
    grasp_pose_from_object, object_pose_from_detection, simulate_detection, CameraModel,
};
use teleop_core::simworld::ObjectSpec;
use teleop_core::{RigidTransform, Rotation};

fn camera(sigma_p: f64, sigma_r: f64) -> CameraModel {
    CameraModel {
        extrinsics: RigidTransform::new(Rotation::rot_x(0.2) * Rotation::rot_z(-0.4), Vector3::new(0.02, 0.06, -0.01)),
        max_range: 0.8,
        half_fov: 0.7,
        sigma_position: sigma_p,
        sigma_rotation: sigma_r,
    }
}

fn ee_pose() -> RigidTransform {
    RigidTransform::new(Rotation::rot_y(2.0) * Rotation::rot_z(0.7), Vector3::new(0.55, -0.1, 0.4))
}

fn lerp(lo: f64, hi: f64, k: usize) -> f64 {
    lo + (hi - lo) * k as f64 / 4.0
}

#[test]
fn noise_free_pose_chain_over_grid() {
    let cam = camera(0.0, 0.0);
    let ee = ee_pose();
    let cam_pose = cam.camera_pose(&ee);
    let tag_offset = RigidTransform::new(Rotation::rot_x(-0.3), Vector3::new(0.01, -0.02, 0.03));
    let grasp_offset = RigidTransform::new(Rotation::rot_x(std::f64::consts::PI), Vector3::new(0.0, 0.0, -0.03));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: (f64, f64) = (0.0, 0.0);
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..5 {
                let rel = RigidTransform::new(
                    Rotation::rot_z(0.5 * i as f64) * Rotation::rot_x(0.2 * j as f64 - 0.4),
                    Vector3::new(lerp(-0.1, 0.1, i), lerp(-0.1, 0.1, j), lerp(0.2, 0.6, k)),
                );
                let tag = cam_pose * rel;
                let object = ObjectSpec {
                    id: 7,
                    pose: tag * tag_offset.inverse(),
                    tag_offset,
                    grasp_offset,
                    tagged: true,
                };
                let det = simulate_detection(&[(7, object.tag_pose())], &cam, &ee, 0.0, &mut rng).expect("tag in view");
                let recovered = grasp_pose_from_object(&object_pose_from_detection(&ee, &cam, &det), &grasp_offset);
                let truth = object.grasp_frame();
                let e_p = position_error(&truth.translation, &recovered.translation);
                let e_r = orientation_error(&truth.rotation, &recovered.rotation);
                worst = (worst.0.max(e_p), worst.1.max(e_r));
            }
        }
    }
    assert!(worst.0 <= 1e-9 && worst.1 <= 1e-9, "worst errors {worst:?}");
}

#[test]
fn detections_only_inside_the_gate() {
    let cam = camera(0.0, 0.0);
    let ee = ee_pose();
    let cam_pose = cam.camera_pose(&ee);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut inside, mut outside) = (0, 0);
    for i in 0..11 {
        for j in 0..11 {
            for k in 0..11 {
                let p = Vector3::new(-1.0 + 0.2 * i as f64, -1.0 + 0.2 * j as f64, -0.5 + 0.127 * k as f64);
                let tag = cam_pose * RigidTransform::from_translation(p.x, p.y, p.z);
                let det = simulate_detection(&[(1, tag)], &cam, &ee, 0.0, &mut rng);
                let off_axis = (p.x.hypot(p.y) / p.z).atan();
                let expected = p.z > 0.0 && p.norm() <= cam.max_range && off_axis <= cam.half_fov;
                assert_eq!(det.is_some(), expected, "tag at {p:?}");
                if expected {
                    inside += 1;
                } else {
                    outside += 1;
                }
            }
        }
    }
    assert!(inside > 20 && outside > 20);
}

#[test]
fn nearest_visible_tag_wins() {
    let cam = camera(0.0, 0.0);
    let ee = ee_pose();
    let cam_pose = cam.camera_pose(&ee);
    let near = cam_pose * RigidTransform::from_translation(0.0, 0.0, 0.3);
    let far = cam_pose * RigidTransform::from_translation(0.0, 0.0, 0.5);
    let hidden = cam_pose * RigidTransform::from_translation(0.0, 0.0, -0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let det = simulate_detection(&[(1, far), (2, near), (3, hidden)], &cam, &ee, 0.0, &mut rng).unwrap();
    assert_eq!(det.tag_id, 2);
}

#[test]
fn noisy_orientation_error_follows_folded_gaussian() {
    let sigma_r = 0.02;
    let sigma_p = 0.005;
    let cam = camera(sigma_p, sigma_r);
    let ee = ee_pose();
    let tag = cam.camera_pose(&ee) * RigidTransform::new(Rotation::rot_y(0.3), Vector3::new(0.03, -0.02, 0.4));
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 1000;
    let mut angle_sum = 0.0;
    let mut offset_sum = Vector3::zeros();
    for _ in 0..n {
        let det = simulate_detection(&[(1, tag)], &cam, &ee, 0.0, &mut rng).unwrap();
        let est = object_pose_from_detection(&ee, &cam, &det);
        angle_sum += orientation_error(&tag.rotation, &est.rotation);
        offset_sum += cam.camera_pose(&ee).inverse().transform_vector(&(est.translation - tag.translation));
    }
    let nf = n as f64;
    // Mean of |N(0, sigma)| is sigma * sqrt(2 / pi).
    let folded_mean = sigma_r * (2.0 / std::f64::consts::PI).sqrt();
    let mean = angle_sum / nf;
    assert!((mean - folded_mean).abs() <= 3.0 * sigma_r / nf.sqrt(), "mean {mean} vs {folded_mean}");
    let offset_mean = offset_sum / nf;
    assert!(offset_mean.amax() <= 3.0 * sigma_p / nf.sqrt(), "translation bias {offset_mean:?}");
}
