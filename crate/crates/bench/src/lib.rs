//! Shared fixtures for the benchmarks.

use forcegrasp_core::equilibrium::{default_gravity, Contact};
use forcegrasp_core::hand::{HandModel, HandPose};
use forcegrasp_core::keypoints::{extract_keypoints, KeypointConfig};
use forcegrasp_core::optimize::{fit_keypoints, initialize_pose, OptimizationConfig};
use forcegrasp_core::synth::{generate_contacts, generate_scene, ContactGenConfig, ContactStyle, SceneSpec, Shape};
use forcegrasp_core::{ContactState, KeypointSet, ObjectModel, Vec3};

/// Tripod grasp on a 5 cm sphere, with the keypoint-fitted hand pose.
pub struct Fixture {
    pub object: ObjectModel,
    pub contacts: ContactState,
    pub keypoints: KeypointSet,
    pub model: HandModel,
    pub pose: HandPose,
    pub gravity: Vec3,
}

impl Fixture {
    pub fn sphere(samples: usize) -> Self {
        let gravity = default_gravity();
        let object = generate_scene(&SceneSpec {
            shape: Shape::Sphere { radius: 0.05 },
            sample_count: samples,
            seed: 0,
        })
        .expect("valid scene");
        let contacts = generate_contacts(
            &object,
            ContactStyle::Tripod,
            0,
            1.0,
            &gravity,
            &ContactGenConfig::default(),
        )
        .expect("tripod contacts");
        let keypoints =
            extract_keypoints(&object, &contacts, &KeypointConfig::default(), 1.0, &gravity).expect("keypoints");
        let model = HandModel::default();
        let (stage1, _) = initialize_pose(&model, &HandPose::mean(), &keypoints).expect("registration");
        let (pose, _) = fit_keypoints(&model, &stage1, &keypoints, &OptimizationConfig::default()).expect("stage II");
        Self {
            object,
            contacts,
            keypoints,
            model,
            pose,
            gravity,
        }
    }

    /// Point contacts of the selected keypoints.
    pub fn keypoint_contacts(&self) -> Vec<Contact> {
        self.keypoints
            .centers
            .iter()
            .zip(&self.keypoints.normals)
            .zip(&self.keypoints.forces)
            .map(|((p, n), &f)| Contact::new(*p, *n, f))
            .collect()
    }
}
