use nalgebra::{Isometry3, Unit, UnitQuaternion, Vector3};

use super::{JointState, KinematicChain, Skin, TaxelPose};
use crate::error::{Error, Result};

/// World transform of every link frame.
///
/// Link `i` is `base * origin_0 * R(axis_0, q_0) * ... * origin_i * R(axis_i, q_i)`.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointState) -> Result<Vec<Isometry3<f64>>> {
    if q.len() != chain.links.len() {
        return Err(Error::JointCount {
            expected: chain.links.len(),
            got: q.len(),
        });
    }
    let mut current = chain.base_transform.to_isometry();
    let mut out = Vec::with_capacity(chain.links.len());
    for (joint, &angle) in chain.links.iter().zip(&q.0) {
        let axis = Unit::new_normalize(Vector3::from(joint.axis));
        let spin = UnitQuaternion::from_axis_angle(&axis, angle);
        current = current * joint.origin.to_isometry() * Isometry3::from_parts(Default::default(), spin);
        out.push(current);
    }
    Ok(out)
}

/// World position and outward normal of every taxel, indexed by taxel id.
pub fn taxel_world_poses(skin: &Skin, q: &JointState) -> Result<Vec<TaxelPose>> {
    let links = forward_kinematics(skin.chain(), q)?;
    let patch_frames: Vec<Isometry3<f64>> = skin
        .patches()
        .iter()
        .map(|p| links[p.link_index] * p.mount_transform.to_isometry())
        .collect();
    Ok(skin
        .taxels()
        .iter()
        .map(|t| {
            let frame = &patch_frames[skin.patch_index_of(t.taxel_id)];
            let position = frame.transform_point(&t.local_position.into()).coords;
            let normal = frame
                .transform_vector(&Vector3::from(t.local_normal))
                .normalize();
            TaxelPose { position, normal }
        })
        .collect())
}
