//! Modular skin geometry mounted on an articulated chain.
//!
//! A [`SkinConfig`] is the on-disk description (plain data, JSON schema
//! version 1). A [`Skin`] is a validated config plus the derived lookup
//! tables every other module needs: taxel→patch index, per-taxel mesh
//! neighbours, the static edge list and the config hash.

mod config;
mod distance;
mod kinematics;
pub mod presets;

use std::collections::HashMap;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::Violation;
pub(crate) use distance::mesh_dijkstra;
pub use distance::{geodesic_path, geometric_distance, kinematic_distance, GeodesicDistance};
pub use kinematics::{forward_kinematics, taxel_world_poses};

pub type TaxelId = usize;

pub const SCHEMA_VERSION: u32 = 1;

/// Rigid transform as stored in config files: translation in meters and a
/// unit quaternion `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        translation: [0.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
    };

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        let t = iso.translation.vector;
        Transform {
            translation: [t.x, t.y, t.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.rotation;
        let [tx, ty, tz] = self.translation;
        Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    pub fn rotation_norm(&self) -> f64 {
        self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Default for Transform {
    fn default() -> Self {
        Transform::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxel {
    pub taxel_id: TaxelId,
    pub patch_id: usize,
    pub local_position: [f64; 3],
    pub local_normal: [f64; 3],
    /// Sensing cell area in m²; encodes local taxel density.
    pub cell_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyEdge {
    pub a: TaxelId,
    pub b: TaxelId,
    pub rest_length: f64,
}

/// Row-major grid arrangement of a patch's taxels. `wrap` marks a band
/// whose columns close around a link's circumference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub wrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub patch_id: usize,
    pub link_index: usize,
    pub mount_transform: Transform,
    pub taxel_ids: Vec<TaxelId>,
    pub adjacency: Vec<AdjacencyEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<GridLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Revolute axis in the joint frame.
    pub axis: [f64; 3],
    /// Transform from the previous link frame to this joint frame.
    pub origin: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub base_transform: Transform,
    pub links: Vec<Joint>,
}

impl KinematicChain {
    pub fn joint_count(&self) -> usize {
        self.links.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinConfig {
    pub schema_version: u32,
    pub name: String,
    pub chain: KinematicChain,
    pub patches: Vec<Patch>,
    pub taxels: Vec<Taxel>,
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn zeros(n: usize) -> Self {
        JointState(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxelPose {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

/// One intra-patch mesh edge, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticEdge {
    pub a: TaxelId,
    pub b: TaxelId,
    pub rest_length: f64,
}

/// A validated skin with derived tables.
#[derive(Debug, Clone)]
pub struct Skin {
    config: SkinConfig,
    patch_index: HashMap<usize, usize>,
    taxel_patch: Vec<usize>,
    neighbors: Vec<Vec<(TaxelId, f64)>>,
    static_edges: Vec<StaticEdge>,
    hash: String,
}

impl Skin {
    pub fn new(config: SkinConfig) -> Result<Self> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidConfig(violations));
        }
        let patch_index: HashMap<usize, usize> = config
            .patches
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patch_id, i))
            .collect();
        let taxel_patch = config
            .taxels
            .iter()
            .map(|t| patch_index[&t.patch_id])
            .collect();

        let n = config.taxels.len();
        let mut neighbors = vec![Vec::new(); n];
        let mut static_edges = Vec::new();
        for patch in &config.patches {
            for e in &patch.adjacency {
                let (a, b) = if e.a < e.b { (e.a, e.b) } else { (e.b, e.a) };
                static_edges.push(StaticEdge {
                    a,
                    b,
                    rest_length: e.rest_length,
                });
            }
        }
        static_edges.sort_by_key(|e| (e.a, e.b));
        static_edges.dedup_by_key(|e| (e.a, e.b));
        for e in &static_edges {
            neighbors[e.a].push((e.b, e.rest_length));
            neighbors[e.b].push((e.a, e.rest_length));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(id, _)| id);
        }
        let hash = config.content_hash();
        Ok(Skin {
            config,
            patch_index,
            taxel_patch,
            neighbors,
            static_edges,
            hash,
        })
    }

    pub fn config(&self) -> &SkinConfig {
        &self.config
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.config.chain
    }

    pub fn taxels(&self) -> &[Taxel] {
        &self.config.taxels
    }

    pub fn patches(&self) -> &[Patch] {
        &self.config.patches
    }

    pub fn taxel_count(&self) -> usize {
        self.config.taxels.len()
    }

    pub fn joint_count(&self) -> usize {
        self.config.chain.links.len()
    }

    pub fn taxel(&self, id: TaxelId) -> Result<&Taxel> {
        self.config.taxels.get(id).ok_or(Error::UnknownTaxel(id))
    }

    /// Patch hosting taxel `id`.
    pub fn patch_of(&self, id: TaxelId) -> Result<&Patch> {
        let idx = *self.taxel_patch.get(id).ok_or(Error::UnknownTaxel(id))?;
        Ok(&self.config.patches[idx])
    }

    pub fn patch_by_id(&self, patch_id: usize) -> Option<&Patch> {
        self.patch_index
            .get(&patch_id)
            .map(|&i| &self.config.patches[i])
    }

    /// Index into [`Skin::patches`] of the patch hosting `id`.
    pub fn patch_index_of(&self, id: TaxelId) -> usize {
        self.taxel_patch[id]
    }

    /// Mesh neighbours of `id` with rest lengths, sorted by id.
    pub fn neighbors(&self, id: TaxelId) -> &[(TaxelId, f64)] {
        &self.neighbors[id]
    }

    /// Union of all intra-patch adjacency lists, sorted by `(a, b)`.
    pub fn static_edges(&self) -> &[StaticEdge] {
        &self.static_edges
    }

    /// Hex SHA-256 of the canonical JSON encoding of the config.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Same skin with `g` composed in front of the chain base.
    pub fn with_base_transform(&self, g: &Isometry3<f64>) -> Skin {
        let mut config = self.config.clone();
        let base = g * config.chain.base_transform.to_isometry();
        config.chain.base_transform = Transform::from_isometry(&base);
        let hash = config.content_hash();
        Skin {
            config,
            hash,
            ..self.clone()
        }
    }

    pub fn check_joint_state(&self, q: &JointState) -> Result<()> {
        if q.len() != self.joint_count() {
            return Err(Error::JointCount {
                expected: self.joint_count(),
                got: q.len(),
            });
        }
        Ok(())
    }
}
