use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use super::{SkinConfig, TaxelId, SCHEMA_VERSION};
use crate::error::Result;

const UNIT_TOL: f64 = 1e-9;
const REST_TOL: f64 = 1e-9;

/// One broken invariant in a skin configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    SchemaVersion { found: u32 },
    TaxelIdMismatch { index: usize, taxel_id: TaxelId },
    NormalNotUnit { taxel: TaxelId, norm: f64 },
    NonPositiveArea { taxel: TaxelId, area: f64 },
    UnknownPatch { taxel: TaxelId, patch: usize },
    DuplicatePatch { patch: usize },
    EmptyPatch { patch: usize },
    LinkOutOfRange { patch: usize, link: usize, links: usize },
    TaxelNotInPatch { taxel: TaxelId, patch: usize },
    ForeignTaxel { patch: usize, taxel: TaxelId },
    ForeignAdjacency { patch: usize, a: TaxelId, b: TaxelId },
    SelfAdjacency { patch: usize, taxel: TaxelId },
    RestLength { patch: usize, a: TaxelId, b: TaxelId, rest: f64, actual: f64 },
    Disconnected { patch: usize, components: usize },
    LayoutSize { patch: usize, rows: usize, cols: usize, taxels: usize },
    AxisNotUnit { joint: usize, norm: f64 },
    RotationNotUnit { what: String, norm: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            SchemaVersion { found } => {
                write!(f, "schema_version {found} unsupported (expected {SCHEMA_VERSION})")
            }
            TaxelIdMismatch { index, taxel_id } => {
                write!(f, "taxel at index {index} has id {taxel_id}; ids must be dense and ordered")
            }
            NormalNotUnit { taxel, norm } => write!(f, "taxel {taxel}: normal norm {norm}"),
            NonPositiveArea { taxel, area } => write!(f, "taxel {taxel}: cell_area {area} <= 0"),
            UnknownPatch { taxel, patch } => write!(f, "taxel {taxel}: unknown patch {patch}"),
            DuplicatePatch { patch } => write!(f, "patch {patch}: duplicate patch id"),
            EmptyPatch { patch } => write!(f, "patch {patch}: no taxels"),
            LinkOutOfRange { patch, link, links } => {
                write!(f, "patch {patch}: link_index {link} out of range (chain has {links})")
            }
            TaxelNotInPatch { taxel, patch } => {
                write!(f, "taxel {taxel}: not listed by its patch {patch}")
            }
            ForeignTaxel { patch, taxel } => {
                write!(f, "patch {patch}: lists taxel {taxel} which belongs elsewhere")
            }
            ForeignAdjacency { patch, a, b } => {
                write!(f, "patch {patch}: adjacency ({a}, {b}) references a foreign taxel")
            }
            SelfAdjacency { patch, taxel } => {
                write!(f, "patch {patch}: self adjacency on taxel {taxel}")
            }
            RestLength { patch, a, b, rest, actual } => write!(
                f,
                "patch {patch}: adjacency ({a}, {b}) rest_length {rest} != local distance {actual}"
            ),
            Disconnected { patch, components } => {
                write!(f, "patch {patch}: adjacency mesh has {components} components")
            }
            LayoutSize { patch, rows, cols, taxels } => write!(
                f,
                "patch {patch}: layout {rows}x{cols} does not match {taxels} taxels"
            ),
            AxisNotUnit { joint, norm } => write!(f, "joint {joint}: axis norm {norm}"),
            RotationNotUnit { what, norm } => write!(f, "{what}: rotation quaternion norm {norm}"),
        }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    Vector3::from(*v).norm()
}

impl SkinConfig {
    /// Every invariant violation, in a stable order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Violation::SchemaVersion {
                found: self.schema_version,
            });
        }

        let links = self.chain.links.len();
        let base_norm = self.chain.base_transform.rotation_norm();
        if (base_norm - 1.0).abs() > UNIT_TOL {
            out.push(Violation::RotationNotUnit {
                what: "base_transform".into(),
                norm: base_norm,
            });
        }
        for (j, joint) in self.chain.links.iter().enumerate() {
            let n = norm3(&joint.axis);
            if (n - 1.0).abs() > UNIT_TOL {
                out.push(Violation::AxisNotUnit { joint: j, norm: n });
            }
            let rn = joint.origin.rotation_norm();
            if (rn - 1.0).abs() > UNIT_TOL {
                out.push(Violation::RotationNotUnit {
                    what: format!("joint {j} origin"),
                    norm: rn,
                });
            }
        }

        let mut patch_ids = HashSet::new();
        for p in &self.patches {
            if !patch_ids.insert(p.patch_id) {
                out.push(Violation::DuplicatePatch { patch: p.patch_id });
            }
        }

        for (index, t) in self.taxels.iter().enumerate() {
            if t.taxel_id != index {
                out.push(Violation::TaxelIdMismatch {
                    index,
                    taxel_id: t.taxel_id,
                });
            }
            let n = norm3(&t.local_normal);
            if !((n - 1.0).abs() <= UNIT_TOL) {
                out.push(Violation::NormalNotUnit {
                    taxel: t.taxel_id,
                    norm: n,
                });
            }
            if !(t.cell_area > 0.0) {
                out.push(Violation::NonPositiveArea {
                    taxel: t.taxel_id,
                    area: t.cell_area,
                });
            }
            if !patch_ids.contains(&t.patch_id) {
                out.push(Violation::UnknownPatch {
                    taxel: t.taxel_id,
                    patch: t.patch_id,
                });
            }
        }

        let taxel_patch: HashMap<TaxelId, usize> = self
            .taxels
            .iter()
            .map(|t| (t.taxel_id, t.patch_id))
            .collect();
        let mut listed: HashSet<TaxelId> = HashSet::new();

        for p in &self.patches {
            let pid = p.patch_id;
            if p.taxel_ids.is_empty() {
                out.push(Violation::EmptyPatch { patch: pid });
            }
            if p.link_index >= links {
                out.push(Violation::LinkOutOfRange {
                    patch: pid,
                    link: p.link_index,
                    links,
                });
            }
            let rn = p.mount_transform.rotation_norm();
            if (rn - 1.0).abs() > UNIT_TOL {
                out.push(Violation::RotationNotUnit {
                    what: format!("patch {pid} mount_transform"),
                    norm: rn,
                });
            }
            if let Some(layout) = p.layout {
                if layout.rows * layout.cols != p.taxel_ids.len() {
                    out.push(Violation::LayoutSize {
                        patch: pid,
                        rows: layout.rows,
                        cols: layout.cols,
                        taxels: p.taxel_ids.len(),
                    });
                }
            }
            let members: HashSet<TaxelId> = p.taxel_ids.iter().copied().collect();
            for &t in &p.taxel_ids {
                listed.insert(t);
                if taxel_patch.get(&t) != Some(&pid) {
                    out.push(Violation::ForeignTaxel { patch: pid, taxel: t });
                }
            }
            for e in &p.adjacency {
                if e.a == e.b {
                    out.push(Violation::SelfAdjacency {
                        patch: pid,
                        taxel: e.a,
                    });
                    continue;
                }
                if !members.contains(&e.a) || !members.contains(&e.b) {
                    out.push(Violation::ForeignAdjacency {
                        patch: pid,
                        a: e.a,
                        b: e.b,
                    });
                    continue;
                }
                let (Some(ta), Some(tb)) = (self.taxels.get(e.a), self.taxels.get(e.b)) else {
                    continue;
                };
                let actual =
                    (Vector3::from(ta.local_position) - Vector3::from(tb.local_position)).norm();
                if !((e.rest_length - actual).abs() <= REST_TOL) {
                    out.push(Violation::RestLength {
                        patch: pid,
                        a: e.a,
                        b: e.b,
                        rest: e.rest_length,
                        actual,
                    });
                }
            }
            let components = count_components(&p.taxel_ids, &p.adjacency);
            if components > 1 {
                out.push(Violation::Disconnected {
                    patch: pid,
                    components,
                });
            }
        }

        for t in &self.taxels {
            if patch_ids.contains(&t.patch_id) && !listed.contains(&t.taxel_id) {
                out.push(Violation::TaxelNotInPatch {
                    taxel: t.taxel_id,
                    patch: t.patch_id,
                });
            }
        }
        out
    }

    /// Hex SHA-256 over the canonical (serde field order) JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("skin config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("skin config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }
}

fn count_components(ids: &[TaxelId], adjacency: &[super::AdjacencyEdge]) -> usize {
    let index: HashMap<TaxelId, usize> = ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in adjacency {
        if let (Some(&a), Some(&b)) = (index.get(&e.a), index.get(&e.b)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    (0..ids.len()).filter(|&i| find(&mut parent, i) == i).count()
}
