//! Built-in skin layouts.
//!
//! * [`ur5_like`]: 6R arm, 8 cylindrical bands, 2112 taxels, denser towards
//!   the wrist. Shipped as `configs/ur5_like_2112.json`.
//! * [`flat_grid`]: one flat grid patch on a single joint; used in tests.
//! * [`fold_demo`]: two flat patches on either side of a hinge. Closing the
//!   hinge to π stacks one patch 4 mm above the other, facing it.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use super::{
    AdjacencyEdge, GridLayout, Joint, JointState, KinematicChain, Patch, SkinConfig, Taxel,
    Transform, SCHEMA_VERSION,
};

pub const UR5_LIKE_NAME: &str = "ur5-like-2112";

/// Hinge closing angle of [`fold_demo`] at which the patches face each other.
pub const FOLD_CLOSED: f64 = PI;

fn transform(t: [f64; 3], axis: Vector3<f64>, angle: f64) -> Transform {
    Transform::from_isometry(&Isometry3::from_parts(
        Translation3::new(t[0], t[1], t[2]),
        UnitQuaternion::from_scaled_axis(axis * angle),
    ))
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (Vector3::from(*a) - Vector3::from(*b)).norm()
}

struct Builder {
    patches: Vec<Patch>,
    taxels: Vec<Taxel>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            patches: Vec::new(),
            taxels: Vec::new(),
        }
    }

    /// Adds a patch whose taxels are laid out row-major; `grid_neighbors`
    /// returns the 4-neighbour mesh as local index pairs.
    fn add_patch(
        &mut self,
        link_index: usize,
        mount: Transform,
        layout: GridLayout,
        cells: Vec<([f64; 3], [f64; 3], f64)>,
    ) {
        let patch_id = self.patches.len();
        let first = self.taxels.len();
        let taxel_ids: Vec<usize> = (first..first + cells.len()).collect();
        for (k, (p, n, area)) in cells.into_iter().enumerate() {
            self.taxels.push(Taxel {
                taxel_id: first + k,
                patch_id,
                local_position: p,
                local_normal: n,
                cell_area: area,
            });
        }
        let adjacency = grid_neighbors(layout)
            .into_iter()
            .map(|(a, b)| {
                let (ta, tb) = (&self.taxels[first + a], &self.taxels[first + b]);
                AdjacencyEdge {
                    a: first + a,
                    b: first + b,
                    rest_length: distance(&ta.local_position, &tb.local_position),
                }
            })
            .collect();
        self.patches.push(Patch {
            patch_id,
            link_index,
            mount_transform: mount,
            taxel_ids,
            adjacency,
            layout: Some(layout),
        });
    }

    fn flat(&mut self, link_index: usize, mount: Transform, rows: usize, cols: usize, pitch: f64) {
        let cells = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| {
                    (
                        [c as f64 * pitch, r as f64 * pitch, 0.0],
                        [0.0, 0.0, 1.0],
                        pitch * pitch,
                    )
                })
            })
            .collect();
        let layout = GridLayout {
            rows,
            cols,
            wrap: false,
        };
        self.add_patch(link_index, mount, layout, cells);
    }

    /// Cylindrical band around the patch-local z axis, centred at z = 0.
    fn band(
        &mut self,
        link_index: usize,
        mount: Transform,
        radius: f64,
        cols: usize,
        rows: usize,
        pitch_along: f64,
    ) {
        let arc = 2.0 * PI * radius / cols as f64;
        let cells = (0..rows)
            .flat_map(|r| {
                let z = (r as f64 - (rows as f64 - 1.0) / 2.0) * pitch_along;
                (0..cols).map(move |c| {
                    let theta = 2.0 * PI * c as f64 / cols as f64;
                    let (s, co) = theta.sin_cos();
                    ([radius * co, radius * s, z], [co, s, 0.0], arc * pitch_along)
                })
            })
            .collect();
        let layout = GridLayout {
            rows,
            cols,
            wrap: true,
        };
        self.add_patch(link_index, mount, layout, cells);
    }

    fn finish(self, name: &str, chain: KinematicChain) -> SkinConfig {
        SkinConfig {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            chain,
            patches: self.patches,
            taxels: self.taxels,
        }
    }
}

/// 4-neighbour mesh over a row-major grid, as local index pairs `(a, b)`.
pub fn grid_neighbors(layout: GridLayout) -> Vec<(usize, usize)> {
    let GridLayout { rows, cols, wrap } = layout;
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let here = r * cols + c;
            if c + 1 < cols {
                out.push((here, here + 1));
            } else if wrap && cols > 2 {
                out.push((r * cols, here));
            }
            if r + 1 < rows {
                out.push((here, here + cols));
            }
        }
    }
    out
}

fn joint(axis: [f64; 3], origin: [f64; 3]) -> Joint {
    Joint {
        axis,
        origin: transform(origin, Vector3::zeros(), 0.0),
    }
}

/// Default skin: a UR5-proportioned 6R arm with 8 bands and 2112 taxels.
pub fn ur5_like() -> SkinConfig {
    let z = [0.0, 0.0, 1.0];
    let y = [0.0, 1.0, 0.0];
    let chain = KinematicChain {
        base_transform: Transform::IDENTITY,
        links: vec![
            joint(z, [0.0, 0.0, 0.089]),   // shoulder pan
            joint(y, [0.0, 0.136, 0.0]),   // shoulder lift, upper arm along +x
            joint(y, [0.425, -0.120, 0.0]), // elbow, forearm along +x
            joint(y, [0.450, 0.0, 0.0]),   // wrist 1, link along +y
            joint(z, [0.0, 0.120, 0.0]),   // wrist 2, link along -z
            joint(y, [0.0, 0.0, -0.140]),  // wrist 3, link along +y
        ],
    };
    let along_x = |x: f64| transform([x, 0.0, 0.0], Vector3::y(), FRAC_PI_2);
    let along_y = |y: f64| transform([0.0, y, 0.0], Vector3::x(), -FRAC_PI_2);
    let along_neg_z = |z: f64| transform([0.0, 0.0, z], Vector3::x(), PI);

    let mut b = Builder::new();
    b.band(0, transform([0.0, 0.0, -0.03], Vector3::zeros(), 0.0), 0.060, 32, 8, 0.012);
    b.band(1, along_x(0.12), 0.055, 28, 12, 0.012);
    b.band(1, along_x(0.30), 0.055, 28, 12, 0.012);
    b.band(2, along_x(0.11), 0.045, 28, 12, 0.010);
    b.band(2, along_x(0.28), 0.045, 28, 12, 0.010);
    b.band(3, along_y(0.06), 0.042, 32, 6, 0.008);
    b.band(4, along_neg_z(-0.09), 0.042, 32, 6, 0.008);
    b.band(5, along_y(0.08), 0.040, 32, 4, 0.00785);
    b.finish(UR5_LIKE_NAME, chain)
}

/// Per-joint sampling ranges (radians) for the default arm.
pub fn ur5_like_joint_ranges() -> Vec<(f64, f64)> {
    vec![
        (-PI, PI),
        (-1.2, 0.4),
        (-2.4, 2.4),
        (-PI, PI),
        (-PI, PI),
        (-PI, PI),
    ]
}

/// Single flat `rows x cols` grid patch with the given pitch on a one-joint
/// chain (axis z, identity origin).
pub fn flat_grid(rows: usize, cols: usize, pitch: f64) -> SkinConfig {
    let chain = KinematicChain {
        base_transform: Transform::IDENTITY,
        links: vec![joint([0.0, 0.0, 1.0], [0.0; 3])],
    };
    let mut b = Builder::new();
    b.flat(0, Transform::IDENTITY, rows, cols, pitch);
    b.finish(&format!("flat-{rows}x{cols}"), chain)
}

/// Two 8x8 flat patches (10 mm pitch) on either side of a hinge along x.
///
/// At zero pose both lie in the z = 0 plane with a 20 mm gap. At hinge angle
/// [`FOLD_CLOSED`] patch 1 lies 4 mm above patch 0, mirrored in y and facing
/// down onto it.
pub fn fold_demo() -> SkinConfig {
    let chain = KinematicChain {
        base_transform: Transform::IDENTITY,
        links: vec![
            joint([0.0, 0.0, 1.0], [0.0; 3]),
            joint([1.0, 0.0, 0.0], [0.0, 0.08, 0.002]),
        ],
    };
    let mut b = Builder::new();
    b.flat(0, Transform::IDENTITY, 8, 8, 0.01);
    b.flat(
        1,
        transform([0.0, 0.01, -0.002], Vector3::zeros(), 0.0),
        8,
        8,
        0.01,
    );
    b.finish("fold-demo", chain)
}

/// Joint state of [`fold_demo`] with the hinge at `angle`.
pub fn fold_pose(angle: f64) -> JointState {
    JointState(vec![0.0, angle])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skin::{taxel_world_poses, Skin};

    #[test]
    fn ur5_like_has_full_arm_scale() {
        let cfg = ur5_like();
        assert_eq!(cfg.taxels.len(), 2112);
        assert_eq!(cfg.patches.len(), 8);
        assert_eq!(cfg.chain.links.len(), 6);
    }

    #[test]
    fn distal_patches_are_denser() {
        let cfg = ur5_like();
        let area = |p: usize| {
            let id = cfg.patches[p].taxel_ids[0];
            cfg.taxels[id].cell_area
        };
        assert!(area(7) < area(3));
        assert!(area(3) < area(0));
    }

    #[test]
    fn ur5_like_patches_do_not_touch_at_zero_pose() {
        let skin = Skin::new(ur5_like()).unwrap();
        let poses = taxel_world_poses(&skin, &JointState::zeros(6)).unwrap();
        let mut min = f64::INFINITY;
        for a in 0..poses.len() {
            for b in a + 1..poses.len() {
                if skin.patch_index_of(a) != skin.patch_index_of(b) {
                    min = min.min((poses[a].position - poses[b].position).norm());
                }
            }
        }
        assert!(min > 0.015, "closest cross-patch taxels {min} m apart");
    }

    #[test]
    fn fold_demo_closes_to_four_millimetres() {
        let skin = Skin::new(fold_demo()).unwrap();
        let open = taxel_world_poses(&skin, &fold_pose(0.0)).unwrap();
        let closed = taxel_world_poses(&skin, &fold_pose(FOLD_CLOSED)).unwrap();
        // taxel 0 sits at the origin; its folded partner is the mirrored
        // corner of patch 1 (row 7, column 0).
        let partner = 64 + 7 * 8;
        assert!((open[partner].position - open[0].position).norm() > 0.08);
        let gap = closed[partner].position - closed[0].position;
        assert!((gap - Vector3::new(0.0, 0.0, 0.004)).norm() < 1e-12);
        assert!((closed[partner].normal + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn wrapped_band_edges_close_the_ring() {
        let n = grid_neighbors(GridLayout {
            rows: 2,
            cols: 4,
            wrap: true,
        });
        assert!(n.contains(&(0, 3)));
        assert!(n.contains(&(4, 7)));
        assert_eq!(n.len(), 2 * 4 + 4);
    }
}
