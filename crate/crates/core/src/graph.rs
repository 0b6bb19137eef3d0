//! Per-frame tactile graphs: intra-patch static edges plus activation-gated
//! dynamic KNN edges on kinematic distance.

use std::collections::{BinaryHeap, HashMap};
use std::io::{self, Write};

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::skin::{forward_kinematics, JointState, Skin, StaticEdge, TaxelId};
use crate::synth::PressureFrame;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_THETA_ACT: f64 = 0.05;

/// Undirected edge between local node indices `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Kinematic distance in meters.
    pub distance: f64,
    pub is_static: bool,
    /// Rest length for static edges.
    pub geodesic: Option<f64>,
    /// `n_i · n_j`.
    pub normal_dot: f64,
    /// `n_i · (x_j - x_i) / |x_j - x_i|`, zero for coincident nodes.
    pub elevation_i: f64,
    /// `n_j · (x_i - x_j) / |x_i - x_j|`.
    pub elevation_j: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TactileGraph {
    /// Taxel ids, ascending.
    pub node_ids: Vec<TaxelId>,
    /// `(pressure, cell_area)` per node.
    pub node_scalars: Vec<[f64; 2]>,
    pub node_positions: Vec<Vector3<f64>>,
    pub node_normals: Vec<Vector3<f64>>,
    /// Sorted by `(i, j)`, which is also taxel-id order.
    pub edges: Vec<GraphEdge>,
}

impl TactileGraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Same graph with every position and normal moved by `g`. Edge
    /// attributes are recomputed from the moved poses.
    pub fn transformed(&self, g: &Isometry3<f64>) -> TactileGraph {
        let mut out = self.clone();
        for p in &mut out.node_positions {
            *p = g.transform_point(&(*p).into()).coords;
        }
        for n in &mut out.node_normals {
            *n = g.transform_vector(n);
        }
        for e in &mut out.edges {
            let fresh = edge_attributes(
                &out.node_positions,
                &out.node_normals,
                e.i,
                e.j,
                e.is_static,
                e.geodesic,
            );
            *e = fresh;
        }
        out
    }

    /// Text dump: a node table then one `i j dist static_flag` line per edge
    /// (taxel ids).
    pub fn dump(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "# nodes {}", self.node_count())?;
        writeln!(w, "# id pressure cell_area x y z nx ny nz")?;
        for k in 0..self.node_count() {
            let (p, n) = (self.node_positions[k], self.node_normals[k]);
            writeln!(
                w,
                "{} {} {} {} {} {} {} {} {}",
                self.node_ids[k],
                self.node_scalars[k][0],
                self.node_scalars[k][1],
                p.x,
                p.y,
                p.z,
                n.x,
                n.y,
                n.z
            )?;
        }
        writeln!(w, "# edges {}", self.edges.len())?;
        writeln!(w, "# i j dist static_flag")?;
        for e in &self.edges {
            writeln!(
                w,
                "{} {} {} {}",
                self.node_ids[e.i],
                self.node_ids[e.j],
                e.distance,
                u8::from(e.is_static)
            )?;
        }
        Ok(())
    }
}

fn edge_attributes(
    pos: &[Vector3<f64>],
    nrm: &[Vector3<f64>],
    i: usize,
    j: usize,
    is_static: bool,
    geodesic: Option<f64>,
) -> GraphEdge {
    let diff = pos[j] - pos[i];
    let distance = diff.norm();
    let (elevation_i, elevation_j) = if distance > 1e-12 {
        let u = diff / distance;
        (nrm[i].dot(&u), -nrm[j].dot(&u))
    } else {
        (0.0, 0.0)
    };
    GraphEdge {
        i,
        j,
        distance,
        is_static,
        geodesic,
        normal_dot: nrm[i].dot(&nrm[j]),
        elevation_i,
        elevation_j,
    }
}

/// Intra-patch mesh edges of the skin; independent of the joint state.
pub fn static_edges(skin: &Skin) -> &[StaticEdge] {
    skin.static_edges()
}

/// Taxels above `theta_act` plus their one-hop mesh neighbours, ascending.
pub fn activated_nodes(skin: &Skin, pressure: &[f32], theta_act: f64) -> Vec<TaxelId> {
    let mut mark = vec![false; pressure.len()];
    for (id, &p) in pressure.iter().enumerate() {
        if p as f64 > theta_act {
            mark[id] = true;
            for &(nb, _) in skin.neighbors(id) {
                mark[nb] = true;
            }
        }
    }
    mark.iter()
        .enumerate()
        .filter_map(|(id, &m)| m.then_some(id))
        .collect()
}

/// Ordering key for neighbour search: distance quantized to 0.1 nm, then
/// taxel id. Quantizing keeps near-ties stable under rigid motion, where
/// distances may differ in the last bits.
pub fn knn_key(d: f64, id: TaxelId) -> (u64, TaxelId) {
    ((d * 1e10).round() as u64, id)
}

/// For each node, edges to its `k` nearest other nodes by kinematic distance
/// (ties by lower taxel id). Returns deduplicated local index pairs
/// `(a, b)` with `a < b`, sorted. `ids[a]` is the taxel id of node `a`.
pub fn dynamic_knn_edges(
    positions: &[Vector3<f64>],
    ids: &[TaxelId],
    k: usize,
) -> Vec<(usize, usize)> {
    assert!(k >= 1, "k must be positive");
    assert_eq!(positions.len(), ids.len());
    let n = positions.len();
    if n < 2 {
        return Vec::new();
    }
    let mut pairs = Vec::with_capacity(n * k.min(n - 1));
    if n <= k + 1 {
        for a in 0..n {
            for b in a + 1..n {
                pairs.push((a, b));
            }
        }
        return pairs;
    }
    let grid = VoxelGrid::new(positions, k);
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for a in 0..n {
        grid.nearest(positions, ids, a, k, &mut heap);
        for &(_, b) in heap.iter() {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct VoxelGrid {
    cell: f64,
    origin: Vector3<f64>,
    cells: HashMap<[i32; 3], Vec<usize>>,
    max_ring: i32,
}

impl VoxelGrid {
    fn new(positions: &[Vector3<f64>], k: usize) -> Self {
        let mut lo = positions[0];
        let mut hi = positions[0];
        for p in positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let mut e = [ext.x, ext.y, ext.z];
        e.sort_by(|a, b| b.total_cmp(a));
        // Tactile nodes lie on surfaces, so size cells from the two largest
        // extents so that a cell holds roughly k points.
        let area = (e[0] * e[1].max(e[0] * 0.05)).max(1e-12);
        let n = positions.len() as f64;
        let cell = (area * k as f64 / n).sqrt().max(1e-6);
        let mut cells: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
        for (idx, p) in positions.iter().enumerate() {
            cells.entry(Self::key(cell, &lo, p)).or_default().push(idx);
        }
        let max_ring = (e[0] / cell).ceil() as i32 + 1;
        VoxelGrid {
            cell,
            origin: lo,
            cells,
            max_ring,
        }
    }

    fn key(cell: f64, origin: &Vector3<f64>, p: &Vector3<f64>) -> [i32; 3] {
        let r = (p - origin) / cell;
        [r.x.floor() as i32, r.y.floor() as i32, r.z.floor() as i32]
    }

    /// Fills `heap` with the `k` best `(key, index)` for node `a`.
    fn nearest(
        &self,
        positions: &[Vector3<f64>],
        ids: &[TaxelId],
        a: usize,
        k: usize,
        heap: &mut BinaryHeap<((u64, TaxelId), usize)>,
    ) {
        heap.clear();
        let c = Self::key(self.cell, &self.origin, &positions[a]);
        let visit = |idx: usize, heap: &mut BinaryHeap<((u64, TaxelId), usize)>| {
            if idx == a {
                return;
            }
            let key = knn_key((positions[idx] - positions[a]).norm(), ids[idx]);
            if heap.len() < k {
                heap.push((key, idx));
            } else if key < heap.peek().unwrap().0 {
                heap.pop();
                heap.push((key, idx));
            }
        };
        for r in 0..=self.max_ring {
            // Sparse clouds: once a ring costs more than a scan, scan.
            if r > 1 && (2 * r as usize + 1).pow(3) > 8 * positions.len() {
                heap.clear();
                for idx in 0..positions.len() {
                    visit(idx, heap);
                }
                return;
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let edge_xy = dx.abs() == r || dy.abs() == r;
                    let dzs: &mut dyn Iterator<Item = i32> = if edge_xy {
                        &mut (-r..=r)
                    } else {
                        &mut [-r, r].into_iter()
                    };
                    for dz in dzs {
                        if let Some(list) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &idx in list {
                                visit(idx, heap);
                            }
                        }
                    }
                }
            }
            // Anything outside rings 0..=r is at least r cells away.
            if heap.len() == k && heap.peek().unwrap().0 .0 < knn_key(r as f64 * self.cell, 0).0 {
                break;
            }
        }
    }
}

/// Graph builder holding the gating threshold and neighbour count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub theta_act: f64,
    pub k: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            theta_act: DEFAULT_THETA_ACT,
            k: DEFAULT_K,
        }
    }
}

/// World frames of every patch at `q`.
pub fn patch_frames(skin: &Skin, q: &JointState) -> Result<Vec<Isometry3<f64>>> {
    let links = forward_kinematics(skin.chain(), q)?;
    Ok(skin
        .patches()
        .iter()
        .map(|p| links[p.link_index] * p.mount_transform.to_isometry())
        .collect())
}

/// Graph of one frame: activated nodes with their halo, the static edges
/// among them, and dynamic KNN edges not already static.
pub fn build_graph(skin: &Skin, frame: &PressureFrame, params: &GraphParams) -> Result<TactileGraph> {
    let frames = patch_frames(skin, &frame.q)?;
    Ok(build_graph_with_frames(skin, &frame.pressure, &frames, params))
}

pub fn build_graph_with_frames(
    skin: &Skin,
    pressure: &[f32],
    frames: &[Isometry3<f64>],
    params: &GraphParams,
) -> TactileGraph {
    let node_ids = activated_nodes(skin, pressure, params.theta_act);
    if node_ids.is_empty() {
        return TactileGraph::default();
    }
    let taxels = skin.taxels();
    let mut node_positions = Vec::with_capacity(node_ids.len());
    let mut node_normals = Vec::with_capacity(node_ids.len());
    let mut node_scalars = Vec::with_capacity(node_ids.len());
    for &id in &node_ids {
        let t = &taxels[id];
        let f = &frames[skin.patch_index_of(id)];
        node_positions.push(f.transform_point(&t.local_position.into()).coords);
        node_normals.push(f.transform_vector(&Vector3::from(t.local_normal)).normalize());
        node_scalars.push([pressure[id] as f64, t.cell_area]);
    }

    let local = |id: TaxelId| node_ids.binary_search(&id).ok();
    let mut edges = Vec::new();
    for (a, &id) in node_ids.iter().enumerate() {
        for &(nb, rest) in skin.neighbors(id) {
            if nb > id {
                if let Some(b) = local(nb) {
                    edges.push(edge_attributes(
                        &node_positions,
                        &node_normals,
                        a,
                        b,
                        true,
                        Some(rest),
                    ));
                }
            }
        }
    }
    for (a, b) in dynamic_knn_edges(&node_positions, &node_ids, params.k) {
        let (ia, ib) = (node_ids[a], node_ids[b]);
        if skin.neighbors(ia).binary_search_by_key(&ib, |&(t, _)| t).is_err() {
            edges.push(edge_attributes(&node_positions, &node_normals, a, b, false, None));
        }
    }
    edges.sort_by_key(|e| (e.i, e.j));

    TactileGraph {
        node_ids,
        node_scalars,
        node_positions,
        node_normals,
        edges,
    }
}

/// Graphs for a sequence of frames sharing one joint state.
pub fn build_window(
    skin: &Skin,
    frames: &[PressureFrame],
    params: &GraphParams,
) -> Result<Vec<TactileGraph>> {
    let mut cache: Option<(JointState, Vec<Isometry3<f64>>)> = None;
    frames
        .iter()
        .map(|f| {
            if cache.as_ref().map_or(true, |(q, _)| *q != f.q) {
                cache = Some((f.q.clone(), patch_frames(skin, &f.q)?));
            }
            let pf = &cache.as_ref().unwrap().1;
            Ok(build_graph_with_frames(skin, &f.pressure, pf, params))
        })
        .collect()
}
