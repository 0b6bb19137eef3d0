use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Skin, TaxelId, TaxelPose};
use crate::error::Result;

/// Surface distance between two taxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeodesicDistance {
    Meters(f64),
    /// The taxels sit on different patches; no surface path is modeled.
    Disconnected,
}

impl GeodesicDistance {
    pub fn meters(self) -> Option<f64> {
        match self {
            GeodesicDistance::Meters(d) => Some(d),
            GeodesicDistance::Disconnected => None,
        }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    dist: f64,
    node: TaxelId,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over the intra-patch mesh from `source`. Returns distances and
/// predecessors indexed by taxel id; unreachable entries are `INFINITY`.
pub(crate) fn mesh_dijkstra(
    skin: &Skin,
    source: TaxelId,
    target: Option<TaxelId>,
) -> (Vec<f64>, Vec<usize>) {
    let n = skin.taxel_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: source,
    });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        if Some(node) == target {
            break;
        }
        for &(next, w) in skin.neighbors(node) {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                prev[next] = node;
                heap.push(Entry {
                    dist: nd,
                    node: next,
                });
            }
        }
    }
    (dist, prev)
}

/// Shortest-path length over the patch mesh using rest lengths.
pub fn geometric_distance(skin: &Skin, a: TaxelId, b: TaxelId) -> Result<GeodesicDistance> {
    skin.taxel(a)?;
    skin.taxel(b)?;
    if skin.patch_index_of(a) != skin.patch_index_of(b) {
        return Ok(GeodesicDistance::Disconnected);
    }
    if a == b {
        return Ok(GeodesicDistance::Meters(0.0));
    }
    let (dist, _) = mesh_dijkstra(skin, a, Some(b));
    Ok(GeodesicDistance::Meters(dist[b]))
}

/// Taxel sequence of a shortest mesh path from `a` to `b`, or `None` when
/// the two sit on different patches.
pub fn geodesic_path(skin: &Skin, a: TaxelId, b: TaxelId) -> Result<Option<(Vec<TaxelId>, f64)>> {
    skin.taxel(a)?;
    skin.taxel(b)?;
    if skin.patch_index_of(a) != skin.patch_index_of(b) {
        return Ok(None);
    }
    let (dist, prev) = mesh_dijkstra(skin, a, Some(b));
    let mut path = vec![b];
    let mut cur = b;
    while cur != a {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Ok(Some((path, dist[b])))
}

/// Straight-line distance between two world positions.
pub fn kinematic_distance(a: &TaxelPose, b: &TaxelPose) -> f64 {
    (a.position - b.position).norm()
}
