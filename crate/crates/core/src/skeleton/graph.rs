//! Centerline graph: node/branch decomposition of a thin skeleton, physical
//! branch lengths, distance-transform radii, and per-branch voxel regions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::volume::{BinaryMask, Volume, NEIGHBOURS_26};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("input is not thin: it contains a solid 2x2x2 block")]
    NotThin,
    #[error("grid mismatch: {0:?} vs {1:?}")]
    GridMismatch([usize; 3], [usize; 3]),
    #[error("mask has foreground but the skeleton is empty")]
    EmptySkeleton,
    #[error("branch radius must be > 0, got {0}")]
    NonpositiveRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Endpoint,
    Junction,
}

/// Graph node: a single endpoint voxel or a merged cluster of 26-adjacent
/// junction voxels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphNode {
    /// Representative voxel (smallest linear index of the cluster).
    pub xyz: [usize; 3],
    pub kind: NodeKind,
    /// Every voxel of the cluster; single-element for endpoints.
    pub voxels: Vec<[usize; 3]>,
}

/// Branch size classes by estimated radius: terminal (<= 2mm), small
/// (2-4mm), middle (4-8mm), large (> 8mm); boundaries belong to the smaller
/// class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    TB,
    SB,
    MB,
    LB,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [SizeClass::TB, SizeClass::SB, SizeClass::MB, SizeClass::LB];

    pub fn label(self) -> &'static str {
        match self {
            SizeClass::TB => "TB",
            SizeClass::SB => "SB",
            SizeClass::MB => "MB",
            SizeClass::LB => "LB",
        }
    }
}

/// Classify a branch radius in millimetres.
pub fn classify_branch_size(radius_mm: f64) -> Result<SizeClass, GraphError> {
    if !(radius_mm > 0.0) {
        return Err(GraphError::NonpositiveRadius(radius_mm));
    }
    Ok(if radius_mm <= 2.0 {
        SizeClass::TB
    } else if radius_mm <= 4.0 {
        SizeClass::SB
    } else if radius_mm <= 8.0 {
        SizeClass::MB
    } else {
        SizeClass::LB
    })
}

/// A centerline branch between two nodes (or a closed cycle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based, stable across runs.
    pub id: u32,
    /// Degree-2 voxels owned exclusively by this branch (node voxels are
    /// excluded so branch interiors plus node clusters partition the
    /// skeleton).
    pub interior: Vec<[usize; 3]>,
    /// Full polyline including the terminal node voxels; the geometry the
    /// length is measured on. Cycles close implicitly (last connects to
    /// first).
    pub polyline: Vec<[usize; 3]>,
    /// Node indices at either end; `None` for cycles.
    pub node_a: Option<usize>,
    pub node_b: Option<usize>,
    pub is_cycle: bool,
    pub length_mm: f64,
    /// Mean distance-transform value along the polyline; filled by
    /// [`branch_radii`].
    pub radius_mm: Option<f64>,
}

/// Centerline voxels organized into nodes and branches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub nodes: Vec<GraphNode>,
    pub branches: Vec<Branch>,
}

impl SkeletonGraph {
    pub fn total_length_mm(&self) -> f64 {
        self.branches.iter().map(|b| b.length_mm).sum()
    }

    /// Branch id for every skeleton voxel: interiors map to their branch,
    /// node-cluster voxels to the smallest incident branch id.
    pub fn skeleton_voxel_branches(&self) -> Vec<([usize; 3], u32)> {
        let mut incident: Vec<u32> = vec![u32::MAX; self.nodes.len()];
        for b in &self.branches {
            for node in [b.node_a, b.node_b].into_iter().flatten() {
                incident[node] = incident[node].min(b.id);
            }
        }
        let mut out = Vec::new();
        for b in &self.branches {
            let vox = if b.is_cycle { &b.polyline } else { &b.interior };
            for &v in vox {
                out.push((v, b.id));
            }
        }
        for (n, node) in self.nodes.iter().enumerate() {
            if incident[n] == u32::MAX {
                continue; // bare node with no branch; cannot happen after build
            }
            for &v in &node.voxels {
                out.push((v, incident[n]));
            }
        }
        out
    }
}

fn step_mm(a: [usize; 3], b: [usize; 3], spacing: [f32; 3]) -> f64 {
    let dx = (a[0] as f64 - b[0] as f64) * spacing[0] as f64;
    let dy = (a[1] as f64 - b[1] as f64) * spacing[1] as f64;
    let dz = (a[2] as f64 - b[2] as f64) * spacing[2] as f64;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn polyline_length(polyline: &[[usize; 3]], is_cycle: bool, spacing: [f32; 3]) -> f64 {
    let mut len = 0.0;
    for w in polyline.windows(2) {
        len += step_mm(w[0], w[1], spacing);
    }
    if is_cycle && polyline.len() > 2 {
        len += step_mm(polyline[polyline.len() - 1], polyline[0], spacing);
    }
    len
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VoxelClass {
    Path,
    Node(usize), // node index
}

/// Decompose a thin skeleton into endpoints, junction clusters and branches.
///
/// Voxels are classified by 26-degree (1 endpoint, 2 path, >= 3 junction);
/// 26-adjacent junction voxels merge into a single node. Isolated voxels
/// become endpoint nodes carrying a degenerate half-voxel branch, and pure
/// cycles (all degree 2) become single cyclic branches flagged as such.
pub fn build_graph(skeleton: &BinaryMask, spacing: [f32; 3]) -> Result<SkeletonGraph, GraphError> {
    if super::thin::has_solid_2x2x2_block(skeleton) {
        return Err(GraphError::NotThin);
    }
    let dims = skeleton.dims();

    let fg: Vec<usize> = skeleton.foreground_indices().collect();
    let mut degree = vec![0usize; skeleton.len()];
    for &i in &fg {
        let [x, y, z] = skeleton.coords(i);
        degree[i] = skeleton.degree26(x, y, z);
    }

    // Nodes: endpoints, isolated voxels, and merged junction clusters.
    let mut class: Vec<Option<VoxelClass>> = vec![None; skeleton.len()];
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut junction_seen = vec![false; skeleton.len()];
    for &i in &fg {
        match degree[i] {
            0 | 1 => {
                let node_idx = nodes.len();
                nodes.push(GraphNode {
                    xyz: skeleton.coords(i),
                    kind: NodeKind::Endpoint,
                    voxels: vec![skeleton.coords(i)],
                });
                class[i] = Some(VoxelClass::Node(node_idx));
            }
            2 => class[i] = Some(VoxelClass::Path),
            _ => {
                if junction_seen[i] {
                    continue;
                }
                // Flood the 26-connected cluster of junction voxels.
                let mut cluster = Vec::new();
                let mut stack = vec![i];
                junction_seen[i] = true;
                while let Some(j) = stack.pop() {
                    cluster.push(j);
                    let [x, y, z] = skeleton.coords(j);
                    for d in &NEIGHBOURS_26 {
                        let (nx, ny, nz) =
                            (x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]);
                        if skeleton.get_signed(nx, ny, nz) {
                            let ni = skeleton.index(nx as usize, ny as usize, nz as usize);
                            if degree[ni] >= 3 && !junction_seen[ni] {
                                junction_seen[ni] = true;
                                stack.push(ni);
                            }
                        }
                    }
                }
                cluster.sort_unstable();
                let node_idx = nodes.len();
                nodes.push(GraphNode {
                    xyz: skeleton.coords(cluster[0]),
                    kind: NodeKind::Junction,
                    voxels: cluster.iter().map(|&j| skeleton.coords(j)).collect(),
                });
                for &j in &cluster {
                    class[j] = Some(VoxelClass::Node(node_idx));
                }
            }
        }
    }

    let neighbours = |i: usize| -> Vec<usize> {
        let [x, y, z] = skeleton.coords(i);
        NEIGHBOURS_26
            .iter()
            .filter_map(|d| {
                let (nx, ny, nz) = (x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]);
                skeleton
                    .get_signed(nx, ny, nz)
                    .then(|| skeleton.index(nx as usize, ny as usize, nz as usize))
            })
            .collect()
    };

    // Trace branches outward from every node, walking runs of path voxels.
    let mut branches: Vec<Branch> = Vec::new();
    let mut visited_path = vec![false; skeleton.len()];
    let mut claimed_node_pairs: Vec<(usize, usize, usize)> = Vec::new(); // (a, b, via) dedupe for 0-interior branches
    for (node_idx, node) in nodes.iter().enumerate() {
        let mut cluster_linear: Vec<usize> = node
            .voxels
            .iter()
            .map(|&[x, y, z]| skeleton.index(x, y, z))
            .collect();
        cluster_linear.sort_unstable();
        for &start in &cluster_linear {
            for nb in neighbours(start) {
                match class[nb] {
                    Some(VoxelClass::Path) => {
                        if visited_path[nb] {
                            continue;
                        }
                        // Walk the degree-2 run.
                        let mut interior = Vec::new();
                        let mut prev = start;
                        let mut cur = nb;
                        let end_node;
                        loop {
                            visited_path[cur] = true;
                            interior.push(cur);
                            // Degree-2: exactly one neighbour besides prev.
                            let nexts: Vec<usize> =
                                neighbours(cur).into_iter().filter(|&n| n != prev).collect();
                            debug_assert!(nexts.len() == 1, "path voxel with degree != 2");
                            let n = nexts[0];
                            match class[n] {
                                Some(VoxelClass::Path) => {
                                    prev = cur;
                                    cur = n;
                                }
                                Some(VoxelClass::Node(other)) => {
                                    end_node = other;
                                    break;
                                }
                                None => unreachable!("skeleton voxel without class"),
                            }
                        }
                        let end_voxel = {
                            let last = *interior.last().unwrap();
                            let n = neighbours(last)
                                .into_iter()
                                .find(|&n| matches!(class[n], Some(VoxelClass::Node(e)) if e == end_node))
                                .expect("run ends at a node voxel");
                            n
                        };
                        let mut polyline = vec![skeleton.coords(start)];
                        polyline.extend(interior.iter().map(|&i| skeleton.coords(i)));
                        polyline.push(skeleton.coords(end_voxel));
                        let length = polyline_length(&polyline, false, spacing);
                        branches.push(Branch {
                            id: branches.len() as u32 + 1,
                            interior: interior.iter().map(|&i| skeleton.coords(i)).collect(),
                            polyline,
                            node_a: Some(node_idx),
                            node_b: Some(end_node),
                            is_cycle: false,
                            length_mm: length,
                            radius_mm: None,
                        });
                    }
                    Some(VoxelClass::Node(other)) if other != node_idx => {
                        // Directly adjacent nodes: a zero-interior branch.
                        let key = (node_idx.min(other), node_idx.max(other), start.min(nb));
                        if claimed_node_pairs.contains(&key) {
                            continue;
                        }
                        claimed_node_pairs.push(key);
                        let polyline = vec![skeleton.coords(start.min(nb)), skeleton.coords(start.max(nb))];
                        let length = polyline_length(&polyline, false, spacing);
                        branches.push(Branch {
                            id: branches.len() as u32 + 1,
                            interior: Vec::new(),
                            polyline,
                            node_a: Some(node_idx.min(other)),
                            node_b: Some(node_idx.max(other)),
                            is_cycle: false,
                            length_mm: length,
                            radius_mm: None,
                        });
                    }
                    _ => {}
                }
            }
        }
        // Isolated voxel: a degenerate half-voxel branch so the node has an
        // incident branch for assignment purposes.
        if node.kind == NodeKind::Endpoint {
            let i = skeleton.index(node.xyz[0], node.xyz[1], node.xyz[2]);
            if degree[i] == 0 {
                let min_spacing = spacing.iter().fold(f32::INFINITY, |a, &s| a.min(s)) as f64;
                branches.push(Branch {
                    id: branches.len() as u32 + 1,
                    interior: Vec::new(),
                    polyline: vec![node.xyz],
                    node_a: Some(node_idx),
                    node_b: Some(node_idx),
                    is_cycle: false,
                    length_mm: 0.5 * min_spacing,
                    radius_mm: None,
                });
            }
        }
    }

    // Leftover unvisited path voxels are pure cycles.
    for &i in &fg {
        if class[i] != Some(VoxelClass::Path) || visited_path[i] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut prev = i;
        let mut cur = i;
        loop {
            visited_path[cur] = true;
            cycle.push(cur);
            let nexts: Vec<usize> = neighbours(cur)
                .into_iter()
                .filter(|&n| n != prev && !visited_path[n])
                .collect();
            match nexts.first() {
                Some(&n) => {
                    prev = cur;
                    cur = n;
                }
                None => break, // closed the loop
            }
        }
        let polyline: Vec<[usize; 3]> = cycle.iter().map(|&j| skeleton.coords(j)).collect();
        let length = polyline_length(&polyline, true, spacing);
        branches.push(Branch {
            id: branches.len() as u32 + 1,
            interior: polyline.clone(),
            polyline,
            node_a: None,
            node_b: None,
            is_cycle: true,
            length_mm: length,
            radius_mm: None,
        });
    }

    Ok(SkeletonGraph {
        dims,
        spacing,
        nodes,
        branches,
    })
}

/// Remove endpoint-terminated branches shorter than `min_length_mm` from a
/// thin skeleton (thinning can leave one-or-two-voxel spurs at fat
/// junctions). Junction-cluster voxels stay; iterates until stable. Off by
/// default everywhere; callers opt in.
pub fn prune_spurs(
    skeleton: &BinaryMask,
    min_length_mm: f64,
    spacing: [f32; 3],
) -> Result<BinaryMask, GraphError> {
    let mut current = skeleton.clone();
    loop {
        let graph = build_graph(&current, spacing)?;
        let mut removed = false;
        let mut next = current.clone();
        for b in &graph.branches {
            if b.is_cycle || b.length_mm >= min_length_mm {
                continue;
            }
            let endpoint_ended = [b.node_a, b.node_b].into_iter().flatten().any(|n| {
                graph.nodes[n].kind == NodeKind::Endpoint && graph.nodes[n].voxels.len() == 1
            });
            if !endpoint_ended {
                continue;
            }
            for &[x, y, z] in &b.interior {
                next.set(x, y, z, false);
            }
            for n in [b.node_a, b.node_b].into_iter().flatten() {
                let node = &graph.nodes[n];
                if node.kind == NodeKind::Endpoint {
                    let [x, y, z] = node.xyz;
                    next.set(x, y, z, false);
                }
            }
            removed = true;
        }
        if !removed {
            return Ok(current);
        }
        current = next;
    }
}

/// Fill per-branch radii: the mean distance-transform value over each
/// branch's polyline voxels.
pub fn branch_radii<T: Real>(
    graph: &mut SkeletonGraph,
    dt: &Volume<T>,
) -> Result<(), GraphError> {
    if dt.dims() != graph.dims {
        return Err(GraphError::GridMismatch(graph.dims, dt.dims()));
    }
    for b in &mut graph.branches {
        let mut sum = 0.0f64;
        for &[x, y, z] in &b.polyline {
            sum += dt.get(x, y, z).to_f64_lossy();
        }
        b.radius_mm = Some(sum / b.polyline.len() as f64);
    }
    Ok(())
}

/// Label volume assigning every foreground mask voxel the id of its nearest
/// branch, background 0.
#[derive(Debug, Clone)]
pub struct BranchAssignment {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
}

impl BranchAssignment {
    pub fn label(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

/// Assign every foreground voxel to the branch of its nearest skeleton voxel
/// (exact Euclidean distance in physical units); ties break toward the
/// smaller branch id.
pub fn assign_voxels(mask: &BinaryMask, graph: &SkeletonGraph) -> Result<BranchAssignment, GraphError> {
    if mask.dims() != graph.dims {
        return Err(GraphError::GridMismatch(graph.dims, mask.dims()));
    }
    let mut sites: Vec<([usize; 3], u32)> = graph.skeleton_voxel_branches();
    if sites.is_empty() {
        if mask.count_foreground() > 0 {
            return Err(GraphError::EmptySkeleton);
        }
        return Ok(BranchAssignment {
            dims: mask.dims(),
            labels: vec![0; mask.len()],
        });
    }
    // Fixed scan order makes the tie rule (smaller branch id wins) cheap.
    sites.sort_unstable_by_key(|&(_, id)| id);
    let spacing = mask.spacing().map(|s| s as f64);

    let labels: Vec<u32> = (0..mask.len())
        .into_par_iter()
        .map(|i| {
            if mask.data()[i] == 0 {
                return 0;
            }
            let p = mask.coords(i);
            let mut best = f64::INFINITY;
            let mut best_id = 0u32;
            for &(s, id) in &sites {
                let dx = (p[0] as f64 - s[0] as f64) * spacing[0];
                let dy = (p[1] as f64 - s[1] as f64) * spacing[1];
                let dz = (p[2] as f64 - s[2] as f64) * spacing[2];
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < best {
                    best = d2;
                    best_id = id;
                }
            }
            best_id
        })
        .collect();
    Ok(BranchAssignment {
        dims: mask.dims(),
        labels,
    })
}
