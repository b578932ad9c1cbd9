//! Parametric 3D tubular-tree generator with exact ground truth.
//!
//! Trees are built from straight capsule segments (cylinder plus
//! hemispherical caps) whose count, lengths and radii are known analytically,
//! then rasterized by exact point-to-segment distance. A separation
//! precondition (sibling/non-adjacent capsules at least four voxels apart
//! beyond their radii) defines the regime in which skeleton recovery is
//! unambiguous; the generator redraws angles until it holds. Controlled
//! perturbations (branch deletion, morphology, blobs, gaps) drive the metric
//! sensitivity tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::skeleton::{classify_branch_size, distance_transform};
use crate::volume::BinaryMask;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid tree parameters: {0}")]
    BadParams(&'static str),
    #[error("could not satisfy the separation precondition in {attempts} attempts")]
    SeparationUnsatisfied { attempts: usize },
    #[error("no segment with index {0}")]
    UnknownSegment(usize),
}

/// Generator controls. Lengths, radii and angles are physical (mm, degrees).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeParams {
    /// Generations of segments; 1 is a single straight tube.
    pub depth: u32,
    /// Children spawned at the end of every non-terminal segment.
    pub children: u32,
    /// Uniform segment-length range in mm.
    pub branch_length: (f64, f64),
    /// Radius of the generation-0 segment in mm.
    pub root_radius: f64,
    /// Per-generation radius multiplier in (0, 1].
    pub radius_decay: f64,
    /// Polar branching angle range from the parent direction, degrees.
    pub branching_angle: (f64, f64),
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub seed: u64,
}

impl TreeParams {
    /// Desk-scale depth-3 binary tree (7 segments) that comfortably fits a
    /// 72x72x56 volume at 1mm spacing. Radii and angles are chosen so the
    /// tubes separate quickly at junctions, keeping skeleton recovery within
    /// voxel-step tolerances.
    pub fn desk(seed: u64) -> Self {
        Self {
            depth: 3,
            children: 2,
            branch_length: (9.5, 11.5),
            root_radius: 1.9,
            radius_decay: 0.82,
            branching_angle: (50.0, 65.0),
            dims: [68, 68, 52],
            spacing: [1.0, 1.0, 1.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.depth < 1 {
            return Err(SynthError::BadParams("depth must be >= 1"));
        }
        if self.children < 1 {
            return Err(SynthError::BadParams("children must be >= 1"));
        }
        if !(self.root_radius > 0.0) {
            return Err(SynthError::BadParams("root radius must be > 0"));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay <= 1.0) {
            return Err(SynthError::BadParams("radius decay must be in (0, 1]"));
        }
        if !(self.branch_length.0 > 0.0 && self.branch_length.1 >= self.branch_length.0) {
            return Err(SynthError::BadParams("branch length range is empty"));
        }
        if !(self.branching_angle.0 >= 0.0 && self.branching_angle.1 >= self.branching_angle.0) {
            return Err(SynthError::BadParams("branching angle range is empty"));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return Err(SynthError::BadParams("dims must be at least 8 voxels"));
        }
        Ok(())
    }
}

/// One straight tube of the tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    pub generation: u32,
    pub parent: Option<usize>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        norm(sub(self.end, self.start))
    }

    pub fn direction(&self) -> [f64; 3] {
        scale(sub(self.end, self.start), 1.0 / self.length())
    }
}

/// Generated tree: analytic segments plus the rasterized mask.
#[derive(Debug, Clone)]
pub struct GroundTruthTree {
    pub params: TreeParams,
    pub segments: Vec<Segment>,
    pub mask: BinaryMask,
}

impl GroundTruthTree {
    pub fn branch_count(&self) -> usize {
        self.segments.len()
    }

    pub fn total_length_mm(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Index of the segment with the smallest point-to-axis distance
    /// (ascending scan, so ties go to the smaller index).
    pub fn nearest_segment(&self, p: [f64; 3]) -> usize {
        let mut best = f64::INFINITY;
        let mut idx = 0;
        for (i, s) in self.segments.iter().enumerate() {
            let d = point_segment_distance(p, s.start, s.end);
            if d < best {
                best = d;
                idx = i;
            }
        }
        idx
    }

    /// Physical centre of a voxel.
    pub fn voxel_center(&self, v: [usize; 3]) -> [f64; 3] {
        let s = self.mask.spacing();
        [
            (v[0] as f64 + 0.5) * s[0] as f64,
            (v[1] as f64 + 0.5) * s[1] as f64,
            (v[2] as f64 + 0.5) * s[2] as f64,
        ]
    }
}

/// Deterministic perturbations of a generated tree's mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Perturbation {
    /// Remove exactly the voxels whose nearest segment is this one.
    DeleteBranch(usize),
    /// Morphological erosion by a Euclidean ball of `k` voxels.
    Erode(u32),
    /// Morphological dilation by a Euclidean ball of `k` voxels.
    Dilate(u32),
    /// Paint a solid sphere (voxel units) of false positives.
    AddBlob { center: [usize; 3], radius_vox: f64 },
    /// Zero a window of the given axial length centred mid-segment.
    BreakGap { segment: usize, length_mm: f64 },
}

/// Apply a perturbation, returning the modified prediction mask.
pub fn perturb(tree: &GroundTruthTree, op: &Perturbation) -> Result<BinaryMask, SynthError> {
    let mut out = tree.mask.clone();
    match *op {
        Perturbation::DeleteBranch(id) => {
            if id >= tree.segments.len() {
                return Err(SynthError::UnknownSegment(id));
            }
            for i in 0..out.len() {
                if out.data()[i] == 0 {
                    continue;
                }
                let p = tree.voxel_center(out.coords(i));
                if tree.nearest_segment(p) == id {
                    let [x, y, z] = out.coords(i);
                    out.set(x, y, z, false);
                }
            }
        }
        Perturbation::Erode(k) => {
            if k < 1 {
                return Err(SynthError::BadParams("morphology radius must be >= 1"));
            }
            let unit = BinaryMask::new(out.dims(), [1.0; 3], out.data().to_vec())
                .expect("copy of a valid mask");
            let dt = distance_transform::<f64>(&unit);
            for i in 0..out.len() {
                if out.data()[i] == 1 && dt.data()[i] <= k as f64 {
                    let [x, y, z] = out.coords(i);
                    out.set(x, y, z, false);
                }
            }
        }
        Perturbation::Dilate(k) => {
            if k < 1 {
                return Err(SynthError::BadParams("morphology radius must be >= 1"));
            }
            let inverted: Vec<u8> = out.data().iter().map(|&v| 1 - v).collect();
            let unit = BinaryMask::new(out.dims(), [1.0; 3], inverted).expect("inverted mask");
            let dt = distance_transform::<f64>(&unit);
            for i in 0..out.len() {
                if out.data()[i] == 0 && dt.data()[i] <= k as f64 {
                    let [x, y, z] = out.coords(i);
                    out.set(x, y, z, true);
                }
            }
        }
        Perturbation::AddBlob { center, radius_vox } => {
            let [w, h, d] = out.dims();
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let dx = x as f64 - center[0] as f64;
                        let dy = y as f64 - center[1] as f64;
                        let dz = z as f64 - center[2] as f64;
                        if dx * dx + dy * dy + dz * dz <= radius_vox * radius_vox {
                            out.set(x, y, z, true);
                        }
                    }
                }
            }
        }
        Perturbation::BreakGap { segment, length_mm } => {
            if segment >= tree.segments.len() {
                return Err(SynthError::UnknownSegment(segment));
            }
            let s = &tree.segments[segment];
            let u = s.direction();
            let mid = scale(add(s.start, s.end), 0.5);
            for i in 0..out.len() {
                if out.data()[i] == 0 {
                    continue;
                }
                let p = tree.voxel_center(out.coords(i));
                if tree.nearest_segment(p) != segment {
                    continue;
                }
                let axial = dot(sub(p, mid), u).abs();
                if axial <= length_mm / 2.0 {
                    let [x, y, z] = out.coords(i);
                    out.set(x, y, z, false);
                }
            }
        }
    }
    Ok(out)
}

const MAX_ATTEMPTS: usize = 200;

/// Generate a tree, redrawing angles until the separation precondition and
/// the in-bounds margin hold. Deterministic for fixed params.
pub fn generate(params: &TreeParams) -> Result<GroundTruthTree, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..MAX_ATTEMPTS {
        let segments = draw_segments(params, &mut rng);
        if satisfies_constraints(params, &segments) {
            let mask = rasterize(params, &segments);
            return Ok(GroundTruthTree {
                params: params.clone(),
                segments,
                mask,
            });
        }
    }
    Err(SynthError::SeparationUnsatisfied {
        attempts: MAX_ATTEMPTS,
    })
}

fn draw_segments(params: &TreeParams, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let s = params.spacing.map(|v| v as f64);
    // Rooting at a voxel centre with a small random tilt keeps the trunk off
    // the lattice symmetry planes; an axis exactly between voxel columns
    // rasterizes to an even-width tube with no centre line to thin to.
    let root_start = [
        ((params.dims[0] / 2) as f64 + 0.5) * s[0],
        ((params.dims[1] / 2) as f64 + 0.5) * s[1],
        2.0 * s[2] + params.root_radius + 1.0,
    ];
    let tilt = rng.gen_range(0.06..0.12f64);
    let tilt_azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let trunk_dir = {
        let d = [
            tilt.sin() * tilt_azimuth.cos(),
            tilt.sin() * tilt_azimuth.sin(),
            tilt.cos(),
        ];
        scale(d, 1.0 / norm(d))
    };
    let mut segments: Vec<Segment> = Vec::new();
    let len = rng.gen_range(params.branch_length.0..=params.branch_length.1);
    segments.push(Segment {
        start: root_start,
        end: add(root_start, scale(trunk_dir, len)),
        radius: params.root_radius,
        generation: 0,
        parent: None,
    });

    let mut frontier = vec![0usize];
    for gen in 1..params.depth {
        let mut next = Vec::new();
        for &pi in &frontier {
            let parent = segments[pi].clone();
            let dir = parent.direction();
            let (ortho_a, ortho_b) = orthonormal_pair(dir);
            // Evenly spread azimuths with a common jitter keep siblings apart.
            let azimuth_offset = rng.gen_range(0.0..std::f64::consts::TAU);
            for c in 0..params.children {
                let polar = rng
                    .gen_range(params.branching_angle.0..=params.branching_angle.1)
                    .to_radians();
                let jitter = rng.gen_range(-0.15..0.15);
                let azimuth = azimuth_offset
                    + std::f64::consts::TAU * c as f64 / params.children as f64
                    + jitter;
                let lateral = add(
                    scale(ortho_a, azimuth.cos()),
                    scale(ortho_b, azimuth.sin()),
                );
                let child_dir = add(scale(dir, polar.cos()), scale(lateral, polar.sin()));
                let len = rng.gen_range(params.branch_length.0..=params.branch_length.1);
                let idx = segments.len();
                segments.push(Segment {
                    start: parent.end,
                    end: add(parent.end, scale(child_dir, len)),
                    radius: params.root_radius * params.radius_decay.powi(gen as i32),
                    generation: gen,
                    parent: Some(pi),
                });
                next.push(idx);
            }
        }
        frontier = next;
    }
    segments
}

fn satisfies_constraints(params: &TreeParams, segments: &[Segment]) -> bool {
    let s = params.spacing.map(|v| v as f64);
    let extent = [
        params.dims[0] as f64 * s[0],
        params.dims[1] as f64 * s[1],
        params.dims[2] as f64 * s[2],
    ];
    let max_spacing = s[0].max(s[1]).max(s[2]);

    // Capsules fit with a two-voxel margin.
    for seg in segments {
        for p in [seg.start, seg.end] {
            for a in 0..3 {
                if p[a] - seg.radius < 2.0 * s[a] || p[a] + seg.radius > extent[a] - 2.0 * s[a] {
                    return false;
                }
            }
        }
    }
    // Separation: non-adjacent segment pairs keep their full axes apart;
    // siblings (shared start) keep their distal halves apart.
    for i in 0..segments.len() {
        for j in i + 1..segments.len() {
            let (a, b) = (&segments[i], &segments[j]);
            let required = a.radius + b.radius + 4.0 * max_spacing;
            let adjacent_parent_child = a.end == b.start || b.end == a.start;
            if adjacent_parent_child {
                continue; // tube continuity at a junction is intended
            }
            let siblings = a.start == b.start;
            let d = if siblings {
                let mid_a = scale(add(a.start, a.end), 0.5);
                let mid_b = scale(add(b.start, b.end), 0.5);
                segment_segment_distance(mid_a, a.end, mid_b, b.end)
            } else {
                segment_segment_distance(a.start, a.end, b.start, b.end)
            };
            if d < required {
                return false;
            }
        }
    }
    true
}

fn rasterize(params: &TreeParams, segments: &[Segment]) -> BinaryMask {
    let s = params.spacing.map(|v| v as f64);
    let mut mask = BinaryMask::zeros(params.dims, params.spacing).expect("validated dims");
    for seg in segments {
        // Only voxels inside the capsule's bounding box are probed.
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let min = seg.start[a].min(seg.end[a]) - seg.radius - s[a];
            let max = seg.start[a].max(seg.end[a]) + seg.radius + s[a];
            lo[a] = (min / s[a]).floor().max(0.0) as usize;
            hi[a] = ((max / s[a]).ceil() as usize).min(params.dims[a] - 1);
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let p = [
                        (x as f64 + 0.5) * s[0],
                        (y as f64 + 0.5) * s[1],
                        (z as f64 + 0.5) * s[2],
                    ];
                    if point_segment_distance(p, seg.start, seg.end) <= seg.radius {
                        mask.set(x, y, z, true);
                    }
                }
            }
        }
    }
    mask
}

/// Ground-truth graph in the same JSON schema the skeleton graph serializes
/// to, flagged `"analytic": true`.
pub fn tree_graph_json(tree: &GroundTruthTree) -> serde_json::Value {
    let s = tree.mask.spacing().map(|v| v as f64);
    let dims = tree.mask.dims();
    let to_voxel = |p: [f64; 3]| -> [usize; 3] {
        let mut v = [0usize; 3];
        for a in 0..3 {
            v[a] = ((p[a] / s[a]).floor().max(0.0) as usize).min(dims[a] - 1);
        }
        v
    };

    let mut nodes = Vec::new();
    // Root start is an endpoint; every non-terminal segment end is a
    // junction; every leaf end is an endpoint.
    nodes.push(json!({ "xyz": to_voxel(tree.segments[0].start), "kind": "endpoint" }));
    let has_children: Vec<bool> = {
        let mut v = vec![false; tree.segments.len()];
        for seg in &tree.segments {
            if let Some(p) = seg.parent {
                v[p] = true;
            }
        }
        v
    };
    for (i, seg) in tree.segments.iter().enumerate() {
        nodes.push(json!({
            "xyz": to_voxel(seg.end),
            "kind": if has_children[i] { "junction" } else { "endpoint" },
        }));
    }

    let min_spacing = s[0].min(s[1]).min(s[2]);
    let branches: Vec<serde_json::Value> = tree
        .segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let len = seg.length();
            let steps = (len / (0.5 * min_spacing)).ceil() as usize;
            let mut voxels: Vec<[usize; 3]> = Vec::new();
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let p = add(seg.start, scale(sub(seg.end, seg.start), t));
                let v = to_voxel(p);
                if voxels.last() != Some(&v) {
                    voxels.push(v);
                }
            }
            json!({
                "id": i + 1,
                "voxels": voxels,
                "length_mm": len,
                "radius_mm": seg.radius,
                "size_class": classify_branch_size(seg.radius).expect("positive radius").label(),
            })
        })
        .collect();

    json!({
        "analytic": true,
        "dims": dims,
        "spacing": tree.mask.spacing(),
        "nodes": nodes,
        "branches": branches,
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn orthonormal_pair(dir: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if dir[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let a = {
        let c = cross(dir, helper);
        scale(c, 1.0 / norm(c))
    };
    let b = cross(dir, a);
    (a, b)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Distance from a point to a closed segment.
pub fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return norm(sub(p, a));
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    norm(sub(p, add(a, scale(ab, t))))
}

/// Minimum distance between two closed segments (Ericson, Real-Time
/// Collision Detection, 5.1.9).
fn segment_segment_distance(p1: [f64; 3], q1: [f64; 3], p2: [f64; 3], q2: [f64; 3]) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let (mut s, mut t);
    if a == 0.0 && e == 0.0 {
        return norm(r);
    }
    if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            s = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
        }
    }
    let c1 = add(p1, scale(d1, s));
    let c2 = add(p2, scale(d2, t));
    norm(sub(c1, c2))
}
