//! Topology-preserving 3D thinning (medial-axis variant of Lee, Kashyap &
//! Chu, "Building skeleton models via 3-D medial surface/axis thinning
//! algorithms", CVGIP 1994).
//!
//! Each iteration visits the six border directions in a fixed order. Border
//! points that are not endpoints, whose removal keeps the local Euler
//! characteristic unchanged, and whose foreground neighbours stay
//! 26-connected are collected, then re-checked and deleted sequentially in
//! ascending linear-index order so earlier deletions are visible to later
//! checks. Iteration stops when a full sweep deletes nothing.

use crate::volume::BinaryMask;

/// Sub-pass order: up, down, north, south, east, west. A point is a border
/// point of a direction when its neighbour in that direction is background.
const BORDER_DIRS: [[i64; 3]; 6] = [
    [0, 0, 1],  // U
    [0, 0, -1], // D
    [0, -1, 0], // N
    [0, 1, 0],  // S
    [1, 0, 0],  // E
    [-1, 0, 0], // W
];

/// Iteratively thin a mask to its curve skeleton. Endpoints (voxels with
/// exactly one 26-neighbour) are never deleted, so arcs keep their length;
/// the output is a subset of the input and has the same number of
/// 26-connected components and the same Euler characteristic.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut img = mask.clone();
    let mut candidates: Vec<usize> = Vec::new();
    loop {
        let mut deleted_any = false;
        for dir in &BORDER_DIRS {
            candidates.clear();
            for i in img.foreground_indices() {
                let [x, y, z] = img.coords(i);
                let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                if img.get_signed(xi + dir[0], yi + dir[1], zi + dir[2]) {
                    continue; // not a border point of this direction
                }
                let patch = neighbourhood(&img, xi, yi, zi);
                if !deletable(&patch) {
                    continue;
                }
                candidates.push(i);
            }
            // Sequential re-check in ascending linear-index order.
            for &i in &candidates {
                let [x, y, z] = img.coords(i);
                let patch = neighbourhood(&img, x as i64, y as i64, z as i64);
                if deletable(&patch) {
                    img.set(x, y, z, false);
                    deleted_any = true;
                }
            }
        }
        if !deleted_any {
            break;
        }
    }
    img
}

/// True when the mask contains a fully-foreground 2x2x2 block, i.e. is not
/// thin.
pub fn has_solid_2x2x2_block(mask: &BinaryMask) -> bool {
    let [w, h, d] = mask.dims();
    if w < 2 || h < 2 || d < 2 {
        return false;
    }
    for z in 0..d - 1 {
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let solid = (0..8).all(|k| {
                    mask.get(x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1))
                });
                if solid {
                    return true;
                }
            }
        }
    }
    false
}

/// 3x3x3 foreground patch around a voxel; index `(dz+1)*9 + (dy+1)*3 + (dx+1)`,
/// centre at 13, outside-of-volume treated as background.
fn neighbourhood(mask: &BinaryMask, x: i64, y: i64, z: i64) -> [bool; 27] {
    let mut p = [false; 27];
    let mut i = 0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                p[i] = mask.get_signed(x + dx, y + dy, z + dz);
                i += 1;
            }
        }
    }
    p
}

fn neighbour_count(patch: &[bool; 27]) -> usize {
    patch.iter().filter(|&&v| v).count() - 1 // centre is foreground
}

/// All deletability conditions: border status is checked by the caller.
fn deletable(patch: &[bool; 27]) -> bool {
    let n = neighbour_count(patch);
    if n <= 1 {
        // Isolated points and endpoints are preserved.
        return false;
    }
    euler_delta(patch) == 0 && is_simple(patch)
}

/// Change of the Euler characteristic of the union-of-cubes complex when the
/// centre voxel is removed: a cell of the centre cube vanishes iff no other
/// foreground cube shares it, and contributes (-1)^dim.
fn euler_delta(patch: &[bool; 27]) -> i32 {
    let fg = |dx: i64, dy: i64, dz: i64| -> bool {
        patch[((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize]
    };
    let mut delta = 0i32;

    // 8 vertices: corner (cx, cy, cz) in {0,1}^3 is shared by the seven
    // other cubes with offsets in {c-1, c} per axis.
    for cz in 0..2i64 {
        for cy in 0..2i64 {
            for cx in 0..2i64 {
                let mut shared = false;
                'probe: for dz in (cz - 1)..=cz {
                    for dy in (cy - 1)..=cy {
                        for dx in (cx - 1)..=cx {
                            if (dx, dy, dz) != (0, 0, 0) && fg(dx, dy, dz) {
                                shared = true;
                                break 'probe;
                            }
                        }
                    }
                }
                if !shared {
                    delta += 1;
                }
            }
        }
    }
    // 12 edges: an edge along `axis` at corner coords (ca, cb) on the other
    // two axes is shared by three other cubes (offset 0 along the edge axis).
    for axis in 0..3usize {
        for ca in 0..2i64 {
            for cb in 0..2i64 {
                let mut shared = false;
                'probe_e: for da in (ca - 1)..=ca {
                    for db in (cb - 1)..=cb {
                        if (da, db) == (0, 0) {
                            continue;
                        }
                        let (dx, dy, dz) = match axis {
                            0 => (0, da, db),
                            1 => (da, 0, db),
                            _ => (da, db, 0),
                        };
                        if fg(dx, dy, dz) {
                            shared = true;
                            break 'probe_e;
                        }
                    }
                }
                if !shared {
                    delta -= 1;
                }
            }
        }
    }
    // 6 faces: shared only by the face neighbour.
    for (dx, dy, dz) in [
        (1, 0, 0),
        (-1, 0, 0),
        (0, 1, 0),
        (0, -1, 0),
        (0, 0, 1),
        (0, 0, -1),
    ] {
        if !fg(dx, dy, dz) {
            delta += 1;
        }
    }
    // The centre cube itself always vanishes.
    delta -= 1;
    delta
}

/// Connectivity condition: the foreground 26-neighbours (centre excluded)
/// form exactly one 26-connected component, so removal cannot split or merge
/// anything locally.
fn is_simple(patch: &[bool; 27]) -> bool {
    let mut seen = [false; 27];
    let mut components = 0;
    for start in 0..27 {
        if start == 13 || !patch[start] || seen[start] {
            continue;
        }
        components += 1;
        if components > 1 {
            return false;
        }
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (iz, iy, ix) = ((i / 9) as i64, ((i / 3) % 3) as i64, (i % 3) as i64);
            for j in 0..27 {
                if j == 13 || !patch[j] || seen[j] {
                    continue;
                }
                let (jz, jy, jx) = ((j / 9) as i64, ((j / 3) % 3) as i64, (j % 3) as i64);
                if (ix - jx).abs() <= 1 && (iy - jy).abs() <= 1 && (iz - jz).abs() <= 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components == 1
}
