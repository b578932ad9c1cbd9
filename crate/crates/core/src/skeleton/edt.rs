//! Exact Euclidean distance transform, separable lower-envelope algorithm
//! (Felzenszwalb & Huttenlocher, "Distance Transforms of Sampled Functions"),
//! with anisotropic voxel spacing.

use crate::scalar::Real;
use crate::volume::{BinaryMask, Volume};

/// Distance in millimetres from each foreground voxel to the nearest
/// background voxel; background voxels carry 0. Voxels of a volume with no
/// background at all come back as +infinity.
pub fn distance_transform<T: Real>(mask: &BinaryMask) -> Volume<T> {
    let [w, h, d] = mask.dims();
    let spacing = mask.spacing();
    let mut sq: Vec<f64> = mask
        .data()
        .iter()
        .map(|&v| if v == 1 { f64::INFINITY } else { 0.0 })
        .collect();

    // One pass per axis; lines are gathered into a scratch buffer so the 1D
    // transform sees contiguous samples.
    let mut line = vec![0.0f64; w.max(h).max(d)];
    let mut out = vec![0.0f64; w.max(h).max(d)];
    let mut v = vec![0usize; w.max(h).max(d)];
    let mut z = vec![0.0f64; w.max(h).max(d) + 1];

    // X lines.
    for zz in 0..d {
        for yy in 0..h {
            let base = w * (yy + h * zz);
            line[..w].copy_from_slice(&sq[base..base + w]);
            dt1d(&line[..w], &mut out[..w], spacing[0] as f64, &mut v, &mut z);
            sq[base..base + w].copy_from_slice(&out[..w]);
        }
    }
    // Y lines.
    for zz in 0..d {
        for xx in 0..w {
            for yy in 0..h {
                line[yy] = sq[xx + w * (yy + h * zz)];
            }
            dt1d(&line[..h], &mut out[..h], spacing[1] as f64, &mut v, &mut z);
            for yy in 0..h {
                sq[xx + w * (yy + h * zz)] = out[yy];
            }
        }
    }
    // Z lines.
    for yy in 0..h {
        for xx in 0..w {
            for zz in 0..d {
                line[zz] = sq[xx + w * (yy + h * zz)];
            }
            dt1d(&line[..d], &mut out[..d], spacing[2] as f64, &mut v, &mut z);
            for zz in 0..d {
                sq[xx + w * (yy + h * zz)] = out[zz];
            }
        }
    }

    let data = sq
        .into_iter()
        .map(|v| T::from_f64_lossy(v.sqrt()))
        .collect();
    Volume::from_parts_unchecked(mask.dims(), spacing, data)
}

/// 1D squared-distance transform of a sampled function `f` at positions
/// `i * s`. Infinite samples (no site yet on this line) are skipped when
/// building the envelope.
fn dt1d(f: &[f64], out: &mut [f64], s: f64, v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let xq = q as f64 * s;
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let xp = v[k] as f64 * s;
            let intersect = ((f[q] + xq * xq) - (f[v[k]] + xp * xp)) / (2.0 * xq - 2.0 * xp);
            if intersect <= z[k] {
                k -= 1; // z[0] is -inf, so k never underflows
            } else {
                k += 1;
                v[k] = q;
                z[k] = intersect;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !started {
        out[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        let xq = q as f64 * s;
        while z[k + 1] < xq {
            k += 1;
        }
        let dx = xq - v[k] as f64 * s;
        out[q] = dx * dx + f[v[k]];
    }
}
