//! Dense 3D containers: scalar volumes, binary masks, and voxel boxes.
//!
//! Data is stored x-fastest: `index = x + w * (y + h * z)`. Spacing is in
//! millimetres per voxel and kept at `f32`, the precision of the on-disk
//! headers, so geometry round-trips exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// 26-neighbourhood offsets (all nonzero offsets in `{-1,0,1}^3`).
pub const NEIGHBOURS_26: [[i64; 3]; 26] = neighbours_26();

const fn neighbours_26() -> [[i64; 3]; 26] {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1i64;
    while dz <= 1 {
        let mut dy = -1i64;
        while dy <= 1 {
            let mut dx = -1i64;
            while dx <= 1 {
                if dx != 0 || dy != 0 || dz != 0 {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
}

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dims must all be >= 1, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing components must be > 0, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("data length {got} does not match dims {dims:?} (expected {expected})")]
    DataLength {
        dims: [usize; 3],
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("mask value {value} at linear index {index} is not 0 or 1")]
    NonBinary { index: usize, value: u8 },
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("grids differ: {0:?} vs {1:?}")]
    GridMismatch([usize; 3], [usize; 3]),
}

/// Dense scalar grid with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    /// Validating constructor: positive dims/spacing, matching length, finite values.
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                dims,
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Constructor that skips the finite-values scan. Used where infinities
    /// are meaningful outputs (distance fields with no background).
    pub(crate) fn from_parts_unchecked(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        Self {
            dims,
            spacing,
            data,
        }
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: T) -> Result<Self, VolumeError> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Cast the sample type; geometry is untouched.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume::from_parts_unchecked(
            self.dims,
            self.spacing,
            self.data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        )
    }
}

/// Binary mask over the same grid as [`Volume`]; voxels are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                dims,
                expected,
                got: data.len(),
            });
        }
        if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(VolumeError::NonBinary { index: i, value: v });
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f32; 3]) -> Result<Self, VolumeError> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, vec![0u8; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)] == 1
    }

    /// Bounds-checked lookup with signed coordinates; outside is background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0
            || y < 0
            || z < 0
            || x >= self.dims[0] as i64
            || y >= self.dims[1] as i64
            || z >= self.dims[2] as i64
        {
            return false;
        }
        self.get(x as usize, y as usize, z as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, fg: bool) {
        let i = self.index(x, y, z);
        self.data[i] = fg as u8;
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn foreground_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
    }

    pub fn same_grid(&self, other: &BinaryMask) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::GridMismatch(self.dims, other.dims));
        }
        Ok(())
    }

    /// Number of foreground 26-neighbours of `(x, y, z)`.
    pub fn degree26(&self, x: usize, y: usize, z: usize) -> usize {
        let (xi, yi, zi) = (x as i64, y as i64, z as i64);
        NEIGHBOURS_26
            .iter()
            .filter(|d| self.get_signed(xi + d[0], yi + d[1], zi + d[2]))
            .count()
    }

    /// View the mask as a volume of 0.0/1.0 samples.
    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        Volume::from_parts_unchecked(
            self.dims,
            self.spacing,
            self.data
                .iter()
                .map(|&v| if v == 1 { T::one() } else { T::zero() })
                .collect(),
        )
    }
}

/// Inclusive axis-aligned voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl VoxelBox {
    /// Extent along each axis in voxels (inclusive bounds, so `max - min + 1`).
    pub fn extents(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

fn check_geometry(dims: [usize; 3], spacing: [f32; 3]) -> Result<(), VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::BadDims(dims));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(VolumeError::BadSpacing(spacing));
    }
    Ok(())
}

/// Binarize a volume: output voxel is 1 iff the input is strictly above `t`.
pub fn threshold<T: Real>(volume: &Volume<T>, t: T) -> BinaryMask {
    BinaryMask {
        dims: volume.dims,
        spacing: volume.spacing,
        data: volume
            .data
            .iter()
            .map(|&v| if v > t { 1u8 } else { 0u8 })
            .collect(),
    }
}

/// Keep only the largest 26-connected foreground component.
///
/// Ties are broken by the smallest minimum linear voxel index; an empty mask
/// maps to an empty mask.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let components = connected_components_26(mask);
    let mut out = BinaryMask {
        dims: mask.dims,
        spacing: mask.spacing,
        data: vec![0u8; mask.data.len()],
    };
    let best = components
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])));
    if let Some(indices) = best {
        for &i in indices {
            out.data[i] = 1;
        }
    }
    out
}

/// 26-connected foreground components as sorted linear-index lists, ordered
/// by their smallest member.
pub fn connected_components_26(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.data.len()];
    let mut components = Vec::new();
    for start in mask.foreground_indices() {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut members = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            let [x, y, z] = mask.coords(i);
            for d in &NEIGHBOURS_26 {
                let (nx, ny, nz) = (x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]);
                if mask.get_signed(nx, ny, nz) {
                    let ni = mask.index(nx as usize, ny as usize, nz as usize);
                    if !seen[ni] {
                        seen[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// Tightest inclusive box containing all foreground voxels.
pub fn bounding_box(mask: &BinaryMask) -> Result<VoxelBox, VolumeError> {
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for i in mask.foreground_indices() {
        let p = mask.coords(i);
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
        any = true;
    }
    if !any {
        return Err(VolumeError::EmptyMask);
    }
    Ok(VoxelBox { min, max })
}
