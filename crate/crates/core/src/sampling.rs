//! Patch extraction for volumetric training sets.
//!
//! Sliding windows tile the ground-truth bounding box (stride grid, final
//! window clamped flush so coverage is complete). Four keep policies:
//!
//! * `sequential` keeps every window,
//! * `drop_a` discards windows whose foreground is majority main-trachea
//!   (the branch with the largest estimated radius),
//! * `drop_b` discards pure-negative windows,
//! * `smart` keeps a window iff its centerline ratio exceeds 15% or its
//!   volume ratio exceeds 10% (both ratios relative to the whole-volume
//!   totals, thresholds strict and configurable).
//!
//! Every window appears in the manifest with its ratios and the keep
//! decision, so the policy can be re-checked from the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rawio::{self, RawIoError};
use crate::scalar::Real;
use crate::skeleton::{
    assign_voxels, branch_radii, build_graph, distance_transform, skeletonize, GraphError,
};
use crate::volume::{bounding_box, BinaryMask, Volume, VolumeError, VoxelBox};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("no masks supplied")]
    EmptyMaskList,
    #[error("patch dims {patch:?} exceed volume dims {volume:?}")]
    PatchLargerThanVolume {
        patch: [usize; 3],
        volume: [usize; 3],
    },
    #[error("stride must be >= 1 and <= patch dims per axis")]
    BadStride,
    #[error("ratio thresholds must lie in (0, 1)")]
    BadThresholds,
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] RawIoError),
}

/// Extraction policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Sequential,
    DropA,
    DropB,
    Smart,
}

/// Window geometry plus keep-policy parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub patch_dims: [usize; 3],
    pub stride: [usize; 3],
    pub centerline_ratio_min: f64,
    pub volume_ratio_min: f64,
}

impl SamplingPlan {
    /// Plan with half-patch stride and the published ratio thresholds.
    pub fn new(mode: SamplingMode, patch_dims: [usize; 3]) -> Self {
        Self {
            mode,
            patch_dims,
            stride: patch_dims.map(|d| (d / 2).max(1)),
            centerline_ratio_min: 0.15,
            volume_ratio_min: 0.10,
        }
    }

    fn validate(&self, volume_dims: [usize; 3]) -> Result<(), SamplingError> {
        for a in 0..3 {
            if self.patch_dims[a] == 0 || self.patch_dims[a] > volume_dims[a] {
                return Err(SamplingError::PatchLargerThanVolume {
                    patch: self.patch_dims,
                    volume: volume_dims,
                });
            }
            if self.stride[a] == 0 || self.stride[a] > self.patch_dims[a] {
                return Err(SamplingError::BadStride);
            }
        }
        let ok = |t: f64| t > 0.0 && t < 1.0;
        if !ok(self.centerline_ratio_min) || !ok(self.volume_ratio_min) {
            return Err(SamplingError::BadThresholds);
        }
        Ok(())
    }
}

/// One evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub case_id: String,
    pub origin: [usize; 3],
    pub dims: [usize; 3],
    pub centerline_ratio: f64,
    pub volume_ratio: f64,
    pub kept: bool,
    pub reason: String,
}

/// Rule for deriving patch dims from ground-truth bounding boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchRule {
    Mean,
    Median,
    Uniform128,
}

/// Derive patch dims from per-case bounding-box extents: mean or median per
/// axis, scaled by one common factor so the largest axis stays within `cap`,
/// then rounded down to a multiple of 8 (min 8). `uniform128` is fixed.
pub fn derive_patch_dims(
    masks: &[BinaryMask],
    rule: PatchRule,
    cap: usize,
) -> Result<[usize; 3], SamplingError> {
    if rule == PatchRule::Uniform128 {
        return Ok([128, 128, 128]);
    }
    if masks.is_empty() {
        return Err(SamplingError::EmptyMaskList);
    }
    let boxes: Vec<VoxelBox> = masks
        .iter()
        .map(bounding_box)
        .collect::<Result<_, _>>()?;
    let mut stat = [0.0f64; 3];
    for a in 0..3 {
        let mut extents: Vec<f64> = boxes.iter().map(|b| b.extents()[a] as f64).collect();
        extents.sort_by(f64::total_cmp);
        stat[a] = match rule {
            PatchRule::Mean => extents.iter().sum::<f64>() / extents.len() as f64,
            PatchRule::Median => {
                let n = extents.len();
                if n % 2 == 1 {
                    extents[n / 2]
                } else {
                    (extents[n / 2 - 1] + extents[n / 2]) / 2.0
                }
            }
            PatchRule::Uniform128 => unreachable!(),
        };
    }
    let max_axis = stat.iter().fold(0.0f64, |m, &v| m.max(v));
    let factor = (cap as f64 / max_axis).min(1.0);
    let mut out = [0usize; 3];
    for a in 0..3 {
        let scaled = stat[a] * factor;
        out[a] = (((scaled / 8.0).floor() as usize) * 8).max(8);
    }
    Ok(out)
}

fn axis_origins(bb_min: usize, bb_max: usize, patch: usize, stride: usize, dim: usize) -> Vec<usize> {
    let start = bb_min.min(dim - patch);
    let mut out = vec![start];
    let mut o = start;
    while o + patch - 1 < bb_max {
        o = (o + stride).min(dim - patch);
        if *out.last().unwrap() == o {
            break; // clamped twice; coverage is complete
        }
        out.push(o);
    }
    out
}

/// Evaluate every window on the stride grid covering the ground-truth
/// bounding box and apply the plan's keep policy. All windows are returned,
/// kept or not, with their ratios.
pub fn extract<T: Real>(
    volume: &Volume<T>,
    mask: &BinaryMask,
    plan: &SamplingPlan,
    case_id: &str,
) -> Result<Vec<PatchSpec>, SamplingError> {
    if volume.dims() != mask.dims() {
        return Err(SamplingError::Volume(VolumeError::GridMismatch(
            volume.dims(),
            mask.dims(),
        )));
    }
    plan.validate(mask.dims())?;
    let bb = bounding_box(mask)?;
    let centerline = skeletonize(mask);

    // drop_a needs the main-trachea label: the branch with the largest mean
    // radius, by the ground truth's own branch assignment.
    let trachea_labels = if plan.mode == SamplingMode::DropA {
        let mut graph = build_graph(&centerline, mask.spacing())?;
        let dt = distance_transform::<f64>(mask);
        branch_radii(&mut graph, &dt)?;
        let trachea = graph
            .branches
            .iter()
            .max_by(|a, b| {
                a.radius_mm
                    .unwrap_or(0.0)
                    .total_cmp(&b.radius_mm.unwrap_or(0.0))
                    .then(b.id.cmp(&a.id))
            })
            .map(|b| b.id);
        let assignment = assign_voxels(mask, &graph)?;
        trachea.map(|id| (assignment, id))
    } else {
        None
    };

    let total_fg = mask.count_foreground() as f64;
    let total_cl = centerline.count_foreground() as f64;
    let dims = mask.dims();
    let [pw, ph, pd] = plan.patch_dims;

    let xs = axis_origins(bb.min[0], bb.max[0], pw, plan.stride[0], dims[0]);
    let ys = axis_origins(bb.min[1], bb.max[1], ph, plan.stride[1], dims[1]);
    let zs = axis_origins(bb.min[2], bb.max[2], pd, plan.stride[2], dims[2]);

    let mut specs = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &oz in &zs {
        for &oy in &ys {
            for &ox in &xs {
                let mut fg = 0u64;
                let mut cl = 0u64;
                let mut trachea_fg = 0u64;
                for z in oz..oz + pd {
                    for y in oy..oy + ph {
                        for x in ox..ox + pw {
                            if mask.get(x, y, z) {
                                fg += 1;
                                if let Some((assignment, id)) = &trachea_labels {
                                    if assignment.label(x, y, z) == *id {
                                        trachea_fg += 1;
                                    }
                                }
                            }
                            if centerline.get(x, y, z) {
                                cl += 1;
                            }
                        }
                    }
                }
                let volume_ratio = if total_fg > 0.0 { fg as f64 / total_fg } else { 0.0 };
                let centerline_ratio = if total_cl > 0.0 { cl as f64 / total_cl } else { 0.0 };

                let (kept, reason) = match plan.mode {
                    SamplingMode::Sequential => (true, "within bounding box".to_string()),
                    SamplingMode::DropA => {
                        if fg > 0 && 2 * trachea_fg > fg {
                            (false, "majority main trachea".to_string())
                        } else {
                            (true, "not majority main trachea".to_string())
                        }
                    }
                    SamplingMode::DropB => {
                        if fg == 0 {
                            (false, "pure negative".to_string())
                        } else {
                            (true, "has foreground".to_string())
                        }
                    }
                    SamplingMode::Smart => {
                        let cl_pass = centerline_ratio > plan.centerline_ratio_min;
                        let vol_pass = volume_ratio > plan.volume_ratio_min;
                        match (cl_pass, vol_pass) {
                            (true, true) => (true, "both ratios above thresholds".to_string()),
                            (true, false) => (true, "centerline ratio above threshold".to_string()),
                            (false, true) => (true, "volume ratio above threshold".to_string()),
                            (false, false) => (false, "below both thresholds".to_string()),
                        }
                    }
                };
                specs.push(PatchSpec {
                    case_id: case_id.to_string(),
                    origin: [ox, oy, oz],
                    dims: plan.patch_dims,
                    centerline_ratio,
                    volume_ratio,
                    kept,
                    reason,
                });
            }
        }
    }
    Ok(specs)
}

/// Manifest document: the plan plus per-case window lists, windows ordered by
/// origin (z, then y, then x — the generation order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: SamplingPlan,
    pub cases: Vec<ManifestCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCase {
    pub id: String,
    pub patches: Vec<PatchSpec>,
}

pub fn build_manifest(plan: &SamplingPlan, specs: &[PatchSpec]) -> Manifest {
    let mut cases: Vec<ManifestCase> = Vec::new();
    for spec in specs {
        match cases.iter_mut().find(|c| c.id == spec.case_id) {
            Some(case) => case.patches.push(spec.clone()),
            None => cases.push(ManifestCase {
                id: spec.case_id.clone(),
                patches: vec![spec.clone()],
            }),
        }
    }
    for case in &mut cases {
        case.patches
            .sort_by_key(|p| (p.origin[2], p.origin[1], p.origin[0]));
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Manifest {
        plan: plan.clone(),
        cases,
    }
}

/// Write the manifest as pretty JSON; byte-identical for identical inputs.
pub fn write_manifest(
    plan: &SamplingPlan,
    specs: &[PatchSpec],
    path: &Path,
) -> Result<(), SamplingError> {
    let manifest = build_manifest(plan, specs);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|source| {
        SamplingError::Io(RawIoError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Write each kept patch as raw+sidecar triples (image, mask, centerline).
/// Returns the data paths written.
pub fn materialize<T: Real>(
    specs: &[PatchSpec],
    volume: &Volume<T>,
    mask: &BinaryMask,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, SamplingError> {
    let centerline = skeletonize(mask);
    let mut written = Vec::new();
    for spec in specs.iter().filter(|s| s.kept) {
        let stem = format!(
            "{}_{:03}_{:03}_{:03}",
            spec.case_id, spec.origin[0], spec.origin[1], spec.origin[2]
        );
        let img = crop_volume(volume, spec.origin, spec.dims);
        let msk = crop_mask(mask, spec.origin, spec.dims);
        let cl = crop_mask(&centerline, spec.origin, spec.dims);

        let img_raw = out_dir.join(format!("{stem}_img.raw"));
        rawio::write_raw_volume(&img, &img_raw, &out_dir.join(format!("{stem}_img.json")))?;
        let msk_raw = out_dir.join(format!("{stem}_mask.raw"));
        rawio::write_raw_mask(&msk, &msk_raw, &out_dir.join(format!("{stem}_mask.json")))?;
        let cl_raw = out_dir.join(format!("{stem}_cl.raw"));
        rawio::write_raw_mask(&cl, &cl_raw, &out_dir.join(format!("{stem}_cl.json")))?;
        written.extend([img_raw, msk_raw, cl_raw]);
    }
    Ok(written)
}

fn crop_volume<T: Real>(volume: &Volume<T>, origin: [usize; 3], dims: [usize; 3]) -> Volume<T> {
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in origin[2]..origin[2] + dims[2] {
        for y in origin[1]..origin[1] + dims[1] {
            for x in origin[0]..origin[0] + dims[0] {
                data.push(volume.get(x, y, z));
            }
        }
    }
    Volume::new(dims, volume.spacing(), data).expect("window stays in bounds")
}

fn crop_mask(mask: &BinaryMask, origin: [usize; 3], dims: [usize; 3]) -> BinaryMask {
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in origin[2]..origin[2] + dims[2] {
        for y in origin[1]..origin[1] + dims[1] {
            for x in origin[0]..origin[0] + dims[0] {
                data.push(mask.get(x, y, z) as u8);
            }
        }
    }
    BinaryMask::new(dims, mask.spacing(), data).expect("window stays in bounds")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, TreeParams};

    fn tree_pair(seed: u64) -> (Volume<f32>, BinaryMask) {
        let tree = generate(&TreeParams::desk(seed)).unwrap();
        let volume = tree.mask.to_volume::<f32>();
        (volume, tree.mask)
    }

    #[test]
    fn uniform128_rule() {
        assert_eq!(
            derive_patch_dims(&[], PatchRule::Uniform128, 160).unwrap(),
            [128, 128, 128]
        );
    }

    #[test]
    fn identical_boxes_pass_through_under_the_cap() {
        // A box of extents (24, 16, 24) in every case, cap far above.
        let mut masks = Vec::new();
        for _ in 0..3 {
            let mut m = BinaryMask::zeros([40, 40, 40], [1.0; 3]).unwrap();
            m.set(2, 2, 2, true);
            m.set(25, 17, 25, true);
            masks.push(m);
        }
        assert_eq!(
            derive_patch_dims(&masks, PatchRule::Mean, 160).unwrap(),
            [24, 16, 24]
        );
        assert_eq!(
            derive_patch_dims(&masks, PatchRule::Median, 160).unwrap(),
            [24, 16, 24]
        );
    }

    #[test]
    fn cap_scales_all_axes_by_a_common_factor() {
        let mut m = BinaryMask::zeros([100, 60, 100], [1.0; 3]).unwrap();
        m.set(0, 0, 0, true);
        m.set(79, 39, 79, true); // extents (80, 40, 80)
        let dims = derive_patch_dims(&[m], PatchRule::Mean, 40).unwrap();
        // factor 0.5: (40, 20, 40), all multiples of 8.
        assert_eq!(dims, [40, 16, 40]);
    }

    #[test]
    fn mean_rule_tracks_extents_within_rounding() {
        let mut masks = Vec::new();
        for (a, b) in [(10, 30), (20, 40), (15, 35)] {
            let mut m = BinaryMask::zeros([60, 60, 60], [1.0; 3]).unwrap();
            m.set(a, a, a, true);
            m.set(b, b, b, true);
            masks.push(m);
        }
        // extents 21, 21, 21 per case; mean 21 -> floor to 16.
        let dims = derive_patch_dims(&masks, PatchRule::Mean, 160).unwrap();
        for a in 0..3 {
            assert!(dims[a] % 8 == 0);
            assert!((dims[a] as f64 - 21.0).abs() <= 8.0);
        }
    }

    #[test]
    fn empty_inputs_error() {
        assert!(matches!(
            derive_patch_dims(&[], PatchRule::Mean, 160),
            Err(SamplingError::EmptyMaskList)
        ));
        let empty = BinaryMask::zeros([4, 4, 4], [1.0; 3]).unwrap();
        assert!(derive_patch_dims(&[empty], PatchRule::Mean, 160).is_err());
    }

    #[test]
    fn smart_keeps_exactly_the_disjunction() {
        let (volume, mask) = tree_pair(3);
        let plan = SamplingPlan::new(SamplingMode::Smart, [24, 24, 24]);
        let specs = extract(&volume, &mask, &plan, "t3").unwrap();
        assert!(!specs.is_empty());
        let centerline = skeletonize(&mask);
        let total_fg = mask.count_foreground() as f64;
        let total_cl = centerline.count_foreground() as f64;
        for s in &specs {
            // Recompute ratios with a triple loop.
            let mut fg = 0u64;
            let mut cl = 0u64;
            for z in s.origin[2]..s.origin[2] + s.dims[2] {
                for y in s.origin[1]..s.origin[1] + s.dims[1] {
                    for x in s.origin[0]..s.origin[0] + s.dims[0] {
                        fg += mask.get(x, y, z) as u64;
                        cl += centerline.get(x, y, z) as u64;
                    }
                }
            }
            let vr = fg as f64 / total_fg;
            let cr = cl as f64 / total_cl;
            assert!((vr - s.volume_ratio).abs() < 1e-12);
            assert!((cr - s.centerline_ratio).abs() < 1e-12);
            let want_keep = cr > plan.centerline_ratio_min || vr > plan.volume_ratio_min;
            assert_eq!(s.kept, want_keep, "window at {:?}", s.origin);
            if !s.kept {
                assert_eq!(s.reason, "below both thresholds");
            }
        }
    }

    #[test]
    fn mask_inside_one_window_keeps_it_with_unit_ratios() {
        let mut mask = BinaryMask::zeros([32, 32, 32], [1.0; 3]).unwrap();
        for z in 10..14 {
            for y in 10..14 {
                for x in 10..14 {
                    mask.set(x, y, z, true);
                }
            }
        }
        let volume = mask.to_volume::<f32>();
        let plan = SamplingPlan::new(SamplingMode::Smart, [16, 16, 16]);
        let specs = extract(&volume, &mask, &plan, "c").unwrap();
        assert_eq!(specs.len(), 1);
        assert!(specs[0].kept);
        assert_eq!(specs[0].volume_ratio, 1.0);
        assert_eq!(specs[0].centerline_ratio, 1.0);
    }

    #[test]
    fn windows_cover_the_bounding_box_and_stay_inside() {
        let (volume, mask) = tree_pair(4);
        let plan = SamplingPlan::new(SamplingMode::Sequential, [20, 20, 20]);
        let specs = extract(&volume, &mask, &plan, "c").unwrap();
        let bb = bounding_box(&mask).unwrap();
        let dims = mask.dims();
        let mut covered = vec![false; dims[0] * dims[1] * dims[2]];
        for s in &specs {
            for a in 0..3 {
                assert!(s.origin[a] + s.dims[a] <= dims[a]);
            }
            for z in s.origin[2]..s.origin[2] + s.dims[2] {
                for y in s.origin[1]..s.origin[1] + s.dims[1] {
                    for x in s.origin[0]..s.origin[0] + s.dims[0] {
                        covered[x + dims[0] * (y + dims[1] * z)] = true;
                    }
                }
            }
        }
        for z in bb.min[2]..=bb.max[2] {
            for y in bb.min[1]..=bb.max[1] {
                for x in bb.min[0]..=bb.max[0] {
                    assert!(covered[x + dims[0] * (y + dims[1] * z)]);
                }
            }
        }
    }

    #[test]
    fn drop_b_keeps_a_superset_of_smart() {
        let (volume, mask) = tree_pair(5);
        let smart = extract(
            &volume,
            &mask,
            &SamplingPlan::new(SamplingMode::Smart, [20, 20, 20]),
            "c",
        )
        .unwrap();
        let drop_b = extract(
            &volume,
            &mask,
            &SamplingPlan::new(SamplingMode::DropB, [20, 20, 20]),
            "c",
        )
        .unwrap();
        for (s, d) in smart.iter().zip(&drop_b) {
            assert_eq!(s.origin, d.origin);
            if s.kept {
                assert!(d.kept, "drop_b discarded a smart-kept window");
            }
        }
    }

    #[test]
    fn drop_a_discards_trachea_dominated_windows() {
        let (volume, mask) = tree_pair(6);
        let plan = SamplingPlan::new(SamplingMode::DropA, [16, 16, 16]);
        let specs = extract(&volume, &mask, &plan, "c").unwrap();
        assert!(specs.iter().any(|s| !s.kept), "some window should be trachea-majority");
        assert!(specs.iter().any(|s| s.kept));
        for s in specs.iter().filter(|s| !s.kept) {
            assert_eq!(s.reason, "majority main trachea");
        }
    }

    #[test]
    fn manifest_round_trips_and_is_deterministic() {
        let (volume, mask) = tree_pair(7);
        let plan = SamplingPlan::new(SamplingMode::Smart, [24, 24, 24]);
        let specs = extract(&volume, &mask, &plan, "c7").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        write_manifest(&plan, &specs, &p1).unwrap();
        write_manifest(&plan, &specs, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        let back: Manifest = serde_json::from_str(&fs::read_to_string(&p1).unwrap()).unwrap();
        assert_eq!(back.cases.len(), 1);
        assert_eq!(back.cases[0].patches, specs_sorted(&specs));
    }

    fn specs_sorted(specs: &[PatchSpec]) -> Vec<PatchSpec> {
        let mut v = specs.to_vec();
        v.sort_by_key(|p| (p.origin[2], p.origin[1], p.origin[0]));
        v
    }

    #[test]
    fn empty_kept_set_still_writes_a_manifest() {
        let plan = SamplingPlan::new(SamplingMode::Smart, [8, 8, 8]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        write_manifest(&plan, &[], &path).unwrap();
        let back: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(back.cases.is_empty());
    }

    #[test]
    fn materialized_patches_equal_source_windows() {
        let (volume, mask) = tree_pair(8);
        let plan = SamplingPlan::new(SamplingMode::Smart, [20, 20, 20]);
        let specs = extract(&volume, &mask, &plan, "c8").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = materialize(&specs, &volume, &mask, dir.path()).unwrap();
        assert!(!written.is_empty());

        let kept: Vec<&PatchSpec> = specs.iter().filter(|s| s.kept).collect();
        let first = kept[0];
        let stem = format!(
            "{}_{:03}_{:03}_{:03}",
            first.case_id, first.origin[0], first.origin[1], first.origin[2]
        );
        let payload = rawio::read_raw_with_sidecar::<f32>(
            &dir.path().join(format!("{stem}_mask.raw")),
            &dir.path().join(format!("{stem}_mask.json")),
        )
        .unwrap();
        let patch_mask = match payload {
            rawio::RawPayload::Mask(m) => m,
            _ => panic!("expected mask"),
        };
        for z in 0..20 {
            for y in 0..20 {
                for x in 0..20 {
                    assert_eq!(
                        patch_mask.get(x, y, z),
                        mask.get(first.origin[0] + x, first.origin[1] + y, first.origin[2] + z)
                    );
                }
            }
        }
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let (volume, mask) = tree_pair(9);
        let plan = SamplingPlan::new(SamplingMode::Smart, [100, 100, 100]);
        assert!(matches!(
            extract(&volume, &mask, &plan, "c"),
            Err(SamplingError::PatchLargerThanVolume { .. })
        ));
    }
}
