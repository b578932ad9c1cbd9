//! Evaluation metrics for tree-structure segmentations: voxel overlap
//! (Jaccard, Dice, precision, leakage and missing ratios), centerline
//! continuity, per-branch detection (detected-branch and detected-length
//! ratios with size-class breakdowns), and the combined
//! continuity-completeness F-score used for model selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{
    assign_voxels, branch_radii, build_graph, classify_branch_size, distance_transform,
    prune_spurs, skeletonize, BranchAssignment, GraphError, SizeClass, SkeletonGraph,
};
use crate::volume::{BinaryMask, VolumeError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground truth has no foreground voxels")]
    EmptyGroundTruth,
    #[error("centerline has no foreground voxels")]
    EmptyCenterline,
    #[error("metric input out of range: {0}")]
    OutOfRange(&'static str),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Voxelwise confusion counts against a binary ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// Ground-truth foreground count (`tp + fn_`).
    pub v_y: u64,
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricsError> {
    pred.same_grid(gt)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(ConfusionCounts {
        tp,
        fp,
        fn_,
        tn,
        v_y: tp + fn_,
    })
}

/// Overlap ratios, stored as fractions; format as percentages at interfaces.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub jaccard: f64,
    pub dice: f64,
    pub precision: f64,
    /// Airway leakage ratio: false positives over ground-truth volume.
    pub alr: f64,
    /// Airway missing ratio: false negatives over ground-truth volume.
    pub amr: f64,
}

pub fn overlap_metrics(c: &ConfusionCounts) -> Result<OverlapMetrics, MetricsError> {
    if c.v_y == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = if c.tp + c.fp == 0 {
        // No predicted foreground at all: nothing leaked.
        1.0
    } else {
        tp / (tp + fp)
    };
    Ok(OverlapMetrics {
        jaccard: tp / (tp + fp + fn_),
        dice: 2.0 * tp / (2.0 * tp + fp + fn_),
        precision,
        alr: fp / c.v_y as f64,
        amr: fn_ / c.v_y as f64,
    })
}

/// Fraction of ground-truth centerline voxels covered by the prediction.
pub fn continuity_index(pred: &BinaryMask, gt_centerline: &BinaryMask) -> Result<f64, MetricsError> {
    pred.same_grid(gt_centerline)?;
    let total = gt_centerline.count_foreground();
    if total == 0 {
        return Err(MetricsError::EmptyCenterline);
    }
    let covered = gt_centerline
        .foreground_indices()
        .filter(|&i| pred.data()[i] == 1)
        .count();
    Ok(covered as f64 / total as f64)
}

/// Continuity/completeness F-score with preference `omega`:
/// `(1 + w^2) * J * C / (w^2 * J + C)`; 0 when both inputs are 0.
pub fn ccf_score(jaccard: f64, continuity: f64, omega: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&jaccard) || !jaccard.is_finite() {
        return Err(MetricsError::OutOfRange("jaccard must be in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&continuity) || !continuity.is_finite() {
        return Err(MetricsError::OutOfRange("continuity must be in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&omega) || !omega.is_finite() {
        return Err(MetricsError::OutOfRange("omega must be in [0, 1]"));
    }
    if jaccard == 0.0 && continuity == 0.0 {
        return Ok(0.0);
    }
    let w2 = omega * omega;
    Ok((1.0 + w2) * jaccard * continuity / (w2 * jaccard + continuity))
}

/// Per-branch detection outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchRecord {
    pub id: u32,
    pub size_class: Option<SizeClass>,
    pub length_mm: f64,
    /// Fraction of the branch's ground-truth voxel region covered by the
    /// prediction.
    pub coverage: f64,
    pub detected: bool,
}

/// Detection summary over all ground-truth branches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchDetectionReport {
    pub branches: Vec<BranchRecord>,
    pub n_detected: usize,
    pub n_total: usize,
    pub detected_length_mm: f64,
    pub total_length_mm: f64,
    /// Detected-branch ratio `N_X / N_Y`, fraction.
    pub dbr: f64,
    /// Detected-length ratio `L_X / L_Y`, fraction.
    pub dlr: f64,
    /// Secondary variant: fraction of ground-truth centerline voxels covered
    /// by the prediction, length-weighted by voxel steps. Reported alongside
    /// the branch-granular `dlr` for comparison.
    pub centerline_coverage: f64,
}

/// Score branch detection: branch coverage is measured over each branch's
/// assigned ground-truth voxel region, and a branch counts as detected only
/// when coverage is strictly above `threshold`.
pub fn branch_detection(
    pred: &BinaryMask,
    gt_graph: &SkeletonGraph,
    assignment: &BranchAssignment,
    threshold: f64,
) -> Result<BranchDetectionReport, MetricsError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MetricsError::OutOfRange("threshold must be in (0, 1]"));
    }
    if assignment.dims != pred.dims() {
        return Err(MetricsError::Graph(GraphError::GridMismatch(
            assignment.dims,
            pred.dims(),
        )));
    }
    let n_branches = gt_graph.branches.len();
    let mut region = vec![0u64; n_branches + 1];
    let mut covered = vec![0u64; n_branches + 1];
    for i in 0..pred.len() {
        let label = assignment.labels[i] as usize;
        if label == 0 {
            continue;
        }
        region[label] += 1;
        if pred.data()[i] == 1 {
            covered[label] += 1;
        }
    }

    let mut branches = Vec::with_capacity(n_branches);
    let mut n_detected = 0usize;
    let mut detected_length = 0.0f64;
    let mut total_length = 0.0f64;
    for b in &gt_graph.branches {
        let id = b.id as usize;
        let coverage = if region[id] == 0 {
            0.0
        } else {
            covered[id] as f64 / region[id] as f64
        };
        let detected = coverage > threshold;
        if detected {
            n_detected += 1;
            detected_length += b.length_mm;
        }
        total_length += b.length_mm;
        branches.push(BranchRecord {
            id: b.id,
            size_class: b.radius_mm.and_then(|r| classify_branch_size(r).ok()),
            length_mm: b.length_mm,
            coverage,
            detected,
        });
    }

    // Centerline-coverage variant: covered skeleton voxels over all skeleton
    // voxels (tool diagnostic, branch-granularity dlr is the primary figure).
    let skel_sites = gt_graph.skeleton_voxel_branches();
    let covered_sites = skel_sites
        .iter()
        .filter(|&&([x, y, z], _)| pred.get(x, y, z))
        .count();
    let centerline_coverage = if skel_sites.is_empty() {
        0.0
    } else {
        covered_sites as f64 / skel_sites.len() as f64
    };

    Ok(BranchDetectionReport {
        n_detected,
        n_total: n_branches,
        detected_length_mm: detected_length,
        total_length_mm: total_length,
        dbr: if n_branches == 0 {
            0.0
        } else {
            n_detected as f64 / n_branches as f64
        },
        dlr: if total_length == 0.0 {
            0.0
        } else {
            detected_length / total_length
        },
        centerline_coverage,
        branches,
    })
}

/// Detection rate per size class; classes with no branches get `None`.
pub fn size_class_detection(report: &BranchDetectionReport) -> BTreeMap<&'static str, Option<f64>> {
    let mut totals: BTreeMap<SizeClass, (usize, usize)> = BTreeMap::new();
    for b in &report.branches {
        if let Some(class) = b.size_class {
            let e = totals.entry(class).or_insert((0, 0));
            e.0 += 1;
            if b.detected {
                e.1 += 1;
            }
        }
    }
    let mut out = BTreeMap::new();
    for class in SizeClass::ALL {
        out.insert(
            class.label(),
            totals
                .get(&class)
                .map(|&(total, detected)| detected as f64 / total as f64),
        );
    }
    out
}

impl std::cmp::PartialOrd for SizeClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::cmp::Ord for SizeClass {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let rank = |c: &SizeClass| match c {
            SizeClass::TB => 0,
            SizeClass::SB => 1,
            SizeClass::MB => 2,
            SizeClass::LB => 3,
        };
        rank(self).cmp(&rank(other))
    }
}

/// Evaluation controls: CCF preference and branch-detection threshold, plus
/// optional spur pruning of the ground-truth skeleton.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CcfConfig {
    pub omega: f64,
    pub detection_threshold: f64,
    pub prune_spurs_mm: Option<f64>,
}

impl Default for CcfConfig {
    fn default() -> Self {
        Self {
            omega: 0.9,
            detection_threshold: 0.8,
            prune_spurs_mm: None,
        }
    }
}

/// Full metric report for one prediction / ground-truth pair. Ratios are
/// fractions; the CSV/JSON interfaces scale the ratio metrics to percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: String,
    pub jaccard: f64,
    pub dice: f64,
    pub precision: f64,
    pub dlr: f64,
    pub dbr: f64,
    pub alr: f64,
    pub amr: f64,
    pub continuity: f64,
    pub ccf: f64,
    pub size_class_rates: BTreeMap<String, Option<f64>>,
    pub counts: ConfusionCounts,
    pub branch_report: BranchDetectionReport,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "case_id,jaccard,dice,precision,dlr,dbr,alr,amr,continuity,ccf,tb_rate,sb_rate,mb_rate,lb_rate";

    /// One CSV row in the fixed column order; percent metrics scaled by 100,
    /// absent size classes rendered as `n/a`.
    pub fn csv_row(&self) -> String {
        let pct = |v: f64| format!("{:.4}", v * 100.0);
        let class = |label: &str| match self.size_class_rates.get(label) {
            Some(Some(v)) => pct(*v),
            _ => "n/a".to_string(),
        };
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{},{:.6},{:.6},{},{},{},{}",
            self.case_id,
            self.jaccard,
            self.dice,
            self.precision,
            pct(self.dlr),
            pct(self.dbr),
            pct(self.alr),
            pct(self.amr),
            self.continuity,
            self.ccf,
            class("TB"),
            class("SB"),
            class("MB"),
            class("LB"),
        )
    }
}

/// Run the whole evaluation pipeline: skeletonize the ground truth, build and
/// measure its branch graph, assign voxels to branches, then compute every
/// metric.
pub fn evaluate(
    pred: &BinaryMask,
    gt: &BinaryMask,
    config: &CcfConfig,
) -> Result<MetricsReport, MetricsError> {
    pred.same_grid(gt)?;
    if gt.count_foreground() == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }

    let mut centerline = skeletonize(gt);
    if let Some(min_len) = config.prune_spurs_mm {
        centerline = prune_spurs(&centerline, min_len, gt.spacing())?;
    }
    let mut graph = build_graph(&centerline, gt.spacing())?;
    let dt = distance_transform::<f64>(gt);
    branch_radii(&mut graph, &dt)?;
    let assignment = assign_voxels(gt, &graph)?;

    let counts = confusion(pred, gt)?;
    let overlap = overlap_metrics(&counts)?;
    let continuity = continuity_index(pred, &centerline)?;
    let branch_report = branch_detection(pred, &graph, &assignment, config.detection_threshold)?;
    let ccf = ccf_score(overlap.jaccard, continuity, config.omega)?;
    let size_class_rates = size_class_detection(&branch_report)
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

    Ok(MetricsReport {
        case_id: "case".to_string(),
        jaccard: overlap.jaccard,
        dice: overlap.dice,
        precision: overlap.precision,
        dlr: branch_report.dlr,
        dbr: branch_report.dbr,
        alr: overlap.alr,
        amr: overlap.amr,
        continuity,
        ccf,
        size_class_rates,
        counts,
        branch_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, perturb, Perturbation, TreeParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], p: f64) -> BinaryMask {
        let n = dims[0] * dims[1] * dims[2];
        BinaryMask::new(dims, [1.0; 3], (0..n).map(|_| rng.gen_bool(p) as u8).collect()).unwrap()
    }

    #[test]
    fn confusion_identity_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_mask(&mut rng, [4, 4, 4], 0.4);
        let c = confusion(&gt, &gt).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fn_, 0);
        assert_eq!(c.tp, gt.count_foreground() as u64);

        let inverted = BinaryMask::new(
            gt.dims(),
            gt.spacing(),
            gt.data().iter().map(|&v| 1 - v).collect(),
        )
        .unwrap();
        let c = confusion(&inverted, &gt).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.fp, 64 - gt.count_foreground() as u64);
    }

    #[test]
    fn confusion_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = random_mask(&mut rng, [4, 4, 4], 0.5);
        let gt = random_mask(&mut rng, [4, 4, 4], 0.4);
        let c = confusion(&pred, &gt).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0, 0, 0);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    match (pred.get(x, y, z), gt.get(x, y, z)) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => tn += 1,
                    }
                }
            }
        }
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
    }

    #[test]
    fn overlap_plugin_values() {
        let c = ConfusionCounts {
            tp: 9,
            fp: 1,
            fn_: 1,
            tn: 53,
            v_y: 10,
        };
        let m = overlap_metrics(&c).unwrap();
        assert!((m.jaccard - 9.0 / 11.0).abs() < 1e-15);
        assert!((m.dice - 0.9).abs() < 1e-15);
        assert!((m.precision - 0.9).abs() < 1e-15);
        assert!((m.alr - 0.1).abs() < 1e-15);
        assert!((m.amr - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dice_jaccard_identity_and_amr_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pred = random_mask(&mut rng, [4, 4, 4], 0.5);
            let gt = random_mask(&mut rng, [4, 4, 4], 0.5);
            let c = confusion(&pred, &gt).unwrap();
            if c.v_y == 0 {
                continue;
            }
            let m = overlap_metrics(&c).unwrap();
            assert!((m.dice - 2.0 * m.jaccard / (1.0 + m.jaccard)).abs() <= 1e-12);
            assert!((m.amr - (1.0 - c.tp as f64 / c.v_y as f64)).abs() <= 1e-12);
            if c.tp + c.fp > 0 {
                let tp_ratio = c.tp as f64 / c.v_y as f64;
                assert!((m.precision - tp_ratio / (tp_ratio + m.alr)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_prediction_has_unit_precision_by_convention() {
        let mut gt = BinaryMask::zeros([3, 3, 3], [1.0; 3]).unwrap();
        gt.set(1, 1, 1, true);
        let pred = BinaryMask::zeros([3, 3, 3], [1.0; 3]).unwrap();
        let m = overlap_metrics(&confusion(&pred, &gt).unwrap()).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.jaccard, 0.0);
    }

    #[test]
    fn continuity_ratio_and_errors() {
        let mut cl = BinaryMask::zeros([12, 3, 3], [1.0; 3]).unwrap();
        for x in 0..10 {
            cl.set(x, 1, 1, true);
        }
        let mut pred = BinaryMask::zeros([12, 3, 3], [1.0; 3]).unwrap();
        for x in 0..7 {
            pred.set(x, 1, 1, true);
        }
        assert!((continuity_index(&pred, &cl).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(continuity_index(&cl, &cl).unwrap(), 1.0);

        let empty = BinaryMask::zeros([12, 3, 3], [1.0; 3]).unwrap();
        assert!(matches!(
            continuity_index(&pred, &empty),
            Err(MetricsError::EmptyCenterline)
        ));
    }

    #[test]
    fn ccf_identities() {
        for omega in [0.0, 0.5, 0.9, 1.0] {
            for k in 1..=10 {
                let v = k as f64 / 10.0;
                assert!((ccf_score(v, v, omega).unwrap() - v).abs() <= 1e-12);
            }
        }
        // omega = 1 reduces to the harmonic mean.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let j: f64 = rng.gen_range(0.01..1.0);
            let c: f64 = rng.gen_range(0.01..1.0);
            let want = 2.0 * j * c / (j + c);
            assert!((ccf_score(j, c, 1.0).unwrap() - want).abs() <= 1e-12);
        }
        assert_eq!(ccf_score(0.0, 0.0, 0.9).unwrap(), 0.0);
        assert!(ccf_score(1.2, 0.5, 0.9).is_err());
        assert!(ccf_score(0.5, 0.5, 1.5).is_err());
    }

    #[test]
    fn ccf_is_strictly_increasing_in_both_arguments() {
        let omega = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let j: f64 = rng.gen_range(0.05..0.95);
            let c: f64 = rng.gen_range(0.05..0.95);
            let base = ccf_score(j, c, omega).unwrap();
            assert!(ccf_score(j + 0.02, c, omega).unwrap() > base);
            assert!(ccf_score(j, c + 0.02, omega).unwrap() > base);
        }
    }

    #[test]
    fn perfect_prediction_reports_perfect_values() {
        let tree = generate(&TreeParams::desk(2)).unwrap();
        let report = evaluate(&tree.mask, &tree.mask, &CcfConfig::default()).unwrap();
        assert_eq!(report.jaccard, 1.0);
        assert_eq!(report.dice, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.continuity, 1.0);
        assert_eq!(report.ccf, 1.0);
        assert_eq!(report.dbr, 1.0);
        assert_eq!(report.dlr, 1.0);
        assert_eq!(report.alr, 0.0);
        assert_eq!(report.amr, 0.0);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let tree = generate(&TreeParams::desk(6)).unwrap();
        let pred = perturb(&tree, &Perturbation::Erode(1)).unwrap();
        let a = evaluate(&pred, &tree.mask, &CcfConfig::default()).unwrap();
        let b = evaluate(&pred, &tree.mask, &CcfConfig::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn deleting_branches_moves_dbr_and_dlr_down_only() {
        let tree = generate(&TreeParams::desk(8)).unwrap();
        let cfg = CcfConfig::default();
        let full = evaluate(&tree.mask, &tree.mask, &cfg).unwrap();
        let one = perturb(&tree, &Perturbation::DeleteBranch(6)).unwrap();
        let r1 = evaluate(&one, &tree.mask, &cfg).unwrap();
        assert!(r1.dbr < full.dbr);
        assert!(r1.dlr < full.dlr);
        assert!((r1.dbr - 6.0 / 7.0).abs() < 1e-12);

        // Erasing coverage of a second branch never increases either ratio.
        let tree2 = GroundTruthTreeHelper(&tree);
        let two = tree2.delete_two(5, 6);
        let r2 = evaluate(&two, &tree.mask, &cfg).unwrap();
        assert!(r2.dbr <= r1.dbr);
        assert!(r2.dlr <= r1.dlr);
        assert!((r2.dbr - 5.0 / 7.0).abs() < 1e-12);
    }

    struct GroundTruthTreeHelper<'a>(&'a crate::synth::GroundTruthTree);

    impl GroundTruthTreeHelper<'_> {
        fn delete_two(&self, a: usize, b: usize) -> BinaryMask {
            let first = perturb(self.0, &Perturbation::DeleteBranch(a)).unwrap();
            let second = perturb(self.0, &Perturbation::DeleteBranch(b)).unwrap();
            let data = first
                .data()
                .iter()
                .zip(second.data())
                .map(|(&x, &y)| x & y)
                .collect();
            BinaryMask::new(first.dims(), first.spacing(), data).unwrap()
        }
    }

    #[test]
    fn size_classes_report_na_when_absent() {
        let report = BranchDetectionReport {
            branches: vec![
                BranchRecord {
                    id: 1,
                    size_class: Some(SizeClass::TB),
                    length_mm: 5.0,
                    coverage: 1.0,
                    detected: true,
                },
                BranchRecord {
                    id: 2,
                    size_class: Some(SizeClass::SB),
                    length_mm: 7.0,
                    coverage: 0.5,
                    detected: false,
                },
            ],
            n_detected: 1,
            n_total: 2,
            detected_length_mm: 5.0,
            total_length_mm: 12.0,
            dbr: 0.5,
            dlr: 5.0 / 12.0,
            centerline_coverage: 0.8,
        };
        let rates = size_class_detection(&report);
        assert_eq!(rates["TB"], Some(1.0));
        assert_eq!(rates["SB"], Some(0.0));
        assert_eq!(rates["MB"], None);
        assert_eq!(rates["LB"], None);
    }

    #[test]
    fn coverage_exactly_at_threshold_is_not_detected() {
        // Hunt for a branch whose region size is a multiple of 5 so a
        // prediction can cover exactly 80% of it.
        for seed in 0..10u64 {
            let tree = generate(&TreeParams::desk(seed)).unwrap();
            let centerline = skeletonize(&tree.mask);
            let mut graph = build_graph(&centerline, tree.mask.spacing()).unwrap();
            let dt = distance_transform::<f64>(&tree.mask);
            branch_radii(&mut graph, &dt).unwrap();
            let assignment = assign_voxels(&tree.mask, &graph).unwrap();

            for target in 1..=graph.branches.len() as u32 {
                let region: Vec<usize> = (0..tree.mask.len())
                    .filter(|&i| assignment.labels[i] == target)
                    .collect();
                if region.is_empty() || region.len() % 5 != 0 {
                    continue;
                }
                let keep = region.len() * 4 / 5;
                let mut pred = tree.mask.clone();
                for &i in region.iter().skip(keep) {
                    let [x, y, z] = pred.coords(i);
                    pred.set(x, y, z, false);
                }
                let report = branch_detection(&pred, &graph, &assignment, 0.8).unwrap();
                let rec = report.branches.iter().find(|b| b.id == target).unwrap();
                assert!((rec.coverage - 0.8).abs() < 1e-12);
                assert!(!rec.detected, "coverage exactly at threshold must not count");

                // One voxel more tips it strictly above the threshold.
                let mut pred2 = tree.mask.clone();
                for &i in region.iter().skip(keep + 1) {
                    let [x, y, z] = pred2.coords(i);
                    pred2.set(x, y, z, false);
                }
                let report2 = branch_detection(&pred2, &graph, &assignment, 0.8).unwrap();
                let rec2 = report2.branches.iter().find(|b| b.id == target).unwrap();
                assert!(rec2.coverage > 0.8);
                assert!(rec2.detected);
                return;
            }
        }
        panic!("no branch with a region size divisible by 5 in 10 seeds");
    }

    #[test]
    fn csv_row_has_fixed_columns() {
        let tree = generate(&TreeParams::desk(2)).unwrap();
        let mut report = evaluate(&tree.mask, &tree.mask, &CcfConfig::default()).unwrap();
        report.case_id = "t2".into();
        let row = report.csv_row();
        assert_eq!(row.split(',').count(), 14);
        assert!(row.starts_with("t2,1.000000,1.000000,1.000000,100.0000,100.0000,0.0000,0.0000,"));
        assert_eq!(MetricsReport::CSV_HEADER.split(',').count(), 14);
    }
}
