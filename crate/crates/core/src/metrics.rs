//! Pixel-level and target-level evaluation: IoU, pixel accuracy, Pd/Fa,
//! the degeneration tracker, and a binarization-threshold sweep.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::region::{connected_components, Connectivity};
use crate::synth::TargetRecord;

/// Per-epoch metric snapshot for one scene.
#[derive(Clone, Debug)]
pub struct MetricRecord {
    pub epoch: usize,
    pub iou: f64,
    pub pa: f64,
    pub pd: f64,
    pub fa: f64,
    pub positive_area: usize,
    pub detected: Vec<bool>,
}

/// Intersection over union; both-empty is defined as perfect agreement (1).
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

/// Pixel accuracy as GT-pixel recall: |label ∩ gt| / |gt|.
pub fn pixel_accuracy(label: &Mask, gt: &Mask) -> Result<f64> {
    let gt_count = gt.count();
    if gt_count == 0 {
        return Err(Error::InvalidArgument("pixel accuracy with empty GT".into()));
    }
    Ok(label.intersection_count(gt) as f64 / gt_count as f64)
}

/// Target-level detection metrics. Predicted 8-connected components are
/// matched one-to-one to GT targets by centroid distance (closest pairs
/// first, up to `match_distance` pixels). Pd is the matched fraction of GT
/// targets; Fa is the pixel count of unmatched predicted components over
/// the frame area.
pub fn pd_fa(pred: &Mask, gt_targets: &[TargetRecord], match_distance: f64) -> PdFa {
    let comps = connected_components(pred, Connectivity::Eight);
    let n_comp = comps.components().len();
    let n_gt = gt_targets.len();

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, comp) in comps.components().iter().enumerate() {
        for (ti, t) in gt_targets.iter().enumerate() {
            let d = ((comp.centroid.0 - t.centroid.0).powi(2)
                + (comp.centroid.1 - t.centroid.1).powi(2))
            .sqrt();
            if d <= match_distance {
                pairs.push((d, ci, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut comp_matched = vec![false; n_comp];
    let mut target_matched = vec![false; n_gt];
    for (_, ci, ti) in pairs {
        if !comp_matched[ci] && !target_matched[ti] {
            comp_matched[ci] = true;
            target_matched[ti] = true;
        }
    }

    let matched = target_matched.iter().filter(|&&m| m).count();
    let false_pixels: usize = comps
        .components()
        .iter()
        .enumerate()
        .filter(|(ci, _)| !comp_matched[*ci])
        .map(|(_, c)| c.area)
        .sum();
    let frame = (pred.height() * pred.width()) as f64;
    PdFa {
        pd: if n_gt == 0 { 1.0 } else { matched as f64 / n_gt as f64 },
        fa: false_pixels as f64 / frame,
        detected: target_matched,
    }
}

#[derive(Clone, Debug)]
pub struct PdFa {
    pub pd: f64,
    pub fa: f64,
    pub detected: Vec<bool>,
}

/// Degeneration statistic: IoU between {p : pred(p) > max(pred)/2} and the
/// GT mask. An all-zero (or non-positive) prediction is flagged degenerate
/// and scores 0.
#[derive(Clone, Copy, Debug)]
pub struct DegenerationIou {
    pub value: f64,
    pub degenerate: bool,
}

pub fn degeneration_iou(pred: &Grid, gt: &Mask) -> DegenerationIou {
    let max = pred.max_value();
    if !(max > 0.0) {
        return DegenerationIou { value: 0.0, degenerate: true };
    }
    let bin = pred.threshold(max / 2.0);
    if !bin.any() {
        return DegenerationIou { value: 0.0, degenerate: true };
    }
    DegenerationIou { value: iou(&bin, gt), degenerate: false }
}

/// Pd/Fa evaluated at each binarization threshold. Thresholds must be
/// sorted ascending.
pub fn threshold_sweep(
    pred: &Grid,
    gt_targets: &[TargetRecord],
    thresholds: &[f64],
    match_distance: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("thresholds must be ascending".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let r = pd_fa(&pred.threshold(tau), gt_targets, match_distance);
            (tau, r.pd, r.fa)
        })
        .collect())
}
