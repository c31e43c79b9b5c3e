//! Label-evolution core: per-target candidate extraction, adaptive
//! thresholding, false-alarm elimination, weighted blending, and the
//! trigger/frequency scheduler.
//!
//! Per update, each target region of the current label map is processed in
//! a local crop: prediction pixels above an adaptive threshold become
//! candidates, candidate components not touching the target's own positive
//! pixels are discarded as false alarms, and surviving candidates are
//! averaged into the label. The threshold grows with the label's positive
//! area, which slows and eventually suspends the update.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::loss::LossConfig;
use crate::region::{
    connected_components, crop_neighborhood, paste_back, positive_pixels, Connectivity,
};

#[derive(Clone, Copy, Debug)]
pub struct EvolutionConfig {
    /// Trigger threshold on the (normalized) epoch loss.
    pub t_loss: f64,
    /// Minimum threshold T_b in [0,1).
    pub t_b: f64,
    /// Threshold growth rate k >= 0.
    pub k: f64,
    /// Update period in epochs after the trigger.
    pub f: usize,
    /// Crop size, odd.
    pub d: usize,
    /// Expected target area ratio r.
    pub r: f64,
    pub connectivity: Connectivity,
    /// Epoch losses are multiplied by this before comparison with `t_loss`;
    /// it bridges the mean-reduced loss scale to the trigger scale.
    pub loss_normalizer: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            t_loss: 10.0,
            t_b: 0.5,
            k: 0.5,
            f: 5,
            d: 33,
            r: 0.0015,
            connectivity: Connectivity::Eight,
            loss_normalizer: 2.0e4,
        }
    }
}

/// Adaptive candidate threshold for one target:
/// max(P) * (T_b + k (1 - T_b) * count / (h w r)).
/// The value is not clamped; exceeding max(P) empties the candidate set
/// and suspends the update for this target.
pub fn adaptive_threshold(
    p_patch: &Grid,
    positive_count: usize,
    cfg: &EvolutionConfig,
    frame_h: usize,
    frame_w: usize,
) -> Result<f64> {
    if p_patch.data().is_empty() {
        return Err(Error::InvalidArgument("adaptive threshold of empty patch".into()));
    }
    let hwr = frame_h as f64 * frame_w as f64 * cfg.r;
    Ok(p_patch.max_value() * (cfg.t_b + cfg.k * (1.0 - cfg.t_b) * positive_count as f64 / hwr))
}

/// Candidate pixels: C = P ⊙ (P > T), strict; retained cells keep the raw
/// prediction values.
pub fn extract_candidates(p_patch: &Grid, t_adapt: f64) -> Grid {
    let mut c = p_patch.clone();
    for v in c.data_mut() {
        if !(*v > t_adapt) {
            *v = 0.0;
        }
    }
    c
}

/// Drop candidate components that do not intersect the positive label
/// pixels. Returns the surviving candidates E = C ⊙ F and the keep-mask F.
pub fn eliminate_false_alarms(candidates: &Grid, label_pos: &Mask) -> (Grid, Mask) {
    let cand_mask = candidates.threshold(0.0);
    let comps = connected_components(&cand_mask, Connectivity::Eight);
    let mut keep = Mask::zeros(candidates.height(), candidates.width());
    for comp in comps.components() {
        if comp.pixels.iter().any(|&(y, x)| label_pos.at(y, x)) {
            for &(y, x) in &comp.pixels {
                keep.set(y, x, true);
            }
        }
    }
    let mut e = candidates.clone();
    for (i, v) in e.data_mut().iter_mut().enumerate() {
        if !keep.data()[i] {
            *v = 0.0;
        }
    }
    (e, keep)
}

/// Blend surviving candidates into the label:
/// L' = L ⊙ (1-N) + (L+E)/2 ⊙ N. Where N = 0 the label is bit-identical.
pub fn blend_update(l_patch: &Grid, e: &Grid, n: &Mask) -> Grid {
    let mut out = l_patch.clone();
    for i in 0..out.data().len() {
        if n.data()[i] {
            let v = (l_patch.data()[i] + e.data()[i]) / 2.0;
            debug_assert!((0.0..=1.0).contains(&v));
            out.data_mut()[i] = v;
        }
    }
    out
}

/// Outcome of one target's update within [`evolve_labels`].
#[derive(Clone, Debug)]
pub struct TargetTrace {
    pub target_id: u32,
    pub t_adapt: f64,
    pub pos_before: usize,
    pub pos_after: usize,
    /// Set when the target's positive pixels had vanished and the update
    /// was skipped.
    pub skipped: bool,
}

/// One full label update: for each positive connected region of `label`,
/// crop dxd neighborhoods of label and prediction around its centroid,
/// run the three update steps, and paste the blended patch back. Targets
/// are processed in ascending component id; overlapping crops see earlier
/// pastes.
pub fn evolve_labels(
    label: &Grid,
    pred: &Grid,
    cfg: &EvolutionConfig,
) -> Result<(Grid, Vec<TargetTrace>)> {
    let (h, w) = (label.height(), label.width());
    let initial_pos = positive_pixels(label, 0.5);
    if !initial_pos.any() {
        return Err(Error::LabelLost);
    }
    let comps = connected_components(&initial_pos, cfg.connectivity);

    let mut out = label.clone();
    let mut traces = Vec::new();
    for comp in comps.components() {
        // Re-read this target's positives from the evolving map; an earlier
        // overlapping paste may have changed them.
        let own: Vec<(usize, usize)> = comp
            .pixels
            .iter()
            .copied()
            .filter(|&(y, x)| out.at(y, x) > 0.5)
            .collect();
        if own.is_empty() {
            traces.push(TargetTrace {
                target_id: comp.id,
                t_adapt: f64::NAN,
                pos_before: 0,
                pos_after: 0,
                skipped: true,
            });
            continue;
        }
        let center = crate::region::centroid(&own)?;
        let l_crop = crop_neighborhood(&out, center, cfg.d)?;
        let p_crop = crop_neighborhood(pred, center, cfg.d)?;

        // This target's own positive pixels within the crop; positives of
        // other targets are masked out.
        let mut own_pos = Mask::zeros(cfg.d, cfg.d);
        for &(y, x) in &own {
            let py = y as isize - l_crop.origin.0;
            let px = x as isize - l_crop.origin.1;
            if (0..cfg.d as isize).contains(&py) && (0..cfg.d as isize).contains(&px) {
                own_pos.set(py as usize, px as usize, true);
            }
        }

        let pos_before = own.len();
        let t_adapt = adaptive_threshold(&p_crop.patch, pos_before, cfg, h, w)?;
        let candidates = extract_candidates(&p_crop.patch, t_adapt);
        let (e, keep) = eliminate_false_alarms(&candidates, &own_pos);
        // N = (P > T_adapt) ⊙ F
        let over = p_crop.patch.threshold(t_adapt);
        let mut n = Mask::zeros(cfg.d, cfg.d);
        for i in 0..n.data().len() {
            if over.data()[i] && keep.data()[i] {
                n.set(i / cfg.d, i % cfg.d, true);
            }
        }
        let blended = blend_update(&l_crop.patch, &e, &n);

        // Paste only in-frame cells; out-of-frame crop padding is dropped.
        paste_back(&mut out, &blended, l_crop.origin);

        // Count positives of this target after the update: its original
        // pixels plus any newly positive cells inside the crop.
        let mut after = 0usize;
        let mut counted = Mask::zeros(h, w);
        for &(y, x) in &comp.pixels {
            if out.at(y, x) > 0.5 {
                after += 1;
                counted.set(y, x, true);
            }
        }
        for (py, px) in n.pixels() {
            let y = l_crop.origin.0 + py as isize;
            let x = l_crop.origin.1 + px as isize;
            if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                let (y, x) = (y as usize, x as usize);
                if out.at(y, x) > 0.5 && !counted.at(y, x) {
                    after += 1;
                    counted.set(y, x, true);
                }
            }
        }

        traces.push(TargetTrace {
            target_id: comp.id,
            t_adapt,
            pos_before,
            pos_after: after,
            skipped: false,
        });
    }
    Ok((out, traces))
}

/// Scheduler decision for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    NoUpdate,
    Update,
}

/// Trigger/frequency state: label evolution starts once the (normalized)
/// epoch loss drops below `t_loss`, then repeats every `f` epochs.
#[derive(Clone, Copy, Debug, Default)]
pub struct SchedulerState {
    pub trigger_epoch: Option<usize>,
}

/// Decide whether to update after `epoch` (1-based), given the loss of
/// that epoch already scaled by the configured normalizer.
pub fn evolution_scheduler(
    epoch: usize,
    last_epoch_loss: f64,
    cfg: &EvolutionConfig,
    state: &mut SchedulerState,
) -> Decision {
    match state.trigger_epoch {
        None => {
            if last_epoch_loss < cfg.t_loss {
                state.trigger_epoch = Some(epoch);
                Decision::Update
            } else {
                Decision::NoUpdate
            }
        }
        Some(trigger) => {
            if (epoch - trigger) % cfg.f == 0 {
                Decision::Update
            } else {
                Decision::NoUpdate
            }
        }
    }
}

/// |loss(pred, before) - loss(pred, after)| with identical predictions;
/// the convergence diagnostic logged at each update.
pub fn loss_delta(
    pred: &Grid,
    labels_before: &Grid,
    labels_after: &Grid,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let mask = Mask::filled(pred.height(), pred.width(), true);
    let a = crate::loss::focal_loss_grid(pred, labels_before, loss_cfg, &mask)?;
    let b = crate::loss::focal_loss_grid(pred, labels_after, loss_cfg, &mask)?;
    Ok((a - b).abs())
}

/// Per-update evolution records for a whole run, exportable as CSV.
#[derive(Clone, Debug, Default)]
pub struct EvolutionTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub epoch: usize,
    pub target_id: u32,
    pub t_adapt: f64,
    pub pos_before: usize,
    pub pos_after: usize,
    pub loss_d: f64,
}

impl EvolutionTrace {
    pub fn push_update(&mut self, epoch: usize, targets: &[TargetTrace], loss_d: f64) {
        for t in targets {
            self.records.push(TraceRecord {
                epoch,
                target_id: t.target_id,
                t_adapt: t.t_adapt,
                pos_before: t.pos_before,
                pos_after: t.pos_after,
                loss_d,
            });
        }
    }

    /// loss_d values in update order (one per update epoch).
    pub fn loss_d_series(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut last_epoch = usize::MAX;
        for r in &self.records {
            if r.epoch != last_epoch {
                out.push(r.loss_d);
                last_epoch = r.epoch;
            }
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut s = String::from("epoch,target_id,t_adapt,pos_before,pos_after,loss_d\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.target_id, r.t_adapt, r.pos_before, r.pos_after, r.loss_d
            ));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
