//! Experiment orchestration: scene generation, the train–evolve loop,
//! sweeps, the fixed-pseudo-label baseline, and artifact emission.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointseg::adam::{AdamConfig, AdamState};
use pointseg::evolve::{
    evolution_scheduler, evolve_labels, loss_delta, Decision, EvolutionTrace, SchedulerState,
};
use pointseg::grid::{Grid, Mask};
use pointseg::loss::{background_loss_mask, BackgroundMode};
use pointseg::metrics::{degeneration_iou, iou, pd_fa, pixel_accuracy, MetricRecord};
use pointseg::region::connected_components;
use pointseg::synth::{
    compose_scene, gaussian_target, scene_point_labels, write_pgm16, Placement, Scene, SceneSpec,
};
use pointseg::train::{scheduled_lr, train_epoch, TrainItem};
use pointseg::unet::build_network;
use pointseg::{Error, Result};

use crate::config::ExperimentConfig;

/// Centroid-distance threshold for target-level matching, in pixels.
pub const MATCH_DISTANCE: f64 = 3.0;

/// One sample of the prediction-based degeneration tracker.
#[derive(Clone, Copy, Debug)]
pub struct DegenPoint {
    pub epoch: usize,
    pub iou: f64,
    /// Pixels above half the prediction maximum.
    pub area: usize,
    pub degenerate: bool,
}

/// Everything produced by training one scene.
#[derive(Clone, Debug)]
pub struct SceneRun {
    pub index: usize,
    pub scene: Scene,
    pub point_label: Grid,
    pub metrics: Vec<MetricRecord>,
    /// Mean per-batch training loss of each epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    pub degen: Vec<DegenPoint>,
    pub trace: EvolutionTrace,
    /// Label snapshots taken right after each evolution update.
    pub label_updates: Vec<(usize, Grid)>,
    pub final_label: Grid,
    pub final_pred: Grid,
}

impl SceneRun {
    /// IoU of the final evolved label (binarized at 0.5) against GT.
    pub fn final_label_iou(&self) -> f64 {
        iou(&self.final_label.threshold(0.5), &self.scene.gt_mask)
    }

    /// IoU of the final prediction (binarized at 0.5) against GT.
    pub fn final_pred_iou(&self) -> f64 {
        iou(&self.final_pred.threshold(0.5), &self.scene.gt_mask)
    }

    pub fn peak_degen(&self) -> Option<DegenPoint> {
        self.degen
            .iter()
            .copied()
            .max_by(|a, b| a.iou.partial_cmp(&b.iou).unwrap().then(b.epoch.cmp(&a.epoch)))
    }
}

fn scene_rng(cfg: &ExperimentConfig, index: usize, stream: u64) -> ChaCha8Rng {
    // Distinct, reproducible streams per (scene, purpose).
    ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index as u64)
            .wrapping_add(stream << 32),
    )
}

/// Build the i-th scene of a run: one Gaussian target at a seeded position
/// away from the border.
pub fn build_scene(cfg: &ExperimentConfig, index: usize) -> Result<Scene> {
    let s = &cfg.scene;
    let stamp = gaussian_target(s.radius, s.peak_raw)?;
    let margin = s.radius + 2;
    if s.height <= 2 * margin || s.width <= 2 * margin {
        return Err(Error::InvalidArgument(format!(
            "scene {}x{} too small for radius {}",
            s.height, s.width, s.radius
        )));
    }
    let mut rng = scene_rng(cfg, index, 1);
    let center = (
        rng.gen_range(margin..s.height - margin),
        rng.gen_range(margin..s.width - margin),
    );
    compose_scene(&SceneSpec {
        height: s.height,
        width: s.width,
        background: cfg.background(),
        placements: vec![Placement { stamp, center }],
        seed: cfg.seed.wrapping_add(index as u64),
    })
}

/// Train one scene end to end (the single-sample scheme: one network per
/// scene). Evolution runs only when enabled in the config.
pub fn run_scene(cfg: &ExperimentConfig, index: usize) -> Result<SceneRun> {
    let scene = build_scene(cfg, index)?;
    let point_spec = cfg.point_spec(cfg.seed.wrapping_add(1000 + index as u64));
    let initial_label = scene_point_labels(&scene, &point_spec)?;
    run_scene_with_labels(cfg, index, scene, initial_label)
}

/// The train–evolve loop with an explicit initial label map (used both by
/// the normal point-label path and by the fixed-pseudo-label baseline).
pub fn run_scene_with_labels(
    cfg: &ExperimentConfig,
    index: usize,
    scene: Scene,
    initial_label: Grid,
) -> Result<SceneRun> {
    let loss_cfg = cfg.loss_config();
    let evo_cfg = cfg.evolution_config();
    let mut net = build_network(
        cfg.network_spec(),
        cfg.scene.height,
        cfg.scene.width,
        cfg.loss.gamma,
        cfg.loss.alpha,
        cfg.seed.wrapping_add(2000 + index as u64),
    )?;
    let mut adam = AdamState::new(&net.params, AdamConfig { lr: cfg.train.lr, ..Default::default() });
    let mut rng = scene_rng(cfg, index, 2);

    let handcrafted = match &loss_cfg.background {
        BackgroundMode::Handcrafted { .. } => {
            let mut hrng = scene_rng(cfg, index, 3);
            Some(background_loss_mask(&initial_label, &loss_cfg.background, &mut hrng)?)
        }
        _ => None,
    };
    let mut label = initial_label.clone();
    let point_label = initial_label;

    let mut sched = SchedulerState::default();
    let mut trace = EvolutionTrace::default();
    let mut metrics = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut degen = Vec::new();
    let mut label_updates = Vec::new();
    let mut last_pred: Option<Grid> = None;

    for epoch in 1..=cfg.epochs {
        adam.set_lr(scheduled_lr(cfg.train.lr, epoch - 1, cfg.epochs));
        let items =
            [TrainItem { image: scene.image.clone(), label: label.clone(), handcrafted: handcrafted.clone() }];
        let epoch_loss =
            train_epoch(&mut net, &items, &loss_cfg, &mut adam, &mut rng, cfg.train.augment, cfg.train.batch_size, epoch)?;
        epoch_losses.push(epoch_loss);

        // Label-based metrics every epoch (cheap).
        let bin = label.threshold(0.5);
        let det = pd_fa(&bin, &scene.targets, MATCH_DISTANCE);
        metrics.push(MetricRecord {
            epoch,
            iou: iou(&bin, &scene.gt_mask),
            pa: pixel_accuracy(&bin, &scene.gt_mask)?,
            pd: det.pd,
            fa: det.fa,
            positive_area: bin.count(),
            detected: det.detected,
        });

        // Prediction-based evaluation at the configured cadence.
        let need_eval = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let update = cfg.evolution.enabled
            && evolution_scheduler(epoch, epoch_loss * evo_cfg.loss_normalizer, &evo_cfg, &mut sched)
                == Decision::Update;
        if need_eval || update {
            let pred = net.predict(&scene.image)?;
            if need_eval {
                let d = degeneration_iou(&pred, &scene.gt_mask);
                let area = if d.degenerate {
                    0
                } else {
                    pred.threshold(pred.max_value() / 2.0).count()
                };
                degen.push(DegenPoint { epoch, iou: d.value, area, degenerate: d.degenerate });
            }
            if update {
                let (new_label, ttraces) = evolve_labels(&label, &pred, &evo_cfg)?;
                let d = loss_delta(&pred, &label, &new_label, &loss_cfg)?;
                trace.push_update(epoch, &ttraces, d);
                label = new_label;
                label_updates.push((epoch, label.clone()));
            }
            last_pred = Some(pred);
        }
    }

    let final_pred = match last_pred {
        Some(p) => p,
        None => net.predict(&scene.image)?,
    };
    Ok(SceneRun {
        index,
        scene,
        point_label,
        metrics,
        epoch_losses,
        degen,
        trace,
        label_updates,
        final_label: label,
        final_pred,
    })
}

/// A completed multi-scene experiment.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub runs: Vec<SceneRun>,
}

impl RunSummary {
    pub fn final_label_ious(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_label_iou()).collect()
    }

    pub fn final_pred_ious(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_pred_iou()).collect()
    }
}

/// Run every scene of the config and, when an output directory is given,
/// emit the full artifact set. A failure writes a FAILED marker next to
/// whatever artifacts already exist.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(&dir.join("config.resolved.toml"), &cfg.to_resolved_toml())?;
    }
    let mut runs = Vec::new();
    for i in 0..cfg.scene.count {
        match run_scene(cfg, i) {
            Ok(run) => {
                if let Some(dir) = out_dir {
                    emit_scene_artifacts(&run, &dir.join(format!("scene_{i:02}")))?;
                }
                runs.push(run);
            }
            Err(e) => {
                let msg = format!("scene {i}: {e}");
                if let Some(dir) = out_dir {
                    write_text(&dir.join("FAILED"), &msg)?;
                }
                return Err(Error::InvalidArgument(msg));
            }
        }
    }
    let summary = RunSummary { runs };
    if let Some(dir) = out_dir {
        write_text(&dir.join("summary.csv"), &summary_csv(&summary))?;
    }
    Ok(summary)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn metrics_csv(metrics: &[MetricRecord]) -> String {
    let mut s = String::from("epoch,iou,pa,pd,fa,pos_area\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.iou, m.pa, m.pd, m.fa, m.positive_area
        ));
    }
    s
}

pub fn degen_csv(points: &[DegenPoint]) -> String {
    let mut s = String::from("epoch,degen_iou,halfmax_area,degenerate\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.epoch, p.iou, p.area, p.degenerate));
    }
    s
}

fn summary_csv(summary: &RunSummary) -> String {
    let mut s = String::from("scene,final_label_iou,final_pred_iou,peak_degen_iou,final_degen_iou,updates\n");
    for r in &summary.runs {
        let peak = r.peak_degen().map(|p| p.iou).unwrap_or(0.0);
        let last = r.degen.last().map(|p| p.iou).unwrap_or(0.0);
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.index,
            r.final_label_iou(),
            r.final_pred_iou(),
            peak,
            last,
            r.label_updates.len()
        ));
    }
    s
}

/// Write one scene's artifact set: CSVs plus PGM dumps of input, GT,
/// initial points, labels at each update, the final label, and the final
/// prediction.
pub fn emit_scene_artifacts(run: &SceneRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_text(&dir.join("metrics.csv"), &metrics_csv(&run.metrics))?;
    write_text(&dir.join("degen.csv"), &degen_csv(&run.degen))?;
    let mut loss_rows = String::from("epoch,loss\n");
    for (i, l) in run.epoch_losses.iter().enumerate() {
        loss_rows.push_str(&format!("{},{}\n", i + 1, l));
    }
    write_text(&dir.join("loss.csv"), &loss_rows)?;
    run.trace.write_csv(&dir.join("trace.csv"))?;
    write_pgm16(&run.scene.image, &dir.join("input.pgm"))?;
    write_pgm16(&run.scene.gt_mask.to_grid(), &dir.join("gt.pgm"))?;
    write_pgm16(&run.point_label, &dir.join("points.pgm"))?;
    for (epoch, label) in &run.label_updates {
        write_pgm16(label, &dir.join(format!("label_update_{epoch:04}.pgm")))?;
    }
    write_pgm16(&run.final_label, &dir.join("label_final.pgm"))?;
    write_pgm16(&run.final_pred, &dir.join("pred_final.pgm"))?;
    Ok(())
}

/// Run the base config once per axis value and write a joint summary CSV
/// (one row per value).
pub fn sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<(f64, RunSummary)>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let mut out = Vec::new();
    let mut rows = String::from("axis,value,mean_final_label_iou,mean_final_pred_iou,mean_peak_degen_iou\n");
    for &v in values {
        let mut cfg = base.clone();
        cfg.set_axis(axis, v)?;
        let sub = out_dir.map(|d| d.join(format!("{}_{}", axis.replace('.', "_"), v)));
        let summary = run_experiment(&cfg, sub.as_deref())?;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let peaks: Vec<f64> =
            summary.runs.iter().map(|r| r.peak_degen().map(|p| p.iou).unwrap_or(0.0)).collect();
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            axis,
            v,
            mean(&summary.final_label_ious()),
            mean(&summary.final_pred_ious()),
            mean(&peaks)
        ));
        out.push((v, summary));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(&dir.join("sweep_summary.csv"), &rows)?;
    }
    Ok(out)
}

/// Intensity-threshold pseudo labels: binarize the image at `tau` and keep
/// only the 8-connected components that intersect the point label.
pub fn fixed_pseudo_labels(image: &Grid, point_label: &Grid, tau: f64) -> Result<Grid> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0,1)")));
    }
    let bin = image.threshold(tau);
    let points = point_label.threshold(0.5);
    let comps = connected_components(&bin, pointseg::region::Connectivity::Eight);
    let mut out = Grid::zeros(image.height(), image.width());
    for comp in comps.components() {
        if comp.pixels.iter().any(|&(y, x)| points.at(y, x)) {
            for &(y, x) in &comp.pixels {
                out.set(y, x, 1.0);
            }
        }
    }
    // Always keep the annotated points themselves so training has at least
    // the original supervision.
    for (y, x) in points.pixels() {
        out.set(y, x, 1.0);
    }
    Ok(out)
}

/// The fixed-pseudo-label baseline: build pseudo labels once, then train
/// with evolution disabled on those labels.
pub fn pseudo_baseline(
    cfg: &ExperimentConfig,
    tau: f64,
    out_dir: Option<&Path>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let mut fixed = cfg.clone();
    fixed.evolution.enabled = false;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_text(&dir.join("config.resolved.toml"), &fixed.to_resolved_toml())?;
    }
    let mut runs = Vec::new();
    for i in 0..cfg.scene.count {
        let scene = build_scene(cfg, i)?;
        let point_spec = cfg.point_spec(cfg.seed.wrapping_add(1000 + i as u64));
        let points = scene_point_labels(&scene, &point_spec)?;
        let pseudo = fixed_pseudo_labels(&scene.image, &points, tau)?;
        let run = run_scene_with_labels(&fixed, i, scene, pseudo)?;
        if let Some(dir) = out_dir {
            emit_scene_artifacts(&run, &dir.join(format!("scene_{i:02}")))?;
        }
        runs.push(run);
    }
    let summary = RunSummary { runs };
    if let Some(dir) = out_dir {
        write_text(&dir.join("summary.csv"), &summary_csv(&summary))?;
    }
    Ok(summary)
}

/// Mask-vs-mask evaluation used by the `eval` subcommand.
pub fn eval_masks(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    Ok((iou(pred, gt), pixel_accuracy(pred, gt)?))
}
