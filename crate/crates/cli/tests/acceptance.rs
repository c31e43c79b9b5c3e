//! Acceptance suite: one test per criterion, each emitting a single
//! "ACCEPTANCE nn (<name>): PASS/FAIL" line with its headline numbers.
//! The training-based criteria share cached experiment runs, so the suite
//! is intended to run in one process (it does by default on one CPU; with
//! more, each cache is still computed at most once).

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointseg::evolve::{
    adaptive_threshold, blend_update, eliminate_false_alarms, extract_candidates, EvolutionConfig,
};
use pointseg::grid::{Grid, Mask};
use pointseg::region::{connected_components, Connectivity};
use pointseg::unet::{build_network, NetworkSpec};
use pointseg_cli::config::ExperimentConfig;
use pointseg_cli::run::{fixed_pseudo_labels, pseudo_baseline, run_experiment, RunSummary};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    let line =
        format!("ACCEPTANCE {n:02} ({name}): {} — {detail}\n", if ok { "PASS" } else { "FAIL" });
    // Write straight to the process stderr so the verdict lines appear in
    // the default `cargo test` output instead of being swallowed by the
    // harness's per-test capture.
    use std::io::Write;
    if let Ok(mut err) = std::fs::OpenOptions::new().write(true).open("/dev/stderr") {
        let _ = err.write_all(line.as_bytes());
    } else {
        print!("{line}");
    }
    assert!(ok, "criterion {n} failed: {detail}");
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- caches

fn reference_cfg() -> ExperimentConfig {
    // The documented defaults: 20 seeded 64x64 scenes, radius-7 peak-200
    // Gaussian targets on a noise background, 400 epochs.
    ExperimentConfig::default()
}

fn runs_without_evolution() -> &'static RunSummary {
    static CACHE: OnceLock<RunSummary> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut cfg = reference_cfg();
        cfg.evolution.enabled = false;
        run_experiment(&cfg, None).expect("baseline run")
    })
}

fn runs_with_evolution() -> &'static RunSummary {
    static CACHE: OnceLock<RunSummary> = OnceLock::new();
    CACHE.get_or_init(|| run_experiment(&reference_cfg(), None).expect("evolution run"))
}

fn runs_with_evolution_f2() -> &'static RunSummary {
    static CACHE: OnceLock<RunSummary> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut cfg = reference_cfg();
        cfg.evolution.f = 2;
        run_experiment(&cfg, None).expect("f=2 run")
    })
}

// ------------------------------------------------------------ criterion 1

#[test]
fn criterion_01_equation_exactness() {
    let cfg = EvolutionConfig::default();
    let tol = 1e-12;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut check = |actual: f64, expected: f64| {
        let err = (actual - expected).abs();
        worst = worst.max(err);
        ok &= err <= tol;
    };

    // Adaptive threshold: hwr = 100*100*0.0015 = 15, max(P) = 1.
    let p = Grid::filled(3, 3, 1.0);
    check(adaptive_threshold(&p, 0, &cfg, 100, 100).unwrap(), 0.5);
    check(adaptive_threshold(&p, 15, &cfg, 100, 100).unwrap(), 0.75);
    check(adaptive_threshold(&p, 30, &cfg, 100, 100).unwrap(), 1.0);
    // max(P) scaling.
    let p08 = Grid::filled(3, 3, 0.8);
    check(adaptive_threshold(&p08, 15, &cfg, 100, 100).unwrap(), 0.6);

    // Candidate extraction: strict threshold, retained values unchanged.
    let p = Grid::from_vec(2, 2, vec![0.9, 0.3, 0.6, 0.1]).unwrap();
    let c = extract_candidates(&p, 0.5);
    for (got, want) in c.data().iter().zip([0.9, 0.0, 0.6, 0.0]) {
        check(*got, want);
    }
    // T at exactly a value excludes it (strict >).
    check(extract_candidates(&p, 0.9).data()[0], 0.0);

    // False-alarm elimination: far blob zeroed, touching blob kept.
    let mut cand = Grid::zeros(5, 5);
    cand.set(1, 0, 0.8);
    cand.set(2, 0, 0.7);
    cand.set(1, 4, 0.9);
    let mut lab = Mask::zeros(5, 5);
    lab.set(2, 0, true);
    let (e, _) = eliminate_false_alarms(&cand, &lab);
    check(e.at(1, 0), 0.8);
    check(e.at(2, 0), 0.7);
    check(e.at(1, 4), 0.0);

    // Blend: L=0,E=0.8,N=1 -> 0.4; L=1,E=0.9,N=1 -> 0.95; N=0 identical.
    let l = Grid::from_vec(1, 3, vec![0.0, 1.0, 0.3]).unwrap();
    let ev = Grid::from_vec(1, 3, vec![0.8, 0.9, 0.0]).unwrap();
    let n = Mask::from_vec(1, 3, vec![true, true, false]).unwrap();
    let out = blend_update(&l, &ev, &n);
    check(out.at(0, 0), 0.4);
    check(out.at(0, 1), 0.95);
    ok &= out.at(0, 2).to_bits() == l.at(0, 2).to_bits();

    report(1, "equation exactness", ok, &format!("max abs error {worst:.2e} (tol 1e-12)"));
}

// ------------------------------------------------------------ criterion 2

fn flood_fill_oracle(m: &Mask, conn: Connectivity) -> Vec<u32> {
    let (h, w) = (m.height(), m.width());
    let mut labels = vec![0u32; h * w];
    let mut next = 1u32;
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1),
        ],
    };
    for start in 0..h * w {
        if !m.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        let mut stack = vec![start];
        labels[start] = id;
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for &(dy, dx) in offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || ny >= h as isize || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if m.data()[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            }
        }
    }
    labels
}

#[test]
fn criterion_02_flood_fill_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let densities = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut mismatches = 0usize;
    let mut grids = 0usize;
    for trial in 0..200 {
        let density = densities[trial % densities.len()];
        let data: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
        let m = Mask::from_vec(32, 32, data).unwrap();
        grids += 1;
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let oracle = flood_fill_oracle(&m, conn);
            let map = connected_components(&m, conn);
            for y in 0..32 {
                for x in 0..32 {
                    // Scan-order first-occurrence ids coincide by construction.
                    if map.label_at(y, x) != oracle[y * 32 + x] {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    report(
        2,
        "flood-fill oracle equivalence",
        mismatches == 0,
        &format!("{grids} grids x 2 connectivities, {mismatches} label mismatches"),
    );
}

// ------------------------------------------------------------ criterion 3

#[test]
fn criterion_03_gradient_correctness() {
    // Per-element check against one-sided differences. For a smooth loss
    // the exact derivative lies between the forward and backward difference
    // quotients (up to O(eps^2)); at a ReLU/maxpool kink any valid
    // subgradient does too. So we require the analytic gradient to sit in
    // [min(d-, d+), max(d-, d+)] with a small slack, which is tight on
    // smooth elements without false-failing on kink straddles.
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut elements = 0usize;
    for i in 0..64u64 {
        let spec = NetworkSpec {
            depth: 1,
            base_channels: 2 + (i as usize % 3),
            in_channels: 1,
            out_channels: 1,
        };
        let gamma = if i % 2 == 0 { 2.0 } else { 1.0 };
        let alpha = 0.5 + 0.25 * ((i % 3) as f64) / 2.0;
        let net = build_network(spec, 8, 8, gamma, alpha, 300 + i).unwrap();
        let image: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..64).map(|_| [0.0, 0.5, 1.0][rng.gen_range(0..3)]).collect();
        let inputs = vec![
            Grid::from_vec(8, 8, image).unwrap().to_tensor(),
            Grid::from_vec(8, 8, target).unwrap().to_tensor(),
            Grid::filled(8, 8, 1.0).to_tensor(),
        ];

        let values = net.graph.forward(&net.params, &inputs).unwrap();
        let center = values[net.loss].item();
        let analytic = net.graph.backward(&values, net.loss).unwrap().params(&net.graph);

        let mut params = net.params.clone();
        for pi in 0..params.len() {
            for ei in 0..params[pi].data().len() {
                let orig = params[pi].data()[ei];
                params[pi].data_mut()[ei] = orig + eps;
                let lp = net.graph.forward(&params, &inputs).unwrap()[net.loss].item();
                params[pi].data_mut()[ei] = orig - eps;
                let lm = net.graph.forward(&params, &inputs).unwrap()[net.loss].item();
                params[pi].data_mut()[ei] = orig;
                let d_plus = (lp - center) / eps;
                let d_minus = (center - lm) / eps;
                let (lo, hi) = (d_plus.min(d_minus), d_plus.max(d_minus));
                let a = analytic[pi].data()[ei];
                let scale = a.abs().max(hi.abs()).max(lo.abs()).max(1.0);
                let violation = ((lo - a).max(a - hi)).max(0.0) / scale;
                worst = worst.max(violation);
                elements += 1;
            }
        }
    }
    report(
        3,
        "gradient correctness",
        worst < 1e-4,
        &format!("64 networks, {elements} parameters, max normalized interval violation {worst:.3e} (tol 1e-4)"),
    );
}

// ------------------------------------------------------------ criterion 4

#[test]
fn criterion_04_mapping_degeneration() {
    let runs = runs_without_evolution();
    let mut hits = 0usize;
    for r in &runs.runs {
        let peak = r.peak_degen().map(|p| p.iou).unwrap_or(0.0);
        let last = r.degen.last().map(|p| p.iou).unwrap_or(0.0);
        if peak > 0.3 && last <= 0.6 * peak {
            hits += 1;
        }
    }
    let n = runs.runs.len();
    report(
        4,
        "mapping degeneration",
        hits * 2 >= n,
        &format!("{hits}/{n} scenes show peak > 0.3 with final <= 60% of peak"),
    );
}

// ------------------------------------------------------------ criterion 5

#[test]
fn criterion_05_label_evolution_recovery() {
    let on = runs_with_evolution();
    let off = runs_without_evolution();
    let label_ious = on.final_label_ious();
    let hits = label_ious.iter().filter(|&&v| v >= 0.5).count();
    let n = label_ious.len();
    let margin = median(&label_ious) - median(&off.final_pred_ious());
    let ok = hits * 10 >= n * 7 && margin >= 0.25;
    report(
        5,
        "label evolution recovers masks",
        ok,
        &format!(
            "{hits}/{n} scenes with final label IoU >= 0.5; median margin over baseline {margin:.3} (need >= 0.25)"
        ),
    );
}

// ------------------------------------------------------------ criterion 6

#[test]
fn criterion_06_size_awareness() {
    let mut stats = Vec::new();
    for radius in [3usize, 5, 7] {
        let mut cfg = reference_cfg();
        cfg.evolution.enabled = false;
        cfg.scene.count = 10;
        cfg.scene.radius = radius;
        // Denser background supervision makes the suppression of target
        // pixels proportional to target area, which is what produces the
        // size-dependent IoU ceiling; with the sparse default (j=20) the
        // effect is washed out by small-target discretization noise.
        cfg.loss.random_j = 100;
        let runs = run_experiment(&cfg, None).expect("radius run");
        let peaks: Vec<_> = runs.runs.iter().map(|r| r.peak_degen().unwrap()).collect();
        let mean_area = mean(&peaks.iter().map(|p| p.area as f64).collect::<Vec<_>>());
        let mean_iou = mean(&peaks.iter().map(|p| p.iou).collect::<Vec<_>>());
        stats.push((radius, mean_area, mean_iou));
    }
    let area_increasing = stats[0].1 < stats[1].1 && stats[1].1 < stats[2].1;
    let iou_ordered = stats[0].2 >= stats[2].2;
    report(
        6,
        "size awareness",
        area_increasing && iou_ordered,
        &format!(
            "mean peak areas r3/r5/r7 = {:.1}/{:.1}/{:.1}; mean peak IoU r3 {:.3} vs r7 {:.3}",
            stats[0].1, stats[1].1, stats[2].1, stats[0].2, stats[2].2
        ),
    );
}

// ------------------------------------------------------------ criterion 7

#[test]
fn criterion_07_point_count_trend() {
    let mut means = Vec::new();
    for k in [1usize, 4] {
        let mut cfg = reference_cfg();
        cfg.evolution.enabled = false;
        cfg.scene.count = 10;
        cfg.scene.radius = 13;
        cfg.points.mode = "kpoints".into();
        cfg.points.k = k;
        let runs = run_experiment(&cfg, None).expect("k-points run");
        let peaks: Vec<f64> =
            runs.runs.iter().map(|r| r.peak_degen().map(|p| p.iou).unwrap_or(0.0)).collect();
        means.push(mean(&peaks));
    }
    report(
        7,
        "point-count trend",
        means[1] >= means[0],
        &format!("mean peak degeneration IoU K=1 {:.3} vs K=4 {:.3}", means[0], means[1]),
    );
}

// ------------------------------------------------------------ criterion 8

#[test]
fn criterion_08_pseudo_label_baseline() {
    // Clutter scenes with a brighter target so the intensity-threshold
    // grid is non-degenerate.
    let mut cfg = reference_cfg();
    cfg.scene.count = 10;
    cfg.scene.background = "clutter".into();
    cfg.scene.peak_raw = 500.0;
    let lesps = run_experiment(&cfg, None).expect("clutter evolution run");

    let mut best_pseudo = vec![f64::NEG_INFINITY; cfg.scene.count];
    for tau in [0.3, 0.5, 0.7] {
        let runs = pseudo_baseline(&cfg, tau, None).expect("pseudo run");
        for (i, r) in runs.runs.iter().enumerate() {
            best_pseudo[i] = best_pseudo[i].max(r.final_pred_iou());
        }
    }
    let margins: Vec<f64> = lesps
        .runs
        .iter()
        .zip(&best_pseudo)
        .map(|(r, &b)| r.final_pred_iou() - b)
        .collect();
    let med = median(&margins);
    report(
        8,
        "fixed-pseudo-label baseline",
        med >= 0.1,
        &format!(
            "median final-prediction IoU margin over best threshold baseline {med:.3} (need >= 0.1)"
        ),
    );
}

#[test]
fn pseudo_label_component_contract() {
    // The pseudo-label constructor itself, against scene content: only
    // components touching the point survive.
    let cfg = {
        let mut c = reference_cfg();
        c.scene.background = "clutter".into();
        c.scene.peak_raw = 500.0;
        c
    };
    let scene = pointseg_cli::run::build_scene(&cfg, 0).unwrap();
    let points = pointseg::synth::scene_point_labels(
        &scene,
        &cfg.point_spec(cfg.seed.wrapping_add(1000)),
    )
    .unwrap();
    let pseudo = fixed_pseudo_labels(&scene.image, &points, 0.3).unwrap();
    let mask = pseudo.threshold(0.5);
    let comps = connected_components(&mask, Connectivity::Eight);
    let pts = points.threshold(0.5);
    for comp in comps.components() {
        assert!(comp.pixels.iter().any(|&(y, x)| pts.at(y, x)));
    }
}

// ------------------------------------------------------------ criterion 9

/// Variance of the mean-normalized series (squared coefficient of
/// variation). Raw variances are not comparable across evolution
/// frequencies — the per-update loss change scales with the interval
/// between updates — so trace steadiness is judged relative to the
/// trace's own magnitude.
fn normalized_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    if m <= 0.0 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 * m * m)
}

#[test]
fn criterion_09_convergence_diagnostic() {
    let on = runs_with_evolution();
    let mut trend_hits = 0usize;
    let mut eligible = 0usize;
    for r in &on.runs {
        let series = r.trace.loss_d_series();
        if series.len() < 6 {
            continue;
        }
        eligible += 1;
        let first = mean(&series[..3]);
        let last = mean(&series[series.len() - 3..]);
        if last < first {
            trend_hits += 1;
        }
    }

    let f2 = runs_with_evolution_f2();
    let mut var_hits = 0usize;
    let mut paired = 0usize;
    for (a, b) in on.runs.iter().zip(&f2.runs) {
        let sa = a.trace.loss_d_series();
        let sb = b.trace.loss_d_series();
        if sa.len() < 2 || sb.len() < 2 {
            continue;
        }
        paired += 1;
        if normalized_variance(&sa) < normalized_variance(&sb) {
            var_hits += 1;
        }
    }

    let ok = eligible > 0 && trend_hits * 10 >= eligible * 7 && var_hits * 2 > paired;
    report(
        9,
        "convergence diagnostic",
        ok,
        &format!(
            "loss_d decreasing in {trend_hits}/{eligible} scenes; f=5 normalized variance below f=2 in {var_hits}/{paired} seeds"
        ),
    );
}

// ----------------------------------------------------------- criterion 10

#[test]
fn criterion_10_invariant_suite() {
    // Randomized spot-check of the cross-module invariants (the full
    // property suite runs as the core crate's `invariants` test target),
    // plus byte-level run reproducibility.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ok = true;
    for _ in 0..200 {
        let l: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let e: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let n: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
        let l = Grid::from_vec(8, 8, l).unwrap();
        let e = Grid::from_vec(8, 8, e).unwrap();
        let out = blend_update(&l, &e, &Mask::from_vec(8, 8, n.clone()).unwrap());
        for i in 0..64 {
            if n[i] {
                ok &= (0.0..=1.0).contains(&out.data()[i]);
            } else {
                ok &= out.data()[i].to_bits() == l.data()[i].to_bits();
            }
        }
        // T_adapt monotone in count.
        let cfg = EvolutionConfig::default();
        let a = adaptive_threshold(&e, 5, &cfg, 64, 64).unwrap();
        let b = adaptive_threshold(&e, 25, &cfg, 64, 64).unwrap();
        ok &= a <= b;
    }

    // Reproducibility: identical config -> identical artifact bytes.
    let mut cfg = ExperimentConfig::default();
    cfg.epochs = 5;
    cfg.eval_every = 2;
    cfg.scene.count = 1;
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.scene.radius = 3;
    cfg.network.depth = 1;
    cfg.network.base_channels = 4;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_experiment(&cfg, Some(&a)).unwrap();
    run_experiment(&cfg, Some(&b)).unwrap();
    for name in ["summary.csv", "scene_00/metrics.csv", "scene_00/loss.csv", "scene_00/pred_final.pgm"] {
        ok &= std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
    }
    report(10, "invariant suite", ok, "randomized invariants and byte-level reproducibility hold");
}
