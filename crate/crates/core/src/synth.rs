//! Synthetic infrared-like scenes: extended small-target stamps, composable
//! backgrounds, signal-to-clutter ratio, and point-label generation.
//!
//! Target intensities are specified on a raw 0-1024 scale and normalized to
//! [0,1], so a "peak 200" target has normalized peak 200/1024.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::region::centroid;

/// Raw intensity full-scale used for normalization.
pub const RAW_SCALE: f64 = 1024.0;

/// One connected ground-truth region of a composed scene.
#[derive(Clone, Debug)]
pub struct TargetRecord {
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
    pub area: usize,
}

impl TargetRecord {
    pub fn from_pixels(pixels: Vec<(usize, usize)>) -> Result<Self> {
        let c = centroid(&pixels)?;
        let area = pixels.len();
        Ok(TargetRecord { pixels, centroid: c, area })
    }

    pub fn mask(&self, h: usize, w: usize) -> Mask {
        let mut m = Mask::zeros(h, w);
        for &(y, x) in &self.pixels {
            m.set(y, x, true);
        }
        m
    }
}

/// Odd-sized square intensity stamp with its ground-truth support mask.
#[derive(Clone, Debug)]
pub struct TargetStamp {
    pub values: Grid,
    pub mask: Mask,
    pub nominal_radius: usize,
    /// Normalized peak in [0,1].
    pub peak: f64,
}

impl TargetStamp {
    pub fn side(&self) -> usize {
        self.values.height()
    }
}

/// Non-Gaussian stamp shapes.
#[derive(Clone, Debug)]
pub enum ShapeKind {
    Disk { radius: usize },
    Ellipse { ry: usize, rx: usize },
    Cross { arm: usize },
    UserMask(Mask),
}

/// Gaussian-profile extended target: value(d) = peak * exp(-d^2 / (2 sigma^2))
/// with sigma = radius/2, truncated to 0 beyond the radius. The GT mask is
/// the truncation support {d <= radius}.
pub fn gaussian_target(radius: usize, peak_raw: f64) -> Result<TargetStamp> {
    if radius < 1 || peak_raw <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian target needs radius >= 1 and peak > 0, got radius={radius}, peak={peak_raw}"
        )));
    }
    let peak = peak_raw / RAW_SCALE;
    let side = 2 * radius + 1;
    let sigma = radius as f64 / 2.0;
    let mut values = Grid::zeros(side, side);
    let mut mask = Mask::zeros(side, side);
    let c = radius as isize;
    for y in 0..side {
        for x in 0..side {
            let dy = y as isize - c;
            let dx = x as isize - c;
            let d2 = (dy * dy + dx * dx) as f64;
            if d2 <= (radius * radius) as f64 {
                values.set(y, x, peak * (-d2 / (2.0 * sigma * sigma)).exp());
                mask.set(y, x, true);
            }
        }
    }
    Ok(TargetStamp { values, mask, nominal_radius: radius, peak })
}

/// Flat-intensity stamp with the requested support shape.
pub fn shape_target(kind: ShapeKind, peak_raw: f64) -> Result<TargetStamp> {
    if peak_raw <= 0.0 {
        return Err(Error::InvalidArgument("shape target needs peak > 0".into()));
    }
    let peak = peak_raw / RAW_SCALE;
    let (mask, nominal_radius) = match kind {
        ShapeKind::Disk { radius } => {
            let side = 2 * radius + 1;
            let mut m = Mask::zeros(side, side);
            let c = radius as isize;
            for y in 0..side {
                for x in 0..side {
                    let dy = y as isize - c;
                    let dx = x as isize - c;
                    if dy * dy + dx * dx <= (radius * radius) as isize {
                        m.set(y, x, true);
                    }
                }
            }
            (m, radius)
        }
        ShapeKind::Ellipse { ry, rx } => {
            let side = 2 * ry.max(rx) + 1;
            let c = (side / 2) as isize;
            let mut m = Mask::zeros(side, side);
            let (a2, b2) = ((ry * ry).max(1) as f64, (rx * rx).max(1) as f64);
            for y in 0..side {
                for x in 0..side {
                    let dy = (y as isize - c) as f64;
                    let dx = (x as isize - c) as f64;
                    if dy * dy / a2 + dx * dx / b2 <= 1.0 {
                        m.set(y, x, true);
                    }
                }
            }
            (m, ry.max(rx))
        }
        ShapeKind::Cross { arm } => {
            let side = 2 * arm + 1;
            let c = arm;
            let mut m = Mask::zeros(side, side);
            for i in 0..side {
                m.set(c, i, true);
                m.set(i, c, true);
            }
            (m, arm)
        }
        ShapeKind::UserMask(m) => {
            if m.height() != m.width() || m.height() % 2 == 0 {
                return Err(Error::InvalidArgument(
                    "user stamp mask must be an odd square".into(),
                ));
            }
            let r = m.height() / 2;
            (m, r)
        }
    };
    if !mask.any() {
        return Err(Error::InvalidArgument("shape target has empty support".into()));
    }
    let side = mask.height();
    let mut values = Grid::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            if mask.at(y, x) {
                values.set(y, x, peak);
            }
        }
    }
    Ok(TargetStamp { values, mask, nominal_radius, peak })
}

/// Background models for scene composition, on the normalized [0,1] scale.
#[derive(Clone, Debug)]
pub enum Background {
    Flat { level: f64 },
    GaussianNoise { mean: f64, sigma: f64 },
    /// Seeded random Gaussian blobs plus white noise.
    Clutter(ClutterParams),
    UserImage(Grid),
}

#[derive(Clone, Debug)]
pub struct ClutterParams {
    pub blob_count: usize,
    /// Peak amplitude of each blob, normalized scale.
    pub blob_amp: f64,
    pub blob_sigma_min: f64,
    pub blob_sigma_max: f64,
    pub noise_sigma: f64,
    pub base_level: f64,
}

impl Default for ClutterParams {
    fn default() -> Self {
        ClutterParams {
            blob_count: 6,
            blob_amp: 0.15,
            blob_sigma_min: 2.0,
            blob_sigma_max: 8.0,
            noise_sigma: 0.02,
            base_level: 0.05,
        }
    }
}

/// A stamp placed with its center at frame coordinate (y, x).
#[derive(Clone, Debug)]
pub struct Placement {
    pub stamp: TargetStamp,
    pub center: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    pub placements: Vec<Placement>,
    pub seed: u64,
}

/// A composed scene: normalized image, GT mask, and per-target records.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Grid,
    pub gt_mask: Mask,
    pub targets: Vec<TargetRecord>,
}

fn sample_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple and seeded.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    mean + sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn render_background(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Grid> {
    let (h, w) = (spec.height, spec.width);
    Ok(match &spec.background {
        Background::Flat { level } => Grid::filled(h, w, *level),
        Background::GaussianNoise { mean, sigma } => {
            let mut g = Grid::zeros(h, w);
            for v in g.data_mut() {
                *v = sample_normal(rng, *mean, *sigma);
            }
            g
        }
        Background::Clutter(p) => {
            let mut g = Grid::filled(h, w, p.base_level);
            for _ in 0..p.blob_count {
                let cy = rng.gen_range(0.0..h as f64);
                let cx = rng.gen_range(0.0..w as f64);
                let sigma = rng.gen_range(p.blob_sigma_min..=p.blob_sigma_max);
                let amp = rng.gen_range(0.3 * p.blob_amp..=p.blob_amp);
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let v = g.at(y, x) + amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        g.set(y, x, v);
                    }
                }
            }
            if p.noise_sigma > 0.0 {
                for v in g.data_mut() {
                    *v += sample_normal(rng, 0.0, p.noise_sigma);
                }
            }
            g
        }
        Background::UserImage(img) => {
            if img.height() != h || img.width() != w {
                return Err(Error::InvalidArgument(format!(
                    "user background {}x{} vs frame {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            img.clone()
        }
    })
}

/// Compose background + stamps: image = clamp(bg + sum(stamps), 0, 1).
/// Target GT masks must stay inside the frame and be pairwise disjoint.
pub fn compose_scene(spec: &SceneSpec) -> Result<Scene> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut image = render_background(spec, &mut rng)?;
    let mut gt_mask = Mask::zeros(h, w);
    let mut targets = Vec::new();

    for (i, p) in spec.placements.iter().enumerate() {
        let side = p.stamp.side();
        let half = side / 2;
        let (cy, cx) = p.center;
        if cy < half || cx < half || cy + half >= h || cx + half >= w {
            return Err(Error::InvalidArgument(format!(
                "placement {i}: stamp of side {side} at ({cy},{cx}) leaves the {h}x{w} frame"
            )));
        }
        let mut pixels = Vec::new();
        for sy in 0..side {
            for sx in 0..side {
                let y = cy + sy - half;
                let x = cx + sx - half;
                let v = image.at(y, x) + p.stamp.values.at(sy, sx);
                image.set(y, x, v);
                if p.stamp.mask.at(sy, sx) {
                    if gt_mask.at(y, x) {
                        return Err(Error::InvalidArgument(format!(
                            "placement {i}: GT mask overlaps an earlier target at ({y},{x})"
                        )));
                    }
                    gt_mask.set(y, x, true);
                    pixels.push((y, x));
                }
            }
        }
        targets.push(TargetRecord::from_pixels(pixels)?);
    }

    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Scene { image, gt_mask, targets })
}

/// Signal-to-clutter ratio of a target's local neighborhood.
#[derive(Clone, Copy, Debug)]
pub struct ScrResult {
    pub value: f64,
    /// True when the background had zero variance and the value is the
    /// +inf sentinel.
    pub flat_background: bool,
}

/// SCR = |mean(target) - mean(bg)| / std(bg), where bg is the square
/// neighborhood of the given half-width around the target centroid,
/// excluding the target pixels. Clamped at frame borders.
pub fn scr(image: &Grid, target: &TargetRecord, half_width: usize) -> ScrResult {
    let (h, w) = (image.height(), image.width());
    let cy = target.centroid.0.round() as isize;
    let cx = target.centroid.1.round() as isize;
    let hw = half_width as isize;

    let mut in_target = Mask::zeros(h, w);
    for &(y, x) in &target.pixels {
        in_target.set(y, x, true);
    }

    let mut bg = Vec::new();
    for y in (cy - hw).max(0)..=(cy + hw).min(h as isize - 1) {
        for x in (cx - hw).max(0)..=(cx + hw).min(w as isize - 1) {
            if !in_target.at(y as usize, x as usize) {
                bg.push(image.at(y as usize, x as usize));
            }
        }
    }
    let mu_t: f64 =
        target.pixels.iter().map(|&(y, x)| image.at(y, x)).sum::<f64>() / target.area as f64;
    if bg.is_empty() {
        return ScrResult { value: f64::INFINITY, flat_background: true };
    }
    let mu_b: f64 = bg.iter().sum::<f64>() / bg.len() as f64;
    let var: f64 = bg.iter().map(|v| (v - mu_b).powi(2)).sum::<f64>() / bg.len() as f64;
    let sigma = var.sqrt();
    // Accumulated rounding can leave a ~1e-17 std on a truly flat background.
    if sigma < 1e-12 {
        ScrResult { value: f64::INFINITY, flat_background: true }
    } else {
        ScrResult { value: (mu_t - mu_b).abs() / sigma, flat_background: false }
    }
}

/// Where to put point labels relative to a target.
#[derive(Clone, Debug)]
pub enum PointMode {
    /// Single pixel at the rounded centroid.
    Centroid,
    /// One uniformly random GT-mask pixel.
    Coarse,
    /// Pixel at the given distance from the centroid along a seeded random
    /// direction; may leave the GT mask but not the frame.
    Offset { delta: f64 },
    /// K distinct uniformly random GT-mask pixels.
    KPoints { k: usize },
}

#[derive(Clone, Debug)]
pub struct PointLabelSpec {
    pub mode: PointMode,
    pub seed: u64,
}

/// Generate the point label map (1.0 at label pixels) for one target.
pub fn point_label(gt_mask: &Mask, target: &TargetRecord, spec: &PointLabelSpec) -> Result<Grid> {
    if target.pixels.is_empty() {
        return Err(Error::InvalidArgument("point label for empty target".into()));
    }
    let (h, w) = (gt_mask.height(), gt_mask.width());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut label = Grid::zeros(h, w);
    match &spec.mode {
        PointMode::Centroid => {
            let y = target.centroid.0.round() as usize;
            let x = target.centroid.1.round() as usize;
            label.set(y, x, 1.0);
        }
        PointMode::Coarse => {
            let &(y, x) = &target.pixels[rng.gen_range(0..target.pixels.len())];
            label.set(y, x, 1.0);
        }
        PointMode::Offset { delta } => {
            let r = delta.round();
            let theta: f64 = rng.gen_range(0.0..(2.0 * std::f64::consts::PI));
            let y = (target.centroid.0 + r * theta.sin()).round() as isize;
            let x = (target.centroid.1 + r * theta.cos()).round() as isize;
            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                return Err(Error::InvalidArgument(format!(
                    "offset point ({y},{x}) leaves the {h}x{w} frame"
                )));
            }
            label.set(y as usize, x as usize, 1.0);
        }
        PointMode::KPoints { k } => {
            if *k > target.pixels.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {k} points from a {}-pixel mask",
                    target.pixels.len()
                )));
            }
            // Partial Fisher-Yates over a copy of the pixel list.
            let mut pool = target.pixels.clone();
            for i in 0..*k {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
                let (y, x) = pool[i];
                label.set(y, x, 1.0);
            }
        }
    }
    Ok(label)
}

/// Point labels for every target of a scene, merged into one label map.
pub fn scene_point_labels(scene: &Scene, spec: &PointLabelSpec) -> Result<Grid> {
    let mut label = Grid::zeros(scene.image.height(), scene.image.width());
    for (i, t) in scene.targets.iter().enumerate() {
        let per = point_label(
            &scene.gt_mask,
            t,
            &PointLabelSpec { mode: spec.mode.clone(), seed: spec.seed.wrapping_add(i as u64) },
        )?;
        for (dst, src) in label.data_mut().iter_mut().zip(per.data()) {
            *dst = dst.max(*src);
        }
    }
    Ok(label)
}

/// Write a grid as a 16-bit binary PGM (values clamped to [0,1] and scaled
/// to 0..65535).
pub fn write_pgm16(grid: &Grid, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::with_capacity(grid.data().len() * 2 + 32);
    buf.extend_from_slice(format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).as_bytes());
    for &v in grid.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a 16-bit binary PGM written by [`write_pgm16`].
pub fn read_pgm16(path: &std::path::Path) -> Result<Grid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let header_err = |msg: &str| Error::Format { path: path.display().to_string(), msg: msg.into() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err("non-utf8 header"))?);
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(header_err("expected binary PGM header"));
    }
    let w: usize = fields[1].parse().map_err(|_| header_err("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| header_err("bad height"))?;
    let maxval: usize = fields[3].parse().map_err(|_| header_err("bad maxval"))?;
    if maxval != 65535 {
        return Err(header_err("expected 16-bit maxval 65535"));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + h * w * 2 {
        return Err(header_err("truncated pixel data"));
    }
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let hi = bytes[pos + 2 * i] as u16;
        let lo = bytes[pos + 2 * i + 1] as u16;
        data.push(((hi << 8) | lo) as f64 / 65535.0);
    }
    Grid::from_vec(h, w, data)
}
