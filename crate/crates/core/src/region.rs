//! Binary-image machinery: positive-pixel extraction, connected components
//! via two-pass union-find, centroids, and bordered local crops.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// 4- or 8-neighborhood for component labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// One connected region of foreground pixels.
#[derive(Clone, Debug)]
pub struct Component {
    pub id: u32,
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// Labeling of a binary grid: id 0 is background, component ids are
/// contiguous from 1.
#[derive(Clone, Debug)]
pub struct ComponentMap {
    h: usize,
    w: usize,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentMap {
    pub fn label_at(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.w + x]
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Binary mask of a single component.
    pub fn component_mask(&self, id: u32) -> Mask {
        let mut m = Mask::zeros(self.h, self.w);
        for &(y, x) in &self.components[(id - 1) as usize].pixels {
            m.set(y, x, true);
        }
        m
    }
}

/// Strictly-thresholded positive pixels: value > tau.
pub fn positive_pixels(map: &Grid, tau: f64) -> Mask {
    map.threshold(tau)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: vec![0] } // slot for background label 0
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        // Attach the larger root under the smaller to keep ids stable.
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Two-pass union-find connected component labeling.
pub fn connected_components(binary: &Mask, connectivity: Connectivity) -> ComponentMap {
    let h = binary.height();
    let w = binary.width();
    let mut labels = vec![0u32; h * w];
    let mut uf = UnionFind::new();

    // Pass 1: provisional labels from already-visited neighbors.
    for y in 0..h {
        for x in 0..w {
            if !binary.at(y, x) {
                continue;
            }
            let mut neighbors: Vec<u32> = Vec::with_capacity(4);
            if x > 0 && labels[y * w + x - 1] != 0 {
                neighbors.push(labels[y * w + x - 1]);
            }
            if y > 0 {
                if labels[(y - 1) * w + x] != 0 {
                    neighbors.push(labels[(y - 1) * w + x]);
                }
                if connectivity == Connectivity::Eight {
                    if x > 0 && labels[(y - 1) * w + x - 1] != 0 {
                        neighbors.push(labels[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w && labels[(y - 1) * w + x + 1] != 0 {
                        neighbors.push(labels[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = match neighbors.iter().min() {
                None => uf.make(),
                Some(&min) => {
                    for &n in &neighbors {
                        uf.union(min, n);
                    }
                    min
                }
            };
            labels[y * w + x] = label;
        }
    }

    // Pass 2: resolve to roots, renumber contiguously in scan order.
    let mut remap: Vec<u32> = vec![0; uf.parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = uf.find(*l);
        if remap[root as usize] == 0 {
            next += 1;
            remap[root as usize] = next;
        }
        *l = remap[root as usize];
    }

    let mut components: Vec<Component> = (1..=next)
        .map(|id| Component { id, pixels: Vec::new(), area: 0, centroid: (0.0, 0.0) })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l != 0 {
                components[(l - 1) as usize].pixels.push((y, x));
            }
        }
    }
    for comp in &mut components {
        comp.area = comp.pixels.len();
        comp.centroid = centroid(&comp.pixels).expect("component is non-empty");
    }

    ComponentMap { h, w, labels, components }
}

/// Arithmetic mean of pixel coordinates as (row, col).
pub fn centroid(pixels: &[(usize, usize)]) -> Result<(f64, f64)> {
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("centroid of empty pixel set".into()));
    }
    let n = pixels.len() as f64;
    let sy: f64 = pixels.iter().map(|&(y, _)| y as f64).sum();
    let sx: f64 = pixels.iter().map(|&(_, x)| x as f64).sum();
    Ok((sy / n, sx / n))
}

/// A d x d crop around a (possibly fractional) center. Out-of-frame cells
/// are zero-filled; `origin` is the frame coordinate of the patch's (0,0)
/// cell and may be negative.
#[derive(Clone, Debug)]
pub struct CropPatch {
    pub patch: Grid,
    pub origin: (isize, isize),
}

pub fn crop_neighborhood(map: &Grid, center: (f64, f64), d: usize) -> Result<CropPatch> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidArgument(format!("crop size must be odd and >= 3, got {d}")));
    }
    let cy = center.0.round() as isize;
    let cx = center.1.round() as isize;
    let half = (d / 2) as isize;
    let origin = (cy - half, cx - half);
    let mut patch = Grid::zeros(d, d);
    for py in 0..d {
        for px in 0..d {
            let sy = origin.0 + py as isize;
            let sx = origin.1 + px as isize;
            if sy >= 0 && sy < map.height() as isize && sx >= 0 && sx < map.width() as isize {
                patch.set(py, px, map.at(sy as usize, sx as usize));
            }
        }
    }
    Ok(CropPatch { patch, origin })
}

/// Write a patch back to the source coordinates it was cropped from.
/// Out-of-frame patch cells are dropped.
pub fn paste_back(map: &mut Grid, patch: &Grid, origin: (isize, isize)) {
    for py in 0..patch.height() {
        for px in 0..patch.width() {
            let sy = origin.0 + py as isize;
            let sx = origin.1 + px as isize;
            if sy >= 0 && sy < map.height() as isize && sx >= 0 && sx < map.width() as isize {
                map.set(sy as usize, sx as usize, patch.at(py, px));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_str(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = Mask::zeros(h, w);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                m.set(y, x, ch == '#');
            }
        }
        m
    }

    #[test]
    fn single_pixel_is_one_component() {
        let m = mask_from_str(&["...", ".#.", "..."]);
        let cm = connected_components(&m, Connectivity::Eight);
        assert_eq!(cm.components().len(), 1);
        assert_eq!(cm.components()[0].area, 1);
        assert_eq!(cm.components()[0].centroid, (1.0, 1.0));
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = mask_from_str(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Eight).components().len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).components().len(), 2);
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&[(3, 7)]).unwrap(), (3.0, 7.0));
        assert_eq!(centroid(&[(0, 0), (0, 2)]).unwrap(), (0.0, 1.0));
        assert!(centroid(&[]).is_err());
    }

    #[test]
    fn crop_mid_frame_is_plain_subgrid() {
        let mut g = Grid::zeros(5, 5);
        for y in 0..5 {
            for x in 0..5 {
                g.set(y, x, (y * 5 + x) as f64);
            }
        }
        let crop = crop_neighborhood(&g, (2.0, 2.0), 3).unwrap();
        assert_eq!(crop.origin, (1, 1));
        assert_eq!(crop.patch.at(0, 0), g.at(1, 1));
        assert_eq!(crop.patch.at(2, 2), g.at(3, 3));
    }

    #[test]
    fn crop_at_corner_is_zero_padded() {
        let g = Grid::filled(6, 6, 1.0);
        let crop = crop_neighborhood(&g, (0.0, 0.0), 5).unwrap();
        assert_eq!(crop.origin, (-2, -2));
        // Top-left quadrant beyond the frame is zero.
        assert_eq!(crop.patch.at(0, 0), 0.0);
        assert_eq!(crop.patch.at(1, 1), 0.0);
        // In-frame 3x3 corner is real data.
        assert_eq!(crop.patch.at(2, 2), 1.0);
        assert_eq!(crop.patch.at(4, 4), 1.0);
    }

    #[test]
    fn crop_paste_round_trip_is_identity() {
        let mut g = Grid::zeros(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                g.set(y, x, (y * 8 + x) as f64 * 0.01);
            }
        }
        let original = g.clone();
        let crop = crop_neighborhood(&g, (1.0, 6.0), 5).unwrap();
        paste_back(&mut g, &crop.patch, crop.origin);
        // Paste of an unmodified patch restores in-frame cells exactly, and the
        // zero-padded out-of-frame cells are dropped on paste.
        assert_eq!(g, original);
    }

    #[test]
    fn crop_rejects_even_size() {
        let g = Grid::zeros(4, 4);
        assert!(crop_neighborhood(&g, (2.0, 2.0), 4).is_err());
        assert!(crop_neighborhood(&g, (2.0, 2.0), 1).is_err());
    }
}
