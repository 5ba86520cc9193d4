//! Deterministic synthetic scenes with small objects on a textured
//! background. Three classes: square, disc and cross.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::detector::{write_detections, BBox, DetectionBox, GtBox};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 128;
pub const MIN_SIDE: f64 = 4.0;
pub const MAX_SIDE: f64 = 24.0;
pub const SMALL_SIDE: f64 = 12.0;
pub const MAX_OBJECTS: usize = 6;
pub const N_CLASSES: usize = 3;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Disc,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Disc, ShapeKind::Cross];

    pub fn class_idx(self) -> usize {
        self as usize
    }

    pub fn from_class(c: usize) -> Option<Self> {
        Self::ALL.get(c).copied()
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            ShapeKind::Square => [0.95, 0.25, 0.20],
            ShapeKind::Disc => [0.10, 0.80, 0.15],
            ShapeKind::Cross => [0.90, 0.90, 0.95],
        }
    }

    fn contains(self, b: &BBox, x: f64, y: f64) -> bool {
        let (cx, cy) = b.center();
        let half = 0.5 * b.width();
        match self {
            ShapeKind::Square => x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max,
            ShapeKind::Disc => (x - cx).powi(2) + (y - cy).powi(2) <= half * half,
            ShapeKind::Cross => {
                let arm = b.width() / 6.0;
                ((x - cx).abs() <= arm && (y - cy).abs() <= half) || ((y - cy).abs() <= arm && (x - cx).abs() <= half)
            }
        }
    }

    /// Fraction of pixel `(px, py)` covered by the shape filling `b`.
    pub fn coverage(self, b: &BBox, px: usize, py: usize) -> f64 {
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = px as f64 + (sx as f64 + 0.5) * step;
                let y = py as f64 + (sy as f64 + 0.5) * step;
                if self.contains(b, x, y) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    /// `(1, 3, 128, 128)`, values in `[0, 1]`.
    pub image: Tensor,
    pub boxes: Vec<GtBox>,
    pub seed: u64,
}

fn smoothed_noise(rng: &mut impl Rng, n: usize, radius: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for d in -(radius as isize)..=radius as isize {
                    let (xx, yy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if xx >= 0 && yy >= 0 && (xx as usize) < n && (yy as usize) < n {
                        acc += src[yy as usize * n + xx as usize];
                        cnt += 1.0;
                    }
                }
                out[y * n + x] = acc / cnt;
            }
        }
        out
    };
    blur(&blur(&raw, true), false)
}

/// One scene, fully determined by `seed`.
pub fn generate_scene(seed: u64) -> SynthScene {
    let mut rng = seed::stream(seed, "synth-scene");
    let n = IMAGE_SIZE;
    let mut img = vec![0.0; 3 * n * n];
    for c in 0..3 {
        let noise = smoothed_noise(&mut rng, n, 2);
        for (i, v) in noise.iter().enumerate() {
            // Box-blurred uniform noise concentrates around 0.5.
            img[c * n * n + i] = (0.5 + 0.6 * (v - 0.5)).clamp(0.0, 1.0);
        }
    }

    let count = rng.random_range(1..=MAX_OBJECTS);
    let mut boxes: Vec<GtBox> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..50 {
            let side = if rng.random_bool(0.5) {
                rng.random_range(MIN_SIDE..=SMALL_SIDE)
            } else {
                rng.random_range(SMALL_SIDE..=MAX_SIDE)
            };
            let x0 = rng.random_range(0.5..(n as f64 - 0.5 - side));
            let y0 = rng.random_range(0.5..(n as f64 - 0.5 - side));
            let b = BBox::new(x0, y0, x0 + side, y0 + side);
            let grown = BBox::new(b.x_min - 2.0, b.y_min - 2.0, b.x_max + 2.0, b.y_max + 2.0);
            if boxes.iter().any(|g| g.bounds.iou(&grown) > 0.0) {
                continue;
            }
            let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
            let jitter: f64 = rng.random_range(-0.05..0.05);
            let color = kind.base_color().map(|v| (v + jitter).clamp(0.0, 1.0));
            let (px0, px1) = (b.x_min.floor() as usize, (b.x_max.ceil() as usize).min(n - 1));
            let (py0, py1) = (b.y_min.floor() as usize, (b.y_max.ceil() as usize).min(n - 1));
            for py in py0..=py1 {
                for px in px0..=px1 {
                    let cov = kind.coverage(&b, px, py);
                    if cov == 0.0 {
                        continue;
                    }
                    for (c, col) in color.iter().enumerate() {
                        let v = &mut img[c * n * n + py * n + px];
                        *v = (1.0 - cov) * *v + cov * col;
                    }
                }
            }
            boxes.push(GtBox {
                bounds: b,
                class_idx: kind.class_idx(),
            });
            break;
        }
    }
    SynthScene {
        image: Tensor::from_vec([1, 3, n, n], img).expect("image shape"),
        boxes,
        seed,
    }
}

/// A named range of scene seeds `base_seed..base_seed + size`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub size: usize,
    pub base_seed: u64,
}

impl Split {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.base_seed..self.base_seed + self.size as u64
    }

    pub fn scene(&self, index: usize) -> SynthScene {
        assert!(index < self.size, "scene {index} outside split of {}", self.size);
        generate_scene(self.base_seed + index as u64)
    }

    pub fn iter(&self) -> impl Iterator<Item = SynthScene> + '_ {
        self.seeds().map(generate_scene)
    }
}

pub fn generate_split(name: &str, size: usize, base_seed: u64) -> Result<Split> {
    if size == 0 {
        return Err(Error::Config(format!("split `{name}` must contain at least one scene")));
    }
    base_seed
        .checked_add(size as u64)
        .ok_or_else(|| Error::Config(format!("split `{name}` seed range overflows")))?;
    Ok(Split {
        name: name.to_string(),
        size,
        base_seed,
    })
}

/// Fails if any two splits share a scene seed.
pub fn check_disjoint(splits: &[&Split]) -> Result<()> {
    for (i, a) in splits.iter().enumerate() {
        for b in &splits[i + 1..] {
            let (ra, rb) = (a.seeds(), b.seeds());
            if ra.start < rb.end && rb.start < ra.end {
                return Err(Error::Config(format!(
                    "splits `{}` ({:?}) and `{}` ({:?}) overlap",
                    a.name, ra, b.name, rb
                )));
            }
        }
    }
    Ok(())
}

/// Writes `scene_<seed>.pfm` (little-endian colour float map) and
/// `scene_<seed>.txt` (ground truth in the detection dump format).
pub fn export_scene(scene: &SynthScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = scene.image.shape();
    let (h, w) = s.spatial();
    let mut bytes = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                bytes.extend_from_slice(&(scene.image.at(0, c, y, x) as f32).to_le_bytes());
            }
        }
    }
    let pfm = dir.join(format!("scene_{}.pfm", scene.seed));
    fs::write(&pfm, bytes).map_err(|e| Error::io(&pfm, e))?;

    let dets: Vec<DetectionBox> = scene
        .boxes
        .iter()
        .map(|g| DetectionBox {
            bounds: g.bounds,
            class_idx: g.class_idx,
            score: 1.0,
        })
        .collect();
    let mut text = String::new();
    write_detections(&mut text, scene.seed as usize, &dets);
    let txt = dir.join(format!("scene_{}.txt", scene.seed));
    fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(42);
        let b = generate_scene(42);
        assert!(a.image.bitwise_eq(&b.image));
        assert_eq!(a.boxes, b.boxes);
        assert!(!generate_scene(43).image.bitwise_eq(&a.image));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let train = generate_split("train", 512, 0).unwrap();
        let val = generate_split("val", 128, 10_000).unwrap();
        check_disjoint(&[&train, &val]).unwrap();
        let bad = generate_split("val", 128, 500).unwrap();
        assert!(check_disjoint(&[&train, &bad]).is_err());
        assert!(generate_split("empty", 0, 0).is_err());
    }
}
