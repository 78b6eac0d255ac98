//! Deterministic synthetic few-shot dataset: geometric shape classes
//! rendered into textured scenes with binary instance masks, plus the
//! episodic sampler and training-time augmentation.
//!
//! Train and test class sets are disjoint; the fold index rotates which
//! pair of classes is held out. Everything is a pure function of the seed.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{chacha, mix};

pub const NUM_CLASSES: usize = 8;
pub const NUM_FOLDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("split: unknown value '{other}'"))),
        }
    }
}

/// Shape vocabulary. Class ids index into this list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Ring,
    Cross,
    Star,
    Bar,
    Ellipse,
}

pub const SHAPES: [ShapeKind; NUM_CLASSES] = [
    ShapeKind::Circle,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Ring,
    ShapeKind::Cross,
    ShapeKind::Star,
    ShapeKind::Bar,
    ShapeKind::Ellipse,
];

const BASE_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.85, 0.25, 0.25],
    [0.25, 0.75, 0.30],
    [0.25, 0.35, 0.85],
    [0.85, 0.75, 0.20],
    [0.70, 0.30, 0.80],
    [0.20, 0.75, 0.75],
    [0.90, 0.55, 0.25],
    [0.55, 0.55, 0.55],
];

#[derive(Debug, Clone, Copy)]
pub struct DataConfig {
    pub image_size: usize,
    pub fold: usize,
}

impl DataConfig {
    pub fn new(image_size: usize, fold: usize) -> Result<Self> {
        if image_size % 32 != 0 || image_size == 0 {
            return Err(Error::config(format!(
                "image_size: {image_size} is not divisible by 32"
            )));
        }
        if fold >= NUM_FOLDS {
            return Err(Error::config(format!("fold: {fold} out of range 0..{NUM_FOLDS}")));
        }
        Ok(DataConfig { image_size, fold })
    }

    /// Two held-out classes per fold; the remaining six train.
    pub fn classes(&self, split: Split) -> Vec<usize> {
        let test = [2 * self.fold, 2 * self.fold + 1];
        match split {
            Split::Test => test.to_vec(),
            Split::Train => (0..NUM_CLASSES).filter(|c| !test.contains(c)).collect(),
        }
    }
}

/// A rendered scene: `[3, s, s]` image in [0,1] plus per-object binary
/// masks (mutually disjoint; later objects occlude earlier ones).
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Vec<f64>,
    pub objects: Vec<(usize, Vec<f64>)>,
    pub size: usize,
}

impl Scene {
    /// Union of all instances of `class`.
    pub fn class_mask(&self, class: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.size * self.size];
        for (c, m) in &self.objects {
            if *c == class {
                for (o, v) in out.iter_mut().zip(m) {
                    if *v > 0.5 {
                        *o = 1.0;
                    }
                }
            }
        }
        out
    }
}

/// One few-shot task: k support (image, class-mask) pairs plus a query.
#[derive(Debug, Clone)]
pub struct EpisodeSample {
    pub class_id: usize,
    pub supports: Vec<(Vec<f64>, Vec<f64>)>,
    pub query: Vec<f64>,
    pub query_gt: Vec<f64>,
    /// All instance masks of the query scene; consumed only by joint
    /// training, which also supervises the proposal head.
    pub query_objects: Vec<(usize, Vec<f64>)>,
    pub size: usize,
}

fn shape_contains(kind: ShapeKind, dx: f64, dy: f64, r: f64) -> bool {
    let dist = (dx * dx + dy * dy).sqrt();
    match kind {
        ShapeKind::Circle => dist <= r,
        ShapeKind::Square => dx.abs().max(dy.abs()) <= 0.8 * r,
        ShapeKind::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) * 0.5,
        ShapeKind::Ring => dist <= r && dist >= 0.55 * r,
        ShapeKind::Cross => {
            (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r)
        }
        ShapeKind::Star => {
            let theta = dy.atan2(dx);
            dist <= r * (0.45 + 0.55 * (0.5 + 0.5 * (5.0 * theta).cos()))
        }
        ShapeKind::Bar => dx.abs() <= r && dy.abs() <= r / 3.0,
        ShapeKind::Ellipse => {
            let a = dx / r;
            let b = dy / (0.55 * r);
            a * a + b * b <= 1.0
        }
    }
}

fn rasterize(kind: ShapeKind, cx: f64, cy: f64, r: f64, size: usize) -> Vec<f64> {
    let mut mask = vec![0.0; size * size];
    let y0 = ((cy - r).floor().max(0.0)) as usize;
    let y1 = ((cy + r).ceil().min(size as f64 - 1.0)) as usize;
    let x0 = ((cx - r).floor().max(0.0)) as usize;
    let x1 = ((cx + r).ceil().min(size as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if shape_contains(kind, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                mask[y * size + x] = 1.0;
            }
        }
    }
    mask
}

fn render(rng: &mut ChaCha8Rng, cfg: &DataConfig, split: Split, forced_class: Option<usize>) -> Scene {
    let s = cfg.image_size;
    let sf = s as f64;
    let classes = cfg.classes(split);

    // Textured background: a smooth two-way gradient plus pixel noise.
    let base: [f64; 3] = [
        rng.gen_range(0.15..0.45),
        rng.gen_range(0.15..0.45),
        rng.gen_range(0.15..0.45),
    ];
    let gx: f64 = rng.gen_range(-0.12..0.12);
    let gy: f64 = rng.gen_range(-0.12..0.12);
    let mut image = vec![0.0; 3 * s * s];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let grad = gx * (x as f64 / sf - 0.5) + gy * (y as f64 / sf - 0.5);
                let noise = rng.gen_range(-0.04..0.04);
                image[c * s * s + y * s + x] = (base[c] + grad + noise).clamp(0.0, 1.0);
            }
        }
    }

    let n_objects = rng.gen_range(1..=4usize);
    let r_lo = sf / 10.0;
    let r_hi = sf / 5.0;
    let mut objects: Vec<(usize, Vec<f64>)> = Vec::new();
    for i in 0..n_objects {
        let class = match (i, forced_class) {
            (0, Some(c)) => c,
            _ => classes[rng.gen_range(0..classes.len())],
        };
        // A placement may occlude earlier objects, but never by more than a
        // quarter of what an object still has.
        let mut placed = None;
        for _attempt in 0..8 {
            let r = rng.gen_range(r_lo..r_hi);
            let cx = rng.gen_range(r + 1.0..sf - r - 1.0);
            let cy = rng.gen_range(r + 1.0..sf - r - 1.0);
            let mask = rasterize(SHAPES[class], cx, cy, r, s);
            let ok = objects.iter().all(|(_, prior)| {
                let count = prior.iter().filter(|&&v| v > 0.5).count();
                let overlap = prior
                    .iter()
                    .zip(&mask)
                    .filter(|(&p, &m)| p > 0.5 && m > 0.5)
                    .count();
                overlap * 4 <= count
            });
            if ok {
                placed = Some(mask);
                break;
            }
        }
        let mask = match placed {
            Some(m) => m,
            None => continue,
        };
        for (_, prior) in &mut objects {
            for (p, m) in prior.iter_mut().zip(&mask) {
                if *m > 0.5 {
                    *p = 0.0;
                }
            }
        }
        // Paint the object: jittered class color with mild pixel noise.
        let color: Vec<f64> = BASE_COLORS[class]
            .iter()
            .map(|&c| (c + rng.gen_range(-0.12..0.12)).clamp(0.05, 0.95))
            .collect();
        for (idx, &m) in mask.iter().enumerate() {
            if m > 0.5 {
                for c in 0..3 {
                    let noise = rng.gen_range(-0.03..0.03);
                    image[c * s * s + idx] = (color[c] + noise).clamp(0.0, 1.0);
                }
            }
        }
        objects.push((class, mask));
    }
    Scene { image, objects, size: s }
}

/// Deterministic scene from `seed`, drawing classes only from `split`.
pub fn generate_scene(seed: u64, split: Split, cfg: &DataConfig) -> Scene {
    let mut rng = chacha(mix(seed, 0x5ce0));
    render(&mut rng, cfg, split, None)
}

/// Scene guaranteed to contain at least one instance of `class` with a
/// nonempty visible mask.
fn generate_scene_with_class(seed: u64, split: Split, class: usize, cfg: &DataConfig) -> Scene {
    for round in 0..16 {
        let mut rng = chacha(mix(seed, 0x5ce1 + round));
        let scene = render(&mut rng, cfg, split, Some(class));
        if scene.class_mask(class).iter().any(|&v| v > 0.5) {
            return scene;
        }
    }
    unreachable!("occlusion budget guarantees a visible forced object");
}

const QUERY_SALT: u64 = 0x00c0_ffee;

/// k-shot episode. Prefix-stable: the first support of a k=5 episode is
/// identical to the support of the k=1 episode for the same seed.
pub fn sample_episode(seed: u64, split: Split, k: usize, cfg: &DataConfig) -> Result<EpisodeSample> {
    if k == 0 {
        return Err(Error::config("shots: k must be >= 1"));
    }
    let classes = cfg.classes(split);
    let mut rng = chacha(mix(seed, 0xc1a5));
    let class_id = classes[rng.gen_range(0..classes.len())];

    let supports = (0..k)
        .map(|i| {
            let scene = generate_scene_with_class(mix(seed, 0x10 + i as u64), split, class_id, cfg);
            let mask = scene.class_mask(class_id);
            (scene.image, mask)
        })
        .collect();
    let query_scene = generate_scene_with_class(mix(seed, QUERY_SALT), split, class_id, cfg);
    let query_gt = query_scene.class_mask(class_id);
    Ok(EpisodeSample {
        class_id,
        supports,
        query: query_scene.image.clone(),
        query_gt,
        query_objects: query_scene.objects,
        size: cfg.image_size,
    })
}

// ── Augmentation ────────────────────────────────────────────────────

/// Geometric transform shared by an image and its mask.
#[derive(Debug, Clone, Copy)]
pub struct Transform {
    pub flip: bool,
    /// Crop window (y0, x0, ch, cw), resized back to the full frame.
    pub crop: (usize, usize, usize, usize),
}

impl Transform {
    pub fn identity(size: usize) -> Self {
        Transform { flip: false, crop: (0, 0, size, size) }
    }

    fn sample(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let flip = rng.gen_bool(0.5);
        let scale: f64 = rng.gen_range(0.8..=1.0);
        let ch = ((size as f64 * scale).round() as usize).clamp(1, size);
        let cw = ch;
        let y0 = rng.gen_range(0..=size - ch);
        let x0 = rng.gen_range(0..=size - cw);
        Transform { flip, crop: (y0, x0, ch, cw) }
    }
}

pub fn hflip_mask(mask: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; mask.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = mask[y * size + (size - 1 - x)];
        }
    }
    out
}

pub fn hflip_image(image: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; image.len()];
    for c in 0..3 {
        let plane = &image[c * size * size..(c + 1) * size * size];
        let flipped = hflip_mask(plane, size);
        out[c * size * size..(c + 1) * size * size].copy_from_slice(&flipped);
    }
    out
}

/// Nearest-neighbor crop-and-resize; keeps masks binary.
fn crop_resize_nearest(plane: &[f64], size: usize, crop: (usize, usize, usize, usize)) -> Vec<f64> {
    let (y0, x0, ch, cw) = crop;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let sy = y0 + (((y as f64 + 0.5) * ch as f64 / size as f64) as usize).min(ch - 1);
        for x in 0..size {
            let sx = x0 + (((x as f64 + 0.5) * cw as f64 / size as f64) as usize).min(cw - 1);
            out[y * size + x] = plane[sy * size + sx];
        }
    }
    out
}

/// Bilinear crop-and-resize for image planes.
fn crop_resize_bilinear(plane: &[f64], size: usize, crop: (usize, usize, usize, usize)) -> Vec<f64> {
    let (y0, x0, ch, cw) = crop;
    let ys = crate::tensor::lerp_taps(ch, size);
    let xs = crate::tensor::lerp_taps(cw, size);
    let mut out = vec![0.0; size * size];
    for (y, &(ty0, ty1, wy)) in ys.iter().enumerate() {
        for (x, &(tx0, tx1, wx)) in xs.iter().enumerate() {
            let at = |yy: usize, xx: usize| plane[(y0 + yy) * size + (x0 + xx)];
            let top = at(ty0, tx0) + (at(ty0, tx1) - at(ty0, tx0)) * wx;
            let bot = at(ty1, tx0) + (at(ty1, tx1) - at(ty1, tx0)) * wx;
            out[y * size + x] = top + (bot - top) * wy;
        }
    }
    out
}

pub fn apply_to_mask(t: &Transform, mask: &[f64], size: usize) -> Vec<f64> {
    let m = if t.crop == (0, 0, size, size) {
        mask.to_vec()
    } else {
        crop_resize_nearest(mask, size, t.crop)
    };
    if t.flip {
        hflip_mask(&m, size)
    } else {
        m
    }
}

pub fn apply_to_image(t: &Transform, image: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; image.len()];
    for c in 0..3 {
        let plane = &image[c * size * size..(c + 1) * size * size];
        let resized = if t.crop == (0, 0, size, size) {
            plane.to_vec()
        } else {
            crop_resize_bilinear(plane, size, t.crop)
        };
        let fin = if t.flip { hflip_mask(&resized, size) } else { resized };
        out[c * size * size..(c + 1) * size * size].copy_from_slice(&fin);
    }
    out
}

/// Training augmentation: per-image horizontal flip (p = 0.5) and random
/// crop-and-resize (scale in [0.8, 1.0]), identical for an image and its
/// mask. A transform that would empty a mask is resampled up to 10 times,
/// then replaced by the identity.
pub fn augment(sample: &EpisodeSample, seed: u64) -> EpisodeSample {
    let size = sample.size;
    let mut out = sample.clone();
    let mut pairs: Vec<(&mut Vec<f64>, &mut Vec<f64>)> = Vec::new();
    for (img, mask) in &mut out.supports {
        pairs.push((img, mask));
    }
    pairs.push((&mut out.query, &mut out.query_gt));
    let k = pairs.len();
    let mut query_transform = Transform::identity(size);
    for (i, (img, mask)) in pairs.into_iter().enumerate() {
        let mut rng = chacha(mix(seed, 0xa6_0000 + i as u64));
        let mut chosen = Transform::identity(size);
        for _try in 0..10 {
            let t = Transform::sample(&mut rng, size);
            let m = apply_to_mask(&t, mask, size);
            if m.iter().any(|&v| v > 0.5) {
                chosen = t;
                break;
            }
        }
        *img = apply_to_image(&chosen, img, size);
        *mask = apply_to_mask(&chosen, mask, size);
        if i == k - 1 {
            query_transform = chosen;
        }
    }
    // Instance masks ride along with the query transform; objects the crop
    // pushed out of frame are dropped. The class union stays nonempty, so
    // at least one object survives.
    out.query_objects = out
        .query_objects
        .iter()
        .map(|(c, m)| (*c, apply_to_mask(&query_transform, m, size)))
        .filter(|(_, m)| m.iter().any(|&v| v > 0.5))
        .collect();
    out
}

/// Scene-level augmentation for proposal training: one shared transform
/// for the image and every instance mask, resampled (up to 10 tries) if it
/// would empty any mask, then identity.
pub fn augment_scene(scene: &Scene, seed: u64) -> Scene {
    let size = scene.size;
    let mut rng = chacha(mix(seed, 0xa6_5000));
    let mut chosen = Transform::identity(size);
    for _try in 0..10 {
        let t = Transform::sample(&mut rng, size);
        let ok = scene
            .objects
            .iter()
            .all(|(_, m)| apply_to_mask(&t, m, size).iter().any(|&v| v > 0.5));
        if ok {
            chosen = t;
            break;
        }
    }
    Scene {
        image: apply_to_image(&chosen, &scene.image, size),
        objects: scene
            .objects
            .iter()
            .map(|(c, m)| (*c, apply_to_mask(&chosen, m, size)))
            .collect(),
        size,
    }
}

// ── Episode dump ────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub class_id: usize,
    pub seed: u64,
    pub split: Split,
    pub k: usize,
    pub size: usize,
}

fn write_png_rgb(path: &Path, image: &[f64], size: usize) -> Result<()> {
    let mut buf = image::RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let px = [
                (image[y * size + x] * 255.0).round() as u8,
                (image[size * size + y * size + x] * 255.0).round() as u8,
                (image[2 * size * size + y * size + x] * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn write_png_mask(path: &Path, mask: &[f64], size: usize) -> Result<()> {
    let mut buf = image::GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let v = if mask[y * size + x] > 0.5 { 255u8 } else { 0u8 };
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// One directory per episode: lossless rasters plus a metadata record.
pub fn dump_episode(dir: &Path, sample: &EpisodeSample, meta: &EpisodeMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (img, mask)) in sample.supports.iter().enumerate() {
        write_png_rgb(&dir.join(format!("support_{i}.png")), img, sample.size)?;
        write_png_mask(&dir.join(format!("support_{i}_mask.png")), mask, sample.size)?;
    }
    write_png_rgb(&dir.join("query.png"), &sample.query, sample.size)?;
    write_png_mask(&dir.join("query_mask.png"), &sample.query_gt, sample.size)?;
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DataConfig {
        DataConfig::new(64, 0).unwrap()
    }

    #[test]
    fn folds_partition_classes_disjointly() {
        for fold in 0..NUM_FOLDS {
            let c = DataConfig::new(64, fold).unwrap();
            let train = c.classes(Split::Train);
            let test = c.classes(Split::Test);
            assert_eq!(train.len(), 6);
            assert_eq!(test.len(), 2);
            assert!(train.iter().all(|t| !test.contains(t)));
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = generate_scene(42, Split::Train, &cfg());
        let b = generate_scene(42, Split::Train, &cfg());
        assert_eq!(a.image, b.image);
        assert_eq!(a.objects.len(), b.objects.len());
        for ((c1, m1), (c2, m2)) in a.objects.iter().zip(&b.objects) {
            assert_eq!(c1, c2);
            assert_eq!(m1, m2);
        }
    }

    #[test]
    fn split_classes_respected_over_many_seeds() {
        let c = cfg();
        let test_classes = c.classes(Split::Test);
        for seed in 0..1000 {
            let scene = generate_scene(seed, Split::Test, &c);
            for (class, _) in &scene.objects {
                assert!(test_classes.contains(class), "seed {seed} leaked class {class}");
            }
            let scene = generate_scene(seed, Split::Train, &c);
            for (class, _) in &scene.objects {
                assert!(!test_classes.contains(class), "seed {seed} leaked test class {class}");
            }
        }
    }

    #[test]
    fn object_masks_are_disjoint_and_leave_background() {
        let c = cfg();
        for seed in 0..200 {
            let scene = generate_scene(seed, Split::Train, &c);
            let mut union = vec![0.0; 64 * 64];
            for (_, m) in &scene.objects {
                for (u, &v) in union.iter_mut().zip(m) {
                    if v > 0.5 {
                        assert_eq!(*u, 0.0, "masks overlap at seed {seed}");
                        *u = 1.0;
                    }
                }
            }
            let covered = union.iter().filter(|&&v| v > 0.5).count();
            assert!(covered < 64 * 64, "no background at seed {seed}");
            assert!(!scene.objects.is_empty() && scene.objects.len() <= 4);
        }
    }

    #[test]
    fn episodes_are_nonempty_and_on_class() {
        let c = cfg();
        for seed in 0..100 {
            let ep = sample_episode(seed, Split::Test, 3, &c).unwrap();
            assert!(c.classes(Split::Test).contains(&ep.class_id));
            assert_eq!(ep.supports.len(), 3);
            for (_, mask) in &ep.supports {
                assert!(mask.iter().any(|&v| v > 0.5), "empty support mask at {seed}");
            }
            assert!(ep.query_gt.iter().any(|&v| v > 0.5), "empty query mask at {seed}");
        }
    }

    #[test]
    fn episode_sampling_is_prefix_stable() {
        let c = cfg();
        let one = sample_episode(9, Split::Train, 1, &c).unwrap();
        let five = sample_episode(9, Split::Train, 5, &c).unwrap();
        assert_eq!(one.class_id, five.class_id);
        assert_eq!(one.supports[0].0, five.supports[0].0);
        assert_eq!(one.supports[0].1, five.supports[0].1);
        assert_eq!(one.query, five.query);
    }

    #[test]
    fn zero_shots_is_config_error() {
        assert!(matches!(
            sample_episode(0, Split::Train, 0, &cfg()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn flip_is_an_involution_and_preserves_mask_area() {
        let c = cfg();
        let ep = sample_episode(17, Split::Train, 1, &c).unwrap();
        let mask = &ep.query_gt;
        let flipped = hflip_mask(mask, 64);
        let back = hflip_mask(&flipped, 64);
        assert_eq!(&back, mask);
        let area = |m: &[f64]| m.iter().filter(|&&v| v > 0.5).count();
        assert_eq!(area(mask), area(&flipped));
        let img = hflip_image(&hflip_image(&ep.query, 64), 64);
        assert_eq!(img, ep.query);
    }

    #[test]
    fn identity_transform_is_identity() {
        let c = cfg();
        let ep = sample_episode(18, Split::Train, 1, &c).unwrap();
        let t = Transform::identity(64);
        assert_eq!(apply_to_mask(&t, &ep.query_gt, 64), ep.query_gt);
        assert_eq!(apply_to_image(&t, &ep.query, 64), ep.query);
    }

    #[test]
    fn augment_never_empties_masks_and_stays_binary() {
        let c = cfg();
        for seed in 0..50 {
            let ep = sample_episode(seed, Split::Train, 2, &c).unwrap();
            let aug = augment(&ep, seed * 7 + 1);
            let mut masks: Vec<&Vec<f64>> = aug.supports.iter().map(|(_, m)| m).collect();
            masks.push(&aug.query_gt);
            for mask in masks {
                assert!(mask.iter().any(|&v| v > 0.5));
                assert!(mask.iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn mask_and_image_transforms_commute() {
        // Transforming the mask alone equals the mask that rides along with
        // the scene transform.
        let c = cfg();
        let ep = sample_episode(23, Split::Train, 1, &c).unwrap();
        let t = Transform { flip: true, crop: (3, 5, 52, 52) };
        let mask_direct = apply_to_mask(&t, &ep.query_gt, 64);
        let mut pair = ep.clone();
        pair.query = apply_to_image(&t, &ep.query, 64);
        pair.query_gt = apply_to_mask(&t, &ep.query_gt, 64);
        assert_eq!(mask_direct, pair.query_gt);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let c = cfg();
        let ep = sample_episode(31, Split::Train, 2, &c).unwrap();
        let a = augment(&ep, 5);
        let b = augment(&ep, 5);
        assert_eq!(a.query, b.query);
        assert_eq!(a.supports[1].0, b.supports[1].0);
    }
}
