use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pgm::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

pub const SIDE: usize = 64;
/// Range of joint-space widths in pixels, widest for grade 0.
pub const GAP_RANGE: (f64, f64) = (2.5, 11.5);
/// Unused width between neighbouring grade intervals.
pub const GAP_SEPARATION: f64 = 1.0;
const FEMUR_TOP: f64 = 2.0;
const TIBIA_BOTTOM: f64 = 62.0;
const CORNER_RADIUS: f64 = 5.0;
const BLUR_SIGMA: f64 = 2.5;
const BACKGROUND: f64 = 0.12;
const BONE: f64 = 0.62;
/// Half-range of the per-sample bone intensity.
const BONE_JITTER: f64 = 0.2;
/// Range of the per-sample soft-tissue brightening.
const SOFT_JITTER: f64 = 0.3;
const SOFT_CELL: f64 = 16.0;
const TRABECULAR_CELL: f64 = 3.0;
const TEXTURE_AMP: f64 = 0.1;
/// Largest fraction of the bone intensity the joint space can take on.
const MAX_GAP_FILL: f64 = 0.6;
const TEMPLATE_SAMPLES: usize = 50;
const TEMPLATE_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise_level: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            train: 600,
            val: 200,
            test: 200,
            noise_level: 0.15,
            distractors: 4,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be ≥ 2".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise_level {} outside [0, 1]", self.noise_level)));
        }
        for (name, n) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if n < self.num_classes {
                return Err(Error::Config(format!(
                    "{name} split needs at least {} samples",
                    self.num_classes
                )));
            }
        }
        gap_interval(0, self.num_classes).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    pub mask_u: BinaryMask,
    pub mask_l: BinaryMask,
    pub candidates: Vec<BinaryMask>,
    pub label: usize,
    /// Joint-space width the sample was drawn with.
    pub gap: f64,
    pub rng_stream: u64,
}

/// Joint-space interval of `grade`; intervals shrink towards higher grades.
pub fn gap_interval(grade: usize, num_classes: usize) -> Result<(f64, f64)> {
    if grade >= num_classes {
        return Err(Error::Label {
            label: grade,
            classes: num_classes,
        });
    }
    let (lo, hi) = GAP_RANGE;
    let width = (hi - lo - (num_classes - 1) as f64 * GAP_SEPARATION) / num_classes as f64;
    if width <= 0.0 {
        return Err(Error::Config(format!("{num_classes} grades do not fit the gap range")));
    }
    let slot = (num_classes - 1 - grade) as f64;
    let start = lo + slot * (width + GAP_SEPARATION);
    Ok((start, start + width))
}

/// Grade assigned by thresholding a joint-space width at the interval midpoints.
pub fn grade_from_gap(gap: f64, num_classes: usize) -> usize {
    (0..num_classes)
        .find(|&g| {
            gap_interval(g, num_classes).map_or(false, |(lo, _)| gap >= lo - GAP_SEPARATION / 2.0)
        })
        .unwrap_or(num_classes - 1)
}

struct Bone {
    center: f64,
    half_width: f64,
}

struct Shape {
    femur: Bone,
    tibia: Bone,
    /// Joint line of the femur surface (bottom) and tibia surface (top).
    joint_u: f64,
    joint_l: f64,
    harmonics: [(f64, f64); 3],
    osteophytes: Vec<(f64, f64, f64)>,
}

impl Shape {
    fn profile(&self, x: f64) -> f64 {
        let left = self.femur.center - self.femur.half_width;
        let span = 2.0 * self.femur.half_width;
        self.harmonics
            .iter()
            .enumerate()
            .map(|(m, &(amp, phase))| {
                amp * ((m + 1) as f64 * std::f64::consts::PI * (x - left) / span + phase).sin()
            })
            .sum()
    }

    fn corner_recess(bone: &Bone, x: f64) -> Option<f64> {
        let d = (x - bone.center).abs();
        if d > bone.half_width {
            return None;
        }
        let inner = bone.half_width - CORNER_RADIUS;
        if d <= inner {
            return Some(0.0);
        }
        let t = d - inner;
        Some(CORNER_RADIUS - (CORNER_RADIUS * CORNER_RADIUS - t * t).max(0.0).sqrt())
    }

    fn in_bump(&self, x: f64, y: f64, upper: bool) -> bool {
        self.osteophytes
            .iter()
            .filter(|b| (b.1 < self.joint_u) == upper)
            .any(|&(bx, by, r)| (x - bx).powi(2) + (y - by).powi(2) <= r * r)
    }

    fn femur(&self, x: f64, y: f64) -> bool {
        if y < FEMUR_TOP {
            return false;
        }
        let body = Self::corner_recess(&self.femur, x)
            .map_or(false, |recess| y <= self.joint_u + self.profile(x) - recess);
        body || self.in_bump(x, y, true)
    }

    fn tibia(&self, x: f64, y: f64) -> bool {
        if y >= TIBIA_BOTTOM {
            return false;
        }
        let body = Self::corner_recess(&self.tibia, x)
            .map_or(false, |recess| y >= self.joint_l + self.profile(x) + recess);
        body || self.in_bump(x, y, false)
    }
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_shape(grade: usize, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(Shape, f64)> {
    let (lo, hi) = gap_interval(grade, cfg.num_classes)?;
    let gap = rng.gen_range(lo..=hi);
    let joint = 32.0 + rng.gen_range(-2.0..=2.0);
    let center = 32.0 + rng.gen_range(-2.0..=2.0);
    let femur = Bone {
        center,
        half_width: rng.gen_range(19.0..=22.0),
    };
    let tibia = Bone {
        center: center + rng.gen_range(-1.0..=1.0),
        half_width: rng.gen_range(19.0..=22.0),
    };
    let mut harmonics = [(0.0, 0.0); 3];
    for (m, h) in harmonics.iter_mut().enumerate() {
        *h = (
            rng.gen_range(0.0..=1.2 / (m + 1) as f64),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
    }
    let mut shape = Shape {
        femur,
        tibia,
        joint_u: joint - gap / 2.0,
        joint_l: joint + gap / 2.0,
        harmonics,
        osteophytes: Vec::new(),
    };
    if 2 * grade >= cfg.num_classes {
        for side in [-1.0, 1.0] {
            for upper in [true, false] {
                let r = rng.gen_range(2.0..=3.5);
                let (bone, y) = if upper {
                    (&shape.femur, shape.joint_u - r)
                } else {
                    (&shape.tibia, shape.joint_l + r)
                };
                let x = bone.center + side * (bone.half_width - 1.0);
                shape.osteophytes.push((x, y, r));
            }
        }
    }
    Ok((shape, gap))
}

fn rasterize(f: impl Fn(f64, f64) -> bool) -> BinaryMask {
    BinaryMask::from_fn(SIDE, SIDE, |x, y| f(x as f64 + 0.5, y as f64 + 0.5))
}

fn gaussian_blur(field: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..SIDE as isize {
            for x in 0..SIDE as isize {
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    let d = k as isize - radius;
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    let sx = sx.clamp(0, SIDE as isize - 1) as usize;
                    let sy = sy.clamp(0, SIDE as isize - 1) as usize;
                    acc += w * src[sy * SIDE + sx];
                }
                out[y as usize * SIDE + x as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

/// Smooth random field in roughly `[-1, 1]` from a coarse lattice of
/// uniform values, bilinearly interpolated.
fn smooth_field(cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (SIDE as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (fx, fy) = (x as f64 / cell, y as f64 / cell);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| lattice[j * n + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Radiograph of the two masks. Exposure, soft-tissue texture, trabecular
/// texture and a partly radiopaque joint space vary per sample and are
/// independent of the grade, so the image carries less grade information
/// than the masks themselves.
fn render_image(mask_u: &BinaryMask, mask_l: &BinaryMask, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> GrayImage {
    let bone_level = BONE + BONE_JITTER * rng.gen_range(-1.0..=1.0);
    let soft_level = BACKGROUND + SOFT_JITTER * rng.gen_range(0.0..=1.0);
    let soft = smooth_field(SOFT_CELL, rng);
    let trabecular = smooth_field(TRABECULAR_CELL, rng);
    let mut field: Vec<f64> = mask_u
        .bits()
        .iter()
        .zip(mask_l.bits())
        .enumerate()
        .map(|(i, (&u, &l))| {
            if u || l {
                bone_level + TEXTURE_AMP * trabecular[i]
            } else {
                soft_level + TEXTURE_AMP * soft[i]
            }
        })
        .collect();
    let fill = MAX_GAP_FILL * rng.gen_range(0.0..=1.0);
    for x in 0..SIDE {
        let femur_bottom = (0..SIDE).rev().find(|&y| mask_u.bits()[y * SIDE + x]);
        let tibia_top = (0..SIDE).find(|&y| mask_l.bits()[y * SIDE + x]);
        if let (Some(top), Some(bottom)) = (femur_bottom, tibia_top) {
            for y in top + 1..bottom {
                let i = y * SIDE + x;
                field[i] += fill * (bone_level - field[i]);
            }
        }
    }
    let blurred = gaussian_blur(&field, BLUR_SIGMA);
    let noise = Normal::new(0.0, cfg.noise_level.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let pixels = blurred
        .iter()
        .map(|&v| {
            let n = if cfg.noise_level > 0.0 { noise.sample(rng) } else { 0.0 };
            ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    GrayImage::new(SIDE, SIDE, pixels).expect("square raster")
}

fn ellipse(rng: &mut ChaCha8Rng) -> BinaryMask {
    let cx = rng.gen_range(8.0..56.0);
    let cy = rng.gen_range(8.0..56.0);
    let rx: f64 = rng.gen_range(6.0..20.0);
    let ry: f64 = rng.gen_range(6.0..20.0);
    rasterize(|x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0)
}

fn distractor(kind: usize, mask_u: &BinaryMask, mask_l: &BinaryMask, rng: &mut ChaCha8Rng) -> BinaryMask {
    let source = if rng.gen_bool(0.5) { mask_u } else { mask_l };
    match kind % 3 {
        0 => {
            let dist = rng.gen_range(8.0..=14.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let dx = (dist * angle.cos()).round() as isize;
            let dy = (dist * angle.sin()).round() as isize;
            source.shifted(dx, dy)
        }
        1 => source.eroded(4),
        _ => ellipse(rng),
    }
}

/// One synthetic joint for `grade`; `stream` selects the per-sample RNG stream.
pub fn generate_sample(grade: usize, cfg: &GeneratorConfig, stream: u64) -> Result<SynthSample> {
    if grade >= cfg.num_classes {
        return Err(Error::Label {
            label: grade,
            classes: cfg.num_classes,
        });
    }
    let mut rng = sample_rng(cfg.seed, stream);
    let (shape, gap) = draw_shape(grade, cfg, &mut rng)?;
    let mask_u = rasterize(|x, y| shape.femur(x, y));
    let tibia = rasterize(|x, y| shape.tibia(x, y));
    let mask_l = BinaryMask::from_fn(SIDE, SIDE, |x, y| {
        tibia.get(x as isize, y as isize) && !mask_u.get(x as isize, y as isize)
    });
    let image = render_image(&mask_u, &mask_l, cfg, &mut rng);
    let mut candidates = vec![mask_u.clone(), mask_l.clone()];
    for k in 0..cfg.distractors {
        candidates.push(distractor(k, &mask_u, &mask_l, &mut rng));
    }
    candidates.shuffle(&mut rng);
    Ok(SynthSample {
        image,
        mask_u,
        mask_l,
        candidates,
        label: grade,
        gap,
        rng_stream: stream,
    })
}

/// Pixel-majority masks over samples spanning every grade.
pub fn template_masks(cfg: &GeneratorConfig) -> Result<(BinaryMask, BinaryMask)> {
    let mut votes_u = vec![0usize; SIDE * SIDE];
    let mut votes_l = vec![0usize; SIDE * SIDE];
    for k in 0..TEMPLATE_SAMPLES {
        let s = generate_sample(k % cfg.num_classes, cfg, TEMPLATE_STREAM + k as u64)?;
        for (i, (&u, &l)) in s.mask_u.bits().iter().zip(s.mask_l.bits()).enumerate() {
            votes_u[i] += u as usize;
            votes_l[i] += l as usize;
        }
    }
    let majority = |votes: &[usize]| {
        BinaryMask::new(SIDE, SIDE, votes.iter().map(|&v| 2 * v > TEMPLATE_SAMPLES).collect())
    };
    Ok((majority(&votes_u)?, majority(&votes_l)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou, select_mask};

    fn clean() -> GeneratorConfig {
        GeneratorConfig {
            noise_level: 0.0,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn intervals_are_disjoint_and_ordered() {
        for c in [2, 3, 5] {
            let mut prev_lo = f64::INFINITY;
            for g in 0..c {
                let (lo, hi) = gap_interval(g, c).unwrap();
                assert!(lo < hi && hi + GAP_SEPARATION <= prev_lo + 1e-12);
                prev_lo = lo;
            }
        }
        assert!(gap_interval(3, 3).is_err());
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = clean();
        let a = generate_sample(1, &cfg, 17).unwrap();
        let b = generate_sample(1, &cfg, 17).unwrap();
        assert_eq!(a.image.encode(), b.image.encode());
        assert_eq!(a, b);
        let noisy = GeneratorConfig::default();
        assert_eq!(generate_sample(2, &noisy, 3).unwrap(), generate_sample(2, &noisy, 3).unwrap());
    }

    #[test]
    fn invalid_grade() {
        assert!(generate_sample(3, &clean(), 0).is_err());
    }

    #[test]
    fn masks_disjoint_single_component_and_brighter_bone() {
        let cfg = GeneratorConfig::default();
        for i in 0..60 {
            let s = generate_sample(i % 3, &cfg, i as u64).unwrap();
            assert!(!s.mask_u.intersects(&s.mask_l));
            assert_eq!(s.mask_u.components().len(), 1, "sample {i}");
            assert_eq!(s.mask_l.components().len(), 1, "sample {i}");
            let (mut bone, mut nb, mut back, mut nk) = (0.0, 0, 0.0, 0);
            for ((&u, &l), &p) in s.mask_u.bits().iter().zip(s.mask_l.bits()).zip(&s.image.pixels) {
                if u || l {
                    bone += p as f64;
                    nb += 1;
                } else {
                    back += p as f64;
                    nk += 1;
                }
            }
            assert!(bone / nb as f64 > back / nk as f64);
        }
    }

    fn measured_gap(s: &SynthSample) -> usize {
        // Empty rows between the bones in the middle column.
        let x = 32;
        (0..SIDE as isize)
            .filter(|&y| {
                !s.mask_u.get(x, y)
                    && !s.mask_l.get(x, y)
                    && (0..y).any(|t| s.mask_u.get(x, t))
                    && (y..SIDE as isize).any(|t| s.mask_l.get(x, t))
            })
            .count()
    }

    #[test]
    fn gap_narrows_with_grade() {
        let cfg = clean();
        let mean_gap = |grade: usize| {
            (0..100)
                .map(|i| measured_gap(&generate_sample(grade, &cfg, 1000 + i).unwrap()) as f64)
                .sum::<f64>()
                / 100.0
        };
        let (g0, g1, g2) = (mean_gap(0), mean_gap(1), mean_gap(2));
        assert!(g0 > g1 && g1 > g2, "{g0} {g1} {g2}");
        assert!((0..100).all(|i| measured_gap(&generate_sample(0, &cfg, i).unwrap()) >= 1));
    }

    #[test]
    fn threshold_on_gap_recovers_labels() {
        let cfg = clean();
        let correct = (0..300)
            .filter(|&i| {
                let s = generate_sample(i % 3, &cfg, i as u64).unwrap();
                grade_from_gap(s.gap, 3) == s.label
            })
            .count();
        assert!(correct as f64 >= 0.95 * 300.0);
    }

    #[test]
    fn templates_select_true_masks() {
        let cfg = GeneratorConfig::default();
        let (tu, tl) = template_masks(&cfg).unwrap();
        assert!(!tu.is_empty() && !tl.is_empty() && !tu.intersects(&tl));
        assert_eq!(template_masks(&cfg).unwrap(), (tu.clone(), tl.clone()));
        let (mut hits, mut margin) = (0, 0);
        for i in 0..100 {
            let s = generate_sample(i % 3, &cfg, 5000 + i as u64).unwrap();
            let (_, picked_u) = select_mask(&s.candidates, &tu).unwrap();
            let (_, picked_l) = select_mask(&s.candidates, &tl).unwrap();
            hits += (*picked_u == s.mask_u && *picked_l == s.mask_l) as usize;
            let true_score = iou(&tu, &s.mask_u).unwrap();
            let best_other = s
                .candidates
                .iter()
                .filter(|c| **c != s.mask_u)
                .map(|c| iou(&tu, c).unwrap())
                .fold(0.0, f64::max);
            margin += (true_score > best_other) as usize;
        }
        assert!(hits >= 99, "{hits}");
        assert!(margin >= 95, "{margin}");
    }
}
