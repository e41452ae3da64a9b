use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Row-major boolean pixel grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height * width != bits.len() || height == 0 || width == 0 {
            return Err(Error::Geometry(format!(
                "{height}×{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Pixel at column `x`, row `y`; anything outside the grid is background.
    pub fn get(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return false;
        }
        self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Foreground pixels with at least one background 4-neighbor.
    pub fn is_boundary(&self, x: isize, y: isize) -> bool {
        self.get(x, y)
            && (!self.get(x - 1, y) || !self.get(x + 1, y) || !self.get(x, y - 1) || !self.get(x, y + 1))
    }

    /// Translates the mask; pixels moved outside are dropped.
    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        Self::from_fn(self.height, self.width, |x, y| {
            self.get(x as isize - dx, y as isize - dy)
        })
    }

    /// Binary erosion with a 3×3 square element, `iterations` times.
    pub fn eroded(&self, iterations: usize) -> Self {
        let mut m = self.clone();
        for _ in 0..iterations {
            let prev = m.clone();
            m = Self::from_fn(self.height, self.width, |x, y| {
                let (x, y) = (x as isize, y as isize);
                (-1..=1).all(|dy| (-1..=1).all(|dx| prev.get(x + dx, y + dy)))
            });
        }
        m
    }

    /// Labels 8-connected foreground components; returns them largest first
    /// (ties by first pixel in row-major order).
    pub fn components(&self) -> Vec<BinaryMask> {
        let mut label = vec![usize::MAX; self.bits.len()];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = id;
            while let Some(p) = queue.pop_front() {
                pixels.push(p);
                let (x, y) = ((p % self.width) as isize, (p / self.width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if self.get(nx, ny) {
                            let q = ny as usize * self.width + nx as usize;
                            if label[q] == usize::MAX {
                                label[q] = id;
                                queue.push_back(q);
                            }
                        }
                    }
                }
            }
            comps.push(pixels);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()));
        comps
            .into_iter()
            .map(|pixels| {
                let mut m = BinaryMask::empty(self.height, self.width);
                for p in pixels {
                    m.bits[p] = true;
                }
                m
            })
            .collect()
    }
}

/// Intersection over union.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Geometry(format!(
            "iou: {}×{} vs {}×{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::Geometry("iou: both masks are empty".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Candidate with the highest IoU against `template`; ties go to the lowest index.
pub fn select_mask<'a>(
    candidates: &'a [BinaryMask],
    template: &BinaryMask,
) -> Result<(usize, &'a BinaryMask)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.same_dims(template) {
            return Err(Error::Geometry(format!("candidate {i} has different dimensions")));
        }
        let score = if c.is_empty() && template.is_empty() {
            0.0
        } else {
            iou(c, template)?
        };
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::Geometry("select_mask: no candidates".into()))?;
    Ok((i, &candidates[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: usize, y0: usize, side: usize, n: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
    }

    #[test]
    fn iou_cases() {
        let a = square(0, 0, 2, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(2, 2, 2, 4)).unwrap(), 0.0);
        let b = square(1, 0, 2, 4);
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!(iou(&a, &square(0, 0, 2, 5)).is_err());
        assert!(iou(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 3)).is_err());
    }

    #[test]
    fn select_mask_ties_and_errors() {
        let t = square(0, 0, 2, 4);
        let cands = vec![t.clone(), square(2, 2, 2, 4)];
        assert_eq!(select_mask(&cands, &t).unwrap().0, 0);
        let same = vec![square(1, 1, 2, 4); 3];
        assert_eq!(select_mask(&same, &t).unwrap().0, 0);
        assert!(select_mask(&[], &t).is_err());
    }

    #[test]
    fn erosion_and_components() {
        let m = square(1, 1, 5, 8);
        assert_eq!(m.eroded(1).count(), 9);
        assert_eq!(m.eroded(3).count(), 0);
        let mut two = square(0, 0, 3, 10);
        for y in 6..8 {
            two.set(8, y, true);
        }
        let comps = two.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].count(), 9);
        assert_eq!(comps[1].count(), 2);
    }

    proptest! {
        #[test]
        fn iou_symmetric(a in proptest::collection::vec(any::<bool>(), 36),
                         b in proptest::collection::vec(any::<bool>(), 36)) {
            let a = BinaryMask::new(6, 6, a).unwrap();
            let b = BinaryMask::new(6, 6, b).unwrap();
            match (iou(&a, &b), iou(&b, &a)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
