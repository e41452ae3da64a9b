use log::warn;

use super::mask::BinaryMask;
use crate::error::{Error, Result};

/// Moore neighborhood, clockwise on screen (y down), starting west.
const DIRS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn dir_index(dx: isize, dy: isize) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is a Moore neighbor")
}

/// Closed outer boundary. `points[0]` is the topmost-leftmost pixel and the
/// walk is counter-clockwise as displayed (x right, y down).
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    pub perimeter: f64,
}

impl Contour {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let perimeter = closed_length(&points);
        Self { points, perimeter }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn closed_length(points: &[[f64; 2]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    (0..points.len())
        .map(|i| dist(points[i], points[(i + 1) % points.len()]))
        .sum()
}

/// Moore-neighbor trace of the outer boundary with Jacob's stopping rule.
/// A mask with several 8-connected components is traced on its largest one.
pub fn trace_boundary(mask: &BinaryMask) -> Result<Contour> {
    let comps = mask.components();
    let Some(largest) = comps.first() else {
        return Err(Error::Geometry("trace_boundary: empty mask".into()));
    };
    if comps.len() > 1 {
        warn!(
            "mask has {} components; tracing the largest ({} px)",
            comps.len(),
            largest.count()
        );
    }
    let m = largest;
    let start_idx = m.bits().iter().position(|&b| b).expect("non-empty");
    let start = ((start_idx % m.width()) as isize, (start_idx / m.width()) as isize);

    let next_from = |cur: (isize, isize), back: usize| -> Option<((isize, isize), usize)> {
        for i in 1..=8 {
            let d = (back + i) % 8;
            let p = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if m.get(p.0, p.1) {
                let prev = (back + i - 1) % 8;
                let q = (cur.0 + DIRS[prev].0, cur.1 + DIRS[prev].1);
                return Some((p, dir_index(q.0 - p.0, q.1 - p.1)));
            }
        }
        None
    };

    let mut path = vec![start];
    // The start is leftmost in the top row, so its west neighbor is background.
    let Some(first) = next_from(start, 0) else {
        return Ok(Contour::new(vec![[start.0 as f64, start.1 as f64]]));
    };
    let (mut cur, mut back) = first;
    loop {
        let (next, next_back) = next_from(cur, back).expect("a traced pixel has a neighbor");
        if cur == start && next == first.0 {
            break;
        }
        path.push(cur);
        cur = next;
        back = next_back;
    }
    // The walk above is clockwise on screen; reverse it keeping the start.
    path[1..].reverse();
    Ok(Contour::new(
        path.into_iter().map(|(x, y)| [x as f64, y as f64]).collect(),
    ))
}

/// `n` points at arc lengths `i·P/n` along the closed contour, from its start.
pub fn uniform_sample(contour: &Contour, n: usize) -> Result<Vec<[f64; 2]>> {
    if n < 3 {
        return Err(Error::Geometry(format!("uniform_sample: n = {n} < 3")));
    }
    if contour.perimeter <= 0.0 {
        return Err(Error::Geometry("uniform_sample: zero-length contour".into()));
    }
    let pts = &contour.points;
    let m = pts.len();
    let step = contour.perimeter / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 0..n {
        let target = i as f64 * step;
        loop {
            let len = dist(pts[seg], pts[(seg + 1) % m]);
            if target <= seg_start + len || seg == m - 1 {
                let a = pts[seg];
                let b = pts[(seg + 1) % m];
                let t = if len > 0.0 {
                    ((target - seg_start) / len).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    Ok(out)
}

/// Signed area with y down; positive for a walk that is counter-clockwise on screen.
pub fn screen_ccw_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        acc += a[0] * b[1] - b[0] * a[1];
    }
    -acc / 2.0
}
