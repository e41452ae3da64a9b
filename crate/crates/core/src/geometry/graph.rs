use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::contour::{trace_boundary, uniform_sample};
use super::mask::BinaryMask;
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Node features per vertex: normalized x, normalized y, bone flag.
pub const NODE_FEATURES: usize = 3;

/// Connected boundary graph over both bones of one joint.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGraph {
    /// `[x, y, bone]` with coordinates centered and scaled by the bounding-box diagonal.
    pub nodes: Vec<[f64; 3]>,
    /// Undirected edges `(i, j)` with `i < j`, sorted and unique.
    pub edges: Vec<(usize, usize)>,
    /// Edge radius in pixels after growth to connectivity.
    pub tau_final: f64,
    /// 0 = upper bone, 1 = lower bone.
    pub bone_id: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub n_per_bone: usize,
    pub k: usize,
    /// Initial radius as a multiple of the median nearest-neighbor distance.
    pub tau0_factor: f64,
    pub growth: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            n_per_bone: 32,
            k: 4,
            tau0_factor: 1.5,
            growth: 1.5,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Union of the τ-ball graph and the k-nearest-neighbor graph (distance ties
/// broken by lower index), symmetrized, without self-loops.
pub fn build_edges(points: &[[f64; 2]], k: usize, tau: f64) -> Result<Vec<(usize, usize)>> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::Geometry(format!(
            "build_edges: need 1 ≤ k < {n} points, got k = {k}"
        )));
    }
    let mut edges = BTreeSet::new();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| (dist(points[i], points[j]), j)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (rank, &(d, j)) in order.iter().enumerate() {
            if rank < k || d <= tau {
                edges.insert((i.min(j), i.max(j)));
            } else {
                break;
            }
        }
    }
    Ok(edges.into_iter().collect())
}

/// Number of connected components of an undirected graph on `n` nodes.
pub fn component_count(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    count
}

/// Multiplies τ by `growth` and rebuilds until the graph is connected.
/// Existing edges are always kept. Returns the edges and the final τ.
pub fn ensure_connected(
    points: &[[f64; 2]],
    edges: Vec<(usize, usize)>,
    tau: f64,
    k: usize,
    growth: f64,
) -> Result<(Vec<(usize, usize)>, f64)> {
    if growth <= 1.0 {
        return Err(Error::Geometry(format!("ensure_connected: growth {growth} ≤ 1")));
    }
    let n = points.len();
    if n <= 1 || component_count(n, &edges) == 1 {
        return Ok((edges, tau));
    }
    let mut tau = tau;
    if tau <= 0.0 {
        // Growth from zero never moves; restart from the closest distinct pair.
        tau = min_positive_distance(points).unwrap_or(1.0);
    } else {
        tau *= growth;
    }
    let mut current: BTreeSet<(usize, usize)> = edges.into_iter().collect();
    loop {
        current.extend(build_edges(points, k.min(n - 1), tau)?);
        let list: Vec<_> = current.iter().copied().collect();
        if component_count(n, &list) == 1 {
            return Ok((list, tau));
        }
        tau *= growth;
    }
}

fn min_positive_distance(points: &[[f64; 2]]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(points[i], points[j]);
            if d > 0.0 && best.map_or(true, |b| d < b) {
                best = Some(d);
            }
        }
    }
    best
}

/// Median over points of the distance to the nearest distinct point.
pub fn median_nn_distance(points: &[[f64; 2]]) -> f64 {
    let mut nn: Vec<f64> = points
        .iter()
        .filter_map(|&p| {
            points
                .iter()
                .map(|&q| dist(p, q))
                .filter(|&d| d > 0.0)
                .min_by(f64::total_cmp)
        })
        .collect();
    if nn.is_empty() {
        return 0.0;
    }
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    }
}

/// Traces both bones, samples `n_per_bone` points on each, connects the union
/// and normalizes coordinates.
pub fn build_joint_graph(
    mask_u: &BinaryMask,
    mask_l: &BinaryMask,
    cfg: &GraphConfig,
) -> Result<JointGraph> {
    if !mask_u.same_dims(mask_l) {
        return Err(Error::Geometry("build_joint_graph: mask dimensions differ".into()));
    }
    let upper = uniform_sample(&trace_boundary(mask_u)?, cfg.n_per_bone)?;
    let lower = uniform_sample(&trace_boundary(mask_l)?, cfg.n_per_bone)?;
    let points: Vec<[f64; 2]> = upper.iter().chain(&lower).copied().collect();
    let bone_id: Vec<u8> = std::iter::repeat(0)
        .take(upper.len())
        .chain(std::iter::repeat(1).take(lower.len()))
        .collect();

    let tau0 = cfg.tau0_factor * median_nn_distance(&points);
    let edges = build_edges(&points, cfg.k, tau0)?;
    let (edges, tau_final) = ensure_connected(&points, edges, tau0, cfg.k, cfg.growth)?;

    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let diag = (max_x - min_x).hypot(max_y - min_y);
    let scale = if diag > 0.0 { diag } else { 1.0 };
    let nodes = points
        .iter()
        .zip(&bone_id)
        .map(|(p, &b)| [(p[0] - cx) / scale, (p[1] - cy) / scale, b as f64])
        .collect();
    Ok(JointGraph {
        nodes,
        edges,
        tau_final,
        bone_id,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    nodes: Vec<[f64; 3]>,
    edges: Vec<[usize; 2]>,
    tau_final: f64,
}

impl JointGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Renames node `i` to `perm[i]`, carrying edges along.
    pub fn relabel(&self, perm: &[usize]) -> Result<JointGraph> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Geometry("relabel: not a permutation".into()));
        }
        let mut nodes = vec![[0.0; 3]; n];
        let mut bone_id = vec![0; n];
        for i in 0..n {
            nodes[perm[i]] = self.nodes[i];
            bone_id[perm[i]] = self.bone_id[i];
        }
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        edges.sort_unstable();
        Ok(JointGraph {
            nodes,
            edges,
            tau_final: self.tau_final,
            bone_id,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            version: GRAPH_FORMAT_VERSION,
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            tau_final: self.tau_final,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        if file.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported graph version {}", file.version)));
        }
        let n = file.nodes.len();
        let mut edges = Vec::with_capacity(file.edges.len());
        for [a, b] in file.edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Format(format!("invalid edge ({a}, {b}) for {n} nodes")));
            }
            edges.push((a.min(b), a.max(b)));
        }
        let bone_id = file
            .nodes
            .iter()
            .map(|v| if v[2] >= 0.5 { 1 } else { 0 })
            .collect();
        Ok(Self {
            nodes: file.nodes,
            edges,
            tau_final: file.tau_final,
            bone_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: usize, y0: usize, w: usize, h: usize, n: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    #[test]
    fn collinear_hand_case() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(build_edges(&pts, 1, 0.5).unwrap(), vec![(0, 1), (1, 2)]);
        assert_eq!(
            build_edges(&pts, 1, 2.0).unwrap(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        assert!(build_edges(&pts, 3, 1.0).is_err());
        assert!(build_edges(&pts, 0, 1.0).is_err());
    }

    #[test]
    fn coincident_points_get_an_edge_but_no_self_loop() {
        let pts = [[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]];
        let e = build_edges(&pts, 1, 0.0).unwrap();
        assert!(e.contains(&(0, 1)));
        assert!(e.iter().all(|&(a, b)| a != b));
    }

    #[test]
    fn connectivity_growth() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
        let e = build_edges(&pts, 1, 1.0).unwrap();
        assert_eq!(component_count(4, &e), 2);
        let (e2, tau) = ensure_connected(&pts, e.clone(), 1.0, 1, 1.5).unwrap();
        assert_eq!(component_count(4, &e2), 1);
        assert!(tau >= 9.0);
        assert!(e.iter().all(|x| e2.contains(x)));

        let (same, t) = ensure_connected(&pts, e2.clone(), tau, 1, 1.5).unwrap();
        assert_eq!((same, t), (e2, tau));
        let (single, t) = ensure_connected(&[[3.0, 3.0]], vec![], 2.0, 1, 1.5).unwrap();
        assert!(single.is_empty() && t == 2.0);
    }

    #[test]
    fn two_far_squares() {
        let a = rect(2, 2, 3, 3, 40);
        let b = rect(30, 30, 3, 3, 40);
        let cfg = GraphConfig {
            n_per_bone: 4,
            k: 1,
            ..GraphConfig::default()
        };
        let g = build_joint_graph(&a, &b, &cfg).unwrap();
        assert_eq!(g.num_nodes(), 8);
        assert_eq!(component_count(8, &g.edges), 1);
        // Closest sampled corners are (4,4) and (30,30).
        let gap = 26.0 * 2f64.sqrt();
        assert!(g.tau_final >= gap, "tau {}", g.tau_final);
        assert_eq!(g.bone_id, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn normalization_and_determinism() {
        let a = BinaryMask::from_fn(64, 64, |x, y| x > 10 && x < 50 && y > 3 && y < 25 + (x % 5) / 2);
        let b = BinaryMask::from_fn(64, 64, |x, y| x > 12 && x < 52 && y > 31 && y < 60);
        let cfg = GraphConfig::default();
        let g = build_joint_graph(&a, &b, &cfg).unwrap();
        assert_eq!(g.num_nodes(), 64);
        let n = g.num_nodes() as f64;
        let mx = g.nodes.iter().map(|v| v[0]).sum::<f64>() / n;
        let my = g.nodes.iter().map(|v| v[1]).sum::<f64>() / n;
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
        for p in &g.nodes {
            for q in &g.nodes {
                assert!((p[0] - q[0]).hypot(p[1] - q[1]) <= 1.0 + 1e-9);
            }
        }
        assert_eq!(component_count(64, &g.edges), 1);
        let again = build_joint_graph(&a, &b, &cfg).unwrap();
        assert_eq!(g, again);
        let back = JointGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn identical_masks_mirror_across_bones() {
        let a = rect(10, 10, 20, 12, 64);
        let g = build_joint_graph(&a, &a, &GraphConfig::default()).unwrap();
        let n = 32;
        for i in 0..n {
            assert_eq!(g.nodes[i][..2], g.nodes[i + n][..2]);
            assert_eq!((g.nodes[i][2], g.nodes[i + n][2]), (0.0, 1.0));
        }
        assert_eq!(component_count(2 * n, &g.edges), 1);
    }
}
