//! Flow network with one node per pixel and one auxiliary node per cluster, and
//! an exact max-flow / min-cut solver for it.
//!
//! Source side means foreground. A pixel's source arc carries its background
//! cost and its sink arc its foreground cost, so a cut pays exactly the cost of
//! the label it assigns. Pixel-to-auxiliary arcs carry the label-consistency
//! weight in both directions; auxiliary nodes have no terminal arcs.

use std::collections::VecDeque;
use std::f64::consts::SQRT_2;

use crate::appearance::{unary_cost, AppearanceModels};
use crate::clustering::ClusterMap;
use crate::error::Result;
use crate::imagecore::{LabelMask, RgbImage};

/// Capacity of the hard background clamp on pixels outside the search region.
pub const LARGE: f64 = 1e9;

/// Residual capacities at or below this are treated as saturated.
pub const FLOW_EPS: f64 = 1e-9;

/// Forward half of the 8-neighborhood as (dx, dy, distance).
pub const NEIGHBOR_OFFSETS: [(isize, isize, f64); 4] = [(1, 0, 1.0), (0, 1, 1.0), (1, 1, SQRT_2), (-1, 1, SQRT_2)];

const MEAN_SQ_DIFF_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Pixel,
    Auxiliary,
    Source,
    Sink,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

/// Directed network whose arcs come in pairs: arc `2i` and its reverse `2i + 1`.
#[derive(Clone, Debug)]
pub struct FlowNetwork {
    roles: Vec<NodeRole>,
    arcs: Vec<Arc>,
    n_pixels: usize,
    n_aux: usize,
}

impl FlowNetwork {
    /// `n_pixels` pixel nodes, then `n_aux` auxiliary nodes, then source and sink.
    pub fn new(n_pixels: usize, n_aux: usize) -> Self {
        let mut roles = vec![NodeRole::Pixel; n_pixels];
        roles.extend(std::iter::repeat_n(NodeRole::Auxiliary, n_aux));
        roles.push(NodeRole::Source);
        roles.push(NodeRole::Sink);
        Self {
            roles,
            arcs: Vec::new(),
            n_pixels,
            n_aux,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.roles.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn n_aux(&self) -> usize {
        self.n_aux
    }

    pub fn source(&self) -> usize {
        self.roles.len() - 2
    }

    pub fn sink(&self) -> usize {
        self.roles.len() - 1
    }

    pub fn aux_node(&self, cluster: usize) -> usize {
        self.n_pixels + cluster
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    /// Adds `u → v` with `capacity` and `v → u` with `reverse`; returns the forward arc index.
    pub fn add_edge(&mut self, u: usize, v: usize, capacity: f64, reverse: f64) -> usize {
        debug_assert!(u != v && u < self.n_nodes() && v < self.n_nodes());
        debug_assert!(capacity >= 0.0 && reverse >= 0.0);
        let idx = self.arcs.len();
        self.arcs.push(Arc {
            from: u,
            to: v,
            capacity,
        });
        self.arcs.push(Arc {
            from: v,
            to: u,
            capacity: reverse,
        });
        idx
    }

    pub fn add_terminal_edges(&mut self, v: usize, source_cap: f64, sink_cap: f64) {
        let (s, t) = (self.source(), self.sink());
        self.add_edge(s, v, source_cap, 0.0);
        self.add_edge(v, t, sink_cap, 0.0);
    }

    /// Total capacity of arcs leaving the source side.
    pub fn cut_capacity(&self, source_side: &[bool]) -> f64 {
        self.arcs
            .iter()
            .filter(|a| source_side[a.from] && !source_side[a.to])
            .map(|a| a.capacity)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutResult {
    pub source_side: Vec<bool>,
    pub flow_value: f64,
}

/// Dinic's algorithm. The source side of the returned cut is the set of nodes
/// reachable from the source in the final residual graph, so nodes with no
/// residual path (for instance isolated ones) land on the sink side.
pub fn max_flow(net: &FlowNetwork) -> CutResult {
    let n = net.n_nodes();
    let (s, t) = (net.source(), net.sink());
    let arcs = &net.arcs;

    let mut first = vec![0usize; n + 1];
    for a in arcs {
        first[a.from + 1] += 1;
    }
    for i in 0..n {
        first[i + 1] += first[i];
    }
    let mut fill = first.clone();
    let mut adj = vec![0usize; arcs.len()];
    for (i, a) in arcs.iter().enumerate() {
        adj[fill[a.from]] = i;
        fill[a.from] += 1;
    }

    let mut res: Vec<f64> = arcs.iter().map(|a| a.capacity).collect();
    let mut flow = 0.0;

    // saturate the two-arc paths s → v → t up front
    for &a in &adj[first[s]..first[s + 1]] {
        let v = arcs[a].to;
        for &b in &adj[first[v]..first[v + 1]] {
            if arcs[b].to == t {
                let f = res[a].min(res[b]);
                if f > 0.0 {
                    res[a] -= f;
                    res[a ^ 1] += f;
                    res[b] -= f;
                    res[b ^ 1] += f;
                    flow += f;
                }
            }
        }
    }

    let mut level = vec![-1i64; n];
    let mut cursor = vec![0usize; n];
    let mut queue = VecDeque::new();
    let mut path: Vec<usize> = Vec::new();
    loop {
        level.fill(-1);
        level[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &a in &adj[first[u]..first[u + 1]] {
                let v = arcs[a].to;
                if level[v] < 0 && res[a] > FLOW_EPS {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if level[t] < 0 {
            break;
        }
        cursor.copy_from_slice(&first[..n]);

        path.clear();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&a| res[a]).fold(f64::INFINITY, f64::min);
                for &a in &path {
                    res[a] -= f;
                    res[a ^ 1] += f;
                }
                flow += f;
                let k = path
                    .iter()
                    .position(|&a| res[a] <= FLOW_EPS)
                    .expect("bottleneck arc is saturated");
                u = arcs[path[k]].from;
                path.truncate(k);
                continue;
            }
            let mut advanced = false;
            while cursor[u] < first[u + 1] {
                let a = adj[cursor[u]];
                let v = arcs[a].to;
                if res[a] > FLOW_EPS && level[v] == level[u] + 1 {
                    path.push(a);
                    u = v;
                    advanced = true;
                    break;
                }
                cursor[u] += 1;
            }
            if !advanced {
                if u == s {
                    break;
                }
                level[u] = -1;
                let a = path.pop().expect("non-source node has an entry arc");
                u = arcs[a].from;
                cursor[u] += 1;
            }
        }
    }

    let mut source_side = vec![false; n];
    source_side[s] = true;
    queue.clear();
    queue.push_back(s);
    while let Some(u) = queue.pop_front() {
        for &a in &adj[first[u]..first[u + 1]] {
            let v = arcs[a].to;
            if !source_side[v] && res[a] > FLOW_EPS {
                source_side[v] = true;
                queue.push_back(v);
            }
        }
    }
    CutResult {
        source_side,
        flow_value: flow,
    }
}

/// Per-pixel label costs: `fg[i]` is paid when pixel `i` is foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryCosts {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

impl UnaryCosts {
    pub fn compute(image: &RgbImage, models: &AppearanceModels) -> Self {
        let (fg, bg) = image
            .pixels()
            .iter()
            .map(|p| (unary_cost(p, &models.fg), unary_cost(p, &models.bg)))
            .unzip();
        Self { fg, bg }
    }

    pub fn cost(&self, pixel: usize, label: u8) -> f64 {
        if label == 1 {
            self.fg[pixel]
        } else {
            self.bg[pixel]
        }
    }
}

/// Contrast-sensitive smoothness weights over the 8-neighborhood,
/// `γ · exp(−β_c ‖z_i − z_j‖²) / dist(i, j)` with
/// `β_c = 1 / (2 · mean ‖z_i − z_j‖²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseTerm {
    width: usize,
    height: usize,
    contrast: f64,
    weights: Vec<[f64; 4]>,
}

impl PairwiseTerm {
    pub fn new(image: &RgbImage, gamma: f64) -> Self {
        let (w, h) = image.dims();
        let px = image.pixels();
        let sq = |a: usize, b: usize| -> f64 { (0..3).map(|c| (px[a][c] - px[b][c]).powi(2)).sum() };

        let mut total = 0.0;
        let mut count = 0usize;
        for_each_pair(w, h, |i, j, _, _| {
            total += sq(i, j);
            count += 1;
        });
        let mean = if count > 0 { total / count as f64 } else { 0.0 };
        let contrast = 1.0 / (2.0 * mean.max(MEAN_SQ_DIFF_FLOOR));

        let mut weights = vec![[0.0; 4]; w * h];
        for_each_pair(w, h, |i, j, dir, dist| {
            weights[i][dir] = gamma * (-contrast * sq(i, j)).exp() / dist;
        });
        Self {
            width: w,
            height: h,
            contrast,
            weights,
        }
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    /// Every unordered neighbor pair once, as `(i, j, weight)`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.weights.len() * 4);
        for_each_pair(self.width, self.height, |i, j, dir, _| {
            out.push((i, j, self.weights[i][dir]));
        });
        out
    }

    /// Sum of weights over neighbor pairs with different labels.
    pub fn cut_cost(&self, labels: &[u8]) -> f64 {
        let mut total = 0.0;
        for_each_pair(self.width, self.height, |i, j, dir, _| {
            if labels[i] != labels[j] {
                total += self.weights[i][dir];
            }
        });
        total
    }
}

fn for_each_pair(w: usize, h: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (dir, &(dx, dy, dist)) in NEIGHBOR_OFFSETS.iter().enumerate() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                f(i, ny as usize * w + nx as usize, dir, dist);
            }
        }
    }
}

/// Builds the network from precomputed terms. Pixels with `region` label 0 are
/// clamped to the background. Auxiliary nodes are added only when `clusters` is
/// given and `beta > 0`.
pub fn assemble_graph(
    unary: &UnaryCosts,
    pairwise: &PairwiseTerm,
    region: &LabelMask,
    clusters: Option<&ClusterMap>,
    beta: f64,
) -> FlowNetwork {
    let n = region.labels().len();
    let clusters = clusters.filter(|_| beta > 0.0);
    let n_aux = clusters.map_or(0, |c| c.n_clusters());
    let mut net = FlowNetwork::new(n, n_aux);
    net.arcs.reserve(n * (4 + 8 + if n_aux > 0 { 2 } else { 0 }));

    for (i, &free) in region.labels().iter().enumerate() {
        let sink_cap = if free == 1 { unary.fg[i] } else { LARGE };
        net.add_terminal_edges(i, unary.bg[i], sink_cap);
    }
    for (i, j, w) in pairwise.pairs() {
        net.add_edge(i, j, w, w);
    }
    if let Some(c) = clusters {
        for (i, &k) in c.ids().iter().enumerate() {
            let a = net.aux_node(k);
            net.add_edge(i, a, beta, beta);
        }
    }
    net
}

/// Flow network for one X-step: t-links from the appearance models, 8-neighbor
/// n-links with weight scale `gamma`, and auxiliary links of capacity `beta`.
pub fn build_graph(
    image: &RgbImage,
    region: &LabelMask,
    models: &AppearanceModels,
    clusters: Option<&ClusterMap>,
    beta: f64,
    gamma: f64,
) -> Result<FlowNetwork> {
    region.check_dims(image.dims())?;
    if let Some(c) = clusters {
        region.check_dims(c.dims())?;
    }
    let unary = UnaryCosts::compute(image, models);
    let pairwise = PairwiseTerm::new(image, gamma);
    Ok(assemble_graph(&unary, &pairwise, region, clusters, beta))
}

/// Pixel labels (1 = source side) and, when auxiliary nodes exist, one label per cluster.
pub fn extract_labels(cut: &CutResult, dims: (usize, usize), n_aux: usize) -> (LabelMask, Vec<u8>) {
    let (w, h) = dims;
    let n = w * h;
    let labels = cut.source_side[..n].iter().map(|&s| s as u8).collect();
    let cluster_labels = cut.source_side[n..n + n_aux].iter().map(|&s| s as u8).collect();
    (
        LabelMask::new(w, h, labels).expect("labels are binary and sized from dims"),
        cluster_labels,
    )
}
