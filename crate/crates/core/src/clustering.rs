//! Superpixels and the superpixel-level color clusters that drive the label
//! consistency term.
//!
//! Superpixels come from a SLIC-style k-means over joint color and position
//! features, followed by a connectivity pass. Clusters group whole superpixels
//! by mean color, so one cluster may span several disjoint image regions.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::RgbImage;
use crate::kmeans::{compact_ids, kmeans_pp, lloyd};

pub const SLIC_ITERS: usize = 10;
pub const CLUSTER_KMEANS_ITERS: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    sp_id: Vec<usize>,
    count: usize,
}

impl SuperpixelMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[usize] {
        &self.sp_id
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &id in &self.sp_id {
            sizes[id] += 1;
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterMap {
    width: usize,
    height: usize,
    cluster_id: Vec<usize>,
    n_clusters: usize,
}

impl ClusterMap {
    /// Wraps per-pixel cluster ids, compacting them so that no id is unused.
    pub fn new(width: usize, height: usize, mut cluster_id: Vec<usize>) -> Result<Self> {
        if cluster_id.len() != width * height {
            return Err(Error::invalid(format!(
                "cluster buffer has {} entries, expected {}",
                cluster_id.len(),
                width * height
            )));
        }
        let max = cluster_id.iter().copied().max().map_or(0, |m| m + 1);
        let n_clusters = compact_ids(&mut cluster_id, max);
        Ok(Self {
            width,
            height,
            cluster_id,
            n_clusters,
        })
    }

    pub fn single(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cluster_id: vec![0; width * height],
            n_clusters: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ids(&self) -> &[usize] {
        &self.cluster_id
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Indexed-color rendering for debugging.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = RgbImage::from_fn(self.width, self.height, |x, y| {
            palette(self.cluster_id[y * self.width + x])
        })?;
        img.to_png()
    }
}

fn palette(i: usize) -> [f64; 3] {
    // golden-angle hue walk, fixed saturation and value
    let h = (i as f64 * 137.507_764) % 360.0;
    let c = 200.0;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + 40.0, g + 40.0, b + 40.0]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    color: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC superpixels over RGB and pixel position.
///
/// `compactness` weighs spatial distance against color distance on the [0, 255]
/// scale. Every returned superpixel is 4-connected.
pub fn compute_superpixels(image: &RgbImage, target_count: usize, compactness: f64) -> Result<SuperpixelMap> {
    let (w, h) = image.dims();
    let n = w * h;
    if target_count == 0 {
        return Err(Error::invalid("superpixel count must be at least 1"));
    }
    if target_count > n {
        return Err(Error::invalid(format!(
            "{target_count} superpixels requested for {n} pixels"
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("compactness must be positive"));
    }

    let spacing = (n as f64 / target_count as f64).sqrt();
    let nx = ((w as f64 / spacing).round() as usize).clamp(1, w);
    let ny = ((h as f64 / spacing).round() as usize).clamp(1, h);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * step_x;
            let y = (j as f64 + 0.5) * step_y;
            let px = (x as usize).min(w - 1);
            let py = (y as usize).min(h - 1);
            centers.push(Center {
                color: image.get(px, py),
                x,
                y,
            });
        }
    }

    // start from the seed grid so every pixel has a label even outside all windows
    let mut labels: Vec<usize> = (0..n)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let i = ((x as f64 / step_x) as usize).min(nx - 1);
            let j = ((y as f64 / step_y) as usize).min(ny - 1);
            j * nx + i
        })
        .collect();
    let spatial_weight = (compactness / spacing).powi(2);
    let reach = step_x.max(step_y);
    let mut dist = vec![f64::INFINITY; n];

    for _ in 0..SLIC_ITERS {
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x_lo = (c.x - reach).floor().max(0.0) as usize;
            let x_hi = ((c.x + reach).ceil() as usize).min(w);
            let y_lo = (c.y - reach).floor().max(0.0) as usize;
            let y_hi = ((c.y + reach).ceil() as usize).min(h);
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    let p = y * w + x;
                    let col = image.pixels()[p];
                    let dc: f64 = (0..3).map(|i| (col[i] - c.color[i]).powi(2)).sum();
                    let dx = x as f64 + 0.5 - c.x;
                    let dy = y as f64 + 0.5 - c.y;
                    let d = dc + (dx * dx + dy * dy) * spatial_weight;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        let mut acc = vec![([0.0; 3], 0.0, 0.0, 0usize); centers.len()];
        for (p, &k) in labels.iter().enumerate() {
            let col = image.pixels()[p];
            let a = &mut acc[k];
            for i in 0..3 {
                a.0[i] += col[i];
            }
            a.1 += (p % w) as f64 + 0.5;
            a.2 += (p / w) as f64 + 0.5;
            a.3 += 1;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let m = a.3 as f64;
                c.color = a.0.map(|v| v / m);
                c.x = a.1 / m;
                c.y = a.2 / m;
            }
        }
    }

    let min_size = ((n as f64 / centers.len() as f64) / 4.0).floor().max(1.0) as usize;
    let (sp_id, count) = enforce_connectivity(&labels, w, h, min_size);
    Ok(SuperpixelMap {
        width: w,
        height: h,
        sp_id,
        count,
    })
}

fn neighbors4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < w).then(|| p + 1);
    let up = (y > 0).then(|| p - w);
    let down = (y + 1 < h).then(|| p + w);
    [left, right, up, down].into_iter().flatten()
}

/// Splits labels into 4-connected components, then merges every component that
/// is not the largest piece of its label, or is smaller than `min_size`, into
/// its largest adjacent region.
fn enforce_connectivity(labels: &[usize], w: usize, h: usize, min_size: usize) -> (Vec<usize>, usize) {
    let n = labels.len();
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbors4(p, w, h) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_label.push(labels[start]);
        comp_size.push(size);
    }
    let n_comp = comp_label.len();

    let mut largest_of_label = std::collections::HashMap::new();
    for c in 0..n_comp {
        let e = largest_of_label.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }

    let mut adjacency = vec![Vec::new(); n_comp];
    for p in 0..n {
        for q in neighbors4(p, w, h) {
            let (a, b) = (comp[p], comp[q]);
            if a != b {
                adjacency[a].push(b);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut uf = UnionFind::new(&comp_size);
    let mut orphans: Vec<usize> = (0..n_comp)
        .filter(|&c| largest_of_label[&comp_label[c]] != c || comp_size[c] < min_size)
        .collect();
    orphans.sort_by_key(|&c| (comp_size[c], c));
    for c in orphans {
        let root = uf.find(c);
        if uf.size[root] >= min_size && largest_of_label[&comp_label[c]] == c {
            continue;
        }
        let mut best: Option<usize> = None;
        // neighbors of this component, resolved to their merged sets
        for &nb in &adjacency[c] {
            let r = uf.find(nb);
            if r == root {
                continue;
            }
            if best.is_none_or(|b| (uf.size[r], std::cmp::Reverse(r)) > (uf.size[b], std::cmp::Reverse(b))) {
                best = Some(r);
            }
        }
        if let Some(b) = best {
            uf.union(root, b);
        }
    }

    let mut ids: Vec<usize> = comp.iter().map(|&c| uf.find(c)).collect();
    let count = compact_ids(&mut ids, n_comp);
    (ids, count)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(sizes: &[usize]) -> Self {
        Self {
            parent: (0..sizes.len()).collect(),
            size: sizes.to_vec(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Groups superpixels into at most `n` clusters by k-means over their mean colors.
/// Pixels inherit the cluster of their superpixel.
pub fn cluster_superpixels(image: &RgbImage, sp: &SuperpixelMap, n: usize, seed: u64) -> Result<ClusterMap> {
    if n == 0 {
        return Err(Error::invalid("cluster count must be at least 1"));
    }
    if (sp.width, sp.height) != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: (sp.width, sp.height),
        });
    }
    if n >= sp.count {
        return ClusterMap::new(sp.width, sp.height, sp.sp_id.clone());
    }
    let mut sums = vec![Vector3::zeros(); sp.count];
    let mut counts = vec![0usize; sp.count];
    for (p, &id) in image.pixels().iter().zip(&sp.sp_id) {
        sums[id] += Vector3::from(*p);
        counts[id] += 1;
    }
    let means: Vec<Vector3<f64>> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(&means, n, &mut rng);
    let assignment = lloyd(&means, centers, CLUSTER_KMEANS_ITERS);
    let ids = sp.sp_id.iter().map(|&s| assignment[s]).collect();
    ClusterMap::new(sp.width, sp.height, ids)
}

/// Superpixels followed by clustering, with the superpixel count capped at the pixel count.
pub fn build_clusters(
    image: &RgbImage,
    superpixel_count: usize,
    compactness: f64,
    n_clusters: usize,
    seed: u64,
) -> Result<ClusterMap> {
    let sp = compute_superpixels(image, superpixel_count.clamp(1, image.len()), compactness)?;
    cluster_superpixels(image, &sp, n_clusters, seed)
}
