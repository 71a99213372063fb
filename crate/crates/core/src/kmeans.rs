use nalgebra::Vector3;
use rand::Rng;

/// k-means++ seeding by D² sampling. Stops early once every point coincides with
/// a chosen center, so at most `min(k, #distinct points)` centers are returned.
pub(crate) fn kmeans_pp<R: Rng>(data: &[Vector3<f64>], k: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let first = rng.random_range(0..data.len());
    let mut centers = vec![data[first]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - data[first]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = Some(i);
                break;
            }
            target -= d;
        }
        // rounding can walk past the end of the cumulative sum
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"));
        let c = data[pick];
        for (slot, x) in d2.iter_mut().zip(data) {
            *slot = slot.min((x - c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn nearest(x: &Vector3<f64>, centers: &[Vector3<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Lloyd iterations from the given centers. Returns assignments renumbered so
/// that no id is empty.
pub(crate) fn lloyd(data: &[Vector3<f64>], mut centers: Vec<Vector3<f64>>, iters: usize) -> Vec<usize> {
    let mut assignment: Vec<usize> = data.iter().map(|x| nearest(x, &centers)).collect();
    for _ in 0..iters {
        let mut sums = vec![Vector3::zeros(); centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (x, &a) in data.iter().zip(&assignment) {
            sums[a] += x;
            counts[a] += 1;
        }
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                *c = s / n as f64;
            }
        }
        let next: Vec<usize> = data.iter().map(|x| nearest(x, &centers)).collect();
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    compact_ids(&mut assignment, centers.len());
    assignment
}

/// Renumbers ids in `0..n` to `0..m` keeping their relative order; returns `m`.
pub(crate) fn compact_ids(ids: &mut [usize], n: usize) -> usize {
    let mut used = vec![false; n];
    for &id in ids.iter() {
        used[id] = true;
    }
    let mut remap = vec![usize::MAX; n];
    let mut next = 0;
    for (old, &u) in used.iter().enumerate() {
        if u {
            remap[old] = next;
            next += 1;
        }
    }
    for id in ids.iter_mut() {
        *id = remap[*id];
    }
    next
}
