//! Gaussian mixture appearance models for the foreground and background, the
//! inverse-mean-distance similarity between them, and the component deletion
//! that keeps the two models apart.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{LabelMask, Rgb, RgbImage};
use crate::kmeans::{kmeans_pp, lloyd};

/// Upper clamp on a unary cost; also the cost of a color whose mixture density underflows.
pub const COST_MAX: f64 = 1e8;

/// Lower bound on covariance eigenvalues, in squared [0, 255] color units.
pub const COVARIANCE_FLOOR: f64 = 1.0;

/// Guard against division by zero when a foreground and background mean coincide.
pub const SIMILARITY_EPS: f64 = 1e-6;

pub const DEFAULT_EM_ITERS: usize = 30;
pub const EM_TOLERANCE: f64 = 1e-5;

const KMEANS_INIT_ITERS: usize = 10;
const MIN_RESPONSIBILITY: f64 = 1e-10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: Vector3<f64>,
    covariance: Matrix3<f64>,
    precision: Matrix3<f64>,
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Rgb, covariance: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(weight, Vector3::from(mean), Matrix3::from(covariance).transpose())
    }

    fn from_matrix(weight: f64, mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("component weight {weight} must be positive")));
        }
        if (covariance - covariance.transpose()).abs().max() > 1e-9 * covariance.abs().max().max(1.0) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let chol = covariance
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            weight,
            mean,
            covariance,
            precision: chol.inverse(),
            log_norm: -0.5 * (3.0 * LN_2PI + log_det),
        })
    }

    pub fn isotropic(weight: f64, mean: Rgb, variance: f64) -> Result<Self> {
        let v = variance;
        Self::new(weight, mean, [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]])
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> Rgb {
        [self.mean.x, self.mean.y, self.mean.z]
    }

    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let c = &self.covariance;
        [
            [c[(0, 0)], c[(0, 1)], c[(0, 2)]],
            [c[(1, 0)], c[(1, 1)], c[(1, 2)]],
            [c[(2, 0)], c[(2, 1)], c[(2, 2)]],
        ]
    }

    /// Smallest covariance eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance).eigenvalues.min()
    }

    /// log N(x | μ, Σ), without the mixture weight.
    fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.mean;
        self.log_norm - 0.5 * d.dot(&(self.precision * d))
    }

    fn with_weight(&self, weight: f64) -> Self {
        Self { weight, ..self.clone() }
    }
}

/// Weighted mixture of full-covariance RGB Gaussians. Weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    components: Vec<GaussianComponent>,
}

impl Gmm {
    /// Builds a mixture, rescaling the component weights to sum to one.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components.iter().map(|c| c.with_weight(c.weight / total)).collect();
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mixture density at `color`, computed directly (no log-space rescaling).
    pub fn density(&self, color: &Rgb) -> f64 {
        let x = Vector3::from(*color);
        self.components.iter().map(|c| c.weight * c.log_density(&x).exp()).sum()
    }

    /// Natural log of the mixture density, stable for far-away colors.
    pub fn log_density(&self, color: &Rgb) -> f64 {
        let x = Vector3::from(*color);
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_density(&x)))
    }

    pub fn log_likelihood(&self, samples: &[Rgb]) -> f64 {
        samples.iter().map(|s| self.log_density(s)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceModels {
    pub fg: Gmm,
    pub bg: Gmm,
}

/// A fitted mixture along with the log-likelihood after initialization and after
/// every EM iteration.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub gmm: Gmm,
    pub log_likelihood: Vec<f64>,
}

pub fn fit_gmm(samples: &[Rgb], k: usize, seed: u64, max_em_iters: usize) -> Result<Gmm> {
    fit_gmm_traced(samples, k, seed, max_em_iters).map(|f| f.gmm)
}

/// EM over full-covariance Gaussians, initialized by seeded k-means++ followed by
/// a few Lloyd iterations.
///
/// Each M-step maximizes the expected complete log-likelihood under the
/// constraint that every covariance eigenvalue is at least [`COVARIANCE_FLOOR`]
/// (eigenvalue clipping), so the log-likelihood never decreases.
pub fn fit_gmm_traced(samples: &[Rgb], k: usize, seed: u64, max_em_iters: usize) -> Result<GmmFit> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("gmm"));
    }
    if k == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    let data: Vec<Vector3<f64>> = samples.iter().map(|s| Vector3::from(*s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(&data, k, &mut rng);
    let assignment = lloyd(&data, centers, KMEANS_INIT_ITERS);

    let k_eff = assignment.iter().max().map_or(1, |m| m + 1);
    let mut resp = vec![0.0; data.len() * k_eff];
    for (i, &a) in assignment.iter().enumerate() {
        resp[i * k_eff + a] = 1.0;
    }
    let mut components = m_step(&data, &resp, k_eff)?;

    let mut history = Vec::with_capacity(max_em_iters + 1);
    let mut ll = e_step(&data, &components, &mut resp);
    history.push(ll);
    for _ in 0..max_em_iters {
        components = m_step(&data, &resp, components.len())?;
        if resp.len() != data.len() * components.len() {
            resp.resize(data.len() * components.len(), 0.0);
        }
        let next = e_step(&data, &components, &mut resp);
        history.push(next);
        let done = (next - ll).abs() <= EM_TOLERANCE * ll.abs().max(1e-300);
        ll = next;
        if done {
            break;
        }
    }
    Ok(GmmFit {
        gmm: Gmm::new(components)?,
        log_likelihood: history,
    })
}

/// Fills `resp` (row-major, one row per sample) and returns the log-likelihood.
fn e_step(data: &[Vector3<f64>], comps: &[GaussianComponent], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let log_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    let mut ll = 0.0;
    for (x, row) in data.iter().zip(resp.chunks_exact_mut(k)) {
        let mut max = f64::NEG_INFINITY;
        for ((r, c), lw) in row.iter_mut().zip(comps).zip(&log_w) {
            *r = lw + c.log_density(x);
            max = max.max(*r);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
        ll += max + sum.ln();
    }
    ll
}

fn m_step(data: &[Vector3<f64>], resp: &[f64], k: usize) -> Result<Vec<GaussianComponent>> {
    let n = data.len() as f64;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let mut nk = 0.0;
        let mut sum = Vector3::zeros();
        for (x, row) in data.iter().zip(resp.chunks_exact(k)) {
            nk += row[j];
            sum += x * row[j];
        }
        if nk < MIN_RESPONSIBILITY {
            continue;
        }
        let mean = sum / nk;
        let mut scatter = Matrix3::zeros();
        for (x, row) in data.iter().zip(resp.chunks_exact(k)) {
            let d = x - mean;
            scatter += (d * d.transpose()) * row[j];
        }
        let cov = clip_eigenvalues(scatter / nk, COVARIANCE_FLOOR);
        out.push(GaussianComponent::from_matrix(nk / n, mean, cov)?);
    }
    Ok(out)
}

fn clip_eigenvalues(m: Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&clipped) * v.transpose();
    (out + out.transpose()) * 0.5
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn mean_distance(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    (a.mean - b.mean).norm()
}

/// Index of the background component whose mean is closest (Euclidean) to the
/// foreground component's mean. Ties go to the lowest index.
pub fn nearest_bg_component(fg_comp: &GaussianComponent, bg: &Gmm) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, b) in bg.components.iter().enumerate() {
        let d = mean_distance(fg_comp, b);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Inverse of the distance between the component mean and its nearest background mean.
pub fn component_similarity(fg_comp: &GaussianComponent, bg: &Gmm) -> f64 {
    let j = nearest_bg_component(fg_comp, bg);
    1.0 / mean_distance(fg_comp, &bg.components[j]).max(SIMILARITY_EPS)
}

pub fn global_similarity(fg: &Gmm, bg: &Gmm) -> f64 {
    fg.components.iter().map(|c| component_similarity(c, bg)).sum()
}

/// Applies the component-deletion rule when `Sim(fg, bg) > delta`: among the
/// `k_extra` foreground components most similar to the background, each one with
/// similarity above `delta` is removed and the survivors' weights are rescaled.
pub fn enforce_similarity_constraint(
    models: &AppearanceModels,
    delta: f64,
    k_extra: usize,
) -> Result<AppearanceModels> {
    if global_similarity(&models.fg, &models.bg) <= delta {
        return Ok(models.clone());
    }
    let sims: Vec<f64> = models
        .fg
        .components
        .iter()
        .map(|c| component_similarity(c, &models.bg))
        .collect();
    let mut ranked: Vec<usize> = (0..sims.len()).collect();
    // stable: equal similarities keep index order
    ranked.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    let mut delete = vec![false; sims.len()];
    for &i in ranked.iter().take(k_extra) {
        if sims[i] > delta {
            delete[i] = true;
        }
    }
    let kept: Vec<GaussianComponent> = models
        .fg
        .components
        .iter()
        .zip(&delete)
        .filter(|(_, &d)| !d)
        .map(|(c, _)| c.clone())
        .collect();
    if kept.len() == sims.len() {
        return Ok(models.clone());
    }
    if kept.is_empty() {
        return Err(Error::invalid(
            "similarity constraint would delete every foreground component",
        ));
    }
    Ok(AppearanceModels {
        fg: Gmm::new(kept)?,
        bg: models.bg.clone(),
    })
}

/// Negative log mixture density, clamped to `[0, COST_MAX]`.
pub fn unary_cost(color: &Rgb, model: &Gmm) -> f64 {
    let p = model.density(color);
    if p > 0.0 {
        (-p.ln()).clamp(0.0, COST_MAX)
    } else {
        COST_MAX
    }
}

/// Fits the foreground mixture on label-1 pixels and the background mixture on label-0 pixels.
pub fn estimate_models(
    image: &RgbImage,
    labels: &LabelMask,
    k_f: usize,
    k_b: usize,
    seed: u64,
) -> Result<AppearanceModels> {
    labels.check_dims(image.dims())?;
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for (p, &l) in image.pixels().iter().zip(labels.labels()) {
        if l == 1 {
            fg.push(*p);
        } else {
            bg.push(*p);
        }
    }
    if fg.is_empty() {
        return Err(Error::EmptySamples("foreground"));
    }
    if bg.is_empty() {
        return Err(Error::EmptySamples("background"));
    }
    Ok(AppearanceModels {
        fg: fit_gmm(&fg, k_f, seed, DEFAULT_EM_ITERS)?,
        bg: fit_gmm(&bg, k_b, seed.wrapping_add(0x9e37_79b9), DEFAULT_EM_ITERS)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn comp(mean: Rgb) -> GaussianComponent {
        GaussianComponent::isotropic(1.0, mean, 25.0).unwrap()
    }

    fn gmm(means: &[Rgb]) -> Gmm {
        Gmm::new(means.iter().map(|&m| comp(m)).collect()).unwrap()
    }

    fn blobs(centers: &[Rgb], per: usize, sigma: f64, seed: u64) -> Vec<Rgb> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..per {
                out.push(c.map(|v| v + noise.sample(&mut rng)));
            }
        }
        out
    }

    fn dist(a: Rgb, b: Rgb) -> f64 {
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn constant_samples_give_floor_covariance() {
        let g = fit_gmm(&vec![[10.0, 20.0, 30.0]; 50], 1, 7, 30).unwrap();
        assert_eq!(g.len(), 1);
        let c = &g.components()[0];
        assert!(dist(c.mean(), [10.0, 20.0, 30.0]) < 1e-9);
        let cov = c.covariance();
        for (i, row) in cov.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { COVARIANCE_FLOOR } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "cov[{i}][{j}] = {v}");
            }
        }
    }

    #[test]
    fn recovers_two_blobs() {
        let truth = [[20.0, 20.0, 20.0], [230.0, 230.0, 230.0]];
        let samples = blobs(&truth, 500, 5.0, 11);
        let g = fit_gmm(&samples, 2, 3, 30).unwrap();
        assert_eq!(g.len(), 2);
        for t in truth {
            let c = g
                .components()
                .iter()
                .min_by(|a, b| dist(a.mean(), t).total_cmp(&dist(b.mean(), t)))
                .unwrap();
            assert!(dist(c.mean(), t) < 3.0);
            assert!((c.weight() - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn fewer_distinct_samples_than_k() {
        let g = fit_gmm(&[[1.0, 2.0, 3.0]; 4], 2, 0, 30).unwrap();
        assert_eq!(g.len(), 1);
        assert!(matches!(fit_gmm(&[], 2, 0, 30), Err(Error::EmptySamples(_))));
    }

    #[test]
    fn weights_sum_to_one_and_floor_holds() {
        let samples = blobs(
            &[[40.0, 80.0, 120.0], [200.0, 30.0, 60.0], [90.0, 90.0, 240.0]],
            200,
            8.0,
            5,
        );
        let g = fit_gmm(&samples, 5, 1, 30).unwrap();
        let total: f64 = g.components().iter().map(|c| c.weight()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for c in g.components() {
            assert!(c.min_eigenvalue() >= COVARIANCE_FLOOR - 1e-9);
        }
    }

    #[test]
    fn em_is_deterministic() {
        let samples = blobs(&[[40.0, 80.0, 120.0], [200.0, 30.0, 60.0]], 300, 10.0, 9);
        let a = fit_gmm(&samples, 4, 42, 30).unwrap();
        let b = fit_gmm(&samples, 4, 42, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nearest_component_cases() {
        let bg = gmm(&[[0.0; 3], [100.0; 3]]);
        // 155.88 vs 17.32
        assert_eq!(nearest_bg_component(&comp([90.0; 3]), &bg), 1);
        assert_eq!(nearest_bg_component(&comp([90.0; 3]), &gmm(&[[0.0; 3]])), 0);
        assert_eq!(nearest_bg_component(&comp([50.0; 3]), &bg), 0);
    }

    #[test]
    fn similarity_values() {
        let bg = gmm(&[[0.0, 0.0, 0.0]]);
        assert_eq!(component_similarity(&comp([0.0; 3]), &bg), 1e6);
        assert!((component_similarity(&comp([50.0, 0.0, 0.0]), &bg) - 0.02).abs() < 1e-15);
        assert!((component_similarity(&comp([0.0, 100.0, 0.0]), &bg) - 0.01).abs() < 1e-15);

        let fg = gmm(&[[50.0, 0.0, 0.0], [0.0, 100.0, 0.0]]);
        assert!((global_similarity(&fg, &bg) - 0.03).abs() < 1e-15);
        let single = gmm(&[[0.0, 0.0, 50.0]]);
        assert_eq!(
            global_similarity(&single, &bg),
            component_similarity(&single.components()[0], &bg)
        );
        assert_eq!(global_similarity(&bg, &bg), 1e6);
    }

    #[test]
    fn enforcement_leaves_satisfied_models() {
        let bg = gmm(&[[0.0; 3]]);
        let fg = gmm(&[[100.0, 0.0, 0.0]]);
        let models = AppearanceModels { fg, bg };
        assert_eq!(enforce_similarity_constraint(&models, 0.02, 1).unwrap(), models);
    }

    #[test]
    fn enforcement_deletes_near_component() {
        let bg = gmm(&[[0.0; 3]]);
        let fg = Gmm::new(vec![
            GaussianComponent::isotropic(0.3, [20.0, 0.0, 0.0], 25.0).unwrap(),
            GaussianComponent::isotropic(0.7, [0.0, 500.0, 0.0], 25.0).unwrap(),
        ])
        .unwrap();
        let models = AppearanceModels { fg, bg };
        let before = global_similarity(&models.fg, &models.bg);
        let out = enforce_similarity_constraint(&models, 0.02, 1).unwrap();
        assert_eq!(out.fg.len(), 1);
        assert_eq!(out.fg.components()[0].mean(), [0.0, 500.0, 0.0]);
        assert_eq!(out.fg.components()[0].weight(), 1.0);
        assert!(global_similarity(&out.fg, &out.bg) < before);
        assert_eq!(out.bg, models.bg);
    }

    #[test]
    fn enforcement_skips_when_top_component_is_small() {
        // six components, each 250 from the background mean: S = 0.004, Sim = 0.024
        let bg = gmm(&[[0.0; 3]]);
        let means: Vec<Rgb> = (0..6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 3.0;
                [250.0 * a.cos(), 250.0 * a.sin(), 0.0]
            })
            .collect();
        let models = AppearanceModels { fg: gmm(&means), bg };
        let sim = global_similarity(&models.fg, &models.bg);
        assert!(sim > 0.02);
        assert_eq!(enforce_similarity_constraint(&models, 0.02, 1).unwrap(), models);
    }

    #[test]
    fn enforcement_refuses_to_empty_foreground() {
        let bg = gmm(&[[0.0; 3]]);
        let models = AppearanceModels {
            fg: gmm(&[[1.0, 0.0, 0.0]]),
            bg,
        };
        assert!(enforce_similarity_constraint(&models, 0.02, 1).is_err());
    }

    #[test]
    fn unary_cost_at_mean() {
        let sigma2: f64 = 16.0;
        let g = Gmm::new(vec![GaussianComponent::isotropic(1.0, [50.0; 3], sigma2).unwrap()]).unwrap();
        let want = 0.5 * ((2.0 * std::f64::consts::PI).powi(3) * sigma2.powi(3)).ln();
        assert!((unary_cost(&[50.0; 3], &g) - want).abs() < 1e-12);

        let twice = Gmm::new(vec![
            GaussianComponent::isotropic(0.5, [50.0; 3], sigma2).unwrap(),
            GaussianComponent::isotropic(0.5, [50.0; 3], sigma2).unwrap(),
        ])
        .unwrap();
        assert!((unary_cost(&[60.0, 40.0, 55.0], &twice) - unary_cost(&[60.0, 40.0, 55.0], &g)).abs() < 1e-12);
    }

    #[test]
    fn unary_cost_underflow_clamps() {
        let g = Gmm::new(vec![GaussianComponent::isotropic(1.0, [0.0; 3], 1.0).unwrap()]).unwrap();
        assert_eq!(unary_cost(&[255.0; 3], &g), COST_MAX);
    }

    #[test]
    fn estimate_two_halves() {
        let img = RgbImage::from_fn(8, 4, |x, _| if x < 4 { [255.0, 0.0, 0.0] } else { [0.0, 0.0, 255.0] }).unwrap();
        let labels = LabelMask::from_fn(8, 4, |x, _| x < 4);
        let m = estimate_models(&img, &labels, 1, 1, 0).unwrap();
        assert!(dist(m.fg.components()[0].mean(), [255.0, 0.0, 0.0]) < 1e-9);
        assert!(dist(m.bg.components()[0].mean(), [0.0, 0.0, 255.0]) < 1e-9);

        let all_fg = LabelMask::filled(8, 4, 1);
        assert!(matches!(
            estimate_models(&img, &all_fg, 1, 1, 0),
            Err(Error::EmptySamples("background"))
        ));
    }

    #[test]
    fn estimate_three_color_foreground() {
        let colors = [[230.0, 40.0, 40.0], [40.0, 200.0, 60.0], [60.0, 60.0, 220.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 4.0).unwrap();
        let img = RgbImage::from_fn(30, 20, |x, y| {
            let base = if y >= 10 { [128.0; 3] } else { colors[x / 10] };
            base.map(|v: f64| (v + noise.sample(&mut rng)).clamp(0.0, 255.0))
        })
        .unwrap();
        let labels = LabelMask::from_fn(30, 20, |_, y| y < 10);
        let m = estimate_models(&img, &labels, 3, 1, 4).unwrap();
        for c in colors {
            let best =
                m.fg.components()
                    .iter()
                    .map(|k| dist(k.mean(), c))
                    .fold(f64::INFINITY, f64::min);
            assert!(best < 3.0, "no component near {c:?}: {best}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn color() -> impl Strategy<Value = Rgb> {
            (0.0..255.0f64, 0.0..255.0f64, 0.0..255.0f64).prop_map(|(r, g, b)| [r, g, b])
        }

        fn component() -> impl Strategy<Value = GaussianComponent> {
            (0.05..1.0f64, color(), 1.0..400.0f64).prop_map(|(w, m, v)| GaussianComponent::isotropic(w, m, v).unwrap())
        }

        proptest! {
            #[test]
            fn unary_cost_finite_and_permutation_invariant(
                comps in prop::collection::vec(component(), 1..5),
                c in color(),
            ) {
                let g = Gmm::new(comps.clone()).unwrap();
                let mut rev = comps;
                rev.reverse();
                let r = Gmm::new(rev).unwrap();
                let a = unary_cost(&c, &g);
                prop_assert!(a.is_finite() && a >= 0.0);
                prop_assert!((a - unary_cost(&c, &r)).abs() <= 1e-9 * a.max(1.0));
            }

            #[test]
            fn nearest_is_equivariant_under_bg_permutation(
                fg in component(),
                bg in prop::collection::vec(component(), 1..6),
                shift in 0usize..6,
            ) {
                let g = Gmm::new(bg.clone()).unwrap();
                let j = nearest_bg_component(&fg, &g);
                let n = bg.len();
                let s = shift % n;
                let mut rotated = bg.clone();
                rotated.rotate_left(s);
                let r = Gmm::new(rotated).unwrap();
                let jr = nearest_bg_component(&fg, &r);
                let dj = mean_distance(&fg, &g.components()[j]);
                let djr = mean_distance(&fg, &r.components()[jr]);
                prop_assert_eq!(dj, djr);
                if bg.iter().filter(|b| mean_distance(&fg, b) == dj).count() == 1 {
                    prop_assert_eq!((jr + s) % n, j);
                }
            }

            #[test]
            fn enforcement_keeps_background_and_kb_floor(
                fg in prop::collection::vec(component(), 6),
                bg in prop::collection::vec(component(), 5),
                delta in 0.001..0.1f64,
            ) {
                let models = AppearanceModels { fg: Gmm::new(fg).unwrap(), bg: Gmm::new(bg).unwrap() };
                let out = enforce_similarity_constraint(&models, delta, 1).unwrap();
                prop_assert_eq!(&out.bg, &models.bg);
                prop_assert!(out.fg.len() >= 5);
                prop_assert!(global_similarity(&out.fg, &out.bg) <= global_similarity(&models.fg, &models.bg));
                // the similarity of a foreground component does not depend on its siblings
                let fg_sims: Vec<f64> = models.fg.components().iter().map(|c| component_similarity(c, &models.bg)).collect();
                let mut perm = models.fg.components().to_vec();
                perm.reverse();
                let rev_sims: Vec<f64> = perm.iter().map(|c| component_similarity(c, &models.bg)).rev().collect();
                prop_assert_eq!(fg_sims, rev_sims);
            }

            #[test]
            fn em_log_likelihood_never_decreases(
                k in 1usize..6,
                seed in 0u64..1000,
                n_centers in 1usize..5,
            ) {
                let centers: Vec<Rgb> = (0..n_centers)
                    .map(|i| [30.0 + 50.0 * i as f64, 200.0 - 40.0 * i as f64, 100.0])
                    .collect();
                let samples = blobs(&centers, 60, 6.0, seed);
                let fit = fit_gmm_traced(&samples, k, seed, 30).unwrap();
                for w in fit.log_likelihood.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-7, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }
}
