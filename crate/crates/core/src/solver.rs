//! Alternating optimization over appearance models and pixel labels.
//!
//! Each iteration re-fits both mixtures on the current labeling, optionally
//! prunes foreground components that sit too close to the background model,
//! then solves the labeling exactly with one max-flow. The GrabCut baseline is
//! the same loop with the pruning and the cluster term switched off.

use serde::{Deserialize, Serialize};

use crate::appearance::{enforce_similarity_constraint, estimate_models, AppearanceModels};
use crate::clustering::{build_clusters, ClusterMap};
use crate::error::{Error, Result};
use crate::graphcut::{assemble_graph, extract_labels, max_flow, PairwiseTerm, UnaryCosts};
use crate::imagecore::{BoundingBox, LabelMask, RgbImage};

/// Fraction of in-region pixels whose change still counts as converged.
pub const CONVERGENCE_FRACTION: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the label-consistency term.
    pub beta: f64,
    /// Upper bound on the foreground/background similarity.
    pub delta: f64,
    pub k_f: usize,
    pub k_b: usize,
    pub n_clusters: usize,
    pub max_iters: usize,
    /// Scale of the contrast-sensitive smoothness term.
    pub gamma: f64,
    pub superpixel_count: usize,
    pub compactness: f64,
    pub seed: u64,
    pub enable_similarity_constraint: bool,
    pub enable_label_consistency: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            delta: 0.02,
            k_f: 6,
            k_b: 5,
            n_clusters: 16,
            max_iters: 10,
            gamma: 50.0,
            superpixel_count: 400,
            compactness: 10.0,
            seed: 0,
            enable_similarity_constraint: true,
            enable_label_consistency: true,
        }
    }
}

impl SolverConfig {
    pub fn grabcut(&self) -> Self {
        Self {
            enable_similarity_constraint: false,
            enable_label_consistency: false,
            beta: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_b == 0 || self.k_f == 0 {
            return Err(Error::invalid("mixture sizes must be at least 1"));
        }
        if self.enable_similarity_constraint && self.k_f <= self.k_b {
            return Err(Error::invalid(
                "k_f must exceed k_b when the similarity constraint is on",
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be a finite nonnegative number"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be a finite nonnegative number"));
        }
        if self.n_clusters == 0 || self.superpixel_count == 0 {
            return Err(Error::invalid("cluster and superpixel counts must be at least 1"));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::invalid("compactness must be positive"));
        }
        Ok(())
    }

    fn uses_label_consistency(&self) -> bool {
        self.enable_label_consistency && self.beta > 0.0
    }
}

/// Initial labeling: a box, or an arbitrary mask. Pixels outside it stay background.
#[derive(Clone, Debug)]
pub enum Init {
    Box(BoundingBox),
    Mask(LabelMask),
}

impl Init {
    fn region(&self, width: usize, height: usize) -> Result<LabelMask> {
        match self {
            Init::Box(b) => {
                b.validate(width, height)?;
                Ok(LabelMask::from_box(width, height, b))
            }
            Init::Mask(m) => {
                m.check_dims((width, height))?;
                Ok(m.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub e_gc: f64,
    pub e_lc: f64,
    pub e_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    #[serde(rename = "iter")]
    pub iteration: usize,
    pub e_gc: f64,
    pub e_lc: f64,
    pub e_total: f64,
    /// Energy of the labeling that entered this iteration, under this iteration's models.
    #[serde(skip)]
    pub e_previous: f64,
}

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub mask: LabelMask,
    pub cluster_labels: Vec<u8>,
    pub trace: Vec<TraceEntry>,
    pub iterations_run: usize,
    pub final_models: AppearanceModels,
    pub converged: bool,
}

/// Number of pixels in each cluster that disagree with their cluster's label.
pub fn energy_label_consistency(labels: &LabelMask, cluster_labels: &[u8], clusters: &ClusterMap) -> Result<u64> {
    if cluster_labels.len() != clusters.n_clusters() {
        return Err(Error::invalid(format!(
            "{} cluster labels for {} clusters",
            cluster_labels.len(),
            clusters.n_clusters()
        )));
    }
    labels.check_dims(clusters.dims())?;
    Ok(labels
        .labels()
        .iter()
        .zip(clusters.ids())
        .filter(|(&x, &k)| x != cluster_labels[k])
        .count() as u64)
}

/// Majority label of each cluster; ties go to background.
pub fn optimal_cluster_labels(labels: &LabelMask, clusters: &ClusterMap) -> Vec<u8> {
    let mut fg = vec![0usize; clusters.n_clusters()];
    let mut size = vec![0usize; clusters.n_clusters()];
    for (&x, &k) in labels.labels().iter().zip(clusters.ids()) {
        fg[k] += x as usize;
        size[k] += 1;
    }
    fg.iter().zip(&size).map(|(&f, &n)| (2 * f > n) as u8).collect()
}

fn energy_from_terms(
    labels: &LabelMask,
    cluster_labels: &[u8],
    unary: &UnaryCosts,
    pairwise: &PairwiseTerm,
    clusters: Option<&ClusterMap>,
    beta: f64,
) -> Result<Energy> {
    let unary_sum: f64 = labels.labels().iter().enumerate().map(|(i, &x)| unary.cost(i, x)).sum();
    let e_gc = unary_sum + pairwise.cut_cost(labels.labels());
    let e_lc = match clusters {
        Some(c) => energy_label_consistency(labels, cluster_labels, c)? as f64,
        None => 0.0,
    };
    Ok(Energy {
        e_gc,
        e_lc,
        e_total: e_gc + beta * e_lc,
    })
}

/// `E_GC` (unary plus 8-neighbor smoothness), the cluster disagreement count
/// `E_LC`, and `E_GC + beta · E_LC`. With `clusters` absent, `E_LC` is zero.
pub fn energy_total(
    labels: &LabelMask,
    cluster_labels: &[u8],
    models: &AppearanceModels,
    image: &RgbImage,
    clusters: Option<&ClusterMap>,
    config: &SolverConfig,
) -> Result<Energy> {
    labels.check_dims(image.dims())?;
    let unary = UnaryCosts::compute(image, models);
    let pairwise = PairwiseTerm::new(image, config.gamma);
    energy_from_terms(labels, cluster_labels, &unary, &pairwise, clusters, config.beta)
}

/// Full run, computing the superpixel clusters first when the consistency term is on.
pub fn loosecut(image: &RgbImage, init: &Init, config: &SolverConfig) -> Result<SegmentationResult> {
    config.validate()?;
    let clusters = if config.uses_label_consistency() {
        Some(build_clusters(
            image,
            config.superpixel_count,
            config.compactness,
            config.n_clusters,
            config.seed,
        )?)
    } else {
        None
    };
    segment_with_clusters(image, init, clusters.as_ref(), config)
}

pub fn grabcut_baseline(image: &RgbImage, b: &BoundingBox, config: &SolverConfig) -> Result<SegmentationResult> {
    loosecut(image, &Init::Box(*b), &config.grabcut())
}

/// The iteration loop, given clusters computed ahead of time. `clusters` is
/// ignored when the consistency term is disabled.
pub fn segment_with_clusters(
    image: &RgbImage,
    init: &Init,
    clusters: Option<&ClusterMap>,
    config: &SolverConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    let (w, h) = image.dims();
    let region = init.region(w, h)?;
    if region.count_foreground() == 0 {
        return Err(Error::DegenerateInit("no foreground seed"));
    }
    if region.count_background() == 0 {
        return Err(Error::DegenerateInit("no background seed"));
    }
    let clusters = if config.uses_label_consistency() {
        let c = clusters.ok_or_else(|| Error::invalid("label consistency needs a cluster map"))?;
        region.check_dims(c.dims())?;
        Some(c)
    } else {
        None
    };
    let beta = if clusters.is_some() { config.beta } else { 0.0 };
    let k_extra = config.k_f.saturating_sub(config.k_b);
    let tolerance = (CONVERGENCE_FRACTION * region.count_foreground() as f64).ceil() as usize;

    let pairwise = PairwiseTerm::new(image, config.gamma);
    let mut labels = region.clone();
    let mut cluster_labels = clusters.map(|c| optimal_cluster_labels(&labels, c)).unwrap_or_default();
    let mut trace = Vec::new();
    let mut models = None;
    let mut converged = false;

    for iteration in 1..=config.max_iters {
        if labels.count_foreground() == 0 {
            // nothing left to model as foreground; the empty labeling is final
            converged = true;
            break;
        }
        let mut theta = estimate_models(image, &labels, config.k_f, config.k_b, config.seed)?;
        if config.enable_similarity_constraint {
            match enforce_similarity_constraint(&theta, config.delta, k_extra) {
                Ok(pruned) => theta = pruned,
                Err(e) => log::warn!("iteration {iteration}: similarity constraint skipped: {e}"),
            }
        }
        let unary = UnaryCosts::compute(image, &theta);
        let previous = energy_from_terms(&labels, &cluster_labels, &unary, &pairwise, clusters, beta)?;

        let net = assemble_graph(&unary, &pairwise, &region, clusters, beta);
        let cut = max_flow(&net);
        let (next, next_cluster_labels) = extract_labels(&cut, (w, h), net.n_aux());
        let energy = energy_from_terms(&next, &next_cluster_labels, &unary, &pairwise, clusters, beta)?;
        log::debug!(
            "iteration {iteration}: E = {:.4} (prev {:.4}), fg components {}",
            energy.e_total,
            previous.e_total,
            theta.fg.len()
        );
        trace.push(TraceEntry {
            iteration,
            e_gc: energy.e_gc,
            e_lc: energy.e_lc,
            e_total: energy.e_total,
            e_previous: previous.e_total,
        });

        let changed = next.count_changed(&labels);
        labels = next;
        cluster_labels = next_cluster_labels;
        models = Some(theta);
        if changed == 0 || changed < tolerance {
            converged = true;
            break;
        }
    }

    let final_models = match models {
        Some(m) => m,
        None => return Err(Error::DegenerateInit("no foreground seed")),
    };
    Ok(SegmentationResult {
        mask: labels,
        cluster_labels,
        iterations_run: trace.len(),
        trace,
        final_models,
        converged,
    })
}
