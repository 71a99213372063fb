//! Looseness sweeps over a directory of images with ground-truth masks.
//!
//! Layout: `images/<id>.png` (or `.ppm`) next to `masks/<id>.png`, with an
//! optional `manifest.txt` listing ids one per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{build_clusters, ClusterMap};
use crate::error::{Error, Result};
use crate::imagecore::{
    box_from_mask, dilate_box, evaluate, load_image, load_mask, save_mask, LabelMask, Rgb, RgbImage,
};
use crate::solver::{segment_with_clusters, Init, SolverConfig};

/// Padding around the ground-truth extent that defines the L = 0 box.
pub const BASE_BOX_PAD: usize = 10;

pub const DEFAULT_LOOSENESS: [f64; 4] = [0.0, 1.2, 2.4, 6.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "loosecut")]
    LooseCut,
    #[serde(rename = "grabcut")]
    GrabCut,
    #[serde(rename = "loosecut-no-constraint")]
    NoConstraint,
    #[serde(rename = "loosecut-no-consistency")]
    NoConsistency,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::LooseCut,
        Method::GrabCut,
        Method::NoConstraint,
        Method::NoConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LooseCut => "loosecut",
            Method::GrabCut => "grabcut",
            Method::NoConstraint => "loosecut-no-constraint",
            Method::NoConsistency => "loosecut-no-consistency",
        }
    }

    /// The solver configuration this method runs with, derived from `base`.
    pub fn config(self, base: &SolverConfig) -> SolverConfig {
        match self {
            Method::LooseCut => base.clone(),
            Method::GrabCut => base.grabcut(),
            Method::NoConstraint => SolverConfig {
                enable_similarity_constraint: false,
                ..base.clone()
            },
            Method::NoConsistency => SolverConfig {
                enable_label_consistency: false,
                ..base.clone()
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetCase {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedCase {
    pub case: String,
    pub reason: String,
}

/// Cases found in `dir`, plus ids that were listed but have missing files.
pub fn discover_dataset(dir: &Path) -> Result<(Vec<DatasetCase>, Vec<SkippedCase>)> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    let ids = match fs::read_to_string(dir.join("manifest.txt")) {
        Ok(text) => text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let entries = fs::read_dir(&masks).map_err(|e| Error::io(&masks, e))?;
            let mut ids = Vec::new();
            for entry in entries {
                let path = entry.map_err(|e| Error::io(&masks, e))?.path();
                if path.extension().is_some_and(|x| x == "png") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        ids.push(stem.to_string());
                    }
                }
            }
            ids.sort();
            ids
        }
        Err(e) => return Err(Error::io(dir.join("manifest.txt"), e)),
    };

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for id in ids {
        let mask_path = masks.join(format!("{id}.png"));
        let image_path = ["png", "ppm"]
            .iter()
            .map(|ext| images.join(format!("{id}.{ext}")))
            .find(|p| p.is_file());
        match image_path {
            Some(image_path) if mask_path.is_file() => cases.push(DatasetCase {
                id,
                image_path,
                mask_path,
            }),
            Some(_) => skipped.push(SkippedCase {
                case: id,
                reason: "mask file missing".into(),
            }),
            None => skipped.push(SkippedCase {
                case: id,
                reason: "image file missing".into(),
            }),
        }
    }
    Ok((cases, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub case: String,
    pub method: Method,
    pub looseness: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub error_rate: f64,
    pub runtime_ms: u64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedCase>,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub looseness: Vec<f64>,
    pub methods: Vec<Method>,
    pub config: SolverConfig,
    /// Record wall-clock runtimes. Off by default so that output is reproducible byte for byte.
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            looseness: DEFAULT_LOOSENESS.to_vec(),
            methods: vec![Method::LooseCut, Method::GrabCut],
            config: SolverConfig::default(),
            timing: false,
        }
    }
}

struct LoadedCase {
    id: String,
    image: RgbImage,
    gt: LabelMask,
    clusters: Option<ClusterMap>,
}

fn load_case(case: &DatasetCase, options: &BenchOptions) -> Result<LoadedCase> {
    let image = load_image(&case.image_path)?;
    let gt = load_mask(&case.mask_path)?;
    gt.check_dims(image.dims())?;
    let base = box_from_mask(&gt, BASE_BOX_PAD)?;
    if base.covers_image(image.width(), image.height()) {
        return Err(Error::invalid("baseline box already spans the image"));
    }
    let needs_clusters = options.methods.iter().any(|m| {
        let c = m.config(&options.config);
        c.enable_label_consistency && c.beta > 0.0
    });
    let clusters = if needs_clusters {
        let c = &options.config;
        Some(build_clusters(
            &image,
            c.superpixel_count,
            c.compactness,
            c.n_clusters,
            c.seed,
        )?)
    } else {
        None
    };
    Ok(LoadedCase {
        id: case.id.clone(),
        image,
        gt,
        clusters,
    })
}

fn run_one(case: &LoadedCase, method: Method, looseness: f64, options: &BenchOptions) -> Result<BenchRecord> {
    let (w, h) = case.image.dims();
    let base = box_from_mask(&case.gt, BASE_BOX_PAD)?;
    let b = dilate_box(&base, looseness, w, h);
    let config = method.config(&options.config);
    let start = Instant::now();
    let result = segment_with_clusters(&case.image, &Init::Box(b), case.clusters.as_ref(), &config)?;
    let elapsed = start.elapsed();
    let m = evaluate(&result.mask, &case.gt, &b)?;
    Ok(BenchRecord {
        case: case.id.clone(),
        method,
        looseness,
        precision: m.precision,
        recall: m.recall,
        f_measure: m.f_measure,
        error_rate: m.error_rate,
        runtime_ms: if options.timing { elapsed.as_millis() as u64 } else { 0 },
        iterations: result.iterations_run,
    })
}

/// Runs every case × looseness × method. Cases that cannot be loaded, whose
/// baseline box already spans the image, or whose run fails land in `skipped`.
pub fn run_cases(cases: &[DatasetCase], options: &BenchOptions) -> Result<BenchReport> {
    options.config.validate()?;
    if options.looseness.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("looseness levels must be finite and nonnegative"));
    }
    let loaded: Vec<std::result::Result<LoadedCase, SkippedCase>> = cases
        .par_iter()
        .map(|c| {
            load_case(c, options).map_err(|e| SkippedCase {
                case: c.id.clone(),
                reason: e.to_string(),
            })
        })
        .collect();
    let mut report = BenchReport::default();
    let mut ready = Vec::new();
    for item in loaded {
        match item {
            Ok(c) => ready.push(c),
            Err(s) => report.skipped.push(s),
        }
    }

    let jobs: Vec<(&LoadedCase, Method, f64)> = ready
        .iter()
        .flat_map(|c| {
            options
                .looseness
                .iter()
                .flat_map(move |&l| options.methods.iter().map(move |&m| (c, m, l)))
        })
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(c, m, l)| (c.id.clone(), m, l, run_one(c, m, l, options)))
        .collect();
    for (case, method, l, outcome) in outcomes {
        match outcome {
            Ok(r) => report.records.push(r),
            Err(e) => report.skipped.push(SkippedCase {
                case,
                reason: format!("{method} at looseness {l}: {e}"),
            }),
        }
    }
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.case, s.reason);
    }
    report.records.sort_by(|a, b| {
        (&a.case, a.looseness, a.method)
            .partial_cmp(&(&b.case, b.looseness, b.method))
            .unwrap()
    });
    Ok(report)
}

pub fn run_benchmark(dir: &Path, options: &BenchOptions) -> Result<BenchReport> {
    let (cases, mut skipped) = discover_dataset(dir)?;
    let mut report = run_cases(&cases, options)?;
    skipped.append(&mut report.skipped);
    report.skipped = skipped;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub looseness: f64,
    pub n: usize,
    pub mean_f_measure: f64,
    pub mean_error_rate: f64,
}

/// Mean F-measure and error rate per (method, looseness), ordered by method name then looseness.
pub fn summarize(records: &[BenchRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to summarize"));
    }
    // looseness keyed by bit pattern; all levels are finite and nonnegative, so the order matches
    let mut groups: BTreeMap<(&'static str, u64), SummaryRow> = BTreeMap::new();
    for r in records {
        let g = groups
            .entry((r.method.name(), r.looseness.to_bits()))
            .or_insert(SummaryRow {
                method: r.method,
                looseness: r.looseness,
                n: 0,
                mean_f_measure: 0.0,
                mean_error_rate: 0.0,
            });
        // accumulate sums, divided below
        g.n += 1;
        g.mean_f_measure += r.f_measure;
        g.mean_error_rate += r.error_rate;
    }
    Ok(groups
        .into_values()
        .map(|g| SummaryRow {
            mean_f_measure: g.mean_f_measure / g.n as f64,
            mean_error_rate: g.mean_error_rate / g.n as f64,
            ..g
        })
        .collect())
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records(records: &[BenchRecord], path: &Path) -> Result<()> {
    write_csv(records, path)
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    write_csv(rows, path)
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// A generated test image whose ground truth is known by construction.
pub struct SyntheticCase {
    pub id: String,
    pub image: RgbImage,
    pub mask: LabelMask,
}

const SYNTH_SIZE: usize = 160;
const SYNTH_RADIUS: f64 = 14.0;
const SYNTH_TRAP_HALF: usize = 55;
const SYNTH_STRIPE: usize = 8;
const SYNTH_NOISE: f64 = 5.0;

const BACKGROUND_PALETTE: [Rgb; 5] = [
    [40.0, 90.0, 200.0],
    [60.0, 160.0, 70.0],
    [150.0, 150.0, 150.0],
    [90.0, 60.0, 40.0],
    [200.0, 200.0, 90.0],
];

const OBJECT_PALETTE: [Rgb; 5] = [
    [230.0, 30.0, 30.0],
    [220.0, 40.0, 200.0],
    [250.0, 140.0, 20.0],
    [245.0, 245.0, 245.0],
    [15.0, 15.0, 15.0],
];

/// Multi-colored disk inside a large square of one background color.
///
/// That trap color also appears outside the square, but only in a thin stripe,
/// so a background model fit on the exterior gives it little weight. Once a box
/// is loose enough to swallow the square, the trap color dominates the
/// foreground model; the remaining exterior is split among the other
/// background colors.
pub fn synthetic_trap_case(variant: usize) -> SyntheticCase {
    let trap = variant % BACKGROUND_PALETTE.len();
    let shift = (variant * 7 % 17) as f64 - 8.0;
    let cx = SYNTH_SIZE as f64 / 2.0 + shift;
    let cy = SYNTH_SIZE as f64 / 2.0 - shift / 2.0;
    let others: Vec<Rgb> = (0..BACKGROUND_PALETTE.len())
        .filter(|&i| i != trap)
        .map(|i| BACKGROUND_PALETTE[i])
        .collect();
    let band = SYNTH_SIZE.div_ceil(others.len());
    let in_trap = |x: usize, y: usize| {
        let (tx, ty) = (cx.floor() as usize, cy.floor() as usize);
        x.abs_diff(tx) < SYNTH_TRAP_HALF && y.abs_diff(ty) < SYNTH_TRAP_HALF
    };
    let in_disk = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy <= SYNTH_RADIUS * SYNTH_RADIUS
    };
    let sector = |x: usize, y: usize| {
        let a = (y as f64 + 0.5 - cy).atan2(x as f64 + 0.5 - cx) + std::f64::consts::PI;
        let sectors = OBJECT_PALETTE.len();
        ((a / std::f64::consts::TAU * sectors as f64) as usize + variant) % sectors
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + variant as u64);
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("positive deviation");
    let image = RgbImage::from_fn(SYNTH_SIZE, SYNTH_SIZE, |x, y| {
        let base = if in_disk(x, y) {
            OBJECT_PALETTE[sector(x, y)]
        } else if in_trap(x, y) || y < SYNTH_STRIPE {
            BACKGROUND_PALETTE[trap]
        } else {
            others[x / band]
        };
        base.map(|c| (c + noise.sample(&mut rng)).round().clamp(0.0, 255.0))
    })
    .expect("valid dimensions");
    SyntheticCase {
        id: format!("trap{variant:02}"),
        image,
        mask: LabelMask::from_fn(SYNTH_SIZE, SYNTH_SIZE, in_disk),
    }
}

/// Writes `n` synthetic cases in the dataset layout, with a manifest.
pub fn write_synthetic_dataset(dir: &Path, n: usize) -> Result<Vec<String>> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut ids = Vec::with_capacity(n);
    for v in 0..n {
        let case = synthetic_trap_case(v);
        let path = images.join(format!("{}.png", case.id));
        fs::write(&path, case.image.to_png()?).map_err(|e| Error::io(&path, e))?;
        save_mask(&case.mask, masks.join(format!("{}.png", case.id)))?;
        ids.push(case.id);
    }
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, ids.join("\n") + "\n").map_err(|e| Error::io(&manifest, e))?;
    Ok(ids)
}
