//! Image, mask and box primitives, plus the two evaluation metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Row-major RGB image with channels on the [0, 255] scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image has a zero dimension"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if pixels.iter().flatten().any(|c| !(0.0..=255.0).contains(c)) {
            return Err(Error::invalid("channel value outside [0, 255]"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
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

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Decodes PNG or binary PPM/PGM bytes. Grayscale inputs are replicated to three channels.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        if !matches!(fmt, ImageFormat::Png | ImageFormat::Pnm) {
            return Err(Error::Decode(format!("unsupported format {fmt:?}")));
        }
        let img = image::load_from_memory_with_format(bytes, fmt).map_err(|e| Error::Decode(e.to_string()))?;
        Self::from_dynamic(&img)
    }

    fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Quantizes to 8 bits and encodes as PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let buf: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|p| p.map(|c| c.round().clamp(0.0, 255.0) as u8))
            .collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer sized from image dims");
        encode_png(&DynamicImage::ImageRgb8(img))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    RgbImage::decode(&bytes)
}

/// Binary labeling, 1 = foreground.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label buffer has {} entries, expected {}",
                labels.len(),
                width * height
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        assert!(label <= 1);
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y) as u8);
            }
        }
        Self { width, height, labels }
    }

    /// Box interior is foreground, everything else background.
    pub fn from_box(width: usize, height: usize, b: &BoundingBox) -> Self {
        Self::from_fn(width, height, |x, y| b.contains(x, y))
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        assert!(label <= 1);
        self.labels[y * self.width + x] = label;
    }

    pub fn count_foreground(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn count_background(&self) -> usize {
        self.labels.len() - self.count_foreground()
    }

    /// Number of pixels whose label differs from `other`.
    pub fn count_changed(&self, other: &LabelMask) -> usize {
        self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count()
    }

    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    /// Any nonzero gray value reads as foreground. Color inputs are converted to luma first.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Decode("mask has a zero dimension".into()));
        }
        let labels = gray.pixels().map(|p| (p[0] != 0) as u8).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            labels,
        })
    }

    /// 8-bit grayscale PNG, 0 background and 255 foreground.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize) * 255])
        });
        encode_png(&DynamicImage::ImageLuma8(img))
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == 1 {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds.map(|(x0, y0, x1, y1)| BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LabelMask::decode(&bytes)
}

pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, mask.to_png()?).map_err(|e| Error::io(path, e))
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Axis-aligned box; `x0`/`y0` inclusive, `w`/`h` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub const fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    pub fn is_valid_in(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x1() <= width && self.y1() <= height
    }

    pub fn covers_image(&self, width: usize, height: usize) -> bool {
        self.x0 == 0 && self.y0 == 0 && self.w >= width && self.h >= height
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !self.is_valid_in(width, height) {
            return Err(Error::invalid(format!(
                "box {self} does not fit a {width}x{height} image"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.w, self.h)
    }
}

impl FromStr for BoundingBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!("box must be x0,y0,w,h, got {s:?}")));
        }
        let mut v = [0usize; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::invalid(format!("bad box coordinate {p:?}")))?;
        }
        let b = BoundingBox::new(v[0], v[1], v[2], v[3]);
        if b.w == 0 || b.h == 0 {
            return Err(Error::invalid("box width and height must be at least 1"));
        }
        Ok(b)
    }
}

/// Tight box around the foreground of `gt`, padded by `pad` on all four sides and
/// clamped to the image.
pub fn box_from_mask(gt: &LabelMask, pad: usize) -> Result<BoundingBox> {
    let tight = gt
        .bounding_box()
        .ok_or_else(|| Error::invalid("mask has no foreground pixels"))?;
    let x0 = tight.x0.saturating_sub(pad);
    let y0 = tight.y0.saturating_sub(pad);
    let x1 = (tight.x1() + pad).min(gt.width());
    let y1 = (tight.y1() + pad).min(gt.height());
    Ok(BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Per-axis growth, in whole pixels, that raises the area of a `w`×`h` box by the
/// fraction `looseness`.
///
/// Solves `4d² + 2(w+h)d − L·w·h = 0` for the per-side margin `d` and rounds the
/// total extension `2d` to the nearest pixel.
pub fn looseness_extension(w: usize, h: usize, looseness: f64) -> usize {
    if looseness <= 0.0 {
        return 0;
    }
    let (w, h) = (w as f64, h as f64);
    let s = w + h;
    let d = (-s + (s * s + 4.0 * looseness * w * h).sqrt()) / 4.0;
    (2.0 * d).round().max(0.0) as usize
}

/// Grows `b` uniformly on all four sides until its area is `(1 + looseness)` times
/// the original, then crops the result to the image.
///
/// When the total extension is odd, the extra pixel goes to the right/bottom side.
pub fn dilate_box(b: &BoundingBox, looseness: f64, width: usize, height: usize) -> BoundingBox {
    let ext = looseness_extension(b.w, b.h, looseness);
    let lead = ext / 2;
    let trail = ext - lead;
    let x0 = b.x0.saturating_sub(lead);
    let y0 = b.y0.saturating_sub(lead);
    let x1 = (b.x1() + trail).min(width);
    let y1 = (b.y1() + trail).min(height);
    BoundingBox::new(x0, y0, x1.saturating_sub(x0).max(1), y1.saturating_sub(y0).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub error_rate: f64,
}

/// Fraction of pixels inside `b` where `pred` and `gt` disagree.
pub fn error_rate(pred: &LabelMask, gt: &LabelMask, b: &BoundingBox) -> Result<f64> {
    gt.check_dims(pred.dims())?;
    b.validate(pred.width(), pred.height())?;
    let mut wrong = 0usize;
    for y in b.y0..b.y1() {
        for x in b.x0..b.x1() {
            if pred.get(x, y) != gt.get(x, y) {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / b.area() as f64)
}

/// Pixel-wise precision, recall and F-measure of the foreground class. The
/// `error_rate` field is left at zero; use [`evaluate`] to fill it.
pub fn f_measure(pred: &LabelMask, gt: &LabelMask) -> Result<SegMetrics> {
    gt.check_dims(pred.dims())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SegMetrics {
        precision,
        recall,
        f_measure: f,
        error_rate: 0.0,
    })
}

pub fn evaluate(pred: &LabelMask, gt: &LabelMask, b: &BoundingBox) -> Result<SegMetrics> {
    let mut m = f_measure(pred, gt)?;
    m.error_rate = error_rate(pred, gt, b)?;
    Ok(m)
}
