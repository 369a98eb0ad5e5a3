//! Color features, concept scores and the distances built on them.
//!
//! Every function here is pure. Histograms use a uniform 6×6×6 RGB
//! quantization; dominant colors and spatial grids quantize pixels against a
//! fixed 12-color [`PaletteColor`] palette whose index order doubles as the
//! tie-break order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Image, Rgb};

/// Number of bins in a [`Histogram216`].
pub const HISTOGRAM_BINS: usize = 216;

/// Default coverage a palette color needs before it counts as dominant.
pub const DEFAULT_COVERAGE_THETA: f64 = 0.15;

/// At most this many dominant colors are reported per image.
pub const MAX_DOMINANT_COLORS: usize = 3;

const HISTOGRAM_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("image is {width}x{height}, spatial grid needs at least 3x3")]
    ImageTooSmall { width: usize, height: usize },
    #[error("coverage threshold {0} outside (0, 1]")]
    InvalidCoverage(f64),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("palette index {0} out of range 0..12")]
    InvalidPaletteIndex(u8),
    #[error("line {line}: malformed concept row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: concept score {score} outside [0, 1]")]
    ScoreOutOfRange { line: usize, score: f64 },
    #[error("concept vector is zero over the label universe")]
    ZeroVector,
    #[error("failed to read concept scores: {0}")]
    Io(#[from] std::io::Error),
}

/// The fixed dominant-color palette. Discriminants are the palette indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum PaletteColor {
    Black = 0,
    White = 1,
    Gray = 2,
    Red = 3,
    Orange = 4,
    Yellow = 5,
    Green = 6,
    Cyan = 7,
    Blue = 8,
    Purple = 9,
    Pink = 10,
    Brown = 11,
}

impl PaletteColor {
    pub const COUNT: usize = 12;

    pub const ALL: [PaletteColor; Self::COUNT] = [
        PaletteColor::Black,
        PaletteColor::White,
        PaletteColor::Gray,
        PaletteColor::Red,
        PaletteColor::Orange,
        PaletteColor::Yellow,
        PaletteColor::Green,
        PaletteColor::Cyan,
        PaletteColor::Blue,
        PaletteColor::Purple,
        PaletteColor::Pink,
        PaletteColor::Brown,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    /// Anchor color used for nearest-neighbor quantization.
    pub fn rgb(self) -> Rgb {
        match self {
            PaletteColor::Black => [0, 0, 0],
            PaletteColor::White => [255, 255, 255],
            PaletteColor::Gray => [128, 128, 128],
            PaletteColor::Red => [220, 40, 40],
            PaletteColor::Orange => [240, 140, 30],
            PaletteColor::Yellow => [240, 220, 40],
            PaletteColor::Green => [40, 160, 60],
            PaletteColor::Cyan => [40, 200, 200],
            PaletteColor::Blue => [40, 70, 220],
            PaletteColor::Purple => [140, 60, 180],
            PaletteColor::Pink => [240, 150, 190],
            PaletteColor::Brown => [130, 80, 40],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PaletteColor::Black => "black",
            PaletteColor::White => "white",
            PaletteColor::Gray => "gray",
            PaletteColor::Red => "red",
            PaletteColor::Orange => "orange",
            PaletteColor::Yellow => "yellow",
            PaletteColor::Green => "green",
            PaletteColor::Cyan => "cyan",
            PaletteColor::Blue => "blue",
            PaletteColor::Purple => "purple",
            PaletteColor::Pink => "pink",
            PaletteColor::Brown => "brown",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
    }

    /// Nearest anchor by Euclidean RGB distance; ties go to the lower index.
    pub fn nearest(rgb: Rgb) -> Self {
        let mut best = PaletteColor::Black;
        let mut best_dist = u32::MAX;
        for color in Self::ALL {
            let anchor = color.rgb();
            let dist: u32 = (0..3)
                .map(|c| {
                    let d = rgb[c] as i32 - anchor[c] as i32;
                    (d * d) as u32
                })
                .sum();
            // strict comparison keeps the lowest index on ties
            if dist < best_dist {
                best = color;
                best_dist = dist;
            }
        }
        best
    }
}

impl From<PaletteColor> for u8 {
    fn from(color: PaletteColor) -> u8 {
        color.index()
    }
}

impl TryFrom<u8> for PaletteColor {
    type Error = ColorError;

    fn try_from(index: u8) -> Result<Self, Self::Error> {
        PaletteColor::from_index(index).ok_or(ColorError::InvalidPaletteIndex(index))
    }
}

impl fmt::Display for PaletteColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// L1-normalized 6×6×6 RGB histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Histogram216(Vec<f64>);

impl Histogram216 {
    /// Validates length, non-negativity and unit sum.
    pub fn from_bins(bins: Vec<f64>) -> Result<Self, ColorError> {
        if bins.len() != HISTOGRAM_BINS {
            return Err(ColorError::InvalidHistogram(format!(
                "expected {HISTOGRAM_BINS} bins, got {}",
                bins.len()
            )));
        }
        if let Some(bad) = bins.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(ColorError::InvalidHistogram(format!(
                "bin value {bad} is not a finite non-negative number"
            )));
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > HISTOGRAM_SUM_TOLERANCE {
            return Err(ColorError::InvalidHistogram(format!(
                "bins sum to {sum}, expected 1"
            )));
        }
        Ok(Histogram216(bins))
    }

    /// Histogram with all mass in one bin.
    pub fn one_hot(bin: usize) -> Self {
        assert!(bin < HISTOGRAM_BINS, "bin {bin} out of range");
        let mut bins = vec![0.0; HISTOGRAM_BINS];
        bins[bin] = 1.0;
        Histogram216(bins)
    }

    pub fn bins(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Histogram216 {
    type Error = ColorError;

    fn try_from(bins: Vec<f64>) -> Result<Self, Self::Error> {
        Histogram216::from_bins(bins)
    }
}

impl From<Histogram216> for Vec<f64> {
    fn from(h: Histogram216) -> Vec<f64> {
        h.0
    }
}

/// Row-major 3×3 grid of per-cell dominant palette colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpatialColorGrid(pub [PaletteColor; 9]);

impl SpatialColorGrid {
    pub fn cells(&self) -> &[PaletteColor; 9] {
        &self.0
    }

    pub fn cell(&self, row: usize, col: usize) -> PaletteColor {
        self.0[row * 3 + col]
    }
}

/// Concept label to score in `[0, 1]`. Labels keep their case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptVector(BTreeMap<String, f64>);

impl ConceptVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector, rejecting blank labels and out-of-range scores.
    pub fn from_scores<I, S>(scores: I) -> Result<Self, ColorError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut v = ConceptVector::new();
        for (label, score) in scores {
            v.insert(label, score)?;
        }
        Ok(v)
    }

    pub fn insert(&mut self, label: impl Into<String>, score: f64) -> Result<(), ColorError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(ColorError::MalformedRow {
                line: 0,
                reason: "empty concept label".into(),
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(ColorError::ScoreOutOfRange { line: 0, score });
        }
        self.0.insert(label, score);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.0.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dense projection onto `universe`; absent labels become 0.
    pub fn project(&self, universe: &[String]) -> Vec<f64> {
        universe
            .iter()
            .map(|label| self.0.get(label).copied().unwrap_or(0.0))
            .collect()
    }

    /// Merges `other` into `self`, overwriting shared labels.
    pub fn extend_from(&mut self, other: &ConceptVector) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
    }
}

fn hist_bin(rgb: Rgb) -> usize {
    let q = |c: u8| (c as usize * 6) / 256;
    36 * q(rgb[0]) + 6 * q(rgb[1]) + q(rgb[2])
}

/// Raw 216-bin pixel counts. Shot segmentation compares these directly so
/// that distances between equal-sized frames are exact.
pub fn histogram_counts(image: &Image) -> [u32; HISTOGRAM_BINS] {
    let mut counts = [0u32; HISTOGRAM_BINS];
    for &px in image.pixels() {
        counts[hist_bin(px)] += 1;
    }
    counts
}

pub fn color_histogram(image: &Image) -> Result<Histogram216, ColorError> {
    if image.pixels().is_empty() {
        return Err(ColorError::EmptyImage);
    }
    let n = image.pixels().len() as f64;
    let bins = histogram_counts(image)
        .iter()
        .map(|&c| c as f64 / n)
        .collect();
    Ok(Histogram216(bins))
}

/// Fraction of pixels whose nearest anchor is each palette color.
pub fn palette_coverage(image: &Image) -> Result<[f64; PaletteColor::COUNT], ColorError> {
    if image.pixels().is_empty() {
        return Err(ColorError::EmptyImage);
    }
    let mut counts = [0usize; PaletteColor::COUNT];
    for &px in image.pixels() {
        counts[PaletteColor::nearest(px) as usize] += 1;
    }
    let n = image.pixels().len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

/// Palette coverage estimated from a histogram alone, by mapping each bin's
/// center color to its nearest anchor. Used for keyframes that arrive with
/// precomputed features but no image.
pub fn coverage_from_histogram(hist: &Histogram216) -> [f64; PaletteColor::COUNT] {
    let center = |q: usize| ((q * 256 + 128) / 6) as u8;
    let mut cov = [0.0; PaletteColor::COUNT];
    for (bin, &mass) in hist.bins().iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let rgb = [center(bin / 36), center((bin / 6) % 6), center(bin % 6)];
        cov[PaletteColor::nearest(rgb) as usize] += mass;
    }
    cov
}

/// Dominant colors from a precomputed coverage table.
pub fn dominant_from_coverage(
    coverage: &[f64; PaletteColor::COUNT],
    coverage_theta: f64,
) -> Result<Vec<(PaletteColor, f64)>, ColorError> {
    if !(coverage_theta > 0.0 && coverage_theta <= 1.0) {
        return Err(ColorError::InvalidCoverage(coverage_theta));
    }
    let mut out: Vec<(PaletteColor, f64)> = PaletteColor::ALL
        .into_iter()
        .zip(coverage.iter().copied())
        .filter(|&(_, c)| c >= coverage_theta)
        .collect();
    // stable sort keeps palette order among equal coverages
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out.truncate(MAX_DOMINANT_COLORS);
    Ok(out)
}

pub fn dominant_colors(
    image: &Image,
    coverage_theta: f64,
) -> Result<Vec<(PaletteColor, f64)>, ColorError> {
    dominant_from_coverage(&palette_coverage(image)?, coverage_theta)
}

pub fn spatial_color_grid(image: &Image) -> Result<SpatialColorGrid, ColorError> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(ColorError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let mut cells = [PaletteColor::Black; 9];
    for r in 0..3 {
        for c in 0..3 {
            let mut counts = [0usize; PaletteColor::COUNT];
            for y in (r * h / 3)..((r + 1) * h / 3) {
                for x in (c * w / 3)..((c + 1) * w / 3) {
                    counts[PaletteColor::nearest(image.pixel(x, y)) as usize] += 1;
                }
            }
            // max_by_key returns the last maximum; scan manually for lowest index
            let mut best = 0;
            for (i, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = i;
                }
            }
            cells[r * 3 + c] = PaletteColor::ALL[best];
        }
    }
    Ok(SpatialColorGrid(cells))
}

/// Parses concept CSV text (`keyframe_id,concept_label,score`, no header,
/// `#` comments). Duplicate `(keyframe, label)` rows: the last one wins.
pub fn parse_concept_scores(text: &str) -> Result<HashMap<String, ConceptVector>, ColorError> {
    let mut out: HashMap<String, ConceptVector> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let [id, label, score] = fields[..] else {
            return Err(ColorError::MalformedRow {
                line,
                reason: format!("expected 3 fields, got {}", fields.len()),
            });
        };
        if id.is_empty() || label.is_empty() {
            return Err(ColorError::MalformedRow {
                line,
                reason: "empty keyframe id or label".into(),
            });
        }
        let score: f64 = score.parse().map_err(|_| ColorError::MalformedRow {
            line,
            reason: format!("score {score:?} is not a number"),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ColorError::ScoreOutOfRange { line, score });
        }
        out.entry(id.to_string())
            .or_default()
            .0
            .insert(label.to_string(), score);
    }
    Ok(out)
}

pub fn load_concept_scores(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, ConceptVector>, ColorError> {
    parse_concept_scores(&std::fs::read_to_string(path)?)
}

/// Sum of absolute bin differences, in `[0, 2]`.
pub fn l1_distance(a: &Histogram216, b: &Histogram216) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum()
}

/// Cosine distance on dense vectors, clamped to `[0, 1]` for non-negative
/// inputs. Fails when either vector is zero.
pub fn cosine_distance_dense(a: &[f64], b: &[f64]) -> Result<f64, ColorError> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(ColorError::ZeroVector);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

pub fn cosine_distance(
    a: &ConceptVector,
    b: &ConceptVector,
    label_universe: &[String],
) -> Result<f64, ColorError> {
    cosine_distance_dense(&a.project(label_universe), &b.project(label_universe))
}
