//! Human gaze logs turned into attention maps (Gaussian-blurred gaze counts)
//! and binary fixation maps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensorkit::Tensor;

pub const DEFAULT_KERNEL: usize = 30;
pub const DEFAULT_SIGMA: f64 = 5.0;
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GazeKind {
    Fixation,
    Saccade,
    Unknown,
}

impl GazeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GazeKind::Fixation => "fixation",
            GazeKind::Saccade => "saccade",
            GazeKind::Unknown => "unknown",
        }
    }
}

impl fmt::Display for GazeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GazeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixation" => Ok(GazeKind::Fixation),
            "saccade" => Ok(GazeKind::Saccade),
            "unknown" | "" => Ok(GazeKind::Unknown),
            other => Err(Error::Data(format!("unknown gaze kind {other:?}"))),
        }
    }
}

/// One gaze sample in frame pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GazePoint {
    pub participant: String,
    pub video: String,
    pub frame: usize,
    pub timestamp_ms: u64,
    pub x: usize,
    pub y: usize,
    pub kind: GazeKind,
}

pub const GAZE_HEADER: [&str; 7] = [
    "participant_id",
    "video_id",
    "frame_index",
    "timestamp_ms",
    "x",
    "y",
    "kind",
];

/// Parses a gaze CSV. The header row is required; a blank kind reads as
/// `unknown`.
pub fn parse_gaze_csv(text: &str) -> Result<Vec<GazePoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("gaze csv header: {e}")))?
        .clone();
    if headers.iter().ne(GAZE_HEADER) {
        return Err(Error::Data(format!(
            "gaze csv header must be {}, got {}",
            GAZE_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("gaze csv line {line}: {e}")))?;
        if row.len() != 6 && row.len() != 7 {
            return Err(Error::Data(format!(
                "gaze csv line {line}: expected 7 fields, got {}",
                row.len()
            )));
        }
        let num = |j: usize, what: &str| -> Result<u64> {
            let s = row.get(j).unwrap_or("");
            s.parse::<u64>()
                .or_else(|_| s.parse::<f64>().map(|f| f.max(0.0).floor() as u64))
                .map_err(|_| Error::Data(format!("gaze csv line {line}: bad {what} {s:?}")))
        };
        out.push(GazePoint {
            participant: row[0].to_string(),
            video: row[1].to_string(),
            frame: num(2, "frame_index")? as usize,
            timestamp_ms: num(3, "timestamp_ms")?,
            x: num(4, "x")? as usize,
            y: num(5, "y")? as usize,
            kind: row.get(6).unwrap_or("").parse()?,
        });
    }
    Ok(out)
}

pub fn read_gaze_csv(path: &Path) -> Result<Vec<GazePoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gaze_csv(&text)
}

pub fn encode_gaze_csv(points: &[GazePoint]) -> String {
    let mut s = GAZE_HEADER.join(",");
    s.push('\n');
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.participant, p.video, p.frame, p.timestamp_ms, p.x, p.y, p.kind
        ));
    }
    s
}

/// Which gaze kinds to count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindFilter {
    All,
    Only(GazeKind),
}

impl KindFilter {
    pub fn admits(self, kind: GazeKind) -> bool {
        match self {
            KindFilter::All => true,
            KindFilter::Only(k) => k == kind,
        }
    }
}

/// Per-pixel gaze counts for one frame, pooled over all participants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountGrid {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl CountGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            counts: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Counts the admitted gaze points on an `height × width` frame.
pub fn accumulate_gaze<'a>(
    points: impl IntoIterator<Item = &'a GazePoint>,
    height: usize,
    width: usize,
    filter: KindFilter,
) -> Result<CountGrid> {
    let mut grid = CountGrid::zeros(height, width);
    for p in points {
        if p.x >= width || p.y >= height {
            return Err(Error::Data(format!(
                "gaze point out of bounds ({}x{} frame): participant {} video {} frame {} at ({}, {})",
                width, height, p.participant, p.video, p.frame, p.x, p.y
            )));
        }
        if filter.admits(p.kind) {
            grid.counts[p.y * width + p.x] += 1;
        }
    }
    Ok(grid)
}

/// Normalised 1-D Gaussian taps for a kernel of `size` samples. Tap `i`
/// sits at offset `i - size/2`, so an even-sized kernel has its peak on the
/// centre pixel and one extra tap on the negative side.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let raw: Vec<f64> = (0..size as isize)
        .map(|i| {
            let d = (i - half) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// The full `size × size` kernel: outer product of [`gaussian_taps`].
pub fn gaussian_kernel(size: usize, sigma: f64) -> Tensor {
    let taps = gaussian_taps(size, sigma);
    let data = taps
        .iter()
        .flat_map(|a| taps.iter().map(move |b| a * b))
        .collect();
    Tensor::from_raw(vec![size, size], data)
}

/// Human attention on one frame, max-normalised to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub grid: Tensor,
}

/// Blurs the counts with the Gaussian kernel, zero padding at the borders,
/// and returns the unnormalised density.
pub fn blur_counts(counts: &CountGrid, kernel_size: usize, sigma: f64) -> Result<Tensor> {
    if kernel_size == 0 || !(sigma > 0.0) {
        return Err(Error::contract("kernel size must be >= 1 and sigma > 0"));
    }
    let (h, w) = (counts.height, counts.width);
    let taps = gaussian_taps(kernel_size, sigma);
    let half = (kernel_size / 2) as isize;
    let src: Vec<f64> = counts.counts.iter().map(|&c| f64::from(c)).collect();

    // Scatter form of a separable convolution: each nonzero count spreads
    // its kernel, which keeps the sparse gaze case cheap.
    let mut rows_pass = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = src[y * w + x];
            if c == 0.0 {
                continue;
            }
            for (i, &k) in taps.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if (0..w as isize).contains(&xx) {
                    rows_pass[y * w + xx as usize] += c * k;
                }
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = rows_pass[y * w + x];
            if c == 0.0 {
                continue;
            }
            for (i, &k) in taps.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if (0..h as isize).contains(&yy) {
                    out[yy as usize * w + x] += c * k;
                }
            }
        }
    }
    Ok(Tensor::from_raw(vec![h, w], out))
}

/// Max-normalised blurred gaze density. An all-zero count grid yields an
/// all-zero map.
pub fn attention_map(counts: &CountGrid, kernel_size: usize, sigma: f64) -> Result<AttentionMap> {
    let blurred = blur_counts(counts, kernel_size, sigma)?;
    Ok(AttentionMap {
        grid: max_normalize(&blurred),
    })
}

/// Divides by the maximum; leaves maps with a non-positive maximum as zeros.
pub fn max_normalize(t: &Tensor) -> Tensor {
    let m = t.max();
    if m > 0.0 {
        t.map(|v| (v / m).max(0.0))
    } else {
        Tensor::zeros(t.shape())
    }
}

/// Binary grid of fixated pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FixationMap {
    pub grid: Tensor,
}

impl FixationMap {
    pub fn count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v > 0.0).count()
    }
}

/// Marks pixels whose attention exceeds `threshold`.
pub fn fixation_map(attention: &AttentionMap, threshold: f64) -> Result<FixationMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(FixationMap {
        grid: attention.grid.map(|v| if v > threshold { 1.0 } else { 0.0 }),
    })
}
