//! Feature-map files, video manifests and the synthetic dataset generator.
//!
//! An FMAP file is a 24-byte little-endian header (`b"FMAP"`, version, `T`,
//! `K`, `U`, `V` as `u32`) followed by `T·K·U·V` `f32` values, frame-major,
//! then channel-major, then row-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaze::{GazeKind, GazePoint};
use crate::tensorkit::Tensor;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;
const FMAP_HEADER_LEN: usize = 24;

/// Per-frame `K×U×V` feature maps of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapSeq {
    frames: Vec<Tensor>,
}

impl FeatureMapSeq {
    /// All frames must be 3-D and share one shape.
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if first.shape().len() != 3 {
                return Err(Error::contract(format!(
                    "feature maps must be K×U×V, got {:?}",
                    first.shape()
                )));
            }
            if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
                return Err(Error::shape("FeatureMapSeq", first.shape(), bad.shape()));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `[K, U, V]`, or `None` for an empty sequence.
    pub fn map_shape(&self) -> Option<[usize; 3]> {
        self.frames.first().map(|f| {
            let s = f.shape();
            [s[0], s[1], s[2]]
        })
    }
}

/// Writes `seq` as an FMAP file, narrowing values to `f32`.
pub fn save_fmap(path: &Path, seq: &FeatureMapSeq) -> Result<()> {
    fs::write(path, encode_fmap(seq)).map_err(|e| Error::io(path, e))
}

pub fn encode_fmap(seq: &FeatureMapSeq) -> Vec<u8> {
    let [k, u, v] = seq.map_shape().unwrap_or([0, 0, 0]);
    let t = seq.len();
    let mut buf = Vec::with_capacity(FMAP_HEADER_LEN + 4 * t * k * u * v);
    buf.extend_from_slice(FMAP_MAGIC);
    for n in [FMAP_VERSION, t as u32, k as u32, u as u32, v as u32] {
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for frame in seq.frames() {
        for &x in frame.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    buf
}

pub fn load_fmap(path: &Path) -> Result<FeatureMapSeq> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fmap(&bytes, path)
}

/// Parses FMAP bytes; `path` is only used in error messages.
pub fn decode_fmap(bytes: &[u8], path: &Path) -> Result<FeatureMapSeq> {
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated header: {} of {FMAP_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {:?}, expected \"FMAP\"", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FMAP_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let (t, k, u, v) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    let per_frame = k * u * v;
    let expected = FMAP_HEADER_LEN as u64 + 4 * (t as u64) * (per_frame as u64);
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            path,
            bytes.len().min(expected as usize) as u64,
            format!("payload size mismatch: file has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut frames = Vec::with_capacity(t);
    for f in 0..t {
        let mut data = Vec::with_capacity(per_frame);
        for i in 0..per_frame {
            let off = FMAP_HEADER_LEN + 4 * (f * per_frame + i);
            let x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::format(path, off as u64, format!("non-finite value {x}")));
            }
            data.push(f64::from(x));
        }
        frames.push(Tensor::from_raw(vec![k, u, v], data));
    }
    FeatureMapSeq::new(frames)
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `true` for a video containing an accident.
    pub positive: bool,
    /// Accident frame; `None` for negatives.
    pub tau: Option<usize>,
    pub fps: f64,
    pub frames: usize,
    /// Feature file, relative paths resolved against the manifest directory.
    pub path: PathBuf,
}

impl VideoRecord {
    pub fn label(&self) -> u8 {
        u8::from(self.positive)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Data(format!("video {}: fps must be positive", self.id)));
        }
        if self.frames == 0 {
            return Err(Error::Data(format!("video {}: T must be at least 1", self.id)));
        }
        match (self.positive, self.tau) {
            (true, None) => Err(Error::Data(format!("positive video {} has no tau", self.id))),
            (true, Some(tau)) if tau > self.frames => Err(Error::Data(format!(
                "video {}: tau {tau} outside [0, {}]",
                self.id, self.frames
            ))),
            (false, Some(_)) => Err(Error::Data(format!("negative video {} has a tau", self.id))),
            _ => Ok(()),
        }
    }
}

pub const MANIFEST_HEADER: [&str; 6] = ["id", "label", "tau", "fps", "T", "path"];

/// Reads a manifest of `id,label,tau,fps,T,path` rows. A leading header row
/// is optional. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<VideoRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("manifest line {}: {e}", line + 1)))?;
        if line == 0 && row.get(0) == Some("id") {
            continue;
        }
        if row.len() != 6 {
            return Err(Error::Data(format!(
                "manifest line {}: expected 6 fields, got {}",
                line + 1,
                row.len()
            )));
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |what: &str| Error::Data(format!("manifest line {}: bad {what} {:?}", line + 1, row));
        let positive = match field(1) {
            "1" => true,
            "0" => false,
            _ => return Err(bad("label")),
        };
        let tau = match field(2) {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("tau"))?),
        };
        let record = VideoRecord {
            id: field(0).to_string(),
            positive,
            tau,
            fps: field(3).parse().map_err(|_| bad("fps"))?,
            frames: field(4).parse().map_err(|_| bad("T"))?,
            path: base.join(field(5)),
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Writes a manifest with a header row; `paths` are written as given.
pub fn write_manifest(path: &Path, records: &[VideoRecord], relative_to: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("writing manifest: {e}"));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in records {
        let rel = r.path.strip_prefix(relative_to).unwrap_or(&r.path);
        w.write_record([
            r.id.clone(),
            r.label().to_string(),
            r.tau.map(|t| t.to_string()).unwrap_or_default(),
            r.fps.to_string(),
            r.frames.to_string(),
            rel.to_string_lossy().into_owned(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A manifest row with its feature maps loaded.
#[derive(Clone, Debug)]
pub struct Video {
    pub record: VideoRecord,
    pub features: FeatureMapSeq,
}

/// Loads every feature file of a manifest and checks it against its row and
/// against the rest of the dataset (uniform `T`, `fps` and map shape).
pub fn load_videos(records: &[VideoRecord]) -> Result<Vec<Video>> {
    let mut out: Vec<Video> = Vec::with_capacity(records.len());
    for r in records {
        let features = load_fmap(&r.path)?;
        if features.len() != r.frames {
            return Err(Error::Data(format!(
                "video {}: manifest says T={} but {} holds {} frames",
                r.id,
                r.frames,
                r.path.display(),
                features.len()
            )));
        }
        if let Some(first) = out.first() {
            if first.record.frames != r.frames || first.record.fps != r.fps {
                return Err(Error::Data(format!(
                    "video {} has T={} fps={}, dataset uses T={} fps={}",
                    r.id, r.frames, r.fps, first.record.frames, first.record.fps
                )));
            }
            if first.features.map_shape() != features.map_shape() {
                return Err(Error::Data(format!(
                    "video {} has map shape {:?}, dataset uses {:?}",
                    r.id,
                    features.map_shape(),
                    first.features.map_shape()
                )));
            }
        }
        out.push(Video {
            record: r.clone(),
            features,
        });
    }
    Ok(out)
}

/// Parameters of the synthetic stand-in dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub positives: usize,
    pub negatives: usize,
    pub frames: usize,
    pub fps: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Peak value added to the risk patch at and after the accident frame.
    pub amplitude: f64,
    /// Frames before `τ` at which the risk pattern starts ramping in.
    pub lead_frames: usize,
    /// Standard deviation of the background noise.
    pub noise: f64,
    /// Channel that carries the risk pattern.
    pub signal_channel: usize,
    /// Side of the square risk patch, in feature-map cells.
    pub patch: usize,
    /// Candidate top-left cells of the risk patch, one drawn per positive
    /// video. Empty means anywhere in the map.
    pub patch_sites: Vec<(usize, usize)>,
    /// Fraction of trailing frames in which `τ` is placed.
    pub tau_window: f64,
    /// Frame size used for gaze coordinates and saliency upsampling.
    pub frame_height: usize,
    pub frame_width: usize,
    /// Simulated viewers and gaze samples per viewer per frame.
    pub participants: usize,
    pub gaze_per_frame: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            positives: 50,
            negatives: 50,
            frames: 20,
            fps: 10.0,
            channels: 8,
            height: 14,
            width: 14,
            amplitude: 5.0,
            lead_frames: 15,
            noise: 1.0,
            signal_channel: 0,
            patch: 3,
            patch_sites: vec![(1, 1), (1, 10), (10, 1), (10, 10)],
            tau_window: 0.2,
            frame_height: 224,
            frame_width: 224,
            participants: 4,
            gaze_per_frame: 3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(format!("SynthConfig: {m}")));
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return fail("T, K, U, V must be positive");
        }
        if self.lead_frames > self.frames {
            return fail("lead_frames exceeds T");
        }
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return fail("amplitude must be a finite non-negative value");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be finite and non-negative");
        }
        if !(self.fps > 0.0) {
            return fail("fps must be positive");
        }
        if self.signal_channel >= self.channels {
            return fail("signal_channel out of range");
        }
        if self.patch == 0 || self.patch > self.height || self.patch > self.width {
            return fail("patch must fit inside the feature map");
        }
        if self.patch_sites.iter().any(|&(r, c)| r + self.patch > self.height || c + self.patch > self.width) {
            return fail("a patch site puts the patch outside the feature map");
        }
        if !(self.tau_window > 0.0 && self.tau_window <= 1.0) {
            return fail("tau_window must lie in (0, 1]");
        }
        if self.frame_height == 0 || self.frame_width == 0 {
            return fail("frame size must be positive");
        }
        Ok(())
    }

    /// First frame index in which a positive's accident may start.
    pub fn tau_min(&self) -> usize {
        let window = ((self.frames as f64) * self.tau_window).round().max(1.0) as usize;
        self.frames.saturating_sub(window)
    }
}

/// Where the risk patch of a positive video sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Patch {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row..self.row + self.size).contains(&r) && (self.col..self.col + self.size).contains(&c)
    }

    /// `contains`, after growing the patch by `margin` cells on every side.
    pub fn contains_dilated(&self, r: usize, c: usize, margin: usize) -> bool {
        r + margin >= self.row
            && r < self.row + self.size + margin
            && c + margin >= self.col
            && c < self.col + self.size + margin
    }
}

/// One generated video, kept in memory alongside what was written to disk.
#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub video: Video,
    pub patch: Option<Patch>,
}

/// Output of [`synth_generate`].
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub videos: Vec<SynthVideo>,
    pub gaze: Vec<GazePoint>,
}

/// Weight of the risk pattern at frame `t` for a video with accident frame
/// `tau`: 0 before `tau - lead`, a linear ramp up to 1 at `tau`, 1 after.
pub fn ramp(t: usize, tau: usize, lead: usize) -> f64 {
    if t >= tau {
        return 1.0;
    }
    if lead == 0 {
        return 0.0;
    }
    let start = tau as f64 - lead as f64;
    ((t as f64 - start) / lead as f64).clamp(0.0, 1.0)
}

/// Generates a class-balanced dataset in memory. Every video draws from its
/// own seeded stream, so a video's content does not depend on how many other
/// videos are requested.
///
/// Negatives are pure noise. Positives add `amplitude · ramp(t)` over a
/// square patch at one of the candidate sites of the signal channel, with `τ` drawn
/// uniformly from the final `tau_window` of the clip. Gaze samples follow
/// the patch on positives and scatter around the frame centre on negatives.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let total = config.positives + config.negatives;
    let mut videos = Vec::with_capacity(total);
    let mut gaze = Vec::new();
    // Interleave labels so any prefix of the manifest is roughly balanced.
    let mut order: Vec<bool> = Vec::with_capacity(total);
    let (mut p, mut n) = (0, 0);
    while p < config.positives || n < config.negatives {
        if p < config.positives && (p <= n || n >= config.negatives) {
            order.push(true);
            p += 1;
        } else {
            order.push(false);
            n += 1;
        }
    }
    for (index, &positive) in order.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64 + 1);
        let id = format!("vid{index:04}");
        let (features, tau, patch) = synth_video(config, positive, &mut rng);
        gaze.extend(synth_gaze(config, &id, patch, tau, &mut rng));
        videos.push(SynthVideo {
            video: Video {
                record: VideoRecord {
                    id: id.clone(),
                    positive,
                    tau,
                    fps: config.fps,
                    frames: config.frames,
                    path: PathBuf::from(format!("fmaps/{id}.fmap")),
                },
                features,
            },
            patch,
        });
    }
    Ok(SynthDataset { videos, gaze })
}

fn synth_video(
    config: &SynthConfig,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> (FeatureMapSeq, Option<usize>, Option<Patch>) {
    let (k, u, v) = (config.channels, config.height, config.width);
    let (tau, patch) = if positive {
        let tau = rng.random_range(config.tau_min()..config.frames);
        let (row, col) = if config.patch_sites.is_empty() {
            (rng.random_range(0..=u - config.patch), rng.random_range(0..=v - config.patch))
        } else {
            config.patch_sites[rng.random_range(0..config.patch_sites.len())]
        };
        let patch = Patch {
            row,
            col,
            size: config.patch,
        };
        (Some(tau), Some(patch))
    } else {
        (None, None)
    };
    let frames = (0..config.frames)
        .map(|t| {
            let mut data: Vec<f64> = (0..k * u * v)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    // Round through f32 so in-memory data equals the file contents.
                    f64::from((config.noise * z) as f32)
                })
                .collect();
            if let (Some(tau), Some(p)) = (tau, patch) {
                let w = config.amplitude * ramp(t, tau, config.lead_frames);
                let base = config.signal_channel * u * v;
                for r in p.row..p.row + p.size {
                    for c in p.col..p.col + p.size {
                        let cell = &mut data[base + r * v + c];
                        *cell = f64::from((*cell + w) as f32);
                    }
                }
            }
            Tensor::from_raw(vec![k, u, v], data)
        })
        .collect();
    (FeatureMapSeq::new(frames).expect("uniform shapes"), tau, patch)
}

fn synth_gaze(
    config: &SynthConfig,
    id: &str,
    patch: Option<Patch>,
    tau: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<GazePoint> {
    let (fh, fw) = (config.frame_height as f64, config.frame_width as f64);
    let cell_h = fh / config.height as f64;
    let cell_w = fw / config.width as f64;
    let mut out = Vec::new();
    for t in 0..config.frames {
        // Viewers lock on once the risk pattern is visible.
        let target = match (patch, tau) {
            (Some(p), Some(tau)) if ramp(t, tau, config.lead_frames) > 0.0 => {
                let center = |start: usize, cell: f64| (start as f64 + p.size as f64 / 2.0) * cell;
                Some((center(p.col, cell_w), center(p.row, cell_h), p.size as f64 * cell_w / 4.0))
            }
            _ => None,
        };
        let (cx, cy, spread) = target.unwrap_or((fw / 2.0, fh / 2.0, fw / 8.0));
        for participant in 0..config.participants {
            for s in 0..config.gaze_per_frame {
                let dx: f64 = StandardNormal.sample(rng);
                let dy: f64 = StandardNormal.sample(rng);
                let x = (cx + spread * dx).clamp(0.0, fw - 1.0).floor() as usize;
                let y = (cy + spread * dy).clamp(0.0, fh - 1.0).floor() as usize;
                let kind = if rng.random::<f64>() < 0.93 {
                    GazeKind::Fixation
                } else {
                    GazeKind::Saccade
                };
                out.push(GazePoint {
                    participant: format!("p{participant:02}"),
                    video: id.to_string(),
                    frame: t,
                    timestamp_ms: ((t as f64 / config.fps) * 1000.0) as u64
                        + (s as u64) * (1000.0 / config.fps / config.gaze_per_frame as f64) as u64,
                    x,
                    y,
                    kind,
                });
            }
        }
    }
    out
}

/// Writes the dataset under `dir`: `fmaps/*.fmap`, `manifest.csv`,
/// `train.csv`, `test.csv` and `gaze.csv`. Returns the manifest path.
pub fn write_synth(dir: &Path, data: &SynthDataset, test_fraction: f64, seed: u64) -> Result<PathBuf> {
    let fmaps = dir.join("fmaps");
    fs::create_dir_all(&fmaps).map_err(|e| Error::io(&fmaps, e))?;
    let mut records = Vec::with_capacity(data.videos.len());
    for sv in &data.videos {
        let abs = dir.join(&sv.video.record.path);
        save_fmap(&abs, &sv.video.features)?;
        let mut rec = sv.video.record.clone();
        rec.path = abs;
        records.push(rec);
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records, dir)?;
    let (train, test) = holdout_split(&records, test_fraction, seed);
    write_manifest(&dir.join("train.csv"), &train, dir)?;
    write_manifest(&dir.join("test.csv"), &test, dir)?;
    let gaze_path = dir.join("gaze.csv");
    let mut f = fs::File::create(&gaze_path).map_err(|e| Error::io(&gaze_path, e))?;
    f.write_all(crate::gaze::encode_gaze_csv(&data.gaze).as_bytes())
        .map_err(|e| Error::io(&gaze_path, e))?;
    Ok(manifest)
}

/// Stratified, seeded split into (train, test). Each class contributes
/// `round(fraction · count)` videos to the test side; manifest order is
/// preserved within each side.
pub fn holdout_split<T: Clone + HasLabel>(items: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5f1d);
    let mut test_mask = vec![false; items.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].is_positive() == class).collect();
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64) * test_fraction).round() as usize;
        for &i in &idx[..take.min(idx.len())] {
            test_mask[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (item, is_test) in items.iter().zip(test_mask) {
        if is_test {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, test)
}

/// Anything carrying a video label.
pub trait HasLabel {
    fn is_positive(&self) -> bool;
}

impl HasLabel for VideoRecord {
    fn is_positive(&self) -> bool {
        self.positive
    }
}

impl HasLabel for Video {
    fn is_positive(&self) -> bool {
        self.record.positive
    }
}

impl HasLabel for SynthVideo {
    fn is_positive(&self) -> bool {
        self.video.record.positive
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_seq(seed: u64) -> FeatureMapSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..5)
            .map(|_| {
                let data = (0..18).map(|_| f64::from(rng.random_range(-3.0f32..3.0))).collect();
                Tensor::new(vec![2, 3, 3], data).unwrap()
            })
            .collect();
        FeatureMapSeq::new(frames).unwrap()
    }

    #[test]
    fn fmap_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fmap");
        let seq = small_seq(1);
        save_fmap(&path, &seq).unwrap();
        let back = load_fmap(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(fs::metadata(&path).unwrap().len(), 24 + 4 * 5 * 18);
    }

    #[test]
    fn fmap_rejects_truncation_and_magic() {
        let bytes = encode_fmap(&small_seq(2));
        let p = Path::new("x.fmap");
        let err = decode_fmap(&bytes[..bytes.len() - 3], p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"FMAQ");
        let err = decode_fmap(&bad, p).unwrap_err();
        assert!(err.to_string().contains("expected \"FMAP\""), "{err}");
        assert!(matches!(decode_fmap(&bytes[..10], p), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_fmap(&extra, p).is_err());
    }

    #[test]
    fn fmap_rejects_nan_with_offset() {
        let mut bytes = encode_fmap(&small_seq(3));
        let off = 24 + 4 * 7;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_fmap(&bytes, Path::new("n.fmap")).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, off as u64),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn manifest_parse_and_validate() {
        let text = "id,label,tau,fps,T,path\nv1,1,18,10,20,fmaps/v1.fmap\nv2,0,,10,20,fmaps/v2.fmap\n";
        let recs = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].tau, Some(18));
        assert!(recs[0].positive);
        assert_eq!(recs[1].tau, None);
        assert_eq!(recs[1].path, PathBuf::from("/data/fmaps/v2.fmap"));

        assert!(parse_manifest("v1,1,,10,20,a", Path::new("")).is_err());
        assert!(parse_manifest("v1,0,3,10,20,a", Path::new("")).is_err());
        assert!(parse_manifest("v1,1,21,10,20,a", Path::new("")).is_err());
        assert!(parse_manifest("v1,2,,10,20,a", Path::new("")).is_err());
        assert!(parse_manifest("v1,0,,0,20,a", Path::new("")).is_err());
        // header optional
        assert_eq!(parse_manifest("v1,0,,10,20,a\n", Path::new("")).unwrap().len(), 1);
    }

    #[test]
    fn ramp_shape() {
        assert_eq!(ramp(0, 18, 15), 0.0);
        assert_eq!(ramp(3, 18, 15), 0.0);
        assert!((ramp(8, 18, 15) - 5.0 / 15.0).abs() < 1e-15);
        assert_eq!(ramp(18, 18, 15), 1.0);
        assert_eq!(ramp(19, 18, 15), 1.0);
        assert_eq!(ramp(17, 18, 0), 0.0);
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let cfg = SynthConfig {
            positives: 4,
            negatives: 3,
            frames: 10,
            lead_frames: 3,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.videos.len(), 7);
        assert_eq!(a.videos.iter().filter(|v| v.video.record.positive).count(), 4);
        for (x, y) in a.videos.iter().zip(&b.videos) {
            assert_eq!(x.video.features, y.video.features);
            assert_eq!(x.video.record, y.video.record);
        }
        assert_eq!(a.gaze, b.gaze);
        for v in &a.videos {
            let r = &v.video.record;
            if let Some(tau) = r.tau {
                assert!(tau >= cfg.tau_min() && tau < cfg.frames);
                assert!(v.patch.is_some());
            }
        }
    }

    #[test]
    fn zero_amplitude_positive_is_pure_noise() {
        let cfg = SynthConfig {
            positives: 3,
            negatives: 3,
            frames: 6,
            lead_frames: 3,
            amplitude: 0.0,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        // Recreate the noise stream of each positive and compare.
        for (index, sv) in data.videos.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64 + 1);
            if sv.video.record.positive {
                let _: usize = rng.random_range(cfg.tau_min()..cfg.frames);
                let _: usize = rng.random_range(0..cfg.patch_sites.len());
            }
            let first = &sv.video.features.frames()[0];
            for &x in &first.data()[..10] {
                let z: f64 = StandardNormal.sample(&mut rng);
                assert_eq!(x, f64::from(z as f32));
            }
        }
    }

    #[test]
    fn split_is_stratified() {
        let data = synth_generate(&SynthConfig {
            frames: 4,
            lead_frames: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let recs: Vec<VideoRecord> = data.videos.iter().map(|v| v.video.record.clone()).collect();
        let (train, test) = holdout_split(&recs, 0.3, 7);
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(test.iter().filter(|r| r.positive).count(), 15);
        assert_eq!(test.iter().filter(|r| !r.positive).count(), 15);
        let (_, again) = holdout_split(&recs, 0.3, 7);
        assert_eq!(test, again);
    }

    #[test]
    fn write_synth_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            positives: 2,
            negatives: 2,
            frames: 5,
            lead_frames: 3,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let manifest = write_synth(dir.path(), &data, 0.5, 1).unwrap();
        let recs = read_manifest(&manifest).unwrap();
        assert_eq!(recs.len(), 4);
        let videos = load_videos(&recs).unwrap();
        for (v, sv) in videos.iter().zip(&data.videos) {
            assert_eq!(v.features, sv.video.features);
        }
        assert_eq!(read_manifest(&dir.path().join("test.csv")).unwrap().len(), 2);
        assert!(dir.path().join("gaze.csv").exists());
    }
}
