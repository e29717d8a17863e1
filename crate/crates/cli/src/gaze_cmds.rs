use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anticipatr::datasets::{read_manifest, VideoRecord};
use anticipatr::gaze::{
    accumulate_gaze, attention_map, fixation_map, read_gaze_csv, FixationMap, GazeKind, GazePoint, KindFilter,
    DEFAULT_KERNEL, DEFAULT_SIGMA, DEFAULT_THRESHOLD,
};
use anticipatr::metrics::{
    auc_borji, auc_judd, kl_div, score_saliency, SaliencyScores, SaliencyTable, DEFAULT_BORJI_SPLITS, DEFAULT_KL_EPS,
};
use anticipatr::tensorkit::Tensor;
use anticipatr::xai::{encode_pgm, quantize, read_pgm};
use anticipatr::Error;
use clap::Args;
use rayon::prelude::*;

use crate::{frame_stem, parse_size};

/// `all` or a single gaze kind.
fn parse_kind(s: &str) -> Result<KindFilter, String> {
    if s == "all" {
        return Ok(KindFilter::All);
    }
    GazeKind::from_str(s)
        .map(KindFilter::Only)
        .map_err(|_| format!("expected all, fixation, saccade or unknown, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Gaussian kernel side in pixels.
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Attention level above which a pixel counts as fixated.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Gaze samples to count: all, fixation, saccade or unknown.
    #[arg(long, value_parser = parse_kind, default_value = "fixation")]
    kind: KindFilter,
}

type GazeIndex<'a> = HashMap<&'a str, BTreeMap<usize, Vec<&'a GazePoint>>>;

fn index_gaze(points: &[GazePoint]) -> GazeIndex<'_> {
    let mut idx: GazeIndex = HashMap::new();
    for p in points {
        idx.entry(p.video.as_str()).or_default().entry(p.frame).or_default().push(p);
    }
    idx
}

fn load_gaze(path: &Path) -> anyhow::Result<Vec<GazePoint>> {
    let points = read_gaze_csv(path)?;
    if points.is_empty() {
        return Err(Error::Data(format!("gaze file {} has no samples", path.display())).into());
    }
    Ok(points)
}

fn missing_ids<'a>(what: &str, ids: impl IntoIterator<Item = &'a str>) -> anyhow::Result<()> {
    let ids: Vec<&str> = ids.into_iter().collect();
    if ids.is_empty() {
        return Ok(());
    }
    Err(Error::Data(format!("{what}: {}", ids.join(", "))).into())
}

fn maps_for(
    idx: &GazeIndex,
    video: &str,
    frame: usize,
    size: (usize, usize),
    m: &MapArgs,
) -> anyhow::Result<(Tensor, FixationMap)> {
    let points = idx.get(video).and_then(|f| f.get(&frame)).map(Vec::as_slice).unwrap_or(&[]);
    let counts = accumulate_gaze(points.iter().copied(), size.0, size.1, m.kind)?;
    let att = attention_map(&counts, m.kernel, m.sigma)?;
    let fix = fixation_map(&att, m.threshold)?;
    Ok((att.grid, fix))
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    gaze: PathBuf,
    /// Videos to render; frame counts come from here.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frame size of the gaze coordinates, `HxW`.
    #[arg(long, value_parser = parse_size, default_value = "224x224")]
    size: (usize, usize),
    #[command(flatten)]
    maps: MapArgs,
}

pub fn run_attention(a: AttentionArgs) -> anyhow::Result<()> {
    let gaze = load_gaze(&a.gaze)?;
    let records = read_manifest(&a.manifest)?;
    let idx = index_gaze(&gaze);
    missing_ids(
        "videos without gaze samples",
        records.iter().filter(|r| !idx.contains_key(r.id.as_str())).map(|r| r.id.as_str()),
    )?;
    let (h, w) = a.size;
    records.par_iter().try_for_each(|r| -> anyhow::Result<()> {
        let dir = a.out.join(&r.id);
        for t in 0..r.frames {
            let (att, fix) = maps_for(&idx, &r.id, t, a.size, &a.maps)?;
            let name = format!("{}.pgm", frame_stem(t));
            crate::write_file(&dir.join("attention").join(&name), encode_pgm(w, h, &quantize(&att)))?;
            crate::write_file(&dir.join("fixation").join(&name), encode_pgm(w, h, &quantize(&fix.grid)))?;
        }
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct XaiEvalArgs {
    /// Saliency tree laid out as `<video>/<method>/frame_NNN.pgm`.
    #[arg(long)]
    saliency: PathBuf,
    #[arg(long)]
    gaze: PathBuf,
    /// Manifest supplying the class of each video.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for summary.csv and frames.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    maps: MapArgs,
    /// Random negative sets drawn per frame for AUC-B.
    #[arg(long, default_value_t = DEFAULT_BORJI_SPLITS)]
    borji_splits: usize,
    #[arg(long, default_value_t = DEFAULT_KL_EPS)]
    kl_eps: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn sorted_entries(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::Io { path: dir.into(), source: e })? {
        let e = e.map_err(|e| Error::Io { path: dir.into(), source: e })?;
        out.push((e.file_name().to_string_lossy().into_owned(), e.path()));
    }
    out.sort();
    Ok(out)
}

/// Frame index of `frame_NNN.pgm`.
fn frame_index(name: &str) -> Option<usize> {
    name.strip_prefix("frame_")?.strip_suffix(".pgm")?.parse().ok()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// A constant map has no spread to standardise; it scores NSS 0.
fn score_frame(s: &Tensor, f: &Tensor, a: &XaiEvalArgs, seed: u64) -> anticipatr::Result<SaliencyScores> {
    let first = s.data()[0];
    if s.data().iter().all(|&v| v == first) {
        return Ok(SaliencyScores {
            nss: 0.0,
            auc_judd: auc_judd(s, f)?,
            auc_borji: auc_borji(s, f, a.borji_splits, seed)?,
            kl: kl_div(s, f, a.kl_eps)?,
        });
    }
    score_saliency(s, f, a.borji_splits, seed, a.kl_eps)
}

struct Row {
    method: String,
    frame: usize,
    fixations: usize,
    scores: SaliencyScores,
}

fn eval_video(a: &XaiEvalArgs, idx: &GazeIndex, record: &VideoRecord, dir: &Path) -> anyhow::Result<(Vec<Row>, usize)> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut fixations: HashMap<(usize, usize, usize), FixationMap> = HashMap::new();
    for (method, mdir) in sorted_entries(dir)? {
        if !mdir.is_dir() {
            continue;
        }
        for (name, path) in sorted_entries(&mdir)? {
            let Some(t) = frame_index(&name) else { continue };
            let s = read_pgm(&path)?;
            let (h, w) = (s.shape()[0], s.shape()[1]);
            let fix = match fixations.get(&(t, h, w)) {
                Some(f) => f,
                None => {
                    let (_, f) = maps_for(idx, &record.id, t, (h, w), &a.maps)?;
                    fixations.entry((t, h, w)).or_insert(f)
                }
            };
            let n = fix.count();
            if n == 0 {
                skipped += 1;
                continue;
            }
            let seed = a.seed ^ fnv1a(format!("{}/{method}/{t}", record.id).as_bytes());
            let scores = score_frame(&s, &fix.grid, a, seed).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            rows.push(Row {
                method: method.clone(),
                frame: t,
                fixations: n,
                scores,
            });
        }
    }
    Ok((rows, skipped))
}

pub fn run_xai_eval(a: XaiEvalArgs) -> anyhow::Result<()> {
    let gaze = load_gaze(&a.gaze)?;
    let idx = index_gaze(&gaze);
    let records: HashMap<String, VideoRecord> =
        read_manifest(&a.manifest)?.into_iter().map(|r| (r.id.clone(), r)).collect();
    let videos: Vec<(String, PathBuf)> = sorted_entries(&a.saliency)?.into_iter().filter(|(_, p)| p.is_dir()).collect();
    if videos.is_empty() {
        return Err(Error::Data(format!("no video directories under {}", a.saliency.display())).into());
    }
    missing_ids(
        "saliency videos missing from the manifest",
        videos.iter().filter(|(id, _)| !records.contains_key(id)).map(|(id, _)| id.as_str()),
    )?;
    missing_ids(
        "saliency videos missing from the gaze log",
        videos.iter().filter(|(id, _)| !idx.contains_key(id.as_str())).map(|(id, _)| id.as_str()),
    )?;

    let results: Vec<anyhow::Result<(Vec<Row>, usize)>> =
        videos.par_iter().map(|(id, dir)| eval_video(&a, &idx, &records[id], dir)).collect();

    let mut table = SaliencyTable::default();
    let mut frames = String::from("video,label,method,frame,fixations,nss,auc_judd,auc_borji,kl\n");
    let mut skipped = 0;
    let mut methods = BTreeSet::new();
    for ((id, _), res) in videos.iter().zip(results) {
        let (rows, skip) = res?;
        skipped += skip;
        let positive = records[id].positive;
        for r in rows {
            table.add(&r.method, positive, &r.scores);
            methods.insert(r.method.clone());
            let s = r.scores;
            let _ = writeln!(
                frames,
                "{id},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                u8::from(positive),
                r.method,
                r.frame,
                r.fixations,
                s.nss,
                s.auc_judd,
                s.auc_borji,
                s.kl
            );
        }
    }
    if methods.is_empty() {
        return Err(Error::Data("no frame had both a saliency map and fixations".into()).into());
    }
    crate::write_file(&a.out.join("frames.csv"), frames)?;
    crate::write_file(&a.out.join("summary.csv"), table.to_csv())?;
    if skipped > 0 {
        eprintln!("skipped {skipped} saliency frames without fixations");
    }
    Ok(())
}
