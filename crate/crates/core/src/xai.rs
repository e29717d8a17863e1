//! CAM-family saliency for the anticipation network and PGM/PPM export.
//!
//! Every method reduces the frame's `K×U×V` feature map to a non-negative
//! `U×V` grid, which is then bilinearly upsampled to frame resolution:
//!
//! * Grad-CAM: channel weight = spatial mean of the score gradient.
//! * Grad-CAM++: channel weight = `Σ α·ReLU(g)` with
//!   `α = g² / (2g² + Σ_ab A·g³)` (zero where the denominator vanishes).
//! * XGrad-CAM: channel weight = `Σ (A / ΣA)·g` (zero for channels with
//!   `ΣA = 0`).
//! * Eigen-CAM: projection onto the first right singular vector of the
//!   `UV×K` activation matrix, signed so the map sums to a non-negative value.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::antnet::{grad_score_wrt_feature_map, Class, NetActivations};
use crate::error::{Error, Result};
use crate::gaze::max_normalize;
use crate::tensorkit::{bilinear_resize, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CamMethod {
    GradCam,
    GradCamPlusPlus,
    XGradCam,
    EigenCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 4] = [
        CamMethod::GradCam,
        CamMethod::GradCamPlusPlus,
        CamMethod::XGradCam,
        CamMethod::EigenCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CamMethod::GradCam => "grad-cam",
            CamMethod::GradCamPlusPlus => "grad-cam++",
            CamMethod::XGradCam => "xgrad-cam",
            CamMethod::EigenCam => "eigen-cam",
        }
    }

    pub fn needs_gradient(self) -> bool {
        self != CamMethod::EigenCam
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CamMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                let valid: Vec<&str> = CamMethod::ALL.iter().map(|m| m.name()).collect();
                Error::contract(format!(
                    "unknown method {s:?}; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// A saliency explanation of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// Non-negative `U×V` map.
    pub low_res: Tensor,
    /// `low_res` bilinearly resized to frame resolution.
    pub upsampled: Tensor,
    pub frame: usize,
    /// `None` for class-agnostic methods.
    pub class: Option<Class>,
    pub method: CamMethod,
}

impl SaliencyMap {
    /// Upsampled map scaled to `[0, 1]` by its maximum (zero map stays zero).
    pub fn normalized(&self) -> Tensor {
        max_normalize(&self.upsampled)
    }
}

fn dims(a: &Tensor) -> Result<(usize, usize, usize)> {
    match *a.shape() {
        [k, u, v] => Ok((k, u, v)),
        _ => Err(Error::contract(format!(
            "feature map must be K×U×V, got {:?}",
            a.shape()
        ))),
    }
}

fn check_grad(a: &Tensor, grad: &Tensor) -> Result<(usize, usize, usize)> {
    let d = dims(a)?;
    if a.shape() != grad.shape() {
        return Err(Error::shape("cam", a.shape(), grad.shape()));
    }
    Ok(d)
}

/// `ReLU(Σ_k w_k A_k)` as a `U×V` tensor.
pub fn weighted_map(a: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let (k, u, v) = dims(a)?;
    if weights.len() != k {
        return Err(Error::shape("weighted_map", &[weights.len()], &[k]));
    }
    let plane = u * v;
    let mut out = vec![0.0; plane];
    for (ch, &w) in a.data().chunks_exact(plane).zip(weights) {
        for (o, &x) in out.iter_mut().zip(ch) {
            *o += w * x;
        }
    }
    Ok(Tensor::from_raw(vec![u, v], out.into_iter().map(|x| x.max(0.0)).collect()))
}

/// Spatially averaged gradients, one weight per channel.
pub fn grad_cam_weights(grad: &Tensor) -> Result<Vec<f64>> {
    let (_, u, v) = dims(grad)?;
    let plane = u * v;
    Ok(grad
        .data()
        .chunks_exact(plane)
        .map(|g| g.iter().sum::<f64>() / plane as f64)
        .collect())
}

pub fn grad_cam_map(a: &Tensor, grad: &Tensor) -> Result<Tensor> {
    check_grad(a, grad)?;
    weighted_map(a, &grad_cam_weights(grad)?)
}

pub fn grad_cam_pp_weights(a: &Tensor, grad: &Tensor) -> Result<Vec<f64>> {
    let (_, u, v) = check_grad(a, grad)?;
    let plane = u * v;
    Ok(a.data()
        .chunks_exact(plane)
        .zip(grad.data().chunks_exact(plane))
        .map(|(ach, gch)| {
            let act_sum: f64 = ach.iter().sum();
            gch.iter()
                .map(|&g| {
                    let g2 = g * g;
                    let denom = 2.0 * g2 + act_sum * g2 * g;
                    let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                    alpha * g.max(0.0)
                })
                .sum()
        })
        .collect())
}

pub fn grad_cam_pp_map(a: &Tensor, grad: &Tensor) -> Result<Tensor> {
    weighted_map(a, &grad_cam_pp_weights(a, grad)?)
}

pub fn xgrad_cam_weights(a: &Tensor, grad: &Tensor) -> Result<Vec<f64>> {
    let (_, u, v) = check_grad(a, grad)?;
    let plane = u * v;
    Ok(a.data()
        .chunks_exact(plane)
        .zip(grad.data().chunks_exact(plane))
        .map(|(ach, gch)| {
            let act_sum: f64 = ach.iter().sum();
            if act_sum == 0.0 {
                return 0.0;
            }
            ach.iter().zip(gch).map(|(x, g)| x / act_sum * g).sum()
        })
        .collect())
}

pub fn xgrad_cam_map(a: &Tensor, grad: &Tensor) -> Result<Tensor> {
    weighted_map(a, &xgrad_cam_weights(a, grad)?)
}

/// `A · v₁` reshaped to `U×V`, before rectification, with `v₁` the first
/// right singular vector of the `UV×K` activation matrix.
pub fn eigen_projection(a: &Tensor) -> Result<Tensor> {
    let (k, u, v) = dims(a)?;
    let plane = u * v;
    if a.data().iter().all(|&x| x == 0.0) {
        return Ok(Tensor::zeros(&[u, v]));
    }
    // Column k of the UV×K matrix is channel k, so the channel-major buffer
    // is already column-major.
    let m = DMatrix::from_column_slice(plane, k, a.data());
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::contract("SVD did not produce right singular vectors"))?;
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
        .0;
    let v1 = v_t.row(top).transpose();
    let proj = m * v1;
    let mut data: Vec<f64> = proj.iter().copied().collect();
    if data.iter().sum::<f64>() < 0.0 {
        data.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(Tensor::from_raw(vec![u, v], data))
}

pub fn eigen_cam_map(a: &Tensor) -> Result<Tensor> {
    Ok(eigen_projection(a)?.map(|x| x.max(0.0)))
}

/// Low-resolution map of `method` for frame `t`. `class` is ignored by
/// Eigen-CAM.
pub fn cam_low_res(method: CamMethod, acts: &NetActivations, t: usize, class: Class) -> Result<Tensor> {
    if t >= acts.len() {
        return Err(Error::contract(format!("frame {t} out of range for a {}-frame video", acts.len())));
    }
    let a = acts.feature_map(t);
    match method {
        CamMethod::EigenCam => eigen_cam_map(a),
        m => {
            let grad = grad_score_wrt_feature_map(acts, t, class)?;
            match m {
                CamMethod::GradCam => grad_cam_map(a, &grad),
                CamMethod::GradCamPlusPlus => grad_cam_pp_map(a, &grad),
                CamMethod::XGradCam => xgrad_cam_map(a, &grad),
                CamMethod::EigenCam => unreachable!(),
            }
        }
    }
}

/// Explains frame `t` with `method` and upsamples to `size = (H, W)`.
pub fn explain(
    method: CamMethod,
    acts: &NetActivations,
    t: usize,
    class: Class,
    size: (usize, usize),
) -> Result<SaliencyMap> {
    let low_res = cam_low_res(method, acts, t, class)?;
    let upsampled = bilinear_resize(&low_res, size)?;
    Ok(SaliencyMap {
        low_res,
        upsampled,
        frame: t,
        class: method.needs_gradient().then_some(class),
        method,
    })
}

pub fn grad_cam(acts: &NetActivations, t: usize, class: Class, size: (usize, usize)) -> Result<SaliencyMap> {
    explain(CamMethod::GradCam, acts, t, class, size)
}

pub fn grad_cam_pp(acts: &NetActivations, t: usize, class: Class, size: (usize, usize)) -> Result<SaliencyMap> {
    explain(CamMethod::GradCamPlusPlus, acts, t, class, size)
}

pub fn xgrad_cam(acts: &NetActivations, t: usize, class: Class, size: (usize, usize)) -> Result<SaliencyMap> {
    explain(CamMethod::XGradCam, acts, t, class, size)
}

pub fn eigen_cam(acts: &NetActivations, t: usize, size: (usize, usize)) -> Result<SaliencyMap> {
    explain(CamMethod::EigenCam, acts, t, Class::Accident, size)
}

// ----------------------------------------------------------------------------
// Image export
// ----------------------------------------------------------------------------

/// Heat colormap entry for an 8-bit level: red rises over the first third,
/// green over the second, blue over the last.
pub fn heat_color(level: u8) -> [u8; 3] {
    let v = f64::from(level) / 255.0;
    let ch = |offset: f64| ((3.0 * v - offset).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(0.0), ch(1.0), ch(2.0)]
}

/// The full 256-entry table of [`heat_color`].
pub fn heat_table() -> [[u8; 3]; 256] {
    std::array::from_fn(|i| heat_color(i as u8))
}

/// Quantises a `[0, 1]` grid to 8-bit levels.
pub fn quantize(grid: &Tensor) -> Vec<u8> {
    grid.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// An 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

/// Reads a PNM (typically P6) frame image.
pub fn read_frame(path: &Path) -> Result<RgbFrame> {
    let fail = |e: &dyn fmt::Display| Error::format(path, 0, format!("unreadable frame image: {e}"));
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| fail(&e))?
        .decode()
        .map_err(|e| fail(&e))?
        .to_rgb8();
    Ok(RgbFrame {
        width: img.width() as usize,
        height: img.height() as usize,
        rgb: img.into_raw(),
    })
}

/// 50/50 blend of the frame with the heat-coloured saliency, with the map
/// resampled from its low-resolution grid to the frame's size.
pub fn blend(map: &SaliencyMap, frame: &RgbFrame) -> Result<Vec<u8>> {
    let resized = bilinear_resize(&map.low_res, (frame.height, frame.width))?;
    let levels = quantize(&max_normalize(&resized));
    let mut out = Vec::with_capacity(frame.rgb.len());
    for (px, &level) in frame.rgb.chunks_exact(3).zip(&levels) {
        let heat = heat_color(level);
        for c in 0..3 {
            out.push(((u16::from(px[c]) + u16::from(heat[c]) + 1) / 2) as u8);
        }
    }
    Ok(out)
}

/// Writes `<stem>.pgm` (max-normalised grayscale) and, when a frame image is
/// given, `<stem>.ppm` (heat overlay). Returns the written paths.
pub fn export_saliency(map: &SaliencyMap, frame: Option<&Path>, stem: &Path) -> Result<Vec<PathBuf>> {
    let (h, w) = match *map.upsampled.shape() {
        [h, w] => (h, w),
        _ => return Err(Error::contract("upsampled saliency must be 2-D")),
    };
    if map.upsampled.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("saliency map has non-finite values"));
    }
    let mut written = Vec::new();
    let pgm = stem.with_extension("pgm");
    fs::write(&pgm, encode_pgm(w, h, &quantize(&map.normalized()))).map_err(|e| Error::io(&pgm, e))?;
    written.push(pgm);
    if let Some(frame_path) = frame {
        let img = read_frame(frame_path)?;
        let ppm = stem.with_extension("ppm");
        fs::write(&ppm, encode_ppm(img.width, img.height, &blend(map, &img)?))
            .map_err(|e| Error::io(&ppm, e))?;
        written.push(ppm);
    }
    Ok(written)
}

/// Reads an 8-bit PGM back as a `[0, 1]` grid.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let fail = |e: &dyn fmt::Display| Error::format(path, 0, format!("unreadable PGM: {e}"));
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| fail(&e))?
        .decode()
        .map_err(|e| fail(&e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok(Tensor::from_raw(vec![h, w], data))
}
