//! Dense tensors, the reverse-mode tape, and the few pure kernels the rest of
//! the crate leans on (row pooling, bilinear resampling, two-way softmax).

mod tape;
mod tensor;

pub use tape::{sigmoid, Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Elementwise mean of equally shaped tensors.
pub fn avgpool_rows(rows: &[Tensor]) -> Result<Tensor> {
    let first = rows
        .first()
        .ok_or_else(|| Error::contract("avgpool_rows over an empty list"))?;
    let mut acc = first.to_vec();
    for r in &rows[1..] {
        if r.shape() != first.shape() {
            return Err(Error::shape("avgpool_rows", first.shape(), r.shape()));
        }
        for (a, v) in acc.iter_mut().zip(r.data()) {
            *a += v;
        }
    }
    let m = rows.len() as f64;
    Ok(Tensor::from_raw(
        first.shape().to_vec(),
        acc.into_iter().map(|v| v / m).collect(),
    ))
}

/// Bilinear resampling of a 2-D grid with corner-aligned sampling: source
/// cell `(0, 0)` maps to target `(0, 0)` and source `(U-1, V-1)` maps to
/// target `(H-1, W-1)`.
pub fn bilinear_resize(grid: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let &[rows, cols] = grid.shape() else {
        return Err(Error::contract(format!(
            "bilinear_resize needs a 2-D grid, got {:?}",
            grid.shape()
        )));
    };
    let (out_rows, out_cols) = target;
    if rows == 0 || cols == 0 || out_rows == 0 || out_cols == 0 {
        return Err(Error::contract(format!(
            "bilinear_resize of {rows}x{cols} to {out_rows}x{out_cols}"
        )));
    }
    let ys: Vec<(usize, usize, f64)> = (0..out_rows).map(|i| sample_axis(i, rows, out_rows)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_cols).map(|j| sample_axis(j, cols, out_cols)).collect();
    let g = grid.data();
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        let r0 = &g[y0 * cols..(y0 + 1) * cols];
        let r1 = &g[y1 * cols..(y1 + 1) * cols];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + fx * (r0[x1] - r0[x0]);
            let bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
            out.push(top + fy * (bottom - top));
        }
    }
    Ok(Tensor::from_raw(vec![out_rows, out_cols], out))
}

fn sample_axis(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Probability of the first of two classes, `exp(a) / (exp(a) + exp(b))`,
/// evaluated after subtracting the larger score.
pub fn softmax2(scores: [f64; 2]) -> f64 {
    let m = scores[0].max(scores[1]);
    let ea = (scores[0] - m).exp();
    let eb = (scores[1] - m).exp();
    ea / (ea + eb)
}
