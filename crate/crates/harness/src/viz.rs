use attn_core::{PatchGrid, RgbImage, Scalar};

pub const MIN_OPACITY: f64 = 0.3;
pub const MAX_OPACITY: f64 = 0.8;

/// A selected patch window mapped onto the raw frame. `x1`, `y1` exclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchRect {
    pub patch: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub opacity: f64,
}

/// Opacity per selected patch from its dense importance rank within the step:
/// the least important gets [`MIN_OPACITY`], the most [`MAX_OPACITY`]. Equal
/// importance gets equal opacity; if every value ties, all are `MAX_OPACITY`.
pub fn rank_opacity<T: Scalar>(selected: &[usize], importance: &[T]) -> Vec<f64> {
    let values: Vec<f64> = selected.iter().map(|&i| importance[i].to_f64_lossy()).collect();
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= 1 {
        return vec![MAX_OPACITY; values.len()];
    }
    let top = (distinct.len() - 1) as f64;
    values
        .iter()
        .map(|v| {
            let rank = distinct.partition_point(|d| d < v) as f64;
            MIN_OPACITY + (MAX_OPACITY - MIN_OPACITY) * rank / top
        })
        .collect()
}

/// Windows of the selected patches, scaled from the `L`×`L` agent input to a
/// `width`×`height` frame.
pub fn patch_rects<T: Scalar>(
    grid: &PatchGrid,
    selected: &[usize],
    importance: &[T],
    width: usize,
    height: usize,
) -> Vec<PatchRect> {
    let l = grid.input_size();
    let m = grid.window();
    selected
        .iter()
        .zip(rank_opacity(selected, importance))
        .map(|(&patch, opacity)| {
            let (oy, ox) = grid.origin(patch);
            PatchRect {
                patch,
                x0: ox * width / l,
                y0: oy * height / l,
                x1: (ox + m) * width / l,
                y1: (oy + m) * height / l,
                opacity,
            }
        })
        .collect()
}

/// Blends the selected windows toward white. Where windows overlap the
/// strongest opacity wins.
pub fn overlay_attention<T: Scalar>(
    frame: &RgbImage,
    grid: &PatchGrid,
    selected: &[usize],
    importance: &[T],
) -> RgbImage {
    let (w, h) = (frame.width(), frame.height());
    let mut alpha = vec![0.0f64; w * h];
    for r in patch_rects(grid, selected, importance, w, h) {
        for y in r.y0..r.y1.min(h) {
            for a in &mut alpha[y * w + r.x0.min(w)..y * w + r.x1.min(w)] {
                *a = a.max(r.opacity);
            }
        }
    }
    let mut out = frame.clone();
    for y in 0..h {
        for x in 0..w {
            let a = alpha[y * w + x];
            if a > 0.0 {
                let px = frame.pixel(x, y).map(|c| (c as f64 * (1.0 - a) + 255.0 * a).round() as u8);
                out.put_pixel(x, y, px);
            }
        }
    }
    out
}
