//! Patch extraction, self-attention importance voting and top-K patch selection.
//!
//! A frame is cut into overlapping square windows; each window becomes one row
//! of the patch matrix `X`. Keys and queries are affine projections of `X`
//! and the row-softmax of their scaled outer product is the attention matrix.
//! Column sums of that matrix are the votes each patch receives; the `K`
//! patches with the most votes are kept and reduced to their normalized
//! center coordinates.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image::{Frame, CHANNELS};
use crate::linalg::{first_non_finite, Matrix};
use crate::scalar::Scalar;

/// Sliding-window geometry over an `L × L` RGB input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    input_size: usize,
    window: usize,
    stride: usize,
    per_axis: usize,
}

impl PatchGrid {
    pub fn new(input_size: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "window ({window}) and stride ({stride}) must be positive"
            )));
        }
        if window > input_size {
            return Err(Error::Config(format!(
                "window {window} larger than input size {input_size}"
            )));
        }
        Ok(PatchGrid {
            input_size,
            window,
            stride,
            per_axis: (input_size - window) / stride + 1,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn rows(&self) -> usize {
        self.per_axis
    }

    pub fn cols(&self) -> usize {
        self.per_axis
    }

    /// `N`, the number of patches.
    pub fn num_patches(&self) -> usize {
        self.per_axis * self.per_axis
    }

    /// `d_in`, the length of one flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.window * self.window * CHANNELS
    }

    /// Grid coordinates `(row, col)` of a patch index.
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.per_axis, index % self.per_axis)
    }

    /// Top-left pixel `(y, x)` of a patch window.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        let (r, c) = self.position(index);
        (r * self.stride, c * self.stride)
    }

    /// Pixel coordinate of a window center along one axis.
    pub fn center_px(&self, grid_coord: usize) -> f64 {
        (grid_coord * self.stride) as f64 + (self.window as f64 - 1.0) / 2.0
    }

    /// Largest attainable center coordinate, the normalizer for [`patch_centers`].
    pub fn max_center_px(&self) -> f64 {
        self.center_px(self.per_axis - 1)
    }
}

/// Key and query projections, each `d_in × d` plus a bias of length `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub query_weight: Matrix<T>,
    pub query_bias: Vec<T>,
    pub key_weight: Matrix<T>,
    pub key_bias: Vec<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(
        query_weight: Matrix<T>,
        query_bias: Vec<T>,
        key_weight: Matrix<T>,
        key_bias: Vec<T>,
    ) -> Result<Self> {
        let (d_in, d) = query_weight.shape();
        if d == 0 {
            return Err(Error::Config("key/query dimension must be at least 1".into()));
        }
        if key_weight.shape() != (d_in, d) {
            return Err(Error::shape(
                "key weight",
                format!("{d_in}x{d}"),
                format!("{}x{}", key_weight.rows(), key_weight.cols()),
            ));
        }
        if query_bias.len() != d {
            return Err(Error::shape("query bias", d, query_bias.len()));
        }
        if key_bias.len() != d {
            return Err(Error::shape("key bias", d, key_bias.len()));
        }
        Ok(AttentionParams {
            query_weight,
            query_bias,
            key_weight,
            key_bias,
        })
    }

    pub fn zeros(input_dim: usize, key_dim: usize) -> Self {
        AttentionParams {
            query_weight: Matrix::zeros(input_dim, key_dim),
            query_bias: vec![T::zero(); key_dim],
            key_weight: Matrix::zeros(input_dim, key_dim),
            key_bias: vec![T::zero(); key_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.query_weight.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.query_weight.cols()
    }

    /// Trainable values in one projection: `d_in·d + d`.
    pub fn projection_param_count(input_dim: usize, key_dim: usize) -> usize {
        input_dim * key_dim + key_dim
    }

    fn check_finite(&self) -> Result<()> {
        for (what, m) in [("query weight", &self.query_weight), ("key weight", &self.key_weight)] {
            if let Some((r, c)) = m.first_non_finite() {
                return Err(Error::NonFinite {
                    what,
                    location: format!("[{r}][{c}]"),
                });
            }
        }
        for (what, v) in [("query bias", &self.query_bias), ("key bias", &self.key_bias)] {
            if let Some(i) = first_non_finite(v) {
                return Err(Error::NonFinite {
                    what,
                    location: format!("[{i}]"),
                });
            }
        }
        Ok(())
    }
}

/// Everything the attention stage computes for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutcome<T> {
    /// `N × N`, row-stochastic.
    pub attention: Matrix<T>,
    /// Column sums of `attention`.
    pub importance: Vec<T>,
    /// Top-K patch indices, most important first.
    pub selected: Vec<usize>,
    /// Normalized `(row, col)` centers of `selected`, same order.
    pub centers: Vec<[T; 2]>,
}

/// Cuts an `L × L × 3` frame into the `N × d_in` patch matrix.
///
/// Windows are enumerated row-major over the grid and each window is
/// flattened row-major as `(y, x, channel)`.
pub fn patchify<T: Scalar>(frame: &Frame<T>, grid: &PatchGrid) -> Result<Matrix<T>> {
    if frame.width() != grid.input_size || frame.height() != grid.input_size {
        return Err(Error::Config(format!(
            "frame is {}x{}, patch grid expects {}x{}",
            frame.height(),
            frame.width(),
            grid.input_size,
            grid.input_size
        )));
    }
    let m = grid.window;
    let src = frame.as_slice();
    let row_len = m * CHANNELS;
    let mut data = Vec::with_capacity(grid.num_patches() * grid.patch_dim());
    for index in 0..grid.num_patches() {
        let (y0, x0) = grid.origin(index);
        for dy in 0..m {
            let start = ((y0 + dy) * frame.width() + x0) * CHANNELS;
            data.extend_from_slice(&src[start..start + row_len]);
        }
    }
    Matrix::from_vec(grid.num_patches(), grid.patch_dim(), data)
}

fn project<T: Scalar>(x: &Matrix<T>, weight: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    let mut out = x.matmul(weight)?;
    for r in 0..out.rows() {
        for (o, &b) in out.row_mut(r).iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
    Ok(out)
}

/// Keys and queries for `x`, after validating shapes and finiteness.
fn keys_and_queries<T: Scalar>(
    x: &Matrix<T>,
    params: &AttentionParams<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if x.cols() != params.input_dim() {
        return Err(Error::shape("patch matrix columns", params.input_dim(), x.cols()));
    }
    if let Some((r, c)) = x.first_non_finite() {
        return Err(Error::NonFinite {
            what: "patch matrix",
            location: format!("[{r}][{c}]"),
        });
    }
    params.check_finite()?;
    let keys = project(x, &params.key_weight, &params.key_bias)?;
    let queries = project(x, &params.query_weight, &params.query_bias)?;
    Ok((keys, queries))
}

/// Writes `softmax(scale · key · queryⱼ)` over all `j` into `out`.
/// `queries_t` holds one query component per row.
#[inline]
fn softmax_row<T: Scalar>(key: &[T], queries_t: &Matrix<T>, scale: T, out: &mut [T]) {
    out.fill(T::zero());
    for (&k, q) in key.iter().zip(queries_t.iter_rows()) {
        for (o, &q) in out.iter_mut().zip(q) {
            *o = *o + k * q;
        }
    }
    let mut max = T::neg_infinity();
    for o in out.iter_mut() {
        *o = *o * scale;
        if *o > max {
            max = *o;
        }
    }
    let mut sum = T::zero();
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn attention_scale<T: Scalar>(input_dim: usize) -> T {
    T::one() / T::of(input_dim as f64).sqrt()
}

/// `A = rowSoftmax((X·W_k + b_k)(X·W_q + b_q)ᵀ / √d_in)`.
pub fn attention_matrix<T: Scalar>(x: &Matrix<T>, params: &AttentionParams<T>) -> Result<Matrix<T>> {
    let (keys, queries) = keys_and_queries(x, params)?;
    let queries_t = queries.transpose();
    let n = x.rows();
    let scale = attention_scale::<T>(params.input_dim());
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        softmax_row(keys.row(i), &queries_t, scale, a.row_mut(i));
    }
    Ok(a)
}

/// `Y = A·X`. Only used for analysis; the agent acts on importance alone.
pub fn weighted_output<T: Scalar>(a: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != a.cols() {
        return Err(Error::shape("attention matrix", "square", format!("{}x{}", a.rows(), a.cols())));
    }
    a.matmul(x)
}

/// Column sums of the attention matrix.
pub fn importance_vector<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    if a.rows() != a.cols() {
        return Err(Error::shape("attention matrix", "square", format!("{}x{}", a.rows(), a.cols())));
    }
    let mut importance = vec![T::zero(); a.cols()];
    for row in a.iter_rows() {
        for (acc, &v) in importance.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    Ok(importance)
}

/// Same result as `importance_vector(attention_matrix(x, params))`, bit for
/// bit, without materializing the `N × N` matrix.
pub fn patch_importance<T: Scalar>(x: &Matrix<T>, params: &AttentionParams<T>) -> Result<Vec<T>> {
    let (keys, queries) = keys_and_queries(x, params)?;
    let queries_t = queries.transpose();
    let n = x.rows();
    let scale = attention_scale::<T>(params.input_dim());
    let mut row = vec![T::zero(); n];
    let mut importance = vec![T::zero(); n];
    for i in 0..n {
        softmax_row(keys.row(i), &queries_t, scale, &mut row);
        for (acc, &v) in importance.iter_mut().zip(&row) {
            *acc = *acc + v;
        }
    }
    Ok(importance)
}

/// Indices of the `k` largest importances, largest first; ties go to the
/// lower index.
pub fn select_top_k<T: Scalar>(importance: &[T], k: usize) -> Result<Vec<usize>> {
    let n = importance.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("top-k of {k} requested from {n} patches")));
    }
    if let Some(i) = first_non_finite(importance) {
        return Err(Error::NonFinite {
            what: "importance vector",
            location: format!("[{i}]"),
        });
    }
    let by_rank = |&a: &usize, &b: &usize| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    let mut indices: Vec<usize> = (0..n).collect();
    if k < n {
        indices.select_nth_unstable_by(k - 1, by_rank);
        indices.truncate(k);
    }
    indices.sort_unstable_by(by_rank);
    Ok(indices)
}

/// Normalized `(row, col)` window centers, each divided by the largest
/// attainable center so values lie in `[0, 1]`. A single-patch grid maps to 0.
pub fn patch_centers<T: Scalar>(indices: &[usize], grid: &PatchGrid) -> Result<Vec<[T; 2]>> {
    let max = grid.max_center_px();
    let normalize = |grid_coord: usize| {
        if grid.rows() == 1 {
            T::zero()
        } else {
            T::of(grid.center_px(grid_coord) / max)
        }
    };
    indices
        .iter()
        .map(|&index| {
            if index >= grid.num_patches() {
                return Err(Error::IndexOutOfRange {
                    index,
                    len: grid.num_patches(),
                });
            }
            let (r, c) = grid.position(index);
            Ok([normalize(r), normalize(c)])
        })
        .collect()
}

/// Result of the attention stage on the agent's decision path.
#[derive(Clone, Debug, PartialEq)]
pub struct Glimpse<T> {
    pub importance: Vec<T>,
    pub selected: Vec<usize>,
    pub centers: Vec<[T; 2]>,
}

impl<T: Scalar> Glimpse<T> {
    /// Controller input: centers flattened as `[row₀, col₀, row₁, col₁, …]`.
    pub fn features(&self) -> Vec<T> {
        self.centers.iter().flat_map(|c| c.iter().copied()).collect()
    }
}

/// The attention bottleneck: grid geometry, projections and `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention<T> {
    grid: PatchGrid,
    params: AttentionParams<T>,
    top_k: usize,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new(grid: PatchGrid, params: AttentionParams<T>, top_k: usize) -> Result<Self> {
        if params.input_dim() != grid.patch_dim() {
            return Err(Error::shape("attention input dim", grid.patch_dim(), params.input_dim()));
        }
        if top_k == 0 || top_k > grid.num_patches() {
            return Err(Error::Config(format!(
                "top_k {top_k} must be in 1..={}",
                grid.num_patches()
            )));
        }
        Ok(SelfAttention { grid, params, top_k })
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn params(&self) -> &AttentionParams<T> {
        &self.params
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn glimpse(&self, frame: &Frame<T>) -> Result<Glimpse<T>> {
        let x = patchify(frame, &self.grid)?;
        let importance = patch_importance(&x, &self.params)?;
        let selected = select_top_k(&importance, self.top_k)?;
        let centers = patch_centers(&selected, &self.grid)?;
        Ok(Glimpse {
            importance,
            selected,
            centers,
        })
    }

    /// Full outcome including the attention matrix.
    pub fn analyze(&self, frame: &Frame<T>) -> Result<AttentionOutcome<T>> {
        let x = patchify(frame, &self.grid)?;
        let attention = attention_matrix(&x, &self.params)?;
        let importance = importance_vector(&attention)?;
        let selected = select_top_k(&importance, self.top_k)?;
        let centers = patch_centers(&selected, &self.grid)?;
        Ok(AttentionOutcome {
            attention,
            importance,
            selected,
            centers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_grid() -> PatchGrid {
        PatchGrid::new(96, 7, 4).unwrap()
    }

    #[test]
    fn standard_grid_geometry() {
        let g = table_grid();
        assert_eq!((g.rows(), g.cols()), (23, 23));
        assert_eq!(g.num_patches(), 529);
        assert_eq!(g.patch_dim(), 147);
    }

    #[test]
    fn grid_rejects_oversized_window_and_zero_stride() {
        assert!(PatchGrid::new(4, 5, 1).is_err());
        assert!(PatchGrid::new(8, 3, 0).is_err());
    }

    #[test]
    fn patchify_standard_shape() {
        let frame = Frame::<f32>::filled(96, 96, 0.25);
        let x = patchify(&frame, &table_grid()).unwrap();
        assert_eq!(x.shape(), (529, 147));
    }

    #[test]
    fn patchify_single_window() {
        let grid = PatchGrid::new(5, 5, 5).unwrap();
        let frame = Frame::<f64>::filled(5, 5, 0.1);
        assert_eq!(patchify(&frame, &grid).unwrap().shape(), (1, 75));
    }

    #[test]
    fn patchify_constant_frame() {
        let grid = PatchGrid::new(8, 4, 4).unwrap();
        let x = patchify(&Frame::<f64>::filled(8, 8, 0.5), &grid).unwrap();
        assert_eq!(x.rows(), 4);
        assert!(x.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn patchify_window_contents_are_row_major() {
        let grid = PatchGrid::new(4, 2, 2).unwrap();
        let data: Vec<f64> = (0..48).map(|v| v as f64).collect();
        let frame = Frame::new(4, 4, data).unwrap();
        let x = patchify(&frame, &grid).unwrap();
        // patch 1 is grid (0, 1): pixels (0,2), (0,3), (1,2), (1,3)
        let expected: Vec<f64> = [(0, 2), (0, 3), (1, 2), (1, 3)]
            .iter()
            .flat_map(|&(y, x)| (0..3).map(move |c| ((y * 4 + x) * 3 + c) as f64))
            .collect();
        assert_eq!(x.row(1), expected.as_slice());
    }

    #[test]
    fn patchify_rejects_wrong_frame_size() {
        let frame = Frame::<f64>::filled(10, 10, 0.0);
        assert!(matches!(patchify(&frame, &table_grid()), Err(Error::Config(_))));
    }

    #[test]
    fn singleton_attention_is_one() {
        let x = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let params = AttentionParams::new(
            Matrix::from_vec(2, 1, vec![5.0, 1.0]).unwrap(),
            vec![2.0],
            Matrix::from_vec(2, 1, vec![-3.0, 4.0]).unwrap(),
            vec![0.1],
        )
        .unwrap();
        assert_eq!(attention_matrix(&x, &params).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn zero_params_give_uniform_attention() {
        let x = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1);
        let a = attention_matrix(&x, &AttentionParams::zeros(3, 2)).unwrap();
        assert!(a.as_slice().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn non_finite_input_is_located() {
        let mut x = Matrix::<f64>::zeros(3, 2);
        x[(2, 1)] = f64::NAN;
        let err = attention_matrix(&x, &AttentionParams::zeros(2, 1)).unwrap_err();
        assert!(err.to_string().contains("[2][1]"), "{err}");

        let mut params = AttentionParams::<f64>::zeros(2, 1);
        params.key_bias[0] = f64::INFINITY;
        let err = attention_matrix(&Matrix::zeros(3, 2), &params).unwrap_err();
        assert!(err.to_string().contains("key bias"), "{err}");
    }

    #[test]
    fn identity_and_uniform_weighted_output() {
        let x = Matrix::from_fn(4, 3, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
        assert_eq!(weighted_output(&Matrix::identity(4), &x).unwrap(), x);

        let uniform = Matrix::from_fn(4, 4, |_, _| 0.25);
        let y = weighted_output(&uniform, &x).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..4).map(|r| x[(r, c)]).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert!((y[(r, c)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn importance_of_simple_matrices() {
        assert_eq!(importance_vector(&Matrix::<f64>::identity(3)).unwrap(), vec![1.0; 3]);
        let uniform = Matrix::from_fn(4, 4, |_, _| 0.25);
        assert_eq!(importance_vector(&uniform).unwrap(), vec![1.0; 4]);
        assert!(importance_vector(&Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn top_k_ranking() {
        assert_eq!(select_top_k(&[0.5, 2.0, 1.5, 1.0], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_top_k(&[0.5, 2.0, 1.5, 1.0], 4).unwrap(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        assert_eq!(select_top_k(&[1.0, 3.0, 1.0, 3.0, 1.0], 3).unwrap(), vec![1, 3, 0]);
        assert_eq!(select_top_k(&[1.0; 6], 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn top_k_bounds() {
        assert!(select_top_k(&[1.0, 2.0], 3).is_err());
        assert!(select_top_k(&[1.0, 2.0], 0).is_err());
        assert!(select_top_k(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn centers_of_standard_grid() {
        let g = table_grid();
        assert_eq!(g.max_center_px(), 91.0);
        let c: Vec<[f64; 2]> = patch_centers(&[0, 528, 22], &g).unwrap();
        assert_eq!(c[0], [3.0 / 91.0, 3.0 / 91.0]);
        assert_eq!(c[1], [1.0, 1.0]);
        assert_eq!(c[2], [3.0 / 91.0, 1.0]);
    }

    #[test]
    fn single_patch_center_is_zero() {
        let g = PatchGrid::new(7, 7, 4).unwrap();
        assert_eq!(patch_centers::<f64>(&[0], &g).unwrap(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn center_index_out_of_range() {
        assert!(matches!(
            patch_centers::<f64>(&[529], &table_grid()),
            Err(Error::IndexOutOfRange { index: 529, len: 529 })
        ));
    }

    #[test]
    fn fused_importance_matches_matrix_path_bitwise() {
        let x = Matrix::from_fn(7, 3, |r, c| ((r * 5 + c * 3) as f64 * 0.71).sin());
        let params = AttentionParams::new(
            Matrix::from_fn(3, 2, |r, c| ((r + 2 * c) as f64 * 1.3).cos()),
            vec![0.1, -0.4],
            Matrix::from_fn(3, 2, |r, c| ((3 * r + c) as f64 * 0.9).sin()),
            vec![-0.2, 0.3],
        )
        .unwrap();
        let a = attention_matrix(&x, &params).unwrap();
        assert_eq!(patch_importance(&x, &params).unwrap(), importance_vector(&a).unwrap());
    }

    #[test]
    fn glimpse_and_analyze_agree() {
        let grid = PatchGrid::new(12, 4, 4).unwrap();
        let d_in = grid.patch_dim();
        let params = AttentionParams::new(
            Matrix::from_fn(d_in, 2, |r, c| ((r * 7 + c) as f32 * 0.37).sin()),
            vec![0.0, 0.1],
            Matrix::from_fn(d_in, 2, |r, c| ((r + c * 11) as f32 * 0.21).cos()),
            vec![0.2, -0.1],
        )
        .unwrap();
        let data: Vec<f32> = (0..12 * 12 * 3).map(|i| ((i * 37 % 255) as f32) / 255.0).collect();
        let frame = Frame::new(12, 12, data).unwrap();
        let attn = SelfAttention::new(grid, params, 3).unwrap();
        let g = attn.glimpse(&frame).unwrap();
        let full = attn.analyze(&frame).unwrap();
        assert_eq!(g.importance, full.importance);
        assert_eq!(g.selected, full.selected);
        assert_eq!(g.centers, full.centers);
        assert_eq!(g.features().len(), 6);
    }
}
