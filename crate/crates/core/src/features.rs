//! Mask average pooling: turning a dense feature map plus class-agnostic
//! instance masks into per-instance embeddings.
//!
//! Masks live at image resolution and are resampled to the feature grid as
//! fractional occupancy weights, so the pooled embedding is an exact weighted
//! mean over feature cells. All accumulation happens in f64 and is rounded to
//! f32 once at the end, which keeps results deterministic across platforms.

use crate::error::{Error, Result};

/// Tolerance for the unit-norm invariant of a normalized [`Embedding`].
pub const NORM_TOLERANCE: f64 = 1e-5;

/// A dense `d × h' × w'` feature tensor ingested from an external extractor.
///
/// Values are stored channel-major: `value(c, y, x) = data[c*h*w + y*w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} values for {channels}x{height}x{width}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature value at flat offset {pos}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Feature map with the same value in every channel and cell.
    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Spatial dims as `(h, w)`.
    pub fn spatial_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// The `h*w` slice for one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn value(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A binary instance mask at image resolution, with an optional proposal score.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
    mask_score: Option<f32>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!(
                "mask dims must be positive, got {height}x{width}"
            )));
        }
        if cells.len() != height * width {
            return Err(Error::shape(
                format!("{} cells for {height}x{width}", height * width),
                format!("{} cells", cells.len()),
            ));
        }
        if !cells.iter().any(|&c| c) {
            return Err(Error::InvalidMask("mask has no set cells".into()));
        }
        Ok(Self {
            height,
            width,
            cells,
            mask_score: None,
        })
    }

    /// Mask covering the full `h × w` grid.
    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn with_score(mut self, score: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidMask(format!(
                "mask score {score} outside [0, 1]"
            )));
        }
        self.mask_score = Some(score);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn set_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn mask_score(&self) -> Option<f32> {
        self.mask_score
    }

    /// Centroid of set cells, in cell-center coordinates `(y, x)`.
    pub fn centroid(&self) -> (f64, f64) {
        let mut cy = 0.0;
        let mut cx = 0.0;
        let mut n = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_set(y, x) {
                    cy += y as f64 + 0.5;
                    cx += x as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        (cy / n, cx / n)
    }
}

/// Fractional occupancy weights on the feature grid, the resampled form of an
/// [`InstanceMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

impl WeightGrid {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "weight grid dims must be positive, got {height}x{width}"
            )));
        }
        if weights.len() != height * width {
            return Err(Error::shape(
                format!("{} weights for {height}x{width}", height * width),
                format!("{} weights", weights.len()),
            ));
        }
        let mut sum = 0.0f64;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidData(format!(
                    "weight {w} at offset {i} outside [0, 1]"
                )));
            }
            sum += w as f64;
        }
        if sum <= 0.0 {
            return Err(Error::DegenerateMask);
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weight(&self, y: usize, x: usize) -> f32 {
        self.weights[y * self.width + x]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }
}

/// A d-dimensional instance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite embedding component at {pos}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// L2 norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Scale to unit L2 norm. Errors with [`Error::DegenerateEmbedding`] on a
    /// zero vector.
    pub fn l2_normalized(&self) -> Result<Embedding> {
        let norm = self.norm();
        if norm <= 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        let values = self
            .values
            .iter()
            .map(|&v| (v as f64 / norm) as f32)
            .collect();
        Ok(Embedding { values })
    }
}

/// Scale to unit L2 norm (free-function form of [`Embedding::l2_normalized`]).
pub fn l2_normalize(e: &Embedding) -> Result<Embedding> {
    e.l2_normalized()
}

/// Resample a binary mask onto the feature grid as area-averaged occupancy.
///
/// Each target cell holds the fraction of its source pre-image covered by set
/// pixels. If every weight comes out exactly zero (possible only for
/// pathological float underflow), the cell containing the mask centroid is set
/// to 1 so the mask still yields an embedding.
pub fn resize_mask(mask: &InstanceMask, target: (usize, usize)) -> Result<WeightGrid> {
    let (dst_h, dst_w) = target;
    if dst_h == 0 || dst_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "target dims must be positive, got {dst_h}x{dst_w}"
        )));
    }
    let (src_h, src_w) = mask.dims();
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    let cell_area = sy * sx;

    let mut weights = vec![0.0f32; dst_h * dst_w];
    for ty in 0..dst_h {
        let y0 = ty as f64 * sy;
        let y1 = (ty + 1) as f64 * sy;
        let row_lo = y0.floor() as usize;
        let row_hi = (y1.ceil() as usize).min(src_h);
        for tx in 0..dst_w {
            let x0 = tx as f64 * sx;
            let x1 = (tx + 1) as f64 * sx;
            let col_lo = x0.floor() as usize;
            let col_hi = (x1.ceil() as usize).min(src_w);

            let mut covered = 0.0f64;
            for row in row_lo..row_hi {
                let oy = (y1.min((row + 1) as f64) - y0.max(row as f64)).max(0.0);
                if oy == 0.0 {
                    continue;
                }
                for col in col_lo..col_hi {
                    if !mask.is_set(row, col) {
                        continue;
                    }
                    let ox = (x1.min((col + 1) as f64) - x0.max(col as f64)).max(0.0);
                    covered += oy * ox;
                }
            }
            weights[ty * dst_w + tx] = ((covered / cell_area) as f32).clamp(0.0, 1.0);
        }
    }

    if weights.iter().all(|&w| w == 0.0) {
        let (cy, cx) = mask.centroid();
        let ty = ((cy / sy) as usize).min(dst_h - 1);
        let tx = ((cx / sx) as usize).min(dst_w - 1);
        weights[ty * dst_w + tx] = 1.0;
    }

    WeightGrid::new(dst_h, dst_w, weights)
}

/// Weighted spatial mean of every channel: component `c` of the result is
/// `Σ map[c]·w / Σ w`, accumulated in f64 and rounded to f32.
pub fn mask_average_pool(map: &FeatureMap, weights: &WeightGrid) -> Result<Embedding> {
    if weights.dims() != map.spatial_dims() {
        return Err(Error::shape(
            format!("weights {}x{}", map.height(), map.width()),
            format!("weights {}x{}", weights.height(), weights.width()),
        ));
    }
    let wsum = weights.sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateMask);
    }

    let mut out = Vec::with_capacity(map.channels());
    for c in 0..map.channels() {
        let plane = map.channel(c);
        let mut acc = 0.0f64;
        for (&v, &w) in plane.iter().zip(weights.weights()) {
            acc += v as f64 * w as f64;
        }
        out.push((acc / wsum) as f32);
    }
    Embedding::new(out)
}

/// Pool one embedding per mask: `result[j]` is the pooled embedding of
/// `masks[j]` resampled to the map's grid. Element errors carry the mask index.
pub fn extract_instance_embeddings(
    map: &FeatureMap,
    masks: &[InstanceMask],
) -> Result<Vec<Embedding>> {
    if let Some(first) = masks.first() {
        let dims = first.dims();
        for (j, mask) in masks.iter().enumerate() {
            if mask.dims() != dims {
                return Err(Error::at(
                    j,
                    Error::shape(
                        format!("mask {}x{}", dims.0, dims.1),
                        format!("mask {}x{}", mask.height(), mask.width()),
                    ),
                ));
            }
        }
    }
    masks
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            resize_mask(mask, map.spatial_dims())
                .and_then(|w| mask_average_pool(map, &w))
                .map_err(|e| Error::at(j, e))
        })
        .collect()
}
