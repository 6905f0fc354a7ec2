//! Dense semantic maps: stitching per-mask class decisions, confidence
//! filtering, and mIoU evaluation.
//!
//! [`miou`] counts intersections and unions directly; [`ConfusionMatrix`]
//! accumulates per-pixel counts for streaming evaluation over a dataset. The
//! two routes are independent implementations and are tested against each
//! other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::InstanceMask;

/// Reserved all-ones id for unlabeled pixels.
pub const VOID_LABEL: u32 = u32::MAX;

/// A per-pixel class-id grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "map dims must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::shape(
                format!("{} labels for {height}x{width}", height * width),
                format!("{} labels", labels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// All-void map.
    pub fn void(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![VOID_LABEL; height * width])
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

    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set_label(&mut self, y: usize, x: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// One classified mask proposal ready for stitching.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    pub mask: InstanceMask,
    pub class_id: u32,
    pub class_confidence: f32,
    pub mask_score: f32,
}

impl MaskPrediction {
    pub fn new(mask: InstanceMask, class_id: u32, class_confidence: f32, mask_score: f32) -> Result<Self> {
        for (name, v) in [("class_confidence", class_confidence), ("mask_score", mask_score)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidData(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            mask,
            class_id,
            class_confidence,
            mask_score,
        })
    }
}

/// How overlapping predictions compete for a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapStrategy {
    /// Rank by `class_confidence · mask_score`.
    #[default]
    Product,
    /// Rank by `class_confidence` alone.
    ClassOnly,
}

impl OverlapStrategy {
    fn score(&self, pred: &MaskPrediction) -> f32 {
        match self {
            OverlapStrategy::Product => pred.class_confidence * pred.mask_score,
            OverlapStrategy::ClassOnly => pred.class_confidence,
        }
    }
}

impl std::str::FromStr for OverlapStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(OverlapStrategy::Product),
            "class-only" => Ok(OverlapStrategy::ClassOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown overlap strategy {other:?} (expected product|class-only)"
            ))),
        }
    }
}

/// Combine mask predictions into one dense map. Each pixel takes the class of
/// the covering prediction with the highest score; earlier predictions win
/// ties; uncovered pixels stay void.
pub fn stitch_semantic_map(
    preds: &[MaskPrediction],
    dims: (usize, usize),
    strategy: OverlapStrategy,
) -> Result<SemanticMap> {
    let (h, w) = dims;
    let mut map = SemanticMap::void(h, w)?;
    let mut best = vec![f32::NEG_INFINITY; h * w];

    for (i, pred) in preds.iter().enumerate() {
        if pred.mask.dims() != dims {
            return Err(Error::at(
                i,
                Error::shape(
                    format!("mask {h}x{w}"),
                    format!("mask {}x{}", pred.mask.height(), pred.mask.width()),
                ),
            ));
        }
        let score = strategy.score(pred);
        for y in 0..h {
            for x in 0..w {
                if pred.mask.is_set(y, x) && score > best[y * w + x] {
                    best[y * w + x] = score;
                    map.set_label(y, x, pred.class_id);
                }
            }
        }
    }
    Ok(map)
}

/// Keep predictions clearing both confidence thresholds, preserving order.
/// Thresholds are clamped into `[0, 1]`.
pub fn filter_confident_masks(
    preds: Vec<MaskPrediction>,
    class_threshold: f32,
    mask_threshold: f32,
) -> Vec<MaskPrediction> {
    let ct = class_threshold.clamp(0.0, 1.0);
    let mt = mask_threshold.clamp(0.0, 1.0);
    preds
        .into_iter()
        .filter(|p| p.class_confidence >= ct && p.mask_score >= mt)
        .collect()
}

/// Per-class IoU plus the mean over classes present in either map.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub intersections: Vec<u64>,
    pub unions: Vec<u64>,
    /// Pixels that entered the counts (after void exclusion).
    pub evaluated_pixels: u64,
}

fn iou_from_counts(inter: &[u64], pred_cnt: &[u64], gt_cnt: &[u64], evaluated: u64) -> IouReport {
    let c = inter.len();
    let mut per_class = vec![None; c];
    let mut unions = vec![0u64; c];
    let mut sum = 0.0;
    let mut present = 0usize;
    for j in 0..c {
        let union = pred_cnt[j] + gt_cnt[j] - inter[j];
        unions[j] = union;
        if union > 0 {
            let iou = inter[j] as f64 / union as f64;
            per_class[j] = Some(iou);
            sum += iou;
            present += 1;
        }
    }
    IouReport {
        per_class,
        mean: if present > 0 { sum / present as f64 } else { 0.0 },
        intersections: inter.to_vec(),
        unions,
        evaluated_pixels: evaluated,
    }
}

/// Direct mIoU between one prediction and one ground-truth map.
///
/// Ground-truth void pixels are excluded from every count when `ignore_void`;
/// classes absent from both maps are excluded from the mean.
pub fn miou(
    pred: &SemanticMap,
    gt: &SemanticMap,
    class_count: usize,
    ignore_void: bool,
) -> Result<IouReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            format!("map {}x{}", gt.height(), gt.width()),
            format!("map {}x{}", pred.height(), pred.width()),
        ));
    }
    let mut inter = vec![0u64; class_count];
    let mut pred_cnt = vec![0u64; class_count];
    let mut gt_cnt = vec![0u64; class_count];
    let mut evaluated = 0u64;

    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        for v in [p, g] {
            if v != VOID_LABEL && v as usize >= class_count {
                return Err(Error::UnknownClass(v));
            }
        }
        if ignore_void && g == VOID_LABEL {
            continue;
        }
        evaluated += 1;
        if g != VOID_LABEL {
            gt_cnt[g as usize] += 1;
        }
        if p != VOID_LABEL {
            pred_cnt[p as usize] += 1;
        }
        if p == g && g != VOID_LABEL {
            inter[g as usize] += 1;
        }
    }
    Ok(iou_from_counts(&inter, &pred_cnt, &gt_cnt, evaluated))
}

/// Streaming `(C+1)×(C+1)` pixel counts (`counts[gt][pred]`, void mapped to
/// index C). Accumulation is plain addition, so image order never matters and
/// per-image matrices can be merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        let side = class_count + 1;
        Self {
            class_count,
            counts: vec![0; side * side],
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn slot(&self, label: u32) -> Result<usize> {
        if label == VOID_LABEL {
            Ok(self.class_count)
        } else if (label as usize) < self.class_count {
            Ok(label as usize)
        } else {
            Err(Error::UnknownClass(label))
        }
    }

    /// Count of pixels with the given ground-truth / prediction labels.
    pub fn count(&self, gt: u32, pred: u32) -> Result<u64> {
        let side = self.class_count + 1;
        Ok(self.counts[self.slot(gt)? * side + self.slot(pred)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &SemanticMap, gt: &SemanticMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(
                format!("map {}x{}", gt.height(), gt.width()),
                format!("map {}x{}", pred.height(), pred.width()),
            ));
        }
        let side = self.class_count + 1;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            let gs = self.slot(g)?;
            let ps = self.slot(p)?;
            self.counts[gs * side + ps] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_count != other.class_count {
            return Err(Error::shape(
                format!("{} classes", self.class_count),
                format!("{} classes", other.class_count),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Derive the IoU report from the accumulated counts.
    pub fn miou(&self, ignore_void: bool) -> IouReport {
        let c = self.class_count;
        let side = c + 1;
        let mut inter = vec![0u64; c];
        let mut pred_cnt = vec![0u64; c];
        let mut gt_cnt = vec![0u64; c];
        let mut evaluated = 0u64;

        let gt_rows = if ignore_void { c } else { side };
        for g in 0..gt_rows {
            for p in 0..side {
                let n = self.counts[g * side + p];
                if n == 0 {
                    continue;
                }
                evaluated += n;
                if g < c {
                    gt_cnt[g] += n;
                }
                if p < c {
                    pred_cnt[p] += n;
                }
                if g == p && g < c {
                    inter[g] += n;
                }
            }
        }
        iou_from_counts(&inter, &pred_cnt, &gt_cnt, evaluated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&[u8]]) -> InstanceMask {
        let h = rows.len();
        let w = rows[0].len();
        let cells = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        InstanceMask::new(h, w, cells).unwrap()
    }

    fn map(h: usize, w: usize, labels: &[u32]) -> SemanticMap {
        SemanticMap::new(h, w, labels.to_vec()).unwrap()
    }

    #[test]
    fn stitch_disjoint_masks() {
        let a = MaskPrediction::new(mask_from_rows(&[&[1, 0], &[0, 0]]), 3, 0.9, 0.9).unwrap();
        let b = MaskPrediction::new(mask_from_rows(&[&[0, 0], &[0, 1]]), 7, 0.8, 0.8).unwrap();
        let m = stitch_semantic_map(&[a, b], (2, 2), OverlapStrategy::Product).unwrap();
        assert_eq!(m.labels(), &[3, VOID_LABEL, VOID_LABEL, 7]);
    }

    #[test]
    fn stitch_overlap_takes_higher_score() {
        let strong = MaskPrediction::new(mask_from_rows(&[&[1, 1], &[0, 0]]), 1, 0.9, 1.0).unwrap();
        let weak = MaskPrediction::new(mask_from_rows(&[&[1, 0], &[1, 0]]), 2, 0.6, 1.0).unwrap();
        let m = stitch_semantic_map(&[weak, strong], (2, 2), OverlapStrategy::Product).unwrap();
        assert_eq!(m.label(0, 0), 1); // overlap pixel goes to 0.9
        assert_eq!(m.label(0, 1), 1);
        assert_eq!(m.label(1, 0), 2);
    }

    #[test]
    fn stitch_ties_take_earlier_prediction() {
        let first = MaskPrediction::new(mask_from_rows(&[&[1]]), 1, 0.5, 1.0).unwrap();
        let second = MaskPrediction::new(mask_from_rows(&[&[1]]), 2, 0.5, 1.0).unwrap();
        let m = stitch_semantic_map(&[first, second], (1, 1), OverlapStrategy::Product).unwrap();
        assert_eq!(m.label(0, 0), 1);
    }

    #[test]
    fn stitch_empty_is_all_void() {
        let m = stitch_semantic_map(&[], (2, 3), OverlapStrategy::Product).unwrap();
        assert!(m.labels().iter().all(|&l| l == VOID_LABEL));
    }

    #[test]
    fn stitch_class_only_strategy() {
        // Same class confidence order flips when mask score is ignored.
        let a = MaskPrediction::new(mask_from_rows(&[&[1]]), 1, 0.8, 0.5).unwrap(); // product 0.40
        let b = MaskPrediction::new(mask_from_rows(&[&[1]]), 2, 0.7, 0.9).unwrap(); // product 0.63
        let product = stitch_semantic_map(&[a.clone(), b.clone()], (1, 1), OverlapStrategy::Product).unwrap();
        let class_only = stitch_semantic_map(&[a, b], (1, 1), OverlapStrategy::ClassOnly).unwrap();
        assert_eq!(product.label(0, 0), 2);
        assert_eq!(class_only.label(0, 0), 1);
    }

    #[test]
    fn filter_keeps_order_and_subsequence() {
        let preds = vec![
            MaskPrediction::new(mask_from_rows(&[&[1]]), 0, 0.8, 0.9).unwrap(),
            MaskPrediction::new(mask_from_rows(&[&[1]]), 1, 0.6, 0.9).unwrap(),
            MaskPrediction::new(mask_from_rows(&[&[1]]), 2, 0.8, 0.4).unwrap(),
        ];
        let kept = filter_confident_masks(preds.clone(), 0.7, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].class_id, 0);

        assert_eq!(filter_confident_masks(preds.clone(), 0.0, 0.0).len(), 3);
        assert!(filter_confident_masks(preds, 1.01, 1.0).is_empty());
    }

    #[test]
    fn miou_identical_maps() {
        let m = map(2, 2, &[0, 1, 1, 2]);
        let r = miou(&m, &m, 3, true).unwrap();
        for c in 0..3 {
            assert_eq!(r.per_class[c], Some(1.0));
        }
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn miou_worked_2x2_example() {
        let pred = map(2, 2, &[0, 0, 1, 1]);
        let gt = map(2, 2, &[0, 1, 1, 1]);
        let r = miou(&pred, &gt, 2, true).unwrap();
        assert_eq!(r.intersections, vec![1, 2]);
        assert_eq!(r.unions, vec![2, 3]);
        assert_eq!(r.per_class[0], Some(1.0 / 2.0));
        assert_eq!(r.per_class[1], Some(2.0 / 3.0));
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn miou_fully_wrong() {
        let pred = map(1, 4, &[0, 0, 0, 0]);
        let gt = map(1, 4, &[1, 1, 1, 1]);
        let r = miou(&pred, &gt, 2, true).unwrap();
        assert_eq!(r.per_class[0], Some(0.0));
        assert_eq!(r.per_class[1], Some(0.0));
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn miou_excludes_absent_classes() {
        let pred = map(1, 2, &[0, 0]);
        let gt = map(1, 2, &[0, 0]);
        let r = miou(&pred, &gt, 5, true).unwrap();
        assert_eq!(r.per_class[0], Some(1.0));
        for c in 1..5 {
            assert_eq!(r.per_class[c], None);
        }
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn miou_ignores_gt_void() {
        let pred = map(1, 3, &[0, 1, 1]);
        let gt = map(1, 3, &[0, VOID_LABEL, 1]);
        let r = miou(&pred, &gt, 2, true).unwrap();
        assert_eq!(r.evaluated_pixels, 2);
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[1], Some(1.0));

        let counted = miou(&pred, &gt, 2, false).unwrap();
        assert_eq!(counted.evaluated_pixels, 3);
        // The void-pixel prediction now counts against class 1.
        assert_eq!(counted.per_class[1], Some(0.5));
    }

    #[test]
    fn miou_dim_mismatch() {
        let a = map(1, 2, &[0, 0]);
        let b = map(2, 1, &[0, 0]);
        assert!(matches!(miou(&a, &b, 1, true), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn miou_rejects_out_of_range_ids() {
        let a = map(1, 1, &[4]);
        let b = map(1, 1, &[0]);
        assert!(matches!(miou(&a, &b, 2, true), Err(Error::UnknownClass(4))));
    }

    #[test]
    fn confusion_matches_direct_miou() {
        let pred = map(2, 3, &[0, 0, 1, 2, VOID_LABEL, 1]);
        let gt = map(2, 3, &[0, 1, 1, 2, 0, VOID_LABEL]);
        for ignore_void in [true, false] {
            let direct = miou(&pred, &gt, 3, ignore_void).unwrap();
            let mut cm = ConfusionMatrix::new(3);
            cm.accumulate(&pred, &gt).unwrap();
            let derived = cm.miou(ignore_void);
            assert_eq!(direct, derived);
        }
    }

    #[test]
    fn confusion_accumulation_is_order_independent() {
        let images = vec![
            (map(1, 2, &[0, 1]), map(1, 2, &[0, 0])),
            (map(1, 2, &[1, 1]), map(1, 2, &[1, VOID_LABEL])),
            (map(1, 2, &[0, 0]), map(1, 2, &[1, 0])),
        ];
        let mut forward = ConfusionMatrix::new(2);
        for (p, g) in &images {
            forward.accumulate(p, g).unwrap();
        }
        let mut reversed = ConfusionMatrix::new(2);
        for (p, g) in images.iter().rev() {
            reversed.accumulate(p, g).unwrap();
        }
        assert_eq!(forward, reversed);

        let mut merged = ConfusionMatrix::new(2);
        for (p, g) in &images {
            let mut single = ConfusionMatrix::new(2);
            single.accumulate(p, g).unwrap();
            merged.merge(&single).unwrap();
        }
        assert_eq!(forward, merged);
    }

    #[test]
    fn empty_confusion_is_zero() {
        let cm = ConfusionMatrix::new(4);
        assert_eq!(cm.total(), 0);
        let r = cm.miou(true);
        assert!(r.per_class.iter().all(Option::is_none));
        assert_eq!(r.mean, 0.0);
    }
}
