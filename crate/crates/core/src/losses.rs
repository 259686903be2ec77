//! Reference implementations of the detector training losses.
//!
//! The total objective is
//! `L = L_ce + l1 * L_det + l2 * L_wh + l3 * L_off + l4 * L_corner`:
//! pixel-wise cross-entropy for the segmentation branch, a penalty-reduced
//! focal loss on center heatmaps, and L1 regressions for object size, sub-cell
//! center offset and sub-cell corner offsets. All terms are pure functions of
//! dense prediction grids; each comes with its analytic gradient so it can be
//! checked against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::FacadeObject;
use crate::labelmap::ClassId;

/// Floor applied inside every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no instances (N = 0)")]
    NoInstances,
    #[error("pixel {0} probabilities sum to {1}, expected 1")]
    NotNormalized(usize, f64),
    #[error("truth is not one-hot at pixel {0}")]
    NotOneHot(usize),
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("object center ({0}, {1}) lies outside the image")]
    CenterOutOfBounds(f64, f64),
    #[error("stride must be positive")]
    ZeroStride,
}

/// `height x width x channels` grid, channel-last, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.values[i] = v;
    }

    fn same_shape(&self, other: &DenseGrid) -> Result<(), LossError> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(LossError::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

/// Regression targets of one object on the low-resolution grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTarget {
    pub class_id: ClassId,
    /// `floor(p / R)`.
    pub cell: [usize; 2],
    /// `p / R - floor(p / R)`, in `[0, 1)`.
    pub offset: [f64; 2],
    pub size: [f64; 2],
    /// `floor(q / R)` for TL, TR, BR, BL.
    pub corner_cells: [[usize; 2]; 4],
    /// `q / R - floor(q / R)` for TL, TR, BR, BL, interleaved x, y.
    pub corner_offsets: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTargets {
    pub stride: u32,
    /// One channel per class; 1 exactly at each object cell.
    pub heatmap: DenseGrid,
    pub objects: Vec<ObjectTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub stride: u32,
    /// Lower bound of the splat radius, in grid cells.
    pub min_radius: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            min_radius: 1.0,
        }
    }
}

fn split(v: f64, stride: f64) -> (usize, f64) {
    let s = v / stride;
    let cell = s.floor();
    (cell as usize, s - cell)
}

/// Gaussian splat radius in cells: `min(w, h) / (2R)`, at least `min_radius`.
pub fn splat_radius(size: [f64; 2], config: &TargetConfig) -> f64 {
    (size[0].min(size[1]) / (2.0 * config.stride as f64)).max(config.min_radius)
}

/// Writes `exp(-d^2 / (2 sigma^2))` with `sigma = (2r + 1) / 6` around `cell`,
/// keeping the larger of the existing and new value.
pub fn splat(heatmap: &mut DenseGrid, channel: usize, cell: [usize; 2], radius: f64) {
    let sigma = (2.0 * radius + 1.0) / 6.0;
    let reach = radius.ceil() as i64;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (cell[0] as i64 + dx, cell[1] as i64 + dy);
            if x < 0 || y < 0 || x >= heatmap.width as i64 || y >= heatmap.height as i64 {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let i = heatmap.index(x as usize, y as usize, channel);
            if v > heatmap.values[i] {
                heatmap.values[i] = v;
            }
        }
    }
}

pub fn encode_targets(
    objects: &[FacadeObject],
    image_size: (u32, u32),
    num_classes: usize,
    config: &TargetConfig,
) -> Result<DetectionTargets, LossError> {
    if config.stride == 0 {
        return Err(LossError::ZeroStride);
    }
    let r = config.stride as f64;
    let gw = image_size.0.div_ceil(config.stride) as usize;
    let gh = image_size.1.div_ceil(config.stride) as usize;
    let mut heatmap = DenseGrid::zeros(gw, gh, num_classes);
    let mut targets = Vec::with_capacity(objects.len());
    for obj in objects {
        let [px, py] = obj.center;
        if !(px >= 0.0 && py >= 0.0 && px < image_size.0 as f64 && py < image_size.1 as f64) {
            return Err(LossError::CenterOutOfBounds(px, py));
        }
        if obj.class_id as usize >= num_classes {
            return Err(LossError::ShapeMismatch(format!(
                "class {} but {} heatmap channels",
                obj.class_id, num_classes
            )));
        }
        let (cx, ox) = split(px, r);
        let (cy, oy) = split(py, r);
        let mut corner_cells = [[0usize; 2]; 4];
        let mut corner_offsets = [0.0; 8];
        for (k, q) in obj.corners.iter().enumerate() {
            let (qx, fx) = split(q[0] as f64, r);
            let (qy, fy) = split(q[1] as f64, r);
            corner_cells[k] = [qx.min(gw - 1), qy.min(gh - 1)];
            corner_offsets[2 * k] = fx;
            corner_offsets[2 * k + 1] = fy;
        }
        splat(
            &mut heatmap,
            obj.class_id as usize,
            [cx, cy],
            splat_radius(obj.size, config),
        );
        targets.push(ObjectTarget {
            class_id: obj.class_id,
            cell: [cx, cy],
            offset: [ox, oy],
            size: obj.size,
            corner_cells,
            corner_offsets,
        });
    }
    Ok(DetectionTargets {
        stride: config.stride,
        heatmap,
        objects: targets,
    })
}

#[inline]
fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// `-sum_c sum_i y_ic ln p_ic` over `H x W` pixels with `M` channels.
///
/// `pred` must hold a distribution per pixel (sum within 1e-6 of 1) and
/// `truth` a one-hot vector per pixel.
pub fn cross_entropy(pred: &DenseGrid, truth: &DenseGrid) -> Result<f64, LossError> {
    pred.same_shape(truth)?;
    let m = pred.channels;
    for (i, (p, t)) in pred
        .values
        .chunks(m)
        .zip(truth.values.chunks(m))
        .enumerate()
    {
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(LossError::NotNormalized(i, s));
        }
        if let Some(&v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LossError::OutOfRange(v));
        }
        let ones = t.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || t.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LossError::NotOneHot(i));
        }
    }
    let clamped = pred
        .values
        .iter()
        .zip(&truth.values)
        .filter(|(p, y)| **y > 0.0 && **p < LOG_CLAMP)
        .count();
    if clamped > 0 {
        log::warn!("cross_entropy: {clamped} true-class probabilities clamped to {LOG_CLAMP}");
    }
    Ok(cross_entropy_value(&pred.values, &truth.values))
}

fn cross_entropy_value(pred: &[f64], truth: &[f64]) -> f64 {
    -pred
        .iter()
        .zip(truth)
        .filter(|(_, y)| **y != 0.0)
        .map(|(p, y)| y * clamped_ln(*p))
        .sum::<f64>()
}

fn cross_entropy_grad(pred: &[f64], truth: &[f64]) -> Vec<f64> {
    pred.iter()
        .zip(truth)
        .map(|(&p, &y)| {
            if y == 0.0 || p < LOG_CLAMP {
                0.0
            } else {
                -y / p
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

/// Penalty-reduced focal loss over all cells and channels, divided by the
/// instance count `n`.
pub fn focal_loss(
    pred: &DenseGrid,
    truth: &DenseGrid,
    params: FocalParams,
    n: usize,
) -> Result<f64, LossError> {
    pred.same_shape(truth)?;
    if n == 0 {
        return Err(LossError::NoInstances);
    }
    if let Some(&v) = pred
        .values
        .iter()
        .chain(&truth.values)
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(LossError::OutOfRange(v));
    }
    Ok(focal_value(&pred.values, &truth.values, params, n))
}

fn focal_value(pred: &[f64], truth: &[f64], params: FocalParams, n: usize) -> f64 {
    let FocalParams { alpha, beta } = params;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &y)| {
            if y == 1.0 {
                (1.0 - p).powf(alpha) * clamped_ln(p)
            } else {
                (1.0 - y).powf(beta) * p.powf(alpha) * clamped_ln(1.0 - p)
            }
        })
        .sum();
    -sum / n as f64
}

fn focal_grad(pred: &[f64], truth: &[f64], params: FocalParams, n: usize) -> Vec<f64> {
    let FocalParams { alpha, beta } = params;
    pred.iter()
        .zip(truth)
        .map(|(&p, &y)| {
            let g = if y == 1.0 {
                -alpha * (1.0 - p).powf(alpha - 1.0) * clamped_ln(p) + (1.0 - p).powf(alpha) / p
            } else {
                (1.0 - y).powf(beta)
                    * (alpha * p.powf(alpha - 1.0) * clamped_ln(1.0 - p)
                        - p.powf(alpha) / (1.0 - p))
            };
            -g / n as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeLossMode {
    /// `|w' + h' - (w + h)|`.
    #[default]
    SumOfDimensions,
    /// `|w' - w| + |h' - h|`.
    PerDimension,
}

fn size_residuals(pred: &[[f64; 2]], target: &[[f64; 2]], mode: SizeLossMode) -> Vec<f64> {
    pred.iter()
        .zip(target)
        .flat_map(|(p, t)| match mode {
            SizeLossMode::SumOfDimensions => vec![p[0] + p[1] - (t[0] + t[1])],
            SizeLossMode::PerDimension => vec![p[0] - t[0], p[1] - t[1]],
        })
        .collect()
}

pub fn size_loss(
    pred: &[[f64; 2]],
    target: &[[f64; 2]],
    mode: SizeLossMode,
) -> Result<f64, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} vs {} sizes",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(LossError::NoInstances);
    }
    Ok(size_residuals(pred, target, mode)
        .iter()
        .map(|r| r.abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Which map an L1 head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Offset,
    Corner,
}

/// (value index, target) for every supervised entry of the head.
fn head_entries(
    pred: &DenseGrid,
    targets: &DetectionTargets,
    head: Head,
) -> Result<Vec<(usize, f64)>, LossError> {
    let channels = match head {
        Head::Offset => 2,
        Head::Corner => 8,
    };
    if pred.channels != channels {
        return Err(LossError::ShapeMismatch(format!(
            "expected {channels} channels, got {}",
            pred.channels
        )));
    }
    if (pred.width, pred.height) != (targets.heatmap.width, targets.heatmap.height) {
        return Err(LossError::ShapeMismatch(
            "prediction grid differs from target grid".into(),
        ));
    }
    let mut out = Vec::new();
    for t in &targets.objects {
        match head {
            Head::Offset => {
                for c in 0..2 {
                    out.push((pred.index(t.cell[0], t.cell[1], c), t.offset[c]));
                }
            }
            Head::Corner => {
                for k in 0..4 {
                    let [x, y] = t.corner_cells[k];
                    for d in 0..2 {
                        out.push((pred.index(x, y, 2 * k + d), t.corner_offsets[2 * k + d]));
                    }
                }
            }
        }
    }
    Ok(out)
}

fn masked_l1(values: &[f64], entries: &[(usize, f64)], n: usize) -> f64 {
    entries
        .iter()
        .map(|&(i, t)| (values[i] - t).abs())
        .sum::<f64>()
        / n as f64
}

/// L1 between the 2-channel offset map at each object cell and `p/R - floor(p/R)`.
pub fn offset_loss(pred: &DenseGrid, targets: &DetectionTargets) -> Result<f64, LossError> {
    if targets.objects.is_empty() {
        return Err(LossError::NoInstances);
    }
    let e = head_entries(pred, targets, Head::Offset)?;
    Ok(masked_l1(&pred.values, &e, targets.objects.len()))
}

/// L1 between the 8-channel corner map at each corner cell and `q/R - floor(q/R)`.
pub fn corner_loss(pred: &DenseGrid, targets: &DetectionTargets) -> Result<f64, LossError> {
    if targets.objects.is_empty() {
        return Err(LossError::NoInstances);
    }
    let e = head_entries(pred, targets, Head::Corner)?;
    Ok(masked_l1(&pred.values, &e, targets.objects.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub det: f64,
    pub wh: f64,
    pub off: f64,
    pub corner: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
        }
    }
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.ce
        + w.lambda1 * parts.det
        + w.lambda2 * parts.wh
        + w.lambda3 * parts.off
        + w.lambda4 * parts.corner
}

/// A scalar loss of a flat parameter vector with its analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Smallest |residual| of any L1 term touching coordinate `i`; `None`
    /// for smooth losses.
    fn kink_distance(&self, _x: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

pub struct CrossEntropyFn {
    pub truth: Vec<f64>,
}

impl Differentiable for CrossEntropyFn {
    fn value(&self, x: &[f64]) -> f64 {
        cross_entropy_value(x, &self.truth)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        cross_entropy_grad(x, &self.truth)
    }
}

pub struct FocalFn {
    pub truth: Vec<f64>,
    pub params: FocalParams,
    pub n: usize,
}

impl Differentiable for FocalFn {
    fn value(&self, x: &[f64]) -> f64 {
        focal_value(x, &self.truth, self.params, self.n)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        focal_grad(x, &self.truth, self.params, self.n)
    }
}

/// Size loss over predicted sizes flattened as `[w0, h0, w1, h1, ...]`.
pub struct SizeFn {
    pub target: Vec<[f64; 2]>,
    pub mode: SizeLossMode,
}

impl SizeFn {
    fn unflatten(x: &[f64]) -> Vec<[f64; 2]> {
        x.chunks(2).map(|c| [c[0], c[1]]).collect()
    }
}

impl Differentiable for SizeFn {
    fn value(&self, x: &[f64]) -> f64 {
        size_loss(&Self::unflatten(x), &self.target, self.mode).expect("shapes match")
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = size_residuals(&Self::unflatten(x), &self.target, self.mode);
        let n = self.target.len() as f64;
        (0..x.len())
            .map(|i| match self.mode {
                SizeLossMode::SumOfDimensions => r[i / 2].signum() / n,
                SizeLossMode::PerDimension => r[i].signum() / n,
            })
            .collect()
    }
    fn kink_distance(&self, x: &[f64], i: usize) -> Option<f64> {
        let r = size_residuals(&Self::unflatten(x), &self.target, self.mode);
        Some(match self.mode {
            SizeLossMode::SumOfDimensions => r[i / 2].abs(),
            SizeLossMode::PerDimension => r[i].abs(),
        })
    }
}

/// Offset or corner loss as a function of the whole prediction map.
pub struct MaskedL1Fn {
    entries: Vec<(usize, f64)>,
    n: usize,
}

impl MaskedL1Fn {
    pub fn offset(pred_shape: &DenseGrid, targets: &DetectionTargets) -> Result<Self, LossError> {
        Ok(Self {
            entries: head_entries(pred_shape, targets, Head::Offset)?,
            n: targets.objects.len(),
        })
    }

    pub fn corner(pred_shape: &DenseGrid, targets: &DetectionTargets) -> Result<Self, LossError> {
        Ok(Self {
            entries: head_entries(pred_shape, targets, Head::Corner)?,
            n: targets.objects.len(),
        })
    }
}

impl Differentiable for MaskedL1Fn {
    fn value(&self, x: &[f64]) -> f64 {
        masked_l1(x, &self.entries, self.n)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for &(i, t) in &self.entries {
            g[i] += (x[i] - t).signum() / self.n as f64;
        }
        g
    }
    fn kink_distance(&self, x: &[f64], i: usize) -> Option<f64> {
        self.entries
            .iter()
            .filter(|(j, _)| *j == i)
            .map(|&(j, t)| (x[j] - t).abs())
            .min_by(f64::total_cmp)
            .or(Some(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Denominator floor for the relative error, so that coordinates with a
/// vanishing gradient are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central differences at `coords`,
/// skipping coordinates within `10 * epsilon` of an L1 kink.
pub fn grad_check(
    loss: &dyn Differentiable,
    point: &[f64],
    epsilon: f64,
    coords: &[usize],
) -> GradCheck {
    let analytic = loss.gradient(point);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for &i in coords {
        if loss
            .kink_distance(point, i)
            .is_some_and(|d| d < 10.0 * epsilon)
        {
            skipped += 1;
            continue;
        }
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = loss.value(&x);
        x[i] = orig - epsilon;
        let down = loss.value(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        worst = worst.max(rel);
        checked += 1;
    }
    GradCheck {
        max_rel_error: worst,
        checked,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
    SizeSum,
    SizePerDimension,
    Offset,
    Corner,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::CrossEntropy,
        LossKind::Focal,
        LossKind::SizeSum,
        LossKind::SizePerDimension,
        LossKind::Offset,
        LossKind::Corner,
    ];

    /// Finite-difference step. The L1 terms are piecewise linear, so a wide
    /// step is exact away from kinks and keeps rounding noise small.
    pub fn default_epsilon(self) -> f64 {
        match self {
            LossKind::CrossEntropy | LossKind::Focal => 1e-6,
            _ => 1e-3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Focal => "focal",
            LossKind::SizeSum => "size (w+h)",
            LossKind::SizePerDimension => "size (per-dim)",
            LossKind::Offset => "offset",
            LossKind::Corner => "corner",
        }
    }
}

/// Random objects with integer-edge boxes inside a `w x h` image.
pub fn random_objects(
    rng: &mut impl Rng,
    count: usize,
    classes: usize,
    w: u32,
    h: u32,
) -> Vec<FacadeObject> {
    (0..count)
        .map(|_| {
            let bw = rng.random_range(2..=(w / 3).max(2));
            let bh = rng.random_range(2..=(h / 3).max(2));
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            FacadeObject {
                class_id: rng.random_range(0..classes) as ClassId,
                center: [x0 as f64 + bw as f64 / 2.0, y0 as f64 + bh as f64 / 2.0],
                size: [bw as f64, bh as f64],
                corners: [
                    [x0, y0],
                    [x0 + bw - 1, y0],
                    [x0 + bw - 1, y0 + bh - 1],
                    [x0, y0 + bh - 1],
                ],
                pixel_count: (bw * bh) as usize,
                component: 0,
                overlap: false,
            }
        })
        .collect()
}

/// A random interior evaluation point for `kind`.
pub fn random_problem(
    kind: LossKind,
    rng: &mut impl Rng,
    params: FocalParams,
) -> (Box<dyn Differentiable>, Vec<f64>) {
    let (w, h, classes) = (24u32, 20u32, 3usize);
    let cfg = TargetConfig::default();
    match kind {
        LossKind::CrossEntropy => {
            let (pixels, m) = (12, 4);
            let mut pred = Vec::with_capacity(pixels * m);
            let mut truth = vec![0.0; pixels * m];
            for p in 0..pixels {
                let logits: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
                pred.extend(logits.iter().map(|l| l.exp() / z));
                truth[p * m + rng.random_range(0..m)] = 1.0;
            }
            (Box::new(CrossEntropyFn { truth }), pred)
        }
        LossKind::Focal => {
            let n = rng.random_range(1..4);
            let objs = random_objects(rng, n, classes, w, h);
            let t = encode_targets(&objs, (w, h), classes, &cfg).expect("objects inside image");
            let pred: Vec<f64> = (0..t.heatmap.values.len())
                .map(|_| rng.random_range(0.05..0.95))
                .collect();
            (
                Box::new(FocalFn {
                    truth: t.heatmap.values,
                    params,
                    n,
                }),
                pred,
            )
        }
        LossKind::SizeSum | LossKind::SizePerDimension => {
            let n = rng.random_range(1..6);
            let target: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(4.0..40.0), rng.random_range(4.0..40.0)])
                .collect();
            let pred: Vec<f64> = target
                .iter()
                .flat_map(|t| {
                    [
                        t[0] + rng.random_range(-5.0..5.0),
                        t[1] + rng.random_range(-5.0..5.0),
                    ]
                })
                .collect();
            let mode = if kind == LossKind::SizeSum {
                SizeLossMode::SumOfDimensions
            } else {
                SizeLossMode::PerDimension
            };
            (Box::new(SizeFn { target, mode }), pred)
        }
        LossKind::Offset | LossKind::Corner => {
            let n = rng.random_range(1..4);
            let objs = random_objects(rng, n, classes, w, h);
            let t = encode_targets(&objs, (w, h), classes, &cfg).expect("objects inside image");
            let channels = if kind == LossKind::Offset { 2 } else { 8 };
            let mut grid = DenseGrid::zeros(t.heatmap.width, t.heatmap.height, channels);
            for v in grid.values.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            let f = if kind == LossKind::Offset {
                MaskedL1Fn::offset(&grid, &t)
            } else {
                MaskedL1Fn::corner(&grid, &t)
            }
            .expect("shapes match");
            (Box::new(f), grid.values)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub loss: LossKind,
    pub points: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Gradient checks for every loss at `points` random interior points each;
/// `epsilon` overrides the per-loss default step.
pub fn losses_check(
    seed: u64,
    points: usize,
    epsilon: Option<f64>,
    tolerance: f64,
    params: FocalParams,
) -> Vec<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut row = CheckRow {
                loss: kind,
                points,
                max_rel_error: 0.0,
                checked: 0,
                skipped: 0,
                passed: true,
            };
            for _ in 0..points {
                let (f, x) = random_problem(kind, &mut rng, params);
                let coords: Vec<usize> = (0..x.len()).collect();
                let g = grad_check(
                    f.as_ref(),
                    &x,
                    epsilon.unwrap_or(kind.default_epsilon()),
                    &coords,
                );
                row.max_rel_error = row.max_rel_error.max(g.max_rel_error);
                row.checked += g.checked;
                row.skipped += g.skipped;
            }
            row.passed = row.max_rel_error < tolerance;
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj_at(class: ClassId, cx: f64, cy: f64, w: f64, h: f64) -> FacadeObject {
        FacadeObject {
            class_id: class,
            center: [cx, cy],
            size: [w, h],
            corners: [[0, 0]; 4],
            pixel_count: 1,
            component: 0,
            overlap: false,
        }
    }

    #[test]
    fn center_offset_targets() {
        let t = encode_targets(
            &[obj_at(0, 5.0, 7.0, 4.0, 4.0)],
            (32, 32),
            1,
            &TargetConfig::default(),
        )
        .unwrap();
        assert_eq!(t.objects[0].cell, [1, 1]);
        assert_eq!(t.objects[0].offset, [0.25, 0.75]);
        assert_eq!(t.heatmap.get(1, 1, 0), 1.0);
        let t = encode_targets(
            &[obj_at(0, 8.0, 4.0, 4.0, 4.0)],
            (32, 32),
            1,
            &TargetConfig::default(),
        )
        .unwrap();
        assert_eq!(t.objects[0].cell, [2, 1]);
        assert_eq!(t.objects[0].offset, [0.0, 0.0]);
    }

    #[test]
    fn center_outside_image_rejected() {
        let r = encode_targets(
            &[obj_at(0, 40.0, 7.0, 4.0, 4.0)],
            (32, 32),
            1,
            &TargetConfig::default(),
        );
        assert_eq!(r, Err(LossError::CenterOutOfBounds(40.0, 7.0)));
    }

    #[test]
    fn shared_cell_takes_max_of_splats() {
        let cfg = TargetConfig::default();
        let a = obj_at(0, 13.0, 13.0, 24.0, 24.0);
        let b = obj_at(0, 14.5, 15.0, 8.0, 8.0);
        let both = encode_targets(&[a.clone(), b.clone()], (40, 40), 1, &cfg).unwrap();
        assert_eq!(both.objects.len(), 2);
        assert_eq!(both.objects[0].cell, both.objects[1].cell);
        let ta = encode_targets(&[a], (40, 40), 1, &cfg).unwrap();
        let tb = encode_targets(&[b], (40, 40), 1, &cfg).unwrap();
        for i in 0..both.heatmap.values.len() {
            assert_eq!(
                both.heatmap.values[i],
                ta.heatmap.values[i].max(tb.heatmap.values[i])
            );
        }
    }

    #[test]
    fn corner_targets_are_fractional_parts() {
        let mut o = obj_at(0, 10.0, 10.0, 8.0, 8.0);
        o.corners = [[6, 6], [13, 6], [13, 13], [6, 13]];
        let t = encode_targets(&[o], (32, 32), 1, &TargetConfig::default()).unwrap();
        assert_eq!(t.objects[0].corner_cells, [[1, 1], [3, 1], [3, 3], [1, 3]]);
        assert_eq!(
            t.objects[0].corner_offsets,
            [0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.5, 0.25]
        );
    }

    fn one_hot(pixels: usize, m: usize, labels: &[usize]) -> DenseGrid {
        let mut g = DenseGrid::zeros(pixels, 1, m);
        for (p, &l) in labels.iter().enumerate() {
            g.set(p, 0, l, 1.0);
        }
        g
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let truth = one_hot(5, 8, &[0, 3, 7, 1, 1]);
        assert!(cross_entropy(&truth, &truth).unwrap().abs() < 1e-10);
        let mut uniform = DenseGrid::zeros(5, 1, 8);
        uniform.values.fill(1.0 / 8.0);
        let l = cross_entropy(&uniform, &truth).unwrap();
        assert!((l - 5.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pixels, m) = (9, 5);
        let mut pred = DenseGrid::zeros(pixels, 1, m);
        let mut labels = Vec::new();
        for p in 0..pixels {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (c, r) in raw.iter().enumerate() {
                pred.set(p, 0, c, r / s);
            }
            labels.push(rng.random_range(0..m));
        }
        let truth = one_hot(pixels, m, &labels);
        let mut naive = 0.0;
        for c in 0..m {
            for i in 0..pixels {
                naive -= truth.get(i, 0, c) * pred.get(i, 0, c).ln();
            }
        }
        assert!((cross_entropy(&pred, &truth).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_validation() {
        let truth = one_hot(1, 2, &[0]);
        let bad = DenseGrid {
            width: 1,
            height: 1,
            channels: 2,
            values: vec![0.7, 0.7],
        };
        assert!(matches!(
            cross_entropy(&bad, &truth),
            Err(LossError::NotNormalized(0, _))
        ));
        let zero = DenseGrid {
            values: vec![0.0, 1.0],
            ..bad.clone()
        };
        let l = cross_entropy(&zero, &truth).unwrap();
        assert!((l + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn focal_plug_in_and_limits() {
        let p = FocalParams::default();
        let truth = DenseGrid {
            width: 1,
            height: 1,
            channels: 1,
            values: vec![1.0],
        };
        let pred = DenseGrid {
            values: vec![0.5],
            ..truth.clone()
        };
        assert!(
            (focal_loss(&pred, &truth, p, 3).unwrap() - (-(0.25) * 0.5f64.ln() / 3.0)).abs()
                < 1e-15
        );
        assert_eq!(focal_loss(&pred, &truth, p, 0), Err(LossError::NoInstances));

        let t = encode_targets(
            &[obj_at(0, 9.0, 9.0, 8.0, 8.0)],
            (24, 24),
            1,
            &TargetConfig::default(),
        )
        .unwrap();
        let mut perfect = t.heatmap.clone();
        for v in perfect.values.iter_mut() {
            *v = if *v == 1.0 { 1.0 } else { 0.0 };
        }
        assert!(focal_loss(&perfect, &t.heatmap, p, 1).unwrap().abs() < 1e-10);
    }

    #[test]
    fn focal_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let objs = random_objects(&mut rng, 3, 2, 32, 32);
        let t = encode_targets(&objs, (32, 32), 2, &TargetConfig::default()).unwrap();
        let mut pred = t.heatmap.clone();
        for v in pred.values.iter_mut() {
            *v = rng.random_range(0.01..0.99);
        }
        let (a, b) = (2.0, 4.0);
        let mut naive = 0.0;
        for y in 0..pred.height {
            for x in 0..pred.width {
                for c in 0..2 {
                    let (yh, yt) = (pred.get(x, y, c), t.heatmap.get(x, y, c));
                    naive += if yt == 1.0 {
                        (1.0 - yh).powf(a) * yh.ln()
                    } else {
                        (1.0 - yt).powf(b) * yh.powf(a) * (1.0 - yh).ln()
                    };
                }
            }
        }
        naive = -naive / 3.0;
        let got = focal_loss(&pred, &t.heatmap, FocalParams::default(), 3).unwrap();
        assert!((got - naive).abs() < 1e-12);
    }

    #[test]
    fn size_loss_forms() {
        let m = SizeLossMode::SumOfDimensions;
        assert_eq!(size_loss(&[[8.0, 9.0]], &[[8.0, 9.0]], m).unwrap(), 0.0);
        assert_eq!(size_loss(&[[10.0, 6.0]], &[[8.0, 9.0]], m).unwrap(), 1.0);
        assert_eq!(size_loss(&[[12.0, 5.0]], &[[8.0, 9.0]], m).unwrap(), 0.0);
        assert_eq!(
            size_loss(&[[12.0, 5.0]], &[[8.0, 9.0]], SizeLossMode::PerDimension).unwrap(),
            8.0
        );
    }

    #[test]
    fn offset_and_corner_l1() {
        let t = encode_targets(
            &[obj_at(0, 5.0, 7.0, 4.0, 4.0)],
            (16, 16),
            1,
            &TargetConfig::default(),
        )
        .unwrap();
        let mut pred = DenseGrid::zeros(4, 4, 2);
        pred.set(1, 1, 0, 0.25);
        pred.set(1, 1, 1, 0.75);
        assert_eq!(offset_loss(&pred, &t).unwrap(), 0.0);
        pred.set(1, 1, 0, 0.5);
        pred.set(1, 1, 1, 0.5);
        assert_eq!(offset_loss(&pred, &t).unwrap(), 0.5);
        // values away from the object cell do not matter
        pred.set(3, 3, 0, 100.0);
        assert_eq!(offset_loss(&pred, &t).unwrap(), 0.5);

        let mut cpred = DenseGrid::zeros(4, 4, 8);
        for (k, cell) in t.objects[0].corner_cells.iter().enumerate() {
            for d in 0..2 {
                cpred.set(
                    cell[0],
                    cell[1],
                    2 * k + d,
                    t.objects[0].corner_offsets[2 * k + d],
                );
            }
        }
        assert_eq!(corner_loss(&cpred, &t).unwrap(), 0.0);
    }

    #[test]
    fn masked_l1_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let objs = random_objects(&mut rng, 4, 1, 40, 36);
        let t = encode_targets(&objs, (40, 36), 1, &TargetConfig::default()).unwrap();
        let mut pred = DenseGrid::zeros(t.heatmap.width, t.heatmap.height, 2);
        for v in pred.values.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let mut oracle = 0.0;
        for o in &objs {
            let (cx, cy) = (
                (o.center[0] / 4.0).floor() as usize,
                (o.center[1] / 4.0).floor() as usize,
            );
            oracle += (pred.get(cx, cy, 0) - (o.center[0] / 4.0 - cx as f64)).abs();
            oracle += (pred.get(cx, cy, 1) - (o.center[1] / 4.0 - cy as f64)).abs();
        }
        oracle /= objs.len() as f64;
        assert!((offset_loss(&pred, &t).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_linear() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossParts::default(), &w), 0.0);
        let unit = LossParts {
            ce: 1.0,
            det: 1.0,
            wh: 1.0,
            off: 1.0,
            corner: 1.0,
        };
        assert_eq!(total_loss(&unit, &w), 5.0);
        let parts = LossParts {
            ce: 0.3,
            det: 1.7,
            wh: 2.5,
            off: 0.1,
            corner: 0.9,
        };
        let doubled = LossWeights { lambda2: 2.0, ..w };
        assert_eq!(total_loss(&parts, &doubled) - total_loss(&parts, &w), 2.5);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let objs = random_objects(&mut rng, 5, 2, 40, 40);
        let mut rev = objs.clone();
        rev.reverse();
        let cfg = TargetConfig::default();
        let a = encode_targets(&objs, (40, 40), 2, &cfg).unwrap();
        let b = encode_targets(&rev, (40, 40), 2, &cfg).unwrap();
        assert_eq!(a.heatmap, b.heatmap);
        let mut pred = DenseGrid::zeros(a.heatmap.width, a.heatmap.height, 8);
        for v in pred.values.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        assert!((corner_loss(&pred, &a).unwrap() - corner_loss(&pred, &b).unwrap()).abs() < 1e-12);
        let sizes: Vec<[f64; 2]> = objs.iter().map(|o| o.size).collect();
        let preds: Vec<[f64; 2]> = sizes.iter().map(|s| [s[0] + 1.5, s[1] - 0.5]).collect();
        let mut sr = sizes.clone();
        let mut pr = preds.clone();
        sr.reverse();
        pr.reverse();
        let m = SizeLossMode::PerDimension;
        assert!(
            (size_loss(&preds, &sizes, m).unwrap() - size_loss(&pr, &sr, m).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn gradient_checks_pass() {
        for row in losses_check(0, 5, None, 1e-4, FocalParams::default()) {
            assert!(row.passed, "{:?}", row);
            assert!(row.checked > 0);
        }
    }

    #[test]
    fn kinks_are_skipped() {
        let f = SizeFn {
            target: vec![[8.0, 9.0]],
            mode: SizeLossMode::SumOfDimensions,
        };
        let g = grad_check(&f, &[8.0, 9.0], 1e-5, &[0, 1]);
        assert_eq!((g.checked, g.skipped), (0, 2));
    }
}
