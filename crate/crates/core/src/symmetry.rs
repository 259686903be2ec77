//! Translational-symmetry scoring and refinement of object layouts.
//!
//! Same-class objects are clustered into rows (horizontal axis) or columns
//! (vertical axis). For a row, the symmetry metric is `T = T_c + T_s` where
//!
//! * `T_c` = variance of the orthogonal center coordinate plus the variance
//!   of consecutive center gaps along the row,
//! * `T_s` = variance of widths plus variance of heights (biased, `1/N`).
//!
//! Lower `T` means a more regular layout. Refinement blends every member
//! toward the ideal layout with weight `1 - t_tilde`, where
//! `t_tilde = logistic(T / tau - shift)` and `tau` is the squared median
//! diagonal of the group: the orthogonal coordinate moves toward the group
//! mean, the along-axis coordinate toward an equally spaced sequence with the
//! same mean and mean gap, and sizes toward the mean size. Each blended
//! quantity keeps its mean while its spread shrinks by `t_tilde`, so after
//! refinement `T_after = t_tilde^2 * T_before`.

use serde::{Deserialize, Serialize};

use crate::instances::FacadeObject;
use crate::labelmap::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    /// Index of the coordinate that varies along the axis.
    #[inline]
    pub fn along(self) -> usize {
        match self {
            Axis::Horizontal => 0,
            Axis::Vertical => 1,
        }
    }

    /// Index of the coordinate that should be constant along the axis.
    #[inline]
    pub fn orth(self) -> usize {
        1 - self.along()
    }
}

/// How the gap-regularity part of `T_c` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingTerm {
    /// Mean squared deviation of the gaps from their mean.
    #[default]
    Squared,
    /// Mean signed deviation; identically zero up to rounding.
    Literal,
}

/// Where the along-axis coordinate is pulled during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterTarget {
    /// Equally spaced sequence anchored at the group mean with the mean gap.
    #[default]
    EqualSpacing,
    /// The group mean itself (all members collapse toward one point).
    GroupMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMode {
    /// Squared median object diagonal of the group.
    #[default]
    MedianDiagonal,
    /// The constant `sigmoid_tau`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymmetryConfig {
    /// Two objects share a row (column) when their orthogonal centers differ
    /// by at most `gap_factor` times the median orthogonal extent.
    pub gap_factor: f64,
    pub sigmoid_tau_mode: TauMode,
    /// Normalizer used when `sigmoid_tau_mode` is `fixed` (squared pixels).
    pub sigmoid_tau: f64,
    pub sigmoid_shift: f64,
    pub spacing_term: SpacingTerm,
    pub center_target: CenterTarget,
    /// Classes left untouched by refinement.
    pub disabled_classes: Vec<ClassId>,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        Self {
            gap_factor: 0.5,
            sigmoid_tau_mode: TauMode::MedianDiagonal,
            sigmoid_tau: 1.0,
            sigmoid_shift: 4.0,
            spacing_term: SpacingTerm::Squared,
            center_target: CenterTarget::EqualSpacing,
            disabled_classes: Vec::new(),
        }
    }
}

/// A row or column of same-class objects, as indices into an object slice,
/// sorted by the along-axis center (ties by the orthogonal center).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryGroup {
    #[serde(rename = "class")]
    pub class_id: ClassId,
    pub axis: Axis,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryScore {
    pub t_c: f64,
    pub t_s: f64,
    pub t: f64,
    pub t_tilde: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Biased (`1/N`) variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    mean(&values.iter().map(|v| (v - m) * (v - m)).collect::<Vec<_>>())
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sort_members(objects: &[FacadeObject], axis: Axis, members: &mut [usize]) {
    let (a, o) = (axis.along(), axis.orth());
    members.sort_by(|&i, &j| {
        objects[i].center[a]
            .total_cmp(&objects[j].center[a])
            .then(objects[i].center[o].total_cmp(&objects[j].center[o]))
            .then(i.cmp(&j))
    });
}

/// Clusters same-class objects into rows (`Horizontal`) or columns
/// (`Vertical`) by single linkage on the orthogonal center coordinate.
///
/// Groups come out ordered by class id, then by orthogonal position.
pub fn group_objects(objects: &[FacadeObject], axis: Axis, gap_factor: f64) -> Vec<SymmetryGroup> {
    let o = axis.orth();
    let mut classes: Vec<ClassId> = objects.iter().map(|obj| obj.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut groups = Vec::new();
    for class in classes {
        let mut idx: Vec<usize> = (0..objects.len())
            .filter(|&i| objects[i].class_id == class)
            .collect();
        let mut extents: Vec<f64> = idx.iter().map(|&i| objects[i].size[o]).collect();
        let threshold = gap_factor * median(&mut extents);
        idx.sort_by(|&i, &j| {
            objects[i].center[o]
                .total_cmp(&objects[j].center[o])
                .then(i.cmp(&j))
        });
        let mut current = vec![idx[0]];
        for pair in idx.windows(2) {
            let gap = objects[pair[1]].center[o] - objects[pair[0]].center[o];
            if gap > threshold {
                groups.push(std::mem::take(&mut current));
            }
            current.push(pair[1]);
        }
        groups.push(current);
    }
    groups
        .into_iter()
        .map(|mut members| {
            sort_members(objects, axis, &mut members);
            SymmetryGroup {
                class_id: objects[members[0]].class_id,
                axis,
                members,
            }
        })
        .collect()
}

fn column(
    objects: &[FacadeObject],
    group: &SymmetryGroup,
    f: impl Fn(&FacadeObject) -> f64,
) -> Vec<f64> {
    group.members.iter().map(|&i| f(&objects[i])).collect()
}

/// `T_c`: spread of the orthogonal coordinate plus irregularity of the gaps.
pub fn center_score(objects: &[FacadeObject], group: &SymmetryGroup, spacing: SpacingTerm) -> f64 {
    let (a, o) = (group.axis.along(), group.axis.orth());
    let orth = column(objects, group, |obj| obj.center[o]);
    let along = column(objects, group, |obj| obj.center[a]);
    let gaps: Vec<f64> = along.windows(2).map(|w| w[1] - w[0]).collect();
    let spacing_term = if gaps.is_empty() {
        0.0
    } else {
        let g = mean(&gaps);
        match spacing {
            SpacingTerm::Squared => {
                mean(&gaps.iter().map(|d| (d - g) * (d - g)).collect::<Vec<_>>())
            }
            SpacingTerm::Literal => mean(&gaps.iter().map(|d| d - g).collect::<Vec<_>>()),
        }
    };
    variance(&orth) + spacing_term
}

/// `T_s`: variance of widths plus variance of heights.
pub fn size_score(objects: &[FacadeObject], group: &SymmetryGroup) -> f64 {
    variance(&column(objects, group, |o| o.size[0]))
        + variance(&column(objects, group, |o| o.size[1]))
}

/// Normalizer `tau` for the logistic squashing of `T`.
pub fn tau(objects: &[FacadeObject], group: &SymmetryGroup, config: &SymmetryConfig) -> f64 {
    let t = match config.sigmoid_tau_mode {
        TauMode::Fixed => config.sigmoid_tau,
        TauMode::MedianDiagonal => {
            let mut d = column(objects, group, FacadeObject::diagonal);
            let m = median(&mut d);
            m * m
        }
    };
    if t > 0.0 {
        t
    } else {
        1.0
    }
}

pub fn score(
    objects: &[FacadeObject],
    group: &SymmetryGroup,
    config: &SymmetryConfig,
) -> SymmetryScore {
    let t_c = center_score(objects, group, config.spacing_term);
    let t_s = size_score(objects, group);
    let t = t_c + t_s;
    SymmetryScore {
        t_c,
        t_s,
        t,
        t_tilde: logistic(t / tau(objects, group, config) - config.sigmoid_shift),
    }
}

/// Member-weighted mean of the group `t` values over groups with at least
/// two members; `None` when there is no such group, since single-member
/// groups say nothing about symmetry.
pub fn aggregate_t(scored: &[(usize, SymmetryScore)]) -> Option<f64> {
    let n: usize = scored.iter().map(|(m, _)| m).filter(|&&m| m > 1).sum();
    if n == 0 {
        return None;
    }
    let sum: f64 = scored
        .iter()
        .filter(|(m, _)| *m > 1)
        .map(|(m, s)| *m as f64 * s.t)
        .sum();
    Some(sum / n as f64)
}

/// Horizontal when `T^h < T^v` or only rows have evidence; ties go to
/// vertical.
pub fn choose_axis(t_h: Option<f64>, t_v: Option<f64>) -> Axis {
    match (t_h, t_v) {
        (Some(h), Some(v)) if h < v => Axis::Horizontal,
        (Some(_), None) => Axis::Horizontal,
        _ => Axis::Vertical,
    }
}

/// Blends the members of `group` toward the ideal layout with weight
/// `1 - t_tilde`, returning `(object index, refined object)` in member order.
/// Centers are clamped to `[0, W] x [0, H]` and sizes to `[0, W] x [0, H]`.
pub fn refine(
    objects: &[FacadeObject],
    group: &SymmetryGroup,
    t_tilde: f64,
    target: CenterTarget,
    bounds: (u32, u32),
) -> Vec<(usize, FacadeObject)> {
    let (a, o) = (group.axis.along(), group.axis.orth());
    let n = group.members.len();
    let along = column(objects, group, |obj| obj.center[a]);
    let orth_mean = mean(&column(objects, group, |obj| obj.center[o]));
    let along_mean = mean(&along);
    let mean_gap = if n > 1 {
        (along[n - 1] - along[0]) / (n - 1) as f64
    } else {
        0.0
    };
    let w_mean = mean(&column(objects, group, |obj| obj.size[0]));
    let h_mean = mean(&column(objects, group, |obj| obj.size[1]));
    let limits = [bounds.0 as f64, bounds.1 as f64];
    let blend = |v: f64, target: f64| v + (1.0 - t_tilde) * (target - v);

    group
        .members
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let src = &objects[i];
            let along_target = match target {
                CenterTarget::EqualSpacing => {
                    along_mean + (k as f64 - (n - 1) as f64 / 2.0) * mean_gap
                }
                CenterTarget::GroupMean => along_mean,
            };
            let mut out = src.clone();
            out.center[a] = blend(src.center[a], along_target);
            out.center[o] = blend(src.center[o], orth_mean);
            out.size = [blend(src.size[0], w_mean), blend(src.size[1], h_mean)];
            for (d, &limit) in limits.iter().enumerate() {
                out.center[d] = out.center[d].clamp(0.0, limit);
                out.size[d] = out.size[d].clamp(0.0, limit);
            }
            (i, out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    #[serde(flatten)]
    pub group: SymmetryGroup,
    pub before: SymmetryScore,
    pub after: SymmetryScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAxis {
    #[serde(rename = "class")]
    pub class_id: ClassId,
    pub t_h: Option<f64>,
    pub t_v: Option<f64>,
    pub axis: Axis,
}

/// Refined objects (input order preserved) plus per-group scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedLayout {
    pub objects: Vec<FacadeObject>,
    pub groups: Vec<GroupReport>,
    pub classes: Vec<ClassAxis>,
}

/// Symmetry report written next to refined instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub groups: Vec<GroupReport>,
    pub classes: Vec<ClassAxis>,
}

impl RefinedLayout {
    pub fn report(&self) -> SymmetryReport {
        SymmetryReport {
            groups: self.groups.clone(),
            classes: self.classes.clone(),
        }
    }
}

/// Per class: group along both axes, pick the axis with the lower aggregate
/// `T`, and refine every group along that axis.
pub fn refine_layout(
    objects: &[FacadeObject],
    config: &SymmetryConfig,
    bounds: (u32, u32),
) -> RefinedLayout {
    let mut refined = objects.to_vec();
    let mut reports = Vec::new();
    let mut classes = Vec::new();

    let mut class_ids: Vec<ClassId> = objects.iter().map(|o| o.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let scored = |axis: Axis| -> Vec<(SymmetryGroup, SymmetryScore)> {
        group_objects(objects, axis, config.gap_factor)
            .into_iter()
            .map(|g| {
                let s = score(objects, &g, config);
                (g, s)
            })
            .collect()
    };
    let rows = scored(Axis::Horizontal);
    let cols = scored(Axis::Vertical);

    for class in class_ids {
        if config.disabled_classes.contains(&class) {
            continue;
        }
        let pick = |all: &[(SymmetryGroup, SymmetryScore)]| -> Vec<(SymmetryGroup, SymmetryScore)> {
            all.iter()
                .filter(|(g, _)| g.class_id == class)
                .cloned()
                .collect()
        };
        let (h, v) = (pick(&rows), pick(&cols));
        let weights = |gs: &[(SymmetryGroup, SymmetryScore)]| -> Vec<(usize, SymmetryScore)> {
            gs.iter().map(|(g, s)| (g.members.len(), *s)).collect()
        };
        let (t_h, t_v) = (aggregate_t(&weights(&h)), aggregate_t(&weights(&v)));
        let axis = choose_axis(t_h, t_v);
        classes.push(ClassAxis {
            class_id: class,
            t_h,
            t_v,
            axis,
        });
        let chosen = if axis == Axis::Horizontal { h } else { v };
        for (group, before) in chosen {
            for (i, obj) in refine(
                objects,
                &group,
                before.t_tilde,
                config.center_target,
                bounds,
            ) {
                refined[i] = obj;
            }
            let mut after_group = group.clone();
            sort_members(&refined, group.axis, &mut after_group.members);
            let after = score(&refined, &after_group, config);
            reports.push(GroupReport {
                group,
                before,
                after,
            });
        }
    }

    RefinedLayout {
        objects: refined,
        groups: reports,
        classes,
    }
}
