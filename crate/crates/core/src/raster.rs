//! Painting a refined layout back into a label map.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::FacadeObject;
use crate::labelmap::{ClassId, ClassPalette, LabelMap};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("label map has no non-object pixels to fill from")]
    NoBackground,
    #[error("draw order must list every object class exactly once: {0}")]
    BadDrawOrder(String),
}

/// Object classes in painting order; later classes paint over earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawOrder(Vec<ClassId>);

impl DrawOrder {
    pub fn new(order: Vec<ClassId>, palette: &ClassPalette) -> Result<Self, RasterError> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let before = sorted.len();
        sorted.dedup();
        if sorted.len() != before {
            return Err(RasterError::BadDrawOrder("duplicate class".into()));
        }
        if sorted != palette.object_classes() {
            return Err(RasterError::BadDrawOrder(format!(
                "got {:?}, object classes are {:?}",
                order,
                palette.object_classes()
            )));
        }
        Ok(Self(order))
    }

    /// Balcony, then door, then window; any other object classes are painted
    /// first in id order.
    pub fn default_for(palette: &ClassPalette) -> Self {
        let preferred: Vec<ClassId> = ["balcony", "door", "window"]
            .iter()
            .filter_map(|n| palette.id_of(n))
            .filter(|&id| palette.is_object(id))
            .collect();
        let mut order: Vec<ClassId> = palette
            .object_classes()
            .into_iter()
            .filter(|id| !preferred.contains(id))
            .collect();
        order.extend(preferred);
        Self(order)
    }

    pub fn from_names(names: &[String], palette: &ClassPalette) -> Result<Self, RasterError> {
        let ids = names
            .iter()
            .map(|n| {
                palette
                    .id_of(n)
                    .ok_or_else(|| RasterError::BadDrawOrder(format!("unknown class {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ids, palette)
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.0
    }
}

/// Replaces every object-class pixel with the class of its nearest
/// non-object pixels.
///
/// Breadth-first fill from all non-object pixels at once (4-neighbors). A
/// pixel reached in layer `d` takes the majority class among its neighbors
/// already filled in earlier layers; ties go to the smaller class id.
pub fn clear_objects(map: &LabelMap, palette: &ClassPalette) -> Result<LabelMap, RasterError> {
    let (w, h) = (map.width() as usize, map.height() as usize);
    let mut out = map.clone();
    let mut layer = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, &c) in map.data().iter().enumerate() {
        if !palette.is_object(c) {
            layer[i] = 0;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Err(RasterError::NoBackground);
    }
    let neighbors = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if y > 0 {
            n[0] = i - w;
        }
        if x > 0 {
            n[1] = i - 1;
        }
        if x + 1 < w {
            n[2] = i + 1;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    let mut votes = vec![0u32; palette.len()];
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i) {
            if j == usize::MAX || layer[j] != u32::MAX {
                continue;
            }
            let d = layer[i] + 1;
            layer[j] = d;
            votes.fill(0);
            for k in neighbors(j) {
                if k != usize::MAX && layer[k] < d {
                    votes[out.data()[k] as usize] += 1;
                }
            }
            let best = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c as ClassId)
                .expect("palette is non-empty");
            out.set((j % w) as u32, (j / w) as u32, best);
            queue.push_back(j);
        }
    }
    Ok(out)
}

#[inline]
fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covered by an object, before clipping.
pub fn object_pixels(obj: &FacadeObject) -> [i64; 4] {
    let [x1, y1, x2, y2] = obj.edges();
    [
        round_half_up(x1),
        round_half_up(y1),
        round_half_up(x2),
        round_half_up(y2),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterWarning {
    pub object: usize,
    #[serde(rename = "class")]
    pub class_id: ClassId,
    pub reason: String,
}

/// Paints each object as a filled rectangle over `background`, class by class
/// in `order`. Objects of classes missing from `order` are not drawn.
pub fn rasterize(
    background: &LabelMap,
    objects: &[FacadeObject],
    order: &DrawOrder,
) -> (LabelMap, Vec<RasterWarning>) {
    let mut out = background.clone();
    let mut warnings = Vec::new();
    let (w, h) = (out.width() as i64, out.height() as i64);
    for &class in order.classes() {
        for (i, obj) in objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.class_id == class)
        {
            let [x0, y0, x1, y1] = object_pixels(obj);
            if x1 <= 0 || y1 <= 0 || x0 >= w || y0 >= h || x1 <= x0 || y1 <= y0 {
                warnings.push(RasterWarning {
                    object: i,
                    class_id: class,
                    reason: "object covers no pixel inside the image".into(),
                });
                continue;
            }
            out.fill_rect(x0, y0, x1, y1, class);
        }
    }
    (out, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{extract_instances, ExtractConfig};

    const WIN: ClassId = 0;
    const WALL: ClassId = 1;
    const BALCONY: ClassId = 2;
    const ROOF: ClassId = 7;

    fn obj(class: ClassId, cx: f64, cy: f64, w: f64, h: f64) -> FacadeObject {
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
    fn default_order_puts_windows_last() {
        let p = ClassPalette::ecp_default();
        assert_eq!(DrawOrder::default_for(&p).classes(), &[BALCONY, 3, WIN]);
        assert!(DrawOrder::new(vec![0, 2], &p).is_err());
        assert!(DrawOrder::new(vec![0, 2, 3, 3], &p).is_err());
        let names: Vec<String> = ["window", "door", "balcony"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            DrawOrder::from_names(&names, &p).unwrap().classes(),
            &[0, 3, 2]
        );
    }

    #[test]
    fn window_rectangle_arithmetic() {
        let p = ClassPalette::ecp_default();
        let bg = LabelMap::filled(20, 20, WALL).unwrap();
        let (m, warn) = rasterize(
            &bg,
            &[obj(WIN, 10.0, 10.0, 4.0, 4.0)],
            &DrawOrder::default_for(&p),
        );
        assert!(warn.is_empty());
        for y in 0..20 {
            for x in 0..20 {
                let inside = (8..12).contains(&x) && (8..12).contains(&y);
                assert_eq!(m.get(x, y) == WIN, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn window_wins_overlap_with_balcony() {
        let p = ClassPalette::ecp_default();
        let bg = LabelMap::filled(20, 20, WALL).unwrap();
        let objs = [
            obj(WIN, 10.0, 10.0, 4.0, 4.0),
            obj(BALCONY, 10.0, 12.0, 8.0, 4.0),
        ];
        let (m, _) = rasterize(&bg, &objs, &DrawOrder::default_for(&p));
        assert_eq!(m.get(10, 11), WIN);
        assert_eq!(m.get(7, 12), BALCONY);
    }

    #[test]
    fn out_of_bounds_object_warns() {
        let p = ClassPalette::ecp_default();
        let bg = LabelMap::filled(10, 10, WALL).unwrap();
        let (m, warn) = rasterize(
            &bg,
            &[obj(WIN, 30.0, 3.0, 4.0, 4.0)],
            &DrawOrder::default_for(&p),
        );
        assert_eq!(m, bg);
        assert_eq!(warn.len(), 1);
        assert_eq!(warn[0].object, 0);
    }

    #[test]
    fn window_inside_wall_clears_to_wall() {
        let p = ClassPalette::ecp_default();
        let mut m = LabelMap::filled(10, 10, WALL).unwrap();
        m.fill_rect(2, 2, 7, 6, WIN);
        let c = clear_objects(&m, &p).unwrap();
        assert!(c.data().iter().all(|&v| v == WALL));
    }

    #[test]
    fn straddling_window_splits_between_roof_and_wall() {
        // 8x8: roof rows 0-3, wall rows 4-7, window block x 2..6, y 2..6.
        // By hand: window rows 2-3 are 1-2 steps from the roof and 3-4 from
        // the wall; rows 4-5 the reverse.
        let p = ClassPalette::ecp_default();
        let mut m = LabelMap::filled(8, 8, WALL).unwrap();
        m.fill_rect(0, 0, 8, 4, ROOF);
        m.fill_rect(2, 2, 6, 6, WIN);
        let c = clear_objects(&m, &p).unwrap();
        let mut expected = LabelMap::filled(8, 8, WALL).unwrap();
        expected.fill_rect(0, 0, 8, 4, ROOF);
        assert_eq!(c, expected);
    }

    #[test]
    fn all_window_map_has_no_background() {
        let p = ClassPalette::ecp_default();
        let m = LabelMap::filled(4, 4, WIN).unwrap();
        assert_eq!(clear_objects(&m, &p), Err(RasterError::NoBackground));
    }

    #[test]
    fn extract_then_rasterize_is_identity_for_rectangles() {
        let p = ClassPalette::ecp_default();
        let mut m = LabelMap::filled(60, 50, WALL).unwrap();
        m.fill_rect(0, 0, 60, 6, ROOF);
        m.fill_rect(5, 10, 14, 25, WIN);
        m.fill_rect(25, 10, 34, 25, WIN);
        m.fill_rect(3, 25, 16, 29, BALCONY);
        m.fill_rect(40, 30, 47, 50, 3);
        let objs = extract_instances(&m, &p, &ExtractConfig::default());
        let bg = clear_objects(&m, &p).unwrap();
        let (out, warn) = rasterize(&bg, &objs, &DrawOrder::default_for(&p));
        assert!(warn.is_empty());
        assert_eq!(out, m);
    }

    #[test]
    fn painted_center_within_half_pixel() {
        let p = ClassPalette::ecp_default();
        let bg = LabelMap::filled(40, 40, WALL).unwrap();
        for (cx, cy, w, h) in [
            (10.3, 12.7, 5.5, 4.2),
            (20.5, 20.5, 3.0, 7.0),
            (7.49, 30.51, 6.01, 2.99),
        ] {
            let o = obj(WIN, cx, cy, w, h);
            let (m, _) = rasterize(&bg, std::slice::from_ref(&o), &DrawOrder::default_for(&p));
            let again = extract_instances(
                &m,
                &p,
                &ExtractConfig {
                    min_area: 1,
                    ..Default::default()
                },
            );
            assert_eq!(again.len(), 1);
            assert!((again[0].center[0] - cx).abs() <= 0.5 + 1e-12);
            assert!((again[0].center[1] - cy).abs() <= 0.5 + 1e-12);
            assert!((again[0].size[0] - w).abs() <= 1.0 + 1e-12);
        }
    }
}
