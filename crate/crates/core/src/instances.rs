//! Object instances from a label map.
//!
//! Every connected region of an object class becomes one [`FacadeObject`]:
//! its convex hull gives the minimal axis-aligned box and the four corners
//! are the region pixels closest to the four image corners.
//!
//! Object boxes use pixel-edge coordinates: pixel `(i, j)` covers
//! `[i, i+1) x [j, j+1)`, so a region spanning columns `x1..=x2` has width
//! `x2 + 1 - x1` and center `(x1 + x2 + 1) / 2`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::labelmap::{ClassId, ClassPalette, LabelMap};

pub type Pixel = [u32; 2];
pub type Point = [i64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// N, S, E, W neighbors.
    #[default]
    Four,
    /// All eight neighbors.
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

/// Axis-aligned box over integer points, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BBox {
    pub fn contains(&self, p: Point) -> bool {
        (self.x1..=self.x2).contains(&p[0]) && (self.y1..=self.y2).contains(&p[1])
    }
}

/// One connected region of a single class. Pixels are in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub class_id: ClassId,
    pub pixels: Vec<Pixel>,
}

/// Maximal connected regions of `class_id`, ordered by their first pixel in
/// raster order (top row first, then leftmost).
pub fn connected_components(
    map: &LabelMap,
    class_id: ClassId,
    connectivity: Connectivity,
) -> Vec<Component> {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let mut visited = vec![false; map.data().len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let start = map.index(x, y);
            if visited[start] || map.data()[start] != class_id {
                continue;
            }
            visited[start] = true;
            queue.push_back([x, y]);
            let mut pixels = Vec::new();
            while let Some(p) = queue.pop_front() {
                pixels.push(p);
                for &(dx, dy) in connectivity.offsets() {
                    let (nx, ny) = (p[0] as i64 + dx, p[1] as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let ni = map.index(nx as u32, ny as u32);
                    if !visited[ni] && map.data()[ni] == class_id {
                        visited[ni] = true;
                        queue.push_back([nx as u32, ny as u32]);
                    }
                }
            }
            pixels.sort_unstable_by_key(|p| (p[1], p[0]));
            out.push(Component { class_id, pixels });
        }
    }
    out
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by monotone chain.
///
/// Vertices are returned with positive signed area in `(x, y)` coordinates,
/// starting from the lexicographically smallest point; collinear boundary
/// points are dropped. A single point or a collinear set yields the
/// degenerate hull (one point, or the two segment endpoints).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && lower[0] == lower[1] {
        lower.pop();
    }
    lower
}

/// True when `p` lies inside or on the convex polygon `hull`.
pub fn hull_contains(hull: &[Point], p: Point) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p[0] >= a[0].min(b[0])
                && p[0] <= a[0].max(b[0])
                && p[1] >= a[1].min(b[1])
                && p[1] <= a[1].max(b[1])
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

/// Axis-aligned bounds of a non-empty polygon.
pub fn min_bbox(hull: &[Point]) -> BBox {
    assert!(!hull.is_empty(), "min_bbox of empty polygon");
    let mut b = BBox {
        x1: i64::MAX,
        y1: i64::MAX,
        x2: i64::MIN,
        y2: i64::MIN,
    };
    for p in hull {
        b.x1 = b.x1.min(p[0]);
        b.y1 = b.y1.min(p[1]);
        b.x2 = b.x2.max(p[0]);
        b.y2 = b.y2.max(p[1]);
    }
    b
}

/// Region pixels nearest to the image corners, ordered TL, TR, BR, BL.
///
/// Distance ties go to the smaller y, then the smaller x.
pub fn extract_corners(pixels: &[Pixel], map_size: (u32, u32)) -> [Pixel; 4] {
    assert!(!pixels.is_empty(), "corners of empty region");
    let (w, h) = (map_size.0 as i64 - 1, map_size.1 as i64 - 1);
    let origins: [Point; 4] = [[0, 0], [w, 0], [w, h], [0, h]];
    origins.map(|o| {
        *pixels
            .iter()
            .min_by_key(|p| {
                let dx = p[0] as i64 - o[0];
                let dy = p[1] as i64 - o[1];
                (dx * dx + dy * dy, p[1], p[0])
            })
            .expect("non-empty")
    })
}

/// One detected instance in the parametric `(x, y, w, h)` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacadeObject {
    #[serde(rename = "class")]
    pub class_id: ClassId,
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub corners: [Pixel; 4],
    #[serde(rename = "pixels")]
    pub pixel_count: usize,
    #[serde(default)]
    pub component: u32,
    /// Set when the box intersects the box of an object of another class.
    #[serde(default)]
    pub overlap: bool,
}

impl FacadeObject {
    pub fn from_component(component: &Component, map_size: (u32, u32), component_id: u32) -> Self {
        let points: Vec<Point> = component
            .pixels
            .iter()
            .map(|p| [p[0] as i64, p[1] as i64])
            .collect();
        let b = min_bbox(&convex_hull(&points));
        let (x1, y1, x2, y2) = (
            b.x1 as f64,
            b.y1 as f64,
            (b.x2 + 1) as f64,
            (b.y2 + 1) as f64,
        );
        Self {
            class_id: component.class_id,
            center: [(x1 + x2) / 2.0, (y1 + y2) / 2.0],
            size: [x2 - x1, y2 - y1],
            corners: extract_corners(&component.pixels, map_size),
            pixel_count: component.pixels.len(),
            component: component_id,
            overlap: false,
        }
    }

    /// Box in pixel-edge coordinates `[x1, y1, x2, y2]`.
    pub fn edges(&self) -> [f64; 4] {
        let [cx, cy] = self.center;
        let [w, h] = self.size;
        [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
    }

    pub fn diagonal(&self) -> f64 {
        self.size[0].hypot(self.size[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            min_area: 16,
            connectivity: Connectivity::Four,
        }
    }
}

/// One object per connected component of each object class with at least
/// `min_area` pixels, ordered by class id and then by component order.
pub fn extract_instances(
    map: &LabelMap,
    palette: &ClassPalette,
    config: &ExtractConfig,
) -> Vec<FacadeObject> {
    let size = (map.width(), map.height());
    let mut objects: Vec<FacadeObject> = palette
        .object_classes()
        .into_iter()
        .flat_map(|class| {
            connected_components(map, class, config.connectivity)
                .into_iter()
                .enumerate()
                .filter(|(_, c)| c.pixels.len() >= config.min_area)
                .map(move |(i, c)| FacadeObject::from_component(&c, size, i as u32))
                .collect::<Vec<_>>()
        })
        .collect();
    flag_overlaps(&mut objects);
    objects
}

fn flag_overlaps(objects: &mut [FacadeObject]) {
    let boxes: Vec<[f64; 4]> = objects.iter().map(FacadeObject::edges).collect();
    for i in 0..objects.len() {
        objects[i].overlap = (0..objects.len()).any(|j| {
            j != i
                && objects[j].class_id != objects[i].class_id
                && boxes[i][0] < boxes[j][2]
                && boxes[j][0] < boxes[i][2]
                && boxes[i][1] < boxes[j][3]
                && boxes[j][1] < boxes[i][3]
        });
    }
}

/// Serialized form of an extraction or refinement result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstancesDoc {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<FacadeObject>,
}
