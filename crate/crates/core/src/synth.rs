//! Synthetic facade label maps with a controllable window grid, jitter and
//! vegetation occlusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::FacadeObject;
use crate::labelmap::{ClassId, ClassPalette, LabelMap, Rgb};

pub const VEGETATION: &str = "vegetation";
pub const VEGETATION_COLOR: Rgb = [0, 128, 0];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("layout does not fit: {0}")]
    LayoutOverflow(String),
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("palette lacks class {0:?}")]
    MissingClass(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub rows: u32,
    pub cols: u32,
    pub window_size: [u32; 2],
    /// Center-to-center distance of neighboring windows.
    pub spacing: [u32; 2],
    /// Standard deviation in pixels of the center and size perturbation,
    /// truncated at 3 sigma.
    pub jitter: f64,
    /// Fraction of pixels covered by vegetation in the occluded map.
    pub occlusion: f64,
    pub door: bool,
    pub door_size: [u32; 2],
    pub balconies: bool,
    pub balcony_height: u32,
    pub roof_height: u32,
    pub shop_height: u32,
    /// Strip above the shop band kept free of windows; holds the door.
    pub ground_height: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 292,
            height: 376,
            rows: 4,
            cols: 5,
            window_size: [16, 24],
            spacing: [52, 64],
            jitter: 0.0,
            occlusion: 0.0,
            door: true,
            door_size: [20, 36],
            balconies: true,
            balcony_height: 12,
            roof_height: 24,
            shop_height: 0,
            ground_height: 80,
            seed: 0,
        }
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub class_id: ClassId,
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    fn grow(&self, m: i64) -> Rect {
        Rect {
            x0: self.x0 - m,
            y0: self.y0 - m,
            x1: self.x1 + m,
            y1: self.y1 + m,
            ..*self
        }
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    /// Same geometry as an extracted object of this rectangle.
    pub fn to_object(&self) -> FacadeObject {
        let (w, h) = ((self.x1 - self.x0) as f64, (self.y1 - self.y0) as f64);
        let (x0, y0, x1, y1) = (
            self.x0 as u32,
            self.y0 as u32,
            self.x1 as u32 - 1,
            self.y1 as u32 - 1,
        );
        FacadeObject {
            class_id: self.class_id,
            center: [self.x0 as f64 + w / 2.0, self.y0 as f64 + h / 2.0],
            size: [w, h],
            corners: [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            pixel_count: (w * h) as usize,
            component: 0,
            overlap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFacade {
    /// Input palette plus the vegetation class.
    pub palette: ClassPalette,
    pub truth: LabelMap,
    pub jittered: LabelMap,
    pub occluded: LabelMap,
    /// Objects of the perfect grid.
    pub objects: Vec<Rect>,
    pub jittered_objects: Vec<Rect>,
}

struct Ids {
    window: ClassId,
    wall: ClassId,
    door: ClassId,
    balcony: ClassId,
    roof: ClassId,
    shop: ClassId,
}

fn ids(palette: &ClassPalette) -> Result<Ids, SynthError> {
    let get = |n: &'static str| palette.id_of(n).ok_or(SynthError::MissingClass(n));
    Ok(Ids {
        window: get("window")?,
        wall: palette.wall_id(),
        door: get("door")?,
        balcony: get("balcony")?,
        roof: get("roof")?,
        shop: get("shop")?,
    })
}

/// Largest edge displacement jitter can cause, plus one pixel of rounding.
fn jitter_margin(sigma: f64) -> i64 {
    (4.5 * sigma).ceil() as i64 + 1
}

impl SynthSpec {
    fn wall_band(&self) -> (i64, i64) {
        (
            self.roof_height as i64,
            self.height as i64 - self.shop_height as i64,
        )
    }

    /// The perfect grid, checked to stay in the wall band and keep
    /// same-class objects apart under maximal jitter.
    pub fn layout(&self, palette: &ClassPalette) -> Result<Vec<Rect>, SynthError> {
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("jitter {}", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(SynthError::InvalidSpec(format!(
                "occlusion {}",
                self.occlusion
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("empty image".into()));
        }
        let id = ids(palette)?;
        let [ww, wh] = self.window_size.map(|v| v as i64);
        let [sx, sy] = self.spacing.map(|v| v as i64);
        let (top, bottom) = self.wall_band();
        let grid_bottom = bottom - self.ground_height as i64;
        let (gw, gh) = (self.cols as i64 * sx, self.rows as i64 * sy);
        let ox = (self.width as i64 - gw) / 2;
        let oy = top + (grid_bottom - top - gh) / 2;
        if ox < 0 || grid_bottom - top < gh {
            return Err(SynthError::LayoutOverflow(format!(
                "{}x{} grid of spacing {:?} exceeds the wall area",
                self.rows, self.cols, self.spacing
            )));
        }

        let mut rects = Vec::new();
        for r in 0..self.rows as i64 {
            for c in 0..self.cols as i64 {
                let x0 = ox + c * sx + (sx - ww) / 2;
                let y0 = oy + r * sy + (sy - wh) / 2;
                rects.push(Rect {
                    class_id: id.window,
                    x0,
                    y0,
                    x1: x0 + ww,
                    y1: y0 + wh,
                });
            }
        }
        if self.balconies {
            let windows = rects.clone();
            for w in windows {
                rects.push(Rect {
                    class_id: id.balcony,
                    x0: w.x0 - 2,
                    y0: w.y1 + 1,
                    x1: w.x1 + 2,
                    y1: w.y1 + 1 + self.balcony_height as i64,
                });
            }
        }
        if self.door {
            let [dw, dh] = self.door_size.map(|v| v as i64);
            let x0 = (self.width as i64 - dw) / 2;
            let y1 = bottom - jitter_margin(self.jitter);
            rects.push(Rect {
                class_id: id.door,
                x0,
                y0: y1 - dh,
                x1: x0 + dw,
                y1,
            });
        }

        let m = jitter_margin(self.jitter);
        let min_side = rects
            .iter()
            .map(|r| (r.x1 - r.x0).min(r.y1 - r.y0))
            .min()
            .unwrap_or(i64::MAX);
        if (min_side as f64) < 3.0 * self.jitter + 2.0 {
            return Err(SynthError::LayoutOverflow(format!(
                "objects of side {min_side} px cannot absorb jitter {}",
                self.jitter
            )));
        }
        for (i, r) in rects.iter().enumerate() {
            let g = r.grow(m);
            if g.x0 < 0 || g.x1 > self.width as i64 || g.y0 < top || g.y1 > bottom {
                return Err(SynthError::LayoutOverflow(format!(
                    "object {i} leaves the wall band under jitter"
                )));
            }
            for (j, o) in rects.iter().enumerate().skip(i + 1) {
                let touching = if o.class_id == r.class_id {
                    g.overlaps(&o.grow(m))
                } else {
                    r.overlaps(o)
                };
                if touching {
                    return Err(SynthError::LayoutOverflow(format!(
                        "objects {i} and {j} collide"
                    )));
                }
            }
        }
        Ok(rects)
    }

    pub fn background(&self, palette: &ClassPalette) -> Result<LabelMap, SynthError> {
        let id = ids(palette)?;
        let mut map = LabelMap::filled(self.width, self.height, id.wall)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        let (w, h) = (self.width as i64, self.height as i64);
        map.fill_rect(0, 0, w, self.roof_height as i64, id.roof);
        map.fill_rect(0, h - self.shop_height as i64, w, h, id.shop);
        Ok(map)
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

fn truncated(rng: &mut ChaCha8Rng, normal: &Option<Normal<f64>>, sigma: f64) -> f64 {
    match normal {
        None => 0.0,
        Some(n) => loop {
            let v = n.sample(rng);
            if v.abs() <= 3.0 * sigma {
                break v;
            }
        },
    }
}

fn jitter_rect(r: &Rect, rng: &mut ChaCha8Rng, normal: &Option<Normal<f64>>, sigma: f64) -> Rect {
    let mut out = *r;
    let c = [(r.x0 + r.x1) as f64 / 2.0, (r.y0 + r.y1) as f64 / 2.0];
    let s = [(r.x1 - r.x0) as f64, (r.y1 - r.y0) as f64];
    let mut lo = [0i64; 2];
    let mut hi = [0i64; 2];
    for d in 0..2 {
        let cd = c[d] + truncated(rng, normal, sigma);
        let sd = s[d] + truncated(rng, normal, sigma);
        lo[d] = round_half_up(cd - sd / 2.0);
        hi[d] = round_half_up(cd + sd / 2.0).max(lo[d] + 1);
    }
    out.x0 = lo[0];
    out.y0 = lo[1];
    out.x1 = hi[0];
    out.y1 = hi[1];
    out
}

fn paint(background: &LabelMap, rects: &[Rect], window: ClassId) -> LabelMap {
    let mut map = background.clone();
    for r in rects.iter().filter(|r| r.class_id != window) {
        map.fill_rect(r.x0, r.y0, r.x1, r.y1, r.class_id);
    }
    for r in rects.iter().filter(|r| r.class_id == window) {
        map.fill_rect(r.x0, r.y0, r.x1, r.y1, window);
    }
    map
}

/// Covers exactly `floor(fraction * W * H)` pixels with random ellipses.
fn occlude(map: &LabelMap, fraction: f64, class: ClassId, rng: &mut ChaCha8Rng) -> LabelMap {
    let mut out = map.clone();
    let (w, h) = (map.width(), map.height());
    let target = (fraction * w as f64 * h as f64).floor() as usize;
    let mut covered = vec![false; (w * h) as usize];
    let mut count = 0usize;
    let side = w.min(h) as f64;
    while count < target {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let ax = rng.random_range(0.04..0.15) * side;
        let ay = rng.random_range(0.04..0.15) * side;
        let (x0, x1) = (
            (cx - ax).floor().max(0.0) as u32,
            ((cx + ax).ceil() as u32).min(w),
        );
        let (y0, y1) = (
            (cy - ay).floor().max(0.0) as u32,
            ((cy + ay).ceil() as u32).min(h),
        );
        'ellipse: for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / ax, (y as f64 + 0.5 - cy) / ay);
                let i = (y * w + x) as usize;
                if dx * dx + dy * dy <= 1.0 && !covered[i] {
                    covered[i] = true;
                    out.set(x, y, class);
                    count += 1;
                    if count == target {
                        break 'ellipse;
                    }
                }
            }
        }
    }
    out
}

/// Truth grid, its jittered version, and the jittered map under vegetation.
pub fn generate(spec: &SynthSpec, palette: &ClassPalette) -> Result<SynthFacade, SynthError> {
    let rects = spec.layout(palette)?;
    let id = ids(palette)?;
    let background = spec.background(palette)?;
    let truth = paint(&background, &rects, id.window);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = if spec.jitter > 0.0 {
        Some(Normal::new(0.0, spec.jitter).map_err(|e| SynthError::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    let jittered_rects: Vec<Rect> = rects
        .iter()
        .map(|r| jitter_rect(r, &mut rng, &normal, spec.jitter))
        .collect();
    let jittered = paint(&background, &jittered_rects, id.window);

    let palette = match palette.id_of(VEGETATION) {
        Some(_) => palette.clone(),
        None => palette
            .with_class(VEGETATION, VEGETATION_COLOR)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
    };
    let veg = palette.id_of(VEGETATION).expect("vegetation was added");
    let occluded = if spec.occlusion > 0.0 {
        occlude(&jittered, spec.occlusion, veg, &mut rng)
    } else {
        jittered.clone()
    };
    Ok(SynthFacade {
        palette,
        truth,
        jittered,
        occluded,
        objects: rects,
        jittered_objects: jittered_rects,
    })
}
