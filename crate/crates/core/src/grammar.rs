//! Floor-structured shape grammar built from a refined layout.
//!
//! Floors are not annotated in any facade dataset, so they are inferred from
//! rows of windows: each floor runs from halfway to the window row above to
//! halfway to the row below, clipped to the wall band. The rule is recorded
//! in the document's `floor_rule` field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::FacadeObject;
use crate::labelmap::{ClassId, ClassPalette, FacadeImage, LabelMap};
use crate::symmetry::{group_objects, Axis};

pub const GRAMMAR_VERSION: &str = "v1";
pub const FLOOR_RULE: &str = "window-rows";

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("facade has no wall band between the roof and shop bands")]
    MissingWallBand,
    #[error("image is {image:?} but label map is {map:?}")]
    SizeMismatch { image: (u32, u32), map: (u32, u32) },
    #[error("pixel_scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("invalid grammar: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Sky,
    Roof,
    Wall,
    Shop,
}

/// Horizontal strip `[y_top, y_bottom)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub kind: BandKind,
    pub y_top: f64,
    pub y_bottom: f64,
}

/// Element four-tuple: center `(x, y)` and size `(w, h)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub class: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Element {
    pub fn from_object(obj: &FacadeObject, palette: &ClassPalette) -> Self {
        Self {
            class: palette.name(obj.class_id).to_string(),
            x: obj.center[0],
            y: obj.center[1],
            w: obj.size[0],
            h: obj.size[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    /// 0 is the ground floor.
    pub index: usize,
    pub y_top: f64,
    pub y_bottom: f64,
    pub elements: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarDoc {
    pub version: String,
    /// `(W, H)` in pixels.
    pub extent: [u32; 2],
    /// Meters per pixel.
    pub pixel_scale: f64,
    pub floor_rule: String,
    /// Mean RGB (0-255) per class name.
    pub materials: BTreeMap<String, [f64; 3]>,
    /// Non-empty bands, top to bottom.
    pub bands: Vec<Band>,
    /// Ground floor first.
    pub floors: Vec<Floor>,
}

impl GrammarDoc {
    pub fn band(&self, kind: BandKind) -> Option<&Band> {
        self.bands.iter().find(|b| b.kind == kind)
    }

    pub fn element_count(&self) -> usize {
        self.floors.iter().map(|f| f.elements.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GrammarError> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| GrammarError::Invalid(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if !(self.pixel_scale > 0.0 && self.pixel_scale.is_finite()) {
            return Err(GrammarError::InvalidScale(self.pixel_scale));
        }
        if self.version != GRAMMAR_VERSION {
            return Err(GrammarError::Invalid(format!(
                "unsupported version {}",
                self.version
            )));
        }
        for (k, f) in self.floors.iter().enumerate() {
            if f.index != k {
                return Err(GrammarError::Invalid(format!(
                    "floor {k} has index {}",
                    f.index
                )));
            }
            if f.y_top >= f.y_bottom {
                return Err(GrammarError::Invalid(format!("floor {k} is empty")));
            }
            if k > 0 && f.y_bottom > self.floors[k - 1].y_top {
                return Err(GrammarError::Invalid(format!(
                    "floor {k} overlaps floor {}",
                    k - 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub pixel_scale: f64,
    /// Row-grouping threshold for windows, as in symmetry grouping.
    pub gap_factor: f64,
    /// Window material.
    pub glass: [f64; 3],
    /// Material of classes absent from the image.
    pub fallback: [f64; 3],
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            pixel_scale: 0.05,
            gap_factor: 0.5,
            glass: [70.0, 130.0, 180.0],
            fallback: [128.0, 128.0, 128.0],
        }
    }
}

/// Majority non-object class of each row; rows made only of object pixels
/// count as wall. Ties go to the smaller id.
fn row_classes(map: &LabelMap, palette: &ClassPalette) -> Vec<ClassId> {
    let mut votes = vec![0u32; palette.len()];
    (0..map.height())
        .map(|y| {
            votes.fill(0);
            for x in 0..map.width() {
                let c = map.get(x, y);
                if !palette.is_object(c) {
                    votes[c as usize] += 1;
                }
            }
            let (best, n) = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("palette is non-empty");
            if *n == 0 {
                palette.wall_id()
            } else {
                best as ClassId
            }
        })
        .collect()
}

/// Sky rows at the top, then roof or chimney rows, then the wall, then shop
/// rows at the bottom.
pub fn detect_bands(map: &LabelMap, palette: &ClassPalette) -> Result<Vec<Band>, GrammarError> {
    let rows = row_classes(map, palette);
    let is = |c: ClassId, names: &[&str]| names.iter().any(|n| palette.id_of(n) == Some(c));
    let h = rows.len();
    let sky_end = rows.iter().take_while(|&&c| is(c, &["sky"])).count();
    let roof_end = sky_end
        + rows[sky_end..]
            .iter()
            .take_while(|&&c| is(c, &["roof", "chimney", "sky"]))
            .count();
    let shop_len = rows[roof_end..]
        .iter()
        .rev()
        .take_while(|&&c| is(c, &["shop"]))
        .count();
    let shop_start = h - shop_len;
    if shop_start <= roof_end {
        return Err(GrammarError::MissingWallBand);
    }
    let mut bands = Vec::new();
    let mut push = |kind, a: usize, b: usize| {
        if b > a {
            bands.push(Band {
                kind,
                y_top: a as f64,
                y_bottom: b as f64,
            });
        }
    };
    push(BandKind::Sky, 0, sky_end);
    push(BandKind::Roof, sky_end, roof_end);
    push(BandKind::Wall, roof_end, shop_start);
    push(BandKind::Shop, shop_start, h);
    Ok(bands)
}

/// Floors of the wall band from window rows, each holding the objects whose
/// center falls inside it. Objects outside the wall band go to the nearest
/// floor.
pub fn derive_floors(
    objects: &[FacadeObject],
    map: &LabelMap,
    palette: &ClassPalette,
    config: &GrammarConfig,
) -> Result<Vec<Floor>, GrammarError> {
    let bands = detect_bands(map, palette)?;
    let wall = bands
        .iter()
        .find(|b| b.kind == BandKind::Wall)
        .expect("detect_bands yields a wall");
    let (top, bottom) = (wall.y_top, wall.y_bottom);

    let window = palette.id_of("window");
    let mut row_ys: Vec<f64> = group_objects(objects, Axis::Horizontal, config.gap_factor)
        .iter()
        .filter(|g| Some(g.class_id) == window)
        .map(|g| {
            g.members.iter().map(|&i| objects[i].center[1]).sum::<f64>() / g.members.len() as f64
        })
        .filter(|y| *y > top && *y < bottom)
        .collect();
    row_ys.sort_by(f64::total_cmp);

    // boundaries top to bottom
    let mut cuts = vec![top];
    for pair in row_ys.windows(2) {
        cuts.push((pair[0] + pair[1]) / 2.0);
    }
    cuts.push(bottom);
    cuts.dedup();

    let mut floors: Vec<Floor> = cuts
        .windows(2)
        .rev()
        .enumerate()
        .map(|(index, c)| Floor {
            index,
            y_top: c[0],
            y_bottom: c[1],
            elements: Vec::new(),
        })
        .collect();

    for obj in objects {
        let y = obj.center[1];
        let k = floors
            .iter()
            .position(|f| y >= f.y_top && y < f.y_bottom)
            .unwrap_or(if y < top { floors.len() - 1 } else { 0 });
        floors[k].elements.push(Element::from_object(obj, palette));
    }
    Ok(floors)
}

/// Mean color per class name over the label map; windows take the glass
/// color and classes without pixels the fallback.
pub fn sample_materials(
    image: Option<&FacadeImage>,
    map: &LabelMap,
    palette: &ClassPalette,
    config: &GrammarConfig,
) -> Result<BTreeMap<String, [f64; 3]>, GrammarError> {
    let mut sums = vec![[0.0f64; 3]; palette.len()];
    let mut counts = vec![0u64; palette.len()];
    if let Some(img) = image {
        if (img.width(), img.height()) != (map.width(), map.height()) {
            return Err(GrammarError::SizeMismatch {
                image: (img.width(), img.height()),
                map: (map.width(), map.height()),
            });
        }
        for (rgb, &c) in img.data().iter().zip(map.data()) {
            let s = &mut sums[c as usize];
            for k in 0..3 {
                s[k] += rgb[k] as f64;
            }
            counts[c as usize] += 1;
        }
    }
    Ok(palette
        .entries()
        .iter()
        .map(|e| {
            let n = counts[e.id as usize];
            let color = if e.name == "window" {
                config.glass
            } else if n == 0 {
                config.fallback
            } else {
                sums[e.id as usize].map(|v| v / n as f64)
            };
            (e.name.clone(), color)
        })
        .collect())
}

/// `map` supplies the roof/shop bands and should have objects cleared;
/// `image`, when given, supplies materials.
pub fn emit_grammar(
    objects: &[FacadeObject],
    map: &LabelMap,
    image: Option<&FacadeImage>,
    palette: &ClassPalette,
    config: &GrammarConfig,
) -> Result<GrammarDoc, GrammarError> {
    if !(config.pixel_scale > 0.0 && config.pixel_scale.is_finite()) {
        return Err(GrammarError::InvalidScale(config.pixel_scale));
    }
    Ok(GrammarDoc {
        version: GRAMMAR_VERSION.to_string(),
        extent: [map.width(), map.height()],
        pixel_scale: config.pixel_scale,
        floor_rule: FLOOR_RULE.to_string(),
        materials: sample_materials(image, map, palette, config)?,
        bands: detect_bands(map, palette)?,
        floors: derive_floors(objects, map, palette, config)?,
    })
}
