//! Palette-encoded segmentation rasters.
//!
//! A [`LabelMap`] stores one class id per pixel. The [`ClassPalette`] maps
//! class ids to names and RGB colors and marks which classes are detectable
//! object instances (window, balcony, door). Rasters are read from and
//! written to lossless 8-bit RGB PNG.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = u8;
pub type Rgb = [u8; 3];

/// Palette shipped with the toolkit for ECP-style annotations.
///
/// The colors are a convention of this toolkit, not of any dataset release.
pub const ECP_PALETTE_JSON: &str = include_str!("../../../palettes/ecp.json");

#[derive(Debug, Error)]
pub enum LabelMapError {
    #[error("palette parse failure: {0}")]
    ParseFailure(String),
    #[error("duplicate class id {0}")]
    DuplicateId(ClassId),
    #[error("class ids must be contiguous from 0 (missing {0})")]
    NonContiguousIds(usize),
    #[error("duplicate palette color {0:?}")]
    DuplicateColor(Rgb),
    #[error("palette has no wall/background class")]
    MissingWall,
    #[error("palette has more than one wall/background class")]
    MultipleWalls,
    #[error("palette has more than 256 classes")]
    TooManyClasses,
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
    #[error("pixel ({x},{y}) color {color:?} is not a palette color")]
    UnmatchedColor { x: u32, y: u32, color: Rgb },
    #[error("pixel ({x},{y}) color {color:?} is equidistant from two palette colors")]
    AmbiguousColor { x: u32, y: u32, color: Rgb },
    #[error("raster must be at least 1x1, got {0}x{1}")]
    EmptyRaster(u32, u32),
    #[error("raster data length {got} does not match {width}x{height}")]
    BadLength { width: u32, height: u32, got: usize },
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One palette entry as it appears in the palette JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub color: Rgb,
    #[serde(rename = "object")]
    pub is_object_class: bool,
}

/// Validated class palette. Entries are stored in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ClassPalette {
    entries: Vec<ClassEntry>,
}

impl ClassPalette {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self, LabelMapError> {
        if entries.len() > 256 {
            return Err(LabelMapError::TooManyClasses);
        }
        let mut seen_ids = HashSet::new();
        let mut seen_colors = HashSet::new();
        for e in &entries {
            if !seen_ids.insert(e.id) {
                return Err(LabelMapError::DuplicateId(e.id));
            }
            if !seen_colors.insert(e.color) {
                return Err(LabelMapError::DuplicateColor(e.color));
            }
        }
        if let Some(missing) = (0..entries.len()).find(|&i| !seen_ids.contains(&(i as ClassId))) {
            return Err(LabelMapError::NonContiguousIds(missing));
        }
        let walls = entries.iter().filter(|e| is_wall_name(&e.name)).count();
        match walls {
            0 => return Err(LabelMapError::MissingWall),
            1 => {}
            _ => return Err(LabelMapError::MultipleWalls),
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.id);
        Ok(Self { entries })
    }

    pub fn from_json(text: &str) -> Result<Self, LabelMapError> {
        let entries: Vec<ClassEntry> =
            serde_json::from_str(text).map_err(|e| LabelMapError::ParseFailure(e.to_string()))?;
        Self::new(entries)
    }

    /// The 8-class ECP convention shipped in `palettes/ecp.json`.
    pub fn ecp_default() -> Self {
        Self::from_json(ECP_PALETTE_JSON).expect("bundled palette is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("palette serializes")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassEntry> {
        self.entries.get(id as usize)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn name(&self, id: ClassId) -> &str {
        self.get(id).map(|e| e.name.as_str()).unwrap_or("?")
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.entries
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
            .map(|e| e.id)
    }

    pub fn wall_id(&self) -> ClassId {
        self.entries
            .iter()
            .find(|e| is_wall_name(&e.name))
            .map(|e| e.id)
            .expect("validated palette has a wall class")
    }

    pub fn is_object(&self, id: ClassId) -> bool {
        self.get(id).is_some_and(|e| e.is_object_class)
    }

    pub fn object_classes(&self) -> Vec<ClassId> {
        self.entries
            .iter()
            .filter(|e| e.is_object_class)
            .map(|e| e.id)
            .collect()
    }

    /// Returns a copy with one more non-object class appended at the next id.
    pub fn with_class(&self, name: &str, color: Rgb) -> Result<Self, LabelMapError> {
        let mut entries = self.entries.clone();
        entries.push(ClassEntry {
            id: entries.len() as ClassId,
            name: name.to_string(),
            color,
            is_object_class: false,
        });
        Self::new(entries)
    }
}

fn is_wall_name(name: &str) -> bool {
    name.eq_ignore_ascii_case("wall") || name.eq_ignore_ascii_case("background")
}

pub fn load_palette(path: &Path) -> Result<ClassPalette, LabelMapError> {
    let text = std::fs::read_to_string(path)?;
    ClassPalette::from_json(&text)
}

/// Dense row-major grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<ClassId>,
}

impl LabelMap {
    pub fn filled(width: u32, height: u32, class: ClassId) -> Result<Self, LabelMapError> {
        if width == 0 || height == 0 {
            return Err(LabelMapError::EmptyRaster(width, height));
        }
        Ok(Self {
            width,
            height,
            data: vec![class; width as usize * height as usize],
        })
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<ClassId>) -> Result<Self, LabelMapError> {
        if width == 0 || height == 0 {
            return Err(LabelMapError::EmptyRaster(width, height));
        }
        if data.len() != width as usize * height as usize {
            return Err(LabelMapError::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> ClassId {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, class: ClassId) {
        let i = self.index(x, y);
        self.data[i] = class;
    }

    /// Fills the half-open pixel rectangle `[x0,x1) x [y0,y1)`, clipped to the map.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, class: ClassId) {
        let (w, h) = (self.width as i64, self.height as i64);
        let (x0, x1) = (x0.clamp(0, w), x1.clamp(0, w));
        let (y0, y1) = (y0.clamp(0, h), y1.clamp(0, h));
        for y in y0..y1 {
            let row = y as usize * self.width as usize;
            self.data[row + x0 as usize..row + x1 as usize].fill(class);
        }
    }

    /// Checks that every cell holds a class id known to `palette`.
    pub fn validate(&self, palette: &ClassPalette) -> Result<(), LabelMapError> {
        match self.data.iter().find(|&&c| !palette.contains(c)) {
            Some(&c) => Err(LabelMapError::UnknownClass(c)),
            None => Ok(()),
        }
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }
}

/// Row-major RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacadeImage {
    width: u32,
    height: u32,
    data: Vec<Rgb>,
}

impl FacadeImage {
    pub fn from_vec(width: u32, height: u32, data: Vec<Rgb>) -> Result<Self, LabelMapError> {
        if width == 0 || height == 0 {
            return Err(LabelMapError::EmptyRaster(width, height));
        }
        if data.len() != width as usize * height as usize {
            return Err(LabelMapError::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[Rgb] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn load_png(path: &Path) -> Result<Self, LabelMapError> {
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0).collect();
        Self::from_vec(w, h, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), LabelMapError> {
        let flat: Vec<u8> = self.data.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width, self.height, flat)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// How pixel colors are matched against palette colors when decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMatch {
    /// Every pixel must equal a palette color.
    #[default]
    Exact,
    /// Nearest palette color by squared RGB distance; exact ties are errors.
    Nearest,
}

fn sq_dist(a: Rgb, b: Rgb) -> u32 {
    a.iter()
        .zip(b.iter())
        .map(|(&p, &q)| {
            let d = p as i32 - q as i32;
            (d * d) as u32
        })
        .sum()
}

pub fn decode_labelmap(
    image: &FacadeImage,
    palette: &ClassPalette,
    mode: ColorMatch,
) -> Result<LabelMap, LabelMapError> {
    let exact: HashMap<Rgb, ClassId> = palette.entries().iter().map(|e| (e.color, e.id)).collect();
    // Cache resolved colors; anti-aliased sources repeat a small set of colors.
    let mut cache: HashMap<Rgb, ClassId> = HashMap::new();
    let mut data = Vec::with_capacity(image.data.len());
    for (i, &color) in image.data.iter().enumerate() {
        if let Some(&id) = exact.get(&color).or_else(|| cache.get(&color)) {
            data.push(id);
            continue;
        }
        let x = (i % image.width as usize) as u32;
        let y = (i / image.width as usize) as u32;
        match mode {
            ColorMatch::Exact => return Err(LabelMapError::UnmatchedColor { x, y, color }),
            ColorMatch::Nearest => {
                let mut best: Option<(u32, ClassId)> = None;
                let mut tied = false;
                for e in palette.entries() {
                    let d = sq_dist(color, e.color);
                    match best {
                        Some((bd, _)) if d > bd => {}
                        Some((bd, _)) if d == bd => tied = true,
                        _ => {
                            best = Some((d, e.id));
                            tied = false;
                        }
                    }
                }
                if tied {
                    return Err(LabelMapError::AmbiguousColor { x, y, color });
                }
                let id = best.expect("palette is non-empty").1;
                cache.insert(color, id);
                data.push(id);
            }
        }
    }
    LabelMap::from_vec(image.width, image.height, data)
}

pub fn encode_labelmap(
    map: &LabelMap,
    palette: &ClassPalette,
) -> Result<FacadeImage, LabelMapError> {
    let data = map
        .data
        .iter()
        .map(|&c| {
            palette
                .get(c)
                .map(|e| e.color)
                .ok_or(LabelMapError::UnknownClass(c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    FacadeImage::from_vec(map.width, map.height, data)
}

pub fn load_labelmap(
    path: &Path,
    palette: &ClassPalette,
    mode: ColorMatch,
) -> Result<LabelMap, LabelMapError> {
    decode_labelmap(&FacadeImage::load_png(path)?, palette, mode)
}

pub fn save_labelmap(
    map: &LabelMap,
    palette: &ClassPalette,
    path: &Path,
) -> Result<(), LabelMapError> {
    encode_labelmap(map, palette)?.save_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: ClassId, name: &str, color: Rgb, object: bool) -> ClassEntry {
        ClassEntry {
            id,
            name: name.into(),
            color,
            is_object_class: object,
        }
    }

    #[test]
    fn ecp_palette_has_eight_classes_with_wall_at_one() {
        let p = ClassPalette::ecp_default();
        assert_eq!(p.len(), 8);
        assert_eq!(p.wall_id(), 1);
        let names: Vec<_> = p.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            ["window", "wall", "balcony", "door", "shop", "sky", "chimney", "roof"]
        );
        assert_eq!(p.object_classes(), vec![0, 2, 3]);
    }

    #[test]
    fn duplicate_color_rejected() {
        let r = ClassPalette::new(vec![
            entry(0, "window", [255, 0, 0], true),
            entry(1, "wall", [255, 0, 0], false),
        ]);
        assert!(matches!(r, Err(LabelMapError::DuplicateColor([255, 0, 0]))));
    }

    #[test]
    fn empty_file_is_parse_failure() {
        assert!(matches!(
            ClassPalette::from_json(""),
            Err(LabelMapError::ParseFailure(_))
        ));
    }

    #[test]
    fn missing_wall_and_gaps_rejected() {
        let r = ClassPalette::new(vec![entry(0, "window", [1, 0, 0], true)]);
        assert!(matches!(r, Err(LabelMapError::MissingWall)));
        let r = ClassPalette::new(vec![
            entry(0, "window", [1, 0, 0], true),
            entry(2, "wall", [2, 0, 0], false),
        ]);
        assert!(matches!(r, Err(LabelMapError::NonContiguousIds(1))));
        let r = ClassPalette::new(vec![
            entry(0, "wall", [1, 0, 0], false),
            entry(0, "roof", [2, 0, 0], false),
        ]);
        assert!(matches!(r, Err(LabelMapError::DuplicateId(0))));
    }

    #[test]
    fn palette_order_preserved_by_id() {
        let p = ClassPalette::new(vec![
            entry(1, "wall", [2, 0, 0], false),
            entry(0, "window", [1, 0, 0], true),
        ])
        .unwrap();
        assert_eq!(p.entries()[0].name, "window");
        let again = ClassPalette::from_json(&p.to_json()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn single_color_image_decodes_to_wall() {
        let p = ClassPalette::ecp_default();
        let img = FacadeImage::from_vec(3, 2, vec![[255, 255, 0]; 6]).unwrap();
        let m = decode_labelmap(&img, &p, ColorMatch::Exact).unwrap();
        assert!(m.data().iter().all(|&c| c == 1));
    }

    #[test]
    fn window_rectangle_decodes() {
        let p = ClassPalette::ecp_default();
        let mut px = vec![[255, 255, 0]; 5 * 4];
        for y in 1..3 {
            for x in 1..4 {
                px[y * 5 + x] = [255, 0, 0];
            }
        }
        let m = decode_labelmap(
            &FacadeImage::from_vec(5, 4, px).unwrap(),
            &p,
            ColorMatch::Exact,
        )
        .unwrap();
        assert_eq!(m.count(0), 6);
        assert_eq!(m.get(1, 1), 0);
        assert_eq!(m.get(0, 0), 1);
    }

    #[test]
    fn nearest_color_matches_brute_force_distances() {
        // 127 is 127 away from 0 and 128 away from 255, so black wins.
        let p = ClassPalette::new(vec![
            entry(0, "window", [255, 0, 0], true),
            entry(1, "wall", [0, 0, 0], false),
        ])
        .unwrap();
        let table: Vec<u32> = p
            .entries()
            .iter()
            .map(|e| sq_dist([127, 0, 0], e.color))
            .collect();
        assert_eq!(table, vec![16384, 16129]);
        let img = FacadeImage::from_vec(1, 1, vec![[127, 0, 0]]).unwrap();
        assert!(matches!(
            decode_labelmap(&img, &p, ColorMatch::Exact),
            Err(LabelMapError::UnmatchedColor { .. })
        ));
        let m = decode_labelmap(&img, &p, ColorMatch::Nearest).unwrap();
        assert_eq!(m.get(0, 0), 1);
    }

    #[test]
    fn equidistant_color_is_ambiguous() {
        let p = ClassPalette::new(vec![
            entry(0, "window", [254, 0, 0], true),
            entry(1, "wall", [0, 0, 0], false),
        ])
        .unwrap();
        let img = FacadeImage::from_vec(1, 1, vec![[127, 0, 0]]).unwrap();
        assert!(matches!(
            decode_labelmap(&img, &p, ColorMatch::Nearest),
            Err(LabelMapError::AmbiguousColor { x: 0, y: 0, .. })
        ));
    }

    #[test]
    fn unknown_class_rejected_on_encode() {
        let p = ClassPalette::ecp_default();
        let m = LabelMap::from_vec(2, 1, vec![1, 99]).unwrap();
        assert!(matches!(
            encode_labelmap(&m, &p),
            Err(LabelMapError::UnknownClass(99))
        ));
        assert!(matches!(
            m.validate(&p),
            Err(LabelMapError::UnknownClass(99))
        ));
    }

    #[test]
    fn all_wall_map_encodes_to_wall_color() {
        let p = ClassPalette::ecp_default();
        let m = LabelMap::filled(4, 4, 1).unwrap();
        let img = encode_labelmap(&m, &p).unwrap();
        assert!(img.data().iter().all(|&c| c == [255, 255, 0]));
    }

    #[test]
    fn zero_sized_raster_rejected() {
        assert!(LabelMap::filled(0, 3, 1).is_err());
    }

    #[test]
    fn png_round_trip_on_disk() {
        let p = ClassPalette::ecp_default();
        let mut m = LabelMap::filled(9, 7, 1).unwrap();
        m.fill_rect(2, 1, 5, 4, 0);
        m.fill_rect(0, 6, 9, 7, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        save_labelmap(&m, &p, &path).unwrap();
        assert_eq!(load_labelmap(&path, &p, ColorMatch::Exact).unwrap(), m);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(w in 1u32..12, h in 1u32..12, seed in proptest::collection::vec(0u8..8, 144)) {
            let p = ClassPalette::ecp_default();
            let data: Vec<ClassId> = (0..(w * h) as usize).map(|i| seed[i % seed.len()]).collect();
            let m = LabelMap::from_vec(w, h, data).unwrap();
            let img = encode_labelmap(&m, &p).unwrap();
            prop_assert_eq!(decode_labelmap(&img, &p, ColorMatch::Exact).unwrap(), m.clone());
            prop_assert_eq!(decode_labelmap(&img, &p, ColorMatch::Nearest).unwrap(), m);
        }
    }
}
