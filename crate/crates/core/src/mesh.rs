//! Procedural mesh generation from a grammar document, plus OBJ/MTL export.
//!
//! Frame: X to the right, Y up, Z out of the facade plane (z = 0). Raster y
//! is flipped during placement. Templates are unit-cube meshes scaled to each
//! element; walls are plain slabs with elements overlapping them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{BandKind, Element, GrammarDoc};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("no template for class {0:?}")]
    MissingTemplate(String),
    #[error("element {class} has nonpositive size {w} x {h}")]
    NonpositiveSize { class: String, w: f64, h: f64 },
    #[error("invalid template {name}: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("template library: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid mesh parameter: {0}")]
    InvalidConfig(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Occupies `z in [-depth, 0]`.
    #[default]
    Inset,
    /// Occupies `z in [0, depth]`.
    Protrude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub class: String,
    /// Normalized to exactly `[0, 1]^3`.
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
    /// Extent along Z in meters.
    pub depth: f64,
    #[serde(default)]
    pub placement: Placement,
    /// Material name; defaults to the class.
    #[serde(default)]
    pub material: Option<String>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

/// Signed volume enclosed by a closed triangle set; positive for outward
/// winding.
pub fn signed_volume(vertices: &[[f64; 3]], triangles: &[[u32; 3]]) -> f64 {
    triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            let x = cross(b, c);
            (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / 6.0
        })
        .sum()
}

/// Axis-aligned box `lo..hi` as 8 vertices and 12 outward triangles, with
/// indices offset by `base`.
fn cuboid(lo: [f64; 3], hi: [f64; 3], base: u32) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let v = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
        .collect();
    let quads: [[u32; 4]; 6] = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let t = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .map(|t| t.map(|i| i + base))
        .collect();
    (v, t)
}

fn boxes(parts: &[([f64; 3], [f64; 3])]) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let (mut vs, mut ts) = (Vec::new(), Vec::new());
    for &(lo, hi) in parts {
        let (v, t) = cuboid(lo, hi, vs.len() as u32);
        vs.extend(v);
        ts.extend(t);
    }
    (vs, ts)
}

impl Template {
    pub fn unit_box(class: &str, depth: f64, placement: Placement) -> Self {
        let (vertices, triangles) = boxes(&[([0.0; 3], [1.0; 3])]);
        Self {
            class: class.to_string(),
            vertices,
            triangles,
            depth,
            placement,
            material: None,
        }
    }

    /// Inset box with a glass pane across the middle of its depth.
    pub fn window(depth: f64) -> Self {
        let mut t = Self::unit_box("window", depth, Placement::Inset);
        let b = t.vertices.len() as u32;
        t.vertices.extend([
            [0.0, 0.0, 0.5],
            [1.0, 0.0, 0.5],
            [1.0, 1.0, 0.5],
            [0.0, 1.0, 0.5],
        ]);
        t.triangles.extend([[b, b + 1, b + 2], [b, b + 2, b + 3]]);
        t
    }

    /// Protruding floor slab with three railing slats along the front edge.
    pub fn balcony(depth: f64) -> Self {
        let (vertices, triangles) = boxes(&[
            ([0.0, 0.0, 0.0], [1.0, 0.15, 1.0]),
            ([0.0, 0.15, 0.9], [0.06, 1.0, 1.0]),
            ([0.47, 0.15, 0.9], [0.53, 1.0, 1.0]),
            ([0.94, 0.15, 0.9], [1.0, 1.0, 1.0]),
        ]);
        Self {
            class: "balcony".into(),
            vertices,
            triangles,
            depth,
            placement: Placement::Protrude,
            material: None,
        }
    }

    /// Wedge rising from the eave at the facade plane to a ridge at the back.
    /// Its depth is set per placement from the band height and pitch.
    pub fn roof() -> Self {
        let vertices = vec![
            [0.0, 0.0, 0.0], // back bottom
            [0.0, 0.0, 1.0], // eave
            [0.0, 1.0, 0.0], // ridge
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
        ];
        let triangles = vec![
            [0, 1, 2],
            [3, 5, 4],
            [0, 3, 4],
            [0, 4, 1],
            [0, 2, 5],
            [0, 5, 3],
            [1, 4, 5],
            [1, 5, 2],
        ];
        Self {
            class: "roof".into(),
            vertices,
            triangles,
            depth: 1.0,
            placement: Placement::Inset,
            material: None,
        }
    }

    pub fn material(&self) -> &str {
        self.material.as_deref().unwrap_or(&self.class)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |reason: String| MeshError::InvalidTemplate {
            name: self.class.clone(),
            reason,
        };
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(bad(format!("depth {}", self.depth)));
        }
        for axis in 0..3 {
            let lo = self
                .vertices
                .iter()
                .map(|v| v[axis])
                .fold(f64::INFINITY, f64::min);
            let hi = self
                .vertices
                .iter()
                .map(|v| v[axis])
                .fold(f64::NEG_INFINITY, f64::max);
            if lo != 0.0 || hi != 1.0 {
                return Err(bad(format!(
                    "axis {axis} spans [{lo}, {hi}], expected [0, 1]"
                )));
            }
        }
        for t in &self.triangles {
            if t.iter().any(|&i| i as usize >= self.vertices.len()) {
                return Err(bad(format!("triangle {t:?} out of range")));
            }
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            if triangle_area(a, b, c) <= 1e-12 {
                return Err(bad(format!("degenerate triangle {t:?}")));
            }
        }
        Ok(())
    }
}

/// Templates keyed by class name.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary(BTreeMap<String, Template>);

impl TemplateLibrary {
    pub fn builtin(config: &MeshConfig) -> Self {
        let mut m = BTreeMap::new();
        for t in [
            Template::window(config.inset_depth),
            Template::unit_box("door", config.inset_depth, Placement::Inset),
            Template::balcony(config.balcony_depth),
            Template::roof(),
        ] {
            m.insert(t.class.clone(), t);
        }
        Self(m)
    }

    /// Built-ins overridden or extended by a JSON array of templates.
    pub fn with_overrides(mut self, json: &str) -> Result<Self, MeshError> {
        let extra: Vec<Template> = serde_json::from_str(json)?;
        for t in extra {
            t.validate()?;
            self.0.insert(t.class.clone(), t);
        }
        Ok(self)
    }

    pub fn get(&self, class: &str) -> Option<&Template> {
        self.0.get(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Overrides the grammar's pixel scale.
    pub pixel_scale: Option<f64>,
    /// Balconies smaller than this fraction of the median balcony area are
    /// dropped.
    pub balcony_fraction: f64,
    pub roof_pitch_deg: f64,
    pub inset_depth: f64,
    pub balcony_depth: f64,
    pub wall_thickness: f64,
    /// Optional JSON template library overriding the built-ins.
    pub templates: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            pixel_scale: None,
            balcony_fraction: 0.25,
            roof_pitch_deg: 30.0,
            inset_depth: 0.15,
            balcony_depth: 0.6,
            wall_thickness: 0.3,
            templates: None,
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |s: String| Err(MeshError::InvalidConfig(s));
        if let Some(s) = self.pixel_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("pixel_scale {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.balcony_fraction) {
            return bad(format!("balcony_fraction {}", self.balcony_fraction));
        }
        if !(self.roof_pitch_deg > 0.0 && self.roof_pitch_deg < 90.0) {
            return bad(format!("roof_pitch_deg {}", self.roof_pitch_deg));
        }
        for (name, v) in [
            ("inset_depth", self.inset_depth),
            ("balcony_depth", self.balcony_depth),
            ("wall_thickness", self.wall_thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshGroup {
    pub name: String,
    pub material: String,
    pub first_vertex: usize,
    pub vertex_count: usize,
    pub first_triangle: usize,
    pub triangle_count: usize,
    /// The element this group realizes, if any.
    pub element: Option<Element>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub groups: Vec<MeshGroup>,
}

/// A template scaled and translated into world space.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Scales `tpl` to `(w * s, h * s, depth)` and centers it on the element;
/// `facade_height` is in pixels.
pub fn place_template(
    tpl: &Template,
    element: &Element,
    pixel_scale: f64,
    facade_height: f64,
    depth: f64,
) -> Result<Fragment, MeshError> {
    if !(element.w > 0.0 && element.h > 0.0) {
        return Err(MeshError::NonpositiveSize {
            class: element.class.clone(),
            w: element.w,
            h: element.h,
        });
    }
    let s = pixel_scale;
    let x0 = (element.x - element.w / 2.0) * s;
    let y0 = (facade_height - element.y - element.h / 2.0) * s;
    let z0 = match tpl.placement {
        Placement::Inset => -depth,
        Placement::Protrude => 0.0,
    };
    let (sx, sy) = (element.w * s, element.h * s);
    Ok(Fragment {
        vertices: tpl
            .vertices
            .iter()
            .map(|v| [x0 + v[0] * sx, y0 + v[1] * sy, z0 + v[2] * depth])
            .collect(),
        triangles: tpl.triangles.clone(),
    })
}

impl Mesh {
    fn push(&mut self, name: String, material: &str, frag: Fragment, element: Option<Element>) {
        let base = self.vertices.len() as u32;
        self.groups.push(MeshGroup {
            name,
            material: material.to_string(),
            first_vertex: self.vertices.len(),
            vertex_count: frag.vertices.len(),
            first_triangle: self.triangles.len(),
            triangle_count: frag.triangles.len(),
            element,
        });
        self.vertices.extend(frag.vertices);
        self.triangles
            .extend(frag.triangles.into_iter().map(|t| t.map(|i| i + base)));
    }

    pub fn group_vertices(&self, g: &MeshGroup) -> &[[f64; 3]] {
        &self.vertices[g.first_vertex..g.first_vertex + g.vertex_count]
    }
}

/// Balconies dropped from the mesh, as `(floor index, element index)`.
pub fn small_balconies(grammar: &GrammarDoc, fraction: f64) -> Vec<(usize, usize)> {
    let mut areas: Vec<f64> = grammar
        .floors
        .iter()
        .flat_map(|f| f.elements.iter())
        .filter(|e| e.class == "balcony")
        .map(|e| e.w * e.h)
        .collect();
    if areas.is_empty() {
        return Vec::new();
    }
    areas.sort_by(f64::total_cmp);
    let n = areas.len();
    let median = if n % 2 == 1 {
        areas[n / 2]
    } else {
        (areas[n / 2 - 1] + areas[n / 2]) / 2.0
    };
    let mut out = Vec::new();
    for f in &grammar.floors {
        for (k, e) in f.elements.iter().enumerate() {
            if e.class == "balcony" && e.w * e.h < fraction * median {
                out.push((f.index, k));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltMesh {
    pub mesh: Mesh,
    /// Elements left out, as `(floor index, element index)`.
    pub omitted: Vec<(usize, usize)>,
}

/// Wall slab per floor, then roof and shop bands, then one fragment per
/// retained element.
pub fn build_mesh(
    grammar: &GrammarDoc,
    templates: &TemplateLibrary,
    config: &MeshConfig,
) -> Result<BuiltMesh, MeshError> {
    config.validate()?;
    let s = config.pixel_scale.unwrap_or(grammar.pixel_scale);
    if !(s > 0.0 && s.is_finite()) {
        return Err(MeshError::InvalidConfig(format!("pixel_scale {s}")));
    }
    let [w, h] = grammar.extent.map(|v| v as f64);
    let mut mesh = Mesh::default();

    let slab = |y_top: f64, y_bottom: f64, depth: f64| {
        let (v, t) = cuboid(
            [0.0, (h - y_bottom) * s, -depth],
            [w * s, (h - y_top) * s, 0.0],
            0,
        );
        Fragment {
            vertices: v,
            triangles: t,
        }
    };
    for f in &grammar.floors {
        mesh.push(
            format!("floor_{}", f.index),
            "wall",
            slab(f.y_top, f.y_bottom, config.wall_thickness),
            None,
        );
    }
    if let Some(b) = grammar.band(BandKind::Roof) {
        let tpl = templates
            .get("roof")
            .ok_or_else(|| MeshError::MissingTemplate("roof".into()))?;
        let band = Element {
            class: "roof".into(),
            x: w / 2.0,
            y: (b.y_top + b.y_bottom) / 2.0,
            w,
            h: b.y_bottom - b.y_top,
        };
        let run = band.h * s / config.roof_pitch_deg.to_radians().tan();
        mesh.push(
            "roof".into(),
            tpl.material(),
            place_template(tpl, &band, s, h, run)?,
            None,
        );
    }
    if let Some(b) = grammar.band(BandKind::Shop) {
        mesh.push(
            "shop".into(),
            "shop",
            slab(b.y_top, b.y_bottom, config.wall_thickness),
            None,
        );
    }

    let omitted = small_balconies(grammar, config.balcony_fraction);
    for f in &grammar.floors {
        for (k, e) in f.elements.iter().enumerate() {
            if omitted.contains(&(f.index, k)) {
                continue;
            }
            let tpl = templates
                .get(&e.class)
                .ok_or_else(|| MeshError::MissingTemplate(e.class.clone()))?;
            let frag = place_template(tpl, e, s, h, tpl.depth)?;
            mesh.push(
                format!("floor{}_{}_{}", f.index, e.class, k),
                tpl.material(),
                frag,
                Some(e.clone()),
            );
        }
    }
    Ok(BuiltMesh { mesh, omitted })
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// OBJ text; `mtllib` names the sibling material file.
pub fn obj_string(mesh: &Mesh, mtllib: &str) -> String {
    let mut out = String::new();
    writeln!(out, "mtllib {mtllib}").unwrap();
    for g in &mesh.groups {
        writeln!(out, "o {}", g.name).unwrap();
        writeln!(out, "usemtl {}", g.material).unwrap();
        for v in mesh.group_vertices(g) {
            writeln!(
                out,
                "v {} {} {}",
                fmt_num(v[0]),
                fmt_num(v[1]),
                fmt_num(v[2])
            )
            .unwrap();
        }
        for t in &mesh.triangles[g.first_triangle..g.first_triangle + g.triangle_count] {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
    }
    out
}

/// MTL text with one entry per material used by the mesh; unknown materials
/// get mid gray.
pub fn mtl_string(mesh: &Mesh, materials: &BTreeMap<String, [f64; 3]>) -> String {
    let used: std::collections::BTreeSet<&str> =
        mesh.groups.iter().map(|g| g.material.as_str()).collect();
    let mut out = String::new();
    for name in used {
        let rgb = materials.get(name).copied().unwrap_or([128.0; 3]);
        let kd = rgb.map(|c| fmt_num((c / 255.0).clamp(0.0, 1.0)));
        writeln!(out, "newmtl {name}").unwrap();
        writeln!(out, "Kd {} {} {}", kd[0], kd[1], kd[2]).unwrap();
        writeln!(out).unwrap();
    }
    out
}

/// Writes `path` and a `.mtl` next to it; returns the MTL path.
pub fn export_obj(
    mesh: &Mesh,
    materials: &BTreeMap<String, [f64; 3]>,
    path: &Path,
) -> Result<PathBuf, MeshError> {
    let mtl_path = path.with_extension("mtl");
    let mtl_name = mtl_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model.mtl".into());
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| MeshError::Io { path: p, source }
    };
    std::fs::write(path, obj_string(mesh, &mtl_name)).map_err(io(path))?;
    std::fs::write(&mtl_path, mtl_string(mesh, materials)).map_err(io(&mtl_path))?;
    Ok(mtl_path)
}
