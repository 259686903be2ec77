//! Run configuration and the end-to-end label map to mesh chain.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::grammar::{emit_grammar, GrammarConfig, GrammarDoc};
use crate::instances::{extract_instances, ExtractConfig, FacadeObject};
use crate::labelmap::{ClassPalette, ColorMatch, FacadeImage, LabelMap};
use crate::losses::{FocalParams, LossWeights, SizeLossMode, TargetConfig};
use crate::mesh::{build_mesh, BuiltMesh, MeshConfig, TemplateLibrary};
use crate::raster::{clear_objects, rasterize, DrawOrder, RasterWarning};
use crate::symmetry::{refine_layout, RefinedLayout, SymmetryConfig, TauMode};
use crate::Error;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    /// Object class names, painted first to last.
    pub draw_order: Option<Vec<String>>,
}

impl RasterConfig {
    pub fn order(&self, palette: &ClassPalette) -> Result<DrawOrder, Error> {
        Ok(match &self.draw_order {
            Some(names) => DrawOrder::from_names(names, palette)?,
            None => DrawOrder::default_for(palette),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Output stride R.
    pub stride: u32,
    pub size_mode: SizeLossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        let f = FocalParams::default();
        let w = LossWeights::default();
        Self {
            alpha: f.alpha,
            beta: f.beta,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            lambda4: w.lambda4,
            stride: TargetConfig::default().stride,
            size_mode: SizeLossMode::default(),
        }
    }
}

impl LossConfig {
    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
        }
    }

    pub fn targets(&self) -> TargetConfig {
        TargetConfig {
            stride: self.stride,
            ..TargetConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Palette JSON; the built-in ECP palette when absent.
    pub palette: Option<PathBuf>,
    pub color_match: ColorMatch,
    pub extract: ExtractConfig,
    pub symmetry: SymmetryConfig,
    pub raster: RasterConfig,
    pub grammar: GrammarConfig,
    pub mesh: MeshConfig,
    pub losses: LossConfig,
}

fn positive(name: &str, v: f64) -> Result<(), Error> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), Error> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.extract.min_area == 0 {
            return Err(Error::Config("extract.min_area must be at least 1".into()));
        }
        let s = &self.symmetry;
        positive("symmetry.gap_factor", s.gap_factor)?;
        if s.sigmoid_tau_mode == TauMode::Fixed {
            positive("symmetry.sigmoid_tau", s.sigmoid_tau)?;
        }
        if !s.sigmoid_shift.is_finite() {
            return Err(Error::Config(
                "symmetry.sigmoid_shift must be finite".into(),
            ));
        }
        positive("grammar.pixel_scale", self.grammar.pixel_scale)?;
        positive("grammar.gap_factor", self.grammar.gap_factor)?;
        for (name, c) in [
            ("grammar.glass", self.grammar.glass),
            ("grammar.fallback", self.grammar.fallback),
        ] {
            if c.iter().any(|v| !(0.0..=255.0).contains(v)) {
                return Err(Error::Config(format!(
                    "{name} components must lie in [0, 255]"
                )));
            }
        }
        self.mesh.validate()?;
        let l = &self.losses;
        non_negative("losses.alpha", l.alpha)?;
        non_negative("losses.beta", l.beta)?;
        for (name, v) in [
            ("losses.lambda1", l.lambda1),
            ("losses.lambda2", l.lambda2),
            ("losses.lambda3", l.lambda3),
            ("losses.lambda4", l.lambda4),
        ] {
            non_negative(name, v)?;
        }
        if l.stride == 0 {
            return Err(Error::Config("losses.stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything produced from one label map.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub objects: Vec<FacadeObject>,
    pub layout: RefinedLayout,
    /// Input with object pixels replaced by their surroundings.
    pub background: LabelMap,
    pub refined: LabelMap,
    pub raster_warnings: Vec<RasterWarning>,
    pub grammar: GrammarDoc,
    pub mesh: BuiltMesh,
}

/// Output of [`refine_map`].
#[derive(Debug, Clone)]
pub struct RefinedMap {
    pub objects: Vec<FacadeObject>,
    pub layout: RefinedLayout,
    pub background: LabelMap,
    pub refined: LabelMap,
    pub warnings: Vec<RasterWarning>,
}

/// Extract, refine and repaint the objects of `map`.
pub fn refine_map(
    map: &LabelMap,
    palette: &ClassPalette,
    config: &PipelineConfig,
) -> Result<RefinedMap, Error> {
    let objects = extract_instances(map, palette, &config.extract);
    let layout = refine_layout(&objects, &config.symmetry, (map.width(), map.height()));
    let background = clear_objects(map, palette)?;
    let (refined, warnings) =
        rasterize(&background, &layout.objects, &config.raster.order(palette)?);
    Ok(RefinedMap {
        objects,
        layout,
        background,
        refined,
        warnings,
    })
}

/// Label map to refined map, grammar and mesh.
pub fn reconstruct(
    map: &LabelMap,
    image: Option<&FacadeImage>,
    palette: &ClassPalette,
    config: &PipelineConfig,
    templates: &TemplateLibrary,
) -> Result<Reconstruction, Error> {
    config.validate()?;
    map.validate(palette)?;
    let RefinedMap {
        objects,
        layout,
        background,
        refined,
        warnings: raster_warnings,
    } = refine_map(map, palette, config)?;
    let grammar = emit_grammar(
        &layout.objects,
        &background,
        image,
        palette,
        &config.grammar,
    )?;
    let mesh = build_mesh(&grammar, templates, &config.mesh)?;
    Ok(Reconstruction {
        objects,
        layout,
        background,
        refined,
        raster_warnings,
        grammar,
        mesh,
    })
}
