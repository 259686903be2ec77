use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use facade_core::eval::{confusion, AblationReport, ConfusionCounts, EvalReport};
use facade_core::grammar::{emit_grammar, GrammarDoc};
use facade_core::instances::{extract_instances, InstancesDoc};
use facade_core::labelmap::{load_labelmap, save_labelmap, ClassPalette, FacadeImage, LabelMap};
use facade_core::losses::losses_check;
use facade_core::mesh::{build_mesh, export_obj, TemplateLibrary};
use facade_core::pipeline::{reconstruct, PipelineConfig};
use facade_core::raster::{clear_objects, rasterize, RasterWarning};
use facade_core::symmetry::refine_layout;
use facade_core::synth::{generate, SynthSpec};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::args::*;
use crate::report::{write_json, Outcome};
use crate::ConfigError;

/// Resolved configuration shared by every command.
pub struct Context {
    pub config: PipelineConfig,
    pub palette: ClassPalette,
    pub seed: u64,
    /// `--seed` as given, so a synth spec keeps its own seed otherwise.
    pub explicit_seed: Option<u64>,
}

impl Context {
    pub fn load(common: &CommonArgs) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => {
                let text = read_input(path)?;
                toml::from_str(&text)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(p) = &common.palette {
            config.palette = Some(p.clone());
        }
        if common.nearest_color {
            config.color_match = facade_core::labelmap::ColorMatch::Nearest;
        }
        let palette = match &config.palette {
            Some(path) => {
                require(path)?;
                facade_core::labelmap::load_palette(path)
                    .with_context(|| format!("palette {}", path.display()))?
            }
            None => ClassPalette::ecp_default(),
        };
        Ok(Self {
            config,
            palette,
            seed: common.seed.unwrap_or(0),
            explicit_seed: common.seed,
        })
    }

    /// Validates after command flags have been folded in.
    pub fn validate(&self) -> Result<()> {
        self.config
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    fn load_map(&self, path: &Path) -> Result<LabelMap> {
        require(path)?;
        load_labelmap(path, &self.palette, self.config.color_match)
            .with_context(|| format!("label map {}", path.display()))
    }

    fn templates(&self) -> Result<TemplateLibrary> {
        let lib = TemplateLibrary::builtin(&self.config.mesh);
        match &self.config.mesh.templates {
            Some(path) => {
                let text = read_input(path)?;
                lib.with_overrides(&text)
                    .with_context(|| format!("templates {}", path.display()))
            }
            None => Ok(lib),
        }
    }
}

/// Missing or unreadable inputs.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(InputError(format!("input not found: {}", path.display())).into());
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    require(path)?;
    std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())).into())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_map(map: &LabelMap, palette: &ClassPalette, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_labelmap(map, palette, path).with_context(|| format!("writing {}", path.display()))
}

fn raster_warnings(out: &mut Outcome, warnings: &[RasterWarning], palette: &ClassPalette) {
    for w in warnings {
        out.warn(json!({
            "warning": "raster",
            "object": w.object,
            "class": palette.name(w.class_id),
            "reason": w.reason,
        }));
    }
}

fn apply_symmetry(config: &mut PipelineConfig, flags: &SymmetryFlags) {
    if let Some(v) = flags.gap_factor {
        config.symmetry.gap_factor = v;
    }
    if let Some(v) = flags.sigmoid_shift {
        config.symmetry.sigmoid_shift = v;
    }
}

fn apply_mesh(config: &mut PipelineConfig, flags: &MeshFlags) {
    if flags.pixel_scale.is_some() {
        config.mesh.pixel_scale = flags.pixel_scale;
    }
    if let Some(v) = flags.balcony_fraction {
        config.mesh.balcony_fraction = v;
    }
    if let Some(v) = flags.roof_pitch {
        config.mesh.roof_pitch_deg = v;
    }
    if flags.templates.is_some() {
        config.mesh.templates = flags.templates.clone();
    }
}

/// Folds command-specific flags into the config before validation.
pub fn apply_flags(ctx: &mut Context, command: &Command) {
    let c = &mut ctx.config;
    match command {
        Command::Extract(a) => {
            if let Some(v) = a.min_area {
                c.extract.min_area = v;
            }
        }
        Command::Refine(a) => apply_symmetry(c, &a.flags),
        Command::Grammar(a) => {
            if let Some(v) = a.pixel_scale {
                c.grammar.pixel_scale = v;
            }
        }
        Command::Mesh(a) => apply_mesh(c, &a.flags),
        Command::Reconstruct(a) => {
            apply_symmetry(c, &a.symmetry);
            apply_mesh(c, &a.mesh);
        }
        _ => {}
    }
}

pub fn run(ctx: &Context, command: &Command) -> Result<Outcome> {
    match command {
        Command::Extract(a) => extract(ctx, a),
        Command::Refine(a) => refine(ctx, a),
        Command::Rasterize(a) => rasterize_cmd(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Grammar(a) => grammar(ctx, a),
        Command::Mesh(a) => mesh(ctx, a),
        Command::Synth(a) => synth(ctx, a),
        Command::LossesCheck(a) => check_losses(ctx, a),
        Command::Reconstruct(a) => reconstruct_cmd(ctx, a),
    }
}

fn extract(ctx: &Context, a: &ExtractArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let map = ctx.load_map(&a.input)?;
    let objects = extract_instances(&map, &ctx.palette, &ctx.config.extract);
    for (i, o) in objects.iter().enumerate().filter(|(_, o)| o.overlap) {
        out.warn(json!({"warning": "overlap", "object": i, "class": ctx.palette.name(o.class_id)}));
    }
    out.metrics = json!({"objects": objects.len()});
    write_json(
        &a.out,
        &InstancesDoc {
            width: map.width(),
            height: map.height(),
            objects,
        },
    )?;
    out.input("labelmap", &a.input);
    out.output("instances", &a.out);
    Ok(out)
}

fn refine(ctx: &Context, a: &RefineArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let doc: InstancesDoc = read_json(&a.input)?;
    let layout = refine_layout(&doc.objects, &ctx.config.symmetry, (doc.width, doc.height));
    let symmetry_path = a
        .symmetry
        .clone()
        .unwrap_or_else(|| a.out.with_extension("symmetry.json"));
    write_json(
        &a.out,
        &InstancesDoc {
            objects: layout.objects.clone(),
            ..doc
        },
    )?;
    write_json(&symmetry_path, &layout.report())?;
    out.metrics = json!({"groups": layout.groups.len(), "classes": layout.classes});
    out.input("instances", &a.input);
    out.output("instances", &a.out);
    out.output("symmetry", &symmetry_path);
    Ok(out)
}

fn rasterize_cmd(ctx: &Context, a: &RasterizeArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let doc: InstancesDoc = read_json(&a.input)?;
    let map = ctx.load_map(&a.background)?;
    if (map.width(), map.height()) != (doc.width, doc.height) {
        bail!(
            "background is {}x{} but instances were extracted from {}x{}",
            map.width(),
            map.height(),
            doc.width,
            doc.height
        );
    }
    let background = clear_objects(&map, &ctx.palette)?;
    let order = ctx.config.raster.order(&ctx.palette)?;
    let (painted, warnings) = rasterize(&background, &doc.objects, &order);
    raster_warnings(&mut out, &warnings, &ctx.palette);
    save_map(&painted, &ctx.palette, &a.out)?;
    out.metrics = json!({"objects": doc.objects.len()});
    out.input("instances", &a.input);
    out.input("background", &a.background);
    out.output("labelmap", &a.out);
    Ok(out)
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    require(dir)?;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

struct Scored {
    name: String,
    after: ConfusionCounts,
    before: Option<ConfusionCounts>,
}

fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let names = png_names(&a.truth)?;
    if names.is_empty() {
        return Err(InputError(format!("no PNG files in {}", a.truth.display())).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()?;
    let score_one = |name: &String| -> Result<Scored> {
        let truth = ctx.load_map(&a.truth.join(name))?;
        let pred = ctx.load_map(&a.pred.join(name))?;
        let after = confusion(&pred, &truth, &ctx.palette).with_context(|| name.clone())?;
        let before = match &a.ablation {
            Some(dir) => {
                let raw = ctx.load_map(&dir.join(name))?;
                Some(confusion(&raw, &truth, &ctx.palette).with_context(|| name.clone())?)
            }
            None => None,
        };
        Ok(Scored {
            name: name.clone(),
            after,
            before,
        })
    };
    let scored: Vec<Scored> =
        pool.install(|| names.par_iter().map(score_one).collect::<Result<_>>())?;

    let n = ctx.palette.len();
    let (mut after, mut before) = (ConfusionCounts::zeros(n), ConfusionCounts::zeros(n));
    let mut per_image = Vec::new();
    for s in &scored {
        after.merge(&s.after)?;
        let after_miou = EvalReport::from_counts(&s.after, &ctx.palette).miou;
        match &s.before {
            Some(b) => {
                before.merge(b)?;
                let before_miou = EvalReport::from_counts(b, &ctx.palette).miou;
                per_image.push(
                    json!({"name": s.name, "before_miou": before_miou, "after_miou": after_miou}),
                );
            }
            None => per_image.push(json!({"name": s.name, "miou": after_miou})),
        }
    }
    let after_report = EvalReport::from_counts(&after, &ctx.palette);
    let report = match &a.ablation {
        Some(_) => {
            let r = AblationReport::from_reports(
                EvalReport::from_counts(&before, &ctx.palette),
                after_report,
            );
            print!("{}", r.table());
            json!({"images": per_image, "ablation": r})
        }
        None => {
            print!("{}", after_report.table());
            json!({"images": per_image, "evaluation": after_report})
        }
    };
    if let Some(path) = &a.json {
        write_json(path, &report)?;
        out.output("json", path);
    }
    out.input("pred", &a.pred);
    out.input("truth", &a.truth);
    if let Some(dir) = &a.ablation {
        out.input("ablation", dir);
    }
    out.metrics = report;
    Ok(out)
}

fn load_photo(path: Option<&PathBuf>) -> Result<Option<FacadeImage>> {
    path.map(|p| {
        require(p)?;
        FacadeImage::load_png(p).with_context(|| format!("image {}", p.display()))
    })
    .transpose()
}

fn grammar(ctx: &Context, a: &GrammarArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let map = ctx.load_map(&a.input)?;
    let objects = match &a.instances {
        Some(path) => {
            out.input("instances", path);
            read_json::<InstancesDoc>(path)?.objects
        }
        None => {
            let raw = extract_instances(&map, &ctx.palette, &ctx.config.extract);
            refine_layout(&raw, &ctx.config.symmetry, (map.width(), map.height())).objects
        }
    };
    let photo = load_photo(a.image.as_ref())?;
    let background = clear_objects(&map, &ctx.palette)?;
    let doc = emit_grammar(
        &objects,
        &background,
        photo.as_ref(),
        &ctx.palette,
        &ctx.config.grammar,
    )?;
    write_json(&a.out, &doc)?;
    out.metrics = json!({"floors": doc.floors.len(), "elements": doc.element_count()});
    out.input("labelmap", &a.input);
    if let Some(p) = &a.image {
        out.input("image", p);
    }
    out.output("grammar", &a.out);
    Ok(out)
}

fn mesh_metrics(built: &facade_core::mesh::BuiltMesh) -> Value {
    json!({
        "groups": built.mesh.groups.len(),
        "vertices": built.mesh.vertices.len(),
        "triangles": built.mesh.triangles.len(),
        "omitted_balconies": built.omitted.len(),
    })
}

fn mesh(ctx: &Context, a: &MeshArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let text = read_input(&a.input)?;
    let doc =
        GrammarDoc::from_json(&text).with_context(|| format!("grammar {}", a.input.display()))?;
    let built = build_mesh(&doc, &ctx.templates()?, &ctx.config.mesh)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mtl = export_obj(&built.mesh, &doc.materials, &a.out)?;
    out.metrics = mesh_metrics(&built);
    out.input("grammar", &a.input);
    out.output("obj", &a.out);
    out.output("mtl", &mtl);
    Ok(out)
}

fn synth(ctx: &Context, a: &SynthArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut spec = match &a.spec {
        Some(path) => {
            out.input("spec", path);
            read_json::<SynthSpec>(path).map_err(|e| ConfigError(format!("{e:#}")))?
        }
        None => SynthSpec::default(),
    };
    let fields = [
        (a.width, &mut spec.width),
        (a.height, &mut spec.height),
        (a.rows, &mut spec.rows),
        (a.cols, &mut spec.cols),
    ];
    for (flag, field) in fields {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(v) = a.jitter {
        spec.jitter = v;
    }
    if let Some(v) = a.occlusion {
        spec.occlusion = v;
    }
    if let Some(seed) = ctx.explicit_seed {
        spec.seed = seed;
    }
    let facade = generate(&spec, &ctx.palette).map_err(|e| ConfigError(e.to_string()))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, map) in [
        ("truth", &facade.truth),
        ("jittered", &facade.jittered),
        ("occluded", &facade.occluded),
    ] {
        let path = a.out.join(format!("{name}.png"));
        save_map(map, &facade.palette, &path)?;
        out.output(name, &path);
    }
    let spec_path = a.out.join("spec.json");
    write_json(&spec_path, &spec)?;
    out.output("spec", &spec_path);
    let palette_path = a.out.join("palette.json");
    std::fs::write(&palette_path, facade.palette.to_json() + "\n")?;
    out.output("palette", &palette_path);
    out.metrics = json!({"objects": facade.objects.len(), "seed": spec.seed});
    Ok(out)
}

fn check_losses(ctx: &Context, a: &LossesCheckArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    if a.points == 0 {
        return Err(ConfigError("--points must be at least 1".into()).into());
    }
    if let Some(e) = a.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(ConfigError(format!("--epsilon must be positive, got {e}")).into());
        }
    }
    let rows = losses_check(
        ctx.seed,
        a.points,
        a.epsilon,
        a.tolerance,
        ctx.config.losses.focal(),
    );
    println!(
        "{:<14} {:>7} {:>8} {:>8} {:>12}  result",
        "loss", "points", "checked", "skipped", "max rel err"
    );
    for r in &rows {
        println!(
            "{:<14} {:>7} {:>8} {:>8} {:>12.3e}  {}",
            r.loss.name(),
            r.points,
            r.checked,
            r.skipped,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.loss.name())
        .collect();
    if !failed.is_empty() {
        out.failed = Some(format!("gradient check failed for {}", failed.join(", ")));
    }
    out.metrics = json!({"seed": ctx.seed, "tolerance": a.tolerance, "rows": rows});
    Ok(out)
}

fn reconstruct_cmd(ctx: &Context, a: &ReconstructArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    let map = ctx.load_map(&a.input)?;
    let photo = load_photo(a.image.as_ref())?;
    let templates = ctx.templates()?;
    let r = reconstruct(&map, photo.as_ref(), &ctx.palette, &ctx.config, &templates)?;
    raster_warnings(&mut out, &r.raster_warnings, &ctx.palette);
    for (i, o) in r.objects.iter().enumerate().filter(|(_, o)| o.overlap) {
        out.warn(json!({"warning": "overlap", "object": i, "class": ctx.palette.name(o.class_id)}));
    }
    for (floor, k) in &r.mesh.omitted {
        out.warn(json!({"warning": "balcony omitted", "floor": floor, "element": k}));
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let refined = a.out.join("refined.png");
    save_map(&r.refined, &ctx.palette, &refined)?;
    let grammar = a.out.join("grammar.json");
    write_json(&grammar, &r.grammar)?;
    let obj = a.out.join("model.obj");
    let mtl = export_obj(&r.mesh.mesh, &r.grammar.materials, &obj)?;

    out.input("labelmap", &a.input);
    if let Some(p) = &a.image {
        out.input("image", p);
    }
    out.output("refined", &refined);
    out.output("grammar", &grammar);
    out.output("obj", &obj);
    out.output("mtl", &mtl);
    out.output("report", &a.out.join("report.json"));
    let changed = r
        .refined
        .data()
        .iter()
        .zip(map.data())
        .filter(|(p, q)| p != q)
        .count();
    out.metrics = json!({
        "objects": r.objects.len(),
        "changed_pixels": changed,
        "symmetry": r.layout.report(),
        "floors": r.grammar.floors.len(),
        "elements": r.grammar.element_count(),
        "mesh": mesh_metrics(&r.mesh),
    });
    Ok(out)
}
