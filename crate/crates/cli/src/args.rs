use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "facade")]
#[command(about = "Facade label maps to refined layouts, shape grammars and meshes")]
#[command(version)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML pipeline configuration; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Class palette JSON (built-in ECP palette by default)
    #[arg(long, global = true)]
    pub palette: Option<PathBuf>,

    /// Seed for randomized commands
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Write a machine-readable run summary here
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    /// Map off-palette colors to the nearest palette color
    #[arg(long, global = true)]
    pub nearest_color: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract object instances from a label map
    Extract(ExtractArgs),
    /// Refine instances with translational symmetry
    Refine(RefineArgs),
    /// Paint instances over a background label map
    Rasterize(RasterizeArgs),
    /// Score predicted label maps against ground truth
    Evaluate(EvaluateArgs),
    /// Emit a shape grammar from a label map
    Grammar(GrammarArgs),
    /// Build an OBJ/MTL model from a grammar
    Mesh(MeshArgs),
    /// Generate a synthetic facade
    Synth(SynthArgs),
    /// Gradient-check every detection loss
    LossesCheck(LossesCheckArgs),
    /// Label map to refined map, grammar and model in one go
    Reconstruct(ReconstructArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    pub input: PathBuf,

    #[arg(long, short)]
    pub out: PathBuf,

    /// Drop components smaller than this many pixels
    #[arg(long)]
    pub min_area: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SymmetryFlags {
    /// Row/column grouping tolerance, in median object extents
    #[arg(long)]
    pub gap_factor: Option<f64>,

    /// Shift of the logistic squashing
    #[arg(long)]
    pub sigmoid_shift: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Instances JSON from `extract`
    pub input: PathBuf,

    #[arg(long, short)]
    pub out: PathBuf,

    /// Symmetry report (default: next to the output, `.symmetry.json`)
    #[arg(long)]
    pub symmetry: Option<PathBuf>,

    #[command(flatten)]
    pub flags: SymmetryFlags,
}

#[derive(Args, Debug)]
pub struct RasterizeArgs {
    /// Instances JSON
    pub input: PathBuf,

    /// Label map whose non-object classes form the background
    #[arg(long)]
    pub background: PathBuf,

    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of predicted label maps
    pub pred: PathBuf,

    /// Directory of ground-truth label maps with the same file names
    pub truth: PathBuf,

    /// Unrefined predictions; turns the report into a before/after comparison
    #[arg(long)]
    pub ablation: Option<PathBuf>,

    /// Machine-readable report
    #[arg(long)]
    pub json: Option<PathBuf>,

    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct GrammarArgs {
    /// Label map
    pub input: PathBuf,

    /// Use these instances instead of extracting and refining the map
    #[arg(long)]
    pub instances: Option<PathBuf>,

    /// Facade photo for material colors
    #[arg(long)]
    pub image: Option<PathBuf>,

    #[arg(long, short)]
    pub out: PathBuf,

    /// Meters per pixel
    #[arg(long)]
    pub pixel_scale: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct MeshFlags {
    /// Meters per pixel (overrides the grammar)
    #[arg(long)]
    pub pixel_scale: Option<f64>,

    /// Omit balconies below this fraction of the median balcony area
    #[arg(long)]
    pub balcony_fraction: Option<f64>,

    /// Roof pitch in degrees
    #[arg(long)]
    pub roof_pitch: Option<f64>,

    /// JSON list of templates replacing the built-in ones by class
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    /// Grammar JSON
    pub input: PathBuf,

    /// OBJ path; the MTL file is written next to it
    #[arg(long, short)]
    pub out: PathBuf,

    #[command(flatten)]
    pub flags: MeshFlags,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Facade spec JSON; flags override its fields
    #[arg(long)]
    pub spec: Option<PathBuf>,

    #[arg(long)]
    pub width: Option<u32>,

    #[arg(long)]
    pub height: Option<u32>,

    #[arg(long)]
    pub rows: Option<u32>,

    #[arg(long)]
    pub cols: Option<u32>,

    /// Center/size jitter, in pixels
    #[arg(long)]
    pub jitter: Option<f64>,

    /// Fraction of the facade covered by vegetation
    #[arg(long)]
    pub occlusion: Option<f64>,

    /// Output directory
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LossesCheckArgs {
    /// Random interior points per loss
    #[arg(long, default_value_t = 20)]
    pub points: usize,

    /// Finite-difference step (per-loss default otherwise)
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Largest accepted relative gradient error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Label map
    pub input: PathBuf,

    /// Facade photo for material colors
    #[arg(long)]
    pub image: Option<PathBuf>,

    /// Output directory
    #[arg(long, short)]
    pub out: PathBuf,

    #[command(flatten)]
    pub symmetry: SymmetryFlags,

    #[command(flatten)]
    pub mesh: MeshFlags,
}
