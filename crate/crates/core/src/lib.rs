//! Facade parsing toolkit: label maps, object extraction, translational
//! symmetry refinement, evaluation, detector losses, shape grammar and
//! procedural meshes.

pub mod eval;
pub mod grammar;
pub mod instances;
pub mod labelmap;
pub mod losses;
pub mod mesh;
pub mod pipeline;
pub mod raster;
pub mod symmetry;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    LabelMap(#[from] labelmap::LabelMapError),
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
    #[error(transparent)]
    Grammar(#[from] grammar::GrammarError),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
