//! Camera pose import and trajectory metrics.

pub mod colmap;
pub mod trajectory;

pub use colmap::{import_colmap, export_colmap, ColmapImport, PoseEntry, PoseSequence, SparsePoint, SparsePoints};
pub use trajectory::{ate, rpe, AteResult, RpeResult};
