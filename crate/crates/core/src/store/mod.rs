pub mod ply;
pub mod splm;
