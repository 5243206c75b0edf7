pub mod artifacts;
pub mod basis;
pub mod census;
pub mod diversity;
pub mod grid;
pub mod mixture;
pub mod selection;
pub mod smoothing;
pub mod spatial;
pub mod synth;
pub mod variogram;
