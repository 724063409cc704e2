//! Incremental structure from motion over perspective views sampled from panoramas.

mod incremental;
mod p3p;
mod recon;
mod tracks;
mod triangulate;
mod twoview;

pub use incremental::*;
pub use p3p::*;
pub use recon::*;
pub use tracks::*;
pub use triangulate::*;
pub use twoview::*;
