//! Building blocks for turning a corpus of scanned signatures into a single
//! synthesized "collective" signature.
//!
//! The crate covers everything around the generative model itself:
//!
//! * [`imaging`] normalizes raw scans into fixed-canvas binary masks,
//! * [`dataset`] builds community-weighted sampling plans,
//! * [`safeguard`] screens generated samples against the training set,
//! * [`feedback`] records curator ratings and turns them into loss weights,
//! * [`vectorize`] fits b-splines to annotated anchors and schedules the
//!   animated signing,
//! * [`synth`] produces the synthetic squiggle corpus used for testing.

pub mod dataset;
pub mod error;
pub mod feedback;
pub mod imaging;
pub mod raster;
pub mod safeguard;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
pub use raster::{BinaryMask, Canvas, RasterImage};

/// Write `bytes` to `path` by way of a sibling temp file and a rename, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
