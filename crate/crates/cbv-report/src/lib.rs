//! Cut-Report v1.0 data packages.
//!
//! A package is a directory holding `manifest.yaml` and the data files it lists.
//! Every data file is hashed (SHA-256 over raw bytes) and checked on load.
//! The PoV and Cut Summary documents are JSON, matrices and vectors are CSV.

pub mod clearing_spec;
pub mod csvio;
pub mod cut_summary;
pub mod disclosure;
pub mod error;
pub mod hash;
pub mod manifest;
pub mod package;
pub mod pov;

pub use cut_summary::{emit_cut_summary, CutSummaryDoc};
pub use disclosure::{render_disclosure_sheet, DisclosureInputs};
pub use error::{ReportError, Result};
pub use manifest::{Manifest, MANIFEST_VERSION};
pub use package::{emit_package, load_package, validate_directory, validate_package, Package};
pub use pov::{emit_pov, PovDoc, PovMetadata};
