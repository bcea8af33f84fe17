//! Ranks single-lead f-wave extraction methods by how well features of the
//! extracted f-waves separate AF from non-AF windows.

pub mod config;
pub mod extract;
pub mod features;
pub mod filter;
pub mod ml;
pub mod pipeline;
pub mod qrs;
pub mod record;
pub mod rng;
pub mod sim;

pub use extract::{extract, ExtractParams, FwaveSignal, Method};
pub use features::{featurize_window, FeatureVector};
pub use filter::{preprocess, FilterSpec};
pub use qrs::{compute_bsqi, detect_qrs, detect_qrs_secondary, QrsAnnotations};
pub use record::{load_record, segment_windows, EcgRecord, Window};
