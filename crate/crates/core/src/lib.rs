//! Street context classification from street-level imagery.
//!
//! The crate covers the whole path from a street network to a trained
//! classifier and its explanations:
//!
//! - [`geodata`] reads GeoJSON and shapefile street segments;
//! - [`labeler`] assigns each segment a [`labeler::StreetContext`];
//! - [`sampler`] draws sample points and camera headings into a manifest;
//! - [`imagery`] fetches (or synthesizes) the paired images, with a disk cache;
//! - [`nn`] trains a small GAP-terminated CNN;
//! - [`cam`] renders class activation maps;
//! - [`tsne`] embeds penultimate features in the plane;
//! - [`eval`] splits data and scores predictions;
//! - [`pipeline`] and [`cli`] tie the stages together.

pub mod cam;
pub mod cli;
pub mod eval;
pub mod geodata;
pub mod imagery;
pub mod labeler;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod tsne;
pub mod util;
