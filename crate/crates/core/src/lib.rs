//! Healing logic for the self-healing proxy: error intelligence, HTML and
//! script rewrites, strategy selection, the error store, trace archives and
//! outcome evaluation.

pub mod intel;
pub mod js;
pub mod model;
pub mod html;
pub mod monitor;
pub mod engine;
pub mod store;
pub mod archive;
pub mod eval;
