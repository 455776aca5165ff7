//! Natural-cities toolkit: extraction of urban clusters from night-time light
//! rasters and street networks, head/tail classification, power-law fitting
//! and cross-source comparison.

pub mod calib;
pub mod cluster;
pub mod compare;
pub mod geometry;
pub mod headtail;
pub mod io;
pub mod pipeline;
pub mod rastergrid;
pub mod scaling;
pub mod streetnet;
