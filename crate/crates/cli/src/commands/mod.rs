pub mod aftershock;
pub mod etas;
pub mod foreshock;
pub mod magnitude;
pub mod precursor;
pub mod renewal;
pub mod spacetime;

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use seismostat::catalog::Catalog;

use crate::{read_catalog, Format};
use crate::settings::Settings;

#[derive(Args, Debug, Clone)]
pub struct CatalogArgs {
    /// Catalog file (CSV with columns time, lon, lat, depth_km, mag).
    #[arg(long)]
    pub catalog: PathBuf,
    /// Catalog file format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

impl CatalogArgs {
    pub fn load(&self, s: &mut Settings) -> Result<Catalog> {
        s.record("catalog", &self.catalog)?;
        s.record("format", &self.format)?;
        read_catalog(&self.catalog, self.format)
    }
}

/// Completeness magnitude for a catalog: explicit, else header, else the
/// smallest magnitude.
pub fn completeness(catalog: &Catalog, mc: Option<f64>) -> f64 {
    mc.or(catalog.mc).unwrap_or_else(|| catalog.events.iter().map(|e| e.mag).fold(f64::INFINITY, f64::min))
}
