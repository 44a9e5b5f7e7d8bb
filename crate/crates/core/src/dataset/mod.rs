//! Camera mosaics, ground truth and synthetic data.

pub mod image;
pub mod mosaic;
pub mod store;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

pub use image::{decode_ppm, encode_ppm, read_ppm, rotate180, write_ppm, RgbImage};
pub use mosaic::{assemble_mosaic, extract_tile, Camera, Layout, MosaicFrame, TilePlacement};
pub use store::{
    generate_dataset, load_dataset, write_dataset, Dataset, Frame, Manifest, DATASET_VERSION,
};
pub use synth::{
    marker_placement, paint_vehicles, polar, sector_of, synth_scene, SceneSpec, DEFAULT_TILE_SIZE,
    EGO_EXCLUSION_RADIUS, MAX_VEHICLES_PER_FRAME, VEHICLE_SIZE,
};

/// Vehicles of one frame in normalized BEV coordinates. The ego sits at
/// `(0.5, 0.5)` and faces the image top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame_id: String,
    pub vehicles: Vec<OrientedBox>,
}

impl GroundTruthFrame {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.vehicles.iter().enumerate() {
            b.validate().map_err(|e| {
                Error::Validation(format!("frame {} vehicle {i}: {e}", self.frame_id))
            })?;
            if !b.inside_unit_square() {
                return Err(Error::Validation(format!(
                    "frame {} vehicle {i} extends outside the unit square",
                    self.frame_id
                )));
            }
        }
        Ok(())
    }
}
