//! The 3x3 surround-camera mosaic.
//!
//! Canonical layout (row, col):
//!
//! ```text
//!   front-left | front | front-right
//!   left       | blank | right
//!   rear-left  | rear  | rear-right     <- each tile rotated 180 degrees
//! ```

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::image::{rotate180, RgbImage};
use crate::error::{Error, Result};

/// Eight cameras at 45 degree intervals, numbered clockwise from the front.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    Front = 0,
    FrontRight = 1,
    Right = 2,
    RearRight = 3,
    Rear = 4,
    RearLeft = 5,
    Left = 6,
    FrontLeft = 7,
}

impl Camera {
    pub const ALL: [Camera; 8] = [
        Camera::Front,
        Camera::FrontRight,
        Camera::Right,
        Camera::RearRight,
        Camera::Rear,
        Camera::RearLeft,
        Camera::Left,
        Camera::FrontLeft,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Camera> {
        Camera::ALL.get(id).copied()
    }

    /// Optical-axis bearing, radians clockwise from the vehicle front.
    pub fn bearing(self) -> f64 {
        self.id() as f64 * FRAC_PI_4
    }

    pub fn name(self) -> &'static str {
        match self {
            Camera::Front => "front",
            Camera::FrontRight => "front-right",
            Camera::Right => "right",
            Camera::RearRight => "rear-right",
            Camera::Rear => "rear",
            Camera::RearLeft => "rear-left",
            Camera::Left => "left",
            Camera::FrontLeft => "front-left",
        }
    }
}

/// Where one camera's tile sits in the mosaic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlacement {
    pub camera_id: usize,
    pub grid_row: usize,
    pub grid_col: usize,
    pub rotated: bool,
}

/// Camera to mosaic cell assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    cells: [(usize, usize); 8],
}

impl Default for Layout {
    fn default() -> Self {
        let mut cells = [(0, 0); 8];
        for cam in Camera::ALL {
            cells[cam.id()] = match cam {
                Camera::FrontLeft => (0, 0),
                Camera::Front => (0, 1),
                Camera::FrontRight => (0, 2),
                Camera::Left => (1, 0),
                Camera::Right => (1, 2),
                Camera::RearLeft => (2, 0),
                Camera::Rear => (2, 1),
                Camera::RearRight => (2, 2),
            };
        }
        Layout { cells }
    }
}

impl Layout {
    /// Custom assignment; cells must be distinct, inside the 3x3 grid and
    /// avoid the blank center.
    pub fn new(cells: [(usize, usize); 8]) -> Result<Self> {
        for (i, &(r, c)) in cells.iter().enumerate() {
            if r > 2 || c > 2 || (r, c) == (1, 1) {
                return Err(Error::Validation(format!(
                    "camera {i} mapped to invalid cell ({r}, {c})"
                )));
            }
            if cells[..i].contains(&(r, c)) {
                return Err(Error::Validation(format!("cell ({r}, {c}) assigned twice")));
            }
        }
        Ok(Layout { cells })
    }

    pub fn cell(&self, cam: Camera) -> (usize, usize) {
        self.cells[cam.id()]
    }

    pub fn placements(&self) -> Vec<TilePlacement> {
        Camera::ALL
            .iter()
            .map(|&cam| {
                let (r, c) = self.cell(cam);
                TilePlacement {
                    camera_id: cam.id(),
                    grid_row: r,
                    grid_col: c,
                    rotated: r == 2,
                }
            })
            .collect()
    }
}

/// Assembled mosaic: `3 * tile_size` square, blank center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MosaicFrame {
    pub image: RgbImage,
    pub tile_size: usize,
    pub tile_map: Vec<TilePlacement>,
}

impl MosaicFrame {
    /// Wrap a decoded mosaic image, checking the blank-center invariant.
    pub fn from_image(image: RgbImage, layout: &Layout) -> Result<Self> {
        if image.width() != image.height() || !image.width().is_multiple_of(3) {
            return Err(Error::Validation(format!(
                "mosaic must be square with side divisible by 3, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let tile_size = image.width() / 3;
        let frame = MosaicFrame {
            image,
            tile_size,
            tile_map: layout.placements(),
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tile_size;
        if self.image.width() != 3 * t || self.image.height() != 3 * t {
            return Err(Error::Validation(
                "mosaic size does not match tile size".into(),
            ));
        }
        if !self.image.crop(t, t, t, t).is_all_zero() {
            return Err(Error::Validation("mosaic center cell is not blank".into()));
        }
        let rotated: Vec<_> = self.tile_map.iter().filter(|p| p.rotated).collect();
        if self.tile_map.len() != 8 || rotated.len() != 3 || rotated.iter().any(|p| p.grid_row != 2)
        {
            return Err(Error::Validation(
                "tile map must rotate exactly the bottom row".into(),
            ));
        }
        Ok(())
    }

    /// Channel-major `3 x H x W` values scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let (h, w) = (self.image.height(), self.image.width());
        let raw = self.image.as_raw();
        let mut out = vec![0.0; 3 * h * w];
        for i in 0..h * w {
            for c in 0..3 {
                out[c * h * w + i] = raw[i * 3 + c] as f64 / 255.0;
            }
        }
        out
    }
}

/// Place eight camera tiles (indexed by camera id) into the mosaic.
pub fn assemble_mosaic(tiles: &[RgbImage], layout: &Layout) -> Result<MosaicFrame> {
    if tiles.len() != 8 {
        return Err(Error::Validation(format!(
            "expected 8 camera tiles, got {}",
            tiles.len()
        )));
    }
    let t = tiles[0].width();
    if t == 0 {
        return Err(Error::Validation("empty camera tile".into()));
    }
    for (i, tile) in tiles.iter().enumerate() {
        if tile.width() != t || tile.height() != t {
            return Err(Error::Validation(format!(
                "tile {i} is {}x{}, expected {t}x{t}",
                tile.width(),
                tile.height()
            )));
        }
    }
    let mut image = RgbImage::new(3 * t, 3 * t);
    let tile_map = layout.placements();
    for p in &tile_map {
        let tile = &tiles[p.camera_id];
        if p.rotated {
            image.blit(&rotate180(tile), p.grid_row * t, p.grid_col * t);
        } else {
            image.blit(tile, p.grid_row * t, p.grid_col * t);
        }
    }
    Ok(MosaicFrame {
        image,
        tile_size: t,
        tile_map,
    })
}

/// Recover a camera's tile in its original (unrotated) orientation.
pub fn extract_tile(frame: &MosaicFrame, cam: Camera) -> RgbImage {
    let t = frame.tile_size;
    let p = frame.tile_map[cam.id()];
    let tile = frame.image.crop(p.grid_row * t, p.grid_col * t, t, t);
    if p.rotated {
        rotate180(&tile)
    } else {
        tile
    }
}
