//! Synthetic surround-view scenes.
//!
//! Each vehicle is drawn as one anti-aliased marker rectangle in the tile of
//! the camera whose 45 degree sector contains the vehicle's bearing. Tiles are
//! painted in camera orientation; [`assemble_mosaic`] applies the bottom-row
//! rotation afterwards.
//!
//! Placement inside a tile uses a virtual pinhole set back behind the ego
//! vehicle by [`CAMERA_SETBACK`]. With forward distance `f = r cos(delta)`,
//! lateral offset `l = r sin(delta)` and depth `d = f + CAMERA_SETBACK`:
//!
//! - column `u = T * (0.5 + U_GAIN * atan2(l, d))`, which grows with the
//!   bearing offset `delta` (exactly proportional along the optical axis),
//! - row `v = T * (V_OFFSET + V_GAIN / d)` and marker half-width
//!   `T * SIZE_GAIN / d`, both affine in inverse depth.
//!
//! The setback keeps every partial derivative bounded near the ego vehicle,
//! so a 0.01 BEV shift moves the marker by under 3.5 pixels at `T = 64`.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::mosaic::{assemble_mosaic, Camera, Layout, MosaicFrame};
use super::GroundTruthFrame;
use crate::error::{Error, Result};
use crate::geometry::{iou_aabb, Aabb, OrientedBox};

pub const EGO_EXCLUSION_RADIUS: f64 = 0.06;
pub const MAX_VEHICLES_PER_FRAME: usize = 8;
pub const DEFAULT_TILE_SIZE: usize = 64;
/// Every synthetic vehicle has this `(width, height)`.
pub const VEHICLE_SIZE: (f64, f64) = (0.10, 0.045);

pub const CAMERA_SETBACK: f64 = 0.3;
const U_GAIN: f64 = 1.1;
const SIZE_GAIN: f64 = 0.032;
const MARKER_ASPECT: f64 = 0.6;
/// Farthest range a vehicle center can have inside the unit square.
const FAR_RANGE: f64 = 0.71;
const NEAR_ROW: f64 = 0.9;
const FAR_ROW: f64 = 0.1;
/// Minimum gap between vehicle AABBs.
const SEPARATION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_vehicles: usize,
    pub tile_size: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles > MAX_VEHICLES_PER_FRAME {
            return Err(Error::Validation(format!(
                "n_vehicles {} exceeds the per-frame maximum {MAX_VEHICLES_PER_FRAME}",
                self.n_vehicles
            )));
        }
        if self.tile_size < 16 {
            return Err(Error::Validation(format!(
                "tile_size {} is below 16",
                self.tile_size
            )));
        }
        Ok(())
    }
}

/// Continuous marker geometry in tile pixel coordinates (pixel `(i, j)`
/// covers `[j, j + 1] x [i, i + 1]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerGeom {
    /// Column of the center.
    pub u: f64,
    /// Row of the center.
    pub v: f64,
    pub half_w: f64,
    pub half_h: f64,
}

/// Range and clockwise bearing in `[0, 2 pi)` of a BEV point from the ego.
pub fn polar(cx: f64, cy: f64) -> (f64, f64) {
    let (dx, dy) = (cx - 0.5, cy - 0.5);
    let bearing = dx.atan2(-dy).rem_euclid(TAU);
    (dx.hypot(dy), bearing)
}

/// Camera whose sector contains `bearing`. A bearing exactly on a sector
/// boundary belongs to the lower camera id.
pub fn sector_of(bearing: f64) -> Camera {
    let f = (bearing.rem_euclid(TAU) + FRAC_PI_8) / FRAC_PI_4;
    let k = f.floor();
    let mut id = k as usize;
    if f == k && id > 0 {
        id -= 1;
    }
    Camera::from_id(id % 8).expect("sector index is in 0..8")
}

/// Signed angle from the camera's optical axis, in `[-pi/8, pi/8]`.
pub fn bearing_offset(bearing: f64, cam: Camera) -> f64 {
    let d = (bearing - cam.bearing()).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

fn depth_bounds() -> (f64, f64) {
    (
        CAMERA_SETBACK + EGO_EXCLUSION_RADIUS * FRAC_PI_8.cos(),
        CAMERA_SETBACK + FAR_RANGE,
    )
}

/// Marker placement for a vehicle at `range` and `offset` from its camera.
pub fn marker_placement(range: f64, offset: f64, tile_size: usize) -> MarkerGeom {
    let t = tile_size as f64;
    let (along, lateral) = (range * offset.cos(), range * offset.sin());
    let depth = along + CAMERA_SETBACK;
    let (near, far) = depth_bounds();
    let v_gain = (NEAR_ROW - FAR_ROW) / (1.0 / near - 1.0 / far);
    let v_offset = NEAR_ROW - v_gain / near;
    let half_w = t * SIZE_GAIN / depth;
    let half_h = half_w * MARKER_ASPECT;
    let u = t * (0.5 + U_GAIN * lateral.atan2(depth));
    let v = t * (v_offset + v_gain / depth);
    MarkerGeom {
        u: u.clamp(half_w, t - half_w),
        v: v.clamp(half_h, t - half_h),
        half_w,
        half_h,
    }
}

/// Marker color: blue marks presence, red/green carry `cos 2theta`, `sin 2theta`.
pub fn heading_color(theta: f64) -> [f64; 3] {
    let (s, c) = (2.0 * theta).sin_cos();
    [127.5 + 127.5 * c, 127.5 + 127.5 * s, 255.0]
}

fn background(seed: u64, cam: Camera, t: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + cam.id() as u64);
    let k = cam.id() as f64;
    let base = [28.0 + 9.0 * k, 78.0 - 6.0 * k, 18.0 + 3.0 * k];
    let mut px = Vec::with_capacity(t * t);
    for r in 0..t {
        let sky = 22.0 * (1.0 - r as f64 / t as f64);
        for _ in 0..t {
            let n: f64 = rng.random_range(-4.0..4.0);
            px.push([base[0] + sky + n, base[1] + sky + n, base[2] + sky + n]);
        }
    }
    px
}

fn paint_marker(px: &mut [[f64; 3]], t: usize, m: &MarkerGeom, color: [f64; 3]) {
    let (x0, x1) = (m.u - m.half_w, m.u + m.half_w);
    let (y0, y1) = (m.v - m.half_h, m.v + m.half_h);
    let rows = (y0.floor().max(0.0) as usize)..(y1.ceil().min(t as f64) as usize);
    for i in rows {
        let cy = (y1.min(i as f64 + 1.0) - y0.max(i as f64)).max(0.0);
        let cols = (x0.floor().max(0.0) as usize)..(x1.ceil().min(t as f64) as usize);
        for j in cols {
            let cx = (x1.min(j as f64 + 1.0) - x0.max(j as f64)).max(0.0);
            let a = cx * cy;
            let p = &mut px[i * t + j];
            for c in 0..3 {
                p[c] = p[c] * (1.0 - a) + color[c] * a;
            }
        }
    }
}

fn to_image(px: &[[f64; 3]], t: usize) -> RgbImage {
    let data = px
        .iter()
        .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    RgbImage::from_raw(t, t, data).expect("buffer sized for the tile")
}

/// Render a mosaic for given ground-truth vehicles. `seed` fixes the
/// background noise so that renders of different vehicle sets differ only
/// at the markers.
pub fn paint_vehicles(
    seed: u64,
    vehicles: &[OrientedBox],
    tile_size: usize,
) -> Result<MosaicFrame> {
    let t = tile_size;
    let mut tiles: Vec<Vec<[f64; 3]>> = Camera::ALL
        .iter()
        .map(|&c| background(seed, c, t))
        .collect();
    // Far markers first so nearer ones paint over them.
    let mut order: Vec<(f64, Camera, f64, &OrientedBox)> = vehicles
        .iter()
        .map(|b| {
            let (r, bearing) = polar(b.cx, b.cy);
            let cam = sector_of(bearing);
            (r, cam, bearing_offset(bearing, cam), b)
        })
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (r, cam, off, b) in order {
        let m = marker_placement(r, off, t);
        paint_marker(&mut tiles[cam.id()], t, &m, heading_color(b.theta));
    }
    let images: Vec<RgbImage> = tiles.iter().map(|px| to_image(px, t)).collect();
    assemble_mosaic(&images, &Layout::default())
}

fn sample_heading(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    let base = if u < 0.35 {
        PI / 2.0
    } else if u < 0.7 {
        -PI / 2.0
    } else if u < 0.85 {
        0.0
    } else {
        PI
    };
    base + rng.random_range(-0.3..0.3)
}

fn inflate(a: Aabb, by: f64) -> Aabb {
    Aabb {
        xmin: a.xmin - by,
        ymin: a.ymin - by,
        xmax: a.xmax + by,
        ymax: a.ymax + by,
    }
}

/// Seeded random vehicles: centers outside the ego disk, boxes inside the
/// unit square and pairwise separated.
pub fn sample_vehicles(spec: &SceneSpec) -> Result<Vec<OrientedBox>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<OrientedBox> = Vec::with_capacity(spec.n_vehicles);
    let mut attempts = 0;
    while out.len() < spec.n_vehicles {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Validation(format!(
                "could not place {} vehicles for seed {}",
                spec.n_vehicles, spec.seed
            )));
        }
        let theta = sample_heading(&mut rng);
        let (cx, cy): (f64, f64) = (rng.random(), rng.random());
        let b = OrientedBox::new(cx, cy, VEHICLE_SIZE.0, VEHICLE_SIZE.1, theta)?;
        if polar(cx, cy).0 < EGO_EXCLUSION_RADIUS || !b.inside_unit_square() {
            continue;
        }
        let grown = inflate(b.to_aabb(), SEPARATION / 2.0);
        if out
            .iter()
            .any(|o| iou_aabb(&inflate(o.to_aabb(), SEPARATION / 2.0), &grown) > 0.0)
        {
            continue;
        }
        out.push(b);
    }
    Ok(out)
}

pub fn frame_id(seed: u64) -> String {
    format!("{seed:08}")
}

/// Generate one synthetic frame and its ground truth.
pub fn synth_scene(spec: &SceneSpec) -> Result<(MosaicFrame, GroundTruthFrame)> {
    let vehicles = sample_vehicles(spec)?;
    let mosaic = paint_vehicles(spec.seed, &vehicles, spec.tile_size)?;
    let truth = GroundTruthFrame {
        frame_id: frame_id(spec.seed),
        vehicles,
    };
    Ok((mosaic, truth))
}
