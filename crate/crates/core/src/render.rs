//! Top-down drawing of boxes on a BEV canvas.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use crate::dataset::{write_ppm, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{Detection, OrientedBox};

pub const DEFAULT_CANVAS: usize = 384;
const BACKGROUND: [u8; 3] = [24, 24, 28];
const EGO: [u8; 3] = [235, 235, 235];
const PREDICTED: [u8; 3] = [70, 200, 90];
const TRUTH: [u8; 3] = [235, 150, 40];
const SEPARATOR: [u8; 3] = [255, 255, 255];
const GAP: usize = 4;

/// The ego vehicle: canonical-sized, centered, facing the image top.
fn ego_box() -> OrientedBox {
    OrientedBox {
        cx: 0.5,
        cy: 0.5,
        width: 0.06,
        height: 0.03,
        theta: -FRAC_PI_2,
    }
}

/// Fill every pixel whose center lies inside the rotated rectangle, one
/// scanline at a time. Spans are half-open so abutting boxes never share pixels.
pub fn fill_box(img: &mut RgbImage, b: &OrientedBox, color: [u8; 3]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let corners = b.corners().map(|(x, y)| (x * w, y * h));
    let ymin = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let ymax = corners
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let r0 = (ymin - 0.5).ceil().max(0.0) as usize;
    let r1 = ((ymax - 0.5).ceil() - 1.0).min(h - 1.0);
    if r1 < r0 as f64 {
        return;
    }
    for row in r0..=r1 as usize {
        let yc = row as f64 + 0.5;
        let mut xs = Vec::with_capacity(2);
        for i in 0..4 {
            let (a, c) = (corners[i], corners[(i + 1) % 4]);
            if (a.1 <= yc) != (c.1 <= yc) {
                xs.push(a.0 + (yc - a.1) * (c.0 - a.0) / (c.1 - a.1));
            }
        }
        if xs.len() < 2 {
            continue;
        }
        let (lo, hi) = (xs[0].min(xs[1]), xs[0].max(xs[1]));
        let c0 = (lo - 0.5).ceil().max(0.0) as usize;
        let c1 = ((hi - 0.5).ceil() - 1.0).min(w - 1.0);
        if c1 < c0 as f64 {
            continue;
        }
        for col in c0..=c1 as usize {
            img.put(row, col, color);
        }
    }
}

fn panel(boxes: &[OrientedBox], color: [u8; 3], size: usize) -> RgbImage {
    let mut img = RgbImage::filled(size, size, BACKGROUND);
    for b in boxes {
        fill_box(&mut img, b, color);
    }
    fill_box(&mut img, &ego_box(), EGO);
    img
}

/// BEV image of the detections; with ground truth, a two-panel image
/// (detections | ground truth) split by a white bar.
pub fn render_bev(dets: &[Detection], gt: Option<&[OrientedBox]>, size: usize) -> RgbImage {
    let pred: Vec<OrientedBox> = dets.iter().map(|d| d.bbox).collect();
    let left = panel(&pred, PREDICTED, size);
    let Some(gt) = gt else {
        return left;
    };
    let right = panel(gt, TRUTH, size);
    let mut out = RgbImage::filled(2 * size + GAP, size, SEPARATOR);
    out.blit(&left, 0, 0);
    out.blit(&right, 0, size + GAP);
    out
}

/// Write as PPM, or PNG when the extension is `png`.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    let png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !png {
        return write_ppm(path, img);
    }
    let buf = image::RgbImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.as_raw().to_vec(),
    )
    .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}
