//! On-disk dataset layout:
//!
//! ```text
//! DIR/manifest.json       {"version", "frame_count", "tile_size", "seed_range"}
//! DIR/frames/<id>.ppm     mosaic, binary PPM
//! DIR/labels/<id>.json    {"frame_id", "vehicles": [[cx, cy, width, height, theta], ...]}
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{read_ppm, write_ppm};
use super::mosaic::{Layout, MosaicFrame};
use super::synth::{synth_scene, SceneSpec, MAX_VEHICLES_PER_FRAME};
use super::GroundTruthFrame;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub frame_count: usize,
    pub tile_size: usize,
    /// Inclusive `[first, last]` generator seeds.
    pub seed_range: [u64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub mosaic: MosaicFrame,
    pub truth: GroundTruthFrame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Sorted by frame id.
    pub frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    frame_id: String,
    vehicles: Vec<[f64; 5]>,
}

/// `frames` synthetic frames with seeds `seed..seed + frames`; each frame
/// holds between 1 and `max_vehicles` vehicles.
pub fn generate_dataset(
    frames: usize,
    seed: u64,
    tile_size: usize,
    max_vehicles: usize,
) -> Result<Dataset> {
    if frames == 0 {
        return Err(Error::Validation("dataset needs at least one frame".into()));
    }
    if max_vehicles == 0 || max_vehicles > MAX_VEHICLES_PER_FRAME {
        return Err(Error::Validation(format!(
            "max_vehicles must be in 1..={MAX_VEHICLES_PER_FRAME}, got {max_vehicles}"
        )));
    }
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames as u64 {
        let s = seed + i;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        rng.set_stream(99);
        let spec = SceneSpec {
            seed: s,
            n_vehicles: rng.random_range(1..=max_vehicles),
            tile_size,
        };
        let (mosaic, truth) = synth_scene(&spec)?;
        out.push(Frame { mosaic, truth });
    }
    Ok(Dataset {
        manifest: Manifest {
            version: DATASET_VERSION,
            frame_count: frames,
            tile_size,
            seed_range: [seed, seed + frames as u64 - 1],
        },
        frames: out,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    let labels_dir = dir.join("labels");
    for d in [dir, &frames_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for f in &ds.frames {
        let id = &f.truth.frame_id;
        write_ppm(&frames_dir.join(format!("{id}.ppm")), &f.mosaic.image)?;
        let label = LabelFile {
            frame_id: id.clone(),
            vehicles: f
                .truth
                .vehicles
                .iter()
                .map(|b| [b.cx, b.cy, b.width, b.height, b.theta])
                .collect(),
        };
        write_json(&labels_dir.join(format!("{id}.json")), &label)?;
    }
    write_json(&dir.join("manifest.json"), &ds.manifest)
}

fn stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Parse one label file, validating every box.
pub fn load_labels(path: &Path) -> Result<GroundTruthFrame> {
    let label: LabelFile = read_json(path)?;
    let mut vehicles = Vec::with_capacity(label.vehicles.len());
    for (i, v) in label.vehicles.iter().enumerate() {
        let b = OrientedBox {
            cx: v[0],
            cy: v[1],
            width: v[2],
            height: v[3],
            theta: v[4],
        };
        b.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("vehicle {i}: {e}"),
        })?;
        vehicles.push(b);
    }
    let truth = GroundTruthFrame {
        frame_id: label.frame_id,
        vehicles,
    };
    truth.validate()?;
    Ok(truth)
}

/// Read and validate a mosaic image file against the canonical layout.
pub fn load_mosaic(path: &Path) -> Result<MosaicFrame> {
    MosaicFrame::from_image(read_ppm(path)?, &Layout::default()).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Load a dataset directory, failing on the first violated invariant.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Validation(format!(
            "unsupported dataset version {} (expected {DATASET_VERSION})",
            manifest.version
        )));
    }
    let frames_dir = dir.join("frames");
    let labels_dir = dir.join("labels");
    let images = stems(&frames_dir, "ppm")?;
    let labels = stems(&labels_dir, "json")?;
    if let Some(id) = images.symmetric_difference(&labels).next() {
        return Err(Error::Validation(format!(
            "frame {id} is missing its image or its label"
        )));
    }
    if images.len() != manifest.frame_count {
        return Err(Error::Validation(format!(
            "manifest lists {} frames but {} are present",
            manifest.frame_count,
            images.len()
        )));
    }
    let mut frames = Vec::with_capacity(images.len());
    for id in &images {
        let img_path: PathBuf = frames_dir.join(format!("{id}.ppm"));
        let mosaic = load_mosaic(&img_path)?;
        if mosaic.tile_size != manifest.tile_size {
            return Err(Error::Validation(format!(
                "{} has tile size {}, manifest says {}",
                img_path.display(),
                mosaic.tile_size,
                manifest.tile_size
            )));
        }
        let label_path = labels_dir.join(format!("{id}.json"));
        let truth = load_labels(&label_path)?;
        if &truth.frame_id != id {
            return Err(Error::Validation(format!(
                "{} declares frame_id {:?}",
                label_path.display(),
                truth.frame_id
            )));
        }
        frames.push(Frame { mosaic, truth });
    }
    Ok(Dataset { manifest, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_deep_equal() {
        let ds = generate_dataset(3, 40, 64, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn zero_width_label_rejected() {
        let ds = generate_dataset(1, 5, 32, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let p = dir.path().join("labels/00000005.json");
        let mut label: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        label["vehicles"][0][2] = serde_json::json!(0.0);
        fs::write(&p, label.to_string()).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("00000005.json") && err.contains("positive"),
            "{err}"
        );
    }

    #[test]
    fn count_mismatch_rejected() {
        let ds = generate_dataset(2, 1, 32, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("frames/00000002.ppm")).unwrap();
        fs::remove_file(dir.path().join("labels/00000002.json")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest lists 2"), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            "{\n  \"version\": 1,\n  oops\n}",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("manifest.json") && err.contains("line 3"),
            "{err}"
        );
    }
}
