use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ybev_core::dataset::store::{load_labels, load_mosaic};
use ybev_core::dataset::{generate_dataset, load_dataset, write_dataset, DEFAULT_TILE_SIZE};
use ybev_core::eval::{evaluate_model, infer, EvalThresholds};
use ybev_core::model::load_checkpoint;
use ybev_core::render::{render_bev, save_image, DEFAULT_CANVAS};
use ybev_core::trainer::{grid_search, train};
use ybev_core::{Error, TrainConfig};

#[derive(Parser)]
#[command(
    name = "ybev",
    version,
    about = "Bird's-eye-view vehicle detection from 3x3 camera mosaics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset
    Generate {
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: usize,
        #[arg(long, default_value_t = 4)]
        max_vehicles: usize,
    },
    /// Train from a JSON config
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train once per learning rate and print the results table
    Gridsearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        lrs: Vec<f64>,
    },
    /// Print detections for one mosaic as JSON
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
    },
    /// Draw detections on a BEV canvas (PPM, or PNG by extension)
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add a ground-truth panel on the right
        #[arg(long)]
        side_by_side: bool,
        /// Label file; defaults to ../labels/<id>.json next to the frame
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
        #[arg(long, default_value_t = DEFAULT_CANVAS)]
        size: usize,
    },
    /// Score a checkpoint on a dataset and write a JSON report
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 2,
    }
}

fn check_unit(name: &str, v: f64) -> Result<(), Error> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "--{name} must be in [0, 1], got {v}"
        )))
    }
}

fn default_labels(frame: &Path) -> Option<PathBuf> {
    let stem = frame.file_stem()?;
    let dir = frame.parent()?.parent()?;
    Some(dir.join("labels").join(stem).with_extension("json"))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            frames,
            seed,
            out,
            tile_size,
            max_vehicles,
        } => {
            let ds = generate_dataset(frames, seed, tile_size, max_vehicles)?;
            write_dataset(&ds, &out)?;
            println!("wrote {frames} frames to {}", out.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let (ck, log) = train(&cfg)?;
            let last = log.records.last().expect("at least one step");
            println!(
                "trained {} steps: total {:.6} (bbox {:.6}, pos {:.6}, neg {:.6})",
                ck.step, last.total, last.l_bbox, last.l_pos_conf, last.l_neg_conf
            );
            if let Some(dir) = &cfg.out_dir {
                println!("checkpoint: {}", dir.join("final.ybev").display());
            }
        }
        Command::Gridsearch { config, lrs } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            cfg.validate()?;
            let ds = load_dataset(&cfg.dataset)?;
            let report = grid_search(&cfg, &ds, &lrs)?;
            print!("{}", report.to_table());
            match report.best_lr {
                Some(lr) => println!("best lr: {lr}"),
                None => println!("best lr: none (every run failed)"),
            }
            if let Some(dir) = &cfg.out_dir {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                write_text(&dir.join("gridsearch.json"), &(json + "\n"))?;
            }
        }
        Command::Infer {
            ckpt,
            frame,
            conf,
            nms,
        } => {
            check_unit("conf", conf)?;
            check_unit("nms", nms)?;
            let model = load_checkpoint(&ckpt)?.model;
            let dets = infer(&model, &load_mosaic(&frame)?, conf, nms)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&dets).expect("detections serialize")
            );
        }
        Command::Render {
            ckpt,
            frame,
            out,
            side_by_side,
            labels,
            conf,
            nms,
            size,
        } => {
            check_unit("conf", conf)?;
            check_unit("nms", nms)?;
            let model = load_checkpoint(&ckpt)?.model;
            let dets = infer(&model, &load_mosaic(&frame)?, conf, nms)?;
            let truth = if side_by_side {
                let path = labels.or_else(|| default_labels(&frame)).ok_or_else(|| {
                    Error::Validation("cannot locate labels; pass --labels".into())
                })?;
                Some(load_labels(&path)?.vehicles)
            } else {
                None
            };
            save_image(&render_bev(&dets, truth.as_deref(), size), &out)?;
            println!("{} detections drawn to {}", dets.len(), out.display());
        }
        Command::Eval {
            ckpt,
            dataset,
            report,
            conf,
            nms,
        } => {
            check_unit("conf", conf)?;
            check_unit("nms", nms)?;
            let model = load_checkpoint(&ckpt)?.model;
            let ds = load_dataset(&dataset)?;
            let t = EvalThresholds {
                confidence: conf,
                nms_iou: nms,
                ..EvalThresholds::default()
            };
            let m = evaluate_model(&model, &ds.frames, &t)?;
            let json = serde_json::to_string_pretty(&m).expect("report serializes");
            write_text(&report, &(json + "\n"))?;
            println!(
                "precision {:.4} recall {:.4} mean IoU {:.4} over {} frames",
                m.precision, m.recall, m.mean_iou, m.n_frames
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
