//! `mitodet` command-line front end.
//!
//! Every subcommand is file-in/file-out and wraps one library stage.
//! Settings resolve as flag, then `--config` JSON, then built-in default.
//! Exit codes: 0 success, 2 invalid input, 1 internal failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{self, AnnotationSet};
use crate::augment::{self, AugmentConfig};
use crate::config::{PipelineConfig, SEED_ENV};
use crate::error::{Error, Result};
use crate::fda::{self, FdaConfig};
use crate::imagecore::{self, BinaryMask, Image8, Point2D};
use crate::losses;
use crate::metrics;
use crate::postproc::{self, Connectivity, DetectionSet};
use crate::predict::{self, Predictor};
use crate::tiling::{self, StitchMode, TileConfig, TileOrigin};

#[derive(Debug, Parser)]
#[command(name = "mitodet", version, about = "Mitosis detection pipeline stages")]
pub struct Cli {
    /// JSON file with per-stage settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-image / per-tile work [default: 1]
    #[arg(short = 'j', long, global = true)]
    pub jobs: Option<usize>,

    /// Run seed; falls back to the config file, then $FDA_SEED [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transfer the low-frequency amplitude of reference images onto sources.
    Fda(FdaArgs),
    /// Build a binary training mask from a cell label map and box annotations.
    MakeMask(MakeMaskArgs),
    /// Cut an image into overlapping square patches plus a JSON manifest.
    Tile(TileArgs),
    /// Reassemble single-channel tiles listed in a manifest.
    Stitch(StitchArgs),
    /// Write seeded, replayable augmentations of an image/mask pair.
    Augment(AugmentArgs),
    /// Turn probability maps or masks into detected cell centers.
    Postprocess(PostprocessArgs),
    /// Score detections against annotation boxes (precision, recall, F1).
    Evaluate(EvaluateArgs),
    /// Report focal, Dice and total loss between a prediction and a mask.
    LossEval(LossEvalArgs),
    /// Toy probability map (blue-channel darkness) standing in for a network.
    BaselinePredict(BaselinePredictArgs),
}

#[derive(Debug, Args)]
pub struct FdaArgs {
    /// Source image, or a directory of PNGs in batch mode.
    #[arg(long)]
    pub source: PathBuf,
    /// Reference image, or a directory of PNGs in batch mode.
    #[arg(long)]
    pub reference: PathBuf,
    /// Fraction of each axis covered by the swapped window [default: 0.01]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output image (single pair).
    #[arg(long, required_unless_present = "batch_dir")]
    pub out: Option<PathBuf>,
    /// Output directory; every source is paired with every reference as SRC_REF.png.
    #[arg(long)]
    pub batch_dir: Option<PathBuf>,
    /// Bilinearly resize references to the source size instead of failing.
    #[arg(long)]
    pub resize_reference: bool,
}

#[derive(Debug, Args)]
pub struct MakeMaskArgs {
    /// Instance label map (8- or 16-bit grayscale PNG, 0 = background).
    #[arg(long)]
    pub cells: PathBuf,
    /// COCO-style annotation JSON.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Image id in the annotation file; optional when the file has one image
    /// or an entry whose file_name matches the label map's name.
    #[arg(long)]
    pub image_id: Option<i64>,
    /// Keep a cell when its IoU with a box is strictly above this [default: 0.8]
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Box categories to use, comma separated [default: 1]
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<i64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Optional mask tiled with the same plan.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Patch side in pixels [default: 512]
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Step between patches in pixels [default: 256]
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Manifest written by `tile`; tile files resolve relative to it.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overlap rule, max or mean [default: max]
    #[arg(long)]
    pub mode: Option<StitchMode>,
    /// Output width [default: inferred from the manifest]
    #[arg(long)]
    pub width: Option<usize>,
    /// Output height [default: inferred from the manifest]
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of augmented samples [default: 1]
    #[arg(long)]
    pub count: Option<u64>,
    /// Identifier mixed into per-sample seeds [default: image file stem]
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long)]
    pub no_rescale: bool,
    #[arg(long)]
    pub no_rotate: bool,
    #[arg(long)]
    pub no_hflip: bool,
    #[arg(long)]
    pub no_vflip: bool,
    #[arg(long)]
    pub no_crop: bool,
    #[arg(long)]
    pub no_hsv: bool,
    /// Lower rescale factor [default: 0.8]
    #[arg(long)]
    pub rescale_min: Option<f64>,
    /// Upper rescale factor [default: 1.2]
    #[arg(long)]
    pub rescale_max: Option<f64>,
    /// Max hue shift, fraction of the hue circle [default: 0.02]
    #[arg(long)]
    pub hue_delta: Option<f64>,
    /// Max saturation shift [default: 0.1]
    #[arg(long)]
    pub sat_delta: Option<f64>,
    /// Max value shift [default: 0.1]
    #[arg(long)]
    pub val_delta: Option<f64>,
    /// Side of the random crop [default: 512]
    #[arg(long)]
    pub crop_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Single-channel PNG(s): probability maps (value/255) or binary masks.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// One image id per input [default: looked up by file name in
    /// --annotations, else the input's position]
    #[arg(long, num_args = 1..)]
    pub image_id: Vec<i64>,
    /// Annotation JSON used to resolve image ids from file names.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Foreground when probability >= threshold [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pixel neighbourhood, 4 or 8 [default: 8]
    #[arg(long)]
    pub connectivity: Option<u8>,
    /// Drop components smaller than this many pixels [default: 0]
    #[arg(long)]
    pub min_area: Option<usize>,
    /// Detection JSON: one object for one input, an array otherwise.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Detection JSON files (object or array of objects).
    #[arg(long, num_args = 1.., required = true)]
    pub predictions: Vec<PathBuf>,
    /// Ground-truth annotation JSON; truth points are box centers.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Maximum center distance for a match, pixels [default: 30]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Box categories treated as ground truth, comma separated [default: 1]
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<i64>>,
    /// Report path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossEvalArgs {
    /// Prediction PNG, value/255 read as probability.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth PNG, nonzero = foreground.
    #[arg(long)]
    pub truth: PathBuf,
    /// Focal focusing exponent [default: 2]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Focal positive-class weight [default: 0.25]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dice smoothing term [default: 1]
    #[arg(long)]
    pub smooth: Option<f64>,
    /// Weight of the focal term [default: 1]
    #[arg(long)]
    pub focal_weight: Option<f64>,
    /// Weight of the Dice term [default: 1]
    #[arg(long)]
    pub dice_weight: Option<f64>,
    /// Report path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselinePredictArgs {
    /// RGB input image.
    #[arg(long)]
    pub image: PathBuf,
    /// 8-bit probability map output.
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of one stage, printed as `stage: message`.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> u8 {
        if self.error.is_validation() {
            2
        } else {
            1
        }
    }
}

/// Tile manifest written by `tile` and read by `stitch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub patch_size: usize,
    pub stride: usize,
    pub tiles: Vec<ManifestTile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTile {
    pub x: usize,
    pub y: usize,
    pub file: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(DetectionSet),
    Many(Vec<DetectionSet>),
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), StageError> {
    let stage = cli.command.stage();
    let fail = |error| StageError { stage, error };
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|error| StageError { stage: "config", error })?,
        None => PipelineConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let seed = config.resolve_seed(cli.seed, env_seed.as_deref()).map_err(fail)?;
    let jobs = cli.jobs.or(config.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(fail(Error::invalid("jobs", "must be at least 1")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| fail(Error::invalid("jobs", e.to_string())))?;
    let ctx = Context { config, seed };
    pool.install(|| ctx.dispatch(&cli.command)).map_err(fail)
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Fda(_) => "fda",
            Command::MakeMask(_) => "make-mask",
            Command::Tile(_) => "tile",
            Command::Stitch(_) => "stitch",
            Command::Augment(_) => "augment",
            Command::Postprocess(_) => "postprocess",
            Command::Evaluate(_) => "evaluate",
            Command::LossEval(_) => "loss-eval",
            Command::BaselinePredict(_) => "baseline-predict",
        }
    }
}

struct Context {
    config: PipelineConfig,
    seed: u64,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })
}

/// Sorted PNG files of a directory, or the path itself if it is a file.
fn png_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(
            "input directory",
            format!("{} has no PNG files", path.display()),
        ));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn single_channel(img: Image8, path: &Path) -> Result<Image8> {
    if img.channels() != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            found: img.channels() as u8,
        });
    }
    Ok(img)
}

fn find_annotation<'a>(sets: &'a [AnnotationSet], id: Option<i64>, file: &Path) -> Result<&'a AnnotationSet> {
    if let Some(id) = id {
        return sets.iter().find(|s| s.image_id == id).ok_or(Error::UnknownImageId(id));
    }
    if let [only] = sets {
        return Ok(only);
    }
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned());
    let file_stem = stem(file);
    sets.iter()
        .find(|s| Some(&s.file_name) == name.as_ref() || stem(Path::new(&s.file_name)) == file_stem)
        .ok_or_else(|| {
            Error::invalid(
                "image id",
                format!("no annotation entry matches {}; pass --image-id", file.display()),
            )
        })
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        self.config.resolve_path(p)
    }

    fn dispatch(&self, command: &Command) -> Result<()> {
        match command {
            Command::Fda(a) => self.fda(a),
            Command::MakeMask(a) => self.make_mask(a),
            Command::Tile(a) => self.tile(a),
            Command::Stitch(a) => self.stitch(a),
            Command::Augment(a) => self.augment(a),
            Command::Postprocess(a) => self.postprocess(a),
            Command::Evaluate(a) => self.evaluate(a),
            Command::LossEval(a) => self.loss_eval(a),
            Command::BaselinePredict(a) => self.baseline_predict(a),
        }
    }

    fn fda(&self, a: &FdaArgs) -> Result<()> {
        let cfg = FdaConfig {
            beta: a.beta.unwrap_or(self.config.fda.beta),
            quantize: true,
        };
        cfg.validate()?;
        let transfer = |src_path: &Path, ref_path: &Path, out: &Path| -> Result<()> {
            let source = imagecore::load_image(src_path)?;
            let mut reference = imagecore::load_image(ref_path)?;
            if a.resize_reference && (reference.width(), reference.height()) != (source.width(), source.height()) {
                reference = augment::resize_bilinear(&reference, source.width(), source.height());
            }
            let generated = fda::fda_transfer(&source, &reference, &cfg)?.into_u8();
            imagecore::save_image(&generated, out)
        };

        match &a.batch_dir {
            None => {
                let out = a.out.as_deref().expect("clap requires --out without --batch-dir");
                transfer(&self.path(&a.source), &self.path(&a.reference), &self.path(out))
            }
            Some(dir) => {
                let dir = self.path(dir);
                ensure_dir(&dir)?;
                let sources = png_inputs(&self.path(&a.source))?;
                let references = png_inputs(&self.path(&a.reference))?;
                let pairs: Vec<(&PathBuf, &PathBuf)> = sources
                    .iter()
                    .flat_map(|s| references.iter().map(move |r| (s, r)))
                    .collect();
                pairs.par_iter().try_for_each(|(s, r)| {
                    let out = dir.join(format!("{}_{}.png", stem(s), stem(r)));
                    transfer(s, r, &out)
                })
            }
        }
    }

    fn make_mask(&self, a: &MakeMaskArgs) -> Result<()> {
        let mut cfg = self.config.mask.clone();
        if let Some(t) = a.iou_threshold {
            cfg.iou_threshold = t;
        }
        if let Some(c) = &a.categories {
            cfg.categories = c.iter().copied().collect();
        }
        cfg.validate()?;
        let cells_path = self.path(&a.cells);
        let sets = annotate::parse_annotations(self.path(&a.annotations))?;
        let ann = find_annotation(&sets, a.image_id, &cells_path)?;
        let cells = imagecore::load_label_map(&cells_path)?;
        let generated = annotate::generate_training_mask_detailed(&cells, ann, &cfg)?;
        if generated.unmatched_boxes > 0 {
            eprintln!(
                "make-mask: warning: image {}: {} box(es) matched no cell above IoU {}",
                ann.image_id, generated.unmatched_boxes, cfg.iou_threshold
            );
        }
        imagecore::save_image(&generated.mask.to_image(), self.path(&a.out))
    }

    fn tile(&self, a: &TileArgs) -> Result<()> {
        let cfg = TileConfig {
            patch_size: a.patch_size.unwrap_or(self.config.tile.patch_size),
            stride: a.stride.unwrap_or(self.config.tile.stride),
        };
        let img = imagecore::load_image(self.path(&a.image))?;
        let mask = match &a.mask {
            Some(p) => {
                let m = BinaryMask::from_image(&single_channel(imagecore::load_image(self.path(p))?, p)?)?;
                if (m.width(), m.height()) != (img.width(), img.height()) {
                    return Err(Error::mismatch(
                        format!("image {}", img.shape()),
                        format!("mask {}x{}", m.width(), m.height()),
                    ));
                }
                Some(m)
            }
            None => None,
        };
        let plan = tiling::plan_tiles(img.width(), img.height(), &cfg)?;
        let out_dir = self.path(&a.out_dir);
        ensure_dir(&out_dir)?;
        let tiles: Vec<ManifestTile> = plan
            .origins
            .par_iter()
            .map(|&o| {
                let file = format!("tile_x{}_y{}.png", o.x, o.y);
                imagecore::save_image(&tiling::extract_tile(&img, o, &cfg)?, out_dir.join(&file))?;
                if let Some(m) = &mask {
                    let mask_file = format!("tile_x{}_y{}_mask.png", o.x, o.y);
                    imagecore::save_image(
                        &tiling::extract_mask_tile(m, o, &cfg)?.to_image(),
                        out_dir.join(mask_file),
                    )?;
                }
                Ok(ManifestTile { x: o.x, y: o.y, file })
            })
            .collect::<Result<_>>()?;
        let manifest = TileManifest {
            patch_size: cfg.patch_size,
            stride: cfg.stride,
            tiles,
        };
        write_json(&manifest, Some(&out_dir.join("manifest.json")))
    }

    fn stitch(&self, a: &StitchArgs) -> Result<()> {
        let manifest_path = self.path(&a.manifest);
        let manifest: TileManifest = read_json(&manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mode = a.mode.unwrap_or_default();
        let tiles: Vec<(TileOrigin, _)> = manifest
            .tiles
            .par_iter()
            .map(|t| {
                let path = base.join(&t.file);
                let img = single_channel(imagecore::load_image(&path)?, &path)?;
                Ok((TileOrigin { x: t.x, y: t.y }, predict::image_to_probability(&img)))
            })
            .collect::<Result<_>>()?;
        let extent =
            |f: fn(&(TileOrigin, crate::imagecore::RealImage)) -> usize| tiles.iter().map(f).max().unwrap_or(0);
        let width = a.width.unwrap_or_else(|| extent(|(o, t)| o.x + t.width()));
        let height = a.height.unwrap_or_else(|| extent(|(o, t)| o.y + t.height()));
        let grid = tiling::stitch(&tiles, width, height, mode)?;
        imagecore::save_image(&predict::probability_to_image(&grid), self.path(&a.out))
    }

    fn augment(&self, a: &AugmentArgs) -> Result<()> {
        let base = &self.config.augment;
        let [lo, hi] = base.rescale_range;
        let [dh, ds, dv] = base.hsv_deltas;
        let cfg = AugmentConfig {
            seed: self.seed,
            rescale: base.rescale && !a.no_rescale,
            rotate: base.rotate && !a.no_rotate,
            hflip: base.hflip && !a.no_hflip,
            vflip: base.vflip && !a.no_vflip,
            crop: base.crop && !a.no_crop,
            hsv: base.hsv && !a.no_hsv,
            rescale_range: [a.rescale_min.unwrap_or(lo), a.rescale_max.unwrap_or(hi)],
            hsv_deltas: [
                a.hue_delta.unwrap_or(dh),
                a.sat_delta.unwrap_or(ds),
                a.val_delta.unwrap_or(dv),
            ],
            crop_size: a.crop_size.unwrap_or(base.crop_size),
        };
        cfg.validate()?;
        let image_path = self.path(&a.image);
        let img = imagecore::load_image(&image_path)?;
        let mask_path = self.path(&a.mask);
        let mask = BinaryMask::from_image(&single_channel(imagecore::load_image(&mask_path)?, &mask_path)?)?;
        let id = a.image_id.clone().unwrap_or_else(|| stem(&image_path));
        let out_dir = self.path(&a.out_dir);
        ensure_dir(&out_dir)?;

        #[derive(Serialize)]
        struct Record<'a> {
            image_id: &'a str,
            step: u64,
            seed: u64,
            draw: augment::AugmentDraw,
        }

        (0..a.count.unwrap_or(1)).into_par_iter().try_for_each(|step| {
            let seed = augment::derive_seed(cfg.seed, &id, step);
            let mut rng = augment::rng_from_seed(seed);
            let (ai, am, draw) = augment::augment_pair(&img, &mask, &cfg, &mut rng)?;
            let name = format!("{id}_aug{step}");
            imagecore::save_image(&ai, out_dir.join(format!("{name}.png")))?;
            imagecore::save_image(&am.to_image(), out_dir.join(format!("{name}_mask.png")))?;
            let record = Record {
                image_id: &id,
                step,
                seed,
                draw,
            };
            write_json(&record, Some(&out_dir.join(format!("{name}.json"))))
        })
    }

    fn postprocess(&self, a: &PostprocessArgs) -> Result<()> {
        let mut cfg = self.config.postproc;
        if let Some(t) = a.threshold {
            cfg.threshold = t;
        }
        if let Some(c) = a.connectivity {
            cfg.connectivity = Connectivity::from_neighbors(c)?;
        }
        if let Some(m) = a.min_area {
            cfg.min_component_area = m;
        }
        cfg.validate()?;
        if !a.image_id.is_empty() && a.image_id.len() != a.input.len() {
            return Err(Error::invalid(
                "image ids",
                format!("{} ids for {} inputs", a.image_id.len(), a.input.len()),
            ));
        }
        let sets = match &a.annotations {
            Some(p) => Some(annotate::parse_annotations(self.path(p))?),
            None => None,
        };
        let ids: Vec<i64> = a
            .input
            .iter()
            .enumerate()
            .map(|(i, input)| match (a.image_id.get(i), &sets) {
                (Some(&id), _) => Ok(id),
                (None, Some(sets)) => find_annotation(sets, None, input).map(|s| s.image_id),
                (None, None) => Ok(i as i64),
            })
            .collect::<Result<_>>()?;
        let detections: Vec<DetectionSet> = a
            .input
            .par_iter()
            .zip(ids.par_iter())
            .map(|(input, &id)| {
                let path = self.path(input);
                let img = single_channel(imagecore::load_image(&path)?, &path)?;
                postproc::detect(&predict::image_to_probability(&img), id, &cfg)
            })
            .collect::<Result<_>>()?;
        let out = self.path(&a.out);
        match detections.as_slice() {
            [one] => write_json(one, Some(&out)),
            many => write_json(&many, Some(&out)),
        }
    }

    fn evaluate(&self, a: &EvaluateArgs) -> Result<()> {
        let mut cfg = self.config.matching;
        if let Some(r) = a.radius {
            cfg.radius = r;
        }
        cfg.validate()?;
        let categories = match &a.categories {
            Some(c) => c.iter().copied().collect(),
            None => self.config.mask.categories.clone(),
        };
        let sets = annotate::parse_annotations(self.path(&a.annotations))?;
        let truths: BTreeMap<i64, Vec<Point2D>> = sets.iter().map(|s| (s.image_id, s.centers(&categories))).collect();
        let mut preds = Vec::new();
        for p in &a.predictions {
            match read_json::<OneOrMany>(&self.path(p))? {
                OneOrMany::One(d) => preds.push(d),
                OneOrMany::Many(v) => preds.extend(v),
            }
        }
        let report = metrics::evaluate_dataset(&preds, &truths, &cfg)?;
        write_json(&report, a.out.as_deref().map(|p| self.path(p)).as_deref())
    }

    fn loss_eval(&self, a: &LossEvalArgs) -> Result<()> {
        let mut cfg = self.config.loss;
        cfg.focal_gamma = a.gamma.unwrap_or(cfg.focal_gamma);
        cfg.focal_alpha = a.alpha.unwrap_or(cfg.focal_alpha);
        cfg.dice_smooth = a.smooth.unwrap_or(cfg.dice_smooth);
        cfg.focal_weight = a.focal_weight.unwrap_or(cfg.focal_weight);
        cfg.dice_weight = a.dice_weight.unwrap_or(cfg.dice_weight);
        cfg.validate()?;
        let pred_path = self.path(&a.pred);
        let truth_path = self.path(&a.truth);
        let pred = single_channel(imagecore::load_image(&pred_path)?, &pred_path)?;
        let truth = single_channel(imagecore::load_image(&truth_path)?, &truth_path)?;
        let p = predict::image_to_probability(&pred);
        let y = BinaryMask::from_image(&truth)?;
        let y = crate::imagecore::RealImage::new(
            y.width(),
            y.height(),
            1,
            y.bits().iter().map(|&b| f64::from(u8::from(b))).collect(),
        )?;
        let summary = losses::summarize(&p, &y, &cfg)?;
        write_json(&summary, a.out.as_deref().map(|p| self.path(p)).as_deref())
    }

    fn baseline_predict(&self, a: &BaselinePredictArgs) -> Result<()> {
        let img = imagecore::load_image(self.path(&a.image))?;
        let prob = predict::BaselinePredictor.predict(&img)?;
        imagecore::save_image(&predict::probability_to_image(&prob), self.path(&a.out))
    }
}
