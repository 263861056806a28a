//! Command-line front end: synthesize, fit, score, calibrate, evaluate and
//! visualize.
//!
//! Exit codes: 0 success, 2 usage or invalid flag value, 3 I/O failure,
//! 4 bad data (format, shape or numerical problems). Failures print one
//! line to standard error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{self, Checkpoint, Shard, ShardRecord};
use crate::error::Error;
use crate::fit::{fit, fit_resume, FitConfig};
use crate::metrics::{aupr, auroc, dice, paired_permutation_test, DiceCounts, LabeledScores, PairedImageScores};
use crate::mixture::{DpmmModel, EmbeddingBatch};
use crate::score::{
    binarize, normalize_rows, patch_to_pixel, select_threshold, AnomalyMap, PatchGrid, ScoreMethod, Scorer,
};
use crate::synth::{sample_synthetic, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;

const TIMING_FILE: &str = "timing.txt";

#[derive(Debug, Parser)]
#[command(
    name = "dpmm-ad",
    version,
    about = "DPMM prototypes for anomaly segmentation on patch embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a shard of Gaussian-mixture embeddings with labels and masks.
    Synth(SynthArgs),
    /// Fit a DPMM to training shards and write a checkpoint.
    Fit(FitArgs),
    /// Score every record and write one anomaly map per record.
    Score(ScoreArgs),
    /// Print the pixel threshold reaching a target false-positive rate.
    Threshold(ThresholdArgs),
    /// Render the closest-component index of every patch as a PGM.
    AssignMap(AssignArgs),
    /// Pixel AUROC, AUPR and Dice of written maps against shard masks.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    /// Output shard file.
    #[arg(long)]
    out: PathBuf,
    /// Number of normal mixture components.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    components: u32,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    /// Total patch vectors; must be a multiple of grid-h × grid-w.
    #[arg(long, default_value_t = 20480)]
    count: usize,
    /// Seed for sampling points and anomaly placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the mixture parameters; defaults to --seed.
    #[arg(long)]
    mixture_seed: Option<u64>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    grid_h: u32,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    grid_w: u32,
    /// Fraction of records holding a rectangle of patches drawn from an
    /// extra held-out component.
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    anomaly_fraction: f64,
    /// Typical distance between component means.
    #[arg(long, default_value_t = 6.0, value_parser = positive)]
    separation: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct FitArgs {
    /// Training shard file or directory of .adne shards.
    #[arg(long)]
    train: PathBuf,
    /// Validation shards for model selection; the training shards are used
    /// when omitted.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output checkpoint. The per-epoch report goes to <out>.report.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, default_value_t = 0.2, value_parser = positive)]
    gamma: f64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 12288, value_parser = clap::value_parser!(u32).range(1..))]
    batch_vectors: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// L2-normalize embeddings before fitting (required for cosine scoring).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    /// Plain EM on all data at once with a fixed concentration.
    #[arg(long)]
    full_batch: bool,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Weight threshold for the reported surviving component count.
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    t_pi: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct MapArgs {
    /// cosine, euclidean or likelihood.
    #[arg(long, default_value_t = ScoreMethod::Cosine)]
    method: ScoreMethod,
    /// Minimum weight for a component to act as a prototype.
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    t_pi: f64,
    /// Output map height in pixels.
    #[arg(long, default_value_t = 448, value_parser = clap::value_parser!(u32).range(1..))]
    height: u32,
    /// Output map width in pixels.
    #[arg(long, default_value_t = 448, value_parser = clap::value_parser!(u32).range(1..))]
    width: u32,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Shard file or directory of shards to score.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for <image_id>.amap files and timing.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    map: MapArgs,
    /// Also write a min-max scaled <image_id>.pgm per map.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ThresholdArgs {
    #[arg(long)]
    model: PathBuf,
    /// Shards of normal images used for calibration.
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 0.05, value_parser = open_unit_interval)]
    fpr: f64,
    #[command(flatten)]
    map: MapArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct AssignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// cosine, euclidean or likelihood.
    #[arg(long, default_value_t = ScoreMethod::Cosine)]
    method: ScoreMethod,
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    t_pi: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct EvalArgs {
    /// Directory written by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Shards whose records carry the ground-truth mask paths.
    #[arg(long)]
    masks_from_shards: PathBuf,
    /// Fixed threshold for a Dice entry.
    #[arg(long)]
    threshold: Option<f64>,
    /// Target FPRs; thresholds are calibrated on --val with --model.
    #[arg(long, value_delimiter = ',', value_parser = open_unit_interval, requires_all = ["val", "model"])]
    fpr_list: Vec<f64>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scoring method for calibration on --val: cosine, euclidean or
    /// likelihood. Maps are calibrated at the size of the scored maps.
    #[arg(long, default_value_t = ScoreMethod::Cosine)]
    method: ScoreMethod,
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    t_pi: f64,
    /// Also report the mean of per-image Dice scores next to pooled Dice.
    #[arg(long)]
    dice_per_image: bool,
    /// Second score directory; per-image AUROC and AUPR are compared with a
    /// paired permutation test.
    #[arg(long)]
    permute_against: Option<PathBuf>,
    #[arg(long, default_value_t = 10000, value_parser = clap::value_parser!(u32).range(1..))]
    n_perm: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(format!("{v} must be positive"))
        }
    })
}

fn non_negative(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(format!("{v} must be non-negative"))
        }
    })
}

fn unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(format!("{v} is outside [0, 1]"))
        }
    })
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(format!("{v} is outside (0, 1)"))
        }
    })
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Io(_) => EXIT_IO,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Attaches the path to I/O errors from the library.
fn at<T>(path: &Path, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Failure::io(path, io),
        other => {
            let mut f = Failure::from(other);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        }
    })
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return EXIT_OK;
            }
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("invalid arguments"));
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Score(a) => score(a),
        Command::Threshold(a) => threshold(a),
        Command::AssignMap(a) => assign_map(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}

/// A shard file, or every `.adne` file in a directory in name order.
fn shard_paths(path: &Path) -> CliResult<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| Failure::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Failure::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "adne") && p.is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Failure::data(format!("{}: no .adne shards found", path.display())));
    }
    Ok(out)
}

fn load_shards(path: &Path) -> CliResult<Vec<(PathBuf, Shard)>> {
    shard_paths(path)?
        .into_iter()
        .map(|p| {
            let shard = at(&p, dataio::read_shard(&p))?;
            Ok((p, shard))
        })
        .collect()
}

fn load_batches(path: &Path) -> CliResult<Vec<EmbeddingBatch>> {
    let mut out = Vec::new();
    for (p, shard) in load_shards(path)? {
        out.extend(at(&p, shard.batches())?);
    }
    Ok(out)
}

fn load_model(path: &Path) -> CliResult<DpmmModel> {
    Ok(at(path, dataio::read_checkpoint(path))?.model)
}

/// Matches a record to what the model was fit on.
fn prepare(record: &ShardRecord, model: &DpmmModel) -> CliResult<EmbeddingBatch> {
    if record.data.ncols() != model.dim() {
        return Err(Failure::data(format!(
            "dimension mismatch: model has D = {}, record {:?} has D = {}",
            model.dim(),
            record.image_id,
            record.data.ncols()
        )));
    }
    let batch = EmbeddingBatch::new(record.data.clone());
    Ok(if model.normalized_input() {
        normalize_rows(&batch).0
    } else {
        batch
    })
}

/// File name for an image id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn map_file_stem(image_id: &str) -> String {
    let stem: String = image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if stem.is_empty() || stem.chars().all(|c| c == '.') {
        format!("_{stem}")
    } else {
        stem
    }
}

fn record_map(
    scorer: &Scorer,
    record: &ShardRecord,
    batch: &EmbeddingBatch,
    h: usize,
    w: usize,
) -> CliResult<AnomalyMap> {
    let scores = scorer.scores(batch)?;
    let grid = PatchGrid::from_scores(scores, record.grid_h, record.grid_w)?;
    let mut map = patch_to_pixel(&grid, h, w)?;
    map.source_id = record.image_id.clone();
    Ok(map)
}

fn io_write(path: &Path, contents: &str) -> CliResult<()> {
    at(path, dataio::write_atomic(path, contents.as_bytes()))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

fn random_means(rng: &mut ChaCha8Rng, count: usize, dim: usize, separation: f64) -> Array2<f64> {
    // Coordinates N(0, sep²/2) put two means about `separation` apart;
    // candidates closer than 3/4 of that to an earlier mean are redrawn.
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means = Array2::<f64>::zeros((count, dim));
    for k in 0..count {
        for attempt in 0.. {
            let cand: Array1<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let far = (0..k).all(|j| {
                let d = &cand - &means.row(j);
                d.dot(&d).sqrt() >= 0.75 * separation
            });
            if far || attempt >= 1000 {
                means.row_mut(k).assign(&cand);
                break;
            }
        }
    }
    means
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let (m, d) = (a.components as usize, a.dim as usize);
    let (gh, gw) = (a.grid_h as usize, a.grid_w as usize);
    let per_record = gh * gw;
    if a.count == 0 || !a.count.is_multiple_of(per_record) {
        return Err(Failure::usage(format!(
            "--count {} must be a positive multiple of grid-h x grid-w = {per_record}",
            a.count
        )));
    }
    let n_records = a.count / per_record;

    // Component m (one past the normal ones) is the held-out anomaly source.
    let mut param_rng = ChaCha8Rng::seed_from_u64(a.mixture_seed.unwrap_or(a.seed));
    let means = random_means(&mut param_rng, m + 1, d, a.separation);
    let spec = SyntheticSpec {
        true_means: means.slice(s![..m, ..]).to_owned(),
        true_vars: Array2::ones((m, d)),
        true_weights: Array1::from_elem(m, 1.0 / m as f64),
        count: a.count,
        seed: a.seed,
    };
    let (normal, mut labels) = sample_synthetic(&spec)?;
    let mut data = normal.into_data();

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0xa5a5_5a5a);
    let mut masks = Vec::with_capacity(n_records);
    for r in 0..n_records {
        let mut mask = Array2::from_elem((gh, gw), false);
        if rng.random::<f64>() < a.anomaly_fraction {
            let rh = rng.random_range(1..=gh.div_ceil(2));
            let rw = rng.random_range(1..=gw.div_ceil(2));
            let top = rng.random_range(0..=gh - rh);
            let left = rng.random_range(0..=gw - rw);
            mask.slice_mut(s![top..top + rh, left..left + rw]).fill(true);
        }
        masks.push((r, mask));
    }
    let n_anom: usize = masks.iter().map(|(_, mk)| mk.iter().filter(|&&v| v).count()).sum();
    if n_anom > 0 {
        let anomaly_spec = SyntheticSpec {
            true_means: means.slice(s![m..m + 1, ..]).to_owned(),
            true_vars: Array2::ones((1, d)),
            true_weights: Array1::ones(1),
            count: n_anom,
            seed: a.seed.wrapping_add(1),
        };
        let (anomalous, _) = sample_synthetic(&anomaly_spec)?;
        let mut next = 0;
        for (r, mask) in &masks {
            for (p, _) in mask.iter().enumerate().filter(|(_, &v)| v) {
                let row = r * per_record + p;
                data.row_mut(row).assign(&anomalous.data().row(next));
                labels[row] = m;
                next += 1;
            }
        }
    }

    let out_dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = a
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "shard".into());
    let mask_dir_name = format!("{stem}.masks");
    create_dir(&out_dir.join(&mask_dir_name))?;

    let mut records = Vec::with_capacity(n_records);
    for (r, mask) in &masks {
        let id = format!("{stem}_{r:05}");
        let rel = format!("{mask_dir_name}/{id}.pgm");
        let mask_path = out_dir.join(&rel);
        at(&mask_path, dataio::write_mask_pgm(&mask_path, mask))?;
        let rows = data.slice(s![r * per_record..(r + 1) * per_record, ..]).to_owned();
        records.push(ShardRecord::new(id, gh, gw, Some(rel), rows)?);
    }
    let shard = Shard {
        dim: d,
        normalized: false,
        records,
    };
    at(&a.out, dataio::write_shard(&a.out, &shard))?;

    let mut sidecar = String::with_capacity(labels.len() * 2);
    for l in &labels {
        let _ = writeln!(sidecar, "{l}");
    }
    let mut labels_path = a.out.clone().into_os_string();
    labels_path.push(".labels");
    io_write(Path::new(&labels_path), &sidecar)?;
    info!("wrote {n_records} records, {n_anom} anomalous patches");
    Ok(())
}

fn fit_cmd(a: FitArgs) -> CliResult<()> {
    let mut train = load_batches(&a.train)?;
    let mut val = match &a.val {
        Some(v) => load_batches(v)?,
        None => Vec::new(),
    };
    if a.normalize {
        for b in train.iter_mut().chain(val.iter_mut()) {
            *b = normalize_rows(b).0;
        }
    } else {
        // Keep the shard flag from leaking into a model that did not ask
        // for normalized inputs.
        for b in train.iter_mut().chain(val.iter_mut()) {
            *b = EmbeddingBatch::new(b.data().clone());
        }
    }
    let config = FitConfig {
        k: a.k as usize,
        gamma: a.gamma,
        epochs: a.epochs,
        batch_vectors: a.batch_vectors as usize,
        seed: a.seed,
        full_batch_mode: a.full_batch,
        t_pi: a.t_pi,
        ..FitConfig::default()
    };
    config.validate()?;
    let fitted = match &a.resume {
        Some(path) => {
            let ckpt = at(path, dataio::read_checkpoint(path))?;
            if ckpt.model.normalized_input() != a.normalize {
                return Err(Failure::usage("--normalize differs from the checkpoint being resumed"));
            }
            at(path, fit_resume(&train, &val, &config, ckpt.model, ckpt.stats))?
        }
        None => fit(&train, &val, &config)?,
    };
    let ckpt = Checkpoint {
        model: fitted.model,
        stats: Some(fitted.stats),
    };
    at(&a.out, dataio::write_checkpoint(&a.out, &ckpt))?;

    let r = &fitted.report;
    let mut report = String::from("epoch\tval_log_likelihood\teffective_components\tseconds\n");
    for e in 0..r.val_log_likelihood.len() {
        let _ = writeln!(
            report,
            "{}\t{}\t{}\t{:.3}",
            e + 1,
            r.val_log_likelihood[e],
            r.effective_per_epoch[e],
            r.epoch_seconds[e]
        );
    }
    let mut report_path = a.out.clone().into_os_string();
    report_path.push(".report");
    io_write(Path::new(&report_path), &report)?;
    info!(
        "best epoch {:?}, {} effective components",
        r.best_epoch.map(|e| e + 1),
        r.effective_components
    );
    Ok(())
}

fn score(a: ScoreArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let shards = load_shards(&a.input)?;
    let scorer = Scorer::new(&model, a.map.method, a.map.t_pi)?;
    create_dir(&a.out)?;
    let (h, w) = (a.map.height as usize, a.map.width as usize);
    let mut seen = HashSet::new();
    let mut timing = String::from("image_id\tms\n");
    for (_, shard) in &shards {
        for record in &shard.records {
            let stem = map_file_stem(&record.image_id);
            if !seen.insert(stem.clone()) {
                return Err(Failure::data(format!("two records map to the file name {stem:?}")));
            }
            let batch = prepare(record, &model)?;
            let start = Instant::now();
            let map = record_map(&scorer, record, &batch, h, w)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let _ = writeln!(timing, "{}\t{ms:.4}", record.image_id);
            let path = a.out.join(format!("{stem}.amap"));
            at(&path, dataio::write_map(&path, &map))?;
            if a.render {
                let path = a.out.join(format!("{stem}.pgm"));
                at(&path, dataio::render_map_pgm(&map, &path))?;
            }
        }
    }
    io_write(&a.out.join(TIMING_FILE), &timing)
}

/// Pixel scores of every record in `val`, pooled.
fn pooled_pixel_scores(model: &DpmmModel, val: &Path, map: &MapArgs) -> CliResult<Vec<f64>> {
    let scorer = Scorer::new(model, map.method, map.t_pi)?;
    let mut pooled = Vec::new();
    for (_, shard) in load_shards(val)? {
        for record in &shard.records {
            let batch = prepare(record, model)?;
            let m = record_map(&scorer, record, &batch, map.height as usize, map.width as usize)?;
            pooled.extend(m.scores.iter());
        }
    }
    Ok(pooled)
}

fn threshold(a: ThresholdArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let pooled = pooled_pixel_scores(&model, &a.val, &a.map)?;
    println!("{}", select_threshold(&pooled, a.fpr)?);
    Ok(())
}

fn assign_map(a: AssignArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let scorer = Scorer::new(&model, a.method, a.t_pi)?;
    let rank: std::collections::HashMap<usize, usize> =
        scorer.effective().iter().enumerate().map(|(r, &k)| (k, r)).collect();
    let levels = scorer.effective().len().max(2) - 1;
    create_dir(&a.out)?;
    for (_, shard) in load_shards(&a.input)? {
        for record in &shard.records {
            let batch = prepare(record, &model)?;
            let idx = scorer.assign(&batch)?;
            let gray: Vec<u8> = idx
                .iter()
                .map(|k| ((rank[k] * 255 + levels / 2) / levels) as u8)
                .collect();
            let pixels =
                Array2::from_shape_vec((record.grid_h, record.grid_w), gray).expect("row count checked by record");
            let path = a.out.join(format!("{}.pgm", map_file_stem(&record.image_id)));
            at(&path, dataio::write_pgm(&path, &pixels))?;
        }
    }
    Ok(())
}

/// Nearest-neighbour upsampling of a mask to `(h, w)` when that is an
/// integer multiple of its size.
fn fit_mask(mask: Array2<bool>, h: usize, w: usize) -> Option<Array2<bool>> {
    let (mh, mw) = mask.dim();
    if (mh, mw) == (h, w) {
        return Some(mask);
    }
    if !h.is_multiple_of(mh) || !w.is_multiple_of(mw) {
        return None;
    }
    let (fy, fx) = (h / mh, w / mw);
    Some(Array2::from_shape_fn((h, w), |(i, j)| mask[[i / fy, j / fx]]))
}

struct EvalImage {
    id: String,
    map: AnomalyMap,
    mask: Array2<bool>,
}

fn load_eval_images(scores: &Path, shards: &Path) -> CliResult<Vec<EvalImage>> {
    let mut out = Vec::new();
    for (shard_path, shard) in load_shards(shards)? {
        let base = shard_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for record in &shard.records {
            let Some(rel) = &record.mask_path else { continue };
            let map_path = scores.join(format!("{}.amap", map_file_stem(&record.image_id)));
            let map = at(&map_path, dataio::read_map(&map_path))?;
            let mask_path = base.join(rel);
            let mask = at(&mask_path, dataio::read_mask_pgm(&mask_path))?;
            let (h, w) = map.scores.dim();
            let mdim = mask.dim();
            let mask = fit_mask(mask, h, w).ok_or_else(|| {
                Failure::data(format!(
                    "dimension mismatch: mask {mdim:?} of {:?} does not tile map ({h}, {w})",
                    record.image_id
                ))
            })?;
            out.push(EvalImage {
                id: record.image_id.clone(),
                map,
                mask,
            });
        }
    }
    if out.is_empty() {
        return Err(Failure::data("no records with masks found"));
    }
    Ok(out)
}

/// Per-image (AUROC, AUPR), skipping images whose mask is all one class.
fn per_image_metrics(images: &[EvalImage]) -> CliResult<Vec<Option<(f64, f64)>>> {
    images
        .iter()
        .map(|im| {
            let scores: Vec<f64> = im.map.scores.iter().copied().collect();
            let labels: Vec<bool> = im.mask.iter().copied().collect();
            let pos = labels.iter().filter(|&&l| l).count();
            if pos == 0 || pos == labels.len() {
                return Ok(None);
            }
            let ls = LabeledScores::new(&scores, &labels)?;
            Ok(Some((auroc(&ls)?, aupr(&ls)?)))
        })
        .collect()
}

fn mean_timing_ms(scores: &Path) -> Option<f64> {
    let text = fs::read_to_string(scores.join(TIMING_FILE)).ok()?;
    let ms: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit('\t').next()?.parse().ok())
        .collect();
    (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64)
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let images = load_eval_images(&a.scores, &a.masks_from_shards)?;
    let scores: Vec<f64> = images.iter().flat_map(|im| im.map.scores.iter().copied()).collect();
    let labels: Vec<bool> = images.iter().flat_map(|im| im.mask.iter().copied()).collect();
    let pooled = LabeledScores::new(&scores, &labels)?;

    let mut report = String::new();
    let _ = writeln!(report, "images\t{}", images.len());
    let _ = writeln!(report, "pixels\t{}", scores.len());
    let _ = writeln!(report, "anomalous_pixels\t{}", labels.iter().filter(|&&l| l).count());
    let _ = writeln!(report, "auroc\t{}", auroc(&pooled)?);
    let _ = writeln!(report, "aupr\t{}", aupr(&pooled)?);

    let dice_at = |t: f64| -> CliResult<f64> {
        let mut counts = DiceCounts::default();
        for im in &images {
            counts.add(binarize(&im.map, t).view(), im.mask.view())?;
        }
        Ok(counts.score())
    };
    let mean_dice_at = |t: f64| -> CliResult<f64> {
        let mut sum = 0.0;
        for im in &images {
            sum += dice(binarize(&im.map, t).view(), im.mask.view())?;
        }
        Ok(sum / images.len() as f64)
    };
    let dice_lines = |report: &mut String, key: String, t: f64| -> CliResult<()> {
        let _ = writeln!(report, "dice@{key}\t{}", dice_at(t)?);
        if a.dice_per_image {
            let _ = writeln!(report, "dice_mean@{key}\t{}", mean_dice_at(t)?);
        }
        Ok(())
    };
    if let Some(t) = a.threshold {
        dice_lines(&mut report, format!("threshold={t}"), t)?;
    }
    if !a.fpr_list.is_empty() {
        let (val, model_path) = (
            a.val.as_ref().expect("required by clap"),
            a.model.as_ref().expect("required by clap"),
        );
        let model = load_model(model_path)?;
        let (h, w) = images[0].map.scores.dim();
        if images.iter().any(|im| im.map.scores.dim() != (h, w)) {
            return Err(Failure::data("calibration needs every map to have the same size"));
        }
        let map_args = MapArgs {
            method: a.method,
            t_pi: a.t_pi,
            height: h as u32,
            width: w as u32,
        };
        let normal = pooled_pixel_scores(&model, val, &map_args)?;
        for &fpr in &a.fpr_list {
            let t = select_threshold(&normal, fpr)?;
            let _ = writeln!(report, "threshold@fpr={fpr}\t{t}");
            dice_lines(&mut report, format!("fpr={fpr}"), t)?;
        }
    }
    if let Some(ms) = mean_timing_ms(&a.scores) {
        let _ = writeln!(report, "ms_per_sample\t{ms:.4}");
    }

    if let Some(other) = &a.permute_against {
        let others = load_eval_images(other, &a.masks_from_shards)?;
        let ids: Vec<&str> = images.iter().map(|im| im.id.as_str()).collect();
        if others.iter().map(|im| im.id.as_str()).ne(ids.iter().copied()) {
            return Err(Failure::data("score directories cover different images"));
        }
        let pairs: Vec<((f64, f64), (f64, f64))> = per_image_metrics(&images)?
            .into_iter()
            .zip(per_image_metrics(&others)?)
            .filter_map(|(x, y)| Some((x?, y?)))
            .collect();
        for (name, pick) in [("auroc", 0), ("aupr", 1)] {
            let get = |m: (f64, f64)| if pick == 0 { m.0 } else { m.1 };
            let result = paired_permutation_test(&PairedImageScores {
                method_a: pairs.iter().map(|p| get(p.0)).collect(),
                method_b: pairs.iter().map(|p| get(p.1)).collect(),
                n_perm: a.n_perm as usize,
                seed: a.seed,
            })?;
            let _ = writeln!(report, "perm_{name}_mean_diff\t{}", result.observed);
            let _ = writeln!(report, "perm_{name}_p_value\t{}", result.p_value);
        }
    }
    print!("{report}");
    Ok(())
}
