//! The `semilex` command line.
//!
//! Every command prints one JSON document carrying `"schema": 1` and the
//! parameters it ran with. Exit status: 0 accepted, 1 rejected (a board that
//! cannot be solved, an object of class none), 2 bad input, 3 internal
//! failure such as diverged training.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::dataset::{
    compose_board, load_board_dir, load_detections, read_png, segment_board, write_png,
    BoardImage, GridSpec, InkPolarity, MnistPaths,
};
use crate::error::{Error, Result};
use crate::language::{Params, TokenMetric};
use crate::nn::{evaluate, train, Model, TrainConfig};
use crate::object::{
    classify, crop_metric, iterative_search, learn_range, load_annotations, pair_records,
    CycleClass, ObjectRuleSet, Requirement, SearchConfig,
};
use crate::raster::DIGIT_SIDE;
use crate::sudoku::{validate_handwritten, Board, Outcome};
use crate::support::{
    build_index, global_support, local_support, DescriptorExtractor, DogExtractor,
    EmbeddingIndex,
};

pub const DATA_DIR_ENV: &str = "SEMILEX_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "semilex", version, about = "Validate handwritten Sudoku boards and detected cycles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the digit model on MNIST and build its embedding index.
    Train(TrainArgs),
    /// Read board pictures and validate or repair them.
    Validate(ValidateArgs),
    /// Show global and local support for one digit image.
    Support(SupportArgs),
    /// Name the cycle in detection-proposal files.
    VerifyObject(VerifyObjectArgs),
    /// Learn spatial ranges between parts from annotated images.
    LearnRanges(LearnRangesArgs),
    /// Draw a board picture from a text board using MNIST test digits.
    ComposeBoard(ComposeArgs),
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    /// Global support needed to accept a cell's tag.
    #[arg(long = "c-h", default_value_t = 0.80)]
    pub c_h: f64,
    /// Global support needed for a candidate edge.
    #[arg(long = "c-l", default_value_t = 0.10)]
    pub c_l: f64,
    /// Neighbours consulted for global support.
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    /// Largest local support still counted as consistent.
    #[arg(long, default_value_t = 10.0)]
    pub epsilon: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<Params> {
        let p = Params {
            c_h: self.c_h,
            c_l: self.c_l,
            k: self.k,
            epsilon: self.epsilon,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with the four MNIST IDX files [default: $SEMILEX_DATA_DIR or data/mnist].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Train on the first N training images.
    #[arg(long, default_value_t = 10_000)]
    pub limit: usize,
    /// Evaluate on the first N test images.
    #[arg(long, default_value_t = 10_000)]
    pub test_limit: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value = "model.slxm")]
    pub model: PathBuf,
    #[arg(long, default_value = "index.slxi")]
    pub index: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Pixels of border around the playing area.
    #[arg(long, default_value_t = 0)]
    pub margin: usize,
    /// Width of the ruling in front of every cell.
    #[arg(long, default_value_t = 0)]
    pub gridline: usize,
    /// Ink is light on a dark background (as in MNIST).
    #[arg(long)]
    pub light_ink: bool,
}

impl GridArgs {
    fn polarity(&self) -> InkPolarity {
        if self.light_ink {
            InkPolarity::LightInk
        } else {
            InkPolarity::DarkInk
        }
    }

    fn spec(&self) -> GridSpec {
        GridSpec {
            margin: self.margin,
            gridline: self.gridline,
            polarity: self.polarity(),
        }
    }

    fn header(&self) -> Value {
        json!({
            "margin": self.margin,
            "gridline": self.gridline,
            "polarity": if self.light_ink { "light-ink" } else { "dark-ink" },
        })
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Embedding index written by `train`.
    #[arg(long)]
    pub index: PathBuf,
    /// Board picture, or directory of `r{row}c{col}.png` cells. Repeatable.
    #[arg(long, required = true)]
    pub board: Vec<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Recorded in the output header; validation itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Boards read in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Embedding index written by `train`.
    #[arg(long)]
    pub index: PathBuf,
    /// Digit image; resampled to 28×28.
    #[arg(long)]
    pub image: PathBuf,
    /// Images that should share the digit's tag, for local support.
    #[arg(long)]
    pub peer: Vec<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub light_ink: bool,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyObjectArgs {
    /// Detection-proposal file. Repeatable.
    #[arg(long, required = true)]
    pub detections: Vec<PathBuf>,
    /// Range file from `learn-ranges`.
    #[arg(long)]
    pub rules: PathBuf,
    /// Class whose parts the re-search looks for.
    #[arg(long, default_value = "bicycle")]
    pub target: String,
    /// Initial objectness threshold.
    #[arg(long, default_value_t = 0.40)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.2)]
    pub floor: f64,
    /// Overrides the look-alike threshold stored in the range file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Crops are light on dark.
    #[arg(long)]
    pub light_ink: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnRangesArgs {
    /// JSON list of `{"image": {"w", "h"}, "components": [{"name", "box"}]}`.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub epsilon: f64,
    /// Range file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Text board: nine lines of nine digits, `.` for an empty cell.
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Put MNIST test image N at cell rRcC (1-based), as `rRcC=N`. Repeatable.
    #[arg(long = "place")]
    pub place: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// PNG to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Support(a) => cmd_support(&a),
        Command::VerifyObject(a) => cmd_verify_object(&a),
        Command::LearnRanges(a) => cmd_learn_ranges(&a),
        Command::ComposeBoard(a) => cmd_compose(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("semilex: {e}");
            e.exit_code()
        }
    }
}

fn data_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn emit(doc: &Value, out: &Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn params_header(p: &Params) -> Value {
    json!({ "c_h": p.c_h, "c_l": p.c_l, "k": p.k, "epsilon": p.epsilon })
}

fn check_k(index: &EmbeddingIndex, k: usize) -> Result<()> {
    if k > index.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the {} entries of the index",
            index.len()
        )));
    }
    Ok(())
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn cmd_train(a: &TrainArgs) -> Result<u8> {
    let paths = MnistPaths::in_dir(data_dir(&a.data_dir));
    let training = paths.load_train()?.head(a.limit);
    let test = paths.load_test()?.head(a.test_limit);
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let start = Instant::now();
    let (model, report) = train(&training, &cfg)?;
    let index = build_index(&model, &training)?;
    let accuracy = evaluate(&model, &test)?;
    model.save(&a.model)?;
    index.save(&a.index)?;
    eprintln!(
        "trained on {} images in {:.1?}; test accuracy {accuracy:.4}",
        training.len(),
        start.elapsed()
    );
    emit(
        &json!({
            "schema": 1,
            "command": "train",
            "params": {
                "limit": a.limit,
                "epochs": a.epochs,
                "learning_rate": a.lr,
                "batch_size": a.batch_size,
                "seed": a.seed,
            },
            "training_images": training.len(),
            "test_images": test.len(),
            "epoch_losses": report.epoch_losses,
            "test_accuracy": accuracy,
            "model": a.model,
            "index": a.index,
        }),
        &a.out,
    )?;
    Ok(0)
}

fn load_board(path: &Path, grid: &GridArgs) -> Result<BoardImage> {
    if path.is_dir() {
        load_board_dir(path, grid.polarity())
    } else {
        segment_board(path, &grid.spec())
    }
}

fn cmd_validate(a: &ValidateArgs) -> Result<u8> {
    let params = a.params.params()?;
    for b in &a.board {
        if !b.exists() {
            return Err(Error::Input(format!("board {} does not exist", b.display())));
        }
    }
    let model = Model::load(&a.model)?;
    let index = EmbeddingIndex::load(&a.index)?;
    check_k(&index, params.k)?;
    let extractor = DogExtractor::default();
    let results = parallel_map(&a.board, a.jobs, |path| -> Result<Value> {
        let image = load_board(path, &a.grid)?;
        let verdict = validate_handwritten(&image, &model, &index, &params, &extractor)?;
        let mut v = serde_json::to_value(&verdict)?;
        v["input"] = json!(path);
        v["text"] = json!(verdict.board.to_string());
        Ok(v)
    });
    let verdicts = results.into_iter().collect::<Result<Vec<Value>>>()?;
    let rejected = verdicts
        .iter()
        .any(|v| v["outcome"] == json!(Outcome::NotSolvable));
    let mut header = params_header(&params);
    header["grid"] = a.grid.header();
    header["descriptor"] = json!(extractor.method());
    if let Some(seed) = a.seed {
        header["seed"] = json!(seed);
    }
    emit(
        &json!({
            "schema": 1,
            "command": "validate",
            "params": header,
            "model": a.model,
            "index": a.index,
            "verdicts": verdicts,
        }),
        &a.out,
    )?;
    Ok(if rejected { 1 } else { 0 })
}

fn cmd_support(a: &SupportArgs) -> Result<u8> {
    let params = a.params.params()?;
    let model = Model::load(&a.model)?;
    let index = EmbeddingIndex::load(&a.index)?;
    check_k(&index, params.k)?;
    let polarity = if a.light_ink {
        InkPolarity::LightInk
    } else {
        InkPolarity::DarkInk
    };
    let image = read_png(&a.image, polarity)?.resize(DIGIT_SIDE, DIGIT_SIDE);
    let out = model.forward(&image)?;
    let tag = out.argmax() as u8;
    let support = global_support(&index, &out.embedding, params.k)?;
    let candidates: Vec<(u8, f64)> = support
        .ranked()
        .into_iter()
        .filter(|(_, w)| *w >= params.c_l)
        .collect();
    let mut doc = json!({
        "schema": 1,
        "command": "support",
        "params": params_header(&params),
        "image": a.image,
        "tag": tag,
        "probabilities": out.class_probs,
        "support": support,
        "support_total": support.total(),
        "confidence": support.weight(&tag),
        "accepted": support.weight(&tag) >= params.c_h,
        "candidates": candidates,
    });
    if !a.peer.is_empty() {
        let extractor = DogExtractor::default();
        let token = extractor.describe(&image);
        let mut peers = Vec::new();
        for p in &a.peer {
            peers.push(extractor.describe(&read_png(p, polarity)?.resize(DIGIT_SIDE, DIGIT_SIDE)));
        }
        let ls = local_support(&token, &peers)?;
        doc["local_support"] = serde_json::to_value(ls)?;
        doc["locally_consistent"] = json!(ls.is_consistent(params.epsilon));
        doc["descriptor"] = json!(extractor.method());
    }
    emit(&doc, &a.out)?;
    Ok(0)
}

fn cmd_verify_object(a: &VerifyObjectArgs) -> Result<u8> {
    let target = CycleClass::parse(&a.target)?;
    let config = SearchConfig {
        initial_threshold: a.threshold,
        decay: a.decay,
        floor: a.floor,
    };
    config.validate()?;
    let mut rules = ObjectRuleSet::load(&a.rules)?;
    if let Some(eps) = a.epsilon {
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::Parameter(format!("epsilon {eps} must be ≥ 0")));
        }
        rules.epsilon = eps;
    }
    let requirement = Requirement::for_class(target);
    let polarity = if a.light_ink {
        InkPolarity::LightInk
    } else {
        InkPolarity::DarkInk
    };
    let extractor = DogExtractor::default();
    let results = parallel_map(&a.detections, a.jobs, |path| -> Result<Value> {
        let file = load_detections(path)?;
        let search = iterative_search(&file, &requirement, &config)?;
        let metric = crop_metric(&search.accepted, &extractor, polarity)?;
        let verdict = classify(&search, &rules, metric.as_ref().map(|m| m as &dyn TokenMetric));
        let mut v = serde_json::to_value(&verdict)?;
        v["input"] = json!(path);
        Ok(v)
    });
    let verdicts = results.into_iter().collect::<Result<Vec<Value>>>()?;
    let rejected = verdicts.iter().any(|v| v["class"] == json!(CycleClass::None));
    emit(
        &json!({
            "schema": 1,
            "command": "verify-object",
            "params": {
                "target": target,
                "threshold": a.threshold,
                "decay": a.decay,
                "floor": a.floor,
                "epsilon": rules.epsilon,
                "descriptor": extractor.method(),
            },
            "rules": a.rules,
            "verdicts": verdicts,
        }),
        &a.out,
    )?;
    Ok(if rejected { 1 } else { 0 })
}

fn cmd_learn_ranges(a: &LearnRangesArgs) -> Result<u8> {
    let annotations = load_annotations(&a.annotations)?;
    let records = pair_records(&annotations);
    let rules = learn_range(&records, a.epsilon)?;
    rules.save(&a.out)?;
    let ranges: Vec<Value> = rules
        .ranges()
        .map(|(p, r)| json!({ "pair": p.to_string(), "min": r.min, "max": r.max }))
        .collect();
    emit(
        &json!({
            "schema": 1,
            "command": "learn-ranges",
            "params": { "epsilon": a.epsilon },
            "images": annotations.len(),
            "pairs": records.len(),
            "ranges": ranges,
            "out": a.out,
        }),
        &None,
    )?;
    Ok(0)
}

fn parse_place(spec: &str) -> Result<(usize, usize)> {
    let bad = || Error::Input(format!("--place {spec:?} is not rRcC=N"));
    let (cell, n) = spec.split_once('=').ok_or_else(bad)?;
    let cell = cell.strip_prefix('r').ok_or_else(bad)?;
    let (r, c) = cell.split_once('c').ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if !(1..=9).contains(&r) || !(1..=9).contains(&c) {
        return Err(bad());
    }
    Ok(((r - 1) * 9 + c - 1, n))
}

fn cmd_compose(a: &ComposeArgs) -> Result<u8> {
    let text = fs::read_to_string(&a.text).map_err(|e| Error::io(&a.text, e))?;
    let board: Board = text.parse()?;
    let test = MnistPaths::in_dir(data_dir(&a.data_dir)).load_test()?;
    let mut by_digit: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, l) in test.labels().iter().enumerate() {
        by_digit[*l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut chosen: Vec<Option<usize>> = (0..81)
        .map(|i| {
            board.value(i).map(|d| {
                let pool = &by_digit[d as usize];
                pool[rng.gen_range(0..pool.len())]
            })
        })
        .collect();
    for spec in &a.place {
        let (cell, n) = parse_place(spec)?;
        if n >= test.len() {
            return Err(Error::Input(format!("test image {n} out of range")));
        }
        chosen[cell] = Some(n);
    }
    let tiles: Vec<_> = chosen
        .iter()
        .map(|c| match c {
            Some(i) => test.images()[*i].clone(),
            None => crate::raster::Raster::zeros(DIGIT_SIDE, DIGIT_SIDE),
        })
        .collect();
    let grid = a.grid.spec();
    let picture = compose_board(&tiles, &grid)?;
    write_png(&picture, &a.out, grid.polarity)?;
    emit(
        &json!({
            "schema": 1,
            "command": "compose-board",
            "params": { "seed": a.seed, "grid": a.grid.header() },
            "test_images": chosen,
            "out": a.out,
        }),
        &None,
    )?;
    Ok(0)
}
