use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ttyrl::algo::{self, ActionRule, Algorithm, Checkpoint, DirCheckpoints, JsonLinesSink, ModelConfig, RunConfig};
use ttyrl::dataset::{catalog_json, entries, CharacterSpec, TaskCategory};
use ttyrl::env::{record_rollout, scripted_dataset, scripted_policy, GridHack, GridHackConfig};
use ttyrl::loader::{benchmark_loader, load, LoaderMode};
use ttyrl::render::{render_screen, RenderSpec};
use ttyrl::repack::{import_source, write_raw_file, StrataPlan};
use ttyrl::stats::{self, BootstrapConfig, Metric, Normalizer, ReportOptions};
use ttyrl::store::{open_store, write_store_with, Compression};
use ttyrl::Exec;

const DATA_DIR_ENV: &str = "KATAKOMBA_DATA_DIR";
const DEFAULT_TASK: &str = "mon-hum-neu";

#[derive(Parser, Debug)]
#[command(name = "ttyrl", version, about = "TTY trajectory datasets and offline RL at desk scale")]
pub struct Cli {
    /// Run batch loops on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select, align and pack raw recordings into a KTB1 store.
    Repack(RepackArgs),
    /// Store utilities.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Mean sampling latency per loader mode and batch shape.
    BenchLoader(BenchArgs),
    /// Rasterize one stored observation to PNG.
    Render(RenderArgs),
    /// Train an offline RL agent on a store.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the GridHack stub.
    Eval(EvalArgs),
    /// Aggregate evaluation records into CIs, profiles and improvement tables.
    Report(ReportArgs),
    /// Print the task catalog.
    Catalog(CatalogArgs),
    /// Generate synthetic datasets.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum StoreCommand {
    /// Print header and index as JSON.
    Inspect {
        /// Store file.
        path: PathBuf,
    },
}

#[derive(Args, Debug)]
struct StoreArg {
    /// Store file. Defaults to `$KATAKOMBA_DATA_DIR/<task>.ktb`.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Task used to locate the default store.
    #[arg(long, default_value = DEFAULT_TASK)]
    task: String,
}

impl StoreArg {
    fn resolve(&self) -> Result<PathBuf> {
        if let Some(p) = &self.store {
            return Ok(p.clone());
        }
        let dir = std::env::var_os(DATA_DIR_ENV).with_context(|| format!("no --store given and {DATA_DIR_ENV} is unset"))?;
        Ok(Path::new(&dir).join(format!("{}.ktb", self.task)))
    }
}

#[derive(Args, Debug)]
struct RepackArgs {
    /// Directory of `.ktr` raw streams.
    #[arg(long)]
    input: PathBuf,
    /// Task id of every stream, e.g. mon-hum-neu.
    #[arg(long)]
    task: String,
    /// Output store file.
    #[arg(long)]
    out: PathBuf,
    /// Number of score strata.
    #[arg(long, default_value_t = 10)]
    strata: usize,
    /// Episodes to keep.
    #[arg(long, default_value_t = 680)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none, deflate or zstd.
    #[arg(long, default_value = "zstd")]
    codec: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Comma-separated modes: in_memory, memmap, compressed.
    #[arg(long, default_value = "in_memory,memmap,compressed")]
    modes: String,
    /// Comma-separated BxL shapes.
    #[arg(long, default_value = "64x16,256x32,256x64")]
    shapes: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the CSV table here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, default_value_t = 0)]
    episode: usize,
    #[arg(long, default_value_t = 0)]
    step: usize,
    /// Output PNG file.
    #[arg(long)]
    png: PathBuf,
    /// Crop around the cursor, ROWSxCOLS (both odd).
    #[arg(long)]
    crop: Option<String>,
    /// Glyph cell size in pixels, WxH.
    #[arg(long, default_value = "4x6")]
    glyph: String,
    /// Do not invert the cursor cell.
    #[arg(long)]
    no_cursor: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    store: StoreArg,
    /// bc, cql, iql, awac or rem.
    #[arg(long)]
    algo: Option<String>,
    /// key = value hyperparameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the small crop-encoder network instead of the full-scale one.
    #[arg(long)]
    desk: bool,
    /// Training iterations
    #[arg(long)]
    iters: Option<u64>,
    /// Sequences per batch
    #[arg(long)]
    batch_size: Option<usize>,
    /// Steps per sequence
    #[arg(long)]
    seq_len: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// LSTM hidden size
    #[arg(long)]
    hidden: Option<usize>,
    /// Seed for init, sampling and dropout
    #[arg(long)]
    seed: Option<u64>,
    /// Extra KEY=VALUE settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Loader mode.
    #[arg(long, default_value = "in_memory")]
    mode: String,
    /// Output directory for checkpoints and metrics.jsonl.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    episodes: u64,
    /// Seed id; episode `i` resets the environment with `seed·2³² + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// sample_policy, greedy_policy or greedy_q. Defaults per algorithm.
    #[arg(long)]
    rule: Option<String>,
    /// Task label written into every record.
    #[arg(long, default_value = DEFAULT_TASK)]
    task: String,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Label written into every record. Defaults to the checkpoint's algorithm.
    #[arg(long)]
    name: Option<String>,
    /// JSON-lines output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MetricArg {
    NormalizedScore,
    DeathLevel,
    RawScore,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON-lines evaluation files (repeatable).
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "normalized_score")]
    metric: MetricArg,
    /// minmax or mean.
    #[arg(long, default_value = "minmax")]
    normalizer: String,
    /// base, extended or complete.
    #[arg(long)]
    category: Option<String>,
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optimality-gap threshold.
    #[arg(long, default_value_t = 100.0)]
    gamma0: f64,
    /// Directory for report.json and CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CatalogArgs {
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum SynthKind {
    /// Scripted-expert rollouts of the GridHack stub.
    Gridhack,
    /// Random room screens with random actions.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum SynthFormat {
    /// A KTB1 store file.
    Store,
    /// A directory of `.ktr` raw streams for `repack`.
    Raw,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "gridhack")]
    kind: SynthKind,
    #[arg(long, value_enum, default_value = "store")]
    format: SynthFormat,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output store file or raw directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "zstd")]
    codec: String,
    /// Episode length range for random data.
    #[arg(long, default_value_t = 50)]
    min_len: usize,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// GridHack episode horizon.
    #[arg(long, default_value_t = 200)]
    horizon: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Repack(a) => repack(a, exec),
        Command::Store {
            command: StoreCommand::Inspect { path },
        } => {
            let h = open_store(&path).with_context(|| format!("opening {}", path.display()))?;
            println!("{}", serde_json::to_string_pretty(&h.inspect_json())?);
            Ok(())
        }
        Command::BenchLoader(a) => bench(a),
        Command::Render(a) => render(a),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Report(a) => report(a, exec),
        Command::Catalog(a) => catalog(a),
        Command::Synth(a) => synth(a, exec),
    }
}

fn codec(name: &str) -> Result<Compression> {
    Compression::parse(name).with_context(|| format!("unknown codec '{name}' (none, deflate, zstd)"))
}

fn task(id: &str) -> Result<CharacterSpec> {
    CharacterSpec::parse(id).with_context(|| format!("unknown task '{id}'"))
}

fn pair(text: &str, what: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once('x')
        .with_context(|| format!("{what} must look like AxB, got '{text}'"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn repack(a: RepackArgs, exec: Exec) -> Result<()> {
    let plan = StrataPlan {
        n_strata: a.strata,
        target_episodes: a.episodes,
        seed: a.seed,
    };
    let summary = import_source(&a.input, task(&a.task)?, &plan, &a.out, codec(&a.codec)?, exec)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let path = a.store.resolve()?;
    let modes = a
        .modes
        .split(',')
        .map(|m| LoaderMode::parse(m.trim()).with_context(|| format!("unknown loader mode '{m}'")))
        .collect::<Result<Vec<_>>>()?;
    let shapes = a.shapes.split(',').map(|s| pair(s, "shape")).collect::<Result<Vec<_>>>()?;
    let table = benchmark_loader(&path, &modes, &shapes, a.iters, a.seed)?;
    let csv = table.to_csv();
    print!("{csv}");
    if let Some(p) = a.csv {
        std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let h = open_store(&a.store.resolve()?)?;
    if a.episode >= h.episode_count() {
        bail!("episode {} out of range ({} episodes)", a.episode, h.episode_count());
    }
    let ep = h.read_episode(a.episode)?;
    if a.step >= ep.len() {
        bail!("step {} out of range ({} steps)", a.step, ep.len());
    }
    let (gw, gh) = pair(&a.glyph, "glyph")?;
    let mut spec = match a.crop {
        Some(c) => {
            let (r, c) = pair(&c, "crop")?;
            RenderSpec::crop(r, c)
        }
        None => RenderSpec::default(),
    };
    spec.glyph_width = gw;
    spec.glyph_height = gh;
    spec.cursor_highlight = !a.no_cursor;
    spec.validate()?;
    let pixels = render_screen(ep.chars_at(a.step), ep.colors_at(a.step), ep.tty_cursor[a.step], &spec);
    let (hgt, wid) = (spec.height(), spec.width());
    let plane = hgt * wid;
    let img = image::RgbImage::from_fn(wid as u32, hgt as u32, |x, y| {
        let i = y as usize * wid + x as usize;
        image::Rgb([0, 1, 2].map(|c| (pixels[c * plane + i] * 255.0).round() as u8))
    });
    img.save(&a.png).with_context(|| format!("writing {}", a.png.display()))?;
    println!("{}", json!({ "png": a.png, "height": hgt, "width": wid }));
    Ok(())
}

/// Defaults < config file < `--desk` < individual flags < `--set`.
fn build_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut run = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let algo = a.algo.as_deref().unwrap_or("bc");
            RunConfig::for_algorithm(Algorithm::parse(algo).with_context(|| format!("unknown algorithm '{algo}'"))?)
        }
    };
    if let Some(algo) = &a.algo {
        run.set("algorithm", algo)?;
    }
    if a.desk {
        let t = &run.train;
        run.model = ModelConfig::desk(t.algorithm, t.rem_heads, a.hidden.unwrap_or(64));
    }
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            run.set(k, &v)?;
        }
        Ok(())
    };
    set("training_iterations", a.iters.map(|v| v.to_string()))?;
    set("batch_size", a.batch_size.map(|v| v.to_string()))?;
    set("sequence_length", a.seq_len.map(|v| v.to_string()))?;
    set("learning_rate", a.lr.map(|v| v.to_string()))?;
    set("lstm_hidden_dim", a.hidden.map(|v| v.to_string()))?;
    set("seed", a.seed.map(|v| v.to_string()))?;
    for kv in &a.sets {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        run.set(k.trim(), v.trim())?;
    }
    run.validate()?;
    Ok(run)
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let run = build_run_config(&a)?;
    let mode = LoaderMode::parse(&a.mode).with_context(|| format!("unknown loader mode '{}'", a.mode))?;
    let store = a.store.resolve()?;
    let mut handle = load(&store, mode).with_context(|| format!("loading {}", store.display()))?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.txt"), run.to_text())?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = JsonLinesSink(BufWriter::new(File::create(&metrics_path)?));
    let mut checkpoints = DirCheckpoints::new(&a.out);
    let result = algo::train(&handle, &run, &mut metrics, &mut checkpoints, exec)?;
    metrics.0.flush()?;
    let final_path = a.out.join("final.ktck");
    result.checkpoint.save(&final_path)?;
    handle.close()?;
    println!(
        "{}",
        json!({
            "algorithm": run.train.algorithm.name(),
            "iterations": result.checkpoint.iteration,
            "checkpoint": final_path,
            "metrics": metrics_path,
            "config_sha256": result.checkpoint.config_digest(),
            "last_loss": result.last_report.total,
        })
    );
    Ok(())
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let algo = ck.algorithm();
    let model = ck.model()?;
    let rule = match &a.rule {
        Some(r) => ActionRule::parse(r).with_context(|| format!("unknown action rule '{r}'"))?,
        None => ActionRule::default_for(algo),
    };
    let task = task(&a.task)?;
    let env_cfg = GridHackConfig {
        horizon: a.horizon,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..a.episodes).map(|i| (a.seed << 32) | i).collect();
    let episodes = algo::evaluate(&model, || GridHack::new(env_cfg.clone()), &seeds, rule, a.seed, Some(scripted_policy), exec)?;
    let name = a.name.unwrap_or_else(|| algo.name().to_string());
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for (i, e) in episodes.iter().enumerate() {
        let rec = json!({
            "algorithm": name,
            "task": task,
            "seed": a.seed,
            "episode": i,
            "score": e.score,
            "death_level": e.death_level,
            "steps": e.steps,
            "match_rate": e.match_rate(),
        });
        writeln!(out, "{rec}")?;
    }
    out.flush()?;
    Ok(())
}

fn report(a: ReportArgs, exec: Exec) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.inputs {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for mut r in stats::read_records(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))? {
            r.algorithm.get_or_insert_with(|| stem.clone());
            records.push(r);
        }
    }
    let matrices: Vec<_> = stats::group_by_algorithm(records, "default")?.into_values().collect();
    let metric = match a.metric {
        MetricArg::NormalizedScore => Metric::NormalizedScore(
            Normalizer::parse(&a.normalizer).with_context(|| format!("unknown normalizer '{}'", a.normalizer))?,
        ),
        MetricArg::DeathLevel => Metric::DeathLevel,
        MetricArg::RawScore => Metric::RawScore,
    };
    let category = a
        .category
        .as_deref()
        .map(|c| TaskCategory::parse(c).with_context(|| format!("unknown category '{c}'")))
        .transpose()?;
    let opts = ReportOptions {
        metric,
        category,
        bootstrap: BootstrapConfig {
            replicates: a.replicates,
            level: a.level,
            seed: a.seed,
        },
        taus: None,
        gamma0: a.gamma0,
    };
    let r = stats::report(&matrices, &opts, exec)?;
    if let Some(dir) = &a.out {
        r.write_dir(dir)?;
    }
    println!("{}", r.to_json());
    Ok(())
}

fn catalog(a: CatalogArgs) -> Result<()> {
    match a.format.as_str() {
        "json" => println!("{}", serde_json::to_string_pretty(&catalog_json())?),
        "csv" => {
            println!("task,category,transitions,median_turns,median_score,median_deathlvl,size_gb,compressed_size_gb,min_score,max_score,mean_score");
            for e in entries() {
                let (s, n) = (e.stats, e.normalization);
                println!(
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    e.task,
                    e.category.name(),
                    s.transitions,
                    s.median_turns,
                    s.median_score,
                    s.median_deathlvl,
                    s.size_gb,
                    s.compressed_size_gb,
                    n.min_score,
                    n.max_score,
                    n.mean_score
                );
            }
        }
        other => bail!("unknown format '{other}' (json, csv)"),
    }
    Ok(())
}

fn synth(a: SynthArgs, exec: Exec) -> Result<()> {
    let compression = codec(&a.codec)?;
    let env_cfg = GridHackConfig {
        horizon: a.horizon,
        ..Default::default()
    };
    match (a.kind, a.format) {
        (SynthKind::Gridhack, SynthFormat::Raw) => {
            std::fs::create_dir_all(&a.out)?;
            let t = task(DEFAULT_TASK)?;
            for i in 0..a.episodes as u64 {
                let seed = a.seed + i;
                let mut env = GridHack::new(env_cfg.clone());
                let raw = record_rollout(&mut env, seed, scripted_policy, t, &format!("gridhack-{seed}"))?;
                write_raw_file(&a.out.join(format!("{i:06}.ktr")), &raw)?;
            }
            println!("{}", json!({ "raw_dir": a.out, "episodes": a.episodes }));
        }
        (SynthKind::Random, SynthFormat::Raw) => bail!("raw output is only available for gridhack data"),
        (kind, SynthFormat::Store) => {
            if a.min_len == 0 || a.min_len > a.max_len {
                bail!("need 1 <= --min-len <= --max-len");
            }
            let episodes = match kind {
                SynthKind::Gridhack => scripted_dataset(a.episodes, a.seed, &env_cfg)?,
                SynthKind::Random => ttyrl::synth::random_episodes(a.episodes, a.min_len, a.max_len, a.seed),
            };
            let summary = write_store_with(&a.out, &episodes, compression, exec)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
    }
    Ok(())
}
