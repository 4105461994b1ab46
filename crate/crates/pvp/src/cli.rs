//! Command-line interface.

use crate::config::{config_hash, load_scene, ConfigFile, DEFAULT_PLATES};
use crate::dataset::{dataset_stats, Dataset, DatasetWriter, Flags};
use crate::error::{Error, Result};
use crate::harness::{self, EvalConfig, COMPARISON_SIZES};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pvp_core::collect::{CollectConfig, KinestheticConfig, Source, Telemetry};
use pvp_core::policy::{train, PolicyParams, TrainConfig};
use pvp_core::sim::{Scene, SceneConfig, FRAME_LEN};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Output root for relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "PVP_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "pvp", version, about = "Collect placing demonstrations by picking, train policies, run experiments")]
pub struct Cli {
    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run collection episodes and write a dataset.
    Collect(CollectArgs),
    /// Fit a policy to a dataset.
    Train(TrainArgs),
    /// Roll out a trained policy from randomized starts.
    Eval(EvalArgs),
    /// Run one of the ablation experiments.
    #[command(subcommand)]
    Ablate(AblateCommand),
    /// Print trajectory-length statistics of a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Pvp,
    Kinesthetic,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Scene: `dishrack`, `table`, or a scene TOML file.
    #[arg(long)]
    pub scene: Option<String>,
    /// Number of plates in the dish rack.
    #[arg(long)]
    pub plates: Option<usize>,
    /// Comma-separated object labels to pick (overrides the scene query).
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Run configuration file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Output directory; relative paths resolve under $PVP_OUT_ROOT when set.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave wall-clock times out of written files.
    #[arg(long)]
    pub no_timestamps: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of episodes.
    #[arg(long)]
    pub episodes: usize,
    /// Compliant stiffness while closing the gripper.
    #[arg(long)]
    pub ccg: bool,
    /// Tactile regrasping of shallow grasps.
    #[arg(long)]
    pub tr: bool,
    /// Perturb the leading place waypoints.
    #[arg(long)]
    pub noise_aug: bool,
    /// Demonstration source.
    #[arg(long, value_enum, default_value_t = SourceArg::Pvp)]
    pub source: SourceArg,
    /// Base seed; episode seeds derive from it.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOverrides {
    /// Mixture modes (1 with --deterministic).
    #[arg(long)]
    pub modes: Option<usize>,
    /// Unit-variance single Gaussian (squared-error equivalent).
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Use only the first N episodes.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Run configuration file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub run: RunArgs,
    /// Seed for initialization, split and minibatch order.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Policy file written by `train`.
    #[arg(long)]
    pub policy: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Action std used when acting.
    #[arg(long)]
    pub sigma_eval: Option<f64>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum AblateCommand {
    /// Collection failures without compliance, with compliance, and with regrasping.
    Robustness(RobustnessArgs),
    /// Deterministic and mixture heads with and without noise augmentation.
    Noise(NoiseArgs),
    /// Policies from collected versus hand-taught demonstrations over dataset sizes.
    Kinesthetic(KinestheticArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated experiment seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 128)]
    pub episodes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 128)]
    pub episodes: usize,
    /// Rollouts per seed and cell.
    #[arg(long)]
    pub rollouts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct KinestheticArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Comma-separated dataset sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Rollouts per seed and size.
    #[arg(long)]
    pub rollouts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the statistics to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Ctx {
    verbose: u8,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn resolve_scene(args: &SceneArgs, file: &ConfigFile) -> Result<SceneConfig> {
    let name = args.scene.clone().or_else(|| file.scene.clone()).unwrap_or_else(|| "dishrack".into());
    let plates = args.plates.or(file.plates).unwrap_or(DEFAULT_PLATES);
    let mut cfg = load_scene(&name, plates)?;
    if let Some(labels) = &args.labels {
        cfg.query = labels.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_train(o: &TrainOverrides, file: &ConfigFile) -> Result<TrainConfig> {
    let mut tc = file.train.unwrap_or_default();
    if o.deterministic {
        tc.fixed_std = true;
        tc.modes = 1;
    }
    if let Some(m) = o.modes {
        tc.modes = m;
    }
    if tc.fixed_std && tc.modes != 1 {
        return Err(Error::Config("a deterministic policy has exactly one mode".into()));
    }
    tc.epochs = o.epochs.unwrap_or(tc.epochs);
    tc.lr = o.lr.unwrap_or(tc.lr);
    tc.batch = o.batch.unwrap_or(tc.batch);
    tc.hidden = o.hidden.unwrap_or(tc.hidden);
    tc.validate()?;
    Ok(tc)
}

fn out_dir(run: &RunArgs) -> Result<PathBuf> {
    let dir = match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if run.out.is_relative() => Path::new(&root).join(&run.out),
        _ => run.out.clone(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn now(run: &RunArgs) -> Option<u64> {
    (!run.no_timestamps).then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { verbose: cli.verbose };
    match cli.command {
        Command::Collect(a) => pool(a.run.jobs)?.install(|| collect(&ctx, &a)),
        Command::Train(a) => pool(a.run.jobs)?.install(|| train_cmd(&ctx, &a)),
        Command::Eval(a) => pool(a.run.jobs)?.install(|| eval(&ctx, &a)),
        Command::Ablate(AblateCommand::Robustness(a)) => pool(a.run.jobs)?.install(|| robustness(&ctx, &a)),
        Command::Ablate(AblateCommand::Noise(a)) => pool(a.run.jobs)?.install(|| noise(&ctx, &a)),
        Command::Ablate(AblateCommand::Kinesthetic(a)) => pool(a.run.jobs)?.install(|| kinesthetic(&ctx, &a)),
        Command::Stats(a) => stats(&a),
    }
}

#[derive(Serialize)]
struct CollectRecord<'a> {
    scene: &'a SceneConfig,
    collect: &'a CollectConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    kinesthetic: Option<&'a KinestheticConfig>,
}

fn collect(ctx: &Ctx, a: &CollectArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(Error::Config("--episodes must be positive".into()));
    }
    let file = load_config(&a.scene.config)?;
    let scene_cfg = resolve_scene(&a.scene, &file)?;
    let mut cc = file.collect.unwrap_or(CollectConfig { ccg: false, tr: false, noise_aug: false, ..Default::default() });
    cc.ccg |= a.ccg;
    cc.tr |= a.tr;
    cc.noise_aug |= a.noise_aug;
    cc.validate()?;
    let kc = file.kinesthetic.unwrap_or_default();
    let scene = Arc::new(Scene::new(scene_cfg.clone())?);
    let dir = out_dir(&a.run)?;
    let source = match a.source {
        SourceArg::Pvp => Source::Pvp,
        SourceArg::Kinesthetic => Source::Kinesthetic,
    };
    let record = CollectRecord { scene: &scene_cfg, collect: &cc, kinesthetic: (source == Source::Kinesthetic).then_some(&kc) };
    let flags = Flags { source, noise_aug: cc.noise_aug && source == Source::Pvp, ccg: cc.ccg, tr: cc.tr };
    let mut writer = DatasetWriter::create(&dir, flags, config_hash(&record), now(&a.run))?;
    let start = Instant::now();
    let mut telemetry: Vec<Telemetry> = Vec::new();
    let mut written = 0;
    // bounded chunks keep memory flat while preserving episode order
    let chunk = 32;
    for lo in (0..a.episodes).step_by(chunk) {
        let n = chunk.min(a.episodes - lo);
        let episodes = match source {
            Source::Pvp => {
                let runs = harness::collect_pvp_range(&scene, &cc, a.seed, lo, n)?;
                let mut eps = Vec::new();
                for (t, e) in runs {
                    telemetry.push(t);
                    eps.extend(e);
                }
                eps
            }
            Source::Kinesthetic => harness::collect_kinesthetic_range(&scene, &cc, &kc, a.seed, lo, n)?.into_iter().flatten().collect(),
        };
        for e in &episodes {
            writer.append(e)?;
            written += 1;
        }
        ctx.note(format!("{}/{} episodes", lo + n, a.episodes));
    }
    let manifest = writer.finish()?;
    let failures = telemetry.iter().filter(|t| !t.success).count();
    if source == Source::Pvp {
        write_json(&dir.join("telemetry.json"), &telemetry)?;
    }
    let stats = dataset_stats(&manifest).ok();
    println!("{}", dir.join(crate::dataset::DATA_FILE).display());
    println!("{}", dir.join(crate::dataset::MANIFEST_FILE).display());
    if source == Source::Pvp {
        println!("{}", dir.join("telemetry.json").display());
    }
    let mean = stats.map(|s| s.length.mean).unwrap_or(f64::NAN);
    println!(
        "collected {written} of {} episodes ({failures} collection failures), mean length {mean:.2}, {:.1}s",
        a.episodes,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let file = load_config(&a.config)?;
    let mut tc = resolve_train(&a.train, &file)?;
    tc.seed = a.seed;
    let stack = file.collect.unwrap_or_default().frame_stack;
    let ds = Dataset::open(&a.data)?;
    let episodes = match a.limit {
        Some(n) => ds.load_first(n)?,
        None => ds.load()?,
    };
    ctx.note(format!("loaded {} episodes", episodes.len()));
    let start = Instant::now();
    let trained = train(&episodes, &tc, FRAME_LEN, stack)?;
    let dir = out_dir(&a.run)?;
    let policy = dir.join("policy.bin");
    std::fs::write(&policy, trained.params.to_bytes()).map_err(|e| Error::io(&policy, e))?;
    let mut log = String::from("epoch,train_nll,heldout_nll\n");
    for l in &trained.log {
        log.push_str(&format!("{},{},{}\n", l.epoch, l.train_nll, l.heldout_nll));
    }
    let log_path = dir.join("train_log.csv");
    write_text(&log_path, &log)?;
    println!("{}", policy.display());
    println!("{}", log_path.display());
    let last = trained.log.last().expect("log has the initial entry");
    println!(
        "trained on {} episodes ({} held out), held-out nll {:.3} -> {:.3}, {:.1}s",
        trained.train_episodes,
        trained.heldout_episodes,
        trained.log[0].heldout_nll,
        last.heldout_nll,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    scene: &'a SceneConfig,
    eval: EvalConfig,
    sigma_eval: f64,
    seed: u64,
    successes: usize,
    rollouts: usize,
    outcomes: &'a [pvp_core::rollout::Outcome],
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_s: Option<f64>,
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let file = load_config(&a.scene.config)?;
    let scene_cfg = resolve_scene(&a.scene, &file)?;
    let mut ec = file.eval.unwrap_or_default();
    ec.rollouts = a.rollouts.unwrap_or(ec.rollouts);
    ec.max_steps = a.max_steps.unwrap_or(ec.max_steps);
    if ec.rollouts == 0 {
        return Err(Error::Config("--rollouts must be positive".into()));
    }
    let sigma_eval = a.sigma_eval.or(file.train.map(|t| t.sigma_eval)).unwrap_or(TrainConfig::default().sigma_eval);
    let bytes = std::fs::read(&a.policy).map_err(|e| Error::io(&a.policy, e))?;
    let params = PolicyParams::from_bytes(&bytes).map_err(|e| Error::Format { path: a.policy.clone(), reason: e.to_string() })?;
    if params.layout.frame_len != FRAME_LEN {
        return Err(Error::Format { path: a.policy.clone(), reason: "policy expects a different frame size".into() });
    }
    let scene = Arc::new(Scene::new(scene_cfg.clone())?);
    let start = Instant::now();
    let outcomes = harness::evaluate(&scene, &params, sigma_eval, params.layout.stack, &ec, a.seed)?;
    ctx.note(format!("{} rollouts", outcomes.len()));
    let successes = outcomes.iter().filter(|o| o.success).count();
    let dir = out_dir(&a.run)?;
    let report = EvalReport {
        scene: &scene_cfg,
        eval: ec,
        sigma_eval,
        seed: a.seed,
        successes,
        rollouts: outcomes.len(),
        outcomes: &outcomes,
        runtime_s: (!a.run.no_timestamps).then(|| start.elapsed().as_secs_f64()),
    };
    let path = dir.join("eval.json");
    write_json(&path, &report)?;
    println!("{}", path.display());
    println!("success {successes}/{} ({:.1}%)", outcomes.len(), 100.0 * successes as f64 / outcomes.len() as f64);
    Ok(())
}

fn robustness(ctx: &Ctx, a: &RobustnessArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(Error::Config("--episodes must be positive".into()));
    }
    let file = load_config(&a.scene.config)?;
    let scene = resolve_scene(&a.scene, &file)?;
    let cc = file.collect.unwrap_or_default();
    let start = Instant::now();
    let mut report = harness::ablate_robustness(&scene, &cc, &a.seeds, a.episodes)?;
    report.runtime_s = (!a.run.no_timestamps).then(|| start.elapsed().as_secs_f64());
    ctx.note("robustness ablation done");
    let dir = out_dir(&a.run)?;
    let (json, csv) = (dir.join("robustness.json"), dir.join("robustness.csv"));
    write_json(&json, &report)?;
    write_text(&csv, &report.csv())?;
    println!("{}\n{}", json.display(), csv.display());
    println!("{}", report.summary());
    Ok(())
}

fn eval_config(file: &ConfigFile, rollouts: Option<usize>, default_rollouts: usize) -> Result<EvalConfig> {
    let mut ec = file.eval.unwrap_or(EvalConfig { rollouts: default_rollouts, ..Default::default() });
    ec.rollouts = rollouts.unwrap_or(ec.rollouts);
    if ec.rollouts == 0 {
        return Err(Error::Config("--rollouts must be positive".into()));
    }
    Ok(ec)
}

fn noise(ctx: &Ctx, a: &NoiseArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(Error::Config("--episodes must be positive".into()));
    }
    let file = load_config(&a.scene.config)?;
    let scene = resolve_scene(&a.scene, &file)?;
    let cc = file.collect.unwrap_or_default();
    let tc = resolve_train(&a.train, &file)?;
    let ec = eval_config(&file, a.rollouts, 20)?;
    let start = Instant::now();
    let mut report = harness::ablate_noise(&scene, &cc, &tc, &ec, &a.seeds, a.episodes)?;
    report.runtime_s = (!a.run.no_timestamps).then(|| start.elapsed().as_secs_f64());
    ctx.note("noise ablation done");
    let dir = out_dir(&a.run)?;
    let (json, csv) = (dir.join("noise.json"), dir.join("noise.csv"));
    write_json(&json, &report)?;
    write_text(&csv, &report.csv())?;
    println!("{}\n{}", json.display(), csv.display());
    println!("{}", report.summary());
    Ok(())
}

fn kinesthetic(ctx: &Ctx, a: &KinestheticArgs) -> Result<()> {
    let file = load_config(&a.scene.config)?;
    let scene = resolve_scene(&a.scene, &file)?;
    let cc = file.collect.unwrap_or_default();
    let kc = file.kinesthetic.unwrap_or_default();
    let tc = resolve_train(&a.train, &file)?;
    let ec = eval_config(&file, a.rollouts, 8)?;
    let sizes = a.sizes.clone().unwrap_or_else(|| COMPARISON_SIZES.to_vec());
    let start = Instant::now();
    let mut report = harness::compare_kinesthetic(&scene, &cc, &kc, &tc, &ec, &a.seeds, &sizes)?;
    report.runtime_s = (!a.run.no_timestamps).then(|| start.elapsed().as_secs_f64());
    ctx.note("comparison done");
    let dir = out_dir(&a.run)?;
    let (json, csv) = (dir.join("comparison.json"), dir.join("comparison.csv"));
    write_json(&json, &report)?;
    write_text(&csv, &report.csv())?;
    println!("{}\n{}", json.display(), csv.display());
    println!("{}", report.summary());
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let s = dataset_stats(&ds.manifest)?;
    let json = serde_json::to_string_pretty(&s).expect("stats serialize");
    if let Some(path) = &a.out {
        write_text(path, &(json.clone() + "\n"))?;
        println!("{}", path.display());
    }
    println!("{json}");
    println!(
        "{} episodes, length mean {:.2} std {:.2} min {} max {}",
        s.length.count, s.length.mean, s.length.std, s.length.min, s.length.max
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flags_and_zero_episodes_exit_2() {
        assert_eq!(main_with_args(["pvp", "collect", "--episodes", "1", "--seed", "0", "--out", "x", "--bogus"]), 2);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        assert_eq!(main_with_args(["pvp", "collect", "--episodes", "0", "--seed", "0", "--out", out.to_str().unwrap()]), 2);
        assert_eq!(main_with_args(["pvp", "ablate", "robustness", "--out", out.to_str().unwrap()]), 2);
    }

    #[test]
    fn deterministic_conflicts_with_modes() {
        let o = TrainOverrides { modes: Some(5), deterministic: true, epochs: None, lr: None, batch: None, hidden: None };
        assert!(resolve_train(&o, &ConfigFile::default()).is_err());
        let o = TrainOverrides { modes: None, deterministic: true, epochs: Some(2), lr: None, batch: None, hidden: None };
        let tc = resolve_train(&o, &ConfigFile::default()).unwrap();
        assert!(tc.fixed_std && tc.modes == 1 && tc.epochs == 2);
    }
}
