//! Command-line front end: each subcommand reads files, calls into
//! `graspkb` and writes a primary output plus a run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graspkb::dataset::{self, Profile, SynthConfig};
use graspkb::exact::{self, ExactQuery};
use graspkb::learner::{self, TrainingConfig, TrainingData};
use graspkb::logic::{
    harvest_objects, parse_rules, parse_schema, parse_worlds, write_rules, write_schema,
    write_worlds,
};
use graspkb::logic::{Universe, World};
use graspkb::metrics;
use graspkb::model::{sha256_hex, KnowledgeBase, ModelFile};
use graspkb::patches::{self, PointCloud};
use graspkb::sampler::{self, QuerySpec, SamplerConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] graspkb::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "graspkb",
    version,
    about = "Grasp-affordance knowledge base: learn, query, map and evaluate"
)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Primary output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run manifest path (defaults to `<out>.manifest.json`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and assign its object-level train/test split.
    Ingest(IngestArgs),
    /// Sample a corpus from a weighted model.
    Synth(SynthArgs),
    /// Learn rule weights by maximising the pseudo-log-likelihood.
    Learn(LearnArgs),
    /// Rank (affordance, region) pairs for one object.
    Query(QueryArgs),
    /// Turn a region label into a grasp pose on a point cloud.
    Map(MapArgs),
    /// Evaluation tools.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Generic,
    /// Domain sizes and predicates of the affordance questionnaire.
    #[value(alias = "paper")]
    Questionnaire,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Generic => Profile::Generic,
            ProfileArg::Questionnaire => Profile::Questionnaire,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub worlds: PathBuf,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_RATIO)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value = "generic")]
    pub profile: ProfileArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Container/electronics pouring contrast (0.67 vs 0.07).
    Table1,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with_all = ["model", "schema", "rules"])]
    pub preset: Option<Preset>,
    /// Generating model (`.kbm`).
    #[arg(long, conflicts_with_all = ["schema", "rules"])]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "rules")]
    pub schema: Option<PathBuf>,
    /// Rules with every weight given (`@ w`).
    #[arg(long, requires = "schema")]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = 328)]
    pub objects: usize,
    #[arg(long, default_value_t = 10)]
    pub worlds_per_object: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_RATIO)]
    pub ratio: f64,
    /// Also write the schema here.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    /// Also write the rules, unweighted and ready for `learn`.
    #[arg(long)]
    pub rules_out: Option<PathBuf>,
    /// Also write the corpus split manifest here.
    #[arg(long)]
    pub split_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub worlds: PathBuf,
    /// Prior standard deviation; `inf` disables the prior.
    #[arg(long, default_value_t = 10.0)]
    pub prior_sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Which worlds to learn from.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_RATIO)]
    pub ratio: f64,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub evidence: PathBuf,
    #[arg(long)]
    pub object: String,
    /// Restrict G* to pairs with this affordance.
    #[arg(long)]
    pub affordance: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["region", "query"]))]
pub struct MapArgs {
    /// Point cloud (`x y z [label]` text or PLY).
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub region: Option<String>,
    /// Take the region of G* from a `query` result.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Region labels, one patch each.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub regions: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Exact marginals by enumeration.
    Exact(ExactArgs),
    /// Per-image Hausdorff distance between ground-truth and predicted rectangles.
    Hausdorff(HausdorffArgs),
    /// Mean per-affordance ROC AUC of scored predictions.
    Auc(AucArgs),
    /// Synthesize, learn, query the held-out objects and report AUC.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Clamp to this world; predicates it never mentions stay free.
    #[arg(long)]
    pub evidence: Option<PathBuf>,
    /// Objects of the universe when there is no evidence.
    #[arg(long, value_delimiter = ',', default_value = "obj")]
    pub objects: Vec<String>,
    /// Free predicates (overrides the evidence-based default).
    #[arg(long, value_delimiter = ',')]
    pub query: Vec<String>,
}

#[derive(Debug, Args)]
pub struct HausdorffArgs {
    #[arg(long)]
    pub rects: PathBuf,
    #[arg(long, default_value_t = metrics::DEFAULT_SAMPLES_PER_SIDE)]
    pub samples_per_side: usize,
}

#[derive(Debug, Args)]
pub struct AucArgs {
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 328)]
    pub objects: usize,
    #[arg(long, default_value_t = 10)]
    pub worlds_per_object: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = 10.0)]
    pub prior_sigma: f64,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
}

/// Provenance of one run. Timings are the only non-deterministic field.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub timings_ms: BTreeMap<String, f64>,
}

/// Input bookkeeping shared by every command.
pub struct Run {
    subcommand: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    timings_ms: BTreeMap<String, f64>,
    started: Instant,
}

impl Run {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Run {
            subcommand: subcommand.to_string(),
            seed,
            inputs: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| {
            CliError::Core(graspkb::Error::Invalid(format!(
                "{} is not UTF-8",
                path.display()
            )))
        })
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings_ms
            .insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn finish(mut self, config: serde_json::Value) -> RunManifest {
        self.timings_ms
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        RunManifest {
            subcommand: self.subcommand,
            inputs: self.inputs,
            config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timings_ms: self.timings_ms,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn config_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("serialisable")
}

/// Six decimal places, as printed in result files.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Executes the command and returns the primary output together with its
/// manifest. Side outputs (`--schema-out` etc.) are written directly.
pub fn execute(cli: &Cli) -> Result<(Vec<u8>, RunManifest)> {
    let seed = cli.seed;
    match &cli.command {
        Command::Ingest(a) => ingest(a, seed),
        Command::Synth(a) => synth(a, seed),
        Command::Learn(a) => learn(a, seed),
        Command::Query(a) => query(a, seed),
        Command::Map(a) => map(a, seed),
        Command::Eval(EvalCommand::Exact(a)) => eval_exact(a, seed),
        Command::Eval(EvalCommand::Hausdorff(a)) => eval_hausdorff(a, seed),
        Command::Eval(EvalCommand::Auc(a)) => eval_auc(a, seed),
        Command::Eval(EvalCommand::Pipeline(a)) => eval_pipeline(a, seed),
    }
}

/// Runs the parsed command line, writing the primary output and manifest.
pub fn run(cli: &Cli) -> Result<()> {
    let (output, manifest) = execute(cli)?;
    match &cli.out {
        Some(path) => write_file(path, &output)?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&output)
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })?;
        }
    }
    let manifest_path = cli.manifest.clone().or_else(|| {
        cli.out.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    let text = to_json(&manifest);
    match manifest_path {
        Some(p) => write_file(&p, text.as_bytes())?,
        None => log::info!("manifest: {text}"),
    }
    Ok(())
}

fn ingest(a: &IngestArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("ingest", seed);
    let schema = run.read_text(&a.schema)?;
    let worlds = run.read_text(&a.worlds)?;
    let corpus = run.time("ingest", || {
        dataset::ingest(&schema, &worlds, a.ratio, seed, a.profile.into())
    })?;
    log::info!(
        "{} worlds, {} objects, {} test worlds",
        corpus.worlds.len(),
        corpus.objects().len(),
        corpus.test().len()
    );
    let out = to_json(&corpus.manifest());
    let config = serde_json::json!({ "ratio": a.ratio, "profile": format!("{:?}", a.profile).to_lowercase() });
    Ok((out.into_bytes(), run.finish(config)))
}

/// Knowledge base of the Table I preset and its rules with all weights
/// free, for learning.
pub fn table1_preset() -> Result<(KnowledgeBase, String)> {
    let kb = dataset::table1_contrast(0.67, 0.07)?;
    let mut rules = parse_rules(dataset::CONTRAST_RULES, &kb.schema)?;
    for r in &mut rules {
        r.weight = None;
    }
    let text = write_rules(&kb.schema, &rules);
    Ok((kb, text))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("synth", seed);
    let (kb, learn_rules) = match (&a.preset, &a.model, &a.schema, &a.rules) {
        (Some(Preset::Table1), _, _, _) => table1_preset()?,
        (None, Some(m), _, _) => {
            let kb = ModelFile::parse(&run.read_text(m)?)?.kb;
            let text = unweighted_rules(&kb);
            (kb, text)
        }
        (None, None, Some(s), Some(r)) => {
            let schema = parse_schema(&run.read_text(s)?)?;
            let rules = parse_rules(&run.read_text(r)?, &schema)?;
            if let Some(i) = rules.iter().position(|r| r.weight.is_none()) {
                return Err(CliError::Usage(format!(
                    "rule {} has no weight; synth needs a fully weighted model",
                    i + 1
                )));
            }
            let kb = KnowledgeBase::from_rules(schema, rules);
            let text = unweighted_rules(&kb);
            (kb, text)
        }
        _ => {
            return Err(CliError::Usage(
                "give --preset, --model or --schema with --rules".into(),
            ))
        }
    };
    let cfg = SynthConfig {
        objects: a.objects,
        worlds_per_object: a.worlds_per_object,
        seed,
        train_ratio: a.ratio,
    };
    let corpus = run.time("synthesize", || dataset::synthesize(&kb, &cfg))?;
    if let Some(p) = &a.schema_out {
        write_file(p, write_schema(&kb.schema).as_bytes())?;
    }
    if let Some(p) = &a.rules_out {
        write_file(p, learn_rules.as_bytes())?;
    }
    if let Some(p) = &a.split_out {
        write_file(p, to_json(&corpus.manifest()).as_bytes())?;
    }
    let out = write_worlds(&corpus.schema, &corpus.worlds);
    let mut config = config_json(&cfg);
    config["preset"] = serde_json::json!(a.preset.map(|p| format!("{p:?}").to_lowercase()));
    config["weights"] = serde_json::json!(kb.weights);
    Ok((out.into_bytes(), run.finish(config)))
}

fn unweighted_rules(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for i in 0..kb.n_formulas() {
        writeln!(out, "{}", kb.formula_text(i)).unwrap();
    }
    out
}

fn learn(a: &LearnArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("learn", seed);
    let schema_bytes = run.read(&a.schema)?;
    let rules_bytes = run.read(&a.rules)?;
    let worlds_text = run.read_text(&a.worlds)?;
    let utf8 = |b: &[u8], p: &Path| {
        std::str::from_utf8(b).map(str::to_string).map_err(|_| {
            CliError::Core(graspkb::Error::Invalid(format!(
                "{} is not UTF-8",
                p.display()
            )))
        })
    };
    let schema = parse_schema(&utf8(&schema_bytes, &a.schema)?)?;
    let rules = parse_rules(&utf8(&rules_bytes, &a.rules)?, &schema)?;
    let worlds = parse_worlds(&worlds_text, &schema)?;
    let worlds = match a.split {
        SplitArg::All => worlds,
        SplitArg::Train => dataset::Corpus::new(schema.clone(), worlds, a.ratio, seed)?.train(),
    };
    let kb = KnowledgeBase::from_rules(schema, rules);
    let cfg = TrainingConfig {
        prior_sigma: a.prior_sigma,
        max_iterations: a.max_iter,
        tolerance: a.tol,
        seed,
        ..Default::default()
    };
    let data = run.time("ground", || TrainingData::from_worlds(&kb, &worlds))?;
    let learned = run.time("fit", || learner::fit(&kb, &data, &cfg))?;
    let d = &learned.diagnostics;
    log::info!(
        "{:?} after {} iterations: PLL {:.6} -> {:.6}",
        d.status,
        d.iterations,
        d.initial_pll,
        d.final_pll
    );
    let mut file = ModelFile::new(learned.kb, &schema_bytes, &rules_bytes);
    file.comments.push(format!(
        "learned from {} worlds: {:?} after {} iterations, PLL {:.6}",
        data.n_worlds(),
        d.status,
        d.iterations,
        d.final_pll
    ));
    let mut config = config_json(&cfg);
    config["split"] = serde_json::json!(format!("{:?}", a.split).to_lowercase());
    config["ratio"] = serde_json::json!(a.ratio);
    config["diagnostics"] = config_json(d);
    Ok((file.write().into_bytes(), run.finish(config)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOut {
    pub affordance: String,
    pub region: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOut {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOut {
    pub split_disagreement: Vec<f64>,
    pub between_chains: f64,
}

/// The `query` result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub object: String,
    pub evidence_world: String,
    pub affordance: Option<String>,
    /// All pairs, most probable first.
    pub pairs: Vec<PairOut>,
    pub affordances: Vec<LabelOut>,
    pub regions: Vec<LabelOut>,
    /// Best affordance of each region.
    pub ga_r: Vec<PairOut>,
    /// The selected grasp affordance G*.
    pub selected: PairOut,
    pub degenerate: bool,
    pub diagnostics: DiagnosticsOut,
}

fn pair_out(p: &sampler::PairProbability) -> PairOut {
    PairOut {
        affordance: p.affordance.clone(),
        region: p.region.clone(),
        probability: round6(p.probability),
    }
}

fn label_out(l: &[sampler::LabelProbability]) -> Vec<LabelOut> {
    l.iter()
        .map(|l| LabelOut {
            label: l.label.clone(),
            probability: round6(l.probability),
        })
        .collect()
}

/// The first evidence world that mentions `object`.
pub fn evidence_for<'a>(worlds: &'a [World], object: &str) -> Result<&'a World> {
    worlds
        .iter()
        .find(|w| w.objects.contains(object))
        .ok_or_else(|| {
            CliError::Core(graspkb::Error::Validation(vec![format!(
                "object `{object}` does not appear in the evidence (known: {})",
                harvest_objects(worlds).join(", ")
            )]))
        })
}

/// Runs the query and builds the report, rounding probabilities.
pub fn query_report(
    kb: &KnowledgeBase,
    evidence: &World,
    object: &str,
    affordance: Option<&str>,
    cfg: &SamplerConfig,
) -> Result<QueryReport> {
    let mut request = QuerySpec::new(object);
    request.affordance = affordance.map(str::to_string);
    let r = sampler::query(kb, evidence, &request, cfg)?;
    let selected = sampler::select_grasp(&r.pairs, affordance)?;
    Ok(QueryReport {
        object: r.object.clone(),
        evidence_world: evidence.id.clone(),
        affordance: affordance.map(str::to_string),
        pairs: r.pairs.iter().map(pair_out).collect(),
        affordances: label_out(&r.affordances),
        regions: label_out(&r.regions),
        ga_r: r.best_per_region.iter().map(pair_out).collect(),
        selected: pair_out(selected),
        degenerate: r.degenerate,
        diagnostics: DiagnosticsOut {
            split_disagreement: r
                .diagnostics
                .split_disagreement
                .iter()
                .map(|&v| round6(v))
                .collect(),
            between_chains: round6(r.diagnostics.between_chains),
        },
    })
}

fn query(a: &QueryArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("query", seed);
    let model = ModelFile::parse(&run.read_text(&a.model)?)?;
    let worlds = parse_worlds(&run.read_text(&a.evidence)?, &model.kb.schema)?;
    let evidence = evidence_for(&worlds, &a.object)?;
    let cfg = SamplerConfig {
        chains: a.chains,
        burn_in: a.burn_in,
        samples: a.samples,
        seed,
    };
    let report = run.time("query", || {
        query_report(
            &model.kb,
            evidence,
            &a.object,
            a.affordance.as_deref(),
            &cfg,
        )
    })?;
    if report.diagnostics.between_chains > 0.05 {
        log::warn!(
            "chains disagree by up to {:.3}; consider more samples",
            report.diagnostics.between_chains
        );
    }
    let mut config = config_json(&cfg);
    config["object"] = serde_json::json!(a.object);
    config["affordance"] = serde_json::json!(a.affordance);
    Ok((to_json(&report).into_bytes(), run.finish(config)))
}

/// The `map` result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub region: String,
    pub position: [f64; 3],
    /// `(w, x, y, z)`, unit length, `w ≥ 0`.
    pub quaternion: [f64; 4],
    pub normal: [f64; 3],
    pub gamma: f64,
    pub residual: f64,
    pub patch_size: usize,
    /// Distance from the patch centroid to the centroid of the points
    /// labelled `region`, over the cloud's bounding-box diagonal; only for
    /// labelled clouds.
    pub centroid_error: Option<f64>,
}

pub fn map_region(
    cloud: &PointCloud,
    regions: &[String],
    region: &str,
    seed: u64,
) -> Result<PoseReport> {
    let (patch, pose) = patches::pose_for_region(cloud, regions, region, seed)?;
    let centroid_error = match &cloud.labels {
        Some(labels) => {
            let truth: Vec<_> = labels
                .iter()
                .zip(&cloud.points)
                .filter(|(l, _)| *l == region)
                .map(|(_, p)| *p)
                .collect();
            if truth.is_empty() {
                None
            } else {
                let c = truth.iter().sum::<patches::Vec3>() / truth.len() as f64;
                let diag = cloud.diagonal();
                let d = (c - patches::Vec3::from(pose.position)).norm();
                Some(if diag > 0.0 { d / diag } else { 0.0 })
            }
        }
        None => None,
    };
    Ok(PoseReport {
        region: pose.label,
        position: pose.position,
        quaternion: pose.quaternion,
        normal: pose.normal,
        gamma: pose.gamma,
        residual: pose.residual,
        patch_size: patch.members.len(),
        centroid_error,
    })
}

fn map(a: &MapArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("map", seed);
    let cloud = PointCloud::read(&run.read(&a.cloud)?)?;
    let region = match (&a.region, &a.query) {
        (Some(r), _) => r.clone(),
        (None, Some(q)) => {
            let text = run.read_text(q)?;
            let report: QueryReport =
                serde_json::from_str(&text).map_err(|source| CliError::Json {
                    path: q.clone(),
                    source,
                })?;
            report.selected.region
        }
        (None, None) => return Err(CliError::Usage("give --region or --query".into())),
    };
    let pose = run.time("map", || map_region(&cloud, &a.regions, &region, seed))?;
    let config = serde_json::json!({ "region": region, "regions": a.regions });
    Ok((to_json(&pose).into_bytes(), run.finish(config)))
}

/// Exact marginals of the free atoms as `atom,probability` CSV.
pub fn exact_marginals_csv(
    kb: &KnowledgeBase,
    evidence: Option<&World>,
    objects: &[String],
    query: &[String],
) -> Result<String> {
    let objects: Vec<String> = match evidence {
        Some(w) if !w.objects.is_empty() => w.objects.iter().cloned().collect(),
        _ => objects.to_vec(),
    };
    let universe = Universe::new(&kb.schema, &objects)?;
    let n_preds = kb.schema.predicates.len();
    let mut free_preds: BTreeSet<usize> = BTreeSet::new();
    for name in query {
        let p = kb.schema.predicate_index(name).ok_or_else(|| {
            CliError::Core(graspkb::Error::Invalid(format!(
                "unknown predicate `{name}`"
            )))
        })?;
        free_preds.insert(p);
    }
    if free_preds.is_empty() {
        let mentioned: BTreeSet<usize> = evidence
            .map(|w| w.atoms.iter().map(|a| a.predicate).collect())
            .unwrap_or_default();
        free_preds = (0..n_preds).filter(|p| !mentioned.contains(p)).collect();
    }
    let state = match evidence {
        Some(w) => universe.state_of(w)?,
        None => vec![false; universe.n_atoms()],
    };
    let free: Vec<usize> = free_preds
        .iter()
        .flat_map(|&p| universe.atoms_of(p, None))
        .collect();
    let names: Vec<String> = free.iter().map(|&a| universe.atom_name(a)).collect();
    let table = graspkb::grounder::GroundingTable::new(&kb.formulas, universe)?;
    let res = exact::enumerate_query(&kb.weights, &table, &ExactQuery::new(free.clone(), state))?;
    let mut out = String::from("atom,probability\n");
    for (a, name) in free.iter().zip(names) {
        writeln!(out, "\"{name}\",{:.12}", res.marginal(*a)).unwrap();
    }
    Ok(out)
}

fn eval_exact(a: &ExactArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("eval exact", seed);
    let model = ModelFile::parse(&run.read_text(&a.model)?)?;
    let evidence = match &a.evidence {
        Some(p) => {
            let worlds = parse_worlds(&run.read_text(p)?, &model.kb.schema)?;
            match worlds.len() {
                1 => worlds.into_iter().next(),
                n => {
                    return Err(CliError::Core(graspkb::Error::Validation(vec![format!(
                        "evidence must hold exactly one world, found {n}"
                    )])))
                }
            }
        }
        None => None,
    };
    let out = run.time("enumerate", || {
        exact_marginals_csv(&model.kb, evidence.as_ref(), &a.objects, &a.query)
    })?;
    let config = serde_json::json!({ "objects": a.objects, "query": a.query });
    Ok((out.into_bytes(), run.finish(config)))
}

fn eval_hausdorff(a: &HausdorffArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("eval hausdorff", seed);
    let records = metrics::parse_rect_csv(&run.read_text(&a.rects)?)?;
    let report = run.time("hausdorff", || {
        metrics::hausdorff_report(&records, a.samples_per_side)
    })?;
    let config =
        serde_json::json!({ "samples_per_side": a.samples_per_side, "summary": report.summary });
    Ok((report.to_csv().into_bytes(), run.finish(config)))
}

fn eval_auc(a: &AucArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("eval auc", seed);
    let rows = metrics::parse_score_csv(&run.read_text(&a.scores)?)?;
    let report = metrics::mean_auc_per_affordance(&rows)?;
    let config = serde_json::json!({ "rows": rows.len(), "skipped": report.skipped });
    Ok((report.to_csv().into_bytes(), run.finish(config)))
}

/// Outcome of the synthetic end-to-end protocol.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub auc: metrics::AucReport,
    /// `P(pour | container) / P(pour | electronics)` of the learned model.
    pub learned_ratio: f64,
    pub true_ratio: f64,
    pub train_worlds: usize,
    pub test_worlds: usize,
}

impl PipelineReport {
    /// Table III layout: one AUC per affordance and the mean.
    pub fn to_csv(&self) -> String {
        self.auc.to_csv()
    }
}

/// Evidence atoms with the object argument dropped.
type AttributeKey = Vec<(usize, Vec<String>)>;

/// Samples the Table I corpus, learns on the training objects, queries
/// every held-out world's attributes and scores the affordance marginals.
pub fn pipeline(cfg: &PipelineArgs, seed: u64) -> Result<PipelineReport> {
    let (truth, rules_text) = table1_preset()?;
    let corpus = dataset::synthesize(
        &truth,
        &SynthConfig {
            objects: cfg.objects,
            worlds_per_object: cfg.worlds_per_object,
            seed,
            train_ratio: cfg.ratio,
        },
    )?;
    let train = corpus.train();
    let test = corpus.test();
    let rules = parse_rules(&rules_text, &truth.schema)?;
    let kb = KnowledgeBase::from_rules(truth.schema.clone(), rules);
    let data = TrainingData::from_worlds(&kb, &train)?;
    let learned = learner::fit(
        &kb,
        &data,
        &TrainingConfig {
            prior_sigma: cfg.prior_sigma,
            seed,
            ..Default::default()
        },
    )?
    .kb;
    let ratio = |kb: &KnowledgeBase| -> Result<f64> {
        Ok(dataset::affordance_given_category(kb, "container", "pour")?
            / dataset::affordance_given_category(kb, "electronics", "pour")?)
    };
    let schema = &learned.schema;
    let aff = schema
        .predicate_index("hasAffordance")
        .expect("preset predicate");
    let reg = schema
        .predicate_index("graspRegion")
        .expect("preset predicate");
    let sampler_cfg = SamplerConfig {
        chains: cfg.chains,
        burn_in: cfg.burn_in,
        samples: cfg.samples,
        seed,
    };
    // worlds with the same attributes share one query
    let mut cache: BTreeMap<AttributeKey, Vec<(String, f64)>> = BTreeMap::new();
    let mut rows = Vec::new();
    for w in &test {
        let object = dataset::world_key(w).to_string();
        let mut evidence = w.clone();
        evidence
            .atoms
            .retain(|a| a.predicate != aff && a.predicate != reg);
        let key: AttributeKey = evidence
            .atoms
            .iter()
            .map(|a| {
                (
                    a.predicate,
                    a.args.iter().filter(|x| **x != object).cloned().collect(),
                )
            })
            .collect();
        if !cache.contains_key(&key) {
            let r = sampler::query(
                &learned,
                &evidence,
                &QuerySpec::new(object.clone()),
                &sampler_cfg,
            )?;
            cache.insert(
                key.clone(),
                r.affordances
                    .iter()
                    .map(|l| (l.label.clone(), l.probability))
                    .collect(),
            );
        }
        for (label, score) in &cache[&key] {
            let positive = w
                .atoms
                .iter()
                .any(|a| a.predicate == aff && a.args.contains(label));
            rows.push((label.clone(), *score, positive));
        }
    }
    Ok(PipelineReport {
        auc: metrics::mean_auc_per_affordance(&rows)?,
        learned_ratio: ratio(&learned)?,
        true_ratio: ratio(&truth)?,
        train_worlds: train.len(),
        test_worlds: test.len(),
    })
}

fn eval_pipeline(a: &PipelineArgs, seed: u64) -> Result<(Vec<u8>, RunManifest)> {
    let mut run = Run::new("eval pipeline", seed);
    let report = run.time("pipeline", || pipeline(a, seed))?;
    log::info!(
        "mean AUC {:.4}; learned ratio {:.3} (true {:.3})",
        report.auc.mean,
        report.learned_ratio,
        report.true_ratio
    );
    let config = serde_json::json!({
        "objects": a.objects,
        "worlds_per_object": a.worlds_per_object,
        "ratio": a.ratio,
        "prior_sigma": a.prior_sigma,
        "samples": a.samples,
        "burn_in": a.burn_in,
        "chains": a.chains,
        "report": report,
    });
    Ok((report.to_csv().into_bytes(), run.finish(config)))
}
