use std::fs;
use std::path::{Path, PathBuf};

use alwnn::fewshot::{self, Case, Distance, EpisodeSpec, MetaTrainConfig};
use alwnn::gradcheck::{self as gc, GradcheckOptions};
use alwnn::metrics::{self, DEFAULT_BATCHES, FLOPS_CONVENTION};
use alwnn::model::{RegForm, CHECKPOINT_VERSION};
use alwnn::signal::{self, Dataset, ImpairmentProfile, ModulationScheme, SynthConfig, DATASET_VERSION};
use alwnn::train::{self, SplitRatios, TrainConfig};
use alwnn::{Model, ModelConfig};
use anyhow::Context;
use clap::Args;
use log::info;
use serde::{Deserialize, Serialize};

use crate::errors::{usage, CheckFailed};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::settings::{load, parse_named, prepare_out, required, set};

pub const MODEL_FILE: &str = "model.alwn";
pub const ENCODER_FILE: &str = "encoder.alwn";
pub const SPLIT_FILE: &str = "split.json";

fn load_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Model<f32>> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

fn to_json<S: Serialize>(v: &S) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn parse_scheme(s: &str) -> Result<ModulationScheme, String> {
    s.trim().parse::<ModulationScheme>().map_err(|e| e.to_string())
}

fn parse_case(s: &str) -> Result<Case, String> {
    Case::parse(s).ok_or_else(|| format!("unknown case {s:?}; expected A-E"))
}

fn parse_split(s: &str) -> Result<SplitRatios, String> {
    let v: Vec<f64> = s.split('/').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [train, val, test] => Ok(SplitRatios { train, val, test }),
        _ => Err(format!("expected train/val/test ratios such as 0.6/0.2/0.2, got {s:?}")),
    }
}

// ------------------------------------------------------------------ synth

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub schemes: Vec<ModulationScheme>,
    pub snr_min: i16,
    pub snr_max: i16,
    pub snr_step: i16,
    pub frames_per: usize,
    pub length: usize,
    pub profile: ImpairmentProfile,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            schemes: ModulationScheme::ALL.to_vec(),
            snr_min: -20,
            snr_max: 18,
            snr_step: 2,
            frames_per: 100,
            length: 128,
            profile: ImpairmentProfile::Standard,
            seed: None,
            out: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON settings file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scheme names, e.g. BPSK,QPSK,16QAM.
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
    schemes: Option<Vec<ModulationScheme>>,
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<i16>,
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<i16>,
    #[arg(long)]
    snr_step: Option<i16>,
    /// Frames per (scheme, SNR) cell.
    #[arg(long)]
    frames_per: Option<usize>,
    /// Samples per frame.
    #[arg(long)]
    length: Option<usize>,
    /// Required: every dataset must be reproducible.
    #[arg(long)]
    seed: Option<u64>,
    /// clean, standard or harsh.
    #[arg(long, value_parser = parse_named::<ImpairmentProfile>)]
    profile: Option<ImpairmentProfile>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut s: SynthSettings = load(a.config.as_deref())?;
    set(&mut s.schemes, a.schemes);
    set(&mut s.snr_min, a.snr_min);
    set(&mut s.snr_max, a.snr_max);
    set(&mut s.snr_step, a.snr_step);
    set(&mut s.frames_per, a.frames_per);
    set(&mut s.length, a.length);
    set(&mut s.profile, a.profile);
    s.seed = a.seed.or(s.seed);
    s.out = a.out.or(s.out);
    run_synth(s, a.force)
}

fn run_synth(s: SynthSettings, force: bool) -> anyhow::Result<()> {
    let seed = s.seed.ok_or_else(|| usage("--seed is required"))?;
    let out = required(&s.out, "--out")?;
    let grid = signal::snr_range(s.snr_min, s.snr_max, s.snr_step)?;
    let cfg = SynthConfig::new(s.schemes.clone(), grid, s.frames_per, s.length, s.profile, seed);
    prepare_out(&out, force)?;
    let ds = signal::synth_dataset(&cfg)?;
    ds.save(&out)?;
    info!("wrote {} frames to {}", ds.len(), out.display());
    RunManifest::new("synth", &s, Some(seed))?
        .format("dataset", DATASET_VERSION)
        .write(&out, &[signal::DATA_FILE, signal::META_FILE])
}

// ------------------------------------------------------------------ train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Defaults to 1 for frames up to 256 samples, else 3.
    pub levels: Option<usize>,
    pub channels: usize,
    pub reg_form: RegForm,
    pub normalize_input: bool,
    /// Weight-initialisation seed; defaults to the training seed.
    pub init_seed: Option<u64>,
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            levels: None,
            channels: 64,
            reg_form: RegForm::default(),
            normalize_input: true,
            init_seed: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Lifting levels M.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// mean or norm.
    #[arg(long, value_parser = parse_named::<RegForm>)]
    reg_form: Option<RegForm>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Global gradient-norm ceiling (off by default).
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Train/validation/test ratios, e.g. 0.6/0.2/0.2.
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitRatios>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Serialize, Deserialize)]
struct SplitIndices {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut s: TrainSettings = load(a.config.as_deref())?;
    s.data = a.data.or(s.data);
    s.out = a.out.or(s.out);
    s.levels = a.levels.or(s.levels);
    set(&mut s.channels, a.channels);
    set(&mut s.reg_form, a.reg_form);
    set(&mut s.train.max_epochs, a.epochs);
    set(&mut s.train.batch_size, a.batch_size);
    set(&mut s.train.learning_rate, a.lr);
    set(&mut s.train.patience, a.patience);
    set(&mut s.train.lambda1, a.lambda1);
    set(&mut s.train.lambda2, a.lambda2);
    s.train.clip_norm = a.clip_norm.or(s.train.clip_norm);
    set(&mut s.train.split, a.split);
    set(&mut s.train.seed, a.seed);
    s.init_seed = a.init_seed.or(s.init_seed);
    run_train(s, a.force)
}

fn run_train(mut s: TrainSettings, force: bool) -> anyhow::Result<()> {
    let data = required(&s.data, "--data")?;
    let out = required(&s.out, "--out")?;
    s.train.validate()?;
    let ds = load_dataset(&data)?;
    let levels = *s.levels.get_or_insert(ModelConfig::default_levels(ds.meta.length));
    let init_seed = *s.init_seed.get_or_insert(s.train.seed);
    let mut cfg = ModelConfig::new(ds.meta.length, levels, ds.meta.schemes.len());
    cfg.channels = s.channels;
    cfg.reg_form = s.reg_form;
    cfg.normalize_input = s.normalize_input;
    cfg.classes = ds.meta.schemes.clone();
    cfg.validate()?;
    prepare_out(&out, force)?;

    let [tr, va, te] = train::stratified_split_indices(&ds, s.train.split, s.train.seed)?;
    info!("training on {} frames, validating on {}, holding out {}", tr.len(), va.len(), te.len());
    let model = Model::<f32>::init(cfg, init_seed)?;
    let outcome = train::train(model, &ds.subset(&tr), &ds.subset(&va), &s.train)?;
    outcome.model.save(&out.join(MODEL_FILE))?;
    outcome.log.write_csv(&out.join("train_log.csv"))?;
    write(&out, SPLIT_FILE, to_json(&SplitIndices { train: tr, val: va, test: te })?)?;
    info!("best epoch {} of {}", outcome.log.best_epoch, outcome.log.records.len());
    RunManifest::new("train", &s, Some(s.train.seed))?
        .input(&data)
        .format("dataset", DATASET_VERSION)
        .format("checkpoint", CHECKPOINT_VERSION)
        .write(&out, &[MODEL_FILE, "train_log.csv", SPLIT_FILE])
}

// ------------------------------------------------------------------ eval

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub model: Option<PathBuf>,
    /// Evaluate a freshly initialised model with this seed instead.
    pub random_init: Option<u64>,
    pub data: Option<PathBuf>,
    /// A split.json from `train`; restricts evaluation to `part`.
    pub split: Option<PathBuf>,
    pub part: String,
    pub batch_size: usize,
    pub out: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            model: None,
            random_init: None,
            data: None,
            split: None,
            part: "test".into(),
            batch_size: 512,
            out: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint (.alwn).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip --model and evaluate an untrained network initialised with this seed.
    #[arg(long, conflicts_with = "model")]
    random_init: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// split.json written by `train`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    part: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    frames: usize,
    classes: &'a [ModulationScheme],
    accuracy: f64,
    macro_f1: f64,
    kappa: f64,
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut s: EvalSettings = load(a.config.as_deref())?;
    if a.model.is_some() {
        s.random_init = None;
    }
    if a.random_init.is_some() {
        s.model = None;
    }
    s.model = a.model.or(s.model);
    s.random_init = a.random_init.or(s.random_init);
    s.data = a.data.or(s.data);
    s.split = a.split.or(s.split);
    set(&mut s.part, a.part);
    set(&mut s.batch_size, a.batch_size);
    s.out = a.out.or(s.out);
    run_eval(s, a.force)
}

fn run_eval(s: EvalSettings, force: bool) -> anyhow::Result<()> {
    let data = required(&s.data, "--data")?;
    let out = required(&s.out, "--out")?;
    if s.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let mut ds = load_dataset(&data)?;
    let model = match (&s.model, s.random_init) {
        (Some(p), _) => load_model(p)?,
        (None, Some(seed)) => {
            let mut cfg = ModelConfig::new(ds.meta.length, ModelConfig::default_levels(ds.meta.length), ds.meta.schemes.len());
            cfg.classes = ds.meta.schemes.clone();
            Model::init(cfg, seed)?
        }
        (None, None) => return Err(usage("pass --model or --random-init")),
    };
    if let Some(split) = &s.split {
        let text = fs::read_to_string(split).with_context(|| format!("reading {}", split.display()))?;
        let parts: SplitIndices =
            serde_json::from_str(&text).map_err(|e| alwnn::Error::Format(format!("{}: {e}", split.display())))?;
        let idx = match s.part.as_str() {
            "train" => parts.train,
            "val" => parts.val,
            "test" => parts.test,
            other => return Err(usage(format!("--part must be train, val or test, got {other:?}"))),
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= ds.len()) {
            return Err(alwnn::Error::Format(format!("split index {bad} is outside the {}-frame dataset", ds.len())).into());
        }
        ds = ds.subset(&idx);
    }
    prepare_out(&out, force)?;
    let report = metrics::evaluate(&model, &ds, s.batch_size)?;
    info!(
        "accuracy {:.4}, macro-F1 {:.4}, kappa {:.4} over {} frames",
        report.accuracy,
        report.macro_f1,
        report.kappa,
        ds.len()
    );
    write(&out, "snr_accuracy.csv", report.snr_csv())?;
    write(&out, "confusion.csv", report.confusion_csv())?;
    let summary = EvalSummary {
        frames: ds.len(),
        classes: &report.classes,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        kappa: report.kappa,
    };
    write(&out, "summary.json", to_json(&summary)?)?;
    let mut m = RunManifest::new("eval", &s, s.random_init)?.input(&data).format("dataset", DATASET_VERSION);
    if let Some(p) = &s.model {
        m = m.input(p).format("checkpoint", CHECKPOINT_VERSION);
    }
    m.write(&out, &["snr_accuracy.csv", "confusion.csv", "summary.json"])
}

// ------------------------------------------------------------------ complexity / bench

/// Architecture given by a checkpoint or by explicit dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSettings {
    pub model: Option<PathBuf>,
    pub length: usize,
    pub levels: Option<usize>,
    pub classes: usize,
    pub channels: usize,
}

impl Default for ArchSettings {
    fn default() -> Self {
        Self { model: None, length: 128, levels: None, classes: 11, channels: 64 }
    }
}

#[derive(Args, Debug)]
pub struct ArchArgs {
    /// Checkpoint to describe; otherwise the dimensions below are used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
}

impl ArchSettings {
    fn apply(&mut self, a: ArchArgs) {
        self.model = a.model.or(self.model.take());
        set(&mut self.length, a.length);
        self.levels = a.levels.or(self.levels);
        set(&mut self.classes, a.classes);
        set(&mut self.channels, a.channels);
    }

    fn resolve(&mut self) -> anyhow::Result<ModelConfig> {
        if let Some(p) = &self.model {
            return Ok(load_model(p)?.config);
        }
        let levels = *self.levels.get_or_insert(ModelConfig::default_levels(self.length));
        let mut cfg = ModelConfig::new(self.length, levels, self.classes);
        cfg.channels = self.channels;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySettings {
    pub arch: ArchSettings,
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ComplexityArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Also write complexity.csv and complexity.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

pub fn complexity(a: ComplexityArgs) -> anyhow::Result<()> {
    let mut s: ComplexitySettings = load(a.config.as_deref())?;
    s.arch.apply(a.arch);
    s.out = a.out.or(s.out);
    run_complexity(s, a.force)
}

fn run_complexity(mut s: ComplexitySettings, force: bool) -> anyhow::Result<()> {
    let cfg = s.arch.resolve()?;
    let report = metrics::count_complexity(&cfg);
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &s.out {
        prepare_out(out, force)?;
        write(out, "complexity.csv", report.to_csv())?;
        write(out, "complexity.txt", &table)?;
        RunManifest::new("complexity", &s, None)?.write(out, &["complexity.csv", "complexity.txt"])?;
    }
    info!("{FLOPS_CONVENTION}");
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub arch: ArchSettings,
    pub batches: Vec<usize>,
    pub repetitions: usize,
    pub parallel: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            arch: ArchSettings::default(),
            batches: DEFAULT_BATCHES.to_vec(),
            repetitions: 10,
            parallel: false,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',')]
    batches: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Split each batch across worker threads.
    #[arg(long)]
    parallel: bool,
    /// Seed for the weights when no checkpoint is given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

pub fn bench(a: BenchArgs) -> anyhow::Result<()> {
    let mut s: BenchSettings = load(a.config.as_deref())?;
    s.arch.apply(a.arch);
    set(&mut s.batches, a.batches);
    set(&mut s.repetitions, a.repetitions);
    s.parallel |= a.parallel;
    set(&mut s.seed, a.seed);
    s.out = a.out.or(s.out);
    run_bench(s, a.force)
}

fn run_bench(mut s: BenchSettings, force: bool) -> anyhow::Result<()> {
    let model = match &s.arch.model {
        Some(p) => load_model(p)?,
        None => Model::init(s.arch.resolve()?, s.seed)?,
    };
    if let Some(out) = &s.out {
        prepare_out(out, force)?;
    }
    let rows = metrics::bench_latency(&model, &s.batches, s.repetitions, s.parallel)?;
    let csv = metrics::bench_csv(&rows);
    print!("{csv}");
    if let Some(out) = &s.out {
        write(out, "bench.csv", &csv)?;
        RunManifest::new("bench", &s, Some(s.seed))?.write(out, &["bench.csv"])?;
    }
    Ok(())
}

// ------------------------------------------------------------------ few-shot

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub distance: Distance,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self { n_way: 5, k_shot: 5, q_query: 15, distance: Distance::default() }
    }
}

#[derive(Args, Debug)]
pub struct EpisodeArgs {
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    /// Query frames per class.
    #[arg(long)]
    q_query: Option<usize>,
    /// squared-euclidean or euclidean.
    #[arg(long, value_parser = parse_named::<Distance>)]
    distance: Option<Distance>,
}

impl EpisodeSettings {
    fn apply(&mut self, a: EpisodeArgs) {
        set(&mut self.n_way, a.n_way);
        set(&mut self.k_shot, a.k_shot);
        set(&mut self.q_query, a.q_query);
        set(&mut self.distance, a.distance);
    }

    fn spec(&self, length: usize) -> EpisodeSpec {
        EpisodeSpec { distance: self.distance, ..EpisodeSpec::new(self.n_way, self.k_shot, self.q_query, length) }
    }
}

fn restrict(ds: Dataset, classes: &[ModulationScheme]) -> Dataset {
    ds.filter(|f| classes.contains(&f.scheme))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainSettings {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Restrict the pool to this case's meta-training classes.
    pub case: Option<Case>,
    pub episode: EpisodeSettings,
    /// Target frame length z.
    pub length: usize,
    pub levels: Option<usize>,
    pub channels: usize,
    /// Continue from an existing encoder checkpoint.
    pub init_from: Option<PathBuf>,
    pub meta: MetaTrainConfig,
}

impl Default for MetaTrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            case: None,
            episode: EpisodeSettings::default(),
            length: 1024,
            levels: None,
            channels: 64,
            init_from: None,
            meta: MetaTrainConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
pub struct MetaTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// A-E: keep only that case's meta-training classes.
    #[arg(long, value_parser = parse_case)]
    case: Option<Case>,
    #[command(flatten)]
    episode: EpisodeArgs,
    /// Frame length z every sample is cut or tiled to.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Episode budget; derived from the pool size when omitted.
    #[arg(long)]
    episodes: Option<usize>,
    /// Pool passes used by the derived episode budget.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

pub fn meta_train(a: MetaTrainArgs) -> anyhow::Result<()> {
    let mut s: MetaTrainSettings = load(a.config.as_deref())?;
    s.data = a.data.or(s.data);
    s.out = a.out.or(s.out);
    s.case = a.case.or(s.case);
    s.episode.apply(a.episode);
    set(&mut s.length, a.length);
    s.levels = a.levels.or(s.levels);
    set(&mut s.channels, a.channels);
    s.init_from = a.init_from.or(s.init_from);
    s.meta.episodes = a.episodes.or(s.meta.episodes);
    set(&mut s.meta.epochs, a.epochs);
    set(&mut s.meta.learning_rate, a.lr);
    set(&mut s.meta.lambda1, a.lambda1);
    set(&mut s.meta.lambda2, a.lambda2);
    s.meta.clip_norm = a.clip_norm.or(s.meta.clip_norm);
    set(&mut s.meta.seed, a.seed);
    run_meta_train(s, a.force)
}

fn run_meta_train(mut s: MetaTrainSettings, force: bool) -> anyhow::Result<()> {
    let data = required(&s.data, "--data")?;
    let out = required(&s.out, "--out")?;
    let mut pool = load_dataset(&data)?;
    if let Some(case) = s.case {
        pool = restrict(pool, &case.classes().0);
    }
    if pool.is_empty() {
        return Err(alwnn::Error::Data("no frames of the requested classes in the pool".into()).into());
    }
    let spec = s.episode.spec(s.length);
    let model = match &s.init_from {
        Some(p) => {
            let m = load_model(p)?;
            if m.config.num_classes != 0 || m.config.input_len != s.length {
                return Err(alwnn::Error::Format(format!(
                    "{} is not a length-{} encoder",
                    p.display(),
                    s.length
                ))
                .into());
            }
            s.levels = Some(m.config.levels);
            s.channels = m.config.channels;
            m
        }
        None => {
            let levels = *s.levels.get_or_insert(ModelConfig::default_levels(s.length));
            let mut cfg = fewshot::encoder_config(levels, &spec, Vec::new());
            cfg.channels = s.channels;
            Model::<f32>::init(cfg, s.meta.seed)?
        }
    };
    s.meta.episodes = Some(s.meta.episode_budget(pool.len(), &spec)?);
    prepare_out(&out, force)?;
    let outcome = fewshot::meta_train(model, &pool, &spec, &s.meta)?;
    outcome.model.save(&out.join(ENCODER_FILE))?;
    write(&out, "episodes.csv", fewshot::episode_log_csv(&outcome.log))?;
    let mut m = RunManifest::new("meta-train", &s, Some(s.meta.seed))?
        .input(&data)
        .format("dataset", DATASET_VERSION)
        .format("checkpoint", CHECKPOINT_VERSION);
    if let Some(p) = &s.init_from {
        m = m.input(p);
    }
    m.write(&out, &[ENCODER_FILE, "episodes.csv"])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaEvalSettings {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Restrict the pool to this case's meta-test classes.
    pub case: Option<Case>,
    pub episode: EpisodeSettings,
    pub trials: usize,
    pub seed: u64,
    /// Permit classes the encoder was trained on (implied by case E).
    pub allow_seen: bool,
}

impl Default for MetaEvalSettings {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            out: None,
            case: None,
            episode: EpisodeSettings::default(),
            trials: 100,
            seed: 0,
            allow_seen: false,
        }
    }
}

#[derive(Args, Debug)]
pub struct MetaEvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder checkpoint from `meta-train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// A-E: keep only that case's meta-test classes.
    #[arg(long, value_parser = parse_case)]
    case: Option<Case>,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    allow_seen: bool,
    #[arg(long)]
    force: bool,
}

pub fn meta_eval(a: MetaEvalArgs) -> anyhow::Result<()> {
    let mut s: MetaEvalSettings = load(a.config.as_deref())?;
    s.model = a.model.or(s.model);
    s.data = a.data.or(s.data);
    s.out = a.out.or(s.out);
    s.case = a.case.or(s.case);
    s.episode.apply(a.episode);
    set(&mut s.trials, a.trials);
    set(&mut s.seed, a.seed);
    s.allow_seen |= a.allow_seen;
    run_meta_eval(s, a.force)
}

fn run_meta_eval(mut s: MetaEvalSettings, force: bool) -> anyhow::Result<()> {
    let model_path = required(&s.model, "--model")?;
    let data = required(&s.data, "--data")?;
    let out = required(&s.out, "--out")?;
    let model = load_model(&model_path)?;
    let mut pool = load_dataset(&data)?;
    if let Some(case) = s.case {
        pool = restrict(pool, &case.classes().1);
        s.allow_seen |= case.allows_overlap();
    }
    let spec = s.episode.spec(model.config.input_len);
    prepare_out(&out, force)?;
    let report = fewshot::meta_test(&model, &pool, &spec, s.trials, s.seed, s.allow_seen)?;
    info!(
        "{}-way {}-shot over {} trials: {:.4} +/- {:.4}",
        spec.n_way, spec.k_shot, s.trials, report.mean, report.std
    );
    write(&out, "trials.csv", report.to_csv())?;
    let mut per_snr = String::from("snr_db,accuracy,std\n");
    for p in &report.per_snr {
        per_snr.push_str(&format!("{},{:.6},{:.6}\n", p.snr_db, p.mean, p.std));
    }
    write(&out, "snr_accuracy.csv", per_snr)?;
    write(&out, "summary.json", to_json(&report)?)?;
    RunManifest::new("meta-eval", &s, Some(s.seed))?
        .input(&model_path)
        .input(&data)
        .format("dataset", DATASET_VERSION)
        .format("checkpoint", CHECKPOINT_VERSION)
        .write(&out, &["trials.csv", "snr_accuracy.csv", "summary.json"])
}

// ------------------------------------------------------------------ gradcheck

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub options: GradcheckOptions,
    pub reg_form: RegForm,
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Central-difference step.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_named::<RegForm>)]
    reg_form: Option<RegForm>,
    /// Flip every analytic gradient; the check must then fail.
    #[arg(long)]
    sabotage: bool,
    /// Also write report.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

pub fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let mut s: GradcheckSettings = load(a.config.as_deref())?;
    set(&mut s.options.seed, a.seed);
    set(&mut s.options.step, a.step);
    set(&mut s.options.tolerance, a.tolerance);
    set(&mut s.options.frames, a.frames);
    set(&mut s.reg_form, a.reg_form);
    s.options.sabotage |= a.sabotage;
    s.out = a.out.or(s.out);
    run_gradcheck(s, a.force)
}

fn run_gradcheck(s: GradcheckSettings, force: bool) -> anyhow::Result<()> {
    let mut cfg = gc::tiny_config();
    cfg.reg_form = s.reg_form;
    let report = gc::gradcheck(&cfg, &s.options)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &s.out {
        prepare_out(out, force)?;
        write(out, "report.txt", &text)?;
        RunManifest::new("gradcheck", &s, Some(s.options.seed))?.write(out, &["report.txt"])?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, report.tolerance
        ))
        .into())
    }
}

// ------------------------------------------------------------------ replay

fn settings_from<S: serde::de::DeserializeOwned>(m: &RunManifest) -> anyhow::Result<S> {
    serde_json::from_value(m.config.clone())
        .map_err(|e| alwnn::Error::Format(format!("manifest settings for {}: {e}", m.command)).into())
}

pub fn replay(manifest: &Path, out: &Path, force: bool) -> anyhow::Result<()> {
    let path = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest.to_path_buf() };
    let m = RunManifest::read(&path)?;
    let out = Some(out.to_path_buf());
    info!("replaying {} from {}", m.command, path.display());
    match m.command.as_str() {
        "synth" => run_synth(SynthSettings { out, ..settings_from(&m)? }, force),
        "train" => run_train(TrainSettings { out, ..settings_from(&m)? }, force),
        "eval" => run_eval(EvalSettings { out, ..settings_from(&m)? }, force),
        "complexity" => run_complexity(ComplexitySettings { out, ..settings_from(&m)? }, force),
        "bench" => run_bench(BenchSettings { out, ..settings_from(&m)? }, force),
        "meta-train" => run_meta_train(MetaTrainSettings { out, ..settings_from(&m)? }, force),
        "meta-eval" => run_meta_eval(MetaEvalSettings { out, ..settings_from(&m)? }, force),
        "gradcheck" => run_gradcheck(GradcheckSettings { out, ..settings_from(&m)? }, force),
        other => Err(alwnn::Error::Format(format!("manifest names unknown command {other:?}")).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_scheme(" 16QAM").unwrap(), ModulationScheme::Qam16);
        assert!(parse_scheme("nope").is_err());
        assert_eq!(parse_split("0.8/0.1/0.1").unwrap(), SplitRatios { train: 0.8, val: 0.1, test: 0.1 });
        assert!(parse_split("0.8/0.2").is_err());
        assert_eq!(parse_case("c").unwrap(), Case::C);
    }

    #[test]
    fn settings_files_are_partial() {
        let s: TrainSettings = serde_json::from_str(r#"{"levels": 2, "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!((s.levels, s.train.max_epochs, s.train.batch_size), (Some(2), 3, 256));
        let s: SynthSettings = serde_json::from_str(r#"{"seed": 9, "length": 64}"#).unwrap();
        assert_eq!((s.seed, s.length, s.snr_step), (Some(9), 64, 2));
        assert!(serde_json::from_str::<SynthSettings>(r#"{"sead": 9}"#).is_err());
    }
}
