//! `choicesim` command line: `ingest | fit | modulate | simulate | evaluate | report`.
//!
//! Every command writes its outputs and a `manifest.json` into
//! `<out>/<command>-<hash>`, where the hash covers the resolved configuration
//! and the contents of every input file.
//!
//! Exit codes: 0 success, 2 I/O error, 3 validation error, 4 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    self, empirical_pmf, read_cleaned_csv, split, write_cleaned_csv, EncodingLayout, Grouping,
    ParticipantRecord, VariableMap, DEFAULT_SPLIT_SEED,
};
use crate::distributions::{mixture_pmf, Pmf};
use crate::experiment::{evaluate, group_pmf, EvaluateError, Evaluation};
use crate::fit::{fit, suggest_peaks, EvalPoints, FitError, FitOptions, MixtureModel, PeakSpec, ZeroPeakRule};
use crate::modulation::{compose_modulations, Attribute, ExpertKnowledgeTable, ModulationError};
use crate::report::{bar_chart_svg, pmf_table_csv};
use crate::simulate::{
    bernoulli21_count_pmf, generate_cohort, uniform_marginals, write_cohort_csv, write_cohort_jsonl,
    CohortOptions, Marginals, MealMode, SimulateError,
};
use crate::xport::{self, XportError, XportTable};

pub const REFERENCE_EXPERIMENT_TOML: &str = include_str!("../configs/reference-experiment.toml");
pub const REFERENCE_EXPERIMENT: &str = "reference-experiment";
pub const DATA_DIR_ENV: &str = "CHOICESIM_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<XportError> for CliError {
    fn from(e: XportError) -> Self {
        match e {
            XportError::Io(m) => CliError::Io(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<dataset::DatasetError> for CliError {
    fn from(e: dataset::DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::DegenerateSystem(_) | FitError::Pmf(_) => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModulationError> for CliError {
    fn from(e: ModulationError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Pool(m) => CliError::Io(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvaluateError> for CliError {
    fn from(e: EvaluateError) -> Self {
        match e {
            EvaluateError::Pmf(p) => CliError::Numerical(p.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<crate::distributions::PmfError> for CliError {
    fn from(e: crate::distributions::PmfError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub demo: Option<PathBuf>,
    pub dbq: Option<PathBuf>,
    /// Cleaned CSV written by `ingest`; takes precedence over demo/dbq.
    pub dataset: Option<PathBuf>,
    pub variable_map: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            demo: None,
            dbq: None,
            dataset: None,
            variable_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.33,
            seed: DEFAULT_SPLIT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub peaks: Vec<PeakSpec>,
    pub suggest: Option<usize>,
    pub lambda: Option<f64>,
    pub eval_points: EvalPoints,
    pub zero_peak: ZeroPeakRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub table: Option<PathBuf>,
    /// Attributes whose group-modulated models are evaluated and reported.
    pub evaluate: Vec<Attribute>,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig {
            table: None,
            evaluate: vec![Attribute::Gender, Attribute::MaritalStatus],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub size: u64,
    pub seed: u64,
    pub meals: Option<MealMode>,
    pub workers: usize,
    pub attributes: Vec<Attribute>,
    pub compose: bool,
    pub marginals: Option<BTreeMap<Attribute, BTreeMap<String, f64>>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            size: 1000,
            seed: DEFAULT_SPLIT_SEED,
            meals: None,
            workers: 1,
            attributes: vec![Attribute::Gender],
            compose: false,
            marginals: None,
        }
    }
}

/// Everything a run needs; loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub fit: FitConfig,
    pub modulation: ModulationConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Loads a config file, or the built-in `reference-experiment`.
    pub fn load(name_or_path: Option<&str>) -> Result<Self, CliError> {
        match name_or_path {
            None => Ok(RunConfig::default()),
            Some(REFERENCE_EXPERIMENT) => RunConfig::from_toml(REFERENCE_EXPERIMENT_TOML),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("{path}: {e}")))?;
                RunConfig::from_toml(&text)
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "choicesim", version, about = "Binomial-mixture food-choice simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Config file, or `reference-experiment` for the built-in one.
    #[arg(long)]
    pub config: Option<String>,
    /// Base directory for relative data paths.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Demographics file (.XPT or .csv).
    #[arg(long)]
    pub demo: Option<PathBuf>,
    /// Diet behavior questionnaire file (.XPT or .csv).
    #[arg(long)]
    pub dbq: Option<PathBuf>,
    /// Cleaned dataset CSV from `ingest`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Variable map TOML, or `2017-2018` for the built-in `_J` cycle map.
    #[arg(long)]
    pub variable_map: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join, clean and export the survey records.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit the mixture to the training split.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Peak as `k:sigma2`; repeatable.
        #[arg(long = "peak")]
        peaks: Vec<String>,
        /// Propose this many peaks from the training pmf instead.
        #[arg(long)]
        suggest: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Fit at every support point rather than only at the peaks.
        #[arg(long)]
        full_support: bool,
    },
    /// Apply the expert-table modulation for a demographic group.
    Modulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        /// Repeat with `--group` (and `--compose`) to stack attributes.
        #[arg(long = "attribute", required = true)]
        attributes: Vec<String>,
        #[arg(long = "group", required = true)]
        groups: Vec<String>,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Allow more than one attribute; multiplies their factors.
        #[arg(long)]
        compose: bool,
    },
    /// Draw a synthetic cohort.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        size: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<SimMode>,
        #[arg(long)]
        workers: Option<usize>,
        /// Modulating attribute; repeat with `--compose`.
        #[arg(long = "attribute")]
        attributes: Vec<String>,
        #[arg(long)]
        compose: bool,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
        /// Cleaned dataset whose train split supplies the group marginals.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Histogram intersection of the model against train, test and groups.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Pmf tables and SVG charts.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Count,
    Bernoulli21,
    Padded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Jsonl,
    Both,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Collects inputs and outputs of one run for its manifest.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<(String, String)>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn new(command: &'static str, config: &RunConfig) -> Self {
        Run {
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.inputs
            .push((path.display().to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String, CliError> {
        String::from_utf8(self.read_input(path)?)
            .map_err(|_| CliError::Validation(format!("{}: not UTF-8", path.display())))
    }

    fn output(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), bytes.into()));
    }

    fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(serde_json::to_vec(&self.config).expect("json"));
        for (path, digest) in &self.inputs {
            h.update(path.as_bytes());
            h.update(digest.as_bytes());
        }
        for (k, v) in &self.seeds {
            h.update(k.as_bytes());
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn finish(self, out: &Path) -> Result<PathBuf, CliError> {
        let hash = self.config_hash();
        let dir = out.join(format!("{}-{}", self.command, &hash[..12]));
        fs::create_dir_all(&dir)?;
        for (name, bytes) in &self.outputs {
            fs::write(dir.join(name), bytes)?;
        }
        let manifest = serde_json::json!({
            "command": self.command,
            "config_hash": hash,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs.iter().map(|(p, d)| serde_json::json!({"path": p, "sha256": d})).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            "versions": { "choicesim": env!("CARGO_PKG_VERSION") },
        });
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("json"),
        )?;
        Ok(dir)
    }
}

fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    }
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) -> Result<(), CliError> {
    if let Some(p) = &data.demo {
        cfg.data.demo = Some(p.clone());
    }
    if let Some(p) = &data.dbq {
        cfg.data.dbq = Some(p.clone());
    }
    if let Some(p) = &data.dataset {
        cfg.data.dataset = Some(p.clone());
    }
    if let Some(p) = &data.variable_map {
        cfg.data.variable_map = Some(p.clone());
    }
    if let Some(f) = data.test_fraction {
        cfg.split.test_fraction = f;
    }
    if let Some(s) = data.split_seed {
        cfg.split.seed = s;
    }
    if !(cfg.split.test_fraction > 0.0 && cfg.split.test_fraction < 1.0) {
        return Err(CliError::Validation(format!(
            "test fraction {} outside (0, 1)",
            cfg.split.test_fraction
        )));
    }
    Ok(())
}

fn load_variable_map(run: &mut Run, cfg: &RunConfig, base: Option<&Path>) -> Result<VariableMap, CliError> {
    match &cfg.data.variable_map {
        None => Ok(VariableMap::default()),
        Some(p) if p.as_os_str() == "2017-2018" => Ok(VariableMap::from_toml(dataset::VARIABLE_MAP_2017_2018_TOML)?),
        Some(p) => {
            let text = run.read_text(&resolve(base, p))?;
            Ok(VariableMap::from_toml(&text)?)
        }
    }
}

fn load_table(run: &mut Run, path: &Path, schema: &[&str]) -> Result<XportTable, CliError> {
    let bytes = run.read_input(path)?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_uppercase())
            .unwrap_or_default();
        Ok(xport::read_csv(bytes.as_slice(), &name, schema)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?)
    } else {
        let mut tables = xport::parse_library(&bytes)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if tables.is_empty() {
            return Err(CliError::Validation(format!("{}: no members", path.display())));
        }
        Ok(tables.swap_remove(0))
    }
}

fn ingest_raw(
    run: &mut Run,
    cfg: &RunConfig,
    base: Option<&Path>,
    map: &VariableMap,
) -> Result<(Vec<ParticipantRecord>, dataset::IngestReport), CliError> {
    let (Some(demo), Some(dbq)) = (&cfg.data.demo, &cfg.data.dbq) else {
        return Err(CliError::Validation(
            "both demographics and questionnaire files are required".into(),
        ));
    };
    let mut demo_schema = vec![map.id.as_str()];
    demo_schema.extend(Attribute::ALL.iter().map(|&a| map.field(a).column.as_str()));
    let demo = load_table(run, &resolve(base, demo), &demo_schema)?;
    let dbq = load_table(run, &resolve(base, dbq), &[&map.id, &map.eat_out.column])?;
    Ok(dataset::ingest(&demo, &dbq, map)?)
}

fn load_records(
    run: &mut Run,
    cfg: &RunConfig,
    base: Option<&Path>,
    map: &VariableMap,
) -> Result<Vec<ParticipantRecord>, CliError> {
    match &cfg.data.dataset {
        Some(p) => {
            let bytes = run.read_input(&resolve(base, p))?;
            Ok(read_cleaned_csv(bytes.as_slice(), map)?)
        }
        None => Ok(ingest_raw(run, cfg, base, map)?.0),
    }
}

fn load_table_config(run: &mut Run, path: Option<&PathBuf>, base: Option<&Path>) -> Result<ExpertKnowledgeTable, CliError> {
    match path {
        None => Ok(ExpertKnowledgeTable::default()),
        Some(p) => {
            let p = resolve(base, p);
            let text = run.read_text(&p)?;
            let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            Ok(if is_csv {
                ExpertKnowledgeTable::from_csv(text.as_bytes())?
            } else {
                ExpertKnowledgeTable::from_toml(&text)?
            })
        }
    }
}

fn load_model(run: &mut Run, path: &Path) -> Result<MixtureModel, CliError> {
    let text = run.read_text(path)?;
    Ok(MixtureModel::from_json(&text)?)
}

fn parse_peak(text: &str) -> Result<PeakSpec, CliError> {
    let bad = || CliError::Validation(format!("peak `{text}` is not `k:sigma2`"));
    let (k, s) = text.split_once(':').ok_or_else(bad)?;
    Ok(PeakSpec::new(
        k.trim().parse().map_err(|_| bad())?,
        s.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_attributes(names: &[String]) -> Result<Vec<Attribute>, CliError> {
    names
        .iter()
        .map(|n| n.parse::<Attribute>().map_err(CliError::from))
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct FitReport<'a> {
    n_train: usize,
    n_test: usize,
    train_hi: f64,
    test_hi: f64,
    residual: f64,
    peaks: &'a [PeakSpec],
    weights: &'a [f64],
}

#[derive(Serialize)]
struct Frozen<'a> {
    encoding: &'a EncodingLayout,
    grouping: &'a Grouping,
}

fn execute(command: Command) -> Result<PathBuf, CliError> {
    match command {
        Command::Ingest { common, data } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_data_args(&mut cfg, &data)?;
            let base = common.data_dir.as_deref();
            let mut run = Run::new("ingest", &cfg);
            let map = load_variable_map(&mut run, &cfg, base)?;
            let (records, report) = ingest_raw(&mut run, &cfg, base, &map)?;
            let mut csv = Vec::new();
            write_cleaned_csv(&records, &map, &mut csv)?;
            println!(
                "joined {} rows, kept {}, capped {}",
                report.joined_rows, report.clean.kept, report.clean.capped
            );
            for (rule, n) in &report.clean.dropped {
                println!("  dropped {n:>6}  {rule}");
            }
            run.output("cleaned.csv", csv);
            run.output("ingest_report.json", to_json(&report));
            run.finish(&common.out)
        }

        Command::Fit {
            common,
            data,
            peaks,
            suggest,
            lambda,
            full_support,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_data_args(&mut cfg, &data)?;
            if !peaks.is_empty() {
                cfg.fit.peaks = peaks.iter().map(|p| parse_peak(p)).collect::<Result<_, _>>()?;
            }
            if suggest.is_some() {
                cfg.fit.suggest = suggest;
            }
            if lambda.is_some() {
                cfg.fit.lambda = lambda;
            }
            if full_support {
                cfg.fit.eval_points = EvalPoints::FullSupport;
            }
            let base = common.data_dir.as_deref();
            let mut run = Run::new("fit", &cfg);
            run.seeds.insert("split".into(), cfg.split.seed);
            let map = load_variable_map(&mut run, &cfg, base)?;
            let records = load_records(&mut run, &cfg, base, &map)?;
            let (train, test) = split(&records, cfg.split.test_fraction, cfg.split.seed)?;
            let train_pmf = empirical_pmf(&train)?;

            let specs = if !cfg.fit.peaks.is_empty() {
                cfg.fit.peaks.clone()
            } else if let Some(m) = cfg.fit.suggest {
                suggest_peaks(&train_pmf, m)
            } else {
                return Err(CliError::Validation(
                    "no peaks given; pass --peak k:sigma2 or --suggest M".into(),
                ));
            };
            let options = FitOptions {
                eval_points: cfg.fit.eval_points,
                lambda: cfg.fit.lambda.unwrap_or(1.0),
                zero_peak: cfg.fit.zero_peak,
            };
            let mut model = fit(&train_pmf, &specs, &options)?;
            model.provenance.seed = Some(cfg.split.seed);
            let test_hi = crate::histogram_intersection(&model.pmf(), &empirical_pmf(&test)?)?;
            let report = FitReport {
                n_train: train.len(),
                n_test: test.len(),
                train_hi: model.provenance.train_hi,
                test_hi,
                residual: model.provenance.residual,
                peaks: &specs,
                weights: &model.weights,
            };
            println!("train HI {:.4}, test HI {:.4}", report.train_hi, report.test_hi);
            let layout = EncodingLayout::fit(&train, &map)?;
            let grouping = Grouping::fit(&train, &map)?;
            run.output("fit_report.json", to_json(&report));
            run.output("encoding.json", to_json(&Frozen { encoding: &layout, grouping: &grouping }));
            run.output("model.json", model.to_json());
            run.finish(&common.out)
        }

        Command::Modulate {
            common,
            model,
            attributes,
            groups,
            table,
            compose,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if table.is_some() {
                cfg.modulation.table = table;
            }
            let attrs = parse_attributes(&attributes)?;
            if attrs.len() != groups.len() {
                return Err(CliError::Validation(
                    "give one --group per --attribute".into(),
                ));
            }
            if attrs.len() > 1 && !compose {
                return Err(CliError::Validation(
                    "several attributes need --compose".into(),
                ));
            }
            let base = common.data_dir.as_deref();
            let mut run = Run::new("modulate", &cfg);
            let table = load_table_config(&mut run, cfg.modulation.table.as_ref(), base)?;
            let base_model = load_model(&mut run, &model)?;
            let specs = attrs
                .iter()
                .zip(&groups)
                .map(|(a, g)| table.resolve_spec(*a, g))
                .collect::<Result<Vec<_>, _>>()?;
            let modulated = compose_modulations(&base_model, &specs);
            for s in &specs {
                println!("{} = {}: alpha {} ({:?} uncertainty)", s.attribute, s.group, s.alpha, s.sign);
            }
            run.output("model.json", modulated.to_json());
            run.finish(&common.out)
        }

        Command::Simulate {
            common,
            model,
            size,
            seed,
            mode,
            workers,
            attributes,
            compose,
            table,
            format,
            dataset,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if dataset.is_some() {
                cfg.data.dataset = dataset;
            }
            if let Some(n) = size {
                cfg.simulate.size = n;
            }
            if let Some(s) = seed {
                cfg.simulate.seed = s;
            }
            if let Some(m) = mode {
                cfg.simulate.meals = match m {
                    SimMode::Count => None,
                    SimMode::Bernoulli21 => Some(MealMode::Bernoulli21),
                    SimMode::Padded => Some(MealMode::Padded),
                };
            }
            if let Some(w) = workers {
                cfg.simulate.workers = w;
            }
            if !attributes.is_empty() {
                cfg.simulate.attributes = parse_attributes(&attributes)?;
            }
            cfg.simulate.compose |= compose;
            if table.is_some() {
                cfg.modulation.table = table;
            }
            if cfg.simulate.attributes.len() > 1 && !cfg.simulate.compose {
                return Err(CliError::Validation(
                    "several modulating attributes need --compose".into(),
                ));
            }
            let base = common.data_dir.as_deref();
            // worker count does not change the output, so it stays out of the hash
            let workers = cfg.simulate.workers;
            cfg.simulate.workers = 0;
            let mut run = Run::new("simulate", &cfg);
            run.seeds.insert("simulate".into(), cfg.simulate.seed);
            let table = load_table_config(&mut run, cfg.modulation.table.as_ref(), base)?;
            let base_model = load_model(&mut run, &model)?;
            let marginals: Marginals = match &cfg.simulate.marginals {
                Some(m) => m
                    .iter()
                    .map(|(a, g)| (*a, g.iter().map(|(k, v)| (k.clone(), *v)).collect()))
                    .collect(),
                None if cfg.data.dataset.is_some() || cfg.data.demo.is_some() => {
                    run.seeds.insert("split".into(), cfg.split.seed);
                    let map = load_variable_map(&mut run, &cfg, base)?;
                    let records = load_records(&mut run, &cfg, base, &map)?;
                    let (train, _) = split(&records, cfg.split.test_fraction, cfg.split.seed)?;
                    Grouping::fit(&train, &map)?.marginals(&train)
                }
                None => uniform_marginals(&table),
            };
            let options = CohortOptions {
                modulate: cfg.simulate.attributes.clone(),
                meals: cfg.simulate.meals,
                workers,
            };
            let cohort = generate_cohort(
                &base_model,
                &table,
                &marginals,
                cfg.simulate.size,
                cfg.simulate.seed,
                &options,
            )?;
            let attrs: Vec<Attribute> = marginals.keys().copied().collect();
            if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
                let mut buf = Vec::new();
                write_cohort_csv(&cohort, &attrs, options.meals.is_some(), &mut buf).map_err(csv_err)?;
                run.output("cohort.csv", buf);
            }
            if matches!(format, OutputFormat::Jsonl | OutputFormat::Both) {
                let mut buf = Vec::new();
                write_cohort_jsonl(&cohort, &mut buf)?;
                run.output("cohort.jsonl", buf);
            }
            // analytic count laws for every modulated group
            if let [attr] = options.modulate.as_slice() {
                let mut series = Vec::new();
                for (group, _) in &marginals[attr] {
                    let m = compose_modulations(&base_model, &[table.resolve_spec(*attr, group)?]);
                    let pmf = match options.meals {
                        Some(MealMode::Bernoulli21) => bernoulli21_count_pmf(&m),
                        _ => m.pmf(),
                    };
                    series.push((format!("{attr}={group}"), pmf));
                }
                let named: Vec<(&str, &Pmf)> = series.iter().map(|(n, p)| (n.as_str(), p)).collect();
                run.output("analytic_pmf.csv", pmf_table_csv(&named));
            }
            println!("{} records", cohort.len());
            run.finish(&common.out)
        }

        Command::Evaluate {
            common,
            data,
            model,
            table,
        } => {
            let (run, evaluation, _) = evaluation_run("evaluate", common.clone(), data, model, table)?;
            let mut run = run;
            print_evaluation(&evaluation);
            run.output("evaluation.json", to_json(&evaluation));
            run.finish(&common.out)
        }

        Command::Report {
            common,
            data,
            model,
            table,
        } => {
            let (mut run, evaluation, ctx) = evaluation_run("report", common.clone(), data, model, table)?;
            let fitted = ctx.model.pmf();
            let train_pmf = empirical_pmf(&ctx.train)?;
            let test_pmf = empirical_pmf(&ctx.test)?;
            let main = [("train", &train_pmf), ("test", &test_pmf), ("simulated", &fitted)];
            run.output("pmf_table.csv", pmf_table_csv(&main));
            run.output(
                "distributions.svg",
                bar_chart_svg("Eat-out counts: train, test and simulated", &main),
            );

            let comps: Vec<(String, Pmf)> = ctx
                .model
                .components
                .iter()
                .map(|c| (format!("k={}", c.k_target), mixture_pmf(&[*c], &[1.0], ctx.model.support_max)))
                .collect();
            let named: Vec<(&str, &Pmf)> = comps.iter().map(|(n, p)| (n.as_str(), p)).collect();
            run.output("components.csv", pmf_table_csv(&named));
            run.output("components.svg", bar_chart_svg("Binomial components", &named));

            for attr in &ctx.attributes {
                let mut series: Vec<(String, Pmf)> = Vec::new();
                for group in ctx.grouping.groups(*attr) {
                    let spec = ctx.table.resolve_spec(*attr, group)?;
                    let modulated = compose_modulations(&ctx.model, &[spec]);
                    series.push((format!("{group} (model)"), modulated.pmf()));
                    if let Some(obs) = group_pmf(&ctx.test, &ctx.grouping, *attr, group) {
                        series.push((format!("{group} (test)"), obs));
                    }
                }
                let named: Vec<(&str, &Pmf)> = series.iter().map(|(n, p)| (n.as_str(), p)).collect();
                run.output(&format!("{attr}.csv"), pmf_table_csv(&named));
                run.output(
                    &format!("{attr}.svg"),
                    bar_chart_svg(&format!("Modulated by {attr}"), &named),
                );
            }
            print_evaluation(&evaluation);
            run.output("report.json", to_json(&evaluation));
            run.finish(&common.out)
        }
    }
}

struct EvalContext {
    model: MixtureModel,
    train: Vec<ParticipantRecord>,
    test: Vec<ParticipantRecord>,
    table: ExpertKnowledgeTable,
    grouping: Grouping,
    attributes: Vec<Attribute>,
}

fn evaluation_run(
    command: &'static str,
    common: CommonArgs,
    data: DataArgs,
    model: PathBuf,
    table: Option<PathBuf>,
) -> Result<(Run, Evaluation, EvalContext), CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply_data_args(&mut cfg, &data)?;
    if table.is_some() {
        cfg.modulation.table = table;
    }
    let base = common.data_dir.as_deref();
    let mut run = Run::new(command, &cfg);
    run.seeds.insert("split".into(), cfg.split.seed);
    let model = load_model(&mut run, &model)?;
    let map = load_variable_map(&mut run, &cfg, base)?;
    let table = load_table_config(&mut run, cfg.modulation.table.as_ref(), base)?;
    let records = load_records(&mut run, &cfg, base, &map)?;
    let (train, test) = split(&records, cfg.split.test_fraction, cfg.split.seed)?;
    let grouping = Grouping::fit(&train, &map)?;
    let attributes = cfg.modulation.evaluate.clone();
    let evaluation = evaluate(&model, &train, &test, &table, &grouping, &attributes)?;
    Ok((
        run,
        evaluation,
        EvalContext {
            model,
            train,
            test,
            table,
            grouping,
            attributes,
        },
    ))
}

fn print_evaluation(e: &Evaluation) {
    println!("train HI {:.4} (n={}), test HI {:.4} (n={})", e.train_hi, e.n_train, e.test_hi, e.n_test);
    for g in &e.groups {
        match g.test_hi {
            Some(hi) => println!("  {} = {}: test HI {:.4} (n={})", g.attribute, g.group, hi, g.n_test),
            None => println!("  {} = {}: no test records", g.attribute, g.group),
        }
    }
}
