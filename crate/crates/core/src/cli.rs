//! Command-line driver behind the `coxratio` binary.
//!
//! Every subcommand reads a JSON parameter document (`--config`), applies
//! flag overrides, validates, runs, and writes its outputs together with a
//! `manifest.json` holding the resolved parameters and SHA-256 digests of
//! inputs and outputs. Passing a manifest back as `--config` replays the run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::estimators::{fit_qbe, fit_qmle, FitOptions, FitResult, QbeOptions};
use crate::hawkes::{
    fit_combined_example2, fit_full_nelder_mead, write_events_csv, CombinedOptions, Example2Params,
    HawkesParams,
};
use crate::lob::{
    build_dataset, calibrate, csv_header, parse_sessions_path, probability_curve, write_curve_csv,
    write_sessions, BuiltDataset, Calibration, CalibrationOptions, CurveAxis, ModelRecipe,
    SessionStream, SpreadWeighting,
};
use crate::prediction::{walk_forward, PredictionOptions, PredictorKind};
use crate::ratio::{gamma_example1, EstimationDataset, EventObservation, RatioModelSpec};
use crate::selection::{
    candidates, fit_penalized, search_submodels, support, write_selection_csv, CriterionKind,
    PenalizedOptions, PenaltySpec, SearchStrategy, SubModel,
};
use crate::simulator::{
    simulate_cox_ratio, substream, synth_lob_stream, BookDynamics, CoxSimulation, ScenarioConfig,
    SynthLobConfig,
};
use crate::stats::{anderson_darling_normal, mean, variance, AD_CRITICAL_1PCT};
use crate::fmt12;

pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const MANIFEST: &str = "manifest.json";
const MANIFEST_TAG: &str = "coxratio_manifest";

#[derive(Parser, Debug)]
#[command(name = "coxratio", version, about = "Ratio models of competing event intensities")]
pub struct Cli {
    /// JSON parameter document, or the manifest of an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed for every random stream of the run [default: 0].
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate event streams (presets example1, example2, synthlob).
    Simulate(SimulateArgs),
    /// Estimate spread mean, median trade size and market-order Hawkes fits.
    Calibrate(CalibrateArgs),
    /// Fit a ratio model by QMLE, QBE or Nelder-Mead.
    Fit(FitArgs),
    /// Rank candidate sub-models by information criteria.
    Select(SelectArgs),
    /// Sparse fit under an L1 or Lq penalty.
    Penalize(PenalizeArgs),
    /// Walk-forward trade-sign prediction.
    Predict(PredictArgs),
    /// Plot-ready tables (presets fig1, table1, curve, fig5).
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Penalize(_) => "penalize",
            Command::Predict(_) => "predict",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct SetArgs {
    /// Override any parameter, value parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Default)]
pub struct InputArgs {
    /// Event CSV (`time,process,...`) or order-book CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Model recipe for order-book input.
    #[arg(long)]
    pub recipe: Option<String>,
    /// Calibration JSON for order-book input.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Observation horizon of an event CSV.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of replications.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub recipe: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// qmle, qbe or nelder_mead.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated criteria, e.g. `qaic,qcaic,qbic`.
    #[arg(long)]
    pub criteria: Option<String>,
    /// table2_left, table2_right, exhaustive or greedy.
    #[arg(long)]
    pub candidates: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct PenalizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated predictor names.
    #[arg(long)]
    pub methods: Option<String>,
    #[command(flatten)]
    pub set: SetArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Fit JSON supplying θ for `curve`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[command(flatten)]
    pub set: SetArgs,
}

/// Failure class; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Compute(_) => EXIT_COMPUTE,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Compute(e) => e,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(Error::Config(msg.into()))
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs a parsed command line and returns the process exit code. Failures
/// print an error document on stdout and, when possible, `error.json` in the
/// output directory.
pub fn run(cli: Cli) -> i32 {
    let command = cli.command.name();
    let out_dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            let e = f.error();
            let doc = json!({ "command": command, "error": e.to_string(), "kind": e.kind() });
            let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
            println!("{text}");
            if fs::create_dir_all(&out_dir).is_ok() {
                let _ = fs::write(out_dir.join("error.json"), format!("{text}\n"));
            }
            f.code()
        }
    }
}

/// Outputs and input digests collected while a command runs.
struct Ctx {
    seed: u64,
    inputs: Vec<(String, String)>,
    files: Vec<(String, Vec<u8>)>,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let key = path.display().to_string();
        if !self.inputs.iter().any(|(p, _)| *p == key) {
            self.inputs.push((key, digest(&bytes)));
        }
        Ok(bytes)
    }

    fn put(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let v = round12(serde_json::to_value(value).map_err(Error::from)?);
        let mut s = serde_json::to_string_pretty(&v).map_err(Error::from)?;
        s.push('\n');
        self.put(name, s.into_bytes());
        Ok(())
    }

    fn put_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(Error::from)?;
        for r in rows {
            w.write_record(&r).map_err(Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.put(name, bytes);
        Ok(())
    }

    fn sub_seed(&self, name: &str, k: u64) -> u64 {
        substream(self.seed, name, k).next_u64()
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rounds every float in a JSON tree to 12 significant digits.
fn round12(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            fmt12(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round12).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round12(v))).collect()),
        other => other,
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let command = cli.command.name();
    let mut doc = match &cli.config {
        Some(p) => load_config(p, command)?,
        None => Map::new(),
    };
    let seed = match (cli.seed, doc.remove("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.as_u64().ok_or_else(|| config_err("seed must be a non-negative integer"))?,
        (None, None) => 0,
    };
    let threads = match (cli.threads, doc.remove("threads")) {
        (Some(t), _) => Some(t),
        (None, Some(Value::Null)) | (None, None) => None,
        (None, Some(v)) => Some(v.as_u64().ok_or_else(|| config_err("threads must be a positive integer"))? as usize),
    };
    if threads == Some(0) {
        return Err(config_err("threads must be positive"));
    }
    let out_dir = match (&cli.output, doc.remove("output")) {
        (Some(o), _) => o.clone(),
        (None, Some(Value::String(s))) => PathBuf::from(s),
        (None, Some(_)) => return Err(config_err("output must be a path")),
        (None, None) => PathBuf::from("out"),
    };
    apply_overrides(&cli.command, &mut doc)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| config_err(format!("thread pool: {e}")))?;
    let mut ctx = Ctx {
        seed,
        inputs: Vec::new(),
        files: Vec::new(),
    };
    let resolved = pool.install(|| -> CliResult<Value> {
        match &cli.command {
            Command::Simulate(_) => dispatch(doc, &mut ctx, cmd_simulate),
            Command::Calibrate(_) => dispatch(doc, &mut ctx, cmd_calibrate),
            Command::Fit(_) => dispatch(doc, &mut ctx, cmd_fit),
            Command::Select(_) => dispatch(doc, &mut ctx, cmd_select),
            Command::Penalize(_) => dispatch(doc, &mut ctx, cmd_penalize),
            Command::Predict(_) => dispatch(doc, &mut ctx, cmd_predict),
            Command::Report(_) => dispatch(doc, &mut ctx, cmd_report),
        }
    })?;

    let mut config = match resolved {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    config.insert("seed".into(), json!(seed));
    config.insert("threads".into(), json!(threads));
    fs::create_dir_all(&out_dir).map_err(|e| Failure::Compute(e.into()))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &ctx.files {
        fs::write(out_dir.join(name), bytes).map_err(|e| Failure::Compute(e.into()))?;
        outputs.push(json!({ "path": name, "sha256": digest(bytes) }));
    }
    let inputs: Vec<Value> = ctx.inputs.iter().map(|(p, d)| json!({ "path": p, "sha256": d })).collect();
    let manifest = json!({
        MANIFEST_TAG: 1,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": round12(Value::Object(config)),
        "inputs": inputs,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    fs::write(out_dir.join(MANIFEST), text).map_err(|e| Failure::Compute(e.into()))?;
    Ok(())
}

fn load_config(path: &Path, command: &str) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
    let Value::Object(mut m) = v else {
        return Err(config_err("config must be a JSON object"));
    };
    if m.contains_key(MANIFEST_TAG) {
        match m.get("command").and_then(Value::as_str) {
            Some(c) if c == command => {}
            other => {
                return Err(config_err(format!("manifest is for command {other:?}, not {command}")));
            }
        }
        return match m.remove("config") {
            Some(Value::Object(c)) => Ok(c),
            _ => Err(config_err("manifest has no config object")),
        };
    }
    Ok(m)
}

fn dispatch<P, F>(doc: Map<String, Value>, ctx: &mut Ctx, f: F) -> CliResult<Value>
where
    P: DeserializeOwned + Serialize + Validate,
    F: FnOnce(&P, &mut Ctx) -> CliResult<()>,
{
    let mut params: P = serde_json::from_value(Value::Object(doc)).map_err(|e| config_err(e.to_string()))?;
    params.validate()?;
    let resolved = serde_json::to_value(&params).map_err(Error::from)?;
    f(&params, ctx)?;
    Ok(resolved)
}

/// Checks parameters and fills run-time defaults so the manifest records them.
trait Validate {
    fn validate(&mut self) -> CliResult<()>;
}

fn apply_overrides(command: &Command, doc: &mut Map<String, Value>) -> CliResult<()> {
    let mut set = |k: &str, v: Value| {
        doc.insert(k.to_string(), v);
    };
    fn list(s: &str) -> Value {
        Value::Array(s.split(',').map(|x| Value::String(x.trim().to_string())).collect())
    }
    let input = |a: &InputArgs, set: &mut dyn FnMut(&str, Value)| {
        if let Some(v) = &a.input {
            set("input", json!(v));
        }
        if let Some(v) = &a.recipe {
            set("recipe", json!(v));
        }
        if let Some(v) = &a.calibration {
            set("calibration", json!(v));
        }
        if let Some(v) = a.horizon {
            set("horizon", json!(v));
        }
    };
    let extra = match command {
        Command::Simulate(a) => {
            if let Some(v) = &a.preset {
                set("preset", json!(v));
            }
            if let Some(v) = a.seeds {
                set("seeds", json!(v));
            }
            if let Some(v) = a.horizon {
                set("horizon", json!(v));
            }
            if let Some(v) = &a.recipe {
                set("recipe", json!(v));
            }
            &a.set
        }
        Command::Calibrate(a) => {
            if let Some(v) = &a.input {
                set("input", json!(v));
            }
            &a.set
        }
        Command::Fit(a) => {
            input(&a.input, &mut set);
            if let Some(v) = &a.method {
                set("method", json!(v));
            }
            &a.set
        }
        Command::Select(a) => {
            input(&a.input, &mut set);
            if let Some(v) = &a.criteria {
                set("criteria", list(v));
            }
            if let Some(v) = &a.candidates {
                set("candidates", json!(v));
            }
            &a.set
        }
        Command::Penalize(a) => {
            input(&a.input, &mut set);
            if let Some(v) = a.lambda {
                set("lambda", json!(v));
            }
            if let Some(v) = a.q {
                set("q", json!(v));
            }
            &a.set
        }
        Command::Predict(a) => {
            if let Some(v) = &a.input {
                set("input", json!(v));
            }
            if let Some(v) = &a.methods {
                set("methods", list(v));
            }
            &a.set
        }
        Command::Report(a) => {
            if let Some(v) = &a.preset {
                set("preset", json!(v));
            }
            input(&a.input, &mut set);
            if let Some(v) = a.seeds {
                set("seeds", json!(v));
            }
            if let Some(v) = &a.fit {
                set("fit", json!(v));
            }
            &a.set
        }
    };
    for kv in &extra.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        doc.insert(k.trim().to_string(), value);
    }
    Ok(())
}

// ---------------------------------------------------------------- inputs

/// Either a ratio dataset read from an event CSV or order-book sessions with
/// the dataset built from them.
enum Loaded {
    Events(EstimationDataset),
    Lob {
        sessions: Vec<SessionStream>,
        recipe: ModelRecipe,
        calibration: Calibration,
        built: BuiltDataset,
    },
}

impl Loaded {
    fn dataset(&self) -> &EstimationDataset {
        match self {
            Loaded::Events(d) => d,
            Loaded::Lob { built, .. } => &built.dataset,
        }
    }

    fn summary(&self) -> Value {
        let d = self.dataset();
        let mut v = json!({
            "n_events": d.len(),
            "horizon": d.horizon(),
            "event_counts": d.event_counts(),
            "covariates": d.spec().covariate_names,
        });
        if let Loaded::Lob { built, calibration, recipe, sessions } = self {
            v["recipe"] = json!(recipe.name);
            v["sessions"] = json!(sessions.len());
            v["parsed_events"] = json!(built.parsed_events);
            v["dropped"] = json!(built.drops);
            v["empty_queue_floors"] = json!(built.empty_queue_floors);
            v["calibration"] = json!(calibration);
        }
        v
    }
}

struct InputRef<'a> {
    input: &'a Option<PathBuf>,
    recipe: &'a Option<String>,
    calibration: &'a Option<PathBuf>,
    horizon: Option<f64>,
    n_processes: Option<usize>,
}

fn check_input(i: &InputRef) -> CliResult<()> {
    let Some(p) = i.input else {
        return Err(config_err("missing input"));
    };
    if !p.is_file() {
        return Err(config_err(format!("input {} does not exist", p.display())));
    }
    if let Some(r) = i.recipe {
        ModelRecipe::named(r).map_err(Failure::Config)?;
    }
    if let Some(c) = i.calibration {
        if !c.is_file() {
            return Err(config_err(format!("calibration {} does not exist", c.display())));
        }
    }
    if let Some(h) = i.horizon {
        if !(h.is_finite() && h >= 0.0) {
            return Err(config_err("horizon must be finite and >= 0"));
        }
    }
    Ok(())
}

fn is_lob_file(path: &Path) -> CliResult<bool> {
    let f = fs::File::open(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| Failure::Compute(e.into()))?;
    Ok(line.trim_end().split(',').next() == Some("session_id")
        && line.trim_end() == csv_header().join(","))
}

fn load_calibration(ctx: &mut Ctx, path: &Path) -> CliResult<Calibration> {
    let bytes = ctx.read(path)?;
    let c: Calibration = serde_json::from_slice(&bytes).map_err(|e| config_err(format!("calibration: {e}")))?;
    c.validate().map_err(Failure::Config)?;
    Ok(c)
}

fn load_sessions(ctx: &mut Ctx, path: &Path) -> CliResult<Vec<SessionStream>> {
    ctx.read(path)?;
    Ok(parse_sessions_path(path)?)
}

fn load_input(ctx: &mut Ctx, i: &InputRef) -> CliResult<Loaded> {
    let path = i.input.as_deref().expect("validated");
    if is_lob_file(path)? {
        let name = i
            .recipe
            .as_deref()
            .ok_or_else(|| config_err("order-book input needs a recipe"))?;
        let recipe = ModelRecipe::named(name).map_err(Failure::Config)?;
        let sessions = load_sessions(ctx, path)?;
        let calibration = match i.calibration {
            Some(c) => load_calibration(ctx, c)?,
            None => calibrate(
                &sessions,
                &CalibrationOptions {
                    fit_hawkes: recipe.uses_hawkes(),
                    ..Default::default()
                },
            )?,
        };
        let built = build_dataset(&sessions, &recipe, &calibration)?;
        return Ok(Loaded::Lob {
            sessions,
            recipe,
            calibration,
            built,
        });
    }
    let bytes = ctx.read(path)?;
    let truth = sibling_truth(ctx, path)?;
    let horizon = match i.horizon.or_else(|| truth.as_ref().and_then(|t| t["horizon"].as_f64())) {
        Some(h) => h,
        None => return Err(config_err("event input needs a horizon (or truth.json beside it)")),
    };
    let n_processes = i
        .n_processes
        .or_else(|| truth.as_ref().and_then(|t| t["n_processes"].as_u64()).map(|n| n as usize));
    Ok(Loaded::Events(read_event_dataset(&bytes, horizon, n_processes)?))
}

fn sibling_truth(ctx: &mut Ctx, path: &Path) -> CliResult<Option<Value>> {
    let t = path.with_file_name("truth.json");
    if !t.is_file() {
        return Ok(None);
    }
    let bytes = ctx.read(&t)?;
    Ok(serde_json::from_slice(&bytes).ok())
}

/// Reads `[session_id,]time,process,<covariates...>` rows.
fn read_event_dataset(bytes: &[u8], horizon: f64, n_processes: Option<usize>) -> CliResult<EstimationDataset> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(String::from).collect();
    let offset = match header.first().map(String::as_str) {
        Some("session_id") => 1,
        _ => 0,
    };
    if header.get(offset).map(String::as_str) != Some("time") || header.get(offset + 1).map(String::as_str) != Some("process") {
        return Err(Failure::Compute(Error::Parse {
            line: 1,
            message: "expected header [session_id,]time,process,...".into(),
        }));
    }
    let names: Vec<String> = header[offset + 2..].to_vec();
    let mut obs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        let line = k + 2;
        let perr = |m: String| Failure::Compute(Error::Parse { line, message: m });
        if rec.len() != header.len() {
            return Err(perr(format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let num = |j: usize| rec[j].trim().parse::<f64>().map_err(|_| perr(format!("bad number {:?}", &rec[j])));
        let session_id = if offset == 1 {
            rec[0].trim().parse::<u64>().map_err(|_| perr(format!("bad session {:?}", &rec[0])))?
        } else {
            0
        };
        let process_index = rec[offset + 1]
            .trim()
            .parse::<usize>()
            .map_err(|_| perr(format!("bad process {:?}", &rec[offset + 1])))?;
        let covariates = (offset + 2..header.len()).map(num).collect::<CliResult<Vec<f64>>>()?;
        obs.push(EventObservation {
            session_id,
            time: num(offset)?,
            process_index,
            covariates,
        });
    }
    let seen = obs.iter().map(|o| o.process_index + 1).max().unwrap_or(2).max(2);
    let spec = RatioModelSpec::new(n_processes.unwrap_or(seen), names)?;
    Ok(EstimationDataset::continuous(spec, obs, horizon)?)
}

fn write_event_csv(events: &[(f64, usize)], covariates: &[Vec<f64>], names: &[String]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string(), "process".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(Error::from)?;
    for (&(t, i), x) in events.iter().zip(covariates) {
        let mut row = vec![format!("{t}"), i.to_string()];
        row.extend(x.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.into_inner().map_err(|e| Failure::Compute(Error::Io(e.into_error())))
}

fn cox_event_csv(sim: &CoxSimulation) -> CliResult<Vec<u8>> {
    let names: Vec<String> = (1..=sim.chains.len()).map(|j| format!("x{j}")).collect();
    let covs: Vec<Vec<f64>> = sim
        .events
        .iter()
        .map(|&(t, _)| sim.chains.iter().map(|c| c.value_before(t)).collect())
        .collect();
    write_event_csv(&sim.events, &covs, &names)
}

fn coefficient_rows(spec: &RatioModelSpec, fit: &FitResult) -> Vec<Vec<String>> {
    (0..spec.dim())
        .map(|k| {
            vec![
                spec.coordinate_label(k),
                fmt12(fit.theta_hat.as_slice()[k]),
                fmt12(fit.stderr[k]),
            ]
        })
        .collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateParams {
    preset: String,
    seeds: usize,
    horizon: Option<f64>,
    recipe: Option<String>,
    /// Rows for processes `1..` of the synthetic recipe.
    theta: Option<Vec<Vec<f64>>>,
    n_sessions: usize,
    events_per_session: usize,
    /// `poisson` or `trade_flow`.
    dynamics: String,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            preset: "example1".into(),
            seeds: 1,
            horizon: None,
            recipe: None,
            theta: None,
            n_sessions: 2,
            events_per_session: 10_000,
            dynamics: "poisson".into(),
        }
    }
}

/// Parameters used when a synthetic recipe is simulated without explicit θ.
fn default_theta(recipe: &str) -> Option<Vec<Vec<f64>>> {
    let one_hot = |n: usize, k: usize, v: f64| {
        let mut r = vec![0.0; n];
        r[k] = v;
        r
    };
    Some(match recipe {
        "imbalance" => vec![vec![0.0, 2.0]],
        "imbalance_last" => vec![vec![0.0, 2.0, 0.8]],
        "imbalance_last_spread" => vec![vec![0.0, 2.0, 0.8, -0.4]],
        "table2_left" => vec![vec![0.0, 2.0, 0.8, 0.0, 0.0, 0.0, 0.15]],
        "table2_right" => vec![one_hot(11, 1, 2.0)],
        "all_imbalances" => vec![one_hot(11, 1, 2.0)],
        "spread" => vec![vec![-0.5, 1.0, 0.0], vec![0.2, -0.5, 0.0]],
        r if r.starts_with("queue_") => vec![vec![0.8, -0.6, 0.0]],
        _ => return None,
    })
}

fn trade_flow() -> BookDynamics {
    let h = HawkesParams::univariate(0.3, 1.5, 3.0).expect("valid");
    BookDynamics::TradeFlow {
        background_rate: 4.0,
        hawkes_bid: h.clone(),
        hawkes_ask: h,
    }
}

impl Validate for SimulateParams {
    fn validate(&mut self) -> CliResult<()> {
        if self.seeds == 0 {
            return Err(config_err("seeds must be >= 1"));
        }
        match self.preset.as_str() {
            "example1" | "example2" => {
                let h = self.horizon.get_or_insert(if self.preset == "example1" { 1000.0 } else { 1e4 });
                if !(h.is_finite() && *h >= 0.0) {
                    return Err(config_err("horizon must be finite and >= 0"));
                }
                if self.recipe.is_some() || self.theta.is_some() {
                    return Err(config_err("recipe and theta apply to synthlob only"));
                }
            }
            "synthlob" => {
                if self.horizon.is_some() {
                    return Err(config_err("synthlob is sized by events_per_session, not horizon"));
                }
                let trade = match self.dynamics.as_str() {
                    "poisson" => false,
                    "trade_flow" => true,
                    d => return Err(config_err(format!("unknown dynamics {d:?}"))),
                };
                let name = self
                    .recipe
                    .get_or_insert_with(|| if trade { "imbalance_last_spread" } else { "table2_left" }.into())
                    .clone();
                let recipe = ModelRecipe::named(&name).map_err(Failure::Config)?;
                if self.theta.is_none() {
                    let t = if trade { Some(vec![vec![0.0, 3.0, 0.3, 0.3]]) } else { default_theta(&name) };
                    self.theta = Some(t.ok_or_else(|| config_err(format!("recipe {name} needs explicit theta")))?);
                }
                let theta = self.theta.as_ref().expect("set");
                let width = recipe.covariates.len();
                if theta.len() + 1 != recipe.processes.len() || theta.iter().any(|r| r.len() != width) {
                    return Err(config_err(format!(
                        "theta must have {} rows of {} values",
                        recipe.processes.len() - 1,
                        width
                    )));
                }
            }
            p => return Err(config_err(format!("unknown preset {p:?}"))),
        }
        Ok(())
    }
}

fn cmd_simulate(p: &SimulateParams, ctx: &mut Ctx) -> CliResult<()> {
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|k| ctx.sub_seed("replicate", k)).collect();
    match p.preset.as_str() {
        "example1" | "example2" => {
            let horizon = p.horizon.expect("validated");
            let table1 = Example2Params::table1();
            let scenario = |s: u64| {
                if p.preset == "example1" {
                    ScenarioConfig::example1(horizon, s)
                } else {
                    ScenarioConfig::example2(&table1, horizon, s)
                }
            };
            let files: Vec<CliResult<(Vec<u8>, Vec<u8>, CoxSimulation)>> = seeds
                .par_iter()
                .map(|&s| {
                    let sim = simulate_cox_ratio(&scenario(s))?;
                    let mut driver = Vec::new();
                    write_events_csv(&[sim.baseline_events.clone()], &mut driver)?;
                    Ok((cox_event_csv(&sim)?, driver, sim))
                })
                .collect();
            let mut first = None;
            for (k, f) in files.into_iter().enumerate() {
                let (events, driver, sim) = f?;
                ctx.put(format!("events_{k:04}.csv"), events);
                if p.preset == "example2" {
                    ctx.put(format!("driver_{k:04}.csv"), driver);
                }
                first.get_or_insert(sim);
            }
            let sim = first.expect("seeds >= 1");
            let truth = json!({
                "preset": p.preset,
                "horizon": horizon,
                "n_processes": sim.vartheta.n_processes(),
                "covariates": (1..=sim.chains.len()).map(|j| format!("x{j}")).collect::<Vec<_>>(),
                "theta_true": (1..sim.vartheta.n_processes()).map(|i| sim.theta_true.row(i).to_vec()).collect::<Vec<_>>(),
                "vartheta": sim.vartheta.rows(),
                "baseline": scenario(0).baseline,
                "replicate_seeds": seeds,
            });
            ctx.put_json("truth.json", &truth)
        }
        _ => {
            let recipe = p.recipe.clone().expect("validated");
            let theta = p.theta.clone().expect("validated");
            let outs: Vec<CliResult<_>> = seeds
                .par_iter()
                .map(|&s| {
                    let mut cfg = SynthLobConfig::new(&recipe, theta.clone(), p.n_sessions, p.events_per_session, s);
                    if p.dynamics == "trade_flow" {
                        cfg.dynamics = trade_flow();
                    }
                    let out = synth_lob_stream(&cfg)?;
                    let mut buf = Vec::new();
                    write_sessions(&out.sessions, &mut buf)?;
                    Ok((buf, out))
                })
                .collect();
            let mut first = None;
            for (k, o) in outs.into_iter().enumerate() {
                let (buf, out) = o?;
                ctx.put(format!("lob_{k:04}.csv"), buf);
                first.get_or_insert(out);
            }
            let out = first.expect("seeds >= 1");
            ctx.put_json("calibration.json", &out.calibration)?;
            let truth = json!({
                "preset": "synthlob",
                "recipe": out.truth.name,
                "covariates": out.truth.covariate_names(),
                "theta_true": out.theta_true,
                "calibration": out.calibration,
                "replicate_seeds": seeds,
            });
            ctx.put_json("truth.json", &truth)
        }
    }
}

// ---------------------------------------------------------------- calibrate

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CalibrateParams {
    input: Option<PathBuf>,
    spread_weighting: SpreadWeighting,
    fit_hawkes: Option<bool>,
}

impl Validate for CalibrateParams {
    fn validate(&mut self) -> CliResult<()> {
        check_input(&InputRef {
            input: &self.input,
            recipe: &None,
            calibration: &None,
            horizon: None,
            n_processes: None,
        })?;
        self.fit_hawkes.get_or_insert(true);
        Ok(())
    }
}

fn cmd_calibrate(p: &CalibrateParams, ctx: &mut Ctx) -> CliResult<()> {
    let path = p.input.as_deref().expect("validated");
    let sessions = load_sessions(ctx, path)?;
    let c = calibrate(
        &sessions,
        &CalibrationOptions {
            spread_weighting: p.spread_weighting,
            fit_hawkes: p.fit_hawkes.unwrap_or(true),
        },
    )?;
    ctx.put_json("calibration.json", &c)
}

// ---------------------------------------------------------------- fit

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitParams {
    input: Option<PathBuf>,
    recipe: Option<String>,
    calibration: Option<PathBuf>,
    horizon: Option<f64>,
    n_processes: Option<usize>,
    /// `qmle`, `qbe` or `nelder_mead`.
    method: String,
    max_iter: Option<usize>,
    grad_tol: f64,
    n_samples: usize,
    burn_in: usize,
    theta_box: Option<(f64, f64)>,
}

impl Default for FitParams {
    fn default() -> Self {
        let q = QbeOptions::default();
        Self {
            input: None,
            recipe: None,
            calibration: None,
            horizon: None,
            n_processes: None,
            method: "qmle".into(),
            max_iter: None,
            grad_tol: FitOptions::default().grad_tol,
            n_samples: q.n_samples,
            burn_in: q.burn_in,
            theta_box: None,
        }
    }
}

impl Validate for FitParams {
    fn validate(&mut self) -> CliResult<()> {
        check_input(&InputRef {
            input: &self.input,
            recipe: &self.recipe,
            calibration: &self.calibration,
            horizon: self.horizon,
            n_processes: self.n_processes,
        })?;
        if !matches!(self.method.as_str(), "qmle" | "qbe" | "nelder_mead") {
            return Err(config_err(format!("unknown method {:?}", self.method)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(config_err("grad_tol must be positive"));
        }
        if self.method == "qbe" && self.n_samples <= self.burn_in {
            return Err(config_err("n_samples must exceed burn_in"));
        }
        if let Some((lo, hi)) = self.theta_box {
            if !(lo < hi) {
                return Err(config_err("theta_box needs lower < upper"));
            }
        }
        Ok(())
    }
}

fn with_box(dataset: &EstimationDataset, b: Option<(f64, f64)>) -> CliResult<EstimationDataset> {
    match b {
        None => Ok(dataset.clone()),
        Some((lo, hi)) => {
            let spec = dataset.spec().clone().with_uniform_box(lo, hi).map_err(Failure::Config)?;
            Ok(dataset.with_spec(spec)?)
        }
    }
}

fn cmd_fit(p: &FitParams, ctx: &mut Ctx) -> CliResult<()> {
    let loaded = load_input(
        ctx,
        &InputRef {
            input: &p.input,
            recipe: &p.recipe,
            calibration: &p.calibration,
            horizon: p.horizon,
            n_processes: p.n_processes,
        },
    )?;
    let dataset = with_box(loaded.dataset(), p.theta_box)?;
    let fit = match p.method.as_str() {
        "qbe" => fit_qbe(
            &dataset,
            &QbeOptions {
                n_samples: p.n_samples,
                burn_in: p.burn_in,
                seed: ctx.sub_seed("mcmc", 0),
                ..Default::default()
            },
        )?,
        m => {
            let mut o = if m == "nelder_mead" { FitOptions::nelder_mead() } else { FitOptions::default() };
            o.grad_tol = p.grad_tol;
            if let Some(n) = p.max_iter {
                o.max_iter = n;
            }
            fit_qmle(&dataset, &o)?
        }
    };
    ctx.put_json("fit.json", &fit)?;
    ctx.put_csv("coefficients.csv", &["coordinate", "estimate", "stderr"], coefficient_rows(dataset.spec(), &fit))?;
    ctx.put_json("dataset.json", &loaded.summary())
}

// ---------------------------------------------------------------- select

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectParams {
    input: Option<PathBuf>,
    recipe: Option<String>,
    calibration: Option<PathBuf>,
    horizon: Option<f64>,
    n_processes: Option<usize>,
    criteria: Vec<String>,
    /// `table2_left`, `table2_right`, `exhaustive` or `greedy`.
    candidates: String,
    /// Count selections per order-book session, as in the daily tables.
    per_session: bool,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            input: None,
            recipe: None,
            calibration: None,
            horizon: None,
            n_processes: None,
            criteria: vec!["qaic".into(), "qcaic".into(), "qbic".into()],
            candidates: "table2_left".into(),
            per_session: true,
        }
    }
}

impl Validate for SelectParams {
    fn validate(&mut self) -> CliResult<()> {
        check_input(&InputRef {
            input: &self.input,
            recipe: &self.recipe,
            calibration: &self.calibration,
            horizon: self.horizon,
            n_processes: self.n_processes,
        })?;
        if self.criteria.is_empty() {
            return Err(config_err("no criteria"));
        }
        for c in &self.criteria {
            CriterionKind::parse(c).map_err(|e| config_err(e.to_string()))?;
        }
        if !matches!(self.candidates.as_str(), "table2_left" | "table2_right" | "exhaustive" | "greedy") {
            return Err(config_err(format!("unknown candidate set {:?}", self.candidates)));
        }
        if self.recipe.is_none() && self.candidates.starts_with("table2") {
            self.recipe = Some(self.candidates.clone());
        }
        Ok(())
    }
}

fn named_candidates(kind: &str, spec: &RatioModelSpec) -> CliResult<Option<Vec<(String, SubModel)>>> {
    let (names, list): (&[&str], _) = match kind {
        "table2_left" => (&candidates::TABLE2_LEFT_COVARIATES[..], candidates::table2_left()),
        "table2_right" => (&candidates::TABLE2_RIGHT_COVARIATES[..], candidates::table2_right()),
        _ => return Ok(None),
    };
    if spec.covariate_names != names {
        return Err(config_err(format!(
            "candidate set {kind} needs covariates {names:?}, got {:?}",
            spec.covariate_names
        )));
    }
    list.into_iter()
        .map(|(n, m)| Ok((n.to_string(), SubModel::per_covariate(spec, &m.mask)?)))
        .collect::<CliResult<Vec<_>>>()
        .map(Some)
}

fn cmd_select(p: &SelectParams, ctx: &mut Ctx) -> CliResult<()> {
    let loaded = load_input(
        ctx,
        &InputRef {
            input: &p.input,
            recipe: &p.recipe,
            calibration: &p.calibration,
            horizon: p.horizon,
            n_processes: p.n_processes,
        },
    )?;
    let pooled = loaded.dataset();
    let named = named_candidates(&p.candidates, pooled.spec())?;
    let masks: Option<Vec<SubModel>> = named.as_ref().map(|v| v.iter().map(|(_, m)| m.clone()).collect());
    let strategy = if p.candidates == "greedy" { SearchStrategy::ForwardGreedy } else { SearchStrategy::Exhaustive };
    let criteria: Vec<CriterionKind> = p.criteria.iter().map(|c| CriterionKind::parse(c)).collect::<Result<_, _>>()?;

    // units for the counts table: each session, or the pooled dataset
    let units: Vec<EstimationDataset> = match &loaded {
        Loaded::Lob { sessions, recipe, calibration, .. } if p.per_session && sessions.len() > 1 => sessions
            .iter()
            .map(|s| Ok(build_dataset(std::slice::from_ref(s), recipe, calibration)?.dataset))
            .collect::<CliResult<_>>()?,
        _ => vec![pooled.clone()],
    };
    let mut counts: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    if let Some(v) = &named {
        for (_, m) in v {
            counts.insert(m.mask.clone(), vec![0; criteria.len()]);
        }
    }
    for (j, c) in criteria.iter().enumerate() {
        let ranked = search_submodels(pooled, *c, strategy, masks.as_deref())?;
        let mut buf = Vec::new();
        write_selection_csv(&ranked, &mut buf)?;
        ctx.put(format!("ranked_{}.csv", c.name()), buf);
        for u in &units {
            let r = search_submodels(u, *c, strategy, masks.as_deref())?;
            counts.entry(r[0].submodel.mask.clone()).or_insert_with(|| vec![0; criteria.len()])[j] += 1;
        }
    }
    let label = |mask: &Vec<bool>| -> String {
        named
            .as_ref()
            .and_then(|v| v.iter().find(|(_, m)| m.mask == *mask).map(|(n, _)| n.clone()))
            .unwrap_or_else(|| SubModel::new(mask.clone()).label())
    };
    let mut rows: Vec<(usize, usize, Vec<String>)> = counts
        .iter()
        .map(|(mask, c)| {
            let pos = named
                .as_ref()
                .and_then(|v| v.iter().position(|(_, m)| m.mask == *mask))
                .unwrap_or(usize::MAX);
            let d = mask.iter().filter(|&&b| b).count();
            let mut row = vec![d.to_string(), label(mask)];
            row.extend(c.iter().map(|n| n.to_string()));
            (pos, d, row)
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut header = vec!["d".to_string(), "model".to_string()];
    header.extend(criteria.iter().map(|c| c.name().to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.put_csv("counts.csv", &header, rows.into_iter().map(|r| r.2).collect())?;
    ctx.put_json("dataset.json", &loaded.summary())
}

// ---------------------------------------------------------------- penalize

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PenalizeParams {
    input: Option<PathBuf>,
    recipe: Option<String>,
    calibration: Option<PathBuf>,
    horizon: Option<f64>,
    n_processes: Option<usize>,
    /// Penalty level; the objective multiplies it by `√T`.
    lambda: Option<f64>,
    /// Alternative to `lambda`: total level `√T λ`.
    lambda_scale: Option<f64>,
    q: f64,
    /// Weights from the QMLE (adaptive lasso).
    adaptive: bool,
    /// Covariates left out of the penalty.
    unpenalized: Vec<String>,
    max_iter: usize,
    kkt_tol: f64,
}

impl Default for PenalizeParams {
    fn default() -> Self {
        let o = PenalizedOptions::default();
        Self {
            input: None,
            recipe: None,
            calibration: None,
            horizon: None,
            n_processes: None,
            lambda: None,
            lambda_scale: None,
            q: 1.0,
            adaptive: false,
            unpenalized: vec!["intercept".into()],
            max_iter: o.max_iter,
            kkt_tol: o.kkt_tol,
        }
    }
}

impl Validate for PenalizeParams {
    fn validate(&mut self) -> CliResult<()> {
        check_input(&InputRef {
            input: &self.input,
            recipe: &self.recipe,
            calibration: &self.calibration,
            horizon: self.horizon,
            n_processes: self.n_processes,
        })?;
        match (self.lambda, self.lambda_scale) {
            (Some(l), None) | (None, Some(l)) if l.is_finite() && l > 0.0 => {}
            (Some(_), Some(_)) => return Err(config_err("give lambda or lambda_scale, not both")),
            (None, None) => return Err(config_err("missing lambda")),
            _ => return Err(config_err("lambda must be finite and positive")),
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(config_err("q must lie in (0, 1]"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(config_err("kkt_tol must be positive"));
        }
        Ok(())
    }
}

fn penalty_for(p: &PenalizeParams, dataset: &EstimationDataset, level: f64, scaled: bool) -> CliResult<PenaltySpec> {
    let horizon = dataset.horizon();
    let lambda = if scaled { level / horizon.sqrt() } else { level };
    let mut spec = if p.adaptive {
        let init = fit_qmle(dataset, &FitOptions::default())?;
        PenaltySpec::adaptive(lambda, &init.theta_hat)
    } else {
        PenaltySpec::lasso(lambda)
    };
    spec.q = p.q;
    for name in &p.unpenalized {
        if dataset.spec().covariate_names.iter().any(|c| c == name) {
            spec = spec.without_penalty_on(dataset.spec(), name);
        }
    }
    Ok(spec)
}

fn cmd_penalize(p: &PenalizeParams, ctx: &mut Ctx) -> CliResult<()> {
    let loaded = load_input(
        ctx,
        &InputRef {
            input: &p.input,
            recipe: &p.recipe,
            calibration: &p.calibration,
            horizon: p.horizon,
            n_processes: p.n_processes,
        },
    )?;
    let dataset = loaded.dataset();
    let (level, scaled) = match (p.lambda, p.lambda_scale) {
        (Some(l), _) => (l, false),
        (_, Some(s)) => (s, true),
        _ => unreachable!("validated"),
    };
    let penalty = penalty_for(p, dataset, level, scaled)?;
    let opts = PenalizedOptions {
        max_iter: p.max_iter,
        kkt_tol: p.kkt_tol,
        ..Default::default()
    };
    let fit = fit_penalized(dataset, &penalty, &opts)?;
    let chosen = support(&fit.theta_hat);
    let rows = coefficient_rows(dataset.spec(), &fit)
        .into_iter()
        .enumerate()
        .map(|(k, mut r)| {
            r.push(u8::from(chosen.contains(&k)).to_string());
            r
        })
        .collect();
    ctx.put_json("fit.json", &fit)?;
    ctx.put_json("penalty.json", &penalty)?;
    ctx.put_csv("coefficients.csv", &["coordinate", "estimate", "stderr", "selected"], rows)?;
    ctx.put_json("dataset.json", &loaded.summary())
}

// ---------------------------------------------------------------- predict

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PredictParams {
    input: Option<PathBuf>,
    methods: Vec<String>,
    ratio_hawkes_intercept: bool,
    spread_weighting: SpreadWeighting,
}

impl Default for PredictParams {
    fn default() -> Self {
        Self {
            input: None,
            methods: PredictorKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            ratio_hawkes_intercept: true,
            spread_weighting: SpreadWeighting::default(),
        }
    }
}

impl Validate for PredictParams {
    fn validate(&mut self) -> CliResult<()> {
        check_input(&InputRef {
            input: &self.input,
            recipe: &None,
            calibration: &None,
            horizon: None,
            n_processes: None,
        })?;
        if self.methods.is_empty() {
            return Err(config_err("no methods"));
        }
        for m in &self.methods {
            PredictorKind::parse(m).map_err(Failure::Config)?;
        }
        Ok(())
    }
}

fn cmd_predict(p: &PredictParams, ctx: &mut Ctx) -> CliResult<()> {
    let sessions = load_sessions(ctx, p.input.as_deref().expect("validated"))?;
    let kinds: Vec<PredictorKind> = p.methods.iter().map(|m| PredictorKind::parse(m)).collect::<Result<_, _>>()?;
    let opts = PredictionOptions {
        ratio_hawkes_intercept: p.ratio_hawkes_intercept,
        calibration: CalibrationOptions {
            spread_weighting: p.spread_weighting,
            fit_hawkes: true,
        },
        ..Default::default()
    };
    let report = walk_forward(&sessions, &kinds, &opts)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    ctx.put("sessions.csv", buf);
    let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
    let rows = report
        .methods
        .iter()
        .map(|m| {
            vec![
                m.kind.name().to_string(),
                m.score.trades.to_string(),
                opt(m.accuracy),
                opt(m.sign_change_accuracy),
                opt(m.delta_vs_last),
                m.failed_sessions.to_string(),
            ]
        })
        .collect();
    ctx.put_csv(
        "accuracy.csv",
        &["method", "trades", "accuracy", "sign_change_accuracy", "delta_vs_last", "failed_sessions"],
        rows,
    )?;
    let summary = json!({
        "best": report.best().map(|k| k.name()),
        "methods": report.methods,
    });
    ctx.put_json("summary.json", &summary)
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportParams {
    /// `fig1`, `table1`, `curve` or `fig5`.
    preset: String,
    input: Option<PathBuf>,
    recipe: Option<String>,
    calibration: Option<PathBuf>,
    horizon: Option<f64>,
    n_processes: Option<usize>,
    seeds: Option<usize>,
    bins: usize,
    /// `table1`: also run the Nelder-Mead baseline.
    full: bool,
    /// `curve`: fit JSON supplying θ; fitted on the input when absent.
    fit: Option<PathBuf>,
    /// `curve`: process index; every non-reference process when absent.
    process: Option<usize>,
    grid: Option<Vec<f64>>,
    /// `fig5`: penalty levels `√T λ`.
    lambda_scales: Vec<f64>,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            preset: "fig1".into(),
            input: None,
            recipe: None,
            calibration: None,
            horizon: None,
            n_processes: None,
            seeds: None,
            bins: 40,
            full: true,
            fit: None,
            process: None,
            grid: None,
            lambda_scales: vec![1.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
        }
    }
}

impl Validate for ReportParams {
    fn validate(&mut self) -> CliResult<()> {
        match self.preset.as_str() {
            "fig1" => {
                if let Some(dir) = &self.input {
                    if !dir.join("truth.json").is_file() {
                        return Err(config_err("fig1 input must be a simulate example1 output directory"));
                    }
                } else {
                    self.seeds.get_or_insert(500);
                    self.horizon.get_or_insert(1000.0);
                }
                if self.bins == 0 {
                    return Err(config_err("bins must be >= 1"));
                }
            }
            "table1" => {
                self.seeds.get_or_insert(10);
                self.horizon.get_or_insert(1e4);
            }
            "curve" | "fig5" => {
                if self.preset == "fig5" {
                    self.recipe.get_or_insert_with(|| "all_imbalances".into());
                    if self.lambda_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                        return Err(config_err("lambda_scales must be finite and positive"));
                    }
                }
                check_input(&InputRef {
                    input: &self.input,
                    recipe: &self.recipe,
                    calibration: &self.calibration,
                    horizon: self.horizon,
                    n_processes: self.n_processes,
                })?;
                if self.recipe.is_none() {
                    return Err(config_err(format!("{} needs a recipe", self.preset)));
                }
                if let Some(f) = &self.fit {
                    if !f.is_file() {
                        return Err(config_err(format!("fit {} does not exist", f.display())));
                    }
                }
            }
            p => return Err(config_err(format!("unknown preset {p:?}"))),
        }
        if self.seeds == Some(0) {
            return Err(config_err("seeds must be >= 1"));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(config_err("horizon must be positive"));
            }
        }
        Ok(())
    }
}

fn cmd_report(p: &ReportParams, ctx: &mut Ctx) -> CliResult<()> {
    match p.preset.as_str() {
        "fig1" => report_fig1(p, ctx),
        "table1" => report_table1(p, ctx),
        "curve" => report_curve(p, ctx),
        _ => report_fig5(p, ctx),
    }
}

/// Example-1 error histogram with the `N(0, 1/(ΓT))` overlay.
fn report_fig1(p: &ReportParams, ctx: &mut Ctx) -> CliResult<()> {
    let theta_star = 1.5;
    let datasets: Vec<EstimationDataset> = match &p.input {
        Some(dir) => {
            let truth: Value = serde_json::from_slice(&ctx.read(&dir.join("truth.json"))?)
                .map_err(|e| config_err(format!("truth.json: {e}")))?;
            if truth["preset"] != "example1" {
                return Err(config_err("fig1 needs example1 simulations"));
            }
            let horizon = truth["horizon"].as_f64().ok_or_else(|| config_err("truth.json lacks horizon"))?;
            let n = truth["replicate_seeds"].as_array().map_or(0, Vec::len);
            (0..n)
                .map(|k| {
                    let bytes = ctx.read(&dir.join(format!("events_{k:04}.csv")))?;
                    read_event_dataset(&bytes, horizon, Some(2))
                })
                .collect::<CliResult<_>>()?
        }
        None => {
            let horizon = p.horizon.expect("validated");
            let seeds: Vec<u64> = (0..p.seeds.expect("validated") as u64).map(|k| ctx.sub_seed("replicate", k)).collect();
            seeds
                .par_iter()
                .map(|&s| Ok(simulate_cox_ratio(&ScenarioConfig::example1(horizon, s))?.ratio_dataset()?))
                .collect::<CliResult<_>>()?
        }
    };
    let fits: Vec<CliResult<FitResult>> = datasets.par_iter().map(|d| Ok(fit_qmle(d, &FitOptions::default())?)).collect();
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for (k, f) in fits.into_iter().enumerate() {
        let f = f?;
        let e = f.theta_hat.as_slice()[0] - theta_star;
        rows.push(vec![k.to_string(), fmt12(f.theta_hat.as_slice()[0]), fmt12(e), f.converged.to_string()]);
        errors.push(e);
    }
    ctx.put_csv("fig1_errors.csv", &["replicate", "theta_hat", "error", "converged"], rows)?;
    let horizon = datasets.first().map_or(0.0, EstimationDataset::horizon);
    let gamma = gamma_example1(0.5, 1.0, 2.0, -0.75, 0.75)?;
    let var_theory = 1.0 / (gamma * horizon);
    let sd = var_theory.sqrt();
    let half = 4.0 * sd;
    let width = 2.0 * half / p.bins as f64;
    let mut counts = vec![0usize; p.bins];
    for &e in &errors {
        let b = ((e + half) / width).floor();
        if b >= 0.0 && (b as usize) < p.bins {
            counts[b as usize] += 1;
        }
    }
    let n = errors.len().max(1) as f64;
    let rows = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let lo = -half + b as f64 * width;
            let mid = lo + width / 2.0;
            let normal = (-0.5 * (mid / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            vec![fmt12(lo), fmt12(lo + width), fmt12(mid), c.to_string(), fmt12(c as f64 / (n * width)), fmt12(normal)]
        })
        .collect();
    ctx.put_csv("fig1_histogram.csv", &["bin_left", "bin_right", "center", "count", "density", "normal_density"], rows)?;
    let var_emp = if errors.len() > 1 { variance(&errors) } else { f64::NAN };
    let ad = if errors.len() > 7 { anderson_darling_normal(&errors) } else { f64::NAN };
    let summary = json!({
        "replications": errors.len(),
        "horizon": horizon,
        "theta_true": theta_star,
        "gamma": gamma,
        "mean_error": mean(&errors),
        "variance_empirical": var_emp,
        "variance_theoretical": var_theory,
        "variance_ratio": var_emp / var_theory,
        "anderson_darling": ad,
        "ad_critical_1pct": AD_CRITICAL_1PCT,
        "normality_rejected_1pct": ad > AD_CRITICAL_1PCT,
    });
    ctx.put_json("fig1_summary.json", &summary)
}

/// Example-2 estimates of the combined method against the Nelder-Mead baseline.
fn report_table1(p: &ReportParams, ctx: &mut Ctx) -> CliResult<()> {
    let horizon = p.horizon.expect("validated");
    let truth = Example2Params::table1();
    let names = ["alpha_0", "alpha_1", "beta_0", "beta_1", "vt0_0", "vt0_1", "vt1_0", "vt1_1", "vt2_0", "vt2_1"];
    let jobs: Vec<(u64, u64)> = (0..p.seeds.expect("validated") as u64)
        .map(|k| (ctx.sub_seed("replicate", k), ctx.sub_seed("start", k)))
        .collect();
    let runs: Vec<CliResult<(Vec<f64>, bool, Option<(Vec<f64>, bool)>)>> = jobs
        .par_iter()
        .map(|&(s, start)| {
            let data = crate::simulator::simulate_example2(&truth, horizon, s)?;
            let c = fit_combined_example2(
                &data,
                &CombinedOptions {
                    start_seed: start,
                    ..Default::default()
                },
            )?;
            let full = if p.full {
                let (f, conv, _) = fit_full_nelder_mead(&data, 2, start)?;
                Some((f.to_vec(), conv))
            } else {
                None
            };
            Ok((c.params.to_vec(), c.converged, full))
        })
        .collect();
    let mut comb = Vec::new();
    let mut full = Vec::new();
    let mut per_run = Vec::new();
    let (mut n_comb, mut n_full) = (0, 0);
    for (k, r) in runs.into_iter().enumerate() {
        let (c, cc, f) = r?;
        let mut row = vec![k.to_string(), "combined".into(), cc.to_string()];
        row.extend(c.iter().map(|&x| fmt12(x)));
        per_run.push(row);
        if cc {
            n_comb += 1;
            comb.push(c);
        }
        if let Some((f, fc)) = f {
            let mut row = vec![k.to_string(), "full".into(), fc.to_string()];
            row.extend(f.iter().map(|&x| fmt12(x)));
            per_run.push(row);
            if fc {
                n_full += 1;
                full.push(f);
            }
        }
    }
    let mut header = vec!["replicate", "method", "converged"];
    header.extend(names);
    ctx.put_csv("table1_runs.csv", &header, per_run)?;
    let col = |rows: &[Vec<f64>], j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    let stat = |xs: Vec<f64>| -> (String, String) {
        match xs.len() {
            0 => (String::new(), String::new()),
            1 => (fmt12(xs[0]), String::new()),
            _ => (fmt12(mean(&xs)), fmt12(variance(&xs).sqrt())),
        }
    };
    let tv = truth.to_vec();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let (cm, cs) = stat(col(&comb, j));
            let (fm, fs) = stat(col(&full, j));
            vec![n.to_string(), fmt12(tv[j]), cm, cs, fm, fs]
        })
        .collect();
    ctx.put_csv("table1.csv", &["parameter", "true", "combined_mean", "combined_sd", "full_mean", "full_sd"], rows)?;
    ctx.put_json(
        "table1_summary.json",
        &json!({
            "replications": jobs.len(),
            "horizon": horizon,
            "combined_converged": n_comb,
            "full_converged": if p.full { Some(n_full) } else { None },
        }),
    )
}

fn report_curve(p: &ReportParams, ctx: &mut Ctx) -> CliResult<()> {
    let loaded = load_input(
        ctx,
        &InputRef {
            input: &p.input,
            recipe: &p.recipe,
            calibration: &p.calibration,
            horizon: p.horizon,
            n_processes: p.n_processes,
        },
    )?;
    let Loaded::Lob { recipe, built, .. } = &loaded else {
        return Err(config_err("curve needs order-book input"));
    };
    let spec = built.dataset.spec();
    let theta = match &p.fit {
        Some(f) => {
            let fit: FitResult = serde_json::from_slice(&ctx.read(f)?).map_err(|e| config_err(format!("fit: {e}")))?;
            if fit.theta_hat.len() != spec.dim() || fit.theta_hat.n_covariates() != spec.n_covariates {
                return Err(config_err("fit does not match the recipe"));
            }
            fit.theta_hat
        }
        None => fit_qmle(&built.dataset, &FitOptions::default())?.theta_hat,
    };
    let axis = CurveAxis::for_recipe(recipe)?;
    let grid = p.grid.clone().unwrap_or_else(|| match axis {
        CurveAxis::Imbalance => (-20..=20).map(|k| k as f64 / 20.0).collect(),
        CurveAxis::Spread => (1..=10).map(f64::from).collect(),
        CurveAxis::Queue(..) => (1..=30).map(f64::from).collect(),
    });
    let processes: Vec<usize> = match p.process {
        Some(k) => vec![k],
        None => (1..spec.n_processes).collect(),
    };
    let mut l2 = Map::new();
    for k in processes {
        let c = probability_curve(&theta, recipe, built, &grid, k)?;
        let mut buf = Vec::new();
        write_curve_csv(&c, &mut buf)?;
        ctx.put(format!("curve_{k}.csv"), buf);
        l2.insert(k.to_string(), json!(c.mean_l2));
    }
    ctx.put_json("curve_summary.json", &json!({ "axis": axis, "mean_l2": l2, "theta": theta }))
}

/// Penalized coefficient paths over a grid of penalty levels.
fn report_fig5(p: &ReportParams, ctx: &mut Ctx) -> CliResult<()> {
    let loaded = load_input(
        ctx,
        &InputRef {
            input: &p.input,
            recipe: &p.recipe,
            calibration: &p.calibration,
            horizon: p.horizon,
            n_processes: p.n_processes,
        },
    )?;
    let dataset = loaded.dataset();
    let pp = PenalizeParams::default();
    let fits: Vec<CliResult<(f64, FitResult)>> = p
        .lambda_scales
        .par_iter()
        .map(|&s| {
            let pen = penalty_for(&pp, dataset, s, true)?;
            Ok((pen.lambda, fit_penalized(dataset, &pen, &PenalizedOptions::default())?))
        })
        .collect();
    let spec = dataset.spec();
    let mut header = vec!["lambda_scale".to_string(), "lambda".to_string()];
    header.extend((0..spec.dim()).map(|k| spec.coordinate_label(k)));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (s, f) in p.lambda_scales.iter().zip(fits) {
        let (lambda, fit) = f?;
        let mut row = vec![fmt12(*s), fmt12(lambda)];
        row.extend(fit.theta_hat.as_slice().iter().map(|&x| fmt12(x)));
        rows.push(row);
    }
    ctx.put_csv("fig5_path.csv", &header, rows)?;
    ctx.put_json("dataset.json", &loaded.summary())
}
