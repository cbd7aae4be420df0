use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use tsc_core::control::ControllerConfig;
use tsc_core::metrics::compute_ici;
use tsc_core::network::{load_roadnet, NodeIdx, RoadNetwork};
use tsc_core::oracle::{self, DatagenOptions, NeighborPolicy, RolloutSpec, Summarizer};
use tsc_core::prompting::EndpointConfig;
use tsc_core::scenario::{named_seeded, SCENARIOS};
use tsc_core::sim::flow::{load_flows, FlowSpec};
use tsc_core::sim::run::{run, EpisodeTrace, RunOptions};
use tsc_core::sim::SimConfig;

#[derive(Parser)]
#[command(
    name = "tsc",
    version,
    about = "Traffic signal control experiments on a point-queue simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write metrics.json, trace.jsonl and timing.json
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run several controller assignments on one scenario and print a CSV table
    Compare {
        #[command(flatten)]
        common: Common,
        /// Controller kinds applied to every intersection
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<Kind>,
        /// Assignment files (intersection id or "*" -> controller config); labelled by file stem
        #[arg(long = "assignment")]
        assignments: Vec<PathBuf>,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize reasoning records along an episode
    Datagen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Policy driving the episode
        #[arg(long, value_enum, default_value = "complexity-aware")]
        behavior: Kind,
        /// Rollout horizon in decisions
        #[arg(long, default_value_t = 5)]
        horizon: usize,
        /// Neighbour policy during rollouts
        #[arg(long, value_enum, default_value = "max-pressure")]
        rollout_policy: PolicyArg,
        /// Score only the neighbours' lanes, not the intersection's own
        #[arg(long)]
        exclude_self: bool,
        #[arg(long, default_value_t = 1.0)]
        sample_rate: f64,
        #[arg(long)]
        max_records: Option<usize>,
        /// Endpoint config (JSON) for LLM-written analysis text
        #[arg(long)]
        summarizer: Option<PathBuf>,
    },
    /// Keep only records whose chosen action has the best feedback score
    Refine {
        input: PathBuf,
        /// Corpus file the kept records are appended to
        #[arg(long)]
        out: PathBuf,
        /// Also write one feedback label per scored record
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Connectivity index per intersection from a trace
    Ici {
        #[arg(long)]
        roadnet: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Speed override in m/s (default: each road's speed limit)
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        window: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a roadnet, flow or corpus file
    Validate {
        #[command(subcommand)]
        what: ValidateTarget,
    },
    /// Write a built-in scenario (roadnet.json, flow.json, run.json)
    Scenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum ValidateTarget {
    Network {
        path: PathBuf,
    },
    Flow {
        path: PathBuf,
        #[arg(long)]
        roadnet: PathBuf,
    },
    Corpus {
        path: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Run config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Append every LLM request/response to this JSONL file
    #[arg(long)]
    log_llm: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    FixedTime,
    MaxPressure,
    ComplexityAware,
}

impl Kind {
    fn config(self) -> ControllerConfig {
        match self {
            Kind::FixedTime => ControllerConfig::fixed_time(),
            Kind::MaxPressure => ControllerConfig::MaxPressure,
            Kind::ComplexityAware => ControllerConfig::complexity_aware(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    MaxPressure,
    HoldCurrent,
}

fn default_duration() -> f64 {
    3600.0
}

fn default_alpha() -> f64 {
    0.5
}

fn default_window() -> usize {
    5
}

/// On-disk run configuration. Paths are relative to the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    #[serde(default)]
    roadnet: Option<PathBuf>,
    #[serde(default)]
    flow: Option<PathBuf>,
    /// Built-in scenario used when `roadnet`/`flow` are absent.
    #[serde(default)]
    scenario: Option<String>,
    /// Map or path to a map file; defaults to max-pressure everywhere.
    #[serde(default)]
    controllers: Option<Value>,
    #[serde(default = "default_duration")]
    duration_s: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_window")]
    delta_t: usize,
    /// Endpoint shared by LLM controllers that do not set their own.
    #[serde(default)]
    llm: Option<EndpointConfig>,
    #[serde(default)]
    sim: SimConfig,
}

struct Loaded {
    net: RoadNetwork,
    flows: FlowSpec,
    sim: SimConfig,
    opts: RunOptions,
    seed: u64,
    controllers: BTreeMap<NodeIdx, ControllerConfig>,
    llm: Option<EndpointConfig>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Expand an assignment map (with optional `"*"` default) to every controlled node.
fn resolve_assignment(
    net: &RoadNetwork,
    raw: &Value,
    llm: Option<&EndpointConfig>,
    log_llm: Option<&Path>,
) -> Result<BTreeMap<NodeIdx, ControllerConfig>> {
    let map = raw
        .as_object()
        .ok_or_else(|| anyhow!("controllers must be a JSON object"))?;
    let mut parsed: BTreeMap<String, ControllerConfig> = BTreeMap::new();
    for (id, v) in map {
        let mut v = v.clone();
        if v.get("kind").and_then(Value::as_str) == Some("llm") && v.get("endpoint").is_none() {
            let shared = llm.ok_or_else(|| {
                anyhow!("controller {id} is llm but the config has no llm endpoint")
            })?;
            v["endpoint"] = serde_json::to_value(shared)?;
        }
        let mut c: ControllerConfig =
            serde_json::from_value(v).with_context(|| format!("controller for {id}"))?;
        if let (ControllerConfig::Llm { endpoint, .. }, Some(p)) = (&mut c, log_llm) {
            endpoint.log_path = Some(p.to_path_buf());
        }
        if id != "*" {
            net.node_idx(id)
                .with_context(|| format!("controllers: unknown intersection {id}"))?;
        }
        parsed.insert(id.clone(), c);
    }
    let mut out = BTreeMap::new();
    for i in net.controlled() {
        let id = &net.node(i).id;
        let c = parsed
            .get(id)
            .or_else(|| parsed.get("*"))
            .ok_or_else(|| anyhow!("no controller for {id} and no \"*\" default"))?;
        out.insert(i, c.clone());
    }
    Ok(out)
}

fn load(common: &Common) -> Result<Loaded> {
    let base = common.config.parent().unwrap_or(Path::new("."));
    let raw = read_json(&common.config)?;
    let file: RunFile = serde_json::from_value(raw)
        .with_context(|| format!("run config {}", common.config.display()))?;
    let seed = common.seed.unwrap_or(file.seed);
    let (net, flows) = match (&file.roadnet, &file.flow, &file.scenario) {
        (Some(r), Some(f), _) => {
            let net =
                load_roadnet(base.join(r)).with_context(|| format!("roadnet {}", r.display()))?;
            let flows =
                load_flows(base.join(f), &net).with_context(|| format!("flow {}", f.display()))?;
            (net, flows)
        }
        (None, None, Some(name)) => {
            let sc = named_seeded(name, seed).ok_or_else(|| anyhow!("unknown scenario {name}"))?;
            (sc.net, sc.flows)
        }
        _ => bail!("run config needs both roadnet and flow, or a scenario name"),
    };
    file.sim.validate()?;
    let controllers_raw = match &file.controllers {
        None => serde_json::json!({"*": {"kind": "max_pressure"}}),
        Some(Value::String(p)) => read_json(&base.join(p))?,
        Some(v) => v.clone(),
    };
    let controllers = resolve_assignment(
        &net,
        &controllers_raw,
        file.llm.as_ref(),
        common.log_llm.as_deref(),
    )?;
    if !(0.0..=1.0).contains(&file.alpha) {
        bail!("alpha must lie in [0, 1]");
    }
    Ok(Loaded {
        net,
        flows,
        sim: file.sim,
        opts: RunOptions {
            duration: file.duration_s,
            alpha: file.alpha,
            window: file.delta_t,
        },
        seed,
        controllers,
        llm: file.llm,
    })
}

fn cmd_run(common: &Common, out: &Path) -> Result<()> {
    let l = load(common)?;
    std::fs::create_dir_all(out)?;
    let (metrics, trace, timing) = run(&l.net, &l.sim, &l.flows, &l.controllers, l.opts)?;
    write_pretty(&out.join("metrics.json"), &metrics)?;
    trace.write_jsonl(&out.join("trace.jsonl"))?;
    write_pretty(&out.join("timing.json"), &timing)?;
    log::info!(
        "finished {} of {} vehicles, ATT {:?} s, AWT {:?} s",
        metrics.vehicles_finished,
        metrics.vehicles_entered,
        metrics.att,
        metrics.awt
    );
    Ok(())
}

fn kind_label(k: Kind) -> &'static str {
    k.config().label()
}

fn cmd_compare(
    common: &Common,
    kinds: &[Kind],
    files: &[PathBuf],
    out: Option<&Path>,
) -> Result<()> {
    let l = load(common)?;
    let mut rows: Vec<(String, BTreeMap<NodeIdx, ControllerConfig>)> = Vec::new();
    for k in kinds {
        let all = l.net.controlled().map(|i| (i, k.config())).collect();
        rows.push((kind_label(*k).to_string(), all));
    }
    for f in files {
        let label = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("bad assignment path {}", f.display()))?;
        let raw = read_json(f)?;
        rows.push((
            label,
            resolve_assignment(&l.net, &raw, l.llm.as_ref(), common.log_llm.as_deref())?,
        ));
    }
    if rows.is_empty() {
        bail!("nothing to compare: pass --kinds and/or --assignment");
    }
    let mut seen = std::collections::BTreeSet::new();
    for (label, _) in &rows {
        if !seen.insert(label) {
            bail!("duplicate controller label {label}");
        }
    }
    let results: Vec<_> = rows
        .par_iter()
        .map(|(label, assign)| {
            run(&l.net, &l.sim, &l.flows, assign, l.opts).map(|r| (label.clone(), r))
        })
        .collect::<Result<_, _>>()?;
    let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.2}"));
    let mut csv = String::from("controller,att_s,awt_s,vehicles_entered,vehicles_finished,decisions,fallbacks,inference_ms_total,inference_ms_mean\n");
    for (label, (m, _, timing)) in &results {
        let total: f64 = timing.controllers.values().map(|c| c.total_ms).sum();
        let n: u64 = timing.controllers.values().map(|c| c.decisions).sum();
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{},{},{:.3},{:.4}",
            fmt(m.att),
            fmt(m.awt),
            m.vehicles_entered,
            m.vehicles_finished,
            m.decisions,
            m.fallbacks,
            total,
            if n > 0 { total / n as f64 } else { 0.0 }
        );
    }
    match out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_datagen(
    common: &Common,
    out: &Path,
    behavior: Kind,
    horizon: usize,
    policy: PolicyArg,
    exclude_self: bool,
    sample_rate: f64,
    max_records: Option<usize>,
    summarizer: Option<&Path>,
) -> Result<()> {
    let l = load(common)?;
    if horizon == 0 {
        bail!("horizon must be at least 1");
    }
    if !(0.0..=1.0).contains(&sample_rate) {
        bail!("sample-rate must lie in [0, 1]");
    }
    let summarizer = match summarizer {
        None => Summarizer::RuleBased,
        Some(p) => {
            let mut endpoint: EndpointConfig = serde_json::from_value(read_json(p)?)
                .with_context(|| format!("endpoint config {}", p.display()))?;
            endpoint.validate()?;
            if let Some(log) = &common.log_llm {
                endpoint.log_path = Some(log.clone());
            }
            Summarizer::Llm { endpoint }
        }
    };
    let opts = DatagenOptions {
        run: l.opts,
        rollout: RolloutSpec {
            horizon,
            policy: match policy {
                PolicyArg::MaxPressure => NeighborPolicy::MaxPressure,
                PolicyArg::HoldCurrent => NeighborPolicy::HoldCurrent,
            },
            include_self: !exclude_self,
        },
        behavior: behavior.config(),
        summarizer,
        sample_rate,
        max_records,
        seed: l.seed,
        ..Default::default()
    };
    let (records, summary) = oracle::datagen(&l.net, &l.sim, &l.flows, &opts)?;
    std::fs::create_dir_all(out)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&oracle::to_line(r));
        text.push('\n');
    }
    std::fs::write(out.join("records.jsonl"), text)?;
    write_pretty(&out.join("summary.json"), &summary)?;
    log::info!("wrote {} records", summary.records);
    Ok(())
}

fn cmd_refine(input: &Path, out: &Path, labels: Option<&Path>) -> Result<()> {
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut lines = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines.push(
            serde_json::from_str::<Value>(line)
                .with_context(|| format!("{}:{}", input.display(), k + 1))?,
        );
    }
    let (kept, feedback, stats) = oracle::refine_filter(&lines);
    let mut appended = String::new();
    for v in &kept {
        appended.push_str(&serde_json::to_string(v)?);
        appended.push('\n');
    }
    use std::io::Write as _;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .with_context(|| format!("opening {}", out.display()))?;
    f.write_all(appended.as_bytes())?;
    if let Some(p) = labels {
        let mut t = String::new();
        for l in &feedback {
            t.push_str(&serde_json::to_string(l)?);
            t.push('\n');
        }
        std::fs::write(p, t)?;
    }
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn cmd_ici(
    roadnet: &Path,
    trace: &Path,
    speed: Option<f64>,
    window: f64,
    out: Option<&Path>,
) -> Result<()> {
    if window.is_nan() || window <= 0.0 {
        bail!("window must be positive");
    }
    let net = load_roadnet(roadnet)?;
    let trace = EpisodeTrace::read_jsonl(trace)?;
    let report = compute_ici(&net, &trace, speed, window);
    match out {
        Some(p) => write_pretty(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_validate(what: &ValidateTarget) -> Result<()> {
    match what {
        ValidateTarget::Network { path } => {
            let net = load_roadnet(path)?;
            println!(
                "ok: {} intersections ({} controlled), {} roads, {} lanes",
                net.intersections().len(),
                net.controlled().count(),
                net.roads().len(),
                net.lanes().len()
            );
        }
        ValidateTarget::Flow { path, roadnet } => {
            let net = load_roadnet(roadnet)?;
            let flows = load_flows(path, &net)?;
            println!(
                "ok: {} flows, {} vehicles",
                flows.entries.len(),
                flows.vehicle_count()
            );
        }
        ValidateTarget::Corpus { path } => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let issues = oracle::validate_corpus(&text);
            if !issues.is_empty() {
                for i in &issues {
                    eprintln!("{}:{}: {}", path.display(), i.line, i.message);
                }
                bail!("{} problem(s) in {}", issues.len(), path.display());
            }
            let n = text.lines().filter(|l| !l.trim().is_empty()).count();
            println!("ok: {n} records");
        }
    }
    Ok(())
}

impl Cli {
    pub fn execute(self) -> Result<()> {
        match self.command {
            Command::Run { common, out } => cmd_run(&common, &out),
            Command::Compare {
                common,
                kinds,
                assignments,
                out,
            } => cmd_compare(&common, &kinds, &assignments, out.as_deref()),
            Command::Datagen {
                common,
                out,
                behavior,
                horizon,
                rollout_policy,
                exclude_self,
                sample_rate,
                max_records,
                summarizer,
            } => cmd_datagen(
                &common,
                &out,
                behavior,
                horizon,
                rollout_policy,
                exclude_self,
                sample_rate,
                max_records,
                summarizer.as_deref(),
            ),
            Command::Refine { input, out, labels } => cmd_refine(&input, &out, labels.as_deref()),
            Command::Ici {
                roadnet,
                trace,
                speed,
                window,
                out,
            } => cmd_ici(&roadnet, &trace, speed, window, out.as_deref()),
            Command::Validate { what } => cmd_validate(&what),
            Command::Scenario { name, out, seed } => {
                let sc = named_seeded(&name, seed.unwrap_or(tsc_core::scenario::DEFAULT_SEED))
                    .ok_or_else(|| anyhow!("unknown scenario {name}"))?;
                sc.write_to(&out)?;
                println!("wrote {} to {}", sc.name, out.display());
                Ok(())
            }
        }
    }
}
