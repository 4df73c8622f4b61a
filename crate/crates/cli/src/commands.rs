use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowmine::causality::to_dot;
use flowmine::evaluator::{compare_flows, evaluate, model_size, EvalReport};
use flowmine::fixtures::{benchmark, case_study, BenchmarkSpec, Fixture};
use flowmine::format::{parse_catalog, parse_flows, parse_traces, write_catalog, write_flows, write_traces};
use flowmine::miner::{as_graph, mine_with, to_flowspec, MineOptions};
use flowmine::seqmodel::{self, epochs_for_steps, train_with_log, training_windows, LoadedScorer, ModelConfig, NGramScorer};
use flowmine::slice::Slicing;
use flowmine::synthgen::{generate, generate_negative, GenConfig};
use flowmine::{build_graph, Catalog, Error, FlowSpec, Trace};
use log::{info, warn};

use crate::args::*;
use crate::failure::Failure;
use crate::kv::{self, KvFile};
use crate::manifest::{self, RunManifest};
use crate::report::{render_kv, render_table, Row};

pub const PRESETS: [&str; 5] = ["case-study", "small-10", "small-20", "large-10", "large-20"];
const CASE_STUDY_RUNS: usize = 600;
const CASE_STUDY_CORES: usize = 4;
/// Notes per trace written to an evaluation report; the rest are only counted.
const MAX_NOTES: usize = 20;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub seed: u64,
    pub manifest_dir: Option<PathBuf>,
}

impl Context {
    fn write_manifest(&self, m: &RunManifest, artifact_dir: &Path) -> Result<(), Failure> {
        let dir = self.manifest_dir.as_deref().unwrap_or(artifact_dir);
        m.write(dir)?;
        Ok(())
    }
}

pub fn run(ctx: &Context, command: &Command) -> Result<(), Failure> {
    match command {
        Command::Gen(a) => gen(ctx, a),
        Command::Graph(a) => graph(ctx, a),
        Command::Train(a) => train(ctx, a).map(|_| ()),
        Command::Mine(a) => mine(ctx, a).map(|_| ()),
        Command::Eval(a) => eval(ctx, a),
        Command::Report(a) => report(ctx, a),
        Command::Pipeline(a) => pipeline(ctx, a),
    }
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn load_catalog(path: &Path) -> Result<Catalog, Failure> {
    parse_catalog(path).map_err(|e| in_file(path, e))
}

fn load_traces(path: &Path, catalog: &Catalog) -> Result<Vec<Trace>, Failure> {
    let set = parse_traces(path, catalog).map_err(|e| in_file(path, e))?;
    if set.skipped_empty > 0 {
        warn!("{}: skipped {} empty line(s)", path.display(), set.skipped_empty);
    }
    if set.traces.is_empty() {
        return Err(Failure::data(format!("{}: no traces", path.display())));
    }
    Ok(set.traces)
}

/// Names the file in errors that don't already carry a path.
fn in_file(path: &Path, e: Error) -> Failure {
    let mut f = Failure::from(e);
    let shown = path.display().to_string();
    if !f.message.contains(&shown) {
        f.message = format!("{shown}: {}", f.message);
    }
    f
}

/// `.flow` files of a directory (sorted) or the listed files, parsed and concatenated.
fn load_flows(paths: &[PathBuf]) -> Result<Vec<FlowSpec>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "flow"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(Failure::data(format!("{}: no .flow files", p.display())));
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut flows = Vec::new();
    for f in &files {
        flows.extend(parse_flows(f).map_err(|e| in_file(f, e))?);
    }
    Ok(flows)
}

fn slicing(a: &SliceArgs) -> Slicing {
    let mut s = Slicing::new(a.predicate, a.slicing);
    if let Some(w) = a.slice_window {
        s.window = w;
    }
    s
}

fn record_slicing(m: &mut RunManifest, s: &Slicing) {
    m.set("predicate", s.predicate).set("slicing", s.mode).set("slice_window", s.window);
}

/// A built-in scenario: its flows, catalog, default shape, and the trace it
/// ships with (benchmarks generate theirs with a per-benchmark seed).
pub struct Preset {
    pub fixture: Fixture,
    pub cores: usize,
    pub runs: usize,
    pub trace: Option<Trace>,
}

pub fn preset(name: &str, seed: u64) -> Result<Preset, Failure> {
    if name == "case-study" {
        return Ok(Preset {
            fixture: case_study(),
            cores: CASE_STUDY_CORES,
            runs: CASE_STUDY_RUNS,
            trace: None,
        });
    }
    let spec: BenchmarkSpec = BenchmarkSpec::standard(seed)
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Failure::usage(format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", "))))?;
    let b = benchmark(&spec)?;
    let starts: Vec<_> = b.fixture.flows.iter().map(|f| f.start).collect();
    let runs = b.trace.events.iter().filter(|e| starts.contains(e)).count();
    Ok(Preset {
        fixture: b.fixture,
        cores: spec.cores,
        runs,
        trace: Some(b.trace),
    })
}

pub fn gen(ctx: &Context, a: &GenArgs) -> Result<(), Failure> {
    let t0 = Instant::now();
    let mut m = RunManifest::new("gen", ctx.seed);
    let mut shipped = None;
    let (flows, catalog, cores, runs, trace_path, out_dir) = match &a.preset {
        Some(name) => {
            let p = preset(name, ctx.seed)?;
            m.set("preset", name);
            std::fs::create_dir_all(&a.output).map_err(|e| io(&a.output, e))?;
            if a.cores.is_none() && a.runs.is_none() {
                shipped = p.trace;
            }
            (
                p.fixture.flows,
                Some(p.fixture.catalog),
                a.cores.unwrap_or(p.cores),
                a.runs.unwrap_or(p.runs),
                a.output.join("trace.trc"),
                a.output.clone(),
            )
        }
        None => {
            for f in &a.flows {
                m.input(f)?;
            }
            let cores = a.cores.ok_or_else(|| Failure::usage("--cores is required with --flows"))?;
            let runs = a.runs.ok_or_else(|| Failure::usage("--runs is required with --flows"))?;
            (load_flows(&a.flows)?, None, cores, runs, a.output.clone(), manifest::artifact_dir(&a.output, false))
        }
    };
    m.set("cores", cores).set("runs", runs);
    let config = GenConfig::new(flows.clone(), cores, runs, ctx.seed);
    let trace = match a.negative {
        Some(rate) => {
            m.set("negative", rate);
            generate_negative(&config, rate)?
        }
        None => match shipped {
            Some(t) => t,
            None => generate(&config)?,
        },
    };
    create_parent(&trace_path)?;
    write_traces(&trace_path, std::slice::from_ref(&trace))?;
    if let Some(catalog) = catalog {
        write_catalog(out_dir.join("catalog.cat"), &catalog)?;
        write_flows(out_dir.join("truth.flow"), &flows)?;
    }
    info!("wrote {} events to {}", trace.events.len(), trace_path.display());
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &out_dir)
}

pub fn graph(ctx: &Context, a: &GraphArgs) -> Result<(), Failure> {
    let t0 = Instant::now();
    let catalog = load_catalog(&a.catalog)?;
    let g = build_graph(&catalog, a.predicate);
    write_text(&a.output, &to_dot(&g, &catalog, "causality"))?;
    let mut m = RunManifest::new("graph", ctx.seed);
    m.set("predicate", a.predicate).input(&a.catalog)?;
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &manifest::artifact_dir(&a.output, false))
}

/// Trains and saves a scorer; returns the wall-clock seconds spent.
pub fn train(ctx: &Context, a: &TrainArgs) -> Result<f64, Failure> {
    let t0 = Instant::now();
    let catalog = load_catalog(&a.catalog)?;
    let traces = load_traces(&a.traces, &catalog)?;
    let slicing = slicing(&a.slice);
    let mut m = RunManifest::new("train", ctx.seed);
    m.input(&a.traces)?.input(&a.catalog)?;
    record_slicing(&mut m, &slicing);
    let scorer: LoadedScorer = match a.ngram {
        Some(order) => {
            m.set("scorer", "ngram").set("order", order).set("smoothing", a.smoothing);
            NGramScorer::fit_sliced(&catalog, &slicing, order, a.smoothing, &traces)?.into()
        }
        None => {
            let mut config = ModelConfig {
                layers: a.layers,
                heads: a.heads,
                dim: a.dim,
                window: a.window,
                mask_prob: a.mask_prob,
                epochs: a.epochs,
                learning_rate: a.lr,
                seed: ctx.seed,
                batch_size: a.batch_size,
                stride: a.stride,
            };
            config.validate()?;
            if a.min_steps > 0 {
                let windows = training_windows(&traces, &catalog, &slicing, &config).len();
                config.epochs = epochs_for_steps(&config, windows, a.min_steps);
            }
            m.set("scorer", "attention")
                .set("layers", config.layers)
                .set("heads", config.heads)
                .set("dim", config.dim)
                .set("window", config.window)
                .set("mask_prob", config.mask_prob)
                .set("epochs", config.epochs)
                .set("min_steps", a.min_steps)
                .set("lr", config.learning_rate)
                .set("batch_size", config.batch_size)
                .set("stride", config.stride);
            let (model, rep) = train_with_log::<f64>(&traces, &catalog, &slicing, &config, |epoch, loss| {
                info!("epoch {epoch}: loss {loss:.4}")
            })?;
            m.set("windows", rep.windows).set("steps", rep.steps);
            if let Some(l) = rep.final_loss() {
                m.set("final_loss", format!("{l:.6}"));
            }
            model.into()
        }
    };
    create_parent(&a.output)?;
    seqmodel::save(&a.output, &scorer)?;
    let secs = t0.elapsed().as_secs_f64();
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &manifest::artifact_dir(&a.output, false))?;
    Ok(secs)
}

/// Mines flows into a directory; returns the wall-clock seconds spent.
pub fn mine(ctx: &Context, a: &MineArgs) -> Result<f64, Failure> {
    let t0 = Instant::now();
    if !(0.0..=1.0).contains(&a.theta) {
        return Err(Failure::usage(format!("theta {} outside [0, 1]", a.theta)));
    }
    let catalog = load_catalog(&a.catalog)?;
    let traces = load_traces(&a.traces, &catalog)?;
    let scorer = seqmodel::load(&a.model).map_err(|e| in_file(&a.model, e))?;
    let slicing = slicing(&a.slice);
    let g = build_graph(&catalog, slicing.predicate);
    let opts = MineOptions {
        theta: a.theta,
        samples: a.samples,
        slicing,
        min_support: a.min_support,
    };
    let result = mine_with(&g, &scorer, &traces, &catalog, &opts)?;
    std::fs::create_dir_all(&a.output).map_err(|e| io(&a.output, e))?;
    for f in &result.flows {
        let name = f.default_name();
        let spec = to_flowspec(f, &name)?;
        write_flows(a.output.join(format!("{name}.flow")), std::slice::from_ref(&spec))?;
        write_text(&a.output.join(format!("{name}.dot")), &to_dot(&as_graph(f, &g), &catalog, &name))?;
    }
    write_text(&a.output.join("removed.txt"), &result.summary())?;
    for (s, e, err) in &result.failures {
        warn!("pair msg_{s} -> msg_{e} not mined: {err}");
    }
    info!("mined {} flow(s), {} pair(s) failed", result.flows.len(), result.failures.len());
    let secs = t0.elapsed().as_secs_f64();
    let mut m = RunManifest::new("mine", ctx.seed);
    m.input(&a.model)?.input(&a.catalog)?.input(&a.traces)?;
    m.set("theta", a.theta)
        .set("samples", a.samples)
        .set("min_support", a.min_support)
        .set("scorer", scorer.kind())
        .set("flows", result.flows.len())
        .set("failed_pairs", result.failures.len());
    record_slicing(&mut m, &slicing);
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &a.output)?;
    Ok(secs)
}

/// Runtime recorded in the manifest next to the flows, if there is exactly one source.
fn manifest_runtime(paths: &[PathBuf]) -> Option<f64> {
    let [p] = paths else { return None };
    let dir = if p.is_dir() { p.clone() } else { p.parent()?.to_path_buf() };
    let text = std::fs::read_to_string(dir.join(manifest::FILE_NAME)).ok()?;
    KvFile::parse(&text, "manifest").ok()?.parsed("runtime_seconds").ok()?
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<(), Failure> {
    let t0 = Instant::now();
    let flows = load_flows(&a.flows)?;
    let catalog = load_catalog(&a.catalog)?;
    let traces = load_traces(&a.traces, &catalog)?;
    let reports: Vec<EvalReport> = traces.iter().map(|t| evaluate(&flows, t, a.policy, a.budget)).collect();
    let merged = EvalReport::merge(&reports).expect("at least one trace");
    let name = a.name.clone().unwrap_or_else(|| {
        a.output.file_stem().map_or_else(|| "flows".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut row = Row {
        name,
        ratio: (merged.total_events > 0).then_some(merged.acceptance_rate),
        ratio_note: (merged.total_events == 0).then(|| "no events".to_string()),
        lower_bound: merged.lower_bound,
        size: model_size(&flows),
        rt: a.rt.or_else(|| manifest_runtime(&a.flows)),
        ..Row::default()
    };
    if let Some(truth_path) = &a.truth {
        let truth = parse_flows(truth_path).map_err(|e| in_file(truth_path, e))?;
        row = row.with_comparison(&compare_flows(&flows, &truth));
    }

    let mut out = row.to_kv("");
    let mut put = |k: String, v: String| out += &kv::render([(k.as_str(), v)]);
    put("policy".into(), a.policy.to_string());
    put("budget".into(), a.budget.to_string());
    put("traces".into(), reports.len().to_string());
    put("total_events".into(), merged.total_events.to_string());
    put("accepted".into(), merged.accepted.to_string());
    put("rejected".into(), merged.rejected.to_string());
    put("incomplete_instances".into(), merged.incomplete_instances.to_string());
    for (i, r) in reports.iter().enumerate() {
        put(format!("trace.{i}.rate"), crate::report::num(r.acceptance_rate));
        put(format!("trace.{i}.events"), r.total_events.to_string());
        put(format!("trace.{i}.incomplete"), r.incomplete_instances.to_string());
        put(format!("trace.{i}.lower_bound"), r.lower_bound.to_string());
        put(format!("trace.{i}.nondet_events"), r.notes.len().to_string());
        for (j, n) in r.notes.iter().take(MAX_NOTES).enumerate() {
            let cands: Vec<String> = n.candidates.iter().map(ToString::to_string).collect();
            put(
                format!("trace.{i}.note.{j}"),
                format!("event {} could go to instances {}", n.event_index, cands.join(",")),
            );
        }
    }
    write_text(&a.output, &out)?;

    let mut m = RunManifest::new("eval", ctx.seed);
    for f in &a.flows {
        m.input(f)?;
    }
    m.input(&a.catalog)?.input(&a.traces)?;
    if let Some(t) = &a.truth {
        m.input(t)?;
    }
    m.set("policy", a.policy).set("budget", a.budget).set("allow_lower_bound", a.allow_lower_bound);
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &manifest::artifact_dir(&a.output, false))?;

    if merged.lower_bound && !a.allow_lower_bound {
        return Err(Failure::budget(format!(
            "search budget of {} nodes ran out; acceptance rate {} is only a lower bound (report written to {})",
            a.budget,
            crate::report::num(merged.acceptance_rate),
            a.output.display()
        )));
    }
    Ok(())
}

pub fn report(ctx: &Context, a: &ReportArgs) -> Result<(), Failure> {
    let t0 = Instant::now();
    let mut rows = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
        let origin = p.display().to_string();
        rows.push(Row::from_kv(&KvFile::parse(&text, &origin)?).map_err(|f| Failure::data(format!("{origin}: {f}")))?);
    }
    let table = render_table(&rows);
    let Some(out) = &a.output else {
        print!("{table}");
        return Ok(());
    };
    write_text(out, &table)?;
    write_text(&out.with_extension("kv"), &render_kv(&rows))?;
    let mut m = RunManifest::new("report", ctx.seed);
    for p in &a.inputs {
        m.input(p)?;
    }
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &manifest::artifact_dir(out, false))
}

/// Keys of one config section; every key must be consumed.
struct Section<'a> {
    name: &'static str,
    entries: BTreeMap<&'a str, &'a str>,
    base: PathBuf,
}

impl<'a> Section<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|v| v.parse::<T>().map_err(|e| Failure::usage(format!("bad value `{v}` for `{key}`: {e}"))))
            .transpose()
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|v| self.base.join(v))
    }

    fn paths(&mut self, key: &str) -> Option<Vec<PathBuf>> {
        self.take(key).map(|v| v.split(',').map(|p| self.base.join(p.trim())).collect())
    }

    fn finish(self) -> Result<(), Failure> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Failure::usage(format!("unknown key `{k}` in [{}]", self.name))),
        }
    }
}

const STAGES: [&str; 5] = ["gen", "train", "mine", "eval", "report"];

fn required<T>(v: Option<T>, stage: &str, what: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::usage(format!("`{what}` is not set and no earlier stage produces it")).in_stage(stage))
}

/// Runs the configured stages in order. Each stage writes into `out_dir/<stage>/`
/// and feeds the next; any stage input can be overridden in its section.
pub fn pipeline(ctx: &Context, a: &PipelineArgs) -> Result<(), Failure> {
    let t0 = Instant::now();
    let text = std::fs::read_to_string(&a.config).map_err(|e| io(&a.config, e))?;
    let cfg = KvFile::parse(&text, &a.config.display().to_string())?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    for s in &cfg.sections {
        if !STAGES.contains(&s.as_str()) {
            return Err(Failure::usage(format!("unknown section [{s}] (stages are {})", STAGES.join(", "))));
        }
    }
    let mut top = Section {
        name: "top level",
        entries: cfg.entries.iter().filter(|(k, _)| !k.contains('.')).map(|(k, v)| (k.as_str(), v.as_str())).collect(),
        base: base.clone(),
    };
    let out_dir = top.path("out_dir").ok_or_else(|| Failure::usage("config needs `out_dir`"))?;
    let ctx = Context {
        seed: top.parse("seed")?.unwrap_or(ctx.seed),
        manifest_dir: ctx.manifest_dir.clone(),
    };
    top.finish()?;
    let section = |name: &'static str| Section {
        name,
        entries: cfg.section(name),
        base: base.clone(),
    };
    let has = |name: &str| cfg.sections.iter().any(|s| s == name);

    let mut catalog: Option<PathBuf> = None;
    let mut traces: Option<PathBuf> = None;
    let mut truth: Option<PathBuf> = None;
    let mut model: Option<PathBuf> = None;
    let mut flows: Option<PathBuf> = None;
    let mut report_file: Option<PathBuf> = None;
    let mut produce_secs = 0.0;

    if has("gen") {
        let stage = "gen";
        let dir = out_dir.join(stage);
        let run = || -> Result<(), Failure> {
            let mut s = section(stage);
            let preset = s.take("preset").map(str::to_string);
            let flow_files = s.paths("flows");
            let cat = s.path("catalog");
            let args = GenArgs {
                flows: flow_files.clone().unwrap_or_default(),
                preset: preset.clone(),
                cores: s.parse("cores")?,
                runs: s.parse("runs")?,
                negative: s.parse("negative")?,
                output: if preset.is_some() { dir.clone() } else { dir.join("trace.trc") },
            };
            s.finish()?;
            match (&preset, &flow_files) {
                (Some(_), Some(_)) => return Err(Failure::usage("set either `preset` or `flows`, not both")),
                (None, None) => return Err(Failure::usage("set `preset` or `flows`")),
                (None, Some(_)) if cat.is_none() => return Err(Failure::usage("`flows` needs a `catalog`")),
                _ => {}
            }
            gen(&ctx, &args)?;
            if let Some(c) = cat {
                let parsed = load_catalog(&c)?;
                write_catalog(dir.join("catalog.cat"), &parsed)?;
                write_flows(dir.join("truth.flow"), &load_flows(&args.flows)?)?;
            }
            Ok(())
        };
        run().map_err(|f| f.in_stage(stage))?;
        catalog = Some(dir.join("catalog.cat"));
        traces = Some(dir.join("trace.trc"));
        truth = Some(dir.join("truth.flow"));
    }

    if has("train") {
        let stage = "train";
        let mut s = section(stage);
        let d = ModelConfig::default();
        let run = |s: &mut Section, catalog: &Option<PathBuf>, traces: &Option<PathBuf>| -> Result<(PathBuf, PathBuf, PathBuf, f64), Failure> {
            let cat = s.path("catalog").or_else(|| catalog.clone());
            let trc = s.path("traces").or_else(|| traces.clone());
            let args = TrainArgs {
                traces: required(trc, stage, "traces")?,
                catalog: required(cat, stage, "catalog")?,
                layers: s.parse("layers")?.unwrap_or(d.layers),
                dim: s.parse("dim")?.unwrap_or(d.dim),
                heads: s.parse("heads")?.unwrap_or(d.heads),
                window: s.parse("window")?.unwrap_or(d.window),
                mask_prob: s.parse("mask_prob")?.unwrap_or(d.mask_prob),
                epochs: s.parse("epochs")?.unwrap_or(d.epochs),
                min_steps: s.parse("min_steps")?.unwrap_or(0),
                lr: s.parse("lr")?.unwrap_or(d.learning_rate),
                batch_size: s.parse("batch_size")?.unwrap_or(d.batch_size),
                stride: s.parse("stride")?.unwrap_or(d.stride),
                ngram: s.parse("ngram")?,
                smoothing: s.parse("smoothing")?.unwrap_or(0.1),
                slice: slice_section(s)?,
                output: out_dir.join(stage).join("model.bin"),
            };
            let secs = train(&ctx, &args)?;
            Ok((args.output, args.catalog, args.traces, secs))
        };
        let (m, c, t, secs) = run(&mut s, &catalog, &traces).map_err(|f| f.in_stage(stage))?;
        s.finish().map_err(|f| f.in_stage(stage))?;
        model = Some(m);
        catalog = Some(c);
        traces = Some(t);
        produce_secs += secs;
    }

    if has("mine") {
        let stage = "mine";
        let mut s = section(stage);
        let run = |s: &mut Section| -> Result<(PathBuf, f64), Failure> {
            let args = MineArgs {
                model: required(s.path("model").or_else(|| model.clone()), stage, "model")?,
                catalog: required(s.path("catalog").or_else(|| catalog.clone()), stage, "catalog")?,
                traces: required(s.path("traces").or_else(|| traces.clone()), stage, "traces")?,
                theta: s.parse("theta")?.unwrap_or(flowmine::miner::DEFAULT_THETA),
                samples: s.parse("samples")?.unwrap_or(seqmodel::DEFAULT_SAMPLES),
                min_support: s.parse("min_support")?.unwrap_or(flowmine::miner::DEFAULT_MIN_SUPPORT),
                slice: slice_section(s)?,
                output: out_dir.join(stage),
            };
            let secs = mine(&ctx, &args)?;
            Ok((args.output, secs))
        };
        let (f, secs) = run(&mut s).map_err(|f| f.in_stage(stage))?;
        s.finish().map_err(|f| f.in_stage(stage))?;
        flows = Some(f);
        produce_secs += secs;
    }

    if has("eval") {
        let stage = "eval";
        let mut s = section(stage);
        let run = |s: &mut Section| -> Result<PathBuf, Failure> {
            let name = s.take("name").map(str::to_string);
            let args = EvalArgs {
                flows: required(s.paths("flows").or_else(|| flows.clone().map(|f| vec![f])), stage, "flows")?,
                catalog: required(s.path("catalog").or_else(|| catalog.clone()), stage, "catalog")?,
                traces: required(s.path("traces").or_else(|| traces.clone()), stage, "traces")?,
                policy: s.parse("policy")?.unwrap_or(flowmine::Policy::GreedyOldest),
                budget: s.parse("budget")?.unwrap_or(flowmine::evaluator::DEFAULT_BUDGET),
                truth: s.path("truth").or_else(|| truth.clone().filter(|t| t.exists())),
                name: name.or_else(|| Some(out_dir.file_name()?.to_string_lossy().into_owned())),
                rt: s.parse("rt")?.or((produce_secs > 0.0).then_some(produce_secs)),
                allow_lower_bound: s.parse("allow_lower_bound")?.unwrap_or(false),
                output: out_dir.join(stage).join("report.txt"),
            };
            eval(&ctx, &args)?;
            Ok(args.output)
        };
        let r = run(&mut s).map_err(|f| f.in_stage(stage))?;
        s.finish().map_err(|f| f.in_stage(stage))?;
        report_file = Some(r);
    }

    if has("report") {
        let stage = "report";
        let mut s = section(stage);
        let inputs = s.paths("inputs").or_else(|| report_file.clone().map(|r| vec![r]));
        let run = || -> Result<(), Failure> {
            let args = ReportArgs {
                inputs: required(inputs, stage, "inputs")?,
                output: Some(out_dir.join(stage).join("summary.txt")),
            };
            report(&ctx, &args)
        };
        run().map_err(|f| f.in_stage(stage))?;
        s.finish().map_err(|f| f.in_stage(stage))?;
    }

    let mut m = RunManifest::new("pipeline", ctx.seed);
    m.input(&a.config)?;
    m.set("stages", cfg.sections.join(","));
    m.finish(t0.elapsed());
    ctx.write_manifest(&m, &out_dir)
}

fn slice_section(s: &mut Section) -> Result<SliceArgs, Failure> {
    Ok(SliceArgs {
        predicate: s.parse("predicate")?.unwrap_or_default(),
        slicing: s.parse("slicing")?.unwrap_or_default(),
        slice_window: s.parse("slice_window")?,
    })
}
