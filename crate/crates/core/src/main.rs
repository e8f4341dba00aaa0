//! `reverie`: run the pipeline stages from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reverie_agent::autodiff::ParamStore;
use reverie_agent::config::{Profile, SEED_ENV};
use reverie_agent::eval::{comparison_table, compute_metrics, evaluate_agent, trace_report, traces_from_str, traces_to_string, AblationKind, Experiment};
use reverie_agent::pipeline::{build_agent, load_agent, pretrain_object, pretrain_scene, save_agent};
use reverie_agent::trainer::train_agent;
use reverie_agent::world::{Dataset, Vocab};
use reverie_agent::Error;

#[derive(Parser)]
#[command(name = "reverie", version, about = "Scene-grounded remote-object navigation on procedural worlds")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Profile name (toy, full) or path to a TOML profile.
    #[arg(long, global = true, default_value = "toy")]
    profile: String,
    /// Seed for every stage; defaults to $REVERIE_SEED, then the profile.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a profile key, e.g. `--set train.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate worlds and episode splits.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the scene grounding scorer.
    PretrainScene {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the object grounding scorer (image-based, then viewpoint-based).
    PretrainObject {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the navigation policy.
    TrainAgent {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by pretrain-scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Directory written by pretrain-object.
        #[arg(long)]
        object: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained agent and write metrics and traces.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by train-agent.
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the arms of one or all ablation axes.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// encoder, pointer, policy, memory, fusion or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Success and RGS by shortest-path length bucket.
    TraceReport {
        /// Trace files written by evaluate or ablate.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Interior bucket boundaries in meters, comma separated.
        #[arg(long, value_delimiter = ',')]
        boundaries: Option<Vec<f64>>,
    },
}

fn resolve_profile(common: &Common) -> Result<Profile, Error> {
    let mut profile = Profile::load(&common.profile)?;
    if !common.overrides.is_empty() {
        let mut doc: toml::Table = toml::from_str(&profile.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        for o in &common.overrides {
            apply_override(&mut doc, o)?;
        }
        profile = Profile::from_toml(&toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?)?;
    }
    let seed = match common.seed {
        Some(s) => Some(s),
        None => Profile::seed_from_env()?,
    };
    if let Some(s) = seed {
        profile = profile.with_seed(s);
    }
    profile.validate()?;
    Ok(profile)
}

/// Set a dotted key; the value is parsed as TOML, falling back to a string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {spec:?}")))?;
    let mut table = doc;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p} in {key} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn write_config(out: &Path, profile: &Profile) -> Result<(), Error> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), profile.to_toml()?)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn load_params(dir: &Path, file: &str) -> Result<ParamStore, Error> {
    ParamStore::load(dir.join(file))
}

fn run(cli: Cli) -> Result<(), Error> {
    let profile = resolve_profile(&cli.common)?;
    let vocab = Vocab::standard();
    match cli.command {
        Command::GenWorld { out } => {
            write_config(&out, &profile)?;
            let ds = Dataset::generate(&profile.data, &vocab)?;
            ds.save(&out)?;
            println!(
                "{} worlds, {} train / {} val_seen / {} val_unseen episodes -> {}",
                ds.worlds.len(),
                ds.train.len(),
                ds.val_seen.len(),
                ds.val_unseen.len(),
                out.display()
            );
        }
        Command::PretrainScene { data, out } => {
            write_config(&out, &profile)?;
            let ds = Dataset::load(&data)?;
            let (store, _, summary) = pretrain_scene(&profile, &ds, &vocab)?;
            store.save(out.join("scene.params"))?;
            write_json(&out.join("summary.json"), &summary)?;
            println!("scene grounding: accuracy {:.3} (untrained {:.3})", summary.accuracy, summary.untrained_accuracy);
        }
        Command::PretrainObject { data, out } => {
            write_config(&out, &profile)?;
            let ds = Dataset::load(&data)?;
            let (store, _, summary) = pretrain_object(&profile, &ds, &vocab)?;
            store.save(out.join("object.params"))?;
            write_json(&out.join("summary.json"), &summary)?;
            let last = summary.viewpoint_based.unwrap_or(summary.image_based);
            println!("object grounding: per-object accuracy {:.3} (chance {:.3})", last.accuracy, last.chance);
        }
        Command::TrainAgent { data, scene, object, out } => {
            write_config(&out, &profile)?;
            let ds = Dataset::load(&data)?;
            let scene = scene.map(|d| load_params(&d, "scene.params")).transpose()?;
            let object = object.map(|d| load_params(&d, "object.params")).transpose()?;
            let mut agent = build_agent(&profile, &profile.agent, &ds, &vocab, scene.as_ref(), object.as_ref())?;
            let mut log = fs::File::create(out.join("train_log.jsonl"))?;
            let summary = train_agent(&mut agent, &ds.worlds, &ds.train, &ds.val_seen, &profile.train, Some(&mut log))?;
            save_agent(&agent, out.join("agent"))?;
            write_json(&out.join("summary.json"), &summary)?;
            println!("trained {} iterations in {:.1}s; best validation success {:?}", summary.iterations, summary.seconds, summary.best_val_success);
        }
        Command::Evaluate { data, agent, out } => {
            write_config(&out, &profile)?;
            let ds = Dataset::load(&data)?;
            let agent_dir = if agent.join("agent").is_dir() { agent.join("agent") } else { agent };
            let agent = load_agent(&agent_dir)?;
            let episodes = ds.split(&profile.eval.split)?;
            let (results, steps) = evaluate_agent(&agent, &ds.worlds, episodes, profile.eval.fusion)?;
            let metrics = compute_metrics(&results)?;
            fs::write(out.join("traces.jsonl"), traces_to_string(&steps, &results)?)?;
            write_json(&out.join("metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string(&metrics).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?);
        }
        Command::Ablate { data, scene, object, out, kind } => {
            write_config(&out, &profile)?;
            let ds = Dataset::load(&data)?;
            let kinds = if kind == "all" { AblationKind::ALL.to_vec() } else { vec![kind.parse::<AblationKind>()?] };
            let scene = load_params(&scene, "scene.params")?;
            let object = load_params(&object, "object.params")?;
            let episodes = ds.split(&profile.eval.split)?;
            let mut exp = Experiment::new(&profile, &ds, &vocab, Some(&scene), Some(&object));
            let mut tables = String::new();
            for k in kinds {
                let outcomes = exp.run(k, episodes)?;
                let dir = out.join(k.name());
                fs::create_dir_all(&dir)?;
                for (i, o) in outcomes.iter().enumerate() {
                    fs::write(dir.join(format!("arm{i}.traces.jsonl")), traces_to_string(&o.traces, &o.results)?)?;
                }
                let rows: Vec<_> = outcomes.iter().map(|o| serde_json::json!({ "arm": o.arm, "metrics": o.metrics })).collect();
                write_json(&dir.join("arms.json"), &rows)?;
                tables.push_str(&comparison_table(k.name(), &outcomes));
                tables.push('\n');
            }
            fs::write(out.join("comparison.txt"), &tables)?;
            print!("{tables}");
        }
        Command::TraceReport { traces, out, boundaries } => {
            fs::create_dir_all(&out)?;
            let mut records = Vec::new();
            for path in &traces {
                let text = fs::read_to_string(path)?;
                records.extend(traces_from_str(&text).map_err(|e| match e {
                    Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
                    other => other,
                })?);
            }
            let cuts = boundaries.or_else(|| (!profile.eval.trace_boundaries.is_empty()).then(|| profile.eval.trace_boundaries.clone()));
            let mut resolved = profile.clone();
            resolved.eval.trace_boundaries = cuts.clone().unwrap_or_default();
            write_config(&out, &resolved)?;
            let report = trace_report(&records, cuts.as_deref())?;
            let text = report.to_text();
            fs::write(out.join("report.txt"), &text)?;
            fs::write(out.join("report.jsonl"), report.to_jsonl()?)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(_) = e {
                eprintln!("(seed may also come from {SEED_ENV})");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
