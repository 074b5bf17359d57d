use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use rttlab_core::generator::generate;
use rttlab_core::metrics::smape_improvement;
use rttlab_core::netem::{evaluate_accuracy, run_repeated, DelayProfile};
use rttlab_core::similarity::select_source;
use rttlab_core::trace::{mean_and_population_std, parse_trace, serialize_trace, split, RttTrace, SplitSpec};
use rttlab_core::train::HyperGrid;
use rttlab_core::transfer::{
    attach_test_metrics, build_source, file_stem, fine_tune, train_specialized, FreezeSpec, LibraryEntry,
    LstmModel, ModelLibrary, MODEL_EXTENSION,
};

use crate::config::PipelineConfig;
use crate::{
    Command, EmulateArgs, EvaluateArgs, FinetuneArgs, GenerateArgs, LibraryCommand, SelectArgs, TrainSourceArgs,
};

/// Target samples below this size still work but transfer less reliably.
pub const TARGET_SIZE_GUIDELINE: usize = 6000;

pub fn run(command: Command, config: &PipelineConfig) -> Result<()> {
    match command {
        Command::TrainSource(args) => train_source(args, config),
        Command::Library(LibraryCommand::Add {
            library,
            model,
            fingerprint,
        }) => library_add(&library_dir(library, config)?, &model, &fingerprint),
        Command::Library(LibraryCommand::List { library }) => library_list(&library_dir(library, config)?),
        Command::Select(args) => select(args, config),
        Command::Finetune(args) => finetune(args, config),
        Command::Generate(args) => generate_cmd(args, config),
        Command::Emulate(args) => emulate(args, config),
        Command::Evaluate(args) => evaluate_cmd(args),
    }
}

fn stem_of(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("trace");
    let name = name.strip_suffix(&format!(".{MODEL_EXTENSION}")).unwrap_or(name);
    let name = match name.rsplit_once('.') {
        Some((head, _)) if !head.is_empty() => head,
        _ => name,
    };
    file_stem(name)
}

fn read_trace(path: &Path) -> Result<RttTrace> {
    let bytes = fs::read(path).with_context(|| format!("reading trace {}", path.display()))?;
    let trace = parse_trace(&bytes).with_context(|| format!("parsing trace {}", path.display()))?;
    Ok(trace.with_context(stem_of(path)))
}

fn load_model(path: &Path) -> Result<LstmModel> {
    LstmModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn out_dir(config: &PipelineConfig) -> Result<PathBuf> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn library_dir(flag: Option<PathBuf>, config: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| config.library.clone())
        .ok_or_else(|| anyhow!("no library directory given (use --library or set `library` in the config)"))
}

fn target_path(flag: Option<PathBuf>, config: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| config.target.clone())
        .ok_or_else(|| anyhow!("no target trace given (use --target or set `target` in the config)"))
}

/// Reproducible stamp: `SOURCE_DATE_EPOCH` when set, otherwise none.
fn created_at() -> Option<String> {
    std::env::var("SOURCE_DATE_EPOCH").ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train_source(args: TrainSourceArgs, config: &PipelineConfig) -> Result<()> {
    let mut trace = read_trace(&args.trace)?;
    if let Some(label) = args.label {
        trace = trace.with_context(label);
    }
    let mut grid = if args.full_grid {
        HyperGrid::default()
    } else {
        config.default_grid()
    };
    if let Some(v) = args.layers {
        grid.layers = v;
    }
    if let Some(v) = args.units {
        grid.hidden_units = v;
    }
    if let Some(v) = args.batch {
        grid.batch_sizes = v;
    }
    if let Some(v) = args.epochs {
        grid.epochs = v;
    }
    let build = build_source(&trace, &grid, SplitSpec::DEFAULT, &config.train)
        .with_context(|| format!("training a source model on {}", args.trace.display()))?;
    let mut model = build.model;
    model.metadata.created_at = created_at();

    let dir = out_dir(config)?;
    let stem = file_stem(trace.context());
    let model_path = dir.join(format!("{stem}.{MODEL_EXTENSION}"));
    let grid_path = dir.join(format!("{stem}.grid.csv"));
    let fingerprint_path = dir.join(format!("{stem}.fingerprint.csv"));
    model.save(&model_path)?;
    fs::write(&grid_path, build.grid.to_csv())?;
    let fingerprint = RttTrace::new(build.fingerprint_ms.clone(), trace.interval_ms(), trace.context())?;
    fs::write(&fingerprint_path, serialize_trace(&fingerprint))?;

    if let Some(lib_dir) = &args.library {
        let mut library = ModelLibrary::load(lib_dir)?;
        library.add(LibraryEntry::new(model.clone(), build.fingerprint_ms)?)?;
        library.save(lib_dir)?;
    }
    print_json(&json!({
        "label": trace.context(),
        "model": model_path,
        "grid_report": grid_path,
        "fingerprint": fingerprint_path,
        "best": build.grid.best_point,
        "test_smape": model.metadata.test_smape,
        "grid_points": build.grid.rows.len(),
    }))
}

fn library_add(dir: &Path, model_path: &Path, fingerprint_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let fingerprint = read_trace(fingerprint_path)?;
    let mut library = ModelLibrary::load(dir)?;
    let label = model.label().to_string();
    library.add(LibraryEntry::new(model, fingerprint.into_samples())?)?;
    library.save(dir)?;
    print_json(&json!({ "added": label, "entries": library.len() }))
}

fn library_list(dir: &Path) -> Result<()> {
    let library = ModelLibrary::load(dir)?;
    let entries: Vec<_> = library
        .entries()
        .iter()
        .map(|e| {
            let m = &e.model;
            json!({
                "label": m.label(),
                "layers": m.architecture.num_layers,
                "hidden_units": m.architecture.hidden_units,
                "training_len": m.metadata.training_len,
                "test_smape": m.metadata.test_smape,
                "fingerprint_len": e.fingerprint.len(),
            })
        })
        .collect();
    print_json(&entries)
}

fn select(args: SelectArgs, config: &PipelineConfig) -> Result<()> {
    let library = ModelLibrary::load(&library_dir(args.library, config)?)?;
    let target = read_trace(&target_path(args.target, config)?)?;
    let selection = select_source(&library, &target)?;
    print_json(&json!({
        "target": target.context(),
        "source": selection.entry.label(),
        "normalized_dtw": selection.distance.normalized,
        "distances": selection
            .distances
            .iter()
            .map(|(label, d)| json!({ "label": label, "normalized_dtw": d.normalized }))
            .collect::<Vec<_>>(),
    }))
}

fn finetune(args: FinetuneArgs, config: &PipelineConfig) -> Result<()> {
    let library = ModelLibrary::load(&library_dir(args.library, config)?)?;
    let target = read_trace(&target_path(args.target, config)?)?;
    let warning = (target.len() < TARGET_SIZE_GUIDELINE).then(|| {
        format!(
            "target sample has {} points, fewer than the {TARGET_SIZE_GUIDELINE}-point guideline",
            target.len()
        )
    });
    if let Some(w) = &warning {
        eprintln!("WARNING: {w}");
    }
    let selection = select_source(&library, &target)?;
    let freeze = args.freeze.map(FreezeSpec::new).unwrap_or(config.freeze);
    let mut train_config = config.train;
    if let Some(e) = args.epochs {
        train_config.epochs = e;
    }
    if let Some(b) = args.batch {
        train_config.batch_size = b;
    }
    let (train_ms, test_ms) = split(target.samples(), SplitSpec::DEFAULT)?;
    let train_trace = RttTrace::new(train_ms.to_vec(), target.interval_ms(), target.context())?;
    let source = &selection.entry.model;
    let (mut model, mut report) = fine_tune(source, &train_trace, freeze, &train_config)
        .with_context(|| format!("fine-tuning {:?} on {}", source.label(), target.context()))?;
    let eval = attach_test_metrics(&mut model, &mut report, test_ms)?;
    model.metadata.created_at = created_at();

    let baseline = if args.baseline {
        let (mut scratch, mut scratch_report) = train_specialized(&train_trace, &source.architecture, &train_config)?;
        let base = attach_test_metrics(&mut scratch, &mut scratch_report, test_ms)?;
        Some(json!({
            "test_smape": base.smape,
            "smape_improvement": smape_improvement(base.smape, eval.smape)?,
        }))
    } else {
        None
    };

    let dir = out_dir(config)?;
    let stem = file_stem(target.context());
    let model_path = dir.join(format!("{stem}.{MODEL_EXTENSION}"));
    let report_path = dir.join(format!("{stem}.finetune.json"));
    model.save(&model_path)?;
    let summary = json!({
        "target": target.context(),
        "target_len": target.len(),
        "source": source.label(),
        "normalized_dtw": selection.distance.normalized,
        "frozen_layers": freeze.k_frozen,
        "epochs": train_config.epochs,
        "train_smape": model.metadata.train_smape,
        "test_smape": eval.smape,
        "test_mse": eval.mse,
        "specialized": baseline,
        "model": model_path,
        "warning": warning,
    });
    write_json(&report_path, &summary)?;
    print_json(&summary)
}

fn generate_cmd(args: GenerateArgs, config: &PipelineConfig) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut spec = config.generation;
    spec.seed = config.train.seed;
    if let Some(n) = args.length {
        spec.length = n;
    }
    if args.sigma.is_some() {
        spec.sigma = args.sigma;
    }
    if args.seed_value.is_some() {
        spec.seed_value = args.seed_value;
    }
    let trace = generate(&model, &spec)?;
    let output = match args.output {
        Some(p) => p,
        None => out_dir(config)?.join(format!("{}.synthetic.csv", stem_of(&args.model))),
    };
    fs::write(&output, serialize_trace(&trace)).with_context(|| format!("writing {}", output.display()))?;
    let (mean, std) = mean_and_population_std(trace.samples());
    print_json(&json!({
        "output": output,
        "samples": trace.len(),
        "mean_ms": mean,
        "std_ms": std,
    }))
}

fn emulate(args: EmulateArgs, config: &PipelineConfig) -> Result<()> {
    let trace = read_trace(&args.trace)?;
    let mut settings = config.emulation;
    if let Some(r) = args.runs {
        settings.runs = r;
    }
    if let Some(p) = args.pings {
        settings.pings = p;
    }
    if settings.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let input: Vec<f64> = trace.samples()[..trace.len().min(settings.pings)].to_vec();
    let profile = DelayProfile::new(trace.clone())
        .with_timing(settings.update_interval_ms, settings.reconfig_cost_ms)?
        .with_uplink_fraction(settings.uplink_fraction)?;
    let runs = run_repeated(&profile, settings.pings, settings.runs, config.train.seed)?;
    let report = evaluate_accuracy(&input, &runs)?;
    let path = match args.report {
        Some(p) => p,
        None => out_dir(config)?.join(format!("{}.emulation.json", stem_of(&args.trace))),
    };
    write_json(&path, &report)?;
    print_json(&json!({
        "report": path,
        "runs": report.runs,
        "percentiles": report.percentiles,
    }))
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let trace = read_trace(&args.trace)?;
    let eval = model.evaluate(trace.samples())?;
    print_json(&json!({
        "model": model.label(),
        "trace": trace.context(),
        "samples": trace.len(),
        "mse": eval.mse,
        "smape": eval.smape,
    }))
}
