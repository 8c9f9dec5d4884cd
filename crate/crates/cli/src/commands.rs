use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::parser::ValueSource;
use clap::ArgMatches;
use hypattn::attention::gradient_suite;
use hypattn::geometry::selftest;
use hypattn::graphgen::{write_jsonl, Task};
use hypattn::model::ModelConfig;
use hypattn::training::{
    constant_baseline, evaluate, radius_histogram, Checkpoint, ExampleSource, PreparedExample, TrainConfig,
    TrainError, Trainer, METRICS_HEADER,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{
    BaselineArgs, Command, EvalArgs, GenGraphsArgs, HistArgs, SeedArgs, SelftestArgs, TrainArgs, RESUME_FLAGS,
};
use crate::UsageError;

const CHECK_FAILED: u8 = 2;

pub fn dispatch(command: Command, matches: &ArgMatches) -> anyhow::Result<ExitCode> {
    match command {
        Command::GenGraphs(a) => gen_graphs(&a),
        Command::Train(a) => train(&a, matches),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::GeomSelftest(a) => geom_selftest(&a),
        Command::ExportRadiusHist(a) => export_radius_hist(&a),
        Command::Baseline(a) => baseline(&a),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
fn write_atomically(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => write_atomically(path, bytes),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn usage_on_config(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Config(m) => UsageError(m).into(),
        other => other.into(),
    }
}

fn gen_graphs(a: &GenGraphsArgs) -> anyhow::Result<ExitCode> {
    let generator = a
        .generator
        .config()
        .generator(a.n)
        .map_err(|e| UsageError(e.to_string()))?;
    let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
    let graphs: Vec<_> = (0..a.count).map(|_| generator.sample(seeds.next_u64())).collect();
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &graphs)?;
    emit(a.out.as_deref(), &bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Metrics rows already on disk up to `step`, so a resumed run extends the
/// file it left behind.
fn metrics_prefix(path: &Path, step: usize) -> anyhow::Result<Vec<String>> {
    let mut lines = vec![METRICS_HEADER.to_string()];
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(lines);
    };
    for line in text.lines().skip(1) {
        let row_step: usize = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .with_context(|| format!("{}: malformed row {line:?}", path.display()))?;
        if row_step <= step {
            lines.push(line.to_string());
        }
    }
    Ok(lines)
}

fn train(a: &TrainArgs, matches: &ArgMatches) -> anyhow::Result<ExitCode> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let fixed: Vec<String> = matches
                .ids()
                .map(|id| id.as_str())
                .filter(|id| !RESUME_FLAGS.contains(id))
                .filter(|id| matches.value_source(id) == Some(ValueSource::CommandLine))
                .map(|id| format!("--{}", id.replace('_', "-")))
                .collect();
            if !fixed.is_empty() {
                return Err(UsageError(format!(
                    "{} cannot change a resumed run; its configuration comes from the checkpoint",
                    fixed.join(", ")
                ))
                .into());
            }
            let mut trainer = Trainer::from_checkpoint(read_checkpoint(path)?)?;
            if matches.value_source("steps") == Some(ValueSource::CommandLine) {
                trainer.set_total_steps(a.steps);
            }
            trainer
        }
        None => {
            let (model, train) = a.configs()?;
            log::info!("model {}", serde_json::to_string(&model)?);
            log::info!("training {}", serde_json::to_string(&train)?);
            Trainer::new(model, train).map_err(usage_on_config)?
        }
    };
    let mut lines = match &a.resume {
        Some(_) => metrics_prefix(&a.metrics_out, trainer.step_count())?,
        None => vec![METRICS_HEADER.to_string()],
    };
    let save = |trainer: &Trainer, lines: &[String]| -> anyhow::Result<()> {
        write_atomically(&a.metrics_out, (lines.join("\n") + "\n").as_bytes())?;
        write_atomically(&a.checkpoint_out, &trainer.checkpoint().to_bytes())
    };
    save(&trainer, &lines)?;
    let mut last = None;
    while let Some(row) = trainer.next_row()? {
        lines.push(row.csv_row());
        save(&trainer, &lines)?;
        last = Some(row);
    }
    match last {
        Some(row) => println!(
            "step {} train_loss {} eval_accuracy {} mean_radius {}",
            row.step, row.train_loss, row.eval_accuracy, row.mean_radius
        ),
        None => println!("step {} (nothing to train)", trainer.step_count()),
    }
    Ok(ExitCode::SUCCESS)
}

/// Fresh evaluation graphs for a checkpoint: same task, size and generator,
/// different seed.
fn fresh_sample(ckpt: &Checkpoint, a: &EvalArgs) -> anyhow::Result<Vec<PreparedExample>> {
    if a.count == 0 {
        return Err(UsageError("--count must be at least 1".into()).into());
    }
    let train = TrainConfig {
        seed: a.seed.unwrap_or(ckpt.train.seed.wrapping_add(1)),
        ..ckpt.train.clone()
    };
    Ok(ExampleSource::new(&ckpt.model, &train)?.evaluation_set(a.count)?)
}

fn eval(a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let (model, store, _) = ckpt.restore()?;
    let examples = fresh_sample(&ckpt, a)?;
    let result = evaluate(&model, &store, &examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.example.label).collect();
    println!("accuracy {}", result.accuracy);
    println!("baseline {}", constant_baseline(&labels)?);
    println!("mean_radius {}", result.mean_radius());
    Ok(ExitCode::SUCCESS)
}

fn export_radius_hist(a: &HistArgs) -> anyhow::Result<ExitCode> {
    let ckpt = read_checkpoint(&a.eval.checkpoint)?;
    let (model, store, _) = ckpt.restore()?;
    let examples = fresh_sample(&ckpt, &a.eval)?;
    let hist = radius_histogram(&model, &store, &examples, a.bins).map_err(|e| match e {
        TrainError::NotHyperbolic | TrainError::Config(_) => UsageError(e.to_string()).into(),
        other => anyhow::Error::from(other),
    })?;
    let mut bytes = serde_json::to_vec(&hist)?;
    bytes.push(b'\n');
    emit(a.out.as_deref(), &bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: &SeedArgs) -> anyhow::Result<ExitCode> {
    let reports = gradient_suite(a.seed)?;
    for r in &reports {
        println!(
            "{:<44} max relative error {:.3e} (tolerance {:.0e}) {}",
            r.name,
            r.max_relative_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(if reports.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}

fn geom_selftest(a: &SelftestArgs) -> anyhow::Result<ExitCode> {
    if a.instances == 0 {
        return Err(UsageError("--instances must be at least 1".into()).into());
    }
    let reports = selftest::run(a.instances, a.seed);
    for r in &reports {
        println!(
            "{:<44} max error {:.3e} (tolerance {:.0e}) {}",
            r.name,
            r.max_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(if reports.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}

fn baseline(a: &BaselineArgs) -> anyhow::Result<ExitCode> {
    let task = Task::from(a.task);
    let train = TrainConfig {
        task,
        graph_size: a.graph_size,
        eval_examples: a.eval_examples,
        seed: a.seed,
        generator: a.generator.config(),
        ..TrainConfig::default()
    };
    train.validate().map_err(usage_on_config)?;
    let model = ModelConfig {
        task,
        ..ModelConfig::default()
    };
    let examples = ExampleSource::new(&model, &train)?.evaluation_set(a.eval_examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.example.label).collect();
    println!("{}", constant_baseline(&labels)?);
    Ok(ExitCode::SUCCESS)
}
