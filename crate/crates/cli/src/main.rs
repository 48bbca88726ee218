mod commands;
mod config;
mod error;
mod report;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use commands::*;
use error::{CliError, CliResult};
use run::{OutputKind, Run};

#[derive(Parser)]
#[command(name = "strokeforge", version, about = "Neural painters, stroke agents and stroke-space image optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file, or a run manifest (JSON) to repeat.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set agent.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output location; defaults to a fresh directory under $STROKEFORGE_RUNS (or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render sampled actions with the stroke oracle into a dataset file.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        canvas_size: Option<usize>,
        /// Discrete-variant actions with a lift flag.
        #[arg(long)]
        discrete: bool,
    },
    /// Train a VAE or GAN painter on a dataset.
    TrainPainter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `vae` or `gan`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Optimizer steps per training stage (overrides epochs).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare a painter with the noise-free oracle.
    EvalPainter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one action dimension and paint the result.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train a reconstruction agent adversarially through a frozen painter.
    TrainAgent {
        #[command(flatten)]
        common: Common,
        /// `synthetic-digits:N[:SEED]`, `synthetic-shapes:N[:SEED]`, `idx:IMAGES[:LABELS]` or a PNG directory.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fit an agent to per-class stroke templates, optionally resuming adversarial training.
    Precondition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Paint a stroke file, or reconstruct a target image with an agent.
    PaintImage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        strokes: Option<PathBuf>,
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Train a small image classifier.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        /// `a` or `b`.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Optimize strokes to maximize a class logit.
    VisualizeClass {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        painter: Option<PathBuf>,
        /// Repeat for an ensemble.
        #[arg(long = "classifier")]
        classifiers: Vec<PathBuf>,
        #[arg(long)]
        class_id: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Optimize strokes against a content loss.
    IntrinsicStyle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        painter: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        content: Option<PathBuf>,
        #[arg(long)]
        tap: Option<String>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        overlap: Option<f32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Build an HTML/PNG report from a run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Collects flag overrides as `(dotted key, value)` pairs.
#[derive(Default)]
struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn put<T: Serialize>(&mut self, key: &str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_string(), serde_json::to_value(v).expect("plain value")));
        }
        self
    }

    fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        self.put(key, on.then_some(true))
    }
}

fn resolve<T: Serialize + DeserializeOwned>(command: &str, common: &Common, flags: Overrides) -> CliResult<(T, Value)> {
    let base = match &common.config {
        Some(p) => config::load_file(p, command)?,
        None => Value::Null,
    };
    let mut all = flags.0;
    for s in &common.set {
        all.push(config::parse_assignment(s)?);
    }
    config::resolve(base, all)
}

fn simple<T: Serialize + DeserializeOwned>(
    name: &str,
    common: &Common,
    flags: Overrides,
    body: impl FnOnce(&mut Run, &T) -> CliResult<Value>,
) -> CliResult<()> {
    let (cfg, full): (T, Value) = resolve(name, common, flags)?;
    let run = Run::open(name, common.out.as_deref(), OutputKind::Directory, &full)?;
    run.execute(|run| body(run, &cfg))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenDataset {
            common,
            n,
            seed,
            canvas_size,
            discrete,
        } => {
            let mut o = Overrides::default();
            o.put("n", n).put("seed", seed).put("canvas_size", canvas_size).flag("discrete", discrete);
            let (cfg, _): (GenDatasetConfig, Value) = resolve("gen-dataset", &common, o)?;
            let (cfg, oracle) = cfg.resolved();
            oracle.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if cfg.n == 0 {
                return Err(CliError::Usage("n must be >= 1".into()));
            }
            let full = serde_json::to_value(&cfg)?;
            let run = Run::open("gen-dataset", common.out.as_deref(), OutputKind::File("dataset.npds"), &full)?;
            run.execute(|run| gen_dataset(run, &cfg, &oracle))
        }
        Command::TrainPainter {
            common,
            dataset,
            kind,
            seed,
            steps,
        } => {
            let mut o = Overrides::default();
            o.put("dataset", dataset)
                .put("kind", kind)
                .put("vae.seed", seed)
                .put("gan.seed", seed)
                .put("vae.max_steps", steps)
                .put("gan.max_steps", steps);
            simple("train-painter", &common, o, train_painter)
        }
        Command::EvalPainter { common, painter, n, seed } => {
            let mut o = Overrides::default();
            o.put("painter", painter).put("n", n).put("seed", seed);
            simple("eval-painter", &common, o, eval_painter)
        }
        Command::Sweep {
            common,
            painter,
            dim,
            steps,
        } => {
            let mut o = Overrides::default();
            o.put("painter", painter).put("dim", dim).put("steps", steps);
            simple("sweep", &common, o, sweep)
        }
        Command::TrainAgent {
            common,
            data,
            painter,
            seed,
            steps,
        } => {
            let mut o = Overrides::default();
            o.put("data", data).put("painter", painter).put("agent.seed", seed).put("agent.max_steps", steps);
            simple("train-agent", &common, o, train_agent_cmd)
        }
        Command::Precondition {
            common,
            agent,
            data,
            templates,
            painter,
            resume,
        } => {
            let mut o = Overrides::default();
            o.put("agent", agent)
                .put("data", data)
                .put("templates", templates)
                .put("painter", painter)
                .flag("resume", resume);
            simple("precondition", &common, o, precondition_cmd)
        }
        Command::PaintImage {
            common,
            painter,
            strokes,
            agent,
            target,
        } => {
            let mut o = Overrides::default();
            o.put("painter", painter).put("strokes", strokes).put("agent", agent).put("target", target);
            simple("paint-image", &common, o, paint_image)
        }
        Command::TrainClassifier {
            common,
            data,
            arch,
            seed,
            image_size,
        } => {
            let mut o = Overrides::default();
            o.put("data", data)
                .put("arch", arch)
                .put("classifier.seed", seed)
                .put("image_size", image_size);
            simple("train-classifier", &common, o, train_classifier_cmd)
        }
        Command::VisualizeClass {
            common,
            painter,
            classifiers,
            class_id,
            seed,
            steps,
        } => {
            let mut o = Overrides::default();
            o.put("painter", painter)
                .put("classifiers", (!classifiers.is_empty()).then_some(classifiers))
                .put("class_id", class_id)
                .put("dip.seed", seed)
                .put("dip.steps", steps);
            simple("visualize-class", &common, o, visualize_class_cmd)
        }
        Command::IntrinsicStyle {
            common,
            painter,
            classifier,
            content,
            tap,
            rows,
            cols,
            overlap,
            seed,
            steps,
        } => {
            let mut o = Overrides::default();
            o.put("painter", painter)
                .put("classifier", classifier)
                .put("content", content)
                .put("tap", tap)
                .put("rows", rows)
                .put("cols", cols)
                .put("overlap", overlap)
                .put("dip.seed", seed)
                .put("dip.steps", steps);
            simple("intrinsic-style", &common, o, intrinsic_style_cmd)
        }
        Command::Report { run_dir, out } => {
            let full = serde_json::json!({"run_dir": run_dir});
            if !run_dir.is_dir() {
                return Err(CliError::Runtime(anyhow::anyhow!("{} is not a directory", run_dir.display())));
            }
            let run = Run::open("report", out.as_deref(), OutputKind::Directory, &full)?;
            run.execute(|run| report::report(run, &run_dir))
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
