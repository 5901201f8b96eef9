use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selective_labels::experiment::{
    artifacts, fit_decision, input_record, run_experiment, seeds_summary_csv, write_outputs,
    ExperimentConfig, FileRecord, Manifest, MANIFEST_FILE, OUTCOME_MODELS, REPORT_FILE,
};
use selective_labels::rng::{self, stream};
use selective_labels::{
    build_augmented, evaluate_models, generate, load_dataset, observed_subset, positivity_report,
    render_dataset, semi_synthetic_transform, AugmentedSet, Dataset, Error, ErrorKind, ProbMap,
    ProbModel, Result, TruthTable,
};

#[derive(Parser)]
#[command(
    name = "sellab",
    version,
    about = "Learning from selectively labeled data: augmentation, IPW and evaluation"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset (`dataset.csv`, `truth.csv`).
    Generate {
        /// Number of instances; defaults to the configured `n`.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
    },
    /// Apply the semi-synthetic relabeling (`transformed.csv`, `transformed_truth.csv`).
    Transform {
        #[arg(long)]
        data: PathBuf,
        /// Decision probabilities (`id,prob`).
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit the decision model (`model_decision.json`, `decision_probs_*.csv`).
    FitDecision {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Build the augmented training set (`augmented.csv`, `positivity.json`).
    Augment {
        #[arg(long)]
        train: PathBuf,
        /// Decision probabilities for the training set.
        #[arg(long)]
        probs: PathBuf,
    },
    /// Fit one outcome model (`model_<name>.json`).
    FitOutcome {
        #[arg(long)]
        train: PathBuf,
        /// Augmented set from `augment`; observed examples only when absent.
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long, default_value = "observed", value_parser = OUTCOME_MODELS)]
        name: String,
    },
    /// Evaluate saved outcome models (`report.json` and CSVs).
    Evaluate {
        /// Experiment output directory to re-evaluate.
        #[arg(long, conflicts_with_all = ["test", "truth", "decision_probs", "models"])]
        run: Option<PathBuf>,
        #[arg(long, required_unless_present = "run")]
        test: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, required_unless_present = "run")]
        decision_probs: Option<PathBuf>,
        /// `name=path`, repeatable.
        #[arg(long = "model", value_parser = parse_named_path, required_unless_present = "run")]
        models: Vec<(String, PathBuf)>,
    },
    /// Run the full pipeline.
    Experiment {
        /// Seed range `a..b` (exclusive) or `a..=b`; one sub-directory per seed.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<SeedRange>,
    },
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=path, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got {s:?}"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

#[derive(Debug, Clone)]
struct SeedRange(Vec<u64>);

fn parse_seed_range(s: &str) -> std::result::Result<SeedRange, String> {
    let bad = || format!("expected a..b or a..=b, got {s:?}");
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(seeds))
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    inputs: Vec<FileRecord>,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut config = match &cli.config {
            Some(path) => {
                inputs.push(input_record(path)?);
                ExperimentConfig::load(path)?
            }
            None => ExperimentConfig::default(),
        };
        if cli.seed.is_some() {
            config.seed = cli.seed;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))?;
        Ok(Self {
            config,
            out,
            inputs,
        })
    }

    fn read_dataset(&mut self, path: &Path) -> Result<Dataset> {
        self.inputs.push(input_record(path)?);
        load_dataset(path)
    }

    fn read_probs(&mut self, path: &Path) -> Result<ProbMap> {
        self.inputs.push(input_record(path)?);
        ProbMap::load(path)
    }

    fn read_truth(&mut self, path: &Path) -> Result<TruthTable> {
        self.inputs.push(input_record(path)?);
        TruthTable::load(path)
    }

    fn read_model(&mut self, path: &Path) -> Result<ProbModel> {
        self.inputs.push(input_record(path)?);
        ProbModel::load(path)
    }

    fn finish(self, files: Vec<(String, Vec<u8>)>, seed: Option<u64>) -> Result<Manifest> {
        let mut config = self.config;
        config.seed = seed.or(config.seed);
        write_outputs(&self.out, files, seed, config.echo(), self.inputs)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = Context::new(&cli)?;
    match cli.command {
        Command::Generate { n } => {
            let seed = ctx.config.seed()?;
            let n = n.map(|n| n as usize).unwrap_or(ctx.config.n);
            if n == 0 {
                return Err(Error::Config("n must be positive".into()));
            }
            ctx.config.dgp.validate()?;
            let g = generate(&ctx.config.dgp, n, rng::derive(seed, stream::GENERATE))?;
            let screened = g.dataset.instances().iter().filter(|i| i.d).count();
            let positives = g.truth.iter().filter(|(_, y)| *y).count();
            let observed_pos = g.dataset.instances().iter().filter(|i| i.y == Some(true)).count();
            println!("n = {n}");
            println!("screened-in rate = {:.4}", screened as f64 / n as f64);
            println!("outcome base rate = {:.4}", positives as f64 / n as f64);
            if screened > 0 {
                println!(
                    "observed outcome rate = {:.4}",
                    observed_pos as f64 / screened as f64
                );
            }
            let files = vec![
                ("dataset.csv".into(), render_dataset(&g.dataset).into_bytes()),
                ("truth.csv".into(), g.truth.render().into_bytes()),
            ];
            ctx.finish(files, Some(seed))?;
        }
        Command::Transform { data, probs, truth } => {
            let dataset = ctx.read_dataset(&data)?;
            let probs = ctx.read_probs(&probs)?;
            let truth = truth.map(|p| ctx.read_truth(&p)).transpose()?;
            let cfg = ctx.config.semi_synthetic.unwrap_or_default();
            cfg.validate()?;
            let t = semi_synthetic_transform(&dataset, truth.as_ref(), &probs, &cfg)?;
            let kept = t.dataset.instances().iter().filter(|i| i.d).count();
            println!(
                "screened-in after transform: {kept} of {} (threshold {})",
                t.dataset.len(),
                cfg.threshold
            );
            let mut files = vec![("transformed.csv".into(), render_dataset(&t.dataset).into_bytes())];
            if let Some(truth) = t.truth {
                files.push(("transformed_truth.csv".into(), truth.render().into_bytes()));
            }
            ctx.finish(files, None)?;
        }
        Command::FitDecision { train, test } => {
            let seed = ctx.config.seed()?;
            let train = ctx.read_dataset(&train)?;
            let test = test.map(|p| ctx.read_dataset(&p)).transpose()?;
            let c = &ctx.config;
            let fit = fit_decision(
                &train,
                test.as_ref(),
                &c.decision_model,
                c.folds,
                c.decision_probs,
                rng::derive(seed, stream::DECISION),
            )?;
            let mut files = vec![
                ("model_decision.json".into(), fit.model.to_json().into_bytes()),
                ("decision_probs_train.csv".into(), fit.train_probs.render().into_bytes()),
            ];
            if test.is_some() {
                files.push(("decision_probs_test.csv".into(), fit.test_probs.render().into_bytes()));
            }
            ctx.finish(files, Some(seed))?;
        }
        Command::Augment { train, probs } => {
            let train = ctx.read_dataset(&train)?;
            let probs = ctx.read_probs(&probs)?;
            let cfg = ctx.config.augment;
            cfg.validate()?;
            let set = build_augmented(&train, &probs, &cfg)?;
            let s = set.stats;
            println!(
                "observed {}, augmented {}, skipped (already observed) {}, excluded {}",
                s.observed, s.augmented, s.skipped_already_observed, s.excluded
            );
            let scored = selective_labels::augment::scored_decisions(&train, &probs)?;
            let positivity = positivity_report(&scored, cfg.epsilon);
            let files = vec![
                ("augmented.csv".into(), set.render().into_bytes()),
                ("positivity.json".into(), positivity.to_json().into_bytes()),
            ];
            ctx.finish(files, None)?;
        }
        Command::FitOutcome {
            train,
            augmented,
            name,
        } => {
            let seed = ctx.config.seed()?;
            let train = ctx.read_dataset(&train)?;
            let examples = match augmented {
                Some(path) => {
                    ctx.inputs.push(input_record(&path)?);
                    AugmentedSet::load(&path, &train)?.examples
                }
                None => observed_subset(&train),
            };
            let model_seed = rng::derive(seed, stream::OUTCOME);
            let model = ctx.config.outcome_model.fit(&examples, model_seed)?;
            println!("fit {} on {} examples", ctx.config.outcome_model.name(), examples.len());
            let files = vec![(format!("model_{name}.json"), model.to_json().into_bytes())];
            ctx.finish(files, Some(seed))?;
        }
        Command::Evaluate {
            run,
            test,
            truth,
            decision_probs,
            models,
        } => {
            let (test, truth, decision_probs, models) = match run {
                Some(dir) => {
                    if cli.config.is_none() {
                        if let Some(eps) = run_epsilon(&dir)? {
                            ctx.config.augment.epsilon = eps;
                        }
                    }
                    let models = OUTCOME_MODELS
                        .iter()
                        .map(|m| (m.to_string(), dir.join(format!("model_{m}.json"))))
                        .collect();
                    (
                        dir.join("test.csv"),
                        Some(dir.join("truth.csv")),
                        dir.join("decision_probs_test.csv"),
                        models,
                    )
                }
                None => (
                    test.expect("required by clap"),
                    truth,
                    decision_probs.expect("required by clap"),
                    models,
                ),
            };
            let test = ctx.read_dataset(&test)?;
            let truth = truth.map(|p| ctx.read_truth(&p)).transpose()?;
            let decision_probs = ctx.read_probs(&decision_probs)?;
            let mut loaded = Vec::with_capacity(models.len());
            for (name, path) in &models {
                let model = ctx.read_model(path)?;
                if model.k() != test.k() {
                    return Err(Error::DimensionMismatch {
                        expected: model.k(),
                        found: test.k(),
                    });
                }
                loaded.push((name.as_str(), model));
            }
            let named: Vec<(&str, &ProbModel)> = loaded.iter().map(|(n, m)| (*n, m)).collect();
            ctx.config.augment.validate()?;
            let report = evaluate_models(
                &named,
                &test,
                truth.as_ref(),
                &decision_probs,
                ctx.config.augment.epsilon,
            )?;
            print!("{}", report.summary_table());
            let mut files = vec![(REPORT_FILE.to_string(), report.to_json().into_bytes())];
            files.extend(report.csv_files().into_iter().map(|(n, c)| (n, c.into_bytes())));
            ctx.finish(files, None)?;
        }
        Command::Experiment { seeds } => match seeds {
            None => {
                let run = run_experiment(&ctx.config)?;
                print!("{}", run.report.summary_table());
                let seed = run.seed;
                ctx.finish(artifacts(&run), Some(seed))?;
            }
            Some(SeedRange(seeds)) => {
                let mut reports = Vec::with_capacity(seeds.len());
                let mut files = Vec::with_capacity(seeds.len());
                for &seed in &seeds {
                    let mut config = ctx.config.clone();
                    config.seed = Some(seed);
                    let run = run_experiment(&config)?;
                    println!("seed {seed}");
                    print!("{}", run.report.summary_table());
                    for (name, bytes) in artifacts(&run) {
                        files.push((format!("seed_{seed}/{name}"), bytes));
                    }
                    reports.push((seed, run.report));
                }
                files.push(("seeds_summary.csv".into(), seeds_summary_csv(&reports).into_bytes()));
                ctx.finish(files, None)?;
            }
        },
    }
    Ok(())
}

/// Epsilon recorded in an experiment directory's manifest, if any.
fn run_epsilon(dir: &Path) -> Result<Option<f64>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Manifest::load(&path)?.epsilon())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Internal => 4,
            })
        }
    }
}
