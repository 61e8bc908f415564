use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mvrbm::data_io::{self, Model};
use mvrbm::drbm::DrbmParams;
use mvrbm::experiments::{self, fingerprint_of, ExperimentConfig, ExperimentKind, ToySettings};
use mvrbm::metrics::{kld, log_likelihood_per_visible, misclassification_rate, MetricsRecord};
use mvrbm::sampler::{generate_dataset, DEFAULT_BURN_IN, DEFAULT_THIN};
use mvrbm::trainer::{init_generative, init_trainee, run_epochs, train, OptimizerConfig, RbmShape, TrainConfig};
use mvrbm::{Error, HiddenLevels, Result, RngStream};

#[derive(Parser)]
#[command(name = "mvrbm", version, about = "RBMs with multivalued hidden units: training, evaluation and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a generating RBM and sample a training set from it.
    GenData(GenDataArgs),
    /// Train an RBM with CD-k on a spin dataset.
    TrainRbm(TrainRbmArgs),
    /// Exact KL divergence (per visible unit) from a generator to a model.
    EvalKld(EvalKldArgs),
    /// Toy-model curves alpha_s(w), l_s(w), or the w* table.
    ToyCurves(ToyCurvesArgs),
    /// Train a discriminative RBM on an MNIST subset.
    TrainDrbm(TrainDrbmArgs),
    /// Misclassification rate of a discriminative RBM on the (noisy) MNIST test set.
    EvalDrbm(EvalDrbmArgs),
    /// Artificial-data over-fitting study.
    RunArtificial(RunArgs),
    /// Toy-model curves and maximizer table from a config.
    RunToy(RunArgs),
    /// MNIST classification study.
    RunMnist(RunArgs),
}

fn parse_level(text: &str) -> std::result::Result<HiddenLevels, String> {
    text.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated hidden level counts, e.g. `1,2,4,inf`.
    #[arg(long = "s", value_parser = parse_level, value_delimiter = ',')]
    levels: Option<Vec<HiddenLevels>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra trainee hidden units R (artificial study).
    #[arg(long)]
    extra_hidden: Option<usize>,
    /// Directory with the MNIST IDX files (MNIST study).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Also write SVG line charts.
    #[arg(long)]
    plots: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (receives generator.json and data.txt).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n_visible: usize,
    #[arg(long, default_value_t = 4)]
    n_hidden: usize,
    #[arg(long, default_value_t = 200)]
    n_points: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_THIN)]
    thin: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Adamax,
}

#[derive(Args)]
struct OptimizerArgs {
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, default_value_t = 0.001)]
    step_size: f64,
}

impl OptimizerArgs {
    fn config(&self, default: OptimizerArg) -> OptimizerConfig {
        let base = match self.optimizer.unwrap_or(default) {
            OptimizerArg::Adam => OptimizerConfig::default(),
            OptimizerArg::Adamax => OptimizerConfig::adamax(),
        };
        OptimizerConfig {
            step_size: self.step_size,
            ..base
        }
    }
}

#[derive(Args)]
struct TrainRbmArgs {
    /// Spin dataset (as written by gen-data).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long = "s", value_parser = parse_level, default_value = "1")]
    levels: HiddenLevels,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    /// Mini-batch size; 0 = full batch.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    cd_steps: usize,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator model; when given, the KLD is logged every epoch.
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Output directory (receives model.json and metrics.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalKldArgs {
    #[arg(long)]
    generator: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Also report the log-likelihood per visible unit on this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ToyCurvesArgs {
    #[arg(long = "s", value_parser = parse_level, value_delimiter = ',', default_value = "1,2,4,inf")]
    levels: Vec<HiddenLevels>,
    #[arg(long, default_value_t = 2)]
    hidden: usize,
    #[arg(long, default_value_t = 0.6)]
    beta: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    w_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    w_max: f64,
    #[arg(long, default_value_t = 601)]
    points: usize,
    /// Emit the w* table for these comma-separated betas instead of curves.
    #[arg(long, value_delimiter = ',')]
    w_star: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainDrbmArgs {
    #[arg(long)]
    mnist_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long = "s", value_parser = parse_level, default_value = "1")]
    levels: HiddenLevels,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalDrbmArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mnist_dir: PathBuf,
    /// Pixel noise standard deviation added to the test images.
    #[arg(long, default_value_t = 120.0)]
    sigma: f64,
    /// Evaluate only the first this many test images; 0 = all.
    #[arg(long, default_value_t = 0)]
    limit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn records(history: &[(usize, Vec<(String, f64)>)], seed: u64, config_id: &str) -> Vec<MetricsRecord> {
    history
        .iter()
        .flat_map(|(epoch, values)| {
            values.iter().map(move |(metric, value)| MetricsRecord {
                epoch: *epoch,
                metric: metric.clone(),
                value: *value,
                seed,
                config_id: config_id.to_string(),
            })
        })
        .collect()
}

fn load_rbm(path: &Path) -> Result<mvrbm::RbmParams> {
    match data_io::load_model(path)? {
        Model::Rbm(p) => Ok(p),
        Model::Drbm(_) => Err(Error::ModelSchema(format!("{} holds a drbm, expected an rbm", path.display()))),
    }
}

fn load_drbm(path: &Path) -> Result<DrbmParams> {
    match data_io::load_model(path)? {
        Model::Drbm(p) => Ok(p),
        Model::Rbm(_) => Err(Error::ModelSchema(format!("{} holds an rbm, expected a drbm", path.display()))),
    }
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let stream = RngStream::new(args.seed);
    let shape = RbmShape {
        n_visible: args.n_visible,
        n_hidden: args.n_hidden,
        levels: HiddenLevels::BINARY,
    };
    let generator = init_generative(shape, &mut stream.split(0))?;
    let data = generate_dataset(&generator, args.n_points, args.burn_in, args.thin, &mut stream.split(1))?;
    let model_path = args.out.join("generator.json");
    let data_path = args.out.join("data.txt");
    data_io::save_model(&model_path, &Model::Rbm(generator))?;
    let comments = [
        ("seed", args.seed.to_string()),
        ("burn_in", args.burn_in.to_string()),
        ("thin", args.thin.to_string()),
        ("generator_hidden", args.n_hidden.to_string()),
    ];
    let comments: Vec<(String, String)> = comments.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    data_io::save_spin_dataset(&data_path, &data, &comments)?;
    println!("generator={}", model_path.display());
    println!("data={}", data_path.display());
    Ok(())
}

fn train_rbm(args: &TrainRbmArgs) -> Result<()> {
    let data = data_io::load_spin_dataset(&args.data)?;
    let generator = args.generator.as_deref().map(load_rbm).transpose()?;
    let cfg = TrainConfig {
        optimizer: args.optimizer.config(OptimizerArg::Adam),
        epochs: args.epochs,
        batch_size: args.batch,
        cd_steps: args.cd_steps,
        seed: args.seed,
    };
    let stream = RngStream::new(args.seed);
    let shape = RbmShape {
        n_visible: data.n_visible(),
        n_hidden: args.hidden,
        levels: args.levels,
    };
    let start = init_trainee(shape, &mut stream.split(2))?;
    let config_id = fingerprint_of(&json!({
        "command": "train-rbm", "train": &cfg, "hidden": args.hidden, "s": args.levels,
        "data": args.data, "generator": args.generator, "seed": args.seed,
    }));
    let observe = |params: &mvrbm::RbmParams| -> Result<Vec<(String, f64)>> {
        let mut values = vec![("loglik_per_v".to_string(), log_likelihood_per_visible(params, &data)?)];
        if let Some(g) = &generator {
            values.push(("kld".to_string(), kld(g, params)?));
        }
        Ok(values)
    };
    let mut history = vec![(0, observe(&start)?)];
    let outcome = train(start, &data, &TrainConfig { seed: stream.child_seed(3), ..cfg }, |epoch, params| {
        history.push((epoch, observe(params)?));
        Ok(Vec::new())
    })?;
    let model_path = args.out.join("model.json");
    let metrics_path = args.out.join("metrics.csv");
    data_io::save_model(&model_path, &Model::Rbm(outcome.params))?;
    data_io::write_metrics_csv(&metrics_path, &records(&history, args.seed, &config_id))?;
    println!("model={}", model_path.display());
    println!("metrics={}", metrics_path.display());
    println!("updates={}", outcome.updates);
    Ok(())
}

fn eval_kld(args: &EvalKldArgs) -> Result<()> {
    let generator = load_rbm(&args.generator)?;
    let model = load_rbm(&args.model)?;
    println!("kld={}", kld(&generator, &model)?);
    if let Some(path) = &args.data {
        let data = data_io::load_spin_dataset(path)?;
        println!("loglik_per_v={}", log_likelihood_per_visible(&model, &data)?);
    }
    Ok(())
}

fn toy_curves(args: &ToyCurvesArgs) -> Result<()> {
    let settings = ToySettings {
        n_hidden: args.hidden,
        betas: args.w_star.clone().unwrap_or_default(),
        curve_beta: args.beta,
        w_min: args.w_min,
        w_max: args.w_max,
        grid_points: args.points,
    };
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Toy);
    cfg.seed = args.seed;
    cfg.levels = args.levels.clone();
    cfg.toy = Some(settings.clone());
    cfg.validate()?;
    let config_id = cfg.fingerprint();
    let text = match &args.w_star {
        Some(_) => {
            let rows = experiments::toy_w_star_table(&args.levels, &settings)?;
            experiments::toy_w_star_csv(&rows, args.seed, &config_id)
        }
        None => {
            let rows = experiments::toy_curves(&args.levels, &settings)?;
            experiments::toy_curves_csv(&rows, args.seed, &config_id)
        }
    };
    match &args.out {
        Some(path) => data_io::write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_drbm(args: &TrainDrbmArgs) -> Result<()> {
    let data = experiments::load_mnist(&args.mnist_dir)?;
    let stream = RngStream::new(args.seed);
    let train_set = experiments::mnist_training_subset(&data, args.n_train, args.classes, &mut stream.split(1))?;
    let cfg = TrainConfig {
        optimizer: args.optimizer.config(OptimizerArg::Adamax),
        epochs: args.epochs,
        batch_size: args.batch,
        cd_steps: 1,
        seed: stream.child_seed(3),
    };
    let start = DrbmParams::init_xavier(train_set.n_inputs(), args.hidden, args.classes, args.levels, &mut stream.split(2))?;
    let config_id = fingerprint_of(&json!({
        "command": "train-drbm", "train": &cfg, "hidden": args.hidden, "s": args.levels,
        "n_train": args.n_train, "classes": args.classes, "seed": args.seed,
    }));
    let mut history = vec![(0, vec![("train_error".to_string(), misclassification_rate(&start, &train_set)?)])];
    let outcome = run_epochs(
        start,
        train_set.len(),
        &cfg,
        |params, indices, _| mvrbm::drbm::drbm_gradient(params, &train_set.select(indices)?),
        |epoch, params| {
            history.push((epoch, vec![("train_error".to_string(), misclassification_rate(params, &train_set)?)]));
            Ok(Vec::new())
        },
    )?;
    let model_path = args.out.join("model.json");
    let metrics_path = args.out.join("metrics.csv");
    data_io::save_model(&model_path, &Model::Drbm(outcome.params))?;
    data_io::write_metrics_csv(&metrics_path, &records(&history, args.seed, &config_id))?;
    println!("model={}", model_path.display());
    println!("metrics={}", metrics_path.display());
    println!("updates={}", outcome.updates);
    Ok(())
}

fn eval_drbm(args: &EvalDrbmArgs) -> Result<()> {
    let model = load_drbm(&args.model)?;
    let data = experiments::load_mnist(&args.mnist_dir)?;
    let test = experiments::mnist_test_set(&data, args.sigma, args.limit, model.n_classes(), &mut RngStream::new(args.seed))?;
    println!("test_error={}", misclassification_rate(&model, &test)?);
    println!("n_test={}", test.len());
    Ok(())
}

fn run_experiment(kind: ExperimentKind, args: &RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind != kind {
        return Err(Error::InvalidConfig(format!("config is for kind {}, command expects {kind}", cfg.kind)));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(reps) = args.reps {
        cfg.repetitions = reps;
    }
    if let Some(levels) = &args.levels {
        cfg.levels = levels.clone();
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(r) = args.extra_hidden {
        match cfg.artificial.as_mut() {
            Some(a) => a.extra_hidden = r,
            None => return Err(Error::InvalidConfig("--extra-hidden applies to run-artificial only".into())),
        }
    }
    if let Some(dir) = &args.mnist_dir {
        match cfg.mnist.as_mut() {
            Some(m) => m.data_dir = dir.clone(),
            None => return Err(Error::InvalidConfig("--mnist-dir applies to run-mnist only".into())),
        }
    }
    cfg.plots |= args.plots;
    cfg.validate()?;
    let out = experiments::run(&cfg)?;
    println!("output={}", out.display());
    println!("config_id={}", cfg.fingerprint());
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::TrainRbm(a) => train_rbm(a),
        Command::EvalKld(a) => eval_kld(a),
        Command::ToyCurves(a) => toy_curves(a),
        Command::TrainDrbm(a) => train_drbm(a),
        Command::EvalDrbm(a) => eval_drbm(a),
        Command::RunArtificial(a) => run_experiment(ExperimentKind::Artificial, a),
        Command::RunToy(a) => run_experiment(ExperimentKind::Toy, a),
        Command::RunMnist(a) => run_experiment(ExperimentKind::Mnist, a),
    }
}

/// Collapses a message onto one line.
fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
