use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use disgan_core::classifier::{freeze, train_classifier, ClassifierNet};
use disgan_core::config::RunConfig;
use disgan_core::data::{Dataset, Label};
use disgan_core::diff::Rng;
use disgan_core::explain::{self, distance_curve_report, evaluate_scores};
use disgan_core::gan::GanBundle;
use disgan_core::persist;
use disgan_core::pipeline::{self, run_algorithm1, run_loop, AugmentationArchive, RunOutput};
use disgan_core::plot::export_scatter;

#[derive(Parser, Debug)]
#[command(name = "disgan", version, about = "Distance-guided adversarial augmentation for binary vector data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with flat dotted keys, e.g. `gan.lambda_ver_dis = 0.1`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    lambda_ver_dis: Option<f64>,
    #[arg(long, global = true)]
    lambda_hor_dis: Option<f64>,
    /// Divide vertical distances by the norm of the output weights.
    #[arg(long, global = true)]
    normalize_vertical: bool,
    /// Start C' from the trained classifier instead of a fresh network.
    #[arg(long, global = true)]
    warm_start_cprime: bool,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset and write train/validation/test CSVs.
    GenData,
    /// Train the hinge classifier.
    TrainClf {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Add jittered copies of every training sample first.
        #[arg(long)]
        ta: bool,
        #[arg(long, default_value = "classifier.model")]
        output: String,
    },
    /// Freeze a trained classifier and train the four generators.
    TrainDisgan {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Run the full augmentation loop and write the archive and C'.
    Augment {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Apply jitter augmentation before the loop.
        #[arg(long)]
        ta: bool,
    },
    /// Accuracy and AUC of one or more classifiers on a test set.
    Eval {
        #[arg(long)]
        test: Option<PathBuf>,
        /// `name=path` pairs; defaults to classifier.model and c_prime.model.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Class-difference maps and distance-reconstruction curves.
    Explain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Scatter of real and generated samples with the decision boundary.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(default))
    }

    fn provenance(&self) -> Value {
        json!({
            "seed": self.cfg.seed,
            "config_hash": self.cfg.hash(),
            "config": self.cfg.to_flat_toml(),
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        info!("wrote {}", p.display());
        Ok(p)
    }

    fn report(&self, name: &str, mut body: Value) -> Result<()> {
        body["provenance"] = self.provenance();
        self.write(name, &(serde_json::to_string_pretty(&body)? + "\n"))?;
        Ok(())
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.dataset.seed = s;
    }
    if let Some(v) = c.lambda_ver_dis {
        cfg.gan.lambda_ver_dis = v;
    }
    if let Some(v) = c.lambda_hor_dis {
        cfg.gan.lambda_hor_dis = v;
    }
    if c.normalize_vertical {
        cfg.gan.normalize_vertical = true;
    }
    if c.warm_start_cprime {
        cfg.train.warm_start_cprime = true;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
        cfg.train.warm_epochs = cfg.train.warm_epochs.min(e);
    }
    if let Some(b) = c.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn read_dataset(p: &Path) -> Result<Dataset> {
    Dataset::read_csv(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn with_ta(ctx: &Ctx, data: Dataset, enabled: bool) -> Result<Dataset> {
    if !enabled {
        return Ok(data);
    }
    let mut rng = Rng::new(ctx.cfg.seed ^ 0x7a7a_7a7a);
    Ok(pipeline::traditional_augmentation(&data, ctx.cfg.ta.copies, ctx.cfg.ta.sigma, &mut rng)?)
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let splits = ctx.cfg.dataset.generate()?;
    for (name, d) in [("train.csv", &splits.train), ("validation.csv", &splits.validation), ("test.csv", &splits.test)] {
        ctx.write(name, &d.to_csv())?;
    }
    ctx.report(
        "gen_data_report.json",
        json!({
            "train_rows": splits.train.len(),
            "validation_rows": splits.validation.len(),
            "test_rows": splits.test.len(),
        }),
    )
}

fn train_clf(ctx: &Ctx, train: &Option<PathBuf>, ta: bool, output: &str) -> Result<()> {
    let data = with_ta(ctx, read_dataset(&ctx.input(train, "train.csv"))?, ta)?;
    let trained = train_classifier(&data, &ctx.cfg.classifier, &mut Rng::new(ctx.cfg.seed))?;
    let scores = trained.net.scores(&data.features()?)?;
    let acc = explain::accuracy(&scores, &data.labels())?;
    info!("training accuracy {acc}");
    ctx.write(output, &persist::classifier_to_string(&trained.net))?;
    ctx.report(
        &format!("{}_report.json", output.trim_end_matches(".model")),
        json!({
            "traditional_augmentation": ta,
            "train_rows": data.len(),
            "train_accuracy": acc,
            "loss_trace": trained.loss_trace,
        }),
    )
}

fn write_run(ctx: &Ctx, out: &RunOutput, full: bool) -> Result<()> {
    ctx.write("bundle.model", &persist::bundle_to_string(&out.bundle))?;
    ctx.write("loss_trace.csv", &out.report.loss_trace_csv())?;
    if full {
        ctx.write("classifier.model", &persist::classifier_to_string(&out.classifier))?;
        ctx.write("c_prime.model", &persist::classifier_to_string(&out.c_prime))?;
        ctx.write("archive.csv", &out.archive.to_csv())?;
    }
    let r = &out.report;
    ctx.report(
        if full { "augment_report.json" } else { "disgan_report.json" },
        json!({
            "iterations_per_epoch": r.iterations_per_epoch,
            "total_iterations": r.total_iterations,
            "archive_size": out.archive.len(),
            "clamp_events": r.clamp_events,
            "degenerate_samples": r.degenerate_samples,
            "cycle_loss_epoch_means": r.cycle_means(),
            "cprime_trace": r.cprime_trace,
            "index_wrap": r.wrap_note,
        }),
    )
}

fn train_disgan(ctx: &Ctx, train: &Option<PathBuf>, classifier: &Option<PathBuf>) -> Result<()> {
    let data = read_dataset(&ctx.input(train, "train.csv"))?;
    let cpath = ctx.input(classifier, "classifier.model");
    let net = persist::load_classifier(&cpath).with_context(|| format!("reading classifier {}", cpath.display()))?;
    let mut rng = Rng::new(ctx.cfg.seed);
    let bundle = GanBundle::new(Arc::new(freeze(&net)), &ctx.cfg.gan, &mut rng.split())?;
    let out = run_loop(&data, net, Vec::new(), bundle, &ctx.cfg.classifier, &ctx.cfg.train, &mut rng)?;
    write_run(ctx, &out, false)
}

fn augment(ctx: &Ctx, train: &Option<PathBuf>, ta: bool) -> Result<()> {
    let data = with_ta(ctx, read_dataset(&ctx.input(train, "train.csv"))?, ta)?;
    let out = run_algorithm1(&data, &ctx.cfg.classifier, &ctx.cfg.gan, &ctx.cfg.train, ctx.cfg.seed)?;
    write_run(ctx, &out, true)
}

fn eval(ctx: &Ctx, test: &Option<PathBuf>, models: &[String]) -> Result<()> {
    let data = read_dataset(&ctx.input(test, "test.csv"))?;
    let pairs: Vec<(String, PathBuf)> = if models.is_empty() {
        ["classifier", "c_prime"]
            .iter()
            .map(|n| (n.to_string(), ctx.path(&format!("{n}.model"))))
            .collect()
    } else {
        models
            .iter()
            .map(|m| match m.split_once('=') {
                Some((n, p)) => Ok((n.to_string(), PathBuf::from(p))),
                None => bail!("--model expects name=path, got `{m}`"),
            })
            .collect::<Result<_>>()?
    };
    let mut csv = String::from("model,accuracy,auc\n");
    let mut rows = Vec::new();
    for (name, path) in pairs {
        let net: ClassifierNet = persist::load_classifier(&path).with_context(|| format!("reading model {}", path.display()))?;
        let m = evaluate_scores(ctx.cfg.seed, &net.scores(&data.features()?)?, &data)?;
        csv.push_str(&format!("{name},{},{}\n", m.accuracy, m.auc));
        rows.push(json!({"model": name, "accuracy": m.accuracy, "auc": m.auc}));
    }
    ctx.write("eval.csv", &csv)?;
    ctx.report("eval_report.json", json!({ "test_rows": data.len(), "models": rows }))
}

fn explain_cmd(ctx: &Ctx, data: &Option<PathBuf>, bundle: &Option<PathBuf>) -> Result<()> {
    let data = read_dataset(&ctx.input(data, "test.csv"))?;
    let bpath = ctx.input(bundle, "bundle.model");
    let bundle = persist::load_bundle(&bpath).with_context(|| format!("reading bundle {}", bpath.display()))?;
    let mut csv = String::from("domain");
    for d in 1..=data.dim() {
        csv.push_str(&format!(",f{d}"));
    }
    for d in 1..=data.dim() {
        csv.push_str(&format!(",cdm{d}"));
    }
    csv.push('\n');
    for s in data.samples() {
        let map = explain::cdm(&bundle, &s.features, s.label)?;
        csv.push_str(if s.label == Label::X { "X" } else { "Y" });
        for v in s.features.iter().chain(&map.values) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    ctx.write("cdm.csv", &csv)?;
    let curve = distance_curve_report(&bundle, &data)?;
    ctx.write("distance_curve.csv", &curve.to_csv())?;
    ctx.report(
        "explain_report.json",
        json!({ "vertical_pearson": curve.vertical_r, "horizontal_pearson": curve.horizontal_r }),
    )
}

fn plot(ctx: &Ctx, data: &Option<PathBuf>, archive: &Option<PathBuf>, bundle: &Option<PathBuf>) -> Result<()> {
    let data = read_dataset(&ctx.input(data, "train.csv"))?;
    let apath = ctx.input(archive, "archive.csv");
    let archive = if archive.is_some() || apath.exists() {
        AugmentationArchive::read_csv(&apath).with_context(|| format!("reading archive {}", apath.display()))?
    } else {
        AugmentationArchive::new(data.dim())
    };
    let bpath = ctx.input(bundle, "bundle.model");
    let bundle = persist::load_bundle(&bpath).with_context(|| format!("reading bundle {}", bpath.display()))?;
    let out = export_scatter(&data, &archive, bundle.aux(), &ctx.path("scatter"))?;
    info!("wrote {} ({} rows)", out.csv.display(), out.rows);
    if let Some(svg) = &out.svg {
        info!("wrote {}", svg.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    fs::create_dir_all(&cli.common.out_dir).with_context(|| format!("creating {}", cli.common.out_dir.display()))?;
    let ctx = Ctx {
        cfg,
        out: cli.common.out_dir.clone(),
    };
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainClf { train, ta, output } => train_clf(&ctx, train, *ta, output),
        Command::TrainDisgan { train, classifier } => train_disgan(&ctx, train, classifier),
        Command::Augment { train, ta } => augment(&ctx, train, *ta),
        Command::Eval { test, models } => eval(&ctx, test, models),
        Command::Explain { data, bundle } => explain_cmd(&ctx, data, bundle),
        Command::Plot { data, archive, bundle } => plot(&ctx, data, archive, bundle),
    }
}
