//! Command-line surface for the beat classification pipeline. Every
//! subcommand reads an optional TOML config, applies flag overrides, writes
//! its artifacts plus a manifest JSON next to them, and exits 0 on success.
//! Usage errors exit with clap's code (2); runtime failures exit 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cardiolat::beat::{self, Beat, BeatClass};
use cardiolat::gbdt::{self, GbdtConfig, GbdtModel};
use cardiolat::latent::{self, LatentOdeModel, TrainConfig};
use cardiolat::metrics;
use cardiolat::ode::SolverConfig;
use cardiolat::pipeline::{
    self, ExperimentManifest, SplitFractions,
};
use cardiolat::smote::{self, SmoteConfig};
use cardiolat::{Error, Result};

/// Keys accepted in the TOML config file; flags override these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    hidden_dim: Option<usize>,
    latent_dim: Option<usize>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    path_weight: Option<f64>,
    sigma_floor: Option<f64>,
    rtol: Option<f64>,
    atol: Option<f64>,
    initial_dt: Option<f64>,
    rounds: Option<usize>,
    max_depth: Option<usize>,
    gbdt_learning_rate: Option<f64>,
    reg_lambda: Option<f64>,
    min_samples_leaf: Option<usize>,
    early_stopping_patience: Option<usize>,
    smote_k: Option<usize>,
    grid_subsample: Option<Vec<usize>>,
    ensemble: Option<usize>,
    train_fraction: Option<f64>,
    val_fraction: Option<f64>,
    test_fraction: Option<f64>,
}

#[derive(Parser, Debug)]
#[command(
    name = "cardiolat",
    about = "ECG beat classification with a path-regularized latent ODE and gradient boosting",
    version
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness in the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a WFDB directory into a normalized beat corpus (JSONL).
    Ingest(IngestArgs),
    /// Train the latent ODE on a beat corpus.
    TrainOde(TrainOdeArgs),
    /// Encode beats into latent vectors with a trained model.
    Encode(EncodeArgs),
    /// Balance a latent export with SMOTE.
    Balance(BalanceArgs),
    /// Train the GBDT classifier on latent vectors.
    TrainGbdt(TrainGbdtArgs),
    /// Ensemble-predict classes for a beat corpus.
    Predict(PredictArgs),
    /// Run the full test evaluation, optionally across frequencies.
    Evaluate(EvaluateArgs),
    /// Combine per-frequency evaluation JSONs into one report CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of WFDB records (.hea/.dat/.atr). Falls back to the
    /// CARDIOLAT_CORPUS environment variable.
    #[arg(long)]
    wfdb_dir: Option<PathBuf>,
    /// Output beat corpus path (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainOdeArgs {
    /// Beat corpus (JSONL) to train on.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Path penalty weight (lambda).
    #[arg(long)]
    path_weight: Option<f64>,
    /// Cap on training beats (0 = all).
    #[arg(long, default_value_t = 0)]
    max_beats: usize,
    /// Stratify the split by record instead of by beat.
    #[arg(long, default_value_t = false)]
    split_by_patient: bool,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Trained latent ODE checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Output latent CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BalanceArgs {
    /// Latent CSV to balance.
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Nearest-neighbor pool size.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainGbdtArgs {
    /// Training latents (typically SMOTE-balanced).
    #[arg(long)]
    latents: PathBuf,
    /// Optional validation latents for early stopping.
    #[arg(long)]
    val_latents: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ode_model: PathBuf,
    #[arg(long)]
    gbdt_model: PathBuf,
    /// Output CSV of per-beat predictions.
    #[arg(long)]
    out: PathBuf,
    /// Ensemble size n.
    #[arg(long)]
    ensemble: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Test beat corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ode_model: PathBuf,
    #[arg(long)]
    gbdt_model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated sampling frequencies to evaluate, e.g. 360,90,45.
    #[arg(long, default_value = "360,90,45", value_delimiter = ',')]
    frequencies: Vec<u32>,
    #[arg(long)]
    ensemble: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation summary JSONs, one per frequency, in frequency order.
    #[arg(long, required = true, num_args = 1..)]
    summaries: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            toml::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), "config", e.to_string()))?
        }
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file_cfg.seed).unwrap_or(0);
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, seed),
        Command::TrainOde(args) => cmd_train_ode(args, &file_cfg, seed),
        Command::Encode(args) => cmd_encode(args, &file_cfg, seed),
        Command::Balance(args) => cmd_balance(args, &file_cfg, seed),
        Command::TrainGbdt(args) => cmd_train_gbdt(args, &file_cfg, seed),
        Command::Predict(args) => cmd_predict(args, &file_cfg, seed),
        Command::Evaluate(args) => cmd_evaluate(args, &file_cfg, seed),
        Command::Report(args) => cmd_report(args, seed),
    }
}

fn solver_from(cfg: &FileConfig) -> SolverConfig {
    let mut s = SolverConfig::default();
    if let Some(v) = cfg.rtol {
        s.rtol = v;
    }
    if let Some(v) = cfg.atol {
        s.atol = v;
    }
    if let Some(v) = cfg.initial_dt {
        s.initial_dt = v;
    }
    s
}

fn fractions_from(cfg: &FileConfig) -> SplitFractions {
    let mut f = SplitFractions::default();
    if let Some(v) = cfg.train_fraction {
        f.train = v;
    }
    if let Some(v) = cfg.val_fraction {
        f.val = v;
    }
    if let Some(v) = cfg.test_fraction {
        f.test = v;
    }
    f
}

fn manifest_for<T: Serialize>(command: &str, seed: u64, config: &T) -> Result<ExperimentManifest> {
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(ExperimentManifest::new(command, seed, json))
}

fn write_manifest(mut manifest: ExperimentManifest, outputs: &[&Path], dir: &Path) -> Result<()> {
    for out in outputs {
        manifest.add_output(out)?;
    }
    manifest.write(&dir.join("manifest.json"))
}

fn cmd_ingest(args: IngestArgs, seed: u64) -> Result<()> {
    let dir = args
        .wfdb_dir
        .or_else(|| std::env::var_os("CARDIOLAT_CORPUS").map(PathBuf::from))
        .ok_or_else(|| {
            Error::Invalid("no WFDB directory: pass --wfdb-dir or set CARDIOLAT_CORPUS".into())
        })?;
    let (beats, summary) = cardiolat::wfdb::ingest_corpus(&dir)?;
    beat::write_corpus(&args.out, &beats)?;
    println!(
        "records: {} (no MLII: {}), beats: {}, skipped: {}",
        summary.records, summary.records_without_mlii, summary.beats, summary.skipped_beats
    );
    let counts = count_classes(&beats);
    for class in BeatClass::ALL {
        println!("  {}: {}", class.as_str(), counts[class.index()]);
    }
    let manifest = manifest_for("ingest", seed, &summary)?;
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

fn cmd_train_ode(args: TrainOdeArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let beats = beat::read_corpus(&args.corpus)?;
    let mut train_cfg = TrainConfig {
        seed,
        solver: solver_from(cfg),
        ..TrainConfig::default()
    };
    if let Some(v) = args.hidden_dim.or(cfg.hidden_dim) {
        train_cfg.hidden_dim = v;
    }
    if let Some(v) = args.latent_dim.or(cfg.latent_dim) {
        train_cfg.latent_dim = v;
    }
    if let Some(v) = args.steps.or(cfg.steps) {
        train_cfg.steps = v;
    }
    if let Some(v) = args.batch_size.or(cfg.batch_size) {
        train_cfg.batch_size = v;
    }
    if let Some(v) = cfg.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.path_weight.or(cfg.path_weight) {
        train_cfg.path_weight = v;
    }
    if let Some(v) = cfg.sigma_floor {
        train_cfg.sigma_floor = v;
    }
    if let Some(v) = &cfg.grid_subsample {
        train_cfg.grid_subsample = v.clone();
    }

    let labels: Vec<BeatClass> = beats.iter().map(|b| b.label).collect();
    let split = if args.split_by_patient {
        split_by_record(&beats, &fractions_from(cfg), seed)?
    } else {
        pipeline::split_dataset(&labels, &fractions_from(cfg), seed)?
    };
    let mut train_beats: Vec<Beat> = split.train.iter().map(|&i| beats[i].clone()).collect();
    let val_beats: Vec<Beat> = split.val.iter().map(|&i| beats[i].clone()).collect();
    if args.max_beats > 0 && train_beats.len() > args.max_beats {
        train_beats.truncate(args.max_beats);
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let outcome = latent::train(&train_beats, &val_beats, &train_cfg, Some(&args.out_dir))?;
    if outcome.diverged {
        log::warn!("training diverged; the last good checkpoint was kept");
    }
    println!(
        "trained {} steps, best val mse {}",
        outcome.log.len(),
        outcome.best_val_mse
    );
    let mut manifest = manifest_for("train-ode", seed, &train_cfg)?;
    manifest.add_input(&args.corpus)?;
    write_manifest(
        manifest,
        &[
            &args.out_dir.join("model_best.json"),
            &args.out_dir.join("train_log.csv"),
        ],
        &args.out_dir,
    )
}

fn cmd_encode(args: EncodeArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let beats = beat::read_corpus(&args.corpus)?;
    let model = LatentOdeModel::load(&args.model)?;
    let solver = solver_from(cfg);
    let mut latents = Vec::with_capacity(beats.len());
    for (i, b) in beats.iter().enumerate() {
        let sample_seed = seed.wrapping_add(i as u64);
        latents.push(model.encode_sample(b, i as u64, sample_seed, &solver)?);
    }
    latent::write_latents(&args.out, &latents)?;
    println!("encoded {} beats", latents.len());
    let mut manifest = manifest_for("encode", seed, &solver)?;
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.model)?;
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

fn cmd_balance(args: BalanceArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let latents = latent::read_latents(&args.latents)?;
    let smote_cfg = SmoteConfig {
        k: args.k.or(cfg.smote_k).unwrap_or(5),
        seed,
    };
    let balanced = smote::balance(&latents, &smote_cfg)?;
    latent::write_latents(&args.out, &balanced)?;
    println!("balanced {} -> {} vectors", latents.len(), balanced.len());
    let mut manifest = manifest_for("balance", seed, &TomlSmote { k: smote_cfg.k })?;
    manifest.add_input(&args.latents)?;
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

#[derive(Serialize)]
struct TomlSmote {
    k: usize,
}

fn cmd_train_gbdt(args: TrainGbdtArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let latents = latent::read_latents(&args.latents)?;
    let xs: Vec<Vec<f64>> = latents.iter().map(|l| l.z0.clone()).collect();
    let ys: Vec<BeatClass> = latents.iter().map(|l| l.label).collect();
    let mut gbdt_cfg = GbdtConfig::default();
    if let Some(v) = args.rounds.or(cfg.rounds) {
        gbdt_cfg.rounds = v;
    }
    if let Some(v) = args.max_depth.or(cfg.max_depth) {
        gbdt_cfg.max_depth = v;
    }
    if let Some(v) = cfg.gbdt_learning_rate {
        gbdt_cfg.learning_rate = v;
    }
    if let Some(v) = cfg.reg_lambda {
        gbdt_cfg.reg_lambda = v;
    }
    if let Some(v) = cfg.min_samples_leaf {
        gbdt_cfg.min_samples_leaf = v;
    }
    if let Some(v) = cfg.early_stopping_patience {
        gbdt_cfg.early_stopping_patience = v;
    }
    let val_data = match &args.val_latents {
        Some(p) => {
            let v = latent::read_latents(p)?;
            Some((
                v.iter().map(|l| l.z0.clone()).collect::<Vec<_>>(),
                v.iter().map(|l| l.label).collect::<Vec<_>>(),
            ))
        }
        None => None,
    };
    let (model, report) = gbdt::train(
        &xs,
        &ys,
        val_data.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())),
        &gbdt_cfg,
    )?;
    model.save(&args.out)?;
    println!(
        "trained {} rounds (stopped early: {}), final train loss {:.6}",
        model.rounds(),
        report.stopped_early,
        report.train_loss.last().copied().unwrap_or(f64::NAN)
    );
    let mut manifest = manifest_for("train-gbdt", seed, &gbdt_cfg)?;
    manifest.add_input(&args.latents)?;
    if let Some(p) = &args.val_latents {
        manifest.add_input(p)?;
    }
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

fn cmd_predict(args: PredictArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let beats = beat::read_corpus(&args.corpus)?;
    let encoder = LatentOdeModel::load(&args.ode_model)?;
    let classifier = GbdtModel::load(&args.gbdt_model)?;
    let solver = solver_from(cfg);
    let n = args.ensemble.or(cfg.ensemble).unwrap_or(9);
    let mut w = csv::Writer::from_path(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), std::io::Error::other(e)))?;
    let mut header = vec!["beat_id".to_string(), "label".to_string(), "predicted".to_string()];
    header.extend(BeatClass::ALL.iter().map(|c| format!("p_{}", c.as_str())));
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for (i, b) in beats.iter().enumerate() {
        let p = pipeline::predict_ensemble(
            &encoder,
            &classifier,
            b,
            n,
            seed.wrapping_add((i as u64) << 32),
            &solver,
        )?;
        let mut row = vec![
            i.to_string(),
            b.label.as_str().to_string(),
            p.final_class.as_str().to_string(),
        ];
        row.extend(p.mean_probs.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!("predicted {} beats (ensemble {n})", beats.len());
    let mut manifest = manifest_for("predict", seed, &solver)?;
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.ode_model)?;
    manifest.add_input(&args.gbdt_model)?;
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

fn cmd_evaluate(args: EvaluateArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let beats = beat::read_corpus(&args.corpus)?;
    let encoder = LatentOdeModel::load(&args.ode_model)?;
    let classifier = GbdtModel::load(&args.gbdt_model)?;
    let solver = solver_from(cfg);
    let n = args.ensemble.or(cfg.ensemble).unwrap_or(9);
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;

    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut results = Vec::new();
    for &freq in &args.frequencies {
        if freq == 0 || 360 % freq != 0 {
            return Err(Error::Invalid(format!("frequency {freq} does not divide 360")));
        }
        let factor = (360 / freq) as usize;
        let eval_beats: Vec<Beat> = if factor == 1 {
            beats.clone()
        } else {
            beats
                .iter()
                .map(|b| beat::downsample(b, factor))
                .collect::<Result<_>>()?
        };
        let summary = pipeline::evaluate(&encoder, &classifier, &eval_beats, n, seed, &solver)?;
        println!(
            "{freq} Hz: macro AUC {:.4}, macro F1 {:.4}, accuracy {:.4}",
            summary.macro_auc, summary.macro_f1, summary.overall_accuracy
        );
        let stem = format!("eval_{freq}hz");
        metrics::emit_report(&args.out_dir, &stem, &summary)?;
        outputs.push(args.out_dir.join(format!("{stem}.json")));
        results.push((freq, summary));
    }
    let combined = args.out_dir.join("report.csv");
    write_combined_report(&combined, &results)?;
    outputs.push(combined);

    let mut manifest = manifest_for("evaluate", seed, &solver)?;
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.ode_model)?;
    manifest.add_input(&args.gbdt_model)?;
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(manifest, &refs, &args.out_dir)
}

fn cmd_report(args: ReportArgs, seed: u64) -> Result<()> {
    let mut results = Vec::new();
    for path in &args.summaries {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let summary: metrics::EvalSummary =
            serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        // Frequency is recovered from the file stem (eval_<freq>hz.json).
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let freq: u32 = stem
            .trim_start_matches("eval_")
            .trim_end_matches("hz")
            .parse()
            .map_err(|_| {
                Error::Invalid(format!("cannot infer frequency from file name {stem:?}"))
            })?;
        results.push((freq, summary));
    }
    write_combined_report(&args.out, &results)?;
    println!("combined {} summaries", results.len());
    let mut manifest = manifest_for("report", seed, &())?;
    for p in &args.summaries {
        manifest.add_input(p)?;
    }
    write_manifest(manifest, &[&args.out], parent_of(&args.out))
}

/// Table-1-style layout: per-class rows per frequency, then one
/// macro-averaged row per frequency at the bottom.
fn write_combined_report(path: &Path, results: &[(u32, metrics::EvalSummary)]) -> Result<()> {
    use std::io::Write;
    if results.is_empty() {
        return Err(Error::Invalid("no evaluation summaries to combine".into()));
    }
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "frequency_hz,class,support,accuracy_pct,precision,recall,f1,auc").map_err(io_err)?;
    for (freq, s) in results {
        for (cm, auc) in s.per_class.iter().zip(s.per_class_auc.iter()) {
            writeln!(
                w,
                "{},{},{},{:.4},{:.6},{:.6},{:.6},{:.6}",
                freq,
                cm.class.as_str(),
                cm.support,
                cm.accuracy_pct,
                cm.precision,
                cm.recall,
                cm.f1,
                auc
            )
            .map_err(io_err)?;
        }
    }
    for (freq, s) in results {
        writeln!(
            w,
            "{},macro,{},{:.4},,,{:.6},{:.6}",
            freq,
            s.n_samples,
            s.overall_accuracy * 100.0,
            s.macro_f1,
            s.macro_auc
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Record-level split: whole records are assigned to partitions, then
/// translated back to beat indices.
fn split_by_record(
    beats: &[Beat],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<pipeline::Split> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut records: Vec<&str> = beats.iter().map(|b| b.record_name.as_str()).collect();
    records.sort_unstable();
    records.dedup();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = records.clone();
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = ((n as f64) * fractions.train).round() as usize;
    let n_val = ((n as f64) * fractions.val).round() as usize;
    let in_train = &shuffled[..n_train.min(n)];
    let in_val = &shuffled[n_train.min(n)..(n_train + n_val).min(n)];
    let mut split = pipeline::Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, b) in beats.iter().enumerate() {
        if in_train.contains(&b.record_name.as_str()) {
            split.train.push(i);
        } else if in_val.contains(&b.record_name.as_str()) {
            split.val.push(i);
        } else {
            split.test.push(i);
        }
    }
    Ok(split)
}

fn count_classes(beats: &[Beat]) -> [usize; BeatClass::COUNT] {
    let mut counts = [0usize; BeatClass::COUNT];
    for b in beats {
        counts[b.label.index()] += 1;
    }
    counts
}

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}
