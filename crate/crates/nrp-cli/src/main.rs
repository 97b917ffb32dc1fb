//! Command-line pipeline: train the A/B/C variants, embed inputs through the
//! last hidden layer or per-sample gradients, evaluate hidden-class recovery
//! with kNN, and emit comparison reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nrp::data::{
    even_odd_map, group_labels, load_csv, load_idx_pair, split, synthetic_digits,
    synthetic_tabular, tomek_links_filter, CsvSchema, DatasetManifest, LabeledDataset,
    StratifyOn,
};
use nrp::diagnostics::{correlation_report, jl_min_width, JlBoundQuery, DEFAULT_CORRELATION_BINS};
use nrp::nn::ModelConfig;
use nrp::persist::{load_embeddings, load_model, save_embeddings, save_model_seeded};
use nrp::report::{ExperimentReport, ReportRow};
use nrp::similarity::{
    accuracy, embed_gradients, embed_last_hidden, f1_micro, knn_predict_labels, EmbedPoint,
    EmbeddingSet, Metric, SourceTag,
};
use nrp::train::{train, RegularizationSpec, TrainConfig};
use nrp::{Model, RngState, Variant};

#[derive(Parser)]
#[command(name = "nrp", version, about = "Input similarity via last-hidden-layer embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model variant and save it with its training history.
    Train(TrainCmd),
    /// Embed a dataset through a saved model.
    Embed(EmbedCmd),
    /// Evaluate saved embeddings with a kNN classifier.
    KnnEval(KnnEvalCmd),
    /// Train all three variants and emit the full comparison report.
    Compare(CompareCmd),
    /// Print the Johnson-Lindenstrauss minimum embedding width.
    JlBound(JlBoundCmd),
}

/// Dataset selection shared by the pipeline commands. Exactly one source:
/// an IDX image/label pair, a CSV file, or a synthetic generator.
#[derive(Args, Clone)]
struct DataArgs {
    /// IDX image file (big-endian, magic 0x00000803).
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// IDX label file (big-endian, magic 0x00000801).
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Label column name for --csv.
    #[arg(long)]
    label_column: Option<String>,
    /// Categorical CSV column, `NAME` or `NAME:level1|level2|...`.
    #[arg(long)]
    categorical: Vec<String>,
    /// Impute missing CSV cells with the column mean.
    #[arg(long)]
    impute: bool,
    /// Generate N synthetic digit images.
    #[arg(long, value_name = "N")]
    synthetic_digits: Option<usize>,
    /// Generate N synthetic tabular rows.
    #[arg(long, value_name = "N")]
    synthetic_tabular: Option<usize>,
    /// Feature count for --synthetic-tabular.
    #[arg(long, default_value_t = 20)]
    dims: usize,
    /// Pixel noise for --synthetic-digits.
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    /// Within-class spread for --synthetic-tabular.
    #[arg(long, default_value_t = 0.8)]
    overlap: f64,
    /// Hidden-to-binary grouping: `even-odd`, `identity`, or `0:0,1:1,...`.
    #[arg(long)]
    grouping: Option<String>,
    /// Cap the training split at N rows (after the split).
    #[arg(long, value_name = "N")]
    max_train: Option<usize>,
    /// Fraction of rows held out as the test split.
    #[arg(long, default_value_t = 1.0 / 6.0)]
    test_fraction: f64,
    /// Standardize features with train-split statistics.
    #[arg(long)]
    standardize: bool,
    /// Remove Tomek links from the training split.
    #[arg(long)]
    tomek: bool,
}

#[derive(Args, Clone)]
struct TrainKnobs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Multiplicative decay applied every --lr-decay-every steps (0 = off).
    #[arg(long, default_value_t = 1.0)]
    lr_decay_factor: f64,
    #[arg(long, default_value_t = 0)]
    lr_decay_every: usize,
    #[arg(long, default_value_t = 0.1)]
    validation_split: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "64,32")]
    hidden: String,
    /// Dropout keep probability for variants B and C.
    #[arg(long, default_value_t = 0.9)]
    keep_prob: f64,
    /// Orthogonality penalty weight for variants B and C.
    #[arg(long, default_value_t = 0.1)]
    ortho_lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    l2_weights: f64,
    #[arg(long, default_value_t = 0.0)]
    l2_bias: f64,
    /// Exempt the first dense layer from the orthogonality penalty.
    #[arg(long)]
    exempt_first_layer: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[arg(long, value_parser = Variant::from_str)]
    variant: Variant,
    /// Output directory (model files, history.csv, dataset.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedCmd {
    #[command(flatten)]
    data: DataArgs,
    /// Saved model directory.
    #[arg(long)]
    model: PathBuf,
    /// Representation: `last-hidden` or `gradient`.
    #[arg(long, default_value = "last-hidden")]
    kind: String,
    /// Embedding point for last-hidden: `pre` or `post` activation.
    #[arg(long, default_value = "pre")]
    point: String,
    /// Which split to embed: `train`, `test`, or `all`.
    #[arg(long, default_value = "all")]
    take: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (embeddings.bin/.json, labels.txt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KnnEvalCmd {
    /// Reference embedding directory (from `embed`).
    #[arg(long)]
    train: PathBuf,
    /// Query embedding directory (from `embed`).
    #[arg(long)]
    test: PathBuf,
    /// Reference labels, one integer per line (default: labels.txt in --train).
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// Query labels, one integer per line (default: labels.txt in --test).
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    k: usize,
    /// `l2` or `cosine` (default: the embedding's recommendation).
    #[arg(long)]
    metric: Option<String>,
    /// Metrics JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[arg(long, default_value_t = 9)]
    k: usize,
    /// Variant whose per-sample gradients form the baseline row.
    #[arg(long, default_value = "A", value_parser = Variant::from_str)]
    gradient_variant: Variant,
    /// Reference rows for the gradient baseline (its vectors are n_theta wide).
    #[arg(long, default_value_t = 600)]
    grad_refs: usize,
    /// Query rows for the gradient baseline.
    #[arg(long, default_value_t = 300)]
    grad_queries: usize,
    /// Output directory (report.json, report.txt, corr_<variant>.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JlBoundCmd {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(cmd) => cmd_train(cmd),
        Command::Embed(cmd) => cmd_embed(cmd),
        Command::KnnEval(cmd) => cmd_knn_eval(cmd),
        Command::Compare(cmd) => cmd_compare(cmd),
        Command::JlBound(cmd) => cmd_jl_bound(cmd),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Verify every referenced input path exists before any output is created.
/// Missing data is a usage-level failure: exit 2, no partial output.
fn require_paths(args: &DataArgs) {
    let mut missing = Vec::new();
    for path in [&args.idx_images, &args.idx_labels, &args.csv]
        .into_iter()
        .flatten()
    {
        if !path.exists() {
            missing.push(path.clone());
        }
    }
    if !missing.is_empty() {
        for path in missing {
            eprintln!("error: data path not found: {}", path.display());
        }
        std::process::exit(2);
    }
}

fn parse_grouping(spec: &str, dataset: &LabeledDataset) -> Result<BTreeMap<usize, u8>> {
    match spec {
        "even-odd" => Ok(even_odd_map()),
        "identity" => {
            let classes: std::collections::BTreeSet<usize> =
                dataset.hidden_labels.iter().copied().collect();
            if classes.iter().any(|&c| c > 1) {
                bail!("identity grouping needs hidden labels in {{0, 1}}");
            }
            Ok(classes.into_iter().map(|c| (c, c as u8)).collect())
        }
        other => other
            .split(',')
            .map(|pair| {
                let (k, v) = pair
                    .split_once(':')
                    .with_context(|| format!("bad grouping entry {pair:?}"))?;
                Ok((k.trim().parse()?, v.trim().parse()?))
            })
            .collect(),
    }
}

fn parse_categorical(specs: &[String]) -> BTreeMap<String, Option<Vec<String>>> {
    specs
        .iter()
        .map(|spec| match spec.split_once(':') {
            Some((name, levels)) => (
                name.to_string(),
                Some(levels.split('|').map(str::to_string).collect()),
            ),
            None => (spec.clone(), None),
        })
        .collect()
}

struct PreparedData {
    train: LabeledDataset,
    test: LabeledDataset,
    manifest: DatasetManifest,
}

fn load_data(args: &DataArgs, seed: u64) -> Result<PreparedData> {
    require_paths(args);
    let mut preprocessing = Vec::new();
    let mut dataset = match (
        &args.idx_images,
        &args.csv,
        args.synthetic_digits,
        args.synthetic_tabular,
    ) {
        (Some(images), None, None, None) => {
            let labels = args
                .idx_labels
                .as_ref()
                .context("--idx-images needs --idx-labels")?;
            load_idx_pair(images, labels)?
        }
        (None, Some(path), None, None) => {
            let label_column = args
                .label_column
                .as_ref()
                .context("--csv needs --label-column")?;
            let schema = CsvSchema {
                categorical: parse_categorical(&args.categorical),
                impute_missing: args.impute,
            };
            load_csv(path, label_column, &schema)?
        }
        (None, None, Some(n), None) => synthetic_digits(n, seed, args.noise)?,
        (None, None, None, Some(n)) => synthetic_tabular(n, args.dims, seed, args.overlap)?,
        _ => bail!(
            "select exactly one data source: --idx-images/--idx-labels, --csv, \
             --synthetic-digits, or --synthetic-tabular"
        ),
    };

    // Synthetic tabular rows come pre-grouped; everything else defaults to
    // the even/odd digit task unless a grouping is given.
    let grouping_spec = match &args.grouping {
        Some(spec) => Some(spec.clone()),
        None if args.synthetic_tabular.is_some() => None,
        None => Some("even-odd".to_string()),
    };
    if let Some(spec) = &grouping_spec {
        let map = parse_grouping(spec, &dataset)?;
        dataset = group_labels(&dataset, map)?;
    }

    let (mut train_set, mut test_set) =
        split(&dataset, args.test_fraction, seed, StratifyOn::Hidden)?;
    if let Some(cap) = args.max_train {
        if cap < train_set.len() {
            let idx: Vec<usize> = (0..cap).collect();
            train_set = train_set.select(&idx);
            preprocessing.push(format!("max_train {cap}"));
        }
    }
    if args.tomek {
        let before = train_set.len();
        train_set = tomek_links_filter(&train_set)?;
        preprocessing.push(format!(
            "tomek_links_filter removed {}",
            before - train_set.len()
        ));
    }
    if args.standardize {
        train_set.standardize()?;
        let stats = train_set.stats.clone().expect("standardize records stats");
        test_set.apply_stats(&stats)?;
        preprocessing.push("standardize (train statistics)".to_string());
    }
    let manifest = DatasetManifest {
        grouping: train_set.grouping.clone(),
        split_seed: seed,
        test_fraction: args.test_fraction,
        preprocessing,
    };
    Ok(PreparedData { train: train_set, test: test_set, manifest })
}

fn train_config(knobs: &TrainKnobs) -> TrainConfig {
    TrainConfig {
        epochs: knobs.epochs,
        batch_size: knobs.batch_size,
        learning_rate: knobs.learning_rate,
        lr_decay_factor: knobs.lr_decay_factor,
        lr_decay_every: knobs.lr_decay_every,
        validation_split: knobs.validation_split,
        seed: knobs.seed,
        shuffle: true,
    }
}

fn hidden_widths(knobs: &TrainKnobs) -> Result<Vec<usize>> {
    knobs
        .hidden
        .split(',')
        .map(|w| w.trim().parse::<usize>().context("bad --hidden width"))
        .collect()
}

fn build_and_train(
    variant: Variant,
    train_set: &LabeledDataset,
    knobs: &TrainKnobs,
    init_stream: u64,
) -> Result<(Model, nrp::train::History)> {
    let config = ModelConfig::new(train_set.features.cols(), hidden_widths(knobs)?)
        .with_keep_prob(knobs.keep_prob);
    let mut rng = RngState::new(knobs.seed).child(init_stream);
    let mut model = Model::new(variant, &config, &mut rng)?;
    let mut regs = match variant {
        Variant::A => RegularizationSpec::l2_only(knobs.l2_weights),
        Variant::B | Variant::C => {
            let mut r = RegularizationSpec::orthogonal(knobs.ortho_lambda, knobs.l2_bias);
            r.l2_weights = knobs.l2_weights;
            r
        }
    };
    if knobs.exempt_first_layer {
        regs = regs.exempt(0);
    }
    let history = train(&mut model, train_set, &train_config(knobs), &regs)?;
    Ok((model, history))
}

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let data = load_data(&cmd.data, cmd.knobs.seed)?;
    let (model, history) = build_and_train(cmd.variant, &data.train, &cmd.knobs, 0)?;
    std::fs::create_dir_all(&cmd.out)?;
    save_model_seeded(&model, &cmd.out, Some(cmd.knobs.seed))?;
    std::fs::write(cmd.out.join("history.csv"), history.to_csv())?;
    std::fs::write(
        cmd.out.join("dataset.json"),
        serde_json::to_vec_pretty(&data.manifest)?,
    )?;
    let last = history.epochs.last().context("no completed epochs")?;
    println!(
        "trained variant {} ({} params): val_loss {:.6}, val_acc {:.4}",
        cmd.variant,
        model.param_count(),
        last.val_loss,
        last.val_accuracy
    );
    Ok(())
}

/// Stack two datasets row-wise (train rows first, then test rows).
fn concat_datasets(a: &LabeledDataset, b: &LabeledDataset) -> Result<LabeledDataset> {
    let cols = a.features.cols();
    if b.features.cols() != cols {
        bail!("datasets have mismatched feature widths");
    }
    let mut data = Vec::with_capacity((a.len() + b.len()) * cols);
    for part in [a, b] {
        for i in 0..part.len() {
            data.extend_from_slice(part.features.row(i));
        }
    }
    let features = nrp::linalg::Matrix::from_vec(a.len() + b.len(), cols, data)?;
    let hidden: Vec<usize> = a
        .hidden_labels
        .iter()
        .chain(&b.hidden_labels)
        .copied()
        .collect();
    Ok(LabeledDataset::new(features, hidden, a.grouping.clone())?)
}

fn embed_point(point: &str) -> Result<EmbedPoint> {
    match point {
        "pre" => Ok(EmbedPoint::PreActivation),
        "post" => Ok(EmbedPoint::PostActivation),
        other => bail!("unknown --point {other:?} (expected pre or post)"),
    }
}

fn cmd_embed(cmd: EmbedCmd) -> Result<()> {
    if !cmd.model.exists() {
        eprintln!("error: data path not found: {}", cmd.model.display());
        std::process::exit(2);
    }
    let data = load_data(&cmd.data, cmd.seed)?;
    let subset = match cmd.take.as_str() {
        "train" => data.train,
        "test" => data.test,
        "all" => concat_datasets(&data.train, &data.test)?,
        other => bail!("unknown --take {other:?} (expected train, test, or all)"),
    };
    let (model, fingerprint) = load_model(&cmd.model)?;
    let started = Instant::now();
    let mut set = match cmd.kind.as_str() {
        "last-hidden" => embed_last_hidden(&model, &subset.features, embed_point(&cmd.point)?)?,
        "gradient" => embed_gradients(&model, &subset.features)?,
        other => bail!("unknown --kind {other:?} (expected last-hidden or gradient)"),
    };
    let seconds = started.elapsed().as_secs_f64();
    set.model_fingerprint = Some(fingerprint.content_hash.clone());
    save_embeddings(&set, &cmd.out, Some(seconds))?;
    let labels: Vec<String> = subset.hidden_labels.iter().map(|l| l.to_string()).collect();
    std::fs::write(cmd.out.join("labels.txt"), labels.join("\n") + "\n")?;
    println!(
        "embedded {} rows into {} dimensions in {seconds:.3}s",
        set.len(),
        set.dim()
    );
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<usize>().context("bad label line"))
        .collect()
}

fn cmd_knn_eval(cmd: KnnEvalCmd) -> Result<()> {
    for dir in [&cmd.train, &cmd.test] {
        if !dir.exists() {
            eprintln!("error: data path not found: {}", dir.display());
            std::process::exit(2);
        }
    }
    let (train_set, train_sidecar) = load_embeddings(&cmd.train)?;
    let (test_set, _) = load_embeddings(&cmd.test)?;
    let train_labels = read_labels(
        &cmd.train_labels
            .unwrap_or_else(|| cmd.train.join("labels.txt")),
    )?;
    let test_labels = read_labels(
        &cmd.test_labels
            .unwrap_or_else(|| cmd.test.join("labels.txt")),
    )?;
    let metric = match &cmd.metric {
        Some(m) => Metric::from_str(m)?,
        None => train_sidecar.metric_recommendation,
    };
    let started = Instant::now();
    let pred = knn_predict_labels(&train_set, &train_labels, &test_set, cmd.k, metric)?;
    let seconds = started.elapsed().as_secs_f64();
    let metrics = serde_json::json!({
        "k": cmd.k,
        "metric": metric,
        "accuracy": accuracy(&pred, &test_labels)?,
        "f1_micro": f1_micro(&pred, &test_labels)?,
        "knn_prediction_seconds": seconds,
        "n_train": train_set.len(),
        "n_test": test_set.len(),
        "dimension": train_set.dim(),
    });
    let rendered = serde_json::to_string_pretty(&metrics)?;
    match cmd.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn knn_row(
    name: &str,
    model_acc: Option<f64>,
    refs: &EmbeddingSet,
    ref_hidden: &[usize],
    ref_binary: &[usize],
    queries: &EmbeddingSet,
    query_hidden: &[usize],
    query_binary: &[usize],
    k: usize,
    metric: Metric,
    vectorization_seconds: f64,
) -> Result<ReportRow> {
    let started = Instant::now();
    let pred = knn_predict_labels(refs, ref_hidden, queries, k, metric)?;
    let knn_seconds = started.elapsed().as_secs_f64();
    let binary_pred = knn_predict_labels(refs, ref_binary, queries, k, metric)?;
    Ok(ReportRow {
        representation: name.to_string(),
        model_binary_accuracy: model_acc,
        knn_subclass_accuracy: accuracy(&pred, query_hidden)?,
        knn_subclass_f1_micro: f1_micro(&pred, query_hidden)?,
        knn_binary_accuracy: accuracy(&binary_pred, query_binary)?,
        vectorization_seconds,
        knn_prediction_seconds: knn_seconds,
        dimension: refs.dim(),
    })
}

fn cmd_compare(cmd: CompareCmd) -> Result<()> {
    let data = load_data(&cmd.data, cmd.knobs.seed)?;
    std::fs::create_dir_all(&cmd.out)?;
    let mut report = ExperimentReport::new(cmd.knobs.seed);

    let ref_hidden = data.train.hidden_labels.clone();
    let ref_binary: Vec<usize> = data.train.binary_labels.iter().map(|&b| b as usize).collect();
    let query_hidden = data.test.hidden_labels.clone();
    let query_binary: Vec<usize> =
        data.test.binary_labels.iter().map(|&b| b as usize).collect();

    for (slot, variant) in [Variant::A, Variant::B, Variant::C].into_iter().enumerate() {
        let (model, history) = build_and_train(variant, &data.train, &cmd.knobs, slot as u64)?;
        let model_acc = history.epochs.last().map(|e| e.val_accuracy);

        let started = Instant::now();
        let refs =
            embed_last_hidden(&model, &data.train.features, EmbedPoint::PreActivation)?;
        let queries =
            embed_last_hidden(&model, &data.test.features, EmbedPoint::PreActivation)?;
        let vec_seconds = started.elapsed().as_secs_f64();
        report.rows.push(knn_row(
            &format!("{variant} (h_last)"),
            model_acc,
            &refs,
            &ref_hidden,
            &ref_binary,
            &queries,
            &query_hidden,
            &query_binary,
            cmd.k,
            Metric::L2,
            vec_seconds,
        )?);
        let corr = correlation_report(&queries, DEFAULT_CORRELATION_BINS)?;
        report
            .mean_abs_correlation
            .insert(variant.to_string(), corr.mean_abs);
        std::fs::write(cmd.out.join(format!("corr_{variant}.csv")), corr.histogram_csv())?;

        if variant == cmd.gradient_variant {
            let n_refs = cmd.grad_refs.min(data.train.len());
            let n_queries = cmd.grad_queries.min(data.test.len());
            let gref_rows = data.train.select(&(0..n_refs).collect::<Vec<_>>());
            let gquery_rows = data.test.select(&(0..n_queries).collect::<Vec<_>>());
            let started = Instant::now();
            let grefs = embed_gradients(&model, &gref_rows.features)?;
            let gqueries = embed_gradients(&model, &gquery_rows.features)?;
            let gvec_seconds = started.elapsed().as_secs_f64();
            report.rows.push(knn_row(
                &format!("{variant} (gradient)"),
                model_acc,
                &grefs,
                &gref_rows.hidden_labels,
                &gref_rows
                    .binary_labels
                    .iter()
                    .map(|&b| b as usize)
                    .collect::<Vec<_>>(),
                &gqueries,
                &gquery_rows.hidden_labels,
                &gquery_rows
                    .binary_labels
                    .iter()
                    .map(|&b| b as usize)
                    .collect::<Vec<_>>(),
                cmd.k,
                Metric::CosineDistance,
                gvec_seconds,
            )?);
        }
    }

    let src_refs = EmbeddingSet::new(data.train.features.clone(), SourceTag::SourceSpace)?;
    let src_queries = EmbeddingSet::new(data.test.features.clone(), SourceTag::SourceSpace)?;
    report.rows.push(knn_row(
        "source space",
        None,
        &src_refs,
        &ref_hidden,
        &ref_binary,
        &src_queries,
        &query_hidden,
        &query_binary,
        cmd.k,
        Metric::L2,
        0.0,
    )?);

    std::fs::write(
        cmd.out.join("report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    let table = report.to_table();
    std::fs::write(cmd.out.join("report.txt"), &table)?;
    std::fs::write(
        cmd.out.join("dataset.json"),
        serde_json::to_vec_pretty(&data.manifest)?,
    )?;
    println!("{table}");
    Ok(())
}

fn cmd_jl_bound(cmd: JlBoundCmd) -> Result<()> {
    let (bound, ceil) = jl_min_width(&JlBoundQuery { n: cmd.n, eps: cmd.eps, c: cmd.c })?;
    println!(
        "{}",
        serde_json::json!({ "n": cmd.n, "eps": cmd.eps, "C": cmd.c, "bound": bound, "min_width": ceil })
    );
    Ok(())
}
