//! Command-line driver: synthetic data generation, index build, search,
//! evaluation sweeps, ablations and the scalability experiment.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 assertion failure.
//! `RPG_THREADS` caps worker-thread parallelism.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rpg_core::baselines::{build_top_scored, factorize_relevance_matrix, EmbeddingSet};
use rpg_core::eval::{
    ablation_run, ground_truth, scalability_experiment, sweep_curve, write_csv, AblationAxis,
    CurvePoint, Method, ScalingConfig,
};
use rpg_core::graph::{
    build_item_feature_graph, build_relevance_graph, BuildParams, NeighborSelection,
    ProximityGraph,
};
use rpg_core::search::{
    exhaustive_topk, rpg_plus_entry, search_topk_with_ledger, EvalLedger, SearchParams,
};
use rpg_core::synth::{generate, GenConfig, GenModelKind};
use rpg_core::{Matrix, RelevanceModel};

#[derive(Parser)]
#[command(name = "rpg", about = "Top-K retrieval with relevance proximity graphs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle (matrices + model file)
    GenData(GenDataArgs),
    /// Build a proximity graph index from a dataset bundle
    Build(BuildArgs),
    /// Search a built index for each test query
    Search(SearchArgs),
    /// Sweep a method over evaluation budgets and emit a CSV curve
    Eval(EvalArgs),
    /// Re-run the sweep for several values of M or d
    Ablate(AblateArgs),
    /// Fit the evaluations-vs-size power law on synthetic L2 data
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKindArg {
    L2,
    Dot,
    Mlp,
    TreeEnsemble,
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory for items.rpgm, train_queries.rpgm, test_queries.rpgm, model.json
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 1000)]
    train_queries: usize,
    #[arg(long, default_value_t = 200)]
    test_queries: usize,
    /// Sets both query and item dimensionality
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Query dimensionality (overrides --dim)
    #[arg(long)]
    query_dim: Option<usize>,
    /// Item dimensionality (overrides --dim)
    #[arg(long)]
    item_dim: Option<usize>,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, value_enum, default_value_t = ModelKindArg::L2)]
    model: ModelKindArg,
    /// Trees in a generated ensemble
    #[arg(long, default_value_t = 50)]
    trees: usize,
    /// Depth of each generated tree
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Number of pairwise query-item product features (mlp/tree models)
    #[arg(long, default_value_t = 8)]
    pairwise: usize,
    /// Hidden layer sizes for generated MLPs, comma separated
    #[arg(long, default_value = "32,16", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Heuristic,
    Simple,
}

#[derive(Args)]
struct IndexParams {
    /// Relevance-vector length d (train queries sampled per item)
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Max vertex degree on upper layers (2M on layer 0)
    #[arg(short = 'M', long = "M", default_value_t = 8)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    ef_construction: usize,
    #[arg(long, value_enum, default_value_t = SelectionArg::Heuristic)]
    selection: SelectionArg,
}

impl IndexParams {
    fn build_params(&self, seed: u64) -> BuildParams {
        BuildParams {
            m: self.m,
            ef_construction: self.ef_construction.max(self.m),
            level_multiplier: None,
            seed,
            selection: match self.selection {
                SelectionArg::Heuristic => NeighborSelection::Heuristic,
                SelectionArg::Simple => NeighborSelection::SimpleTopM,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum BuildMethodArg {
    /// Graph over relevance vectors
    Rpg,
    /// Graph over L2-normalized raw item features
    ItemGraph,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    train_queries: PathBuf,
    /// Never read at build time; rejected if it equals --train-queries
    #[arg(long)]
    test_queries: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    index: IndexParams,
    #[arg(long, value_enum, default_value_t = BuildMethodArg::Rpg)]
    method: BuildMethodArg,
    /// Feature matrix for the item-graph method (defaults to --items)
    #[arg(long)]
    item_features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output graph file (RPGG)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test_queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Beam width L
    #[arg(long, default_value_t = 64)]
    beam: usize,
    /// Score every item instead of searching the graph
    #[arg(long, default_value_t = false)]
    exhaustive: bool,
    /// Seed the entry vertex from SVD embeddings of the train relevance matrix
    #[arg(long, default_value_t = false)]
    entry_from_embeddings: bool,
    /// Train queries (required with --entry-from-embeddings)
    #[arg(long)]
    train_queries: Option<PathBuf>,
    /// Embedding rank for --entry-from-embeddings
    #[arg(long, default_value_t = 20)]
    rank: usize,
    /// Model probes per query when embedding unseen queries
    #[arg(long, default_value_t = 60)]
    probe_m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum MethodArg {
    Rpg,
    #[value(name = "rpg+")]
    RpgPlus,
    TopScored,
    ItemGraph,
    EmbedRerank,
    Exhaustive,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    train_queries: PathBuf,
    #[arg(long)]
    test_queries: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Built graph (required for rpg / rpg+)
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Budgets: beam widths L (graph methods) or candidate counts N (rerankers)
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    budgets: Vec<usize>,
    #[command(flatten)]
    index: IndexParams,
    /// Embedding rank (rpg+ / embed-rerank)
    #[arg(long, default_value_t = 20)]
    rank: usize,
    /// Model probes per query when embedding unseen queries
    #[arg(long, default_value_t = 60)]
    probe_m: usize,
    /// Feature matrix for the item-graph method (defaults to --items)
    #[arg(long)]
    item_features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// e.g. --assert "recall@5>=0.9@budget=0.1" (budget as fraction of |S|)
    #[arg(long)]
    assert: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    M,
    D,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    train_queries: PathBuf,
    #[arg(long)]
    test_queries: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    budgets: Vec<usize>,
    #[command(flatten)]
    index: IndexParams,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.90)]
    target_recall: f64,
    #[arg(long, default_value_t = 1000)]
    train_queries_count: usize,
    #[arg(long, default_value_t = 200)]
    test_queries_count: usize,
    #[command(flatten)]
    index: IndexParams,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(rpg_core::Error),
    AssertFailed(String),
}

impl From<rpg_core::Error> for CliError {
    fn from(e: rpg_core::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/usage text but normalize the code
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::AssertFailed(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn init_thread_pool() -> Result<(), String> {
    let Ok(raw) = std::env::var("RPG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("RPG_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err("RPG_THREADS must be >= 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Build(args) => cmd_build(args),
        Command::Search(args) => cmd_search(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Scaling(args) => cmd_scaling(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> CliResult<()> {
    let query_dim = args.query_dim.unwrap_or(args.dim);
    let item_dim = args.item_dim.unwrap_or(args.dim);
    let model = match args.model {
        ModelKindArg::L2 => GenModelKind::L2,
        ModelKindArg::Dot => GenModelKind::Dot,
        ModelKindArg::Mlp => GenModelKind::Mlp {
            hidden: args.hidden.clone(),
            pairwise: args.pairwise,
        },
        ModelKindArg::TreeEnsemble => GenModelKind::TreeEnsemble {
            trees: args.trees,
            depth: args.depth,
            pairwise: args.pairwise,
        },
    };
    let cfg = GenConfig {
        num_items: args.items,
        num_train_queries: args.train_queries,
        num_test_queries: args.test_queries,
        query_dim,
        item_dim,
        clusters: args.clusters,
        model,
        seed: args.seed,
    };
    let bundle = generate(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(io_error(&args.out_dir, e)))?;
    let path = |name: &str| args.out_dir.join(name);
    bundle.items.save_rpgm(&path("items.rpgm"))?;
    bundle.train_queries.save_rpgm(&path("train_queries.rpgm"))?;
    bundle.test_queries.save_rpgm(&path("test_queries.rpgm"))?;
    bundle.model.save(&path("model.json"))?;
    println!(
        "wrote {} items ({}d), {} train / {} test queries ({}d), model kind {} -> {}",
        bundle.items.rows(),
        bundle.items.cols(),
        bundle.train_queries.rows(),
        bundle.test_queries.rows(),
        bundle.train_queries.cols(),
        bundle.model.kind_name(),
        args.out_dir.display()
    );
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> rpg_core::Error {
    rpg_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Load + cross-check the files every retrieval command consumes.
fn load_bundle(
    items: &Path,
    model: &Path,
    queries: Option<&Path>,
) -> CliResult<(Matrix, RelevanceModel, Option<Matrix>)> {
    let items = Matrix::load_rpgm(items)?;
    let model = RelevanceModel::load(model)?;
    if items.cols() != model.item_dim() {
        return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
            "item matrix has {} columns but the model expects item_dim {}",
            items.cols(),
            model.item_dim()
        ))));
    }
    let queries = match queries {
        Some(path) => {
            let q = Matrix::load_rpgm(path)?;
            if q.cols() != model.query_dim() {
                return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
                    "query matrix {} has {} columns but the model expects query_dim {}",
                    path.display(),
                    q.cols(),
                    model.query_dim()
                ))));
            }
            Some(q)
        }
        None => None,
    };
    Ok((items, model, queries))
}

fn cmd_build(args: BuildArgs) -> CliResult<()> {
    if let Some(test) = &args.test_queries {
        if test == &args.train_queries {
            return Err(CliError::Usage(
                "--test-queries must differ from --train-queries; the index is built on held-out train queries only"
                    .into(),
            ));
        }
    }
    let (items, model, train) =
        load_bundle(&args.items, &args.model, Some(&args.train_queries))?;
    let train = train.expect("train queries requested");
    let params = args.index.build_params(args.seed);

    let (graph, build_evals) = match args.method {
        BuildMethodArg::ItemGraph => {
            let features = match &args.item_features {
                Some(path) => {
                    let f = Matrix::load_rpgm(path)?;
                    if f.rows() != items.rows() {
                        return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
                            "item-feature matrix has {} rows but there are {} items",
                            f.rows(),
                            items.rows()
                        ))));
                    }
                    f
                }
                None => items.clone(),
            };
            (build_item_feature_graph(&features, &params)?, 0usize)
        }
        BuildMethodArg::Rpg => {
            if args.item_features.is_some() {
                return Err(CliError::Usage(
                    "--item-features only applies to --method item-graph".into(),
                ));
            }
            if args.index.d > train.rows() {
                return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
                    "d={} exceeds the {} available train queries",
                    args.index.d,
                    train.rows()
                ))));
            }
            let (graph, _vectors) =
                build_relevance_graph(&model, &items, &train, args.index.d, &params)?;
            (graph, items.rows() * args.index.d)
        }
    };
    let report = graph.validate()?;
    graph.save(&args.out)?;
    println!(
        "built graph: {} items, {} layers, mean layer-0 degree {:.2}, reachable {}/{}, build-time model evaluations {}",
        report.num_items,
        report.num_layers,
        report.mean_degree_layer0,
        report.layer0_reachable,
        report.num_items,
        build_evals
    );
    println!("saved {}", args.out.display());
    Ok(())
}

fn check_graph_items(graph: &ProximityGraph, items: &Matrix) -> CliResult<()> {
    if graph.num_items() != items.rows() {
        return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
            "graph indexes {} items but the item matrix has {} rows; graph and bundle are inconsistent",
            graph.num_items(),
            items.rows()
        ))));
    }
    Ok(())
}

fn cmd_search(args: SearchArgs) -> CliResult<()> {
    let (items, model, queries) =
        load_bundle(&args.items, &args.model, Some(&args.test_queries))?;
    let queries = queries.expect("test queries requested");
    let graph = ProximityGraph::load(&args.graph)?;
    check_graph_items(&graph, &items)?;

    let embeddings = if args.entry_from_embeddings {
        let train_path = args.train_queries.as_ref().ok_or_else(|| {
            CliError::Usage("--entry-from-embeddings requires --train-queries".into())
        })?;
        if train_path == &args.test_queries {
            return Err(CliError::Usage(
                "--train-queries must differ from --test-queries".into(),
            ));
        }
        let train = Matrix::load_rpgm(train_path)?;
        eprintln!(
            "computing train relevance matrix ({} x {}) for embeddings...",
            items.rows(),
            train.rows()
        );
        let f = train_relevance_matrix(&model, &items, &train)?;
        Some(factorize_relevance_matrix(&f, args.rank.min(items.rows()).min(train.rows()))?)
    } else {
        None
    };

    for q in 0..queries.rows() {
        let query = queries.row(q);
        let (result, label) = if args.exhaustive {
            (exhaustive_topk(&model, &items, query, args.k.min(items.rows()))?, "exhaustive")
        } else {
            let mut ledger = EvalLedger::new();
            let mut params = SearchParams::new(args.k, args.beam.max(args.k));
            if let Some(emb) = &embeddings {
                // probe evaluations are charged through the shared ledger
                let w = rpg_core::baselines::embed_query_with_ledger(
                    &model,
                    &items,
                    emb,
                    query,
                    args.probe_m.min(items.rows()),
                    args.seed.wrapping_add(q as u64),
                    &mut ledger,
                )?;
                params.entry_override = Some(rpg_plus_entry(emb, &w)?);
                params.use_hierarchy = false;
            }
            (
                search_topk_with_ledger(&graph, &model, &items, query, &params, &mut ledger)?,
                "rpg",
            )
        };
        let hits = result
            .hits
            .iter()
            .map(|(id, score)| format!("({id}, {score})"))
            .collect::<Vec<_>>()
            .join(" ");
        use std::io::Write;
        let line = format!(
            "query {q} [{label}]: {hits} unique_evals={} visited={}\n",
            result.unique_evals, result.visited
        );
        if let Err(e) = std::io::stdout().write_all(line.as_bytes()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
            return Err(CliError::Data(io_error(Path::new("stdout"), e)));
        }
    }
    Ok(())
}

fn train_relevance_matrix(
    model: &RelevanceModel,
    items: &Matrix,
    train: &Matrix,
) -> CliResult<Matrix> {
    let sample = rpg_core::sample_train_queries(train.rows(), train.rows(), 0)?;
    // identity sample in sampled order; reorder columns to query order
    let mut order: Vec<usize> = vec![0; train.rows()];
    for (col, &qid) in sample.query_ids.iter().enumerate() {
        order[qid as usize] = col;
    }
    let rv = rpg_core::compute_relevance_vectors(model, items, train, &sample)?;
    let mut f = Matrix::zeros(items.rows(), train.rows());
    for u in 0..items.rows() {
        let row = rv.row(u);
        let out = f.row_mut(u);
        for q in 0..train.rows() {
            out[q] = row[order[q]];
        }
    }
    Ok(f)
}

fn parse_assertion(expr: &str, k: usize) -> CliResult<(usize, f64, f64)> {
    // grammar: recall@K>=VAL@budget=FRAC
    let usage = || {
        CliError::Usage(format!(
            "cannot parse assertion {expr:?}; expected recall@K>=VAL@budget=FRAC"
        ))
    };
    let rest = expr.strip_prefix("recall@").ok_or_else(usage)?;
    let (k_str, rest) = rest.split_once(">=").ok_or_else(usage)?;
    let (val_str, frac_str) = rest.split_once("@budget=").ok_or_else(usage)?;
    let ak: usize = k_str.parse().map_err(|_| usage())?;
    let val: f64 = val_str.parse().map_err(|_| usage())?;
    let frac: f64 = frac_str.parse().map_err(|_| usage())?;
    if ak != k {
        return Err(CliError::Usage(format!(
            "assertion k={ak} does not match --k {k}"
        )));
    }
    if !(0.0..=1.0).contains(&val) || frac <= 0.0 {
        return Err(usage());
    }
    Ok((ak, val, frac))
}

fn check_assertion(points: &[CurvePoint], num_items: usize, expr: &str, k: usize) -> CliResult<()> {
    let (_k, min_recall, frac) = parse_assertion(expr, k)?;
    let budget = frac * num_items as f64;
    let best = points
        .iter()
        .filter(|p| p.mean_unique_evals <= budget)
        .map(|p| p.recall)
        .fold(f64::NEG_INFINITY, f64::max);
    if best >= min_recall {
        println!("assertion passed: recall {best:.4} >= {min_recall} within {budget:.0} evaluations");
        Ok(())
    } else {
        Err(CliError::AssertFailed(format!(
            "best recall within {budget:.0} evaluations was {best:.4}, required {min_recall}"
        )))
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    if args.train_queries == args.test_queries {
        return Err(CliError::Usage(
            "--train-queries must differ from --test-queries".into(),
        ));
    }
    let (items, model, test) = load_bundle(&args.items, &args.model, Some(&args.test_queries))?;
    let test = test.expect("test queries requested");
    let train = Matrix::load_rpgm(&args.train_queries)?;
    if train.cols() != model.query_dim() {
        return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
            "train query matrix has {} columns but the model expects query_dim {}",
            train.cols(),
            model.query_dim()
        ))));
    }
    let k = args.k;
    let truth = ground_truth(&model, &items, &test, k)?;

    // owning storage for whichever index the method needs
    let mut graph_storage: Option<ProximityGraph> = None;
    let mut embeddings_storage: Option<EmbeddingSet> = None;
    let mut top_scored_storage = None;

    let needs_graph = matches!(args.method, MethodArg::Rpg | MethodArg::RpgPlus);
    if needs_graph {
        let path = args.graph.as_ref().ok_or_else(|| {
            CliError::Usage("--graph is required for methods rpg and rpg+".into())
        })?;
        let graph = ProximityGraph::load(path)?;
        check_graph_items(&graph, &items)?;
        graph_storage = Some(graph);
    }
    if matches!(args.method, MethodArg::RpgPlus | MethodArg::EmbedRerank) {
        let f = train_relevance_matrix(&model, &items, &train)?;
        let rank = args.rank.min(items.rows()).min(train.rows());
        embeddings_storage = Some(factorize_relevance_matrix(&f, rank)?);
    }
    if matches!(args.method, MethodArg::TopScored) {
        top_scored_storage = Some(build_top_scored(&model, &items, &train)?);
    }
    let item_graph_storage = if matches!(args.method, MethodArg::ItemGraph) {
        let features = match &args.item_features {
            Some(path) => {
                let f = Matrix::load_rpgm(path)?;
                if f.rows() != items.rows() {
                    return Err(CliError::Data(rpg_core::Error::InvalidInput(format!(
                        "item-feature matrix has {} rows but there are {} items",
                        f.rows(),
                        items.rows()
                    ))));
                }
                f
            }
            None => items.clone(),
        };
        Some(build_item_feature_graph(&features, &args.index.build_params(args.seed))?)
    } else {
        None
    };

    let probe_m = args.probe_m.min(items.rows());
    let method = match args.method {
        MethodArg::Rpg => Method::Rpg {
            graph: graph_storage.as_ref().unwrap(),
        },
        MethodArg::RpgPlus => Method::RpgPlus {
            graph: graph_storage.as_ref().unwrap(),
            embeddings: embeddings_storage.as_ref().unwrap(),
            probe_m,
        },
        MethodArg::TopScored => Method::TopScored {
            index: top_scored_storage.as_ref().unwrap(),
        },
        MethodArg::ItemGraph => Method::ItemGraph {
            graph: item_graph_storage.as_ref().unwrap(),
        },
        MethodArg::EmbedRerank => Method::EmbedRerank {
            embeddings: embeddings_storage.as_ref().unwrap(),
            probe_m,
        },
        MethodArg::Exhaustive => Method::Exhaustive,
    };

    let points = sweep_curve(&method, &model, &items, &test, &truth, &args.budgets, args.seed)?;
    write_csv(&args.out, &points)?;
    for p in &points {
        println!(
            "{} budget={} mean_evals={:.1} recall={:.4} avg_relevance={:.4}",
            p.method, p.param, p.mean_unique_evals, p.recall, p.avg_relevance
        );
    }
    println!("saved {}", args.out.display());
    if let Some(expr) = &args.assert {
        check_assertion(&points, items.rows(), expr, k)?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    if args.train_queries == args.test_queries {
        return Err(CliError::Usage(
            "--train-queries must differ from --test-queries".into(),
        ));
    }
    if args.values.is_empty() {
        return Err(CliError::Usage("--values must list at least one value".into()));
    }
    let (items, model, test) = load_bundle(&args.items, &args.model, Some(&args.test_queries))?;
    let test = test.expect("test queries requested");
    let train = Matrix::load_rpgm(&args.train_queries)?;
    let axis = match args.axis {
        AxisArg::M => AblationAxis::M,
        AxisArg::D => AblationAxis::D,
    };
    let points = ablation_run(
        axis,
        &args.values,
        &model,
        &items,
        &train,
        &test,
        &args.index.build_params(args.seed),
        args.index.d,
        &args.budgets,
        args.k,
    )?;
    write_csv(&args.out, &points)?;
    println!("saved {} ({} curve points)", args.out.display(), points.len());
    Ok(())
}

fn cmd_scaling(args: ScalingArgs) -> CliResult<()> {
    let cfg = ScalingConfig {
        sizes: args.sizes.clone(),
        dim: args.dim,
        d: args.index.d,
        build: args.index.build_params(args.seed),
        k: args.k,
        target_recall: args.target_recall,
        num_train_queries: args.train_queries_count,
        num_test_queries: args.test_queries_count,
        seed: args.seed,
        max_beam_fraction: 0.5,
    };
    let outcome = scalability_experiment(&cfg)?;
    let mut points = Vec::new();
    for p in &outcome.points {
        match p.beam {
            Some(beam) => println!(
                "size {}: beam {} -> mean_evals {:.1} recall {:.4}",
                p.size, beam, p.mean_unique_evals, p.recall
            ),
            None => println!(
                "size {}: saturated (best recall {:.4} at mean_evals {:.1}); excluded from the fit",
                p.size, p.recall, p.mean_unique_evals
            ),
        }
        points.push(CurvePoint {
            method: if p.beam.is_some() { "rpg".into() } else { "rpg-saturated".into() },
            param: p.size as f64,
            mean_unique_evals: p.mean_unique_evals,
            recall: p.recall,
            avg_relevance: 0.0,
            k: args.k,
            seed: args.seed,
        });
    }
    if let (Some(alpha), Some(intercept)) = (outcome.alpha, outcome.intercept) {
        println!("fitted power law: evals ~ |S|^{alpha:.4} (intercept {intercept:.4})");
        points.push(CurvePoint {
            method: "alpha".into(),
            param: alpha,
            mean_unique_evals: 0.0,
            recall: 0.0,
            avg_relevance: 0.0,
            k: args.k,
            seed: args.seed,
        });
    } else {
        println!("not enough unsaturated points to fit an exponent");
    }
    write_csv(&args.out, &points)?;
    println!("saved {}", args.out.display());
    Ok(())
}
