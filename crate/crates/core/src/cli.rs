//! The `dglfrm` command-line tool.
//!
//! Every command writes its outputs plus a `<output>.manifest.json` run
//! manifest holding the argument vector, the resolved configuration and
//! SHA-256 digests of all inputs. `dglfrm replay <manifest>` checks the
//! digests and re-runs the command, reproducing the outputs byte for byte.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{
    generate_synthetic, load_edge_list, load_features, make_splits, read_split, write_split, Graph, SplitSpec,
    SyntheticSpec,
};
use crate::metrics::{active_communities, extract_communities, MetricsReport};
use crate::model::{DecoderForm, ModelConfig, ModelInputs, StickMode, Variant};
use crate::trainer::{load_checkpoint, save_checkpoint, score_pairs, train, Checkpoint, PosWeight, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable holding the log filter (`error` … `trace`).
pub const LOG_ENV: &str = "DGLFRM_LOG";

#[derive(Debug, Parser)]
#[command(name = "dglfrm", version, about = "Sparse variational graph autoencoder: training, link prediction and overlapping communities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic overlapping-community graph.
    Synth(SynthArgs),
    /// Hold out validation and test edges with matched non-edges.
    Split(SplitArgs),
    /// Train a model and write a checkpoint and a training report.
    Train(TrainArgs),
    /// Score the test pairs of a split and write AUC and AP.
    Eval(EvalArgs),
    /// Extract overlapping communities from a trained checkpoint.
    Communities(CommunitiesArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

fn unit_open(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} must lie in (0, 1)"))
    }
}

fn unit_closed(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} must lie in [0, 1]"))
    }
}

fn dropout_rate(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} must lie in [0, 1)"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{x} must be positive"))
    }
}

fn pos_weight(s: &str) -> std::result::Result<PosWeight, String> {
    if s == "auto" {
        return Ok(PosWeight::Auto);
    }
    positive(s).map(PosWeight::Fixed)
}

fn parse_via_fromstr<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(usize))]
    pub nodes: usize,
    #[arg(long, default_value_t = 10)]
    pub communities: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that a node joins a second community.
    #[arg(long, default_value_t = 0.3, value_parser = unit_closed)]
    pub overlap: f64,
    #[arg(long, default_value_t = 8.0)]
    pub sharpness: f64,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    pub offset: f64,
    /// Writes `<prefix>.edges` and `<prefix>.communities`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 0.10, value_parser = unit_open)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0.05, value_parser = unit_open)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Node features; identity features are used when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "dglfrm", value_parser = parse_via_fromstr::<Variant>)]
    pub variant: Variant,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden GCN width; 32 with features, 128 without.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: Option<u64>,
    /// Decoder override: mlp, bilinear or inner.
    #[arg(long, value_parser = parse_via_fromstr::<DecoderForm>)]
    pub decoder: Option<DecoderForm>,
    #[arg(long, default_value = "structured", value_parser = parse_via_fromstr::<StickMode>)]
    pub stick_mode: StickMode,
    #[arg(long, default_value_t = 0.5, value_parser = dropout_rate)]
    pub dropout: f64,
    #[arg(long, default_value_t = 50)]
    pub kl_warmup: usize,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub val_every: u64,
    /// `auto` or a fixed positive weight.
    #[arg(long, default_value = "auto", value_parser = pos_weight)]
    pub pos_weight: PosWeight,
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub lambda_prior: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub lambda_post: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub prior_r_sigma: f64,
    /// Leave the feature reconstruction term out of the loss.
    #[arg(long)]
    pub no_feature_term: bool,
    #[arg(long)]
    pub out_ckpt: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub split: PathBuf,
    /// Writes `<out>.txt` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CommunitiesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, value_parser = unit_closed)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write node embeddings and membership probabilities as CSV.
    #[arg(long)]
    pub export_latent: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Provenance record written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// Input path → SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::ConfigMismatch(_) | Error::UnsupportedVariant(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Domain { .. } => EXIT_NUMERIC,
        Error::Shape { .. }
        | Error::Load { .. }
        | Error::Split(_)
        | Error::Metric(_)
        | Error::Version { .. }
        | Error::Corrupt(_)
        | Error::Replay(_)
        | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct ManifestBuilder {
    command: &'static str,
    argv: Vec<String>,
    inputs: BTreeMap<String, String>,
}

impl ManifestBuilder {
    fn new(command: &'static str, argv: &[String]) -> Self {
        Self {
            command,
            argv: argv.to_vec(),
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(self, primary: &Path, outputs: &[&Path], config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            argv: self.argv,
            config,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        write_file(&with_suffix(primary, ".manifest.json"), text)
    }
}

/// Runs a parsed command. `argv` is recorded in the manifest.
pub fn execute(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Split(a) => cmd_split(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Communities(a) => cmd_communities(a, argv),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn cmd_synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let spec = SyntheticSpec {
        n_nodes: a.nodes,
        n_communities: a.communities,
        sharpness: a.sharpness,
        offset: a.offset,
        overlap_prob: a.overlap,
        seed: a.seed,
    };
    if spec.n_communities == 0 || spec.n_communities > spec.n_nodes {
        return Err(Error::Config(format!(
            "need 1 ≤ communities ≤ nodes, got {} communities for {} nodes",
            spec.n_communities, spec.n_nodes
        )));
    }
    let (g, members) = generate_synthetic(&spec)?;
    let edges_path = with_suffix(&a.out_prefix, ".edges");
    let comm_path = with_suffix(&a.out_prefix, ".communities");
    let mut edges = format!("# synthetic graph: {} nodes, {} edges\n", g.n_nodes(), g.n_edges());
    for (u, v) in g.edges() {
        let _ = writeln!(edges, "{u} {v}");
    }
    write_file(&edges_path, edges)?;
    let mut comm = String::from("# node community...\n");
    for n in 0..members.rows() {
        let _ = write!(comm, "{n}");
        for (k, &m) in members.row(n).iter().enumerate() {
            if m > 0.0 {
                let _ = write!(comm, " {k}");
            }
        }
        comm.push('\n');
    }
    write_file(&comm_path, comm)?;
    let config = json!({
        "nodes": spec.n_nodes,
        "communities": spec.n_communities,
        "sharpness": spec.sharpness,
        "offset": spec.offset,
        "overlap": spec.overlap_prob,
    });
    ManifestBuilder::new("synth", argv).write(&a.out_prefix, &[&edges_path, &comm_path], config, Some(a.seed))
}

/// Reads a ground-truth membership file written by `synth`.
pub fn read_memberships(path: impl AsRef<Path>, n_nodes: usize, n_communities: usize) -> Result<crate::tensor::Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut t = crate::tensor::Tensor::zeros(&[n_nodes, n_communities]);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Load {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad membership line `{line}`"),
            })?;
        let (&n, ks) = ids.split_first().expect("non-empty line");
        for &k in ks {
            if n >= n_nodes || k >= n_communities {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("membership ({n}, {k}) out of range"),
                });
            }
            t.set(n, k, 1.0);
        }
    }
    Ok(t)
}

fn cmd_split(a: SplitArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::new("split", argv);
    let g = load_edge_list(&a.graph)?;
    manifest.input(&a.graph)?;
    let split = make_splits(&g, a.test_frac, a.val_frac, a.seed)?;
    log::info!(
        "split: {} train edges, {} val, {} test",
        split.train.n_edges(),
        split.val_pos.len(),
        split.test_pos.len()
    );
    write_split(&split, &a.out)?;
    let config = json!({ "test_frac": a.test_frac, "val_frac": a.val_frac });
    manifest.write(&a.out, &[&a.out], config, Some(a.seed))
}

/// Loads a split and its full graph, checking they agree, and attaches
/// features to the split's training graph.
fn load_split_graph(
    graph: &Path,
    split: &Path,
    features: Option<&Path>,
    manifest: &mut ManifestBuilder,
) -> Result<(Graph, SplitSpec)> {
    let full = load_edge_list(graph)?;
    manifest.input(graph)?;
    let split = read_split(split).and_then(|s| {
        manifest.input(split)?;
        Ok(s)
    })?;
    if full.n_nodes() > split.n_nodes {
        return Err(Error::Split(format!(
            "graph has {} nodes but the split was made for {}",
            full.n_nodes(),
            split.n_nodes
        )));
    }
    let mut g = split.train.clone();
    if let Some(f) = features {
        g = g.with_features(load_features(f, split.n_nodes)?)?;
        manifest.input(f)?;
    }
    Ok((g, split))
}

fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let has_features = a.features.is_some();
    let mut mc = ModelConfig::new(a.variant, a.k as usize, has_features);
    if let Some(h) = a.hidden {
        mc.hidden = h as usize;
    }
    if let Some(d) = a.decoder {
        mc.decoder = d;
    }
    mc.stick_mode = a.stick_mode;
    mc.dropout = a.dropout;
    mc.alpha = a.alpha;
    mc.lambda_prior = a.lambda_prior;
    mc.lambda_post = a.lambda_post;
    mc.prior_r_sigma = a.prior_r_sigma;
    mc.feature_term = has_features && !a.no_feature_term;
    let mut cfg = TrainConfig::new(mc);
    cfg.epochs = a.epochs;
    cfg.lr = a.lr;
    cfg.seed = a.seed;
    cfg.kl_warmup = a.kl_warmup;
    cfg.val_every = a.val_every as usize;
    cfg.pos_weight = a.pos_weight;
    cfg.validate()?;

    let mut manifest = ManifestBuilder::new("train", argv);
    let (g, split) = load_split_graph(&a.graph, &a.split, a.features.as_deref(), &mut manifest)?;
    let (ckpt, report) = train(&g, &split, &cfg)?;
    log::info!(
        "trained {} epochs in {:.2}s, best epoch {:?}",
        report.epochs.len(),
        report.wall_clock.as_secs_f64(),
        report.best_epoch
    );
    save_checkpoint(&ckpt, &a.out_ckpt)?;
    let report_path = with_suffix(&a.out_ckpt, ".report.json");
    write_file(&report_path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let config = serde_json::to_value(&cfg).expect("config serializes");
    manifest.write(&a.out_ckpt, &[&a.out_ckpt, &report_path], config, Some(cfg.seed))?;
    match report.diverged {
        Some(why) => Err(Error::NonFinite(format!("training diverged at {why}; best checkpoint kept"))),
        None => Ok(()),
    }
}

fn checkpoint_inputs(ckpt: &Checkpoint, g: &Graph) -> Result<ModelInputs> {
    let inputs = ModelInputs::new(g.adjacency(), g.features());
    ckpt.ensure_graph(inputs.n_nodes(), inputs.d_in())?;
    if ckpt.config.model.feature_term != g.features().is_some() && ckpt.config.model.feature_term {
        return Err(Error::ConfigMismatch("checkpoint was trained with node features".into()));
    }
    Ok(inputs)
}

fn cmd_eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::new("eval", argv);
    let ckpt = load_checkpoint(&a.ckpt)?;
    manifest.input(&a.ckpt)?;
    let (g, split) = load_split_graph(&a.graph, &a.split, a.features.as_deref(), &mut manifest)?;
    let inputs = checkpoint_inputs(&ckpt, &g)?;
    let pos = score_pairs(&ckpt.model, &inputs, &split.test_pos)?;
    let neg = score_pairs(&ckpt.model, &inputs, &split.test_neg)?;
    let report = MetricsReport::compute(&pos, &neg, split.seed)?;
    log::info!("test auc {:.4} ap {:.4}", report.auc, report.ap);
    let txt = with_suffix(&a.out, ".txt");
    let js = with_suffix(&a.out, ".json");
    write_file(&txt, report.to_text())?;
    write_file(&js, report.to_json())?;
    let config = json!({ "scoring": "posterior-mean", "model": ckpt.config.model });
    manifest.write(&a.out, &[&txt, &js], config, Some(split.seed))
}

fn cmd_communities(a: CommunitiesArgs, argv: &[String]) -> Result<()> {
    let mut manifest = ManifestBuilder::new("communities", argv);
    let ckpt = load_checkpoint(&a.ckpt)?;
    manifest.input(&a.ckpt)?;
    if !ckpt.config.model.variant.uses_b() {
        return Err(Error::UnsupportedVariant(ckpt.config.model.variant.to_string()));
    }
    let mut g = load_edge_list(&a.graph)?;
    manifest.input(&a.graph)?;
    if g.n_nodes() < ckpt.model.n_nodes() {
        // trailing isolated nodes do not appear in an edge list
        g = Graph::from_edges(ckpt.model.n_nodes(), g.edges())?;
    }
    if let Some(f) = &a.features {
        let n = g.n_nodes();
        g = g.with_features(load_features(f, n)?)?;
        manifest.input(f)?;
    }
    let inputs = checkpoint_inputs(&ckpt, &g)?;
    let assign = extract_communities(&ckpt.model, &inputs, a.tau)?;
    let active = active_communities(&assign, 1);
    log::info!("{active} active communities, {} unassigned nodes", assign.unassigned);
    let out_txt = with_suffix(&a.out, ".txt");
    write_file(&out_txt, assign.to_text())?;
    let mut outputs = vec![out_txt.clone()];
    if let Some(csv) = &a.export_latent {
        let pm = ckpt.model.posterior_mean(&inputs)?;
        let pi = pm.pi_hat.as_ref().expect("membership variant");
        let k = pm.z.cols();
        let mut s = String::from("node");
        for j in 0..k {
            let _ = write!(s, ",z{j}");
        }
        for j in 0..k {
            let _ = write!(s, ",pi{j}");
        }
        s.push('\n');
        for n in 0..pm.z.rows() {
            let _ = write!(s, "{n}");
            for &x in pm.z.row(n).iter().chain(pi.row(n)) {
                let _ = write!(s, ",{x:.17e}");
            }
            s.push('\n');
        }
        write_file(csv, s)?;
        outputs.push(csv.clone());
    }
    let config = json!({ "tau": a.tau, "active": active, "model": ckpt.config.model });
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    manifest.write(&a.out, &outs, config, None)
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    for (path, digest) in &m.inputs {
        let now = sha256_file(Path::new(path))?;
        if &now != digest {
            return Err(Error::Replay(format!("input {path} changed since the run (digest {now}, recorded {digest})")));
        }
    }
    if m.argv.first().map(String::as_str) == Some("replay") {
        return Err(Error::Replay("a manifest cannot record a replay".into()));
    }
    let args = std::iter::once("dglfrm".to_string()).chain(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Replay(format!("recorded arguments no longer parse: {e}")))?;
    execute(cli.command, &m.argv)
}
