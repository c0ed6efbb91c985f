//! Command-line front end. Every command reads its declared inputs, writes
//! fixed-name outputs under `--out-dir`, and exits with
//! 0 ok, 2 I/O, 3 shape/dim, 4 config, 5 validation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    ablate_offset_noise, ablate_offset_samples, identity_truth, mean_average_precision, mrr_at_k,
    recall_at_k, render_noise_table, render_sample_table, score_matrix, top_k_accuracy,
    truth_from_pairs, EvalReport, GroundTruth, NoiseAblationConfig,
};
use crate::geometry::{compute_offset, measure_geometry, OffsetProfile};
use crate::inference::{
    classify_zero_shot, predictions_to_jsonl, project_modal, project_text, read_predictions,
    retrieve, RankingResult,
};
use crate::projector::{init_projection, read_projection, write_projection, ProjectionNet};
use crate::seed::derive_seed;
use crate::store::{
    ensure_parent, read_embeddings, read_labels, read_pairs, write_embeddings, EmbeddingSet,
    PairedDataset,
};
use crate::synth::{generate_world, SynthConfig};
use crate::trainer::{train_with_observer, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "modex", version, about = "Text-only modality expansion toolkit")]
pub struct Cli {
    /// Top-level seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for command outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON config file (train: pipeline config, synth: world config).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate branch centroids and the modality gap -> offset.json
    ComputeOffset(ComputeOffsetArgs),
    /// Measure gap geometry on paired embeddings -> geometry.json
    Diagnose(DiagnoseArgs),
    /// Train a projection head from text embeddings -> projector.gbp, history.jsonl
    Train(TrainArgs),
    /// Center and project an embedding set into the anchor space -> projected.gbe
    Project(ProjectArgs),
    /// Exhaustive cosine retrieval -> ranking.jsonl
    Retrieve(RetrieveArgs),
    /// Zero-shot classification against class prompt embeddings -> predictions.jsonl
    Classify(ClassifyArgs),
    /// Score rankings or predictions, optionally against a reference -> report.json
    Evaluate(EvaluateArgs),
    /// Offset-noise ablation -> noise_ablation.json, noise_ablation.txt
    AblateNoise(AblateNoiseArgs),
    /// Offset sample-size ablation -> sample_ablation.json, sample_ablation.txt
    AblateSamples(AblateSamplesArgs),
    /// Generate a synthetic paired world and export it
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ComputeOffsetArgs {
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub modal: PathBuf,
    #[arg(long, default_value = "")]
    pub modality: String,
    /// L2-normalize rows before estimating centroids.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub modal: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Pairs sidecar; rows with equal ids are paired when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub n_intra_pairs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Print the default pipeline config and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Text,
    Modal,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    /// Output file name inside --out-dir.
    #[arg(long, default_value = "projected.gbe")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    /// Classes kept per sample; all of them when omitted (needed for mAP).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Recall,
    Mrr,
    TopK,
    Map,
}

impl MetricArg {
    fn label(self, k: usize) -> String {
        match self {
            MetricArg::Recall => format!("R@{k}"),
            MetricArg::Mrr => format!("MRR@{k}"),
            MetricArg::TopK => format!("Top-{k}"),
            MetricArg::Map => "mAP".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuerySide {
    Text,
    Modal,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "recall")]
    pub metric: MetricArg,
    /// MRR defaults to 10 as well; pass --k 20 for MRR@20.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Ranking JSONL for recall / mrr.
    #[arg(long)]
    pub ranking: Option<PathBuf>,
    /// Pairs sidecar giving relevance; each query is relevant to its own id when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Which side of the pairs file the ranking's queries come from.
    #[arg(long, value_enum, default_value = "text")]
    pub query_side: QuerySide,
    /// Prediction JSONL for top-k / map.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Use a precomputed metric value instead of scoring files.
    #[arg(long)]
    pub score: Option<f64>,
    /// Reference (pretrained encoder) score in the same units; adds PPR.
    #[arg(long)]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetrievalMetric {
    Recall,
    Mrr,
}

#[derive(Debug, Args)]
pub struct RetrievalEvalArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Modal embeddings used as queries.
    #[arg(long)]
    pub queries: PathBuf,
    /// Anchor-space gallery.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Pairs sidecar (modal ids are queries); identity relevance when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "recall")]
    pub metric: RetrievalMetric,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct AblateNoiseArgs {
    #[command(flatten)]
    pub eval: RetrievalEvalArgs,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.05,0.1")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct AblateSamplesArgs {
    #[command(flatten)]
    pub eval: RetrievalEvalArgs,
    /// Text embeddings for centroid estimation.
    #[arg(long)]
    pub text: PathBuf,
    /// Modal embeddings for centroid estimation.
    #[arg(long)]
    pub modal: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub anchor_dim: Option<usize>,
    #[arg(long)]
    pub deviation_sigma: Option<f64>,
    #[arg(long)]
    pub ortho_leak: Option<f64>,
}

/// Config document for `train`. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub text: PathBuf,
    pub anchor: PathBuf,
    pub profile: PathBuf,
    /// Optional modal set; when present, post-training retrieval is scored.
    pub modal: Option<PathBuf>,
    /// Hidden width; the text embedding dimension when omitted.
    pub d_hidden: Option<usize>,
    pub train: TrainConfig,
    pub k_values: Vec<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            text: "text.gbe".into(),
            anchor: "anchor.gbe".into(),
            profile: "offset.json".into(),
            modal: None,
            d_hidden: None,
            train: TrainConfig::default(),
            k_values: vec![1, 5, 10],
            out_dir: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.k_values.contains(&0) {
            return Err(Error::config("k_values", "every k must be at least 1"));
        }
        if self.d_hidden == Some(0) {
            return Err(Error::config("d_hidden", "must be at least 1"));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.text);
        fix(&mut self.anchor);
        fix(&mut self.profile);
        if let Some(m) = self.modal.as_mut() {
            fix(m);
        }
        if let Some(o) = self.out_dir.as_mut() {
            fix(o);
        }
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf> {
    let p = cli.out_dir.join(name);
    ensure_parent(&p)?;
    Ok(p)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn reject_config(cli: &Cli, command: &str) -> Result<()> {
    match &cli.config {
        Some(_) => Err(Error::config("--config", format!("not used by `{command}`"))),
        None => Ok(()),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ComputeOffset(a) => {
            reject_config(cli, "compute-offset")?;
            cmd_compute_offset(cli, a)
        }
        Command::Diagnose(a) => {
            reject_config(cli, "diagnose")?;
            cmd_diagnose(cli, a)
        }
        Command::Train(a) => cmd_train(cli, a),
        Command::Project(a) => {
            reject_config(cli, "project")?;
            cmd_project(cli, a)
        }
        Command::Retrieve(a) => {
            reject_config(cli, "retrieve")?;
            cmd_retrieve(cli, a)
        }
        Command::Classify(a) => {
            reject_config(cli, "classify")?;
            cmd_classify(cli, a)
        }
        Command::Evaluate(a) => {
            reject_config(cli, "evaluate")?;
            cmd_evaluate(cli, a)
        }
        Command::AblateNoise(a) => {
            reject_config(cli, "ablate-noise")?;
            cmd_ablate_noise(cli, a)
        }
        Command::AblateSamples(a) => {
            reject_config(cli, "ablate-samples")?;
            cmd_ablate_samples(cli, a)
        }
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn cmd_compute_offset(cli: &Cli, a: &ComputeOffsetArgs) -> Result<()> {
    let mut text = read_embeddings(&a.text)?;
    let mut modal = read_embeddings(&a.modal)?;
    if a.normalize {
        text = text.normalized()?;
        modal = modal.normalized()?;
    }
    let mut profile = compute_offset(&text, &modal)?;
    profile.modality = a.modality.clone();
    let path = out_path(cli, "offset.json")?;
    profile.write(&path)?;
    println!(
        "offset: dim {} |delta| {:.6} from {} text / {} modal samples -> {}",
        profile.dim(),
        crate::linalg::norm(&profile.delta),
        profile.n_text,
        profile.n_modal,
        path.display()
    );
    Ok(())
}

fn cmd_diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<()> {
    let text = read_embeddings(&a.text)?;
    let modal = read_embeddings(&a.modal)?;
    let profile = OffsetProfile::read(&a.profile)?;
    let paired = match &a.pairs {
        Some(p) => PairedDataset::new(text, modal, read_pairs(p)?)?,
        None => PairedDataset::by_shared_ids(text, modal)?,
    };
    let seed = derive_seed(cli.seed.unwrap_or(0), "cli", "diagnose");
    let report = measure_geometry(&paired, &profile, a.n_intra_pairs, seed)?;
    let path = out_path(cli, "geometry.json")?;
    write_text(&path, &(report.to_json() + "\n"))?;
    println!(
        "gap consistency {:.4} ± {:.4}, orthogonality {:.4} ± {:.4} -> {}",
        report.gap_consistency.mean,
        report.gap_consistency.std,
        report.orthogonality.mean,
        report.orthogonality.std,
        path.display()
    );
    Ok(())
}

fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    cfg.validate()?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    if a.print_defaults {
        print!("{}", to_json(&PipelineConfig::default()));
        return Ok(());
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "train needs a pipeline config"))?;
    let mut cfg = load_pipeline_config(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;

    let text = read_embeddings(&cfg.text)?;
    let anchor = read_embeddings(&cfg.anchor)?;
    let profile = OffsetProfile::read(&cfg.profile)?;
    let d_hidden = cfg.d_hidden.unwrap_or(text.dim());
    let init = init_projection(text.dim(), d_hidden, anchor.dim(), cfg.seed)?;
    let (net, history) = train_with_observer(&text, &anchor, &profile, &cfg.train, init, |r| {
        eprintln!("epoch {:>4}  loss {:.6}  lr {:.3e}", r.epoch, r.loss, r.lr)
    })?;

    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
    let net_path = out_dir.join("projector.gbp");
    ensure_parent(&net_path)?;
    write_projection(&net, &net_path)?;
    write_text(&out_dir.join("history.jsonl"), &history.to_jsonl())?;

    if let Some(modal_path) = &cfg.modal {
        let modal = read_embeddings(modal_path)?;
        let reports = post_train_eval(&net, &profile, &text, &modal, &anchor, &cfg.k_values)?;
        write_text(&out_dir.join("train_eval.json"), &to_json(&reports))?;
    }
    println!("trained {} parameters -> {}", net.n_params(), net_path.display());
    Ok(())
}

/// Text-query and modal-query R@k against the anchor set over shared ids.
fn post_train_eval(
    net: &ProjectionNet,
    profile: &OffsetProfile,
    text: &EmbeddingSet,
    modal: &EmbeddingSet,
    anchor: &EmbeddingSet,
    k_values: &[usize],
) -> Result<Vec<EvalReport>> {
    let k_max = k_values.iter().copied().max().unwrap_or(1);
    let truth = identity_truth(anchor.ids());
    let text_rank = retrieve(&project_text(net, profile, text)?, anchor, k_max)?;
    let modal_rank = retrieve(&project_modal(net, profile, modal)?, anchor, k_max)?;
    let mut out = Vec::new();
    for &k in k_values {
        let t = recall_at_k(&text_rank, &truth, k)?;
        let m = recall_at_k(&modal_rank, &truth, k)?;
        out.push(EvalReport::new(format!("text R@{k}"), t, Some(k)));
        let modal_report = EvalReport::new(format!("modal R@{k}"), m, Some(k));
        out.push(if t > 0.0 {
            modal_report.with_reference(t)?
        } else {
            modal_report
        });
    }
    Ok(out)
}

fn cmd_project(cli: &Cli, a: &ProjectArgs) -> Result<()> {
    let net = read_projection(&a.net)?;
    let profile = OffsetProfile::read(&a.profile)?;
    let input = read_embeddings(&a.input)?;
    let projected = match a.branch {
        BranchArg::Text => project_text(&net, &profile, &input)?,
        BranchArg::Modal => project_modal(&net, &profile, &input)?,
    };
    let path = out_path(cli, &a.output)?;
    write_embeddings(&projected, &path)?;
    println!("projected {} rows to dim {} -> {}", projected.len(), projected.dim(), path.display());
    Ok(())
}

fn cmd_retrieve(cli: &Cli, a: &RetrieveArgs) -> Result<()> {
    let queries = read_embeddings(&a.queries)?;
    let gallery = read_embeddings(&a.gallery)?;
    let ranking = retrieve(&queries, &gallery, a.k)?;
    let path = out_path(cli, "ranking.jsonl")?;
    write_text(&path, &ranking.to_jsonl())?;
    println!("ranked {} queries -> {}", ranking.queries.len(), path.display());
    Ok(())
}

fn cmd_classify(cli: &Cli, a: &ClassifyArgs) -> Result<()> {
    let samples = read_embeddings(&a.samples)?;
    let classes = read_embeddings(&a.classes)?;
    let preds = classify_zero_shot(&samples, &classes, a.k.unwrap_or(classes.len()))?;
    let path = out_path(cli, "predictions.jsonl")?;
    write_text(&path, &predictions_to_jsonl(&preds))?;
    println!("classified {} samples -> {}", preds.len(), path.display());
    Ok(())
}

fn ground_truth(pairs: Option<&PathBuf>, side: QuerySide, ranking: &RankingResult) -> Result<GroundTruth> {
    Ok(match pairs {
        Some(p) => truth_from_pairs(&read_pairs(p)?, side == QuerySide::Text),
        None => identity_truth(&ranking.queries.iter().map(|q| q.query.as_str()).collect::<Vec<_>>()),
    })
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let missing = |what: &str| Error::config(what, format!("required for --metric {:?}", a.metric));
    let value = match (a.score, a.metric) {
        (Some(v), _) => v,
        (None, MetricArg::Recall | MetricArg::Mrr) => {
            let ranking = RankingResult::read_jsonl(a.ranking.as_ref().ok_or_else(|| missing("--ranking"))?)?;
            let truth = ground_truth(a.pairs.as_ref(), a.query_side, &ranking)?;
            if a.metric == MetricArg::Recall {
                recall_at_k(&ranking, &truth, a.k)?
            } else {
                mrr_at_k(&ranking, &truth, a.k)?
            }
        }
        (None, MetricArg::TopK | MetricArg::Map) => {
            let preds = read_predictions(a.predictions.as_ref().ok_or_else(|| missing("--predictions"))?)?;
            let labels = read_labels(a.labels.as_ref().ok_or_else(|| missing("--labels"))?)?;
            if a.metric == MetricArg::TopK {
                top_k_accuracy(&preds, &labels, a.k)?
            } else {
                let map = labels.as_map();
                let rows = preds
                    .iter()
                    .map(|p| {
                        map.get(p.id.as_str())
                            .map(|l| l.to_vec())
                            .ok_or_else(|| Error::Validation(format!("sample {:?} has no labels", p.id)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                mean_average_precision(&score_matrix(&preds, labels.n_classes())?, &rows)?
            }
        }
    };
    let k = (a.metric != MetricArg::Map).then_some(a.k);
    let mut report = EvalReport::new(a.metric.label(a.k), value, k);
    if let Some(r) = a.reference {
        report = report.with_reference(r)?;
    }
    let path = out_path(cli, "report.json")?;
    write_text(&path, &to_json(&report))?;
    match report.ppr {
        Some(p) => println!("{} = {:.4} (PPR {:.1}%) -> {}", report.metric, value, p, path.display()),
        None => println!("{} = {:.4} -> {}", report.metric, value, path.display()),
    }
    Ok(())
}

/// Loads what the ablations share and returns a closure scoring a profile.
fn retrieval_evaluator(
    a: &RetrievalEvalArgs,
) -> Result<impl FnMut(&OffsetProfile) -> Result<f64>> {
    let net = read_projection(&a.net)?;
    let queries = read_embeddings(&a.queries)?;
    let gallery = read_embeddings(&a.gallery)?;
    let truth = match &a.pairs {
        Some(p) => truth_from_pairs(&read_pairs(p)?, false),
        None => identity_truth(queries.ids()),
    };
    let (metric, k) = (a.metric, a.k);
    Ok(move |profile: &OffsetProfile| {
        let projected = project_modal(&net, profile, &queries)?;
        let ranking = retrieve(&projected, &gallery, k)?;
        match metric {
            RetrievalMetric::Recall => recall_at_k(&ranking, &truth, k),
            RetrievalMetric::Mrr => mrr_at_k(&ranking, &truth, k),
        }
    })
}

fn metric_label(a: &RetrievalEvalArgs) -> String {
    match a.metric {
        RetrievalMetric::Recall => format!("R@{}", a.k),
        RetrievalMetric::Mrr => format!("MRR@{}", a.k),
    }
}

#[derive(Serialize)]
struct NoiseAblationOutput<'a> {
    metric: String,
    config: &'a NoiseAblationConfig,
    rows: Vec<crate::eval::NoiseRow>,
}

fn cmd_ablate_noise(cli: &Cli, a: &AblateNoiseArgs) -> Result<()> {
    let profile = OffsetProfile::read(&a.profile)?;
    let cfg = NoiseAblationConfig {
        sigmas: a.sigmas.clone(),
        seed: cli.seed.unwrap_or(0),
        trials: a.trials,
    };
    let eval = retrieval_evaluator(&a.eval)?;
    let rows = ablate_offset_noise(&profile, &cfg, eval)?;
    let label = metric_label(&a.eval);
    let table = render_noise_table(&label, &rows);
    write_text(&out_path(cli, "noise_ablation.txt")?, &table)?;
    let out = NoiseAblationOutput {
        metric: label,
        config: &cfg,
        rows,
    };
    write_text(&out_path(cli, "noise_ablation.json")?, &to_json(&out))?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SampleAblationOutput {
    metric: String,
    seed: u64,
    full_sample_metric: f64,
    rows: Vec<crate::eval::SampleRow>,
}

fn cmd_ablate_samples(cli: &Cli, a: &AblateSamplesArgs) -> Result<()> {
    let text = read_embeddings(&a.text)?;
    let modal = read_embeddings(&a.modal)?;
    let eval = retrieval_evaluator(&a.eval)?;
    let seed = cli.seed.unwrap_or(0);
    let (reference, rows) = ablate_offset_samples(&text, &modal, &a.sizes, seed, eval)?;
    let label = metric_label(&a.eval);
    let table = render_sample_table(&label, &rows);
    write_text(&out_path(cli, "sample_ablation.txt")?, &table)?;
    let out = SampleAblationOutput {
        metric: label,
        seed,
        full_sample_metric: reference,
        rows,
    };
    write_text(&out_path(cli, "sample_ablation.json")?, &to_json(&out))?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = a.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.anchor_dim {
        cfg.anchor_dim = v;
    }
    if let Some(v) = a.deviation_sigma {
        cfg.deviation_sigma = v;
    }
    if let Some(v) = a.ortho_leak {
        cfg.ortho_leak = v;
    }
    let world = generate_world(&cfg)?;
    world.export(&cli.out_dir)?;
    println!(
        "synthetic world: {} samples, dim {} -> anchor {} in {}",
        cfg.n_samples,
        cfg.dim,
        cfg.anchor_dim,
        cli.out_dir.display()
    );
    Ok(())
}
