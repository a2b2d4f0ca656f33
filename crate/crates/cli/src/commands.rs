use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use poe_core::forge::synthetic::{
    lexicon, overlap_eval_set, selection_tasks, synthetic_dialogues, DialogueSpec,
};
use poe_core::forge::{
    build_domain_dataset, read_jsonl_file, write_jsonl, ContextResponsePair, Dialogue,
    DomainDataset, ForgeStats, JsonlRecord, NoopProvider, OracleTeacher,
};
use poe_core::fusion::{pooled_panel, score, score_pair, FusionMode};
use poe_core::meta_eval::{
    evaluate_metric, hits_at_1, EvalDataset, EvaluationRecord, FnScorer, OutOfDomain, PairScorer,
    PanelScorer, ScoreReport, SelectionTask,
};
use poe_core::panel::{
    build_vocab, checkpoint_from_bytes, checkpoint_to_bytes, encode_pair, init_panel, PanelError,
    Vocab,
};
use poe_core::trainer::{
    fewshot_finetune, finetune_adapters, train_multitask, train_new_adapter, validation_accuracy,
    FewShotReport, HistoryRecord,
};
use poe_core::PanelParameters;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{sha256_bytes, ManifestBuilder};

pub const CHECKPOINT_FILE: &str = "checkpoint.poe";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "poe",
    version,
    about = "Panel-of-experts dialogue response scorer"
)]
pub struct Cli {
    /// TOML run configuration (sections: panel, train, adapter, forge, fewshot).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Root seed; falls back to the config file, then POE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic dialogues, annotated eval sets and selection tasks.
    Synth(SynthArgs),
    /// Build labeled train/validation pairs from dialogue JSONL.
    Forge(ForgeArgs),
    /// Multitask training followed by per-domain adapter finetuning.
    Train(TrainArgs),
    /// Score context-response pairs, one ScoreTrace per line.
    Score(ScoreArgs),
    /// Pool all experts into a single-expert checkpoint.
    Pool(PoolArgs),
    /// Correlate metric scores with human scores per dataset.
    Eval(EvalArgs),
    /// Few-shot regression transfer over a K% grid and several seeds.
    Fewshot(FewshotArgs),
    /// Hits@1 on 20-candidate response selection tasks.
    Select(SelectArgs),
    /// Train one new expert on a frozen panel.
    NewAdapter(NewAdapterArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',', default_value = "chat,task")]
    pub domains: Vec<String>,
    #[arg(long, default_value_t = 150)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_records: usize,
    #[arg(long, default_value_t = 100)]
    pub selection_tasks: usize,
    /// Uniform jitter added to the human quality signal.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Dialogue JSONL files; dialogues are grouped by their domain field.
    #[arg(long, num_args = 1.., required = true)]
    pub dialogues: Vec<PathBuf>,
    /// Accept records with extra fields.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and valid.jsonl from `forge`.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Context-response pair JSONL.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Route each pair to the expert of its domain field when one exists.
    #[arg(long, conflicts_with = "hint")]
    pub use_domain: bool,
    /// Route every pair to this domain's expert.
    #[arg(long)]
    pub hint: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "avg")]
    pub mode: FusionMode,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Annotated JSONL files, one dataset each, named by file stem.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Score out-of-domain data with a pooled expert instead of late fusion.
    #[arg(long)]
    pub pooled: Option<FusionMode>,
    /// Score every record with its own human score (harness check).
    #[arg(long, conflicts_with_all = ["checkpoint", "pooled"])]
    pub oracle: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    /// Pooled checkpoint; multi-expert checkpoints are pooled with `--mode` first.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "avg")]
    pub mode: FusionMode,
    /// Annotated JSONL dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Selection task JSONL.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Expert to score with; all experts are averaged without it.
    #[arg(long)]
    pub hint: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct NewAdapterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding train.jsonl and valid.jsonl for one new domain.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn execute(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.command {
        Command::Synth(a) => synth(&a, &cfg, argv),
        Command::Forge(a) => forge(&a, &cfg, argv),
        Command::Train(a) => train(&a, &cfg, argv),
        Command::Score(a) => score_cmd(&a, &cfg, argv),
        Command::Pool(a) => pool(&a, &cfg, argv),
        Command::Eval(a) => eval(&a, &cfg, argv),
        Command::Fewshot(a) => fewshot(&a, &cfg, argv),
        Command::Select(a) => select(&a, &cfg, argv),
        Command::NewAdapter(a) => new_adapter(&a, &cfg, argv),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "input {} does not exist",
            path.display()
        )))
    }
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::from(e).context(dir.display()))
}

fn read_records<T: JsonlRecord>(path: &Path, strict: bool) -> Result<Vec<T>, CliError> {
    require_file(path)?;
    read_jsonl_file(path, strict).map_err(|e| CliError::from(e).context(path.display()))
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn load_checkpoint(
    path: &Path,
    mb: &mut ManifestBuilder,
) -> Result<(PanelParameters, Vocab), CliError> {
    require_file(path)?;
    let bytes = std::fs::read(path)?;
    mb.input(path)?;
    let ckpt = checkpoint_from_bytes::<f64>(&bytes).map_err(|e| {
        let err = match e {
            PanelError::NonFiniteParameter(_) => CliError::from(e),
            other => CliError::checkpoint(other.to_string()),
        };
        err.context(path.display())
    })?;
    Ok((ckpt.panel, ckpt.vocab))
}

fn save_checkpoint(
    mb: &mut ManifestBuilder,
    panel: &PanelParameters,
    vocab: &Vocab,
) -> Result<String, CliError> {
    let bytes = checkpoint_to_bytes(panel, vocab);
    mb.output(CHECKPOINT_FILE, &bytes)?;
    Ok(sha256_bytes(&bytes))
}

/// Groups labeled pairs from `forge` into per-domain datasets, sorted by domain.
fn load_labeled(dir: &Path, mb: &mut ManifestBuilder) -> Result<Vec<DomainDataset>, CliError> {
    let (train_path, valid_path) = (dir.join(TRAIN_FILE), dir.join(VALID_FILE));
    let train: Vec<ContextResponsePair> = read_records(&train_path, true)?;
    let valid: Vec<ContextResponsePair> = read_records(&valid_path, true)?;
    mb.input(&train_path)?;
    mb.input(&valid_path)?;
    let mut by_domain: BTreeMap<String, DomainDataset> = BTreeMap::new();
    for (pairs, is_train) in [(train, true), (valid, false)] {
        for p in pairs {
            if p.label.is_none() {
                return Err(CliError::schema(format!(
                    "unlabeled pair in {} domain {}",
                    dir.display(),
                    p.domain
                )));
            }
            let ds = by_domain
                .entry(p.domain.clone())
                .or_insert_with(|| DomainDataset {
                    domain: p.domain.clone(),
                    ..Default::default()
                });
            if is_train {
                &mut ds.train
            } else {
                &mut ds.validation
            }
            .push(p);
        }
    }
    if let Some(ds) = by_domain
        .values()
        .find(|d| d.train.is_empty() || d.validation.is_empty())
    {
        return Err(CliError::schema(format!(
            "domain {} lacks train or validation pairs",
            ds.domain
        )));
    }
    if by_domain.is_empty() {
        return Err(CliError::schema(format!(
            "no labeled pairs in {}",
            dir.display()
        )));
    }
    Ok(by_domain.into_values().collect())
}

fn write_history(mb: &mut ManifestBuilder, history: &[HistoryRecord]) -> Result<(), CliError> {
    mb.output("history.jsonl", &jsonl_bytes(history)?)?;
    Ok(())
}

fn synth(a: &SynthArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    if a.domains.is_empty() || a.domains.iter().any(|d| d.trim().is_empty()) {
        return Err(CliError::usage(
            "--domains needs at least one non-empty name",
        ));
    }
    if a.dialogues < 2 {
        return Err(CliError::usage("--dialogues must be at least 2"));
    }
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("synth", argv, cfg, &a.out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (i, d) in a.domains.iter().enumerate() {
        let dialogues = synthetic_dialogues(&DialogueSpec::new(d, a.dialogues), &mut rng);
        mb.output(&format!("dialogues-{d}.jsonl"), &jsonl_bytes(&dialogues)?)?;
        // low-quality responses borrow words from the next domain's topics
        let off = lexicon(&a.domains[(i + 1) % a.domains.len()], 40);
        let off = if a.domains.len() == 1 {
            lexicon("offtopic", 40)
        } else {
            off
        };
        let records = overlap_eval_set(d, &lexicon(d, 40), &off, a.eval_records, a.noise, &mut rng);
        mb.output(&format!("eval-{d}.jsonl"), &jsonl_bytes(&records)?)?;
        let tasks = selection_tasks(&dialogues, a.selection_tasks, &mut rng);
        mb.output(&format!("select-{d}.jsonl"), &jsonl_bytes(&tasks)?)?;
    }
    let unseen = overlap_eval_set(
        "unseen",
        &lexicon("unseen", 40),
        &lexicon(&a.domains[0], 40),
        a.eval_records,
        a.noise,
        &mut rng,
    );
    mb.output("eval-unseen.jsonl", &jsonl_bytes(&unseen)?)?;
    let m = mb.finish()?;
    println!("wrote {} files to {}", m.outputs.len(), a.out_dir.display());
    Ok(())
}

fn forge(a: &ForgeArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("forge", argv, cfg, &a.out_dir)?;
    let mut by_domain: BTreeMap<String, Vec<Dialogue>> = BTreeMap::new();
    for path in &a.dialogues {
        let dialogues: Vec<Dialogue> = read_records(path, !a.lenient)?;
        mb.input(path)?;
        for d in dialogues {
            by_domain.entry(d.domain.clone()).or_default().push(d);
        }
    }
    if by_domain.is_empty() {
        return Err(CliError::schema("no dialogues in input"));
    }
    let teacher = OracleTeacher {
        noise: cfg.forge.teacher_noise,
        seed: cfg.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    let mut stats: BTreeMap<String, ForgeStats> = BTreeMap::new();
    for (domain, dialogues) in &by_domain {
        let (ds, st) = build_domain_dataset(
            dialogues,
            &teacher,
            &NoopProvider,
            &cfg.forge.config,
            &mut rng,
        )
        .map_err(|e| CliError::from(e).context(format!("domain {domain}")))?;
        println!(
            "{domain}: {} dialogues, {} candidates, {} train / {} validation pairs",
            st.dialogues, st.gate.candidates, st.train, st.validation
        );
        train.extend(ds.train);
        valid.extend(ds.validation);
        stats.insert(domain.clone(), st);
    }
    mb.output(TRAIN_FILE, &jsonl_bytes(&train)?)?;
    mb.output(VALID_FILE, &jsonl_bytes(&valid)?)?;
    mb.output("stats.json", &json_bytes(&stats)?)?;
    mb.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    domains: Vec<String>,
    parameters: usize,
    multitask_steps: usize,
    multitask_best: f64,
    validation: BTreeMap<String, f64>,
    checkpoint_sha256: String,
}

fn train(a: &TrainArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("train", argv, cfg, &a.out_dir)?;
    let data = load_labeled(&a.data_dir, &mut mb)?;
    let vocab = build_vocab(&data, cfg.panel.min_count)?;
    let domains: Vec<String> = data.iter().map(|d| d.domain.clone()).collect();
    let panel = init_panel::<f64>(
        &cfg.panel.panel_config(vocab.len(), domains.clone()),
        cfg.seed,
    )?;
    log::info!(
        "panel with {} parameters over {:?}",
        panel.parameter_count(),
        domains
    );
    let out = train_multitask(&panel, &data, &vocab, &cfg.train, &mut |ev| {
        if ev.step % 100 == 0 {
            log::info!("{} step {} loss {:.4}", ev.stage, ev.step, ev.loss);
        }
    })?;
    let mut history = out.history;
    let mut model = out.panel;
    if cfg.adapter.enabled {
        let (tuned, h) = finetune_adapters(&model, &data, &vocab, &cfg.adapter.train)?;
        model = tuned;
        history.extend(h);
    }
    let validation = validation_accuracy(&model, &data, &vocab)?;
    let checkpoint_sha256 = save_checkpoint(&mut mb, &model, &vocab)?;
    write_history(&mut mb, &history)?;
    let summary = TrainSummary {
        domains,
        parameters: model.parameter_count(),
        multitask_steps: out.steps,
        multitask_best: out.best_validation,
        validation,
        checkpoint_sha256,
    };
    mb.output("summary.json", &json_bytes(&summary)?)?;
    mb.finish()?;
    for (d, acc) in &summary.validation {
        println!("{d:<16} validation accuracy {acc:.4}");
    }
    println!("checkpoint sha256 {}", summary.checkpoint_sha256);
    Ok(())
}

fn score_cmd(a: &ScoreArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("score", argv, cfg, &a.out_dir)?;
    let (panel, vocab) = load_checkpoint(&a.checkpoint, &mut mb)?;
    let pairs: Vec<ContextResponsePair> = read_records(&a.pairs, true)?;
    mb.input(&a.pairs)?;
    let hint = match &a.hint {
        Some(d) => Some(panel.config.domain_index(d).ok_or_else(|| {
            CliError::checkpoint(format!("checkpoint has no expert for domain {d}"))
        })?),
        None => None,
    };
    let mut traces = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let trace = match hint {
            Some(n) => score(
                &panel,
                &encode_pair(&vocab, &p.context, &p.response, panel.config.max_len)?,
                Some(n),
            ),
            None => score_pair(&panel, &vocab, p, a.use_domain),
        }
        .map_err(|e| CliError::from(e).context(format!("pair {}", i + 1)))?;
        traces.push(trace);
    }
    let passes: usize = traces.iter().map(|t| t.encoder_passes).sum();
    mb.output("scores.jsonl", &jsonl_bytes(&traces)?)?;
    mb.finish()?;
    println!("scored {} pairs with {passes} encoder passes", traces.len());
    Ok(())
}

fn pool(a: &PoolArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("pool", argv, cfg, &a.out_dir)?;
    let (panel, vocab) = load_checkpoint(&a.checkpoint, &mut mb)?;
    let pooled = pooled_panel(&panel, a.mode)?;
    let digest = save_checkpoint(&mut mb, &pooled, &vocab)?;
    mb.finish()?;
    println!(
        "pooled {} experts ({}) into {digest}",
        panel.experts(),
        a.mode
    );
    Ok(())
}

fn eval_datasets(
    paths: &[PathBuf],
    mb: &mut ManifestBuilder,
) -> Result<Vec<EvalDataset>, CliError> {
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let records: Vec<EvaluationRecord> = read_records(path, true)?;
        mb.input(path)?;
        let domain = records
            .first()
            .map(|r| r.domain.clone())
            .ok_or_else(|| CliError::schema(format!("{} is empty", path.display())))?;
        if let Some(r) = records.iter().find(|r| r.domain != domain) {
            return Err(CliError::schema(format!(
                "{} mixes domains {domain} and {}",
                path.display(),
                r.domain
            )));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push(EvalDataset {
            name,
            domain,
            records,
        });
    }
    Ok(out)
}

fn write_report(mb: &mut ManifestBuilder, report: &ScoreReport) -> Result<(), CliError> {
    let table = report.to_table();
    mb.output("report.json", &json_bytes(report)?)?;
    mb.output("report.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("eval", argv, cfg, &a.out_dir)?;
    let datasets = eval_datasets(&a.data, &mut mb)?;
    let report = if a.oracle {
        let truth: HashMap<(Vec<String>, String), f64> = datasets
            .iter()
            .flat_map(|d| &d.records)
            .map(|r| ((r.context.clone(), r.response.clone()), r.human_score))
            .collect();
        let scorer = FnScorer(move |c: &[String], r: &str, _: Option<&str>| {
            truth[&(c.to_vec(), r.to_string())]
        });
        evaluate_metric(&scorer, &datasets, &[])?
    } else {
        let ckpt = a
            .checkpoint
            .as_deref()
            .expect("clap requires a checkpoint without --oracle");
        let (panel, vocab) = load_checkpoint(ckpt, &mut mb)?;
        let out_of_domain = match a.pooled {
            Some(mode) => OutOfDomain::Pooled(pooled_panel(&panel, mode)?),
            None => OutOfDomain::LateFusion,
        };
        let scorer = PanelScorer {
            panel: &panel,
            vocab: &vocab,
            out_of_domain,
        };
        evaluate_metric(&scorer as &dyn PairScorer, &datasets, &panel.config.domains)?
    };
    write_report(&mut mb, &report)?;
    mb.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct FewShotRow {
    k_percent: f64,
    mean_rho_before: f64,
    mean_rho_after: f64,
    runs: Vec<FewShotReport>,
}

fn fewshot(a: &FewshotArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("fewshot", argv, cfg, &a.out_dir)?;
    let (panel, vocab) = load_checkpoint(&a.checkpoint, &mut mb)?;
    let model = if panel.experts() == 1 {
        panel
    } else {
        pooled_panel(&panel, a.mode)?
    };
    let records: Vec<EvaluationRecord> = read_records(&a.data, true)?;
    mb.input(&a.data)?;
    let fs = &cfg.fewshot;
    let mut rows = Vec::with_capacity(fs.k.len());
    for &k in &fs.k {
        let mut runs = Vec::with_capacity(fs.seeds);
        for s in 0..fs.seeds as u64 {
            let mut tc = fs.train.clone();
            tc.seed = cfg.seed + s;
            let (_, rep) = fewshot_finetune(&model, &vocab, &records, k, &tc, fs.adapter_only)?;
            runs.push(rep);
        }
        let n = runs.len() as f64;
        rows.push(FewShotRow {
            k_percent: k,
            mean_rho_before: runs.iter().map(|r| r.rho_before).sum::<f64>() / n,
            mean_rho_after: runs.iter().map(|r| r.rho_after).sum::<f64>() / n,
            runs,
        });
    }
    mb.output("fewshot.json", &json_bytes(&rows)?)?;
    mb.finish()?;
    println!("{:>6} {:>10} {:>10}", "K%", "rho before", "rho after");
    for r in &rows {
        println!(
            "{:>6} {:>10.4} {:>10.4}",
            r.k_percent, r.mean_rho_before, r.mean_rho_after
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectSummary {
    tasks: usize,
    hint: Option<String>,
    hits_at_1: f64,
}

fn select(a: &SelectArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("select", argv, cfg, &a.out_dir)?;
    let (panel, vocab) = load_checkpoint(&a.checkpoint, &mut mb)?;
    let tasks: Vec<SelectionTask> = read_records(&a.tasks, true)?;
    mb.input(&a.tasks)?;
    if let Some(h) = &a.hint {
        if panel.config.domain_index(h).is_none() {
            return Err(CliError::checkpoint(format!(
                "checkpoint has no expert for domain {h}"
            )));
        }
    }
    let scorer = PanelScorer {
        panel: &panel,
        vocab: &vocab,
        out_of_domain: OutOfDomain::LateFusion,
    };
    let summary = SelectSummary {
        tasks: tasks.len(),
        hint: a.hint.clone(),
        hits_at_1: hits_at_1(&scorer, &tasks, a.hint.as_deref())?,
    };
    mb.output("select.json", &json_bytes(&summary)?)?;
    mb.finish()?;
    println!(
        "hits@1 {:.4} over {} tasks",
        summary.hits_at_1, summary.tasks
    );
    Ok(())
}

fn new_adapter(a: &NewAdapterArgs, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut mb = ManifestBuilder::new("new-adapter", argv, cfg, &a.out_dir)?;
    let (panel, vocab) = load_checkpoint(&a.checkpoint, &mut mb)?;
    let mut data = load_labeled(&a.data_dir, &mut mb)?;
    if data.len() != 1 {
        return Err(CliError::schema(format!(
            "expected one new domain, found {}",
            data.len()
        )));
    }
    let ds = data.remove(0);
    if panel.config.domain_index(&ds.domain).is_some() {
        return Err(CliError::checkpoint(format!(
            "checkpoint already has an expert for {}",
            ds.domain
        )));
    }
    let out = train_new_adapter(&panel, &ds, &vocab, &cfg.adapter.train)?;
    let acc = validation_accuracy(&out.panel, std::slice::from_ref(&ds), &vocab)?;
    let digest = save_checkpoint(&mut mb, &out.panel, &vocab)?;
    write_history(&mut mb, &out.history)?;
    mb.finish()?;
    println!(
        "{} validation accuracy {:.4}; checkpoint sha256 {digest}",
        ds.domain, acc[&ds.domain]
    );
    Ok(())
}
