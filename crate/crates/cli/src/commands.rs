use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use aqa_core::annotations::{
    check_annotations_file, generate_qa, load_annotations, load_predictions, qa_to_jsonl,
    synth_dataset, to_jsonl, ActionInstance, IngestError, SynthConfig, TemplateSet,
};
use aqa_core::grpo::{train, AdvantageMode, TrainConfig};
use aqa_core::metrics::{evaluate as evaluate_corpus, EvalOptions, ReportFormat};
use aqa_core::rewards::{reward_total, ParsePolicy, RewardBreakdown, RewardConfig, TemporalMode};
use aqa_core::sar::ExtractionSchema;

use crate::fail::{read_text, write_atomic, CmdResult, ExitKind, Failure};
use crate::manifest::RunManifest;

/// Iterations averaged at each end of a training trace for the summary.
const SUMMARY_WINDOW: usize = 50;

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn write_outputs(out: &Path, files: &[(&str, String)], manifest: &RunManifest) -> CmdResult<()> {
    for (name, contents) in files {
        write_atomic(&out.join(name), contents.as_bytes())?;
    }
    write_atomic(&out.join("manifest.json"), manifest.to_json().as_bytes())
}

fn file_names(files: &[(&str, String)]) -> Vec<String> {
    files.iter().map(|(n, _)| n.to_string()).collect()
}

pub fn validate(annotations: &Path, out: Option<&Path>) -> CmdResult<()> {
    let report = check_annotations_file(annotations)?;
    for e in &report.errors {
        eprintln!("{}: {e}", display(annotations));
    }
    let manifest = RunManifest::new(
        "validate",
        &json!({}),
        None,
        vec![display(annotations)],
        Vec::new(),
    );
    match out {
        Some(dir) => write_outputs(dir, &[], &manifest)?,
        None => eprint!("{}", manifest.to_json()),
    }
    match report.errors.first() {
        None => {
            println!("{}: {} instances ok", display(annotations), report.instances.len());
            Ok(())
        }
        Some(first) => Err(Failure::msg(
            exit_kind(first),
            format!(
                "{} of {} lines rejected",
                report.errors.len(),
                report.errors.len() + report.instances.len()
            ),
        )),
    }
}

/// The exit class of an ingest error; the first rejected line decides the
/// code for a whole file.
fn exit_kind(e: &IngestError) -> ExitKind {
    match e {
        IngestError::Io { .. } => ExitKind::Io,
        IngestError::SchemaViolation { .. } => ExitKind::Schema,
        IngestError::InvariantViolation { .. } => ExitKind::Invariant,
    }
}

fn load_reward_config(weights: Option<&Path>, strict_temporal: bool) -> CmdResult<RewardConfig> {
    let mut cfg = match weights {
        Some(p) => RewardConfig::from_toml_str(&read_text(p)?)?,
        None => RewardConfig::default(),
    };
    if strict_temporal {
        cfg.temporal_mode = TemporalMode::Strict;
    }
    Ok(cfg)
}

pub struct ScoreOptions {
    pub annotations: PathBuf,
    pub predictions: PathBuf,
    pub weights: Option<PathBuf>,
    pub strict_temporal: bool,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub id: String,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n_matched: usize,
    pub unmatched_annotations: Vec<String>,
    pub unmatched_predictions: Vec<String>,
    /// Component means over matched instances, in annotation order.
    pub mean: RewardBreakdown,
}

impl ScoreSummary {
    fn render(&self, format: ReportFormat) -> String {
        let m = &self.mean;
        let cols = [
            ("n_matched", self.n_matched.to_string()),
            ("r_form", format!("{:.4}", m.r_form)),
            ("r_temp", format!("{:.4}", m.r_temp)),
            ("r_cls", format!("{:.4}", m.r_cls)),
            ("r_sub", format!("{:.4}", m.r_sub)),
            ("r_action", format!("{:.4}", m.r_action)),
            ("r_score", format!("{:.4}", m.r_score)),
            ("total", format!("{:.4}", m.total)),
        ];
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("summary serialises") + "\n",
            ReportFormat::Csv => {
                let head: Vec<&str> = cols.iter().map(|c| c.0).collect();
                let row: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
                format!("{}\n{}\n", head.join(","), row.join(","))
            }
            ReportFormat::Table => {
                let mut out = String::new();
                for (name, value) in cols {
                    let _ = writeln!(out, "{name:<10} {value:>10}");
                }
                out
            }
        }
    }
}

fn mean_breakdown(rows: &[RewardBreakdown]) -> RewardBreakdown {
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&RewardBreakdown) -> f64| rows.iter().map(f).sum::<f64>() / n;
    RewardBreakdown {
        r_form: avg(|r| r.r_form),
        r_temp: avg(|r| r.r_temp),
        r_cls: avg(|r| r.r_cls),
        r_sub: avg(|r| r.r_sub),
        r_action: avg(|r| r.r_action),
        r_score: avg(|r| r.r_score),
        total: avg(|r| r.total),
    }
}

/// Splits ids into matched pairs (annotation order) and the unmatched
/// remainder on each side.
fn align<'a>(
    gts: &'a [ActionInstance],
    preds: &'a [(String, String)],
) -> (Vec<(&'a ActionInstance, &'a str)>, Vec<String>, Vec<String>) {
    let by_id: HashMap<&str, &str> = preds.iter().map(|(i, t)| (i.as_str(), t.as_str())).collect();
    let gt_ids: BTreeSet<&str> = gts.iter().map(|g| g.instance_id.as_str()).collect();
    let mut matched = Vec::new();
    let mut missing = Vec::new();
    for g in gts {
        match by_id.get(g.instance_id.as_str()) {
            Some(t) => matched.push((g, *t)),
            None => missing.push(g.instance_id.clone()),
        }
    }
    let extra = preds
        .iter()
        .filter(|(i, _)| !gt_ids.contains(i.as_str()))
        .map(|(i, _)| i.clone())
        .collect();
    (matched, missing, extra)
}

pub fn score(opts: &ScoreOptions) -> CmdResult<()> {
    let config = load_reward_config(opts.weights.as_deref(), opts.strict_temporal)?;
    let gts = load_annotations(&opts.annotations)?;
    let preds = load_predictions(&opts.predictions)?;
    let (matched, missing, extra) = align(&gts, &preds);
    for id in &missing {
        warn!("no prediction for annotation `{id}`");
    }
    for id in &extra {
        warn!("prediction `{id}` has no annotation");
    }
    if matched.is_empty() {
        return Err(Failure::msg(ExitKind::Alignment, "no prediction id matches an annotation id"));
    }
    let lines: Vec<ScoreLine> = matched
        .iter()
        .map(|(g, text)| ScoreLine {
            id: g.instance_id.clone(),
            reward: reward_total(g, text, &config),
        })
        .collect();
    let rewards: Vec<RewardBreakdown> = lines.iter().map(|l| l.reward).collect();
    let summary = ScoreSummary {
        n_matched: lines.len(),
        unmatched_annotations: missing,
        unmatched_predictions: extra,
        mean: mean_breakdown(&rewards),
    };
    info!("scored {} instances", lines.len());
    print!("{}", summary.render(opts.format));

    if let Some(out) = &opts.out {
        let jsonl: String = lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("score line serialises") + "\n")
            .collect();
        let files = [
            ("scores.jsonl", jsonl),
            ("summary.json", summary.render(ReportFormat::Json)),
        ];
        let manifest = RunManifest::new(
            "score",
            &config.to_json_value(),
            None,
            vec![display(&opts.annotations), display(&opts.predictions)],
            file_names(&files),
        );
        write_outputs(out, &files, &manifest)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfigFile {
    parse_policy: ParsePolicy,
    schema: ExtractionSchema,
}

impl Default for EvalConfigFile {
    fn default() -> Self {
        Self {
            parse_policy: ParsePolicy::Strict,
            schema: ExtractionSchema::default(),
        }
    }
}

pub struct EvaluateOptions {
    pub annotations: PathBuf,
    pub predictions: PathBuf,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

pub fn evaluate(opts: &EvaluateOptions) -> CmdResult<()> {
    let file: EvalConfigFile = match &opts.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Failure::new(ExitKind::Schema, e))?,
        None => EvalConfigFile::default(),
    };
    file.schema
        .validate()
        .map_err(|e| Failure::new(ExitKind::Schema, e))?;
    let options = EvalOptions {
        parse_policy: file.parse_policy,
        schema: file.schema.clone(),
    };
    let gts = load_annotations(&opts.annotations)?;
    let preds = load_predictions(&opts.predictions)?;
    let (_, missing, extra) = align(&gts, &preds);
    for id in &missing {
        warn!("no prediction for annotation `{id}`; counted as a parse failure");
    }
    for id in &extra {
        warn!("prediction `{id}` has no annotation; ignored");
    }
    let report = evaluate_corpus(&gts, &preds.into_iter().collect(), &options);
    print!("{}", report.render(opts.format));

    if let Some(out) = &opts.out {
        let files = [
            ("report.json", report.to_json()),
            ("report.txt", report.to_table()),
            ("report.csv", report.to_csv()),
        ];
        let manifest = RunManifest::new(
            "evaluate",
            &serde_json::to_value(&file).expect("config serialises"),
            None,
            vec![display(&opts.annotations), display(&opts.predictions)],
            file_names(&files),
        );
        write_outputs(out, &files, &manifest)?;
    }
    Ok(())
}

pub fn gen(config: Option<&Path>, seed: u64, out: &Path) -> CmdResult<()> {
    let cfg = match config {
        Some(p) => SynthConfig::from_toml_str(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.validate()?;
    let data = synth_dataset(&cfg, seed)?;
    let templates = TemplateSet::builtin();
    let qa = data
        .iter()
        .map(|inst| generate_qa(inst, &templates, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let files = [("annotations.jsonl", to_jsonl(&data)), ("qa.jsonl", qa_to_jsonl(&qa))];
    let manifest = RunManifest::new(
        "gen",
        &serde_json::to_value(&cfg).expect("config serialises"),
        Some(seed),
        config.map(display).into_iter().collect(),
        file_names(&files),
    );
    write_outputs(out, &files, &manifest)?;
    println!("wrote {} instances to {}", data.len(), display(out));
    Ok(())
}

pub struct TrainOptions {
    pub annotations: PathBuf,
    pub config: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<AdvantageMode>,
    pub strict_temporal: bool,
    pub out: PathBuf,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub window: usize,
    pub initial_mean_reward: Option<f64>,
    pub final_mean_reward: Option<f64>,
    pub final_kl: Option<f64>,
}

impl TrainSummary {
    fn render(&self, format: ReportFormat) -> String {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("summary serialises") + "\n",
            ReportFormat::Csv => format!(
                "iterations,window,initial_mean_reward,final_mean_reward,final_kl\n{},{},{},{},{}\n",
                self.iterations,
                self.window,
                cell(self.initial_mean_reward),
                cell(self.final_mean_reward),
                cell(self.final_kl)
            ),
            ReportFormat::Table => format!(
                "iterations           {}\ninitial mean reward  {}\nfinal mean reward    {}\nfinal KL             {}\n",
                self.iterations,
                cell(self.initial_mean_reward),
                cell(self.final_mean_reward),
                cell(self.final_kl)
            ),
        }
    }
}

pub fn train_sim(opts: &TrainOptions) -> CmdResult<()> {
    let mut cfg = match &opts.config {
        Some(p) => TrainConfig::from_toml_str(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.mode = mode;
    }
    let rewards = load_reward_config(opts.weights.as_deref(), opts.strict_temporal)?;
    let data = load_annotations(&opts.annotations)?;
    let outcome = train(&data, &cfg, &rewards)?;
    let trace = &outcome.trace;
    let window = SUMMARY_WINDOW.min(trace.len());
    let ends = trace.initial_and_final(SUMMARY_WINDOW);
    let summary = TrainSummary {
        iterations: trace.len(),
        window,
        initial_mean_reward: ends.map(|e| e.0),
        final_mean_reward: ends.map(|e| e.1),
        final_kl: trace.rows.last().map(|r| r.kl),
    };
    print!("{}", summary.render(opts.format));

    let files = [
        ("trace.csv", trace.to_csv()),
        (
            "policy.json",
            serde_json::to_string_pretty(&outcome.policy).expect("policy serialises") + "\n",
        ),
        ("summary.json", summary.render(ReportFormat::Json)),
    ];
    let manifest = RunManifest::new(
        "train-sim",
        &json!({
            "train": serde_json::to_value(&cfg).expect("config serialises"),
            "rewards": rewards.to_json_value(),
        }),
        Some(cfg.seed),
        vec![display(&opts.annotations)],
        file_names(&files),
    );
    write_outputs(&opts.out, &files, &manifest)
}
