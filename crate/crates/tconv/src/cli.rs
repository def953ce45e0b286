use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tconv_core::autodiff::AdamConfig;
use tconv_core::data::{preset_profiles, synth_dataset, DomainProfile, MurmurMix, Preset};
use tconv_core::frontend::{export_kernels, FrontendKind};
use tconv_core::interpret::{
    gammatone_param_trace, gradcam_record, phase_residual_bound, snapshot_due, snapshot_filters,
    DEFAULT_SNAPSHOT_EVERY,
};
use tconv_core::model::{BranchedCnn, BranchedCnnConfig, Label};
use tconv_core::training::{
    effective_batch_size, evaluate_detailed, train_observed, DomainQueueSet, EvalReport,
    IterationRule, TrainConfig,
};

use crate::artifacts::{
    load_checkpoint, read_snapshots, save_checkpoint, write_gradcam, write_json,
    write_response_csv, write_snapshot, TraceWriter,
};
use crate::config::OUT_ROOT_ENV;
use crate::dataset::{load_dataset_dir, write_dataset};
use crate::manifest::{unix_ms, RunManifest, MANIFEST_FILE};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tconv",
    version,
    about = "Learnable FIR front-end heart sound classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a synthetic multi-domain dataset (WAV + CSV).
    #[command(args_override_self = true)]
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, trace and filter snapshots.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Export the front-end kernels and their frequency responses.
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
    /// Export Grad-CAM maps for the first cycles of a dataset.
    #[command(args_override_self = true)]
    Gradcam(GradcamArgs),
    /// Rerun the command recorded in a manifest.
    #[command(args_override_self = true)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetArg {
    Balanced,
    Imbalanced,
    Confuser,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Balanced => Preset::Balanced,
            PresetArg::Imbalanced => Preset::Imbalanced,
            PresetArg::Confuser => Preset::Confuser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "balanced")]
    pub preset: PresetArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    /// `N` or `N/M` (normal/abnormal per domain, the preset adjusting
    /// normals), or a comma list of `N/M` with one entry per domain.
    #[arg(long, default_value = "100/100")]
    pub cycles_per_domain: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset used for best-epoch selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value = "type1")]
    pub frontend: FrontendKind,
    /// Kernel length; defaults to 61 (60 for the even-length kinds).
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "dbt", overrides_with = "no_dbt")]
    #[serde(skip)]
    pub dbt_flag: bool,
    #[arg(long = "no-dbt", overrides_with = "dbt_flag")]
    pub no_dbt: bool,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Iterations per epoch are this domain's cycle count over B_eff.
    #[arg(long, default_value_t = 0)]
    pub reference_domain: usize,
    /// Fixed iterations per epoch, overriding the reference-domain rule.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY)]
    pub snapshot_every: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn dbt(&self) -> bool {
        !self.no_dbt
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Fails unless the checkpoint uses this front-end kind.
    #[arg(long)]
    pub frontend: Option<FrontendKind>,
    /// Fails unless the checkpoint uses this kernel length.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Snapshot directory of a training run, for gammatone parameter traces.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetArg {
    Predicted,
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Only use cycles with this label.
    #[arg(long)]
    pub label: Option<LabelArg>,
    #[arg(long, value_enum, default_value = "predicted")]
    pub target: TargetArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelArg {
    Normal,
    Abnormal,
}

impl From<LabelArg> for Label {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Normal => Label::Normal,
            LabelArg::Abnormal => Label::Abnormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output location for the rerun; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(name)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
            Command::Gradcam(_) => "gradcam",
            Command::Replay(_) => "replay",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::GenData(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            _ => None,
        }
    }

    /// Fills in default output locations so the manifest records real paths.
    pub fn resolve(mut self) -> Self {
        match &mut self {
            Command::GenData(a) => {
                a.out
                    .get_or_insert_with(|| default_out(&format!("data-seed{}", a.seed)));
            }
            Command::Train(a) => {
                a.out
                    .get_or_insert_with(|| default_out(&format!("train-seed{}", a.seed)));
            }
            Command::Eval(a) => {
                a.report
                    .get_or_insert_with(|| default_out("eval").join("report.json"));
            }
            Command::Analyze(a) => {
                a.out.get_or_insert_with(|| default_out("analyze"));
            }
            Command::Gradcam(a) => {
                a.out.get_or_insert_with(|| default_out("gradcam"));
            }
            Command::Replay(_) => {}
        }
        self
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::GenData(a) => a.out = Some(out),
            Command::Train(a) => a.out = Some(out),
            Command::Eval(a) => a.report = Some(out),
            Command::Analyze(a) => a.out = Some(out),
            Command::Gradcam(a) => a.out = Some(out),
            Command::Replay(_) => {}
        }
    }

    fn manifest_path(&self) -> PathBuf {
        match self {
            Command::GenData(GenDataArgs { out: Some(o), .. })
            | Command::Train(TrainArgs { out: Some(o), .. })
            | Command::Analyze(AnalyzeArgs { out: Some(o), .. })
            | Command::Gradcam(GradcamArgs { out: Some(o), .. }) => o.join(MANIFEST_FILE),
            Command::Eval(EvalArgs {
                report: Some(r), ..
            }) => r.with_extension("manifest.json"),
            _ => unreachable!("resolve() fills every output path"),
        }
    }
}

/// Runs a command and writes its manifest. Returns the manifest path.
pub fn execute(command: Command) -> Result<PathBuf> {
    if let Command::Replay(a) = command {
        let mut recorded = RunManifest::read(&a.manifest)?.config;
        if let Command::Replay(_) = recorded {
            return Err(Error::Config("a manifest never records a replay".into()));
        }
        if let Some(out) = a.out {
            recorded.set_out(out);
        }
        return execute(recorded);
    }
    let command = command.resolve();
    let started = unix_ms();
    let outputs = match &command {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Analyze(a) => analyze(a)?,
        Command::Gradcam(a) => gradcam(a)?,
        Command::Replay(_) => unreachable!(),
    };
    let path = command.manifest_path();
    RunManifest::new(command, started, outputs).write(&path)?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn parse_counts(spec: &str) -> Result<Vec<(usize, Option<usize>)>> {
    let bad = || {
        Error::Config(format!(
            "invalid --cycles-per-domain {spec:?}; expected N, N/M or a comma list of N/M"
        ))
    };
    spec.split(',')
        .map(|part| {
            let mut it = part.trim().splitn(2, '/');
            let n = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let m = match it.next() {
                Some(s) => Some(s.trim().parse().map_err(|_| bad())?),
                None => None,
            };
            Ok((n, m))
        })
        .collect()
}

pub fn gen_profiles(preset: Preset, domains: usize, spec: &str) -> Result<Vec<DomainProfile>> {
    let counts = parse_counts(spec)?;
    match counts.as_slice() {
        [(n, m)] => {
            let profiles = preset_profiles(preset, domains, *n)?;
            Ok(profiles
                .into_iter()
                .map(|p| {
                    let normals = p.count_normal;
                    p.with_counts(normals, m.unwrap_or(*n))
                })
                .collect())
        }
        list if list.len() == domains => {
            let base = preset_profiles(preset, domains, 0)?;
            Ok(base
                .into_iter()
                .zip(list)
                .map(|(p, &(n, m))| p.with_counts(n, m.unwrap_or(n)))
                .collect())
        }
        list => Err(Error::Config(format!(
            "--cycles-per-domain lists {} domains but --domains is {domains}",
            list.len()
        ))),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<Vec<PathBuf>> {
    let out = a.out.as_deref().expect("resolved");
    let preset = Preset::from(a.preset);
    let profiles = gen_profiles(preset, a.domains, &a.cycles_per_domain)?;
    let cycles = synth_dataset(&profiles, &MurmurMix::for_preset(preset), a.seed)?;
    log::info!(
        "generated {} cycles over {} domains",
        cycles.len(),
        profiles.len()
    );
    create_dir(out)?;
    write_dataset(out, &cycles)
}

fn train(a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let out = a.out.as_deref().expect("resolved");
    let kind = a.frontend;
    let config = BranchedCnnConfig::with_frontend(kind, a.k.unwrap_or(kind.default_len()));
    config.validate()?;
    let data = load_dataset_dir(&a.data)?;
    let val = a.val.as_deref().map(load_dataset_dir).transpose()?;
    if a.dbt() {
        let keys: Vec<(usize, Label)> = data.iter().map(|c| (c.domain_id, c.label)).collect();
        let missing = DomainQueueSet::missing_pairs(&keys);
        if !missing.is_empty() {
            let list: Vec<String> = missing
                .iter()
                .map(|(d, l)| format!("(domain {d}, {l})"))
                .collect();
            return Err(Error::Config(format!(
                "domain-balanced training needs cycles for every (domain, class) pair; empty: {}. Add data for them or pass --no-dbt",
                list.join(", ")
            )));
        }
        let n_queues = keys.iter().collect::<BTreeSet<_>>().len();
        effective_batch_size(a.batch, n_queues)?;
    }
    let tc = TrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        iterations: a.iterations.map_or(
            IterationRule::ReferenceDomain(a.reference_domain),
            IterationRule::Fixed,
        ),
        eval_batch_size: 64,
    };
    let model = BranchedCnn::new(config, a.seed)?;

    create_dir(out)?;
    let snap_dir = out.join("snapshots");
    create_dir(&snap_dir)?;
    let mut outputs = vec![write_snapshot(&snap_dir, &snapshot_filters(&model, 0))?];
    let trace_path = out.join("trace.jsonl");
    let mut trace = TraceWriter::create(&trace_path)?;
    let mut side_error = None;
    let outcome = train_observed(
        &data,
        val.as_deref(),
        model,
        &tc,
        a.dbt(),
        |epoch, m, record| {
            if side_error.is_some() {
                return;
            }
            let mut step = || -> Result<()> {
                trace.append(record)?;
                if snapshot_due(epoch, a.snapshot_every, tc.epochs) {
                    outputs.push(write_snapshot(&snap_dir, &snapshot_filters(m, epoch))?);
                }
                Ok(())
            };
            if let Err(e) = step() {
                side_error = Some(e);
            }
        },
    )?;
    if let Some(e) = side_error {
        return Err(e);
    }
    outputs.push(trace_path);
    let ckpt = out.join("checkpoint.json");
    save_checkpoint(&ckpt, &outcome.model)?;
    outputs.push(ckpt);
    if kind == FrontendKind::Gammatone {
        let p = out.join("gammatone_trace.json");
        write_json(&p, &gammatone_param_trace(&read_snapshots(&snap_dir)?)?)?;
        outputs.push(p);
    }
    log::info!("selected epoch {}", outcome.selected_epoch);
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub recording_id: String,
    pub label: Label,
    pub predicted: Label,
    pub p_abnormal: f64,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    pub n_cycles: usize,
    pub n_recordings: usize,
    pub predictions: Vec<PredictionRow>,
}

fn check_compatible(
    model: &BranchedCnn,
    kind: Option<FrontendKind>,
    k: Option<usize>,
) -> Result<()> {
    let c = model.config();
    if let Some(kind) = kind.filter(|&kind| kind != c.frontend_kind) {
        return Err(Error::Config(format!(
            "checkpoint uses a {} front-end but --frontend {kind} was given",
            c.frontend_kind
        )));
    }
    if let Some(k) = k.filter(|&k| k != c.frontend_len) {
        return Err(Error::Config(format!(
            "checkpoint uses K = {} but --K {k} was given",
            c.frontend_len
        )));
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let report_path = a.report.as_deref().expect("resolved");
    let model = load_checkpoint(&a.model)?;
    check_compatible(&model, a.frontend, a.k)?;
    let data = load_dataset_dir(&a.data)?;
    let domains: Vec<usize> = data
        .iter()
        .map(|c| c.domain_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (report, preds) = evaluate_detailed(&model, &data, a.batch, &domains)?;
    log::info!(
        "Macc {:.4} (sens {:.4}, spec {:.4})",
        report.macc,
        report.sensitivity,
        report.specificity
    );
    let output = EvalOutput {
        report,
        n_cycles: data.len(),
        n_recordings: preds.len(),
        predictions: preds
            .into_iter()
            .map(
                |(recording_id, label, fused, predicted, domain)| PredictionRow {
                    recording_id,
                    label,
                    predicted,
                    p_abnormal: fused.p_abnormal,
                    domain,
                },
            )
            .collect(),
    };
    write_json(report_path, &output)?;
    Ok(vec![report_path.to_path_buf()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub kind: FrontendKind,
    #[serde(rename = "K")]
    pub k: usize,
    pub phase_linearity_residual: Vec<f64>,
    /// Residual guaranteed by construction, when the kind constrains phase.
    pub bound: Option<f64>,
}

fn analyze(a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let out = a.out.as_deref().expect("resolved");
    let model = load_checkpoint(&a.model)?;
    create_dir(out)?;
    let kernels = export_kernels(model.frontend());
    let mut outputs = Vec::new();
    for (b, k) in kernels.iter().enumerate() {
        let p = out.join(format!("kernel{b}_response.csv"));
        write_response_csv(&p, k)?;
        outputs.push(p);
    }
    let p = out.join("kernels.json");
    write_json(&p, &kernels)?;
    outputs.push(p);

    let snap = snapshot_filters(&model, 0);
    let kind = model.config().frontend_kind;
    let p = out.join("phase.json");
    write_json(
        &p,
        &PhaseSummary {
            kind,
            k: model.config().frontend_len,
            phase_linearity_residual: snap.phase_linearity_residual,
            bound: phase_residual_bound(kind),
        },
    )?;
    outputs.push(p);

    if let Some(dir) = &a.snapshots {
        let p = out.join("gammatone_trace.json");
        write_json(&p, &gammatone_param_trace(&read_snapshots(dir)?)?)?;
        outputs.push(p);
    }
    Ok(outputs)
}

fn gradcam(a: &GradcamArgs) -> Result<Vec<PathBuf>> {
    let out = a.out.as_deref().expect("resolved");
    let model = load_checkpoint(&a.model)?;
    let data = load_dataset_dir(&a.data)?;
    let wanted = a.label.map(Label::from);
    let mut records = Vec::new();
    for c in data
        .iter()
        .filter(|c| wanted.is_none_or(|l| c.label == l))
        .take(a.n)
    {
        let target = match a.target {
            TargetArg::Normal => Label::Normal,
            TargetArg::Abnormal => Label::Abnormal,
            TargetArg::Predicted => model.predict(&[c.samples()], 1)?[0].label(),
        };
        records.push(gradcam_record(&model, c, target)?);
    }
    if records.len() < a.n {
        log::warn!(
            "only {} matching cycles, fewer than --n {}",
            records.len(),
            a.n
        );
    }
    let mut outputs = write_gradcam(out, &records)?;
    outputs.push(out.join(crate::artifacts::GRADCAM_SUMMARY));
    Ok(outputs)
}
