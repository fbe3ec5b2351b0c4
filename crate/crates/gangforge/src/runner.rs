//! Configuration-driven experiment pipeline: dataset synthesis, detector
//! training, attack training, plan generation, evaluation, and ablation
//! sweeps, all reading one JSON config and writing artifacts under a single
//! output directory.
//!
//! Artifacts: `dataset/`, `detector_surrogate.ckpt`, `detector_victim.ckpt`,
//! `attack.ckpt`, `plans/<set_id>.injection.json`, `report.json`,
//! `report.csv`, `ablation_table.csv`. Every command is deterministic given
//! the config; reruns overwrite artifacts with identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ablation::AblationConfig;
use crate::attack::{
    attack_loss, train_attack, AttackConfig, AttackModel, SurrogateContext, SurrogateRef,
};
use crate::data::{load_dataset, save_dataset, split_dataset, DatasetBundle};
use crate::detector::{train_detector, DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::eval::evaluate_attack;
use crate::graph::{
    apply_injection, compute_statistics, BudgetParams, GraphStatistics, InjectionPlan, NodeRef,
    Split, TargetSet,
};
use crate::synth::{generate_graph_and_gangs, SynthConfig};

/// Where the experiment's graph comes from: an on-disk dataset directory or
/// a synthesis recipe realized by `gen-synth`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Synth(SynthConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Node-budget scale relative to the target set's mean closed
    /// neighborhood.
    pub rho: f64,
    /// Edge-budget degree cap relative to the graph mean degree.
    pub xi: f64,
    /// Fraction of labeled nodes assigned to the training split; val and
    /// test take (1-p)/3 and 2(1-p)/3, gangs kept intact inside one split.
    pub p: f64,
    /// Surrogate detector (the attack's training oracle).
    pub detector: DetectorConfig,
    /// Victim detector (evaluation only; must use a different seed).
    pub victim: DetectorConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    pub output_dir: PathBuf,
    /// Repetition seed offsets selected via --seed-index.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.budgets().validate()?;
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p must be in (0, 1), got {}", self.p)));
        }
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()?;
        }
        self.detector.validate()?;
        self.victim.validate()?;
        self.attack.validate()?;
        self.ablation.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one entry".into()));
        }
        if self.detector.seed == self.victim.seed {
            return Err(Error::Config(
                "detector.seed and victim.seed must differ: the victim is an \
                 independently initialized model, not the surrogate"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn budgets(&self) -> BudgetParams {
        BudgetParams { rho: self.rho, xi: self.xi }
    }
}

const ENV_PREFIX: &str = "GANGFORGE_";

fn apply_override(root: &mut Value, path: &[String], value: Value, key: &str) -> Result<()> {
    let mut cur = root;
    for seg in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key} does not address an object field")))?
            .entry(seg.clone())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| Error::Config(format!("{key} does not address an object field")))?
        .insert(path[path.len() - 1].clone(), value);
    Ok(())
}

/// Loads the config and applies `GANGFORGE_<FIELD>` overrides; nested fields
/// use double underscores (`GANGFORGE_ATTACK__EPOCHS=3`). Values parse as
/// JSON when possible and fall back to strings.
pub fn load_config_with_overrides(
    path: impl AsRef<Path>,
    vars: &[(String, String)],
) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let mut overrides: Vec<&(String, String)> =
        vars.iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    overrides.sort();
    for (key, raw) in overrides {
        let segs: Vec<String> = key[ENV_PREFIX.len()..]
            .to_lowercase()
            .split("__")
            .map(str::to_string)
            .collect();
        if segs.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!("malformed override name {key}")));
        }
        let parsed = serde_json::from_str::<Value>(raw).unwrap_or(Value::String(raw.clone()));
        apply_override(&mut value, &segs, parsed, key)?;
    }
    let config: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let vars: Vec<(String, String)> = std::env::vars().collect();
    load_config_with_overrides(path, &vars)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenSynth,
    TrainDetector,
    TrainAttack,
    Attack,
    Evaluate,
    Ablate,
}

pub const COMMAND_NAMES: &str =
    "gen-synth, train-detector, train-attack, attack, evaluate, ablate";

impl Command {
    pub fn parse(s: &str) -> Result<Command> {
        match s {
            "gen-synth" => Ok(Command::GenSynth),
            "train-detector" => Ok(Command::TrainDetector),
            "train-attack" => Ok(Command::TrainAttack),
            "attack" => Ok(Command::Attack),
            "evaluate" => Ok(Command::Evaluate),
            "ablate" => Ok(Command::Ablate),
            other => Err(Error::Config(format!(
                "unknown command {other:?}; usage: gangforge <command> --config path \
                 [--jobs N] [--seed-index i] where <command> is one of {COMMAND_NAMES}"
            ))),
        }
    }
}

/// Paths of every artifact under the experiment's output directory.
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn surrogate_ckpt(&self) -> PathBuf {
        self.root.join("detector_surrogate.ckpt")
    }
    pub fn victim_ckpt(&self) -> PathBuf {
        self.root.join("detector_victim.ckpt")
    }
    pub fn attack_ckpt(&self) -> PathBuf {
        self.root.join("attack.ckpt")
    }
    pub fn detector_log(&self) -> PathBuf {
        self.root.join("detector_log.csv")
    }
    pub fn attack_loss_curve(&self) -> PathBuf {
        self.root.join("attack_loss.csv")
    }
    pub fn plans_dir(&self) -> PathBuf {
        self.root.join("plans")
    }
    pub fn plan_path(&self, set_id: &str) -> PathBuf {
        self.plans_dir().join(format!("{set_id}.injection.json"))
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
    pub fn ablation_table(&self) -> PathBuf {
        self.root.join("ablation_table.csv")
    }
}

pub struct RunContext {
    pub config: ExperimentConfig,
    pub jobs: usize,
    pub seed_index: usize,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, jobs: usize, seed_index: usize) -> Result<Self> {
        config.validate()?;
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        if seed_index >= config.seeds.len() {
            return Err(Error::Config(format!(
                "--seed-index {seed_index} out of range for {} configured seeds",
                config.seeds.len()
            )));
        }
        Ok(RunContext { config, jobs, seed_index })
    }

    fn seed_offset(&self) -> u64 {
        self.config.seeds[self.seed_index]
    }

    /// Model seeds shift with the repetition index; the dataset does not.
    pub fn surrogate_config(&self) -> DetectorConfig {
        let mut c = self.config.detector.clone();
        c.seed = c.seed.wrapping_add(self.seed_offset());
        c
    }

    pub fn victim_config(&self) -> DetectorConfig {
        let mut c = self.config.victim.clone();
        c.seed = c.seed.wrapping_add(self.seed_offset());
        c
    }

    pub fn attack_config(&self) -> AttackConfig {
        let mut c = self.config.attack.clone();
        c.seed = c.seed.wrapping_add(self.seed_offset());
        c
    }

    fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.config.output_dir)
    }
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    num_attack_nodes: usize,
    attributes: Vec<Vec<f64>>,
    edges: Vec<(NodeRef, NodeRef)>,
}

pub fn save_plan(path: impl AsRef<Path>, plan: &InjectionPlan) -> Result<()> {
    let path = path.as_ref();
    let file = PlanFile {
        num_attack_nodes: plan.num_attack_nodes,
        attributes: plan
            .attack_attributes
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        edges: plan.adversarial_edges.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("plan serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<InjectionPlan> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PlanFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let rows = file.attributes.len();
    if rows != file.num_attack_nodes {
        return Err(Error::parse(
            path,
            0,
            format!("{} attribute rows for {} attack nodes", rows, file.num_attack_nodes),
        ));
    }
    let cols = file.attributes.first().map_or(0, Vec::len);
    let mut attrs = Array2::zeros((rows, cols));
    for (i, row) in file.attributes.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::parse(path, 0, "ragged attribute rows"));
        }
        for (j, v) in row.iter().enumerate() {
            attrs[[i, j]] = *v;
        }
    }
    Ok(InjectionPlan::new(file.num_attack_nodes, attrs, file.edges))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn load_bundle(ctx: &RunContext) -> Result<DatasetBundle> {
    let budgets = ctx.config.budgets();
    match &ctx.config.dataset {
        DatasetSource::Path(p) => load_dataset(p, &budgets),
        DatasetSource::Synth(_) => {
            let dir = ctx.artifacts().dataset_dir();
            if !dir.join("meta.json").exists() {
                return Err(Error::MissingArtifact(dir.join("meta.json")));
            }
            load_dataset(&dir, &budgets)
        }
    }
}

fn set_line(set: &TargetSet) -> String {
    format!(
        "set={} split={} m={} B={} delta={} eta={}",
        set.id,
        set.split,
        set.members.len(),
        set.closed_neighborhood_size,
        set.node_budget,
        set.edge_budget
    )
}

/// Runs one command end to end and returns its summary lines.
pub fn execute(command: Command, ctx: &RunContext) -> Result<Vec<String>> {
    let arts = ctx.artifacts();
    fs::create_dir_all(&ctx.config.output_dir)
        .map_err(|e| Error::io(&ctx.config.output_dir, e))?;
    match command {
        Command::GenSynth => gen_synth(ctx, &arts),
        Command::TrainDetector => cmd_train_detector(ctx, &arts),
        Command::TrainAttack => cmd_train_attack(ctx, &arts),
        Command::Attack => cmd_attack(ctx, &arts),
        Command::Evaluate => cmd_evaluate(ctx, &arts),
        Command::Ablate => cmd_ablate(ctx, &arts),
    }
}

/// Parses the command string, loads the config with environment overrides,
/// and executes. This is the whole CLI surface.
pub fn run_cli(
    command: &str,
    config_path: &Path,
    jobs: usize,
    seed_index: usize,
) -> Result<Vec<String>> {
    let command = Command::parse(command)?;
    let config = load_config(config_path)?;
    let ctx = RunContext::new(config, jobs, seed_index)?;
    execute(command, &ctx)
}

fn gen_synth(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let synth = match &ctx.config.dataset {
        DatasetSource::Synth(s) => s,
        DatasetSource::Path(_) => {
            return Err(Error::Config(
                "gen-synth needs a dataset.synth recipe, not a dataset.path".into(),
            ))
        }
    };
    let (graph, gangs) = generate_graph_and_gangs(synth)?;
    let bundle = split_dataset(graph, &gangs, ctx.config.p, synth.seed, &ctx.config.budgets())?;
    save_dataset(&bundle, arts.dataset_dir())?;
    let mut lines: Vec<String> = bundle.target_sets.iter().map(set_line).collect();
    lines.push(format!(
        "dataset: nodes={} sets={} dir={}",
        bundle.graph.num_nodes(),
        bundle.target_sets.len(),
        arts.dataset_dir().display()
    ));
    Ok(lines)
}

fn detector_summary(name: &str, model: &DetectorModel) -> String {
    match model
        .training_log
        .iter()
        .map(|r| r.val_macro_f1)
        .fold(None, |best: Option<f64>, f1| Some(best.map_or(f1, |b| b.max(f1))))
    {
        Some(best) => format!("{name}: best_val_macro_f1={best:.4}"),
        None => format!("{name}: trained without validation epochs"),
    }
}

fn cmd_train_detector(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let bundle = load_bundle(ctx)?;
    let surrogate = train_detector(&bundle, &ctx.surrogate_config())?;
    surrogate.save(arts.surrogate_ckpt())?;
    let victim = train_detector(&bundle, &ctx.victim_config())?;
    victim.save(arts.victim_ckpt())?;

    let mut log = String::from("model,epoch,val_loss,val_macro_f1\n");
    for (name, model) in [("surrogate", &surrogate), ("victim", &victim)] {
        for r in &model.training_log {
            let _ = writeln!(log, "{name},{},{},{}", r.epoch, r.val_loss, r.val_macro_f1);
        }
    }
    fs::write(arts.detector_log(), log).map_err(|e| Error::io(arts.detector_log(), e))?;
    Ok(vec![
        detector_summary("surrogate", &surrogate),
        detector_summary("victim", &victim),
    ])
}

fn cmd_train_attack(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let bundle = load_bundle(ctx)?;
    let spath = require(arts.surrogate_ckpt())?;
    let surrogate = DetectorModel::load(&spath)?;
    let model =
        AttackModel::new(ctx.attack_config(), bundle.graph.attr_dim(), surrogate.hidden_dim())?;
    let trained = train_attack(model, &bundle, &surrogate, &ctx.config.ablation)?;

    let sref = SurrogateRef {
        path: "detector_surrogate.ckpt".into(),
        sha256: file_sha256(&spath)?,
    };
    trained.model.save_checkpoint(arts.attack_ckpt(), &sref)?;

    let mut curve = String::from("epoch,tau,epsilon,train_loss,val_loss\n");
    for r in &trained.history {
        let _ = writeln!(curve, "{},{},{},{},{}", r.epoch, r.tau, r.epsilon, r.train_loss, r.val_loss);
    }
    fs::write(arts.attack_loss_curve(), curve)
        .map_err(|e| Error::io(arts.attack_loss_curve(), e))?;

    let best = trained
        .history
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    Ok(vec![format!(
        "attack: epochs={} best_val_loss={best:.6}",
        trained.history.len()
    )])
}

/// Generates one plan per test target set; work fans out over `jobs` workers
/// with output restitched in set order.
fn run_plans(
    model: &AttackModel,
    bundle: &DatasetBundle,
    surrogate: &DetectorModel,
    sctx: &SurrogateContext,
    stats: &GraphStatistics,
    ablation: &AblationConfig,
    jobs: usize,
) -> Result<Vec<(TargetSet, InjectionPlan, f64)>> {
    let sets = bundle.sets_in(Split::Test);
    if sets.is_empty() {
        return Err(Error::Config("no test target sets to attack".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        sets.par_iter()
            .map(|set| {
                let plan =
                    model.run_attack(&bundle.graph, set, stats, surrogate, sctx, ablation)?;
                let attacked = apply_injection(&bundle.graph, &plan, set)?;
                let scores = surrogate.predict_scores(&attacked, &set.members)?;
                let loss = attack_loss(&scores)?;
                Ok(((*set).clone(), plan, loss))
            })
            .collect()
    })
}

fn load_attack_and_surrogate(
    ctx: &RunContext,
    arts: &Artifacts,
) -> Result<(AttackModel, DetectorModel)> {
    let apath = require(arts.attack_ckpt())?;
    let (model, sref) = AttackModel::load_checkpoint(&apath)?;
    let spath = if Path::new(&sref.path).is_absolute() {
        PathBuf::from(&sref.path)
    } else {
        ctx.config.output_dir.join(&sref.path)
    };
    let spath = require(spath)?;
    let actual = file_sha256(&spath)?;
    if actual != sref.sha256 {
        return Err(Error::Checkpoint(format!(
            "{}: surrogate hash mismatch: attack checkpoint expects {}, file has {actual}",
            spath.display(),
            sref.sha256
        )));
    }
    Ok((model, DetectorModel::load(&spath)?))
}

fn cmd_attack(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let bundle = load_bundle(ctx)?;
    let (model, surrogate) = load_attack_and_surrogate(ctx, arts)?;
    let sctx = SurrogateContext::new(&surrogate, &bundle.graph)?;
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets)?;
    let results = run_plans(
        &model,
        &bundle,
        &surrogate,
        &sctx,
        &stats,
        &ctx.config.ablation,
        ctx.jobs,
    )?;
    fs::create_dir_all(arts.plans_dir()).map_err(|e| Error::io(arts.plans_dir(), e))?;
    let mut lines = Vec::new();
    for (set, plan, loss) in &results {
        save_plan(arts.plan_path(&set.id), plan)?;
        lines.push(format!(
            "{} edges={} surrogate_loss={loss:.6}",
            set_line(set),
            plan.adversarial_edges.len()
        ));
    }
    Ok(lines)
}

fn cmd_evaluate(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let bundle = load_bundle(ctx)?;
    let vpath = require(arts.victim_ckpt())?;
    let victim = DetectorModel::load(&vpath)?;
    require(arts.plans_dir())?;
    let mut plans: BTreeMap<String, InjectionPlan> = BTreeMap::new();
    for set in bundle.sets_in(Split::Test) {
        let path = arts.plan_path(&set.id);
        if path.exists() {
            plans.insert(set.id.clone(), load_plan(&path)?);
        }
    }
    let report = evaluate_attack(&victim, &bundle, &plans)?;
    report.save_json(arts.report_json())?;
    report.save_csv(arts.report_csv())?;
    let mut lines = Vec::new();
    for row in &report.per_set {
        let warn = row
            .warning
            .as_deref()
            .map(|w| format!(" warning={w:?}"))
            .unwrap_or_default();
        lines.push(format!(
            "set={} m={} B={} clean={:.4} attacked={:.4}{warn}",
            row.set_id,
            row.size,
            row.closed_neighborhood_size,
            row.clean_misclassification,
            row.attacked_misclassification
        ));
    }
    lines.push(format!(
        "overall: weighted_clean={:.4} weighted_attacked={:.4} non_target_clean={:.4} non_target_attacked={:.4}",
        report.weighted_clean,
        report.weighted_attacked,
        report.non_target_clean,
        report.non_target_attacked
    ));
    Ok(lines)
}

fn cmd_ablate(ctx: &RunContext, arts: &Artifacts) -> Result<Vec<String>> {
    let variants = ctx.config.ablation.enabled_variants();
    if variants.is_empty() {
        return Err(Error::Config(
            "ablate needs at least one ablation flag enabled in the config".into(),
        ));
    }
    let bundle = load_bundle(ctx)?;
    let spath = require(arts.surrogate_ckpt())?;
    let surrogate = DetectorModel::load(&spath)?;
    let vpath = require(arts.victim_ckpt())?;
    let victim = DetectorModel::load(&vpath)?;
    let sctx = SurrogateContext::new(&surrogate, &bundle.graph)?;
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets)?;

    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let mut lines = Vec::new();
    let full: Vec<(&str, AblationConfig)> = std::iter::once(("full", AblationConfig::default()))
        .chain(variants)
        .collect();
    for (name, ablation) in full {
        let model = AttackModel::new(
            ctx.attack_config(),
            bundle.graph.attr_dim(),
            surrogate.hidden_dim(),
        )?;
        let trained = train_attack(model, &bundle, &surrogate, &ablation)?;
        let results = run_plans(
            &trained.model,
            &bundle,
            &surrogate,
            &sctx,
            &stats,
            &ablation,
            ctx.jobs,
        )?;
        let plans: BTreeMap<String, InjectionPlan> = results
            .into_iter()
            .map(|(set, plan, _)| (set.id, plan))
            .collect();
        let report = evaluate_attack(&victim, &bundle, &plans)?;
        lines.push(format!(
            "variant={name} weighted_clean={:.4} weighted_attacked={:.4}",
            report.weighted_clean, report.weighted_attacked
        ));
        rows.push((name.to_string(), report.weighted_clean, report.weighted_attacked));
    }

    let mut table = String::from("variant,weighted_clean,weighted_attacked\n");
    for (name, clean, attacked) in &rows {
        let _ = writeln!(table, "{name},{clean},{attacked}");
    }
    fs::write(arts.ablation_table(), table).map_err(|e| Error::io(arts.ablation_table(), e))?;
    Ok(lines)
}
