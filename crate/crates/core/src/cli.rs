//! Configuration-driven experiment runner and reporting.
//!
//! A run builds one topology, one dataset, one partition, and one shared
//! initialization, then trains the selected strategies on identical
//! randomness streams so that the combination rule is the only difference
//! between them. Metrics go to a fixed-schema CSV, wall-clock timing goes to
//! the human-readable summary only, and reruns of the same config in
//! single-threaded mode are byte-identical at the CSV level.
//!
//! Metrics CSV columns, in order:
//! `round, strategy, topology, lambda2, mean_train_loss, mean_train_acc,
//! test_acc, gen_gap, disagreement, train_loss_0..K-1, train_acc_0..K-1`.
//! The disagreement column uses the plain-mean centroid (cheap, online);
//! the phi-weighted variant lives in `diagnose`, which replays recorded
//! tensor dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PartitionSpec};
use crate::diagnostics::{self, PhiEstimate};
use crate::error::{Error, Result};
use crate::mixing::{DrtConfig, MixingTensor, DEFAULT_KAPPA};
use crate::nn::{self, Activation, Architecture, Batch, LayeredParams};
use crate::strategies::{AgentState, RoundContext, RoundSpec, StrategyKind};
use crate::topology::{
    build_complete, build_erdos_renyi, build_hypercube, build_ring, metropolis_weights,
    mixing_rate, Topology,
};

/// Environment variable consulted for the default output directory.
pub const OUT_DIR_ENV: &str = "DRTSIM_OUT";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Hypercube,
    ErdosRenyi,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Agent count for ring, complete, and random graphs.
    pub num_agents: usize,
    /// Dimension for hypercubes (2^dim agents).
    pub dim: usize,
    /// Edge probability for random graphs.
    pub edge_prob: f64,
    /// Seed for random graphs.
    pub seed: u64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self { kind: TopologyKind::Ring, num_agents: 16, dim: 4, edge_prob: 0.3, seed: 1 }
    }
}

impl TopologySpec {
    pub fn agent_count(&self) -> usize {
        match self.kind {
            TopologyKind::Hypercube => 1usize << self.dim,
            _ => self.num_agents,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            TopologyKind::Ring => format!("ring{}", self.num_agents),
            TopologyKind::Hypercube => format!("hypercube{}", self.dim),
            TopologyKind::Complete => format!("complete{}", self.num_agents),
            TopologyKind::ErdosRenyi => {
                format!("er{}_p{}_s{}", self.num_agents, self.edge_prob, self.seed)
            }
        }
    }

    pub fn build(&self) -> Result<Topology> {
        match self.kind {
            TopologyKind::Ring => build_ring(self.num_agents),
            TopologyKind::Hypercube => build_hypercube(self.dim as u32),
            TopologyKind::Complete => build_complete(self.num_agents),
            TopologyKind::ErdosRenyi => {
                build_erdos_renyi(self.num_agents, self.edge_prob, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
    /// Stratified test split taken before partitioning.
    pub test_fraction: f64,
    pub iid: bool,
    pub classes_per_agent: (usize, usize),
    pub samples_per_agent: (usize, usize),
    /// Defaults to `seed` when absent.
    pub partition_seed: Option<u64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            per_class: 200,
            spread: 1.0,
            seed: 7,
            test_fraction: 0.2,
            iid: false,
            classes_per_agent: (5, 8),
            samples_per_agent: (60, 80),
            partition_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { layer_dims: vec![16, 32, 32, 10], activation: Activation::Relu, bias: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategySelection {
    Classical,
    Drt,
    Both,
}

impl StrategySelection {
    pub fn kinds(self) -> Vec<StrategyKind> {
        match self {
            StrategySelection::Classical => vec![StrategyKind::ClassicalDiffusion],
            StrategySelection::Drt => vec![StrategyKind::DrtDiffusion],
            StrategySelection::Both => {
                vec![StrategyKind::ClassicalDiffusion, StrategyKind::DrtDiffusion]
            }
        }
    }
}

impl std::str::FromStr for StrategySelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "drt" => Ok(Self::Drt),
            "both" => Ok(Self::Both),
            other => Err(Error::Parse(format!(
                "unknown strategy {other:?}, expected classical, drt, or both"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub mu: f64,
    pub batch_size: usize,
    /// `null` means one local epoch per round.
    pub local_steps: Option<usize>,
    pub consensus_steps: usize,
    pub rounds: usize,
    pub strategy: StrategySelection,
    pub kappa: f64,
    /// `null` means twice the agent count.
    pub clip_n: Option<f64>,
    pub master_seed: u64,
    pub freeze_weights_within_round: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            mu: 0.05,
            batch_size: 16,
            local_steps: None,
            consensus_steps: 3,
            rounds: 100,
            strategy: StrategySelection::Both,
            kappa: DEFAULT_KAPPA,
            clip_n: None,
            master_seed: 1,
            freeze_weights_within_round: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; falls back to the env var, then `./out`.
    pub out_dir: Option<String>,
    pub dump_tensors: bool,
    /// Parameter checkpoint cadence in rounds; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub run: RunSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.model.layer_dims.clone(), self.model.activation, self.model.bias)
    }

    pub fn clip_n(&self) -> f64 {
        self.run.clip_n.unwrap_or(2.0 * self.topology.agent_count() as f64)
    }

    pub fn partition_seed(&self) -> u64 {
        self.data.partition_seed.unwrap_or(self.data.seed)
    }

    pub fn round_spec(&self) -> RoundSpec {
        RoundSpec {
            mu: self.run.mu,
            batch_size: self.run.batch_size,
            local_steps: self.run.local_steps,
            consensus_steps: self.run.consensus_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::InvalidParameter(format!("{name}: {msg}")));
        let k = self.topology.agent_count();
        match self.topology.kind {
            TopologyKind::Ring | TopologyKind::Complete | TopologyKind::ErdosRenyi => {
                if self.topology.num_agents < 2 {
                    return field("topology.num_agents", format!("need at least 2, got {k}"));
                }
            }
            TopologyKind::Hypercube => {
                if self.topology.dim < 1 || self.topology.dim > 16 {
                    return field("topology.dim", format!("need 1..=16, got {}", self.topology.dim));
                }
            }
        }
        if self.topology.kind == TopologyKind::ErdosRenyi
            && !(0.0..=1.0).contains(&self.topology.edge_prob)
        {
            return field("topology.edge_prob", format!("need [0, 1], got {}", self.topology.edge_prob));
        }
        if self.data.num_classes < 2 {
            return field("data.num_classes", format!("need at least 2, got {}", self.data.num_classes));
        }
        if self.data.dim < 2 {
            return field("data.dim", format!("need at least 2, got {}", self.data.dim));
        }
        if self.data.per_class == 0 {
            return field("data.per_class", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return field("data.test_fraction", format!("need [0, 1), got {}", self.data.test_fraction));
        }
        if !self.data.iid {
            let (lo, hi) = self.data.classes_per_agent;
            if lo < 1 || lo > hi || hi > self.data.num_classes {
                return field(
                    "data.classes_per_agent",
                    format!("range [{lo}, {hi}] invalid for {} classes", self.data.num_classes),
                );
            }
            let (slo, shi) = self.data.samples_per_agent;
            if slo < 1 || slo > shi {
                return field("data.samples_per_agent", format!("range [{slo}, {shi}] invalid"));
            }
        }
        let arch = self.architecture().map_err(|e| {
            Error::InvalidParameter(format!("model.layer_dims: {e}"))
        })?;
        if arch.input_dim() != self.data.dim {
            return field(
                "model.layer_dims",
                format!("input width {} must equal data.dim {}", arch.input_dim(), self.data.dim),
            );
        }
        if arch.output_dim() != self.data.num_classes {
            return field(
                "model.layer_dims",
                format!(
                    "output width {} must equal data.num_classes {}",
                    arch.output_dim(),
                    self.data.num_classes
                ),
            );
        }
        self.round_spec()
            .validate()
            .map_err(|e| Error::InvalidParameter(format!("run: {e}")))?;
        if !self.run.kappa.is_finite() || self.run.kappa < 0.0 {
            return field("run.kappa", format!("must be finite and nonnegative, got {}", self.run.kappa));
        }
        if let Some(n) = self.run.clip_n {
            if !n.is_finite() || n < 1.0 {
                return field("run.clip_n", format!("must be at least 1, got {n}"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// One metrics row: aggregate columns first, then per-agent columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub strategy: StrategyKind,
    pub topology: String,
    pub lambda2: f64,
    pub mean_train_loss: f64,
    pub mean_train_acc: f64,
    pub test_acc: f64,
    pub gen_gap: f64,
    pub disagreement: f64,
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
}

pub fn metrics_header(num_agents: usize) -> Vec<String> {
    let mut h = vec![
        "round".into(),
        "strategy".into(),
        "topology".into(),
        "lambda2".into(),
        "mean_train_loss".into(),
        "mean_train_acc".into(),
        "test_acc".into(),
        "gen_gap".into(),
        "disagreement".into(),
    ];
    h.extend((0..num_agents).map(|a| format!("train_loss_{a}")));
    h.extend((0..num_agents).map(|a| format!("train_acc_{a}")));
    h
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.round.to_string(),
            self.strategy.label().to_string(),
            self.topology.clone(),
            format!("{}", self.lambda2),
            format!("{}", self.mean_train_loss),
            format!("{}", self.mean_train_acc),
            format!("{}", self.test_acc),
            format!("{}", self.gen_gap),
            format!("{}", self.disagreement),
        ];
        r.extend(self.train_loss.iter().map(|v| format!("{v}")));
        r.extend(self.train_acc.iter().map(|v| format!("{v}")));
        r
    }
}

fn write_metrics_csv(path: &Path, num_agents: usize, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(num_agents))?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// Everything a finished run leaves on disk, plus the in-memory rows.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub summary: String,
    pub lambda2: f64,
}

pub fn resolve_out_dir(cli_out: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = cli_out {
        return PathBuf::from(dir);
    }
    if let Some(dir) = &cfg.output.out_dir {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}

fn shard_batch(ds: &Dataset, shard: &[usize]) -> Result<Batch> {
    ds.batch(shard)
}

struct EvalContext<'a> {
    arch: &'a Architecture,
    train: &'a Dataset,
    assignments: &'a [Vec<usize>],
    test_batch: Option<&'a Batch>,
}

/// Per-agent shard loss/accuracy, mean test accuracy, plain-mean
/// disagreement for one snapshot of all agents.
fn evaluate(
    ctx: &EvalContext<'_>,
    states: &[AgentState],
    round_loss: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let k = states.len();
    let mut losses = Vec::with_capacity(k);
    let mut accs = Vec::with_capacity(k);
    for (a, state) in states.iter().enumerate() {
        let batch = shard_batch(ctx.train, &ctx.assignments[a])?;
        let loss = match round_loss {
            Some(l) => l[a],
            None => nn::loss(ctx.arch, &state.params, &batch)?,
        };
        losses.push(loss);
        accs.push(nn::accuracy(ctx.arch, &state.params, &batch)?);
    }
    let test_acc = match ctx.test_batch {
        Some(tb) => {
            let mut sum = 0.0;
            for state in states {
                sum += nn::accuracy(ctx.arch, &state.params, tb)?;
            }
            sum / k as f64
        }
        None => f64::NAN,
    };
    let params: Vec<LayeredParams> = states.iter().map(|s| s.params.clone()).collect();
    let phis = vec![PhiEstimate::uniform(k); params[0].num_layers()];
    let center = diagnostics::centroid(&params, &phis)?;
    let disagreement = diagnostics::network_disagreement(&params, &center);
    Ok((losses, accs, test_acc, disagreement))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Run the configured experiment, writing artifacts under `out_dir`.
///
/// Both strategies of a `both` run share the topology, dataset, partition,
/// initial parameters, and per-round batch orders; only the combination
/// rule differs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: usize,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if threads == 0 {
        return Err(Error::InvalidParameter("threads must be at least 1".into()));
    }
    let started = Instant::now();

    let topo = cfg.topology.build()?;
    let k = topo.num_agents();
    let base = metropolis_weights(&topo);
    let lambda2 = mixing_rate(&base)?;
    let arch = cfg.architecture()?;

    let full = data::make_gaussian_blobs(
        cfg.data.num_classes,
        cfg.data.dim,
        cfg.data.per_class,
        cfg.data.spread,
        cfg.data.seed,
    )?;
    let (train, test) = data::split_train_test(&full, cfg.data.test_fraction, cfg.data.seed)?;
    let assignments = data::partition(
        &train,
        &PartitionSpec {
            num_agents: k,
            classes_per_agent: cfg.data.classes_per_agent,
            samples_per_agent: cfg.data.samples_per_agent,
            iid: cfg.data.iid,
            seed: cfg.partition_seed(),
        },
    )?;
    let test_batch = if test.is_empty() {
        None
    } else {
        Some(test.batch(&(0..test.len()).collect::<Vec<_>>())?)
    };

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.json"), cfg.to_json())?;
    std::fs::write(out_dir.join("topology.txt"), topo.to_edge_list())?;

    let spec = cfg.round_spec();
    let drt_cfg = DrtConfig::new(cfg.run.kappa, cfg.clip_n())?;
    let init = nn::init_params(&arch, cfg.run.master_seed);
    let eval_ctx = EvalContext {
        arch: &arch,
        train: &train,
        assignments: &assignments,
        test_batch: test_batch.as_ref(),
    };
    let label = cfg.topology.label();

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut final_lines: Vec<String> = Vec::new();

    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    for kind in cfg.run.strategy.kinds() {
        let mut states: Vec<AgentState> =
            (0..k).map(|a| AgentState::new(a, init.clone(), cfg.run.master_seed)).collect();
        let ctx = RoundContext {
            arch: &arch,
            dataset: &train,
            assignments: &assignments,
            base: &base,
            topology: &topo,
            drt: &drt_cfg,
            spec: &spec,
            kind,
            freeze_weights_within_round: cfg.run.freeze_weights_within_round,
            record_tensors: cfg.output.dump_tensors && kind == StrategyKind::DrtDiffusion,
        };
        let tensor_dir = out_dir.join("tensors").join(kind.label());
        let ckpt_dir = out_dir.join("checkpoints").join(kind.label());
        if ctx.record_tensors {
            std::fs::create_dir_all(&tensor_dir)?;
        }
        if cfg.output.checkpoint_every > 0 {
            std::fs::create_dir_all(&ckpt_dir)?;
        }

        let mut push_row = |round: usize,
                            states: &[AgentState],
                            round_loss: Option<&[f64]>|
         -> Result<()> {
            let (losses, accs, test_acc, disagreement) = evaluate(&eval_ctx, states, round_loss)?;
            let mean_train_acc = mean(&accs);
            let gen_gap = if test_acc.is_nan() {
                f64::NAN
            } else {
                diagnostics::generalization_gap(mean_train_acc, test_acc)
            };
            rows.push(MetricsRow {
                round,
                strategy: kind,
                topology: label.clone(),
                lambda2,
                mean_train_loss: mean(&losses),
                mean_train_acc,
                test_acc,
                gen_gap,
                disagreement,
                train_loss: losses,
                train_acc: accs,
            });
            Ok(())
        };

        if cfg.run.rounds == 0 {
            push_row(0, &states, None)?;
        }
        for round in 1..=cfg.run.rounds {
            let first_iter = (round - 1) * spec.consensus_steps;
            let run = |states: &mut [AgentState]| {
                crate::strategies::run_round(&ctx, states, round, first_iter, threads > 1)
            };
            let telemetry = match &pool {
                Some(p) => p.install(|| run(&mut states)),
                None => run(&mut states),
            }
            .map_err(|e| match e {
                Error::NumericalFailure(msg) => Error::NumericalFailure(format!(
                    "round {round} ({}): {msg}",
                    kind.label()
                )),
                other => other,
            })?;
            push_row(round, &states, Some(&telemetry.per_agent_loss))?;
            for tensor in &telemetry.tensors {
                let path = tensor_dir.join(format!("iter_{:05}.txt", tensor.iteration_index()));
                std::fs::write(path, tensor.to_text())?;
            }
            if cfg.output.checkpoint_every > 0 && round % cfg.output.checkpoint_every == 0 {
                for state in &states {
                    let path =
                        ckpt_dir.join(format!("round_{:04}_agent_{:02}.txt", round, state.agent_id));
                    std::fs::write(path, state.params.to_text())?;
                }
            }
        }

        let strat_rows: Vec<&MetricsRow> =
            rows.iter().filter(|r| r.strategy == kind).collect();
        let last = strat_rows.last().expect("at least one row per strategy");
        let tail = steady_tail(&strat_rows.iter().map(|r| r.round).collect::<Vec<_>>());
        let gap_tail: Vec<f64> = strat_rows
            .iter()
            .filter(|r| r.round >= tail)
            .map(|r| r.gen_gap)
            .collect();
        final_lines.push(format!(
            "strategy {}: final test acc {:.4}, final mean train acc {:.4}, mean gen gap (last 20%) {:.4}",
            kind.label(),
            last.test_acc,
            last.mean_train_acc,
            mean(&gap_tail),
        ));
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "topology {label} (K={k}), lambda2 {lambda2:.6}");
    for line in &final_lines {
        let _ = writeln!(summary, "{line}");
    }
    let _ = writeln!(summary, "elapsed {:.1} s", started.elapsed().as_secs_f64());

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, k, &rows)?;
    std::fs::write(out_dir.join("summary.txt"), &summary)?;

    Ok(RunArtifacts { out_dir: out_dir.to_path_buf(), metrics_path, rows, summary, lambda2 })
}

/// Smallest round included in the "last 20%" window for a set of rounds.
fn steady_tail(rounds: &[usize]) -> usize {
    let max = rounds.iter().copied().max().unwrap_or(0);
    let cut = (0.8 * max as f64).floor() as usize;
    if rounds.iter().any(|&r| r > cut) {
        cut + 1
    } else {
        0
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Steady-state aggregate for one (topology, strategy) group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub topology: String,
    pub lambda2: f64,
    pub strategy: String,
    pub steady_acc: f64,
    pub steady_gap: f64,
    pub rounds_used: usize,
}

/// Aggregate one or more metrics CSVs into per-topology, per-strategy
/// steady-state rows (mean over the last 20% of rounds).
pub fn compare_report(paths: &[PathBuf]) -> Result<Vec<ReportLine>> {
    if paths.is_empty() {
        return Err(Error::InvalidParameter("report needs at least one metrics CSV".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<(usize, f64, f64, f64)>> = BTreeMap::new();
    for path in paths {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
        let headers = r.headers()?.clone();
        let expected = metrics_header(0);
        let fixed = &expected[..9];
        if headers.len() < 9 || headers.iter().take(9).ne(fixed.iter().map(String::as_str)) {
            return Err(Error::SchemaMismatch(format!(
                "{}: header does not start with the fixed metrics columns",
                path.display()
            )));
        }
        for rec in r.records() {
            let rec = rec?;
            let parse_f = |i: usize, name: &str| -> Result<f64> {
                rec[i].parse().map_err(|e| {
                    Error::SchemaMismatch(format!("{}: bad {name} {:?}: {e}", path.display(), &rec[i]))
                })
            };
            let round: usize = rec[0].parse().map_err(|e| {
                Error::SchemaMismatch(format!("{}: bad round {:?}: {e}", path.display(), &rec[0]))
            })?;
            let strategy = rec[1].to_string();
            let topology = rec[2].to_string();
            let lambda2 = parse_f(3, "lambda2")?;
            let test_acc = parse_f(6, "test_acc")?;
            let gen_gap = parse_f(7, "gen_gap")?;
            groups
                .entry((topology, strategy))
                .or_default()
                .push((round, lambda2, test_acc, gen_gap));
        }
    }
    let mut out = Vec::new();
    for ((topology, strategy), rows) in groups {
        let rounds: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let tail = steady_tail(&rounds);
        let used: Vec<&(usize, f64, f64, f64)> =
            rows.iter().filter(|r| r.0 >= tail).collect();
        let lambda2 = used[0].1;
        let steady_acc = used.iter().map(|r| r.2).sum::<f64>() / used.len() as f64;
        let steady_gap = used.iter().map(|r| r.3).sum::<f64>() / used.len() as f64;
        out.push(ReportLine {
            topology,
            lambda2,
            strategy,
            steady_acc,
            steady_gap,
            rounds_used: used.len(),
        });
    }
    Ok(out)
}

pub fn format_report(lines: &[ReportLine]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>9} {:<10} {:>10} {:>10} {:>6}",
        "topology", "lambda2", "strategy", "steady_acc", "steady_gap", "rounds"
    );
    for l in lines {
        let _ = writeln!(
            s,
            "{:<16} {:>9.6} {:<10} {:>10.4} {:>10.4} {:>6}",
            l.topology, l.lambda2, l.strategy, l.steady_acc, l.steady_gap, l.rounds_used
        );
    }
    s
}

// ---------------------------------------------------------------------------
// Diagnose
// ---------------------------------------------------------------------------

/// Outcome of a diagnose pass: rows written to `diagnostics.csv`.
pub struct DiagnoseSummary {
    pub csv_path: PathBuf,
    pub rows_written: usize,
    pub rounds_analyzed: usize,
}

fn load_tensors(dir: &Path) -> Result<Vec<MixingTensor>> {
    if !dir.is_dir() {
        return Err(Error::DataAvailability(format!(
            "{} not found; rerun with dump_tensors enabled",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut tensors = Vec::with_capacity(paths.len());
    for p in paths {
        tensors.push(MixingTensor::from_text(&std::fs::read_to_string(&p)?)?);
    }
    if tensors.is_empty() {
        return Err(Error::DataAvailability(format!("no tensor dumps in {}", dir.display())));
    }
    Ok(tensors)
}

fn load_checkpoints(dir: &Path, k: usize) -> Result<BTreeMap<usize, Vec<LayeredParams>>> {
    if !dir.is_dir() {
        return Err(Error::DataAvailability(format!(
            "{} not found; rerun with checkpoint_every > 0",
            dir.display()
        )));
    }
    let mut grouped: BTreeMap<usize, BTreeMap<usize, LayeredParams>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let parts: Vec<&str> = name.split('_').collect();
        let ["round", round, "agent", agent] = parts[..] else { continue };
        let round: usize = round
            .parse()
            .map_err(|e| Error::Parse(format!("bad checkpoint name {name:?}: {e}")))?;
        let agent: usize = agent
            .parse()
            .map_err(|e| Error::Parse(format!("bad checkpoint name {name:?}: {e}")))?;
        let params = LayeredParams::from_text(&std::fs::read_to_string(&path)?)?;
        grouped.entry(round).or_default().insert(agent, params);
    }
    let mut out = BTreeMap::new();
    for (round, agents) in grouped {
        if agents.len() == k && (0..k).all(|a| agents.contains_key(&a)) {
            out.insert(round, agents.into_values().collect());
        }
    }
    if out.is_empty() {
        return Err(Error::DataAvailability(format!(
            "no complete checkpoints in {dir:?}"
        )));
    }
    Ok(out)
}

/// Replay a recorded trust-based run: per checkpointed round, estimate phi
/// from the tensor dumps, then log per-layer residuals plus the centroid
/// disagreement and pooled-gradient norm.
pub fn diagnose(run_dir: &Path, horizon: usize, plain_mean: bool) -> Result<DiagnoseSummary> {
    let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(run_dir.join("config.json"))?)?;
    let topo = cfg.topology.build()?;
    let k = topo.num_agents();
    let arch = cfg.architecture()?;
    let full = data::make_gaussian_blobs(
        cfg.data.num_classes,
        cfg.data.dim,
        cfg.data.per_class,
        cfg.data.spread,
        cfg.data.seed,
    )?;
    let (train, _) = data::split_train_test(&full, cfg.data.test_fraction, cfg.data.seed)?;

    let strat_dir = StrategyKind::DrtDiffusion.label();
    let tensors = load_tensors(&run_dir.join("tensors").join(strat_dir))?;
    let checkpoints = load_checkpoints(&run_dir.join("checkpoints").join(strat_dir), k)?;
    let max_iter = tensors.iter().map(MixingTensor::iteration_index).max().unwrap();

    let csv_path = run_dir.join("diagnostics.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["iter", "layer", "residual", "disagreement", "grad_norm"])?;
    let mut rows_written = 0;
    let mut rounds_analyzed = 0;
    for (&round, params) in &checkpoints {
        let i = round * cfg.run.consensus_steps;
        if i + horizon > max_iter {
            continue;
        }
        let num_layers = params[0].num_layers();
        let mut phis = Vec::with_capacity(num_layers);
        for p in 0..num_layers {
            phis.push(if plain_mean {
                PhiEstimate::uniform(k)
            } else {
                diagnostics::estimate_phi(&tensors, p, i, horizon)?
            });
        }
        let center = diagnostics::centroid(params, &phis)?;
        let disagreement = diagnostics::network_disagreement(params, &center);
        let grad_norm = diagnostics::centroid_grad_norm(&arch, &center, &train)?;
        for (p, phi) in phis.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.to_string(),
                format!("{}", phi.residual),
                format!("{disagreement}"),
                format!("{grad_norm}"),
            ])?;
            rows_written += 1;
        }
        rounds_analyzed += 1;
    }
    w.flush()?;
    if rounds_analyzed == 0 {
        return Err(Error::DataAvailability(format!(
            "no checkpointed round has a full tensor window of horizon {horizon}; \
             record more rounds or lower --horizon"
        )));
    }
    Ok(DiagnoseSummary { csv_path, rows_written, rounds_analyzed })
}
