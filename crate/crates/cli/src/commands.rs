//! Subcommand definitions and dispatch.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtr_core::fts::{fts_score, rank_tokens, ImportanceScore};
use gtr_core::gmrf::{
    conditional_variance_trace, kl_to_truth, monte_carlo_execute, propagate_plan, token_features, GmrfModel, ModelSpec,
    PlanSampler, SamplerParams,
};
use gtr_core::grid::{partition_stages, EmptyStagePolicy, GridShape, TokenPos};
use gtr_core::plan::{apply_fts_overrides, count_cost, validate_plan, CostCounters, SamplingPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, OrderKind};
use crate::experiment::{compare_orders, consistency, order_plan, summarize};
use crate::output::{csv, emit, json, pgm, read_scores, read_vectors};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "gtr",
    version,
    about = "Generation-then-reconstruction sampling plans and testbed experiments"
)]
pub struct Cli {
    /// Experiment config JSON; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file (default: stdout).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct StageArgs {
    #[arg(long)]
    pub stages: Option<usize>,
    /// Comma-separated tokens per AR step, one per stage.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
}

#[derive(Debug, Args, Default)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub t_max: Option<u32>,
    #[arg(long)]
    pub t_min: Option<u32>,
    #[arg(long)]
    pub t_rec: Option<u32>,
    #[arg(long)]
    pub t_detail: Option<u32>,
    /// Fraction of reconstruction tokens given t_detail steps.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    /// Model JSON {"h","w","d","rho","rho_map"}; replaces grid and model settings.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    /// Replace exact per-token sampling with the finite-step sampler law.
    #[arg(long)]
    pub sampler_bias: bool,
    #[arg(long)]
    pub beta_rate: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage partition of the token grid.
    Partition {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        stages: Option<usize>,
        /// Drop empty stages instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Build a sampling plan.
    Plan {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// gtr (default), raster, subsample, quadrants or random.
        #[arg(long)]
        order: Option<OrderKind>,
        /// AR steps for baseline orders.
        #[arg(long)]
        ar_steps: Option<usize>,
        /// Diffusion steps per token for baseline orders.
        #[arg(long = "t")]
        diffusion_steps: Option<u32>,
        /// Scores CSV (position,score) for reconstruction-stage overrides.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Cost counters of a plan, optionally against a baseline plan.
    Cost {
        plan: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Frequency-weighted scores of conditioning vectors (CSV rows: index, z...).
    FtsScore {
        vectors: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        beta: Option<f64>,
        /// Write a PGM heatmap of the scores.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Exact output law of a plan on the testbed.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Plan JSON; built from the config when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        order: Option<OrderKind>,
        #[arg(long)]
        ar_steps: Option<usize>,
        /// Emit the full law (mean, row-major covariance) instead of the summary.
        #[arg(long)]
        law: bool,
        /// Monte-Carlo cross-check with this many samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Write one sampled grid as PGM.
        #[arg(long)]
        sample_pgm: Option<PathBuf>,
        /// Write testbed conditioning vectors as CSV for `fts-score`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        window: usize,
    },
    /// KL of each sampling order against the testbed joint.
    CompareOrders {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        ar_steps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<OrderKind>>,
        #[arg(long)]
        fts_window: Option<usize>,
    },
    /// Remaining conditional variance given a checkerboard half vs a contiguous half.
    Consistency {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

impl GridArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(h) = self.height {
            c.h = h;
        }
        if let Some(w) = self.width {
            c.w = w;
        }
    }
}

impl StageArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(k) = self.stages {
            c.stages = k;
        }
        if let Some(r) = &self.rates {
            c.rates = r.clone();
        }
    }
}

impl ScheduleArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        let s = &mut c.schedule;
        s.t_max = self.t_max.unwrap_or(s.t_max);
        s.t_min = self.t_min.unwrap_or(s.t_min);
        s.t_rec = self.t_rec.unwrap_or(s.t_rec);
        s.t_detail = self.t_detail.unwrap_or(s.t_detail);
        s.beta = self.beta.unwrap_or(s.beta);
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(path) = &self.model {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
            let spec: ModelSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad model {}: {e}", path.display())))?;
            c.h = spec.h;
            c.w = spec.w;
            c.model.d = spec.d;
            c.model.rho = spec.rho;
            c.model.rho_map = spec.rho_map;
        }
        if let Some(rho) = self.rho {
            c.model.rho = rho;
        }
        if let Some(d) = self.d {
            c.model.d = d;
        }
        Ok(())
    }
}

impl SamplerArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if self.sampler_bias && c.sampler.is_none() {
            c.sampler = Some(SamplerParams::default());
        }
        if let Some(s) = c.sampler.as_mut() {
            s.beta_rate = self.beta_rate.unwrap_or(s.beta_rate);
            s.horizon = self.horizon.unwrap_or(s.horizon);
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut config = base_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let out = cli.output.as_deref();
    match &cli.command {
        Command::Partition { grid, stages, lenient } => {
            grid.apply(&mut config);
            let k = stages.unwrap_or(config.stages);
            let policy = if *lenient {
                EmptyStagePolicy::Lenient
            } else {
                EmptyStagePolicy::Strict
            };
            let partition = partition_stages(config.shape()?, k, policy)?;
            let bytes = match cli.format.unwrap_or(Format::Json) {
                Format::Json => json(&partition)?,
                Format::Csv => csv(
                    &["stage", "i", "j"],
                    partition.stages().iter().enumerate().flat_map(|(k, s)| {
                        s.iter()
                            .map(move |p| vec![(k + 1).to_string(), p.i.to_string(), p.j.to_string()])
                    }),
                )?,
            };
            emit(out, &bytes)
        }
        Command::Plan {
            grid,
            stage,
            schedule,
            order,
            ar_steps,
            diffusion_steps,
            scores,
        } => {
            grid.apply(&mut config);
            stage.apply(&mut config);
            schedule.apply(&mut config);
            config.ar_steps = ar_steps.unwrap_or(config.ar_steps);
            config.baseline_diffusion_steps = diffusion_steps.unwrap_or(config.baseline_diffusion_steps);
            let plan = build_config_plan(&config, order.unwrap_or(OrderKind::Gtr), seed)?;
            let plan = match scores {
                Some(path) => {
                    let map = scores_by_position(plan.shape, &read_scores(path)?)?;
                    apply_fts_overrides(&plan, &map, &config.schedule)?
                }
                None => plan,
            };
            emit(out, &plan_bytes(&plan, cli.format)?)
        }
        Command::Cost { plan, baseline } => {
            let plan = load_plan(plan)?;
            let counters = count_cost(&plan);
            let report = match baseline {
                Some(path) => {
                    let base = count_cost(&load_plan(path)?);
                    let ratios = Ratios {
                        ar_steps: base.ar_steps as f64 / counters.ar_steps as f64,
                        token_diffusion_steps: base.token_diffusion_steps as f64
                            / counters.token_diffusion_steps as f64,
                    };
                    CostReport {
                        counters,
                        baseline: Some(base),
                        ratios: Some(ratios),
                    }
                }
                None => CostReport {
                    counters,
                    baseline: None,
                    ratios: None,
                },
            };
            let bytes = match cli.format.unwrap_or(Format::Json) {
                Format::Json => json(&report)?,
                Format::Csv => cost_csv(&report)?,
            };
            emit(out, &bytes)
        }
        Command::FtsScore {
            vectors,
            grid,
            beta,
            heatmap,
        } => {
            grid.apply(&mut config);
            let shape = config.shape()?;
            let beta = beta.unwrap_or(config.schedule.beta);
            let rows = read_vectors(vectors)?;
            let mut seen = BTreeSet::new();
            let mut scored = Vec::with_capacity(rows.len());
            for (index, z) in &rows {
                if *index >= shape.len() {
                    return Err(CliError::Config(format!("position {index} outside the {shape} grid")));
                }
                if !seen.insert(*index) {
                    return Err(CliError::Config(format!("position {index} listed twice")));
                }
                scored.push((shape.pos(*index), fts_score(z)));
            }
            let selected: BTreeSet<TokenPos> = rank_tokens(&scored, beta)?.into_iter().collect();
            scored.sort_by_key(|(p, _)| *p);
            let table: Vec<ScoreRow> = scored
                .iter()
                .map(|(p, s)| ScoreRow {
                    position: shape.index(*p),
                    score: s.value(),
                    selected: u8::from(selected.contains(p)),
                })
                .collect();
            let bytes = match cli.format.unwrap_or(Format::Csv) {
                Format::Json => json(&table)?,
                Format::Csv => csv(
                    &["position", "score", "selected"],
                    table
                        .iter()
                        .map(|r| vec![r.position.to_string(), r.score.to_string(), r.selected.to_string()]),
                )?,
            };
            let map = heatmap.as_ref().map(|path| {
                let mut cells = vec![None; shape.len()];
                for r in &table {
                    cells[r.position] = Some(r.score);
                }
                (path, pgm(shape, &cells))
            });
            emit(out, &bytes)?;
            if let Some((path, pgm)) = map {
                emit(Some(path), &pgm)?;
            }
            Ok(())
        }
        Command::Simulate {
            grid,
            stage,
            schedule,
            model,
            sampler,
            plan,
            order,
            ar_steps,
            law,
            samples,
            sample_pgm,
            features,
            window,
        } => {
            grid.apply(&mut config);
            stage.apply(&mut config);
            schedule.apply(&mut config);
            model.apply(&mut config)?;
            sampler.apply(&mut config);
            config.ar_steps = ar_steps.unwrap_or(config.ar_steps);
            let testbed = config.model()?;
            let plan = match plan {
                Some(path) => load_plan(path)?,
                None => build_config_plan(&config, order.unwrap_or(OrderKind::Gtr), seed)?,
            };
            simulate(
                &config,
                &testbed,
                &plan,
                SimulateOutputs {
                    format: cli.format,
                    primary: out,
                    law: *law,
                    samples: *samples,
                    sample_pgm: sample_pgm.as_deref(),
                    features: features.as_deref(),
                    window: *window,
                    seed,
                },
            )
        }
        Command::CompareOrders {
            grid,
            stage,
            schedule,
            model,
            sampler,
            ar_steps,
            seeds,
            orders,
            fts_window,
        } => {
            grid.apply(&mut config);
            stage.apply(&mut config);
            schedule.apply(&mut config);
            model.apply(&mut config)?;
            sampler.apply(&mut config);
            config.ar_steps = ar_steps.unwrap_or(config.ar_steps);
            match (seeds, cli.seed) {
                (Some(s), _) => config.seeds = s.clone(),
                (None, Some(s)) => config.seeds = vec![s],
                (None, None) => {}
            }
            if let Some(o) = orders {
                config.orders = o.clone();
            }
            if fts_window.is_some() {
                config.fts_window = *fts_window;
            }
            let rows = compare_orders(&config)?;
            let summary = summarize(&rows);
            let bytes = match cli.format.unwrap_or(Format::Csv) {
                Format::Json => json(&CompareReport {
                    rows: &rows,
                    summary: &summary,
                })?,
                Format::Csv => csv(
                    &["order", "seed", "ar_steps", "kl"],
                    rows.iter()
                        .map(|r| {
                            vec![
                                r.order.to_string(),
                                r.seed.to_string(),
                                r.ar_steps.to_string(),
                                r.kl.to_string(),
                            ]
                        })
                        .chain(summary.iter().map(|s| {
                            vec![
                                s.order.to_string(),
                                "mean".into(),
                                s.ar_steps.to_string(),
                                s.mean_kl.to_string(),
                            ]
                        })),
                )?,
            };
            emit(out, &bytes)
        }
        Command::Consistency { grid, model } => {
            grid.apply(&mut config);
            model.apply(&mut config)?;
            let report = consistency(&config)?;
            let bytes = match cli.format.unwrap_or(Format::Json) {
                Format::Json => json(&report)?,
                Format::Csv => csv(
                    &["trace_checkerboard", "trace_block", "ratio"],
                    [vec![
                        report.trace_checkerboard.to_string(),
                        report.trace_block.to_string(),
                        report.ratio.to_string(),
                    ]],
                )?,
            };
            emit(out, &bytes)
        }
    }
}

fn build_config_plan(config: &ExperimentConfig, order: OrderKind, seed: u64) -> Result<SamplingPlan, CliError> {
    let shape = config.shape()?;
    if config.ar_steps < 1 || config.ar_steps > shape.len() {
        return Err(CliError::Config(format!(
            "ar_steps {} outside 1..={}",
            config.ar_steps,
            shape.len()
        )));
    }
    // Only GtR plans need the testbed model (for optional FTS features).
    let model = match (order, config.fts_window) {
        (OrderKind::Gtr, Some(_)) => config.model()?,
        _ => gtr_core::gmrf::build_grid_gmrf(shape, 0.0, 1.0, None)?,
    };
    order_plan(config, &model, order, seed)
}

fn load_plan(path: &Path) -> Result<SamplingPlan, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read plan {}: {e}", path.display())))?;
    let plan: SamplingPlan =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed plan {}: {e}", path.display())))?;
    validate_plan(&plan, plan.shape).map_err(|v| {
        let list: Vec<String> = v.iter().map(ToString::to_string).collect();
        CliError::Config(format!("invalid plan {}: {}", path.display(), list.join("; ")))
    })?;
    Ok(plan)
}

fn scores_by_position(
    shape: GridShape,
    rows: &[(usize, f64)],
) -> Result<BTreeMap<TokenPos, ImportanceScore>, CliError> {
    rows.iter()
        .map(|&(index, score)| {
            if index >= shape.len() {
                return Err(CliError::Config(format!(
                    "score position {index} outside the {shape} grid"
                )));
            }
            Ok((shape.pos(index), ImportanceScore::new(score)?))
        })
        .collect()
}

fn plan_bytes(plan: &SamplingPlan, format: Option<Format>) -> Result<Vec<u8>, CliError> {
    match format.unwrap_or(Format::Json) {
        Format::Json => json(plan),
        Format::Csv => csv(
            &["step", "stage", "i", "j", "t"],
            plan.steps.iter().enumerate().flat_map(|(k, s)| {
                s.iter().map(move |(p, t)| {
                    vec![
                        k.to_string(),
                        s.stage.to_string(),
                        p.i.to_string(),
                        p.j.to_string(),
                        t.to_string(),
                    ]
                })
            }),
        ),
    }
}

#[derive(Debug, Serialize)]
struct Ratios {
    ar_steps: f64,
    token_diffusion_steps: f64,
}

#[derive(Debug, Serialize)]
struct CostReport {
    #[serde(flatten)]
    counters: CostCounters,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<CostCounters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Ratios>,
}

fn cost_csv(report: &CostReport) -> Result<Vec<u8>, CliError> {
    fn rows(scope: &str, c: &CostCounters) -> Vec<Vec<String>> {
        let total = vec![
            scope.to_string(),
            "all".to_string(),
            c.ar_steps.to_string(),
            c.tokens.to_string(),
            c.token_diffusion_steps.to_string(),
        ];
        std::iter::once(total)
            .chain(c.per_stage.iter().map(|s| {
                vec![
                    scope.to_string(),
                    s.stage.to_string(),
                    s.ar_steps.to_string(),
                    s.tokens.to_string(),
                    s.token_diffusion_steps.to_string(),
                ]
            }))
            .collect()
    }
    let mut all = rows("plan", &report.counters);
    if let Some(b) = &report.baseline {
        all.extend(rows("baseline", b));
    }
    csv(&["scope", "stage", "ar_steps", "tokens", "token_diffusion_steps"], all)
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    position: usize,
    score: f64,
    selected: u8,
}

#[derive(Serialize)]
struct CompareReport<'a> {
    rows: &'a [crate::experiment::OrderRow],
    summary: &'a [crate::experiment::OrderSummary],
}

struct SimulateOutputs<'a> {
    format: Option<Format>,
    primary: Option<&'a Path>,
    law: bool,
    samples: Option<usize>,
    sample_pgm: Option<&'a Path>,
    features: Option<&'a Path>,
    window: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct MonteCarloSummary {
    n_samples: usize,
    seed: u64,
    max_abs_mean_err: f64,
    max_abs_cov_err: f64,
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    ar_steps: usize,
    sampler_bias: bool,
    kl: f64,
    floored: bool,
    trace_output: f64,
    trace_truth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<MonteCarloSummary>,
}

#[derive(Debug, Serialize)]
struct LawJson {
    n: usize,
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

fn simulate(
    config: &ExperimentConfig,
    model: &GmrfModel,
    plan: &SamplingPlan,
    outputs: SimulateOutputs<'_>,
) -> Result<(), CliError> {
    if outputs.format == Some(Format::Csv) {
        return Err(CliError::Config("simulate writes JSON only".into()));
    }
    let sampler = config.sampler.as_ref();
    let law = propagate_plan(model, plan, sampler)?;
    let primary = if outputs.law {
        let n = law.dim();
        // row-major
        let covariance = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|rc| law.covariance[rc])
            .collect();
        json(&LawJson {
            n,
            mean: law.mean.iter().copied().collect(),
            covariance,
        })?
    } else {
        let kl = kl_to_truth(&law, model)?;
        let monte_carlo = match outputs.samples {
            Some(n) => {
                let m = monte_carlo_execute(model, plan, sampler, n, outputs.seed)?;
                Some(MonteCarloSummary {
                    n_samples: n,
                    seed: outputs.seed,
                    max_abs_mean_err: (&m.mean - &law.mean).amax(),
                    max_abs_cov_err: (&m.covariance - &law.covariance).amax(),
                })
            }
            None => None,
        };
        json(&SimulateSummary {
            ar_steps: plan.num_steps(),
            sampler_bias: sampler.is_some(),
            kl: kl.value,
            floored: kl.floored,
            trace_output: law.covariance.trace(),
            trace_truth: conditional_variance_trace(model, &[])?,
            monte_carlo,
        })?
    };

    let sample = match outputs.sample_pgm {
        Some(path) => {
            let exec = PlanSampler::new(model, plan, sampler)?;
            let x = exec.sample(&mut ChaCha8Rng::seed_from_u64(outputs.seed));
            let cells: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
            Some((path, pgm(model.shape(), &cells)))
        }
        None => None,
    };
    let features = match outputs.features {
        Some(path) => {
            if outputs.window == 0 {
                return Err(CliError::Config("--window must be at least 1".into()));
            }
            let mut rows = Vec::with_capacity(model.dim());
            for p in model.shape().positions() {
                let z = token_features(model, p, outputs.window)?;
                let mut row = vec![model.shape().index(p).to_string()];
                row.extend(z.values().iter().map(f64::to_string));
                rows.push(row.join(","));
            }
            let mut text = rows.join("\n");
            text.push('\n');
            Some((path, text.into_bytes()))
        }
        None => None,
    };

    emit(outputs.primary, &primary)?;
    if let Some((path, bytes)) = sample {
        emit(Some(path), &bytes)?;
    }
    if let Some((path, bytes)) = features {
        emit(Some(path), &bytes)?;
    }
    Ok(())
}
