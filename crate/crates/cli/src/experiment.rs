//! Testbed experiments shared by the subcommands and the acceptance suite.

use std::collections::BTreeMap;

use gtr_core::fts::{fts_score, ImportanceScore};
use gtr_core::gmrf::{conditional_variance_trace, kl_to_truth, propagate_plan, token_features, GmrfModel};
use gtr_core::grid::{order_random, order_raster, order_subsample_variant, SubsampleVariant, TokenPos};
use gtr_core::plan::{apply_fts_overrides, build_plan, plan_from_order, SamplingPlan};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, OrderKind};
use crate::CliError;

/// FTS scores of every token, from testbed conditioning features.
pub fn testbed_scores(model: &GmrfModel, window: usize) -> Result<BTreeMap<TokenPos, ImportanceScore>, CliError> {
    model
        .shape()
        .positions()
        .map(|p| Ok((p, fts_score(&token_features(model, p, window)?))))
        .collect()
}

pub fn gtr_plan(config: &ExperimentConfig, model: &GmrfModel, seed: u64) -> Result<SamplingPlan, CliError> {
    let plan = build_plan(&config.partition()?, &config.rates()?, &config.schedule, seed)?;
    match config.fts_window {
        Some(window) => Ok(apply_fts_overrides(
            &plan,
            &testbed_scores(model, window)?,
            &config.schedule,
        )?),
        None => Ok(plan),
    }
}

pub fn order_plan(
    config: &ExperimentConfig,
    model: &GmrfModel,
    order: OrderKind,
    seed: u64,
) -> Result<SamplingPlan, CliError> {
    let shape = config.shape()?;
    let sequence = match order {
        OrderKind::Gtr => return gtr_plan(config, model, seed),
        OrderKind::Raster => order_raster(shape),
        OrderKind::Subsample => order_subsample_variant(shape, SubsampleVariant::ParityCosets),
        OrderKind::Quadrants => order_subsample_variant(shape, SubsampleVariant::QuadrantBlocks),
        OrderKind::Random => order_random(shape, seed),
    };
    Ok(plan_from_order(
        shape,
        sequence,
        config.ar_steps,
        config.baseline_diffusion_steps,
        seed,
    )?)
}

pub fn plan_kl(config: &ExperimentConfig, model: &GmrfModel, plan: &SamplingPlan) -> Result<f64, CliError> {
    let law = propagate_plan(model, plan, config.sampler.as_ref())?;
    Ok(kl_to_truth(&law, model)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub order: OrderKind,
    pub seed: u64,
    pub ar_steps: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderSummary {
    pub order: OrderKind,
    pub ar_steps: usize,
    pub mean_kl: f64,
}

/// One row per (order, seed), in config order regardless of evaluation order.
pub fn compare_orders(config: &ExperimentConfig) -> Result<Vec<OrderRow>, CliError> {
    config.validate()?;
    let model = config.model()?;
    let jobs: Vec<(OrderKind, u64)> = config
        .orders
        .iter()
        .flat_map(|&o| config.seeds.iter().map(move |&s| (o, s)))
        .collect();
    jobs.par_iter()
        .map(|&(order, seed)| {
            let plan = order_plan(config, &model, order, seed)?;
            Ok(OrderRow {
                order,
                seed,
                ar_steps: plan.num_steps(),
                kl: plan_kl(config, &model, &plan)?,
            })
        })
        .collect()
}

pub fn summarize(rows: &[OrderRow]) -> Vec<OrderSummary> {
    let mut seen: Vec<OrderKind> = Vec::new();
    for r in rows {
        if !seen.contains(&r.order) {
            seen.push(r.order);
        }
    }
    seen.into_iter()
        .map(|order| {
            let mine: Vec<&OrderRow> = rows.iter().filter(|r| r.order == order).collect();
            OrderSummary {
                order,
                ar_steps: mine[0].ar_steps,
                mean_kl: mine.iter().map(|r| r.kl).sum::<f64>() / mine.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub trace_checkerboard: f64,
    pub trace_block: f64,
    /// `trace_block / trace_checkerboard`
    pub ratio: f64,
}

/// Remaining conditional variance after observing half the grid, either as
/// the even-parity checkerboard or as the same number of leading raster
/// positions (the top half on even-height grids).
pub fn consistency(config: &ExperimentConfig) -> Result<ConsistencyReport, CliError> {
    let model = config.model()?;
    let shape = model.shape();
    let checkerboard = shape.even_parity();
    let block: Vec<TokenPos> = shape.positions().take(checkerboard.len()).collect();
    let trace_checkerboard = conditional_variance_trace(&model, &checkerboard)?;
    let trace_block = conditional_variance_trace(&model, &block)?;
    Ok(ConsistencyReport {
        trace_checkerboard,
        trace_block,
        ratio: trace_block / trace_checkerboard,
    })
}
