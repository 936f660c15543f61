//! Browser demo over the core library. Every export takes plain values and
//! returns a JSON string so the page needs no glue beyond wasm-bindgen.

use std::cell::RefCell;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use kgdrive_core::config::RunConfig;
use kgdrive_core::engine::{adaptive_weights, compute_reward, Outcome, RewardConfig};
use kgdrive_core::fusion::{embed_triple, fuse, FusionDims, FusionParams, StubProvider, TripleRecord};
use kgdrive_core::graph::{DYNAMIC_EDGE_THRESHOLD, MERGE_THRESHOLD};
use kgdrive_core::linalg;
use kgdrive_core::sim::{build_engine, decide, BuildOptions, Engine, ScenarioKind, Variant};

#[derive(Serialize)]
struct Similarity {
    cosine: f64,
    links: bool,
    merges: bool,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Fuses two triples (stub provider, zero metadata, seeded fusion weights)
/// and reports whether maintenance would link or merge them.
pub fn similarity_json(a: [&str; 3], b: [&str; 3], seed: u64) -> Result<String, String> {
    let dims = FusionDims {
        d_g: 64,
        d_m: 16,
        d_s: 32,
        d_a: 32,
    };
    let params = FusionParams::init(dims, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut provider = StubProvider::new(seed, dims.d_g);
    let mut embed = |t: [&str; 3]| -> Result<Vec<f64>, String> {
        let raw = embed_triple(&mut provider, &TripleRecord::new(t[0], t[1], t[2])).map_err(|e| e.to_string())?;
        let mut v = fuse(&raw, &vec![0.0; dims.d_m], &params).map_err(|e| e.to_string())?;
        linalg::normalize(&mut v);
        Ok(v)
    };
    let (a, b) = (embed(a)?, embed(b)?);
    let cosine = linalg::cosine(&a, &b);
    Ok(to_json(&Similarity {
        cosine,
        links: cosine > DYNAMIC_EDGE_THRESHOLD,
        merges: cosine > MERGE_THRESHOLD,
        a,
        b,
    }))
}

#[derive(Serialize)]
struct RewardBreakdown {
    alpha: f64,
    beta: f64,
    time_term: f64,
    cost_term: f64,
    overflow_term: f64,
    total: f64,
}

/// Reward of one outcome under the default adaptive weighting.
pub fn reward_json(hours: f64, cost: f64, overflow: f64, backlog: u32, budget: f64) -> Result<String, String> {
    let cfg = RewardConfig::default();
    let (alpha, beta) = adaptive_weights(backlog, cfg.backlog_window, budget / cfg.budget_max);
    let outcome = Outcome {
        t_execute: hours,
        cost_actual: cost,
        resource_overflow: overflow,
    };
    let total = compute_reward(&outcome, (alpha, beta), &cfg).map_err(|e| e.to_string())?;
    Ok(to_json(&RewardBreakdown {
        alpha,
        beta,
        time_term: alpha * (1.0 - hours / cfg.t_baseline),
        cost_term: beta * (1.0 - cost / cfg.budget_allocated),
        overflow_term: -cfg.eta * overflow,
        total,
    }))
}

/// A small configuration that trains in about a second in the browser.
pub fn demo_config(seed: u64, episodes: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.fusion.epochs = 40;
    c.gnn.pretrain_epochs = 40;
    c.experiment.sac_episodes = episodes;
    c.experiment.train_pool = 24;
    c.experiment.threads = 1;
    c
}

thread_local! {
    static ENGINE: RefCell<Option<((u64, usize), Engine)>> = const { RefCell::new(None) };
}

#[derive(Serialize)]
struct Decision {
    path: Vec<String>,
    policy_path: Vec<String>,
    response_hours: f64,
    cost: f64,
    resolved: bool,
    root_rank: usize,
    reward: f64,
    time_term: f64,
    cost_term: f64,
    overflow_term: f64,
    entities: Vec<String>,
    heat_map: Vec<Vec<f64>>,
    q_gaps: Vec<f64>,
}

/// Trains (or reuses) a demo engine and decides one incident of `kind`.
pub fn decide_json(kind: &str, seed: u64, episodes: usize, scenario_seed: u64) -> Result<String, String> {
    let kind: ScenarioKind = kind.parse()?;
    ENGINE.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.as_ref().map(|(k, _)| *k) != Some((seed, episodes)) {
            let engine = build_engine(&demo_config(seed, episodes), Variant::Full, seed, BuildOptions::default())
                .map_err(|e| e.to_string())?;
            *slot = Some(((seed, episodes), engine));
        }
        let engine = &slot.as_ref().expect("engine just built").1;
        let (report, _) = decide(engine, kind, scenario_seed).map_err(|e| e.to_string())?;
        let m = &report.record.metrics;
        let o = &report.objectives;
        Ok(to_json(&Decision {
            path: report.record.path.clone(),
            policy_path: report.policy_path.clone(),
            response_hours: m.response_time,
            cost: m.cost_actual,
            resolved: m.resolved,
            root_rank: report.record.root_rank,
            reward: m.episode_return,
            time_term: o.time_term,
            cost_term: o.cost_term,
            overflow_term: o.overflow_term,
            entities: report.explanation.heat_map.entities.iter().map(|e| e.as_str().to_owned()).collect(),
            heat_map: report.explanation.heat_map.grid.clone(),
            q_gaps: report.explanation.chain.iter().map(|s| s.q_gap).collect(),
        }))
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo outputs are finite")
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn similarity(s1: &str, r1: &str, o1: &str, s2: &str, r2: &str, o2: &str, seed: u32) -> Result<String, JsValue> {
    similarity_json([s1, r1, o1], [s2, r2, o2], seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn reward(hours: f64, cost: f64, overflow: f64, backlog: u32, budget: f64) -> Result<String, JsValue> {
    reward_json(hours, cost, overflow, backlog, budget).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn decide_incident(kind: &str, seed: u32, episodes: u32, scenario_seed: u32) -> Result<String, JsValue> {
    decide_json(kind, seed as u64, episodes as usize, scenario_seed as u64).map_err(|e| JsValue::from_str(&e))
}
