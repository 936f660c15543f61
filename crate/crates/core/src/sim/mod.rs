//! Simulated enterprise operations: a small factory graph, incident
//! scenarios with hidden root causes, a step environment over the action
//! catalog, baselines, and the experiment harnesses.

mod dqn;
pub mod env;
mod harness;
mod heuristic;
mod semantic;
mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Action, ActionCatalog};
use crate::graph::{NodeId, NodeKind};
use crate::real17;

pub use dqn::{train_dqn, DqnConfig, DqnError, DqnPolicy, DqnTrace};
pub use env::{OpsEnv, OpsState, STEP_HOURS};
pub use harness::{
    ablation_suite, aggregate, build_engine, decide, derive_seed, draw_kinds, eval_scenarios, evaluate, evaluate_trigger,
    prepare_scenario, run_episode, scenario_suite, sensitivity_cells, sensitivity_grid, sensitivity_table, BuildOptions, DecisionReport, Engine,
    EngineTraces, EpisodeRecord, ExperimentRow, ExperimentTable, HarnessError, ObjectiveBreakdown, PlotSeries, PolicyKind,
    PreparedScenario, SeedRow, SensitivityCell, TriggerReport, Variant, ABLATION_METRICS, SCENARIO_METRICS,
    SENSITIVITY_BASELINE, SENSITIVITY_METRICS,
};
pub use heuristic::heuristic_path;
pub use semantic::{macro_f1, semantic_corpus, semantic_eval, CorpusItem, SemanticCorpus};
pub use world::{
    build_world, candidate_scores, generate_scenario, predicted_root, node_features, ranking_features, root_cause_rank, topic_vector, FeatureMode, ScenarioError, World, WorldConfig,
    WorldProvider,
};

/// Action indices into [`ops_catalog`].
pub mod act {
    pub const INSPECT: usize = 0;
    pub const DIAGNOSE: usize = 1;
    pub const PRESCHEDULE: usize = 2;
    pub const REPLACE: usize = 3;
    pub const ADJUST: usize = 4;
    pub const NOTIFY: usize = 5;
    pub const SWITCH: usize = 6;
    pub const EXPEDITE: usize = 7;
    pub const REBALANCE: usize = 8;
    pub const REASSIGN: usize = 9;
    pub const RESTART: usize = 10;
    pub const QUALITY_HOLD: usize = 11;
    pub const EMERGENCY: usize = 12;
    pub const SELF_TEST: usize = 13;
    pub const COUNT: usize = 14;
}

/// (id, hours, cost, resource demand)
const ACTION_TABLE: [(&str, f64, f64, f64); act::COUNT] = [
    ("inspect-equipment", 1.5, 800.0, 0.5),
    ("downtime-diagnosis", 1.0, 500.0, 0.3),
    ("pre-schedule-spare-parts", 1.0, 1500.0, 0.5),
    ("replace-component", 3.0, 4000.0, 1.0),
    ("adjust-production-schedule", 1.0, 600.0, 0.3),
    ("notify-suppliers", 0.5, 200.0, 0.1),
    ("switch-supplier", 2.5, 3000.0, 0.8),
    ("expedite-logistics", 1.5, 2500.0, 0.6),
    ("rebalance-energy-load", 1.0, 800.0, 0.6),
    ("reassign-staff", 1.0, 700.0, 0.4),
    ("restart-system", 2.0, 1200.0, 0.7),
    ("quality-hold-and-rework", 2.0, 2000.0, 0.6),
    ("approve-emergency-order", 2.5, 3500.0, 0.5),
    ("equipment-self-test", 1.0, 300.0, 0.2),
];

/// The operations action catalog with signed-basis embeddings.
pub fn ops_catalog() -> ActionCatalog {
    let actions = ACTION_TABLE
        .iter()
        .enumerate()
        .map(|(i, &(id, hours, cost, demand))| Action {
            id: id.to_owned(),
            label: id.replace('-', " "),
            embedding: ActionCatalog::signed_basis_embedding(i, act::COUNT),
            resource_demand: demand,
            nominal_duration: hours,
            cost,
        })
        .collect();
    ActionCatalog::new(actions).expect("static catalog is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    EquipmentFailure,
    SupplyChainDisruption,
    EmergencyOrder,
    QualityAbnormality,
    EnergyFluctuation,
    StaffShortage,
    LogisticsDelay,
    SystemFailure,
}

pub struct KindSpec {
    /// Hours a conventional response takes; the reward's time reference.
    pub t_baseline: f64,
    pub root: NodeKind,
    pub min_affected: usize,
    /// Remediation requirements: every group needs one of its actions,
    /// taken after diagnosis.
    pub groups: &'static [&'static [usize]],
    pub script: [usize; 3],
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::EquipmentFailure,
        ScenarioKind::SupplyChainDisruption,
        ScenarioKind::EmergencyOrder,
        ScenarioKind::QualityAbnormality,
        ScenarioKind::EnergyFluctuation,
        ScenarioKind::StaffShortage,
        ScenarioKind::LogisticsDelay,
        ScenarioKind::SystemFailure,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::EquipmentFailure => "equipment-failure",
            ScenarioKind::SupplyChainDisruption => "supply-chain-disruption",
            ScenarioKind::EmergencyOrder => "emergency-order",
            ScenarioKind::QualityAbnormality => "quality-abnormality",
            ScenarioKind::EnergyFluctuation => "energy-fluctuation",
            ScenarioKind::StaffShortage => "staff-shortage",
            ScenarioKind::LogisticsDelay => "logistics-delay",
            ScenarioKind::SystemFailure => "system-failure",
        }
    }

    pub fn spec(self) -> KindSpec {
        use act::*;
        match self {
            ScenarioKind::EquipmentFailure => KindSpec {
                t_baseline: 7.8,
                root: NodeKind::Equipment,
                min_affected: 2,
                groups: &[&[PRESCHEDULE, REPLACE]],
                script: [INSPECT, DIAGNOSE, REPLACE],
            },
            ScenarioKind::SupplyChainDisruption => KindSpec {
                t_baseline: 12.4,
                root: NodeKind::Supplier,
                min_affected: 3,
                groups: &[&[SWITCH], &[NOTIFY, EMERGENCY]],
                script: [DIAGNOSE, EMERGENCY, SWITCH],
            },
            ScenarioKind::EmergencyOrder => KindSpec {
                t_baseline: 9.0,
                root: NodeKind::Product,
                min_affected: 2,
                groups: &[&[ADJUST, EMERGENCY]],
                script: [NOTIFY, DIAGNOSE, EMERGENCY],
            },
            ScenarioKind::QualityAbnormality => KindSpec {
                t_baseline: 8.5,
                root: NodeKind::Product,
                min_affected: 2,
                groups: &[&[SELF_TEST, QUALITY_HOLD]],
                script: [INSPECT, DIAGNOSE, QUALITY_HOLD],
            },
            ScenarioKind::EnergyFluctuation => KindSpec {
                t_baseline: 15.3,
                root: NodeKind::ProductionLine,
                min_affected: 3,
                groups: &[&[REBALANCE, RESTART], &[ADJUST]],
                script: [DIAGNOSE, RESTART, ADJUST],
            },
            ScenarioKind::StaffShortage => KindSpec {
                t_baseline: 6.5,
                root: NodeKind::ProductionLine,
                min_affected: 2,
                groups: &[&[REASSIGN, EMERGENCY]],
                script: [ADJUST, DIAGNOSE, REASSIGN],
            },
            ScenarioKind::LogisticsDelay => KindSpec {
                t_baseline: 10.2,
                root: NodeKind::Supplier,
                min_affected: 2,
                groups: &[&[EXPEDITE, SWITCH]],
                script: [NOTIFY, DIAGNOSE, SWITCH],
            },
            ScenarioKind::SystemFailure => KindSpec {
                t_baseline: 7.0,
                root: NodeKind::Equipment,
                min_affected: 2,
                groups: &[&[SELF_TEST, RESTART]],
                script: [INSPECT, DIAGNOSE, RESTART],
            },
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| format!("unknown scenario kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub kind: ScenarioKind,
    #[serde(with = "real17")]
    pub severity: f64,
    /// Hours.
    #[serde(with = "real17")]
    pub t_baseline: f64,
    #[serde(with = "real17")]
    pub budget: f64,
    /// Open work items when the incident arrives; drives the time weight.
    pub backlog: u32,
    pub affected_nodes: Vec<NodeId>,
    pub hidden_root_cause: NodeId,
    /// Incident report node added to the graph for this event.
    pub report: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Simulated hours.
    #[serde(with = "real17")]
    pub response_time: f64,
    #[serde(with = "real17")]
    pub cost_actual: f64,
    /// Relative to the heuristic engine's cost on the same event.
    #[serde(with = "real17")]
    pub cost_reduction_pct: f64,
    pub resolved: bool,
    pub steps_taken: usize,
    #[serde(with = "real17")]
    pub resource_overflow: f64,
    #[serde(with = "real17")]
    pub episode_return: f64,
}
