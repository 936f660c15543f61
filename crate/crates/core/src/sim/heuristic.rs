//! Rule-based response: the fixed three-step script of each scenario kind,
//! taken regardless of state.

use super::ScenarioKind;

pub fn heuristic_path(kind: ScenarioKind) -> Vec<usize> {
    kind.spec().script.to_vec()
}
