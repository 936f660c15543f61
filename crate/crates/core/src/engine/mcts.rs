//! UCT search over a deterministic planning model, seeded with an initial
//! decision path. Node values are backed up as maxima (the model has no
//! chance nodes), so the path read off the tree by taking the highest-Q
//! child at every depth is the best complete path found, and never worse
//! than the seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub trait PlanningModel {
    type State: Clone;

    /// Actions available in `state`; empty means terminal.
    fn legal_actions(&self, state: &Self::State) -> Vec<usize>;

    /// Deterministic transition returning `(next, reward, done)`.
    fn transition(&self, state: &Self::State, action: usize) -> (Self::State, f64, bool);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MctsConfig {
    /// Number of simulations beyond the seed path.
    pub budget: usize,
    pub max_depth: usize,
    /// Exploration constant, in units of the observed return spread.
    pub c_uct: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            budget: 200,
            max_depth: super::T_MAX,
            c_uct: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctsOutcome {
    pub path: Vec<usize>,
    pub estimated_return: f64,
    pub initial_return: f64,
    /// The chosen path leaves the expanded tree, i.e. the budget ran out
    /// before every depth of the answer was searched.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MctsError {
    #[error("simulation budget must be at least 1")]
    ZeroBudget,
    #[error("initial path action {action} is not legal at depth {depth}")]
    IllegalSeed { depth: usize, action: usize },
}

struct Node<S> {
    state: S,
    depth: usize,
    terminal: bool,
    reward: f64,
    actions: Vec<usize>,
    children: Vec<Option<usize>>,
    visits: u64,
    total: f64,
    best: f64,
    /// Best continuation found beyond the expanded subtree from here.
    suffix: Vec<usize>,
    on_seed: bool,
}

/// Sum of rewards along `path` under `model`, stopping at a terminal step.
pub fn path_return<M: PlanningModel>(model: &M, root: &M::State, path: &[usize]) -> f64 {
    let mut s = root.clone();
    let mut total = 0.0;
    for &a in path {
        let (next, r, done) = model.transition(&s, a);
        total += r;
        s = next;
        if done {
            break;
        }
    }
    total
}

struct Tree<'m, M: PlanningModel> {
    model: &'m M,
    nodes: Vec<Node<M::State>>,
    max_depth: usize,
    lo: f64,
    hi: f64,
}

impl<M: PlanningModel> Tree<'_, M> {
    fn make_node(&self, state: M::State, depth: usize, reward: f64, done: bool) -> Node<M::State> {
        let terminal = done || depth >= self.max_depth;
        let actions = if terminal { Vec::new() } else { self.model.legal_actions(&state) };
        let terminal = terminal || actions.is_empty();
        Node {
            children: vec![None; actions.len()],
            state,
            depth,
            terminal,
            reward,
            actions,
            visits: 0,
            total: 0.0,
            best: if terminal { 0.0 } else { f64::NEG_INFINITY },
            suffix: Vec::new(),
            on_seed: false,
        }
    }

    fn expand(&mut self, parent: usize, slot: usize) -> usize {
        let p = &self.nodes[parent];
        let (state, reward, done) = self.model.transition(&p.state, p.actions[slot]);
        let node = self.make_node(state, p.depth + 1, reward, done);
        self.nodes.push(node);
        let id = self.nodes.len() - 1;
        self.nodes[parent].children[slot] = Some(id);
        id
    }

    fn q(&self, id: usize) -> f64 {
        self.nodes[id].reward + self.nodes[id].best
    }

    /// Random completion from a leaf; returns (return, actions).
    fn rollout(&self, leaf: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
        let node = &self.nodes[leaf];
        if node.terminal {
            return (0.0, Vec::new());
        }
        let mut s = node.state.clone();
        let mut depth = node.depth;
        let mut total = 0.0;
        let mut acts = Vec::new();
        while depth < self.max_depth {
            let legal = self.model.legal_actions(&s);
            if legal.is_empty() {
                break;
            }
            let a = legal[rng.random_range(0..legal.len())];
            let (next, r, done) = self.model.transition(&s, a);
            total += r;
            acts.push(a);
            s = next;
            depth += 1;
            if done {
                break;
            }
        }
        (total, acts)
    }

    /// Propagates a leaf result up `path` (root first, leaf last).
    fn backup(&mut self, path: &[usize], leaf_value: f64, leaf_suffix: Vec<usize>) {
        let leaf = *path.last().expect("non-empty path");
        if leaf_value > self.nodes[leaf].best {
            self.nodes[leaf].best = leaf_value;
            self.nodes[leaf].suffix = leaf_suffix;
        }
        let mut value = leaf_value;
        for (k, &id) in path.iter().enumerate().rev() {
            self.nodes[id].visits += 1;
            self.nodes[id].total += value;
            if k + 1 < path.len() {
                let child = path[k + 1];
                let through = self.q(child);
                if through > self.nodes[id].best {
                    self.nodes[id].best = through;
                    self.nodes[id].suffix.clear();
                }
            }
            value += self.nodes[id].reward;
        }
        let root_value = value - self.nodes[path[0]].reward;
        self.lo = self.lo.min(root_value);
        self.hi = self.hi.max(root_value);
    }

    fn select(&self, id: usize, c_uct: f64) -> usize {
        let node = &self.nodes[id];
        let spread = (self.hi - self.lo).max(1e-9);
        let ln_n = (node.visits.max(1) as f64).ln();
        let mut best = (0, f64::NEG_INFINITY);
        for (slot, child) in node.children.iter().enumerate() {
            let cn = &self.nodes[child.expect("fully expanded")];
            let n = cn.visits.max(1) as f64;
            let mean = cn.reward + cn.total / n;
            let score = (mean - self.lo) / spread + c_uct * (2.0 * ln_n / n).sqrt();
            if score > best.1 {
                best = (slot, score);
            }
        }
        best.0
    }
}

/// Refines `initial` with `cfg.budget` UCT simulations from `root`.
pub fn mcts_refine<M: PlanningModel>(
    model: &M,
    root: &M::State,
    initial: &[usize],
    cfg: &MctsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MctsOutcome, MctsError> {
    if cfg.budget == 0 {
        return Err(MctsError::ZeroBudget);
    }
    let mut tree = Tree {
        model,
        nodes: Vec::new(),
        max_depth: cfg.max_depth,
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };
    let root_node = tree.make_node(root.clone(), 0, 0.0, false);
    tree.nodes.push(root_node);
    tree.nodes[0].on_seed = true;

    // Seed the tree with the initial path.
    let mut path = vec![0];
    let mut cur = 0;
    for (depth, &a) in initial.iter().enumerate() {
        if tree.nodes[cur].terminal {
            break;
        }
        let slot = tree.nodes[cur]
            .actions
            .iter()
            .position(|&x| x == a)
            .ok_or(MctsError::IllegalSeed { depth, action: a })?;
        let child = tree.expand(cur, slot);
        tree.nodes[child].on_seed = true;
        path.push(child);
        cur = child;
    }
    let (v, suffix) = if tree.nodes[cur].terminal {
        (0.0, Vec::new())
    } else {
        // a seed shorter than the horizon is completed by the model's first
        // legal action at each remaining depth
        let mut s = tree.nodes[cur].state.clone();
        let mut depth = tree.nodes[cur].depth;
        let mut total = 0.0;
        let mut acts = Vec::new();
        while depth < cfg.max_depth {
            let legal = model.legal_actions(&s);
            let Some(&a) = legal.first() else { break };
            let (next, r, done) = model.transition(&s, a);
            total += r;
            acts.push(a);
            s = next;
            depth += 1;
            if done {
                break;
            }
        }
        (total, acts)
    };
    tree.backup(&path, v, suffix);
    let initial_return = tree.nodes[0].best;

    for _ in 0..cfg.budget {
        let mut path = vec![0];
        let mut cur = 0;
        loop {
            let node = &tree.nodes[cur];
            if node.terminal {
                break;
            }
            if let Some(slot) = node.children.iter().position(Option::is_none) {
                cur = tree.expand(cur, slot);
                path.push(cur);
                break;
            }
            let slot = tree.select(cur, cfg.c_uct);
            cur = tree.nodes[cur].children[slot].expect("expanded");
            path.push(cur);
        }
        let (v, suffix) = tree.rollout(cur, rng);
        tree.backup(&path, v, suffix);
    }

    // Read the answer off the tree.
    let mut out = Vec::new();
    let mut cur = 0;
    let mut flagged = false;
    loop {
        let node = &tree.nodes[cur];
        if node.terminal {
            break;
        }
        let mut pick: Option<(usize, f64, bool)> = None;
        for (slot, child) in node.children.iter().enumerate() {
            let Some(c) = *child else { continue };
            let q = tree.q(c);
            let seeded = tree.nodes[c].on_seed;
            let better = match pick {
                None => true,
                Some((_, bq, bseed)) => q > bq || (q == bq && seeded && !bseed),
            };
            if better {
                pick = Some((slot, q, seeded));
            }
        }
        match pick {
            Some((slot, q, _)) if q >= node.best && node.suffix.is_empty() => {
                out.push(node.actions[slot]);
                cur = node.children[slot].expect("picked expanded child");
            }
            _ => {
                flagged = flagged || !node.suffix.is_empty();
                out.extend_from_slice(&node.suffix);
                break;
            }
        }
    }
    let estimated_return = path_return(model, root, &out);
    Ok(MctsOutcome {
        path: out,
        estimated_return,
        initial_return,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    /// Explicit tree: rewards[depth][prefix-encoded index].
    struct Table {
        branching: usize,
        depth: usize,
        rewards: Vec<Vec<f64>>,
    }

    impl PlanningModel for Table {
        type State = (usize, usize);

        fn legal_actions(&self, s: &(usize, usize)) -> Vec<usize> {
            if s.0 >= self.depth {
                Vec::new()
            } else {
                (0..self.branching).collect()
            }
        }

        fn transition(&self, s: &(usize, usize), a: usize) -> ((usize, usize), f64, bool) {
            let idx = s.1 * self.branching + a;
            ((s.0 + 1, idx), self.rewards[s.0][idx], s.0 + 1 >= self.depth)
        }
    }

    fn random_table(rng: &mut ChaCha8Rng, branching: usize) -> Table {
        let rewards = vec![
            (0..branching).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..branching * branching).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ];
        Table {
            branching,
            depth: 2,
            rewards,
        }
    }

    fn brute_force(t: &Table) -> (Vec<usize>, f64) {
        let mut best = (vec![], f64::NEG_INFINITY);
        for a in 0..t.branching {
            for b in 0..t.branching {
                let v = t.rewards[0][a] + t.rewards[1][a * t.branching + b];
                if v > best.1 {
                    best = (vec![a, b], v);
                }
            }
        }
        best
    }

    #[test]
    fn depth_one_picks_highest_q() {
        let t = Table {
            branching: 3,
            depth: 1,
            rewards: vec![vec![0.1, 0.9, 0.4]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = MctsConfig { budget: 10, max_depth: 1, c_uct: 1.0 };
        let out = mcts_refine(&t, &(0, 0), &[0], &cfg, &mut rng).unwrap();
        assert_eq!(out.path, vec![1]);
        assert!(!out.flagged);
    }

    #[test]
    fn enough_budget_finds_exhaustive_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..50 {
            let t = random_table(&mut rng, 2 + trial % 4);
            let (opt_path, opt) = brute_force(&t);
            let cfg = MctsConfig { budget: 400, max_depth: 2, c_uct: 1.0 };
            let out = mcts_refine(&t, &(0, 0), &[0, 0], &cfg, &mut rng).unwrap();
            assert_eq!(out.path, opt_path, "trial {trial}");
            assert!((out.estimated_return - opt).abs() < 1e-12);
        }
    }

    #[test]
    fn never_worse_than_seed_at_any_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let t = random_table(&mut rng, 5);
            let seed = vec![trial % 5, (trial / 5) % 5];
            let seed_ret = path_return(&t, &(0, 0), &seed);
            for budget in [1, 2, 3, 7, 20] {
                let cfg = MctsConfig { budget, max_depth: 2, c_uct: 1.0 };
                let out = mcts_refine(&t, &(0, 0), &seed, &cfg, &mut rng).unwrap();
                assert!(out.estimated_return >= seed_ret, "budget {budget}");
            }
        }
    }

    #[test]
    fn optimal_seed_is_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_table(&mut rng, 4);
        let (opt_path, _) = brute_force(&t);
        let out = mcts_refine(&t, &(0, 0), &opt_path, &MctsConfig { budget: 50, max_depth: 2, c_uct: 1.0 }, &mut rng)
            .unwrap();
        assert_eq!(out.path, opt_path);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let t = Table { branching: 2, depth: 1, rewards: vec![vec![0.0, 1.0]] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MctsConfig { budget: 0, max_depth: 1, c_uct: 1.0 };
        assert_eq!(mcts_refine(&t, &(0, 0), &[0], &cfg, &mut rng).unwrap_err(), MctsError::ZeroBudget);
    }
}
