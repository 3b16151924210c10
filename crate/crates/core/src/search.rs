//! Single-player tree search with prior-guided selection, full expansion,
//! path-mean leaf evaluation and max backup.
//!
//! Every expansion creates all `2C` children of a leaf. Each child stores
//! `r_bar`, the mean value-model score over the frames its action spans,
//! and `v`, the mean of `r_bar` along the path from the root (the root
//! itself has no incoming action and contributes nothing). Edge values hold
//! the best `v` among the current leaves below the edge, so the best path
//! can always be read greedily from the root.
//!
//! Selection maximises `Q(s, a) + U(s, a)` with
//! `U = c_puct (1 + p) sqrt(sum_b N(s, b)) / (1 + N(s, a))`. On exact score
//! ties the higher prior wins, then the lower action index.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionSpec, EngineConfig, LabeledSequence};
use crate::error::{Error, Result};
use crate::lang_model::TransitionTable;
use crate::policy::{assemble_policy_observation, PolicyModel};
use crate::value::{value_input, LstmState, RecurrentValueModel};

/// Supplies priors and window value estimates to the search.
///
/// `State` is whatever the value side needs to continue scoring from a
/// node; for the recurrent model it is the hidden state at the node's
/// position, so child windows resume instead of rescanning the prefix.
#[allow(clippy::len_without_is_empty)]
pub trait Evaluator {
    type State: Clone;

    /// Sequence length `T`.
    fn len(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Prior over the `2C` actions at `position` given the class of the last
    /// executed action.
    fn priors(&self, position: usize, prev_class: Option<usize>) -> Result<Array1<f64>>;

    /// Scores every class conjectured over frames `[start, start + len)`,
    /// continuing from `state`. Returns one `(window mean, end state)` per
    /// class. One call is one value-model batch.
    fn evaluate_window(
        &self,
        state: &Self::State,
        start: usize,
        len: usize,
    ) -> Result<Vec<(f64, Self::State)>>;
}

/// Neural evaluator: policy priors and recurrent value windows.
pub struct NetworkEvaluator<'a> {
    /// `None` gives every action the same prior (value-only search).
    pub policy: Option<&'a PolicyModel>,
    pub value: &'a RecurrentValueModel,
    pub table: &'a TransitionTable,
    pub seq: &'a LabeledSequence,
    pub cfg: &'a EngineConfig,
}

impl Evaluator for NetworkEvaluator<'_> {
    type State = LstmState;

    fn len(&self) -> usize {
        self.seq.len()
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn priors(&self, position: usize, prev_class: Option<usize>) -> Result<Array1<f64>> {
        match self.policy {
            Some(policy) => {
                let obs = assemble_policy_observation(self.seq, position, prev_class, self.table, self.cfg)?;
                policy.forward(obs.view())
            }
            None => {
                let n = self.cfg.num_actions();
                Ok(Array1::from_elem(n, 1.0 / n as f64))
            }
        }
    }

    fn evaluate_window(
        &self,
        state: &LstmState,
        start: usize,
        len: usize,
    ) -> Result<Vec<(f64, LstmState)>> {
        let end = start + len;
        if len == 0 || end > self.seq.len() {
            return Err(Error::EmptyInput("value window"));
        }
        let c = self.cfg.num_classes;
        (0..c)
            .map(|class| {
                let mut s = state.clone();
                let mut total = 0.0;
                for t in start..end {
                    let x = value_input(self.seq.frame(t), class, c);
                    let (next, out) = self.value.step(&s, x.view());
                    s = next;
                    total += out;
                }
                Ok((total / len as f64, s))
            })
            .collect()
    }
}

/// Exact evaluator over known labels: uniform priors, per-frame score `+1`
/// for a correct conjecture and `-1` otherwise.
pub struct LabelOracle<'a> {
    pub labels: &'a [usize],
    pub num_classes: usize,
}

impl Evaluator for LabelOracle<'_> {
    type State = ();

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn priors(&self, _position: usize, _prev_class: Option<usize>) -> Result<Array1<f64>> {
        let n = 2 * self.num_classes;
        Ok(Array1::from_elem(n, 1.0 / n as f64))
    }

    fn evaluate_window(&self, _state: &(), start: usize, len: usize) -> Result<Vec<(f64, ())>> {
        let end = start + len;
        if len == 0 || end > self.labels.len() {
            return Err(Error::EmptyInput("value window"));
        }
        let window = &self.labels[start..end];
        Ok((0..self.num_classes)
            .map(|c| {
                let score: f64 = window.iter().map(|&y| if y == c { 1.0 } else { -1.0 }).sum();
                (score / len as f64, ())
            })
            .collect())
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct SearchNode<S> {
    pub position: usize,
    pub parent: Option<NodeId>,
    /// Flat index of the action leading here from the parent.
    pub action: Option<usize>,
    /// Class of the incoming action (or the episode's last class at the root).
    pub prev_class: Option<usize>,
    pub depth: usize,
    pub prior: f64,
    pub r_bar: f64,
    r_bar_sum: f64,
    pub value: f64,
    pub terminal: bool,
    pub state: S,
    /// Either empty (leaf) or one child per action in canonical order.
    pub children: Vec<NodeId>,
    pub visits: Vec<u32>,
    pub q: Vec<f64>,
}

impl<S> SearchNode<S> {
    pub fn is_expanded(&self) -> bool {
        !self.children.is_empty()
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().map(|&n| u64::from(n)).sum()
    }
}

/// Exploration bonus `c_puct (1 + p) sqrt(n_total) / (1 + n_sa)`.
pub fn ucb_term(p: f64, n_sa: u32, n_total: u64, c_puct: f64) -> f64 {
    c_puct * (1.0 + p) * (n_total as f64).sqrt() / (1.0 + f64::from(n_sa))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub simulations: usize,
    pub nodes_expanded: usize,
    pub value_batch_calls: usize,
    pub selected_index: usize,
    pub selected: ActionSpec,
    pub root_visits: Vec<u32>,
    pub root_q: Vec<f64>,
}

/// Where a search starts: the episode position, the last executed class and
/// the evaluator state after the executed prefix.
#[derive(Debug, Clone)]
pub struct SearchRoot<S> {
    pub position: usize,
    pub prev_class: Option<usize>,
    pub state: S,
}

pub struct SearchTree<'e, E: Evaluator> {
    evaluator: &'e E,
    cfg: &'e EngineConfig,
    nodes: Vec<SearchNode<E::State>>,
    simulations: usize,
    expansions: usize,
    value_batch_calls: usize,
}

impl<'e, E: Evaluator> SearchTree<'e, E> {
    /// Creates the tree and expands its root.
    pub fn new(evaluator: &'e E, cfg: &'e EngineConfig, root: SearchRoot<E::State>) -> Result<Self> {
        let len = evaluator.len();
        if root.position >= len {
            return Err(Error::Search(format!(
                "root position {} is terminal for length {len}",
                root.position
            )));
        }
        if evaluator.num_classes() != cfg.num_classes {
            return Err(Error::DimensionMismatch {
                what: "evaluator classes",
                expected: cfg.num_classes,
                actual: evaluator.num_classes(),
            });
        }
        let mut tree = Self {
            evaluator,
            cfg,
            nodes: vec![SearchNode {
                position: root.position,
                parent: None,
                action: None,
                prev_class: root.prev_class,
                depth: 0,
                prior: 1.0,
                r_bar: 0.0,
                r_bar_sum: 0.0,
                value: 0.0,
                terminal: false,
                state: root.state,
                children: Vec::new(),
                visits: Vec::new(),
                q: Vec::new(),
            }],
            simulations: 0,
            expansions: 0,
            value_batch_calls: 0,
        };
        tree.expand(0)?;
        Ok(tree)
    }

    pub fn root(&self) -> &SearchNode<E::State> {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[SearchNode<E::State>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<E::State> {
        &self.nodes[id]
    }

    pub fn simulations(&self) -> usize {
        self.simulations
    }

    /// Creates all children of a non-terminal leaf. Priors come from one
    /// policy evaluation at the leaf; window values come from two batches,
    /// one per step length. The leaf's edge values are initialised to its
    /// children's `v`.
    pub fn expand(&mut self, id: NodeId) -> Result<()> {
        let node = &self.nodes[id];
        if node.terminal {
            return Err(Error::Search("cannot expand a terminal node".into()));
        }
        if node.is_expanded() {
            return Err(Error::Search("node is already expanded".into()));
        }
        let space = self.cfg.action_space();
        let len = self.evaluator.len();
        let position = node.position;
        let priors = self.evaluator.priors(position, node.prev_class)?;
        if priors.len() != space.len() {
            return Err(Error::DimensionMismatch {
                what: "prior vector",
                expected: space.len(),
                actual: priors.len(),
            });
        }
        let (depth, r_bar_sum) = (node.depth, node.r_bar_sum);

        let mut children = Vec::with_capacity(space.len());
        for step in [space.small_step, space.large_step] {
            let span = step.min(len - position);
            let windows = self.evaluator.evaluate_window(&self.nodes[id].state, position, span)?;
            self.value_batch_calls += 1;
            if windows.len() != space.num_classes {
                return Err(Error::DimensionMismatch {
                    what: "value batch",
                    expected: space.num_classes,
                    actual: windows.len(),
                });
            }
            for (class, (r_bar, state)) in windows.into_iter().enumerate() {
                let action = space.index(&ActionSpec::new(step, class))?;
                let sum = r_bar_sum + r_bar;
                children.push(SearchNode {
                    position: position + span,
                    parent: Some(id),
                    action: Some(action),
                    prev_class: Some(class),
                    depth: depth + 1,
                    prior: priors[action],
                    r_bar,
                    r_bar_sum: sum,
                    value: sum / (depth + 1) as f64,
                    terminal: position + span >= len,
                    state,
                    children: Vec::new(),
                    visits: Vec::new(),
                    q: Vec::new(),
                });
            }
        }
        children.sort_by_key(|c| c.action);

        let first = self.nodes.len();
        let q: Vec<f64> = children.iter().map(|c| c.value).collect();
        self.nodes.extend(children);
        let node = &mut self.nodes[id];
        node.children = (first..first + space.len()).collect();
        node.visits = vec![0; space.len()];
        node.q = q;
        self.expansions += 1;
        Ok(())
    }

    /// Best child edge of an expanded node under `Q + U`.
    pub fn select_child(&self, id: NodeId) -> usize {
        let node = &self.nodes[id];
        let total = node.total_visits();
        let mut best = 0;
        let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (a, &child) in node.children.iter().enumerate() {
            let prior = self.nodes[child].prior;
            let score = node.q[a] + ucb_term(prior, node.visits[a], total, self.cfg.c_puct);
            if score > best_key.0 || (score == best_key.0 && prior > best_key.1) {
                best = a;
                best_key = (score, prior);
            }
        }
        best
    }

    /// Descends from the root until a leaf or terminal node; returns the
    /// traversed `(node, action)` edges and the node reached.
    pub fn select_path(&self) -> (Vec<(NodeId, usize)>, NodeId) {
        let mut path = Vec::new();
        let mut id = 0;
        while self.nodes[id].is_expanded() && !self.nodes[id].terminal {
            let a = self.select_child(id);
            path.push((id, a));
            id = self.nodes[id].children[a];
        }
        (path, id)
    }

    fn subtree_value(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id];
        if node.is_expanded() {
            node.q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            node.value
        }
    }

    /// Counts one visit on every traversed edge and resets each edge value,
    /// from the leaf upwards, to the best value reachable through it.
    pub fn backup(&mut self, path: &[(NodeId, usize)]) {
        for &(id, a) in path.iter().rev() {
            let child = self.nodes[id].children[a];
            let value = self.subtree_value(child);
            let node = &mut self.nodes[id];
            node.visits[a] += 1;
            node.q[a] = value;
        }
    }

    /// One select / expand-and-evaluate / backup round.
    pub fn simulate(&mut self) -> Result<()> {
        let (path, leaf) = self.select_path();
        if !self.nodes[leaf].terminal && !self.nodes[leaf].is_expanded() {
            self.expand(leaf)?;
        }
        self.backup(&path);
        self.simulations += 1;
        Ok(())
    }

    /// Most-visited root edge when unique, otherwise the best `N + Q`
    /// (lowest index on remaining ties).
    pub fn best_action(&self) -> usize {
        let root = &self.nodes[0];
        let max_n = root.visits.iter().copied().max().unwrap_or(0);
        let leaders: Vec<usize> = (0..root.visits.len()).filter(|&a| root.visits[a] == max_n).collect();
        if leaders.len() == 1 {
            return leaders[0];
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..root.visits.len() {
            let score = f64::from(root.visits[a]) + root.q[a];
            if score > best_score {
                best = a;
                best_score = score;
            }
        }
        best
    }

    pub fn diagnostics(&self) -> SearchDiagnostics {
        let selected_index = self.best_action();
        SearchDiagnostics {
            simulations: self.simulations,
            nodes_expanded: self.expansions,
            value_batch_calls: self.value_batch_calls,
            selected_index,
            selected: self
                .cfg
                .action_space()
                .action(selected_index)
                .expect("root has one child per action"),
            root_visits: self.root().visits.clone(),
            root_q: self.root().q.clone(),
        }
    }

    /// Conjectured labels for frames `[root position, node position)`.
    pub fn conjectured_labels(&self, id: NodeId) -> Vec<usize> {
        let mut spans = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            let n = &self.nodes[cur];
            spans.push((n.position - self.nodes[parent].position, n.prev_class.unwrap_or(0)));
            cur = parent;
        }
        spans
            .iter()
            .rev()
            .flat_map(|&(len, class)| std::iter::repeat_n(class, len))
            .collect()
    }
}

/// Runs `cfg.num_simulations` simulations from `root` and returns the
/// refined action.
pub fn tree_search<E: Evaluator>(
    evaluator: &E,
    cfg: &EngineConfig,
    root: SearchRoot<E::State>,
) -> Result<(ActionSpec, SearchDiagnostics)> {
    tree_search_with(evaluator, cfg, root, cfg.num_simulations)
}

/// As [`tree_search`] with an explicit simulation budget (0 is allowed and
/// picks the best root edge value).
pub fn tree_search_with<E: Evaluator>(
    evaluator: &E,
    cfg: &EngineConfig,
    root: SearchRoot<E::State>,
    simulations: usize,
) -> Result<(ActionSpec, SearchDiagnostics)> {
    let mut tree = SearchTree::new(evaluator, cfg, root)?;
    for _ in 0..simulations {
        tree.simulate()?;
    }
    let diagnostics = tree.diagnostics();
    Ok((diagnostics.selected, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> EngineConfig {
        EngineConfig {
            num_classes: 2,
            small_step: 2,
            large_step: 3,
            ..EngineConfig::with_dims(2, 1)
        }
    }

    /// Evaluator with fixed priors and a scripted window score per
    /// `(start, len, class)`.
    struct Scripted {
        len: usize,
        priors: Vec<f64>,
        score: fn(usize, usize, usize) -> f64,
    }

    impl Evaluator for Scripted {
        type State = ();
        fn len(&self) -> usize {
            self.len
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn priors(&self, _: usize, _: Option<usize>) -> Result<Array1<f64>> {
            Ok(Array1::from_vec(self.priors.clone()))
        }
        fn evaluate_window(&self, _: &(), start: usize, len: usize) -> Result<Vec<(f64, ())>> {
            Ok((0..2).map(|c| ((self.score)(start, len, c), ())).collect())
        }
    }

    fn root() -> SearchRoot<()> {
        SearchRoot {
            position: 0,
            prev_class: None,
            state: (),
        }
    }

    #[test]
    fn ucb_examples() {
        assert!((ucb_term(0.5, 0, 4, 1.5) - 4.5).abs() < 1e-12);
        assert_eq!(ucb_term(0.9, 0, 0, 1.5), 0.0);
        assert!((ucb_term(0.0, 3, 16, 1.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn expansion_creates_every_action() {
        let cfg = EngineConfig::with_dims(10, 1);
        let labels = vec![3; 50];
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 10,
        };
        let tree = SearchTree::new(&oracle, &cfg, root()).unwrap();
        let root = tree.root();
        assert_eq!(root.children.len(), 20);
        for (a, &child) in root.children.iter().enumerate() {
            let node = tree.node(child);
            assert_eq!(node.action, Some(a));
            assert_eq!(node.depth, 1);
            assert_eq!(node.value, node.r_bar);
            assert_eq!(root.q[a], node.value);
        }
        assert_eq!(tree.node(root.children[3]).value, 1.0);
        assert_eq!(tree.node(root.children[13]).position, 21);
    }

    #[test]
    fn depth_two_value_is_path_mean() {
        let cfg = tiny_cfg();
        let ev = Scripted {
            len: 20,
            priors: vec![0.25; 4],
            score: |start, _, c| match (start, c) {
                (0, 0) => 0.5,
                (_, 0) => 0.1,
                _ => -0.5,
            },
        };
        let mut tree = SearchTree::new(&ev, &cfg, root()).unwrap();
        let first = tree.root().children[0];
        assert_eq!(tree.node(first).value, 0.5);
        tree.expand(first).unwrap();
        let grandchild = tree.node(first).children[0];
        assert!((tree.node(grandchild).value - 0.3).abs() < 1e-12);
        assert_eq!(tree.conjectured_labels(grandchild), vec![0, 0, 0, 0]);
        assert!(tree.expand(first).is_err());
    }

    #[test]
    fn fresh_root_selects_highest_prior() {
        let cfg = tiny_cfg();
        let ev = Scripted {
            len: 20,
            priors: vec![0.1, 0.2, 0.6, 0.1],
            score: |_, _, _| 0.0,
        };
        let tree = SearchTree::new(&ev, &cfg, root()).unwrap();
        let (path, _) = tree.select_path();
        assert_eq!(path, vec![(0, 2)]);
    }

    #[test]
    fn q_dominates_after_many_visits() {
        let cfg = tiny_cfg();
        let ev = Scripted {
            len: 20,
            priors: vec![0.5, 0.5, 0.0, 0.0],
            score: |_, _, _| 0.0,
        };
        let mut tree = SearchTree::new(&ev, &cfg, root()).unwrap();
        let root = &mut tree.nodes[0];
        root.q = vec![0.9, 0.1, -1.0, -1.0];
        root.visits = vec![400; 4];
        assert_eq!(tree.select_child(0), 0);
    }

    #[test]
    fn terminal_root_is_rejected() {
        let cfg = tiny_cfg();
        let labels = vec![0; 4];
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 2,
        };
        let root = SearchRoot {
            position: 4,
            prev_class: Some(0),
            state: (),
        };
        assert!(tree_search(&oracle, &cfg, root).is_err());
    }

    #[test]
    fn zero_simulations_pick_best_q() {
        let cfg = tiny_cfg();
        let labels = vec![1, 1, 1, 0, 0, 0];
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 2,
        };
        let (action, diag) = tree_search_with(&oracle, &cfg, root(), 0).unwrap();
        assert_eq!(diag.root_visits, vec![0; 4]);
        // both class-1 actions score 1.0; the lower index wins
        assert_eq!(action, ActionSpec::new(2, 1));
        assert_eq!(diag.nodes_expanded, 1);
    }

    #[test]
    fn single_simulation_bookkeeping() {
        let cfg = tiny_cfg();
        let labels = vec![0, 0, 1, 1, 1, 0, 0, 0, 1, 1];
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 2,
        };
        let mut tree = SearchTree::new(&oracle, &cfg, root()).unwrap();
        tree.simulate().unwrap();
        assert_eq!(tree.root().total_visits(), 1);
        assert!(tree.root().visits.iter().all(|&n| n <= 1));
    }

    #[test]
    fn backup_propagates_child_maximum() {
        let cfg = tiny_cfg();
        let ev = Scripted {
            len: 30,
            priors: vec![0.7, 0.1, 0.1, 0.1],
            score: |start, len, c| if start == 0 { 0.2 } else { 0.1 * (len + c) as f64 },
        };
        let mut tree = SearchTree::new(&ev, &cfg, root()).unwrap();
        tree.simulate().unwrap();
        let child = tree.root().children[0];
        let leaf = tree.node(child);
        let best = leaf
            .children
            .iter()
            .map(|&c| tree.node(c).value)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(leaf.q.iter().copied().fold(f64::NEG_INFINITY, f64::max), best);
        assert_eq!(tree.root().q[0], best);
    }
}
