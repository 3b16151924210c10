//! Exhaustive enumeration and structural invariants for the tree search on
//! tiny instances (C = 2, steps 2 and 3, T <= 12).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segsearch::search::{tree_search_with, Evaluator, LabelOracle, SearchRoot, SearchTree};
use segsearch::{ActionSpec, EngineConfig};

pub const STEPS: [usize; 2] = [2, 3];

pub fn tiny_cfg() -> EngineConfig {
    EngineConfig {
        num_classes: 2,
        small_step: STEPS[0],
        large_step: STEPS[1],
        ..EngineConfig::with_dims(2, 1)
    }
}

pub fn random_labels(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.random_range(6..=12);
    let mut labels = Vec::with_capacity(len);
    let mut class = rng.random_range(0..2);
    for _ in 0..len {
        if rng.random_bool(0.3) {
            class = 1 - class;
        }
        labels.push(class);
    }
    labels
}

fn window_score(labels: &[usize], start: usize, end: usize, class: usize) -> i64 {
    labels[start..end]
        .iter()
        .map(|&y| if y == class { 1 } else { -1 })
        .sum()
}

/// Best total `#correct - #wrong` from `pos` onwards, by brute force.
pub fn best_score(labels: &[usize], pos: usize) -> i64 {
    if pos >= labels.len() {
        return 0;
    }
    let mut best = i64::MIN;
    for step in STEPS {
        for class in 0..2 {
            let end = (pos + step).min(labels.len());
            best = best.max(window_score(labels, pos, end, class) + best_score(labels, end));
        }
    }
    best
}

/// Every first action that starts some globally optimal path.
pub fn optimal_first_actions(labels: &[usize]) -> Vec<ActionSpec> {
    let target = best_score(labels, 0);
    let mut firsts = Vec::new();
    for step in STEPS {
        for class in 0..2 {
            let end = step.min(labels.len());
            if window_score(labels, 0, end, class) + best_score(labels, end) == target {
                firsts.push(ActionSpec::new(step, class));
            }
        }
    }
    firsts
}

pub fn root() -> SearchRoot<()> {
    SearchRoot {
        position: 0,
        prev_class: None,
        state: (),
    }
}

/// Runs `instances` seeded searches with `simulations` each and counts how
/// often the chosen action starts an optimal path.
pub fn agreement(instances: usize, simulations: usize, seed: u64) -> (usize, usize) {
    let cfg = tiny_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..instances {
        let labels = random_labels(&mut rng);
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 2,
        };
        let (action, _) = tree_search_with(&oracle, &cfg, root(), simulations).expect("search runs");
        if optimal_first_actions(&labels).contains(&action) {
            hits += 1;
        }
    }
    (hits, instances)
}

/// Max `v` over current leaves below `id`, by explicit traversal.
fn subtree_leaf_max<E: Evaluator>(tree: &SearchTree<'_, E>, id: usize) -> f64 {
    let node = tree.node(id);
    if node.children.is_empty() {
        return node.value;
    }
    node.children
        .iter()
        .map(|&c| subtree_leaf_max(tree, c))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Q equals the subtree leaf max exactly, every value equals the path mean
/// of the window scores, and visit counts are conserved.
pub fn check_invariants<E: Evaluator>(tree: &SearchTree<'_, E>) -> Result<(), String> {
    for (id, node) in tree.nodes().iter().enumerate() {
        for (a, &child) in node.children.iter().enumerate() {
            let max = subtree_leaf_max(tree, child);
            if node.q[a] != max {
                return Err(format!("node {id} edge {a}: Q {} vs leaf max {max}", node.q[a]));
            }
        }
        if id == 0 {
            continue;
        }
        let mut r_bars = Vec::new();
        let mut cur = id;
        while let Some(parent) = tree.node(cur).parent {
            r_bars.push(tree.node(cur).r_bar);
            cur = parent;
        }
        let mean = r_bars.iter().sum::<f64>() / r_bars.len() as f64;
        if (node.value - mean).abs() > 1e-12 {
            return Err(format!("node {id}: v {} vs path mean {mean}", node.value));
        }
        let parent = tree.node(node.parent.expect("non-root"));
        let incoming = u64::from(parent.visits[node.action.expect("non-root")]);
        if node.terminal {
            if !node.children.is_empty() {
                return Err(format!("terminal node {id} has children"));
            }
        } else {
            let expected = if node.children.is_empty() { 0 } else { incoming - 1 };
            if node.total_visits() != expected {
                return Err(format!(
                    "node {id}: {} child visits, expected {expected}",
                    node.total_visits()
                ));
            }
        }
    }
    Ok(())
}

/// Checks the invariants after every simulation; returns the number of
/// simulations checked.
pub fn invariant_run(instances: usize, simulations: usize, seed: u64) -> Result<usize, String> {
    let cfg = tiny_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    for instance in 0..instances {
        let labels = random_labels(&mut rng);
        let oracle = LabelOracle {
            labels: &labels,
            num_classes: 2,
        };
        let mut tree = SearchTree::new(&oracle, &cfg, root()).map_err(|e| e.to_string())?;
        check_invariants(&tree).map_err(|e| format!("instance {instance}, before search: {e}"))?;
        for sim in 1..=simulations {
            tree.simulate().map_err(|e| e.to_string())?;
            total += 1;
            check_invariants(&tree).map_err(|e| format!("instance {instance}, simulation {sim}: {e}"))?;
            if tree.root().total_visits() != sim as u64 {
                return Err(format!("instance {instance}: root visits {}", tree.root().total_visits()));
            }
        }
    }
    Ok(total)
}
