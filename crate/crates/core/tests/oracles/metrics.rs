//! Reference metric implementations: full-table Levenshtein, frame-counting
//! IoU, and exhaustive segment matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segsearch::domain::segments_from_labels;
use segsearch::metrics::{accuracy, edit_score, match_segments};

/// Levenshtein distance from the complete (|a|+1) x (|b|+1) table.
pub fn levenshtein_table(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn collapse(labels: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &l in labels {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

pub fn edit_score_reference(pred: &[usize], gt: &[usize]) -> f64 {
    let (p, g) = (collapse(pred), collapse(gt));
    100.0 * (1.0 - levenshtein_table(&p, &g) as f64 / p.len().max(g.len()) as f64)
}

/// Segments as (class, set of frames).
fn frame_segments(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some((c, frames)) if *c == l => frames.push(t),
            _ => out.push((l, vec![t])),
        }
    }
    out
}

fn iou_frames(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|t| b.contains(t)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Same-class IoU matrix computed by counting frames.
fn eligibility(pred: &[usize], gt: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<Vec<f64>>) {
    let p = frame_segments(pred);
    let g = frame_segments(gt);
    let m = p
        .iter()
        .map(|(pc, pf)| {
            g.iter()
                .map(|(gc, gf)| if pc == gc { iou_frames(pf, gf) } else { -1.0 })
                .collect()
        })
        .collect();
    (p.iter().map(|s| s.0).collect(), g.iter().map(|s| s.0).collect(), m)
}

/// The greedy rule restated over the frame-counted IoU matrix.
pub fn greedy_tp_reference(pred: &[usize], gt: &[usize], tau: f64) -> usize {
    let (_, g, m) = eligibility(pred, gt);
    let mut used = vec![false; g.len()];
    let mut tp = 0;
    for row in &m {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in row.iter().enumerate() {
            if v >= 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            if v >= tau && !used[j] {
                used[j] = true;
                tp += 1;
            }
        }
    }
    tp
}

/// Largest number of disjoint same-class pairs with IoU >= tau, by
/// exhaustive search over assignments.
pub fn optimal_tp(pred: &[usize], gt: &[usize], tau: f64) -> usize {
    let (_, g, m) = eligibility(pred, gt);
    fn go(m: &[Vec<f64>], i: usize, used: &mut Vec<bool>, tau: f64) -> usize {
        if i == m.len() {
            return 0;
        }
        let mut best = go(m, i + 1, used, tau);
        for j in 0..used.len() {
            if !used[j] && m[i][j] >= tau {
                used[j] = true;
                best = best.max(1 + go(m, i + 1, used, tau));
                used[j] = false;
            }
        }
        best
    }
    go(&m, 0, &mut vec![false; g.len()], tau)
}

/// Instances where every predicted segment has at most one eligible
/// ground-truth segment; there the greedy rule is provably optimal.
pub fn greedy_safe(pred: &[usize], gt: &[usize], tau: f64) -> bool {
    let (_, _, m) = eligibility(pred, gt);
    m.iter().all(|row| row.iter().filter(|&&v| v >= tau).count() <= 1)
}

/// A label array of length `len` with at most `max_segments` runs.
pub fn random_labels(rng: &mut ChaCha8Rng, len: usize, max_segments: usize, classes: usize) -> Vec<usize> {
    let segments = rng.random_range(1..=max_segments.min(len));
    let mut cuts: Vec<usize> = (1..len).collect();
    for i in (1..cuts.len()).rev() {
        let j = rng.random_range(0..=i);
        cuts.swap(i, j);
    }
    let mut cuts: Vec<usize> = cuts.into_iter().take(segments - 1).collect();
    cuts.sort_unstable();
    cuts.push(len);
    let mut labels = Vec::with_capacity(len);
    let mut class = rng.random_range(0..classes);
    let mut start = 0;
    for end in cuts {
        labels.extend(std::iter::repeat_n(class, end - start));
        start = end;
        class = (class + rng.random_range(1..classes)) % classes;
    }
    labels
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let len = rng.random_range(1..=40);
    let classes = rng.random_range(2..=4);
    (
        random_labels(rng, len, 8, classes),
        random_labels(rng, len, 8, classes),
    )
}

/// Edit score against the full-table oracle; exact equality required.
pub fn edit_check(pairs: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..pairs {
        let (p, g) = random_pair(&mut rng);
        let got = edit_score(&p, &g).map_err(|e| e.to_string())?;
        let want = edit_score_reference(&p, &g);
        if got != want {
            return Err(format!("pair {i}: edit {got} vs oracle {want}"));
        }
    }
    Ok(pairs)
}

pub fn accuracy_check(pairs: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..pairs {
        let (p, g) = random_pair(&mut rng);
        let correct = (0..p.len()).filter(|&t| p[t] == g[t]).count();
        let want = 100.0 * correct as f64 / p.len() as f64;
        let got = accuracy(&p, &g).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("pair {i}: accuracy {got} vs {want}"));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct F1Stats {
    pub instances: usize,
    pub greedy_safe: usize,
}

/// True-positive counts against the frame-counting greedy reference on
/// every instance, and against exhaustive optimal matching wherever the
/// greedy rule is optimal; TP never exceeds the optimum or min(#pred, #gt).
pub fn f1_check(pairs: usize, seed: u64) -> Result<F1Stats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = F1Stats::default();
    for i in 0..pairs {
        let (p, g) = random_pair(&mut rng);
        let ps = segments_from_labels(&p).map_err(|e| e.to_string())?;
        let gs = segments_from_labels(&g).map_err(|e| e.to_string())?;
        for tau in [0.1, 0.25, 0.5, 0.75, 1.0] {
            stats.instances += 1;
            let tp = match_segments(&ps, &gs, tau).true_positives;
            let reference = greedy_tp_reference(&p, &g, tau);
            if tp != reference {
                return Err(format!("pair {i} tau {tau}: TP {tp} vs greedy reference {reference}"));
            }
            let best = optimal_tp(&p, &g, tau);
            if tp > best || tp > ps.len().min(gs.len()) {
                return Err(format!("pair {i} tau {tau}: TP {tp} exceeds optimum {best}"));
            }
            if greedy_safe(&p, &g, tau) {
                stats.greedy_safe += 1;
                if tp != best {
                    return Err(format!("pair {i} tau {tau}: TP {tp} vs optimal matching {best}"));
                }
            }
        }
    }
    Ok(stats)
}
