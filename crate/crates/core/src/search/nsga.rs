// SPDX-License-Identifier: Apache-2.0

//! Non-dominated sorting, crowding distance and crowded-comparison selection
//! for minimization problems.

use std::cmp::Ordering;

use rand::Rng;

/// `a` dominates `b`: no worse in every objective, strictly better in one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Deb's fast non-dominated sort. Fronts are listed best first; indices
/// within a front are ascending.
pub fn fast_nondominated_sort<O: AsRef<[f64]>>(objectives: &[O]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            let (a, b) = (objectives[p].as_ref(), objectives[q].as_ref());
            if dominates(a, b) {
                dominated_by_me[p].push(q);
                domination_count[q] += 1;
            } else if dominates(b, a) {
                dominated_by_me[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Rank (front number) of every individual.
pub fn ranks_from_fronts(fronts: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut rank = vec![0; n];
    for (r, front) in fronts.iter().enumerate() {
        for &i in front {
            rank[i] = r;
        }
    }
    rank
}

/// Crowding distance of each member of one front. Boundary members of every
/// objective get `+∞`; an objective with zero range adds nothing to the
/// interior members.
pub fn crowding_distance<O: AsRef<[f64]>>(front: &[O]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n == 0 {
        return distance;
    }
    let m = front[0].as_ref().len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let value = |i: usize| front[i].as_ref()[k];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let (lo, hi) = (value(order[0]), value(order[n - 1]));
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let i = order[w];
            if distance[i].is_finite() {
                distance[i] += (value(order[w + 1]) - value(order[w - 1])) / range;
            }
        }
    }
    distance
}

/// Rank and crowding distance of every individual in a population.
pub fn rank_and_crowding<O: AsRef<[f64]>>(objectives: &[O]) -> (Vec<usize>, Vec<f64>) {
    let n = objectives.len();
    let fronts = fast_nondominated_sort(objectives);
    let rank = ranks_from_fronts(&fronts, n);
    let mut crowding = vec![0.0; n];
    for front in &fronts {
        let members: Vec<&[f64]> = front.iter().map(|&i| objectives[i].as_ref()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&members)) {
            crowding[i] = d;
        }
    }
    (rank, crowding)
}

/// Crowded comparison: lower rank, then larger crowding, then lower index.
pub fn crowded_cmp(rank: &[usize], crowding: &[f64], a: usize, b: usize) -> Ordering {
    rank[a]
        .cmp(&rank[b])
        .then_with(|| crowding[b].total_cmp(&crowding[a]))
        .then(a.cmp(&b))
}

/// Indices of the `n` best individuals by crowded comparison, best first.
pub fn select_survivors<O: AsRef<[f64]>>(objectives: &[O], n: usize) -> Vec<usize> {
    let (rank, crowding) = rank_and_crowding(objectives);
    let mut order: Vec<usize> = (0..objectives.len()).collect();
    order.sort_by(|&a, &b| crowded_cmp(&rank, &crowding, a, b));
    order.truncate(n);
    order
}

/// Binary tournament: two uniform draws with replacement, crowded winner.
pub fn binary_tournament<R: Rng + ?Sized>(rank: &[usize], crowding: &[f64], rng: &mut R) -> usize {
    let a = rng.random_range(0..rank.len());
    let b = rng.random_range(0..rank.len());
    match crowded_cmp(rank, crowding, a, b) {
        Ordering::Greater => b,
        _ => a,
    }
}
