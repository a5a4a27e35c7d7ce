use super::trial::{dominates, Objectives, Trial};
use crate::error::{Error, Result};

/// Fast nondominated sort: fronts of indices into `items`, best first.
pub fn nondominated_sort<T>(items: &[T], dom: impl Fn(&T, &T) -> bool) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut beats: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut beaten_by = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dom(&items[i], &items[j]) {
                beats[i].push(j);
                beaten_by[j] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| beaten_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &beats[i] {
                beaten_by[j] -= 1;
                if beaten_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance within one front; boundary points get infinity.
pub fn crowding_distance(points: &[Objectives]) -> Vec<f64> {
    let n = points.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let keys: [fn(&Objectives) -> f64; 2] = [|o| o.accuracy, |o| o.flops as f64];
    for key in keys {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])).then(a.cmp(&b)));
        let lo = key(&points[order[0]]);
        let hi = key(&points[order[n - 1]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                dist[order[w]] += (key(&points[order[w + 1]]) - key(&points[order[w - 1]])) / (hi - lo);
            }
        }
    }
    dist
}

/// Feasible completed trials not dominated by another feasible trial,
/// ascending by FLOPs.
pub fn pareto_front(trials: &[Trial]) -> Vec<Trial> {
    let feasible: Vec<(&Trial, Objectives)> = trials
        .iter()
        .filter(|t| t.is_feasible())
        .filter_map(|t| Some((t, t.objectives?)))
        .collect();
    let mut front: Vec<Trial> = feasible
        .iter()
        .filter(|(_, o)| !feasible.iter().any(|(_, p)| dominates(p, o)))
        .map(|(t, _)| (*t).clone())
        .collect();
    sort_by_flops(&mut front);
    front
}

fn sort_by_flops(trials: &mut [Trial]) {
    trials.sort_by(|a, b| {
        a.flops()
            .cmp(&b.flops())
            .then(b.accuracy().unwrap_or(0.0).total_cmp(&a.accuracy().unwrap_or(0.0)))
            .then(a.id.cmp(&b.id))
    });
}

/// Minimum-FLOPs feasible trial; equal FLOPs go to the higher accuracy,
/// then the lower id.
pub fn select_tiny(front: &[Trial]) -> Result<Trial> {
    let mut feasible: Vec<Trial> = front.iter().filter(|t| t.is_feasible()).cloned().collect();
    sort_by_flops(&mut feasible);
    feasible
        .into_iter()
        .next()
        .ok_or_else(|| Error::contract("no feasible trial to select"))
}

/// Front rows ascending by FLOPs with the searched hyperparameters.
pub fn front_table(front: &[Trial]) -> String {
    let mut rows = front.to_vec();
    sort_by_flops(&mut rows);
    let mut s = format!(
        "{:>5} {:>12} {:>8} {:>14} {:>9} {:>7} {:>7}\n",
        "Index", "FLOPs", "val_acc", "# transformers", "embed_dim", "# heads", "dropout"
    );
    for (i, t) in rows.iter().enumerate() {
        let o = t.objectives.expect("front trials are complete");
        s.push_str(&format!(
            "{:>5} {:>12} {:>8.4} {:>14} {:>9} {:>7} {:>7.2}\n",
            i, o.flops, o.accuracy, t.point.num_transformers, t.point.embed_dim, t.point.num_heads, t.point.dropout
        ));
    }
    s
}
