use std::collections::BTreeSet;

/// Mean Jaccard distance between consecutive sub-window sets.
///
/// Zero for a single sub-window; a pair of empty sets counts as no change.
pub fn compute_dynamicity<T: Ord>(sets: &[BTreeSet<T>]) -> f64 {
    if sets.len() < 2 {
        return 0.0;
    }
    let total: f64 = sets
        .windows(2)
        .map(|w| {
            let inter = w[0].intersection(&w[1]).count();
            let union = w[0].len() + w[1].len() - inter;
            jaccard_distance(inter, union)
        })
        .sum();
    total / (sets.len() - 1) as f64
}

fn jaccard_distance(inter: usize, union: usize) -> f64 {
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

fn sorted_intersection<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Same quantity from `(sub_window, member)` pairs; duplicates allowed.
///
/// `n_sub_windows` counts empty sub-windows too.
pub(crate) fn dynamicity_from_pairs<T: Ord + Copy>(pairs: &mut Vec<(u32, T)>, n_sub_windows: usize) -> f64 {
    if n_sub_windows < 2 {
        return 0.0;
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut per_window: Vec<Vec<T>> = vec![Vec::new(); n_sub_windows];
    for &(w, m) in pairs.iter() {
        per_window[w as usize].push(m);
    }
    let total: f64 = per_window
        .windows(2)
        .map(|w| {
            let inter = sorted_intersection(&w[0], &w[1]);
            jaccard_distance(inter, w[0].len() + w[1].len() - inter)
        })
        .sum();
    total / (n_sub_windows - 1) as f64
}
