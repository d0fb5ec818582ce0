//! Slow, direct reference implementations.
//!
//! Nothing here shares code with `ocam-core`: distances are recomputed from
//! their definitions, rankings use a full sort of the whole distance matrix and
//! metrics are summed term by term.

/// `(1 - cos) / 2`, computed with plain loops.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    let c = uv / (uu.sqrt() * vv.sqrt());
    ((1.0 - c) / 2.0).clamp(0.0, 1.0)
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// +1 for entries >= 0, -1 otherwise.
pub fn sign_code(e: &[f64]) -> Vec<i8> {
    e.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect()
}

pub fn hamming(a: &[i8], b: &[i8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// OCAM with its three terms kept apart: anchor-positive distance minus the
/// balanced anchor-negative / positive-negative average plus the adaptive
/// margin `(1 - dpn) / 2`.
pub fn ocam_unsimplified(a: &[f64], p: &[f64], n: &[f64]) -> f64 {
    let dap = cosine_distance(a, p);
    let dan = cosine_distance(a, n);
    let dpn = cosine_distance(p, n);
    let balanced = 0.5 * dan + 0.5 * dpn;
    let margin = (1.0 - dpn) / 2.0;
    (dap - balanced + margin).max(0.0)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`; pairs where both magnitudes
/// are below `floor` count as equal.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale < floor {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Euclidean,
    Hamming,
}

/// Full `M x M` distance matrix.
pub fn distance_matrix(embeddings: &[Vec<f64>], space: Space) -> Vec<Vec<f64>> {
    let codes: Vec<Vec<i8>> = embeddings.iter().map(|e| sign_code(e)).collect();
    (0..embeddings.len())
        .map(|i| {
            (0..embeddings.len())
                .map(|j| match space {
                    Space::Euclidean => euclidean_distance(&embeddings[i], &embeddings[j]),
                    Space::Hamming => f64::from(hamming(&codes[i], &codes[j])),
                })
                .collect()
        })
        .collect()
}

/// Every other item ordered by (distance, id).
pub fn ranking(dist: &[Vec<f64>], ids: &[u64], query: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).filter(|&j| j != query).collect();
    order.sort_by(|&x, &y| {
        dist[query][x]
            .partial_cmp(&dist[query][y])
            .unwrap()
            .then(ids[x].cmp(&ids[y]))
    });
    order
}

/// Per-query scores for the first `z` ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    pub precision: f64,
    pub ap_standard: f64,
    pub ap_as_written: f64,
}

pub fn score(relevant: &[bool]) -> QueryScore {
    let z = relevant.len();
    let mut precision = 0.0;
    let mut standard = 0.0;
    let mut written = 0.0;
    let mut total_hits = 0.0;
    for k in 1..=z {
        let t = if relevant[k - 1] { 1.0 } else { 0.0 };
        precision += t;
        total_hits += t;
        let hits_so_far = relevant[..k].iter().filter(|&&r| r).count() as f64;
        standard += hits_so_far / k as f64 * t;
        written += t / k as f64;
    }
    QueryScore {
        precision: precision / z as f64,
        ap_standard: if total_hits > 0.0 { standard / total_hits } else { 0.0 },
        ap_as_written: written / z as f64,
    }
}

/// Macro averages over classes with at least two members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroScore {
    pub precision: f64,
    pub map_standard: f64,
    pub map_as_written: f64,
}

/// Leave-one-out evaluation: every item queries all others.
pub fn evaluate(embeddings: &[Vec<f64>], labels: &[usize], ids: &[u64], z: usize, space: Space) -> MacroScore {
    let dist = distance_matrix(embeddings, space);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_class = vec![Vec::new(); classes];
    for q in 0..embeddings.len() {
        let order = ranking(&dist, ids, q);
        let take = z.min(order.len());
        let rel: Vec<bool> = order[..take].iter().map(|&j| labels[j] == labels[q]).collect();
        per_class[labels[q]].push(score(&rel));
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut counted = 0.0;
    for scores in per_class.iter().filter(|s| s.len() >= 2) {
        let n = scores.len() as f64;
        sums.0 += scores.iter().map(|s| s.precision).sum::<f64>() / n;
        sums.1 += scores.iter().map(|s| s.ap_standard).sum::<f64>() / n;
        sums.2 += scores.iter().map(|s| s.ap_as_written).sum::<f64>() / n;
        counted += 1.0;
    }
    MacroScore {
        precision: sums.0 / counted,
        map_standard: sums.1 / counted,
        map_as_written: sums.2 / counted,
    }
}

/// Classifies `test` by the closest per-class mean of `train`.
pub fn nearest_centroid_accuracy(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
) -> f64 {
    let classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let dim = train[0].len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0.0; classes];
    for (x, &y) in train.iter().zip(train_labels) {
        for (c, v) in centroids[y].iter_mut().zip(x) {
            *c += v;
        }
        counts[y] += 1.0;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let correct = test
        .iter()
        .zip(test_labels)
        .filter(|(x, &y)| {
            let best = (0..classes)
                .min_by(|&a, &b| {
                    euclidean_distance(x, &centroids[a])
                        .partial_cmp(&euclidean_distance(x, &centroids[b]))
                        .unwrap()
                })
                .unwrap();
            best == y
        })
        .count();
    correct as f64 / test.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_scores() {
        let s = score(&[true, false, true]);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.ap_standard - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((s.ap_as_written - (1.0 + 1.0 / 3.0) / 3.0).abs() < 1e-15);
        assert_eq!(score(&[false, false]).ap_standard, 0.0);
    }

    #[test]
    fn central_difference_of_a_cubic() {
        let g = central_gradient(|x| x[0].powi(3) + 2.0 * x[1], &[1.5, -1.0], 1e-5);
        assert!((g[0] - 6.75).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
