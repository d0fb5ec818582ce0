//! Finite-difference checks of every loss kind on batches built away from
//! hinge kinks and mining ties.

#![allow(dead_code)]

use ocam_core::losses::{loss_value_and_gradient, BatchLayout, LossKind, LossSpec, Metric};
use ocam_oracles::{central_gradient, cosine_distance, euclidean_distance, max_relative_error};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MIN_SLACK: f64 = 0.05;
const MIN_MINING_GAP: f64 = 1e-3;
const MAGNITUDE_FLOOR: f64 = 1e-8;

fn dist(metric: Metric, u: &[f64], v: &[f64]) -> f64 {
    match metric {
        Metric::Cosine => cosine_distance(u, v),
        Metric::Euclidean => euclidean_distance(u, v),
    }
}

fn uniform(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// The quantity whose sign switches the hinge, for one triplet.
pub fn triplet_hinge_argument(spec: &LossSpec, a: &[f64], p: &[f64], n: &[f64]) -> f64 {
    let m = spec.metric;
    let scaled: Vec<f64> = a.iter().map(|x| spec.r * x).collect();
    let anchor = if spec.kind == LossKind::Wabt { &scaled[..] } else { a };
    let dap = dist(m, anchor, p);
    let dan = dist(m, anchor, n);
    let dpn = dist(m, p, n);
    match spec.kind {
        LossKind::Ocam => dap - (dan + 2.0 * dpn - 1.0) / 2.0,
        LossKind::OcamNoPn => dap - dan + (1.0 - dpn) / 2.0,
        LossKind::OcamFixedMargin => dap - (dan + dpn) / 2.0 + spec.alpha,
        LossKind::DmTri => 1.0 - dan / (dap + spec.alpha),
        _ => dap - dan + spec.alpha,
    }
}

pub struct Case {
    pub rows: Vec<Vec<f64>>,
    pub layout: BatchLayout,
}

/// True when every loss term of the batch is at least [`MIN_SLACK`] from its
/// kink and, for hardest-triplet mining, the mined rows win by a clear gap.
pub fn is_smooth(spec: &LossSpec, rows: &[Vec<f64>], layout: &BatchLayout) -> bool {
    let m = spec.metric;
    match layout {
        BatchLayout::Triplets(ts) => ts
            .iter()
            .all(|&(a, p, n)| triplet_hinge_argument(spec, &rows[a], &rows[p], &rows[n]).abs() >= MIN_SLACK),
        BatchLayout::Pairs(ps) => ps
            .iter()
            .all(|&(i, j, same)| same || (spec.alpha - dist(m, &rows[i], &rows[j])).abs() >= MIN_SLACK),
        BatchLayout::Classified(_) => true,
        BatchLayout::Grouped(labels) => {
            let w_pos = spec.sigma1 * spec.sigma2;
            let w_neg = spec.beta1 * spec.beta2;
            (0..rows.len()).all(|a| {
                let mut pos: Vec<f64> = Vec::new();
                let mut neg: Vec<f64> = Vec::new();
                for j in (0..rows.len()).filter(|&j| j != a) {
                    let d = dist(m, &rows[a], &rows[j]);
                    if labels[j] == labels[a] {
                        pos.push(d)
                    } else {
                        neg.push(d)
                    }
                }
                pos.sort_by(|x, y| y.partial_cmp(x).unwrap());
                neg.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let clear_pos = pos.len() < 2 || pos[0] - pos[1] >= MIN_MINING_GAP;
                let clear_neg = neg.len() < 2 || neg[1] - neg[0] >= MIN_MINING_GAP;
                !pos.is_empty()
                    && !neg.is_empty()
                    && clear_pos
                    && clear_neg
                    && (w_pos * pos[0] - w_neg * neg[0] + spec.alpha).abs() >= MIN_SLACK
            })
        }
    }
}

/// Draws a random batch for `spec.kind`; `None` when it is not smooth or, for
/// single triplets, when the hinge is inactive (the check would see zeros).
pub fn sample_case(spec: &LossSpec, dim: usize, rng: &mut ChaCha8Rng) -> Option<Case> {
    let case = match spec.kind {
        LossKind::Contrastive => Case {
            rows: (0..4).map(|_| uniform(rng, dim)).collect(),
            layout: BatchLayout::Pairs(vec![(0, 1, true), (2, 3, false), (0, 3, false)]),
        },
        LossKind::CrossEntropy => Case {
            rows: (0..3).map(|_| uniform(rng, dim).iter().map(|x| 3.0 * x).collect()).collect(),
            layout: BatchLayout::Classified((0..3).map(|i| i % dim).collect()),
        },
        LossKind::TriEp => {
            let labels = vec![0, 0, 0, 1, 1, 2, 2];
            Case {
                rows: (0..labels.len()).map(|_| uniform(rng, dim)).collect(),
                layout: BatchLayout::Grouped(labels),
            }
        }
        _ => {
            let rows: Vec<Vec<f64>> = (0..3).map(|_| uniform(rng, dim)).collect();
            if triplet_hinge_argument(spec, &rows[0], &rows[1], &rows[2]) < MIN_SLACK {
                return None;
            }
            Case {
                rows,
                layout: BatchLayout::Triplets(vec![(0, 1, 2)]),
            }
        }
    };
    is_smooth(spec, &case.rows, &case.layout).then_some(case)
}

/// Max relative error between the analytic batch gradient and central
/// differences with step `h`.
pub fn case_error(spec: &LossSpec, case: &Case, h: f64) -> f64 {
    let (_, grads) = loss_value_and_gradient(spec, &case.rows, &case.layout).unwrap();
    let dim = case.rows[0].len();
    let flat: Vec<f64> = case.rows.concat();
    let f = |x: &[f64]| {
        let rows: Vec<Vec<f64>> = x.chunks(dim).map(<[f64]>::to_vec).collect();
        loss_value_and_gradient(spec, &rows, &case.layout).unwrap().0
    };
    let numeric = central_gradient(f, &flat, h);
    max_relative_error(&grads.concat(), &numeric, MAGNITUDE_FLOOR)
}

/// Worst error over `points` accepted cases.
pub fn check_kind(spec: &LossSpec, points: usize, dim: usize, h: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut tries = 0;
    while accepted < points {
        tries += 1;
        assert!(tries < 1_000_000, "{}: could not find {points} usable points", spec.kind);
        if let Some(case) = sample_case(spec, dim, &mut rng) {
            worst = worst.max(case_error(spec, &case, h));
            accepted += 1;
        }
    }
    worst
}
