use ocam_core::eval::{evaluate_embeddings, EvalOptions, MapMode};
use ocam_core::exec::Execution;
use ocam_core::index::{build_index, read_snapshot, write_snapshot, Space};
use ocam_core::metricspace::{binarize, euclidean_distance, hamming_distance, hamming_distance_naive, squared_euclidean_distance, HashCode};
use ocam_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Corpus {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    ids: Vec<u64>,
    names: Vec<String>,
}

/// Class-shifted Gaussian embeddings with shuffled, non-contiguous ids.
fn corpus(m: usize, j: usize, s: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..j).map(|_| (0..s).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = (0..m).map(|i| if i < j { i } else { rng.random_range(0..j) }).collect();
    let embeddings = labels
        .iter()
        .map(|&l| shifts[l].iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut ids: Vec<u64> = (0..m as u64).map(|i| 1000 + 7 * i).collect();
    for i in (1..m).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    Corpus {
        embeddings,
        labels,
        ids,
        names: (0..j).map(|c| format!("c{c}")).collect(),
    }
}

fn to_oracle(space: Space) -> oracle::Space {
    match space {
        Space::Euclidean => oracle::Space::Euclidean,
        Space::Hamming => oracle::Space::Hamming,
        Space::Cosine => unreachable!(),
    }
}

#[test]
fn top_z_matches_a_full_sort() {
    for seed in 0..20 {
        let s = if seed % 2 == 0 { 16 } else { 64 };
        let c = corpus(200, 5, s, seed);
        let ix = build_index(c.embeddings.clone(), c.labels.clone(), c.ids.clone()).unwrap();
        for space in [Space::Euclidean, Space::Hamming] {
            let dist = oracle::distance_matrix(&c.embeddings, to_oracle(space));
            for q in [0, 17, 199] {
                let expected = oracle::ranking(&dist, &c.ids, q);
                for z in [1, 5, 50, 199, 500] {
                    let got = ix.query_topz(&c.embeddings[q], z, space, Some(c.ids[q])).unwrap();
                    let want: Vec<u64> = expected.iter().take(z).map(|&j| c.ids[j]).collect();
                    assert_eq!(got.ids(), want, "seed {seed} {space} q {q} z {z}");
                    for (h, &j) in got.hits.iter().zip(&expected) {
                        assert_eq!(h.distance, dist[q][j]);
                    }
                }
            }
        }
    }
}

#[test]
fn excluded_id_never_appears() {
    let c = corpus(60, 3, 8, 99);
    let ix = build_index(c.embeddings.clone(), c.labels.clone(), c.ids.clone()).unwrap();
    for q in 0..60 {
        for space in [Space::Euclidean, Space::Hamming, Space::Cosine] {
            let r = ix.query_topz(&c.embeddings[q], 100, space, Some(c.ids[q])).unwrap();
            assert_eq!(r.hits.len(), 59);
            assert!(r.hits.iter().all(|h| h.id != c.ids[q]));
        }
        // without exclusion the query finds itself first in Euclidean space
        let r = ix.query_topz(&c.embeddings[q], 1, Space::Euclidean, None).unwrap();
        assert_eq!(r.hits[0].id, c.ids[q]);
        assert_eq!(r.hits[0].distance, 0.0);
    }
}

#[test]
fn metrics_match_the_brute_force_oracle() {
    let opts = EvalOptions::default();
    for seed in 0..20 {
        let s = if seed < 10 { 16 } else { 64 };
        let c = corpus(200, 5, s, 1000 + seed);
        let report = evaluate_embeddings(c.embeddings.clone(), &c.labels, &c.ids, &c.names, &opts).unwrap();
        for space in [Space::Euclidean, Space::Hamming] {
            for z in [5, 20, 50] {
                let want = oracle::evaluate(&c.embeddings, &c.labels, &c.ids, z, to_oracle(space));
                let got = &report.block(space, z).unwrap().macro_avg;
                let pairs = [
                    (got.p_at_z.unwrap(), want.precision),
                    (got.map_standard.unwrap(), want.map_standard),
                    (got.map_as_written.unwrap(), want.map_as_written),
                ];
                for (g, w) in pairs {
                    assert!((g - w).abs() <= 1e-12, "seed {seed} {space} z {z}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn sequential_and_parallel_reports_agree() {
    let c = corpus(150, 4, 16, 7);
    let run = |exec| {
        let opts = EvalOptions {
            exec,
            map_mode: MapMode::AsWritten,
            ..EvalOptions::default()
        };
        let mut r = evaluate_embeddings(c.embeddings.clone(), &c.labels, &c.ids, &c.names, &opts).unwrap();
        r.metadata.wall_clock_seconds = 0.0;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn random_embeddings_score_near_chance() {
    // with labels independent of the embedding every rank is relevant with
    // probability (n_j - 1) / (M - 1), about 1/J for balanced classes
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (m, j) = (1000, 5);
    let embeddings: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let labels: Vec<usize> = (0..m).map(|i| i % j).collect();
    let ids: Vec<u64> = (0..m as u64).collect();
    let names: Vec<String> = (0..j).map(|c| c.to_string()).collect();
    let report = evaluate_embeddings(embeddings, &labels, &ids, &names, &EvalOptions::default()).unwrap();
    let chance = (m / j - 1) as f64 / (m - 1) as f64;
    for space in [Space::Euclidean, Space::Hamming] {
        for z in [20, 50] {
            let p = report.block(space, z).unwrap().macro_avg.p_at_z.unwrap();
            assert!((p - chance).abs() < 0.02, "{space} z {z}: {p} vs {chance}");
        }
    }
}

#[test]
fn code_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in [16, 64] {
        for _ in 0..1000 {
            let a: Vec<i8> = (0..s).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let b: Vec<i8> = (0..s).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let (ca, cb) = (HashCode::from_signs(&a).unwrap(), HashCode::from_signs(&b).unwrap());
            let packed = hamming_distance(&ca, &cb).unwrap();
            assert_eq!(packed, hamming_distance_naive(&a, &b).unwrap());
            assert_eq!(packed, oracle::hamming(&a, &b));
            let sq = squared_euclidean_distance(&ca.to_f64(), &cb.to_f64()).unwrap();
            assert_eq!(sq, 4.0 * f64::from(packed));
            let d = euclidean_distance(&ca.to_f64(), &cb.to_f64()).unwrap();
            assert!((d - 2.0 * f64::from(packed).sqrt()).abs() < 1e-12);
            assert_eq!(binarize(&ca.to_f64()), ca);
        }
    }
}

#[test]
fn snapshot_preserves_answers() {
    let c = corpus(80, 4, 20, 12);
    let ix = build_index(c.embeddings.clone(), c.labels.clone(), c.ids.clone()).unwrap();
    let mut buf = Vec::new();
    write_snapshot(&ix, &mut buf).unwrap();
    let back = read_snapshot(buf.as_slice()).unwrap();
    for space in [Space::Euclidean, Space::Hamming] {
        assert_eq!(
            ix.query_topz(&c.embeddings[3], 10, space, None).unwrap().ids(),
            back.query_topz(&c.embeddings[3], 10, space, None).unwrap().ids()
        );
    }
    let mut bad = buf.clone();
    bad[0] ^= 0xff;
    assert!(read_snapshot(bad.as_slice()).is_err());
    assert!(read_snapshot(&buf[..buf.len() - 3]).is_err());
}
