//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ocam_core::config::RunConfig;
use ocam_core::corpus::{class_center, train_test_split};
use ocam_core::eval::{evaluate_embeddings, EvalOptions};
use ocam_core::index::Space;
use ocam_core::losses::{ocam_loss, LossKind, LossSpec, TripletInput};
use ocam_core::metricspace::{hamming_distance, hamming_distance_naive, squared_euclidean_distance, HashCode};
use ocam_core::pipeline::{prepare_data, without_metadata};
use ocam_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

const TWO_SIGMA_SPACING: &str = "1.4142135623730951";
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)*));
        }
    };
}

fn uniform(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn ocam(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ocam"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ocam {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn canonical(v: &Value) -> String {
    serde_json::to_string(&without_metadata(v)).unwrap()
}

fn macro_metric(eval: &Value, space: &str, z: usize, metric: &str) -> Result<f64, String> {
    eval["spaces"][space][z.to_string()]["macro"][metric]
        .as_f64()
        .ok_or_else(|| format!("no {metric} for {space} at Z={z}"))
}

/// Trains into `dir` and returns the parsed report.
fn train(dir: &Path, settings: &[&str]) -> Result<Value, String> {
    let mut args = vec!["train", "--threads", "1", "--out-dir", dir.to_str().unwrap()];
    for s in settings {
        args.extend(["--set", s]);
    }
    ocam(&args)?;
    read_json(&dir.join("train_report.json"))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut count): (f64, usize) = (0.0, 0);
    while count < 10_000 {
        let (a, p, n) = (uniform(&mut rng, 16), uniform(&mut rng, 16), uniform(&mut rng, 16));
        let Ok(t) = TripletInput::new(&a, &p, &n) else { continue };
        let v = ocam_loss(&t).map_err(|e| e.to_string())?;
        worst = worst.max((v - oracle::ocam_unsimplified(&a, &p, &n)).abs());
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("10000 triplets, max |simplified - unsimplified| = {worst:.1e}, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for kind in LossKind::ALL {
        let err = gradcheck::check_kind(&LossSpec::new(kind), 50, 8, 1e-6, 77);
        ensure!(err <= 1e-4, "{kind}: relative error {err:e}");
        if err > worst.0 {
            worst = (err, kind.to_string());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.2}s");
    Ok(format!(
        "{} kinds x 50 points, worst relative error {:.1e} ({}), {secs:.2}s",
        LossKind::ALL.len(),
        worst.0,
        worst.1
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (m, j, s) = (200, 5, if seed % 2 == 0 { 16 } else { 64 });
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let shifts: Vec<Vec<f64>> = (0..j).map(|_| uniform(&mut rng, s)).collect();
        let labels: Vec<usize> = (0..m).map(|i| if i < j { i } else { rng.random_range(0..j) }).collect();
        let emb: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| shifts[l].iter().map(|c| c + 2.0 * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ids: Vec<u64> = (0..m as u64).map(|i| (i * 37) % 211 + 5).collect();
        let names: Vec<String> = (0..j).map(|c| c.to_string()).collect();
        let report = evaluate_embeddings(emb.clone(), &labels, &ids, &names, &EvalOptions::default())
            .map_err(|e| e.to_string())?;
        for (space, os) in [
            (Space::Euclidean, oracle::Space::Euclidean),
            (Space::Hamming, oracle::Space::Hamming),
        ] {
            for z in [5, 20, 50] {
                let want = oracle::evaluate(&emb, &labels, &ids, z, os);
                let got = &report.block(space, z).ok_or("missing block")?.macro_avg;
                for (g, w) in [
                    (got.p_at_z, want.precision),
                    (got.map_standard, want.map_standard),
                    (got.map_as_written, want.map_as_written),
                ] {
                    let g = g.ok_or("missing macro value")?;
                    worst = worst.max((g - w).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(secs < 60.0, "took {secs:.2}s");
    Ok(format!("20 corpora, both spaces, Z in {{5,20,50}}, max deviation {worst:.1e}, {secs:.2}s"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4096);
    for s in [16, 64] {
        for _ in 0..1000 {
            let a: Vec<i8> = (0..s).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let b: Vec<i8> = (0..s).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let (ca, cb) = (HashCode::from_signs(&a).unwrap(), HashCode::from_signs(&b).unwrap());
            let packed = hamming_distance(&ca, &cb).unwrap();
            let naive = hamming_distance_naive(&a, &b).unwrap();
            ensure!(packed == naive && naive == oracle::hamming(&a, &b), "S={s}: popcount {packed} vs naive {naive}");
            let sq = squared_euclidean_distance(&ca.to_f64(), &cb.to_f64()).unwrap();
            ensure!(sq == 4.0 * f64::from(packed), "S={s}: squared Euclidean {sq} vs 4 x {packed}");
        }
    }
    Ok("1000 code pairs at S=16 and S=64, identities exact".into())
}

/// Runs the end-to-end training on default settings into `dir`.
fn run_5(dir: &Path) -> Result<(Value, f64), String> {
    let start = Instant::now();
    let report = train(dir, &[])?;
    Ok((report, start.elapsed().as_secs_f64()))
}

fn criterion_5(dir: &Path) -> Outcome {
    let cfg = RunConfig::default();
    let sep = (0..cfg.synth_classes)
        .flat_map(|a| (a + 1..cfg.synth_classes).map(move |b| (a, b)))
        .map(|(a, b)| {
            let ca = class_center(a, cfg.synth_dim, cfg.synth_spacing, cfg.synth_sigma);
            let cb = class_center(b, cfg.synth_dim, cfg.synth_spacing, cfg.synth_sigma);
            oracle::euclidean_distance(&ca, &cb)
        })
        .fold(f64::INFINITY, f64::min)
        / cfg.synth_sigma;
    ensure!(sep >= 6.0, "closest centers only {sep:.4} sigma apart");
    let ds = prepare_data(&cfg).map_err(|e| e.to_string())?;
    let (tr, te) = train_test_split(&ds, &cfg.split_spec()).map_err(|e| e.to_string())?;
    let nc = oracle::nearest_centroid_accuracy(tr.features(), tr.labels(), te.features(), te.labels());
    ensure!(nc >= 0.99, "nearest-centroid accuracy {nc:.4}");

    let (report, secs) = run_5(dir)?;
    let eval = &report["evaluation"];
    let euc = macro_metric(eval, "euclidean", 20, "map_standard")?;
    let ham = macro_metric(eval, "hamming", 20, "map_standard")?;
    let detail = format!(
        "centers {sep:.3} sigma apart, nearest-centroid {nc:.4}, {} test items, mAP@20 euclidean {euc:.4} hamming {ham:.4}, {secs:.1}s",
        report["num_test"]
    );
    ensure!(euc >= 0.95 && ham >= 0.85 && secs <= 120.0, "{detail}");
    Ok(detail)
}

/// OCAM and Triplet(0.2) at 2 sigma for every seed: (ocam reports, triplet reports).
fn run_6(dir: &Path) -> Result<(Vec<Value>, Vec<Value>), String> {
    let spacing = format!("synth.spacing={TWO_SIGMA_SPACING}");
    let (mut ocam_runs, mut triplet_runs) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let seed_kv = format!("seed={seed}");
        let d = dir.join(format!("ocam_{seed}"));
        ocam_runs.push(train(&d, &[&spacing, &seed_kv])?);
        let d = dir.join(format!("triplet_{seed}"));
        triplet_runs.push(train(&d, &[&spacing, &seed_kv, "train.loss=triplet", "loss.alpha=0.2"])?);
    }
    Ok((ocam_runs, triplet_runs))
}

fn criterion_6(dir: &Path) -> Outcome {
    let (o, t) = run_6(dir)?;
    let score = |runs: &[Value]| -> Result<Vec<f64>, String> {
        runs.iter()
            .map(|r| macro_metric(&r["evaluation"], "euclidean", 20, "map_standard"))
            .collect()
    };
    let (so, st) = (score(&o)?, score(&t)?);
    let (mo, mt) = (oracle::median(&so), oracle::median(&st));
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "median mAP@20 ocam {mo:.4} [{}] triplet {mt:.4} [{}], margin {:+.4}",
        fmt(&so),
        fmt(&st),
        mo - mt
    );
    ensure!(mo >= mt - 0.01, "{detail}");
    Ok(detail)
}

/// Ablation sweep and a direct Triplet(0.2) run, both at 2 sigma.
fn run_7(dir: &Path) -> Result<(Value, String, Value), String> {
    let spacing = format!("synth.spacing={TWO_SIGMA_SPACING}");
    let ablate_dir = dir.join("ablate");
    ocam(&[
        "ablate",
        "--threads",
        "1",
        "--set",
        &spacing,
        "--out-dir",
        ablate_dir.to_str().unwrap(),
    ])?;
    let report = read_json(&ablate_dir.join("ablation_report.json"))?;
    let table = fs::read_to_string(ablate_dir.join("ablation_table.txt")).map_err(|e| e.to_string())?;
    let direct = train(&dir.join("direct_triplet"), &[&spacing, "train.loss=triplet", "loss.alpha=0.2"])?;
    Ok((report, table, direct))
}

fn criterion_7(dir: &Path) -> Outcome {
    let (report, _, direct) = run_7(dir)?;
    let rows = report["rows"].as_array().ok_or("no rows")?;
    let names: Vec<&str> = rows.iter().filter_map(|r| r["variant"].as_str()).collect();
    ensure!(names == ["ocam", "no_pn", "fixed_margin", "both"], "variants {names:?}");
    for row in rows {
        for space in ["euclidean", "hamming"] {
            for z in [5, 20, 50] {
                macro_metric(&row["evaluation"], space, z, "p_at_z").map_err(|e| format!("{}: {e}", row["variant"]))?;
            }
        }
    }
    let both = &rows[3];
    ensure!(
        canonical(&both["evaluation"]) == canonical(&direct["evaluation"]),
        "\"both\" evaluation differs from the direct triplet run"
    );
    ensure!(
        both["final_loss_mean"] == direct["loss"]["last_100_mean"],
        "final loss {} vs {}",
        both["final_loss_mean"],
        direct["loss"]["last_100_mean"]
    );
    let p20 = |r: &Value| macro_metric(&r["evaluation"], "euclidean", 20, "p_at_z").unwrap_or(f64::NAN);
    Ok(format!(
        "4 variants reported, \"both\" equals direct triplet; euclidean P@20 {}",
        rows.iter()
            .map(|r| format!("{} {:.4}", r["variant"].as_str().unwrap_or("?"), p20(r)))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

fn criterion_8(first: &Path, second: &Path) -> Outcome {
    let mut compared = 0;
    let (a, _) = run_5(&second.join("c5"))?;
    let b = read_json(&first.join("c5/train_report.json"))?;
    ensure!(canonical(&a) == canonical(&b), "criterion 5 reports differ");
    compared += 1;

    let (o, t) = run_6(&second.join("c6"))?;
    for (seed, (ro, rt)) in SEEDS.iter().zip(o.iter().zip(&t)) {
        let po = read_json(&first.join(format!("c6/ocam_{seed}/train_report.json")))?;
        let pt = read_json(&first.join(format!("c6/triplet_{seed}/train_report.json")))?;
        ensure!(canonical(ro) == canonical(&po), "criterion 6 ocam seed {seed} differs");
        ensure!(canonical(rt) == canonical(&pt), "criterion 6 triplet seed {seed} differs");
        compared += 2;
    }

    let (report, table, direct) = run_7(&second.join("c7"))?;
    let prev = read_json(&first.join("c7/ablate/ablation_report.json"))?;
    let prev_table = fs::read_to_string(first.join("c7/ablate/ablation_table.txt")).map_err(|e| e.to_string())?;
    let prev_direct = read_json(&first.join("c7/direct_triplet/train_report.json"))?;
    ensure!(canonical(&report) == canonical(&prev), "ablation reports differ");
    ensure!(table == prev_table, "ablation tables differ");
    ensure!(canonical(&direct) == canonical(&prev_direct), "direct triplet reports differ");
    compared += 3;
    Ok(format!("{compared} reports rerun, identical apart from metadata"))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let first: PathBuf = root.path().join("first");
    let second: PathBuf = root.path().join("second");
    let criteria: Vec<(u32, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(|| criterion_5(&first.join("c5")))),
        (6, Box::new(|| criterion_6(&first.join("c6")))),
        (7, Box::new(|| criterion_7(&first.join("c7")))),
        (8, Box::new(|| criterion_8(&first, &second))),
    ];
    let mut failed = 0;
    for (n, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
