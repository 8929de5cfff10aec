//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 9 needs a KITTI odometry sequence: set `NDTMC_KITTI_SEQ` to a
//! directory holding `velodyne/*.bin` and `poses.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Vector3};
use ndtmc::bench::{synthetic_database, time_each, TimingStats};
use ndtmc::cloud_io::{load_kitti_poses, load_kitti_scan, Point3, PointCloud};
use ndtmc::descriptor::{extract_from_cloud, Descriptor, PartitionParams, Signature};
use ndtmc::evaluation::{
    extended_precision, f1_max, ground_truth, pr_curve, threshold_sweep, GroundTruth, GroundTruthConfig, PrCurve,
    PrRow, QueryOutcome,
};
use ndtmc::kdtree::KdTree;
use ndtmc::matcher::{best_alignment, column_shift_distance, DescriptorDatabase, QueryParams};
use ndtmc::ndt::{build_grid, gaussian_entropy, NdtCell, ShapeCategory, ShapeParams, VoxelKey};
use ndtmc::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const RESOLUTION: f64 = 2.0;
/// Points in a KITTI HDL-64 scan, roughly.
const KITTI_POINTS: usize = 120_000;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: Some(pass),
        detail: detail.into(),
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: None,
        detail: detail.into(),
    }
}

/// 1. One-pass statistics against a two-pass oracle.
fn one_pass_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = ShapeParams::default();
    let mut worst: f64 = 0.0;
    let mut cells = 0usize;
    for _ in 0..100 {
        let n = 10f64.powf(rng.random_range(1.0..5.0)).round() as usize;
        let center = Vector3::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-5.0..5.0),
        );
        let spread = rng.random_range(0.5..20.0);
        let points: Vec<Point3> = (0..n)
            .map(|_| center + Vector3::from_fn(|_, _| rng.random_range(-spread..spread)))
            .collect();
        let grid = build_grid(&PointCloud::new(points.clone()), RESOLUTION, &shape).unwrap();
        let mut groups: BTreeMap<VoxelKey, Vec<Point3>> = BTreeMap::new();
        for p in &points {
            groups.entry(VoxelKey::of(p, RESOLUTION)).or_default().push(*p);
        }
        for cell in &grid.cells {
            let pts = &groups[&cell.key];
            let m = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let cov = pts.iter().map(|p| (p - m) * (p - m).transpose()).sum::<Matrix3<f64>>() / pts.len() as f64;
            let mean_err = (cell.mean - m).abs().max() / m.abs().max().max(1e-300);
            let cov_err = (cell.covariance - cov).abs().max() / cov.abs().max().max(1e-300);
            worst = worst.max(mean_err).max(cov_err);
            cells += 1;
        }
    }
    pass_if(worst <= 1e-9 && cells > 0, format!("{cells} cells, worst relative error {worst:.2e} (≤ 1e-9)"))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    Rotation3::from_scaled_axis(axis.normalize() * angle).into_inner()
}

/// 2. Shape category recovery from sampled Gaussians.
fn shape_classification() -> Outcome {
    // One eigenvalue profile per category, each well inside its g interval.
    let profiles = [
        (ShapeCategory::Plane, [1.0f64, 1.0, 0.01]),
        (ShapeCategory::Ellipsoid, [4.0, 2.0, 0.5]),
        (ShapeCategory::Sphere, [1.0, 1.0, 1.0]),
        (ShapeCategory::Line, [16.0, 1.0, 0.25]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = ShapeParams::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for (category, eig) in profiles {
        let trials = 1000;
        let mut hits = 0;
        for _ in 0..trials {
            let r = random_rotation(&mut rng);
            let scale = Vector3::new(eig[0].sqrt(), eig[1].sqrt(), eig[2].sqrt());
            let mut pts = Vec::with_capacity(500);
            for _ in 0..500 {
                let z = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
                pts.push(r * z.component_mul(&scale));
            }
            let m = pts.iter().sum::<Vector3<f64>>() / 500.0;
            let cov = pts.iter().map(|p| (p - m) * (p - m).transpose()).sum::<Matrix3<f64>>() / 500.0;
            let cell = NdtCell::from_gaussian(VoxelKey::new(0, 0, 0), 500, m, cov, &shape).unwrap().unwrap();
            hits += usize::from(cell.category() == category);
        }
        let rate = hits as f64 / trials as f64;
        ok &= rate >= 0.95;
        lines.push(format!("{category:?} {:.1}%", 100.0 * rate));
    }
    pass_if(ok, format!("{} (each ≥ 95%)", lines.join(", ")))
}

/// 3. Entropy value and scaling law.
fn entropy() -> Outcome {
    let e = gaussian_entropy(&[1.0, 1.0, 1.0]);
    let value_ok = (e - 4.256816).abs() <= 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let eig = [rng.random_range(1.0..5.0), rng.random_range(0.1..1.0), rng.random_range(0.01..0.1)];
        let c: f64 = rng.random_range(0.01..100.0);
        let scaled = eig.map(|v| v * c);
        worst = worst.max((gaussian_entropy(&scaled) - gaussian_entropy(&eig) - 1.5 * c.ln()).abs());
    }
    pass_if(
        value_ok && worst <= 1e-9,
        format!("E(I) = {e:.7} (4.256816 ± 1e-6), scaling error {worst:.2e} (≤ 1e-9)"),
    )
}

/// 4. Scene rotation by whole sectors is recovered as a column shift.
fn rotation_invariance() -> Outcome {
    let params = PartitionParams::kitti();
    let shape = ShapeParams::default();
    let sectors = params.sectors;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut shift_ok, mut worst_exact) = (0, 0.0f64);
    let mut distances = Vec::new();
    for i in 0..50 {
        let cloud = synth::dense_frame(&mut synth::rng(4000 + i), KITTI_POINTS);
        let k = rng.random_range(0..sectors);
        let yaw = k as f64 * std::f64::consts::TAU / sectors as f64;
        let base = extract_from_cloud(&cloud, RESOLUTION, &params, &shape).unwrap();
        let rotated = extract_from_cloud(&synth::rotate_yaw(&cloud, yaw), RESOLUTION, &params, &shape).unwrap();
        let a = best_alignment(&rotated.descriptor, &base.descriptor, None).unwrap();
        shift_ok += usize::from(a.shift == k);
        distances.push(a.distance);
        let exact = best_alignment(&base.descriptor, &base.descriptor.shifted(k), None).unwrap();
        if exact.shift != k {
            worst_exact = f64::INFINITY;
        }
        worst_exact = worst_exact.max(exact.distance);
    }
    distances.sort_by(f64::total_cmp);
    let worst_gs = distances[distances.len() - 1];
    let median_gs = distances[distances.len() / 2];
    pass_if(
        shift_ok == 50 && worst_gs <= 0.05 && worst_exact <= 1e-9,
        format!(
            "shift recovered {shift_ok}/50, g_s worst {worst_gs:.4} median {median_gs:.4} (all ≤ 0.05), \
             exact-shift worst {worst_exact:.1e} (≤ 1e-9)"
        ),
    )
}

/// 5. kd-tree against a linear scan.
fn retrieval_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..600);
        let coarse = rng.random_bool(0.3);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..8)
                .map(|_| if coarse { rng.random_range(0..3) as f64 / 2.0 } else { rng.random::<f64>() })
                .collect()
        };
        let db: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
        let q = draw(&mut rng);
        let tree = KdTree::build(&db).unwrap();
        let got: Vec<usize> = tree.nearest(&q, 10).iter().map(|x| x.index).collect();
        let mut all: Vec<(f64, usize)> = db
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all.iter().take(10).map(|x| x.1).collect();
        mismatches += usize::from(got != want);
    }
    pass_if(mismatches == 0, format!("{mismatches} mismatches in 1000 trials"))
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let data = (0..40 * 60)
        .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(-10.0..60.0) })
        .collect();
    Descriptor::from_row_major(20, 60, data).unwrap()
}

/// Scalar-loop correlation distance.
fn distance_oracle(q: &Descriptor, c: &Descriptor, k: usize) -> f64 {
    let (rows, n) = (q.rows(), q.cols());
    let mut qm = 0.0;
    let mut cm = 0.0;
    for r in 0..rows {
        for i in 0..n {
            qm += q.get(r, i);
            cm += c.get(r, i);
        }
    }
    qm /= (rows * n) as f64;
    cm /= (rows * n) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let (mut dot, mut nq, mut nc) = (0.0, 0.0, 0.0);
        for r in 0..rows {
            let a = q.get(r, (i + k) % n) - qm;
            let b = c.get(r, i) - cm;
            dot += a * b;
            nq += a * a;
            nc += b * b;
        }
        if nq > 0.0 && nc > 0.0 {
            total += dot / (nq * nc).sqrt();
        }
    }
    1.0 - total / n as f64
}

/// 6. Correlation distance against the oracle.
fn correlation_distance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut out_of_range) = (0.0f64, 0);
    for _ in 0..1000 {
        let (a, b) = (random_descriptor(&mut rng), random_descriptor(&mut rng));
        let k = rng.random_range(0..60);
        let d = column_shift_distance(&a, &b, k).unwrap();
        worst = worst.max((d - distance_oracle(&a, &b, k)).abs());
        out_of_range += usize::from(!(0.0..=2.0).contains(&d));
    }
    pass_if(
        worst <= 1e-12 && out_of_range == 0,
        format!("worst |Δ| {worst:.2e} (≤ 1e-12), {out_of_range} out of [0, 2]"),
    )
}

/// 7. Hand-counted PR fixture and the EP formula.
fn evaluation_metrics() -> Outcome {
    // Queries 0..14 have positive 100+i; 14..20 have none. Wrong matches
    // point at 200+i.
    let spec: [(bool, Option<f64>); 20] = [
        (true, Some(0.05)),
        (true, Some(0.12)),
        (true, Some(0.15)),
        (false, Some(0.18)),
        (true, Some(0.22)),
        (true, Some(0.25)),
        (false, Some(0.28)),
        (true, Some(0.33)),
        (false, Some(0.38)),
        (true, Some(0.45)),
        (true, Some(0.55)),
        (false, Some(0.62)),
        (true, None),
        (true, Some(0.75)),
        (false, Some(0.08)),
        (false, Some(0.35)),
        (false, Some(0.48)),
        (false, Some(0.65)),
        (false, None),
        (false, Some(0.9)),
    ];
    let mut gt = GroundTruth::new(0..20, (100..120).chain(200..220));
    for q in 0..14 {
        gt.insert(q, 100 + q);
    }
    let outcomes: Vec<QueryOutcome> = spec
        .iter()
        .enumerate()
        .map(|(i, &(correct, d))| QueryOutcome {
            query_id: i as u64,
            best: d.map(|d| (if correct { 100 } else { 200 } + i as u64, d)),
        })
        .collect();
    let taus = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    let hand = [(1, 1, 13), (3, 2, 10), (5, 3, 7), (6, 5, 5), (7, 6, 4), (8, 6, 3), (8, 8, 2), (9, 8, 1)];
    let curve = pr_curve(&outcomes, &gt, &taus).unwrap();
    let rows_ok = curve.rows.len() == hand.len()
        && curve.rows.iter().zip(&hand).all(|(r, &(tp, fp, fn_))| {
            (r.tp, r.fp, r.fn_) == (tp, fp, fn_)
                && r.precision == tp as f64 / (tp + fp) as f64
                && r.recall == tp as f64 / (tp + fn_) as f64
        });
    let row = |precision, recall| PrRow {
        threshold: 0.0,
        precision,
        recall,
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    let constructed = PrCurve {
        rows: vec![row(1.0, 0.2), row(1.0, 0.6), row(0.75, 0.9)],
        queries: 0,
    };
    let ep = extended_precision(&constructed).unwrap_or(f64::NAN);
    pass_if(
        rows_ok && (ep - 0.8).abs() <= 1e-12,
        format!("8/8 knots {}, EP = {ep} (0.8)", if rows_ok { "match" } else { "DIFFER" }),
    )
}

/// 8. Self-retrieval of 200 places under re-observation noise.
fn discrimination() -> Outcome {
    let params = PartitionParams::kitti();
    let shape = ShapeParams::default();
    let n = 200u64;
    let scenes: Vec<PointCloud> = (0..n)
        .map(|i| synth::dense_frame(&mut synth::rng(80_000 + i), KITTI_POINTS))
        .collect();
    let mut db = DescriptorDatabase::new();
    let mut queries = Vec::new();
    for (i, cloud) in scenes.iter().enumerate() {
        let i = i as u64;
        db.push(extract_from_cloud(cloud, RESOLUTION, &params, &shape).unwrap().with_frame_id(i), None)
            .unwrap();
        let noisy = synth::reobserve(cloud, 0.05, 0.3, &mut synth::rng(100_000 + i));
        queries.push(extract_from_cloud(&noisy, RESOLUTION, &params, &shape).unwrap().with_frame_id(i));
    }
    db.build_index().unwrap();
    let mut gt = GroundTruth::new(0..n, 0..n);
    for i in 0..n {
        gt.insert(i, i);
    }
    let best_row = |params: &QueryParams| -> Option<PrRow> {
        let outcomes: Vec<QueryOutcome> = db
            .query_batch(&queries, params)
            .into_iter()
            .zip(&queries)
            .map(|(r, q)| QueryOutcome {
                query_id: q.frame_id(),
                best: r.unwrap().map(|m| (m.candidate_id, m.distance)),
            })
            .collect();
        let curve = pr_curve(&outcomes, &gt, &threshold_sweep(&outcomes)).unwrap();
        curve
            .rows
            .iter()
            .filter(|r| r.f1().is_some())
            .reduce(|a, b| if b.f1() > a.f1() { b } else { a })
            .copied()
    };
    // Default pipeline decides the criterion. Scoring every entry shows
    // how much of the loss comes from the geometric-key shortlist.
    let default = best_row(&QueryParams::default());
    let exhaustive = best_row(&QueryParams {
        candidates: n as usize,
        window_half_width: None,
        ..QueryParams::default()
    });
    let recall = |r: Option<PrRow>| r.map_or(0.0, |r| r.recall);
    match default {
        Some(r) => pass_if(
            r.recall >= 0.95,
            format!(
                "recall {:.3} at F1-optimal τ = {:.4} (F1 {:.3}), needs ≥ 0.95; \
                 scoring all {n} entries instead of K = 10 gives recall {:.3}",
                r.recall,
                r.threshold,
                r.f1().unwrap(),
                recall(exhaustive)
            ),
        ),
        None => pass_if(false, "no usable PR row"),
    }
}

fn kitti_scans(dir: &Path) -> Vec<PathBuf> {
    let mut scans: Vec<PathBuf> = std::fs::read_dir(dir.join("velodyne"))
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    scans.retain(|p| p.extension().is_some_and(|e| e == "bin"));
    scans.sort();
    scans
}

/// 9. KITTI sequence reproduction (optional).
fn kitti_reproduction() -> Outcome {
    let Some(dir) = std::env::var_os("NDTMC_KITTI_SEQ").map(PathBuf::from) else {
        return skip("set NDTMC_KITTI_SEQ to a sequence directory to run");
    };
    let start = Instant::now();
    let scans = kitti_scans(&dir);
    let poses = match load_kitti_poses(dir.join("poses.txt")) {
        Ok(p) => p,
        Err(e) => return pass_if(false, format!("cannot read poses: {e}")),
    };
    if scans.is_empty() || scans.len() != poses.len() {
        return pass_if(false, format!("{} scans vs {} poses", scans.len(), poses.len()));
    }
    let params = PartitionParams::kitti();
    let shape = ShapeParams::default();
    let mut signatures = Vec::with_capacity(scans.len());
    for (i, path) in scans.iter().enumerate() {
        let cloud = match load_kitti_scan(path) {
            Ok(c) => c,
            Err(e) => return pass_if(false, format!("{}: {e}", path.display())),
        };
        signatures.push(extract_from_cloud(&cloud, RESOLUTION, &params, &shape).unwrap().with_frame_id(i as u64));
    }
    let gt_cfg = GroundTruthConfig {
        past_only: true,
        ..GroundTruthConfig::kitti()
    };
    let query = QueryParams {
        exclusion_gap: gt_cfg.exclusion_gap as u64,
        past_only: true,
        ..QueryParams::default()
    };
    let mut db = DescriptorDatabase::new();
    let mut outcomes = Vec::new();
    for (i, sig) in signatures.iter().enumerate() {
        let best = if db.is_empty() {
            None
        } else {
            db.build_index().unwrap();
            db.query(sig, &query).unwrap().map(|m| (m.candidate_id, m.distance))
        };
        outcomes.push(QueryOutcome {
            query_id: i as u64,
            best,
        });
        db.push(sig.clone(), Some(poses[i].clone())).unwrap();
    }
    let gt = ground_truth(&poses, &gt_cfg).unwrap();
    let curve = pr_curve(&outcomes, &gt, &threshold_sweep(&outcomes)).unwrap();
    let f1 = f1_max(&curve).unwrap_or(0.0);
    let ep = extended_precision(&curve);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    pass_if(
        f1 >= 0.90 && ep.is_some_and(|e| e >= 0.88) && minutes < 10.0,
        format!("F1 {f1:.3} (≥ 0.90), EP {ep:?} (≥ 0.88), {minutes:.1} min (< 10)"),
    )
}

/// 10. Runtime of extraction and query.
fn runtime() -> Outcome {
    let params = PartitionParams::kitti();
    let shape = ShapeParams::default();
    let frames: Vec<PointCloud> = (0..20).map(|i| synth::dense_frame(&mut synth::rng(10_000 + i), KITTI_POINTS)).collect();
    let mean_points = frames.iter().map(PointCloud::len).sum::<usize>() / frames.len();
    // Warm-up.
    extract_from_cloud(&frames[0], RESOLUTION, &params, &shape).unwrap();
    let (sigs, times) = time_each(&frames, |c| extract_from_cloud(c, RESOLUTION, &params, &shape).unwrap());
    let extraction = TimingStats::from_durations(&times).unwrap();

    // A 4000-entry database from perturbed copies of a pool of real
    // signatures keeps retrieval realistic without extracting 4000 frames.
    let pool: Vec<Signature> = (0..100)
        .map(|i| {
            let cloud = synth::SceneSpec::random(&mut synth::rng(20_000 + i)).sample(&mut synth::rng(30_000 + i));
            extract_from_cloud(&cloud, RESOLUTION, &params, &shape).unwrap()
        })
        .collect();
    let db = synthetic_database(&pool, 4000, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let qp = QueryParams::default();
    db.query(&sigs[0], &qp).unwrap();
    let queries: Vec<Signature> = sigs.iter().chain(&pool).cloned().collect();
    let (_, qtimes) = time_each(&queries, |q| db.query(q, &qp).unwrap());
    let query = TimingStats::from_durations(&qtimes).unwrap();
    pass_if(
        extraction.mean_ms <= 5.0 && query.mean_ms <= 2.0,
        format!(
            "extraction mean {:.3} ms over {} frames of ~{}k points (≤ 5), query mean {:.3} ms on 4000 entries (≤ 2)",
            extraction.mean_ms,
            extraction.samples,
            mean_points / 1000,
            query.mean_ms
        ),
    )
}

/// 11. Serialized grid size versus the raw float32 cloud.
fn storage_ratio() -> Outcome {
    let cloud = synth::dense_frame(&mut synth::rng(11), 1_010_000);
    let grid = build_grid(&cloud, RESOLUTION, &ShapeParams::default()).unwrap();
    let raw = cloud.len() * 3 * std::mem::size_of::<f32>();
    let stored = grid.to_bytes().len();
    let ratio = stored as f64 / raw as f64;
    pass_if(
        cloud.len() >= 1_000_000 && ratio <= 0.05,
        format!(
            "{} points → {} cells, {stored} B vs {raw} B raw xyz = {:.2}% (≤ 5%)",
            cloud.len(),
            grid.len(),
            100.0 * ratio
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    // libtest passes flags such as `--nocapture`; none apply here, but a
    // filter argument selects criteria by number.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 11] = [
        ("one-pass statistics", one_pass_statistics),
        ("shape classification", shape_classification),
        ("entropy", entropy),
        ("rotation invariance", rotation_invariance),
        ("retrieval exactness", retrieval_exactness),
        ("correlation distance", correlation_distance),
        ("evaluation metrics", evaluation_metrics),
        ("discrimination", discrimination),
        ("KITTI reproduction", kitti_reproduction),
        ("runtime", runtime),
        ("storage ratio", storage_ratio),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let status = match outcome.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!(
            "[{status}] {n:>2}. {name}: {} ({:.1} s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
