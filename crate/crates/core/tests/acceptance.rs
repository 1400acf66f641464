//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use maskdiff::codec::{
    angular_order, decode_point_cloud, encode_mask, fill_polygon, is_cup, BoundaryPointCloud,
    Ellipse, MaskImage, CUP, DISC,
};
use maskdiff::control::{make_toy_pairs, BaseNet, ControlBlock, ControlTrainConfig, ToyImage};
use maskdiff::data::{
    execute_plan, plan_equal_scale, CombineConfig, GroupAction, Manifest, ManifestRow, Provenance,
    ShapeFamily, Split, TargetPolicy,
};
use maskdiff::diffusion::{
    make_schedule, q_sample, sample, train_group_model, DenoiserConfig, GroupModel,
    GroupModelRegistry, GroupTrainConfig, SampleSpec, TrainConfig, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_STEPS,
};
use maskdiff::experiment::{run_experiment, run_seed, ExperimentConfig, KvConfig};
use maskdiff::metrics::{
    dice, essp, fid, frechet_distance, group_stats, iou, mmd, FeatureSet, MetricClass,
    Provenance as FeatureOrigin,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const TINY: &str = "\
toy.test = 2
diffusion.points = 128
diffusion.hidden = 32
diffusion.time_dim = 16
diffusion.train_steps = 300
diffusion.batch = 4
diffusion.lr = 0.002
diffusion.train_points = 64
control.pretrain_steps = 20
control.steps = 30
combine.attempts = 8
seg.epochs = 2
";

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig::from_kv(&KvConfig::parse(TINY).unwrap()).unwrap()
}

fn random_ellipse_pair(rng: &mut ChaCha8Rng, size: usize) -> MaskImage {
    let c = size as f64 / 2.0;
    let r = rng.random_range(0.22..0.38) * size as f64;
    let aspect = rng.random_range(1.0..1.3);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let disc = Ellipse {
        cx: c + rng.random_range(-3.0..3.0),
        cy: c + rng.random_range(-3.0..3.0),
        a: r * aspect,
        b: r / aspect,
        angle,
    };
    let q = rng.random_range(0.25..0.75);
    let slack = (1.0 - q) * disc.b * 0.5;
    let cup = Ellipse {
        cx: disc.cx + rng.random_range(-slack..slack) * 0.7,
        cy: disc.cy + rng.random_range(-slack..slack) * 0.7,
        a: disc.a * q,
        b: disc.b * q,
        angle: angle + rng.random_range(-0.3..0.3),
    };
    MaskImage::from_ellipses(size, size, &disc, &cup)
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let results = common::gradcheck::run_suite(100, 2024);
    let secs = t0.elapsed().as_secs_f64();
    let (worst_name, worst) =
        results.iter().copied().fold(
            ("", 0.0f64),
            |acc, (n, e)| if e > acc.1 { (n, e) } else { acc },
        );
    let failing: Vec<_> = results
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= 1e-5)
        .collect();
    check(
        failing.is_empty() && secs < 60.0,
        format!(
            "{} layers x 100 cases, worst {worst:.2e} ({worst_name}), {secs:.1}s, failing {failing:?}",
            results.len()
        ),
    )
}

fn base_snapshot(block: &ControlBlock) -> Vec<(String, Vec<u64>)> {
    block
        .params()
        .iter()
        .filter(|(_, p)| p.name.starts_with("base/"))
        .map(|(_, p)| {
            (
                p.name.clone(),
                p.value.data().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

fn control_identity() -> Outcome {
    let size = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let block = ControlBlock::from_base(BaseNet::new(size, size, &mut rng).unwrap(), &mut rng);
    let mut mismatched = 0;
    for _ in 0..50 {
        let px: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>()).collect();
        let image = ToyImage::new(size, size, px).unwrap();
        let mask = random_ellipse_pair(&mut rng, size);
        let a = block.render_image(&image, &mask).unwrap();
        let b = block.render_base(&image).unwrap();
        if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            mismatched += 1;
        }
    }

    let mut block = block;
    let before = base_snapshot(&block);
    let masks: Vec<MaskImage> = (0..8)
        .map(|_| random_ellipse_pair(&mut rng, size))
        .collect();
    let pairs = make_toy_pairs(&masks, &mut rng);
    let cfg = ControlTrainConfig {
        steps: 500,
        ..Default::default()
    };
    let losses = block.train_control(&pairs, &cfg, &mut rng).unwrap();
    let after = base_snapshot(&block);
    let trained = block
        .params()
        .by_name("z2/w")
        .is_some_and(|p| p.value.data().iter().any(|&v| v != 0.0));
    check(
        mismatched == 0 && before == after && losses.len() == 500 && trained,
        format!(
            "{mismatched}/50 fresh outputs differ from base; base unchanged after {} steps: {}; z2 trained: {trained}",
            losses.len(),
            before == after
        ),
    )
}

/// Region filled from one class of a cloud, independently of the decoder's
/// labelling.
fn class_fill(cloud: &BoundaryPointCloud, cup: bool, w: usize, h: usize) -> Vec<bool> {
    let pts: Vec<(f64, f64)> = cloud
        .denormalized()
        .iter()
        .filter(|p| is_cup(p[2]) == cup)
        .map(|p| (p[0], p[1]))
        .collect();
    fill_polygon(&angular_order(&pts), w, h)
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let size = 64;
    let (mut worst_cup, mut worst_disc) = (1.0f64, 1.0f64);
    let mut contained = 0;
    for _ in 0..100 {
        let mask = random_ellipse_pair(&mut rng, size);
        let cloud = encode_mask(&mask, 512, 0.3).map_err(|e| e.to_string())?;
        let decoded = decode_point_cloud(&cloud, size, size).map_err(|e| e.to_string())?;
        worst_cup = worst_cup.min(dice(&decoded, &mask, MetricClass::Cup).unwrap());
        worst_disc = worst_disc.min(dice(&decoded, &mask, MetricClass::Disc).unwrap());
        let disc_fill = class_fill(&cloud, false, size, size);
        let cup_fill = class_fill(&cloud, true, size, size);
        let labels_ok = decoded
            .labels()
            .iter()
            .zip(&disc_fill)
            .all(|(&l, &d)| l != CUP || d);
        let polygons_ok = cup_fill.iter().zip(&disc_fill).all(|(&c, &d)| !c || d);
        if labels_ok && polygons_ok {
            contained += 1;
        }
    }
    check(
        worst_cup >= 0.95 && worst_disc >= 0.95 && contained == 100,
        format!(
            "min Dice cup {worst_cup:.5}, disc {worst_disc:.5}; cup inside disc on {contained}/100"
        ),
    )
}

/// Clouds of one shape family.
fn family_clouds(ratio: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<BoundaryPointCloud> {
    let family = ShapeFamily::with_ratio(ratio);
    (0..count)
        .map(|_| encode_mask(&family.sample(64, rng), 512, 0.3).unwrap())
        .collect()
}

fn train_family_models() -> (Vec<GroupModel>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GroupTrainConfig {
        denoiser: DenoiserConfig::default(),
        steps: DEFAULT_STEPS,
        train: TrainConfig {
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            train_points: Some(128),
        },
        seed: 5,
        ..Default::default()
    };
    let t0 = Instant::now();
    let models = [("A", 0.3), ("B", 0.6)]
        .iter()
        .map(|&(g, ratio)| {
            let clouds = family_clouds(ratio, 50, &mut rng);
            train_group_model("group", g, &clouds, &cfg).unwrap().0
        })
        .collect();
    (models, t0.elapsed().as_secs_f64())
}

fn diffusion_marginals(models: &[GroupModel]) -> Outcome {
    let schedule = make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = family_clouds(0.45, 1, &mut rng).remove(0).flat();
    let energy: f64 = x0.iter().map(|v| v * v).sum();
    let draws = 10_000;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for t in [1, 50, DEFAULT_STEPS] {
        let ab = schedule.alpha_bar(t);
        // Mean coefficient estimated by projecting the draw mean onto x0,
        // variance pooled over all coordinates around the closed-form mean.
        let mut proj = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let eps: Vec<f64> = (0..x0.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let xt = q_sample(&x0, t, &eps, &schedule).unwrap();
            for (a, b) in xt.iter().zip(&x0) {
                proj += a * b;
                sq += (a - ab.sqrt() * b).powi(2);
            }
        }
        let n = (draws * x0.len()) as f64;
        let mean_coef = proj / (draws as f64 * energy);
        let var = sq / n;
        let mean_err = (mean_coef - ab.sqrt()).abs() / ab.sqrt();
        let var_err = (var - (1.0 - ab)).abs() / (1.0 - ab);
        worst = worst.max(mean_err).max(var_err);
        lines.push(format!("t={t} mean {mean_err:.2e} var {var_err:.2e}"));
    }

    let mut decodable = 0;
    let total = 50;
    for model in models {
        for i in 0..total / models.len() {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let spec = SampleSpec {
                max_retries: 0,
                ..SampleSpec::new(
                    model.n_points,
                    model.z0,
                    model.frames[i % model.frames.len()],
                )
            };
            let ok = sample(&model.denoiser, &model.schedule, None, &spec, &mut r)
                .ok()
                .and_then(|c| decode_point_cloud(&c, 64, 64).ok())
                .is_some_and(|m| m.count(CUP) > 0 && m.count(DISC) > 0);
            decodable += ok as usize;
        }
    }
    let rate = decodable as f64 / total as f64;
    check(
        worst <= 0.02 && rate >= 0.9,
        format!(
            "{}; single-attempt chains decodable {decodable}/{total}",
            lines.join(", ")
        ),
    )
}

fn family_separation(models: &[GroupModel], train_secs: f64) -> Outcome {
    let mut ratios: Vec<Vec<f64>> = Vec::new();
    let t0 = Instant::now();
    for (k, model) in models.iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(77 + k as u64);
        let mut vals = Vec::new();
        for _ in 0..30 {
            let Ok(s) = model.sample(&mut r) else {
                continue;
            };
            if let Some(q) = decode_point_cloud(&s.cloud, 64, 64)
                .ok()
                .and_then(|m| m.cup_disc_ratio())
            {
                vals.push(q);
            }
        }
        ratios.push(vals);
    }
    let secs = train_secs + t0.elapsed().as_secs_f64();
    let p = common::stats::mann_whitney_p(&ratios[0], &ratios[1]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    check(
        p < 0.05 && secs < 600.0,
        format!(
            "decoded ratio means A {:.3} (n={}) B {:.3} (n={}), Mann-Whitney p {p:.2e}, {secs:.0}s",
            mean(&ratios[0]),
            ratios[0].len(),
            mean(&ratios[1]),
            ratios[1].len()
        ),
    )
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureSet {
    let v = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    FeatureSet::new(v, FeatureOrigin::Real, "random").unwrap()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut identity = 0.0f64;
    for _ in 0..100 {
        let a = random_ellipse_pair(&mut rng, 48);
        let b = random_ellipse_pair(&mut rng, 48);
        for class in [MetricClass::Cup, MetricClass::Disc, MetricClass::Rim] {
            let d = dice(&a, &b, class).unwrap();
            let j = iou(&a, &b, class).unwrap();
            identity = identity.max((d - 2.0 * j / (1.0 + j)).abs());
        }
    }
    let mut self_mmd = 0.0f64;
    let mut self_cov = 1.0f64;
    let mut self_fid = 0.0f64;
    for _ in 0..20 {
        let (n, dim) = (rng.random_range(5..40), rng.random_range(2..12));
        let s = random_features(&mut rng, n, dim);
        self_mmd = self_mmd.max(mmd(&s, &s).unwrap().abs());
        self_cov = self_cov.min(maskdiff::metrics::cov(&s, &s).unwrap());
        self_fid = self_fid.max(fid(&s, &s).unwrap());
    }
    let one_d = frechet_distance(
        &DVector::from_vec(vec![0.0]),
        &DMatrix::from_vec(1, 1, vec![1.0]),
        &DVector::from_vec(vec![1.0]),
        &DMatrix::from_vec(1, 1, vec![4.0]),
    );
    let mut essp_violations = 0;
    for _ in 0..1000 {
        let groups = rng.random_range(1..6);
        let equal = rng.random_bool(0.2);
        let base = rng.random_range(0.05..1.0);
        let scores: Vec<(String, f64)> = (0..groups)
            .flat_map(|g| {
                let n = rng.random_range(1..8);
                (0..n)
                    .map(|_| {
                        (
                            format!("g{g}"),
                            if equal {
                                base
                            } else {
                                rng.random_range(0.05..1.0)
                            },
                        )
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let stats = group_stats(&scores).unwrap();
        let e = essp(stats.overall, stats.stdev);
        let ok = e <= stats.overall && ((e == stats.overall) == (stats.stdev == 0.0));
        if !ok {
            essp_violations += 1;
        }
    }
    check(
        identity <= 1e-12
            && self_mmd == 0.0
            && self_cov == 1.0
            && self_fid <= 1e-6
            && (one_d - 2.0).abs() <= 1e-9
            && essp_violations == 0,
        format!(
            "Dice-IoU gap {identity:.1e}, mmd(S,S) {self_mmd}, cov(S,S) {self_cov}, FID(S,S) {self_fid:.1e}, \
             1-D FID {one_d:.12}, ESSP violations {essp_violations}/1000"
        ),
    )
}

fn random_rows(rng: &mut ChaCha8Rng, max_size: usize) -> Vec<ManifestRow> {
    let groups = rng.random_range(2..=5);
    let mut rows = Vec::new();
    for g in 0..groups {
        for i in 0..rng.random_range(1..=max_size) {
            let id = format!("g{g}_{i:04}");
            rows.push(ManifestRow {
                image: PathBuf::from("images").join(format!("{id}.png")),
                mask: PathBuf::from("masks").join(format!("{id}.png")),
                id,
                split: Split::Train,
                provenance: Provenance::Real,
                attributes: BTreeMap::from([("site".to_string(), format!("g{g}"))]),
            });
        }
    }
    rows
}

/// Tiny diffusion model reused for every group of the execution runs.
fn tiny_model(rng: &mut ChaCha8Rng) -> GroupModel {
    let clouds: Vec<_> = family_clouds(0.45, 6, rng)
        .iter()
        .map(|c| {
            let m = decode_point_cloud(c, 64, 64).unwrap();
            encode_mask(&m, 128, 0.3).unwrap()
        })
        .collect();
    let cfg = GroupTrainConfig {
        denoiser: DenoiserConfig {
            hidden: 32,
            time_dim: 16,
            latent_dim: 0,
            encoder_hidden: 8,
        },
        steps: 20,
        train: TrainConfig {
            steps: 300,
            batch: 4,
            lr: 2e-3,
            train_points: Some(64),
        },
        ..Default::default()
    };
    train_group_model("site", "proto", &clouds, &cfg).unwrap().0
}

fn equal_scale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut plans = 0;
    let mut problems = Vec::new();
    for _ in 0..200 {
        let rows = random_rows(&mut rng, 200);
        let sizes: BTreeMap<String, usize> = rows.iter().fold(BTreeMap::new(), |mut m, r| {
            *m.entry(r.attributes["site"].clone()).or_default() += 1;
            m
        });
        let fixed = rng.random_range(1..=250);
        for policy in [TargetPolicy::Auto, TargetPolicy::Fixed(fixed)] {
            let seed = rng.random();
            let plan = plan_equal_scale(&rows, "site", policy, seed).unwrap();
            let expected = match policy {
                TargetPolicy::Auto => *sizes.values().max().unwrap(),
                TargetPolicy::Fixed(n) => n,
            };
            if plan.target != expected || plan.groups.iter().any(|g| g.total() != expected) {
                problems.push(format!("plan totals off for {policy:?}"));
            }
            if plan != plan_equal_scale(&rows, "site", policy, seed).unwrap() {
                problems.push("plan not reproducible".into());
            }
            plans += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let proto = tiny_model(&mut rng);
    let mut block_rng = ChaCha8Rng::seed_from_u64(32);
    let block = ControlBlock::from_base(
        BaseNet::new(64, 64, &mut block_rng).unwrap(),
        &mut block_rng,
    );
    let config = CombineConfig {
        max_attempts: 8,
        ..Default::default()
    };
    let mut executed = 0;
    for run in 0..4 {
        let rows = random_rows(&mut rng, 30);
        let root = dir.path().join(format!("run{run}"));
        let manifest = Manifest::new(&root, rows.clone());
        let mut registry = GroupModelRegistry::new();
        let groups: BTreeSet<&String> = rows.iter().map(|r| &r.attributes["site"]).collect();
        for g in groups {
            let mut m = proto.clone();
            m.group = g.clone();
            registry.insert(m);
        }
        for policy in [
            TargetPolicy::Auto,
            TargetPolicy::Fixed(rng.random_range(1..=40)),
        ] {
            let plan = plan_equal_scale(&rows, "site", policy, run).unwrap();
            let out = execute_plan(&manifest, &plan, &registry, &block, &config)
                .map_err(|e| e.to_string())?;
            let counts = out.group_counts("site", Split::Train);
            if counts.values().any(|&n| n != plan.target) {
                problems.push(format!("executed counts {counts:?} != {}", plan.target));
            }
            let kept: BTreeSet<&str> = plan
                .groups
                .iter()
                .flat_map(|g| match &g.action {
                    GroupAction::Subsample { keep } => keep.iter().map(String::as_str).collect(),
                    _ => Vec::new(),
                })
                .collect();
            let again = plan_equal_scale(&rows, "site", policy, run).unwrap();
            if again != plan || kept.iter().any(|id| !out.rows.iter().any(|r| r.id == *id)) {
                problems.push("subsampling not reproducible".into());
            }
            fs::remove_dir_all(&root).ok();
            executed += 1;
        }
    }
    check(
        problems.is_empty(),
        format!("{plans} randomized plans and {executed} executed plans, problems {problems:?}"),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ExperimentConfig::default();
    let t0 = Instant::now();
    let summary = run_experiment(&config, dir.path()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let n = summary.outcomes.len();
    let var = summary.variance_decreased();
    let fair = summary.fairness_increased();
    check(
        n == 5 && var >= 4 && fair >= 3 && secs < 1800.0,
        format!(
            "variance decreased {var}/{n}, fairness increased {fair}/{n}, {:.1} min",
            secs / 60.0
        ),
    )
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tiny_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_seed(&config, &a).map_err(|e| e.to_string())?;
    run_seed(&config, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let kinds = ["csv", "fdnn", "png", "fpc"]
        .iter()
        .map(|ext| {
            let n = fa
                .keys()
                .filter(|k| k.extension().is_some_and(|e| e == *ext))
                .count();
            format!("{n} .{ext}")
        })
        .collect::<Vec<_>>()
        .join(", ");
    check(
        fa.len() == fb.len() && differing.is_empty() && !fa.is_empty(),
        format!(
            "{} files compared ({kinds}), differing {differing:?}",
            fa.len()
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("PASS {name}: {d} [{secs:.1}s]");
            true
        }
        Err(d) => {
            println!("FAIL {name}: {d} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // Optional substring filters, as with the default test harness.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut passed = Vec::new();
    if selected("gradient suite") {
        passed.push(run("gradient suite", gradient_suite));
    }
    if selected("control identity") {
        passed.push(run("control identity", control_identity));
    }
    if selected("codec round trip") {
        passed.push(run("codec round trip", codec_round_trip));
    }
    let diffusion = selected("diffusion marginals") || selected("shape families separated");
    let (models, train_secs) = if diffusion {
        train_family_models()
    } else {
        (Vec::new(), 0.0)
    };
    if selected("diffusion marginals") {
        passed.push(run("diffusion marginals", || diffusion_marginals(&models)));
    }
    if selected("shape families separated") {
        passed.push(run("shape families separated", || {
            family_separation(&models, train_secs)
        }));
    }
    if selected("metric oracles") {
        passed.push(run("metric oracles", metric_oracles));
    }
    if selected("equal-scale postcondition") {
        passed.push(run("equal-scale postcondition", equal_scale));
    }
    if selected("determinism") {
        passed.push(run("determinism", determinism));
    }
    if selected("end-to-end fairness effect") {
        passed.push(run("end-to-end fairness effect", end_to_end));
    }
    let failed = passed.iter().filter(|p| !**p).count();
    println!("{} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
