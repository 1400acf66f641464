use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

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

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.cfg");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_maskdiff"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn toy(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&run(
        dir,
        &["make-toy-data", "--out", p(&data), "--seed", "3"],
    ));
    data
}

#[test]
fn encode_decode_round_trip_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let masks = dir.path().join("ten");
    fs::create_dir_all(&masks).unwrap();
    let mut names: Vec<PathBuf> = fs::read_dir(data.join("masks"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    for f in names.iter().take(10) {
        fs::copy(f, masks.join(f.file_name().unwrap())).unwrap();
    }
    let clouds = dir.path().join("clouds");
    let out = ok(&run(
        dir.path(),
        &["encode", p(&masks), "--out", p(&clouds)],
    ));
    assert!(out.starts_with("10 ok, 0 failed"), "{out}");
    assert_eq!(fs::read_dir(&clouds).unwrap().count(), 10);

    let decoded = dir.path().join("decoded");
    let out = ok(&run(
        dir.path(),
        &[
            "decode",
            p(&clouds),
            "--out",
            p(&decoded),
            "--reference",
            p(&masks),
        ],
    ));
    let dice: Vec<f64> = out
        .lines()
        .filter(|l| l.starts_with("dice "))
        .flat_map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            [w[3].parse::<f64>().unwrap(), w[5].parse::<f64>().unwrap()]
        })
        .collect();
    assert_eq!(dice.len(), 20);
    assert!(dice.iter().all(|&d| d >= 0.95), "{out}");

    fs::write(masks.join("corrupt.png"), b"not a png").unwrap();
    let o = run(dir.path(), &["encode", p(&masks), "--out", p(&clouds)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed corrupt"));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push((
                path.strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

fn loss_column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn train_diffusion_writes_models_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let manifest = data.join("manifests/manifest.csv");
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        ok(&run(
            dir.path(),
            &[
                "train-diffusion",
                "--manifest",
                p(&manifest),
                "--out",
                p(r),
                "--seed",
                "1",
            ],
        ));
    }
    for g in ["A", "B"] {
        assert!(runs[0].join(format!("models/group__{g}.fdnn")).exists());
        let l = loss_column(&runs[0].join(format!("losses/diffusion_{g}.csv")));
        let w = 50;
        let first = l[..w].iter().sum::<f64>() / w as f64;
        let last = l[l.len() - w..].iter().sum::<f64>() / w as f64;
        assert!(last < first, "{g}: {first} -> {last}");
    }
    assert_eq!(files(&runs[0]), files(&runs[1]));
}

fn counts(table: &str) -> Vec<(String, usize, usize)> {
    table
        .lines()
        .skip(1)
        .filter_map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            (w.len() == 3).then(|| {
                (
                    w[0].to_string(),
                    w[1].parse().unwrap(),
                    w[2].parse().unwrap(),
                )
            })
        })
        .collect()
}

#[test]
fn combine_balances_groups() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&run(dir.path(), &["make-toy-data", "--out", p(&data)]));
    let manifest = data.join("manifests/manifest.csv");
    let work = dir.path().join("work");

    let before = files(&data);
    let o = run(
        dir.path(),
        &[
            "combine",
            "--manifest",
            p(&manifest),
            "--models",
            p(&work.join("models")),
            "--control",
            p(&work.join("control.fdnn")),
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(before, files(&data));

    ok(&run(
        dir.path(),
        &[
            "train-diffusion",
            "--manifest",
            p(&manifest),
            "--out",
            p(&work),
        ],
    ));
    ok(&run(
        dir.path(),
        &[
            "train-control",
            "--manifest",
            p(&manifest),
            "--out",
            p(&work),
        ],
    ));
    let args = |target: &'static str| {
        vec![
            "combine".to_string(),
            "--manifest".into(),
            p(&manifest).into(),
            "--models".into(),
            p(&work.join("models")).into(),
            "--control".into(),
            p(&work.join("control.fdnn")).into(),
            "--target".into(),
            target.into(),
        ]
    };
    let a: Vec<String> = args("auto");
    let out = ok(&run(
        dir.path(),
        &a.iter().map(String::as_str).collect::<Vec<_>>(),
    ));
    assert_eq!(
        counts(&out),
        vec![("A".into(), 90, 90), ("B".into(), 10, 90)],
        "{out}"
    );

    let a: Vec<String> = args("50");
    let out = ok(&run(
        dir.path(),
        &a.iter().map(String::as_str).collect::<Vec<_>>(),
    ));
    assert_eq!(
        counts(&out),
        vec![("A".into(), 90, 50), ("B".into(), 10, 50)],
        "{out}"
    );
    let combined = maskdiff::data::Manifest::load(&data.join("manifests/combined.csv")).unwrap();
    let synth_b = combined
        .rows
        .iter()
        .filter(|r| {
            r.provenance == maskdiff::data::Provenance::Synthetic && r.group("group") == Some("B")
        })
        .count();
    assert_eq!(synth_b, 40);
}

#[test]
fn segmenter_training_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let manifest = data.join("manifests/manifest.csv");
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    for s in [&s1, &s2] {
        ok(&run(
            dir.path(),
            &[
                "train-seg",
                "--manifest",
                p(&manifest),
                "--out",
                p(s),
                "--seed",
                "4",
            ],
        ));
    }
    assert_eq!(
        fs::read(s1.join("segmenter.fdnn")).unwrap(),
        fs::read(s2.join("segmenter.fdnn")).unwrap()
    );
    assert!(loss_column(&s1.join("losses/segmenter.csv"))
        .iter()
        .all(|&l| l > 0.0));
    let ev = dir.path().join("eval");
    let out = ok(&run(
        dir.path(),
        &[
            "evaluate",
            "--segmenter",
            p(&s1.join("segmenter.fdnn")),
            "--manifest",
            p(&manifest),
            "--out",
            p(&ev),
        ],
    ));
    assert!(out.contains("group: Dice"), "{out}");
    let reports = fs::read_to_string(ev.join("reports.csv")).unwrap();
    assert!(reports.starts_with("attribute,group,n,dice_cup,dice_rim"));
    assert!(ev.join("group_dice.svg").exists());
}

#[test]
fn balanced_experiment_synthesizes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tiny.cfg"),
        format!("{TINY}seeds = 1\ntoy.train_a = 6\ntoy.train_b = 6\n"),
    )
    .unwrap();
    let out_dir = dir.path().join("exp");
    let out = ok(&run(
        dir.path(),
        &["fairness-experiment", "--out", p(&out_dir)],
    ));
    let cmp = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    let row: Vec<&str> = cmp.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "0", "{cmp}");
    assert_eq!(row[8], row[9], "{cmp}");
    assert!(out.contains("seeds"), "{out}");
    assert!(out_dir.join("config.txt").exists());
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), "bogus.key = 1\n").unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["make-toy-data", "--out", p(&dir.path().join("x"))]
        )
        .status
        .code(),
        Some(1)
    );
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = run(
        dir.path(),
        &[
            "train-seg",
            "--manifest",
            p(&dir.path().join("missing.csv")),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["no-such-verb"]);
    assert_eq!(o.status.code(), Some(1));
}
