use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{
    execute_plan, make_toy_dataset, plan_equal_scale, CombinePlan, Manifest, ManifestRow,
    Provenance, Split,
};
use crate::metrics::GroupReport;

use super::pipeline::{
    evaluate, placeholder_block, stage, stage_rng, stage_seed, train_control_block, train_registry,
    train_segmenter, training_pairs, write_evaluation, write_losses,
};
use super::{ExperimentConfig, ExperimentError};

/// Paired results of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub plan: CombinePlan,
    pub real_only: GroupReport,
    pub combined: GroupReport,
}

impl SeedOutcome {
    pub fn variance_delta(&self) -> f64 {
        self.combined.dice.variance - self.real_only.dice.variance
    }

    pub fn fairness_delta(&self) -> f64 {
        self.combined.fairness - self.real_only.fairness
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentSummary {
    pub fn variance_decreased(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.variance_delta() < 0.0)
            .count()
    }

    pub fn fairness_increased(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.fairness_delta() > 0.0)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "seed,synthesized,dice_real,dice_combined,es_dice_real,es_dice_combined,es_iou_real,es_iou_combined,\
             variance_real,variance_combined,fairness_real,fairness_combined,delta_es_dice,delta_es_iou,delta_variance\n",
        );
        for o in &self.outcomes {
            let (r, c) = (&o.real_only, &o.combined);
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{:.8}",
                o.seed,
                o.plan.total_synthetic(),
                r.dice.overall,
                c.dice.overall,
                r.dice.essp,
                c.dice.essp,
                r.iou.essp,
                c.iou.essp,
                r.dice.variance,
                c.dice.variance,
                r.fairness,
                c.fairness,
                c.dice.essp - r.dice.essp,
                c.iou.essp - r.iou.essp,
                o.variance_delta(),
            );
        }
        s
    }
}

fn assert_real_test(original: &Manifest, combined: &Manifest) -> Result<(), ExperimentError> {
    let test = |m: &Manifest| -> Vec<ManifestRow> { m.split(Split::Test).cloned().collect() };
    let rows = test(combined);
    if rows.iter().any(|r| r.provenance != Provenance::Real) || rows != test(original) {
        return Err(ExperimentError::Validation(
            "combined test split differs from the real test split".into(),
        ));
    }
    Ok(())
}

/// Builds the toy dataset for `config.seed` under `dir`, then trains and
/// evaluates a real-only and an equal-scale segmenter on it.
pub fn run_seed(config: &ExperimentConfig, dir: &Path) -> Result<SeedOutcome, ExperimentError> {
    let seed = config.seed;
    let attr = &config.attribute;
    let data_dir = dir.join("data");
    let manifest = stage(
        "make-toy-data",
        make_toy_dataset(&config.toy, &data_dir, &mut stage_rng(seed, "toy")),
    )?;
    let train: Vec<ManifestRow> = manifest.split(Split::Train).cloned().collect();
    let plan = stage(
        "plan",
        plan_equal_scale(&train, attr, config.target, stage_seed(seed, "plan")),
    )?;

    let combined = if plan.total_synthetic() == 0 {
        let block = stage("combine", placeholder_block(&manifest))?;
        stage(
            "combine",
            execute_plan(
                &manifest,
                &plan,
                &Default::default(),
                &block,
                &config.combine,
            ),
        )?
    } else {
        let needed: BTreeSet<String> = plan.synthesis_groups().map(|g| g.group.clone()).collect();
        let (registry, losses) = stage(
            "train-diffusion",
            train_registry(&manifest, attr, Some(&needed), config),
        )?;
        for (g, l) in &losses {
            write_losses(&dir.join("losses").join(format!("diffusion_{g}.csv")), l)?;
        }
        let (block, losses) = stage(
            "train-control",
            train_control_block(&manifest, config, seed),
        )?;
        write_losses(&dir.join("losses").join("control.csv"), &losses)?;
        stage(
            "combine",
            execute_plan(&manifest, &plan, &registry, &block, &config.combine),
        )?
    };
    stage(
        "combine",
        combined.write(&data_dir.join("manifests").join("combined.csv")),
    )?;
    assert_real_test(&manifest, &combined)?;

    let attrs = vec![attr.clone()];
    let mut reports = Vec::new();
    for (name, m, real_only) in [
        ("real_only", &manifest, true),
        ("combined", &combined, false),
    ] {
        let pairs = stage("train-seg", training_pairs(m, real_only))?;
        // both arms share one initialization and shuffling stream
        let (seg, losses) = stage("train-seg", train_segmenter(&pairs, config, seed))?;
        write_losses(
            &dir.join("losses").join(format!("segmenter_{name}.csv")),
            &losses,
        )?;
        let mut bytes = Vec::new();
        seg.save(&mut bytes)?;
        fs::create_dir_all(dir.join("models"))?;
        fs::write(
            dir.join("models").join(format!("segmenter_{name}.fdnn")),
            bytes,
        )?;
        let eval = stage(
            "evaluate",
            evaluate(&manifest, &attrs, &|_, img| seg.predict(img)),
        )?;
        write_evaluation(&dir.join(name), &eval)?;
        reports.push(
            eval.reports
                .into_iter()
                .next()
                .ok_or_else(|| ExperimentError::Validation(format!("no test rows for {attr}")))?,
        );
    }
    let combined_report = reports.pop().expect("two arms");
    let real_report = reports.pop().expect("two arms");
    Ok(SeedOutcome {
        seed,
        plan,
        real_only: real_report,
        combined: combined_report,
    })
}

/// Runs `config.seeds` consecutive seeds starting at `config.seed`, each in
/// its own `seed_<n>` directory, and writes `comparison.csv`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), config.to_kv().to_text())?;
    let mut outcomes = Vec::new();
    for k in 0..config.seeds as u64 {
        let cfg = config.with_seed(config.seed + k);
        let dir = out.join(format!("seed_{}", cfg.seed));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        let o = run_seed(&cfg, &dir)?;
        log::info!(
            "seed {}: Dice variance {:.6} -> {:.6}, fairness {:.6} -> {:.6}",
            o.seed,
            o.real_only.dice.variance,
            o.combined.dice.variance,
            o.real_only.fairness,
            o.combined.fairness
        );
        outcomes.push(o);
    }
    let summary = ExperimentSummary { outcomes };
    fs::write(out.join("comparison.csv"), summary.to_csv())?;
    Ok(summary)
}
