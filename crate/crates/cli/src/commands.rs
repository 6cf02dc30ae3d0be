use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use serde_json::json;

use fairseg::datagen::{read_gen_config, split_dataset, write_dataset, GenConfig};
use fairseg::dataio::{load_checkpoint, read_dataset_dir, save_checkpoint, DatasetRecord};
use fairseg::evaluate::{fairness_report as group_reports, robustness_sweep};
use fairseg::homotopy::{schedule_table, ScheduleConfig, ScheduleKind};
use fairseg::model::gradcheck::{gradcheck as run_gradcheck, GradcheckOptions};
use fairseg::model::ModelParams;
use fairseg::trainer::{train as run_training, write_train_log, TrainConfig, TrainMode};
use fairseg::{Error, Result};

use crate::manifest::{list_files, write_atomic, write_manifest};
use crate::plot::schedule_svg;
use crate::{
    EvalArgs, FairnessArgs, GenArgs, GradcheckArgs, ScheduleArgs, SplitArgs, Subset, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const FAIRNESS_FILE: &str = "fairness.csv";
pub const SCHEDULE_CSV: &str = "schedule.csv";
pub const SCHEDULE_SVG: &str = "schedule.svg";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Reads a dataset, taking the class count from its `gen_config.json` when present.
fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let classes = read_gen_config(dir)?.map_or(fairseg::DEFAULT_NUM_CLASSES, |c| c.class_count);
    read_dataset_dir(dir, classes)
}

fn select(
    records: &[DatasetRecord],
    split: &SplitArgs,
    subset: Subset,
) -> Result<Vec<DatasetRecord>> {
    if subset == Subset::All {
        return Ok(records.to_vec());
    }
    let (train, test) = split_dataset(records, split.train_fraction, split.split_seed)?;
    Ok(if subset == Subset::Train { train } else { test })
}

fn load_model(path: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(path)?.0)
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    let cfg = GenConfig {
        count: a.count,
        size: a.size,
        seed: a.seed,
        bias_contrast: a.bias_contrast,
        bias_noise_sigma: a.bias_noise,
        ..GenConfig::default()
    };
    cfg.validate()?;
    create_dir(&a.out)?;
    write_dataset(&cfg, &a.out)?;
    let files = list_files(&a.out)?;
    write_manifest(&a.out, "gen", json!(cfg), vec![], &files)?;
    println!("wrote {} samples to {}", cfg.count, a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    if a.mode == TrainMode::Single && a.schedule.is_some() {
        eprintln!("warning: --schedule is ignored in single mode");
    }
    let kind = a.schedule.unwrap_or(ScheduleKind::Linear);
    let mut cfg = TrainConfig::new(a.mode, kind, a.epochs, a.seed);
    cfg.fairness_variant = a.fairness;
    cfg.batch_size = a.batch;
    cfg.adam.learning_rate = a.lr;
    cfg.sigma_r = a.sigma_r;
    cfg.attributes = a.attributes;
    cfg.record_timing = a.timing;

    let records = load_dataset(&a.data)?;
    cfg.num_classes = records[0].mask.num_classes();
    cfg.validate()?;
    let train_set = select(&records, &a.split, Subset::Train)?;
    let outcome = run_training(&cfg, &train_set)?;

    create_dir(&a.out)?;
    save_checkpoint(
        &outcome.params,
        &cfg.run_meta(),
        &a.out.join(CHECKPOINT_FILE),
    )?;
    write_train_log(&outcome.log, &a.out.join(TRAIN_LOG_FILE))?;
    let config = json!({
        "train": cfg,
        "train_fraction": a.split.train_fraction,
        "split_seed": a.split.split_seed,
        "train_samples": train_set.len(),
    });
    write_manifest(
        &a.out,
        "train",
        config,
        vec![display(&a.data)],
        &[CHECKPOINT_FILE.to_owned(), TRAIN_LOG_FILE.to_owned()],
    )?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs: l_total {:.6}, train mIoU {:.4}",
            cfg.epochs, last.l_total, last.train_miou
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    if let Some(s) = a.severities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::config(format!("severity {s} outside [0, 1]")));
    }
    let params = load_model(&a.checkpoint)?;
    let records = select(&load_dataset(&a.data)?, &a.split, a.subset)?;
    let rows = robustness_sweep(&params, &records, &a.kinds, &a.severities, a.seed)?;

    let mut csv = String::from("kind,severity,miou,dice,degradation\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{:?},{:?},{:?},{:?}",
            r.kind_token(),
            r.severity,
            r.miou,
            r.dice,
            r.degradation
        )
        .unwrap();
    }
    create_dir(&a.out)?;
    write_atomic(&a.out.join(REPORT_FILE), csv.as_bytes())?;
    let config = json!({
        "severities": a.severities,
        "kinds": a.kinds,
        "seed": a.seed,
        "subset": a.subset,
        "train_fraction": a.split.train_fraction,
        "split_seed": a.split.split_seed,
        "samples": records.len(),
    });
    write_manifest(
        &a.out,
        "eval",
        config,
        vec![display(&a.data), display(&a.checkpoint)],
        &[REPORT_FILE.to_owned()],
    )?;
    println!(
        "clean mIoU {:.4}; {} rows written to {}",
        rows[0].miou,
        rows.len(),
        a.out.join(REPORT_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn fairness_report(a: FairnessArgs) -> Result<ExitCode> {
    let params = load_model(&a.checkpoint)?;
    let all = load_dataset(&a.data)?;
    let available: Vec<String> = all[0].attributes.names().map(str::to_owned).collect();
    let attributes = if a.attributes.is_empty() {
        available.clone()
    } else {
        a.attributes
    };
    if let Some(bad) = attributes.iter().find(|n| !available.contains(n)) {
        return Err(Error::config(format!(
            "unknown attribute `{bad}` (available: {})",
            available.join(", ")
        )));
    }
    let records = select(&all, &a.split, a.subset)?;
    let reports = group_reports(&params, &records, &attributes)?;

    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
    let mut csv = String::from(
        "attribute,miou_when_0,miou_when_1,gap,fairness_variance,count_0,count_1,flag\n",
    );
    for r in &reports {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.attribute,
            opt(r.miou_when_0),
            opt(r.miou_when_1),
            opt(r.gap),
            opt(r.variance()),
            r.count_0,
            r.count_1,
            if r.single_group() { "single_group" } else { "" }
        )
        .unwrap();
    }
    create_dir(&a.out)?;
    write_atomic(&a.out.join(FAIRNESS_FILE), csv.as_bytes())?;
    let config = json!({
        "attributes": attributes,
        "subset": a.subset,
        "train_fraction": a.split.train_fraction,
        "split_seed": a.split.split_seed,
        "samples": records.len(),
    });
    write_manifest(
        &a.out,
        "fairness-report",
        config,
        vec![display(&a.data), display(&a.checkpoint)],
        &[FAIRNESS_FILE.to_owned()],
    )?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn schedule_plot(a: ScheduleArgs) -> Result<ExitCode> {
    let cfg = ScheduleConfig::new(a.schedule, a.epochs);
    let table = schedule_table(&cfg)?;
    let mut csv = String::from("t,alpha,beta,gamma\n");
    for (t, w) in table.iter().enumerate() {
        writeln!(csv, "{t},{:?},{:?},{:?}", w.alpha, w.beta, w.gamma).unwrap();
    }
    let title = format!("{} schedule, T = {}", a.schedule, a.epochs);
    create_dir(&a.out)?;
    write_atomic(&a.out.join(SCHEDULE_CSV), csv.as_bytes())?;
    write_atomic(
        &a.out.join(SCHEDULE_SVG),
        schedule_svg(&title, &table).as_bytes(),
    )?;
    write_manifest(
        &a.out,
        "schedule-plot",
        json!(cfg),
        vec![],
        &[SCHEDULE_CSV.to_owned(), SCHEDULE_SVG.to_owned()],
    )?;
    println!("wrote {} and {}", SCHEDULE_CSV, SCHEDULE_SVG);
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let opts = GradcheckOptions {
        seed: a.seed,
        fairness: a.fairness,
        corrupt_conv1: a.corrupt,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&opts)?;
    println!(
        "gradcheck {}: {} parameters, max relative error {:.6e} at {} (#{}; analytic {:.6e}, numeric {:.6e})",
        if report.passed { "passed" } else { "FAILED" },
        report.checked,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
