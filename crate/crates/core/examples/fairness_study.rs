//! Single vs multi-objective training on the default biased corpus, five seeds.
//!
//! `cargo run --release -p fairseg-core --example fairness_study`
//!
//! Environment overrides: `LR`, `EPOCHS`, `BATCH`, `BIAS`, `FAIRNESS`, `SEEDS`.

use std::time::Instant;

use fairseg::datagen::{generate_dataset, split_dataset, GenConfig};
use fairseg::evaluate::{fairness_report, mean_miou};
use fairseg::homotopy::ScheduleKind;
use fairseg::trainer::{train, TrainConfig, TrainMode};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> fairseg::Result<()> {
    let records = generate_dataset(&GenConfig {
        seed: 42,
        count: 200,
        bias_contrast: env_or("BIAS", 0.5),
        ..GenConfig::default()
    })?;
    let (train_set, test_set) = split_dataset(&records, 0.8, 0)?;
    let attrs = vec!["dark_skin".to_owned()];
    let epochs = env_or("EPOCHS", 30);
    let seeds: u64 = env_or("SEEDS", 5);
    let mut wins = 0;
    for seed in 1..=seeds {
        let mut line = format!("seed {seed}:");
        let mut vars = Vec::new();
        for mode in [TrainMode::Single, TrainMode::Multi] {
            let started = Instant::now();
            let mut cfg = TrainConfig::new(mode, ScheduleKind::Linear, epochs, seed);
            cfg.adam.learning_rate = env_or("LR", cfg.adam.learning_rate);
            cfg.batch_size = env_or("BATCH", cfg.batch_size);
            cfg.fairness_variant = env_or("FAIRNESS", cfg.fairness_variant);
            let out = train(&cfg, &train_set)?;
            let report = &fairness_report(&out.params, &test_set, &attrs)?[0];
            vars.push(report.variance().unwrap_or(f64::NAN));
            line += &format!(
                "  {mode}: miou {:.4} var {:.6} (g0 {:.4} g1 {:.4}) train {:.4} [{:.1}s]",
                mean_miou(&out.params, &test_set)?,
                report.variance().unwrap_or(f64::NAN),
                report.miou_when_0.unwrap_or(f64::NAN),
                report.miou_when_1.unwrap_or(f64::NAN),
                out.log.last().unwrap().train_miou,
                started.elapsed().as_secs_f64()
            );
        }
        wins += usize::from(vars[1] < vars[0]);
        println!("{line}");
    }
    println!("multi lower variance in {wins}/{seeds} seeds");
    Ok(())
}
