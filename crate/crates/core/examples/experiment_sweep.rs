//! Drive a seeded sweep from code and write the same CSV artifacts as the
//! `run` command.

use edgeknow::engine::SimConfig;
use edgeknow::experiment::{cmd_run, parse_sweep, seed_aggregate, ExperimentSpec, StrategyChoice};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("edgeknow-sweep");
    let base = SimConfig { predicting_var_count: 20, cycles: 12, ..SimConfig::default() };
    let mut spec = ExperimentSpec::new(base, &out);
    spec.name = "size".into();
    spec.sweep_axis = Some(parse_sweep("nodes=64,128,256")?);
    spec.seeds = vec![1, 2];
    spec.strategies = StrategyChoice::Both;

    let outcome = cmd_run(&spec, 0)?;
    for (value, strategy, acc, seed_std, _) in seed_aggregate(&outcome.trials) {
        println!(
            "nodes={} {strategy}: {acc:.3} (across seeds {seed_std:.3})",
            value.unwrap_or_default()
        );
    }
    println!("summary written to {}", outcome.summary_path.display());
    Ok(())
}
