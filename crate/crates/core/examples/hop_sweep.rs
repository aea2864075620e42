//! Accuracy and per-query spread as the hop budget grows.

use edgeknow::engine::{mean, HopBudget, Network, SimConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = 3;
    println!("hops  accuracy  per-query std");
    for hops in [2, 4, 6, 8] {
        let mut acc = Vec::new();
        let mut spread = Vec::new();
        for seed in 1..=seeds {
            let config = SimConfig {
                node_count: 512,
                predicting_var_count: 10,
                vars_trained_per_node: 1,
                hop_budget: HopBudget::Fixed(hops),
                cycles: 20,
                seed,
                ..SimConfig::default()
            };
            let m = Network::build(&config)?.run(Strategy::Abs);
            acc.push(m.converged_accuracy(10));
            spread.push(m.converged_query_std(10));
        }
        println!(
            "{hops:>4}  {:.3}     {:.3}",
            mean(acc.into_iter()),
            mean(spread.into_iter())
        );
    }
    Ok(())
}
