//! A single predicting variable trained under more and more distinct
//! combinations of five out of ten binary contexts, with K fixed at 10.

use edgeknow::engine::{HopBudget, Network, SimConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("combinations  ABS    walk");
    for pool in [10, 25, 50, 100, 252] {
        let config = SimConfig {
            node_count: 512,
            predicting_var_count: 1,
            vars_trained_per_node: 1,
            context_var_count: 10,
            contexts_per_table: 5,
            context_states: 2,
            combinations_pool: pool,
            k: 10,
            hop_budget: HopBudget::Fixed(3),
            cycles: 20,
            seed: 1,
            ..SimConfig::default()
        };
        let mut net = Network::build(&config)?;
        let abs = net.run(Strategy::Abs);
        let walk = net.run(Strategy::RandomWalk);
        println!(
            "{pool:>12}  {:.3}  {:.3}",
            abs.converged_accuracy(10),
            walk.converged_accuracy(10)
        );
    }
    Ok(())
}
