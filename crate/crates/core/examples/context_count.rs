//! Accuracy as the number of context variables grows while K stays near
//! half of the combinations in play.

use edgeknow::engine::{binomial, Network, SimConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("contexts  combinations  accuracy");
    for contexts in [3, 4, 5, 6, 8, 10] {
        let pool = binomial(contexts, 2).min(25);
        let config = SimConfig {
            node_count: 256,
            context_var_count: contexts,
            contexts_per_table: 2,
            combinations_pool: pool,
            k: 12,
            cycles: 20,
            seed: 1,
            ..SimConfig::default()
        };
        let m = Network::build(&config)?.run(Strategy::Abs);
        println!("{contexts:>8}  {pool:>12}  {:.3}", m.converged_accuracy(10));
    }
    Ok(())
}
