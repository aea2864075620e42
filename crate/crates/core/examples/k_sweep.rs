//! How many context combinations each routing model keeps per variable.
//! Five context variables paired up give ten combinations.

use edgeknow::engine::{Network, SimConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SimConfig {
        context_var_count: 5,
        contexts_per_table: 2,
        combinations_pool: 10,
        cycles: 20,
        seed: 1,
        ..SimConfig::default()
    };
    let mut net = Network::build(&base)?;
    println!(" K  accuracy  sets sent");
    for k in [1, 2, 3, 5, 8, 10] {
        net.config.k = k;
        let m = net.run(Strategy::Abs);
        let sent: usize = m.cycles.iter().map(|c| c.adv_sets_sent).sum();
        println!("{k:>2}  {:.3}     {sent}", m.converged_accuracy(10));
    }
    Ok(())
}
