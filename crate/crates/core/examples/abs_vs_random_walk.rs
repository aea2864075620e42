//! Accuracy per cycle for routing over advertised entropies versus a
//! directed random walk on the same trained network.
//!
//! Usage: `abs_vs_random_walk [nodes] [cycles]` (default 256 nodes, 20 cycles).

use edgeknow::engine::{Network, SimConfig, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let nodes = args.next().transpose()?.unwrap_or(256);
    let cycles = args.next().transpose()?.unwrap_or(20);
    let config = SimConfig { node_count: nodes, cycles, seed: 1, ..SimConfig::default() };
    let mut net = Network::build(&config)?;
    println!("{nodes} nodes, {} edges, {} hops per query", net.overlay.edge_count(), config.hops());

    let abs = net.run(Strategy::Abs);
    let walk = net.run(Strategy::RandomWalk);
    println!("cycle  ABS    walk   sets sent");
    for (a, w) in abs.cycles.iter().zip(&walk.cycles) {
        println!("{:>5}  {:.3}  {:.3}  {}", a.cycle, a.accuracy, w.accuracy, a.adv_sets_sent);
    }
    println!(
        "converged: ABS {:.3}, random walk {:.3}",
        abs.converged_accuracy(10),
        walk.converged_accuracy(10)
    );
    Ok(())
}
