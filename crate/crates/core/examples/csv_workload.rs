//! Export a synthetic workload as observation CSV, read it back and route
//! over models trained from the file.

use std::sync::Arc;

use edgeknow::engine::{
    generate_workload, ingest_csv, train_streams, write_observations_csv, Network, SimConfig,
    Strategy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SimConfig {
        node_count: 64,
        predicting_var_count: 20,
        vars_trained_per_node: 4,
        observations_per_var: 200,
        cycles: 10,
        ..SimConfig::default()
    };
    let dir = tempfile_dir()?;
    let path = dir.join("observations.csv");
    let streams = generate_workload(&config)?.streams()?;
    write_observations_csv(&streams, std::fs::File::create(&path)?)?;
    println!(
        "wrote {} observations to {}",
        streams.iter().map(Vec::len).sum::<usize>(),
        path.display()
    );

    let read = ingest_csv(&path)?;
    let schema = Arc::new(config.schema()?);
    let pgms = train_streams(&schema, &read, config.pseudocount)?;
    let mut net = Network::from_models(&config, pgms)?;
    let m = net.run(Strategy::Abs);
    println!("accuracy from the CSV-trained network: {:.3}", m.converged_accuracy(5));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("edgeknow-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
