//! Degree distribution of the similarity-weighted overlay with and without an
//! edge limit. Pass an output directory to also write the histograms.

use std::fs::File;
use std::sync::Arc;

use edgeknow::engine::{generate_workload, SimConfig};
use edgeknow::topology::{
    degree_histogram, generate, generate_unweighted, survival_fit, write_histogram_csv,
    AttachmentParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1);
    let params = AttachmentParams { m0: 5, m: 4, similarity_floor: 0.05 };
    let config = SimConfig { node_count: 600, attachment: params, seed: 1, ..SimConfig::default() };
    let schema = Arc::new(config.schema()?);
    let pgms = generate_workload(&config)?.train(&schema, config.pseudocount)?;

    let limited = generate(&params, &pgms, Some(60), 1)?;
    let plain = generate_unweighted(&params, 600, None, 1)?;
    for (name, overlay) in [("limited", &limited), ("unlimited", &plain)] {
        let hist = degree_histogram(overlay);
        let fit = survival_fit(&hist).expect("many distinct degrees");
        println!(
            "{name}: {} edges, max degree {}, {} nodes at degree 60, survival slope {:.2} (r2 {:.3})",
            overlay.edge_count(),
            overlay.max_degree(),
            hist.get(&60).copied().unwrap_or(0),
            fit.slope,
            fit.r_squared
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            write_histogram_csv(&hist, File::create(format!("{dir}/{name}_degrees.csv"))?)?;
        }
    }
    Ok(())
}
