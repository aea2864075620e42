//! Train one node's model by counting observations and read off the
//! entropies that routing advertises.

use std::collections::BTreeSet;
use std::sync::Arc;

use edgeknow::pgm::{ContextAssignment, DiscretePgm, Schema, VariableId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // one predicting variable with 4 states, two binary contexts
    let schema = Arc::new(Schema::uniform(1, 4, 2, 2)?);
    let mut pgm = DiscretePgm::new(schema);
    let travel_time = VariableId::predicting(0);
    let (rain, rush_hour) = (VariableId::context(0), VariableId::context(1));

    // outcome grows with rain and rush hour
    for r in 0..2 {
        for h in 0..2 {
            let ctx = ContextAssignment::from_pairs([(0, r), (1, h)]);
            for i in 0..40 {
                let outcome = (r + 2 * h + usize::from(i % 5 == 0)).min(3);
                pgm.observe(travel_time, &ctx, outcome)?;
            }
        }
    }

    let table = pgm.table(travel_time).expect("trained above");
    let (joint, marginals) = table.entropy_summary()?;
    println!("joint entropy H(P, rain, rush) = {joint:.4} bits");
    for (c, h) in &marginals {
        println!("marginal entropy H({c}) = {h:.4} bits");
    }
    for given in [vec![], vec![rain], vec![rush_hour], vec![rain, rush_hour]] {
        let set: BTreeSet<VariableId> = given.iter().copied().collect();
        println!(
            "remaining entropy given {:?}: {:.4} bits",
            given.iter().map(ToString::to_string).collect::<Vec<_>>(),
            table.conditional_entropy(&set)?
        );
    }

    let ctx = ContextAssignment::from_pairs([(0, 1), (1, 1)]);
    let dist = pgm.predict(travel_time, &ctx)?;
    println!("prediction for rain and rush hour: {dist:.3?}");
    println!(
        "answering entropy for that query: {:.4} bits",
        pgm.answering_entropy(travel_time, &ctx).unwrap()
    );
    Ok(())
}
