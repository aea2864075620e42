//! Three nodes on a line: advertisements flow one hop per round and a query
//! issued at one end is routed to the node with the most certain model.

use std::sync::Arc;

use edgeknow::pgm::{ContextAssignment, DiscretePgm, Schema, VariableId};
use edgeknow::routing::{
    issue_query, process_query, AdvertisementPolicy, Decision, Node, NodeId, Query,
};

fn trained(schema: &Arc<Schema>, noise: usize) -> DiscretePgm {
    let mut pgm = DiscretePgm::new(schema.clone());
    for c in 0..2 {
        for i in 0..60 {
            let ctx = ContextAssignment::from_pairs([(0, c), (1, i % 2)]);
            // larger `noise` spreads the outcomes over more states
            let outcome = (c * 2 + i % (noise + 1)).min(3);
            pgm.observe(VariableId::predicting(0), &ctx, outcome).unwrap();
        }
    }
    pgm
}

fn main() {
    let schema = Arc::new(Schema::uniform(1, 4, 2, 2).unwrap());
    // n0 - n1 - n2, where n2 knows the variable best
    let mut nodes = vec![
        Node::new(NodeId(0), trained(&schema, 3), [NodeId(1)]),
        Node::new(NodeId(1), trained(&schema, 2), [NodeId(0), NodeId(2)]),
        Node::new(NodeId(2), trained(&schema, 0), [NodeId(1)]),
    ];
    let policy = AdvertisementPolicy::for_states(4);
    let k = 2;

    for round in 1..=2 {
        let ads: Vec<_> = nodes.iter().map(|n| n.advertisement(&policy, k)).collect();
        for adv in &ads {
            for nb in nodes[adv.origin.index()].neighbors.clone() {
                nodes[nb.index()]
                    .model_mut(adv.origin)
                    .unwrap()
                    .integrate(adv, k)
                    .unwrap();
            }
        }
        println!("round {round}: n1 advertises {}", ads[1].to_json());
    }

    let ctx = ContextAssignment::from_pairs([(0, 1), (1, 0)]);
    let query = Query::new(NodeId(0), VariableId::predicting(0), ctx, 2);
    let mut decision = issue_query(&nodes[0], query);
    while let Decision::Forward { to, query } = decision {
        println!("forward to {to}, best quality so far {:.3} bits", query.quality);
        decision = process_query(&nodes[to.index()], query);
    }
    let done = decision.into_query();
    let path: Vec<String> = done.visited.iter().map(ToString::to_string).collect();
    println!(
        "answered by {} with {:.3} bits along {}",
        done.answered_by.expect("some node knows the variable"),
        done.quality,
        path.join(" -> ")
    );
    println!("trace: {}", done.to_json());
}
