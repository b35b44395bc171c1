//! Oracle checks for graph extraction, centrality, event replay, attention,
//! preprocessing hygiene and the test statistics.

#[path = "support/properties.rs"]
mod properties;

fn pass(check: properties::Check) {
    if let Err(e) = check {
        panic!("{e}");
    }
}

#[test]
fn gedd_soundness() {
    pass(properties::gedd_soundness());
}

#[test]
fn centrality_matches_dense_eigendecomposition() {
    pass(properties::centrality_oracle());
}

#[test]
fn graphs_match_event_replay() {
    pass(properties::graph_replay());
}

#[test]
fn attention_rows_and_locality() {
    pass(properties::attention_and_locality());
}

#[test]
fn pipeline_hygiene() {
    pass(properties::pipeline_hygiene());
}

#[test]
fn statistics_match_permutation_oracles() {
    pass(properties::statistics_oracle());
}
