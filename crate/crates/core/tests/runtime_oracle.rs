//! Allocator bounds lookup and pointer neutralization against plain models.

#[path = "oracles/runtime.rs"]
mod runtime;

#[test]
fn range_query_matches_table() {
    runtime::range_query_matches_table(10_000);
}

#[test]
fn query_cost_does_not_grow_with_heap() {
    let (small, _) = runtime::mean_ops(100);
    let (large, _) = runtime::mean_ops(10_000);
    assert_eq!(small, large);
}

#[test]
fn neutralization_is_complete_and_precise() {
    runtime::neutralization_is_complete_and_precise(10_000);
}
