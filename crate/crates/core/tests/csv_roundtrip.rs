//! Grade CSVs round-trip through write → load.

use std::collections::BTreeSet;

use gradevae::bigraph::{load_csv, BipartiteGraph, Edge};
use proptest::prelude::*;

fn triples(g: &BipartiteGraph) -> BTreeSet<(String, String, u8)> {
    g.edges()
        .iter()
        .map(|e| {
            (
                g.students()[e.student].clone(),
                g.courses()[e.course].clone(),
                e.level,
            )
        })
        .collect()
}

fn arb_graph() -> impl Strategy<Value = BipartiteGraph> {
    // Ids may contain commas, quotes and spaces inside; the CSV layer must
    // quote them. Leading/trailing blanks are trimmed on load, so avoid them.
    let id = "[a-z0-9][a-z0-9 ,\"_-]{0,6}[a-z0-9]";
    (
        prop::collection::btree_set(id, 1..8),
        prop::collection::btree_set(id, 1..6),
    )
        .prop_flat_map(|(s, c)| {
            let (s, c): (Vec<String>, Vec<String>) = (s.into_iter().collect(), c.into_iter().collect());
            let cells = s.len() * c.len();
            (
                Just(s),
                Just(c),
                prop::collection::vec(prop::option::weighted(0.6, 1u8..=10), cells),
            )
        })
        .prop_filter_map("at least one grade", |(s, c, cells)| {
            let n = c.len();
            let edges: Vec<Edge> = cells
                .iter()
                .enumerate()
                .filter_map(|(k, l)| {
                    l.map(|level| Edge {
                        student: k / n,
                        course: k % n,
                        level,
                    })
                })
                .collect();
            if edges.is_empty() {
                return None;
            }
            BipartiteGraph::new(s, c, edges).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_keeps_every_grade(g in arb_graph()) {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        g.write_csv(&a).unwrap();
        let loaded = load_csv(&a).unwrap();
        prop_assert_eq!(triples(&loaded), triples(&g));

        // A second pass is a fixed point byte for byte.
        let b = dir.path().join("b.csv");
        loaded.write_csv(&b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
