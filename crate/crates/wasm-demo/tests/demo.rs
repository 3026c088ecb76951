use cluster_expansion::config::QUARTIC_THREE_SITE;
use cluster_expansion_wasm::{expand_json, ring_decay_json, tree_counts_json};

#[test]
fn expand_bundled_config() {
    let doc = expand_json(QUARTIC_THREE_SITE).unwrap();
    let log_z = doc["logZ"][0].as_f64().unwrap();
    assert!((log_z - (-0.0914966)).abs() < 1e-5, "{log_z}");
    assert_eq!(doc["partial_sums"].as_array().unwrap().len(), 4);
    assert_eq!(doc["correlations"].as_array().unwrap().len(), 2);
}

#[test]
fn expand_rejects_bad_config() {
    assert!(expand_json("{\"lattice\": 3}").is_err());
}

#[test]
fn tree_counts_match_closed_forms() {
    let rows = tree_counts_json(6).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r["cayley"], r["trees_enumerated"]);
    }
    assert_eq!(rows[4]["bell"], 52);
}

#[test]
fn long_ring_decay_is_close_to_the_infinite_lattice_mass() {
    let doc = ring_decay_json(40, 1.0).unwrap();
    let fitted = doc["fit"]["mass"].as_f64().unwrap();
    let exact = doc["decay_mass"].as_f64().unwrap();
    assert!((fitted / exact - 1.0).abs() < 0.2, "{fitted} vs {exact}");
}
