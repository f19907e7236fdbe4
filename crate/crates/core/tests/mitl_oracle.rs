mod support;

use coarseqest::rng::Seed;

use support::mitl_oracle::disagreements;

#[test]
fn monitor_agrees_with_lattice_scan() {
    assert_eq!(disagreements(300, Seed(11)), 0);
}
