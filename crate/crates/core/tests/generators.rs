use std::collections::HashMap;

use graphret::graph::synth::{gen_longtail_motif, gen_longtail_regression, REGRESSION_BUCKET_EDGES};
use graphret::graph::{Graph, Label};
use graphret::metrics::bucket_of;

/// Histogram of Weisfeiler-Lehman colours over the graph's 2-core. Noise
/// nodes hang off the motif as trees, so peeling leaves strips them and
/// leaves the motif's cyclic part.
fn fingerprint(g: &Graph) -> HashMap<u64, f64> {
    let n = g.num_nodes();
    let adj = g.adjacency();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for v in 0..n {
            if alive[v] && degree[v] <= 1 {
                alive[v] = false;
                changed = true;
                for &u in &adj[v] {
                    degree[u] = degree[u].saturating_sub(1);
                }
            }
        }
    }
    let mut colour: Vec<u64> = (0..n)
        .map(|v| {
            let row = g.node_feat().row_slice(v);
            row.iter().position(|&x| x == 1.0).expect("one-hot node types") as u64
        })
        .collect();
    for _ in 0..2 {
        colour = (0..n)
            .map(|v| {
                let mut ns: Vec<u64> = adj[v].iter().filter(|&&u| alive[u]).map(|&u| colour[u]).collect();
                ns.sort_unstable();
                ns.iter().fold(colour[v].wrapping_mul(1_000_003), |h, &c| {
                    (h ^ c).wrapping_mul(0x0100_0000_01b3)
                })
            })
            .collect();
    }
    let mut out = HashMap::new();
    for v in (0..n).filter(|&v| alive[v]) {
        *out.entry(colour[v]).or_insert(0.0) += 1.0;
    }
    out
}

fn l1(a: &HashMap<u64, f64>, b: &HashMap<u64, f64>) -> f64 {
    let mut d: f64 = a.iter().map(|(k, v)| (v - b.get(k).unwrap_or(&0.0)).abs()).sum();
    d += b.iter().filter(|(k, _)| !a.contains_key(*k)).map(|(_, v)| v).sum::<f64>();
    d
}

#[test]
fn motif_fingerprint_nearest_neighbour_finds_the_class() {
    let ds = gen_longtail_motif(20, 200, 5, 0.25, 7).unwrap();
    let train: Vec<_> = ds.train().iter().map(|e| (fingerprint(&e.graphs[0]), e.label)).collect();
    let hits = ds
        .test()
        .iter()
        .filter(|e| {
            let f = fingerprint(&e.graphs[0]);
            let best = train
                .iter()
                .min_by(|a, b| l1(&f, &a.0).total_cmp(&l1(&f, &b.0)))
                .unwrap();
            best.1 == e.label
        })
        .count();
    let acc = hits as f64 / ds.test().len() as f64;
    assert!(acc > 0.9, "fingerprint 1-NN accuracy {acc}");
}

#[test]
fn generators_are_deterministic() {
    assert_eq!(gen_longtail_motif(6, 20, 2, 0.5, 3).unwrap(), gen_longtail_motif(6, 20, 2, 0.5, 3).unwrap());
    assert_ne!(gen_longtail_motif(6, 20, 2, 0.5, 3).unwrap(), gen_longtail_motif(6, 20, 2, 0.5, 4).unwrap());
    assert_eq!(gen_longtail_regression(5, 200).unwrap(), gen_longtail_regression(5, 200).unwrap());
}

/// Independent triangle count over all node triples.
fn oracle_target(g: &Graph) -> f64 {
    let n = g.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in g.edges() {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    let mut t = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                if adj[a][b] && adj[b][c] && adj[a][c] {
                    t += 1.0;
                }
            }
        }
    }
    0.5 * t * t + t + 0.5 * n as f64
}

#[test]
fn regression_targets_match_the_oracle() {
    let ds = gen_longtail_regression(1, 1000).unwrap();
    for (_, e) in ds.iter_by_id() {
        assert_eq!(e.label, Label::Value(oracle_target(&e.graphs[0])), "example {}", e.id);
    }
}

#[test]
fn regression_bucket_counts_strictly_decrease() {
    let ds = gen_longtail_regression(1, 1000).unwrap();
    let mut counts = [0usize; 4];
    for (_, e) in ds.iter_by_id() {
        let b = bucket_of(e.label.value().unwrap(), &REGRESSION_BUCKET_EDGES).unwrap();
        counts[b] += 1;
    }
    assert!(counts.windows(2).all(|w| w[0] > w[1]), "{counts:?}");
    assert!(counts[3] > 0);
}

#[test]
fn regression_size_is_validated() {
    assert!(gen_longtail_regression(1, 99).is_err());
    let ds = gen_longtail_regression(1, 100).unwrap();
    assert_eq!(ds.train().len() + ds.valid().len() + ds.test().len(), 100);
}
