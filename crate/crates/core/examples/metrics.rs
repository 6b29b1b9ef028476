//! Retrieval metrics on a hand-built distance matrix.

use ndarray::{arr2, Array2};
use xgait::eval::{compute_metrics, DistanceMatrix};

fn main() -> anyhow::Result<()> {
    let labels = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    // Query "a" finds its two matches at ranks 1 and 3.
    let d = DistanceMatrix {
        values: arr2(&[[0.1, 0.2, 0.3, 0.4, 0.5], [0.9, 0.1, 0.8, 0.7, 0.2]]),
        query_ids: labels(&["q0", "q1"]),
        gallery_ids: labels(&["g0", "g1", "g2", "g3", "g4"]),
        excluded: Array2::from_elem((2, 5), false),
    };
    let q = labels(&["a", "d"]);
    let g = labels(&["a", "b", "a", "c", "d"]);
    let r = compute_metrics(&d, &q, &g, "hand")?;
    for (i, id) in r.query_ids.iter().enumerate() {
        println!("{id}: first hit {} AP {:.4} INP {:.4}", r.first_hit[i], r.ap[i], r.inp[i]);
    }
    println!("rank1 {:.3} rank5 {:.3} mAP {:.4} mINP {:.4}", r.rank1, r.rank5, r.map, r.minp);
    Ok(())
}
