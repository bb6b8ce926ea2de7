//! Relative representations against a random subset of a large prototype store.

use sgear::semantic::{random_prototypes, relative_repr, subset_size, PrototypeSubset};

fn main() -> sgear::Result<()> {
    let (k, d) = (4053, 16);
    let store = random_prototypes(k, d, 1);
    let x = store.row(7).to_vec();
    for ratio in [0.1, 0.25, 0.5, 1.0] {
        let subset = PrototypeSubset::sample(k, ratio, 0)?;
        let r = relative_repr(&x, &store, &subset)?;
        println!(
            "ratio {ratio:.2}: {} comparisons ({}), {:.0}% fewer than the full store",
            r.len(),
            subset_size(k, ratio),
            100.0 * (1.0 - r.len() as f64 / k as f64)
        );
    }
    Ok(())
}
