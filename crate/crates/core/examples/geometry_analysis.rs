//! Prototype geometry: similarity matrices, alignment between stores and
//! nearest actions per class.

use sgear::dataio::synth::{block_graph, spectral_prototypes};
use sgear::diff::Tensor;
use sgear::semantic::{alignment_score, nearest_actions, random_prototypes, similarity_matrix};

fn main() -> sgear::Result<()> {
    let (k, d) = (12, 16);
    let language = Tensor::from_rows(&spectral_prototypes(&block_graph(k, 2, 0.9), d, 0)?)?;
    let sim = similarity_matrix(&language);
    println!("language similarity, first row: {:.2?}", sim.row(0));
    for c in [0, 6] {
        println!("nearest to class {c}: {:?}", nearest_actions(c, &language, 3)?);
    }

    let random = random_prototypes(k, d, 3);
    println!(
        "alignment of random prototypes: {:+.3}",
        alignment_score(&random, &language)?
    );
    let noisy = Tensor::from_rows(
        &language
            .rows()
            .zip(random.rows())
            .map(|(l, r)| l.iter().zip(r).map(|(a, b)| a + 0.1 * b).collect())
            .collect::<Vec<Vec<f64>>>(),
    )?;
    println!(
        "alignment of perturbed language prototypes: {:+.3}",
        alignment_score(&noisy, &language)?
    );
    Ok(())
}
