//! Latent, image and text tokens through one shared attention block.
//!
//! `cargo run --release --example umf_block`

use flowtts::harness::{umf_demo, UmfDemoArgs};
use flowtts::umf::{attention_weights, build_sequence, encode_positions, BlockWeights, ModalityEmbedding};
use nalgebra::DMatrix;

fn main() -> flowtts::Result<()> {
    let report = umf_demo(&UmfDemoArgs::default())?;
    print!("{}", report.render());
    let zero = umf_demo(&UmfDemoArgs { zero_weights: true, ..UmfDemoArgs::default() })?;
    print!("\nzeroed output layers\n{}", zero.render());

    // How much attention latent tokens pay to each segment.
    let d = 8;
    let seq = build_sequence(
        &DMatrix::from_fn(2, d, |i, j| ((i + j) as f64).sin()),
        &DMatrix::from_fn(3, d, |i, j| ((i * j) as f64).cos()),
        &DMatrix::from_fn(4, d, |i, j| (i as f64 - j as f64) * 0.1),
    )?;
    let seq = encode_positions(&seq, &ModalityEmbedding::random(d, 1))?;
    let w = BlockWeights::random(d, 16, 2, 1)?;
    let kernels = attention_weights(&seq.tokens, &w)?;
    for (h, k) in kernels.iter().enumerate() {
        let z: f64 = k.view((0, 0), (2, 2)).sum() / 2.0;
        let img: f64 = k.view((0, 2), (2, 3)).sum() / 2.0;
        let txt: f64 = k.view((0, 5), (2, 4)).sum() / 2.0;
        println!("head {h}: latent attends latent {z:.3} image {img:.3} text {txt:.3}");
    }
    Ok(())
}
