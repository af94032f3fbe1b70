//! Times one training step of a VisualAE on a batch of 128 rendered pairs.
//!
//! ```text
//! cargo run --release --example bench -- 16,32,64 128
//! ```
//! Arguments are the encoder channel widths and the embedding size.

use std::time::Instant;

use vforecast::nets::{describe, init_params, Loss, ModelConfig, ParamSet, VisualAeConfig};
use vforecast::raster::{RenderSpec, WindowSpec};
use vforecast::series::{make_splits, GeneratorSpec, HarmonicPrior, SplitCounts};
use vforecast::train::visual_pairs;

fn main() -> vforecast::Result<()> {
    let mut args = std::env::args().skip(1);
    let channels: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "16,32,64".into())
        .split(',')
        .map(|s| s.parse().expect("channel widths are integers"))
        .collect();
    let embedding: usize = args.next().map_or(128, |s| s.parse().expect("embedding is an integer"));

    let gen = GeneratorSpec::Harmonic(HarmonicPrior::with_len(200));
    let counts = SplitCounts {
        train: 128,
        validation: 1,
        test: 1,
    };
    let split = make_splits(&gen, counts, 1)?;
    let window = WindowSpec::for_series_len(0.75, 200)?;
    let pairs = visual_pairs(&split.train, &window, &RenderSpec::default())?;

    let cfg = ModelConfig::Visual(VisualAeConfig {
        channels,
        embedding,
        ..VisualAeConfig::default()
    });
    let arch = cfg.architecture()?;
    println!("{}", describe(&arch));
    let mut params: ParamSet<f32> = init_params(&arch, 0);
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let (x, y) = pairs.batch(&idx);

    let t = Instant::now();
    let (out, tape) = arch.forward_train(&mut params, &x)?;
    let fwd = t.elapsed();
    let (loss, grad) = Loss::ColumnJsd.value_and_grad(&out, &y)?;
    let t = Instant::now();
    arch.backward(&params, &tape, &grad)?;
    println!("forward {fwd:?}  backward {:?}  loss {loss:.4}", t.elapsed());
    Ok(())
}
