//! Writes a randomly initialized weight bundle for the default model.
//!
//! ```text
//! cargo run --release -p oeenc-core --example make_weights -- weights.bin [seed]
//! ```

use oeenc_core::io::weights::{random_weights, save_weights_file};
use oeenc_core::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("usage: make_weights <out> [seed]")?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let bundle = random_weights(&ModelConfig::default(), seed)?;
    save_weights_file(&bundle, &out)?;
    println!("wrote {} tensors to {out}", bundle.tensors().len());
    Ok(())
}
