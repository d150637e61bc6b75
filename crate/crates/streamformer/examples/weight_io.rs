//! Weight file round trip: deterministic initialization, export to the
//! binary format, re-import, and the shape audit.
//!
//!     cargo run --example weight_io

use streamformer::{ModelConfig, ModelParams};

fn main() -> streamformer::Result<()> {
    let config = ModelConfig::tiny(12);
    let params = ModelParams::init(&config, 2024)?;
    params.audit_shapes()?;

    let mut tensors = 0;
    let mut scalars = 0;
    params.visit(&mut |_, t| {
        tensors += 1;
        scalars += t.len();
    });
    println!("initialized {tensors} tensors / {scalars} scalars from seed 2024");

    let dir = std::env::temp_dir().join("streamformer_weight_io");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("toy.bstw");
    params.save(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!(
        "wrote {} ({bytes} bytes: 5-byte magic, 10 u32 header fields, f32 tensors)",
        path.display()
    );

    let back = ModelParams::load(&path)?;
    back.audit_shapes()?;
    assert_eq!(params, back);
    println!("re-imported weights are bit-identical to the originals");

    // Same (config, seed) pair, same bytes; different seed, different bytes.
    let again = ModelParams::init(&config, 2024)?;
    assert_eq!(params.to_bytes(), again.to_bytes());
    let other = ModelParams::init(&config, 2025)?;
    assert_ne!(params.to_bytes(), other.to_bytes());
    println!("initialization is a pure function of (config, seed)");
    Ok(())
}
