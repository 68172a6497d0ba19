//! Regenerates `data/ieee14_surrogate.json`.
//!
//! ```text
//! cargo run -p dse-core --example write_surrogate
//! ```

use std::path::Path;

use dse_core::model::ieee14_surrogate;

fn main() -> dse_core::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ieee14_surrogate.json");
    ieee14_surrogate().save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
