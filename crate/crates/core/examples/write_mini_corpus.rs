//! Regenerates the bundled mini dataset: `cargo run -p ecgrag-core --example write_mini_corpus -- data/ptbxl-mini`.

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/ptbxl-mini".into());
    ecgrag_core::minicorpus::write_mini_corpus(std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
