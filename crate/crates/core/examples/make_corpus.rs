//! Writes the built-in synthetic corpus as PNG files.
//!
//! cargo run -p hyperrestore --example make_corpus -- [out_dir] [size]

use std::path::PathBuf;

use hyperrestore::datasets::{save_png, synthetic_corpus};

fn main() -> hyperrestore::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "crates/core/data/corpus".into()));
    let size = args.next().map_or(96, |s| s.parse().expect("size must be an integer"));
    std::fs::create_dir_all(&dir).map_err(|e| hyperrestore::Error::Io { path: dir.clone(), source: e })?;
    for r in synthetic_corpus(size)? {
        let path = dir.join(format!("{}.png", r.id));
        save_png(&path, &r.pixels)?;
        println!("{}", path.display());
    }
    Ok(())
}
