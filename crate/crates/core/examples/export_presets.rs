//! Writes the built-in scenes as JSON documents: `export_presets <dir>`.

use mimo_scatter::report::write_json;
use mimo_scatter::scene::presets;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes".into()));
    std::fs::create_dir_all(&dir)?;
    let desk = presets::desk();
    let empty = desk.without_scatterers()?;
    for (name, scene) in [("desk", desk), ("single_link", presets::single_link()), ("empty", empty)] {
        let path = dir.join(format!("{name}.json"));
        write_json(&path, &scene.to_doc())?;
        println!("{}", path.display());
    }
    Ok(())
}
