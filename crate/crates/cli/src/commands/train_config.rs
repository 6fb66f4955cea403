use corpuslab_core::emit_training_config;
use serde_json::json;

use crate::manifest::{write_text, RunManifest};
use crate::Globals;

pub fn run(g: &Globals) -> anyhow::Result<()> {
    let config = emit_training_config();
    let text = config.to_kv_string();
    let path = g.out_dir.join("train_config.txt");
    write_text(&path, &text)?;
    let mut manifest = RunManifest::new("train-config", g.seed);
    manifest.output(&path);
    manifest.params = json!(config);
    manifest.write(&g.out_dir)?;
    print!("{text}");
    Ok(())
}
