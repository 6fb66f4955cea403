use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use corpuslab_core::{linear_merge, MergeRecipe, TensorStore};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::Globals;

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Output TSTOR1 file.
    #[arg(long)]
    out: PathBuf,
    /// `PATH:WEIGHT`, repeated. Omit every weight for an equal-weight merge.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// Rescale weights to sum to 1.
    #[arg(long)]
    normalize: bool,
}

fn parse_input(raw: &str) -> (PathBuf, Option<&str>) {
    match raw.rsplit_once(':') {
        Some((path, weight)) if !path.is_empty() && weight.parse::<f64>().is_ok() => {
            (PathBuf::from(path), Some(weight))
        }
        _ => (PathBuf::from(raw), None),
    }
}

pub fn run(g: &Globals, args: MergeArgs) -> anyhow::Result<()> {
    let parsed: Vec<(PathBuf, Option<&str>)> = args.inputs.iter().map(|s| parse_input(s)).collect();
    let weighted = parsed.iter().filter(|(_, w)| w.is_some()).count();
    let recipe = if weighted == 0 {
        MergeRecipe::equal(parsed.len())
    } else if weighted == parsed.len() {
        let weights = parsed
            .iter()
            .map(|(_, w)| w.unwrap().parse::<f64>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()?;
        MergeRecipe::new(weights, args.normalize)
    } else {
        bail!("give a weight for every --input or for none");
    };

    let mut manifest = RunManifest::new("merge", g.seed);
    let mut stores = Vec::with_capacity(parsed.len());
    for (path, _) in &parsed {
        manifest.input(path);
        stores.push(TensorStore::read_file(path)?);
    }
    let merged = linear_merge(&stores, &recipe).context("merging checkpoints")?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    merged.write_file(&args.out)?;
    manifest.output(&args.out);
    manifest.params = json!({ "weights": recipe.weights, "normalize": recipe.normalize });
    manifest.write(&g.out_dir)?;
    println!("merged {} checkpoints ({} tensors) into {}", stores.len(), merged.len(), args.out.display());
    Ok(())
}
