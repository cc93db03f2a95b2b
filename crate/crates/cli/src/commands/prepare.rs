//! prepare-data: validate a dataset directory (or generate the synthetic
//! corpus) and write its manifest.

use super::{CliError, GlobalArgs};
use crate::loaders;

pub fn prepare_data(
    dataset: &str,
    synth_seed: Option<u64>,
    global: &GlobalArgs,
) -> Result<(), CliError> {
    global.validate()?;
    let root = global.data_root();
    let manifest = if dataset == "synth-digits" {
        let seed = synth_seed.unwrap_or(loaders::synth::DEFAULT_SEED);
        println!("generating synthetic digit corpus (seed {seed:#x}) under {}", root.display());
        loaders::synth::generate(&root, seed)?
    } else {
        let spec = loaders::spec_by_name(dataset)?;
        loaders::write_manifest(&spec, &root)?
    };
    println!(
        "{}: {} train / {} test images, sha256 {}",
        manifest.name, manifest.train_count, manifest.test_count, manifest.content_sha256
    );
    Ok(())
}
