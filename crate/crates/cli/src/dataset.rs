//! CSV dataset loading shared by the analysis commands.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use mhr_core::{
    augment_noise_columns, read_csv_dataset_from, CsvSchema, RngStream, SurvivalDataset,
    STREAM_AUGMENT,
};
use ndarray::Array2;

/// A dataset read from disk, with covariate names aligned to columns:
/// `names[j]` is the name of one-based covariate index `j + 1`.
pub struct LoadedData {
    pub data: SurvivalDataset,
    pub names: Vec<String>,
}

impl LoadedData {
    /// Display names for a one-based covariate index set.
    pub fn names_of(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().map(|&i| self.names[i - 1].as_str()).collect()
    }
}

/// Reads a CSV dataset and drops constant covariate columns.
///
/// A constant column carries no information for either the treatment or
/// the outcome model and breaks standardization inside the selection
/// step, so it is removed with a warning rather than failing the run.
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<LoadedData> {
    let file =
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let csv = read_csv_dataset_from(file, schema)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    let data = csv.dataset;
    let names = csv.covariate_names;

    let x = data.x();
    let keep: Vec<usize> = (0..data.p())
        .filter(|&j| {
            let col = x.column(j);
            let first = col[0];
            !col.iter().all(|&v| v == first)
        })
        .collect();
    if keep.len() == data.p() {
        return Ok(LoadedData { data, names });
    }

    let dropped: Vec<&str> = (0..data.p())
        .filter(|j| !keep.contains(j))
        .map(|j| names[j].as_str())
        .collect();
    log::warn!("dropping constant covariate columns: {}", dropped.join(", "));

    let mut reduced = Array2::<f64>::zeros((data.n(), keep.len()));
    for (slot, &j) in keep.iter().enumerate() {
        reduced.column_mut(slot).assign(&x.column(j));
    }
    let kept_names = keep.iter().map(|&j| names[j].clone()).collect();
    let data = SurvivalDataset::from_parts(
        reduced,
        data.z().to_vec(),
        data.time().to_vec(),
        data.event().to_vec(),
    )
    .context("dataset invalid after dropping constant columns")?;
    Ok(LoadedData { data, names: kept_names })
}

/// Appends independent noise covariates until the dataset is square,
/// drawing from the dedicated augmentation stream of `seed`.
pub fn augment(loaded: &mut LoadedData, seed: u64) -> Result<usize> {
    let mut rng = RngStream::new(seed, STREAM_AUGMENT);
    let (widened, added) = augment_noise_columns(&loaded.data, &mut rng)?;
    if added.is_empty() {
        log::warn!(
            "dataset already has at least as many covariates as subjects; nothing appended"
        );
        return Ok(0);
    }
    let count = added.len();
    loaded.data = widened;
    loaded.names.extend(added);
    Ok(count)
}
