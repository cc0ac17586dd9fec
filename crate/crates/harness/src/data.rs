//! Dataset files of a run directory and the train/validation split.

use std::path::Path;
use std::time::Instant;

use motpose_core::geometry::ObjectCatalog;
use motpose_core::scenes::{generate_dataset, load_dataset, save_dataset, Dataset, SceneSequence};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::RunManifest;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// First sequence id of the test split. Ids select generator streams, so the two
/// splits never share one.
pub const TEST_ID_OFFSET: usize = 1 << 20;

pub fn catalog_for(num_classes: usize) -> ObjectCatalog {
    ObjectCatalog::synthetic(num_classes)
}

/// Writes the training and test splits into `out` with a manifest.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let catalog = catalog_for(cfg.scenes.num_classes);
    let mut manifest = RunManifest::new("generate", Some(cfg.hash()), vec![cfg.seed]);
    for (name, first, count) in [
        (TRAIN_FILE, 0, cfg.data.train_sequences),
        (TEST_FILE, TEST_ID_OFFSET, cfg.data.test_sequences),
    ] {
        let t0 = Instant::now();
        let seqs = generate_dataset(&cfg.scenes, &catalog, first, count, cfg.workers)?;
        let ds = Dataset::new(cfg.scenes.clone(), &catalog, seqs);
        let path = out.join(name);
        save_dataset(&ds, &path).map_err(|e| wrap_io(e, &path))?;
        manifest.time(name, t0.elapsed().as_secs_f64());
        manifest.add_file(out, name)?;
    }
    manifest.write(out)?;
    Ok(manifest)
}

fn wrap_io(e: motpose_core::Error, path: &Path) -> HarnessError {
    match e {
        motpose_core::Error::Io(io) => HarnessError::io(path, io),
        other => HarnessError::malformed(path, other.to_string()),
    }
}

/// Loads a dataset and checks it was drawn with the built-in catalog.
pub fn load(path: &Path) -> Result<Dataset> {
    let ds = load_dataset(path).map_err(|e| wrap_io(e, path))?;
    let expected = catalog_for(ds.header.config.num_classes).hash();
    if ds.header.catalog_hash != expected {
        return Err(HarnessError::Mismatch(format!(
            "{}: catalog hash {} does not match the built-in {}-class catalog",
            path.display(),
            ds.header.catalog_hash,
            ds.header.config.num_classes
        )));
    }
    Ok(ds)
}

/// Fails unless the dataset renders what the model reads.
pub fn check_compatible(ds: &Dataset, model: &motpose_core::model::ModelConfig, path: &Path) -> Result<()> {
    let s = &ds.header.config;
    let problem = if s.num_classes != model.num_classes {
        Some(format!("{} classes, model has {}", s.num_classes, model.num_classes))
    } else if s.raster_channels() != model.in_channels {
        Some(format!("{} raster channels, model reads {}", s.raster_channels(), model.in_channels))
    } else if (s.camera.width, s.camera.height) != (model.image_width, model.image_height) {
        Some(format!(
            "{}x{} rasters, model reads {}x{}",
            s.camera.width, s.camera.height, model.image_width, model.image_height
        ))
    } else if s.max_objects > model.num_queries {
        Some(format!("up to {} objects, model has {} slots", s.max_objects, model.num_queries))
    } else {
        None
    };
    match problem {
        Some(p) => Err(HarnessError::Mismatch(format!("{}: dataset has {p}", path.display()))),
        None => Ok(()),
    }
}

/// Splits off the trailing `val_fraction` of the sequences for validation.
pub fn split(seqs: Vec<SceneSequence>, val_fraction: f64) -> (Vec<SceneSequence>, Vec<SceneSequence>) {
    let n = seqs.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n);
    let mut train = seqs;
    let val = train.split_off(n - n_val);
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use motpose_core::scenes::SceneConfig;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scenes = SceneConfig {
            frames: 3,
            ..cfg.scenes
        };
        cfg.data.train_sequences = 5;
        cfg.data.test_sequences = 2;
        cfg
    }

    #[test]
    fn generate_writes_both_splits() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&small(), dir.path()).unwrap();
        let names: Vec<_> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, [TRAIN_FILE, TEST_FILE]);
        let train = load(&dir.path().join(TRAIN_FILE)).unwrap();
        let test = load(&dir.path().join(TEST_FILE)).unwrap();
        assert_eq!((train.sequences.len(), test.sequences.len()), (5, 2));
        assert_eq!(test.sequences[0].id, TEST_ID_OFFSET);
        check_compatible(&train, &small().model, Path::new("x")).unwrap();
        let other = motpose_core::model::ModelConfig { num_queries: 2, ..small().model };
        assert!(matches!(check_compatible(&train, &other, Path::new("x")), Err(HarnessError::Mismatch(_))));
    }

    #[test]
    fn split_takes_the_tail() {
        let cfg = small();
        let seqs = generate_dataset(&cfg.scenes, &catalog_for(5), 0, 10, 1).unwrap();
        let (train, val) = split(seqs.clone(), 0.2);
        assert_eq!(train.len(), 8);
        assert_eq!(val.iter().map(|s| s.id).collect::<Vec<_>>(), [8, 9]);
        let (all, none) = split(seqs, 0.0);
        assert_eq!((all.len(), none.len()), (10, 0));
    }
}
