use std::fs;
use std::path::{Path, PathBuf};

use crate::scalar::Scalar;

use super::{common_size, imageio, DataError, Dataset};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = fs::read_dir(dir)
        .map_err(DataError::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(DataError::io(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    Ok(out)
}

/// Directory-per-class tree: `root/<class>/<image>`. Classes and files are
/// taken in sorted order; unreadable files are skipped with a warning.
/// Images keep their native size; see [`Dataset::prepared`].
pub fn load_image_dir<T: Scalar>(root: &Path) -> Result<Dataset<T>, DataError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_names.len();
        let before = images.len();
        for file in sorted_entries(&dir)?.into_iter().filter(|p| p.is_file()) {
            match imageio::read_image(&file) {
                Ok(img) => {
                    images.push(img);
                    labels.push(label);
                }
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
        if images.len() == before {
            return Err(DataError::EmptyClassDir(dir));
        }
        class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    if class_names.is_empty() {
        return Err(DataError::NoClasses(root.to_path_buf()));
    }
    Ok(Dataset {
        native_size: common_size(&images),
        images,
        labels,
        class_names,
    })
}
