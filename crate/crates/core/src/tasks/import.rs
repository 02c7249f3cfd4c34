use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::decode_pgm;
use super::table::{Alphabet, CharClass, ClassTable};
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if want_dirs {
            if path.is_dir() {
                out.push(path);
            }
        } else if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn name_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `root/<alphabet>/<character>/<instance>.pgm` into a [`ClassTable`].
///
/// Every image is resampled to `image_side × image_side` and flattened.
/// Directories and files are visited in lexicographic order. Character
/// directories without `.pgm` files are skipped and counted in
/// [`ClassTable::skipped_empty`]; alphabets left with no characters are
/// dropped.
pub fn import_image_classes(root: &Path, image_side: usize) -> Result<ClassTable> {
    if image_side == 0 {
        return Err(Error::contract("image_side must be positive"));
    }
    let mut alphabets = Vec::new();
    let mut skipped_empty = 0;
    for alpha_dir in sorted_entries(root, true)? {
        let mut classes = Vec::new();
        for char_dir in sorted_entries(&alpha_dir, true)? {
            let files = sorted_entries(&char_dir, false)?;
            if files.is_empty() {
                skipped_empty += 1;
                continue;
            }
            let instances = files
                .iter()
                .map(|f| {
                    let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
                    let img = decode_pgm(&bytes).map_err(|e| Error::parse(f, e.to_string()))?;
                    Ok(img.resample(image_side))
                })
                .collect::<Result<Vec<_>>>()?;
            classes.push(CharClass {
                name: name_of(&char_dir),
                instances,
            });
        }
        if !classes.is_empty() {
            alphabets.push(Alphabet {
                name: name_of(&alpha_dir),
                classes,
            });
        }
    }
    Ok(ClassTable {
        alphabets,
        input_dim: image_side * image_side,
        skipped_empty,
    })
}
