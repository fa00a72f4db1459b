use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 2;

/// One image patch on disk. Coordinates are only known when the filename
/// follows the `<patient>_idx5_x<X>_y<Y>_class<C>` convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub patient: String,
    pub x: Option<u32>,
    pub y: Option<u32>,
    /// 0 healthy, 1 IDC.
    pub label: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedName {
    pub patient: String,
    pub x: u32,
    pub y: u32,
    pub label: usize,
}

/// Parses `<patient>_idx5_x<X>_y<Y>_class<C>[.ext]`; anything else is `None`.
pub fn parse_patch_filename(name: &str) -> Option<ParsedName> {
    let stem = match name.rfind('.') {
        Some(dot) => &name[..dot],
        None => name,
    };
    let (patient, rest) = stem.split_once("_idx5_x")?;
    let (x, rest) = rest.split_once("_y")?;
    let (y, class) = rest.split_once("_class")?;
    let label = match class {
        "0" => 0,
        "1" => 1,
        _ => return None,
    };
    if patient.is_empty() || !is_digits(x) || !is_digits(y) {
        return None;
    }
    Some(ParsedName {
        patient: patient.to_string(),
        x: x.parse().ok()?,
        y: y.parse().ok()?,
        label,
    })
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn suffix_label(stem: &str) -> Option<usize> {
    if stem.ends_with("class0") {
        Some(0)
    } else if stem.ends_with("class1") {
        Some(1)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    patches: Vec<Patch>,
    counts: [usize; NUM_CLASSES],
}

impl DatasetIndex {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        let mut counts = [0; NUM_CLASSES];
        for p in &patches {
            if p.label >= NUM_CLASSES {
                return Err(Error::Label {
                    label: p.label,
                    classes: NUM_CLASSES,
                });
            }
            counts[p.label] += 1;
        }
        Ok(DatasetIndex { patches, counts })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Patches per class, indexed by label.
    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        self.counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.patches.iter().map(|p| p.label).collect()
    }

    /// Patch positions grouped by patient id.
    pub fn patients(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.patches.iter().enumerate() {
            groups.entry(p.patient.as_str()).or_default().push(i);
        }
        groups
    }

    pub fn subset(&self, positions: &[usize]) -> DatasetIndex {
        let patches: Vec<Patch> = positions.iter().map(|&i| self.patches[i].clone()).collect();
        DatasetIndex::new(patches).expect("labels already validated")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub index: DatasetIndex,
    pub rejects: Vec<Rejected>,
}

impl Scan {
    /// Newline-delimited `path<TAB>reason` lines.
    pub fn rejects_report(&self) -> String {
        let mut out = String::new();
        for r in &self.rejects {
            let _ = writeln!(out, "{}\t{}", r.path.display(), r.reason);
        }
        out
    }
}

/// Recursively indexes `<root>/<patient>/<0|1>/<name>.png`.
///
/// The label comes from the parent directory when it is `0` or `1`, else from
/// a `class0`/`class1` filename suffix. Files with no usable label or patient
/// land in `rejects`. Patches are ordered by path.
pub fn scan_dataset(root: &Path) -> Result<Scan> {
    if !root.is_dir() {
        let err = std::fs::metadata(root).err().unwrap_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory")
        });
        return Err(Error::io(root, err));
    }
    let mut patches = Vec::new();
    let mut rejects = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(
                path,
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("filesystem loop")),
            )
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path().to_path_buf();
        match classify(root, &path) {
            Ok(patch) => patches.push(patch),
            Err(reason) => rejects.push(Rejected { path, reason }),
        }
    }
    patches.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Scan {
        index: DatasetIndex::new(patches)?,
        rejects,
    })
}

fn classify(root: &Path, path: &Path) -> std::result::Result<Patch, String> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return Err("not a .png image".into());
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or("non-UTF-8 file name")?;
    let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or(name);
    let parsed = parse_patch_filename(name);
    let rel = path
        .strip_prefix(root)
        .map_err(|_| "outside the dataset root")?;
    let components: Vec<&str> = rel
        .components()
        .filter_map(|c| c.as_os_str().to_str())
        .collect();

    let dir_label = match components.len() {
        n if n >= 2 => match components[n - 2] {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        },
        _ => None,
    };
    let label = dir_label
        .or(parsed.as_ref().map(|p| p.label))
        .or_else(|| suffix_label(stem))
        .ok_or("no label: parent directory is not 0/1 and name has no class0/class1 suffix")?;
    let patient = if components.len() >= 2 {
        components[0].to_string()
    } else {
        parsed
            .as_ref()
            .map(|p| p.patient.clone())
            .ok_or("no patient: file sits in the root and its name does not encode one")?
    };
    Ok(Patch {
        patient,
        x: parsed.as_ref().map(|p| p.x),
        y: parsed.as_ref().map(|p| p.y),
        label,
        path: path.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_public_names() {
        let p = parse_patch_filename("10253_idx5_x1001_y801_class1.png").unwrap();
        assert_eq!(
            p,
            ParsedName {
                patient: "10253".into(),
                x: 1001,
                y: 801,
                label: 1
            }
        );
        let p = parse_patch_filename("p7_idx5_x0_y0_class0.png").unwrap();
        assert_eq!((p.patient.as_str(), p.x, p.y, p.label), ("p7", 0, 0, 0));
    }

    #[test]
    fn rejects_other_names() {
        for name in [
            "notes.txt",
            "10253_idx5_x_y1_class1.png",
            "a_idx5_x1_y1_class2.png",
            "_idx5_x1_y1_class1",
        ] {
            assert_eq!(parse_patch_filename(name), None, "{name}");
        }
    }

    #[test]
    fn index_counts_and_groups() {
        let mk = |patient: &str, label| Patch {
            patient: patient.into(),
            x: None,
            y: None,
            label,
            path: PathBuf::from(format!("{patient}/{label}")),
        };
        let idx = DatasetIndex::new(vec![mk("a", 0), mk("a", 1), mk("b", 1)]).unwrap();
        assert_eq!(idx.counts(), [1, 2]);
        assert_eq!(idx.patients()["a"], vec![0, 1]);
        assert!(DatasetIndex::new(vec![mk("a", 3)]).is_err());
    }
}
