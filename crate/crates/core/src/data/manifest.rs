use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Real,
    Synthetic,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Real => "real",
            Self::Synthetic => "synthetic",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(Self::Real),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

/// Attribute value given to synthetic rows on attributes they were not
/// generated for.
pub const UNSPECIFIED: &str = "synthetic-unspecified";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    /// Relative to the dataset root.
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
    pub provenance: Provenance,
    pub attributes: BTreeMap<String, String>,
}

impl ManifestRow {
    pub fn group(&self, attribute: &str) -> Option<&str> {
        self.attributes.get(attribute).map(String::as_str)
    }
}

/// Rows plus the directory their paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

const FIXED: [&str; 5] = ["id", "image", "mask", "split", "provenance"];

/// Dataset root for a manifest file: the parent of a `manifests/`
/// directory, otherwise the file's own directory.
pub fn dataset_root(manifest_path: &Path) -> PathBuf {
    let dir = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    if dir.file_name().is_some_and(|n| n == "manifests") {
        dir.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        dir
    }
}

fn path_text(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Self {
        Self {
            root: root.into(),
            rows,
        }
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Attribute names across all rows, sorted.
    pub fn attributes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.attributes.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Row counts per group of `attribute` within `split`.
    pub fn group_counts(&self, attribute: &str, split: Split) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in self.split(split) {
            if let Some(g) = r.group(attribute) {
                *out.entry(g.to_string()).or_insert(0) += 1;
            }
        }
        out
    }

    /// Parses and validates a manifest. All problems are collected and
    /// reported together; nothing is returned unless every row is valid.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let root = dataset_root(path);
        let invalid = |e: csv::Error| DataError::Manifest {
            path: path.to_path_buf(),
            problems: vec![e.to_string()],
        };
        let mut reader = csv::Reader::from_path(path).map_err(invalid)?;
        let headers = reader.headers().map_err(invalid)?.clone();
        let mut problems = Vec::new();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let fixed: Vec<Option<usize>> = FIXED.iter().map(|n| col(n)).collect();
        for (n, c) in FIXED.iter().zip(&fixed) {
            if c.is_none() {
                problems.push(format!("missing column {n:?}"));
            }
        }
        let attr_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix("attr:").map(|a| (i, a.to_string())))
            .collect();
        if attr_cols.is_empty() {
            problems.push("no attr:* columns".into());
        }
        if !problems.is_empty() {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                problems,
            });
        }
        let idx: Vec<usize> = fixed.into_iter().map(|c| c.expect("checked")).collect();
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(invalid)?;
            let at = |i: usize| rec.get(i).unwrap_or("").trim();
            let line = line + 2;
            let id = at(idx[0]).to_string();
            if id.is_empty() {
                problems.push(format!("line {line}: empty id"));
            } else if !seen.insert(id.clone()) {
                problems.push(format!("line {line}: duplicate id {id:?}"));
            }
            let split = at(idx[3])
                .parse::<Split>()
                .map_err(|e| problems.push(format!("line {line} ({id}): {e}")));
            let prov = at(idx[4])
                .parse::<Provenance>()
                .map_err(|e| problems.push(format!("line {line} ({id}): {e}")));
            let image = PathBuf::from(at(idx[1]));
            let mask = PathBuf::from(at(idx[2]));
            for (kind, p) in [("image", &image), ("mask", &mask)] {
                if p.as_os_str().is_empty() || !root.join(p).is_file() {
                    problems.push(format!(
                        "line {line} ({id}): {kind} file {} not found",
                        p.display()
                    ));
                }
            }
            let mut attributes = BTreeMap::new();
            for (i, name) in &attr_cols {
                let v = at(*i);
                if v.is_empty() {
                    problems.push(format!("line {line} ({id}): empty value for attr:{name}"));
                } else {
                    attributes.insert(name.clone(), v.to_string());
                }
            }
            if let (Ok(split), Ok(provenance)) = (split, prov) {
                rows.push(ManifestRow {
                    id,
                    image,
                    mask,
                    split,
                    provenance,
                    attributes,
                });
            }
        }
        if !problems.is_empty() {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                problems,
            });
        }
        Ok(Self { root, rows })
    }

    /// Writes the CSV form; attribute columns follow [`Manifest::attributes`].
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let bytes = self.to_csv_bytes()?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, DataError> {
        let attrs = self.attributes();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        header.extend(attrs.iter().map(|a| format!("attr:{a}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.id.clone(),
                path_text(&r.image),
                path_text(&r.mask),
                r.split.to_string(),
                r.provenance.to_string(),
            ];
            for a in &attrs {
                rec.push(r.attributes.get(a).cloned().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| DataError::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"x").unwrap();
    }

    fn setup(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            touch(dir.path(), &format!("images/{i}.png"));
            touch(dir.path(), &format!("masks/{i}.png"));
        }
        let path = dir.path().join("manifests/m.csv");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, body).unwrap();
        (dir, path)
    }

    const HEADER: &str = "id,image,mask,split,provenance,attr:race,attr:gender\n";

    #[test]
    fn valid_file_loads() {
        let body = format!(
            "{HEADER}a,images/0.png,masks/0.png,train,real,Asian,Female\n\
             b,images/1.png,masks/1.png,train,real,Black,Male\n\
             c,images/2.png,masks/2.png,test,synthetic,White,Female\n"
        );
        let (dir, path) = setup(&body);
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.root, dir.path());
        assert_eq!(m.rows[0].attributes.len(), 2);
        assert_eq!(m.rows[0].group("race"), Some("Asian"));
        assert_eq!(m.rows[2].provenance, Provenance::Synthetic);
        assert_eq!(m.group_counts("gender", Split::Train).get("Male"), Some(&1));

        let out = dir.path().join("manifests/copy.csv");
        m.write(&out).unwrap();
        assert_eq!(Manifest::load(&out).unwrap(), m);
        // attribute columns are written in sorted order
        let written = fs::read_to_string(&out).unwrap();
        assert!(written.starts_with("id,image,mask,split,provenance,attr:gender,attr:race\na,images/0.png,masks/0.png,train,real,Female,Asian\n"));
    }

    #[test]
    fn problems_are_collected() {
        let body = format!(
            "{HEADER}a,images/0.png,masks/0.png,train,real,Asian,Female\n\
             a,images/1.png,masks/1.png,valid,real,Black,Male\n\
             c,images/9.png,masks/2.png,test,real,White,\n"
        );
        let (_dir, path) = setup(&body);
        match Manifest::load(&path) {
            Err(DataError::Manifest { problems, .. }) => {
                let text = problems.join("\n");
                assert!(text.contains("duplicate id \"a\""), "{text}");
                assert!(text.contains("unknown split \"valid\""));
                assert!(text.contains("images/9.png not found"));
                assert!(text.contains("empty value for attr:gender"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn root_falls_back_to_manifest_dir() {
        assert_eq!(
            dataset_root(Path::new("/d/manifests/m.csv")),
            PathBuf::from("/d")
        );
        assert_eq!(
            dataset_root(Path::new("/d/other/m.csv")),
            PathBuf::from("/d/other")
        );
    }
}
