//! Text formats for interactions, item features and id maps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;

use super::matrix::InteractionSet;
use crate::error::{Error, Result};

/// Dense internal id → external id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdMap {
    external: Vec<u64>,
}

impl IdMap {
    pub fn identity(n: usize) -> Self {
        Self {
            external: (0..n as u64).collect(),
        }
    }

    pub fn from_external(external: Vec<u64>) -> Self {
        Self { external }
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn external(&self, internal: usize) -> u64 {
        self.external[internal]
    }

    pub fn internal(&self, external: u64) -> Option<usize> {
        self.external.binary_search(&external).ok()
    }

    pub fn externals(&self) -> &[u64] {
        &self.external
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, e) in self.external.iter().enumerate() {
            out.push_str(&format!("{e}\t{i}\n"));
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        let mut pairs = Vec::new();
        for (n, line) in data_lines(&text) {
            let mut it = line.split('\t');
            let (Some(e), Some(i), None) = (it.next(), it.next(), it.next()) else {
                return Err(parse_err(path, n, "expected \"external<TAB>internal\""));
            };
            let e: u64 = e
                .trim()
                .parse()
                .map_err(|_| parse_err(path, n, "bad external id"))?;
            let i: usize = i
                .trim()
                .parse()
                .map_err(|_| parse_err(path, n, "bad internal id"))?;
            pairs.push((i, e));
        }
        pairs.sort_unstable();
        if pairs.iter().enumerate().any(|(k, &(i, _))| k != i) {
            return Err(Error::Checkpoint(format!(
                "{}: internal ids are not contiguous",
                path.display()
            )));
        }
        Ok(Self {
            external: pairs.into_iter().map(|(_, e)| e).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedInteractions {
    pub set: InteractionSet,
    pub users: IdMap,
    pub items: IdMap,
    pub duplicates: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads `user<TAB>item` lines and compacts both id spaces to `0..n` in
/// ascending external order.
pub fn load_interactions(path: &Path) -> Result<LoadedInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    let mut raw = Vec::new();
    for (n, line) in data_lines(&text) {
        let mut it = line.split('\t');
        let (Some(u), Some(i), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, n, "expected \"user<TAB>item\""));
        };
        let u: u64 = u
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad user id {u:?}")))?;
        let i: u64 = i
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad item id {i:?}")))?;
        raw.push((u, i));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let users = compact(raw.iter().map(|p| p.0));
    let items = compact(raw.iter().map(|p| p.1));
    let pairs: Vec<(usize, usize)> = raw
        .iter()
        .map(|&(u, i)| (users[&u], items[&i]))
        .collect();
    let total = pairs.len();
    let set = InteractionSet::new(pairs, users.len(), items.len())?;
    let duplicates = total - set.len();
    if duplicates > 0 {
        warn!("{}: collapsed {duplicates} duplicate interactions", path.display());
    }
    Ok(LoadedInteractions {
        set,
        users: IdMap::from_external(users.into_keys().collect()),
        items: IdMap::from_external(items.into_keys().collect()),
        duplicates,
    })
}

fn compact(ids: impl Iterator<Item = u64>) -> BTreeMap<u64, usize> {
    let mut map: BTreeMap<u64, usize> = ids.map(|e| (e, 0)).collect();
    map.values_mut().enumerate().for_each(|(k, v)| *v = k);
    map
}

/// Canonical format: internal ids, one pair per line.
pub fn write_interactions(set: &InteractionSet, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(set.len() * 12);
    for &(u, i) in set.pairs() {
        out.push_str(&format!("{u}\t{i}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Dense `(J, S)` item content matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), &v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: r, col: c, value: v });
        }
        Ok(Self { values })
    }

    pub fn num_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn check_items(&self, num_items: usize) -> Result<()> {
        if self.num_items() != num_items {
            return Err(Error::dim(format!(
                "feature matrix has {} rows but the catalog has {num_items} items",
                self.num_items()
            )));
        }
        Ok(())
    }

    /// Reorders rows so that row `k` holds the features of external item
    /// `items.external(k)`.
    pub fn reindex(&self, items: &IdMap) -> Result<Self> {
        let mut values = Array2::zeros((items.len(), self.dim()));
        for (k, mut row) in values.rows_mut().into_iter().enumerate() {
            let e = items.external(k) as usize;
            if e >= self.num_items() {
                return Err(Error::dim(format!(
                    "item {e} has no feature row ({} rows)",
                    self.num_items()
                )));
            }
            row.assign(&self.values.row(e));
        }
        Ok(Self { values })
    }

    pub fn write_dense(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.num_items(), self.dim());
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Reads a `J S` header followed by either `J` dense rows or `j s value`
/// triplets. The layout is chosen from the token count of the first data
/// line: exactly `S` tokens means dense, so an `S == 3` file is always read
/// as dense.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    let lines: Vec<(usize, &str)> = data_lines(&text).collect();
    let Some(&(hn, header)) = lines.first() else {
        return Err(Error::EmptyDataset(path.display().to_string()));
    };
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, hn, "header must be \"J S\""))?;
    let [j, s] = dims[..] else {
        return Err(parse_err(path, hn, "header must be \"J S\""));
    };
    let body = &lines[1..];
    let mut values = Array2::zeros((j, s));
    let first_tokens = body.first().map_or(0, |(_, l)| l.split_whitespace().count());
    let dense = first_tokens == s;

    if body.is_empty() && j > 0 {
        return Err(Error::Truncated(format!("{}: no feature rows", path.display())));
    }
    if dense {
        if body.len() < j {
            return Err(Error::Truncated(format!(
                "{}: expected {j} rows, found {}",
                path.display(),
                body.len()
            )));
        }
        if body.len() > j {
            return Err(parse_err(path, body[j].0, "more rows than the header declares"));
        }
        for (row, &(n, line)) in body.iter().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != s {
                return Err(parse_err(path, n, format!("expected {s} values, got {}", toks.len())));
            }
            for (col, t) in toks.iter().enumerate() {
                values[[row, col]] = t
                    .parse()
                    .map_err(|_| parse_err(path, n, format!("bad value {t:?}")))?;
            }
        }
    } else {
        for &(n, line) in body {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(parse_err(path, n, "expected \"j s value\""));
            }
            let r: usize = toks[0].parse().map_err(|_| parse_err(path, n, "bad row index"))?;
            let c: usize = toks[1].parse().map_err(|_| parse_err(path, n, "bad column index"))?;
            let v: f64 = toks[2].parse().map_err(|_| parse_err(path, n, "bad value"))?;
            if r >= j || c >= s {
                return Err(parse_err(path, n, format!("({r}, {c}) outside {j}x{s}")));
            }
            values[[r, c]] = v;
        }
    }
    FeatureMatrix::new(values)
}

/// Writes through a sibling temporary file and renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
