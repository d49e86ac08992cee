//! Replay-matrix construction from raw star-rating dumps.
//!
//! Pipeline: parse `user,item,stars` (or `user::item::stars::timestamp`)
//! triples, pick the top `m_top` items by rating count and then the top
//! `n_top` users by rating count restricted to those items, quantize stars
//! at a threshold (default 4.0: >= 4 stars means +1), and leave missing
//! pairs as 0. Ties in rating counts break by lexicographic id and
//! duplicate (user, item) pairs resolve last-write-wins, so the output is
//! a deterministic function of the (unordered) input triples.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{malformed} of {total} lines malformed (over 1%)")]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
}

/// One raw rating record.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTriple {
    pub user_id: String,
    pub item_id: String,
    pub stars: f64,
}

/// Accepted input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    /// `user,item,stars[,extra...]`
    CommaTriples,
    /// `user::item::stars[::timestamp]`
    DoubleColonTriples,
}

impl TripleFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "comma" => Some(Self::CommaTriples),
            "double-colon" | "double_colon" => Some(Self::DoubleColonTriples),
            _ => None,
        }
    }
}

/// Parse result: the triples plus a malformed-line count.
#[derive(Debug)]
pub struct ParsedRatings {
    pub triples: Vec<RatingTriple>,
    pub malformed: usize,
    pub total_lines: usize,
}

pub const DEFAULT_QUANTIZE_THRESHOLD: f64 = 4.0;

/// Quantize a star rating: +1 iff `stars >= threshold`.
pub fn quantize(stars: f64, threshold: f64) -> i8 {
    if stars >= threshold {
        1
    } else {
        -1
    }
}

fn parse_line(line: &str, format: TripleFormat) -> Option<RatingTriple> {
    let mut fields: Box<dyn Iterator<Item = &str>> = match format {
        TripleFormat::CommaTriples => Box::new(line.split(',')),
        TripleFormat::DoubleColonTriples => Box::new(line.split("::")),
    };
    let user = fields.next()?.trim();
    let item = fields.next()?.trim();
    let stars: f64 = fields.next()?.trim().parse().ok()?;
    if user.is_empty() || item.is_empty() || !stars.is_finite() || stars < 0.0 {
        return None;
    }
    // Trailing fields (timestamps and the like) are ignored.
    Some(RatingTriple { user_id: user.to_string(), item_id: item.to_string(), stars })
}

/// Parse a rating dump from any reader. Whitespace-only lines are skipped;
/// unparseable lines are counted and tolerated up to 1% of the non-empty
/// lines.
pub fn parse_ratings_reader<R: BufRead>(
    reader: R,
    format: TripleFormat,
) -> Result<ParsedRatings, IngestError> {
    let mut triples = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|source| IngestError::Io { path: "<reader>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_line(&line, format) {
            Some(t) => triples.push(t),
            None => malformed += 1,
        }
    }
    if total > 0 && (malformed as f64) > 0.01 * total as f64 {
        return Err(IngestError::TooManyMalformed { malformed, total });
    }
    Ok(ParsedRatings { triples, malformed, total_lines: total })
}

/// Parse a rating dump from a file.
pub fn parse_ratings_csv(path: &Path, format: TripleFormat) -> Result<ParsedRatings, IngestError> {
    let file = fs::File::open(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    parse_ratings_reader(BufReader::new(file), format)
}

/// Dense quantized rating matrix over {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    entries: Vec<i8>,
    num_users: usize,
    num_items: usize,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    density: f64,
    threshold: f64,
}

/// Bookkeeping from the submatrix build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestStats {
    /// (user, item) pairs that appeared more than once; last write won.
    pub duplicate_pairs: usize,
}

/// Sidecar metadata written next to the matrix file.
#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub n: usize,
    pub m: usize,
    pub density: f64,
    pub threshold: f64,
    pub source_hash: String,
}

impl RatingMatrix {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn entry(&self, user: usize, item: usize) -> i8 {
        self.entries[user * self.num_items + item]
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    /// Build directly from entries; row-major, values in {-1, 0, +1}.
    pub fn from_entries(
        entries: Vec<i8>,
        num_users: usize,
        num_items: usize,
        threshold: f64,
    ) -> Result<Self, IngestError> {
        if num_users == 0 || num_items == 0 || entries.len() != num_users * num_items {
            return Err(IngestError::Configuration(format!(
                "entry count {} does not match {num_users} x {num_items}",
                entries.len()
            )));
        }
        if entries.iter().any(|&e| !(-1..=1).contains(&e)) {
            return Err(IngestError::Configuration("entries must be in {-1, 0, +1}".into()));
        }
        let nnz = entries.iter().filter(|&&e| e != 0).count();
        let density = nnz as f64 / (num_users * num_items) as f64;
        Ok(Self {
            entries,
            num_users,
            num_items,
            row_ids: (0..num_users).map(|u| u.to_string()).collect(),
            col_ids: (0..num_items).map(|i| i.to_string()).collect(),
            density,
            threshold,
        })
    }

    /// Write `matrix.csv` (rows of -1/0/+1) and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, source_hash: &str) -> Result<(), IngestError> {
        fs::create_dir_all(dir)
            .map_err(|source| IngestError::Io { path: dir.display().to_string(), source })?;
        let mut csv = String::new();
        for u in 0..self.num_users {
            let row: Vec<String> =
                (0..self.num_items).map(|i| self.entry(u, i).to_string()).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        let csv_path = dir.join("matrix.csv");
        fs::write(&csv_path, csv)
            .map_err(|source| IngestError::Io { path: csv_path.display().to_string(), source })?;
        let manifest = MatrixManifest {
            n: self.num_users,
            m: self.num_items,
            density: self.density,
            threshold: self.threshold,
            source_hash: source_hash.to_string(),
        };
        let manifest_path = dir.join("manifest.json");
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap())
            .map_err(|source| IngestError::Io {
                path: manifest_path.display().to_string(),
                source,
            })?;
        Ok(())
    }

    /// Load a matrix saved by [`RatingMatrix::save`], recomputing the
    /// density and checking it against the manifest.
    pub fn load(dir: &Path) -> Result<Self, IngestError> {
        let manifest_path = dir.join("manifest.json");
        let manifest_text = fs::read_to_string(&manifest_path).map_err(|source| {
            IngestError::Io { path: manifest_path.display().to_string(), source }
        })?;
        let manifest: MatrixManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| IngestError::ManifestMismatch(format!("unreadable manifest: {e}")))?;
        let csv_path = dir.join("matrix.csv");
        let text = fs::read_to_string(&csv_path)
            .map_err(|source| IngestError::Io { path: csv_path.display().to_string(), source })?;
        let mut entries = Vec::new();
        let mut rows = 0usize;
        let mut cols = None;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<i8> = line
                .split(',')
                .map(|f| f.trim().parse::<i8>())
                .collect::<Result<_, _>>()
                .map_err(|e| IngestError::ManifestMismatch(format!("bad matrix entry: {e}")))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(IngestError::ManifestMismatch("ragged matrix rows".into()))
                }
                _ => {}
            }
            rows += 1;
            entries.extend(row);
        }
        let mat = Self::from_entries(entries, rows, cols.unwrap_or(0), manifest.threshold)?;
        if rows != manifest.n || cols.unwrap_or(0) != manifest.m {
            return Err(IngestError::ManifestMismatch(format!(
                "manifest says {}x{}, file has {rows}x{}",
                manifest.n,
                manifest.m,
                cols.unwrap_or(0)
            )));
        }
        if (mat.density - manifest.density).abs() > 1e-9 {
            return Err(IngestError::ManifestMismatch(format!(
                "recomputed density {} != manifest density {}",
                mat.density, manifest.density
            )));
        }
        Ok(mat)
    }
}

/// Build the dense top-users-by-top-items submatrix.
///
/// Items are ranked by global rating count first; users are then ranked by
/// their rating count restricted to the selected items. Present entries are
/// quantized at `threshold`; absent entries are 0.
pub fn dense_submatrix(
    triples: &[RatingTriple],
    n_top: usize,
    m_top: usize,
    threshold: f64,
) -> Result<(RatingMatrix, IngestStats), IngestError> {
    if n_top == 0 || m_top == 0 {
        return Err(IngestError::Configuration("need n_top >= 1 and m_top >= 1".into()));
    }
    // Deduplicate (user, item) pairs, last write wins. BTreeMap keys give
    // deterministic iteration independent of input order.
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut duplicates = 0usize;
    for t in triples {
        if cells.insert((t.user_id.as_str(), t.item_id.as_str()), t.stars).is_some() {
            duplicates += 1;
        }
    }

    let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &(_, item) in cells.keys() {
        *item_counts.entry(item).or_default() += 1;
    }
    if item_counts.len() < m_top {
        return Err(IngestError::Configuration(format!(
            "dataset has {} distinct items, need {m_top}",
            item_counts.len()
        )));
    }
    let mut items: Vec<(&str, usize)> = item_counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    items.truncate(m_top);
    let col_index: HashMap<&str, usize> =
        items.iter().enumerate().map(|(idx, &(id, _))| (id, idx)).collect();

    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &(user, item) in cells.keys() {
        if col_index.contains_key(item) {
            *user_counts.entry(user).or_default() += 1;
        }
    }
    if user_counts.len() < n_top {
        return Err(IngestError::Configuration(format!(
            "dataset has {} users with ratings on the selected items, need {n_top}",
            user_counts.len()
        )));
    }
    let mut users: Vec<(&str, usize)> = user_counts.into_iter().collect();
    users.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    users.truncate(n_top);
    let row_index: HashMap<&str, usize> =
        users.iter().enumerate().map(|(idx, &(id, _))| (id, idx)).collect();

    let mut entries = vec![0i8; n_top * m_top];
    for (&(user, item), &stars) in &cells {
        if let (Some(&r), Some(&c)) = (row_index.get(user), col_index.get(item)) {
            entries[r * m_top + c] = quantize(stars, threshold);
        }
    }
    let mut matrix = RatingMatrix::from_entries(entries, n_top, m_top, threshold)?;
    matrix.row_ids = users.iter().map(|&(id, _)| id.to_string()).collect();
    matrix.col_ids = items.iter().map(|&(id, _)| id.to_string()).collect();
    Ok((matrix, IngestStats { duplicate_pairs: duplicates }))
}

/// FNV-1a 64-bit hash, hex-encoded; used for source and config fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}
