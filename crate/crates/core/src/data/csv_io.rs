use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord};

use super::{Dataset, Dims, Interaction, ItemRecord, PrivateShard, PublicUserRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub catalog: PathBuf,
    pub public: PathBuf,
    pub interactions: PathBuf,
    pub private: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            catalog: dir.join("catalog.csv"),
            public: dir.join("public.csv"),
            interactions: dir.join("interactions.csv"),
            private: dir.join("private.csv"),
        }
    }
}

/// Round-trip exact, always 17 significant digits.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct Table {
    path: PathBuf,
    header: StringRecord,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
            .clone();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(path, line, 1, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != header.len() {
                let column = rec.len().min(header.len()) + 1;
                return Err(parse_err(
                    path,
                    line,
                    column,
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// Checks fixed leading columns followed by `{prefix}0..{prefix}{n-1}`
    /// and returns n.
    fn expect_header(&self, fixed: &[&str], prefix: &str) -> Result<usize> {
        for (i, name) in fixed.iter().enumerate() {
            if self.header.get(i) != Some(*name) {
                return Err(parse_err(
                    &self.path,
                    1,
                    i + 1,
                    format!("expected header column `{name}`"),
                ));
            }
        }
        let n = self.header.len().saturating_sub(fixed.len());
        for j in 0..n {
            let want = format!("{prefix}{j}");
            if self.header.get(fixed.len() + j) != Some(want.as_str()) {
                return Err(parse_err(
                    &self.path,
                    1,
                    fixed.len() + j + 1,
                    format!("expected header column `{want}`"),
                ));
            }
        }
        Ok(n)
    }

    fn field<T: std::str::FromStr>(&self, line: u64, rec: &StringRecord, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<T>().map_err(|e| {
            parse_err(
                &self.path,
                line,
                col + 1,
                format!("cannot parse `{raw}`: {e}"),
            )
        })
    }

    fn floats(&self, line: u64, rec: &StringRecord, from: usize) -> Result<Vec<f64>> {
        (from..rec.len())
            .map(|c| {
                let v: f64 = self.field(line, rec, c)?;
                if !v.is_finite() {
                    return Err(parse_err(&self.path, line, c + 1, "non-finite value"));
                }
                Ok(v)
            })
            .collect()
    }
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads the four CSV files. Private rows only ever become
/// [`PrivateShard`] values.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let catalog_t = Table::read(&paths.catalog)?;
    let d_item = catalog_t.expect_header(&["item_id", "created_at", "popularity"], "f")?;
    let mut catalog = Vec::with_capacity(catalog_t.rows.len());
    let mut item_ids = HashSet::new();
    for (line, rec) in &catalog_t.rows {
        let item_id: u64 = catalog_t.field(*line, rec, 0)?;
        if !item_ids.insert(item_id) {
            return Err(Error::Uniqueness {
                kind: "item",
                id: item_id,
            });
        }
        catalog.push(ItemRecord {
            item_id,
            created_at: catalog_t.field(*line, rec, 1)?,
            popularity_count: catalog_t.field(*line, rec, 2)?,
            feature_vector: catalog_t.floats(*line, rec, 3)?,
        });
    }

    let public_t = Table::read(&paths.public)?;
    let d_pub = public_t.expect_header(&["user_id"], "p")?;
    let mut users: Vec<PublicUserRecord> = Vec::with_capacity(public_t.rows.len());
    let mut user_pos = HashMap::new();
    for (line, rec) in &public_t.rows {
        let user_id: u64 = public_t.field(*line, rec, 0)?;
        if user_pos.insert(user_id, users.len()).is_some() {
            return Err(Error::Uniqueness {
                kind: "user",
                id: user_id,
            });
        }
        users.push(PublicUserRecord {
            user_id,
            public_features: public_t.floats(*line, rec, 1)?,
            interaction_log: Vec::new(),
        });
    }

    let inter_t = Table::read(&paths.interactions)?;
    if inter_t.expect_header(&["user_id", "item_id", "feedback", "timestep"], "extra")? != 0 {
        return Err(parse_err(&inter_t.path, 1, 5, "unexpected extra column"));
    }
    for (line, rec) in &inter_t.rows {
        let user_id: u64 = inter_t.field(*line, rec, 0)?;
        let item_id: u64 = inter_t.field(*line, rec, 1)?;
        let feedback: f64 = inter_t.field(*line, rec, 2)?;
        let timestep: i64 = inter_t.field(*line, rec, 3)?;
        let &pos = user_pos
            .get(&user_id)
            .ok_or_else(|| parse_err(&inter_t.path, *line, 1, format!("unknown user {user_id}")))?;
        if !item_ids.contains(&item_id) {
            return Err(parse_err(
                &inter_t.path,
                *line,
                2,
                format!("unknown item {item_id}"),
            ));
        }
        if !(0.0..=1.0).contains(&feedback) {
            return Err(parse_err(
                &inter_t.path,
                *line,
                3,
                "feedback outside [0, 1]",
            ));
        }
        users[pos].interaction_log.push(Interaction {
            item_id,
            feedback,
            timestep,
        });
    }
    for u in &mut users {
        u.interaction_log.sort_by_key(|e| e.timestep);
    }

    let private_t = Table::read(&paths.private)?;
    let d_pri = private_t.expect_header(&["user_id"], "q")?;
    let mut shards = Vec::with_capacity(private_t.rows.len());
    let mut shard_ids = HashSet::new();
    for (line, rec) in &private_t.rows {
        let user_id: u64 = private_t.field(*line, rec, 0)?;
        if !shard_ids.insert(user_id) {
            return Err(Error::Uniqueness {
                kind: "private user",
                id: user_id,
            });
        }
        shards.push(PrivateShard::new(user_id, private_t.floats(*line, rec, 1)?));
    }

    Dataset::new(
        catalog,
        users,
        shards,
        Dims {
            d_item,
            d_pub,
            d_pri,
        },
    )
}

/// Writes the dataset in the same four-file layout `load_dataset` reads.
pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let dims = dataset.dims();
    let mut out = String::new();

    out.push_str("item_id,created_at,popularity");
    header_cols(&mut out, "f", dims.d_item);
    for item in dataset.catalog() {
        out.push_str(&format!(
            "{},{},{}",
            item.item_id, item.created_at, item.popularity_count
        ));
        float_cols(&mut out, &item.feature_vector);
    }
    write_file(&paths.catalog, &out)?;

    out.clear();
    out.push_str("user_id");
    header_cols(&mut out, "p", dims.d_pub);
    for u in dataset.public_store() {
        out.push_str(&u.user_id.to_string());
        float_cols(&mut out, &u.public_features);
    }
    write_file(&paths.public, &out)?;

    out.clear();
    out.push_str("user_id,item_id,feedback,timestep\n");
    for u in dataset.public_store() {
        for e in &u.interaction_log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                u.user_id,
                e.item_id,
                fmt_float(e.feedback),
                e.timestep
            ));
        }
    }
    write_file(&paths.interactions, &out)?;

    out.clear();
    out.push_str("user_id");
    header_cols(&mut out, "q", dims.d_pri);
    for s in dataset.private_shards() {
        out.push_str(&s.user_id().to_string());
        float_cols(&mut out, s.features());
    }
    write_file(&paths.private, &out)
}

fn header_cols(out: &mut String, prefix: &str, n: usize) {
    for j in 0..n {
        out.push_str(&format!(",{prefix}{j}"));
    }
    out.push('\n');
}

fn float_cols(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(',');
        out.push_str(&fmt_float(*v));
    }
    out.push('\n');
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn bad_header_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        std::fs::write(&paths.catalog, "item_id,created,popularity,f0\n1,0,0,0.5\n").unwrap();
        match load_dataset(&paths).unwrap_err() {
            Error::Parse {
                line,
                column,
                message,
                ..
            } => {
                assert_eq!((line, column), (1, 2));
                assert!(message.contains("created_at"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unparsable_number_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        std::fs::write(
            &paths.catalog,
            "item_id,created_at,popularity,f0\n1,0,0,abc\n",
        )
        .unwrap();
        match load_dataset(&paths).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 4)),
            other => panic!("unexpected {other}"),
        }
    }
}
