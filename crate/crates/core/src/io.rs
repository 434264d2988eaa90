//! CSV ingestion with a block-assignment spec.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::TwoBlockData;
use crate::error::{Error, Result};

const MISSING_TOKENS: [&str; 3] = ["", "NA", "NaN"];
const MIN_ROWS: usize = 3;
const MAX_LEVELS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOp {
    Sqrt,
    Reciprocal,
    Identity,
}

impl TransformOp {
    fn prefix(self) -> Option<&'static str> {
        match self {
            TransformOp::Sqrt => Some("sqrt_"),
            TransformOp::Reciprocal => Some("recip_"),
            TransformOp::Identity => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transform {
    pub column: String,
    pub op: TransformOp,
}

/// Which CSV columns form the X block, the Y block and the supplementary set.
///
/// Columns listed in `indicator_columns` must also appear in `x_columns` or
/// `y_columns`; each is replaced in place by one 0/1 column per level.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub x_columns: Vec<String>,
    pub y_columns: Vec<String>,
    #[serde(default)]
    pub supplementary_columns: Vec<String>,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub indicator_columns: Vec<String>,
}

impl BlockSpec {
    /// Reads a spec from `.json` or `.toml`, chosen by extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let spec: BlockSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            _ => match serde_json::from_str(&text) {
                Ok(s) => s,
                Err(_) => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_columns.is_empty() || self.y_columns.is_empty() {
            return Err(Error::BlockSpec("x_columns and y_columns must both be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for c in self.x_columns.iter().chain(&self.y_columns).chain(&self.supplementary_columns) {
            if !seen.insert(c.as_str()) {
                return Err(Error::BlockSpec(format!("column `{c}` is assigned more than once")));
            }
        }
        let in_blocks = |c: &String| self.x_columns.contains(c) || self.y_columns.contains(c);
        for t in &self.transforms {
            if !in_blocks(&t.column) {
                return Err(Error::BlockSpec(format!("transform on `{}`, which is in neither block", t.column)));
            }
            if self.indicator_columns.contains(&t.column) {
                return Err(Error::BlockSpec(format!("`{}` is categorical and cannot be transformed", t.column)));
            }
        }
        for c in &self.indicator_columns {
            if !in_blocks(c) {
                return Err(Error::BlockSpec(format!("indicator column `{c}` is in neither block")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupplementaryColumn {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: TwoBlockData,
    pub supplementary: Vec<SupplementaryColumn>,
}

impl Dataset {
    pub fn supplementary(&self, name: &str) -> Option<&SupplementaryColumn> {
        self.supplementary.iter().find(|s| s.name == name)
    }
}

/// 0/1 columns, one per level of a categorical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorBlock {
    pub names: Vec<String>,
    pub levels: Vec<String>,
    pub matrix: DMatrix<f64>,
}

/// Expands `values` into indicators, levels ordered by first appearance.
pub fn indicators_from_categorical(column: &str, values: &[String]) -> Result<IndicatorBlock> {
    let mut levels: Vec<String> = Vec::new();
    for v in values {
        if !levels.contains(v) {
            levels.push(v.clone());
        }
    }
    if levels.len() < 2 {
        return Err(Error::Data(format!("column `{column}` has a single level")));
    }
    if levels.len() > MAX_LEVELS {
        return Err(Error::Data(format!(
            "column `{column}` has {} levels (at most {MAX_LEVELS})",
            levels.len()
        )));
    }
    let matrix = DMatrix::from_fn(values.len(), levels.len(), |i, j| if values[i] == levels[j] { 1.0 } else { 0.0 });
    Ok(IndicatorBlock {
        names: levels.iter().map(|l| format!("{column}_{l}")).collect(),
        levels,
        matrix,
    })
}

/// Applies `transforms` in order to columns of either block.
///
/// Transformed columns are renamed `sqrt_<name>` or `recip_<name>`.
pub fn apply_transforms(data: &TwoBlockData, transforms: &[Transform]) -> Result<TwoBlockData> {
    let mut x = data.x().clone();
    let mut y = data.y().clone();
    let mut x_names = data.x_names().to_vec();
    let mut y_names = data.y_names().to_vec();
    for t in transforms {
        let (m, names) = if let Some(j) = x_names.iter().position(|c| *c == t.column) {
            (&mut x, (&mut x_names, j))
        } else if let Some(j) = y_names.iter().position(|c| *c == t.column) {
            (&mut y, (&mut y_names, j))
        } else {
            return Err(Error::MissingColumn(t.column.clone()));
        };
        let (names, j) = names;
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            m[(i, j)] = match t.op {
                TransformOp::Identity => v,
                TransformOp::Sqrt if v < 0.0 => return Err(domain(i, &t.column, format!("sqrt of negative value {v}"))),
                TransformOp::Sqrt => v.sqrt(),
                TransformOp::Reciprocal if v == 0.0 => return Err(domain(i, &t.column, "reciprocal of zero".into())),
                TransformOp::Reciprocal => 1.0 / v,
            };
        }
        if let Some(prefix) = t.op.prefix() {
            names[j] = format!("{prefix}{}", names[j]);
        }
    }
    TwoBlockData::new(x, y, x_names, y_names)
}

fn domain(i: usize, column: &str, message: String) -> Error {
    Error::Domain {
        row: i + 1,
        column: column.to_string(),
        message,
    }
}

/// Loads and validates the blocks named in `spec`. Row numbers in errors
/// count data rows from 1, excluding the header.
pub fn load_csv(path: &Path, spec: &BlockSpec) -> Result<Dataset> {
    spec.validate()?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Data(format!("{}: duplicate column `{h}`", path.display())));
        }
    }
    let index = |c: &String| header.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn(c.clone()));
    let wanted: Vec<&String> = spec.x_columns.iter().chain(&spec.y_columns).chain(&spec.supplementary_columns).collect();
    let cols: Vec<usize> = wanted.iter().map(|c| index(c)).collect::<Result<_>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); wanted.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (k, &c) in cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            if MISSING_TOKENS.contains(&cell) {
                return Err(Error::MissingValue {
                    row: row + 1,
                    column: wanted[k].clone(),
                });
            }
            raw[k].push(cell.to_string());
        }
    }
    let n = raw.first().map_or(0, Vec::len);
    if n < MIN_ROWS {
        return Err(Error::Data(format!("{}: {n} data rows, need at least {MIN_ROWS}", path.display())));
    }

    let column_of = |name: &String| raw[wanted.iter().position(|w| *w == name).expect("column was requested")].as_slice();
    let block = |names: &[String]| -> Result<(DMatrix<f64>, Vec<String>)> {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut out_names = Vec::new();
        for name in names {
            let cells = column_of(name);
            if spec.indicator_columns.contains(name) {
                let ind = indicators_from_categorical(name, cells)?;
                for (j, label) in ind.names.into_iter().enumerate() {
                    columns.push(ind.matrix.column(j).iter().copied().collect());
                    out_names.push(label);
                }
            } else {
                let values = cells
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::NonNumeric {
                            row: i + 1,
                            column: name.clone(),
                            value: s.clone(),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                columns.push(values);
                out_names.push(name.clone());
            }
        }
        let m = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Ok((m, out_names))
    };
    let (x, x_names) = block(&spec.x_columns)?;
    let (y, y_names) = block(&spec.y_columns)?;
    let data = TwoBlockData::new(x, y, x_names, y_names)?;
    let data = apply_transforms(&data, &spec.transforms)?;
    let supplementary = spec
        .supplementary_columns
        .iter()
        .map(|name| SupplementaryColumn {
            name: name.clone(),
            values: column_of(name).to_vec(),
        })
        .collect();
    Ok(Dataset { data, supplementary })
}

/// Writes both blocks, X columns first, with shortest round-trip formatting.
pub fn write_csv(path: &Path, data: &TwoBlockData) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(data.x_names().iter().chain(data.y_names())).map_err(csv_err)?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .x()
            .row(i)
            .iter()
            .chain(data.y().row(i).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    fn spec(x: &[&str], y: &[&str]) -> BlockSpec {
        BlockSpec {
            x_columns: strings(x),
            y_columns: strings(y),
            ..Default::default()
        }
    }

    const BASIC: &str = "a,b,c,d,g\n1,2,3,0.5,lo\n2,1,5,0.25,hi\n4,3,4,1.5,lo\n3,5,1,2,hi\n";

    #[test]
    fn loads_blocks_in_spec_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", BASIC);
        let mut s = spec(&["b", "a"], &["c", "d"]);
        s.supplementary_columns = strings(&["g"]);
        let ds = load_csv(&path, &s).unwrap();
        assert_eq!(ds.data.n(), 4);
        assert_eq!(ds.data.x_names(), strings(&["b", "a"]).as_slice());
        assert_eq!(ds.data.x()[(2, 1)], 4.0);
        assert_eq!(ds.supplementary("g").unwrap().values, strings(&["lo", "hi", "lo", "hi"]));
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "d.csv", BASIC);
        match load_csv(&path, &spec(&["a"], &["zz"])) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "zz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_tokens_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for token in ["", "NA", "NaN"] {
            let body = format!("a,b\n1,2\n2,{token}\n3,1\n4,4\n");
            let path = write(&dir, "m.csv", &body);
            match load_csv(&path, &spec(&["a"], &["b"])) {
                Err(Error::MissingValue { row, column }) => {
                    assert_eq!((row, column.as_str()), (2, "b"))
                }
                other => panic!("{token:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn non_numeric_reports_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "n.csv", "a,b\n1,2\n2,3\nx7,1\n");
        match load_csv(&path, &spec(&["a"], &["b"])) {
            Err(Error::NonNumeric { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "a", "x7"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_rows_and_constant_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.csv", "a,b\n1,2\n2,3\n");
        assert!(matches!(load_csv(&path, &spec(&["a"], &["b"])), Err(Error::Data(_))));
        let path = write(&dir, "c.csv", "a,b\n1,2\n2,2\n3,2\n");
        match load_csv(&path, &spec(&["a"], &["b"])) {
            Err(Error::ZeroVariance(c)) => assert_eq!(c, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_csv(Path::new("/nonexistent/file.csv"), &spec(&["a"], &["b"]));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn quoted_fields_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "q.csv", "\"a\",\"b c\"\n\"1\",2\n2,\"3\"\n3,5\n");
        let ds = load_csv(&path, &spec(&["a"], &["b c"])).unwrap();
        assert_eq!(ds.data.y()[(1, 0)], 3.0);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(&[], &["a"]).validate().is_err());
        assert!(spec(&["a"], &["a"]).validate().is_err());
        let mut s = spec(&["a"], &["b"]);
        s.transforms = vec![Transform {
            column: "q".into(),
            op: TransformOp::Sqrt,
        }];
        assert!(s.validate().is_err());
        let mut s = spec(&["a"], &["b"]);
        s.indicator_columns = strings(&["z"]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_from_json_and_toml() {
        let dir = tempfile::tempdir().unwrap();
        let json = write(
            &dir,
            "s.json",
            r#"{"x_columns":["a"],"y_columns":["b","g"],"indicator_columns":["g"],"transforms":[{"column":"a","op":"reciprocal"}]}"#,
        );
        let toml = write(
            &dir,
            "s.toml",
            "x_columns = [\"a\"]\ny_columns = [\"b\", \"g\"]\nindicator_columns = [\"g\"]\n\n[[transforms]]\ncolumn = \"a\"\nop = \"reciprocal\"\n",
        );
        let a = BlockSpec::from_path(&json).unwrap();
        let b = BlockSpec::from_path(&toml).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transforms[0].op, TransformOp::Reciprocal);
        let bad = write(&dir, "bad.json", r#"{"x_columns":["a"]}"#);
        assert!(matches!(BlockSpec::from_path(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn indicator_expansion() {
        let ind = indicators_from_categorical("g", &strings(&["a", "b", "a"])).unwrap();
        assert_eq!(ind.names, strings(&["g_a", "g_b"]));
        assert_eq!(ind.matrix.column(0).as_slice(), &[1.0, 0.0, 1.0]);
        assert_eq!(ind.matrix.column(1).as_slice(), &[0.0, 1.0, 0.0]);
        let three = indicators_from_categorical("s", &strings(&["u", "w", "m", "w", "u", "m"])).unwrap();
        assert_eq!(three.levels, strings(&["u", "w", "m"]));
        for i in 0..6 {
            assert_eq!(three.matrix.row(i).sum(), 1.0);
        }
        assert!(matches!(
            indicators_from_categorical("g", &strings(&["a", "a"])),
            Err(Error::Data(_))
        ));
        let many: Vec<String> = (0..51).map(|i| i.to_string()).collect();
        assert!(indicators_from_categorical("g", &many).is_err());
    }

    #[test]
    fn indicators_loaded_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "i.csv", BASIC);
        let mut s = spec(&["a", "b"], &["g", "c"]);
        s.indicator_columns = strings(&["g"]);
        let ds = load_csv(&path, &s).unwrap();
        assert_eq!(ds.data.y_names(), strings(&["g_lo", "g_hi", "c"]).as_slice());
        for i in 0..4 {
            assert_eq!(ds.data.y()[(i, 0)] + ds.data.y()[(i, 1)], 1.0);
        }
    }

    #[test]
    fn transforms_rename_and_check_domain() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "t.csv", "a,b,c\n4,2,1\n9,4,2\n16,5,3\n");
        let mut s = spec(&["a", "c"], &["b"]);
        s.transforms = vec![
            Transform {
                column: "a".into(),
                op: TransformOp::Sqrt,
            },
            Transform {
                column: "b".into(),
                op: TransformOp::Reciprocal,
            },
            Transform {
                column: "c".into(),
                op: TransformOp::Identity,
            },
        ];
        let ds = load_csv(&path, &s).unwrap();
        assert_eq!(ds.data.x_names(), strings(&["sqrt_a", "c"]).as_slice());
        assert_eq!(ds.data.y_names(), strings(&["recip_b"]).as_slice());
        assert_eq!(ds.data.x().column(0).as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(ds.data.y().column(0).as_slice(), &[0.5, 0.25, 0.2]);
        assert_eq!(ds.data.x().column(1).as_slice(), &[1.0, 2.0, 3.0]);

        let neg = write(&dir, "neg.csv", "a,b\n4,2\n-1,4\n16,5\n");
        let mut s = spec(&["a"], &["b"]);
        s.transforms = vec![Transform {
            column: "a".into(),
            op: TransformOp::Sqrt,
        }];
        assert!(matches!(load_csv(&neg, &s), Err(Error::Domain { row: 2, .. })));
        let zero = write(&dir, "zero.csv", "a,b\n4,2\n1,0\n16,5\n");
        let mut s = spec(&["a"], &["b"]);
        s.transforms = vec![Transform {
            column: "b".into(),
            op: TransformOp::Reciprocal,
        }];
        assert!(matches!(load_csv(&zero, &s), Err(Error::Domain { row: 2, .. })));
    }

    #[test]
    fn identity_transform_is_noop() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        let y = DMatrix::from_row_slice(3, 1, &[2.0, 4.0, 1.0]);
        let d = TwoBlockData::new(x, y, strings(&["a"]), strings(&["b"])).unwrap();
        let t = apply_transforms(
            &d,
            &[Transform {
                column: "b".into(),
                op: TransformOp::Identity,
            }],
        )
        .unwrap();
        assert_eq!(t.y(), d.y());
        assert_eq!(t.y_names(), d.y_names());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = DMatrix::from_fn(6, 2, |i, j| ((i * 7 + j * 3) as f64).sin() / 3.0);
        let y = DMatrix::from_fn(6, 3, |i, j| ((i * 5 + j * 11) as f64).cos() * 1e3);
        let d = TwoBlockData::new(x, y, strings(&["x1", "x2"]), strings(&["y1", "y2", "y3"])).unwrap();
        let path = dir.path().join("rt.csv");
        write_csv(&path, &d).unwrap();
        let back = load_csv(&path, &spec(&["x1", "x2"], &["y1", "y2", "y3"])).unwrap();
        assert!((back.data.x() - d.x()).abs().max() <= 1e-12);
        assert!((back.data.y() - d.y()).abs().max() <= 1e-12);
    }
}
