use std::io::{Read, Write};
use std::path::Path;

use super::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Reads a headed, comma-separated file.
///
/// A column whose first cell parses as a number is numeric, and every later
/// cell must parse too. Any other column is categorical and its strings are
/// coded in first-appearance order, as are the labels.
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, &name, label)
}

pub fn read_csv<R: Read>(reader: R, name: &str, label: &LabelColumn) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = match label {
        LabelColumn::Last => headers.len().checked_sub(1),
        LabelColumn::Index(i) => (*i < headers.len()).then_some(*i),
        LabelColumn::Name(n) => headers.iter().position(|h| h == n),
    }
    .ok_or_else(|| Error::validation(format!("label column {label:?} not found in header")))?;
    if headers.len() < 2 {
        return Err(Error::validation("need at least one feature column and a label column"));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    let m = feature_cols.len();

    let mut kinds: Vec<Option<FeatureKind>> = vec![None; m];
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); m];
    let mut class_names: Vec<String> = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Missing {
                row,
                column: headers.get(record.len()).cloned().unwrap_or_default(),
            });
        }
        for (f, &c) in feature_cols.iter().enumerate() {
            let cell = record[c].trim();
            if cell.is_empty() {
                return Err(Error::Missing {
                    row,
                    column: headers[c].clone(),
                });
            }
            let kind = *kinds[f].get_or_insert_with(|| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => FeatureKind::Numeric,
                _ => FeatureKind::Categorical,
            });
            let value = match kind {
                FeatureKind::Numeric => match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Parse {
                            row,
                            column: headers[c].clone(),
                            message: format!("'{cell}' is not a finite number"),
                        })
                    }
                },
                FeatureKind::Categorical => code_of(&mut categories[f], cell) as f64,
            };
            x.push(value);
        }
        let cell = record[label_idx].trim();
        if cell.is_empty() {
            return Err(Error::Missing {
                row,
                column: headers[label_idx].clone(),
            });
        }
        y.push(code_of(&mut class_names, cell));
    }
    if y.is_empty() {
        return Err(Error::validation("file has no data rows"));
    }
    if class_names.len() < 2 {
        return Err(Error::validation(format!(
            "label column '{}' holds a single class",
            headers[label_idx]
        )));
    }
    let ds = Dataset {
        name: name.to_string(),
        x,
        y,
        n_features: m,
        n_classes: class_names.len(),
        feature_kinds: kinds.into_iter().map(|k| k.unwrap_or(FeatureKind::Numeric)).collect(),
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        categories,
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}

fn code_of(codes: &mut Vec<String>, cell: &str) -> usize {
    match codes.iter().position(|c| c == cell) {
        Some(i) => i,
        None => {
            codes.push(cell.to_string());
            codes.len() - 1
        }
    }
}

/// Writes features then the label as the last column. Numeric values use the
/// shortest representation that parses back to the same bits.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, std::io::BufWriter::new(file))
}

pub fn write_csv_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    let mut cells: Vec<String> = Vec::with_capacity(ds.n_features + 1);
    for i in 0..ds.n_rows() {
        cells.clear();
        for (j, &v) in ds.row(i).iter().enumerate() {
            cells.push(match ds.feature_kinds[j] {
                FeatureKind::Numeric => format!("{v}"),
                FeatureKind::Categorical => ds.categories[j]
                    .get(v as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("{v}")),
            });
        }
        cells.push(
            ds.class_names
                .get(ds.y[i])
                .cloned()
                .unwrap_or_else(|| ds.y[i].to_string()),
        );
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), "t", &LabelColumn::Name("label".into()))
    }

    #[test]
    fn labels_coded_in_first_appearance_order() {
        let ds = parse("f,label\n1,a\n2,b\n3,a\n4,b\n").unwrap();
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.y, vec![0, 1, 0, 1]);
        assert_eq!(ds.feature_kinds, vec![FeatureKind::Numeric]);
    }

    #[test]
    fn categorical_columns_get_codes() {
        let ds = parse("color,size,label\nred,1,x\nblue,2,y\nred,3,x\n").unwrap();
        assert_eq!(ds.feature_kinds[0], FeatureKind::Categorical);
        assert_eq!(ds.row(1), &[1.0, 2.0]);
        assert_eq!(ds.categories[0], vec!["red", "blue"]);
    }

    #[test]
    fn empty_cell_names_position() {
        let err = parse("f,g,label\n1,2,a\n3,,b\n").unwrap_err();
        match err {
            Error::Missing { row, column } => {
                assert_eq!(row, 1);
                assert_eq!(column, "g");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_in_numeric_column() {
        assert!(matches!(
            parse("f,label\n1,a\nzz,b\n"),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(parse("f,label\n1,a\n2,a\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn numeric_round_trip_is_bit_exact() {
        let mut rng = crate::seed::rng(3);
        let n = 1000;
        let x: Vec<f64> = (0..n * 4)
            .map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-8..8)) - 0.5)
            .collect();
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = Dataset::from_numeric("rt", x, 4, y, 3).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "rt", &LabelColumn::Last).unwrap();
        assert!(back.feature_kinds.iter().all(|k| *k == FeatureKind::Numeric));
        assert_eq!(back.y, ds.y);
        for (a, b) in back.x.iter().zip(&ds.x) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
