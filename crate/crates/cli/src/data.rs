use std::collections::HashMap;
use std::path::Path;

use envdiag::Dataset;

use crate::{AppError, AppResult};

/// Which columns of a CSV file play which role.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub response: String,
    /// Empty means every column other than the response and group.
    pub predictors: Vec<String>,
    pub group: Option<String>,
}

/// A dataset read from CSV, with the original group labels in code order.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub predictors: Vec<String>,
    pub group_labels: Vec<String>,
}

/// Reads `path` (UTF-8, header row) into a dataset with an intercept column
/// prepended. Group labels are re-encoded `0..G` in order of appearance.
pub fn load_csv(path: &Path, spec: &ColumnSpec) -> AppResult<LoadedData> {
    let csv_err = |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(AppError::EmptyFile { path: path.to_path_buf() });
    }
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| AppError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let response = column(&spec.response)?;
    let group = spec.group.as_deref().map(column).transpose()?;
    let predictors: Vec<String> = if spec.predictors.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != response && Some(i) != group)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        spec.predictors.clone()
    };
    let pred_idx: Vec<usize> = predictors.iter().map(|p| column(p)).collect::<AppResult<_>>()?;

    let mut y = Vec::new();
    let mut cols = vec![Vec::new(); pred_idx.len()];
    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut group_labels = Vec::new();
    let mut groups = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = r + 1;
        let number = |i: usize| -> AppResult<f64> {
            let cell = record.get(i).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(AppError::NonNumericCell {
                    path: path.to_path_buf(),
                    row,
                    column: header[i].clone(),
                    value: cell.to_string(),
                }),
            }
        };
        y.push(number(response)?);
        for (col, &i) in cols.iter_mut().zip(&pred_idx) {
            col.push(number(i)?);
        }
        if let Some(g) = group {
            let label = record.get(g).unwrap_or("").to_string();
            let next = codes.len();
            let code = *codes.entry(label.clone()).or_insert_with(|| {
                group_labels.push(label);
                next
            });
            groups.push(code);
        }
    }
    if y.is_empty() {
        return Err(AppError::EmptyFile { path: path.to_path_buf() });
    }
    let dataset = Dataset::with_intercept(y, &cols, group.map(|_| groups))?;
    Ok(LoadedData {
        dataset,
        predictors,
        group_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn spec(group: Option<&str>) -> ColumnSpec {
        ColumnSpec {
            response: "y".into(),
            predictors: vec![],
            group: group.map(str::to_string),
        }
    }

    #[test]
    fn three_rows_two_columns() {
        let f = file("y,x\n1,0\n2,1\n4,2\n");
        let d = load_csv(f.path(), &spec(None)).unwrap().dataset;
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y(), &[1.0, 2.0, 4.0]);
        assert_eq!(d.x()[(2, 0)], 1.0);
        assert_eq!(d.x()[(2, 1)], 2.0);
    }

    #[test]
    fn na_cell_is_reported_with_coordinates() {
        let f = file("y,x\n1,0\n2,NA\n4,2\n");
        match load_csv(f.path(), &spec(None)).unwrap_err() {
            AppError::NonNumericCell { row, column, value, .. } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "x", "NA"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn group_labels_are_re_encoded() {
        let f = file("y,x,site\n1,0,s1\n2,1,s2\n4,2,s1\n3,3,s2\n");
        let out = load_csv(f.path(), &spec(Some("site"))).unwrap();
        assert_eq!(out.dataset.group().unwrap(), &[0, 1, 0, 1]);
        assert_eq!(out.group_labels, vec!["s1", "s2"]);
        assert_eq!(out.predictors, vec!["x"]);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let f = file("y,x\n1,0\n2,1\n4,2\n");
        let mut s = spec(None);
        s.predictors = vec!["z".into()];
        assert!(matches!(load_csv(f.path(), &s), Err(AppError::MissingColumn { column, .. }) if column == "z"));
        let f = file("");
        assert!(matches!(load_csv(f.path(), &spec(None)), Err(AppError::EmptyFile { .. })));
        let f = file("y,x\n");
        assert!(matches!(load_csv(f.path(), &spec(None)), Err(AppError::EmptyFile { .. })));
    }
}
