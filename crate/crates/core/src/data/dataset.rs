use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{ColumnKind, ColumnRole, ColumnSpec, Schema};
use super::DataError;

/// Cell text treated as a missing value.
pub fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA" | "NaN" | "nan")
}

/// Rows of raw cell text plus the mapped target (`true` = positive) and
/// sensitive group (`true` = advantaged) of each row.
///
/// Raw text is kept verbatim so that a load/write cycle reproduces the input
/// rows exactly. Numeric feature cells are validated at construction and
/// parsed again by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    rows: Vec<Vec<String>>,
    labels: Vec<bool>,
    groups: Vec<bool>,
    dropped_rows: usize,
}

impl TabularDataset {
    /// Builds a dataset from raw rows laid out in schema order.
    ///
    /// Rows with a missing target or sensitive value are dropped and counted
    /// in [`TabularDataset::dropped_rows`].
    pub fn from_rows(schema: Schema, raw_rows: Vec<Vec<String>>) -> Result<Self, DataError> {
        let target_idx = schema.target_index();
        let sensitive_idx = schema.sensitive_index();
        let numeric: Vec<usize> = schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Feature && c.kind == ColumnKind::Numeric)
            .map(|(i, _)| i)
            .collect();

        let mut rows = Vec::with_capacity(raw_rows.len());
        let mut labels = Vec::with_capacity(raw_rows.len());
        let mut groups = Vec::with_capacity(raw_rows.len());
        let mut dropped_rows = 0;
        for (line, row) in raw_rows.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(DataError::RowLength {
                    row: line,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            if is_missing(&row[target_idx]) || is_missing(&row[sensitive_idx]) {
                dropped_rows += 1;
                continue;
            }
            let label = map_value(schema.target(), &row[target_idx], line)?;
            let group = map_value(schema.sensitive(), &row[sensitive_idx], line)?;
            for &c in &numeric {
                let cell = &row[c];
                if !is_missing(cell) && !parse_number(cell).is_some_and(f64::is_finite) {
                    return Err(DataError::InvalidNumber {
                        column: schema.columns()[c].name.clone(),
                        row: line,
                        value: cell.clone(),
                    });
                }
            }
            rows.push(row);
            labels.push(label);
            groups.push(group);
        }
        if rows.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if dropped_rows > 0 {
            log::warn!("dropped {dropped_rows} rows with a missing target or sensitive value");
        }
        Ok(Self {
            schema,
            rows,
            labels,
            groups,
            dropped_rows,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn cell(&self, row: usize, column: usize) -> &str {
        &self.rows[row][column]
    }

    /// Target labels, `true` for the positive class.
    pub fn y(&self) -> &[bool] {
        &self.labels
    }

    /// Sensitive groups, `true` for the advantaged group.
    pub fn s(&self) -> &[bool] {
        &self.groups
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Indices `0..n`.
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    /// Dataset restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            dropped_rows: 0,
        }
    }

    /// Raw text written into the target column when a label becomes negative.
    ///
    /// Uses the declared `negative_value`, else the first non-positive value
    /// present in the data.
    pub fn negative_label_text(&self) -> String {
        let target = self.schema.target();
        if let Some(neg) = &target.negative_value {
            return neg.clone();
        }
        let t = self.schema.target_index();
        self.labels
            .iter()
            .position(|&positive| !positive)
            .map(|i| self.rows[i][t].clone())
            .unwrap_or_else(|| format!("not-{}", target.positive_value.as_deref().unwrap_or("")))
    }

    /// Copy with the labels of `rows_to_negate` set to the negative class.
    pub fn with_negated_labels(&self, rows_to_negate: &[usize]) -> Self {
        let negative = self.negative_label_text();
        let t = self.schema.target_index();
        let mut out = self.clone();
        for &i in rows_to_negate {
            out.labels[i] = false;
            out.rows[i][t] = negative.clone();
        }
        out
    }

    /// Copy with a numeric feature column appended.
    pub fn with_numeric_column(&self, name: &str, values: &[f64]) -> Result<Self, DataError> {
        assert_eq!(values.len(), self.n(), "one value per row");
        let schema = self.schema.with_column(ColumnSpec::numeric(name))?;
        let mut out = self.clone();
        out.schema = schema;
        for (row, v) in out.rows.iter_mut().zip(values) {
            row.push(format!("{v}"));
        }
        Ok(out)
    }

    /// Copy with the named columns removed from both schema and rows.
    pub fn without_columns(&self, names: &[String]) -> Result<Self, DataError> {
        let keep: Vec<usize> = self
            .schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, c)| !names.contains(&c.name))
            .map(|(i, _)| i)
            .collect();
        let schema = self.schema.without_columns(names)?;
        let rows = self
            .rows
            .iter()
            .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
            .collect();
        Ok(Self {
            schema,
            rows,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            dropped_rows: self.dropped_rows,
        })
    }

    /// Copy where the roles of existing columns are replaced.
    ///
    /// Used to switch the sensitive attribute or to hide columns from the
    /// learner without rewriting the data.
    pub fn with_schema(&self, schema: Schema) -> Result<Self, DataError> {
        if schema.len() != self.schema.len()
            || schema
                .columns()
                .iter()
                .zip(self.schema.columns())
                .any(|(a, b)| a.name != b.name)
        {
            return Err(DataError::SchemaMismatch(
                "replacement schema must list the same columns in the same order".into(),
            ));
        }
        Self::from_rows(schema, self.rows.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| DataError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub(crate) fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

fn map_value(spec: &ColumnSpec, raw: &str, row: usize) -> Result<bool, DataError> {
    let value = raw.trim();
    let (hit, other) = match spec.role {
        ColumnRole::Target => (&spec.positive_value, &spec.negative_value),
        _ => (&spec.advantaged_value, &spec.disadvantaged_value),
    };
    if hit.as_deref() == Some(value) {
        return Ok(true);
    }
    match other {
        Some(o) if o != value => Err(DataError::UnmappableValue {
            column: spec.name.clone(),
            row,
            value: value.to_string(),
        }),
        _ => Ok(false),
    }
}

/// Reads a comma-delimited UTF-8 CSV with a header row.
///
/// Columns are matched to the schema by name; header columns not named in the
/// schema are skipped.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<TabularDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut positions = Vec::with_capacity(schema.len());
    for col in schema.columns() {
        match header.iter().position(|h| *h == col.name) {
            Some(p) => positions.push(p),
            None => return Err(DataError::MissingColumn(col.name.clone())),
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        rows.push(
            positions
                .iter()
                .map(|&p| record.get(p).unwrap_or("").to_string())
                .collect(),
        );
    }
    TabularDataset::from_rows(schema.clone(), rows)
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<TabularDataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::numeric("x"),
            ColumnSpec::categorical("c"),
            ColumnSpec::target("y", "yes", Some("no")),
            ColumnSpec::sensitive("s", "m", None),
        ])
        .unwrap()
    }

    #[test]
    fn two_row_file() {
        let csv = "x,c,y,s\n1.5,u,yes,m\n2,v,no,f\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.y(), &[true, false]);
        assert_eq!(ds.s(), &[true, false]);
    }

    #[test]
    fn undeclared_target_value() {
        let csv = "x,c,y,s\n1,u,maybe,m\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::UnmappableValue { ref column, .. }) if column == "y"
        ));
    }

    #[test]
    fn missing_column_named() {
        let csv = "x,y,s\n1,yes,m\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::MissingColumn(ref c)) if c == "c"
        ));
    }

    #[test]
    fn rows_missing_target_are_dropped() {
        let csv = "x,c,y,s\n1,u,,m\n2,v,no,?\n3,w,yes,m\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.dropped_rows(), 2);
    }

    #[test]
    fn all_rows_dropped_is_empty() {
        let csv = "x,c,y,s\n1,u,,m\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::EmptyDataset)
        ));
        let header_only = "x,c,y,s\n";
        assert!(matches!(
            read_csv(header_only.as_bytes(), &schema()),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn bad_number_rejected() {
        let csv = "x,c,y,s\nabc,u,yes,m\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::InvalidNumber { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_verbatim() {
        let csv = "x,c,y,s\n1.50,u,yes,m\n?,v,no,f\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);
    }

    #[test]
    fn negation_rewrites_raw_target() {
        let csv = "x,c,y,s\n1,u,yes,f\n2,v,yes,m\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        let flipped = ds.with_negated_labels(&[0]);
        assert_eq!(flipped.y(), &[false, true]);
        assert_eq!(flipped.cell(0, 2), "no");
        assert_eq!(ds.y(), &[true, true]);
    }
}
