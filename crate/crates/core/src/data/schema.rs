use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Target,
    Sensitive,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// One column of a tabular dataset and how it participates in learning.
///
/// `positive_value` is set only on the target column and `advantaged_value`
/// only on the sensitive column. The optional `negative_value` and
/// `disadvantaged_value` close the mapping: when present, any other value in
/// that column is rejected at load time; when absent, every non-matching value
/// maps to the negative class (or the disadvantaged group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantaged_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disadvantaged_value: Option<String>,
}

impl ColumnSpec {
    pub fn feature(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            role: ColumnRole::Feature,
            kind,
            positive_value: None,
            negative_value: None,
            advantaged_value: None,
            disadvantaged_value: None,
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        Self::feature(name, ColumnKind::Numeric)
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self::feature(name, ColumnKind::Categorical)
    }

    pub fn ignored(name: impl Into<String>) -> Self {
        Self {
            role: ColumnRole::Ignored,
            ..Self::feature(name, ColumnKind::Categorical)
        }
    }

    pub fn target(
        name: impl Into<String>,
        positive: impl Into<String>,
        negative: Option<&str>,
    ) -> Self {
        Self {
            role: ColumnRole::Target,
            positive_value: Some(positive.into()),
            negative_value: negative.map(str::to_string),
            ..Self::feature(name, ColumnKind::Categorical)
        }
    }

    pub fn sensitive(
        name: impl Into<String>,
        advantaged: impl Into<String>,
        disadvantaged: Option<&str>,
    ) -> Self {
        Self {
            role: ColumnRole::Sensitive,
            advantaged_value: Some(advantaged.into()),
            disadvantaged_value: disadvantaged.map(str::to_string),
            ..Self::feature(name, ColumnKind::Categorical)
        }
    }
}

/// Validated list of column specifications.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, DataError> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<(), DataError> {
        let invalid = |msg: String| Err(DataError::InvalidSchema(msg));
        let targets = self.count_role(ColumnRole::Target);
        let sensitives = self.count_role(ColumnRole::Sensitive);
        if targets != 1 {
            return invalid(format!("expected exactly one target column, found {targets}"));
        }
        if sensitives != 1 {
            return invalid(format!(
                "expected exactly one sensitive column, found {sensitives}"
            ));
        }
        for (i, col) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|c| c.name == col.name) {
                return invalid(format!("duplicate column name `{}`", col.name));
            }
            let is_target = col.role == ColumnRole::Target;
            let is_sensitive = col.role == ColumnRole::Sensitive;
            if col.positive_value.is_some() != is_target {
                return invalid(format!(
                    "column `{}`: positive_value must be set exactly on the target",
                    col.name
                ));
            }
            if col.negative_value.is_some() && !is_target {
                return invalid(format!(
                    "column `{}`: negative_value is only valid on the target",
                    col.name
                ));
            }
            if col.advantaged_value.is_some() != is_sensitive {
                return invalid(format!(
                    "column `{}`: advantaged_value must be set exactly on the sensitive column",
                    col.name
                ));
            }
            if col.disadvantaged_value.is_some() && !is_sensitive {
                return invalid(format!(
                    "column `{}`: disadvantaged_value is only valid on the sensitive column",
                    col.name
                ));
            }
        }
        Ok(())
    }

    fn count_role(&self, role: ColumnRole) -> usize {
        self.columns.iter().filter(|c| c.role == role).count()
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .expect("validated schema has a target")
    }

    pub fn sensitive_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Sensitive)
            .expect("validated schema has a sensitive column")
    }

    pub fn target(&self) -> &ColumnSpec {
        &self.columns[self.target_index()]
    }

    pub fn sensitive(&self) -> &ColumnSpec {
        &self.columns[self.sensitive_index()]
    }

    /// Indices of feature columns, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Feature)
            .map(|(i, _)| i)
            .collect()
    }

    /// Returns a copy with one more column appended.
    pub fn with_column(&self, spec: ColumnSpec) -> Result<Self, DataError> {
        let mut columns = self.columns.clone();
        columns.push(spec);
        Self::new(columns)
    }

    /// Returns a copy where the named columns are removed.
    pub fn without_columns(&self, names: &[String]) -> Result<Self, DataError> {
        Self::new(
            self.columns
                .iter()
                .filter(|c| !names.contains(&c.name))
                .cloned()
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let columns: Vec<ColumnSpec> = serde_json::from_str(text)
            .map_err(|e| DataError::InvalidSchema(format!("schema JSON: {e}")))?;
        Self::new(columns)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.columns).expect("schema serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_json() + "\n").map_err(|e| DataError::io(path, e))
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let columns = Vec::<ColumnSpec>::deserialize(de)?;
        Schema::new(columns).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basic() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::numeric("x"),
            ColumnSpec::target("y", "1", Some("0")),
            ColumnSpec::sensitive("s", "a", None),
        ]
    }

    #[test]
    fn accepts_minimal_schema() {
        let schema = Schema::new(basic()).unwrap();
        assert_eq!(schema.target_index(), 1);
        assert_eq!(schema.sensitive_index(), 2);
        assert_eq!(schema.feature_indices(), vec![0]);
    }

    #[test]
    fn rejects_two_targets() {
        let mut cols = basic();
        cols.push(ColumnSpec::target("y2", "1", None));
        assert!(matches!(Schema::new(cols), Err(DataError::InvalidSchema(_))));
    }

    #[test]
    fn rejects_missing_sensitive() {
        let mut cols = basic();
        cols.pop();
        assert!(Schema::new(cols).is_err());
    }

    #[test]
    fn rejects_positive_value_on_feature() {
        let mut cols = basic();
        cols[0].positive_value = Some("1".into());
        assert!(Schema::new(cols).is_err());
    }

    #[test]
    fn json_field_names_match_type() {
        let schema = Schema::new(basic()).unwrap();
        let json = schema.to_json();
        assert!(json.contains("\"positive_value\": \"1\""));
        assert!(json.contains("\"advantaged_value\": \"a\""));
        assert!(json.contains("\"role\": \"sensitive\""));
        assert_eq!(Schema::from_json(&json).unwrap(), schema);
    }
}
