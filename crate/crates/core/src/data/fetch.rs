//! Benchmark dataset download and normalization.
//!
//! Each benchmark is fetched from its public source, normalized into a CSV
//! with a header row, and written next to one schema file per supported
//! sensitive attribute. Nothing is left behind in the output directory when
//! any step fails.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::is_missing;
use super::schema::{ColumnSpec, Schema};
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Adult,
    German,
    Compas,
    Crime,
}

struct RawFile {
    file: &'static str,
    url: &'static str,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Adult,
        Benchmark::German,
        Benchmark::Compas,
        Benchmark::Crime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Adult => "adult",
            Benchmark::German => "german",
            Benchmark::Compas => "compas",
            Benchmark::Crime => "crime",
        }
    }

    fn raw_files(self) -> &'static [RawFile] {
        match self {
            Benchmark::Adult => &[
                RawFile {
                    file: "adult.data",
                    url: "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data",
                },
                RawFile {
                    file: "adult.test",
                    url: "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.test",
                },
            ],
            Benchmark::German => &[RawFile {
                file: "german.data",
                url: "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data",
            }],
            Benchmark::Compas => &[RawFile {
                file: "compas-scores-two-years.csv",
                url: "https://raw.githubusercontent.com/propublica/compas-analysis/master/compas-scores-two-years.csv",
            }],
            Benchmark::Crime => &[
                RawFile {
                    file: "communities.data",
                    url: "https://archive.ics.uci.edu/ml/machine-learning-databases/communities/communities.data",
                },
                RawFile {
                    file: "communities.names",
                    url: "https://archive.ics.uci.edu/ml/machine-learning-databases/communities/communities.names",
                },
            ],
        }
    }

    /// Sensitive attributes with a bundled schema, default first.
    pub fn sensitive_attributes(self) -> &'static [&'static str] {
        match self {
            Benchmark::Adult => &["gender", "marital-status"],
            Benchmark::German => &["age"],
            Benchmark::Compas | Benchmark::Crime => &["race"],
        }
    }

    pub fn data_file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    /// `adult.schema.json` for the default attribute,
    /// `adult.marital-status.schema.json` for the others.
    pub fn schema_file_name(self, sensitive: &str) -> String {
        if sensitive == self.sensitive_attributes()[0] {
            format!("{}.schema.json", self.name())
        } else {
            format!("{}.{sensitive}.schema.json", self.name())
        }
    }

    /// Bundled schema for one of [`Benchmark::sensitive_attributes`].
    pub fn schema(self, sensitive: &str) -> Option<Schema> {
        let cols = match (self, sensitive) {
            (Benchmark::Adult, "gender") => adult_schema(false),
            (Benchmark::Adult, "marital-status") => adult_schema(true),
            (Benchmark::German, "age") => german_schema(),
            (Benchmark::Compas, "race") => compas_schema(),
            // Crime's columns depend on the downloaded file.
            _ => return None,
        };
        Some(Schema::new(cols).expect("bundled schema is valid"))
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| DataError::UnknownDataset(s.to_string()))
    }
}

/// Where raw files come from.
#[derive(Debug, Clone, Default)]
pub enum FetchSource {
    #[default]
    Remote,
    /// Directory already holding the raw files under their upstream names.
    LocalDir(PathBuf),
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub source: FetchSource,
    /// Pinned SHA-256 (lowercase hex) per raw file name.
    pub checksums: BTreeMap<String, String>,
    pub timeout: Duration,
    /// Re-download even when outputs already exist.
    pub force: bool,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            source: FetchSource::Remote,
            checksums: BTreeMap::new(),
            timeout: Duration::from_secs(60),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub data_path: PathBuf,
    pub schema_paths: Vec<PathBuf>,
    /// Outputs already existed and were left untouched.
    pub skipped: bool,
}

pub fn fetch_dataset(
    name: Benchmark,
    out_dir: &Path,
    options: &FetchOptions,
) -> Result<FetchOutcome, DataError> {
    let data_path = out_dir.join(name.data_file_name());
    let schema_paths: Vec<PathBuf> = name
        .sensitive_attributes()
        .iter()
        .map(|s| out_dir.join(name.schema_file_name(s)))
        .collect();
    let non_empty = |p: &Path| fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false);
    if !options.force && non_empty(&data_path) && schema_paths.iter().all(|p| non_empty(p)) {
        return Ok(FetchOutcome {
            data_path,
            schema_paths,
            skipped: true,
        });
    }

    let mut raw = HashMap::new();
    for file in name.raw_files() {
        let bytes = match &options.source {
            FetchSource::Remote => download(file.url, options.timeout)?,
            FetchSource::LocalDir(dir) => {
                let p = dir.join(file.file);
                fs::read(&p).map_err(|e| DataError::io(&p, e))?
            }
        };
        if bytes.is_empty() {
            return Err(DataError::Network(format!("{} is empty", file.file)));
        }
        if let Some(expected) = options.checksums.get(file.file) {
            let actual = sha256_hex(&bytes);
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(DataError::ChecksumMismatch {
                    file: file.file.to_string(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        raw.insert(file.file, bytes);
    }

    let normalized = normalize(name, &raw)?;
    fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;
    let mut outputs: Vec<(PathBuf, String)> = vec![(data_path.clone(), normalized.csv)];
    for ((sensitive, schema), path) in normalized.schemas.iter().zip(&schema_paths) {
        debug_assert_eq!(path, &out_dir.join(name.schema_file_name(sensitive)));
        outputs.push((path.clone(), schema.to_json() + "\n"));
    }
    write_all_or_nothing(&outputs)?;
    Ok(FetchOutcome {
        data_path,
        schema_paths,
        skipped: false,
    })
}

fn download(url: &str, timeout: Duration) -> Result<Vec<u8>, DataError> {
    let response = ureq::get(url)
        .timeout(timeout)
        .call()
        .map_err(|e| DataError::Network(format!("{url}: {e}")))?;
    let mut bytes = Vec::new();
    response
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| DataError::Network(format!("{url}: {e}")))?;
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes each file to a temporary sibling, then renames all of them. Any
/// failure removes every file this call created.
fn write_all_or_nothing(outputs: &[(PathBuf, String)]) -> Result<(), DataError> {
    let mut temps = Vec::new();
    let result = (|| {
        for (path, content) in outputs {
            let tmp = path.with_extension("partial");
            temps.push(tmp.clone());
            fs::write(&tmp, content).map_err(|e| DataError::io(&tmp, e))?;
        }
        for ((path, _), tmp) in outputs.iter().zip(&temps) {
            fs::rename(tmp, path).map_err(|e| DataError::io(path, e))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for tmp in &temps {
            let _ = fs::remove_file(tmp);
        }
        for (path, _) in outputs {
            let _ = fs::remove_file(path);
        }
    }
    result
}

struct Normalized {
    csv: String,
    schemas: Vec<(String, Schema)>,
}

fn normalize(name: Benchmark, raw: &HashMap<&str, Vec<u8>>) -> Result<Normalized, DataError> {
    let text = |file: &str| -> Result<String, DataError> {
        String::from_utf8(raw[file].clone())
            .map_err(|_| DataError::Normalize(format!("{file} is not UTF-8")))
    };
    let (header, rows) = match name {
        Benchmark::Adult => normalize_adult(&text("adult.data")?, &text("adult.test")?)?,
        Benchmark::German => normalize_german(&text("german.data")?)?,
        Benchmark::Compas => normalize_compas(&text("compas-scores-two-years.csv")?)?,
        Benchmark::Crime => {
            let (header, rows, schema) =
                normalize_crime(&text("communities.data")?, &text("communities.names")?)?;
            return Ok(Normalized {
                csv: to_csv(&header, &rows)?,
                schemas: vec![("race".into(), schema)],
            });
        }
    };
    let schemas = name
        .sensitive_attributes()
        .iter()
        .map(|s| (s.to_string(), name.schema(s).expect("bundled")))
        .collect();
    Ok(Normalized {
        csv: to_csv(&header, &rows)?,
        schemas,
    })
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String, DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| DataError::Normalize(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 cells"))
}

const ADULT_RAW: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

const ADULT_MARRIED: [&str; 3] = [
    "Married-civ-spouse",
    "Married-AF-spouse",
    "Married-spouse-absent",
];

fn adult_schema(marital_sensitive: bool) -> Vec<ColumnSpec> {
    use ColumnSpec as C;
    vec![
        C::numeric("age"),
        C::categorical("workclass"),
        C::numeric("fnlwgt"),
        C::categorical("education"),
        C::numeric("education-num"),
        if marital_sensitive {
            C::sensitive("marital-status", "Married", Some("Not-married"))
        } else {
            C::ignored("marital-status")
        },
        if marital_sensitive {
            C::ignored("marital-status-detail")
        } else {
            C::categorical("marital-status-detail")
        },
        C::categorical("occupation"),
        C::categorical("relationship"),
        C::categorical("race"),
        if marital_sensitive {
            C::categorical("gender")
        } else {
            C::sensitive("gender", "Male", Some("Female"))
        },
        C::numeric("capital-gain"),
        C::numeric("capital-loss"),
        C::numeric("hours-per-week"),
        C::categorical("native-country"),
        C::target("income", ">50K", Some("<=50K")),
    ]
}

/// Train and test files merged; rows with any missing value dropped; the
/// binary `marital-status` groups married statuses and the raw value moves
/// to `marital-status-detail`.
fn normalize_adult(train: &str, test: &str) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let header: Vec<String> = adult_schema(false).into_iter().map(|c| c.name).collect();
    let mut rows = Vec::new();
    for line in train.lines().chain(test.lines()) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != ADULT_RAW.len() {
            return Err(DataError::Normalize(format!(
                "adult: expected {} fields, found {} in `{line}`",
                ADULT_RAW.len(),
                cells.len()
            )));
        }
        if cells.iter().any(|c| is_missing(c)) {
            continue;
        }
        let marital = cells[5];
        let group = if ADULT_MARRIED.contains(&marital) {
            "Married"
        } else {
            "Not-married"
        };
        let income = cells[14].trim_end_matches('.');
        let mut row: Vec<String> = cells[..5].iter().map(|s| s.to_string()).collect();
        row.push(group.into());
        row.push(marital.into());
        row.extend(cells[6..14].iter().map(|s| s.to_string()));
        row.push(income.into());
        rows.push(row);
    }
    Ok((header, rows))
}

const GERMAN_RAW: [&str; 21] = [
    "status",
    "duration",
    "credit_history",
    "purpose",
    "amount",
    "savings",
    "employment_duration",
    "installment_rate",
    "personal_status_sex",
    "other_debtors",
    "present_residence",
    "property",
    "age",
    "other_installment_plans",
    "housing",
    "number_credits",
    "job",
    "people_liable",
    "telephone",
    "foreign_worker",
    "credit_risk",
];

fn german_schema() -> Vec<ColumnSpec> {
    use ColumnSpec as C;
    vec![
        C::categorical("status"),
        C::numeric("duration"),
        C::categorical("credit_history"),
        C::categorical("purpose"),
        C::numeric("amount"),
        C::categorical("savings"),
        C::categorical("employment_duration"),
        C::categorical("installment_rate"),
        C::ignored("personal_status_sex"),
        C::categorical("other_debtors"),
        C::categorical("present_residence"),
        C::categorical("property"),
        C::sensitive("age", "> 25", Some("<= 25")),
        C::ignored("age_years"),
        C::categorical("other_installment_plans"),
        C::categorical("housing"),
        C::categorical("number_credits"),
        C::categorical("job"),
        C::categorical("people_liable"),
        C::categorical("telephone"),
        C::ignored("foreign_worker"),
        C::target("credit_risk", "good", Some("bad")),
    ]
}

/// Space-separated Statlog codes; age binarized at 25 years.
fn normalize_german(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let header: Vec<String> = german_schema().into_iter().map(|c| c.name).collect();
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != GERMAN_RAW.len() {
            return Err(DataError::Normalize(format!(
                "german: expected {} fields, found {}",
                GERMAN_RAW.len(),
                cells.len()
            )));
        }
        let age: f64 = cells[12]
            .parse()
            .map_err(|_| DataError::Normalize(format!("german: bad age `{}`", cells[12])))?;
        let mut row: Vec<String> = cells[..12].iter().map(|s| s.to_string()).collect();
        row.push(if age > 25.0 { "> 25" } else { "<= 25" }.into());
        row.push(cells[12].into());
        row.extend(cells[13..20].iter().map(|s| s.to_string()));
        row.push(match cells[20] {
            "1" => "good".into(),
            "2" => "bad".into(),
            other => {
                return Err(DataError::Normalize(format!(
                    "german: unknown credit risk code `{other}`"
                )))
            }
        });
        rows.push(row);
    }
    Ok((header, rows))
}

fn compas_schema() -> Vec<ColumnSpec> {
    use ColumnSpec as C;
    vec![
        C::numeric("age"),
        C::categorical("c_charge_degree"),
        C::numeric("diff_custody"),
        C::numeric("diff_jail"),
        C::categorical("sex"),
        C::numeric("priors_count"),
        C::numeric("length_of_stay"),
        C::categorical("v_score_text"),
        C::sensitive("race", "Caucasian", Some("African-American")),
        C::target("two_year_recid", "0", Some("1")),
    ]
}

/// ProPublica's screening filters, restricted to Caucasian and
/// African-American defendants. Durations are in days.
fn normalize_compas(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let header: Vec<String> = compas_schema().into_iter().map(|c| c.name).collect();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let raw_header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize, DataError> {
        raw_header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let idx: HashMap<&str, usize> = [
        "age",
        "c_charge_degree",
        "race",
        "sex",
        "priors_count",
        "days_b_screening_arrest",
        "is_recid",
        "score_text",
        "v_score_text",
        "c_jail_in",
        "c_jail_out",
        "in_custody",
        "out_custody",
        "two_year_recid",
    ]
    .into_iter()
    .map(|n| col(n).map(|i| (n, i)))
    .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let r = record?;
        let get = |n: &str| r.get(idx[n]).unwrap_or("").trim();
        let Ok(days) = get("days_b_screening_arrest").parse::<f64>() else {
            continue;
        };
        if !(-30.0..=30.0).contains(&days)
            || get("is_recid") == "-1"
            || get("c_charge_degree") == "O"
            || get("score_text") == "N/A"
            || !matches!(get("race"), "Caucasian" | "African-American")
        {
            continue;
        }
        let jail_in = parse_datetime(get("c_jail_in"));
        let jail_out = parse_datetime(get("c_jail_out"));
        let diff_jail = match (jail_in, jail_out) {
            (Some(a), Some(b)) => format!("{}", (b - a).num_seconds() as f64 / 86_400.0),
            _ => String::new(),
        };
        let length_of_stay = match (jail_in, jail_out) {
            (Some(a), Some(b)) => format!("{}", (b.date() - a.date()).num_days()),
            _ => String::new(),
        };
        let diff_custody = match (parse_date(get("in_custody")), parse_date(get("out_custody"))) {
            (Some(a), Some(b)) => format!("{}", (b - a).num_days()),
            _ => String::new(),
        };
        rows.push(vec![
            get("age").to_string(),
            get("c_charge_degree").to_string(),
            diff_custody,
            diff_jail,
            get("sex").to_string(),
            get("priors_count").to_string(),
            length_of_stay,
            get("v_score_text").to_string(),
            get("race").to_string(),
            get("two_year_recid").to_string(),
        ]);
    }
    Ok((header, rows))
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok()
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

const CRIME_NON_PREDICTIVE: [&str; 5] = ["state", "county", "community", "communityname", "fold"];
const CRIME_TARGET: &str = "ViolentCrimesPerPop";
const CRIME_RACE_SOURCE: &str = "racePctWhite";

/// Numeric predictive columns with at most half missing values. The target
/// is "low" when the violent crime rate is at or below its median; the
/// sensitive `race` is "Caucasian" when the white share is at or above its
/// median.
fn normalize_crime(
    data: &str,
    names: &str,
) -> Result<(Vec<String>, Vec<Vec<String>>, Schema), DataError> {
    let attrs: Vec<String> = names
        .lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            (parts.next()? == "@attribute").then(|| parts.next().map(str::to_string))?
        })
        .collect();
    if attrs.is_empty() {
        return Err(DataError::Normalize("crime: no @attribute lines".into()));
    }
    let table: Vec<Vec<&str>> = data
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::trim).collect())
        .collect();
    if let Some(bad) = table.iter().find(|r| r.len() != attrs.len()) {
        return Err(DataError::Normalize(format!(
            "crime: expected {} fields, found {}",
            attrs.len(),
            bad.len()
        )));
    }
    let position = |name: &str| {
        attrs
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let target = position(CRIME_TARGET)?;
    let race = position(CRIME_RACE_SOURCE)?;
    let column_median = |c: usize| -> Result<f64, DataError> {
        let mut v: Vec<f64> = table.iter().filter_map(|r| r[c].parse().ok()).collect();
        if v.is_empty() {
            return Err(DataError::Normalize(format!("crime: `{}` is empty", attrs[c])));
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        Ok(if v.len() % 2 == 0 {
            (v[mid - 1] + v[mid]) / 2.0
        } else {
            v[mid]
        })
    };
    let target_median = column_median(target)?;
    let race_median = column_median(race)?;

    let n = table.len() as f64;
    let kept: Vec<usize> = (0..attrs.len())
        .filter(|&c| c != target && c != race)
        .filter(|&c| !CRIME_NON_PREDICTIVE.contains(&attrs[c].as_str()))
        .filter(|&c| {
            let missing = table.iter().filter(|r| is_missing(r[c])).count() as f64;
            missing / n <= 0.5
        })
        .collect();

    let mut header: Vec<String> = kept.iter().map(|&c| attrs[c].clone()).collect();
    header.push("race".into());
    header.push("violent_crime".into());
    let mut cols: Vec<ColumnSpec> = kept.iter().map(|&c| ColumnSpec::numeric(attrs[c].clone())).collect();
    cols.push(ColumnSpec::sensitive("race", "Caucasian", Some("Other")));
    cols.push(ColumnSpec::target("violent_crime", "low", Some("high")));
    let schema = Schema::new(cols)?;

    let mut rows = Vec::with_capacity(table.len());
    for r in &table {
        let (Ok(t), Ok(w)) = (r[target].parse::<f64>(), r[race].parse::<f64>()) else {
            continue;
        };
        let mut row: Vec<String> = kept.iter().map(|&c| r[c].to_string()).collect();
        row.push(if w >= race_median { "Caucasian" } else { "Other" }.into());
        row.push(if t <= target_median { "low" } else { "high" }.into());
        rows.push(row);
    }
    Ok((header, rows, schema))
}
