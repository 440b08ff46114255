//! Insurance records: synthetic generation, CSV ingestion, featurization and
//! percentile labelling.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoker {
    No,
    Yes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Northeast,
    Northwest,
    Southeast,
    Southwest,
}

impl Sex {
    const ALL: [Sex; 2] = [Sex::Female, Sex::Male];
}

impl Smoker {
    const ALL: [Smoker; 2] = [Smoker::No, Smoker::Yes];
}

impl Region {
    const ALL: [Region; 4] = [Region::Northeast, Region::Northwest, Region::Southeast, Region::Southwest];
}

/// One row of the medical insurance dataset. `bmi` is the sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsuranceRecord {
    pub age: u32,
    pub sex: Sex,
    pub bmi: f64,
    pub children: u32,
    pub smoker: Smoker,
    pub region: Region,
    pub charges: f64,
}

pub const COLUMNS: [&str; 7] = ["age", "sex", "bmi", "children", "smoker", "region", "charges"];

const BMI_MEAN: f64 = 27.0;
const BMI_SD: f64 = 5.0;
const BMI_MIN: f64 = 14.0;

/// Seeded synthetic records with the dataset's schema.
///
/// BMI is `Normal(27, 5)` clipped below at 14 and rounded to one decimal. Ages
/// are uniform on 18..=65, children on 0..=5, and every category is uniform.
/// Charges follow a simple cost model and are not used as a feature.
pub fn generate_synthetic_insurance(n: usize, seed: u64) -> Result<Vec<InsuranceRecord>> {
    if n == 0 {
        return Err(Error::domain("generate_synthetic_insurance: n must be at least 1"));
    }
    let mut rng = RngStream::new(seed, 0x1_75a7_a5e7);
    let records = (0..n)
        .map(|_| {
            let age = rng.random_range(18..=65u32);
            let sex = Sex::ALL[rng.random_range(0..Sex::ALL.len())];
            let raw = BMI_MEAN + BMI_SD * rng.standard_normal();
            let bmi = (raw.max(BMI_MIN) * 10.0).round() / 10.0;
            let children = rng.random_range(0..=5u32);
            let smoker = Smoker::ALL[rng.random_range(0..Smoker::ALL.len())];
            let region = Region::ALL[rng.random_range(0..Region::ALL.len())];
            let base = 1500.0 + 260.0 * age as f64 + 320.0 * (bmi - 25.0).max(0.0) + 450.0 * children as f64;
            let smoking = if smoker == Smoker::Yes { 22_000.0 } else { 0.0 };
            let charges = ((base + smoking) * (0.85 + 0.3 * rng.uniform()) * 100.0).round() / 100.0;
            InsuranceRecord {
                age,
                sex,
                bmi,
                children,
                smoker,
                region,
                charges,
            }
        })
        .collect();
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[InsuranceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::domain(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| Error::domain(format!("csv write: {e}")))?;
    Ok(())
}

pub fn export_csv(records: &[InsuranceRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file))
}

/// Parses records from delimited text with a header row. Columns are matched
/// by name, so their order does not matter.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<InsuranceRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest {
            rows: vec![(0, format!("unreadable header: {e}"))],
        })?
        .clone();
    let missing: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest {
            rows: vec![(0, format!("missing columns: {}", missing.join(", ")))],
        });
    }

    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (i, row) in reader.deserialize::<InsuranceRecord>().enumerate() {
        let row_no = i + 1;
        match row {
            Ok(r) if r.bmi > 0.0 && r.bmi.is_finite() => records.push(r),
            Ok(r) => bad.push((row_no, format!("bmi must be positive, got {}", r.bmi))),
            Err(e) => bad.push((row_no, e.to_string())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingest { rows: bad });
    }
    if records.is_empty() {
        return Err(Error::Ingest {
            rows: vec![(0, "no data rows".to_string())],
        });
    }
    Ok(records)
}

pub fn ingest_csv(path: &Path) -> Result<Vec<InsuranceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

/// Mean and population standard deviation of one numeric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnStats {
    fn fit(name: &str, values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12) {
            return Err(Error::domain(format!("featurize: column {name} has zero variance")));
        }
        Ok(ColumnStats { mean, sd })
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

/// Standardization statistics of the numeric columns, fitted on training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub age: ColumnStats,
    pub bmi: ColumnStats,
    pub children: ColumnStats,
}

pub const FEATURE_NAMES: [&str; 11] = [
    "age",
    "bmi",
    "children",
    "sex_female",
    "sex_male",
    "smoker_no",
    "smoker_yes",
    "region_northeast",
    "region_northwest",
    "region_southeast",
    "region_southwest",
];

pub const BMI_FEATURE: usize = 1;

impl Featurizer {
    pub fn fit(train: &[InsuranceRecord]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::domain("featurize: no records"));
        }
        Ok(Featurizer {
            age: ColumnStats::fit("age", train.iter().map(|r| r.age as f64))?,
            bmi: ColumnStats::fit("bmi", train.iter().map(|r| r.bmi))?,
            children: ColumnStats::fit("children", train.iter().map(|r| r.children as f64))?,
        })
    }

    pub fn dim(&self) -> usize {
        FEATURE_NAMES.len()
    }

    pub fn bmi_index(&self) -> usize {
        BMI_FEATURE
    }

    pub fn transform(&self, r: &InsuranceRecord) -> Vec<f64> {
        self.transform_with_bmi(r, r.bmi)
    }

    /// Features of `r` with its BMI replaced by `bmi`.
    pub fn transform_with_bmi(&self, r: &InsuranceRecord, bmi: f64) -> Vec<f64> {
        let onehot = |hit: bool| if hit { 1.0 } else { 0.0 };
        vec![
            self.age.standardize(r.age as f64),
            self.bmi.standardize(bmi),
            self.children.standardize(r.children as f64),
            onehot(r.sex == Sex::Female),
            onehot(r.sex == Sex::Male),
            onehot(r.smoker == Smoker::No),
            onehot(r.smoker == Smoker::Yes),
            onehot(r.region == Region::Northeast),
            onehot(r.region == Region::Northwest),
            onehot(r.region == Region::Southeast),
            onehot(r.region == Region::Southwest),
        ]
    }

    pub fn transform_all(&self, records: &[InsuranceRecord]) -> Vec<Vec<f64>> {
        records.iter().map(|r| self.transform(r)).collect()
    }

    /// Length along the BMI axis, in BMI units, of a feature-space distance.
    pub fn feature_distance_to_bmi(&self, d: f64) -> f64 {
        d * self.bmi.sd
    }
}

/// Fits on `records` and transforms them: `(features, bmi column, stats)`.
pub fn featurize(records: &[InsuranceRecord]) -> Result<(Vec<Vec<f64>>, usize, Featurizer)> {
    let f = Featurizer::fit(records)?;
    Ok((f.transform_all(records), f.bmi_index(), f))
}

/// Nearest-rank `q`-quantile of BMI as the threshold `B`; label 1 iff `bmi > B`.
pub fn label_by_percentile(records: &[InsuranceRecord], q: f64) -> Result<(Vec<usize>, f64)> {
    if records.is_empty() {
        return Err(Error::domain("label_by_percentile: no records"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("label_by_percentile: q={q} outside (0, 1)")));
    }
    let mut bmis: Vec<f64> = records.iter().map(|r| r.bmi).collect();
    bmis.sort_by(f64::total_cmp);
    let rank = ((q * bmis.len() as f64).ceil() as usize).clamp(1, bmis.len());
    let threshold = bmis[rank - 1];
    Ok((label_records(records, threshold), threshold))
}

pub fn label_records(records: &[InsuranceRecord], threshold: f64) -> Vec<usize> {
    records.iter().map(|r| usize::from(r.bmi > threshold)).collect()
}

/// Seeded permutation split: `(train indices, test indices)`.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train_fraction={train_fraction} outside (0, 1)")));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!("{n} records cannot be split at {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed, 0x5_0117));
    let test = order.split_off(n_train);
    Ok((order, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(bmi: f64) -> InsuranceRecord {
        InsuranceRecord {
            age: 30,
            sex: Sex::Male,
            bmi,
            children: 1,
            smoker: Smoker::No,
            region: Region::Southeast,
            charges: 1000.0,
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = generate_synthetic_insurance(1, 9).unwrap();
        let b = generate_synthetic_insurance(1, 9).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_insurance(1, 10).unwrap());
        assert!(generate_synthetic_insurance(0, 1).is_err());
    }

    #[test]
    fn percentile_by_nearest_rank() {
        let records: Vec<_> = (1..=10).map(|b| rec(b as f64)).collect();
        let (labels, b) = label_by_percentile(&records, 0.9).unwrap();
        assert_eq!(b, 9.0);
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);

        let flat = vec![rec(25.0); 5];
        let (labels, _) = label_by_percentile(&flat, 0.9).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        assert!(label_by_percentile(&[], 0.9).is_err());
        assert!(label_by_percentile(&flat, 1.0).is_err());
    }

    #[test]
    fn two_categories_two_columns() {
        let mut a = rec(20.0);
        a.sex = Sex::Female;
        a.age = 40;
        a.children = 0;
        let b = rec(30.0);
        let (x, idx, stats) = featurize(&[a, b]).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(x[0].len(), 11);
        assert_eq!((x[0][3], x[0][4]), (1.0, 0.0));
        assert_eq!((x[1][3], x[1][4]), (0.0, 1.0));
        assert_eq!(stats.bmi.mean, 25.0);
        assert_eq!(stats.bmi.sd, 5.0);
        assert_eq!((x[0][1], x[1][1]), (-1.0, 1.0));
    }

    #[test]
    fn constant_column_rejected() {
        // age and children are constant across these fixtures
        assert!(featurize(&[rec(20.0), rec(30.0)]).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let (train, test) = train_test_split(100, 0.6, 3).unwrap();
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 40);
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_test_split(100, 0.6, 3).unwrap().0, train);
    }
}
