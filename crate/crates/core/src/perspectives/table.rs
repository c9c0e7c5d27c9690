use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Perspective {
    Content,
    Node,
    Ip,
    Offering,
}

impl Perspective {
    pub const ALL: [Perspective; 4] = [
        Perspective::Content,
        Perspective::Node,
        Perspective::Ip,
        Perspective::Offering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Content => "content",
            Perspective::Node => "node",
            Perspective::Ip => "ip",
            Perspective::Offering => "offering",
        }
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perspective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "content" => Ok(Perspective::Content),
            "node" => Ok(Perspective::Node),
            "ip" | "client_ip" => Ok(Perspective::Ip),
            "offering" => Ok(Perspective::Offering),
            other => Err(format!("unknown perspective {other:?}")),
        }
    }
}

/// Share of an entity's requests carried by each offering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OfferingMix(pub BTreeMap<String, f64>);

impl OfferingMix {
    pub fn from_counts(counts: &BTreeMap<String, u64>) -> Self {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return OfferingMix::default();
        }
        OfferingMix(
            counts
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
                .collect(),
        )
    }

    /// Largest share; ties go to the lexicographically smallest offering.
    pub fn dominant(&self) -> Option<(&str, f64)> {
        self.0
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (k, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((k.as_str(), v)),
            })
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }
}

/// Non-numeric per-entity data kept out of the clustering matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideData {
    OfferingMix { mix: OfferingMix },
    OfferingProfile {
        service_type: String,
        content_type: String,
    },
}

impl SideData {
    pub fn offering_mix(&self) -> Option<&OfferingMix> {
        match self {
            SideData::OfferingMix { mix } => Some(mix),
            SideData::OfferingProfile { .. } => None,
        }
    }
}

/// Keyed feature matrix for one perspective over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveTable {
    pub perspective: Perspective,
    pub keys: Vec<String>,
    pub feature_names: Vec<String>,
    /// Row-major, `keys.len()` rows of `feature_names.len()` values.
    pub values: Vec<Vec<f64>>,
    /// Requests attributed to each row in the window.
    #[serde(default)]
    pub request_counts: Vec<u64>,
    #[serde(default)]
    pub side_data: BTreeMap<String, SideData>,
}

impl PerspectiveTable {
    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn row_index(&self, key: &str) -> Option<usize> {
        self.keys.binary_search_by(|k| k.as_str().cmp(key)).ok().or_else(|| self.keys.iter().position(|k| k == key))
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[idx]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.feature_index(name).map(|i| self.column(i))
    }

    pub fn value(&self, key: &str, feature: &str) -> Option<f64> {
        Some(self.values[self.row_index(key)?][self.feature_index(feature)?])
    }

    /// Shape and finiteness checks.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.values.len() != self.keys.len() {
            return Err(format!(
                "{} table has {} keys but {} rows",
                self.perspective,
                self.keys.len(),
                self.values.len()
            ));
        }
        for (k, row) in self.keys.iter().zip(&self.values) {
            if row.len() != self.feature_names.len() {
                return Err(format!("{} row {k} has {} values", self.perspective, row.len()));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(format!("{} row {k} holds non-finite value {v}", self.perspective));
            }
        }
        Ok(())
    }

    /// Every value rounded to nine significant digits, the CSV precision.
    pub fn quantized(&self) -> Self {
        let mut t = self.clone();
        for row in &mut t.values {
            for v in row.iter_mut() {
                *v = quantize(*v);
            }
        }
        t
    }

    /// Rows reordered by the given permutation (`perm[i]` is the source row of row `i`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut t = self.clone();
        t.keys = perm.iter().map(|&i| self.keys[i].clone()).collect();
        t.values = perm.iter().map(|&i| self.values[i].clone()).collect();
        if self.request_counts.len() == self.keys.len() {
            t.request_counts = perm.iter().map(|&i| self.request_counts[i]).collect();
        }
        t
    }
}

/// Round to nine significant digits.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Per-feature extrema used by the min-max transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub perspective: Perspective,
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Min-max scale every column into `[0, 1]`; constant columns become 0.
pub fn min_max_normalize(table: &PerspectiveTable) -> (PerspectiveTable, NormalizationParams) {
    let d = table.n_features();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for row in &table.values {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    if table.values.is_empty() {
        min.iter_mut().for_each(|m| *m = 0.0);
        max.iter_mut().for_each(|m| *m = 0.0);
    }
    let mut out = table.clone();
    for row in &mut out.values {
        for (j, v) in row.iter_mut().enumerate() {
            let span = max[j] - min[j];
            *v = if span > 0.0 {
                // clamp guards the last ulp when span is subnormal
                ((*v - min[j]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    let params = NormalizationParams {
        perspective: table.perspective,
        feature_names: table.feature_names.clone(),
        min,
        max,
    };
    (out, params)
}

/// Export as CSV: key column, then features in declared order, nine significant digits.
pub fn write_csv(table: &PerspectiveTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec![table.perspective.as_str().to_string()];
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::io(path, e.into()))?;
    for (key, row) in table.keys.iter().zip(&table.values) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(key.clone());
        rec.extend(row.iter().map(|v| quantize(*v).to_string()));
        w.write_record(&rec).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path, perspective: Perspective) -> Result<PerspectiveTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let headers = r
        .headers()
        .map_err(|e| Error::format("perspective csv", path, e))?
        .clone();
    if headers.is_empty() {
        return Err(Error::format("perspective csv", path, "missing header"));
    }
    let feature_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format("perspective csv", path, e))?;
        keys.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("perspective csv", path, format!("row {}: {e}", keys.len())))?;
        values.push(row);
    }
    let table = PerspectiveTable {
        perspective,
        keys,
        feature_names,
        values,
        request_counts: Vec::new(),
        side_data: BTreeMap::new(),
    };
    table
        .check()
        .map_err(|e| Error::format("perspective csv", path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_col(vals: &[f64]) -> PerspectiveTable {
        PerspectiveTable {
            perspective: Perspective::Node,
            keys: (0..vals.len()).map(|i| format!("k{i}")).collect(),
            feature_names: vec!["f".into()],
            values: vals.iter().map(|v| vec![*v]).collect(),
            request_counts: vec![],
            side_data: BTreeMap::new(),
        }
    }

    #[test]
    fn normalizes_linear_column() {
        let (t, p) = min_max_normalize(&one_col(&[2.0, 4.0, 6.0]));
        assert_eq!(t.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(p.min, vec![2.0]);
        assert_eq!(p.max, vec![6.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let (t, _) = min_max_normalize(&one_col(&[5.0, 5.0, 5.0]));
        assert_eq!(t.column(0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn quantize_is_nine_digits() {
        assert_eq!(quantize(0.1234567891234), 0.123456789);
        assert_eq!(quantize(quantize(2.0 / 3.0)), quantize(2.0 / 3.0));
        assert_eq!(quantize(1.0), 1.0);
    }

    #[test]
    fn dominant_offering_tie_breaks_lexicographically() {
        let mut counts = BTreeMap::new();
        counts.insert("b".to_string(), 2);
        counts.insert("a".to_string(), 2);
        counts.insert("c".to_string(), 1);
        let mix = OfferingMix::from_counts(&counts);
        assert_eq!(mix.dominant().unwrap().0, "a");
        assert!((mix.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_at_csv_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = one_col(&[1.0 / 3.0, 2.5, 1e-12]);
        write_csv(&t, &path).unwrap();
        let back = read_csv(&path, Perspective::Node).unwrap();
        assert_eq!(back.keys, t.keys);
        assert_eq!(back.values, t.quantized().values);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node,f\n"));
    }
}
