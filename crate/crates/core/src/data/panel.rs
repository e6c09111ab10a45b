use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{ClaError, Result};
use crate::scalar::Scalar;

/// Column mapping for the CSV panel format.
///
/// When `features` is `None`, every header starting with `feature_` is used,
/// in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub period: String,
    pub security: String,
    pub features: Option<Vec<String>>,
    pub target: String,
    pub period_return: Option<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            period: "period".into(),
            security: "security_id".into(),
            features: None,
            target: "forward_return".into(),
            period_return: None,
        }
    }
}

/// Loads a panel CSV from `path`.
pub fn load_panel<T: Scalar>(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<Dataset<T>> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

struct Row<T> {
    security: String,
    features: Vec<T>,
    target: Option<T>,
    period_return: Option<T>,
}

/// Reads a panel CSV from any reader. Periods are ordered numerically when
/// every label is an integer, lexically otherwise (ISO dates sort correctly);
/// securities are sorted by identifier within each period.
pub fn read_panel<T: Scalar, R: Read>(reader: R, schema: &PanelSchema) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ClaError::MissingColumn { column: name.to_string() })
    };
    let period_col = find(&schema.period)?;
    let security_col = find(&schema.security)?;
    let target_col = find(&schema.target)?;
    let return_col = schema.period_return.as_deref().map(find).transpose()?;
    let (feature_names, feature_cols): (Vec<String>, Vec<usize>) = match &schema.features {
        Some(names) => {
            let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            (names.clone(), cols)
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("feature_"))
            .map(|(i, h)| (h.to_string(), i))
            .unzip(),
    };
    if feature_cols.is_empty() {
        return Err(ClaError::MissingColumn { column: "feature_1".into() });
    }

    let mut grouped: BTreeMap<String, Vec<Row<T>>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record.position().map(|p| p.line() as usize).unwrap_or(idx + 2);
        let parse = |col: usize, name: &str| -> Result<T> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .and_then(T::from_f64)
                .ok_or_else(|| ClaError::Parse { row: line, column: name.to_string(), value: raw.to_string() })
        };
        let optional = |col: usize, name: &str| -> Result<Option<T>> {
            match record.get(col).unwrap_or("") {
                "" => Ok(None),
                _ => parse(col, name).map(Some),
            }
        };
        let period = record.get(period_col).unwrap_or("").to_string();
        let entry = grouped.entry(period).or_default();
        let security = record.get(security_col).unwrap_or("").to_string();
        if security.is_empty() {
            // a bare period marker with no security attached
            continue;
        }
        let features = feature_cols
            .iter()
            .zip(&feature_names)
            .map(|(&c, n)| parse(c, n))
            .collect::<Result<Vec<T>>>()?;
        let target = optional(target_col, &schema.target)?;
        let period_return = match (return_col, &schema.period_return) {
            (Some(c), Some(n)) => optional(c, n)?,
            _ => None,
        };
        entry.push(Row { security, features, target, period_return });
    }

    let mut periods: Vec<String> = grouped.keys().cloned().collect();
    if periods.iter().all(|p| p.parse::<i64>().is_ok()) {
        periods.sort_by_key(|p| p.parse::<i64>().unwrap());
    }

    let k = feature_cols.len();
    let mut ds = Dataset {
        periods: Vec::with_capacity(periods.len()),
        feature_names,
        securities: Vec::new(),
        features: Vec::new(),
        targets: Vec::new(),
        returns: return_col.map(|_| Vec::new()),
    };
    for period in periods {
        let mut rows = grouped.remove(&period).unwrap_or_default();
        if rows.is_empty() {
            return Err(ClaError::EmptyPeriod { period });
        }
        rows.sort_by(|a, b| a.security.cmp(&b.security));
        if let Some(w) = rows.windows(2).find(|w| w[0].security == w[1].security) {
            return Err(ClaError::InvalidArgument(format!(
                "duplicate security `{}` in period `{period}`",
                w[0].security
            )));
        }
        let flat: Vec<T> = rows.iter().flat_map(|r| r.features.iter().copied()).collect();
        let x = Array2::from_shape_vec((rows.len(), k), flat)
            .map_err(|e| ClaError::InvalidArgument(e.to_string()))?;
        ds.features.push(x);
        ds.targets.push(rows.iter().map(|r| r.target).collect());
        if let Some(ret) = ds.returns.as_mut() {
            ret.push(rows.iter().map(|r| r.period_return).collect());
        }
        ds.securities.push(rows.into_iter().map(|r| r.security).collect());
        ds.periods.push(period);
    }
    if ds.periods.is_empty() {
        return Err(ClaError::Empty("panel has no periods"));
    }
    Ok(ds)
}

impl<T: Scalar> Dataset<T> {
    /// Writes the panel in the same CSV layout `read_panel` accepts with the
    /// default schema (plus `period_return` when one-period returns exist).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["period".to_string(), "security_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("forward_return".into());
        if self.returns.is_some() {
            header.push("period_return".into());
        }
        w.write_record(&header)?;
        for t in 0..self.n_periods() {
            for (i, sec) in self.securities[t].iter().enumerate() {
                let mut rec = vec![self.periods[t].clone(), sec.clone()];
                rec.extend(self.features[t].row(i).iter().map(|v| v.to_string()));
                rec.push(self.targets[t][i].map(|v| v.to_string()).unwrap_or_default());
                if let Some(ret) = &self.returns {
                    rec.push(ret[t][i].map(|v| v.to_string()).unwrap_or_default());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
