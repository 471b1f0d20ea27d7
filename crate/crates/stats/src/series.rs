use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::StatsError;

/// Keyed real values, one per unit (country, occupation, task, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: BTreeMap<String, f64>,
    groups: Option<BTreeMap<String, String>>,
}

impl Series {
    pub fn new<K: Into<String>>(pairs: impl IntoIterator<Item = (K, f64)>) -> Result<Self, StatsError> {
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.into();
            if !v.is_finite() {
                return Err(StatsError::NonFinite(k));
            }
            if values.insert(k.clone(), v).is_some() {
                return Err(StatsError::DuplicateKey(k));
            }
        }
        Ok(Series { values, groups: None })
    }

    pub fn with_groups(mut self, groups: BTreeMap<String, String>) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn group(&self, key: &str) -> Option<&str> {
        self.groups.as_ref()?.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Series restricted to their common keys, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub keys: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

pub fn align(series: &[&Series]) -> Aligned {
    let Some(first) = series.first() else {
        return Aligned { keys: Vec::new(), columns: Vec::new() };
    };
    let mut keys: BTreeSet<&str> = first.keys().collect();
    for s in &series[1..] {
        keys.retain(|k| s.values.contains_key(*k));
    }
    let keys: Vec<String> = keys.into_iter().map(str::to_string).collect();
    let columns = series.iter().map(|s| keys.iter().map(|k| s.values[k]).collect()).collect();
    Aligned { keys, columns }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_nan() {
        assert!(matches!(Series::new([("a", 1.0), ("a", 2.0)]), Err(StatsError::DuplicateKey(_))));
        assert!(matches!(Series::new([("a", f64::NAN)]), Err(StatsError::NonFinite(_))));
    }

    #[test]
    fn align_intersects_keys() {
        let x = Series::new([("a", 1.0), ("b", 2.0), ("c", 3.0)]).unwrap();
        let y = Series::new([("c", 30.0), ("a", 10.0), ("d", 0.0)]).unwrap();
        let al = align(&[&x, &y]);
        assert_eq!(al.keys, ["a", "c"]);
        assert_eq!(al.columns, vec![vec![1.0, 3.0], vec![10.0, 30.0]]);
    }
}
