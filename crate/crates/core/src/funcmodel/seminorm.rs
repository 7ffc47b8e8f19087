use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous seminorm p_α on the sampled value space ℝ^m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeminormIndex {
    /// max_q |v_q|
    SupAll,
    /// max over a declared coordinate subset
    SupSubset { coords: Vec<usize> },
    /// max_q w_q |v_q| with positive weights
    WeightedSup { weights: Vec<f64> },
}

impl SeminormIndex {
    pub fn validate(&self, value_dim: usize) -> Result<()> {
        match self {
            SeminormIndex::SupAll => Ok(()),
            SeminormIndex::SupSubset { coords } => {
                if coords.is_empty() || coords.iter().any(|&q| q >= value_dim) {
                    Err(Error::Config(format!(
                        "seminorm coordinate subset {coords:?} invalid for m={value_dim}"
                    )))
                } else {
                    Ok(())
                }
            }
            SeminormIndex::WeightedSup { weights } => {
                if weights.len() != value_dim || weights.iter().any(|w| !(*w > 0.0)) {
                    Err(Error::Config(format!(
                        "seminorm weights must be {value_dim} positive numbers"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> f64 {
        match self {
            SeminormIndex::SupAll => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            SeminormIndex::SupSubset { coords } => {
                coords.iter().fold(0.0, |m, &q| m.max(v[q].abs()))
            }
            SeminormIndex::WeightedSup { weights } => v
                .iter()
                .zip(weights)
                .fold(0.0, |m, (x, w)| m.max(w * x.abs())),
        }
    }

    /// p_α(a - b) without allocating.
    pub fn apply_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SeminormIndex::SupAll => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
            SeminormIndex::SupSubset { coords } => {
                coords.iter().fold(0.0, |m, &q| m.max((a[q] - b[q]).abs()))
            }
            SeminormIndex::WeightedSup { weights } => a
                .iter()
                .zip(b)
                .zip(weights)
                .fold(0.0, |m, ((x, y), w)| m.max(w * (x - y).abs())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SeminormIndex::SupAll => "sup".into(),
            SeminormIndex::SupSubset { coords } => {
                let c: Vec<String> = coords.iter().map(|q| q.to_string()).collect();
                format!("sub:{}", c.join(","))
            }
            SeminormIndex::WeightedSup { .. } => "wsup".into(),
        }
    }

    /// Parse the CLI form: `sup`, `sub:0,2,5`, `wsup:1,0.5,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "sup" {
            return Ok(SeminormIndex::SupAll);
        }
        let nums = |rest: &str| -> Result<Vec<f64>> {
            rest.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad seminorm entry '{t}'")))
                })
                .collect()
        };
        if let Some(rest) = s.strip_prefix("sub:") {
            let coords = nums(rest)?.into_iter().map(|v| v as usize).collect();
            return Ok(SeminormIndex::SupSubset { coords });
        }
        if let Some(rest) = s.strip_prefix("wsup:") {
            return Ok(SeminormIndex::WeightedSup {
                weights: nums(rest)?,
            });
        }
        Err(Error::Config(format!("unknown seminorm '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn families(m: usize) -> Vec<SeminormIndex> {
        vec![
            SeminormIndex::SupAll,
            SeminormIndex::SupSubset {
                coords: vec![0, m - 1],
            },
            SeminormIndex::WeightedSup {
                weights: (0..m).map(|q| 0.5 + q as f64).collect(),
            },
        ]
    }

    #[test]
    fn basic_values() {
        let v = [1.0, -3.0, 2.0];
        assert_eq!(SeminormIndex::SupAll.apply(&v), 3.0);
        assert_eq!(
            SeminormIndex::SupSubset { coords: vec![0, 2] }.apply(&v),
            2.0
        );
        assert_eq!(
            SeminormIndex::WeightedSup {
                weights: vec![1.0, 0.1, 1.0]
            }
            .apply(&v),
            2.0
        );
    }

    #[test]
    fn parse_forms() {
        assert_eq!(SeminormIndex::parse("sup").unwrap(), SeminormIndex::SupAll);
        assert_eq!(
            SeminormIndex::parse("sub:0,2").unwrap(),
            SeminormIndex::SupSubset { coords: vec![0, 2] }
        );
        assert!(SeminormIndex::parse("l2").is_err());
        assert!(SeminormIndex::SupSubset { coords: vec![4] }
            .validate(3)
            .is_err());
        assert!(SeminormIndex::WeightedSup {
            weights: vec![1.0, 0.0]
        }
        .validate(2)
        .is_err());
    }

    proptest! {
        #[test]
        fn seminorm_axioms(
            v in prop::collection::vec(-10.0f64..10.0, 4),
            w in prop::collection::vec(-10.0f64..10.0, 4),
            lambda in -5.0f64..5.0,
        ) {
            for p in families(4) {
                let pv = p.apply(&v);
                prop_assert!(pv >= 0.0);
                let scaled: Vec<f64> = v.iter().map(|x| lambda * x).collect();
                prop_assert!((p.apply(&scaled) - lambda.abs() * pv).abs() <= 1e-12 * (1.0 + pv));
                let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
                prop_assert!(p.apply(&sum) <= pv + p.apply(&w) + 1e-12);
                let neg: Vec<f64> = w.iter().map(|x| -x).collect();
                prop_assert_eq!(p.apply_diff(&v, &w), p.apply(&sum_of(&v, &neg)));
            }
        }
    }

    fn sum_of(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }
}
