use std::fmt::Write as _;

use super::rank::spearman;
use crate::error::{Error, Result};

pub const GOLD_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub cosines: Vec<f64>,
}

impl Bucket {
    pub fn median(&self) -> Option<f64> {
        if self.cosines.is_empty() {
            return None;
        }
        let mut v = self.cosines.clone();
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        })
    }
}

/// Predicted cosines grouped into equal-width gold buckets over `[0, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineDensity {
    pub buckets: Vec<Bucket>,
}

impl CosineDensity {
    pub fn from_scores(pred: &[f64], gold: &[f64], n_buckets: usize) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::Metric(format!(
                "length mismatch: {} vs {}",
                pred.len(),
                gold.len()
            )));
        }
        if n_buckets == 0 {
            return Err(Error::Config("n_buckets must be positive".into()));
        }
        let width = GOLD_MAX / n_buckets as f64;
        let mut buckets: Vec<Bucket> = (0..n_buckets)
            .map(|i| Bucket {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                cosines: Vec::new(),
            })
            .collect();
        for (&p, &g) in pred.iter().zip(gold) {
            if !(0.0..=GOLD_MAX).contains(&g) {
                return Err(Error::Data(format!("gold score {g} outside [0, 5]")));
            }
            let idx = ((g / width) as usize).min(n_buckets - 1);
            buckets[idx].cosines.push(p);
        }
        Ok(CosineDensity { buckets })
    }

    pub fn medians(&self) -> Vec<Option<f64>> {
        self.buckets.iter().map(Bucket::median).collect()
    }

    /// Spearman between bucket index and bucket median over nonempty
    /// buckets; `None` when fewer than two buckets are populated or every
    /// median is equal.
    pub fn monotonicity(&self) -> Option<f64> {
        let (idx, med): (Vec<f64>, Vec<f64>) = self
            .medians()
            .into_iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i as f64, m)))
            .unzip();
        spearman(&idx, &med).ok()
    }

    pub fn population(&self) -> usize {
        self.buckets.iter().map(|b| b.cosines.len()).sum()
    }

    /// One row per pair: `bucket,gold_lo,gold_hi,cosine`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket,gold_lo,gold_hi,cosine\n");
        for (i, b) in self.buckets.iter().enumerate() {
            for c in &b.cosines {
                let _ = writeln!(s, "{i},{},{},{c}", b.lo, b.hi);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_model_is_monotone() {
        let gold: Vec<f64> = (0..=50).map(|i| i as f64 / 10.0).collect();
        let pred: Vec<f64> = gold.iter().map(|g| g / 5.0).collect();
        let d = CosineDensity::from_scores(&pred, &gold, 5).unwrap();
        let meds: Vec<f64> = d.medians().into_iter().map(Option::unwrap).collect();
        assert!(meds.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d.monotonicity(), Some(1.0));
        assert_eq!(d.population(), gold.len());
    }

    #[test]
    fn constant_model_has_equal_medians() {
        let gold = [0.5, 1.5, 2.5, 3.5, 4.5];
        let d = CosineDensity::from_scores(&[0.3; 5], &gold, 5).unwrap();
        assert!(d.medians().iter().all(|m| *m == Some(0.3)));
        assert_eq!(d.monotonicity(), None);
    }

    #[test]
    fn empty_buckets_are_kept() {
        let d = CosineDensity::from_scores(&[0.1, 0.9], &[0.0, 5.0], 5).unwrap();
        assert_eq!(d.buckets[2].cosines.len(), 0);
        assert_eq!(d.medians()[2], None);
    }
}
