//! Chance-corrected agreement between binary occurrence vectors,
//! normalised by the marginal-constrained maximum: kappa_norm =
//! kappa / kappa_max with kappa = (p_o - p_e) / (1 - p_e) and
//! kappa_max = (p_max - p_e) / (1 - p_e). Used to measure keyword
//! co-occurrence across languages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    /// Relative observed agreement.
    pub p_o: f64,
    /// Chance agreement from the marginals.
    pub p_e: f64,
    /// Maximum agreement achievable under the marginals.
    pub p_max: f64,
    pub kappa: Option<f64>,
    pub kappa_max: Option<f64>,
    pub kappa_norm: Option<f64>,
    /// Set when p_e = 1 (kappa undefined) or kappa_max = 0.
    pub degenerate: bool,
}

pub fn normalised_kappa(a: &[bool], b: &[bool]) -> Result<KappaResult> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len() as f64;
    let p1a = a.iter().filter(|&&x| x).count() as f64 / n;
    let p1b = b.iter().filter(|&&x| x).count() as f64 / n;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    let p_e = p1a * p1b + (1.0 - p1a) * (1.0 - p1b);
    let p_max = p1a.min(p1b) + (1.0 - p1a).min(1.0 - p1b);

    if p_e >= 1.0 {
        return Ok(KappaResult {
            p_o,
            p_e,
            p_max,
            kappa: None,
            kappa_max: None,
            kappa_norm: None,
            degenerate: true,
        });
    }
    let kappa = (p_o - p_e) / (1.0 - p_e);
    let kappa_max = (p_max - p_e) / (1.0 - p_e);
    let (kappa_norm, degenerate) = if kappa_max == 0.0 {
        (None, true)
    } else {
        (Some(kappa / kappa_max), false)
    };
    Ok(KappaResult {
        p_o,
        p_e,
        p_max,
        kappa: Some(kappa),
        kappa_max: Some(kappa_max),
        kappa_norm,
        degenerate,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub row_keywords: Vec<String>,
    pub col_keywords: Vec<String>,
    /// `values[i][j]` is kappa_norm between row keyword i and column
    /// keyword j over the shared samples.
    pub values: Vec<Vec<Option<f64>>>,
}

impl CooccurrenceMatrix {
    /// Mean of diagonal and off-diagonal defined entries, for square
    /// matrices where row i and column i are translation pairs.
    pub fn diagonal_statistic(&self) -> Option<(f64, f64)> {
        if self.row_keywords.len() != self.col_keywords.len() {
            return None;
        }
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(x) = v {
                    if i == j {
                        diag.push(*x);
                    } else {
                        off.push(*x);
                    }
                }
            }
        }
        if diag.is_empty() || off.is_empty() {
            return None;
        }
        Some((
            diag.iter().sum::<f64>() / diag.len() as f64,
            off.iter().sum::<f64>() / off.len() as f64,
        ))
    }
}

/// Cross-tabulate two presence tables over the same sample ids.
///
/// `table_a[u][i]` is presence of keyword i in sample u; ids must match
/// between the two tables (same order).
pub fn cooccurrence_matrix(
    ids_a: &[String],
    table_a: &[Vec<bool>],
    keywords_a: &[String],
    ids_b: &[String],
    table_b: &[Vec<bool>],
    keywords_b: &[String],
) -> Result<CooccurrenceMatrix> {
    if ids_a != ids_b {
        return Err(Error::IdMismatch);
    }
    if ids_a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let column = |table: &[Vec<bool>], k: usize| -> Vec<bool> {
        table.iter().map(|row| row[k]).collect()
    };
    let mut values = Vec::with_capacity(keywords_a.len());
    for i in 0..keywords_a.len() {
        let a = column(table_a, i);
        let mut row = Vec::with_capacity(keywords_b.len());
        for j in 0..keywords_b.len() {
            let b = column(table_b, j);
            row.push(normalised_kappa(&a, &b)?.kappa_norm);
        }
        values.push(row);
    }
    Ok(CooccurrenceMatrix {
        row_keywords: keywords_a.to_vec(),
        col_keywords: keywords_b.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn perfect_agreement_normalises_to_one() {
        let a = vec![true, false, true];
        let r = normalised_kappa(&a, &a).unwrap();
        assert_eq!(r.p_o, 1.0);
        assert_eq!(r.kappa, Some(1.0));
        assert_eq!(r.kappa_norm, Some(1.0));
        assert!(!r.degenerate);
    }

    #[test]
    fn total_disagreement_is_negative() {
        let a = vec![true, false];
        let b = vec![false, true];
        let r = normalised_kappa(&a, &b).unwrap();
        assert_eq!(r.p_o, 0.0);
        assert!(r.kappa.unwrap() < 0.0);
        assert!(r.kappa_norm.unwrap() < 0.0);
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        assert!(normalised_kappa(&[true], &[true, false]).is_err());
        assert!(normalised_kappa(&[], &[]).is_err());
    }

    #[test]
    fn constant_vectors_are_degenerate() {
        let a = vec![true, true, true];
        let r = normalised_kappa(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.kappa_norm, None);
    }

    #[test]
    fn independent_random_pairs_have_small_kappa() {
        let mut rng = Stream::new(42);
        let mut mean_abs = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let a: Vec<bool> = (0..500).map(|_| rng.bernoulli(0.3)).collect();
            let b: Vec<bool> = (0..500).map(|_| rng.bernoulli(0.4)).collect();
            let r = normalised_kappa(&a, &b).unwrap();
            mean_abs += r.kappa.unwrap().abs();
        }
        mean_abs /= trials as f64;
        assert!(mean_abs < 0.05, "mean |kappa| = {mean_abs}");
    }

    #[test]
    fn identical_tables_have_unit_diagonal() {
        let ids: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
        let kws: Vec<String> = vec!["a".into(), "b".into()];
        let table = vec![
            vec![true, false],
            vec![false, true],
            vec![true, true],
            vec![false, false],
            vec![true, false],
            vec![false, true],
        ];
        let m = cooccurrence_matrix(&ids, &table, &kws, &ids, &table, &kws).unwrap();
        assert_eq!(m.values[0][0], Some(1.0));
        assert_eq!(m.values[1][1], Some(1.0));
        let (diag, off) = m.diagonal_statistic().unwrap();
        assert!(diag > off);
    }

    #[test]
    fn mismatched_ids_rejected() {
        let ids_a: Vec<String> = vec!["s0".into()];
        let ids_b: Vec<String> = vec!["s1".into()];
        let kws: Vec<String> = vec!["a".into()];
        let t = vec![vec![true]];
        assert!(matches!(
            cooccurrence_matrix(&ids_a, &t, &kws, &ids_b, &t, &kws),
            Err(Error::IdMismatch)
        ));
    }
}
