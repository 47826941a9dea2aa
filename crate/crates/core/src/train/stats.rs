use serde::Serialize;

use crate::error::{Error, Result};

/// Accuracy plus the per-sample record needed for paired tests.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub correct: Vec<bool>,
}

impl Evaluation {
    pub fn from_predictions(predictions: Vec<usize>, labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let correct: Vec<bool> = predictions.iter().zip(labels).map(|(p, l)| p == l).collect();
        let hits = correct.iter().filter(|&&c| c).count();
        Ok(Evaluation {
            accuracy: hits as f64 / labels.len() as f64,
            predictions,
            correct,
        })
    }
}

/// Joint correctness counts of two classifiers. The first index is
/// classifier A (0 = wrong, 1 = right), the second classifier B.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    pub n00: usize,
    pub n01: usize,
    pub n10: usize,
    pub n11: usize,
}

impl ContingencyTable {
    pub fn from_correctness(a: &[bool], b: &[bool]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Data(format!(
                "correctness vectors differ in length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        let mut t = ContingencyTable::default();
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (false, false) => t.n00 += 1,
                (false, true) => t.n01 += 1,
                (true, false) => t.n10 += 1,
                (true, true) => t.n11 += 1,
            }
        }
        Ok(t)
    }

    pub fn total(&self) -> usize {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn discordant(&self) -> usize {
        self.n01 + self.n10
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McNemar {
    pub table: ContingencyTable,
    /// `(|n01 − n10| − 1)² / (n01 + n10)`; zero when there is no disagreement.
    pub statistic: f64,
    pub p_value: f64,
}

impl McNemar {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Upper tail of the chi-square distribution with one degree of freedom,
/// `P(χ²₁ > x) = erfc(√(x/2))`.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        libm::erfc((x / 2.0).sqrt())
    }
}

/// Continuity-corrected McNemar test on paired correctness vectors.
pub fn mcnemar(a_correct: &[bool], b_correct: &[bool]) -> Result<McNemar> {
    let table = ContingencyTable::from_correctness(a_correct, b_correct)?;
    Ok(mcnemar_from_table(table))
}

pub fn mcnemar_from_table(table: ContingencyTable) -> McNemar {
    let disc = table.discordant();
    if disc == 0 {
        return McNemar {
            table,
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let diff = (table.n01 as f64 - table.n10 as f64).abs() - 1.0;
    let statistic = diff * diff / disc as f64;
    McNemar {
        table,
        statistic,
        p_value: chi2_sf_1dof(statistic),
    }
}
