//! Root, phrase and per-height accuracy and phrase-level confusion.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::training::{predict, Example, ModelConfig, Params};
use crate::treebank::LabeledTree;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: usize,
    pub sentences: usize,
    pub root_correct: usize,
    pub root_total: usize,
    pub phrase_correct: usize,
    pub phrase_total: usize,
    /// `(correct, total)` indexed by node height; leaves have height 0.
    pub by_height: Vec<(usize, usize)>,
    /// Phrase-level counts, `[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn new(classes: usize) -> Self {
        EvalReport {
            classes,
            sentences: 0,
            root_correct: 0,
            root_total: 0,
            phrase_correct: 0,
            phrase_total: 0,
            by_height: Vec::new(),
            confusion: vec![vec![0; classes]; classes],
        }
    }

    /// Score one tree's predictions. Excluded nodes are skipped.
    pub fn add(&mut self, tree: &LabeledTree, predicted: &[usize]) -> Result<()> {
        if tree.classes != self.classes {
            return Err(Error::Shape(format!(
                "tree has {} classes, report has {}",
                tree.classes, self.classes
            )));
        }
        if predicted.len() != tree.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} nodes",
                predicted.len(),
                tree.len()
            )));
        }
        if let Some(&p) = predicted.iter().find(|&&p| p >= self.classes) {
            return Err(Error::Shape(format!("predicted label {p} out of range")));
        }
        self.sentences += 1;
        let heights = tree.heights();
        for (v, node) in tree.nodes.iter().enumerate() {
            let Some(gold) = node.gold else { continue };
            let hit = usize::from(gold == predicted[v]);
            if v == tree.root() {
                self.root_total += 1;
                self.root_correct += hit;
            }
            self.phrase_total += 1;
            self.phrase_correct += hit;
            if self.by_height.len() <= heights[v] {
                self.by_height.resize(heights[v] + 1, (0, 0));
            }
            self.by_height[heights[v]].0 += hit;
            self.by_height[heights[v]].1 += 1;
            self.confusion[gold][predicted[v]] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalReport) {
        self.sentences += other.sentences;
        self.root_correct += other.root_correct;
        self.root_total += other.root_total;
        self.phrase_correct += other.phrase_correct;
        self.phrase_total += other.phrase_total;
        if self.by_height.len() < other.by_height.len() {
            self.by_height.resize(other.by_height.len(), (0, 0));
        }
        for (dst, src) in self.by_height.iter_mut().zip(&other.by_height) {
            dst.0 += src.0;
            dst.1 += src.1;
        }
        for (dst, src) in self.confusion.iter_mut().zip(&other.confusion) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn root_accuracy(&self) -> f64 {
        ratio(self.root_correct, self.root_total)
    }

    pub fn phrase_accuracy(&self) -> f64 {
        ratio(self.phrase_correct, self.phrase_total)
    }

    pub fn height_accuracy(&self) -> Vec<(usize, f64, usize)> {
        self.by_height
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(h, &(c, n))| (h, ratio(c, n), n))
            .collect()
    }

    /// Confusion rows normalized by gold count; rows without gold
    /// instances stay zero.
    pub fn normalized_confusion(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter().map(|&c| ratio(c, total)).collect()
            })
            .collect()
    }
}

/// Predict and score every example in parallel.
pub fn evaluate(params: &Params, config: &ModelConfig, data: &[Example]) -> Result<EvalReport> {
    let preds: Vec<Vec<usize>> = data.par_iter().map(|ex| predict(params, config, ex)).collect();
    let mut report = EvalReport::new(config.classes);
    for (ex, p) in data.iter().zip(&preds) {
        report.add(&ex.tree, p)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_with_classes;

    #[test]
    fn perfect_predictions() {
        let tree = parse_with_classes("(3 (2 a) (4 (2 b) (4 c)))", 5).unwrap();
        let gold: Vec<usize> = tree.nodes.iter().map(|n| n.gold.unwrap()).collect();
        let mut r = EvalReport::new(5);
        r.add(&tree, &gold).unwrap();
        assert_eq!(r.root_accuracy(), 1.0);
        assert_eq!(r.phrase_accuracy(), 1.0);
        let cm = r.normalized_confusion();
        for (g, row) in cm.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if r.confusion[g].iter().sum::<usize>() > 0 {
                assert_eq!(row[g], 1.0);
                assert_eq!(total, 1.0);
            } else {
                assert_eq!(total, 0.0);
            }
        }
        assert_eq!(r.height_accuracy()[0], (0, 1.0, 3));
    }

    #[test]
    fn excluded_nodes_are_skipped() {
        let tree = parse_with_classes("(1 (_ a) (0 b))", 2).unwrap();
        let mut r = EvalReport::new(2);
        r.add(&tree, &[1, 1, 0]).unwrap();
        assert_eq!(r.phrase_total, 2);
        assert_eq!(r.phrase_correct, 0);
        assert_eq!(r.root_accuracy(), 0.0);
    }

    #[test]
    fn class_mismatch_is_an_error() {
        let tree = parse_with_classes("(1 a)", 2).unwrap();
        assert!(EvalReport::new(5).add(&tree, &[1]).is_err());
    }
}
