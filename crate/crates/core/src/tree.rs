//! Regression trees and the additive boosted model.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::sigmoid_unchecked;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Values `<= cut` go left.
        cut: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    pub fn leaf_weight(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split { feature, cut, left, right } => {
                    node = if x[*feature] <= *cut { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub base_margin: f64,
    pub learning_rate: f64,
    /// Fingerprint of the bin layouts the model was trained with.
    pub bin_layouts_ref: String,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

impl Model {
    pub fn new(n_features: usize, learning_rate: f64, bin_layouts_ref: String) -> Self {
        Self {
            version: MODEL_VERSION,
            base_margin: 0.0,
            learning_rate,
            bin_layouts_ref,
            n_features,
            trees: Vec::new(),
        }
    }

    /// Checks version, learning rate and that every split references a known feature.
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) || !self.base_margin.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be in (0, 1]".into()));
        }
        if let Some(f) = self.trees.iter().filter_map(TreeNode::max_feature).max() {
            if f >= self.n_features {
                return Err(Error::Shape(format!("split on feature {f} of {}", self.n_features)));
            }
        }
        Ok(())
    }

    /// Sum of the leaf weights reached in every tree, in tree order.
    #[inline]
    pub fn raw_sum(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for tree in &self.trees {
            sum += tree.leaf_weight(x);
        }
        sum
    }

    #[inline]
    pub(crate) fn margin_from_sum(&self, raw_sum: f64) -> f64 {
        self.base_margin + self.learning_rate * raw_sum
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!("{} features, model expects {}", x.len(), self.n_features)));
        }
        Ok(())
    }

    /// `base_margin + learning_rate * sum of leaf weights`.
    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.margin_from_sum(self.raw_sum(x)))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid_unchecked(self.predict_margin(x)?))
    }

    /// 1 iff the predicted probability is strictly above `threshold`.
    pub fn predict_class(&self, x: &[f64], threshold: f64) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? > threshold))
    }
}
