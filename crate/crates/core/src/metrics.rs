//! Link prediction metrics and overlapping community extraction.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelInputs, Variant};
use crate::tensor::Tensor;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("need both classes, got {pos} positives and {neg} negatives")));
    }
    Ok((pos, neg))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep index order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half. Computed exactly
/// from midranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean over positives of the precision at each positive's rank, ranking by
/// descending score. Ties are broken by input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in descending(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / pos as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub split_seed: u64,
}

impl MetricsReport {
    pub fn compute(pos_scores: &[f64], neg_scores: &[f64], split_seed: u64) -> Result<Self> {
        let scores: Vec<f64> = pos_scores.iter().chain(neg_scores).copied().collect();
        let labels: Vec<bool> = (0..scores.len()).map(|i| i < pos_scores.len()).collect();
        Ok(Self {
            auc: auc_roc(&scores, &labels)?,
            ap: average_precision(&scores, &labels)?,
            n_pos: pos_scores.len(),
            n_neg: neg_scores.len(),
            split_seed,
        })
    }

    /// `key value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "auc {:.17e}\nap {:.17e}\nn_pos {}\nn_neg {}\nsplit_seed {}\n",
            self.auc, self.ap, self.n_pos, self.n_neg, self.split_seed
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Overlapping communities. Communities are reindexed by member count,
/// largest first; `latent_column` maps each back to its embedding column.
#[derive(Clone, Debug, PartialEq)]
pub struct CommunityAssignment {
    /// Per node: `(community, strength)` in community order.
    pub memberships: Vec<Vec<(usize, f64)>>,
    /// Per community: `(node, strength)` by descending strength.
    pub members: Vec<Vec<(usize, f64)>>,
    pub latent_column: Vec<usize>,
    /// Nodes without any membership.
    pub unassigned: usize,
}

impl CommunityAssignment {
    pub fn empty() -> Self {
        Self {
            memberships: Vec::new(),
            members: Vec::new(),
            latent_column: Vec::new(),
            unassigned: 0,
        }
    }

    /// `N × K` indicator matrix over reindexed communities.
    pub fn indicator(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.memberships.len(), self.members.len()]);
        for (n, ms) in self.memberships.iter().enumerate() {
            for &(k, _) in ms {
                t.set(n, k, 1.0);
            }
        }
        t
    }

    pub fn total_memberships(&self) -> usize {
        self.memberships.iter().map(Vec::len).sum()
    }

    /// One line per non-empty community: index, latent column, member count,
    /// then `node:strength` pairs by descending strength.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# community latent_column size members(node:strength)\n");
        for (k, ms) in self.members.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
            let _ = write!(s, "{k} {} {}", self.latent_column[k], ms.len());
            for &(n, w) in ms {
                let _ = write!(s, " {n}:{w:.6}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "# active {} unassigned {}", active_communities(self, 1), self.unassigned);
        s
    }
}

/// Thresholds membership probabilities: node `n` joins community `k` iff
/// `pi_hat[n, k] ≥ tau`, with strength `strength[n, k]`.
pub fn assign_communities(pi_hat: &Tensor, strength: &Tensor, tau: f64) -> Result<CommunityAssignment> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Usage(format!("threshold {tau} must lie in [0, 1]")));
    }
    if pi_hat.shape() != strength.shape() || pi_hat.shape().len() != 2 {
        return Err(Error::shape("assign_communities", pi_hat.shape(), strength.shape()));
    }
    let (n, k) = (pi_hat.rows(), pi_hat.cols());
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for node in 0..n {
        for (c, col) in by_col.iter_mut().enumerate() {
            if pi_hat.get(node, c) >= tau {
                let w = strength.get(node, c);
                if !w.is_finite() {
                    return Err(Error::NonFinite(format!("community strength of node {node}, column {c}")));
                }
                col.push((node, w));
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(by_col[c].len()));
    let mut memberships = vec![Vec::new(); n];
    let mut members = Vec::with_capacity(k);
    for (new, &c) in order.iter().enumerate() {
        let mut ms = std::mem::take(&mut by_col[c]);
        for &(node, w) in &ms {
            memberships[node].push((new, w));
        }
        ms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        members.push(ms);
    }
    let unassigned = memberships.iter().filter(|m| m.is_empty()).count();
    Ok(CommunityAssignment {
        memberships,
        members,
        latent_column: order,
        unassigned,
    })
}

/// Communities of a trained model from its posterior-mean memberships.
/// Strength is `|ẑ|` for the variant with strengths and the membership
/// probability for the binary variants.
pub fn extract_communities(model: &Model, inputs: &ModelInputs, tau: f64) -> Result<CommunityAssignment> {
    let variant = model.config().variant;
    if !variant.uses_b() {
        return Err(Error::UnsupportedVariant(variant.to_string()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Usage(format!("threshold {tau} must lie in [0, 1]")));
    }
    let pm = model.posterior_mean(inputs)?;
    let pi_hat = pm.pi_hat.expect("membership variants produce pi");
    let strength = match variant {
        Variant::Dglfrm => pm.z.map(f64::abs),
        _ => pi_hat.clone(),
    };
    assign_communities(&pi_hat, &strength, tau)
}

/// Number of communities with at least `min_members` members.
pub fn active_communities(assign: &CommunityAssignment, min_members: usize) -> usize {
    assign.members.iter().filter(|m| !m.is_empty() && m.len() >= min_members).count()
}
