//! Ranking of extraction methods by median test AUROC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::forest::RfHyperparams;
use super::metrics::BootstrapCi;
use crate::extract::Method;

/// Classification outcome of one method on one lead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub lead: String,
    pub hyperparams: RfHyperparams,
    pub effective_max_features: usize,
    pub cv_auroc: f64,
    pub auroc: BootstrapCi,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method: Method,
    /// Competition rank: equal medians share a rank.
    pub rank: usize,
    pub median_auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadRanking {
    pub lead: String,
    pub methods: Vec<RankedMethod>,
    /// Groups of methods sharing a rank.
    pub ties: Vec<Vec<Method>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallRanking {
    /// Methods ordered by mean rank across leads.
    pub order: Vec<(Method, f64)>,
    pub winner: Option<Method>,
    /// `best_in_every_lead`, `mean_rank`, or `tie`.
    pub rule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub results: Vec<MethodResult>,
    pub leads: Vec<LeadRanking>,
    pub overall: OverallRanking,
}

/// Sorts methods by median AUROC within each lead, then picks an overall
/// winner: the method ranked first in every lead if there is one, else the
/// unique method with the best mean rank.
pub fn rank_methods(results: &[MethodResult]) -> RankingReport {
    let mut by_lead: BTreeMap<&str, Vec<&MethodResult>> = BTreeMap::new();
    for r in results {
        by_lead.entry(&r.lead).or_default().push(r);
    }
    let mut leads = Vec::new();
    let mut rank_sums: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for (lead, mut rs) in by_lead {
        rs.sort_by(|a, b| b.auroc.median.total_cmp(&a.auroc.median).then(a.method.cmp(&b.method)));
        let mut methods = Vec::new();
        let mut ties: Vec<Vec<Method>> = Vec::new();
        for (i, r) in rs.iter().enumerate() {
            let rank = if i > 0 && r.auroc.median == rs[i - 1].auroc.median {
                let prev: &RankedMethod = methods.last().unwrap();
                prev.rank
            } else {
                i + 1
            };
            if i > 0 && rank == methods.last().map_or(0, |m: &RankedMethod| m.rank) {
                match ties.last_mut() {
                    Some(group) if group.contains(&rs[i - 1].method) => group.push(r.method),
                    _ => ties.push(vec![rs[i - 1].method, r.method]),
                }
            }
            methods.push(RankedMethod {
                method: r.method,
                rank,
                median_auroc: r.auroc.median,
                ci_low: r.auroc.ci_low,
                ci_high: r.auroc.ci_high,
                best: rank == 1,
            });
            let e = rank_sums.entry(r.method).or_insert((0.0, 0));
            e.0 += rank as f64;
            e.1 += 1;
        }
        leads.push(LeadRanking {
            lead: lead.to_string(),
            methods,
            ties,
        });
    }

    let mut order: Vec<(Method, f64)> = rank_sums.into_iter().map(|(m, (s, c))| (m, s / c as f64)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let sole_first = |lr: &LeadRanking| {
        let firsts: Vec<Method> = lr.methods.iter().filter(|m| m.rank == 1).map(|m| m.method).collect();
        (firsts.len() == 1).then(|| firsts[0])
    };
    let everywhere = leads.first().and_then(sole_first).filter(|&m| leads.iter().all(|l| sole_first(l) == Some(m)));
    let (winner, rule) = match everywhere {
        Some(m) => (Some(m), "best_in_every_lead"),
        None => match order.as_slice() {
            [a, b, ..] if a.1 == b.1 => (None, "tie"),
            [a, ..] => (Some(a.0), "mean_rank"),
            [] => (None, "tie"),
        },
    };
    RankingReport {
        results: results.to_vec(),
        leads,
        overall: OverallRanking {
            order,
            winner,
            rule: rule.to_string(),
        },
    }
}

impl RankingReport {
    /// One CSV line per method and lead.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "lead,method,rank,best,median_auroc,ci_low,ci_high,cv_auroc,n_estimators,max_depth,max_features,effective_max_features,max_samples,n_train,n_test\n",
        );
        for lr in &self.leads {
            for m in &lr.methods {
                let r = self
                    .results
                    .iter()
                    .find(|r| r.lead == lr.lead && r.method == m.method)
                    .expect("ranked result present");
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    lr.lead,
                    m.method,
                    m.rank,
                    m.best,
                    m.median_auroc,
                    m.ci_low,
                    m.ci_high,
                    r.cv_auroc,
                    r.hyperparams.n_estimators,
                    r.hyperparams.max_depth,
                    r.hyperparams.max_features,
                    r.effective_max_features,
                    r.hyperparams.max_samples,
                    r.n_train,
                    r.n_test
                ));
            }
        }
        out
    }
}
