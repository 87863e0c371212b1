//! Evaluation of a scored portfolio: correlation, ROC-AUC, risk groups,
//! continuous thresholding and top-fraction claim tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {a} scores vs {b} labels"
        )));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("undefined correlation (constant input)".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn labels_as_f64(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|l| f64::from(u8::from(*l))).collect()
}

/// ROC-AUC via midranks: P(score⁺ > score⁻) + ½ P(score⁺ = score⁻).
///
/// The rank sum is accumulated in doubled integer units, so the result is the
/// same exact fraction a pair count would give.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positives' midrank sum (1-based ranks).
    let mut rank_sum2: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end share the midrank (start + 1 + end) / 2.
        let mid2 = (start + 1 + end) as u64;
        let pos_in_block = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        rank_sum2 += mid2 * pos_in_block;
        start = end;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Claim statistics of one risk band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub lower: f64,
    pub upper: f64,
    pub contracts: usize,
    pub claims: usize,
    /// claims / contracts, `None` for an empty band.
    pub claim_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub boundaries: Vec<f64>,
    pub groups: Vec<GroupRow>,
}

pub const DEFAULT_GROUP_BOUNDARIES: [f64; 2] = [0.3, 0.5];

/// Bins [0,b₁), [b₁,b₂), …, [b_k,1].
pub fn group_stats(scores: &[f64], labels: &[bool], boundaries: &[f64]) -> Result<GroupStats> {
    check_lengths(scores.len(), labels.len())?;
    if boundaries.windows(2).any(|w| w[0] >= w[1])
        || boundaries.iter().any(|b| !(*b > 0.0 && *b < 1.0))
    {
        return Err(Error::Config(format!(
            "group boundaries {boundaries:?} must be strictly increasing inside (0, 1)"
        )));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(boundaries);
    edges.push(1.0);
    let mut counts = vec![(0usize, 0usize); boundaries.len() + 1];
    for (s, l) in scores.iter().zip(labels) {
        let g = boundaries.iter().take_while(|b| *s >= **b).count();
        counts[g].0 += 1;
        counts[g].1 += usize::from(*l);
    }
    let groups = counts
        .into_iter()
        .enumerate()
        .map(|(g, (contracts, claims))| GroupRow {
            lower: edges[g],
            upper: edges[g + 1],
            contracts,
            claims,
            claim_ratio: (contracts > 0).then(|| claims as f64 / contracts as f64),
        })
        .collect();
    Ok(GroupStats {
        boundaries: boundaries.to_vec(),
        groups,
    })
}

/// Group statistics from already aggregated counts.
pub fn group_stats_from_counts(boundaries: &[f64], contracts: &[usize], claims: &[usize]) -> Result<GroupStats> {
    if contracts.len() != boundaries.len() + 1 || claims.len() != contracts.len() {
        return Err(Error::InvalidInput("one count per group is required".into()));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(boundaries);
    edges.push(1.0);
    let groups = contracts
        .iter()
        .zip(claims)
        .enumerate()
        .map(|(g, (&n, &c))| GroupRow {
            lower: edges[g],
            upper: edges[g + 1],
            contracts: n,
            claims: c,
            claim_ratio: (n > 0).then(|| c as f64 / n as f64),
        })
        .collect();
    Ok(GroupStats {
        boundaries: boundaries.to_vec(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    /// |{risk ≥ t}| / N.
    pub contract_fraction: Vec<f64>,
    /// Claim ratio within {risk ≥ t}; `None` when that set is empty.
    pub claim_ratio: Vec<Option<f64>>,
}

impl ThresholdCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,contract_fraction,claim_ratio\n");
        for ((t, f), r) in self
            .thresholds
            .iter()
            .zip(&self.contract_fraction)
            .zip(&self.claim_ratio)
        {
            let r = r.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{t},{f},{r}\n"));
        }
        out
    }
}

/// Sweeps t = 0.00, 0.01, …, 1.00 over scores.
pub fn threshold_curve(scores: &[f64], labels: &[bool]) -> Result<ThresholdCurve> {
    check_lengths(scores.len(), labels.len())?;
    let n = scores.len();
    let mut curve = ThresholdCurve {
        thresholds: Vec::with_capacity(101),
        contract_fraction: Vec::with_capacity(101),
        claim_ratio: Vec::with_capacity(101),
    };
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let (mut count, mut claims) = (0usize, 0usize);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                count += 1;
                claims += usize::from(*l);
            }
        }
        curve.thresholds.push(t);
        curve
            .contract_fraction
            .push(if n == 0 { 0.0 } else { count as f64 / n as f64 });
        curve
            .claim_ratio
            .push((count > 0).then(|| claims as f64 / count as f64));
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFractionRow {
    pub fraction: f64,
    pub contracts: usize,
    pub claims: usize,
    /// Claims as a percentage of the selected contracts.
    pub claim_percentage: f64,
}

pub const DEFAULT_TOP_FRACTIONS: [f64; 4] = [1.0, 0.5, 0.2, 0.1];

/// Claim percentage among the ⌈f·N⌉ highest scores; equal scores keep the
/// lower index first.
pub fn top_fraction_table(scores: &[f64], labels: &[bool], fractions: &[f64]) -> Result<Vec<TopFractionRow>> {
    check_lengths(scores.len(), labels.len())?;
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(fractions
        .iter()
        .map(|&f| {
            // Guard so that e.g. 0.1·30000 selects 3000, not 3001.
            let k = ((f * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let k = k.min(n);
            let claims = order[..k].iter().filter(|&&i| labels[i]).count();
            TopFractionRow {
                fraction: f,
                contracts: k,
                claims,
                claim_percentage: if k == 0 {
                    0.0
                } else {
                    100.0 * claims as f64 / k as f64
                },
            }
        })
        .collect())
}

/// Side-by-side metrics for an alternative risk (the insurer's).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub pearson: f64,
    pub auc: f64,
    pub top_fractions: Vec<TopFractionRow>,
    pub threshold_curve: ThresholdCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_submitted: usize,
    pub n_retained: usize,
    pub n_out_of_surface: usize,
    pub n_claims: usize,
    pub claim_ratio: f64,
    pub pearson: f64,
    pub auc: f64,
    pub groups: GroupStats,
    pub threshold_curve: ThresholdCurve,
    pub top_fractions: Vec<TopFractionRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub insurer: Option<ComparisonBlock>,
}

/// Assembles every metric over the retained (in-surface) contracts.
pub fn build_report(
    scores: &[f64],
    labels: &[bool],
    n_out_of_surface: usize,
    boundaries: &[f64],
    insurer_scores: Option<&[f64]>,
) -> Result<EvalReport> {
    check_lengths(scores.len(), labels.len())?;
    let y = labels_as_f64(labels);
    let n_claims = labels.iter().filter(|l| **l).count();
    let top = top_fraction_table(scores, labels, &DEFAULT_TOP_FRACTIONS)?;
    let insurer = match insurer_scores {
        None => None,
        Some(ins) => {
            check_lengths(ins.len(), labels.len())?;
            Some(ComparisonBlock {
                pearson: pearson(ins, &y)?,
                auc: roc_auc(ins, labels)?,
                top_fractions: top_fraction_table(ins, labels, &DEFAULT_TOP_FRACTIONS)?,
                threshold_curve: threshold_curve(ins, labels)?,
            })
        }
    };
    Ok(EvalReport {
        n_submitted: scores.len() + n_out_of_surface,
        n_retained: scores.len(),
        n_out_of_surface,
        n_claims,
        claim_ratio: if labels.is_empty() {
            0.0
        } else {
            n_claims as f64 / labels.len() as f64
        },
        pearson: pearson(scores, &y)?,
        auc: roc_auc(scores, labels)?,
        groups: group_stats(scores, labels, boundaries)?,
        threshold_curve: threshold_curve(scores, labels)?,
        top_fractions: top,
        insurer,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "contracts submitted: {}\nretained: {}\nout of surface: {}\nclaims: {} ({:.2}%)\n",
            self.n_submitted,
            self.n_retained,
            self.n_out_of_surface,
            self.n_claims,
            100.0 * self.claim_ratio
        ));
        s.push_str(&format!("pearson(risk, claim): {:.4}\nAUC: {:.4}\n", self.pearson, self.auc));
        s.push_str("\nrisk groups\n");
        for g in &self.groups.groups {
            let close = if g.upper == 1.0 { ']' } else { ')' };
            let ratio = g
                .claim_ratio
                .map(|r| format!("{:.2}%", 100.0 * r))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "  [{:.2}, {:.2}{close}  contracts {:>7}  claims {:>6}  ratio {ratio}\n",
                g.lower, g.upper, g.contracts, g.claims
            ));
        }
        s.push_str("\n% of contracts  % of claims (our risk)");
        if self.insurer.is_some() {
            s.push_str("  % of claims (insurer)");
        }
        s.push('\n');
        for (k, row) in self.top_fractions.iter().enumerate() {
            s.push_str(&format!("  {:>12.0}  {:>21.2}", 100.0 * row.fraction, row.claim_percentage));
            if let Some(ins) = &self.insurer {
                s.push_str(&format!("  {:>21.2}", ins.top_fractions[k].claim_percentage));
            }
            s.push('\n');
        }
        if let Some(ins) = &self.insurer {
            s.push_str(&format!(
                "\ninsurer risk: pearson {:.4}, AUC {:.4}\n",
                ins.pearson, ins.auc
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-15);
        assert!(matches!(pearson(&x, &[2.0; 4]), Err(Error::Numeric(_))));
        assert!(pearson(&x, &[1.0]).is_err());
    }

    #[test]
    fn auc_cases() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[false, true, false, true, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn quoted_group_counts_reproduce_ratios() {
        let g = group_stats_from_counts(&DEFAULT_GROUP_BOUNDARIES, &[8592, 302, 1055], &[464, 38, 236]).unwrap();
        let pct: Vec<f64> = g.groups.iter().map(|r| 100.0 * r.claim_ratio.unwrap()).collect();
        assert_abs_diff_eq!(pct[0], 5.40, epsilon = 0.005);
        assert_abs_diff_eq!(pct[1], 12.58, epsilon = 0.005);
        assert_abs_diff_eq!(pct[2], 22.37, epsilon = 0.005);
    }

    #[test]
    fn group_binning() {
        let g = group_stats(&[0.0; 4], &[true, false, false, false], &DEFAULT_GROUP_BOUNDARIES).unwrap();
        assert_eq!(g.groups[0].contracts, 4);
        assert_eq!(g.groups[0].claims, 1);
        assert_eq!(g.groups[1].claim_ratio, None);

        let g = group_stats(&[0.3, 0.5, 1.0, 0.29], &[false; 4], &DEFAULT_GROUP_BOUNDARIES).unwrap();
        let counts: Vec<usize> = g.groups.iter().map(|r| r.contracts).collect();
        assert_eq!(counts, vec![1, 1, 2]);
        assert!(group_stats(&[0.1], &[true], &[0.5, 0.3]).is_err());
    }

    #[test]
    fn threshold_curve_enumeration() {
        let scores = [0.05, 0.12, 0.3, 0.31, 0.5, 0.55, 0.7, 0.71, 0.9, 1.0];
        let labels = [false, false, true, false, false, true, false, true, true, false];
        let c = threshold_curve(&scores, &labels).unwrap();
        assert_eq!(c.thresholds.len(), 101);
        for (k, t) in c.thresholds.iter().enumerate() {
            let subset: Vec<usize> = (0..10).filter(|&i| scores[i] >= *t).collect();
            assert_eq!(c.contract_fraction[k], subset.len() as f64 / 10.0);
            let expected = if subset.is_empty() {
                None
            } else {
                Some(subset.iter().filter(|&&i| labels[i]).count() as f64 / subset.len() as f64)
            };
            assert_eq!(c.claim_ratio[k], expected);
        }
        assert_eq!(c.contract_fraction[0], 1.0);
        assert_eq!(c.claim_ratio[0], Some(0.4));

        let c = threshold_curve(&[0.2, 0.4], &[true, false]).unwrap();
        assert_eq!(c.claim_ratio[50], None);
        assert_eq!(c.contract_fraction[50], 0.0);
        assert!(c.to_csv().starts_with("threshold,contract_fraction,claim_ratio\n0,1,0.5\n"));
    }

    #[test]
    fn top_fraction_rules() {
        let scores = [0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.3, 0.4, 0.6, 0.7];
        let labels = [true, false, false, true, false, true, false, false, false, false];
        let t = top_fraction_table(&scores, &labels, &[1.0, 0.5, 0.2, 0.1, 0.25]).unwrap();
        assert_eq!(t[0].claim_percentage, 30.0);
        assert_eq!(t[1].contracts, 5);
        assert_eq!(t[2].contracts, 2);
        assert_eq!(t[2].claim_percentage, 100.0);
        assert_eq!(t[4].contracts, 3);
        // Ties: indices 2 and 3 both score 0.5; the lower index is taken first.
        let t = top_fraction_table(&[0.5, 0.5], &[false, true], &[0.5]).unwrap();
        assert_eq!(t[0].claims, 0);
        let big = vec![0.5; 30000];
        let lab = vec![false; 30000];
        assert_eq!(top_fraction_table(&big, &lab, &[0.1]).unwrap()[0].contracts, 3000);
    }

    #[test]
    fn report_conservation_and_optional_block() {
        let scores = [0.1, 0.7, 0.4, 0.9, 0.2];
        let labels = [false, true, false, true, false];
        let r = build_report(&scores, &labels, 3, &DEFAULT_GROUP_BOUNDARIES, None).unwrap();
        assert_eq!(r.n_retained + r.n_out_of_surface, 8);
        assert_eq!(r.n_submitted, 8);
        assert!(r.insurer.is_none());
        assert_eq!(r.top_fractions[0].claim_percentage, 100.0 * r.claim_ratio);
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("insurer"));
        let r = build_report(&scores, &labels, 0, &DEFAULT_GROUP_BOUNDARIES, Some(&[0.5, 0.4, 0.3, 0.2, 0.1])).unwrap();
        assert!(r.insurer.is_some());
        assert!(r.to_text().contains("insurer risk"));
    }
}
