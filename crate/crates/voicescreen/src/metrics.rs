//! Evaluation: ROC/AUC, the equal-error operating point, per-cutoff decision
//! problems and their per-task aggregation, exact threshold tuning for
//! ordinal buckets via dynamic programming, and correlation statistics.
//!
//! Orientation is fixed throughout: higher score means more severe, and a
//! recording is classified positive when its score is at or above the
//! threshold.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::{Error, Result};

/// One scored recording paired with its labels, as stored in score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRow {
    pub recording_id: String,
    pub voice_id: String,
    pub score_dep: f64,
    pub score_anx: f64,
    pub phq9: u8,
    pub gad7: u8,
}

impl ScoreRow {
    pub fn score(&self, task: Task) -> f64 {
        match task {
            Task::Depression => self.score_dep,
            Task::Anxiety => self.score_anx,
        }
    }

    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Depression => self.phq9,
            Task::Anxiety => self.gad7,
        }
    }
}

/// Screening cutoffs that define each task's aggregate metric.
pub fn task_cutoffs(task: Task) -> &'static [u8] {
    match task {
        Task::Depression => &[10, 15],
        Task::Anxiety => &[5, 10, 15],
    }
}

/// The threshold where sensitivity and specificity are jointly maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// min(sensitivity, specificity) as a fraction in [0, 1].
    pub min_sn_sp: f64,
}

impl OperatingPoint {
    /// The reported headline number: 100 × min(Sn, Sp).
    pub fn percent(&self) -> f64 {
        100.0 * self.min_sn_sp
    }
}

fn check_two_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("need at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// P(score⁺ > score⁻) + ½·P(equal), via average ranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let (pos, neg) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average rank within each tie run (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// ROC staircase points (fpr, tpr, threshold), thresholds descending from
/// all-negative to all-positive.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    assert_eq!(scores.len(), labels.len());
    let (pos, neg) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![(0.0, 0.0, scores[order[0]] + 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64, s));
    }
    Ok(points)
}

/// Candidate thresholds: below every score, midpoints between adjacent
/// distinct scores, and above every score.
fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sorted.dedup();
    let mut cands = Vec::with_capacity(sorted.len() + 1);
    cands.push(sorted[0] - 1.0);
    for w in sorted.windows(2) {
        cands.push((w[0] + w[1]) / 2.0);
    }
    cands.push(sorted[sorted.len() - 1] + 1.0);
    cands
}

/// Sweep every achievable operating point and return the one maximizing
/// min(Sn, Sp); ties prefer larger Sn + Sp, then the lower threshold.
pub fn sn_eq_sp(scores: &[f64], labels: &[bool]) -> Result<OperatingPoint> {
    assert_eq!(scores.len(), labels.len());
    let (pos, neg) = check_two_classes(labels)?;
    let mut best: Option<OperatingPoint> = None;
    for t in candidate_thresholds(scores) {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|&(&s, &l)| l && s >= t)
            .count();
        let tn = scores
            .iter()
            .zip(labels)
            .filter(|&(&s, &l)| !l && s < t)
            .count();
        let sn = tp as f64 / pos as f64;
        let sp = tn as f64 / neg as f64;
        let cand = OperatingPoint {
            threshold: t,
            sensitivity: sn,
            specificity: sp,
            min_sn_sp: sn.min(sp),
        };
        let better = match &best {
            None => true,
            Some(b) => {
                cand.min_sn_sp > b.min_sn_sp
                    || (cand.min_sn_sp == b.min_sn_sp
                        && cand.sensitivity + cand.specificity
                            > b.sensitivity + b.specificity)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("non-empty candidate set"))
}

/// One screening decision problem's results at its tuned operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub cutoff: u8,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// 100 × min(Sn, Sp).
    pub sn_eq_sp: f64,
    pub auc: f64,
}

/// Per-task aggregate over the task's screening cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub problems: Vec<ProblemReport>,
    /// Cutoffs skipped because only one class was present.
    pub excluded_cutoffs: Vec<u8>,
    pub single_class_warning: bool,
    /// Unweighted means over the evaluated problems; absent if all cutoffs
    /// were excluded.
    pub mean_sn_eq_sp: Option<f64>,
    pub mean_auc: Option<f64>,
}

/// Evaluate every cutoff of `task` over the rows. Cutoffs where the sample
/// has a single class are excluded and flagged rather than failing the run.
pub fn task_aggregate(rows: &[ScoreRow], task: Task) -> Result<TaskReport> {
    if rows.is_empty() {
        return Err(Error::invalid("no scored recordings to evaluate"));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score(task)).collect();
    let mut problems = Vec::new();
    let mut excluded = Vec::new();
    for &cutoff in task_cutoffs(task) {
        let labels: Vec<bool> = rows.iter().map(|r| r.label(task) >= cutoff).collect();
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            excluded.push(cutoff);
            continue;
        }
        let op = sn_eq_sp(&scores, &labels)?;
        let auc = roc_auc(&scores, &labels)?;
        problems.push(ProblemReport {
            cutoff,
            threshold: op.threshold,
            sensitivity: op.sensitivity,
            specificity: op.specificity,
            sn_eq_sp: op.percent(),
            auc,
        });
    }
    let n = problems.len() as f64;
    let (mean_sn_eq_sp, mean_auc) = if problems.is_empty() {
        (None, None)
    } else {
        (
            Some(problems.iter().map(|p| p.sn_eq_sp).sum::<f64>() / n),
            Some(problems.iter().map(|p| p.auc).sum::<f64>() / n),
        )
    };
    Ok(TaskReport {
        task,
        problems,
        single_class_warning: !excluded.is_empty(),
        excluded_cutoffs: excluded,
        mean_sn_eq_sp,
        mean_auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub pearson: f64,
    pub spearman: f64,
    pub kendall: f64,
}

/// Pearson r, Spearman ρ (average ranks), and tie-corrected Kendall τ.
pub fn correlations(x: &[f64], y: &[f64]) -> Result<CorrelationBlock> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("correlation needs two equal-length lists, n ≥ 2"));
    }
    Ok(CorrelationBlock {
        pearson: pearson(x, y)?,
        spearman: pearson(&average_ranks(x), &average_ranks(y))?,
        kendall: kendall_tau_b(x, y)?,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined for zero-variance input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite values"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_x, mut ties_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite values");
            let dy = y[i].partial_cmp(&y[j]).expect("finite values");
            use std::cmp::Ordering::Equal;
            match (dx == Equal, dy == Equal) {
                (true, true) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (true, false) => ties_x += 1,
                (false, true) => ties_y += 1,
                (false, false) => {
                    if dx == dy {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::invalid("rank correlation undefined for constant input"));
    }
    Ok((concordant - discordant) as f64 / denom)
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Macro-averaged recall of monotone thresholds over ordinal buckets:
/// item i is predicted bucket #{j : score_i ≥ t_j}.
pub fn macro_recall(scores: &[f64], buckets: &[usize], thresholds: &[f64], k: usize) -> f64 {
    assert_eq!(scores.len(), buckets.len());
    assert_eq!(thresholds.len(), k - 1);
    let mut correct = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (&s, &b) in scores.iter().zip(buckets) {
        totals[b] += 1;
        let pred = thresholds.iter().filter(|&&t| s >= t).count();
        if pred == b {
            correct[b] += 1;
        }
    }
    (0..k)
        .map(|b| correct[b] as f64 / totals[b] as f64)
        .sum::<f64>()
        / k as f64
}

/// Exact monotone thresholds t_1 ≤ … ≤ t_{K−1} maximizing macro-averaged
/// recall, by dynamic programming over sorted cut positions.
///
/// Recall fractions are compared exactly: each bucket-b correct item is worth
/// lcm(counts)/n_b, an integer, so the DP has no floating-point objective.
/// Among equal optima the lexicographically smallest threshold vector wins.
pub fn dp_thresholds(scores: &[f64], buckets: &[usize], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid("need at least two buckets"));
    }
    if scores.len() != buckets.len() || scores.len() < k {
        return Err(Error::invalid("need at least one item per bucket"));
    }
    if buckets.iter().any(|&b| b >= k) {
        return Err(Error::invalid("bucket index out of range"));
    }
    let mut counts = vec![0i128; k];
    for &b in buckets {
        counts[b] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("every bucket must be represented"));
    }
    // Integer weights: w_b = lcm / n_b.
    let lcm = counts.iter().fold(1i128, |acc, &c| acc / gcd(acc, c) * c);
    let weights: Vec<i128> = counts.iter().map(|&c| lcm / c).collect();

    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let sorted_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let sorted_buckets: Vec<usize> = order.iter().map(|&i| buckets[i]).collect();

    // Valid cut positions: 0, n, and indices between distinct scores.
    let mut positions = vec![0usize];
    for i in 1..n {
        if sorted_scores[i] > sorted_scores[i - 1] {
            positions.push(i);
        }
    }
    positions.push(n);
    let m = positions.len();

    // prefix[b][p] = bucket-b items among the first positions[p] sorted items.
    let mut prefix = vec![vec![0i128; m]; k];
    for (pi, &p) in positions.iter().enumerate() {
        if pi == 0 {
            continue;
        }
        for b in 0..k {
            prefix[b][pi] = prefix[b][pi - 1];
        }
        for i in positions[pi - 1]..p {
            prefix[sorted_buckets[i]][pi] += weights[sorted_buckets[i]];
        }
    }

    // Forward: f[j][p] = best weighted correct count when segments 0..j cover
    // the items before positions[p] (so cut j sits at positions[p]).
    // f[j+1][p] = prefix[j][p]·1 + max_{p' ≤ p} (f[j][p'] − prefix[j][p']).
    const NEG: i128 = i128::MIN / 4;
    let mut f = vec![vec![NEG; m]; k + 1];
    f[0][0] = 0;
    for j in 0..k {
        let mut running = NEG;
        for p in 0..m {
            if f[j][p] > NEG {
                running = running.max(f[j][p] - prefix[j][p]);
            }
            if running > NEG {
                f[j + 1][p] = running + prefix[j][p];
            }
        }
    }
    let opt = f[k][m - 1];

    // Backward: h[j][p] = best value of segments j..K−1 covering the items
    // from positions[p] on.
    let mut h = vec![vec![NEG; m]; k + 1];
    h[k][m - 1] = 0;
    for j in (0..k).rev() {
        let mut running = NEG;
        for p in (0..m).rev() {
            if h[j + 1][p] > NEG {
                running = running.max(h[j + 1][p] + prefix[j][p]);
            }
            if running > NEG {
                h[j][p] = running - prefix[j][p];
            }
        }
    }
    debug_assert_eq!(h[0][0], opt);

    // Reconstruct the lexicographically smallest optimal cut positions:
    // greedily take the earliest cut consistent with the optimum.
    let mut cut_positions = Vec::with_capacity(k - 1);
    let mut value_so_far = 0i128;
    let mut prev = 0usize; // index into positions
    for j in 0..k - 1 {
        for p in prev..m {
            let seg_gain = prefix[j][p] - prefix[j][prev];
            if value_so_far + seg_gain + h[j + 1][p] == opt {
                cut_positions.push(p);
                value_so_far += seg_gain;
                prev = p;
                break;
            }
        }
        assert_eq!(cut_positions.len(), j + 1, "reconstruction failed");
    }

    // Positions → thresholds at midpoints (sentinels beyond the extremes).
    let thresholds = cut_positions
        .iter()
        .map(|&pi| {
            let p = positions[pi];
            if p == 0 {
                sorted_scores[0] - 1.0
            } else if p == n {
                sorted_scores[n - 1] + 1.0
            } else {
                (sorted_scores[p - 1] + sorted_scores[p]) / 2.0
            }
        })
        .collect();
    Ok(thresholds)
}

/// Exhaustive reference for [`dp_thresholds`]: every non-decreasing placement
/// of K−1 cuts over the valid positions, first optimum in lexicographic
/// order. Exponential in K; for tests only.
pub fn brute_force_thresholds(scores: &[f64], buckets: &[usize], k: usize) -> Result<Vec<f64>> {
    if k < 2 || scores.len() != buckets.len() || scores.len() < k {
        return Err(Error::invalid("invalid brute-force instance"));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let sorted_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut positions = vec![0usize];
    for i in 1..n {
        if sorted_scores[i] > sorted_scores[i - 1] {
            positions.push(i);
        }
    }
    positions.push(n);
    let to_threshold = |p: usize| -> f64 {
        if p == 0 {
            sorted_scores[0] - 1.0
        } else if p == n {
            sorted_scores[n - 1] + 1.0
        } else {
            (sorted_scores[p - 1] + sorted_scores[p]) / 2.0
        }
    };

    // Odometer over non-decreasing position-index vectors, in lexicographic
    // order so the first optimum found is the lexicographically smallest.
    fn advance(stack: &mut [usize], limit: usize) -> bool {
        for i in (0..stack.len()).rev() {
            if stack[i] + 1 < limit {
                stack[i] += 1;
                let v = stack[i];
                for s in stack[i + 1..].iter_mut() {
                    *s = v;
                }
                return true;
            }
        }
        false
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stack = vec![0usize; k - 1];
    loop {
        let thresholds: Vec<f64> =
            stack.iter().map(|&pi| to_threshold(positions[pi])).collect();
        let value = macro_recall(scores, buckets, &thresholds, k);
        if best.as_ref().map_or(true, |(bv, _)| value > *bv + 1e-12) {
            best = Some((value, thresholds));
        }
        if !advance(&mut stack, positions.len()) {
            return Ok(best.unwrap().1);
        }
    }
}
