use crate::{Error, Result};

fn check_classes(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    let pos = scores.iter().filter(|(_, y)| *y).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("ranking scores"));
    }
    Ok((pos, neg))
}

/// Sorted descending by score, grouped into runs of equal scores; yields
/// (positives, negatives) per group.
fn tie_groups(scores: &[(f64, bool)]) -> Vec<(usize, usize)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = None;
    for (s, y) in sorted {
        if last != Some(s) {
            groups.push((0, 0));
            last = Some(s);
        }
        let g = groups.last_mut().expect("group pushed");
        if y {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Pair-counting numerator in half units: 2 per positive outscoring a
/// negative, 1 per tie. Returns (numerator, 2·P·N).
pub fn auroc_half_units(scores: &[(f64, bool)]) -> Result<(u128, u128)> {
    let (pos, neg) = check_classes(scores)?;
    let mut negatives_below = neg as u128;
    let mut numerator = 0u128;
    for (p, n) in tie_groups(scores) {
        negatives_below -= n as u128;
        numerator += p as u128 * (2 * negatives_below + n as u128);
    }
    Ok((numerator, 2 * pos as u128 * neg as u128))
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let (num, den) = auroc_half_units(scores)?;
    Ok(num as f64 / den as f64)
}

/// Average precision with tied scores entering together:
/// `Σ_groups (tp_g / P) · precision_g`, summed from the highest score down.
pub fn aupr(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, _) = check_classes(scores)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (p, n) in tie_groups(scores) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// False-positive rate at the highest threshold whose true-positive rate
/// reaches 0.95, flagging `score ≥ threshold` as positive.
pub fn fpr_at_95(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, neg) = check_classes(scores)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (p, n) in tie_groups(scores) {
        tp += p;
        fp += n;
        if tp as f64 >= 0.95 * pos as f64 {
            return Ok(fp as f64 / neg as f64);
        }
    }
    unreachable!("all positives flagged at the lowest threshold")
}
