//! Survey-style rank aggregation: mean rank and first-mode rank per item,
//! with partial ballots allowed.

use crate::error::{Error, Result};
use crate::output::csv_field;

/// Per-participant rankings over a fixed item list. `None` marks an item the
/// participant left unranked; the ranks a partial ballot does assign must
/// still form the prefix 1..=k of the rank scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RankBallots {
    pub items: Vec<String>,
    pub ballots: Vec<Vec<Option<u32>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSummary {
    pub items: Vec<String>,
    /// Mean over the ballots that ranked the item.
    pub mean: Vec<f64>,
    /// Most frequent rank; ties break toward the lower (better) rank.
    pub mode: Vec<u32>,
}

impl RankBallots {
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Config("rank items list is empty".into()));
        }
        if self.ballots.is_empty() {
            return Err(Error::Config("at least one ballot is required".into()));
        }
        for (bi, ballot) in self.ballots.iter().enumerate() {
            if ballot.len() != self.items.len() {
                return Err(Error::Format(format!(
                    "ballot {bi} ranks {} items, expected {}",
                    ballot.len(),
                    self.items.len()
                )));
            }
            let mut ranks: Vec<u32> = ballot.iter().flatten().copied().collect();
            if ranks.is_empty() {
                return Err(Error::Format(format!("ballot {bi} ranks nothing")));
            }
            ranks.sort_unstable();
            for (i, &r) in ranks.iter().enumerate() {
                if r != i as u32 + 1 {
                    return Err(Error::Format(format!(
                        "ballot {bi} is not a permutation of 1..={}: saw ranks {ranks:?}",
                        ranks.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean and mode rank per item; items missing from a ballot are excluded
/// from that item's statistics.
pub fn aggregate_rankings(ballots: &RankBallots) -> Result<RankSummary> {
    ballots.validate()?;
    let n_items = ballots.items.len();
    let mut means = Vec::with_capacity(n_items);
    let mut modes = Vec::with_capacity(n_items);
    for item in 0..n_items {
        let ranked: Vec<u32> = ballots
            .ballots
            .iter()
            .filter_map(|b| b[item])
            .collect();
        if ranked.is_empty() {
            return Err(Error::Format(format!(
                "item {:?} was never ranked",
                ballots.items[item]
            )));
        }
        let mean = ranked.iter().map(|&r| f64::from(r)).sum::<f64>() / ranked.len() as f64;
        let max_rank = *ranked.iter().max().expect("nonempty") as usize;
        let mut counts = vec![0usize; max_rank + 1];
        for &r in &ranked {
            counts[r as usize] += 1;
        }
        // scan low to high with a strict comparison: ties go to the lower rank
        let mut mode = 1u32;
        let mut best = 0usize;
        for (rank, &count) in counts.iter().enumerate().skip(1) {
            if count > best {
                best = count;
                mode = rank as u32;
            }
        }
        means.push(mean);
        modes.push(mode);
    }
    Ok(RankSummary { items: ballots.items.clone(), mean: means, mode: modes })
}

/// One labeled group of ballots (one "prompt pair" row of the survey table).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBallots {
    pub label: String,
    pub ballots: RankBallots,
}

/// Survey-table CSV: one row per labeled group, columns
/// `label,<item>_mean,<item>_mode,...` with means printed to two decimals,
/// mirroring the published table layout.
pub fn rank_table_csv(groups: &[(String, RankSummary)]) -> Result<String> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Config("no rank groups to format".into()))?;
    let items = &first.1.items;
    let mut out = String::from("label");
    for item in items {
        out.push_str(&format!(",{item}_mean,{item}_mode"));
    }
    out.push('\n');
    for (label, summary) in groups {
        if &summary.items != items {
            return Err(Error::Contract(format!(
                "group {label:?} has a different item list"
            )));
        }
        out.push_str(&csv_field(label));
        for i in 0..items.len() {
            out.push_str(&format!(",{:.2},{}", summary.mean[i], summary.mode[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a ballots CSV: header `label,<item>,...`, one row per
/// (group, participant) with that participant's rank per item; empty cells
/// mark unranked items. Groups aggregate in first-appearance order.
pub fn parse_ballots_csv(text: &str) -> Result<Vec<LabeledBallots>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("ballots file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(Error::Format(
            "ballots header must be 'label,<item>,...'".into(),
        ));
    }
    let items: Vec<String> = cols[1..].iter().map(|s| s.trim().to_owned()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut by_label: std::collections::HashMap<String, Vec<Vec<Option<u32>>>> =
        std::collections::HashMap::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != items.len() + 1 {
            return Err(Error::Format(format!(
                "ballots line {}: expected {} fields, got {}",
                ln + 2,
                items.len() + 1,
                fields.len()
            )));
        }
        let label = fields[0].trim().to_owned();
        let mut ballot = Vec::with_capacity(items.len());
        for f in &fields[1..] {
            let f = f.trim();
            if f.is_empty() {
                ballot.push(None);
            } else {
                let rank: u32 = f.parse().map_err(|_| {
                    Error::Format(format!("ballots line {}: bad rank {f:?}", ln + 2))
                })?;
                ballot.push(Some(rank));
            }
        }
        if !by_label.contains_key(&label) {
            order.push(label.clone());
        }
        by_label.entry(label).or_default().push(ballot);
    }
    if order.is_empty() {
        return Err(Error::Format("ballots file has no data rows".into()));
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let ballots = by_label.remove(&label).expect("label recorded");
            LabeledBallots {
                label,
                ballots: RankBallots { items: items.clone(), ballots },
            }
        })
        .collect())
}
