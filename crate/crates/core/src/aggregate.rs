use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::nearest_rank;
use crate::region::RegionReport;

/// The numeric report fields the aggregator summarizes, in output order.
const FIELDS: [&str; 8] = [
    "alpha",
    "a_ood_alpha",
    "a_ood",
    "a_id",
    "ood_gain",
    "id_gain",
    "coverage_ood",
    "coverage_id",
];

fn field_value(report: &RegionReport, field: &str) -> Option<f64> {
    match field {
        "alpha" => Some(report.alpha),
        "a_ood_alpha" => report.a_ood_alpha,
        "a_ood" => Some(report.a_ood),
        "a_id" => Some(report.a_id),
        "ood_gain" => report.ood_gain,
        "id_gain" => report.id_gain,
        "coverage_ood" => Some(report.coverage_ood),
        "coverage_id" => Some(report.coverage_id),
        _ => unreachable!("unknown report field"),
    }
}

/// Median: middle element for odd counts, mean of the two middles for even.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0)
    }
}

/// Median and nearest-rank 5%/95% quantiles per report field, grouped by the
/// requested meta keys. Reports missing a key fall into the "" group segment;
/// empty-region sentinel values are excluded from that field's statistics.
///
/// Output is a long-format CSV: group,field,n,median,q05,q95.
pub fn aggregate_reports(reports: &[RegionReport], group_by: &[String]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut groups: BTreeMap<String, Vec<&RegionReport>> = BTreeMap::new();
    for report in reports {
        let key = if group_by.is_empty() {
            "all".to_string()
        } else {
            group_by
                .iter()
                .map(|k| report.meta.get(k).cloned().unwrap_or_default())
                .collect::<Vec<_>>()
                .join("/")
        };
        groups.entry(key).or_default().push(report);
    }

    let mut out = String::from("group,field,n,median,q05,q95\n");
    for (group, members) in &groups {
        for field in FIELDS {
            let values: Vec<f64> = members
                .iter()
                .filter_map(|r| field_value(r, field))
                .collect();
            if values.is_empty() {
                out.push_str(&format!("{group},{field},0,,,\n"));
                continue;
            }
            let med = median(&values)?;
            let q05 = nearest_rank(&values, 0.05)?;
            let q95 = nearest_rank(&values, 0.95)?;
            out.push_str(&format!(
                "{group},{field},{},{med},{q05},{q95}\n",
                values.len()
            ));
        }
    }
    Ok(out)
}
