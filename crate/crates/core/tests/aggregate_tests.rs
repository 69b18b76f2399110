use competence_kit::error::Error;
use competence_kit::{
    aggregate_reports, median, region_report, report_at_threshold, RegionReport, Threshold,
};

#[test]
fn median_reference_cases() {
    assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    assert_eq!(median(&[7.0]).unwrap(), 7.0);
    assert!(matches!(median(&[]), Err(Error::EmptyScores)));
}

fn sample_report(alpha_quantile: f64) -> RegionReport {
    let id_scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let ood_scores: Vec<f64> = (0..10).map(|i| i as f64 * 2.0).collect();
    let ood_correct: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
    region_report(&id_scores, 0.9, &ood_scores, &ood_correct, alpha_quantile).unwrap()
}

fn empty_region_report() -> RegionReport {
    let id_scores = [1.0, 2.0, 3.0];
    let ood_scores = [5.0, 6.0];
    report_at_threshold(&Threshold::manual(0.0), &id_scores, 0.9, &ood_scores, &[true, false])
        .unwrap()
}

#[test]
fn single_report_collapses_to_its_own_values() {
    let report = sample_report(0.95);
    let csv = aggregate_reports(std::slice::from_ref(&report), &[]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "group,field,n,median,q05,q95");
    assert_eq!(lines.len(), 9);

    let alpha_row = lines.iter().find(|l| l.starts_with("all,alpha,")).unwrap();
    let expected = format!(
        "all,alpha,1,{a},{a},{a}",
        a = report.alpha
    );
    assert_eq!(*alpha_row, expected);

    let coverage_row = lines
        .iter()
        .find(|l| l.starts_with("all,coverage_ood,"))
        .unwrap();
    assert!(coverage_row.ends_with(&format!(
        "1,{c},{c},{c}",
        c = report.coverage_ood
    )));
}

#[test]
fn field_order_is_stable() {
    let report = sample_report(0.9);
    let csv = aggregate_reports(std::slice::from_ref(&report), &[]).unwrap();
    let fields: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(
        fields,
        [
            "alpha",
            "a_ood_alpha",
            "a_ood",
            "a_id",
            "ood_gain",
            "id_gain",
            "coverage_ood",
            "coverage_id"
        ]
    );
}

#[test]
fn quantiles_follow_the_nearest_rank_rule() {
    // 40 alphas in scrambled order; the 5% and 95% cells must be the 2nd and
    // 38th order statistics.
    let mut reports = Vec::new();
    for i in 0..40u64 {
        let mut r = sample_report(0.95);
        r.alpha = ((i * 17) % 40) as f64;
        reports.push(r);
    }
    let csv = aggregate_reports(&reports, &[]).unwrap();
    let alpha_row = csv
        .lines()
        .find(|l| l.starts_with("all,alpha,"))
        .unwrap()
        .to_string();
    let cells: Vec<&str> = alpha_row.split(',').collect();
    assert_eq!(cells[2], "40");
    assert_eq!(cells[3].parse::<f64>().unwrap(), 19.5);
    assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0);
    assert_eq!(cells[5].parse::<f64>().unwrap(), 37.0);
}

#[test]
fn grouping_uses_meta_keys_in_order() {
    let mut reports = Vec::new();
    for (method, seed) in [("softmax", "1"), ("softmax", "2"), ("energy", "1")] {
        let mut r = sample_report(0.95);
        r.meta.insert("method".to_string(), method.to_string());
        r.meta.insert("seed".to_string(), seed.to_string());
        reports.push(r);
    }

    let csv = aggregate_reports(&reports, &["method".to_string()]).unwrap();
    let groups: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(groups.len(), 16);
    assert!(groups[..8].iter().all(|&g| g == "energy"));
    assert!(groups[8..].iter().all(|&g| g == "softmax"));
    let energy_alpha = csv.lines().find(|l| l.starts_with("energy,alpha,")).unwrap();
    assert_eq!(energy_alpha.split(',').nth(2).unwrap(), "1");

    let nested = aggregate_reports(
        &reports,
        &["method".to_string(), "seed".to_string()],
    )
    .unwrap();
    assert!(nested.lines().any(|l| l.starts_with("softmax/1,")));
    assert!(nested.lines().any(|l| l.starts_with("softmax/2,")));
    assert!(nested.lines().any(|l| l.starts_with("energy/1,")));

    // A key absent from the meta map lands in the empty segment.
    let missing = aggregate_reports(&reports, &["task".to_string()]).unwrap();
    assert!(missing.lines().skip(1).all(|l| l.starts_with(',')));
}

#[test]
fn empty_region_sentinels_are_excluded() {
    let all_empty = vec![empty_region_report(), empty_region_report()];
    let csv = aggregate_reports(&all_empty, &[]).unwrap();
    assert!(csv.lines().any(|l| l == "all,a_ood_alpha,0,,,"));
    assert!(csv.lines().any(|l| l == "all,ood_gain,0,,,"));
    assert!(csv.lines().any(|l| l == "all,id_gain,0,,,"));
    let alpha_row = csv.lines().find(|l| l.starts_with("all,alpha,")).unwrap();
    assert_eq!(alpha_row.split(',').nth(2).unwrap(), "2");

    // Mixed: only the populated reports feed the statistics.
    let mut full = sample_report(0.95);
    full.meta.clear();
    let mixed = vec![empty_region_report(), full.clone()];
    let csv = aggregate_reports(&mixed, &[]).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("all,a_ood_alpha,"))
        .unwrap()
        .to_string();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[2], "1");
    assert_eq!(
        cells[3].parse::<f64>().unwrap(),
        full.a_ood_alpha.unwrap()
    );
}

#[test]
fn empty_input_is_an_error() {
    assert!(matches!(
        aggregate_reports(&[], &[]),
        Err(Error::EmptyScores)
    ));
}
