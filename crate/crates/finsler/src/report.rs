//! Serialization of diagnostic reports.
//!
//! JSON carries full-precision singular values so rank can be
//! re-thresholded without rerunning; CSV carries the flat tables.

use crate::holonomy::{DependenceTestResult, RankReport};

/// JSON value of a rank report (singular values at full precision).
pub fn rank_report_json(report: &RankReport) -> serde_json::Value {
    serde_json::to_value(report).expect("rank report serializes")
}

/// CSV rows `metric,x1,x2,round,field_count,rank,classification` with a
/// header line.
pub fn rank_report_csv(reports: &[RankReport]) -> String {
    let mut out = String::from("metric,x1,x2,round,field_count,rank,classification\n");
    for report in reports {
        for round in &report.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                report.metric,
                report.point[0],
                report.point[1],
                round.round,
                round.field_count,
                round.rank,
                report.classification()
            ));
        }
    }
    out
}

/// JSON value of a dependence test result.
pub fn dependence_json(result: &DependenceTestResult) -> serde_json::Value {
    serde_json::to_value(result).expect("dependence result serializes")
}

/// CSV rows `metric,x1,x2,family,form,rank,residual` with a header line.
/// The base `{1, P₁, P₂}` family has no form or residual columns filled.
pub fn dependence_csv(results: &[DependenceTestResult]) -> String {
    let mut out = String::from("metric,x1,x2,family,form,rank,residual\n");
    for result in results {
        out.push_str(&format!(
            "{},{},{},base,,{},\n",
            result.metric, result.point[0], result.point[1], result.base_rank
        ));
        for family in &result.families {
            let name = format!("q{}{}", family.j, family.k);
            out.push_str(&format!(
                "{},{},{},{},product,{},{}\n",
                result.metric,
                result.point[0],
                result.point[1],
                name,
                family.rank_product_form,
                family
                    .dependence_product_form
                    .as_ref()
                    .map(|d| d.residual.to_string())
                    .unwrap_or_default()
            ));
            out.push_str(&format!(
                "{},{},{},{},hessian,{},{}\n",
                result.metric,
                result.point[0],
                result.point[1],
                name,
                family.rank_hessian_form,
                family
                    .dependence_hessian_form
                    .as_ref()
                    .map(|d| d.residual.to_string())
                    .unwrap_or_default()
            ));
        }
    }
    out
}
