//! Side-by-side comparison of evaluation reports.

use std::collections::BTreeMap;

use super::eval::EvalReport;
use crate::error::{Error, Result};

/// Refuses report sets that were not produced under comparable settings:
/// all must share overlap and width, and reports of one dataset must share
/// the data digest.
pub fn check_compatible(reports: &[EvalReport]) -> Result<()> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("no reports given".into()))?;
    let mut digests: BTreeMap<&str, &str> = BTreeMap::new();
    for r in reports {
        if r.overlap != first.overlap || r.width != first.width {
            return Err(Error::Config(format!(
                "{} / {} uses overlap {} and width {}, expected {} and {}",
                r.dataset, r.method, r.overlap, r.width, first.overlap, first.width
            )));
        }
        let d = digests.entry(&r.dataset).or_insert(&r.data_digest);
        if *d != r.data_digest {
            return Err(Error::Config(format!(
                "reports for dataset `{}` were built from different data settings",
                r.dataset
            )));
        }
    }
    Ok(())
}

/// Reports grouped by dataset (in first-seen order), each group sorted by
/// prediction-region IoU, best first.
pub fn ranked(reports: &[EvalReport]) -> Vec<(String, Vec<&EvalReport>)> {
    let mut groups: Vec<(String, Vec<&EvalReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(d, _)| *d == r.dataset) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.dataset.clone(), vec![r])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|a, b| b.pooled.pred_iou.mean.total_cmp(&a.pooled.pred_iou.mean));
    }
    groups
}

pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<12} {:<12} {:>13} {:>13} {:>13}  {}\n",
        "dataset", "method", "IoU (pred)", "JSD (pred)", "IoU (recon)", "per-seed IoU (pred)"
    );
    for (dataset, group) in ranked(reports) {
        for r in group {
            let seeds: Vec<String> = r
                .per_seed
                .iter()
                .filter_map(|p| p.seed.map(|seed| format!("{seed}:{:.3}", p.summary.pred_iou.mean)))
                .collect();
            s.push_str(&format!(
                "{:<12} {:<12} {:>13} {:>13} {:>13}  {}\n",
                dataset,
                r.method,
                r.pooled.pred_iou.to_string(),
                r.pooled.pred_jsd.to_string(),
                r.pooled.recon_iou.to_string(),
                seeds.join(" ")
            ));
        }
    }
    s
}

/// `dataset,method,iou_pred_mean,iou_pred_std,jsd_pred_mean,jsd_pred_std,iou_recon_mean,iou_recon_std`
pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "dataset,method,iou_pred_mean,iou_pred_std,jsd_pred_mean,jsd_pred_std,iou_recon_mean,iou_recon_std\n",
    );
    for (dataset, group) in ranked(reports) {
        for r in group {
            let p = &r.pooled;
            s.push_str(&format!(
                "{dataset},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.method,
                p.pred_iou.mean,
                p.pred_iou.std,
                p.pred_jsd.mean,
                p.pred_jsd.std,
                p.recon_iou.mean,
                p.recon_iou.std
            ));
        }
    }
    s
}

/// Prediction-region IoU curves: one row per prediction column (indexed
/// from 0), one column per `dataset/method`.
pub fn profile_csv(reports: &[EvalReport]) -> String {
    let groups = ranked(reports);
    let series: Vec<(String, &[f64])> = groups
        .iter()
        .flat_map(|(d, g)| g.iter().map(move |r| (format!("{d}/{}", r.method), r.prediction_profile())))
        .collect();
    let n = series.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
    let mut s = String::from("column");
    for (name, _) in &series {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for c in 0..n {
        s.push_str(&c.to_string());
        for (_, p) in &series {
            s.push_str(&format!(",{:.6}", p.get(c).copied().unwrap_or(f64::NAN)));
        }
        s.push('\n');
    }
    s
}
