//! Grounding accuracy at an IoU threshold, with optional per-tag breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Box2D;

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &Box2D, b: &Box2D) -> Result<f64> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(Error::Contract(format!(
            "iou of degenerate box: areas {} and {}",
            a.area(),
            b.area()
        )));
    }
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// One grounded query ready for scoring.
pub struct GroundedQuery<'a> {
    pub query_id: &'a str,
    pub chosen: Box2D,
    pub gt: Option<Box2D>,
    pub tag: Option<&'a str>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TagStats {
    pub total: usize,
    pub hits: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerQuery {
    pub query_id: String,
    pub chosen: Box2D,
    pub gt: Box2D,
    pub iou: f64,
    pub hit: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub hits: usize,
    pub accuracy: f64,
    pub threshold: f64,
    /// Present when at least one query carries a tag.
    pub breakdown: BTreeMap<String, TagStats>,
    pub per_query: Vec<PerQuery>,
}

/// Score grounded queries: a hit is IoU strictly greater than `threshold`.
pub fn accuracy_at_iou(items: &[GroundedQuery<'_>], threshold: f64) -> Result<EvalReport> {
    let missing: Vec<&str> = items
        .iter()
        .filter(|i| i.gt.is_none())
        .map(|i| i.query_id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Contract(format!(
            "queries without a ground-truth box: {}",
            missing.join(", ")
        )));
    }
    let mut hits = 0;
    let mut breakdown: BTreeMap<String, TagStats> = BTreeMap::new();
    let mut per_query = Vec::with_capacity(items.len());
    for item in items {
        let gt = item.gt.expect("checked above");
        let overlap = iou(&item.chosen, &gt)?;
        let hit = overlap > threshold;
        if hit {
            hits += 1;
        }
        if let Some(tag) = item.tag {
            let stats = breakdown.entry(tag.to_string()).or_insert(TagStats {
                total: 0,
                hits: 0,
                accuracy: 0.0,
            });
            stats.total += 1;
            if hit {
                stats.hits += 1;
            }
        }
        per_query.push(PerQuery {
            query_id: item.query_id.to_string(),
            chosen: item.chosen,
            gt,
            iou: overlap,
            hit,
        });
    }
    for stats in breakdown.values_mut() {
        stats.accuracy = stats.hits as f64 / stats.total as f64;
    }
    let total = items.len();
    Ok(EvalReport {
        total,
        hits,
        accuracy: if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        },
        threshold,
        breakdown,
        per_query,
    })
}

impl EvalReport {
    /// Human-readable aligned table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "accuracy@iou>{:.2}  {:>7.4}  ({} / {})",
            self.threshold, self.accuracy, self.hits, self.total
        );
        if !self.breakdown.is_empty() {
            let width = self
                .breakdown
                .keys()
                .map(|k| k.len())
                .max()
                .unwrap_or(4)
                .max(4);
            let _ = writeln!(out, "{:<width$}  {:>7}  {:>6}  {:>6}", "tag", "acc", "hits", "total", width = width);
            for (tag, s) in &self.breakdown {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>7.4}  {:>6}  {:>6}",
                    tag,
                    s.accuracy,
                    s.hits,
                    s.total,
                    width = width
                );
            }
        }
        out
    }

    /// Per-query CSV: query_id, chosen box, gt box, IoU, hit.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from(
            "query_id,chosen_x1,chosen_y1,chosen_x2,chosen_y2,gt_x1,gt_y1,gt_x2,gt_y2,iou,hit\n",
        );
        for q in &self.per_query {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                q.query_id,
                q.chosen.x1,
                q.chosen.y1,
                q.chosen.x2,
                q.chosen.y2,
                q.gt.x1,
                q.gt.y1,
                q.gt.x2,
                q.gt.y2,
                q.iou,
                q.hit as u8
            );
        }
        out
    }
}
