//! Report layer: global feature-importance rankings, beeswarm- and
//! waterfall-ready datasets, deterministic template-based explanations, and
//! run-to-run comparison tables.
//!
//! Everything here is a pure function of attribution inputs. Explanations
//! are filled from predefined templates only — every number in the text is
//! recomputable from the attribution it came from.

use serde::{Deserialize, Serialize};

use crate::{Attribution, Error, Result};

/// Per-feature aggregate importance over a batch of attributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub feature_names: Vec<String>,
    /// Mean absolute Shapley value per feature.
    pub mean_abs: Vec<f64>,
    /// Mean signed Shapley value per feature.
    pub mean: Vec<f64>,
    /// Sign of the feature-value vs Shapley-value covariance: -1, 0, +1.
    pub value_corr_sign: Vec<i8>,
    /// Feature indices sorted by mean_abs descending (ties by index).
    pub ranking: Vec<usize>,
}

impl GlobalImportance {
    /// Rank of a feature (0 = most important).
    pub fn rank_of(&self, feature_index: usize) -> usize {
        self.ranking.iter().position(|&f| f == feature_index).expect("ranking is a permutation")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,rank,mean_abs_shap,mean_shap,value_corr_sign\n");
        for &idx in &self.ranking {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.feature_names[idx],
                self.rank_of(idx),
                self.mean_abs[idx],
                self.mean[idx],
                self.value_corr_sign[idx]
            ));
        }
        out
    }

    /// Parse a table previously written by [`GlobalImportance::to_csv`].
    /// Lines starting with `#` are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines =
            text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Schema("importance csv: empty".into()))?;
        let expected = "feature,rank,mean_abs_shap,mean_shap,value_corr_sign";
        if header.trim() != expected {
            let missing =
                expected.split(',').find(|col| !header.contains(col)).unwrap_or("unknown");
            return Err(Error::Schema(format!(
                "importance csv: bad header (missing column `{missing}`)"
            )));
        }
        let mut rows: Vec<(String, usize, f64, f64, i8)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: lineno + 2,
                    msg: format!("expected 5 fields, found {}", parts.len()),
                });
            }
            let parse_err =
                |what: &str| Error::Parse { line: lineno + 2, msg: format!("bad {what}: {line}") };
            rows.push((
                parts[0].to_string(),
                parts[1].parse().map_err(|_| parse_err("rank"))?,
                parts[2].parse().map_err(|_| parse_err("mean_abs_shap"))?,
                parts[3].parse().map_err(|_| parse_err("mean_shap"))?,
                parts[4].parse().map_err(|_| parse_err("value_corr_sign"))?,
            ));
        }
        if rows.is_empty() {
            return Err(Error::Schema("importance csv: no data rows".into()));
        }
        // stored in rank order; the file does not record the original
        // feature layout, so adopt rank order as the layout
        rows.sort_by_key(|r| r.1);
        let n = rows.len();
        let mut gi = GlobalImportance {
            feature_names: Vec::with_capacity(n),
            mean_abs: Vec::with_capacity(n),
            mean: Vec::with_capacity(n),
            value_corr_sign: Vec::with_capacity(n),
            ranking: (0..n).collect(),
        };
        for row in rows {
            gi.feature_names.push(row.0);
            gi.mean_abs.push(row.2);
            gi.mean.push(row.3);
            gi.value_corr_sign.push(row.4);
        }
        Ok(gi)
    }
}

/// Aggregate a batch of attributions into a global importance ranking.
pub fn global_importance(
    attributions: &[Attribution],
    feature_names: &[String],
) -> Result<GlobalImportance> {
    if attributions.is_empty() {
        return Err(Error::invalid("global_importance: empty attribution list"));
    }
    let n = feature_names.len();
    if attributions.iter().any(|a| a.shapley.len() != n) {
        return Err(Error::invalid("global_importance: attribution width != feature names"));
    }
    let count = attributions.len() as f64;
    let mut mean_abs = vec![0.0; n];
    let mut mean = vec![0.0; n];
    for att in attributions {
        for i in 0..n {
            mean_abs[i] += att.shapley[i].abs();
            mean[i] += att.shapley[i];
        }
    }
    for i in 0..n {
        mean_abs[i] /= count;
        mean[i] /= count;
    }
    // covariance sign between raw feature value and shapley value
    let mut value_corr_sign = vec![0i8; n];
    for i in 0..n {
        let v_mean: f64 = attributions.iter().map(|a| a.feature_values[i]).sum::<f64>() / count;
        let s_mean = mean[i];
        let cov: f64 = attributions
            .iter()
            .map(|a| (a.feature_values[i] - v_mean) * (a.shapley[i] - s_mean))
            .sum::<f64>()
            / count;
        value_corr_sign[i] = if cov > 1e-12 {
            1
        } else if cov < -1e-12 {
            -1
        } else {
            0
        };
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| {
        mean_abs[b].partial_cmp(&mean_abs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    Ok(GlobalImportance {
        feature_names: feature_names.to_vec(),
        mean_abs,
        mean,
        value_corr_sign,
        ranking,
    })
}

/// One bar of a waterfall plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallEntry {
    pub feature_index: usize,
    pub feature_name: String,
    pub feature_value: f64,
    pub shapley: f64,
    /// base_value plus all contributions up to and including this one.
    pub cumulative: f64,
}

/// Waterfall-ready dataset for one attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallData {
    pub base_value: f64,
    pub output_value: f64,
    /// Contributions sorted by |shapley| descending.
    pub entries: Vec<WaterfallEntry>,
}

impl WaterfallData {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,feature_name,feature_value,shapley_value,cumulative\n");
        for (k, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k, e.feature_name, e.feature_value, e.shapley, e.cumulative
            ));
        }
        out
    }
}

/// Order one attribution's contributions for a waterfall plot.
pub fn waterfall(attribution: &Attribution, feature_names: &[String]) -> Result<WaterfallData> {
    let n = attribution.shapley.len();
    if feature_names.len() != n {
        return Err(Error::invalid("waterfall: feature name count mismatch"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        attribution.shapley[b]
            .abs()
            .partial_cmp(&attribution.shapley[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut cumulative = attribution.base_value;
    let entries = order
        .into_iter()
        .map(|i| {
            cumulative += attribution.shapley[i];
            WaterfallEntry {
                feature_index: i,
                feature_name: feature_names[i].clone(),
                feature_value: attribution.feature_values[i],
                shapley: attribution.shapley[i],
                cumulative,
            }
        })
        .collect();
    Ok(WaterfallData {
        base_value: attribution.base_value,
        output_value: attribution.output_value,
        entries,
    })
}

/// Context for one explained step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub t: usize,
    pub uav_id: u32,
    pub handover: bool,
    pub serving_bs: u32,
    /// BS chosen by the action (equals `serving_bs` when staying).
    pub target_bs: u32,
}

/// One feature named in an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub name: String,
    /// Share of the total attribution mass, in percent.
    pub share_pct: f64,
    pub shapley: f64,
}

/// A rendered template explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationText {
    pub template_id: String,
    pub text: String,
    pub top_features: Vec<TopFeature>,
}

/// Number of features named per explanation.
pub const EXPLANATION_TOP_K: usize = 3;

/// Fill the handover or stay template from an attribution.
///
/// Shares are percentages of the total |shapley| mass; the direction word
/// comes from the attribution sign. Fully deterministic: identical inputs
/// render identical text.
pub fn render_explanation(
    attribution: &Attribution,
    feature_names: &[String],
    ctx: &StepContext,
) -> Result<ExplanationText> {
    let n = attribution.shapley.len();
    if feature_names.len() != n {
        return Err(Error::invalid("render_explanation: feature name count mismatch"));
    }
    let total_mass: f64 = attribution.shapley.iter().map(|s| s.abs()).sum();
    if total_mass <= 0.0 {
        let text = format!(
            "step {}, UAV {}: {} BS {}. No dominant factor: all feature attributions are zero for this decision.",
            ctx.t,
            ctx.uav_id,
            if ctx.handover { "handover to" } else { "stayed on" },
            ctx.target_bs,
        );
        return Ok(ExplanationText {
            template_id: "no-dominant-factor".into(),
            text,
            top_features: Vec::new(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        attribution.shapley[b]
            .abs()
            .partial_cmp(&attribution.shapley[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top_features: Vec<TopFeature> = order
        .into_iter()
        .take(EXPLANATION_TOP_K)
        .filter(|&i| attribution.shapley[i] != 0.0)
        .map(|i| TopFeature {
            name: feature_names[i].clone(),
            share_pct: 100.0 * attribution.shapley[i].abs() / total_mass,
            shapley: attribution.shapley[i],
        })
        .collect();
    let factors: Vec<String> = top_features
        .iter()
        .map(|f| {
            let direction = if f.shapley > 0.0 {
                "raising the action value"
            } else {
                "lowering the action value"
            };
            format!("{} ({:.1}% share, {})", f.name, f.share_pct, direction)
        })
        .collect();
    let (template_id, text) = if ctx.handover {
        (
            "handover",
            format!(
                "step {}, UAV {}: handover from BS {} to BS {}. Decision driven by {}.",
                ctx.t,
                ctx.uav_id,
                ctx.serving_bs,
                ctx.target_bs,
                factors.join(", ")
            ),
        )
    } else {
        (
            "stay",
            format!(
                "step {}, UAV {}: stayed on BS {}. Decision driven by {}.",
                ctx.t,
                ctx.uav_id,
                ctx.serving_bs,
                factors.join(", ")
            ),
        )
    };
    Ok(ExplanationText { template_id: template_id.into(), text, top_features })
}

/// One row of a run-to-run divergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDivergence {
    pub feature_name: String,
    pub rank_a: usize,
    pub rank_b: usize,
    /// rank_a - rank_b: positive means the feature is more important in B.
    pub rank_shift: i64,
    pub mean_abs_a: f64,
    pub mean_abs_b: f64,
    /// mean_abs_b - mean_abs_a.
    pub delta_mean_abs: f64,
}

/// Per-feature rank shifts and importance deltas between two runs, most
/// divergent first.
pub fn compare_runs(a: &GlobalImportance, b: &GlobalImportance) -> Result<Vec<FeatureDivergence>> {
    let mut names_a = a.feature_names.clone();
    let mut names_b = b.feature_names.clone();
    names_a.sort();
    names_b.sort();
    if names_a != names_b {
        return Err(Error::invalid("compare_runs: feature layouts differ"));
    }
    let mut rows = Vec::with_capacity(a.feature_names.len());
    for (ia, name) in a.feature_names.iter().enumerate() {
        let ib =
            b.feature_names.iter().position(|n| n == name).expect("layouts verified identical");
        let rank_a = a.rank_of(ia);
        let rank_b = b.rank_of(ib);
        rows.push(FeatureDivergence {
            feature_name: name.clone(),
            rank_a,
            rank_b,
            rank_shift: rank_a as i64 - rank_b as i64,
            mean_abs_a: a.mean_abs[ia],
            mean_abs_b: b.mean_abs[ib],
            delta_mean_abs: b.mean_abs[ib] - a.mean_abs[ia],
        });
    }
    rows.sort_by(|x, y| {
        y.rank_shift
            .abs()
            .cmp(&x.rank_shift.abs())
            .then(
                y.delta_mean_abs
                    .abs()
                    .partial_cmp(&x.delta_mean_abs.abs())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(x.feature_name.cmp(&y.feature_name))
    });
    Ok(rows)
}

/// CSV table of a divergence list.
pub fn divergence_to_csv(rows: &[FeatureDivergence]) -> String {
    let mut out =
        String::from("feature,rank_a,rank_b,rank_shift,mean_abs_a,mean_abs_b,delta_mean_abs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.feature_name, r.rank_a, r.rank_b, r.rank_shift, r.mean_abs_a, r.mean_abs_b,
            r.delta_mean_abs
        ));
    }
    out
}

/// Per-instance attribution export, one row per (step, feature): the
/// beeswarm dataset.
pub fn beeswarm_to_csv(attributions: &[Attribution], feature_names: &[String]) -> String {
    let mut out = String::from(
        "step,feature_name,feature_raw_value,feature_normalized_value,shapley_value,base_value,output_value,action,method\n",
    );
    for (step, att) in attributions.iter().enumerate() {
        for (i, name) in feature_names.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                step,
                name,
                att.feature_values[i],
                att.normalized_values[i],
                att.shapley[i],
                att.base_value,
                att.output_value,
                att.target_action,
                att.method
            ));
        }
    }
    out
}
