use std::collections::BTreeMap;

use crate::metrics::{AccuracyScores, SimilarityTriple};

/// One emitted report row. Metric columns are optional because
/// similarity protocols and accuracy protocols fill different subsets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub image_id: u64,
    pub model_id: String,
    pub method: String,
    pub swept_field: String,
    pub variant_value: f64,
    pub spearman: Option<f64>,
    pub pearson_hog: Option<f64>,
    pub ssim: Option<f64>,
    pub loc_error: Option<f64>,
    pub deletion_auc: Option<f64>,
    pub insertion_auc: Option<f64>,
}

impl ReportRow {
    pub fn similarity(
        image_id: u64,
        model_id: &str,
        method: &str,
        swept_field: &str,
        variant_value: f64,
        sim: SimilarityTriple,
    ) -> Self {
        ReportRow {
            image_id,
            model_id: model_id.to_string(),
            method: method.to_string(),
            swept_field: swept_field.to_string(),
            variant_value,
            spearman: Some(sim.spearman),
            pearson_hog: Some(sim.pearson_hog),
            ssim: Some(sim.ssim),
            loc_error: None,
            deletion_auc: None,
            insertion_auc: None,
        }
    }

    pub fn accuracy(
        image_id: u64,
        model_id: &str,
        method: &str,
        swept_field: &str,
        variant_value: f64,
        acc: AccuracyScores,
    ) -> Self {
        ReportRow {
            image_id,
            model_id: model_id.to_string(),
            method: method.to_string(),
            swept_field: swept_field.to_string(),
            variant_value,
            spearman: None,
            pearson_hog: None,
            ssim: None,
            loc_error: Some(acc.localization_error),
            deletion_auc: Some(acc.deletion_auc),
            insertion_auc: Some(acc.insertion_auc),
        }
    }

    fn sort_key(&self) -> (u64, &str, &str, String) {
        (
            self.image_id,
            self.model_id.as_str(),
            self.method.as_str(),
            format!("{:.17e}", self.variant_value),
        )
    }
}

/// Aggregate name -> value, ordered for stable serialization. `None`
/// when the report has no rows.
pub type Aggregates = Option<BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

const CSV_HEADER: &str =
    "image_id,model_id,method,swept_field,variant_value,spearman,pearson_hog,ssim,loc_error,deletion_auc,insertion_auc";

/// Render a float with 9 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Round to 9 significant digits so the JSON aggregates match the CSV
/// rendering precision.
pub fn round_sig(v: f64) -> f64 {
    fmt_float(v).parse().unwrap()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl SensitivityReport {
    /// Build from rows with the default aggregation: dataset mean of
    /// every populated metric column, overall and per variant value.
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let aggregates = Self::mean_aggregates(&rows);
        SensitivityReport { rows, aggregates }
    }

    /// Accuracy-variance aggregation: per-image mean and sample std of
    /// each accuracy metric over sweep values, averaged over the
    /// dataset (and models), plus the plain column means.
    pub fn from_rows_accuracy_variance(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut aggregates = Self::mean_aggregates(&rows);
        if let Some(map) = aggregates.as_mut() {
            for (name, get) in Self::accuracy_columns() {
                let mut means = Vec::new();
                let mut stds = Vec::new();
                for group in group_by(&rows, |r| (r.image_id, r.model_id.clone())) {
                    let vals: Vec<f64> = group.iter().filter_map(|r| get(r)).collect();
                    if vals.len() >= 2 {
                        means.push(super::mean(&vals));
                        stds.push(super::sample_std(&vals));
                    }
                }
                if !means.is_empty() {
                    map.insert(format!("per_image_mean_{name}"), round_sig(super::mean(&means)));
                    map.insert(format!("per_image_std_{name}"), round_sig(super::mean(&stds)));
                }
            }
        }
        SensitivityReport { rows, aggregates }
    }

    /// Global-std aggregation: per model, the dataset-mean accuracy at
    /// each sweep value; std across values; mean across models.
    pub fn with_global_std(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut aggregates = Self::mean_aggregates(&rows);
        if let Some(map) = aggregates.as_mut() {
            for (name, get) in Self::accuracy_columns() {
                let mut model_stds = Vec::new();
                for model_rows in group_by(&rows, |r| r.model_id.clone()) {
                    let mut value_means = Vec::new();
                    for vrows in group_by(model_rows.iter().copied(), |r| format!("{:.17e}", r.variant_value)) {
                        let vals: Vec<f64> = vrows.iter().filter_map(|r| get(r)).collect();
                        if !vals.is_empty() {
                            value_means.push(super::mean(&vals));
                        }
                    }
                    if value_means.len() >= 2 {
                        model_stds.push(super::sample_std(&value_means));
                    }
                }
                if !model_stds.is_empty() {
                    map.insert(format!("global_std_{name}"), round_sig(super::mean(&model_stds)));
                }
            }
        }
        SensitivityReport { rows, aggregates }
    }

    fn accuracy_columns() -> [(&'static str, fn(&ReportRow) -> Option<f64>); 3] {
        [
            ("loc_error", |r: &ReportRow| r.loc_error),
            ("deletion_auc", |r: &ReportRow| r.deletion_auc),
            ("insertion_auc", |r: &ReportRow| r.insertion_auc),
        ]
    }

    fn all_columns() -> [(&'static str, fn(&ReportRow) -> Option<f64>); 6] {
        [
            ("spearman", |r: &ReportRow| r.spearman),
            ("pearson_hog", |r: &ReportRow| r.pearson_hog),
            ("ssim", |r: &ReportRow| r.ssim),
            ("loc_error", |r: &ReportRow| r.loc_error),
            ("deletion_auc", |r: &ReportRow| r.deletion_auc),
            ("insertion_auc", |r: &ReportRow| r.insertion_auc),
        ]
    }

    fn mean_aggregates(rows: &[ReportRow]) -> Aggregates {
        if rows.is_empty() {
            return None;
        }
        let mut map = BTreeMap::new();
        for (name, get) in Self::all_columns() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| get(r)).collect();
            if !vals.is_empty() {
                map.insert(format!("mean_{name}"), round_sig(super::mean(&vals)));
            }
        }
        Some(map)
    }

    /// CSV rendering: fixed header, one row per entry, empty cells for
    /// missing metrics, floats as 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.image_id,
                r.model_id,
                r.method,
                r.swept_field,
                fmt_float(r.variant_value),
                opt(r.spearman),
                opt(r.pearson_hog),
                opt(r.ssim),
                opt(r.loc_error),
                opt(r.deletion_auc),
                opt(r.insertion_auc),
            ));
        }
        out
    }

    /// JSON summary: row count plus the aggregates map (null if empty).
    pub fn to_json(&self) -> String {
        let summary = serde_json::json!({
            "rows": self.rows.len(),
            "aggregates": self.aggregates,
        });
        serde_json::to_string_pretty(&summary).expect("report summary serializes")
    }

    pub fn merged(reports: Vec<SensitivityReport>) -> SensitivityReport {
        let rows: Vec<ReportRow> = reports.into_iter().flat_map(|r| r.rows).collect();
        SensitivityReport::from_rows(rows)
    }
}

/// Group rows by key, keys in first-appearance order, without assuming
/// pre-sorted input.
fn group_by<'a, K: Eq + std::hash::Hash + Clone>(
    rows: impl IntoIterator<Item = &'a ReportRow>,
    key: impl Fn(&ReportRow) -> K,
) -> Vec<Vec<&'a ReportRow>> {
    let mut order: Vec<K> = Vec::new();
    let mut map: std::collections::HashMap<K, Vec<&ReportRow>> = std::collections::HashMap::new();
    for r in rows {
        let k = key(r);
        if !map.contains_key(&k) {
            order.push(k.clone());
        }
        map.entry(k).or_default().push(r);
    }
    order.into_iter().map(|k| map.remove(&k).unwrap()).collect()
}
