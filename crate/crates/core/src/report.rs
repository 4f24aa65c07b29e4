//! Measure reports: raw per-item values, their summaries, and renderers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::measures::MeasureError;
use crate::stats::{summarize, FiveNumber};

/// The eight measured properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    RowOrder,
    ColOrder,
    Join,
    Fd,
    Fidelity,
    Stability,
    Perturbation,
    Context,
}

impl Property {
    pub const ALL: [Property; 8] = [
        Property::RowOrder,
        Property::ColOrder,
        Property::Join,
        Property::Fd,
        Property::Fidelity,
        Property::Stability,
        Property::Perturbation,
        Property::Context,
    ];

    /// Name used in files and manifests (`row_order`).
    pub fn as_str(self) -> &'static str {
        match self {
            Property::RowOrder => "row_order",
            Property::ColOrder => "col_order",
            Property::Join => "join",
            Property::Fd => "fd",
            Property::Fidelity => "fidelity",
            Property::Stability => "stability",
            Property::Perturbation => "perturbation",
            Property::Context => "context",
        }
    }

    /// Name used on the command line (`row-order`).
    pub fn cli_name(self) -> &'static str {
        match self {
            Property::RowOrder => "row-order",
            Property::ColOrder => "col-order",
            other => other.as_str(),
        }
    }
}

impl FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .into_iter()
            .find(|p| p.as_str() == s || p.cli_name() == s)
            .ok_or_else(|| format!("unknown property `{s}`"))
    }
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.cli_name())
    }
}

/// Label whose value splits the summary into per-group entries.
pub const GROUP_LABEL: &str = "group";

/// Raw values of one measured item (a series, a column pair, an FD...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub key: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    pub values: BTreeMap<String, Vec<f64>>,
}

impl ItemRecord {
    pub fn new(key: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            labels: BTreeMap::new(),
            values: BTreeMap::new(),
        }
    }

    pub fn label(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(name.into(), value.into());
        self
    }

    pub fn value(mut self, metric: impl Into<String>, v: f64) -> Self {
        self.values.entry(metric.into()).or_default().push(v);
        self
    }

    pub fn values(mut self, metric: impl Into<String>, vs: impl IntoIterator<Item = f64>) -> Self {
        self.values.entry(metric.into()).or_default().extend(vs);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub property: Property,
    pub model_id: String,
    pub corpus: String,
    pub params: BTreeMap<String, Value>,
    pub per_item: Vec<ItemRecord>,
    /// `metric` over all items, and `metric/group` over the items of one
    /// group.
    pub summary: BTreeMap<String, FiveNumber>,
    /// Property-level results that are not distributions (`rho`,
    /// `overall_mean`, ...).
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MeasureReport {
    pub fn new(property: Property, model_id: impl Into<String>, corpus: impl Into<String>) -> Self {
        Self {
            property,
            model_id: model_id.into(),
            corpus: corpus.into(),
            params: BTreeMap::new(),
            per_item: Vec::new(),
            summary: BTreeMap::new(),
            scalars: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str, value: impl Into<Value>) {
        self.params.insert(name.to_string(), value.into());
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Summaries recomputed from `per_item`.
    pub fn compute_summary(&self) -> Result<BTreeMap<String, FiveNumber>, MeasureError> {
        let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for item in &self.per_item {
            let group = item.labels.get(GROUP_LABEL);
            for (metric, vs) in &item.values {
                pooled.entry(metric.clone()).or_default().extend(vs);
                if let Some(g) = group {
                    pooled.entry(format!("{metric}/{g}")).or_default().extend(vs);
                }
            }
        }
        pooled
            .into_iter()
            .filter(|(_, vs)| !vs.is_empty())
            .map(|(k, vs)| Ok((k, summarize(&vs)?)))
            .collect()
    }

    pub fn finalize(&mut self) -> Result<(), MeasureError> {
        self.summary = self.compute_summary()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values are finite");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "property: {}", self.property);
        let _ = writeln!(out, "model:    {}", self.model_id);
        let _ = writeln!(out, "corpus:   {}", self.corpus);
        let _ = writeln!(out, "items:    {}", self.per_item.len());
        if !self.params.is_empty() {
            let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "params:   {}", params.join(" "));
        }
        for (name, v) in &self.scalars {
            let _ = writeln!(out, "{name} = {v:.6}");
        }
        if !self.summary.is_empty() {
            let width = self.summary.keys().map(String::len).max().unwrap_or(6).max(6);
            let _ = writeln!(
                out,
                "\n{:<width$} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "metric", "n", "min", "q1", "median", "q3", "max", "mean", "std"
            );
            for (name, f) in &self.summary {
                let _ = writeln!(
                    out,
                    "{:<width$} {:>6} {:>9.6} {:>9.6} {:>9.6} {:>9.6} {:>9.6} {:>9.6} {:>9.6}",
                    name, f.n, f.min, f.q1, f.median, f.q3, f.max, f.mean, f.std
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    /// Long-format dump: one line per raw value.
    pub fn render_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["key", "labels", "metric", "index", "value"])
            .expect("in-memory write");
        for item in &self.per_item {
            let labels = join_labels(&item.labels);
            for (metric, vs) in &item.values {
                for (i, v) in vs.iter().enumerate() {
                    w.write_record([&item.key, &labels, metric, &i.to_string(), &v.to_string()])
                        .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    /// Box-plot input: one row per item, one column per metric holding the
    /// mean of the item's values for that metric (empty when absent).
    pub fn plot_data_csv(&self) -> String {
        let metrics: Vec<&String> = {
            let mut m: Vec<&String> = self.per_item.iter().flat_map(|i| i.values.keys()).collect();
            m.sort();
            m.dedup();
            m
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["key".to_string(), GROUP_LABEL.to_string()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        w.write_record(&header).expect("in-memory write");
        for item in &self.per_item {
            let mut row = vec![
                item.key.clone(),
                item.labels.get(GROUP_LABEL).cloned().unwrap_or_default(),
            ];
            for m in &metrics {
                row.push(match item.values.get(*m) {
                    Some(vs) if !vs.is_empty() => crate::stats::mean(vs).to_string(),
                    _ => String::new(),
                });
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

fn join_labels(labels: &BTreeMap<String, String>) -> String {
    labels
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasureReport {
        let mut r = MeasureReport::new(Property::RowOrder, "ref-cf", "demo");
        r.param("seed", 42);
        r.per_item.push(
            ItemRecord::new("a")
                .label(GROUP_LABEL, "column")
                .values("cosine", [1.0, 0.5])
                .value("mcv", 0.25),
        );
        r.per_item.push(
            ItemRecord::new("b")
                .label(GROUP_LABEL, "row")
                .values("cosine", [0.75])
                .value("mcv", 0.0),
        );
        r.finalize().unwrap();
        r
    }

    #[test]
    fn property_names() {
        for p in Property::ALL {
            assert_eq!(p.cli_name().parse::<Property>().unwrap(), p);
            assert_eq!(p.as_str().parse::<Property>().unwrap(), p);
            assert_eq!(serde_json::to_value(p).unwrap(), Value::from(p.as_str()));
        }
        assert!("rows".parse::<Property>().is_err());
    }

    #[test]
    fn summary_pools_metrics_and_groups() {
        let r = sample();
        assert_eq!(r.summary["cosine"].n, 3);
        assert_eq!(r.summary["cosine"].median, 0.75);
        assert_eq!(r.summary["cosine/column"].n, 2);
        assert_eq!(r.summary["mcv/row"].max, 0.0);
        assert_eq!(r.summary.len(), 6);
    }

    #[test]
    fn json_round_trip_and_recompute() {
        let r = sample();
        let back = MeasureReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.compute_summary().unwrap(), back.summary);
    }

    #[test]
    fn csv_renderers() {
        let r = sample();
        let csv = r.render_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "key,labels,metric,index,value");
        assert_eq!(lines[1], "a,group=column,cosine,0,1");
        assert_eq!(lines.len(), 6);
        let plot = r.plot_data_csv();
        assert_eq!(plot.lines().next().unwrap(), "key,group,cosine,mcv");
        assert_eq!(plot.lines().nth(1).unwrap(), "a,column,0.75,0.25");
        assert!(r.render_text().contains("cosine/column"));
    }
}
