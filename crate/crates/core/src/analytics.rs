//! Label frequency tables, the class co-occurrence matrix and cumulative
//! temporal series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::citenet::CitationGraph;
use crate::classifier::FinalLabels;
use crate::taxonomy::TaxonomyDimension;
use crate::{format_percent, LabelSet, PaperId};

pub const DEFAULT_MIN_COMBINATION_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("labels belong to `{found}`, expected `{expected}`")]
    WrongDimension { expected: String, found: String },
}

fn check_dimension(finals: &FinalLabels, dimension: &TaxonomyDimension) -> Result<(), AnalyticsError> {
    if finals.dimension_id != dimension.dimension_id {
        return Err(AnalyticsError::WrongDimension {
            expected: dimension.dimension_id.clone(),
            found: finals.dimension_id.clone(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub dimension_id: String,
    /// Papers carrying exactly one label.
    pub single_label_counts: BTreeMap<String, usize>,
    /// Papers carrying two or more labels, keyed by the sorted combination.
    /// Serialized as `[labels, count]` pairs.
    #[serde(with = "pairs")]
    pub combination_counts: BTreeMap<Vec<String>, usize>,
    pub min_combination_count: usize,
    pub denominator: usize,
}

impl FrequencyTable {
    /// Combinations at or above the reporting threshold.
    pub fn reported_combinations(&self) -> impl Iterator<Item = (&Vec<String>, usize)> {
        self.combination_counts
            .iter()
            .filter(|(_, n)| **n >= self.min_combination_count)
            .map(|(k, n)| (k, *n))
    }

    /// Reported rows sorted by count (descending), then label text.
    pub fn rows(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = self
            .single_label_counts
            .iter()
            .map(|(l, n)| (l.clone(), *n))
            .chain(self.reported_combinations().map(|(k, n)| (k.join(" + "), n)))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("labels,count,proportion\n");
        for (label, n) in self.rows() {
            let _ = writeln!(out, "{},{n},{}", csv_field(&label), proportion_cell(n, self.denominator));
        }
        out
    }
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<Vec<String>, usize>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Vec<String>, usize>, D::Error> {
        Ok(Vec::<(Vec<String>, usize)>::deserialize(d)?.into_iter().collect())
    }
}

fn proportion_cell(n: usize, d: usize) -> String {
    if d == 0 {
        "undefined".into()
    } else {
        format_percent(n as f64 / d as f64)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn label_frequency(finals: &FinalLabels, dimension: &TaxonomyDimension, min_combination_count: usize) -> Result<FrequencyTable, AnalyticsError> {
    check_dimension(finals, dimension)?;
    let mut table = FrequencyTable {
        dimension_id: dimension.dimension_id.clone(),
        single_label_counts: BTreeMap::new(),
        combination_counts: BTreeMap::new(),
        min_combination_count,
        denominator: finals.labels.len(),
    };
    for labels in finals.labels.values() {
        if labels.len() == 1 {
            let l = labels.iter().next().expect("one label");
            *table.single_label_counts.entry(l.clone()).or_default() += 1;
        } else if labels.len() > 1 {
            *table.combination_counts.entry(labels.iter().cloned().collect()).or_default() += 1;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOccurrence {
    pub class: u8,
    pub occurrence: usize,
    /// `None` when the subset is empty.
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceReport {
    pub denominator: usize,
    pub classes: Vec<ClassOccurrence>,
}

impl OccurrenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,occurrence,proportion\n");
        for c in &self.classes {
            let _ = writeln!(out, "{},{},{}", c.class, c.occurrence, proportion_cell(c.occurrence, self.denominator));
        }
        out
    }
}

/// Rolled-up class sets of every labeled paper.
pub fn class_sets(finals: &FinalLabels, dimension: &TaxonomyDimension) -> BTreeMap<PaperId, BTreeSet<u8>> {
    finals
        .labels
        .iter()
        .map(|(id, labels)| (id.clone(), dimension.class_set(labels)))
        .collect()
}

fn classes_of(dimension: &TaxonomyDimension) -> Vec<u8> {
    dimension
        .labels
        .iter()
        .filter_map(|l| l.parent_class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn occurrence_proportions(finals: &FinalLabels, dimension: &TaxonomyDimension) -> Result<OccurrenceReport, AnalyticsError> {
    check_dimension(finals, dimension)?;
    let sets = class_sets(finals, dimension);
    let denominator = sets.len();
    let classes = classes_of(dimension)
        .into_iter()
        .map(|class| {
            let occurrence = sets.values().filter(|s| s.contains(&class)).count();
            ClassOccurrence {
                class,
                occurrence,
                proportion: (denominator > 0).then(|| occurrence as f64 / denominator as f64),
            }
        })
        .collect();
    Ok(OccurrenceReport { denominator, classes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub classes: Vec<u8>,
    /// `counts[i][j]`: papers carrying both `classes[i]` and `classes[j]`;
    /// the diagonal holds per-class occurrence.
    pub counts: Vec<Vec<usize>>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: u8, b: u8) -> usize {
        let i = self.classes.iter().position(|c| *c == a);
        let j = self.classes.iter().position(|c| *c == b);
        match (i, j) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{}", self.classes[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn cooccurrence_matrix(finals: &FinalLabels, dimension: &TaxonomyDimension) -> Result<CooccurrenceMatrix, AnalyticsError> {
    check_dimension(finals, dimension)?;
    let classes = classes_of(dimension);
    let mut counts = vec![vec![0; classes.len()]; classes.len()];
    for set in class_sets(finals, dimension).values() {
        let present: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| set.contains(c))
            .map(|(i, _)| i)
            .collect();
        for &i in &present {
            for &j in &present {
                counts[i][j] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix { classes, counts })
}

/// Cumulative count per year for one class pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSeries {
    /// Unordered `(a, b)` with `a < b` for co-occurrence; `a -> b` for citations.
    pub key: (u8, u8),
    pub points: BTreeMap<i32, usize>,
    pub year_range: (i32, i32),
}

impl TemporalSeries {
    pub fn label(&self, ordered: bool) -> String {
        if ordered {
            format!("{} -> {}", self.key.0, self.key.1)
        } else {
            format!("{} & {}", self.key.0, self.key.1)
        }
    }

    pub fn final_value(&self) -> usize {
        self.points.values().next_back().copied().unwrap_or(0)
    }
}

fn accumulate(increments: BTreeMap<(u8, u8), BTreeMap<i32, usize>>, year_range: Option<(i32, i32)>) -> Vec<TemporalSeries> {
    let Some((from, to)) = year_range else { return Vec::new() };
    increments
        .into_iter()
        .map(|(key, by_year)| {
            let mut total = 0;
            let points = (from..=to)
                .map(|y| {
                    total += by_year.get(&y).copied().unwrap_or(0);
                    (y, total)
                })
                .collect();
            TemporalSeries {
                key,
                points,
                year_range: (from, to),
            }
        })
        .collect()
}

fn span(years: impl Iterator<Item = i32>) -> Option<(i32, i32)> {
    years.fold(None, |acc, y| match acc {
        None => Some((y, y)),
        Some((lo, hi)) => Some((lo.min(y), hi.max(y))),
    })
}

/// Every unordered class pair within a paper gains one at the paper's year.
/// Series span the years of all labeled papers and carry values forward.
pub fn cumulative_cooccurrence_series(
    finals: &FinalLabels,
    dimension: &TaxonomyDimension,
    years: &BTreeMap<PaperId, i32>,
) -> Result<Vec<TemporalSeries>, AnalyticsError> {
    check_dimension(finals, dimension)?;
    let sets = class_sets(finals, dimension);
    let mut increments: BTreeMap<(u8, u8), BTreeMap<i32, usize>> = BTreeMap::new();
    for (id, set) in &sets {
        let Some(&year) = years.get(id) else { continue };
        let classes: Vec<u8> = set.iter().copied().collect();
        for (i, &a) in classes.iter().enumerate() {
            for &b in &classes[i + 1..] {
                *increments.entry((a, b)).or_default().entry(year).or_default() += 1;
            }
        }
    }
    let range = span(sets.keys().filter_map(|id| years.get(id).copied()));
    Ok(accumulate(increments, range))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCitationSeries {
    pub series: Vec<TemporalSeries>,
    /// Edges skipped because an endpoint has no class labels.
    pub skipped_edges: usize,
}

/// For each edge with both endpoints labeled, every (citing class, cited
/// class) pair gains one at the citing paper's year.
pub fn cumulative_cross_citation_series(
    graph: &CitationGraph,
    finals: &FinalLabels,
    dimension: &TaxonomyDimension,
) -> Result<CrossCitationSeries, AnalyticsError> {
    check_dimension(finals, dimension)?;
    let sets = class_sets(finals, dimension);
    let mut increments: BTreeMap<(u8, u8), BTreeMap<i32, usize>> = BTreeMap::new();
    let mut skipped_edges = 0;
    let mut years = Vec::new();
    for (u, v) in &graph.edges {
        let (Some(cu), Some(cv), Some(year)) = (sets.get(u), sets.get(v), graph.year(u)) else {
            skipped_edges += 1;
            continue;
        };
        if cu.is_empty() || cv.is_empty() {
            skipped_edges += 1;
            continue;
        }
        years.push(year);
        for &a in cu {
            for &b in cv {
                *increments.entry((a, b)).or_default().entry(year).or_default() += 1;
            }
        }
    }
    Ok(CrossCitationSeries {
        series: accumulate(increments, span(years.into_iter())),
        skipped_edges,
    })
}

/// Long format: `pair,year,cumulative_count`.
pub fn series_to_csv(series: &[TemporalSeries], ordered: bool) -> String {
    let mut out = String::from("pair,year,cumulative_count\n");
    for s in series {
        for (year, count) in &s.points {
            let _ = writeln!(out, "{},{year},{count}", s.label(ordered));
        }
    }
    out
}

/// Chart-ready data for the chord diagram and both evolution charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBundle {
    pub fig4: CooccurrenceMatrix,
    pub fig5: Vec<TemporalSeries>,
    pub fig6: CrossCitationSeries,
}

pub fn plot_bundle(
    finals: &FinalLabels,
    dimension: &TaxonomyDimension,
    years: &BTreeMap<PaperId, i32>,
    graph: &CitationGraph,
) -> Result<PlotBundle, AnalyticsError> {
    Ok(PlotBundle {
        fig4: cooccurrence_matrix(finals, dimension)?,
        fig5: cumulative_cooccurrence_series(finals, dimension, years)?,
        fig6: cumulative_cross_citation_series(graph, finals, dimension)?,
    })
}

/// Label sets rolled up to class numbers as strings, e.g. `{"1.2","1.3"} -> {"1"}`.
pub fn class_label_set(dimension: &TaxonomyDimension, labels: &LabelSet) -> LabelSet {
    dimension.class_set(labels).into_iter().map(|c| c.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::builtin_option_pricing_taxonomy;
    use proptest::prelude::*;

    fn finals(dim: &str, items: &[&[&str]]) -> FinalLabels {
        FinalLabels {
            dimension_id: dim.into(),
            model_name: "m".into(),
            prompt_version: 1,
            labels: items
                .iter()
                .enumerate()
                .map(|(i, l)| (PaperId::new(format!("p{i}")), l.iter().map(|s| s.to_string()).collect()))
                .collect(),
            unclassified: BTreeSet::new(),
        }
    }

    fn years(ys: &[i32]) -> BTreeMap<PaperId, i32> {
        ys.iter().enumerate().map(|(i, y)| (PaperId::new(format!("p{i}")), *y)).collect()
    }

    #[test]
    fn frequency_examples() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("underlying", &[&["Stocks"], &["Stocks"], &["Stocks", "Indices"]]);
        let t = label_frequency(&f, &dims[1], 1).unwrap();
        assert_eq!(t.single_label_counts["Stocks"], 2);
        assert_eq!(t.combination_counts[&vec!["Indices".to_string(), "Stocks".to_string()]], 1);
        assert_eq!(t.denominator, 3);

        let t10 = label_frequency(&f, &dims[1], 10).unwrap();
        assert_eq!(t10.reported_combinations().count(), 0);
        assert_eq!(t10.combination_counts.len(), 1);

        let all = finals("underlying", &[&["Not Specified"], &["Not Specified"]]);
        assert_eq!(label_frequency(&all, &dims[1], 10).unwrap().single_label_counts["Not Specified"], 2);

        assert!(label_frequency(&f, &dims[3], 10).is_err());

        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#"[[["Indices","Stocks"],1]]"#), "{json}");
        assert_eq!(serde_json::from_str::<FrequencyTable>(&json).unwrap(), t);
    }

    #[test]
    fn occurrence_examples() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("model_type", &[&["1.1", "2.1"], &["1.2"]]);
        let r = occurrence_proportions(&f, &dims[3]).unwrap();
        assert_eq!(r.classes[0], ClassOccurrence { class: 1, occurrence: 2, proportion: Some(1.0) });
        assert_eq!(r.classes[1], ClassOccurrence { class: 2, occurrence: 1, proportion: Some(0.5) });
        assert_eq!(r.classes.len(), 8);

        let empty = occurrence_proportions(&finals("model_type", &[]), &dims[3]).unwrap();
        assert_eq!(empty.denominator, 0);
        assert!(empty.classes.iter().all(|c| c.proportion.is_none()));
    }

    #[test]
    fn cooccurrence_examples() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("model_type", &[&["1.1", "2.1"], &["1.1", "2.2", "3.1"], &["1.3"]]);
        let m = cooccurrence_matrix(&f, &dims[3]).unwrap();
        assert_eq!((m.get(1, 2), m.get(2, 3), m.get(1, 3)), (2, 1, 1));
        assert_eq!(m.get(1, 1), 3);

        let singles = finals("model_type", &[&["1.1"], &["2.1"]]);
        let m = cooccurrence_matrix(&singles, &dims[3]).unwrap();
        for (i, row) in m.counts.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(*v, 0);
                }
            }
        }
    }

    #[test]
    fn cooccurrence_series_examples() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("model_type", &[&["1.1", "2.1"], &["1.2", "2.3"]]);
        let s = cumulative_cooccurrence_series(&f, &dims[3], &years(&[1995, 2000])).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].key, (1, 2));
        assert_eq!(s[0].points[&1995], 1);
        assert_eq!(s[0].points[&1997], 1);
        assert_eq!(s[0].points[&2000], 2);

        let singles = finals("model_type", &[&["1.1"], &["2.1"]]);
        assert!(cumulative_cooccurrence_series(&singles, &dims[3], &years(&[1990, 1991])).unwrap().is_empty());

        let triple = finals("model_type", &[&["1.1", "2.1", "3.1"]]);
        let s = cumulative_cooccurrence_series(&triple, &dims[3], &years(&[1990])).unwrap();
        let keys: Vec<(u8, u8)> = s.iter().map(|t| t.key).collect();
        assert_eq!(keys, vec![(1, 2), (1, 3), (2, 3)]);
        assert!(s.iter().all(|t| t.points[&1990] == 1));
    }

    fn graph(nodes: &[(&str, i32)], edges: &[(&str, &str)]) -> CitationGraph {
        let mut g = CitationGraph::default();
        for (id, y) in nodes {
            g.add_node(PaperId::new(*id), *y);
        }
        for (a, b) in edges {
            g.add_edge(&PaperId::new(*a), &PaperId::new(*b));
        }
        g
    }

    #[test]
    fn cross_citation_examples() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("model_type", &[&["1.1"], &["2.1", "3.2"]]);
        let g = graph(&[("p0", 1998), ("p1", 1990), ("x", 1999)], &[("p0", "p1"), ("x", "p1")]);
        let c = cumulative_cross_citation_series(&g, &f, &dims[3]).unwrap();
        let keys: Vec<(u8, u8)> = c.series.iter().map(|t| t.key).collect();
        assert_eq!(keys, vec![(1, 2), (1, 3)]);
        assert!(c.series.iter().all(|t| t.points[&1998] == 1));
        assert_eq!(c.skipped_edges, 1);

        let none = cumulative_cross_citation_series(&g, &finals("model_type", &[]), &dims[3]).unwrap();
        assert!(none.series.is_empty());
        assert_eq!(none.skipped_edges, 2);

        let same = finals("model_type", &[&["1.1"], &["1.2"]]);
        let c = cumulative_cross_citation_series(&g, &same, &dims[3]).unwrap();
        assert_eq!(c.series[0].key, (1, 1));
    }

    #[test]
    fn csv_exports() {
        let dims = builtin_option_pricing_taxonomy();
        let f = finals("model_type", &[&["1.1", "2.1"]]);
        let s = cumulative_cooccurrence_series(&f, &dims[3], &years(&[2001])).unwrap();
        assert_eq!(series_to_csv(&s, false), "pair,year,cumulative_count\n1 & 2,2001,1\n");
        let r = occurrence_proportions(&f, &dims[3]).unwrap();
        assert!(r.to_csv().starts_with("class,occurrence,proportion\n1,1,100.00%\n"));
    }

    fn subclass_sets() -> impl Strategy<Value = Vec<(Vec<&'static str>, i32)>> {
        let subclass = prop::sample::select(vec!["1.1", "1.2", "2.1", "3.1", "4.2", "5.1", "6.2", "7.1", "8.1"]);
        prop::collection::vec((prop::collection::vec(subclass, 1..5), 1980i32..2020), 0..30)
    }

    proptest! {
        #[test]
        fn matrix_symmetry_and_series_totals(papers in subclass_sets()) {
            let dims = builtin_option_pricing_taxonomy();
            let items: Vec<Vec<&str>> = papers.iter().map(|(s, _)| s.clone()).collect();
            let refs: Vec<&[&str]> = items.iter().map(|v| v.as_slice()).collect();
            let f = finals("model_type", &refs);
            let ys = years(&papers.iter().map(|(_, y)| *y).collect::<Vec<_>>());
            let m = cooccurrence_matrix(&f, &dims[3]).unwrap();
            let occ = occurrence_proportions(&f, &dims[3]).unwrap();
            for (i, row) in m.counts.iter().enumerate() {
                prop_assert_eq!(row[i], occ.classes[i].occurrence);
                for (j, v) in row.iter().enumerate() {
                    prop_assert_eq!(*v, m.counts[j][i]);
                    prop_assert!(*v <= occ.denominator);
                }
            }
            for s in cumulative_cooccurrence_series(&f, &dims[3], &ys).unwrap() {
                let values: Vec<usize> = s.points.values().copied().collect();
                prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(s.final_value(), m.get(s.key.0, s.key.1));
            }
            let t = label_frequency(&f, &dims[3], 10).unwrap();
            let total: usize = t.single_label_counts.values().sum::<usize>() + t.combination_counts.values().sum::<usize>();
            prop_assert_eq!(total, t.denominator);
        }
    }
}
