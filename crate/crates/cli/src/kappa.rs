//! `kappa`: agreement over a long-format ratings table with columns
//! `item,rater,category`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use facegate::audit::render::Table;
use facegate::evaluation::{category_counts, cohen_kappa, fleiss_kappa, scott_pi, Agreement};
use serde::{Deserialize, Serialize};

use crate::error::{data, CliResult};

#[derive(Debug, Deserialize)]
struct Rating {
    item: String,
    rater: String,
    category: String,
}

#[derive(Debug, Serialize)]
pub struct PairResult {
    pub raters: [String; 2],
    pub items: usize,
    pub cohen: Option<Agreement>,
    pub scott: Option<Agreement>,
}

#[derive(Debug, Serialize)]
pub struct KappaReport {
    pub items: usize,
    pub raters: Vec<String>,
    pub categories: Vec<String>,
    /// Over items rated by every rater; absent with fewer than two raters.
    pub fleiss: Option<Agreement>,
    pub fleiss_items: usize,
    pub pairs: Vec<PairResult>,
}

pub fn run(path: &Path) -> CliResult<KappaReport> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (i, r) in reader.deserialize::<Rating>().enumerate() {
        let r = r?;
        if table.entry(r.item.clone()).or_default().insert(r.rater.clone(), r.category).is_some() {
            return Err(data(format!("{}: row {}: rater {} rated item {} twice", path.display(), i + 2, r.rater, r.item)));
        }
    }
    if table.is_empty() {
        return Err(data(format!("{}: no ratings", path.display())));
    }
    let raters: Vec<String> = table.values().flat_map(|m| m.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let categories: Vec<String> =
        table.values().flat_map(|m| m.values().cloned()).collect::<BTreeSet<_>>().into_iter().collect();

    let complete: Vec<Vec<String>> =
        table.values().filter(|m| m.len() == raters.len()).map(|m| m.values().cloned().collect()).collect();
    let fleiss = if raters.len() >= 2 && !complete.is_empty() {
        let (_, counts) = category_counts(&complete);
        Some(fleiss_kappa(&counts)?)
    } else {
        None
    };

    let mut pairs = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let (xs, ys): (Vec<&String>, Vec<&String>) =
                table.values().filter_map(|m| Some((m.get(a)?, m.get(b)?))).unzip();
            if xs.is_empty() {
                continue;
            }
            pairs.push(PairResult {
                raters: [a.clone(), b.clone()],
                items: xs.len(),
                cohen: Some(cohen_kappa(&xs, &ys)?),
                scott: Some(scott_pi(&xs, &ys)?),
            });
        }
    }
    Ok(KappaReport { items: table.len(), raters, categories, fleiss, fleiss_items: complete.len(), pairs })
}

pub fn table(r: &KappaReport) -> Table {
    let f = |a: &Option<Agreement>| match a.as_ref().and_then(|a| a.kappa) {
        Some(k) => format!("{k:.4}"),
        None => "NA".to_string(),
    };
    let mut rows = vec![vec!["fleiss".to_string(), "all".to_string(), r.fleiss_items.to_string(), f(&r.fleiss)]];
    for p in &r.pairs {
        let raters = format!("{}|{}", p.raters[0], p.raters[1]);
        rows.push(vec!["cohen".into(), raters.clone(), p.items.to_string(), f(&p.cohen)]);
        rows.push(vec!["scott".into(), raters, p.items.to_string(), f(&p.scott)]);
    }
    Table { name: "kappa", header: vec!["statistic", "raters", "items", "kappa"], rows }
}
