use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::report::{AuditReport, ComboRow, LevelRow};
use crate::classifier::Label;

/// A named delimited table.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(self.header.clone()) + "\n";
        for r in &self.rows {
            out += &line(r.iter().map(String::as_str).collect());
            out.push('\n');
        }
        out
    }
}

fn level_rows(rows: &[LevelRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![r.level.clone(), r.friend.to_string(), r.bystander_star.to_string(), r.uploader.to_string()])
        .collect()
}

fn combo_rows(rows: &[ComboRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.combination.clone(),
                r.bystander_partial.to_string(),
                r.bystander_full.to_string(),
                r.friend_partial.to_string(),
                r.friend_full.to_string(),
            ]
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "NA".into())
}

/// Every report table, in report order.
pub fn tables(r: &AuditReport) -> Vec<Table> {
    let counts = |name: &str, c: &super::report::CategoryCounts| {
        vec![
            name.to_string(),
            c.subject.to_string(),
            c.bystander.to_string(),
            c.friend.to_string(),
            c.uploader.to_string(),
            c.bystander_star.to_string(),
        ]
    };
    let codes = |rows: &[super::report::CodeRow]| {
        rows.iter().map(|c| vec![c.group().to_string(), c.code(), c.count.to_string()]).collect()
    };
    let mut out = vec![
        Table {
            name: "faces",
            header: vec!["faces", "subject", "bystander", "friend", "uploader", "bystander*"],
            rows: vec![counts("all", &r.faces.all), counts("unique", &r.faces.unique)],
        },
        Table {
            name: "composition",
            header: vec!["composition", "images", "uploaders"],
            rows: r
                .composition
                .iter()
                .map(|c| vec![c.composition.clone(), c.images.to_string(), c.uploaders.to_string()])
                .collect(),
        },
        Table {
            name: "anonymization",
            header: vec!["level", "friend", "bystander*", "uploader"],
            rows: level_rows(&r.anonymization),
        },
        Table {
            name: "privacy_classes",
            header: vec!["privacy_class", "friend", "bystander*", "uploader"],
            rows: level_rows(&r.privacy_classes),
        },
        Table { name: "image_codes", header: vec!["group", "code", "images"], rows: codes(&r.image_codes) },
        Table { name: "uploader_codes", header: vec!["group", "code", "uploaders"], rows: codes(&r.uploader_codes) },
    ];
    for t in &r.intentions {
        out.push(Table {
            name: if t.label == Label::Bystander { "intentions_bystander" } else { "intentions_subject" },
            header: vec!["intention", "none", "partial", "full", "uploader"],
            rows: t
                .rows
                .iter()
                .map(|x| {
                    vec![
                        x.intentions.clone(),
                        x.none.to_string(),
                        x.partial.to_string(),
                        x.full.to_string(),
                        x.uploader.to_string(),
                    ]
                })
                .collect(),
        });
    }
    let combo_header = vec!["combination", "bystander*_partial", "bystander*_full", "friend_partial", "friend_full"];
    out.push(Table { name: "parts", header: combo_header.clone(), rows: combo_rows(&r.parts) });
    out.push(Table { name: "methods", header: combo_header, rows: combo_rows(&r.methods) });
    out.push(Table {
        name: "chi_square",
        header: vec!["category", "factor", "table", "statistic", "dof", "p_value", "yates"],
        rows: r
            .chi_square
            .iter()
            .map(|t| {
                let table = t
                    .rows
                    .iter()
                    .zip(&t.table)
                    .map(|(name, [a, b])| format!("{name}:{a}/{b}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                vec![
                    t.category.as_str().to_string(),
                    t.factor.clone(),
                    table,
                    fmt_opt(t.result.as_ref().map(|x| x.statistic), 3),
                    t.result.as_ref().map(|x| x.dof.to_string()).unwrap_or_else(|| "NA".into()),
                    fmt_opt(t.result.as_ref().map(|x| x.p_value), 4),
                    t.yates.to_string(),
                ]
            })
            .collect(),
    });
    out
}

pub fn summary_text(r: &AuditReport) -> String {
    let s = &r.summary;
    let mut out = String::new();
    let _ = writeln!(out, "images in manifest     {}", s.images_in);
    let _ = writeln!(out, "celebrity images       {}", s.celebrity_dropped);
    let _ = writeln!(out, "images without faces   {}", s.images_without_faces);
    let _ = writeln!(out, "images audited         {}", s.images);
    let _ = writeln!(out, "uploaders              {}", s.uploaders);
    let _ = writeln!(out, "faces audited          {}", s.faces);
    let _ = writeln!(out, "faces excluded         {}", s.excluded_faces);
    let leak: u64 = r.privacy_classes.first().map(|c| c.friend + c.bystander_star).unwrap_or(0);
    let _ = writeln!(out, "unanonymized non-uploader faces  {leak}");
    for t in tables(r) {
        let _ = write!(out, "\n[{}]\n{}", t.name, t.to_text());
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(out, "\n[warnings]");
        for w in &r.warnings {
            let _ = writeln!(out, "{w}");
        }
    }
    out
}

/// Writes `report.json`, `summary.txt` and one CSV per table into `dir`.
pub fn write_report(dir: &Path, r: &AuditReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(r).map_err(io::Error::other)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("summary.txt"), summary_text(r))?;
    for t in tables(r) {
        fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
    }
    Ok(())
}
