//! `audit run` and `audit report`.

use std::fs;
use std::path::{Path, PathBuf};

use facegate::audit::render::{summary_text, tables, write_report};
use facegate::audit::{
    conservation_violations, run_audit, AuditConfig, AuditPaths, AuditReport, CodingSource, LabelSource, LoadedAudit,
};

use crate::config::RunConfig;
use crate::error::{data, CliResult};

pub struct RunArgs<'a> {
    pub manifest: &'a Path,
    pub faces: &'a [PathBuf],
    pub regions: Option<&'a Path>,
    pub journal: Option<&'a Path>,
    pub consensus: Option<&'a Path>,
    pub labels: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub profiles: Option<&'a Path>,
    pub yates: bool,
}

pub fn run(args: &RunArgs<'_>, out: &Path, config: &RunConfig) -> CliResult<AuditReport> {
    let codings = match (args.journal, args.consensus) {
        (Some(p), _) => Some(CodingSource::Journal { path: p.to_path_buf(), annotators: config.annotators }),
        (None, Some(p)) => Some(CodingSource::Consensus(p.to_path_buf())),
        (None, None) => None,
    };
    let labels = match (args.labels, args.predictions) {
        (Some(p), _) => LabelSource::Labels(p.to_path_buf()),
        (None, Some(p)) => LabelSource::Predictions(p.to_path_buf()),
        (None, None) => unreachable!("clap requires one label source"),
    };
    let paths = AuditPaths {
        manifest: args.manifest.to_path_buf(),
        faces: args.faces.to_vec(),
        regions: args.regions.map(Path::to_path_buf),
        codings,
        labels,
        embeddings: args.embeddings.map(Path::to_path_buf),
        profiles: args.profiles.map(Path::to_path_buf),
    };
    let loaded = LoadedAudit::load(&paths)?;
    let audit_config = AuditConfig { match_threshold: config.match_threshold, yates: args.yates, ..Default::default() };
    let mut report = run_audit(&loaded.input(), &audit_config)?;
    for (image, region) in &loaded.unresolved_regions {
        report.warnings.push(format!("{image}/{region}: annotations did not reach consensus, region treated as uncoded"));
    }
    write_report(out, &report)?;
    Ok(report)
}

/// Re-renders a saved report after checking its margins.
pub fn report(path: &Path, out: Option<&Path>) -> CliResult<String> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let report: AuditReport = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let bad = conservation_violations(&report);
    if !bad.is_empty() {
        return Err(data(format!("{}: inconsistent report: {}", path.display(), bad.join("; "))));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.txt"), summary_text(&report))?;
        for t in tables(&report) {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
    }
    Ok(summary_text(&report))
}
