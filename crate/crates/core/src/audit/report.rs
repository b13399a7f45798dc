use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::coding::{intention_label, methods_label, parts_label, Intention};
use super::pipeline::{AuditConfig, AuditedCorpus, AuditedFace, AuditedImage};
use super::rules::{AnonymizationLevel, PersonCategory, PrivacyClass, TripleCode};
use crate::classifier::Label;
use crate::providers::{cosine_similarity, ProfileType};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub subject: u64,
    pub bystander: u64,
    pub friend: u64,
    pub uploader: u64,
    pub bystander_star: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceCounts {
    pub all: CategoryCounts,
    /// Repeated faces of one uploader counted once.
    pub unique: CategoryCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub composition: String,
    pub images: u64,
    pub uploaders: u64,
}

/// Face counts per category for one anonymization level or privacy class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: String,
    pub friend: u64,
    pub bystander_star: u64,
    pub uploader: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRow {
    pub friend: Option<TripleCode>,
    pub bystander_star: Option<TripleCode>,
    pub with_uploader: bool,
    pub count: u64,
}

impl CodeRow {
    pub fn group(&self) -> &'static str {
        match (self.friend.is_some(), self.bystander_star.is_some(), self.with_uploader) {
            (true, false, false) => "Only friend",
            (true, false, true) => "Friend & uploader",
            (false, true, false) => "Only bystander*",
            (false, true, true) => "Bystander* & uploader",
            (true, true, false) => "Friend & bystander*",
            (true, true, true) => "Friend, bystander* & uploader",
            (false, false, _) => unreachable!("code rows need a friend or bystander* code"),
        }
    }

    /// `(100,-)`
    pub fn code(&self) -> String {
        let cell = |c: Option<TripleCode>| c.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        format!("({},{})", cell(self.friend), cell(self.bystander_star))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionRow {
    pub intentions: String,
    pub none: u64,
    pub partial: u64,
    pub full: u64,
    /// Manipulated faces of the uploader carrying the same label.
    pub uploader: u64,
}

/// Intentions behind manipulated faces carrying one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionTable {
    pub label: Label,
    pub rows: Vec<IntentionRow>,
}

/// Privacy-motivated anonymizations broken down by part or method set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComboRow {
    pub combination: String,
    pub bystander_partial: u64,
    pub bystander_full: u64,
    pub friend_partial: u64,
    pub friend_full: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Whether uploaders left every face of a category unanonymized, against an
/// uploader attribute. Columns are `[anonymized some, anonymized none]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub category: PersonCategory,
    pub factor: String,
    pub rows: Vec<String>,
    pub table: Vec<[u64; 2]>,
    pub yates: bool,
    /// `None` when fewer than two non-empty rows or columns remain.
    pub result: Option<ChiSquare>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub images_in: u64,
    pub celebrity_dropped: u64,
    pub images_without_faces: u64,
    pub images: u64,
    pub uploaders: u64,
    pub faces: u64,
    pub excluded_faces: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub summary: AuditSummary,
    pub faces: FaceCounts,
    pub composition: Vec<CompositionRow>,
    pub anonymization: Vec<LevelRow>,
    pub privacy_classes: Vec<LevelRow>,
    pub image_codes: Vec<CodeRow>,
    pub uploader_codes: Vec<CodeRow>,
    pub intentions: Vec<IntentionTable>,
    pub parts: Vec<ComboRow>,
    pub methods: Vec<ComboRow>,
    pub chi_square: Vec<ChiSquareTest>,
    pub warnings: Vec<String>,
    pub face_records: Vec<AuditedFace>,
}

/// Pearson chi-square test of independence on an r x c table. All-zero rows
/// and columns are dropped first. `yates` applies the continuity correction
/// to 2x2 tables only.
pub fn chi_square(table: &[Vec<u64>], yates: bool) -> Option<ChiSquare> {
    let cols = table.first()?.len();
    let row_tot: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<u64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let rows: Vec<usize> = (0..table.len()).filter(|&i| row_tot[i] > 0).collect();
    let keep: Vec<usize> = (0..cols).filter(|&j| col_tot[j] > 0).collect();
    if rows.len() < 2 || keep.len() < 2 {
        return None;
    }
    let n: u64 = row_tot.iter().sum();
    let correct = yates && rows.len() == 2 && keep.len() == 2;
    let mut stat = 0.0;
    for &i in &rows {
        for &j in &keep {
            let expected = row_tot[i] as f64 * col_tot[j] as f64 / n as f64;
            let mut d = (table[i][j] as f64 - expected).abs();
            if correct {
                d = (d - 0.5).max(0.0);
            }
            stat += d * d / expected;
        }
    }
    let dof = (rows.len() - 1) * (keep.len() - 1);
    let p_value = ChiSquared::new(dof as f64).expect("positive degrees of freedom").sf(stat);
    Some(ChiSquare { statistic: stat, dof, p_value })
}

fn bump(c: &mut CategoryCounts, face: &AuditedFace) {
    match face.label {
        Label::Subject => c.subject += 1,
        Label::Bystander => c.bystander += 1,
    }
    match face.category {
        PersonCategory::Friend => c.friend += 1,
        PersonCategory::Uploader => c.uploader += 1,
        PersonCategory::BystanderStar => c.bystander_star += 1,
    }
}

/// Greedy clustering of one uploader's faces: a face joins the first cluster
/// whose first member is at least `tau` similar, otherwise it starts one.
/// Fully anonymized faces and faces without embeddings count once each.
fn unique_faces<'a>(faces: impl Iterator<Item = &'a AuditedFace>, tau: f64) -> u64 {
    let mut reps: Vec<&AuditedFace> = Vec::new();
    let mut singles = 0;
    for f in faces {
        let Some(e) = f.embedding.as_ref().filter(|_| f.level != AnonymizationLevel::Full) else {
            singles += 1;
            continue;
        };
        let joins = reps.iter().any(|r| {
            let re = r.embedding.as_ref().expect("representatives carry embeddings");
            cosine_similarity(e, re).is_ok_and(|s| s >= tau)
        });
        if !joins {
            reps.push(f);
        }
    }
    reps.len() as u64 + singles
}

fn face_counts(corpus: &AuditedCorpus, tau: f64) -> FaceCounts {
    let mut out = FaceCounts::default();
    let mut by_uploader: BTreeMap<&str, Vec<&AuditedFace>> = BTreeMap::new();
    for f in &corpus.faces {
        bump(&mut out.all, f);
        by_uploader.entry(&f.uploader_id).or_default().push(f);
    }
    for faces in by_uploader.values() {
        let u = &mut out.unique;
        let count = |pred: &dyn Fn(&AuditedFace) -> bool| unique_faces(faces.iter().copied().filter(|f| pred(f)), tau);
        u.subject += count(&|f| f.label == Label::Subject);
        u.bystander += count(&|f| f.label == Label::Bystander);
        u.friend += count(&|f| f.category == PersonCategory::Friend);
        u.uploader += count(&|f| f.category == PersonCategory::Uploader);
        u.bystander_star += count(&|f| f.category == PersonCategory::BystanderStar);
    }
    out
}

/// Which labels and categories appear in a scope.
#[derive(Debug, Clone, Copy, Default)]
struct Presence {
    subject: bool,
    bystander: bool,
    friend: Option<TripleCode>,
    uploader: bool,
    bystander_star: Option<TripleCode>,
}

impl Presence {
    fn add(&mut self, f: &AuditedFace) {
        match f.label {
            Label::Subject => self.subject = true,
            Label::Bystander => self.bystander = true,
        }
        let code = |c: &mut Option<TripleCode>| c.get_or_insert_with(TripleCode::default).insert(f.level);
        match f.category {
            PersonCategory::Friend => code(&mut self.friend),
            PersonCategory::Uploader => self.uploader = true,
            PersonCategory::BystanderStar => code(&mut self.bystander_star),
        }
    }

    fn label_row(&self) -> usize {
        match (self.subject, self.bystander) {
            (true, false) => 0,
            (false, true) => 1,
            _ => 2,
        }
    }

    fn category_row(&self) -> usize {
        match (self.friend.is_some(), self.uploader, self.bystander_star.is_some()) {
            (true, false, false) => 3,
            (false, true, false) => 4,
            (false, false, true) => 5,
            (true, true, false) => 6,
            (true, false, true) => 7,
            (false, true, true) => 8,
            _ => 9,
        }
    }

    fn code_row(&self) -> Option<(Option<TripleCode>, Option<TripleCode>, bool)> {
        (self.friend.is_some() || self.bystander_star.is_some()).then_some((
            self.friend,
            self.bystander_star,
            self.uploader,
        ))
    }
}

const COMPOSITION_ROWS: [&str; 10] = [
    "Only subject",
    "Only bystander",
    "Subject & bystander",
    "Only friend",
    "Only uploader",
    "Only bystander*",
    "Friend & uploader",
    "Friend & bystander*",
    "Uploader & bystander*",
    "Friend, uploader & bystander*",
];

fn code_order(c: Option<TripleCode>) -> (u32, u8) {
    c.map(|c| (c.bits().count_ones(), 7 - c.bits())).unwrap_or((0, 0))
}

fn code_rows(counts: BTreeMap<(Option<TripleCode>, Option<TripleCode>, bool), u64>) -> Vec<CodeRow> {
    let mut rows: Vec<CodeRow> = counts
        .into_iter()
        .map(|((friend, bystander_star, with_uploader), count)| CodeRow { friend, bystander_star, with_uploader, count })
        .collect();
    let group = |r: &CodeRow| match (r.friend.is_some(), r.bystander_star.is_some()) {
        (true, false) => 0,
        (false, true) => 1,
        _ => 2,
    };
    rows.sort_by_key(|r| (group(r), r.with_uploader, code_order(r.friend), code_order(r.bystander_star)));
    rows
}

fn intention_order(set: &BTreeSet<Intention>) -> (bool, usize, BTreeSet<Intention>) {
    (set.contains(&Intention::Unknown), set.len(), set.clone())
}

fn intention_tables(faces: &[AuditedFace]) -> Vec<IntentionTable> {
    [(Label::Bystander, PersonCategory::BystanderStar), (Label::Subject, PersonCategory::Friend)]
        .into_iter()
        .map(|(label, category)| {
            let mut rows: BTreeMap<_, IntentionRow> = BTreeMap::new();
            for f in faces.iter().filter(|f| f.manipulated() && f.label == label) {
                let row = rows.entry(intention_order(&f.intentions)).or_insert_with(|| IntentionRow {
                    intentions: intention_label(&f.intentions),
                    none: 0,
                    partial: 0,
                    full: 0,
                    uploader: 0,
                });
                if f.category == PersonCategory::Uploader {
                    row.uploader += 1;
                } else if f.category == category {
                    match f.level {
                        AnonymizationLevel::None => row.none += 1,
                        AnonymizationLevel::Partial => row.partial += 1,
                        AnonymizationLevel::Full => row.full += 1,
                    }
                }
            }
            IntentionTable { label, rows: rows.into_values().collect() }
        })
        .collect()
}

fn combo_table<K: Ord + Clone>(
    faces: &[AuditedFace],
    key: impl Fn(&AuditedFace) -> &BTreeSet<K>,
    render: impl Fn(&BTreeSet<K>) -> String,
) -> Vec<ComboRow> {
    let mut rows: BTreeMap<(usize, BTreeSet<K>), ComboRow> = BTreeMap::new();
    for f in faces.iter().filter(|f| f.intentions.contains(&Intention::Privacy)) {
        let set = key(f);
        if set.is_empty() || f.level == AnonymizationLevel::None || f.category == PersonCategory::Uploader {
            continue;
        }
        let row = rows.entry((set.len(), set.clone())).or_insert_with(|| ComboRow {
            combination: render(set),
            bystander_partial: 0,
            bystander_full: 0,
            friend_partial: 0,
            friend_full: 0,
        });
        let cell = match (f.category, f.level) {
            (PersonCategory::BystanderStar, AnonymizationLevel::Partial) => &mut row.bystander_partial,
            (PersonCategory::BystanderStar, _) => &mut row.bystander_full,
            (_, AnonymizationLevel::Partial) => &mut row.friend_partial,
            _ => &mut row.friend_full,
        };
        *cell += 1;
    }
    rows.into_values().collect()
}

struct UploaderFacts {
    verified: Option<bool>,
    profile: Option<ProfileType>,
}

fn chi_square_tests(
    images: &[AuditedImage],
    faces: &[AuditedFace],
    yates: bool,
) -> Vec<ChiSquareTest> {
    let mut facts: BTreeMap<&str, UploaderFacts> = BTreeMap::new();
    for img in images {
        let f = facts.entry(&img.uploader_id).or_insert(UploaderFacts { verified: None, profile: None });
        f.verified = f.verified.or(img.verified_account);
        f.profile = f.profile.or(img.profile_type);
    }
    let mut out = Vec::new();
    for category in [PersonCategory::Friend, PersonCategory::BystanderStar] {
        // Per uploader: does any face of the category carry anonymization?
        let mut anonymized: BTreeMap<&str, bool> = BTreeMap::new();
        for f in faces.iter().filter(|f| f.category == category) {
            *anonymized.entry(&f.uploader_id).or_default() |= f.level != AnonymizationLevel::None;
        }
        let tally = |group: &dyn Fn(&UploaderFacts) -> Option<usize>, n: usize| {
            let mut t = vec![[0u64; 2]; n];
            for (u, &any) in &anonymized {
                if let Some(g) = facts.get(u).and_then(group) {
                    t[g][if any { 0 } else { 1 }] += 1;
                }
            }
            t
        };
        let account = tally(&|f| f.verified.map(|v| if v { 0 } else { 1 }), 2);
        let profile = tally(
            &|f| {
                f.profile.map(|p| match p {
                    ProfileType::RealFace => 0,
                    ProfileType::NoHuman => 1,
                    ProfileType::Celebrity => 2,
                })
            },
            3,
        );
        for (factor, rows, table) in [
            ("account", vec!["verified", "ordinary"], account),
            ("profile_image", vec!["real_face", "no_human", "celebrity"], profile),
        ] {
            let as_vec: Vec<Vec<u64>> = table.iter().map(|r| r.to_vec()).collect();
            out.push(ChiSquareTest {
                category,
                factor: factor.into(),
                rows: rows.into_iter().map(String::from).collect(),
                result: chi_square(&as_vec, yates),
                table,
                yates,
            });
        }
    }
    out
}

/// Folds the audited corpus into the report tables.
pub fn aggregate(corpus: &AuditedCorpus, config: &AuditConfig) -> AuditReport {
    let faces = &corpus.faces;
    let mut image_presence: BTreeMap<&str, Presence> = BTreeMap::new();
    let mut uploader_presence: BTreeMap<&str, Presence> = BTreeMap::new();
    for f in faces {
        image_presence.entry(&f.image_id).or_default().add(f);
        uploader_presence.entry(&f.uploader_id).or_default().add(f);
    }

    let mut composition: Vec<CompositionRow> = COMPOSITION_ROWS
        .iter()
        .map(|c| CompositionRow { composition: (*c).into(), images: 0, uploaders: 0 })
        .collect();
    let mut image_codes = BTreeMap::new();
    let mut uploader_codes = BTreeMap::new();
    for p in image_presence.values() {
        composition[p.label_row()].images += 1;
        composition[p.category_row()].images += 1;
        if let Some(k) = p.code_row() {
            *image_codes.entry(k).or_insert(0) += 1;
        }
    }
    for p in uploader_presence.values() {
        composition[p.label_row()].uploaders += 1;
        composition[p.category_row()].uploaders += 1;
        if let Some(k) = p.code_row() {
            *uploader_codes.entry(k).or_insert(0) += 1;
        }
    }

    let count = |pred: &dyn Fn(&AuditedFace) -> bool, cat: PersonCategory| {
        faces.iter().filter(|f| f.category == cat && pred(f)).count() as u64
    };
    let level_row = |name: &str, pred: &dyn Fn(&AuditedFace) -> bool| LevelRow {
        level: name.into(),
        friend: count(pred, PersonCategory::Friend),
        bystander_star: count(pred, PersonCategory::BystanderStar),
        uploader: count(pred, PersonCategory::Uploader),
    };
    let anonymization = AnonymizationLevel::ALL.iter().map(|&l| level_row(l.as_str(), &|f| f.level == l)).collect();
    let mut privacy_classes: Vec<LevelRow> = [PrivacyClass::One, PrivacyClass::Two, PrivacyClass::Three]
        .iter()
        .map(|&c| level_row(&(c as u8).to_string(), &|f| f.privacy_class == Some(c)))
        .collect();
    privacy_classes.push(level_row("none", &|f| f.privacy_class.is_none()));

    let uploaders: BTreeSet<&str> = corpus.images.iter().map(|i| i.uploader_id.as_str()).collect();
    AuditReport {
        summary: AuditSummary {
            images_in: corpus.images_in as u64,
            celebrity_dropped: corpus.celebrity_dropped.len() as u64,
            images_without_faces: corpus.images_without_faces.len() as u64,
            images: corpus.images.len() as u64,
            uploaders: uploaders.len() as u64,
            faces: faces.len() as u64,
            excluded_faces: corpus.excluded_faces.len() as u64,
        },
        faces: face_counts(corpus, config.match_threshold),
        composition,
        anonymization,
        privacy_classes,
        image_codes: code_rows(image_codes),
        uploader_codes: code_rows(uploader_codes),
        intentions: intention_tables(faces),
        parts: combo_table(faces, |f| &f.parts, parts_label),
        methods: combo_table(faces, |f| &f.methods, methods_label),
        chi_square: chi_square_tests(&corpus.images, faces, config.yates),
        warnings: corpus.warnings.clone(),
        face_records: faces.clone(),
    }
}

/// Checks that every table's margins agree with the face-level totals.
/// Returns the violated identities.
pub fn conservation_violations(r: &AuditReport) -> Vec<String> {
    let mut bad = Vec::new();
    let a = r.faces.all;
    for (u, all, name) in [
        (r.faces.unique.subject, a.subject, "unique subject"),
        (r.faces.unique.bystander, a.bystander, "unique bystander"),
        (r.faces.unique.friend, a.friend, "unique friend"),
        (r.faces.unique.uploader, a.uploader, "unique uploader"),
        (r.faces.unique.bystander_star, a.bystander_star, "unique bystander*"),
    ] {
        if u > all {
            bad.push(format!("{name}: {u} exceeds {all}"));
        }
    }
    let mut check = |name: &str, got: u64, want: u64| {
        if got != want {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };
    check("label partition", a.subject + a.bystander, r.summary.faces);
    check("category partition", a.friend + a.uploader + a.bystander_star, r.summary.faces);
    let comp = |range: std::ops::Range<usize>, f: fn(&CompositionRow) -> u64| {
        r.composition[range].iter().map(f).sum::<u64>()
    };
    check("image label composition", comp(0..3, |c| c.images), r.summary.images);
    check("image category composition", comp(3..10, |c| c.images), r.summary.images);
    check("uploader label composition", comp(0..3, |c| c.uploaders), r.summary.uploaders);
    check("uploader category composition", comp(3..10, |c| c.uploaders), r.summary.uploaders);
    let col = |rows: &[LevelRow], f: fn(&LevelRow) -> u64| rows.iter().map(f).sum::<u64>();
    for (rows, name) in [(&r.anonymization, "anonymization"), (&r.privacy_classes, "privacy classes")] {
        check(&format!("{name} friend"), col(rows, |l| l.friend), a.friend);
        check(&format!("{name} bystander*"), col(rows, |l| l.bystander_star), a.bystander_star);
        check(&format!("{name} uploader"), col(rows, |l| l.uploader), a.uploader);
    }
    let with_code = |range: std::ops::Range<usize>, f: fn(&CompositionRow) -> u64| {
        r.composition[range].iter().map(f).sum::<u64>()
    };
    // Scopes with a friend or bystander*: every category row but "Only uploader".
    let coded_images = with_code(3..10, |c| c.images) - r.composition[4].images;
    let coded_uploaders = with_code(3..10, |c| c.uploaders) - r.composition[4].uploaders;
    check("image codes", r.image_codes.iter().map(|c| c.count).sum(), coded_images);
    check("uploader codes", r.uploader_codes.iter().map(|c| c.count).sum(), coded_uploaders);
    let manipulated = |label: Label, cat: PersonCategory| {
        r.face_records.iter().filter(|f| f.manipulated() && f.label == label && f.category == cat).count() as u64
    };
    for t in &r.intentions {
        let cat = if t.label == Label::Bystander { PersonCategory::BystanderStar } else { PersonCategory::Friend };
        let levels: u64 = t.rows.iter().map(|x| x.none + x.partial + x.full).sum();
        check(&format!("intentions {:?}", t.label), levels, manipulated(t.label, cat));
        let up: u64 = t.rows.iter().map(|x| x.uploader).sum();
        check(&format!("intentions {:?} uploader", t.label), up, manipulated(t.label, PersonCategory::Uploader));
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_matches_closed_form() {
        let s = chi_square(&[vec![10, 20], vec![30, 15]], false).unwrap();
        // N (ad - bc)^2 / (row and column totals)
        let oracle = 75.0 * (10.0 * 15.0 - 20.0 * 30.0f64).powi(2) / (30.0 * 45.0 * 40.0 * 35.0);
        assert!((s.statistic - oracle).abs() < 1e-12);
        assert_eq!(s.dof, 1);
        let y = chi_square(&[vec![10, 20], vec![30, 15]], true).unwrap();
        let yates = 75.0 * ((10.0 * 15.0 - 20.0 * 30.0f64).abs() - 37.5).powi(2) / (30.0 * 45.0 * 40.0 * 35.0);
        assert!((y.statistic - yates).abs() < 1e-12);
        assert!(y.statistic < s.statistic);
    }

    #[test]
    fn p_value_for_three_rows() {
        assert!(chi_square(&[vec![0u64, 0], vec![0, 0]], false).is_none());
        let s = chi_square(&[vec![10, 10], vec![10, 10], vec![10, 10]], false).unwrap();
        assert_eq!(s.statistic, 0.0);
        assert_eq!(s.dof, 2);
        assert!((s.p_value - 1.0).abs() < 1e-12);
        // 5.9915 is the 5% critical value with 2 degrees of freedom.
        let s = chi_square(&[vec![20, 10], vec![10, 20], vec![15, 15]], false).unwrap();
        let d = ChiSquared::new(2.0).unwrap();
        assert!((d.sf(5.991464547107979) - 0.05).abs() < 1e-9);
        assert!((s.p_value - (-s.statistic / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rows_dropped() {
        let s = chi_square(&[vec![5, 3], vec![0, 0], vec![2, 9]], false).unwrap();
        let t = chi_square(&[vec![5, 3], vec![2, 9]], false).unwrap();
        assert_eq!(s, t);
        assert!(chi_square(&[vec![5, 0], vec![2, 0]], false).is_none());
    }

    fn arb_face() -> impl Strategy<Value = (usize, usize, bool, u8, u8, bool)> {
        (0usize..6, 0usize..3, any::<bool>(), 0u8..3, 0u8..3, any::<bool>())
    }

    fn corpus(spec: &[(usize, usize, bool, u8, u8, bool)]) -> AuditedCorpus {
        use crate::audit::rules::FaceClass;
        let mut c = AuditedCorpus::default();
        for (n, &(img, up, bystander, cat, level, privacy)) in spec.iter().enumerate() {
            let image_id = format!("i{img}");
            let uploader_id = format!("u{}", (img + up) % 3);
            if !c.images.iter().any(|i| i.image_id == image_id) {
                c.images.push(AuditedImage {
                    image_id: image_id.clone(),
                    uploader_id: uploader_id.clone(),
                    verified_account: Some(up == 0),
                    profile_type: Some(ProfileType::RealFace),
                });
            }
            let uploader_id = c.images.iter().find(|i| i.image_id == image_id).unwrap().uploader_id.clone();
            let level = AnonymizationLevel::ALL[level as usize];
            let category = [PersonCategory::Uploader, PersonCategory::Friend, PersonCategory::BystanderStar][cat as usize];
            let class = match level {
                AnonymizationLevel::Full => FaceClass::C,
                AnonymizationLevel::Partial => FaceClass::B,
                AnonymizationLevel::None => FaceClass::A,
            };
            c.faces.push(AuditedFace {
                image_id,
                face_id: format!("f{n}"),
                uploader_id,
                detected: class != FaceClass::C,
                region_id: None,
                class,
                level,
                label: if bystander { Label::Bystander } else { Label::Subject },
                uploader_match: category == PersonCategory::Uploader,
                category,
                privacy_class: crate::audit::rules::privacy_class(category, level),
                intentions: if class == FaceClass::A {
                    BTreeSet::new()
                } else if privacy {
                    [Intention::Privacy].into()
                } else {
                    [Intention::Unknown].into()
                },
                parts: BTreeSet::new(),
                methods: BTreeSet::new(),
                embedding: None,
            });
        }
        c.images_in = c.images.len();
        c
    }

    proptest! {
        #[test]
        fn chi_square_oracle(a in 1u64..50, b in 1u64..50, c in 1u64..50, d in 1u64..50) {
            let s = chi_square(&[vec![a, b], vec![c, d]], false).unwrap();
            let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
            let n = a + b + c + d;
            let oracle = n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d));
            prop_assert!((s.statistic - oracle).abs() <= 1e-9 * oracle.max(1.0));
            prop_assert!((0.0..=1.0).contains(&s.p_value));
        }

        #[test]
        fn margins_conserved(spec in prop::collection::vec(arb_face(), 1..40)) {
            let r = aggregate(&corpus(&spec), &AuditConfig::default());
            prop_assert_eq!(conservation_violations(&r), Vec::<String>::new());
            prop_assert_eq!(r.summary.faces as usize, spec.len());
        }
    }
}
