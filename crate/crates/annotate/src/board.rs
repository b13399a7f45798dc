//! In-memory task board rebuilt from the journal.

use std::collections::{BTreeMap, HashMap, HashSet};

use facegate::audit::journal::{task_id, ConsensusRecord, JournalEntry, TaskHint};
use facegate::audit::{consensus, AnnotationRecord, Consensus, ConsensusStatus, FieldError};
use facegate::features::FaceObservation;
use facegate::imaging::RectRegion;
use facegate::providers::{FaceSidecar, Manifest, ManipulationRegion, PredictionRecord, RegionType};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    PartiallyCoded,
    Resolved,
    Escalated,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::PartiallyCoded => "partially_coded",
            Self::Resolved => "resolved",
            Self::Escalated => "escalated",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BoardError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("invalid record")]
    Invalid(Vec<FieldError>),
    #[error("{0}")]
    Conflict(String),
    #[error("prediction for unknown face {0}")]
    DanglingReference(String),
}

#[derive(Debug, Clone)]
pub struct Task {
    pub task_id: String,
    pub image_id: String,
    pub region_id: String,
    pub region: RectRegion,
    pub region_type: RegionType,
    pub face_id: Option<String>,
    /// Incremented on every reopen.
    pub round: u32,
    pub records: BTreeMap<String, AnnotationRecord>,
    pub hints: Vec<TaskHint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskView {
    pub task_id: String,
    pub image_id: String,
    pub region_id: String,
    pub region: RectRegion,
    pub region_type: RegionType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub face_id: Option<String>,
    pub status: TaskStatus,
    pub round: u32,
    pub annotators: Vec<String>,
    pub hints: Vec<TaskHint>,
}

pub struct Board {
    tasks: BTreeMap<String, Task>,
    faces: HashMap<String, Vec<FaceObservation>>,
    annotators: usize,
}

fn field(field: &str, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

impl Board {
    pub fn new(manifest: &Manifest, regions: &[ManipulationRegion], faces: &[FaceSidecar], annotators: usize) -> Self {
        let tasks = regions
            .iter()
            .filter(|r| manifest.get(&r.image_id).is_some())
            .map(|r| {
                let id = task_id(&r.image_id, &r.region_id);
                let task = Task {
                    task_id: id.clone(),
                    image_id: r.image_id.clone(),
                    region_id: r.region_id.clone(),
                    region: r.region,
                    region_type: r.region_type,
                    face_id: r.face_id.clone(),
                    round: 0,
                    records: BTreeMap::new(),
                    hints: Vec::new(),
                };
                (id, task)
            })
            .collect();
        let mut by_image: HashMap<String, Vec<FaceObservation>> = HashMap::new();
        for s in faces {
            by_image.entry(s.image_id.clone()).or_default().extend(s.faces.iter().cloned());
        }
        Self { tasks, faces: by_image, annotators: annotators.max(1) }
    }

    pub fn annotators(&self) -> usize {
        self.annotators
    }

    pub fn task(&self, id: &str) -> Result<&Task, BoardError> {
        self.tasks.get(id).ok_or_else(|| BoardError::UnknownTask(id.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn faces_of(&self, image_id: &str) -> &[FaceObservation] {
        self.faces.get(image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn regions_of(&self, image_id: &str) -> Vec<&Task> {
        self.tasks.values().filter(|t| t.image_id == image_id).collect()
    }

    pub fn consensus(&self, task: &Task) -> Option<Consensus> {
        let records: Vec<_> = task.records.values().cloned().collect();
        consensus(&records, self.annotators).ok()
    }

    pub fn status(&self, task: &Task) -> TaskStatus {
        if task.records.is_empty() {
            TaskStatus::Pending
        } else if task.records.len() < self.annotators {
            TaskStatus::PartiallyCoded
        } else {
            match self.consensus(task).map(|c| c.status) {
                Some(ConsensusStatus::Resolved) => TaskStatus::Resolved,
                _ => TaskStatus::Escalated,
            }
        }
    }

    pub fn view(&self, task: &Task) -> TaskView {
        TaskView {
            task_id: task.task_id.clone(),
            image_id: task.image_id.clone(),
            region_id: task.region_id.clone(),
            region: task.region,
            region_type: task.region_type,
            face_id: task.face_id.clone(),
            status: self.status(task),
            round: task.round,
            annotators: task.records.keys().cloned().collect(),
            hints: task.hints.clone(),
        }
    }

    /// Checks that `entry` may be appended to the journal.
    pub fn check(&self, entry: &JournalEntry) -> Result<(), BoardError> {
        match entry {
            JournalEntry::Annotation { task_id, record } => {
                let task = self.task(task_id)?;
                let mut errs = Vec::new();
                if record.image_id != task.image_id {
                    errs.push(field("image_id", format!("task {task_id} belongs to image {}", task.image_id)));
                }
                if record.region_id != task.region_id {
                    errs.push(field("region_id", format!("task {task_id} covers region {}", task.region_id)));
                }
                if record.annotator_id.trim().is_empty() {
                    errs.push(field("annotator_id", "must not be empty"));
                }
                if let Err(e) = record.coding.validate() {
                    errs.extend(e);
                }
                if !errs.is_empty() {
                    return Err(BoardError::Invalid(errs));
                }
                if task.records.len() >= self.annotators && !task.records.contains_key(&record.annotator_id) {
                    return Err(BoardError::Conflict(format!(
                        "task {task_id} already has {} annotators",
                        self.annotators
                    )));
                }
                Ok(())
            }
            JournalEntry::Reopen { task_id } => {
                let task = self.task(task_id)?;
                match self.status(task) {
                    TaskStatus::Escalated => Ok(()),
                    s => Err(BoardError::Conflict(format!("only escalated tasks can be reopened; {task_id} is {}", s.as_str()))),
                }
            }
            JournalEntry::Hints { hints } => {
                for h in hints {
                    self.task(&h.task_id)?;
                }
                Ok(())
            }
        }
    }

    /// Applies a journal entry. Replay skips entries for tasks that no
    /// longer exist.
    pub fn apply(&mut self, entry: &JournalEntry) -> Result<(), BoardError> {
        match entry {
            JournalEntry::Annotation { task_id, record } => {
                let task = self.tasks.get_mut(task_id).ok_or_else(|| BoardError::UnknownTask(task_id.clone()))?;
                task.records.insert(record.annotator_id.clone(), record.clone());
            }
            JournalEntry::Reopen { task_id } => {
                let task = self.tasks.get_mut(task_id).ok_or_else(|| BoardError::UnknownTask(task_id.clone()))?;
                task.records.clear();
                task.round += 1;
            }
            JournalEntry::Hints { hints } => {
                for t in self.tasks.values_mut() {
                    t.hints.clear();
                }
                for h in hints {
                    if let Some(t) = self.tasks.get_mut(&h.task_id) {
                        t.hints.push(h.clone());
                    }
                }
            }
        }
        Ok(())
    }

    /// Turns classifier predictions into hints on the tasks whose region
    /// belongs to the predicted face.
    pub fn hints_from_predictions(&self, predictions: &[PredictionRecord]) -> Result<Vec<TaskHint>, BoardError> {
        let mut known: HashSet<(&str, &str)> = HashSet::new();
        for (img, faces) in &self.faces {
            for f in faces {
                known.insert((img, &f.face_id));
            }
        }
        let mut hints = Vec::new();
        for p in predictions {
            if !known.contains(&(p.image_id.as_str(), p.face_id.as_str())) {
                return Err(BoardError::DanglingReference(format!("{}/{}", p.image_id, p.face_id)));
            }
            let face = self.faces_of(&p.image_id).iter().find(|f| f.face_id == p.face_id).expect("known face");
            for t in self.tasks.values().filter(|t| t.image_id == p.image_id) {
                let linked = match &t.face_id {
                    Some(id) => *id == p.face_id,
                    None => face.bbox.area() > 0 && t.region.overlap_area(&face.bbox) * 2 >= face.bbox.area(),
                };
                if linked {
                    hints.push(TaskHint {
                        task_id: t.task_id.clone(),
                        face_id: p.face_id.clone(),
                        label: p.label,
                        bystander_probability: p.bystander_probability,
                        source: "machine".into(),
                    });
                }
            }
        }
        hints.sort_by(|a, b| (&a.task_id, &a.face_id).cmp(&(&b.task_id, &b.face_id)));
        Ok(hints)
    }

    /// Every task with its current round, sorted by task id.
    pub fn export(&self) -> Vec<ConsensusRecord> {
        self.tasks
            .values()
            .map(|t| ConsensusRecord {
                task_id: t.task_id.clone(),
                image_id: t.image_id.clone(),
                region_id: t.region_id.clone(),
                round: t.round,
                status: self.status(t).as_str().to_string(),
                consensus: self.consensus(t),
                records: t.records.values().cloned().collect(),
            })
            .collect()
    }
}
