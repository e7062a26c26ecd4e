//! In-memory simulation trace.

use crate::engine::{EventKind, Fidelity};
use crate::model::{StatePartition, SystemModel};
use crate::scenario::trace_csv::sanitize_event;
use crate::scenario::{Termination, TraceRow, TraceTable};

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    ShortTermUnstable(String),
    NewtonFailure(String),
    Singularity(String),
}

impl Status {
    pub fn termination(&self) -> Termination {
        match self {
            Status::Completed => Termination::Completed,
            Status::ShortTermUnstable(_) => Termination::ShortTermUnstable,
            Status::NewtonFailure(_) => Termination::NewtonFailure,
            Status::Singularity(_) => Termination::Singularity,
        }
    }

    pub fn is_completed(&self) -> bool {
        *self == Status::Completed
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub part: StatePartition,
    pub fidelity: Fidelity,
    /// Discrete jump counter after this sample.
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Index into `samples`.
    pub sample: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub samples: Vec<Sample>,
    pub annotations: Vec<Annotation>,
    pub status: Status,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        Self {
            samples: Vec::new(),
            annotations: Vec::new(),
            status: Status::Completed,
        }
    }

    pub fn push(&mut self, t: f64, part: &StatePartition, fidelity: Fidelity, k: u32, events: impl IntoIterator<Item = EventKind>) {
        self.samples.push(Sample {
            t,
            part: part.clone(),
            fidelity,
            k,
        });
        let i = self.samples.len() - 1;
        for kind in events {
            self.annotations.push(Annotation { sample: i, kind });
        }
    }

    /// Attaches an event to the last sample.
    pub fn annotate(&mut self, kind: EventKind) {
        let sample = self.samples.len().saturating_sub(1);
        self.annotations.push(Annotation { sample, kind });
    }

    /// Drops samples at or after `t`, with their annotations.
    pub fn truncate_from(&mut self, t: f64) {
        let keep = self.samples.iter().position(|s| s.t >= t - 1e-9).unwrap_or(self.samples.len());
        self.samples.truncate(keep);
        self.annotations.retain(|a| a.sample < keep);
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn t_final(&self) -> f64 {
        self.last().map_or(0.0, |s| s.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, f: impl Fn(&StatePartition) -> f64) -> Vec<f64> {
        self.samples.iter().map(|s| f(&s.part)).collect()
    }

    pub fn jumps(&self) -> u32 {
        self.annotations
            .iter()
            .filter(|a| matches!(a.kind, EventKind::Jump { .. }))
            .count() as u32
    }

    pub fn events_at(&self, sample: usize) -> impl Iterator<Item = &EventKind> {
        self.annotations.iter().filter(move |a| a.sample == sample).map(|a| &a.kind)
    }

    pub fn to_table(&self, model: &SystemModel) -> TraceTable {
        let mut rows: Vec<TraceRow> = self
            .samples
            .iter()
            .map(|s| TraceRow {
                t: s.t,
                event: String::new(),
                values: model.row_values(&s.part),
            })
            .collect();
        for a in &self.annotations {
            let ev = &mut rows[a.sample].event;
            if !ev.is_empty() {
                ev.push(';');
            }
            ev.push_str(&sanitize_event(&a.kind.to_string()));
        }
        TraceTable {
            columns: model.column_names(),
            rows,
        }
    }
}
