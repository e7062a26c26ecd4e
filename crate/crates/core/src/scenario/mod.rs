//! Input documents, trace and verdict files, and the bundled scenarios.

pub mod case;
pub mod schedule;
pub mod suite;
pub mod trace_csv;
pub mod verdict;

pub use case::{load_case, parse_case, serialize_case, Case, StudyRegion};
pub use schedule::{parse_schedule, serialize_schedule, EventAction, EventSchedule, ScheduledEvent};
pub use trace_csv::{read_trace, write_trace, write_trace_file, TraceRow, TraceTable};
pub use verdict::{Outcome, SwitchBackRecord, SwitchReason, Termination, VerdictReport};
pub use suite::Scenario;
