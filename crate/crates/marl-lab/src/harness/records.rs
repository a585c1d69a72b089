//! Persisted per-episode records and drift-log transitions.
//!
//! Records go to one RFC-4180 CSV per (algorithm, seed) run, header row
//! first, columns exactly in struct field order, with a leading
//! `schema_version` column; readers reject unknown versions loudly.
//! Writers flush at update boundaries so a truncated-at-flush file is
//! still parseable.

use super::HarnessError;
use crate::theory::TransitionEvent;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// One training episode as persisted. The three reward components sum to
/// `mean_agent_total_reward` (within 1e-9; they are means over agents of
/// per-agent sums over steps).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub algorithm: String,
    pub seed: u64,
    pub episode_index: usize,
    pub mean_agent_total_reward: f64,
    pub env_reward_component: f64,
    pub heuristic_component: f64,
    pub shaped_component: f64,
    pub landmarks_covered_final: usize,
    pub collision_count: u64,
    pub wall_clock_ms: u64,
}

pub fn records_file_name(algorithm: &str, seed: u64) -> String {
    format!("records_{algorithm}_{seed}.csv")
}

pub fn transitions_file_name(algorithm: &str, seed: u64) -> String {
    format!("transitions_{algorithm}_{seed}.csv")
}

/// Incremental CSV writer for one run's episode records.
pub struct RecordWriter {
    writer: csv::Writer<BufWriter<File>>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path)?;
        let writer = csv::Writer::from_writer(BufWriter::new(file));
        Ok(Self { writer })
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<(), HarnessError> {
        self.writer.serialize(record)?;
        Ok(())
    }

    /// Flush buffered rows to disk; the crash-safety boundary.
    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Read one record file, rejecting unknown schema versions.
pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::BadRecords(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let record: EpisodeRecord =
            row.map_err(|e| HarnessError::BadRecords(format!("{}: {e}", path.display())))?;
        if record.schema_version != RECORD_SCHEMA_VERSION {
            return Err(HarnessError::BadRecords(format!(
                "{}: unknown record schema version {} (this build reads {})",
                path.display(),
                record.schema_version,
                RECORD_SCHEMA_VERSION
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// All record files under a directory, in file-name order.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("records_") && name.ends_with(".csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Read and concatenate every record file under `dir`.
pub fn read_all_records(dir: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let files = record_files(dir)?;
    if files.is_empty() {
        return Err(HarnessError::BadRecords(format!(
            "no records_*.csv files under {}",
            dir.display()
        )));
    }
    let mut all = Vec::new();
    for file in files {
        all.extend(read_records(&file)?);
    }
    Ok(all)
}

/// Incremental CSV writer for one run's drift-log transitions.
pub struct TransitionWriter {
    out: BufWriter<File>,
}

impl TransitionWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "episode,agent,state_bucket,action,next_bucket")?;
        Ok(Self { out })
    }

    pub fn append(&mut self, events: &[TransitionEvent]) -> Result<(), HarnessError> {
        for e in events {
            writeln!(
                self.out,
                "{},{},{},{},{}",
                e.episode, e.agent, e.state_bucket, e.action, e.next_bucket
            )?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_transitions(path: &Path) -> Result<Vec<TransitionEvent>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("episode,agent,state_bucket,action,next_bucket") => {}
        other => {
            return Err(HarnessError::BadRecords(format!(
                "{}: unexpected transitions header {other:?}",
                path.display()
            )))
        }
    }
    let mut events = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = || -> Result<&str, HarnessError> {
            parts.next().ok_or_else(|| {
                HarnessError::BadRecords(format!(
                    "{}: line {}: missing field",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        let parse_err = |e: std::num::ParseIntError| {
            HarnessError::BadRecords(format!("{}: line {}: {e}", path.display(), lineno + 2))
        };
        events.push(TransitionEvent {
            episode: field()?.parse().map_err(parse_err)?,
            agent: field()?.parse().map_err(parse_err)?,
            state_bucket: field()?.parse().map_err(parse_err)?,
            action: field()?.parse().map_err(parse_err)?,
            next_bucket: field()?.parse().map_err(parse_err)?,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(episode_index: usize) -> EpisodeRecord {
        EpisodeRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            algorithm: "IPPO".into(),
            seed: 42,
            episode_index,
            mean_agent_total_reward: -24.5 + episode_index as f64,
            env_reward_component: -25.0,
            heuristic_component: 0.5 + episode_index as f64,
            shaped_component: 0.0,
            landmarks_covered_final: 1,
            collision_count: 3,
            wall_clock_ms: 0,
        }
    }

    #[test]
    fn record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(records_file_name("IPPO", 42));
        let mut writer = RecordWriter::create(&path).unwrap();
        let records: Vec<_> = (0..5).map(sample_record).collect();
        for r in &records {
            writer.append(r).unwrap();
        }
        writer.flush().unwrap();
        drop(writer);
        assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records_IPPO_42.csv");
        let mut writer = RecordWriter::create(&path).unwrap();
        let mut record = sample_record(0);
        record.schema_version = 99;
        writer.append(&record).unwrap();
        writer.flush().unwrap();
        drop(writer);
        let err = read_records(&path).unwrap_err();
        assert!(err.to_string().contains("schema version 99"));
    }

    /// Truncating at a flush boundary leaves whole rows; the prefix still
    /// parses.
    #[test]
    fn truncation_at_flush_boundary_is_parseable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records_IPPO_7.csv");
        let mut writer = RecordWriter::create(&path).unwrap();
        for i in 0..10 {
            writer.append(&sample_record(i)).unwrap();
        }
        writer.flush().unwrap();
        let boundary = std::fs::metadata(&path).unwrap().len();
        for i in 10..20 {
            writer.append(&sample_record(i)).unwrap();
        }
        writer.flush().unwrap();
        drop(writer);

        let file = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
        file.set_len(boundary).unwrap();
        drop(file);
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 10);
        assert_eq!(records[9], sample_record(9));
    }

    #[test]
    fn transitions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(transitions_file_name("IPPO", 42));
        let mut writer = TransitionWriter::create(&path).unwrap();
        let events: Vec<_> = (0..7)
            .map(|i| TransitionEvent {
                episode: i,
                agent: i % 3,
                state_bucket: (i % 9) as u32,
                action: i % 5,
                next_bucket: ((i + 1) % 9) as u32,
            })
            .collect();
        writer.append(&events).unwrap();
        writer.flush().unwrap();
        drop(writer);
        assert_eq!(read_transitions(&path).unwrap(), events);
    }
}
