//! Event-log persistence (newline-delimited JSON) and atomic file output.
//!
//! The first line is a header carrying the horizon; every following line is
//! one event:
//!
//! ```text
//! {"kind":"header","horizon":20000}
//! {"kind":"impression","t":0,"advertiser":"A","slot":1,"query_id":0,"id":0}
//! {"kind":"click","t":0,"advertiser":"A","slot":1,"query_id":0,"impression_ref":0,"source":"organic"}
//! ```

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{AdvertiserId, ClickEvent, ClickSource, Event, EventLog, ImpressionEvent, Millis};

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Header {
        horizon: Millis,
    },
    Impression {
        t: Millis,
        advertiser: AdvertiserId,
        slot: u32,
        query_id: u64,
        id: u64,
    },
    Click {
        t: Millis,
        advertiser: AdvertiserId,
        slot: u32,
        query_id: u64,
        impression_ref: u64,
        source: ClickSource,
    },
}

impl From<&Event> for Record {
    fn from(e: &Event) -> Self {
        match e {
            Event::Impression(i) => Record::Impression {
                t: i.t,
                advertiser: i.advertiser.clone(),
                slot: i.slot,
                query_id: i.query_id,
                id: i.id,
            },
            Event::Click(c) => Record::Click {
                t: c.t,
                advertiser: c.advertiser.clone(),
                slot: c.slot,
                query_id: c.query_id,
                impression_ref: c.impression_ref,
                source: c.source,
            },
        }
    }
}

/// Writes `path` through a temporary file in the same directory followed by
/// a rename, so readers never observe a half-written file.
pub fn write_atomic<F>(path: &Path, body: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn encode_log(log: &EventLog, w: &mut dyn Write) -> io::Result<()> {
    let header = Record::Header { horizon: log.horizon() };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for e in log.events() {
        serde_json::to_writer(&mut *w, &Record::from(e))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_log(log: &EventLog, path: impl AsRef<Path>) -> Result<(), LogIoError> {
    write_atomic(path.as_ref(), |w| encode_log(log, w))?;
    Ok(())
}

pub fn decode_log<R: BufRead>(reader: R) -> Result<EventLog, LogIoError> {
    let mut log: Option<EventLog> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| LogIoError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let malformed = |reason: String| LogIoError::MalformedRecord { line: line_no, reason };
        match (record, log.as_mut()) {
            (Record::Header { horizon }, None) => log = Some(EventLog::new(horizon)),
            (Record::Header { .. }, Some(_)) => {
                return Err(malformed("duplicate header".into()));
            }
            (_, None) => return Err(malformed("missing header before first event".into())),
            (
                Record::Impression {
                    t,
                    advertiser,
                    slot,
                    query_id,
                    id,
                },
                Some(log),
            ) => log
                .append(Event::Impression(ImpressionEvent {
                    id,
                    t,
                    advertiser,
                    slot,
                    query_id,
                }))
                .map_err(|e| malformed(e.to_string()))?,
            (
                Record::Click {
                    t,
                    advertiser,
                    slot,
                    query_id,
                    impression_ref,
                    source,
                },
                Some(log),
            ) => log
                .append(Event::Click(ClickEvent {
                    t,
                    advertiser,
                    slot,
                    query_id,
                    impression_ref,
                    source,
                }))
                .map_err(|e| malformed(e.to_string()))?,
        }
    }
    log.ok_or(LogIoError::MalformedRecord {
        line: 1,
        reason: "empty file".into(),
    })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<EventLog, LogIoError> {
    let file = File::open(path)?;
    decode_log(BufReader::new(file))
}
