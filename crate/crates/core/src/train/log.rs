//! Line-delimited JSON training records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LogRecord {
    Epoch {
        phase: String,
        method: String,
        member: usize,
        epoch: usize,
        total: f64,
        data: f64,
        regulariser: f64,
    },
    Observers {
        member: usize,
        epoch: usize,
        sites: Vec<ObserverRange>,
    },
    Warning {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverRange {
    pub site: String,
    pub min: f64,
    pub max: f64,
}

/// Optional sink for [`LogRecord`]s, one JSON object per line.
pub struct TrainLog<'a> {
    sink: Option<&'a mut dyn Write>,
}

impl<'a> TrainLog<'a> {
    pub fn none() -> Self {
        Self { sink: None }
    }

    pub fn to(w: &'a mut dyn Write) -> Self {
        Self { sink: Some(w) }
    }

    pub fn emit(&mut self, rec: &LogRecord) -> Result<()> {
        if let Some(w) = self.sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
