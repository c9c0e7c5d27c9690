use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::ingest::AccessLogRecord;

pub const DEFAULT_SUB_WINDOW_SECS: i64 = 3600;

/// Analysis window `[start, start + duration)` split into fixed sub-windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: DateTime<Utc>,
    pub duration_secs: i64,
    pub sub_window_secs: i64,
}

impl WindowSpec {
    pub fn new(start: DateTime<Utc>, duration_secs: i64, sub_window_secs: i64) -> Result<Self, FeatureError> {
        let w = WindowSpec {
            start,
            duration_secs,
            sub_window_secs,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.duration_secs <= 0 {
            return Err(FeatureError::InvalidWindow("duration must be positive".into()));
        }
        if self.sub_window_secs <= 0 {
            return Err(FeatureError::InvalidWindow("sub-window must be positive".into()));
        }
        if self.sub_window_secs > self.duration_secs {
            return Err(FeatureError::InvalidWindow(format!(
                "sub-window {}s exceeds window {}s",
                self.sub_window_secs, self.duration_secs
            )));
        }
        Ok(())
    }

    /// Smallest sub-window-aligned window that covers every record.
    pub fn covering(records: &[AccessLogRecord], sub_window_secs: i64) -> Option<Self> {
        let min = records.iter().map(|r| r.unix_seconds()).min()?;
        let max = records.iter().map(|r| r.unix_seconds()).max()?;
        let sub = sub_window_secs.max(1);
        let start = min.div_euclid(sub) * sub;
        let end = (max.div_euclid(sub) + 1) * sub;
        Some(WindowSpec {
            start: DateTime::from_timestamp(start, 0)?,
            duration_secs: end - start,
            sub_window_secs: sub,
        })
    }

    pub fn start_secs(&self) -> i64 {
        self.start.timestamp()
    }

    pub fn end_secs(&self) -> i64 {
        self.start_secs() + self.duration_secs
    }

    pub fn contains_secs(&self, t: i64) -> bool {
        t >= self.start_secs() && t < self.end_secs()
    }

    pub fn contains(&self, r: &AccessLogRecord) -> bool {
        self.contains_secs(r.unix_seconds())
    }

    /// Number of sub-windows; the last one may be partial.
    pub fn sub_window_count(&self) -> usize {
        ((self.duration_secs + self.sub_window_secs - 1) / self.sub_window_secs) as usize
    }

    /// Sub-window index of an in-window instant.
    pub fn sub_window_of(&self, t: i64) -> usize {
        ((t - self.start_secs()) / self.sub_window_secs) as usize
    }

    pub fn sub_window_start(&self, idx: usize) -> i64 {
        self.start_secs() + idx as i64 * self.sub_window_secs
    }
}
