use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;

use super::ChatExchange;

/// One line of the JSON-lines audit log.
#[derive(Debug, Serialize)]
pub struct AuditRecord<'a> {
    pub document_id: &'a str,
    pub level: usize,
    pub system_text: &'a str,
    pub user_text: &'a str,
    pub response_text: &'a str,
    pub latency_ms: f64,
    pub provider_meta: &'a serde_json::Value,
}

impl<'a> AuditRecord<'a> {
    pub fn new(document_id: &'a str, level: usize, exchange: &'a ChatExchange) -> Self {
        Self {
            document_id,
            level,
            system_text: &exchange.system_text,
            user_text: &exchange.user_text,
            response_text: &exchange.response_text,
            latency_ms: exchange.latency.as_secs_f64() * 1e3,
            provider_meta: &exchange.provider_meta,
        }
    }
}

/// Append-only JSON-lines log shared by concurrent workers.
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn append(&self, record: &AuditRecord<'_>) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}")?;
        out.flush()
    }
}
