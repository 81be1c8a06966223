//! Structured warning stream: one JSON object per line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

enum Sink {
    Stderr,
    File(BufWriter<File>),
    Buffer(Vec<(String, String)>),
}

pub struct Log {
    sink: Sink,
}

#[derive(Serialize)]
struct Record<'a> {
    level: &'a str,
    source: &'a str,
    message: &'a str,
}

impl Log {
    pub fn stderr() -> Self {
        Self { sink: Sink::Stderr }
    }

    pub fn file(path: &Path) -> io::Result<Self> {
        Ok(Self { sink: Sink::File(BufWriter::new(File::create(path)?)) })
    }

    /// Collects warnings in memory, for work done off the main thread.
    pub fn buffer() -> Self {
        Self { sink: Sink::Buffer(Vec::new()) }
    }

    pub fn take_buffer(&mut self) -> Vec<(String, String)> {
        match &mut self.sink {
            Sink::Buffer(v) => std::mem::take(v),
            _ => Vec::new(),
        }
    }

    pub fn warn(&mut self, source: &str, message: &str) {
        self.record("warning", source, message);
    }

    pub fn record(&mut self, level: &str, source: &str, message: &str) {
        let line = || serde_json::to_string(&Record { level, source, message }).expect("log record serialises");
        // A failing log sink must not abort a computation.
        let _ = match &mut self.sink {
            Sink::Stderr => writeln!(io::stderr(), "{}", line()),
            Sink::File(f) => writeln!(f, "{}", line()).and_then(|_| f.flush()),
            Sink::Buffer(v) => {
                v.push((source.to_string(), message.to_string()));
                Ok(())
            }
        };
    }
}
