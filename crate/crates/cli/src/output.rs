//! Artifact writers and the JSON-lines logger on standard error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Out {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Out {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Out { dir: dir.to_path_buf(), written: vec![] })
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok((path, BufWriter::new(f)))
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let (path, file) = self.create(name)?;
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let (path, mut file) = self.create(name)?;
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        serde_json::to_writer_pretty(&mut file, value).map_err(|e| CliError::Io(e.to_string()))?;
        file.write_all(b"\n").map_err(io)?;
        file.flush().map_err(io)
    }

    pub fn json_lines<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<(), CliError> {
        let (path, mut file) = self.create(name)?;
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        for item in items {
            serde_json::to_writer(&mut file, item).map_err(|e| CliError::Io(e.to_string()))?;
            file.write_all(b"\n").map_err(io)?;
        }
        file.flush().map_err(io)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// One diagnostic event on standard error.
pub fn event(name: &str, fields: Value) {
    let mut line = json!({"event": name});
    if let (Some(obj), Value::Object(extra)) = (line.as_object_mut(), fields) {
        obj.extend(extra);
    }
    eprintln!("{line}");
}

struct JsonLogger;

static LOGGER: JsonLogger = JsonLogger;

impl Log for JsonLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, r: &Record) {
        if self.enabled(r.metadata()) {
            let level = match r.level() {
                Level::Error => "error",
                Level::Warn => "warn",
                Level::Info => "info",
                Level::Debug => "debug",
                Level::Trace => "trace",
            };
            eprintln!("{}", json!({"event": "log", "level": level, "target": r.target(), "message": r.args().to_string()}));
        }
    }

    fn flush(&self) {}
}

pub fn init_logger(verbosity: u8) {
    let level = match verbosity {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level);
    }
}
