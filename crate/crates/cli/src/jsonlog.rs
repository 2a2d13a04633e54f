use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use morpheus::{Error, Result};
use serde_json::{json, Value};

/// JSON-lines sink: every record goes to stdout, and optionally to a file
/// under the output directory.
pub struct JsonLog {
    file: Option<(BufWriter<File>, std::path::PathBuf)>,
}

impl JsonLog {
    pub fn stdout() -> Self {
        Self { file: None }
    }

    pub fn with_file(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file: Some((BufWriter::new(f), path.to_path_buf())),
        })
    }

    /// Header line on stdout only, so files under the output directory stay
    /// reproducible.
    pub fn header(&mut self, command: &str, seed: u64) {
        let time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let rec = json!({
            "event": "start",
            "command": command,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": time,
        });
        println!("{rec}");
    }

    pub fn record(&mut self, rec: Value) -> Result<()> {
        let line = rec.to_string();
        println!("{line}");
        if let Some((w, path)) = &mut self.file {
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some((w, path)) = &mut self.file {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}
