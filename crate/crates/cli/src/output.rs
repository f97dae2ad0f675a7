//! Versioned text artifacts: key=value reports, CSV tables and the run
//! manifest with content digests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// A report value. Floats print in shortest round-trip form, switching to
/// exponent notation outside `[1e-4, 1e15)`.
pub struct Cell(String);

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        let a = v.abs();
        if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
            Cell(v.to_string())
        } else {
            Cell(format!("{v:e}"))
        }
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => {$(
        impl From<$t> for Cell {
            fn from(v: $t) -> Self {
                Cell(v.to_string())
            }
        }
    )*};
}

display_cell!(usize, bool, &str, String, &kdv_delay::Error);

/// An ordered key=value block.
#[derive(Debug, Default)]
pub struct Report {
    kind: &'static str,
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            lines: Vec::new(),
        }
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Into<Cell>) -> &mut Self {
        self.lines.push((key.into(), value.into().0));
        self
    }

    pub fn render(&self, manifest: bool) -> String {
        let mut s = header(self.kind, manifest);
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// `# kdvlab <kind> v1`, naming the manifest when one is written.
pub fn header(kind: &str, manifest: bool) -> String {
    if manifest {
        format!("# kdvlab {kind} v{FORMAT_VERSION} manifest={MANIFEST}\n")
    } else {
        format!("# kdvlab {kind} v{FORMAT_VERSION}\n")
    }
}

/// Comma-separated rows under a versioned header and a column line.
pub fn csv(
    kind: &str,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
    manifest: bool,
) -> String {
    let mut s = header(kind, manifest);
    s.push_str(&columns.join(","));
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|v| Cell::from(v).0).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Collects the files of one command invocation and writes the manifest.
pub struct OutputDir {
    dir: PathBuf,
    outputs: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.outputs
            .push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    /// Writes `manifest.txt` listing the command, inputs and every output.
    pub fn finish(self, command: &str, inputs: &[(String, String)]) -> std::io::Result<()> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut s = header("manifest", false);
        let _ = writeln!(s, "tool=kdvlab");
        let _ = writeln!(s, "tool_version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command={command}");
        let _ = writeln!(s, "timestamp_unix={stamp}");
        for (path, digest) in inputs {
            let _ = writeln!(s, "input.{path}.sha256={digest}");
        }
        for (name, digest) in &self.outputs {
            let _ = writeln!(s, "output.{name}.sha256={digest}");
        }
        std::fs::write(self.dir.join(MANIFEST), s)
    }
}
