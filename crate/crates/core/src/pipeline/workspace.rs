use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ehr::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};

/// An output directory; all artifact paths are relative to it.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    pub fn read_bytes(&self, rel: &str) -> Result<Vec<u8>> {
        let p = self.require(rel)?;
        fs::read(&p).map_err(|e| Error::io(p, e))
    }

    pub fn read_text(&self, rel: &str) -> Result<String> {
        let p = self.require(rel)?;
        fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let text = self.read_text(rel)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", self.path(rel).display())))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>> {
        let p = self.require(rel)?;
        let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        read_jsonl(BufReader::new(f)).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", p.display())),
            other => other,
        })
    }

    pub fn write_jsonl<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, items)?;
        self.write_text(rel, std::str::from_utf8(&buf).expect("json is utf-8"))
    }

    /// Relative paths of files in a subdirectory, sorted.
    pub fn list(&self, dir: &str) -> Result<Vec<String>> {
        let p = self.path(dir);
        if !p.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&p).map_err(|e| Error::io(&p, e))? {
            let entry = entry.map_err(|e| Error::io(&p, e))?;
            if entry.path().is_file() {
                out.push(format!("{dir}/{}", entry.file_name().to_string_lossy()));
            }
        }
        out.sort();
        Ok(out)
    }
}
