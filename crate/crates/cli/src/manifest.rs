use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

/// Record of one artifact-producing invocation, written next to its output
/// as `<output>.manifest`.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    /// Every flag, defaults included, in declaration order.
    pub flags: Vec<(String, String)>,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.flags.push((name.into(), value.to_string()));
        self
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.push((name.into(), value));
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn to_text(&self) -> io::Result<String> {
        let mut out = format!("command = {}\n", self.command);
        for (name, value) in &self.flags {
            out.push_str(&format!("flag.{name} = {value}\n"));
        }
        for (name, value) in &self.seeds {
            out.push_str(&format!("seed.{name} = {value}\n"));
        }
        for (kind, paths) in [("input", &self.inputs), ("output", &self.outputs)] {
            for (k, path) in paths.iter().enumerate() {
                out.push_str(&format!("{kind}[{k}].path = {}\n", path.display()));
                out.push_str(&format!("{kind}[{k}].sha256 = {}\n", sha256_file(path)?));
            }
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        out.push_str(&format!("timestamp_unix = {now}\n"));
        Ok(out)
    }

    /// Writes `<first output>.manifest` through a temporary file.
    pub fn write(&self) -> io::Result<PathBuf> {
        let primary = self
            .outputs
            .first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "manifest has no output"))?;
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, self.to_text()?)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
