//! Output directory bookkeeping: headed text files, a manifest and an
//! append-only run log.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use seqrec::Result;

/// 64-bit FNV-1a over raw bytes, as hex.
pub fn digest(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    fingerprint: String,
    written: Vec<(String, String)>,
}

impl Artifacts {
    pub fn create(
        dir: &Path,
        command: &'static str,
        seed: u64,
        fingerprint: String,
    ) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            command,
            seed,
            fingerprint,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, data)?;
        self.written.push((name.to_string(), digest(data)));
        Ok(path)
    }

    /// Text file whose first line records the seed and fingerprint.
    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let head = format!("# seed={} fingerprint={}\n", self.seed, self.fingerprint);
        self.bytes(name, format!("{head}{body}").as_bytes())
    }

    /// Appends timestamped lines to `run.log`. The only output that differs
    /// between identical runs.
    pub fn log<S: AsRef<str>>(&self, lines: impl IntoIterator<Item = S>) -> Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("run.log"))?;
        for line in lines {
            writeln!(f, "{ts} {} {}", self.command, line.as_ref())?;
        }
        Ok(())
    }

    /// Writes `manifest.txt`: command, seed, fingerprint, the effective
    /// configuration and a digest of every artifact.
    pub fn finish(self, config_kv: &str) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "fingerprint={}", self.fingerprint);
        for line in config_kv.lines() {
            let _ = writeln!(s, "config.{line}");
        }
        for (name, d) in &self.written {
            let _ = writeln!(s, "artifact={name} fnv1a={d}");
        }
        fs::write(self.path("manifest.txt"), s)?;
        Ok(())
    }
}
