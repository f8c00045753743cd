use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding id; real products are numbered from 1.
pub const PAD: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Purchase,
    Cart,
}

impl fmt::Display for SessionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionKind::Purchase => "purchase",
            SessionKind::Cart => "cart",
        })
    }
}

impl FromStr for SessionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "purchase" => Ok(SessionKind::Purchase),
            "cart" => Ok(SessionKind::Cart),
            other => Err(Error::input(
                None,
                format!("unknown session kind {other:?}"),
            )),
        }
    }
}

/// One user session: an ordered list of product ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub session_id: String,
    pub kind: SessionKind,
    /// Ordinal timestamp, larger is later.
    pub t: i64,
    pub items: Vec<u32>,
}

impl Session {
    pub fn new(session_id: impl Into<String>, kind: SessionKind, t: i64, items: Vec<u32>) -> Self {
        Session {
            session_id: session_id.into(),
            kind,
            t,
            items,
        }
    }

    /// Items fed to the encoder: everything but the final product.
    pub fn prefix(&self) -> &[u32] {
        &self.items[..self.items.len().saturating_sub(1)]
    }

    /// The final product, which is the prediction target.
    pub fn target(&self) -> u32 {
        *self.items.last().expect("sessions are nonempty")
    }

    fn validate(&self, line: Option<usize>) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::input(
                line,
                format!("session {:?} has no items", self.session_id),
            ));
        }
        if self.items.contains(&PAD) {
            return Err(Error::input(
                line,
                format!(
                    "session {:?} uses id 0, which is reserved for padding",
                    self.session_id
                ),
            ));
        }
        Ok(())
    }
}

/// Reads sessions in the line format, one JSON object per line.
///
/// Blank lines are skipped. The same `session_id` may appear once per kind;
/// a repeat of the same `(session_id, kind)` pair is rejected.
pub fn read_sessions(reader: impl Read) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Session = serde_json::from_str(&line)
            .map_err(|e| Error::input(Some(lineno), format!("malformed session: {e}")))?;
        s.validate(Some(lineno))?;
        if !seen.insert((s.session_id.clone(), s.kind)) {
            return Err(Error::input(
                Some(lineno),
                format!("duplicate {} session id {:?}", s.kind, s.session_id),
            ));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn parse_sessions(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    read_sessions(std::fs::File::open(path)?)
}

pub fn write_sessions(mut w: impl Write, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        let line = serde_json::to_string(s).map_err(|e| Error::input(None, e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
