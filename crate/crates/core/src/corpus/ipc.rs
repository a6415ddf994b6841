use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

static IPC_GRAMMAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([A-H])([0-9]{2})(?:([A-Z])([0-9]{1,4}/[0-9]{2,})?)?$").expect("valid regex")
});

/// Hierarchical IPC label: section, class, and optionally subclass and group.
///
/// `"A01D42/04"` is section `A`, class `01`, subclass `D`, group `42/04`.
/// Level-2 labels such as `"B65"` stop after the class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpcCode {
    section: char,
    class_num: [u8; 2],
    subclass: Option<char>,
    group: Option<String>,
}

impl IpcCode {
    pub fn section(&self) -> char {
        self.section
    }

    /// Two-digit class number, e.g. `"01"`.
    pub fn class_num(&self) -> &str {
        std::str::from_utf8(&self.class_num).expect("ascii digits")
    }

    pub fn subclass(&self) -> Option<char> {
        self.subclass
    }

    pub fn group(&self) -> Option<&str> {
        self.group.as_deref()
    }

    /// Section plus class, e.g. `"A01"`.
    pub fn level2(&self) -> String {
        format!("{}{}", self.section, self.class_num())
    }

    /// Code truncated to section and class.
    pub fn truncated_to_class(&self) -> IpcCode {
        IpcCode {
            subclass: None,
            group: None,
            ..self.clone()
        }
    }

    /// Builds a level-2 code from a section letter and a class number that
    /// may lack its leading zero (`"6"` means `"06"`).
    pub fn from_levels(section: &str, class: &str) -> Result<IpcCode> {
        let class = class.trim();
        let padded = match class.len() {
            1 => format!("0{class}"),
            _ => class.to_string(),
        };
        parse_ipc(&format!("{}{}", section.trim(), padded))
    }
}

/// Parses an IPC code against `[A-H][0-9]{2}([A-Z]([0-9]{1,4}/[0-9]{2,})?)?`.
/// Surrounding whitespace is ignored.
pub fn parse_ipc(code: &str) -> Result<IpcCode> {
    let trimmed = code.trim();
    let malformed = |reason| Error::MalformedIpc {
        code: code.to_string(),
        reason,
    };
    let first = trimmed.chars().next().ok_or_else(|| malformed("empty code"))?;
    if !first.is_ascii_uppercase() {
        return Err(malformed("must start with a section letter"));
    }
    if !('A'..='H').contains(&first) {
        return Err(malformed("section outside A-H"));
    }
    let caps = IPC_GRAMMAR
        .captures(trimmed)
        .ok_or_else(|| malformed("does not match section/class/subclass/group grammar"))?;
    let digits = caps[2].as_bytes();
    Ok(IpcCode {
        section: first,
        class_num: [digits[0], digits[1]],
        subclass: caps.get(3).and_then(|m| m.as_str().chars().next()),
        group: caps.get(4).map(|m| m.as_str().to_string()),
    })
}

impl fmt::Display for IpcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.section, self.class_num())?;
        if let Some(s) = self.subclass {
            write!(f, "{s}")?;
        }
        if let Some(g) = &self.group {
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl FromStr for IpcCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_ipc(s)
    }
}

impl Serialize for IpcCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpcCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_ipc(&raw).map_err(serde::de::Error::custom)
    }
}
