//! Task names, their parameters and forwarding hints.
//!
//! Offload form: `/<service>/<keyword>/<hash>`; result-fetch form:
//! `/<en-prefix...>/<service>/<keyword>/<hash>`. The keyword is `task` for
//! reuse-enabled tasks and `task-noreuse` for tasks that opt out of reuse-aware
//! forwarding and nearest-neighbour search. Services are single name components,
//! so any components before the service belong to the EN prefix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::{encode_hash, is_upper_hex, ConcatenatedHash, FeatureVector};

pub const TASK_KEYWORD: &str = "task";
pub const NOREUSE_KEYWORD: &str = "task-noreuse";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Keyword {
    Task,
    TaskNoReuse,
}

impl Keyword {
    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Task => TASK_KEYWORD,
            Keyword::TaskNoReuse => NOREUSE_KEYWORD,
        }
    }

    fn parse(component: &str) -> Option<Self> {
        match component {
            TASK_KEYWORD => Some(Keyword::Task),
            NOREUSE_KEYWORD => Some(Keyword::TaskNoReuse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskName {
    pub service: String,
    pub keyword: Keyword,
    pub hash_hex: String,
    /// Present only on result-fetch names.
    pub en_prefix: Option<String>,
}

impl TaskName {
    pub fn is_reuse(&self) -> bool {
        self.keyword == Keyword::Task
    }

    pub fn is_result_fetch(&self) -> bool {
        self.en_prefix.is_some()
    }

    /// The same task addressed to a specific EN.
    pub fn with_en_prefix(&self, en_prefix: &str) -> Self {
        Self {
            en_prefix: Some(normalize_prefix(en_prefix)),
            ..self.clone()
        }
    }

    /// The offload form, with any EN prefix removed.
    pub fn without_en_prefix(&self) -> Self {
        Self {
            en_prefix: None,
            ..self.clone()
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.en_prefix {
            f.write_str(p)?;
        }
        write!(f, "/{}/{}/{}", self.service, self.keyword.as_str(), self.hash_hex)
    }
}

pub fn build_task_name(service: &str, hash: &ConcatenatedHash, reuse_enabled: bool) -> Result<TaskName> {
    let hash_hex = encode_hash(hash);
    if reuse_enabled {
        task_name_from_hex(service, Keyword::Task, hash_hex)
    } else {
        task_name_from_hex(service, Keyword::TaskNoReuse, hash_hex)
    }
}

/// Non-reuse name built from a cheap CRC32 of the raw input bytes.
pub fn build_noreuse_name(service: &str, input: &FeatureVector) -> Result<TaskName> {
    let crc = crc32fast::hash(&input.to_bytes());
    task_name_from_hex(service, Keyword::TaskNoReuse, format!("{crc:08X}"))
}

pub fn task_name_from_hex(service: &str, keyword: Keyword, hash_hex: String) -> Result<TaskName> {
    let service = service.trim_matches('/');
    if service.is_empty() || service.contains('/') {
        return Err(Error::MalformedName(format!(
            "service {service:?} must be a single non-empty component"
        )));
    }
    if !is_upper_hex(&hash_hex) {
        return Err(Error::MalformedName(format!("hash {hash_hex:?} is not uppercase hex")));
    }
    Ok(TaskName {
        service: service.to_string(),
        keyword,
        hash_hex,
        en_prefix: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ParsedName {
    Task(TaskName),
    Plain(String),
}

impl ParsedName {
    pub fn as_task(&self) -> Option<&TaskName> {
        match self {
            ParsedName::Task(t) => Some(t),
            ParsedName::Plain(_) => None,
        }
    }
}

pub fn parse_name(s: &str) -> Result<ParsedName> {
    let components = components(s);
    let n = components.len();
    if n < 3 {
        return Ok(ParsedName::Plain(s.to_string()));
    }
    let Some(keyword) = Keyword::parse(components[n - 2]) else {
        return Ok(ParsedName::Plain(s.to_string()));
    };
    let hash_hex = components[n - 1];
    if !is_upper_hex(hash_hex) {
        return Err(Error::MalformedName(format!(
            "{s}: hash component {hash_hex:?} is not uppercase hex"
        )));
    }
    let en_prefix = (n > 3).then(|| join(&components[..n - 3]));
    Ok(ParsedName::Task(TaskName {
        service: components[n - 3].to_string(),
        keyword,
        hash_hex: hash_hex.to_string(),
        en_prefix,
    }))
}

pub fn components(name: &str) -> Vec<&str> {
    name.split('/').filter(|c| !c.is_empty()).collect()
}

pub fn join(components: &[&str]) -> String {
    let mut out = String::new();
    for c in components {
        out.push('/');
        out.push_str(c);
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Canonical `/a/b` form: leading slash, no trailing or doubled slashes.
pub fn normalize_prefix(prefix: &str) -> String {
    join(&components(prefix))
}

/// True when `prefix` is a component-wise prefix of `name`.
pub fn is_prefix_of(prefix: &str, name: &str) -> bool {
    let p = components(prefix);
    let n = components(name);
    p.len() <= n.len() && p.iter().zip(&n).all(|(a, b)| a == b)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForwardingHint {
    pub en_prefix: String,
}

impl ForwardingHint {
    pub fn new(en_prefix: &str) -> Result<Self> {
        let en_prefix = normalize_prefix(en_prefix);
        if en_prefix == "/" {
            return Err(Error::MalformedName("empty forwarding hint".into()));
        }
        Ok(Self { en_prefix })
    }
}

/// Application parameters attached to an offloaded task; opaque to forwarding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParameters {
    pub deadline_us: Option<u64>,
    pub similarity_threshold: f64,
    pub inline_input: Option<FeatureVector>,
    pub input_size_bytes: Option<u64>,
    pub device_prefix: Option<String>,
    /// Results are pushed to `device_prefix` in an Interest instead of being fetched.
    #[serde(default)]
    pub push_result: bool,
}

impl TaskParameters {
    pub fn inline(input: FeatureVector, similarity_threshold: f64) -> Self {
        Self {
            deadline_us: None,
            similarity_threshold,
            inline_input: Some(input),
            input_size_bytes: None,
            device_prefix: None,
            push_result: false,
        }
    }

    pub fn pushed(input: FeatureVector, device_prefix: &str, similarity_threshold: f64) -> Self {
        Self {
            device_prefix: Some(normalize_prefix(device_prefix)),
            push_result: true,
            ..Self::inline(input, similarity_threshold)
        }
    }

    pub fn pulled(input_size_bytes: u64, device_prefix: &str, similarity_threshold: f64) -> Self {
        Self {
            deadline_us: None,
            similarity_threshold,
            inline_input: None,
            input_size_bytes: Some(input_size_bytes),
            device_prefix: Some(normalize_prefix(device_prefix)),
            push_result: false,
        }
    }

    /// Exactly one of: inline input, or (declared size and device prefix).
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Config(format!(
                "similarity threshold {} outside [0, 1]",
                self.similarity_threshold
            )));
        }
        if self.push_result && (self.device_prefix.is_none() || self.inline_input.is_none()) {
            return Err(Error::Config(
                "pushed results need an inline input and a device prefix".into(),
            ));
        }
        let pulled = self.input_size_bytes.is_some() && self.device_prefix.is_some();
        match (self.inline_input.is_some(), pulled) {
            (true, false) | (false, true) => Ok(()),
            (true, true) => Err(Error::Config(
                "task carries both an inline input and a pull descriptor".into(),
            )),
            (false, false) => Err(Error::Config(
                "task carries neither an inline input nor a complete pull descriptor".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let h = ConcatenatedHash::new(1, vec![110, 129, 15]);
        let n = build_task_name("OpenPose", &h, true).unwrap();
        assert_eq!(n.to_string(), "/OpenPose/task/6E810F");
        assert_eq!(
            n.with_en_prefix("/Paris/Louvre/EN1").to_string(),
            "/Paris/Louvre/EN1/OpenPose/task/6E810F"
        );
        let nr = build_task_name("svc", &h, false).unwrap();
        assert_eq!(nr.to_string(), "/svc/task-noreuse/6E810F");
    }

    #[test]
    fn noreuse_name_uses_crc32() {
        let v = FeatureVector::new(vec![1.0, 2.0], 3).unwrap();
        let n = build_noreuse_name("svc", &v).unwrap();
        assert_eq!(n.keyword, Keyword::TaskNoReuse);
        assert_eq!(n.hash_hex, format!("{:08X}", crc32fast::hash(&v.to_bytes())));
        assert_eq!(n.hash_hex.len(), 8);
    }

    #[test]
    fn parse_examples() {
        let t = parse_name("/OpenPose/task/6E810F").unwrap();
        let t = t.as_task().unwrap();
        assert_eq!(t.service, "OpenPose");
        assert!(t.is_reuse() && !t.is_result_fetch());

        assert_eq!(
            parse_name("/weather/today").unwrap(),
            ParsedName::Plain("/weather/today".into())
        );
        assert!(matches!(parse_name("/svc/task/XYZ"), Err(Error::MalformedName(_))));

        let f = parse_name("/Paris/Louvre/EN1/OpenPose/task/6E810F").unwrap();
        let f = f.as_task().unwrap();
        assert_eq!(f.en_prefix.as_deref(), Some("/Paris/Louvre/EN1"));
        assert_eq!(f.without_en_prefix().to_string(), "/OpenPose/task/6E810F");

        let nr = parse_name("/svc/task-noreuse/00AB12CD").unwrap();
        assert_eq!(nr.as_task().unwrap().keyword, Keyword::TaskNoReuse);

        // input-pull names are plain Interests
        assert!(matches!(
            parse_name("/user/u1/svc/input/6E810F/3").unwrap(),
            ParsedName::Plain(_)
        ));
    }

    #[test]
    fn equal_hashes_give_identical_names() {
        let a = build_task_name("svc", &ConcatenatedHash::new(2, vec![7, 9000]), true).unwrap();
        let b = build_task_name("svc", &ConcatenatedHash::new(2, vec![7, 9000]), true).unwrap();
        assert_eq!(a.to_string().as_bytes(), b.to_string().as_bytes());
    }

    #[test]
    fn prefix_helpers() {
        assert!(is_prefix_of("/edge/en1", "/edge/en1/svc/task/00"));
        assert!(!is_prefix_of("/edge/en1", "/edge/en10/svc/task/00"));
        assert!(is_prefix_of("/", "/anything"));
        assert_eq!(normalize_prefix("edge//en1/"), "/edge/en1");
        assert!(ForwardingHint::new("/").is_err());
    }

    #[test]
    fn parameters_exactly_one_input_route() {
        let v = FeatureVector::new(vec![1.0], 0).unwrap();
        assert!(TaskParameters::inline(v.clone(), 0.9).validate().is_ok());
        assert!(TaskParameters::pulled(10, "/user/u1", 0.9).validate().is_ok());
        let mut both = TaskParameters::pulled(10, "/user/u1", 0.9);
        both.inline_input = Some(v);
        assert!(both.validate().is_err());
        let mut neither = TaskParameters::pulled(10, "/user/u1", 0.9);
        neither.device_prefix = None;
        assert!(neither.validate().is_err());
        assert!(TaskParameters::pulled(10, "/u", 1.5).validate().is_err());
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            service in "[A-Za-z][A-Za-z0-9_-]{0,12}",
            reuse in any::<bool>(),
            hash in "[0-9A-F]{2,16}",
            prefix in prop::option::of(prop::collection::vec("[a-z][a-z0-9]{0,6}", 1..4)),
        ) {
            prop_assume!(service != TASK_KEYWORD && service != NOREUSE_KEYWORD);
            let keyword = if reuse { Keyword::Task } else { Keyword::TaskNoReuse };
            let mut name = task_name_from_hex(&service, keyword, hash).unwrap();
            if let Some(p) = prefix {
                name = name.with_en_prefix(&join(&p.iter().map(String::as_str).collect::<Vec<_>>()));
            }
            let parsed = parse_name(&name.to_string()).unwrap();
            prop_assert_eq!(parsed, ParsedName::Task(name));
        }
    }
}
