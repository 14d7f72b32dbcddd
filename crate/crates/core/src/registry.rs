//! Building-API metadata keyed by api_id.
//!
//! The file format is a JSON array of `{"api_id", "transaction": [{"method",
//! "endpoint", "body"}]}` objects. A single-call API is a transaction of one.
//! Bodies are raw JSON strings and are forwarded byte-for-byte.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Put,
    Post,
    Delete,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Put => "PUT",
            HttpMethod::Post => "POST",
            HttpMethod::Delete => "DELETE",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HttpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GET" => Ok(HttpMethod::Get),
            "PUT" => Ok(HttpMethod::Put),
            "POST" => Ok(HttpMethod::Post),
            "DELETE" => Ok(HttpMethod::Delete),
            other => Err(format!(
                "unsupported method {other:?} (expected GET, PUT, POST or DELETE)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCall {
    pub method: String,
    pub endpoint: String,
    #[serde(default)]
    pub body: String,
}

impl ApiCall {
    pub fn new(method: HttpMethod, endpoint: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            method: method.as_str().to_owned(),
            endpoint: endpoint.into(),
            body: body.into(),
        }
    }

    pub fn http_method(&self) -> Result<HttpMethod, String> {
        self.method.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMetadata {
    pub api_id: String,
    pub transaction: Vec<ApiCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every rule an entry must satisfy to be executable.
pub fn validate(metadata: &ApiMetadata) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, message: String| out.push(Violation { field, message });
    if metadata.api_id.trim().is_empty() {
        push("api_id".into(), "must be non-empty".into());
    }
    if metadata.transaction.is_empty() {
        push("transaction".into(), "must contain at least one call".into());
    }
    for (i, call) in metadata.transaction.iter().enumerate() {
        if let Err(e) = call.http_method() {
            push(format!("transaction[{i}].method"), e);
        }
        match Url::parse(&call.endpoint) {
            Ok(u) if matches!(u.scheme(), "http" | "https") && u.has_host() => {}
            Ok(u) => push(
                format!("transaction[{i}].endpoint"),
                format!("expected an absolute http(s) URL, got scheme {:?}", u.scheme()),
            ),
            Err(e) => push(format!("transaction[{i}].endpoint"), format!("invalid URL: {e}")),
        }
        if !call.body.is_empty() {
            if let Err(e) = serde_json::from_str::<Value>(&call.body) {
                push(format!("transaction[{i}].body"), format!("not valid JSON: {e}"));
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid metadata for {api_id:?}: {}", join(.violations))]
    Validation {
        api_id: String,
        violations: Vec<Violation>,
    },
    #[error("api_id {0:?} is already registered")]
    DuplicateApiId(String),
    #[error("api_id {0:?} is not registered")]
    NotFound(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in {path}: {}{message}", entry_prefix(*.entry))]
    Schema {
        path: String,
        entry: Option<usize>,
        message: String,
    },
}

fn entry_prefix(entry: Option<usize>) -> String {
    entry.map(|e| format!("entry {e}: ")).unwrap_or_default()
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: IndexMap<String, ApiMetadata>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn register(&mut self, metadata: ApiMetadata) -> Result<(), RegistryError> {
        let violations = validate(&metadata);
        if !violations.is_empty() {
            return Err(RegistryError::Validation {
                api_id: metadata.api_id,
                violations,
            });
        }
        if self.entries.contains_key(&metadata.api_id) {
            return Err(RegistryError::DuplicateApiId(metadata.api_id));
        }
        self.entries.insert(metadata.api_id.clone(), metadata);
        Ok(())
    }

    pub fn get(&self, api_id: &str) -> Result<&ApiMetadata, RegistryError> {
        self.entries
            .get(api_id)
            .ok_or_else(|| RegistryError::NotFound(api_id.to_owned()))
    }

    pub fn remove(&mut self, api_id: &str) -> Result<ApiMetadata, RegistryError> {
        self.entries
            .shift_remove(api_id)
            .ok_or_else(|| RegistryError::NotFound(api_id.to_owned()))
    }

    pub fn contains(&self, api_id: &str) -> bool {
        self.entries.contains_key(api_id)
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &ApiMetadata> {
        self.entries.values()
    }

    /// Replaces scheme, host and port of every endpoint with those of `base`,
    /// keeping paths and queries. Used to point a registry at a different
    /// deployment of the same building backend.
    pub fn rebase(&mut self, base: &Url) -> Result<(), RegistryError> {
        for meta in self.entries.values_mut() {
            for (i, call) in meta.transaction.iter_mut().enumerate() {
                let old = Url::parse(&call.endpoint).map_err(|e| RegistryError::Validation {
                    api_id: meta.api_id.clone(),
                    violations: vec![Violation {
                        field: format!("transaction[{i}].endpoint"),
                        message: e.to_string(),
                    }],
                })?;
                let mut new = base.clone();
                new.set_path(old.path());
                new.set_query(old.query());
                call.endpoint = new.to_string();
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<&ApiMetadata> = self.entries.values().collect();
        let mut s = serde_json::to_string_pretty(&entries).expect("registry serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        parse_registry(text, "<input>")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_registry(&text, &path.display().to_string())
    }
}

fn parse_registry(text: &str, path: &str) -> Result<Registry, RegistryError> {
    let schema = |entry: Option<usize>, message: String| RegistryError::Schema {
        path: path.to_owned(),
        entry,
        message,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| schema(None, e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| schema(None, "expected a JSON array of API entries".into()))?;
    let mut registry = Registry::new();
    for (i, item) in items.iter().enumerate() {
        let meta = entry_from_value(item).map_err(|m| schema(Some(i), m))?;
        match registry.register(meta) {
            Ok(()) => {}
            Err(RegistryError::DuplicateApiId(id)) => {
                return Err(schema(Some(i), format!("duplicate api_id {id:?}")))
            }
            Err(RegistryError::Validation { violations, .. }) => {
                return Err(schema(Some(i), join(&violations)))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(registry)
}

fn str_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, at: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("field `{at}{key}` must be a string")),
        None => Err(format!("missing field `{at}{key}`")),
    }
}

fn entry_from_value(item: &Value) -> Result<ApiMetadata, String> {
    let obj = item.as_object().ok_or("entry must be an object")?;
    let api_id = str_field(obj, "api_id", "")?.to_owned();
    let calls = match obj.get("transaction") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err("field `transaction` must be an array".into()),
        None => return Err("missing field `transaction`".into()),
    };
    let transaction = calls
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let at = format!("transaction[{j}].");
            let c = c
                .as_object()
                .ok_or(format!("`transaction[{j}]` must be an object"))?;
            let body = match c.get("body") {
                None => "",
                Some(_) => str_field(c, "body", &at)?,
            };
            Ok(ApiCall {
                method: str_field(c, "method", &at)?.to_owned(),
                endpoint: str_field(c, "endpoint", &at)?.to_owned(),
                body: body.to_owned(),
            })
        })
        .collect::<Result<_, String>>()?;
    Ok(ApiMetadata { api_id, transaction })
}
