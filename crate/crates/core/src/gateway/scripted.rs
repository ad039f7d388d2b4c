use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fingerprint, Backend, BackendError, ChatRequest, Completion, Message, Usage};

pub const SCRIPT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FALLBACK: &str = "I'm sorry, but I cannot help with that request.";

/// Fingerprint to canned response table, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub format_version: u32,
    pub fallback: String,
    pub responses: BTreeMap<String, String>,
}

impl Default for Script {
    fn default() -> Self {
        Script {
            format_version: SCRIPT_FORMAT_VERSION,
            fallback: DEFAULT_FALLBACK.to_string(),
            responses: BTreeMap::new(),
        }
    }
}

impl Script {
    pub fn insert(&mut self, messages: &[Message], response: impl Into<String>) {
        self.responses.insert(fingerprint(messages), response.into());
    }

    pub fn lookup(&self, messages: &[Message]) -> Option<&str> {
        self.responses.get(&fingerprint(messages)).map(String::as_str)
    }

    pub fn load(path: &Path) -> std::io::Result<Script> {
        let text = fs::read_to_string(path)?;
        let script: Script = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if script.format_version != SCRIPT_FORMAT_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported script format_version {}", script.format_version),
            ));
        }
        Ok(script)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)
    }
}

/// Deterministic stand-in for an LLM: identical conversations always get
/// identical answers, unknown ones get the fallback text.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend { script }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let text = self
            .script
            .lookup(request.messages)
            .unwrap_or(&self.script.fallback)
            .to_string();
        let usage = Usage {
            prompt_tokens: request.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
            completion_tokens: approx_tokens(&text),
        };
        Ok(Completion { text, usage })
    }

    fn describe(&self) -> String {
        format!("scripted({} responses)", self.script.responses.len())
    }
}
