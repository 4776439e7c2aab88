//! Agents answer semantic nodes. Which agent serves a node is decided by
//! glob rules over the node's flow index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::compiler::{CompiledPlan, NodeKind};
use crate::flow::{FlowIndex, NodeAddr};
use crate::reference::{Cell, Reference};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("no agent rule matches node {0}")]
    NoRule(FlowIndex),
    #[error("rule `{pattern}` names unknown agent `{agent}`")]
    UnknownAgent { pattern: String, agent: String },
    #[error("no scripted response for key {0}")]
    MissingScript(String),
    #[error("malformed agent response: {0}")]
    Malformed(String),
    #[error("agent transport failed: {0}")]
    Transport(String),
    #[error("agent config: {0}")]
    Config(String),
}

/// Everything an agent sees for one semantic invocation.
#[derive(Debug, Clone)]
pub struct AgentRequest<'a> {
    pub address: &'a NodeAddr,
    pub concept: &'a str,
    pub instruction: &'a str,
    /// Inputs after sign transmutation, in declared order.
    pub inputs: &'a [(String, Reference)],
    pub prompt: &'a str,
    /// `<instruction digest>:<input digest>`; stable across processes.
    pub key: &'a str,
}

pub trait Agent: Send + Sync {
    /// Raw response text, parsed by [`parse_agent_response`].
    fn invoke(&self, request: &AgentRequest<'_>) -> Result<String, AgentError>;
}

pub const DEFAULT_PROMPT_TEMPLATE: &str = "You produce the value of the concept {{concept}}.\n\nInstruction:\n{{instruction}}\n\nInputs:\n{{inputs}}\nReply with the value only. For a structured value reply with a JSON object {\"reference\": <value in nc-ref/1 form>}.\n";

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn instruction_digest(instruction: &str) -> String {
    sha_hex(instruction.as_bytes())
}

/// Digest over input names and reference digests, in declared order.
pub fn input_digest(inputs: &[(String, Reference)]) -> String {
    let mut h = Sha256::new();
    for (name, r) in inputs {
        h.update(name.as_bytes());
        h.update([0x1f]);
        h.update(r.digest().as_str().as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

pub fn request_key(instruction: &str, inputs: &[(String, Reference)]) -> String {
    format!("{}:{}", instruction_digest(instruction), input_digest(inputs))
}

fn render_input(r: &Reference) -> String {
    match r.as_scalar() {
        Some(Cell::Text(s)) => s.clone(),
        Some(c) => c.render(),
        None => r.to_canonical_json(),
    }
}

/// Input block with fixed delimiters, one section per input.
pub fn render_inputs(inputs: &[(String, Reference)]) -> String {
    let mut out = String::new();
    for (name, r) in inputs {
        out.push_str(&format!("<<<input {name}>>>\n{}\n<<<end {name}>>>\n", render_input(r)));
    }
    out
}

/// Fills `{{concept}}`, `{{instruction}}` and `{{inputs}}` in one pass.
pub fn build_prompt(template: &str, concept: &str, instruction: &str, inputs: &[(String, Reference)]) -> String {
    let rendered = render_inputs(inputs);
    let pairs = [("{{concept}}", concept), ("{{instruction}}", instruction), ("{{inputs}}", rendered.as_str())];
    let mut out = String::with_capacity(template.len() + rendered.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        if rest.starts_with("{{") {
            for (pat, value) in pairs {
                if let Some(after) = rest.strip_prefix(pat) {
                    out.push_str(value);
                    rest = after;
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// A response starting with `{` must be `{"reference": ...}`; anything else
/// is taken as a scalar text value.
pub fn parse_agent_response(raw: &str) -> Result<Reference, AgentError> {
    let trimmed = raw.trim();
    if trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(trimmed).map_err(|e| AgentError::Malformed(e.to_string()))?;
        let r = v
            .get("reference")
            .ok_or_else(|| AgentError::Malformed("JSON response lacks a `reference` field".into()))?;
        return Reference::from_json_value(r).map_err(|e| AgentError::Malformed(e.to_string()));
    }
    Ok(Reference::text(trimmed))
}

/// Answers from a fixture map keyed by request key. An entry keyed
/// `<instruction digest>:*` answers any inputs.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    responses: BTreeMap<String, String>,
}

/// Fixture file: request key to canonical Reference JSON. A string value is
/// taken as a raw agent response.
pub type ScriptFile = BTreeMap<String, Value>;

fn script_response(v: Value) -> String {
    match v {
        Value::String(s) => s,
        Value::Object(ref map) if map.contains_key("schema") => serde_json::json!({ "reference": v }).to_string(),
        other => other.to_string(),
    }
}

impl ScriptedAgent {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        ScriptedAgent { responses }
    }

    pub fn from_file(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        let file: ScriptFile =
            serde_json::from_str(&text).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(file))
    }

    pub fn from_script(file: ScriptFile) -> Self {
        let responses = file.into_iter().map(|(k, v)| (k, script_response(v))).collect();
        ScriptedAgent { responses }
    }

    pub fn insert(&mut self, key: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(key.into(), response.into());
    }
}

impl Agent for ScriptedAgent {
    fn invoke(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        if let Some(r) = self.responses.get(request.key) {
            return Ok(r.clone());
        }
        let wildcard = format!("{}:*", instruction_digest(request.instruction));
        self.responses
            .get(&wildcard)
            .cloned()
            .ok_or_else(|| AgentError::MissingScript(request.key.to_string()))
    }
}

/// Deterministic stand-in that restates the instruction and inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoAgent;

impl Agent for EchoAgent {
    fn invoke(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        let inputs: Vec<String> = request
            .inputs
            .iter()
            .map(|(n, r)| {
                let mut s = render_input(r);
                if s.chars().count() > 40 {
                    s = s.chars().take(40).collect::<String>() + "...";
                }
                format!("{n}={s}")
            })
            .collect();
        Ok(format!("{}: {} [{}]", request.concept, request.instruction, inputs.join("; ")))
    }
}

/// OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpAgent {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Agent for HttpAgent {
    fn invoke(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| AgentError::Malformed("no choices[0].message.content in response".into()))
    }
}

/// Wraps an agent and remembers every answer by request key, producing a
/// script file for [`ScriptedAgent`].
pub struct RecordingAgent {
    inner: Arc<dyn Agent>,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl RecordingAgent {
    pub fn new(inner: Arc<dyn Agent>) -> Self {
        RecordingAgent {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded answers in fixture form.
    pub fn script(&self) -> ScriptFile {
        self.recorded
            .lock()
            .iter()
            .map(|(k, v)| {
                let value = match parse_agent_response(v) {
                    Ok(r) => r.to_json_value(),
                    Err(_) => Value::String(v.clone()),
                };
                (k.clone(), value)
            })
            .collect()
    }
}

impl Agent for RecordingAgent {
    fn invoke(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        let out = self.inner.invoke(request)?;
        self.recorded.lock().insert(request.key.to_string(), out.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    /// Glob over the dotted flow index: `*` any run of characters, `?` one.
    pub pattern: String,
    pub agent: String,
    #[serde(default)]
    pub priority: i32,
}

impl PatternRule {
    pub fn new(pattern: impl Into<String>, agent: impl Into<String>, priority: i32) -> Self {
        PatternRule {
            pattern: pattern.into(),
            agent: agent.into(),
            priority,
        }
    }
}

pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            backtrack = Some((pi, ti));
            pi += 1;
        } else if let Some((bp, bt)) = backtrack {
            pi = bp + 1;
            ti = bt + 1;
            backtrack = Some((bp, bt + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|c| *c == '*')
}

/// Highest priority matching rule; ties go to the rule declared first.
pub fn match_agent<'a>(flow: &FlowIndex, rules: &'a [PatternRule]) -> Option<&'a PatternRule> {
    let text = flow.to_string();
    let mut best: Option<&PatternRule> = None;
    for rule in rules {
        if glob_match(&rule.pattern, &text) && best.is_none_or(|b| rule.priority > b.priority) {
            best = Some(rule);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AgentSpec {
    Scripted { fixture: PathBuf },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Echo,
}

fn default_timeout() -> u64 {
    120
}

/// On-disk agent configuration (`agents.json`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agents: BTreeMap<String, AgentSpec>,
    pub rules: Vec<PatternRule>,
}

impl AgentConfig {
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Default)]
pub struct AgentRegistry {
    agents: BTreeMap<String, Arc<dyn Agent>>,
    rules: Vec<PatternRule>,
}

impl std::fmt::Debug for AgentRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentRegistry")
            .field("agents", &self.agents.keys().collect::<Vec<_>>())
            .field("rules", &self.rules)
            .finish()
    }
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// One agent serving every semantic node.
    pub fn single(name: &str, agent: Arc<dyn Agent>) -> Self {
        let mut r = Self::new();
        r.register(name, agent);
        r.add_rule(PatternRule::new("*", name, 0));
        r
    }

    pub fn register(&mut self, name: &str, agent: Arc<dyn Agent>) {
        self.agents.insert(name.to_string(), agent);
    }

    pub fn add_rule(&mut self, rule: PatternRule) {
        self.rules.push(rule);
    }

    pub fn rules(&self) -> &[PatternRule] {
        &self.rules
    }

    /// Builds agents from a config; relative fixture paths resolve
    /// against `base_dir`.
    pub fn from_config(config: &AgentConfig, base_dir: &Path) -> Result<Self, AgentError> {
        let mut r = Self::new();
        for (name, spec) in &config.agents {
            let agent: Arc<dyn Agent> = match spec {
                AgentSpec::Scripted { fixture } => Arc::new(ScriptedAgent::from_file(&base_dir.join(fixture))?),
                AgentSpec::Http {
                    endpoint,
                    model,
                    api_key_env,
                    timeout_secs,
                } => Arc::new(HttpAgent {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    api_key: api_key_env.as_ref().and_then(|k| std::env::var(k).ok()),
                    timeout: Duration::from_secs(*timeout_secs),
                }),
                AgentSpec::Echo => Arc::new(EchoAgent),
            };
            r.register(name, agent);
        }
        r.rules = config.rules.clone();
        Ok(r)
    }

    pub fn resolve(&self, flow: &FlowIndex) -> Result<(&str, Arc<dyn Agent>), AgentError> {
        let rule = match_agent(flow, &self.rules).ok_or_else(|| AgentError::NoRule(flow.clone()))?;
        let agent = self.agents.get(&rule.agent).ok_or_else(|| AgentError::UnknownAgent {
            pattern: rule.pattern.clone(),
            agent: rule.agent.clone(),
        })?;
        Ok((rule.agent.as_str(), agent.clone()))
    }

    /// Every semantic node must resolve to a registered agent.
    pub fn validate(&self, plan: &CompiledPlan) -> Result<(), AgentError> {
        for node in plan.nodes.values().filter(|n| n.kind == NodeKind::Semantic) {
            self.resolve(&node.flow_index)?;
        }
        Ok(())
    }

    /// Wraps every agent in a recorder; returns the recorders by name.
    pub fn recording(&self) -> (AgentRegistry, BTreeMap<String, Arc<RecordingAgent>>) {
        let mut out = self.clone();
        let mut recorders = BTreeMap::new();
        for (name, agent) in &self.agents {
            let rec = Arc::new(RecordingAgent::new(agent.clone()));
            out.agents.insert(name.clone(), rec.clone());
            recorders.insert(name.clone(), rec);
        }
        (out, recorders)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn globs() {
        assert!(glob_match("*", "1.3.2"));
        assert!(glob_match("1.3.*", "1.3.2"));
        assert!(!glob_match("1.3.*", "1.4.2"));
        assert!(glob_match("1.?.2", "1.7.2"));
        assert!(!glob_match("1.?.2", "1.12.2"));
        assert!(glob_match("1.*.2", "1.12.4.2"));
        assert!(!glob_match("1.3", "1.3.2"));
    }

    #[test]
    fn rule_precedence() {
        let f: FlowIndex = "1.3.2".parse().unwrap();
        let rules = vec![PatternRule::new("1.3.*", "A", 0), PatternRule::new("*", "B", 0)];
        assert_eq!(match_agent(&f, &rules).unwrap().agent, "A");
        let rules = vec![PatternRule::new("*", "B", 0), PatternRule::new("1.3.*", "A", 1)];
        assert_eq!(match_agent(&f, &rules).unwrap().agent, "A");
        let rules = vec![PatternRule::new("2.*", "A", 0)];
        assert!(match_agent(&f, &rules).is_none());
    }

    #[test]
    fn responses() {
        assert_eq!(parse_agent_response("  plain text \n").unwrap(), Reference::text("plain text"));
        let structured = r#"{"reference":{"schema":"nc-ref/1","axes":[{"name":"slide","length":2}],"cells":[{"text":"a"},{"text":"b"}]}}"#;
        assert_eq!(parse_agent_response(structured).unwrap().axis_len("slide"), Some(2));
        assert!(matches!(parse_agent_response("{not json"), Err(AgentError::Malformed(_))));
        assert!(matches!(parse_agent_response(r#"{"value": 1}"#), Err(AgentError::Malformed(_))));
    }

    #[test]
    fn prompt_is_single_pass() {
        let inputs = vec![("doc".to_string(), Reference::text("literal {{concept}}"))];
        let p = build_prompt("{{concept}} / {{instruction}} / {{inputs}}", "c", "do it", &inputs);
        assert_eq!(p, "c / do it / <<<input doc>>>\nliteral {{concept}}\n<<<end doc>>>\n");
    }

    #[test]
    fn request_key_depends_on_names_and_values() {
        let a = vec![("x".to_string(), Reference::text("1"))];
        let b = vec![("y".to_string(), Reference::text("1"))];
        assert_ne!(request_key("i", &a), request_key("i", &b));
        assert_eq!(request_key("i", &a), request_key("i", &a.clone()));
    }
}
