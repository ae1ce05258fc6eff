//! Tag parser for agent output.
//!
//! Recognised blocks: `<plan>`, `<subtask>`, `<retrieve>`, `<think>` /
//! `<thinking>`, `<tool_call>`, `<tool_response>` and `<answer>`. Parsing
//! never fails; malformed blocks become steps with `format_violation` set.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Map, Value};

use super::{parse_plan, ActionKind, ActionRecord, ExecutionOutcome, Phase, Step, MCP_CREATE_TOOL};

/// Tool name recorded for tool calls whose body could not be parsed and
/// whose name could not be recovered.
pub const MALFORMED_TOOL: &str = "malformed_tool_call";

/// Normalizes a subtask label: case-insensitive, `ST_1` and `ST1` alike.
pub fn normalize_label(raw: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)^\s*ST[_\s-]*(\d+)\s*$").expect("valid regex"));
    re.captures(raw).and_then(|c| c[1].parse::<u64>().ok()).map(|n| format!("ST{n}"))
}

fn open_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"<(plan|subtask|retrieve|thinking|think|tool_call|tool_response|answer)>").expect("valid regex")
    })
}

fn close_re(tag: &str) -> Regex {
    let pat = match tag {
        "think" | "thinking" => r"</think(?:ing)?>".to_owned(),
        other => format!("</{other}>"),
    };
    Regex::new(&pat).expect("valid regex")
}

fn subtask_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)^\s*(ST[_\s-]*\d+)\s*:?\s*(.*)$").expect("valid regex"))
}

fn name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"["']name["']\s*:\s*["']([^"']+)["']"#).expect("valid regex"))
}

/// Parses a tool-call body of the form `{"name": ..., "arguments": {...}}`.
/// Single quotes and trailing commas are tolerated.
fn parse_tool_body(body: &str) -> Option<ActionRecord> {
    let value: Value = json5::from_str(body.trim()).ok()?;
    let obj = value.as_object()?;
    let name = obj.get("name")?.as_str()?.trim().to_owned();
    if name.is_empty() {
        return None;
    }
    let arguments: BTreeMap<String, Value> = match obj.get("arguments") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m.clone().into_iter().collect(),
        Some(Value::String(s)) => match json5::from_str::<Value>(s) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => return None,
        },
        Some(_) => return None,
    };
    let mut record = if name == MCP_CREATE_TOOL {
        ActionRecord::mcp_create(arguments)
    } else {
        ActionRecord::tool_call(name, arguments)
    };
    record.raw_text = body.trim().to_owned();
    Some(record)
}

/// Interprets a `<tool_response>` body. JSON bodies follow the creation
/// tool's report shape; plain text is a success unless it reads as an error.
fn parse_tool_response(body: &str) -> ExecutionOutcome {
    let text = body.trim();
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(text) {
        let error = obj.get("error").and_then(Value::as_str).unwrap_or("").to_owned();
        let created = obj.get("creation_success").and_then(Value::as_bool).unwrap_or(true);
        let success = obj.get("success").and_then(Value::as_bool).unwrap_or(created && error.is_empty());
        let output = match obj.get("execution_result").or_else(|| obj.get("output")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(v) => v.to_string(),
        };
        return ExecutionOutcome {
            success,
            output,
            timed_out: obj.get("timed_out").and_then(Value::as_bool).unwrap_or(false),
            elapsed_ms: obj.get("elapsed_ms").and_then(Value::as_u64).unwrap_or(0),
            error,
        };
    }
    let lower = text.to_ascii_lowercase();
    if lower.starts_with("timeout") || lower.contains("timed out") {
        ExecutionOutcome::timeout(0)
    } else if lower.starts_with("error") || lower.starts_with("traceback") {
        ExecutionOutcome::failed(text, 0)
    } else {
        ExecutionOutcome::ok(text, 0)
    }
}

fn append_trailing(steps: &mut [Step], text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if let Some(last) = steps.last_mut() {
        if !last.content.is_empty() {
            last.content.push('\n');
        }
        last.content.push_str(text);
    }
}

/// Segments concatenated agent output into steps.
pub fn parse_trajectory(raw: &str) -> Vec<Step> {
    let mut steps: Vec<Step> = Vec::new();
    let mut label: Option<String> = None;
    let mut pos = 0;

    while let Some(m) = open_re().captures_at(raw, pos) {
        let whole = m.get(0).expect("match");
        let tag = m.get(1).expect("group").as_str();
        append_trailing(&mut steps, &raw[pos..whole.start()]);

        let body_start = whole.end();
        let (body, next, closed) = match close_re(tag).find_at(raw, body_start) {
            Some(c) => {
                // An opening tag before the close means this block was never closed.
                match open_re().find_at(raw, body_start) {
                    Some(o) if o.start() < c.start() => (&raw[body_start..o.start()], o.start(), false),
                    _ => (&raw[body_start..c.start()], c.end(), true),
                }
            }
            None => {
                let end = open_re().find_at(raw, body_start).map_or(raw.len(), |o| o.start());
                (&raw[body_start..end], end, false)
            }
        };
        pos = next;

        let index = steps.len();
        let mut step = match tag {
            "subtask" => {
                if let Some(c) = subtask_re().captures(body) {
                    label = normalize_label(&c[1]);
                }
                continue;
            }
            "tool_response" => {
                let outcome = parse_tool_response(body);
                match steps.iter_mut().rev().find(|s| s.is_tool_step()) {
                    Some(s) if s.action.as_ref().is_some_and(|a| a.execution.is_none()) => {
                        s.action.as_mut().expect("tool step").execution = Some(outcome);
                    }
                    _ => append_trailing(&mut steps, body),
                }
                continue;
            }
            "plan" => {
                let mut s = Step::new(index, Phase::Planning, body.trim());
                s.format_violation = parse_plan(body).is_err();
                s
            }
            "retrieve" => Step::new(index, Phase::Retrieve, body.trim()),
            "think" | "thinking" => Step::new(index, Phase::Think, body.trim()),
            "tool_call" => match parse_tool_body(body) {
                Some(record) => Step::action(index, record),
                None => {
                    let name = name_re().captures(body).map_or(MALFORMED_TOOL.to_owned(), |c| c[1].to_owned());
                    let mut record = if name == MCP_CREATE_TOOL {
                        ActionRecord::mcp_create(BTreeMap::new())
                    } else {
                        ActionRecord::tool_call(name, BTreeMap::new())
                    };
                    record.raw_text = body.trim().to_owned();
                    let mut s = Step::action(index, record);
                    s.format_violation = true;
                    s
                }
            },
            "answer" => Step::action(index, ActionRecord::answer(body.trim())),
            _ => unreachable!("tag set is fixed by the regex"),
        };
        step.subtask_label = label.clone();
        if !closed {
            step.format_violation = true;
        }
        steps.push(step);
    }
    append_trailing(&mut steps, &raw[pos..]);
    steps
}

fn tool_call_json(action: &ActionRecord) -> Value {
    let args: Map<String, Value> = action.arguments.clone().into_iter().collect();
    let name = match action.kind {
        ActionKind::McpCreate => MCP_CREATE_TOOL.to_owned(),
        _ => action.tool_name.clone().unwrap_or_else(|| MALFORMED_TOOL.to_owned()),
    };
    json!({ "name": name, "arguments": Value::Object(args) })
}

/// Renders steps back into tagged text that [`parse_trajectory`] accepts.
pub fn render_steps(steps: &[Step]) -> String {
    let mut out = String::new();
    let mut label: Option<&str> = None;
    for s in steps {
        if let Some(l) = s.subtask_label.as_deref() {
            if label != Some(l) {
                out.push_str(&format!("<subtask> {l}: </subtask>\n"));
                label = Some(l);
            }
        }
        match (&s.phase, &s.action) {
            (Phase::Planning, _) => out.push_str(&format!("<plan>\n{}\n</plan>\n", s.content)),
            (Phase::Retrieve, _) => out.push_str(&format!("<retrieve>{}</retrieve>\n", s.content)),
            (Phase::Think, _) => out.push_str(&format!("<think>{}</think>\n", s.content)),
            (Phase::Action, Some(a)) if a.kind == ActionKind::Answer => {
                out.push_str(&format!("<answer>{}</answer>\n", a.raw_text))
            }
            (Phase::Action, Some(a)) => {
                out.push_str(&format!("<tool_call>\n{}\n</tool_call>\n", tool_call_json(a)));
                if let Some(e) = &a.execution {
                    let report = json!({
                        "success": e.success,
                        "output": e.output,
                        "error": e.error,
                        "elapsed_ms": e.elapsed_ms,
                        "timed_out": e.timed_out,
                    });
                    out.push_str(&format!("<tool_response>{report}</tool_response>\n"));
                }
            }
            (Phase::Action, None) => {}
        }
    }
    out
}
