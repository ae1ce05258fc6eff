//! Interpreter for symbolic tool code.
//!
//! Tool code is a `key=value` list such as `skill=add_const;impl=3`. Costs
//! and injected failures are pure functions of the code and inputs, so the
//! same call always produces the same outcome.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::task::Skill;
use crate::memory::ToolSpec;
use crate::retrieval::fnv1a;
use crate::trajectory::{ExecutionOutcome, MCP_REQUIRED_KEYS};

/// Name of the sandboxed code-execution base tool.
pub const PYTHON_TOOL: &str = "execute_python_code";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Per-call cost cap; calls costing more time out.
    pub tool_timeout_ms: u64,
    /// Fraction of freshly created tools whose code fails on first run.
    pub creation_failure_rate: f64,
    /// Cost of a memory tool call.
    pub tool_cost_ms: u64,
    /// Upper end of the sandbox cost range; the lower end is 100 ms.
    pub python_max_cost_ms: u64,
    /// When positive, calls sleep for `cost * scale` of real time.
    pub real_time_scale: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            tool_timeout_ms: 10_000,
            creation_failure_rate: 0.25,
            tool_cost_ms: 50,
            python_max_cost_ms: 16_000,
            real_time_scale: 0.0,
        }
    }
}

/// Names a created tool for `skill` may carry.
pub fn tool_names(skill: Skill) -> [String; 3] {
    let base = skill.name();
    [base.to_owned(), format!("{base}_tool"), format!("{base}_fn")]
}

/// The skill a piece of tool code implements.
pub fn interpret(code: &str) -> Option<Skill> {
    code.split(';').find_map(|kv| kv.strip_prefix("skill=")).and_then(Skill::from_name)
}

/// Creation arguments for a tool implementing `skill`; `variant` selects
/// the name, description and implementation nonce.
pub fn creation_arguments(skill: Skill, variant: u64, x: i64, k: i64, complete: bool) -> BTreeMap<String, Value> {
    let names = tool_names(skill);
    let descs = skill.descriptions();
    let mut args = BTreeMap::new();
    args.insert("name".into(), json!(names[(variant % 3) as usize]));
    args.insert("description".into(), json!(descs[((variant / 3) % 2) as usize]));
    args.insert("arguments".into(), json!("x (int): value; k (int): parameter"));
    args.insert("code".into(), json!(format!("skill={};impl={}", skill.name(), variant)));
    if complete {
        args.insert("returns".into(), json!("int"));
        args.insert("inputs".into(), json!({ "x": x, "k": k }));
    }
    args
}

fn unit_hash(parts: &[&str]) -> f64 {
    let h = fnv1a(parts.join("\u{1f}").as_bytes());
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimToolRuntime {
    pub cfg: RuntimeConfig,
}

impl SimToolRuntime {
    pub fn new(cfg: RuntimeConfig) -> Self {
        Self { cfg }
    }

    fn finish(&self, cost_ms: u64, run: impl FnOnce() -> Result<String, String>) -> ExecutionOutcome {
        if self.cfg.real_time_scale > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(
                cost_ms.min(self.cfg.tool_timeout_ms) as f64 * self.cfg.real_time_scale / 1000.0,
            ));
        }
        if cost_ms > self.cfg.tool_timeout_ms {
            return ExecutionOutcome::timeout(self.cfg.tool_timeout_ms);
        }
        match run() {
            Ok(out) => ExecutionOutcome::ok(out, cost_ms),
            Err(e) => ExecutionOutcome::failed(e, cost_ms),
        }
    }

    fn run_code(code: &str, x: i64, k: i64) -> Result<String, String> {
        interpret(code).map(|s| s.apply(x, k).to_string()).ok_or_else(|| format!("unknown operation in {code:?}"))
    }

    /// Calls a registered tool on `(x, k)`.
    pub fn call(&self, spec: &ToolSpec, x: i64, k: i64) -> ExecutionOutcome {
        self.finish(self.cfg.tool_cost_ms, || Self::run_code(&spec.code, x, k))
    }

    /// Creates a tool from creation arguments and runs it on its declared
    /// inputs. Incomplete specs are rejected; complete ones fail at the
    /// configured rate.
    pub fn create_and_execute(&self, args: &BTreeMap<String, Value>) -> ExecutionOutcome {
        let missing: Vec<&str> = MCP_REQUIRED_KEYS.iter().copied().filter(|k| !args.contains_key(*k)).collect();
        if !missing.is_empty() {
            return ExecutionOutcome::failed(format!("missing registration keys: {}", missing.join(", ")), 1);
        }
        let code = args["code"].as_str().unwrap_or_default();
        let int = |key: &str| args["inputs"].get(key).and_then(Value::as_i64).unwrap_or_default();
        let (x, k) = (int("x"), int("k"));
        let inputs = format!("{x},{k}");
        self.finish(self.cfg.tool_cost_ms, || {
            if unit_hash(&[code, &inputs, "create"]) < self.cfg.creation_failure_rate {
                return Err("tool raised an exception during its first run".into());
            }
            Self::run_code(code, x, k)
        })
    }

    /// Runs a one-off sandbox computation of `skill` on `(x, k)`.
    pub fn python(&self, skill: Skill, x: i64, k: i64) -> ExecutionOutcome {
        let code = python_code(skill, x, k);
        let span = self.cfg.python_max_cost_ms.saturating_sub(100) as f64;
        let cost = 100 + (unit_hash(&[&code, "cost"]) * span) as u64;
        self.finish(cost, || Ok(skill.apply(x, k).to_string()))
    }
}

pub fn python_code(skill: Skill, x: i64, k: i64) -> String {
    format!("print({}({x}, {k}))", skill.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(code: &str) -> ToolSpec {
        ToolSpec {
            name: "t".into(),
            description: String::new(),
            arguments_doc: String::new(),
            returns_doc: String::new(),
            code: code.into(),
        }
    }

    #[test]
    fn calls_interpret_code() {
        let rt = SimToolRuntime::default();
        let out = rt.call(&spec("skill=add_const;impl=1"), 40, 2);
        assert!(out.is_valid_output());
        assert_eq!(out.output, "42");
        assert!(!rt.call(&spec("rm -rf"), 1, 1).success);
    }

    #[test]
    fn deterministic_outcomes() {
        let rt = SimToolRuntime::default();
        for v in 0..50 {
            let args = creation_arguments(Skill::Square, v, 7, 0, true);
            assert_eq!(rt.create_and_execute(&args), rt.create_and_execute(&args));
            assert_eq!(rt.python(Skill::MulConst, v as i64, 3), rt.python(Skill::MulConst, v as i64, 3));
        }
    }

    #[test]
    fn failure_rates_are_roughly_configured() {
        let rt = SimToolRuntime::default();
        let n = 2000;
        let failed = (0..n)
            .filter(|&v| !rt.create_and_execute(&creation_arguments(Skill::DigitSum, v, 12, 0, true)).success)
            .count();
        let rate = failed as f64 / n as f64;
        assert!((rate - 0.25).abs() < 0.05, "{rate}");
        let timeouts = (0..n as i64).filter(|&x| rt.python(Skill::AddConst, x, 1).timed_out).count();
        let rate = timeouts as f64 / n as f64;
        assert!((rate - 6000.0 / 15900.0).abs() < 0.05, "{rate}");
    }

    #[test]
    fn incomplete_creation_is_rejected() {
        let rt = SimToolRuntime::default();
        let out = rt.create_and_execute(&creation_arguments(Skill::AddConst, 0, 1, 1, false));
        assert!(!out.success);
        assert!(out.error.contains("returns"));
    }

    #[test]
    fn timeout_cap_applies() {
        let rt = SimToolRuntime::new(RuntimeConfig { tool_timeout_ms: 10, ..Default::default() });
        let out = rt.call(&spec("skill=square"), 3, 0);
        assert!(out.timed_out && !out.success);
    }
}
