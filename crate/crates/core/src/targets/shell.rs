use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EvaluationRecord, Source, Target};
use crate::error::{Error, Result};
use crate::paramspace::Configuration;

const STDERR_EXCERPT: usize = 400;

/// How a real system is reconfigured and measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecTemplate {
    /// Where the `key = value` configuration file is written.
    pub render_path: PathBuf,
    pub apply_cmd: String,
    pub bench_cmd: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_regex: Option<String>,
    /// Dotted path into JSON benchmark output, e.g. `results.bandwidth` or `runs.0.mbps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_path: Option<String>,
    pub timeout_s: f64,
}

#[derive(Clone, Debug)]
pub enum MetricRule {
    Regex(Regex),
    Path(Vec<String>),
}

impl MetricRule {
    pub fn extract(&self, stdout: &str) -> Option<f64> {
        match self {
            MetricRule::Regex(re) => re
                .captures(stdout)
                .and_then(|c| c.get(1))
                .and_then(|m| m.as_str().trim().parse().ok()),
            MetricRule::Path(path) => {
                let mut node: serde_json::Value = serde_json::from_str(stdout.trim()).ok()?;
                for key in path {
                    node = match node {
                        serde_json::Value::Object(mut map) => map.remove(key)?,
                        serde_json::Value::Array(mut items) => {
                            let i: usize = key.parse().ok()?;
                            (i < items.len()).then(|| items.swap_remove(i))?
                        }
                        _ => return None,
                    };
                }
                match node {
                    serde_json::Value::Number(n) => n.as_f64(),
                    serde_json::Value::String(s) => s.trim().parse().ok(),
                    _ => None,
                }
            }
        }
    }
}

impl ExecTemplate {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: ExecTemplate = serde_json::from_str(&text)?;
        t.metric_rule()?;
        Ok(t)
    }

    /// Validates the extraction rule; fails before anything is executed.
    pub fn metric_rule(&self) -> Result<MetricRule> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::Template(format!("timeout_s must be positive, got {}", self.timeout_s)));
        }
        match (&self.metric_regex, &self.metric_path) {
            (Some(re), None) => {
                let re = Regex::new(re).map_err(|e| Error::Template(format!("bad metric_regex: {e}")))?;
                if re.captures_len() != 2 {
                    return Err(Error::Template(format!(
                        "metric_regex must have exactly one capture group, found {}",
                        re.captures_len() - 1
                    )));
                }
                Ok(MetricRule::Regex(re))
            }
            (None, Some(p)) if !p.is_empty() => {
                Ok(MetricRule::Path(p.split('.').map(str::to_string).collect()))
            }
            _ => Err(Error::Template(
                "exactly one of metric_regex or metric_path is required".into(),
            )),
        }
    }
}

struct RunOutput {
    status: ExitStatus,
    stdout: String,
    stderr: String,
}

enum RunError {
    Spawn(std::io::Error),
    Timeout,
}

fn run_with_timeout(cmd: &str, timeout: Duration) -> std::result::Result<RunOutput, RunError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(RunError::Spawn)?;
    let pid = child.id() as i32;
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => break None,
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(RunError::Spawn(e)),
        }
    };
    let Some(status) = status else {
        // kill the whole group so grandchildren release the pipes
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
        let _ = child.wait();
        let _ = out_reader.join();
        let _ = err_reader.join();
        return Err(RunError::Timeout);
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(RunOutput {
        status,
        stdout,
        stderr,
    })
}

fn excerpt(stderr: &str) -> String {
    let s = stderr.trim();
    if s.len() <= STDERR_EXCERPT {
        return s.to_string();
    }
    let mut start = s.len() - STDERR_EXCERPT;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &s[start..])
}

/// Renders the configuration, applies it, benchmarks, and extracts the metric.
///
/// Errors only for an invalid template; every runtime problem becomes a
/// failure record.
pub fn shell_eval(
    template: &ExecTemplate,
    config: &Configuration,
    workload_id: &str,
) -> Result<EvaluationRecord> {
    let rule = template.metric_rule()?;
    let started = Instant::now();
    let metric = run_steps(template, &rule, config);
    Ok(EvaluationRecord::new(
        config.clone(),
        workload_id,
        metric,
        started.elapsed().as_secs_f64(),
        Source::Shell,
    ))
}

fn run_steps(
    template: &ExecTemplate,
    rule: &MetricRule,
    config: &Configuration,
) -> std::result::Result<f64, String> {
    let timeout = Duration::from_secs_f64(template.timeout_s);
    if let Some(dir) = template.render_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("render failed: {e}"))?;
    }
    std::fs::write(&template.render_path, config.render_ini())
        .map_err(|e| format!("render failed: {}: {e}", template.render_path.display()))?;

    match run_with_timeout(&template.apply_cmd, timeout) {
        Err(RunError::Spawn(e)) => return Err(format!("apply failed: {e}")),
        Err(RunError::Timeout) => {
            return Err(format!("timeout: apply exceeded {}s", template.timeout_s))
        }
        Ok(out) if !out.status.success() => {
            return Err(format!("apply failed: {}; stderr: {}", out.status, excerpt(&out.stderr)))
        }
        Ok(_) => {}
    }
    let out = match run_with_timeout(&template.bench_cmd, timeout) {
        Err(RunError::Spawn(e)) => return Err(format!("benchmark failed: {e}")),
        Err(RunError::Timeout) => {
            return Err(format!("timeout: benchmark exceeded {}s", template.timeout_s))
        }
        Ok(out) if !out.status.success() => {
            return Err(format!(
                "benchmark failed: {}; stderr: {}",
                out.status,
                excerpt(&out.stderr)
            ))
        }
        Ok(out) => out,
    };
    rule.extract(&out.stdout)
        .ok_or_else(|| format!("metric not found in benchmark output; stderr: {}", excerpt(&out.stderr)))
}

/// [`Target`] adapter over [`shell_eval`].
pub struct ShellTarget {
    template: ExecTemplate,
    workload_id: String,
}

impl ShellTarget {
    pub fn new(template: ExecTemplate, workload_id: impl Into<String>) -> Result<Self> {
        template.metric_rule()?;
        Ok(Self {
            template,
            workload_id: workload_id.into(),
        })
    }
}

impl Target for ShellTarget {
    fn evaluate(&mut self, config: &Configuration, _iteration: u64) -> EvaluationRecord {
        shell_eval(&self.template, config, &self.workload_id).expect("template validated in ShellTarget::new")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(dir: &std::path::Path, apply: &str, bench: &str, timeout_s: f64) -> ExecTemplate {
        ExecTemplate {
            render_path: dir.join("ceph.conf"),
            apply_cmd: apply.into(),
            bench_cmd: bench.into(),
            metric_regex: Some(r"Bandwidth \(MB/sec\):\s+([0-9.]+)".into()),
            metric_path: None,
            timeout_s,
        }
    }

    #[test]
    fn regex_extracts_bandwidth() {
        let dir = tempfile::tempdir().unwrap();
        let t = template(
            dir.path(),
            "true",
            "printf 'Total time run: 120.0\\nBandwidth (MB/sec): 6123.4\\nAverage IOPS: 383\\n'",
            10.0,
        );
        let rec = shell_eval(&t, &Configuration::default(), "seq").unwrap();
        assert_eq!(rec.metric(), Some(6123.4));
        assert_eq!(rec.source, Source::Shell);
    }

    #[test]
    fn config_file_is_rendered_before_apply() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("ceph.conf");
        let mut t = template(dir.path(), "", "", 10.0);
        t.apply_cmd = format!("grep -q 'pg_per_osd = 120' {}", conf.display());
        t.bench_cmd = "echo 'Bandwidth (MB/sec): 1.5'".into();
        let cfg: Configuration = [("pg_per_osd".to_string(), crate::paramspace::Value::Int(120))]
            .into_iter()
            .collect();
        assert_eq!(shell_eval(&t, &cfg, "w").unwrap().metric(), Some(1.5));
    }

    #[test]
    fn apply_failure_skips_benchmark() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("bench-ran");
        let t = template(
            dir.path(),
            "echo boom >&2; exit 1",
            &format!("touch {}; echo 'Bandwidth (MB/sec): 1'", marker.display()),
            10.0,
        );
        let rec = shell_eval(&t, &Configuration::default(), "w").unwrap();
        let reason = rec.failure().unwrap();
        assert!(reason.starts_with("apply failed"), "{reason}");
        assert!(reason.contains("boom"));
        assert!(!marker.exists());
    }

    #[test]
    fn sleeping_benchmark_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let t = template(dir.path(), "true", "sleep 30", 0.5);
        let started = Instant::now();
        let rec = shell_eval(&t, &Configuration::default(), "w").unwrap();
        assert!(rec.failure().unwrap().starts_with("timeout"));
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn missing_metric_is_a_failure() {
        let dir = tempfile::tempdir().unwrap();
        let t = template(dir.path(), "true", "echo nothing here", 10.0);
        let rec = shell_eval(&t, &Configuration::default(), "w").unwrap();
        assert!(rec.failure().unwrap().starts_with("metric not found"));
    }

    #[test]
    fn template_without_capture_group_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = template(dir.path(), "true", "true", 1.0);
        t.metric_regex = Some("Bandwidth".into());
        assert!(matches!(shell_eval(&t, &Configuration::default(), "w"), Err(Error::Template(_))));
        t.metric_regex = None;
        assert!(t.metric_rule().is_err());
    }

    #[test]
    fn json_path_extraction() {
        let rule = MetricRule::Path(vec!["runs".into(), "1".into(), "mbps".into()]);
        assert_eq!(rule.extract(r#"{"runs": [{"mbps": 1}, {"mbps": 2.5}]}"#), Some(2.5));
        assert_eq!(rule.extract(r#"{"runs": []}"#), None);
        assert_eq!(rule.extract("not json"), None);
    }
}
