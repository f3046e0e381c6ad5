//! Tuning through shell commands: the configuration is rendered to a file, an
//! apply command checks it, and a benchmark script prints a rados-bench style
//! bandwidth line that a regex extracts.
//!
//! ```text
//! cargo run --example shell_target
//! ```

use knobtune::optimizer::{tune, TuneObjective, TuneOptions};
use knobtune::paramspace::ParameterSpace;
use knobtune::targets::{ExecTemplate, ShellTarget};

const SPACE: &str = r#"{
  "parameters": [
    {"name": "osd_op_threads", "kind": "integer", "default": 2, "range": [1, 32]},
    {"name": "osd_max_write_size", "kind": "integer", "default": 90, "range": [16, 256]}
  ]
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let conf = dir.path().join("osd.conf");
    // peak at 12 threads and 180 MB writes
    let bench = format!(
        "awk -F ' = ' '$1==\"osd_op_threads\"{{t=$2}} $1==\"osd_max_write_size\"{{w=$2}} \
         END{{printf \"Total time run: 60.0\\nBandwidth (MB/sec):   %.2f\\n\", 6000 - 8*(t-12)^2 - 0.05*(w-180)^2}}' {}",
        conf.display()
    );
    let template = ExecTemplate {
        render_path: conf.clone(),
        apply_cmd: format!("grep -q osd_op_threads {}", conf.display()),
        bench_cmd: bench,
        metric_regex: Some(r"Bandwidth \(MB/sec\):\s+([0-9.]+)".into()),
        metric_path: None,
        timeout_s: 10.0,
    };
    println!("{}", serde_json::to_string_pretty(&template)?);

    let (space, _) = ParameterSpace::from_json_str(SPACE)?;
    let names: Vec<String> = space.names().map(String::from).collect();
    let mut target = ShellTarget::new(template, "seq-write")?;
    let report = tune(
        &space,
        &TuneObjective::maximize("bandwidth"),
        &mut target,
        20,
        &names,
        3,
        &TuneOptions::default(),
    )?;
    for (i, r) in report.history.iter().enumerate() {
        println!("{i:>2}: {} -> {:?}", r.config.render_ini().trim().replace('\n', ", "), r.metric());
    }
    println!("best {:?}:\n{}", report.best_metric, report.best_config.unwrap().render_ini());
    Ok(())
}
