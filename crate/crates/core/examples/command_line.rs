//! The whole pipeline through the command-line entry point.
//!
//! ```text
//! cargo run --release --example command_line [config.json] [out-dir]
//! ```
//!
//! Equivalent to running the `emccd-cal` binary step by step:
//!
//! ```text
//! emccd-cal simulate --config C --mode dark      --out D
//! emccd-cal simulate --config C --mode gain      --out D
//! emccd-cal simulate --config C --mode analog    --out D
//! emccd-cal simulate --config C --mode counting  --out D
//! emccd-cal fit --dark D/dark.emf --illuminated D/gain.emf --out D
//! emccd-cal calibrate --config C --out D
//! emccd-cal sweep --config C --out D
//! emccd-cal compare --curve D/curve.csv
//! ```

use std::path::PathBuf;

use emccd_cal::cli::run;

fn main() {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.json").to_string()
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("emccd-cal-command-line"));
    let out = out.to_string_lossy().into_owned();
    let dark = format!("{out}/dark.emf");
    let gain = format!("{out}/gain.emf");
    let curve = format!("{out}/curve.csv");

    let mut steps: Vec<Vec<&str>> = ["dark", "gain", "analog", "counting"]
        .iter()
        .map(|m| vec!["simulate", "--config", &config, "--mode", m, "--out", &out])
        .collect();
    steps.push(vec![
        "fit",
        "--dark",
        &dark,
        "--illuminated",
        &gain,
        "--out",
        &out,
    ]);
    steps.push(vec!["calibrate", "--config", &config, "--out", &out]);
    steps.push(vec!["sweep", "--config", &config, "--out", &out]);
    steps.push(vec!["compare", "--curve", &curve]);

    for step in steps {
        println!("$ emccd-cal {}", step.join(" "));
        let code = run(std::iter::once("emccd-cal").chain(step));
        if code != 0 {
            eprintln!("exit status {code}");
            std::process::exit(code);
        }
    }
}
