use std::path::PathBuf;

use drivesim::format::{load_scenario, parse_scenario, scenario_to_string};
use drivesim::synth::{synth_scenario, SynthSpec, Template};
use serde_json::Value;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden").join(name)
}

/// Structural equality with a relative tolerance on numbers, so that last-bit
/// differences in platform trig do not break the comparison.
fn close(a: &Value, b: &Value, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0) {
                Ok(())
            } else {
                Err(format!("{path}: {x} vs {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).enumerate().try_for_each(|(i, (p, q))| close(p, q, &format!("{path}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x.iter().try_for_each(|(k, v)| {
            close(v, y.get(k).ok_or(format!("{path}.{k} missing"))?, &format!("{path}.{k}"))
        }),
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} vs {b}")),
    }
}

#[test]
fn golden_files_round_trip_byte_for_byte() {
    for (t, n) in Template::ALL.into_iter().zip([4, 3, 2, 5]) {
        let path = golden(&format!("{}-s0-n{n}.scn.jsonl", t.name()));
        let text = std::fs::read_to_string(&path).unwrap();
        let sc = load_scenario(&path).unwrap();
        assert_eq!(scenario_to_string(&sc), text, "{}", path.display());
        assert_eq!(parse_scenario(&text).unwrap(), sc);
    }
}

#[test]
fn generator_still_produces_the_golden_scenarios() {
    for (t, n) in Template::ALL.into_iter().zip([4, 3, 2, 5]) {
        let want = std::fs::read_to_string(golden(&format!("{}-s0-n{n}.scn.jsonl", t.name()))).unwrap();
        let got = scenario_to_string(&synth_scenario(&SynthSpec::new(t.name(), n), 0).unwrap());
        let (want, got): (Vec<&str>, Vec<&str>) = (want.lines().collect(), got.lines().collect());
        assert_eq!(want.len(), got.len(), "{}", t.name());
        for (i, (w, g)) in want.iter().zip(&got).enumerate() {
            let (w, g): (Value, Value) = (serde_json::from_str(w).unwrap(), serde_json::from_str(g).unwrap());
            close(&w, &g, &format!("{} line {}", t.name(), i + 1)).unwrap();
        }
    }
}
