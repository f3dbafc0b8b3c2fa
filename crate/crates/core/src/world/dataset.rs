use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BevSpec;
use crate::harness::io::write_atomic;

use super::{rasterize, Scenario};

pub const SCHEMA: &str = "dbp-scn-1";

#[derive(serde::Serialize)]
struct Record<'a> {
    schema: &'static str,
    #[serde(flatten)]
    scenario: &'a Scenario,
}

/// One JSON object per line; rasters are not stored.
pub fn save_dataset(scenarios: &[Scenario], path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in scenarios {
        let line = serde_json::to_string(&Record { schema: SCHEMA, scenario: s })
            .map_err(|e| Error::invalid("save_dataset", e.to_string()))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Read a dataset and re-render each observation on `spec`.
pub fn load_dataset(path: &Path, spec: &BevSpec) -> Result<Vec<Scenario>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, msg: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| fail(n, format!("malformed JSON: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| fail(n, "expected a JSON object".into()))?;
        match obj.remove("schema") {
            Some(serde_json::Value::String(s)) if s == SCHEMA => {}
            Some(other) => return Err(fail(n, format!("schema {other} is not {SCHEMA:?}"))),
            None => return Err(fail(n, "missing \"schema\" field".into())),
        }
        let mut s: Scenario =
            serde_json::from_value(value).map_err(|e| fail(n, format!("bad scenario: {e}")))?;
        s.obs = rasterize(&s, spec)?;
        out.push(s);
    }
    Ok(out)
}
