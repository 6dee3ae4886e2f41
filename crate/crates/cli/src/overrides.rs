//! `--set a.b.c=value` overrides applied to the JSON form of a config.

use serde_json::Value;

/// Parse `path=value`. The value is read as JSON when it parses, otherwise
/// taken as a plain string.
pub fn parse_assignment(raw: &str) -> Result<(Vec<String>, Value), String> {
    let (path, value) = raw.split_once('=').ok_or_else(|| format!("expected key=value, got {raw:?}"))?;
    let keys: Vec<String> = path.split('.').map(str::trim).map(str::to_owned).collect();
    if keys.iter().any(String::is_empty) {
        return Err(format!("bad key path {path:?}"));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_owned()));
    Ok((keys, value))
}

/// Set `keys` inside `root`, creating intermediate objects as needed.
pub fn apply(root: &mut Value, keys: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = keys.split_last().ok_or("empty key path")?;
    let mut node = root;
    for k in parents {
        let obj = node.as_object_mut().ok_or_else(|| format!("{k:?} is not inside an object"))?;
        node = obj.entry(k.clone()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    node.as_object_mut()
        .ok_or_else(|| format!("cannot set {last:?} on a non-object"))?
        .insert(last.clone(), value);
    Ok(())
}
