//! Policy JSON: `{"version":1,"ops":[{"name":"brightness","a":..,"b":..},...],"p_apply":..}`.

use std::path::Path;

use rangeaug_core::augops::AugOpKind;
use rangeaug_core::policy::RangePolicy;
use serde::{Deserialize, Serialize};

use crate::error::{read, write, Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpEntry {
    name: String,
    a: f64,
    b: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    version: u32,
    ops: Vec<OpEntry>,
    p_apply: f64,
}

pub fn policy_to_json(policy: &RangePolicy) -> String {
    let ops = AugOpKind::ALL
        .iter()
        .map(|&k| {
            let r = policy.range(k);
            OpEntry { name: k.name().into(), a: r.a, b: r.b }
        })
        .collect();
    let doc = PolicyDoc { version: 1, ops, p_apply: policy.p_apply };
    serde_json::to_string_pretty(&doc).expect("policy serializes") + "\n"
}

/// Parses and validates a policy; every op must appear exactly once, in any order.
pub fn policy_from_json(text: &str) -> std::result::Result<RangePolicy, String> {
    let doc: PolicyDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.version != 1 {
        return Err(format!("unsupported policy version {}", doc.version));
    }
    if !(0.0..=1.0).contains(&doc.p_apply) {
        return Err(format!("p_apply {} outside [0, 1]", doc.p_apply));
    }
    let mut pairs: [Option<(f64, f64)>; 3] = [None; 3];
    for op in &doc.ops {
        let kind = AugOpKind::from_name(&op.name).ok_or_else(|| format!("unknown op {:?}", op.name))?;
        if pairs[kind.index()].replace((op.a, op.b)).is_some() {
            return Err(format!("op {:?} listed twice", op.name));
        }
    }
    let mut full = [(0.0, 0.0); 3];
    for kind in AugOpKind::ALL {
        full[kind.index()] = pairs[kind.index()].ok_or_else(|| format!("op {:?} missing", kind.name()))?;
    }
    let policy = RangePolicy::from_pairs(full, doc.p_apply);
    if !policy.is_valid() {
        return Err(format!("ranges {full:?} violate a <= b or the op bounds"));
    }
    Ok(policy)
}

pub fn save_policy(path: &Path, policy: &RangePolicy) -> Result<()> {
    write(path, policy_to_json(policy).as_bytes())
}

pub fn load_policy(path: &Path) -> Result<RangePolicy> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    policy_from_json(text).map_err(|msg| Error::format(path, msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = RangePolicy::from_pairs([(0.3, 1.7000000000000002), (0.9, 1.1), (0.0, 0.123456789012345)], 0.75);
        assert_eq!(policy_from_json(&policy_to_json(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_bad_documents() {
        let ok = r#"{"version":1,"ops":[{"name":"noise","a":0,"b":0.1},{"name":"brightness","a":1,"b":1},{"name":"contrast","a":1,"b":1}],"p_apply":1}"#;
        assert!(policy_from_json(ok).is_ok());
        assert!(policy_from_json(&ok.replace("\"version\":1", "\"version\":2")).unwrap_err().contains("version"));
        assert!(policy_from_json(&ok.replace("noise", "blur")).unwrap_err().contains("unknown op"));
        assert!(policy_from_json(&ok.replace("contrast", "brightness")).unwrap_err().contains("twice"));
        assert!(policy_from_json(&ok.replace("\"b\":0.1", "\"b\":3")).unwrap_err().contains("bounds"));
        assert!(policy_from_json(&ok.replace("\"p_apply\":1", "\"p_apply\":1,\"x\":2")).is_err());
    }
}
