//! Parsing of `--dist` values.

use std::path::PathBuf;

use smp_infer::dist::SignPattern;
use smp_infer::harness::InstanceSpec;
use smp_infer::Error;

/// `uniform`, `paninski:EPS`, `pony:PATTERN`, `point:X`, or a path to a pmf
/// JSON file. Perturbation signs and pony halves are redrawn every trial
/// when `resample` is set, and drawn once otherwise.
pub fn parse(text: &str, resample: bool) -> Result<InstanceSpec, Error> {
    let bad = |msg: String| Error::Config {
        key: "dist".into(),
        message: msg,
    };
    let (head, arg) = match text.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (text, None),
    };
    match (head, arg) {
        ("uniform", None) => Ok(InstanceSpec::Uniform),
        ("paninski", Some(e)) => {
            let eps: f64 = e.parse().map_err(|_| bad(format!("`{e}` is not a number")))?;
            Ok(InstanceSpec::Paninski {
                eps: Some(eps),
                theta: None,
                resample,
            })
        }
        ("paninski", None) => Ok(InstanceSpec::Paninski {
            eps: None,
            theta: None,
            resample,
        }),
        ("pony", Some(p)) => {
            let pattern: SignPattern = serde_json::from_value(serde_json::Value::String(p.into()))
                .map_err(|_| bad(format!("unknown sign pattern `{p}`")))?;
            Ok(InstanceSpec::FlyingPony { pattern, resample })
        }
        ("point", Some(x)) => Ok(InstanceSpec::PointMass {
            symbol: x.parse().map_err(|_| bad(format!("`{x}` is not a symbol")))?,
        }),
        _ if std::path::Path::new(text).exists() => Ok(InstanceSpec::File {
            path: PathBuf::from(text),
        }),
        _ => Err(bad(format!("cannot read `{text}` as a distribution"))),
    }
}
