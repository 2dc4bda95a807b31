//! Flat `key = value` experiment configuration files.
//!
//! Lines are independent; `#` starts a comment (whole-line or trailing),
//! blank lines are skipped, keys may repeat (the last occurrence wins), and
//! unknown keys are rejected with their line number. Values overlay an
//! existing [`ExperimentConfig`], so a file only needs the settings it
//! changes.
//!
//! Recognized keys:
//!
//! | key | value |
//! |-----|-------|
//! | `seed` | integer |
//! | `duration` | seconds |
//! | `dt` | control interval in seconds |
//! | `substeps` | integrator substeps per interval |
//! | `horizon` | forecast length in intervals |
//! | `ensemble` | member count |
//! | `sigma0` | first-guess input spread |
//! | `rho` | tolerance for all 12 components |
//! | `rho_xy` | tolerance override for the x and y components |
//! | `min_std` | resampling floor |
//! | `inflation` | resampling variance inflation |
//! | `svd_trunc` | singular value truncation fraction |
//! | `selection` | `median`, `mean`, or `member:N` |
//! | `update` | `sqrt` or `direct` |
//! | `perturb_targets` | `true` or `false` |
//! | `workers` | forecast threads (0 = automatic) |
//! | `trim` | initial input center |
//! | `target_position` | `x,y,z` |
//! | `target_yaw` | radians |
//! | `waypoints` | `x,y,z; x,y,z; ...` |
//! | `mae_threshold` | waypoint switch threshold |
//! | `mass`, `gravity`, `lift`, `arm`, `yaw_drag` | vehicle scalars |
//! | `inertia` | `ixx,iyy,izz` |
//! | `drag` | `ax,ay,az` |

use nalgebra::Vector3;

use crate::controller::{SelectionRule, UpdateForm};
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

fn bad(line: usize, msg: String) -> Error {
    Error::Config { line, msg }
}

fn num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| bad(line, format!("cannot parse value {value:?} for {key}")))
}

fn vec3(value: &str, line: usize, key: &str) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(bad(
            line,
            format!("{key} needs three comma-separated numbers, got {value:?}"),
        ));
    }
    Ok(Vector3::new(
        num(parts[0], line, key)?,
        num(parts[1], line, key)?,
        num(parts[2], line, key)?,
    ))
}

/// Applies the settings in `text` on top of `cfg`.
pub fn apply_config(cfg: &mut ExperimentConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected key = value, got {stripped:?}")))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(bad(line, format!("empty value for {key}")));
        }

        match key {
            "seed" => cfg.seed = num(value, line, key)?,
            "duration" => cfg.duration = num(value, line, key)?,
            "dt" => cfg.integrator.dt = num(value, line, key)?,
            "substeps" => cfg.integrator.substeps = num(value, line, key)?,
            "horizon" => cfg.controller.horizon = num(value, line, key)?,
            "ensemble" => cfg.controller.members = num(value, line, key)?,
            "sigma0" => cfg.controller.sigma0 = num(value, line, key)?,
            "rho" => {
                let r: f64 = num(value, line, key)?;
                cfg.rho.fill(r);
            }
            "rho_xy" => {
                let r: f64 = num(value, line, key)?;
                cfg.rho[0] = r;
                cfg.rho[1] = r;
            }
            "min_std" => cfg.controller.min_std = num(value, line, key)?,
            "inflation" => cfg.controller.inflation = num(value, line, key)?,
            "svd_trunc" => cfg.controller.svd_trunc = num(value, line, key)?,
            "selection" => {
                cfg.controller.selection = match value {
                    "median" => SelectionRule::Median,
                    "mean" => SelectionRule::Mean,
                    other => match other.strip_prefix("member:") {
                        Some(idx) => SelectionRule::Member(num(idx, line, key)?),
                        None => {
                            return Err(bad(
                                line,
                                format!(
                                    "selection must be median, mean, or member:N, got {other:?}"
                                ),
                            ))
                        }
                    },
                }
            }
            "update" => {
                cfg.controller.update = match value {
                    "sqrt" => UpdateForm::SquareRoot,
                    "direct" => UpdateForm::Direct,
                    other => {
                        return Err(bad(
                            line,
                            format!("update must be sqrt or direct, got {other:?}"),
                        ))
                    }
                }
            }
            "perturb_targets" => {
                cfg.controller.perturb_targets = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(bad(
                            line,
                            format!("perturb_targets must be true or false, got {other:?}"),
                        ))
                    }
                }
            }
            "workers" => cfg.workers = num(value, line, key)?,
            "trim" => cfg.trim = Some(num(value, line, key)?),
            "target_position" => cfg.target_position = vec3(value, line, key)?,
            "target_yaw" => cfg.target_yaw = num(value, line, key)?,
            "waypoints" => {
                let mut wps = Vec::new();
                for part in value.split(';') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    wps.push(vec3(part, line, key)?);
                }
                if wps.is_empty() {
                    return Err(bad(line, "waypoints list is empty".into()));
                }
                cfg.waypoints = wps;
            }
            "mae_threshold" => cfg.mae_threshold = num(value, line, key)?,
            "mass" => cfg.params.m = num(value, line, key)?,
            "gravity" => cfg.params.g = num(value, line, key)?,
            "lift" => cfg.params.k = num(value, line, key)?,
            "arm" => cfg.params.l = num(value, line, key)?,
            "yaw_drag" => cfg.params.b = num(value, line, key)?,
            "inertia" => {
                let v = vec3(value, line, key)?;
                cfg.params.ixx = v.x;
                cfg.params.iyy = v.y;
                cfg.params.izz = v.z;
            }
            "drag" => cfg.params.drag = vec3(value, line, key)?,
            other => return Err(bad(line, format!("unknown key {other:?}"))),
        }
    }
    Ok(())
}
