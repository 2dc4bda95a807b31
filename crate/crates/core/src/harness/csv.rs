//! CSV serialization of closed-loop runs.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! parsing a file back yields bitwise-identical numbers.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::{ControlInput, QuadState};
use crate::error::{Error, Result};
use crate::harness::{RunRecord, RunRow};

pub const CSV_HEADER: &str = "t,x,y,z,phi,theta,psi,vx,vy,vz,dphi,dtheta,dpsi,\
u1,u2,u3,u4,std1,std2,std3,std4,total_std,mae,wp";

const FIELDS: usize = 24;

/// Renders a run as CSV text (header plus one line per cycle).
pub fn csv_string(record: &RunRecord) -> String {
    let mut out = String::with_capacity(64 * (record.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &record.rows {
        let s = &row.state;
        let u = &row.applied.0;
        let p = &row.posterior_std;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.t,
            s.x,
            s.y,
            s.z,
            s.phi,
            s.theta,
            s.psi,
            s.vx,
            s.vy,
            s.vz,
            s.dphi,
            s.dtheta,
            s.dpsi,
            u[0],
            u[1],
            u[2],
            u[3],
            p[0],
            p[1],
            p[2],
            p[3],
            row.total_std,
            row.mae,
            row.waypoint
        )
        .expect("write to string cannot fail");
    }
    out
}

pub fn write_csv(record: &RunRecord, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(record)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_field<T: std::str::FromStr>(raw: &str, line: usize, name: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Config {
        line,
        msg: format!("cannot parse {name} from {raw:?}"),
    })
}

/// Parses CSV text produced by [`csv_string`] back into rows.
pub fn parse_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Config {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            })
        }
        None => {
            return Err(Error::Config {
                line: 1,
                msg: "empty input".into(),
            })
        }
    }

    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != FIELDS {
            return Err(Error::Config {
                line,
                msg: format!("expected {FIELDS} fields, got {}", fields.len()),
            });
        }
        let mut f = [0.0f64; FIELDS - 1];
        for (i, v) in f.iter_mut().enumerate() {
            *v = parse_field(fields[i], line, "value")?;
        }
        let waypoint: usize = parse_field(fields[FIELDS - 1], line, "waypoint index")?;
        rows.push(RunRow {
            t: f[0],
            state: QuadState {
                x: f[1],
                y: f[2],
                z: f[3],
                phi: f[4],
                theta: f[5],
                psi: f[6],
                vx: f[7],
                vy: f[8],
                vz: f[9],
                dphi: f[10],
                dtheta: f[11],
                dpsi: f[12],
            },
            applied: ControlInput([f[13], f[14], f[15], f[16]]),
            posterior_std: [f[17], f[18], f[19], f[20]],
            total_std: f[21],
            mae: f[22],
            waypoint,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlInput;

    fn sample_record() -> RunRecord {
        let mk = |t: f64| RunRow {
            t,
            state: QuadState {
                x: 0.1 + t,
                y: -0.25,
                z: 1.0 / 3.0,
                phi: 1e-17,
                theta: -2.5e8,
                psi: std::f64::consts::PI,
                vx: 0.0,
                vy: -0.0,
                vz: 4.905,
                dphi: f64::MIN_POSITIVE,
                dtheta: 1.0,
                dpsi: -1.0,
            },
            applied: ControlInput([4.905, 4.9, 5.0, 0.0]),
            posterior_std: [0.01, 0.02, 0.03, 0.04],
            total_std: 0.02,
            mae: 0.5,
            waypoint: 3,
        };
        RunRecord {
            rows: vec![mk(0.0), mk(0.25)],
            transitions: 0,
            final_state: QuadState::default(),
        }
    }

    #[test]
    fn header_is_exact() {
        let rec = RunRecord {
            rows: vec![],
            transitions: 0,
            final_state: QuadState::default(),
        };
        assert_eq!(
            csv_string(&rec),
            "t,x,y,z,phi,theta,psi,vx,vy,vz,dphi,dtheta,dpsi,\
             u1,u2,u3,u4,std1,std2,std3,std4,total_std,mae,wp\n"
        );
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let rec = sample_record();
        let text = csv_string(&rec);
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows, rec.rows);
    }

    #[test]
    fn write_and_read_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let rec = sample_record();
        write_csv(&rec, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), rec.rows);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("time,stuff\n").is_err());
        let mut good = csv_string(&sample_record());
        good.push_str("1,2,3\n");
        let err = parse_csv(&good).unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 4),
            other => panic!("wrong error {other}"),
        }
        let bad = format!("{CSV_HEADER}\n0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,nope\n");
        assert!(parse_csv(&bad).is_err());
    }
}
