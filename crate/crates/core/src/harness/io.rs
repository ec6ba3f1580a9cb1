//! File formats.
//!
//! `metrics_<seed>.csv` has the header [`METRICS_HEADER`] and one row per
//! evaluation. Floats use the shortest representation that round-trips;
//! `td_loss`, `meta_reward` and `wallclock_s` are left empty when there is
//! nothing to report.
//!
//! `visitation_<seed>.csv` has the header [`VISITATION_HEADER`] and one row
//! per visited state index per evaluation round.
//!
//! Snapshots are plain text:
//!
//! ```text
//! mnmpg-snapshot 1
//! env matrix3
//! mixer mnmpg
//! seed 1
//! env_steps 20000
//! train_steps 19873
//! params 14
//! param phi.l0.b 1 64
//! 1.2345678901234567e-2 ...
//! ```
//!
//! Each `param` line gives the name and shape and is followed by one line per
//! matrix row. Values are written with 17 significant digits, enough to
//! restore every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::{Matrix, ParamStore};
use crate::mixer::MixerKind;
use crate::train::{MetricsRow, VisitationRecord};

pub const METRICS_HEADER: &str = "env_steps,train_steps,eps,td_loss,meta_reward,eval_mean_return,eval_win_rate,wallclock_s";
pub const VISITATION_HEADER: &str = "eval_round,env_steps,state_index,count";
const SNAPSHOT_MAGIC: &str = "mnmpg-snapshot 1";

fn parse_err(origin: &str, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: origin.to_string(),
        message: format!("line {line}: {message}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.env_steps,
            r.train_steps,
            r.eps,
            opt(r.td_loss),
            opt(r.meta_reward),
            r.eval_mean_return,
            r.eval_win_rate,
            opt(r.wallclock_s)
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str, origin: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(parse_err(origin, 1, "missing or unexpected metrics header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(origin, n, format!("expected 8 fields, found {}", f.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| parse_err(origin, n, format!("`{s}`: {e}")));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
        let int = |s: &str| s.parse::<u64>().map_err(|e| parse_err(origin, n, format!("`{s}`: {e}")));
        rows.push(MetricsRow {
            env_steps: int(f[0])?,
            train_steps: int(f[1])?,
            eps: real(f[2])?,
            td_loss: maybe(f[3])?,
            meta_reward: maybe(f[4])?,
            eval_mean_return: real(f[5])?,
            eval_win_rate: real(f[6])?,
            wallclock_s: maybe(f[7])?,
        });
    }
    Ok(rows)
}

pub fn visitation_csv(records: &[VisitationRecord]) -> String {
    let mut out = format!("{VISITATION_HEADER}\n");
    for r in records {
        for (state, count) in &r.counts {
            let _ = writeln!(out, "{},{},{},{}", r.eval_round, r.env_steps, state, count);
        }
    }
    out
}

/// Inverse of [`visitation_csv`]. Rounds with no visits do not appear.
pub fn parse_visitation_csv(text: &str, origin: &str) -> Result<Vec<VisitationRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(VISITATION_HEADER) {
        return Err(parse_err(origin, 1, "missing or unexpected visitation header"));
    }
    let mut out: Vec<VisitationRecord> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 2;
        let f = line
            .split(',')
            .map(|s| s.parse::<u64>().map_err(|e| parse_err(origin, n, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<u64>>>()?;
        if f.len() != 4 {
            return Err(parse_err(origin, n, format!("expected 4 fields, found {}", f.len())));
        }
        let round = f[0] as usize;
        if out.last().map(|r| r.eval_round) != Some(round) {
            out.push(VisitationRecord {
                eval_round: round,
                env_steps: f[1],
                counts: BTreeMap::new(),
            });
        }
        out.last_mut().expect("pushed above").counts.insert(f[2] as usize, f[3]);
    }
    Ok(out)
}

/// Parameters plus enough context to rebuild the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub env: String,
    pub mixer: MixerKind,
    pub seed: u64,
    pub env_steps: u64,
    pub train_steps: u64,
    pub params: ParamStore,
}

pub fn snapshot_text(s: &Snapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SNAPSHOT_MAGIC}");
    let _ = writeln!(out, "env {}", s.env);
    let _ = writeln!(out, "mixer {}", s.mixer);
    let _ = writeln!(out, "seed {}", s.seed);
    let _ = writeln!(out, "env_steps {}", s.env_steps);
    let _ = writeln!(out, "train_steps {}", s.train_steps);
    let _ = writeln!(out, "params {}", s.params.len());
    for (name, p) in s.params.iter() {
        let m = p.value();
        let _ = writeln!(out, "param {} {} {}", name, m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

struct Reader<'a> {
    origin: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| parse_err(self.origin, 0, format!("unexpected end of file, wanted {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.line(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v)),
            _ => Err(parse_err(self.origin, n, format!("expected `{key}`"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (n, v) = self.field(key)?;
        v.parse().map_err(|e| parse_err(self.origin, n, e))
    }
}

pub fn parse_snapshot(text: &str, origin: &str) -> Result<Snapshot> {
    let mut r = Reader {
        origin,
        lines: text.lines().enumerate(),
    };
    let (n, magic) = r.line("header")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(parse_err(origin, n, "not a snapshot file"));
    }
    let env = r.field("env")?.1.to_string();
    let mixer: MixerKind = r.number("mixer")?;
    let seed = r.number("seed")?;
    let env_steps = r.number("env_steps")?;
    let train_steps = r.number("train_steps")?;
    let count: usize = r.number("params")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let (n, head) = r.field("param")?;
        let parts: Vec<&str> = head.split(' ').collect();
        if parts.len() != 3 {
            return Err(parse_err(origin, n, "expected `param <name> <rows> <cols>`"));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|e| parse_err(origin, n, e));
        let (rows, cols) = (dim(parts[1])?, dim(parts[2])?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = r.line("matrix row")?;
            let before = data.len();
            for tok in line.split(' ') {
                data.push(tok.parse::<f64>().map_err(|e| parse_err(origin, n, format!("`{tok}`: {e}")))?);
            }
            if data.len() - before != cols {
                return Err(parse_err(origin, n, format!("expected {cols} values, found {}", data.len() - before)));
            }
        }
        params.insert(parts[0], Matrix::from_vec(rows, cols, data)?);
    }
    Ok(Snapshot {
        env,
        mixer,
        seed,
        env_steps,
        train_steps,
        params,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}
