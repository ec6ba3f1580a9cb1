use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::ExperimentConfig;
use super::io::parse_metrics_csv;
use crate::error::{Error, Result};
use crate::mixer::MixerKind;
use crate::train::MetricsRow;

/// Metrics of one seed of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSeries {
    pub env: String,
    pub mixer: MixerKind,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

/// Median, minimum and maximum across seeds at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub mixer: MixerKind,
    pub env_steps: u64,
    pub seeds: usize,
    pub return_median: f64,
    pub return_min: f64,
    pub return_max: f64,
    pub win_median: f64,
    pub win_min: f64,
    pub win_max: f64,
}

pub const SUMMARY_HEADER: &str =
    "env,mixer,env_steps,seeds,return_median,return_min,return_max,win_median,win_min,win_max";

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn spread(values: &[f64]) -> Result<(f64, f64, f64)> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((median(values)?, min, max))
}

/// Reads `config.toml` and every `metrics_<seed>.csv` of a run directory.
pub fn load_run_dir(dir: &Path) -> Result<Vec<SeedSeries>> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let path = dir.join(format!("metrics_{seed}.csv"));
        let text = std::fs::read_to_string(&path)?;
        out.push(SeedSeries {
            env: cfg.trainer.env.clone(),
            mixer: cfg.trainer.mixer,
            seed,
            rows: parse_metrics_csv(&text, &path.display().to_string())?,
        });
    }
    Ok(out)
}

/// Groups series by `(env, mixer)` and summarizes each evaluation point.
/// All series of a group must share the same evaluation grid.
pub fn summarize(series: &[SeedSeries]) -> Result<Vec<SummaryRow>> {
    if series.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let mut groups: BTreeMap<(String, String), Vec<&SeedSeries>> = BTreeMap::new();
    for s in series {
        groups.entry((s.env.clone(), s.mixer.to_string())).or_default().push(s);
    }
    let mut out = Vec::new();
    for ((env, _), members) in groups {
        let grid: Vec<u64> = members[0].rows.iter().map(|r| r.env_steps).collect();
        if grid.is_empty() {
            return Err(Error::InvalidArgument(format!("{env}/{}: no evaluation rows", members[0].mixer)));
        }
        for m in &members[1..] {
            let other: Vec<u64> = m.rows.iter().map(|r| r.env_steps).collect();
            if other != grid {
                return Err(Error::InvalidArgument(format!(
                    "{env}/{}: seed {} evaluates at {:?}, seed {} at {:?}",
                    m.mixer, members[0].seed, grid, m.seed, other
                )));
            }
        }
        for (i, &step) in grid.iter().enumerate() {
            let rets: Vec<f64> = members.iter().map(|m| m.rows[i].eval_mean_return).collect();
            let wins: Vec<f64> = members.iter().map(|m| m.rows[i].eval_win_rate).collect();
            let (return_median, return_min, return_max) = spread(&rets)?;
            let (win_median, win_min, win_max) = spread(&wins)?;
            out.push(SummaryRow {
                env: env.clone(),
                mixer: members[0].mixer,
                env_steps: step,
                seeds: members.len(),
                return_median,
                return_min,
                return_max,
                win_median,
                win_min,
                win_max,
            });
        }
    }
    Ok(out)
}

pub fn compare_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<Vec<SummaryRow>> {
    let mut series = Vec::new();
    for d in dirs {
        series.extend(load_run_dir(d.as_ref())?);
    }
    summarize(&series)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.env,
            r.mixer,
            r.env_steps,
            r.seeds,
            r.return_median,
            r.return_min,
            r.return_max,
            r.win_median,
            r.win_min,
            r.win_max
        );
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Parse {
            path: "summary".into(),
            message: "line 1: missing or unexpected summary header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |m: String| Error::Parse {
            path: "summary".into(),
            message: format!("line {}: {m}", i + 2),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", f.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        out.push(SummaryRow {
            env: f[0].to_string(),
            mixer: f[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            env_steps: f[2].parse().map_err(|e| bad(format!("`{}`: {e}", f[2])))?,
            seeds: f[3].parse().map_err(|e| bad(format!("`{}`: {e}", f[3])))?,
            return_median: real(f[4])?,
            return_min: real(f[5])?,
            return_max: real(f[6])?,
            win_median: real(f[7])?,
            win_min: real(f[8])?,
            win_max: real(f[9])?,
        });
    }
    Ok(out)
}

/// Final evaluation point of each `(env, mixer)` as an aligned table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut finals: BTreeMap<(String, String), &SummaryRow> = BTreeMap::new();
    for r in rows {
        finals.insert((r.env.clone(), r.mixer.to_string()), r);
    }
    let mut out = format!(
        "{:<12} {:<14} {:>9} {:>5}  {:>24}  {:>21}\n",
        "env", "mixer", "env_steps", "seeds", "return med [min, max]", "win med [min, max]"
    );
    for r in finals.values() {
        let ret = format!("{:.3} [{:.3}, {:.3}]", r.return_median, r.return_min, r.return_max);
        let win = format!("{:.3} [{:.3}, {:.3}]", r.win_median, r.win_min, r.win_max);
        let _ = writeln!(
            out,
            "{:<12} {:<14} {:>9} {:>5}  {:>24}  {:>21}",
            r.env,
            r.mixer.to_string(),
            r.env_steps,
            r.seeds,
            ret,
            win
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(seed: u64, finals: &[(u64, f64)]) -> SeedSeries {
        SeedSeries {
            env: "matrix3".into(),
            mixer: MixerKind::Mnmpg,
            seed,
            rows: finals
                .iter()
                .map(|&(step, ret)| MetricsRow {
                    env_steps: step,
                    train_steps: 0,
                    eps: 0.05,
                    td_loss: None,
                    meta_reward: None,
                    eval_mean_return: ret,
                    eval_win_rate: if ret == 8.0 { 1.0 } else { 0.0 },
                    wallclock_s: None,
                })
                .collect(),
        }
    }

    #[test]
    fn median_min_max_over_seeds() {
        let s = [series(1, &[(10, 0.0)]), series(2, &[(10, 8.0)]), series(3, &[(10, 8.0)])];
        let rows = summarize(&s).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].return_median, rows[0].return_min, rows[0].return_max), (8.0, 0.0, 8.0));
        assert_eq!(rows[0].seeds, 3);
    }

    #[test]
    fn single_seed_collapses() {
        let rows = summarize(&[series(1, &[(10, -12.0)])]).unwrap();
        assert_eq!(rows[0].return_median, rows[0].return_min);
        assert_eq!(rows[0].return_median, rows[0].return_max);
    }

    #[test]
    fn even_count_median_averages_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let s = [series(1, &[(10, 0.0), (20, 0.0)]), series(2, &[(10, 0.0), (25, 0.0)])];
        assert!(summarize(&s).is_err());
    }

    #[test]
    fn csv_parses_back() {
        let s = [series(1, &[(10, 0.5), (20, 1.0 / 3.0)]), series(2, &[(10, 8.0), (20, -12.0)])];
        let rows = summarize(&s).unwrap();
        assert_eq!(parse_summary_csv(&summary_csv(&rows)).unwrap(), rows);
        let text = summary_text(&rows);
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("mnmpg"));
    }
}
