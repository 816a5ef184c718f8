//! Episode metrics: average reward, collision rate, average speed, lane-change
//! count and the variances of steering and acceleration.

use std::io::Write;

use crate::error::Result;

/// One ego step as recorded for metric computation and export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoTraceRow {
    pub step: u64,
    pub time: f64,
    pub lane_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub speed: f64,
    pub steer: f64,
    pub accel: f64,
    pub option: usize,
    pub r_safe: f64,
    pub r_gen: f64,
    pub r_all: f64,
    pub f_unsafe: bool,
}

pub const EGO_TRACE_HEADER: [&str; 16] = [
    "step", "time", "lane_id", "x", "y", "heading", "v_x", "v_y", "speed", "steer", "acc", "option", "r_safe", "r_gen",
    "r_all", "f_unsafe",
];

pub fn write_ego_trace<W: Write>(out: W, rows: &[EgoTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EGO_TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.time.to_string(),
            r.lane_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.heading.to_string(),
            r.vx.to_string(),
            r.vy.to_string(),
            r.speed.to_string(),
            r.steer.to_string(),
            r.accel.to_string(),
            r.option.to_string(),
            r.r_safe.to_string(),
            r.r_gen.to_string(),
            r.r_all.to_string(),
            u8::from(r.f_unsafe).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    /// Mean per-step weighted reward.
    pub ar: f64,
    /// 100 if the episode ended in a safety event, else 0.
    pub cr: f64,
    pub avg_speed: f64,
    pub lane_changes: usize,
    pub steer_var: f64,
    pub accel_var: f64,
    pub steps: usize,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Lane transitions whose new lane is then held for at least `debounce` seconds.
pub fn lane_change_count(lanes: &[usize], dt: f64, debounce: f64) -> usize {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &lane in lanes {
        match runs.last_mut() {
            Some((l, n)) if *l == lane => *n += 1,
            _ => runs.push((lane, 1)),
        }
    }
    let Some(&(mut stable, _)) = runs.first() else {
        return 0;
    };
    let mut count = 0;
    for &(lane, n) in &runs[1..] {
        if lane != stable && n as f64 * dt >= debounce - 1e-9 {
            count += 1;
            stable = lane;
        }
    }
    count
}

pub fn episode_metrics(trace: &[EgoTraceRow], dt: f64, debounce: f64) -> EpisodeMetrics {
    let steers: Vec<f64> = trace.iter().map(|r| r.steer).collect();
    let accels: Vec<f64> = trace.iter().map(|r| r.accel).collect();
    let lanes: Vec<usize> = trace.iter().map(|r| r.lane_id).collect();
    EpisodeMetrics {
        ar: mean(trace.iter().map(|r| r.r_all)),
        cr: if trace.iter().any(|r| r.f_unsafe) { 100.0 } else { 0.0 },
        avg_speed: mean(trace.iter().map(|r| r.speed)),
        lane_changes: lane_change_count(&lanes, dt, debounce),
        steer_var: variance(&steers),
        accel_var: variance(&accels),
        steps: trace.len(),
    }
}

/// Minimum, quartiles and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    quartiles(values).map(|q| q.median)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub episodes: usize,
    pub ar: f64,
    pub as_: f64,
    pub nl: f64,
    pub vs: f64,
    pub va: f64,
    /// Percentage of episodes ending in a safety event.
    pub cr: f64,
    /// Spread per metric in `[AR, AS, NL, VS, VA]` order.
    pub spread: [Quartiles; 5],
}

pub fn aggregate(episodes: &[EpisodeMetrics]) -> Option<Aggregate> {
    if episodes.is_empty() {
        return None;
    }
    let col = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).collect::<Vec<f64>>();
    let cols = [
        col(|m| m.ar),
        col(|m| m.avg_speed),
        col(|m| m.lane_changes as f64),
        col(|m| m.steer_var),
        col(|m| m.accel_var),
    ];
    let avg = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    Some(Aggregate {
        episodes: episodes.len(),
        ar: avg(&cols[0]),
        as_: avg(&cols[1]),
        nl: avg(&cols[2]),
        vs: avg(&cols[3]),
        va: avg(&cols[4]),
        cr: avg(&col(|m| m.cr)),
        spread: cols.map(|c| quartiles(&c).expect("non-empty")),
    })
}

pub const METRICS_HEADER: [&str; 8] = ["episode", "AR", "AS", "NL", "VS", "VA", "CR", "steps"];

pub fn write_metrics_csv<W: Write>(out: W, episodes: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for (k, m) in episodes.iter().enumerate() {
        w.write_record([
            k.to_string(),
            m.ar.to_string(),
            m.avg_speed.to_string(),
            m.lane_changes.to_string(),
            m.steer_var.to_string(),
            m.accel_var.to_string(),
            m.cr.to_string(),
            m.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text summary in `AR, AS, NL, VS, VA, CR` column order.
pub fn summary_text(label: &str, agg: Option<&Aggregate>) -> String {
    match agg {
        None => format!("{label}: EMPTY (0 episodes)\n"),
        Some(a) => format!(
            "{label} ({} episodes)\n{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n{:>10.4} {:>10.4} {:>10.4} {:>10.6} {:>10.6} {:>9.2}%\n",
            a.episodes, "AR", "AS", "NL", "VS", "VA", "CR", a.ar, a.as_, a.nl, a.vs, a.va, a.cr
        ),
    }
}
