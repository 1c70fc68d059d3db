//! Text tables and SVG plots for a simulation report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gpunion_core::sim::SimReport;

use crate::output::{pairs, pct, table};

fn secs(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

pub fn tables(r: &SimReport) -> String {
    let c = &r.cluster;
    let mut out = format!("Simulation seed {} ({:.0} s simulated)\n\n", r.seed, r.sim_end_s);
    out += &pairs(&[
        (
            "graceful migration success",
            c.graceful_migration_success_pct.map_or_else(|| "-".into(), |v| format!("{v:.1}% of {}", c.graceful_migrations)),
        ),
        ("return migration", format!("{} ({} of {})", pct(c.return_migration_pct), c.returns, c.return_candidates)),
        ("mean lost work", format!("{} s", secs(c.mean_lost_work_s))),
        ("peak backup bandwidth", format!("{:.3}% of campus link", c.backup_bandwidth_share_pct)),
        ("utilization", format!("{:.1}%", c.utilization_pct)),
        ("static-ownership utilization", pct(c.baseline_utilization_pct)),
        ("jobs completed", format!("{} of {}", c.jobs_completed, r.jobs.len())),
        ("interruptions skipped", c.interruptions_skipped.to_string()),
        ("ledger violations", r.ledger_violations.len().to_string()),
    ]);

    out += "\nLost work by interruption kind\n";
    let rows: Vec<Vec<String>> = c
        .lost_work_by_kind
        .iter()
        .map(|(kind, k)| {
            vec![
                kind.clone(),
                c.interruptions_applied.get(kind).copied().unwrap_or(0).to_string(),
                k.displacements.to_string(),
                k.resolved.to_string(),
                secs(k.mean_lost_work_s),
                secs(k.max_lost_work_s),
            ]
        })
        .collect();
    out += &table(&["KIND", "INTERRUPTIONS", "DISPLACEMENTS", "RESOLVED", "MEAN_LOST_S", "MAX_LOST_S"], &rows);

    out += "\nJobs\n";
    let rows: Vec<Vec<String>> = r
        .jobs
        .iter()
        .map(|j| {
            vec![
                j.job.to_string(),
                j.workload.clone(),
                j.interruptions.to_string(),
                j.migrations.to_string(),
                format!("{:.1}", j.lost_work_s),
                format!("{:.1}", j.restore_s),
                j.overhead_pct.map_or_else(|| "-".into(), |v| format!("{v:.2}")),
                format!("{:?}", j.final_state),
            ]
        })
        .collect();
    out += &table(
        &["JOB", "WORKLOAD", "INTERRUPTIONS", "MIGRATIONS", "LOST_S", "RESTORE_S", "OVERHEAD_%", "STATE"],
        &rows,
    );
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn header(title: &str, y_label: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        TOP + (H - TOP - BOTTOM) / 2.0,
        escape(y_label)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&m| m >= v).unwrap_or(10.0 * mag)
}

fn y_axis(s: &mut String, max: f64) {
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let y = TOP + plot_h * (1.0 - i as f64 / 5.0);
        let _ = writeln!(s, "<line x1=\"{LEFT}\" x2=\"{}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>", W - RIGHT);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, y + 4.0, fmt_tick(v));
    }
    let _ = writeln!(s, "<line x1=\"{LEFT}\" x2=\"{LEFT}\" y1=\"{TOP}\" y2=\"{}\" stroke=\"black\"/>", H - BOTTOM);
    let _ = writeln!(s, "<line x1=\"{LEFT}\" x2=\"{}\" y1=\"{}\" y2=\"{}\" stroke=\"black\"/>", W - RIGHT, H - BOTTOM, H - BOTTOM);
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut s = header(title, y_label);
    let max = nice_max(bars.iter().map(|b| b.1).fold(0.0, f64::max));
    y_axis(&mut s, max);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let slot = plot_w / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = plot_h * v / max;
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let y = TOP + plot_h - h;
        let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#4a78b5\"/>", slot * 0.6);
        let cx = x + slot * 0.3;
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>", y - 5.0);
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", H - BOTTOM + 18.0, escape(label));
    }
    s + "</svg>\n"
}

pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut s = header(title, y_label);
    let y_max = nice_max(points.iter().map(|p| p.1).fold(0.0, f64::max));
    let x_max = nice_max(points.iter().map(|p| p.0).fold(0.0, f64::max));
    y_axis(&mut s, y_max);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=5 {
        let v = x_max * i as f64 / 5.0;
        let x = LEFT + plot_w * i as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", H - BOTTOM + 18.0, fmt_tick(v));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", LEFT + plot_w / 2.0, H - 18.0, escape(x_label));
    for (x, y) in points {
        let px = LEFT + plot_w * x / x_max;
        let py = TOP + plot_h * (1.0 - y.max(0.0) / y_max);
        let _ = writeln!(s, "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"4\" fill=\"#c0504d\" fill-opacity=\"0.6\"/>");
    }
    s + "</svg>\n"
}

/// Writes the plot files into `dir` and returns their paths.
pub fn plots(r: &SimReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, svg: String| -> std::io::Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, svg)?;
        written.push(p);
        Ok(())
    };

    let c = &r.cluster;
    let mut util = Vec::new();
    if let Some(b) = c.baseline_utilization_pct {
        util.push(("static ownership".to_string(), b));
    }
    util.push(("shared pool".to_string(), c.utilization_pct));
    put("utilization.svg", bar_chart("GPU utilization", "utilization (%)", &util))?;

    let lost: Vec<(String, f64)> = c
        .lost_work_by_kind
        .iter()
        .map(|(kind, k)| (kind.clone(), k.mean_lost_work_s.unwrap_or(0.0)))
        .collect();
    put("lost-work.svg", bar_chart("Mean lost work per displacement", "lost work (s)", &lost))?;

    let mut migration = Vec::new();
    if let Some(g) = c.graceful_migration_success_pct {
        migration.push(("graceful success".to_string(), g));
    }
    if let Some(ret) = c.return_migration_pct {
        migration.push(("return migration".to_string(), ret));
    }
    put("migration.svg", bar_chart("Migration outcomes", "share (%)", &migration))?;

    let points: Vec<(f64, f64)> =
        r.jobs.iter().filter_map(|j| j.overhead_pct.map(|o| (j.interruptions as f64, o))).collect();
    put("overhead.svg", scatter("Training-time inflation", "interruptions", "overhead (%)", &points))?;
    Ok(written)
}
