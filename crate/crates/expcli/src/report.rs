//! Markdown summary and SVG bar charts from a results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::results::{ResultRow, RowStatus};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ade,
    CollisionRate,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Ade, Metric::CollisionRate];

    pub fn column(&self) -> &'static str {
        match self {
            Metric::Ade => "ade_m",
            Metric::CollisionRate => "collision_rate",
        }
    }

    fn title(&self) -> &'static str {
        match self {
            Metric::Ade => "ADE (m)",
            Metric::CollisionRate => "collision rate",
        }
    }

    pub fn of(&self, row: &ResultRow) -> Option<f64> {
        match self {
            Metric::Ade => row.ade_m,
            Metric::CollisionRate => row.collision_rate,
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Sort key for range labels: numeric ascending, "unlimited" last.
fn range_order(label: &str) -> f64 {
    label.parse().unwrap_or(f64::INFINITY)
}

fn values(rows: &[&ResultRow], metric: Metric) -> Vec<f64> {
    rows.iter().filter_map(|r| metric.of(r)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

fn per_seed(rows: &[&ResultRow], metric: Metric) -> String {
    let mut sorted: Vec<&&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    sorted
        .iter()
        .map(|r| format!("{}: {}", r.seed, fmt_opt(metric.of(r))))
        .collect::<Vec<_>>()
        .join(", ")
}

struct Chart {
    title: String,
    series: Vec<String>,
    /// (group label, one value per series; `None` draws no bar).
    groups: Vec<(String, Vec<Option<f64>>)>,
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn svg(&self) -> String {
        let bar_w = 18.0;
        let gap = 24.0;
        let left = 64.0;
        let top = 40.0;
        let plot_h = 220.0;
        let n_series = self.series.len().max(1) as f64;
        let group_w = n_series * bar_w + gap;
        let width = left + group_w * self.groups.len() as f64 + 20.0;
        let legend_h = 18.0 * self.series.len() as f64;
        let height = top + plot_h + 40.0 + legend_h;
        let max = self
            .groups
            .iter()
            .flat_map(|(_, v)| v.iter().flatten())
            .fold(0.0f64, |m, v| m.max(*v));
        let y_max = if max > 0.0 { max * 1.1 } else { 1.0 };
        let y = |v: f64| top + plot_h - plot_h * v / y_max;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
            top + plot_h
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            top + plot_h,
            width - 10.0,
            top + plot_h
        );
        for k in 0..=4 {
            let v = y_max * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
                left - 4.0,
                y(v) + 4.0
            );
        }
        for (gi, (label, vals)) in self.groups.iter().enumerate() {
            let x0 = left + gap / 2.0 + gi as f64 * group_w;
            for (si, v) in vals.iter().enumerate() {
                let Some(v) = v else { continue };
                let x = x0 + si as f64 * bar_w;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    y(*v),
                    bar_w - 2.0,
                    top + plot_h - y(*v),
                    PALETTE[si % PALETTE.len()]
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x0 + n_series * bar_w / 2.0,
                top + plot_h + 16.0,
                escape(label)
            );
        }
        for (si, name) in self.series.iter().enumerate() {
            let ly = top + plot_h + 36.0 + 18.0 * si as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{left}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                ly - 9.0,
                PALETTE[si % PALETTE.len()],
                left + 16.0,
                ly,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub struct Report {
    pub markdown: String,
    /// (file name, contents)
    pub charts: Vec<(String, String)>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

type Group<'a> = Vec<&'a ResultRow>;

fn level_label(hours: f64, fine_tuned: bool) -> String {
    format!("{hours} h-equiv{}", if fine_tuned { ", fine-tuned" } else { "" })
}

fn range_fov_section(md: &mut String, charts: &mut Vec<(String, String)>, rows: &[&ResultRow]) {
    let mut levels: BTreeMap<(String, bool), Group> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.iou == 1.0 && r.rot == 0.0) {
        levels.entry((r.hours_equiv.to_string(), r.fine_tuned)).or_default().push(r);
    }
    for ((hours, ft), group) in &levels {
        let mut ranges: Vec<&str> = group.iter().map(|r| r.range.as_str()).collect();
        ranges.sort_by(|a, b| range_order(a).total_cmp(&range_order(b)));
        ranges.dedup();
        let mut fovs: Vec<f64> = group.iter().map(|r| r.fov).collect();
        fovs.sort_by(f64::total_cmp);
        fovs.dedup();
        let level = level_label(hours.parse().unwrap_or(0.0), *ft);
        let _ = writeln!(md, "### Range x FoV ({level})\n");
        for metric in Metric::ALL {
            let cell = |range: &str, fov: f64| -> Vec<&ResultRow> {
                group.iter().copied().filter(|r| r.range == range && r.fov == fov).collect()
            };
            let _ = writeln!(md, "Median {} over seeds; rows are range (m), columns FoV (deg).\n", metric.title());
            let _ = write!(md, "| range \\ fov |");
            for f in &fovs {
                let _ = write!(md, " {f} |");
            }
            let _ = write!(md, "\n|---|");
            for _ in &fovs {
                md.push_str("---|");
            }
            md.push('\n');
            let mut groups = Vec::new();
            for range in &ranges {
                let _ = write!(md, "| {range} |");
                let mut bars = Vec::new();
                for &f in &fovs {
                    let m = median(&values(&cell(range, f), metric));
                    let _ = write!(md, " {} |", fmt_opt(m));
                    bars.push(m);
                }
                md.push('\n');
                groups.push((format!("{range} m"), bars));
            }
            md.push('\n');
            let name = format!("grid-range-fov-{}-{}.svg", slug(&level), metric.column());
            let _ = writeln!(md, "![{} by range and FoV]({name})\n", metric.title());
            charts.push((
                name,
                Chart {
                    title: format!("{} by range and FoV ({level})", metric.title()),
                    series: fovs.iter().map(|f| format!("FoV {f}")).collect(),
                    groups,
                }
                .svg(),
            ));
        }
        let _ = writeln!(md, "Per-seed values:\n\n| range | fov | ade_m | collision_rate |\n|---|---|---|---|");
        for range in &ranges {
            for &f in &fovs {
                let cell: Vec<&ResultRow> = group.iter().copied().filter(|r| r.range == *range && r.fov == f).collect();
                if !cell.is_empty() {
                    let _ = writeln!(
                        md,
                        "| {range} | {f} | {} | {} |",
                        per_seed(&cell, Metric::Ade),
                        per_seed(&cell, Metric::CollisionRate)
                    );
                }
            }
        }
        md.push('\n');
    }
}

/// A bar chart and table over labeled row groups.
fn labeled_section(
    md: &mut String,
    charts: &mut Vec<(String, String)>,
    title: &str,
    file_stem: &str,
    groups: &[(String, Group)],
) {
    let _ = writeln!(md, "### {title}\n");
    let _ = writeln!(
        md,
        "| configuration | median ade_m | median collision_rate | ade_m per seed | collision_rate per seed |\n|---|---|---|---|---|"
    );
    for (label, rows) in groups {
        let _ = writeln!(
            md,
            "| {label} | {} | {} | {} | {} |",
            fmt_opt(median(&values(rows, Metric::Ade))),
            fmt_opt(median(&values(rows, Metric::CollisionRate))),
            per_seed(rows, Metric::Ade),
            per_seed(rows, Metric::CollisionRate)
        );
    }
    md.push('\n');
    for metric in Metric::ALL {
        let name = format!("{file_stem}-{}.svg", metric.column());
        let _ = writeln!(md, "![{}]({name})\n", metric.title());
        charts.push((
            name,
            Chart {
                title: format!("{title}: median {}", metric.title()),
                series: groups.iter().map(|(l, _)| l.clone()).collect(),
                groups: vec![(
                    String::new(),
                    groups.iter().map(|(_, rows)| median(&values(rows, metric))).collect(),
                )],
            }
            .svg(),
        ));
    }
}

fn accuracy_section(md: &mut String, charts: &mut Vec<(String, String)>, rows: &[&ResultRow]) {
    let mut levels: BTreeMap<(String, bool), BTreeMap<(String, String), Group>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.range == "unlimited" && r.fov == 360.0) {
        levels
            .entry((r.hours_equiv.to_string(), r.fine_tuned))
            .or_default()
            .entry((format!("{:>12}", r.iou), format!("{:>12}", r.rot)))
            .or_default()
            .push(r);
    }
    for ((hours, ft), cells) in &levels {
        if cells.len() < 2 {
            continue;
        }
        let level = level_label(hours.parse().unwrap_or(0.0), *ft);
        let groups: Vec<(String, Group)> = cells
            .iter()
            .map(|((iou, rot), rows)| (format!("iou {} / rot {}", iou.trim(), rot.trim()), rows.clone()))
            .collect();
        labeled_section(
            md,
            charts,
            &format!("Geometric accuracy ({level})"),
            &format!("grid-accuracy-{}", slug(&level)),
            &groups,
        );
    }
}

fn quantity_section(md: &mut String, charts: &mut Vec<(String, String)>, rows: &[&ResultRow]) {
    let mut cells: BTreeMap<(String, String, bool), Group> = BTreeMap::new();
    for r in rows {
        let quality = if r.range == "unlimited" && r.fov == 360.0 && r.iou == 1.0 && r.rot == 0.0 {
            "av-grade".to_string()
        } else {
            format!("range {} / fov {} / iou {} / rot {}", r.range, r.fov, r.iou, r.rot)
        };
        cells
            .entry((format!("{:>12}", r.hours_equiv), quality, r.fine_tuned))
            .or_default()
            .push(r);
    }
    let groups: Vec<(String, Group)> = cells
        .into_iter()
        .map(|((hours, quality, ft), rows)| {
            let label = format!("{} h {quality}{}", hours.trim(), if ft { " + fine-tune" } else { "" });
            (label, rows)
        })
        .collect();
    labeled_section(md, charts, "Quantity vs quality", "quantity", &groups);
}

/// Builds the report. Errors on a table without any rows.
pub fn build_report(rows: &[ResultRow]) -> Result<Report, CliError> {
    if rows.is_empty() {
        return Err(CliError::Results("results table has no rows".into()));
    }
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
    let failed: Vec<&ResultRow> = rows.iter().filter(|r| r.status == RowStatus::Failed).collect();
    let mut md = String::from("# Planner data-quality results\n\n");
    let _ = writeln!(
        md,
        "{} rows ({} ok, {} failed). Test split shared by all rows of an experiment.\n",
        rows.len(),
        ok.len(),
        failed.len()
    );
    let mut charts = Vec::new();
    let grid: Vec<&ResultRow> = ok.iter().copied().filter(|r| r.experiment == "grid").collect();
    if !grid.is_empty() {
        md.push_str("## Grid\n\n");
        range_fov_section(&mut md, &mut charts, &grid);
        accuracy_section(&mut md, &mut charts, &grid);
    }
    let quantity: Vec<&ResultRow> = ok.iter().copied().filter(|r| r.experiment == "quantity").collect();
    if !quantity.is_empty() {
        md.push_str("## Quantity\n\n");
        quantity_section(&mut md, &mut charts, &quantity);
    }
    if !failed.is_empty() {
        md.push_str("## Failed rows\n\n| experiment | row_key | seed | error |\n|---|---|---|---|\n");
        for r in &failed {
            let _ = writeln!(md, "| {} | {} | {} | {} |", r.experiment, r.row_key, r.seed, r.error.replace('|', "/"));
        }
        md.push('\n');
    }
    Ok(Report { markdown: md, charts })
}

/// Writes `report.md` and the charts into `dir`, returning the paths.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io {
        path: p.display().to_string(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let md = dir.join("report.md");
    fs::write(&md, &report.markdown).map_err(|e| io(&md, e))?;
    written.push(md);
    for (name, svg) in &report.charts {
        let p = dir.join(name);
        fs::write(&p, svg).map_err(|e| io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(range: &str, fov: f64, seed: u64, ade: f64) -> ResultRow {
        ResultRow {
            experiment: "grid".into(),
            row_key: format!("{range}-{fov}-{seed}"),
            range: range.into(),
            fov,
            iou: 1.0,
            rot: 0.0,
            hours_equiv: 0.25,
            n_train_scenes: 36,
            fine_tuned: false,
            seed,
            data_seed: 0,
            ade_m: Some(ade),
            collision_rate: Some(0.001 * seed as f64),
            n_steps: Some(1000),
            n_collisions: Some(seed as usize),
            n_completed: Some(24),
            n_deviations: Some(0),
            status: RowStatus::Ok,
            error: String::new(),
            wall_time_s: 3.0,
        }
    }

    fn grid_rows() -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for (i, range) in ["20", "40", "60", "unlimited"].iter().enumerate() {
            for (j, fov) in [70.0, 130.0, 270.0, 360.0].iter().enumerate() {
                for seed in 0..3 {
                    rows.push(row(range, *fov, seed, 0.1 * (i + j) as f64 + 0.01 * seed as f64 + 0.123));
                }
            }
        }
        rows
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn sixteen_cells_render_as_four_by_four() {
        let report = build_report(&grid_rows()).unwrap();
        let md = &report.markdown;
        assert!(md.contains("| range \\ fov | 70 | 130 | 270 | 360 |"));
        // Four ranges by four FoVs, once per metric.
        let matrix_rows = md.lines().filter(|l| l.matches('|').count() == 6 && !l.starts_with("|---")).count();
        assert_eq!(matrix_rows, 2 * (1 + 4));
        assert_eq!(report.charts.len(), 2);
        // Per-seed values appear exactly as written in the table.
        let r = &grid_rows()[7];
        assert!(md.contains(&format!("{}: {}", r.seed, r.ade_m.unwrap())));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = build_report(&grid_rows()).unwrap();
        let mut shuffled = grid_rows();
        shuffled.reverse();
        let b = build_report(&shuffled).unwrap();
        assert_eq!(a.charts, b.charts);
        assert_eq!(a.markdown, b.markdown);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(build_report(&[]).is_err());
    }
}
