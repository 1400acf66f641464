use std::fmt::Write as _;
use std::io::Write;

use super::{GroupReport, MetricClass, MetricsError};

pub const CSV_HEADER: [&str; 10] = [
    "attribute",
    "group",
    "n",
    "dice_cup",
    "dice_rim",
    "iou_cup",
    "iou_rim",
    "es_dice",
    "es_iou",
    "fairness",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per group plus an `overall` row per attribute carrying the
/// equity-scaled values and fairness.
pub fn write_reports_csv<W: Write>(writer: W, reports: &[GroupReport]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let ci = r.class_index(MetricClass::Cup);
        let ri = r.class_index(MetricClass::Rim);
        for row in r.rows.iter().chain(std::iter::once(&r.overall)) {
            let is_overall = std::ptr::eq(row, &r.overall);
            w.write_record([
                r.attribute.clone(),
                row.group.clone(),
                row.n.to_string(),
                num(ci.map(|i| row.dice[i])),
                num(ri.map(|i| row.dice[i])),
                num(ci.map(|i| row.iou[i])),
                num(ri.map(|i| row.iou[i])),
                num(is_overall.then_some(r.dice.essp)),
                num(is_overall.then_some(r.iou.essp)),
                num(is_overall.then_some(r.fairness)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Grouped bar chart of per-group Dice for each report class.
pub fn bar_chart_svg(report: &GroupReport) -> String {
    let (bar, gap, h) = (18.0, 14.0, 160.0);
    let k = report.classes.len().max(1) as f64;
    let group_w = k * bar + gap;
    let width = 60.0 + group_w * report.rows.len() as f64 + 20.0;
    let colors = ["#4c72b0", "#dd8452", "#55a868"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="10">"#,
        h + 70.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="14">{} Dice by group</text>"#,
        xml(&report.attribute)
    );
    let base = h + 30.0;
    let _ = writeln!(
        s,
        r#"<line x1="50" y1="{base}" x2="{:.0}" y2="{base}" stroke="black"/>"#,
        width - 10.0
    );
    for tick in [0.0, 0.5, 1.0] {
        let y = base - tick * h;
        let _ = writeln!(s, r#"<text x="20" y="{:.1}">{tick:.1}</text>"#, y + 3.0);
    }
    for (gi, row) in report.rows.iter().enumerate() {
        let x0 = 60.0 + gi as f64 * group_w;
        for (ci, &v) in row.dice.iter().enumerate() {
            let bh = v.clamp(0.0, 1.0) * h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{bh:.1}" fill="{}"/>"#,
                x0 + ci as f64 * bar,
                base - bh,
                colors[ci % colors.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{x0:.1}" y="{:.1}">{}</text>"#,
            base + 14.0,
            xml(&row.group)
        );
    }
    for (ci, c) in report.classes.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.0}" y="{:.0}" fill="{}">{}</text>"#,
            60.0 + ci as f64 * 50.0,
            base + 32.0,
            colors[ci % colors.len()],
            c.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
