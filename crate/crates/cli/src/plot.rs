//! Test-MAE-versus-iteration chart from training history CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// `(iteration, mean test MAE over both states)` rows that carry a test MAE.
pub fn read_history(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Config(format!("{} has no `{name}` column", path.display())))
    };
    let (ci, cd, cw) = (col("iteration")?, col("test_mae_delta")?, col("test_mae_omega")?);
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let get = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok());
        if let (Some(it), Some(d), Some(w)) = (get(ci), get(cd), get(cw)) {
            rows.push((it, 0.5 * (d + w)));
        }
    }
    Ok(rows)
}

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Line chart with a log-scaled error axis.
pub fn history_svg(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, left, top, right, bottom) = (640.0, 400.0, 70.0, 30.0, 130.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let pts = series.iter().flat_map(|(_, r)| r.iter()).filter(|p| p.1 > 0.0);
    let (mut x_max, mut y_lo, mut y_hi) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x_max = x_max.max(x);
        y_lo = y_lo.min(y.log10());
        y_hi = y_hi.max(y.log10());
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (-2.0, 0.0);
    }
    let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
    let px = |x: f64| left + pw * x / x_max;
    let py = |y: f64| top + ph * (1.0 - (y.log10() - y_lo) / (y_hi - y_lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut e = y_lo as i32;
    while e as f64 <= y_hi {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        e += 1;
    }
    for k in 0..=4 {
        let x = x_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(x),
            top + ph + 16.0,
            x.round()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">test MAE</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (name, rows)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = rows
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
