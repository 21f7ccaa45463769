//! Report rendering: deterministic SVG figures and a summary page, derived
//! strictly from the CSV tables emitted by earlier stages. Identical tables
//! produce byte-identical figures (fixed canvas, fixed number formatting, no
//! timestamps), so report output participates in replay verification.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stresslab::provenance::RunManifest;

use crate::layout::Layout;
use crate::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 90.0;

/// Fixed-precision value label; enough digits to be useful, few enough to stay
/// readable on an axis.
fn fmt(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    if (0.01..10_000.0).contains(&a) {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"11\">\n\
             <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            WIDTH / 2.0,
            esc(title)
        );
        Svg { body }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = write!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>\n"
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = write!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"1\"/>\n"
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = write!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" fill=\"{fill}\" fill-opacity=\"0.7\"/>\n"
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, content: &str) {
        let _ = write!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{}</text>\n",
            esc(content)
        );
    }

    fn text_rotated(&mut self, x: f64, y: f64, content: &str) {
        let _ = write!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"end\" transform=\"rotate(-40 {x:.2} {y:.2})\">{}</text>\n",
            esc(content)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear map from data range to pixel range with a small headroom at the top.
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if (hi - lo).abs() < 1e-300 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        Scale { lo, hi, px_lo, px_hi }
    }

    fn at(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn y_axis(svg: &mut Svg, scale: &Scale) {
    svg.line(MARGIN_L, MARGIN_T, MARGIN_L, HEIGHT - MARGIN_B, "black");
    svg.line(MARGIN_L, HEIGHT - MARGIN_B, WIDTH - MARGIN_R, HEIGHT - MARGIN_B, "black");
    for i in 0..=4 {
        let v = scale.lo + (scale.hi - scale.lo) * i as f64 / 4.0;
        let y = scale.at(v);
        svg.line(MARGIN_L - 4.0, y, MARGIN_L, y, "black");
        svg.text(MARGIN_L - 8.0, y + 4.0, "end", &fmt(v));
    }
}

const SERIES_FILLS: [&str; 6] = ["#4878a8", "#b85c5c", "#6aa86a", "#9678b8", "#c8a050", "#708090"];

/// Grouped bar chart: one group per label, one bar per series within a group.
/// Optional whiskers draw (low, high) intervals over each bar.
fn grouped_bars(
    title: &str,
    labels: &[String],
    series: &[(String, Vec<f64>)],
    whiskers: Option<&[(String, Vec<(f64, f64)>)]>,
) -> String {
    let mut svg = Svg::new(title);
    if labels.is_empty() || series.is_empty() {
        svg.text(WIDTH / 2.0, HEIGHT / 2.0, "middle", "(no data)");
        return svg.finish();
    }
    let mut hi = f64::NEG_INFINITY;
    let mut lo = 0.0f64;
    for (_, vs) in series {
        for &v in vs {
            hi = hi.max(v);
            lo = lo.min(v);
        }
    }
    if let Some(ws) = whiskers {
        for (_, pairs) in ws {
            for &(l, h) in pairs {
                hi = hi.max(h);
                lo = lo.min(l);
            }
        }
    }
    if !hi.is_finite() {
        hi = 1.0;
    }
    let scale = Scale::new(lo, hi * 1.08 + 1e-12, HEIGHT - MARGIN_B, MARGIN_T);
    y_axis(&mut svg, &scale);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let group_w = plot_w / labels.len() as f64;
    let bar_w = (group_w * 0.8) / series.len() as f64;
    let y0 = scale.at(0.0f64.clamp(scale.lo, scale.hi));

    for (gi, label) in labels.iter().enumerate() {
        let gx = MARGIN_L + gi as f64 * group_w + group_w * 0.1;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(gi).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let x = gx + si as f64 * bar_w;
            let y = scale.at(v);
            let (top, h) = if y <= y0 { (y, y0 - y) } else { (y0, y - y0) };
            svg.rect(x, top, bar_w * 0.92, h, SERIES_FILLS[si % SERIES_FILLS.len()]);
            if let Some(ws) = whiskers {
                if let Some((_, pairs)) = ws.get(si) {
                    if let Some(&(wl, wh)) = pairs.get(gi) {
                        if wl.is_finite() && wh.is_finite() {
                            let cx = x + bar_w * 0.46;
                            svg.line(cx, scale.at(wl), cx, scale.at(wh), "black");
                            svg.line(cx - 3.0, scale.at(wl), cx + 3.0, scale.at(wl), "black");
                            svg.line(cx - 3.0, scale.at(wh), cx + 3.0, scale.at(wh), "black");
                        }
                    }
                }
            }
        }
        svg.text_rotated(gx + group_w * 0.4, HEIGHT - MARGIN_B + 14.0, label);
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let lx = MARGIN_L + 10.0 + si as f64 * 150.0;
        svg.rect(lx, MARGIN_T - 14.0, 10.0, 10.0, SERIES_FILLS[si % SERIES_FILLS.len()]);
        svg.text(lx + 14.0, MARGIN_T - 5.0, "start", name);
    }
    svg.finish()
}

/// Grayscale matrix heatmap with per-cell value labels.
fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<Option<f64>>]) -> String {
    let mut svg = Svg::new(title);
    if row_labels.is_empty() || col_labels.is_empty() {
        svg.text(WIDTH / 2.0, HEIGHT / 2.0, "middle", "(no data)");
        return svg.finish();
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in values {
        for v in row.iter().flatten() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let span = if (hi - lo).abs() < 1e-300 { 1.0 } else { hi - lo };
    let cell_w = (WIDTH - MARGIN_L - MARGIN_R) / col_labels.len() as f64;
    let cell_h = (HEIGHT - MARGIN_T - MARGIN_B) / row_labels.len() as f64;

    for (ri, rlabel) in row_labels.iter().enumerate() {
        let y = MARGIN_T + ri as f64 * cell_h;
        svg.text(MARGIN_L - 6.0, y + cell_h / 2.0 + 4.0, "end", rlabel);
        for ci in 0..col_labels.len() {
            let x = MARGIN_L + ci as f64 * cell_w;
            match values.get(ri).and_then(|r| r.get(ci)).copied().flatten() {
                Some(v) => {
                    let norm = (v - lo) / span;
                    let level = 235 - (norm * 175.0).round() as i64;
                    svg.rect(x, y, cell_w - 1.0, cell_h - 1.0, &format!("rgb({level},{level},{level})"));
                    let text_fill = if level < 128 { "white" } else { "black" };
                    let _ = write!(
                        svg.body,
                        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"{text_fill}\">{}</text>\n",
                        x + cell_w / 2.0,
                        y + cell_h / 2.0 + 4.0,
                        esc(&fmt(v))
                    );
                }
                None => {
                    svg.rect(x, y, cell_w - 1.0, cell_h - 1.0, "#f4f0ec");
                }
            }
        }
    }
    for (ci, clabel) in col_labels.iter().enumerate() {
        let x = MARGIN_L + ci as f64 * cell_w + cell_w / 2.0;
        svg.text_rotated(x, HEIGHT - MARGIN_B + 14.0, clabel);
    }
    svg.finish()
}

/// Scatter plot with one series per distinct group label.
fn scatter(title: &str, x_label: &str, y_label: &str, groups: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut svg = Svg::new(title);
    let total: usize = groups.iter().map(|(_, pts)| pts.len()).sum();
    if total == 0 {
        svg.text(WIDTH / 2.0, HEIGHT / 2.0, "middle", "(no data)");
        return svg.finish();
    }
    let mut xlo = f64::INFINITY;
    let mut xhi = f64::NEG_INFINITY;
    let mut ylo = f64::INFINITY;
    let mut yhi = f64::NEG_INFINITY;
    for (_, pts) in groups {
        for &(x, y) in pts {
            xlo = xlo.min(x);
            xhi = xhi.max(x);
            ylo = ylo.min(y);
            yhi = yhi.max(y);
        }
    }
    let xs = Scale::new(xlo, xhi + (xhi - xlo).abs() * 0.05 + 1e-12, MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(ylo, yhi + (yhi - ylo).abs() * 0.05 + 1e-12, HEIGHT - MARGIN_B, MARGIN_T);
    y_axis(&mut svg, &ys);
    for i in 0..=4 {
        let v = xs.lo + (xs.hi - xs.lo) * i as f64 / 4.0;
        let x = xs.at(v);
        svg.line(x, HEIGHT - MARGIN_B, x, HEIGHT - MARGIN_B + 4.0, "black");
        svg.text(x, HEIGHT - MARGIN_B + 16.0, "middle", &fmt(v));
    }
    svg.text(WIDTH / 2.0, HEIGHT - MARGIN_B + 34.0, "middle", x_label);
    svg.text_rotated(16.0, HEIGHT / 2.0, y_label);
    for (gi, (name, pts)) in groups.iter().enumerate() {
        let fill = SERIES_FILLS[gi % SERIES_FILLS.len()];
        for &(x, y) in pts {
            svg.circle(xs.at(x), ys.at(y), 3.0, fill);
        }
        let lx = MARGIN_L + 10.0 + gi as f64 * 150.0;
        svg.rect(lx, MARGIN_T - 14.0, 10.0, 10.0, fill);
        svg.text(lx + 14.0, MARGIN_T - 5.0, "start", name);
    }
    svg.finish()
}

// ---------------------------------------------------------------------------
// CSV access

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn get(&self, row: &[String], name: &str) -> String {
        self.col(name).and_then(|i| row.get(i).cloned()).unwrap_or_default()
    }

    fn get_f64(&self, row: &[String], name: &str) -> Option<f64> {
        self.get(row, name).parse().ok()
    }
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| anyhow::anyhow!("{e}"))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(Table { headers, rows })
}

fn flag_label(rag: &str, news: &str) -> String {
    let on = |s: &str| s == "true" || s == "1";
    format!("rag={} news={}", u8::from(on(rag)), u8::from(on(news)))
}

// ---------------------------------------------------------------------------
// individual figures

fn fig_baselines(table: &Table) -> String {
    let mut labels = Vec::new();
    let mut var_vals = Vec::new();
    let mut cvar_vals = Vec::new();
    for row in &table.rows {
        labels.push(format!("{} {}", table.get(row, "portfolio_id"), table.get(row, "method")));
        var_vals.push(table.get_f64(row, "var95").unwrap_or(f64::NAN));
        cvar_vals.push(table.get_f64(row, "cvar95").unwrap_or(f64::NAN));
    }
    grouped_bars(
        "Historical baseline tail risk (63-day horizon)",
        &labels,
        &[("VaR95".to_string(), var_vals), ("CVaR95".to_string(), cvar_vals)],
        None,
    )
}

fn fig_macro_shocks(table: &Table) -> String {
    let mut labels = Vec::new();
    let mut gdp = Vec::new();
    let mut infl = Vec::new();
    let mut rate = Vec::new();
    for row in &table.rows {
        labels.push(table.get(row, "country"));
        gdp.push(table.get_f64(row, "gdp_mean").unwrap_or(f64::NAN));
        infl.push(table.get_f64(row, "infl_mean").unwrap_or(f64::NAN));
        rate.push(table.get_f64(row, "rate_mean").unwrap_or(f64::NAN));
    }
    grouped_bars(
        "Mean accepted macro shock by country (pp)",
        &labels,
        &[
            ("GDP growth".to_string(), gdp),
            ("Inflation".to_string(), infl),
            ("Policy rate".to_string(), rate),
        ],
        None,
    )
}

fn fig_dispersion(table: &Table) -> String {
    let mut labels = Vec::new();
    let mut means = Vec::new();
    let mut bands = Vec::new();
    for row in &table.rows {
        labels.push(format!(
            "{} {}",
            table.get(row, "model"),
            flag_label(&table.get(row, "rag"), &table.get(row, "news"))
        ));
        let mean = table.get_f64(row, "mean_dispersion").unwrap_or(f64::NAN);
        means.push(mean);
        bands.push((
            table.get_f64(row, "min_dispersion").unwrap_or(mean),
            table.get_f64(row, "max_dispersion").unwrap_or(mean),
        ));
    }
    grouped_bars(
        "Cross-scenario shock dispersion by configuration (pp)",
        &labels,
        &[("mean dispersion".to_string(), means)],
        Some(&[("range".to_string(), bands)]),
    )
}

fn fig_heatmap(table: &Table) -> String {
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for row in &table.rows {
        let r = format!("{} / {}", table.get(row, "portfolio_id"), table.get(row, "country"));
        let c = flag_label(&table.get(row, "rag"), &table.get(row, "news"));
        if !rows.contains(&r) {
            rows.push(r);
        }
        if !cols.contains(&c) {
            cols.push(c);
        }
    }
    let mut values = vec![vec![None; cols.len()]; rows.len()];
    for row in &table.rows {
        let r = format!("{} / {}", table.get(row, "portfolio_id"), table.get(row, "country"));
        let c = flag_label(&table.get(row, "rag"), &table.get(row, "news"));
        let ri = rows.iter().position(|x| *x == r).expect("row key was inserted");
        let ci = cols.iter().position(|x| *x == c).expect("col key was inserted");
        values[ri][ci] = table.get_f64(row, "mean_var_mult_linear");
    }
    heatmap("Mean linear-channel VaR multiple by country and configuration", &rows, &cols, &values)
}

fn fig_envelopes(table: &Table) -> String {
    let mut labels = Vec::new();
    let mut var_m = Vec::new();
    let mut cvar_m = Vec::new();
    for row in &table.rows {
        let tag = if table.get(row, "source") == "panel" {
            format!("P{}", table.get(row, "portfolio_id"))
        } else {
            "bundled".to_string()
        };
        labels.push(format!(
            "{} {}/{}",
            tag,
            table.get(row, "episode"),
            table.get(row, "baseline_id")
        ));
        var_m.push(table.get_f64(row, "var_mult").unwrap_or(f64::NAN));
        cvar_m.push(table.get_f64(row, "cvar_mult").unwrap_or(f64::NAN));
    }
    grouped_bars(
        "Crisis window tail risk over quiet baselines (multiples)",
        &labels,
        &[("VaR multiple".to_string(), var_m), ("CVaR multiple".to_string(), cvar_m)],
        None,
    )
}

fn fig_scatter_severity(table: &Table) -> String {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &table.rows {
        let key = flag_label(&table.get(row, "rag"), &table.get(row, "news"));
        let x = table.get_f64(row, "shock_l2");
        let y = table.get_f64(row, "var_mult_linear");
        let (Some(x), Some(y)) = (x, y) else { continue };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((x, y)),
            None => groups.push((key, vec![(x, y)])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    scatter(
        "Scenario severity vs linear-channel VaR multiple (portfolio A)",
        "shock L2 norm (pp)",
        "VaR multiple",
        &groups,
    )
}

// ---------------------------------------------------------------------------
// report assembly

pub fn render_report(layout: &Layout, manifest: &mut RunManifest) -> Result<(), CliError> {
    let sources: [(&str, PathBuf, fn(&Table) -> String); 6] = [
        ("fig_baselines", layout.baselines_csv(), fig_baselines),
        ("fig_macro_shocks", layout.macro_by_country(), fig_macro_shocks),
        ("fig_dispersion", layout.dispersion_by_prompt(), fig_dispersion),
        ("fig_heatmap", layout.heatmap_csv(), fig_heatmap),
        ("fig_envelopes", layout.envelopes_csv(), fig_envelopes),
        ("fig_scatter_severity", layout.severity_scatter_csv(), fig_scatter_severity),
    ];

    let mut written: Vec<(String, String)> = Vec::new(); // (figure name, source rel path)
    let mut skipped: Vec<String> = Vec::new();
    let mut recorded: Vec<PathBuf> = Vec::new();

    for (name, source, render) in &sources {
        if !source.exists() {
            skipped.push(source.display().to_string());
            continue;
        }
        let table = read_table(source)?;
        let svg = render(&table);
        let fig_path = layout.figure(name);
        if let Some(dir) = fig_path.parent() {
            fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        fs::write(&fig_path, svg).map_err(|e| anyhow::anyhow!("writing {}: {e}", fig_path.display()))?;
        let rel = source.strip_prefix(layout.root()).unwrap_or(source).display().to_string();
        written.push((name.to_string(), rel));
        recorded.push(fig_path);
    }

    // summary page: tables registered so far, figures, headline crossrun numbers
    let mut md = String::new();
    md.push_str("# Run summary\n\n");
    let _ = writeln!(md, "Workspace: `{}`\n", manifest.stable.workspace_tag);

    md.push_str("## Figures\n\n");
    if written.is_empty() {
        md.push_str("(none rendered)\n");
    }
    for (name, source) in &written {
        let _ = writeln!(md, "- `{name}.svg` — derived from `{source}`");
    }
    md.push('\n');

    let crossrun_path = layout.risk_crossrun();
    if crossrun_path.exists() {
        let table = read_table(&crossrun_path)?;
        md.push_str("## Channel multiples by configuration\n\n");
        md.push_str("| model | rag | news | VaR mult (linear) | CVaR mult (linear) | VaR mult (nonlinear) | n |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for row in &table.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                table.get(row, "model"),
                table.get(row, "rag"),
                table.get(row, "news"),
                table
                    .get_f64(row, "var_linear_mean")
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                table
                    .get_f64(row, "cvar_linear_mean")
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                table
                    .get_f64(row, "var_nonlinear_mean")
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                table.get(row, "n"),
            );
        }
        md.push('\n');
    }

    md.push_str("## Registered artifacts\n\n");
    md.push_str("| artifact | sha256 (first 12) | rows |\n|---|---|---|\n");
    for (key, entry) in &manifest.stable.entries {
        let _ = writeln!(
            md,
            "| `{key}` | `{}` | {} |",
            &entry.sha256[..12.min(entry.sha256.len())],
            entry.row_count.map(|n| n.to_string()).unwrap_or_else(|| "-".into())
        );
    }
    md.push('\n');

    if !skipped.is_empty() {
        md.push_str("## Missing inputs\n\n");
        for s in &skipped {
            let _ = writeln!(md, "- `{s}`");
        }
        md.push('\n');
    }

    let summary_path = layout.summary_md();
    if let Some(dir) = summary_path.parent() {
        fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    fs::write(&summary_path, md).map_err(|e| anyhow::anyhow!("{e}"))?;
    recorded.push(summary_path);

    for path in &recorded {
        manifest
            .record_file(layout.root(), path)
            .map_err(|e| anyhow::anyhow!("hashing {}: {e}", path.display()))?;
    }
    println!("report: {} figures rendered, {} inputs missing", written.len(), skipped.len());

    if skipped.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!(
            "report sources not found: {}",
            skipped.join(", ")
        )))
    }
}
