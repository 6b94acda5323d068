//! Metric records, CSV emission, and hand-rolled SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("no records to emit")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One evaluation row. Escape-room runs leave the economy columns empty;
/// economy runs leave `agent_returns` sized to the agent count and fill
/// the per-skill and activity columns.
#[derive(Debug, Clone, Default)]
pub struct MetricsRecord {
    pub episode: u64,
    /// Designer welfare on training episodes since the last row.
    pub train_welfare: f64,
    /// Frozen-policy designer welfare, mean over the eval episodes.
    pub test_welfare: f64,
    /// Incentivization cost at test time.
    pub psi: f64,
    pub agent_returns: Vec<f64>,
    pub prod: f64,
    pub eq: f64,
    pub swf: f64,
    pub income_pre: Vec<f64>,
    pub income_post: Vec<f64>,
    pub tax_paid: Vec<f64>,
    pub gathered: Vec<f64>,
    pub built: Vec<f64>,
    pub traded: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
}

/// Fixed column order:
/// episode, train_welfare, test_welfare, psi, prod, eq, swf,
/// agent_returns, income_pre, income_post, tax_paid, gathered, built, traded.
/// Vector-valued columns are `;`-joined.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), OutputError> {
    if records.is_empty() {
        return Err(OutputError::Empty);
    }
    let mut s = String::from(
        "episode,train_welfare,test_welfare,psi,prod,eq,swf,agent_returns,income_pre,income_post,tax_paid,gathered,built,traded\n",
    );
    for r in records {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
            r.episode,
            r.train_welfare,
            r.test_welfare,
            r.psi,
            r.prod,
            r.eq,
            r.swf,
            join(&r.agent_returns),
            join(&r.income_pre),
            join(&r.income_post),
            join(&r.tax_paid),
            join(&r.gathered),
            join(&r.built),
            join(&r.traded),
        )
        .expect("string write");
    }
    fs::write(path, s).map_err(|e| OutputError::Io { path: path.display().to_string(), source: e })
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>, OutputError> {
    let text = fs::read_to_string(path)
        .map_err(|e| OutputError::Io { path: path.display().to_string(), source: e })?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let veccol = |i: usize| -> Vec<f64> {
            cols.get(i)
                .map(|c| c.split(';').filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect())
                .unwrap_or_default()
        };
        let num = |i: usize| cols.get(i).and_then(|c| c.parse().ok()).unwrap_or(0.0);
        out.push(MetricsRecord {
            episode: cols[0].parse().unwrap_or(0),
            train_welfare: num(1),
            test_welfare: num(2),
            psi: num(3),
            prod: num(4),
            eq: num(5),
            swf: num(6),
            agent_returns: veccol(7),
            income_pre: veccol(8),
            income_post: veccol(9),
            tax_paid: veccol(10),
            gathered: veccol(11),
            built: veccol(12),
            traded: veccol(13),
        });
    }
    if out.is_empty() {
        return Err(OutputError::Empty);
    }
    Ok(out)
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Multi-series line chart. Each series is (label, points).
pub fn line_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<(), OutputError> {
    if series.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(OutputError::Empty);
    }
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if (x1 - x0).abs() < 1e-12 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>",
        W / 2.0
    )
    .unwrap();
    // axes
    write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    )
    .unwrap();
    for k in 0..=4 {
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.0}</text>",
            MARGIN - 6.0, sy(yv) + 4.0, yv,
            sx(xv), H - MARGIN + 18.0, xv
        )
        .unwrap();
    }
    write!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" transform=\"rotate(-90 16,{:.1})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{y_label}</text>\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">episode</text>",
        H / 2.0, H / 2.0, W / 2.0, H - 16.0
    )
    .unwrap();
    for (si, (label, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[si % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            d.join(" ")
        )
        .unwrap();
        write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            W - MARGIN + 4.0 - 110.0,
            MARGIN + 16.0 * si as f64 + 4.0
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    fs::write(path, svg)
        .map_err(|e| OutputError::Io { path: path.display().to_string(), source: e })
}

/// Bar chart with one bar per value, labelled by `labels`.
pub fn bar_chart(
    path: &Path,
    title: &str,
    labels: &[String],
    values: &[f64],
) -> Result<(), OutputError> {
    if values.is_empty() {
        return Err(OutputError::Empty);
    }
    let vmax = values.iter().cloned().fold(0.0_f64, f64::max).max(1e-9);
    let n = values.len() as f64;
    let band = (W - 2.0 * MARGIN) / n;
    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        W / 2.0,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    )
    .unwrap();
    for (i, &v) in values.iter().enumerate() {
        let h = (v / vmax) * (H - 2.0 * MARGIN);
        let x = MARGIN + band * i as f64 + band * 0.15;
        let y = H - MARGIN - h;
        write!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#1f77b4\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            band * 0.7,
            x + band * 0.35,
            H - MARGIN + 16.0,
            labels.get(i).cloned().unwrap_or_default(),
            x + band * 0.35,
            y - 4.0,
            v
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    fs::write(path, svg)
        .map_err(|e| OutputError::Io { path: path.display().to_string(), source: e })
}

/// Standard plot set for a metrics CSV: welfare curve, and for economy runs
/// the productivity/equality/SWF curves plus final tax-rate bars.
pub fn emit_plots(
    dir: &Path,
    stem: &str,
    records: &[MetricsRecord],
    final_rates: Option<&[f64]>,
) -> Result<Vec<std::path::PathBuf>, OutputError> {
    if records.is_empty() {
        return Err(OutputError::Empty);
    }
    let mut written = Vec::new();
    let pts = |f: fn(&MetricsRecord) -> f64| -> Vec<(f64, f64)> {
        records.iter().map(|r| (r.episode as f64, f(r))).collect()
    };
    let p = dir.join(format!("{stem}_welfare.svg"));
    line_chart(
        &p,
        "Designer welfare",
        "welfare",
        &[
            ("test".to_string(), pts(|r| r.test_welfare)),
            ("train".to_string(), pts(|r| r.train_welfare)),
        ],
    )?;
    written.push(p);
    if records.iter().any(|r| r.swf != 0.0 || r.prod != 0.0) {
        let p = dir.join(format!("{stem}_economy.svg"));
        line_chart(
            &p,
            "Economy metrics",
            "value",
            &[
                ("swf".to_string(), pts(|r| r.swf)),
                ("prod".to_string(), pts(|r| r.prod)),
                ("eq x100".to_string(), pts(|r| r.eq * 100.0)),
            ],
        )?;
        written.push(p);
    }
    if let Some(rates) = final_rates {
        let labels: Vec<String> = (0..rates.len()).map(|b| format!("b{b}")).collect();
        let p = dir.join(format!("{stem}_tax_rates.svg"));
        bar_chart(&p, "Final marginal tax rates", &labels, rates)?;
        written.push(p);
    }
    Ok(written)
}
