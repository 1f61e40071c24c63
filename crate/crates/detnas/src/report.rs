//! CSV logs, SVG curves and text reports.

use std::fmt::Write as _;
use std::path::Path;

use detnas_core::evolution::{LogRow, PatternReport, SearchResult};
use detnas_core::supernet::IterationRecord;
use detnas_core::ChoiceKind;

use crate::error::{CliError, CliResult};

pub const SEARCH_LOG_HEADER: [&str; 7] = [
    "iteration",
    "index",
    "architecture",
    "flops",
    "fitness",
    "best_so_far",
    "memo_hit",
];

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Streams search log rows to disk as they are produced.
pub struct SearchLogWriter {
    inner: csv::Writer<std::fs::File>,
}

impl SearchLogWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let mut inner = writer(path)?;
        inner.write_record(SEARCH_LOG_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &LogRow) -> CliResult<()> {
        self.inner.write_record([
            row.iteration.to_string(),
            row.index.to_string(),
            row.architecture.to_string(),
            row.flops.to_string(),
            row.fitness.to_string(),
            row.best_so_far.to_string(),
            u8::from(row.memo_hit).to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::Csv(e.into()))
    }
}

pub fn write_loss_curve(path: &Path, records: &[IterationRecord]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "architecture", "loss", "learning_rate"])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.architecture.to_string(),
            r.loss.to_string(),
            r.learning_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))
}

pub fn write_histogram(path: &Path, bins: &[(u64, u64, usize)]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["flops_low", "flops_high", "count"])?;
    for (lo, hi, n) in bins {
        w.write_record([lo.to_string(), hi.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))
}

/// Equal-width bins over `[min, max]`.
pub fn histogram(values: &[u64], bins: usize) -> Vec<(u64, u64, usize)> {
    let (Some(&lo), Some(&hi)) = (values.iter().min(), values.iter().max()) else {
        return Vec::new();
    };
    let width = ((hi - lo) / bins as u64).max(1);
    let mut out: Vec<(u64, u64, usize)> = (0..bins as u64)
        .map(|b| (lo + b * width, if b + 1 == bins as u64 { hi } else { lo + (b + 1) * width }, 0))
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].2 += 1;
    }
    out
}

pub fn pattern_csv(report: &PatternReport) -> String {
    let mut s = String::from("stage,choice,count,frequency\n");
    for (stage, row) in report.counts.iter().enumerate() {
        for c in ChoiceKind::ALL {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                stage + 1,
                c.symbol(),
                row[c.index()],
                report.frequency(stage, c.index())
            );
        }
    }
    s
}

/// One line per stage: the block count, then a bar per choice.
pub fn pattern_diagram(report: &PatternReport) -> String {
    let mut s = format!("{} architecture(s)\n", report.architectures);
    for (stage, blocks) in report.stage_blocks.iter().enumerate() {
        let _ = write!(s, "stage {} ({blocks} blocks) |", stage + 1);
        for c in ChoiceKind::ALL {
            let f = report.frequency(stage, c.index());
            let bar = "#".repeat((f * 20.0).round() as usize);
            let _ = write!(s, " {:>4} {:<20} {:>5.1}% |", c.symbol(), bar, 100.0 * f);
        }
        s.push('\n');
    }
    s
}

pub fn result_summary(result: &SearchResult, wall_seconds: f64) -> String {
    format!(
        "controller = {}\nbest_architecture = {}\nbest_architecture_symbolic = {}\nbest_fitness = {}\nevaluations = {}\ncomputed_evaluations = {}\nwall_time_seconds = {:.3}\n",
        result.controller.name(),
        result.best_architecture,
        result.best_architecture.symbolic(),
        result.best_fitness,
        result.log.len(),
        result.computed_evaluations(),
        wall_seconds
    )
}

/// Best-so-far curves on shared axes, one polyline per series.
pub fn curves_svg(title: &str, series: &[(&str, Vec<f64>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    const COLOURS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

    let finite = || series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let mut lo = finite().fold(f64::INFINITY, f64::min);
    let mut hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| L + (W - L - R) * i as f64 / (n - 1) as f64;
    let y = |v: f64| T + (H - T - B) * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<polyline points="{L},{T} {L},{} {},{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            L - 6.0,
            y(v) + 4.0
        );
    }
    for k in 0..=4 {
        let i = (n - 1) * k / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(i),
            H - B + 18.0,
            i + 1
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, (L + W - R) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">best fitness</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = T + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            W - R - 110.0,
            W - R - 90.0,
            W - R - 84.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
