//! CSV and SVG emitters. Everything here is deterministic; wall-clock
//! figures never reach these files.

use std::fmt::Write as _;

use adamerge_core::runtime::RunTrace;

/// `image_id,layer,n_before,r,sbar,z`
pub fn trace_csv(traces: &[RunTrace]) -> String {
    let mut out = String::from("image_id,layer,n_before,r,sbar,z\n");
    for (i, t) in traces.iter().enumerate() {
        for l in &t.layers {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                l.layer,
                l.n_before,
                l.r,
                opt(l.sbar),
                opt(l.z)
            );
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub method: String,
    pub r: usize,
    pub flops_g: f64,
    pub reduction_pct: f64,
    pub mean_merges: f64,
    pub mean_final_tokens: f64,
    /// Share of images whose top-1 class matches the unmerged model.
    pub agreement_pct: f64,
    pub logit_cosine: f64,
    pub accuracy_pct: Option<f64>,
    pub wall_ms: f64,
}

pub const COMPARE_HEADER: &str =
    "config,method,r,flops_g,flops_reduction_pct,mean_merges,mean_final_tokens,top1_agreement_pct,logit_cosine,accuracy_pct";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.6},{}",
            r.label,
            r.method,
            r.r,
            r.flops_g,
            r.reduction_pct,
            r.mean_merges,
            r.mean_final_tokens,
            r.agreement_pct,
            r.logit_cosine,
            r.accuracy_pct.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
    }
    out
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!(
        "{:<16} {:>9} {:>8} {:>10} {:>10} {:>9} {:>9} {:>10}\n",
        "config", "FLOPs(G)", "FLOPs↓", "merges", "agree%", "cos", "acc%", "wall(ms)"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>7.2}% {:>10.2} {:>10.2} {:>9.5} {:>9} {:>10.2}",
            r.label,
            r.flops_g,
            r.reduction_pct,
            r.mean_merges,
            r.agreement_pct,
            r.logit_cosine,
            r.accuracy_pct.map_or("n/a".to_string(), |a| format!("{a:.2}")),
            r.wall_ms
        );
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of FLOPs against top-1 agreement, one polyline per method.
pub fn compare_svg(rows: &[CompareRow]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.flops_g).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.agreement_pct).collect();
    let (x0, x1) = padded_range(&xs);
    let (y0, y1) = padded_range(&ys);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.1}</text>"#,
            px(fx),
            h - pad + 18.0,
            pad - 6.0,
            py(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">FLOPs (G)</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">top-1 agreement with unmerged model (%)</text>"#,
        h / 2.0,
        h / 2.0
    );

    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for (m, method) in methods.iter().enumerate() {
        let color = PALETTE[m % PALETTE.len()];
        let mut pts: Vec<&CompareRow> = rows.iter().filter(|r| r.method == *method).collect();
        pts.sort_by(|a, b| a.flops_g.total_cmp(&b.flops_g));
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.flops_g), py(r.agreement_pct)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="method" data-method="{method}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for r in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{}</title></circle>"#,
                px(r.flops_g),
                py(r.agreement_pct),
                r.label
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{method}</text>"#,
            w - pad - 80.0,
            pad + 16.0 * m as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn padded_range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Per-layer cell state of the original patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCell {
    pub layer: usize,
    pub token: usize,
    pub merged: bool,
    /// Salience of the token carrying this patch as it entered the layer;
    /// `None` once the patch was consumed earlier.
    pub salience: Option<f64>,
    pub merged_into: Option<usize>,
}

/// Survived / merged state of every original patch after each layer's
/// merge step.
pub fn merge_mask(trace: &RunTrace) -> Vec<Vec<MaskCell>> {
    let n = trace.n_initial;
    let mut consumed: Vec<Option<usize>> = vec![None; n];
    let mut out = Vec::with_capacity(trace.layers.len());
    for l in &trace.layers {
        let mut sal: Vec<Option<f64>> = vec![None; n];
        if let Some(snap) = &l.snapshot {
            for (o, s) in snap.origins.iter().zip(&snap.salience) {
                sal[*o] = Some(*s);
            }
        }
        for m in &l.merges {
            consumed[m.source] = Some(m.dest);
        }
        out.push(
            (0..n)
                .map(|p| MaskCell {
                    layer: l.layer,
                    token: p,
                    merged: consumed[p].is_some(),
                    salience: sal[p],
                    merged_into: consumed[p],
                })
                .collect(),
        );
    }
    out
}

pub fn grid_side(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

/// `layer,token,row,col,state,salience,merged_into`
pub fn mask_csv(mask: &[Vec<MaskCell>]) -> String {
    let side = grid_side(mask.first().map_or(0, |l| l.len()));
    let mut out = String::from("layer,token,row,col,state,salience,merged_into\n");
    for layer in mask {
        for c in layer {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.layer,
                c.token,
                c.token / side,
                c.token % side,
                if c.merged { "merged" } else { "survived" },
                c.salience.map(|s| format!("{s:.6}")).unwrap_or_default(),
                c.merged_into.map(|d| d.to_string()).unwrap_or_default()
            );
        }
    }
    out
}

fn heat(s: f64) -> String {
    // white → dark orange
    let s = s.clamp(0.0, 1.0);
    let g = (255.0 - 160.0 * s) as u8;
    let b = (255.0 - 235.0 * s) as u8;
    format!("#ff{g:02x}{b:02x}")
}

/// Top row: survived (green) / merged (red) grid per layer. Bottom row:
/// salience heat of each patch as the layer saw it.
pub fn mask_svg(mask: &[Vec<MaskCell>]) -> String {
    let n = mask.first().map_or(0, |l| l.len());
    let side = grid_side(n);
    let cell = 6.0;
    let panel = side as f64 * cell;
    let gap = 14.0;
    let top = 24.0;
    let w = mask.len().max(1) as f64 * (panel + gap) + gap;
    let h = top + 2.0 * (panel + gap) + gap;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (l, layer) in mask.iter().enumerate() {
        let x0 = gap + l as f64 * (panel + gap);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">layer {l}</text>"#, top - 8.0);
        let _ = writeln!(s, r#"<g class="mask" data-layer="{l}">"#);
        for c in layer {
            let (row, col) = (c.token / side, c.token % side);
            let fill = if c.merged { "#d62728" } else { "#2ca02c" };
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{fill}"/>"#,
                x0 + col as f64 * cell,
                top + row as f64 * cell
            );
        }
        s.push_str("</g>\n");
        let y0 = top + panel + gap;
        let _ = writeln!(s, r#"<g class="salience" data-layer="{l}">"#);
        for c in layer {
            let (row, col) = (c.token / side, c.token % side);
            let fill = c.salience.map_or("#cccccc".to_string(), heat);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{fill}"/>"#,
                x0 + col as f64 * cell,
                y0 + row as f64 * cell
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
