//! Static renders of policies and runs: text grids and SVG.

use std::fmt::Write;

use crate::mdp::{Action, Cell, LabeledMdp};
use crate::planner::{extract_policy, Policy, QTable};
use crate::runtime::TrajectoryReport;

const CELL_PX: usize = 48;

/// One glyph per cell, top row first.
pub fn render_policy(mdp: &LabeledMdp, policy: &Policy) -> String {
    grid(mdp, |c| policy.action(c).glyph().to_string())
}

/// Like [`render_policy`] for the greedy policy of `table`; with `color`,
/// each glyph gets an ANSI background shaded by its greedy value.
pub fn render_table(mdp: &LabeledMdp, table: &QTable, color: bool) -> String {
    let policy = extract_policy(table);
    if !color {
        return render_policy(mdp, &policy);
    }
    let (lo, hi) = policy.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    grid(mdp, |c| {
        let v = policy.values[mdp.index(c)];
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
        // 232..=255 is the greyscale ramp.
        let shade = 232 + (t * 23.0).round() as u8;
        let fg = if t > 0.5 { 16 } else { 255 };
        format!("\x1b[48;5;{shade}m\x1b[38;5;{fg}m{}\x1b[0m", policy.action(c).glyph())
    })
}

fn order_glyph(i: usize) -> char {
    std::char::from_digit((i % 36) as u32, 36).expect("digit below 36")
}

/// Visited cells show the step at which they were first reached (base 36),
/// unvisited labeled cells `+`, the rest `.`.
pub fn render_report(mdp: &LabeledMdp, report: &TrajectoryReport) -> String {
    let mut first = vec![None; mdp.num_cells()];
    for (i, step) in report.execution.steps.iter().enumerate() {
        first[mdp.index(step.cell)].get_or_insert(i);
    }
    let mut out = grid(mdp, |c| match first[mdp.index(c)] {
        Some(i) => order_glyph(i).to_string(),
        None if mdp.label(c).is_empty() => ".".into(),
        None => "+".into(),
    });
    let _ = writeln!(out, "path: {}", report.execution.steps.iter().map(|s| s.cell.to_string()).collect::<Vec<_>>().join(" "));
    out
}

fn grid(mdp: &LabeledMdp, mut glyph: impl FnMut(Cell) -> String) -> String {
    let mut out = String::new();
    for y in (0..mdp.height()).rev() {
        let row: Vec<String> = (0..mdp.width()).map(|x| glyph(Cell::new(x, y))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn palette(i: usize) -> &'static str {
    const COLORS: [&str; 8] = ["#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5"];
    COLORS[i % COLORS.len()]
}

fn centre(mdp: &LabeledMdp, c: Cell) -> (usize, usize) {
    (c.x * CELL_PX + CELL_PX / 2, (mdp.height() - 1 - c.y) * CELL_PX + CELL_PX / 2)
}

fn svg_grid(mdp: &LabeledMdp, body: &mut String) {
    for c in mdp.cells() {
        let (x, y) = (c.x * CELL_PX, (mdp.height() - 1 - c.y) * CELL_PX);
        let fill = mdp.region_at(c).map_or("#ffffff", |g| palette(mdp.region(g).label.0 as usize));
        let _ = writeln!(body, r##"<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="{fill}" stroke="#999"/>"##);
        let label = mdp.label(c);
        if !label.is_empty() {
            let _ = writeln!(
                body,
                r##"<text x="{}" y="{}" font-size="10" fill="#333">{}</text>"##,
                x + 3,
                y + 12,
                mdp.label_names(label).join(",")
            );
        }
    }
}

fn svg_wrap(mdp: &LabeledMdp, body: &str) -> String {
    let (w, h) = (mdp.width() * CELL_PX, mdp.height() * CELL_PX);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n{body}</svg>\n"
    )
}

/// Region-coloured grid with one arrow (or dot for Stay) per cell.
pub fn policy_svg(mdp: &LabeledMdp, policy: &Policy) -> String {
    let mut body = String::new();
    svg_grid(mdp, &mut body);
    let r = CELL_PX / 4;
    for c in mdp.cells() {
        let (cx, cy) = centre(mdp, c);
        let (dx, dy): (isize, isize) = match policy.action(c) {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => {
                let _ = writeln!(body, r##"<circle cx="{cx}" cy="{cy}" r="5" fill="#222"/>"##);
                continue;
            }
        };
        let (x1, y1) = (cx as isize - dx * r as isize, cy as isize - dy * r as isize);
        let (x2, y2) = (cx as isize + dx * r as isize, cy as isize + dy * r as isize);
        let _ = writeln!(
            body,
            r##"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#222" stroke-width="2" marker-end="url(#head)"/>"##
        );
    }
    let defs = r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="3" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#222"/></marker></defs>
"##;
    svg_wrap(mdp, &format!("{defs}{body}"))
}

/// Region-coloured grid with the run drawn as a polyline from a start
/// marker; a cross marks a run that did not terminate.
pub fn report_svg(mdp: &LabeledMdp, report: &TrajectoryReport) -> String {
    let mut body = String::new();
    svg_grid(mdp, &mut body);
    let points: Vec<String> = report
        .execution
        .steps
        .iter()
        .map(|s| {
            let (x, y) = centre(mdp, s.cell);
            format!("{x},{y}")
        })
        .collect();
    let _ = writeln!(body, r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="3"/>"##, points.join(" "));
    let (sx, sy) = centre(mdp, report.start);
    let _ = writeln!(body, r##"<circle cx="{sx}" cy="{sy}" r="6" fill="#1f4e9c"/>"##);
    let (ex, ey) = centre(mdp, report.execution.last_cell());
    if report.terminated() {
        let _ = writeln!(body, r##"<rect x="{}" y="{}" width="12" height="12" fill="#1f4e9c"/>"##, ex - 6, ey - 6);
    } else {
        let _ = writeln!(
            body,
            r##"<path d="M{} {} L{} {} M{} {} L{} {}" stroke="#c00" stroke-width="3"/>"##,
            ex - 8,
            ey - 8,
            ex + 8,
            ey + 8,
            ex - 8,
            ey + 8,
            ex + 8,
            ey - 8
        );
    }
    svg_wrap(mdp, &body)
}
