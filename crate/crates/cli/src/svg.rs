//! SVG 1.1 rendering of a routed problem: bars in black, one colour per
//! net for routes, dashed red lines for open pairs and red boxes for
//! instTerms without a track.

use std::fmt::Write as _;

use wsproute::problem::{Problem, TRACKS_PER_ROW};
use wsproute::router::RouteResult;

use crate::report::SolutionFile;

const UNIT: u32 = 20;
const MARGIN: u32 = 20;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#393b79"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Net colour, stable across runs.
pub fn net_colour(net: u32) -> &'static str {
    PALETTE[net as usize % PALETTE.len()]
}

pub fn render(problem: &Problem, sol: &SolutionFile) -> String {
    let px = |x: u32| MARGIN + x * UNIT;
    // track 0 at the bottom
    let py = |y: u32| MARGIN + (sol.height.saturating_sub(1) - y.min(sol.height.saturating_sub(1))) * UNIT;
    let w = sol.width * UNIT + 2 * MARGIN;
    let h = sol.height.saturating_sub(1) * UNIT + 2 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>{} cost={} wl={} opens={}</title>", escape(&sol.problem), sol.cost, sol.wirelength, sol.opens);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r##"<g class="tracks" stroke="#e6e6e6" stroke-width="1">"##);
    for y in 0..sol.height {
        let colour = if y % TRACKS_PER_ROW as u32 == 0 { r##" stroke="#b0b0b0""## } else { "" };
        let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"{colour}/>"#, px(0), py(y), px(sol.width), py(y));
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="routes" fill="none" stroke-width="3" stroke-linecap="round">"#);
    for (pair, r) in sol.pairs.iter().zip(&sol.results) {
        if let RouteResult::Routed { path } = r {
            let pts: Vec<String> = path.corners().iter().map(|&(x, y)| format!("{},{}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="route" data-net="{}" stroke="{}" points="{}"/>"#,
                pair.net,
                net_colour(pair.net),
                pts.join(" ")
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="bars" fill="black">"#);
    for b in &sol.bars {
        let len = (b.x2 - b.x1) * UNIT;
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-id="{}" data-net="{}" x="{}" y="{}" width="{}" height="6"/>"#,
            b.id,
            b.net,
            px(b.x1) - 3,
            py(b.y) - 3,
            len + 6
        );
    }
    let _ = writeln!(s, "</g>");

    let centre = |id: u32| {
        sol.bars.iter().find(|b| b.id == id).map(|b| ((px(b.x1) + px(b.x2)) / 2, py(b.y)))
    };
    let _ = writeln!(s, r#"<g class="opens" stroke="red" stroke-width="2" stroke-dasharray="4,3">"#);
    for (pair, r) in sol.pairs.iter().zip(&sol.results) {
        if let (RouteResult::Open, Some(a), Some(b)) = (r, centre(pair.a), centre(pair.b)) {
            let _ = writeln!(s, r#"<line class="open" x1="{}" y1="{}" x2="{}" y2="{}"/>"#, a.0, a.1, b.0, b.1);
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="unassigned" fill="none" stroke="red" stroke-width="2">"#);
    for id in &sol.unassigned {
        if let Some(it) = problem.instterm(*id) {
            // drawn across the middle track of the instTerm's row
            let y = it.row * TRACKS_PER_ROW as u32 + TRACKS_PER_ROW as u32 / 2;
            let _ = writeln!(
                s,
                r#"<rect class="unassigned" data-id="{id}" x="{}" y="{}" width="{}" height="8"/>"#,
                px(it.x1) - 4,
                py(y) - 4,
                (it.x2 - it.x1) * UNIT + 8
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}
