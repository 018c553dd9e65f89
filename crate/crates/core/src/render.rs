//! SVG overlay of a frame: class colors, skeleton nodes, start, goal and
//! trajectory nodes. One SVG unit is one cell, centered on integer coords.

use std::fmt::Write as _;
use std::path::Path;

use crate::grid::{ClassId, Frame};
use crate::planner::Trajectory;
use crate::skeleton::SkeletonGraph;
use crate::Cell;

pub const NODE_COLOR: &str = "#1f5fff";
pub const START_COLOR: &str = "#ff4fb0";
pub const GOAL_COLOR: &str = "#1fc23a";

pub fn class_color(c: ClassId) -> &'static str {
    match c {
        ClassId::Unknown => "#202020",
        ClassId::Road => "#808080",
        ClassId::Sidewalk => "#d8c8a8",
        ClassId::Building => "#b04030",
        ClassId::Fence => "#c09040",
        ClassId::Vegetation => "#3a8a3a",
        ClassId::Vehicle => "#3050c0",
        ClassId::Pedestrian => "#e0d020",
        ClassId::Other => "#606060",
    }
}

fn marker(out: &mut String, x: f64, y: f64, r: f64, color: &str, role: &str) {
    let _ = writeln!(
        out,
        r#"<circle class="marker {role}" cx="{x:.3}" cy="{y:.3}" r="{r}" fill="{color}"/>"#
    );
}

/// Builds the SVG document. Markers: one per skeleton node, one per
/// trajectory state, the start pose and (if given) the goal.
pub fn svg_string(
    frame: &Frame,
    graph: Option<&SkeletonGraph>,
    trajectory: Option<&Trajectory>,
    goal: Option<Cell>,
) -> String {
    let g = &frame.grid;
    let (w, h) = (g.width(), g.height());
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.5 -0.5 {w} {h}" width="{}" height="{}" shape-rendering="crispEdges">"#,
        w * 3,
        h * 3
    );
    let _ = writeln!(out, r#"<g class="map">"#);
    let _ = writeln!(
        out,
        r#"<rect x="-0.5" y="-0.5" width="{w}" height="{h}" fill="{}"/>"#,
        class_color(ClassId::Unknown)
    );
    for y in 0..h {
        let mut x = 0;
        while x < w {
            let c = g.get(x, y);
            let start = x;
            while x < w && g.get(x, y) == c {
                x += 1;
            }
            if c != ClassId::Unknown {
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{}" height="1" fill="{}"/>"#,
                    start as f64 - 0.5,
                    y as f64 - 0.5,
                    x - start,
                    class_color(c)
                );
            }
        }
    }
    let _ = writeln!(out, "</g>");
    if let Some(graph) = graph {
        let _ = writeln!(out, r#"<g class="skeleton">"#);
        for e in &graph.edges {
            let a = &graph.nodes[e.a];
            let b = &graph.nodes[e.b];
            let mut pts = format!("{},{}", a.x, a.y);
            for (x, y) in &e.polyline {
                let _ = write!(pts, " {x},{y}");
            }
            let _ = write!(pts, " {},{}", b.x, b.y);
            let _ = writeln!(
                out,
                r#"<polyline points="{pts}" fill="none" stroke="{NODE_COLOR}" stroke-width="0.6" stroke-opacity="0.5"/>"#
            );
        }
        for n in &graph.nodes {
            marker(&mut out, n.x as f64, n.y as f64, 1.5, NODE_COLOR, "node");
        }
        let _ = writeln!(out, "</g>");
    }
    if let Some(t) = trajectory {
        let _ = writeln!(out, r#"<g class="trajectory">"#);
        for s in &t.states {
            marker(&mut out, s.px, s.py, 1.0, NODE_COLOR, "path");
        }
        let _ = writeln!(out, "</g>");
    }
    marker(&mut out, frame.pose.px, frame.pose.py, 2.5, START_COLOR, "start");
    if let Some((x, y)) = goal {
        marker(&mut out, x as f64, y as f64, 2.5, GOAL_COLOR, "goal");
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_svg(
    frame: &Frame,
    graph: Option<&SkeletonGraph>,
    trajectory: Option<&Trajectory>,
    goal: Option<Cell>,
    path: impl AsRef<Path>,
) -> std::io::Result<()> {
    std::fs::write(path, svg_string(frame, graph, trajectory, goal))
}
