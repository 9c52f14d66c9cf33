//! Unified facade graph: 25x5 tap grid, sensor subset, enrichment edges,
//! and per-node auxiliary features.
//!
//! Nodes are indexed column-wise: `id = col * rows + row` (0-based
//! internally; reports for engineering use may present 1-based labels).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

/// Grid dimensions plus an optional explicit sensor layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphConfig {
    pub rows: usize,
    pub cols: usize,
    /// Global node ids of the instrumented taps; `None` selects the default
    /// 3x8 lattice layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<usize>>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { rows: 25, cols: 5, sensors: None }
    }
}

/// Immutable facade graph shared across the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FacadeGraph {
    pub rows: usize,
    pub cols: usize,
    /// Deduplicated undirected edges as (low, high) pairs, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Ordered instrumented nodes (local sensor index -> global node id).
    pub sensors: Vec<usize>,
    /// Per-node (x, y) in [0,1]^2.
    pub coords: Vec<(f64, f64)>,
}

/// Column-wise node id for (row, col).
pub fn node_id(row: usize, col: usize, rows: usize, cols: usize) -> Result<usize> {
    if row >= rows {
        return Err(Error::config("graph.row", format!("row {row} out of 0..{rows}")));
    }
    if col >= cols {
        return Err(Error::config("graph.col", format!("col {col} out of 0..{cols}")));
    }
    Ok(col * rows + row)
}

/// Inverse of [`node_id`].
pub fn node_pos(id: usize, rows: usize) -> (usize, usize) {
    (id % rows, id / rows)
}

/// Undirected grid edges: each node connects to its right and downward
/// neighbor where these exist.
pub fn build_grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(rows * (cols - 1) + (rows - 1) * cols);
    for col in 0..cols {
        for row in 0..rows {
            let id = col * rows + row;
            if row + 1 < rows {
                edges.push(ordered(id, col * rows + row + 1));
            }
            if col + 1 < cols {
                edges.push(ordered(id, (col + 1) * rows + row));
            }
        }
    }
    edges
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Sensor rows and columns of the default layout for a grid; 8 rows spread
/// over the height and every other column, 3x8 = 24 sensors on the default
/// 25x5 grid.
fn default_layout_axes(rows: usize, cols: usize) -> (Vec<usize>, Vec<usize>) {
    let sensor_cols: Vec<usize> = (0..cols).step_by(2).collect();
    let sensor_rows: Vec<usize> = if rows >= 25 {
        vec![0, 3, 7, 10, 14, 17, 21, 24]
    } else {
        // proportional spread for reduced test grids
        let n = 8.min(rows);
        (0..n).map(|i| if n == 1 { 0 } else { i * (rows - 1) / (n - 1) }).collect()
    };
    (sensor_rows, sensor_cols)
}

/// Deterministic default sensor layout, ordered column-major.
pub fn default_sensor_layout(rows: usize, cols: usize) -> Result<Vec<usize>> {
    let (sensor_rows, sensor_cols) = default_layout_axes(rows, cols);
    let mut sensors = Vec::with_capacity(sensor_rows.len() * sensor_cols.len());
    for &c in &sensor_cols {
        for &r in &sensor_rows {
            sensors.push(node_id(r, c, rows, cols)?);
        }
    }
    let mut dedup = sensors.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != sensors.len() {
        return Err(Error::config("graph.sensors", "default layout produced duplicate sensors"));
    }
    if sensors.len() > rows * cols {
        return Err(Error::config(
            "graph.sensors",
            format!("{} sensors exceed {} nodes", sensors.len(), rows * cols),
        ));
    }
    Ok(sensors)
}

/// Sensor-to-sensor enrichment edges.
///
/// Three rule families: (a) consecutive sensors along the same grid row are
/// chained by column order; (b) consecutive sensors in the middle column are
/// chained vertically; (c) one-lattice-step diagonals between adjacent
/// sensor columns connect consecutive sensor rows both ways. The result is
/// deduplicated (grid edges are removed by the caller's merge).
pub fn build_sensor_edges(sensors: &[usize], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = Vec::new();

    // group sensors by row and by column (positions derived from global ids)
    let pos: Vec<(usize, usize)> = sensors.iter().map(|&s| node_pos(s, rows)).collect();

    // (a) chains along each grid row
    for row in 0..rows {
        let mut in_row: Vec<usize> = pos
            .iter()
            .enumerate()
            .filter(|(_, &(r, _))| r == row)
            .map(|(i, _)| i)
            .collect();
        in_row.sort_by_key(|&i| pos[i].1);
        for w in in_row.windows(2) {
            edges.push(ordered(sensors[w[0]], sensors[w[1]]));
        }
    }

    // (b) vertical chain along the middle column
    let mid = cols / 2;
    let mut in_mid: Vec<usize> = pos
        .iter()
        .enumerate()
        .filter(|(_, &(_, c))| c == mid)
        .map(|(i, _)| i)
        .collect();
    in_mid.sort_by_key(|&i| pos[i].0);
    for w in in_mid.windows(2) {
        edges.push(ordered(sensors[w[0]], sensors[w[1]]));
    }

    // (c) diagonals between adjacent sensor columns: consecutive sensor rows
    // r_i, r_{i+1} within each column pair, both diagonal orientations
    let mut sensor_cols: Vec<usize> = pos.iter().map(|&(_, c)| c).collect();
    sensor_cols.sort_unstable();
    sensor_cols.dedup();
    let mut sensor_rows: Vec<usize> = pos.iter().map(|&(r, _)| r).collect();
    sensor_rows.sort_unstable();
    sensor_rows.dedup();
    let has = |r: usize, c: usize| sensors.iter().any(|&s| node_pos(s, rows) == (r, c));
    for cw in sensor_cols.windows(2) {
        let (c1, c2) = (cw[0], cw[1]);
        for rw in sensor_rows.windows(2) {
            let (r1, r2) = (rw[0], rw[1]);
            if has(r1, c1) && has(r2, c2) {
                edges.push(ordered(c1 * rows + r1, c2 * rows + r2));
            }
            if has(r2, c1) && has(r1, c2) {
                edges.push(ordered(c1 * rows + r2, c2 * rows + r1));
            }
        }
    }

    edges.sort_unstable();
    edges.dedup();
    edges
}

impl FacadeGraph {
    /// Build the unified graph: grid edges merged with sensor enrichment
    /// edges, deduplicated, no self-loops.
    pub fn build(cfg: &GraphConfig) -> Result<Self> {
        if cfg.rows < 1 || cfg.cols < 1 {
            return Err(Error::config("graph", "rows and cols must be >= 1"));
        }
        let n = cfg.rows * cfg.cols;
        let sensors = match &cfg.sensors {
            Some(s) => {
                let mut seen = vec![false; n];
                for &id in s {
                    if id >= n {
                        return Err(Error::config("graph.sensors", format!("sensor id {id} out of {n} nodes")));
                    }
                    if seen[id] {
                        return Err(Error::config("graph.sensors", format!("duplicate sensor id {id}")));
                    }
                    seen[id] = true;
                }
                if s.is_empty() {
                    return Err(Error::config("graph.sensors", "sensor list must not be empty"));
                }
                s.clone()
            }
            None => default_sensor_layout(cfg.rows, cfg.cols)?,
        };
        let mut edges = build_grid_edges(cfg.rows, cfg.cols);
        edges.extend(build_sensor_edges(&sensors, cfg.rows, cfg.cols));
        edges.sort_unstable();
        edges.dedup();
        debug_assert!(edges.iter().all(|&(a, b)| a != b));

        let coords = (0..n)
            .map(|id| {
                let (r, c) = node_pos(id, cfg.rows);
                let x = if cfg.cols > 1 { c as f64 / (cfg.cols - 1) as f64 } else { 0.0 };
                let y = if cfg.rows > 1 { r as f64 / (cfg.rows - 1) as f64 } else { 0.0 };
                (x, y)
            })
            .collect();

        Ok(FacadeGraph { rows: cfg.rows, cols: cfg.cols, edges, sensors, coords })
    }

    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    /// Non-instrumented node ids, ascending.
    pub fn unobserved_nodes(&self) -> Vec<usize> {
        let mut is_sensor = vec![false; self.n_nodes()];
        for &s in &self.sensors {
            is_sensor[s] = true;
        }
        (0..self.n_nodes()).filter(|&i| !is_sensor[i]).collect()
    }

    /// Breadth-first connectivity check.
    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    /// Per-node auxiliary feature matrix [N, 5]:
    /// (x, y, mask_flag, dir_sin, dir_cos).
    pub fn node_features<S: Scalar>(&self, direction_deg: f64, mask_flags: &[bool]) -> Result<Tensor<S>> {
        let n = self.n_nodes();
        if mask_flags.len() != n {
            return Err(Error::shape("node_features", format!("{} flags vs {} nodes", mask_flags.len(), n)));
        }
        let theta = direction_deg.to_radians();
        let (ds, dc) = (theta.sin(), theta.cos());
        let mut data = Vec::with_capacity(n * 5);
        for i in 0..n {
            let (x, y) = self.coords[i];
            data.push(S::from_f64(x));
            data.push(S::from_f64(y));
            data.push(if mask_flags[i] { S::ONE } else { S::ZERO });
            data.push(S::from_f64(ds));
            data.push(S::from_f64(dc));
        }
        Tensor::new(vec![n, 5], data)
    }

    /// JSON export used by `dump-graph`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows,
            "cols": self.cols,
            "nodes": self.n_nodes(),
            "coords": self.coords.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|&(a, b)| vec![a, b]).collect::<Vec<_>>(),
            "sensors": self.sensors,
        })
    }
}
