//! Gated cost matrices and the optimal assignment solver.
//!
//! The solver returns a matching of maximum cardinality over the allowed
//! entries and, among those, one of minimum total cost. Ties between equal-cost
//! optima are resolved towards the lexicographically smallest list of
//! `(row, col)` pairs.
//!
//! Internally the `R x C` problem is embedded in an `(R + C)`-square problem:
//! every row and column gets a private dummy partner at a penalty `P` larger
//! than any achievable difference in real cost, so leaving an entry unmatched
//! is only chosen when no larger matching exists. The square problem is solved
//! with the shortest-augmenting-path Hungarian method, whose dual potentials
//! identify the tight edges on which every optimal matching lives.

/// Marker for a gated-out entry.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Dense cost matrix with labelled rows and columns.
///
/// `rows[r]` and `cols[c]` carry whatever index the caller wants to map the
/// entry back to (tracklet and detection positions for the tracker).
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cost: Vec<f64>,
}

impl CostMatrix {
    /// Builds a matrix from row-major `cost`. Non-finite entries are stored as
    /// [`FORBIDDEN`].
    ///
    /// Panics when `cost.len() != rows.len() * cols.len()`.
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, mut cost: Vec<f64>) -> Self {
        assert_eq!(
            cost.len(),
            rows.len() * cols.len(),
            "cost matrix has {} entries for a {}x{} shape",
            cost.len(),
            rows.len(),
            cols.len()
        );
        for c in &mut cost {
            if !c.is_finite() {
                *c = FORBIDDEN;
            }
        }
        Self { rows, cols, cost }
    }

    /// Matrix with rows labelled `0..n` and columns `0..m`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged cost matrix");
        Self::new(
            (0..rows.len()).collect(),
            (0..n_cols).collect(),
            rows.concat(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cost[r * self.cols.len() + c]
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        self.get(r, c) == FORBIDDEN
    }
}

/// Result of [`hungarian_solve`]: matrix positions sorted by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// Pairs translated through the matrix labels.
    pub fn labelled(&self, m: &CostMatrix) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .map(|&(r, c)| (m.rows[r], m.cols[c]))
            .collect()
    }
}

/// Square view of the padded problem.
struct Padded<'a> {
    m: &'a CostMatrix,
    n_rows: usize,
    n_cols: usize,
    penalty: f64,
}

impl Padded<'_> {
    fn size(&self) -> usize {
        self.n_rows + self.n_cols
    }

    fn cost(&self, i: usize, j: usize) -> f64 {
        match (i < self.n_rows, j < self.n_cols) {
            (true, true) => self.m.get(i, j),
            (true, false) if j - self.n_cols == i => self.penalty,
            (false, true) if i - self.n_rows == j => self.penalty,
            (false, false) => 0.0,
            _ => FORBIDDEN,
        }
    }
}

/// Optimal assignment over the allowed entries of `m`.
pub fn hungarian_solve(m: &CostMatrix) -> Assignment {
    let (n_rows, n_cols) = (m.n_rows(), m.n_cols());
    let mut spread = 0.0;
    let mut any_allowed = false;
    for r in 0..n_rows {
        let row_max = (0..n_cols)
            .map(|c| m.get(r, c))
            .filter(|c| c.is_finite())
            .map(f64::abs)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        if let Some(v) = row_max {
            any_allowed = true;
            spread += v;
        }
    }
    if !any_allowed {
        return Assignment::empty();
    }
    let padded = Padded {
        m,
        n_rows,
        n_cols,
        penalty: 1.0 + spread,
    };
    let (mut row_match, u, v) = solve_square(&padded);
    let tol = 1e-12 * (1.0 + padded.penalty) * padded.size() as f64;
    lexicographic_refine(&padded, &mut row_match, &u, &v, tol);

    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for (r, &c) in row_match.iter().enumerate().take(n_rows) {
        if c < n_cols {
            pairs.push((r, c));
            total_cost += m.get(r, c);
        }
    }
    Assignment { pairs, total_cost }
}

/// Shortest-augmenting-path Hungarian method on the square padded problem.
///
/// Returns the column matched to each row and the dual potentials `(u, v)`
/// with `cost(i, j) - u[i] - v[j] >= 0` everywhere and `== 0` on the matching.
fn solve_square(p: &Padded<'_>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = p.size();
    const NONE: usize = usize::MAX;
    // Index 0 of `v`/`col_owner` is the virtual column of the textbook method.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 0..n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let c = p.cost(i0, j - 1);
                if c.is_finite() {
                    let cur = c - u[i0 + 1] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != NONE, "padded problem always admits a perfect matching");
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j] + 1] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == NONE {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_match = vec![NONE; n];
    for j in 1..=n {
        row_match[col_owner[j]] = j - 1;
    }
    (row_match, u[1..].to_vec(), v[1..].to_vec())
}

/// Moves the matching to the lexicographically smallest perfect matching of
/// the tight-edge subgraph, fixing real rows one at a time.
fn lexicographic_refine(
    p: &Padded<'_>,
    row_match: &mut [usize],
    u: &[f64],
    v: &[f64],
    tol: f64,
) {
    let n = p.size();
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    let c = p.cost(i, j);
                    c.is_finite() && (c - u[i] - v[j]).abs() <= tol
                })
                .collect()
        })
        .collect();
    let mut col_match = vec![0usize; n];
    for (i, &j) in row_match.iter().enumerate() {
        col_match[j] = i;
    }

    for row in 0..p.n_rows {
        let current = row_match[row];
        // Real columns rank before the dummy (unmatched) option.
        let limit = current.min(p.n_cols);
        for &cand in tight[row].iter().take_while(|&&j| j < limit) {
            let mate = col_match[cand];
            if mate < row {
                continue;
            }
            if let Some(path) = alternating_path(&tight, row_match, &col_match, row, mate, current)
            {
                // path: rows r_0 = mate, r_1, ... with new columns c_0, c_1, ...
                row_match[row] = cand;
                col_match[cand] = row;
                for (r, c) in path {
                    row_match[r] = c;
                    col_match[c] = r;
                }
                break;
            }
        }
    }
}

/// Breadth-first search for an alternating path that lets `start` give up its
/// column and ends at column `target`. Rows `< fixed` and `fixed` itself are
/// excluded. Returns `(row, new column)` re-assignments.
fn alternating_path(
    tight: &[Vec<usize>],
    row_match: &[usize],
    col_match: &[usize],
    fixed: usize,
    start: usize,
    target: usize,
) -> Option<Vec<(usize, usize)>> {
    let n = tight.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(r) = queue.pop_front() {
        for &c in &tight[r] {
            if c == row_match[r] {
                continue;
            }
            if c == target {
                let mut path = vec![(r, c)];
                let mut cur = r;
                while let Some((prev, col)) = parent[cur] {
                    path.push((prev, col));
                    cur = prev;
                }
                return Some(path);
            }
            let next = col_match[c];
            if next <= fixed || seen[next] {
                continue;
            }
            seen[next] = true;
            parent[next] = Some((r, c));
            queue.push_back(next);
        }
    }
    None
}
