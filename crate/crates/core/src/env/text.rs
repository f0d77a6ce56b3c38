//! Plain-text maze layout.
//!
//! ```text
//! maze <width> <height> discrete|continuous
//! <2*height+1 rows of 2*width+1 bytes>
//! ```
//!
//! Row 0 is the top border, so the first cell row is `y = height - 1`. Cell
//! `(x, y)` sits at row `2*(height-1-y)+1`, column `2*x+1` and holds `.`
//! (plain), `S` (start), `G` (desired region) or `*` (start and desired).
//! Odd/even positions between two cells hold `#` for a wall or a space for
//! an open edge. Corners and the border are always `#`. Trailing spaces may
//! be trimmed; lines starting with `;` are comments.

use std::collections::BTreeSet;

use super::{Cell, MazeSpec, Wall};
use crate::error::{Error, Result};

pub fn render_maze(maze: &MazeSpec) -> String {
    let (w, h) = (maze.width(), maze.height());
    let mut grid = vec![vec![b'#'; 2 * w + 1]; 2 * h + 1];
    for c in maze.cells() {
        let (r, col) = (2 * (h - 1 - c.y as usize) + 1, 2 * c.x as usize + 1);
        let start = c == maze.start();
        let desired = maze.desired_region().contains(&c);
        grid[r][col] = match (start, desired) {
            (true, true) => b'*',
            (true, false) => b'S',
            (false, true) => b'G',
            (false, false) => b'.',
        };
        let right = Cell::new(c.x + 1, c.y);
        if maze.contains(right) && !maze.walls().contains(&Wall::between(c, right)) {
            grid[r][col + 1] = b' ';
        }
        let up = Cell::new(c.x, c.y + 1);
        if maze.contains(up) && !maze.walls().contains(&Wall::between(c, up)) {
            grid[r - 1][col] = b' ';
        }
    }
    let kind = if maze.is_continuous() { "continuous" } else { "discrete" };
    let mut out = format!("maze {w} {h} {kind}\n");
    for row in grid {
        out.push_str(std::str::from_utf8(&row).expect("ascii"));
        out.push('\n');
    }
    out
}

pub fn parse_maze(text: &str) -> Result<MazeSpec> {
    let err = |line: usize, message: String| Error::MazeFormat { line, message };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.starts_with(';'));

    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [tag, w, h, kind] = fields[..] else {
        return Err(err(hl, "expected `maze <width> <height> discrete|continuous`".into()));
    };
    if tag != "maze" {
        return Err(err(hl, format!("unknown header `{tag}`")));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| err(hl, format!("invalid dimension `{s}`")))
    };
    let (w, h) = (parse_dim(w)?, parse_dim(h)?);
    let continuous = match kind {
        "discrete" => false,
        "continuous" => true,
        other => return Err(err(hl, format!("unknown maze kind `{other}`"))),
    };

    let rows: Vec<(usize, Vec<u8>)> = lines
        .take_while(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut b = l.as_bytes().to_vec();
            if b.len() < 2 * w + 1 {
                b.resize(2 * w + 1, b' ');
            }
            (n, b)
        })
        .collect();
    if rows.len() != 2 * h + 1 {
        return Err(err(hl, format!("expected {} grid rows, found {}", 2 * h + 1, rows.len())));
    }

    let mut walls = BTreeSet::new();
    let mut start = None;
    let mut desired = BTreeSet::new();
    for (r, (line, row)) in rows.iter().enumerate() {
        if row.len() != 2 * w + 1 {
            return Err(err(*line, format!("expected {} columns, found {}", 2 * w + 1, row.len())));
        }
        for (col, &b) in row.iter().enumerate() {
            let border = r == 0 || col == 0 || r == 2 * h || col == 2 * w;
            let cell_at = |rr: usize, cc: usize| Cell::new((cc / 2) as i32, (h - 1 - rr / 2) as i32);
            match (r % 2, col % 2) {
                _ if border || (r % 2 == 0 && col % 2 == 0) => {
                    if b != b'#' {
                        return Err(err(*line, format!("column {}: expected `#`", col + 1)));
                    }
                }
                (1, 1) => {
                    let c = cell_at(r, col);
                    match b {
                        b'.' => {}
                        b'S' | b'*' | b'G' => {
                            if b != b'G' && start.replace(c).is_some() {
                                return Err(err(*line, "more than one start cell".into()));
                            }
                            if b != b'S' {
                                desired.insert(c);
                            }
                        }
                        other => {
                            return Err(err(*line, format!("column {}: unexpected cell byte {:?}", col + 1, other as char)))
                        }
                    }
                }
                (ro, _) => {
                    let (a, n) = if ro == 1 {
                        (cell_at(r, col - 1), cell_at(r, col + 1))
                    } else {
                        (cell_at(r - 1, col), cell_at(r + 1, col))
                    };
                    match b {
                        b'#' => {
                            walls.insert(Wall::between(a, n));
                        }
                        b' ' => {}
                        other => {
                            return Err(err(*line, format!("column {}: unexpected edge byte {:?}", col + 1, other as char)))
                        }
                    }
                }
            }
        }
    }
    let start = start.ok_or_else(|| err(hl, "no start cell".into()))?;
    MazeSpec::new(w, h, walls, start, desired, continuous).map_err(|e| err(hl, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_maze;

    #[test]
    fn round_trip_generated() {
        for seed in 0..20 {
            let maze = generate_maze(seed, 1 + (seed as usize % 7), 1 + (seed as usize % 5), 0.3)
                .with_continuous(seed % 2 == 0);
            let text = render_maze(&maze);
            assert_eq!(parse_maze(&text).unwrap(), maze, "seed {seed}\n{text}");
        }
    }

    #[test]
    fn hand_written_layout() {
        let text = "\
; two rooms
maze 3 2 discrete
#######
#G#. .#
# ### #
#S . ..
#######
";
        // the last cell row has a stray byte in the border
        assert!(parse_maze(text).is_err());
        let text = "\
maze 3 2 discrete
#######
#G#. .#
# ### #
#S . .#
#######
";
        let maze = parse_maze(text).unwrap();
        assert_eq!(maze.start(), Cell::new(0, 0));
        assert_eq!(maze.desired_region(), &BTreeSet::from([Cell::new(0, 1)]));
        let expected = BTreeSet::from([
            Wall::between(Cell::new(0, 1), Cell::new(1, 1)),
            Wall::between(Cell::new(1, 0), Cell::new(1, 1)),
        ]);
        assert_eq!(maze.walls(), &expected);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_maze("").is_err());
        assert!(parse_maze("maze 2 x discrete\n").is_err());
        assert!(parse_maze("maze 1 1 hexagonal\n###\n#*#\n###\n").is_err());
        assert!(parse_maze("maze 1 1 discrete\n###\n#S#\n###\n").is_err(), "no desired cell");
        assert!(parse_maze("maze 1 1 discrete\n###\n#*#\n").is_err(), "missing row");
        assert!(parse_maze("maze 1 1 discrete\n###\n#*#\n###\n").is_ok());
        // A wall splitting the maze leaves cells unreachable.
        assert!(parse_maze("maze 2 1 discrete\n#####\n#S#G#\n#####\n").is_err());
    }
}
