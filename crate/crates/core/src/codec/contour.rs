use std::collections::VecDeque;

use super::mask::{MaskImage, CUP, DISC};
use super::CodecError;

/// Closed boundary of one region, as 8-connected pixel coordinates.
///
/// Orientation is counterclockwise as displayed (x to the right, y downward).
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<(i64, i64)>,
    pub label: u8,
    /// Length of the closed pixel chain, diagonal steps counting `sqrt(2)`.
    pub perimeter: f64,
}

/// Cup and disc contours of one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundaries {
    pub cup: Contour,
    pub disc: Contour,
}

// Clockwise as displayed, starting west.
const RING: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(d: (i64, i64)) -> usize {
    RING.iter()
        .position(|&r| r == d)
        .expect("8-neighbour offset")
}

/// Cup contour traces the cup region; disc contour traces the outer rim of
/// disc ∪ cup. Only the largest 8-connected component of each is used.
pub fn extract_boundaries(mask: &MaskImage) -> Result<Boundaries, CodecError> {
    let (w, h) = (mask.width(), mask.height());
    let cup = mask.cup_region();
    let disc = mask.disc_region();
    if !cup.iter().any(|&b| b) {
        return Err(CodecError::DegenerateMask("no cup pixels".into()));
    }
    if !disc.iter().any(|&b| b) {
        return Err(CodecError::DegenerateMask("no disc pixels".into()));
    }
    let cup = largest_component(&cup, w, h);
    let disc = largest_component(&disc, w, h);
    Ok(Boundaries {
        cup: trace(&cup, w, h, CUP),
        disc: trace(&disc, w, h, DISC),
    })
}

/// Keeps only the largest 8-connected component (ties go to the first found
/// in scan order).
pub fn largest_component(region: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut comp = vec![usize::MAX; region.len()];
    let mut best = (0usize, usize::MAX);
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..region.len() {
        if !region[start] || comp[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in &RING {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if region[j] && comp[j] == usize::MAX {
                    comp[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if size > best.0 {
            best = (size, id);
        }
    }
    comp.iter().map(|&c| c == best.1).collect()
}

/// Moore-neighbour tracing with out-of-bounds treated as background.
fn trace(region: &[bool], w: usize, h: usize, label: u8) -> Contour {
    let fg = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && region[y as usize * w + x as usize]
    };
    let start_idx = region.iter().position(|&b| b).expect("non-empty region");
    let start = ((start_idx % w) as i64, (start_idx / w) as i64);
    // the scan found no foreground pixel west of start
    let mut back = (start.0 - 1, start.1);
    let mut cur = start;
    let mut points = vec![start];
    let mut first_move: Option<(i64, i64)> = None;

    loop {
        let bdir = ring_index((back.0 - cur.0, back.1 - cur.1));
        let mut found = None;
        for i in 1..=8 {
            let d = (bdir + i) % 8;
            let q = (cur.0 + RING[d].0, cur.1 + RING[d].1);
            if fg(q.0, q.1) {
                let prev = RING[(d + 7) % 8];
                found = Some((q, (cur.0 + prev.0, cur.1 + prev.1)));
                break;
            }
        }
        let Some((next, new_back)) = found else {
            break; // isolated pixel
        };
        if cur == start {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => break,
                Some(_) => {}
            }
        }
        back = new_back;
        cur = next;
        points.push(cur);
    }
    // the loop ends after re-entering start; drop the closing duplicate
    if points.len() > 1 && points.last() == Some(&start) {
        points.pop();
    }
    if signed_area(&points) > 0.0 {
        // positive raw area means clockwise as displayed
        points[1..].reverse();
    }
    let perimeter = closed_length(&points);
    Contour {
        points,
        label,
        perimeter,
    }
}

/// Shoelace area in raw pixel coordinates (y downward).
pub fn signed_area(points: &[(i64, i64)]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    s as f64 / 2.0
}

fn closed_length(points: &[(i64, i64)]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            (((x1 - x0).pow(2) + (y1 - y0).pow(2)) as f64).sqrt()
        })
        .sum()
}
