//! Deterministic 2D coordinates for molecular graphs.
//!
//! Breadth-first placement seeds positions; a fixed number of
//! force-directed steps (bond springs plus all-pairs repulsion) relaxes
//! them. No external randomness enters: tie-breaking jitter comes from a
//! hash of the atom index, so identical graphs always yield identical
//! layouts.

use super::MolecularGraph;
use std::collections::VecDeque;

const RELAX_STEPS: usize = 80;
const SPRING_LENGTH: f64 = 1.0;
const SPRING_K: f64 = 0.5;
const REPULSION_K: f64 = 0.25;
const STEP_SIZE: f64 = 0.12;
const MAX_DISPLACEMENT: f64 = 0.3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic jitter in [-0.05, 0.05) derived from the atom index.
fn jitter(v: usize) -> f64 {
    let h = splitmix64(v as u64);
    (h as f64 / u64::MAX as f64 - 0.5) * 0.1
}

/// Computes unit-square coordinates for every atom.
///
/// Coordinates land in [0.1, 0.9] x [0.1, 0.9] with aspect ratio preserved;
/// a single atom sits at (0.5, 0.5). Bonded atoms always map to distinct
/// points.
pub fn layout_2d(g: &MolecularGraph) -> Vec<(f64, f64)> {
    let n = g.atom_count();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![(0.5, 0.5)];
    }

    let mut pos = vec![(0.0f64, 0.0f64); n];
    let mut incoming = vec![0.0f64; n];
    let mut placed = vec![false; n];
    let mut queue = VecDeque::new();
    let mut component_offset = 0.0;

    for root in 0..n {
        if placed[root] {
            continue;
        }
        pos[root] = (component_offset, 0.0);
        placed[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            let fresh: Vec<usize> = g
                .neighbors(v)
                .iter()
                .map(|&(u, _)| u)
                .filter(|&u| !placed[u])
                .collect();
            let fan = fresh.len();
            for (slot, u) in fresh.into_iter().enumerate() {
                let offset = if fan == 1 {
                    // Zig-zag chains rather than straight lines.
                    if v % 2 == 0 {
                        0.5
                    } else {
                        -0.5
                    }
                } else {
                    -1.0 + 2.0 * slot as f64 / (fan - 1) as f64
                };
                let angle = incoming[v] + offset + jitter(u);
                pos[u] = (pos[v].0 + angle.cos(), pos[v].1 + angle.sin());
                incoming[u] = angle;
                placed[u] = true;
                queue.push_back(u);
            }
        }
        component_offset += 3.0;
    }

    let mut force = vec![(0.0f64, 0.0f64); n];
    for _ in 0..RELAX_STEPS {
        for f in force.iter_mut() {
            *f = (0.0, 0.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = pos[i].0 - pos[j].0;
                let dy = pos[i].1 - pos[j].1;
                let d2 = dx * dx + dy * dy + 1e-3;
                let push = REPULSION_K / d2;
                let d = d2.sqrt();
                force[i].0 += push * dx / d;
                force[i].1 += push * dy / d;
                force[j].0 -= push * dx / d;
                force[j].1 -= push * dy / d;
            }
        }
        for bond in &g.bonds {
            let dx = pos[bond.b].0 - pos[bond.a].0;
            let dy = pos[bond.b].1 - pos[bond.a].1;
            let d = (dx * dx + dy * dy).sqrt().max(1e-9);
            let pull = SPRING_K * (d - SPRING_LENGTH);
            force[bond.a].0 += pull * dx / d;
            force[bond.a].1 += pull * dy / d;
            force[bond.b].0 -= pull * dx / d;
            force[bond.b].1 -= pull * dy / d;
        }
        for i in 0..n {
            let (fx, fy) = force[i];
            let mag = (fx * fx + fy * fy).sqrt();
            let scale = if mag * STEP_SIZE > MAX_DISPLACEMENT {
                MAX_DISPLACEMENT / mag
            } else {
                STEP_SIZE
            };
            pos[i].0 += fx * scale;
            pos[i].1 += fy * scale;
        }
    }

    normalize(&pos)
}

/// Maps raw coordinates into [0.1, 0.9]^2, preserving aspect ratio.
fn normalize(pos: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let min_x = pos.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = pos.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = pos.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = pos.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = (max_x - min_x).max(max_y - min_y);
    if span < 1e-12 {
        return vec![(0.5, 0.5); pos.len()];
    }
    let scale = 0.8 / span;
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    pos.iter()
        .map(|&(x, y)| (0.5 + (x - cx) * scale, 0.5 + (y - cy) * scale))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    #[test]
    fn single_atom_sits_at_center() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(layout_2d(&g), vec![(0.5, 0.5)]);
    }

    #[test]
    fn empty_graph_has_no_coordinates() {
        assert!(layout_2d(&MolecularGraph::new()).is_empty());
    }

    #[test]
    fn layouts_are_pure() {
        let g = parse_smiles("CC(=O)Oc1ccccc1").unwrap();
        assert_eq!(layout_2d(&g), layout_2d(&g));
    }

    #[test]
    fn coordinates_stay_in_bounds_and_bonded_atoms_are_distinct() {
        for smiles in ["CC", "C1CCCCC1", "c1ccccc1", "CC(=O)O", "CCN(CC)CC", "O=C=O"] {
            let g = parse_smiles(smiles).unwrap();
            let coords = layout_2d(&g);
            assert_eq!(coords.len(), g.atom_count());
            for &(x, y) in &coords {
                assert!((0.1 - 1e-9..=0.9 + 1e-9).contains(&x), "{smiles}: x={x}");
                assert!((0.1 - 1e-9..=0.9 + 1e-9).contains(&y), "{smiles}: y={y}");
            }
            for bond in &g.bonds {
                let (ax, ay) = coords[bond.a];
                let (bx, by) = coords[bond.b];
                let d = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
                assert!(d > 1e-6, "{smiles}: bond {}-{} collapsed", bond.a, bond.b);
            }
        }
    }

    #[test]
    fn two_atoms_spread_across_the_box() {
        let g = parse_smiles("CC").unwrap();
        let coords = layout_2d(&g);
        let d = ((coords[0].0 - coords[1].0).powi(2) + (coords[0].1 - coords[1].1).powi(2)).sqrt();
        // Normalization stretches the longest axis to 0.8.
        assert!(d > 0.5, "distance {d}");
    }
}
