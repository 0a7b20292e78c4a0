//! Rasterization of molecular graphs to grayscale images.

use super::{layout_2d, BondOrder, Element, MolecularGraph};

/// Square grayscale image, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularImage {
    pub size: usize,
    pub pixels: Vec<f64>,
}

impl MolecularImage {
    fn new(size: usize) -> MolecularImage {
        MolecularImage {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.size + x]
    }

    fn blend_max(&mut self, x: i64, y: i64, v: f64) {
        if x < 0 || y < 0 || x >= self.size as i64 || y >= self.size as i64 {
            return;
        }
        let idx = y as usize * self.size + x as usize;
        if v > self.pixels[idx] {
            self.pixels[idx] = v;
        }
    }
}

/// Center intensity of the 3x3 atom stamp, one value per element.
fn element_intensity(e: Element) -> f64 {
    match e {
        Element::H => 0.30,
        Element::B => 0.35,
        Element::P => 0.45,
        Element::C => 0.50,
        Element::S => 0.55,
        Element::N => 0.60,
        Element::O => 0.70,
        Element::F => 0.80,
        Element::Cl => 0.85,
        Element::Br => 0.90,
        Element::I => 0.95,
    }
}

/// Distance from point `p` to the segment `a`..`b`, in pixels.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 < 1e-12 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Draws one anti-aliased segment with peak intensity 1.0 on the line and a
/// linear falloff reaching zero 1.5 pixels out.
fn draw_segment(img: &mut MolecularImage, a: (f64, f64), b: (f64, f64)) {
    let min_x = (a.0.min(b.0).floor() as i64) - 2;
    let max_x = (a.0.max(b.0).ceil() as i64) + 2;
    let min_y = (a.1.min(b.1).floor() as i64) - 2;
    let max_y = (a.1.max(b.1).ceil() as i64) + 2;
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let d = segment_distance((x as f64, y as f64), a, b);
            let coverage = (1.5 - d).clamp(0.0, 1.0);
            if coverage > 0.0 {
                img.blend_max(x, y, coverage);
            }
        }
    }
}

/// Renders `g` onto a `size x size` grid.
///
/// Bonds are drawn first as anti-aliased segments (double and triple bonds
/// as two and three parallel strands), then each atom is stamped as a 3x3
/// block whose center intensity encodes the element. Stamps falling across
/// the border are clipped.
pub fn render_image(g: &MolecularGraph, size: usize) -> MolecularImage {
    assert!(size >= 4, "image too small to hold a stamp");
    let mut img = MolecularImage::new(size);
    let coords = layout_2d(g);
    let to_px = |(x, y): (f64, f64)| (x * (size - 1) as f64, y * (size - 1) as f64);

    for bond in &g.bonds {
        let a = to_px(coords[bond.a]);
        let b = to_px(coords[bond.b]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let normal = (-dy / len, dx / len);
        let offsets: &[f64] = match bond.order {
            BondOrder::Single | BondOrder::Aromatic => &[0.0],
            BondOrder::Double => &[-0.9, 0.9],
            BondOrder::Triple => &[-1.8, 0.0, 1.8],
        };
        for &o in offsets {
            let shift = (normal.0 * o, normal.1 * o);
            draw_segment(
                &mut img,
                (a.0 + shift.0, a.1 + shift.1),
                (b.0 + shift.0, b.1 + shift.1),
            );
        }
    }

    for (i, atom) in g.atoms.iter().enumerate() {
        let (px, py) = to_px(coords[i]);
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        let v = element_intensity(atom.element);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let intensity = if dx == 0 && dy == 0 { v } else { v * 0.5 };
                img.blend_max(cx + dx, cy + dy, intensity);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    #[test]
    fn single_carbon_is_one_stamp() {
        let g = parse_smiles("C").unwrap();
        let img = render_image(&g, 32);
        let nonzero: Vec<usize> = (0..32 * 32).filter(|&i| img.pixels[i] > 0.0).collect();
        assert_eq!(nonzero.len(), 9, "expected exactly one 3x3 stamp");
        // All nine live in one 3x3 block around the center stamp.
        let xs: Vec<usize> = nonzero.iter().map(|i| i % 32).collect();
        let ys: Vec<usize> = nonzero.iter().map(|i| i / 32).collect();
        assert_eq!(xs.iter().max().unwrap() - xs.iter().min().unwrap(), 2);
        assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap(), 2);
        let center = img.get(xs[4], ys[4]);
        assert_eq!(center, 0.50);
    }

    #[test]
    fn bond_midpoint_is_lit() {
        let g = parse_smiles("CC").unwrap();
        let coords = layout_2d(&g);
        let img = render_image(&g, 32);
        let mx = ((coords[0].0 + coords[1].0) / 2.0 * 31.0).round() as usize;
        let my = ((coords[0].1 + coords[1].1) / 2.0 * 31.0).round() as usize;
        assert!(img.get(mx, my) > 0.0, "midpoint ({mx},{my}) is dark");
    }

    #[test]
    fn rendering_is_pure_and_bounded() {
        let g = parse_smiles("CC(=O)Oc1ccccc1").unwrap();
        let a = render_image(&g, 32);
        let b = render_image(&g, 32);
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(a.pixels.iter().any(|&p| p > 0.0));
    }

    #[test]
    fn multiple_bonds_draw_more_ink() {
        let single = render_image(&parse_smiles("CC").unwrap(), 32);
        let double = render_image(&parse_smiles("C=C").unwrap(), 32);
        let triple = render_image(&parse_smiles("C#C").unwrap(), 32);
        let ink = |img: &MolecularImage| img.pixels.iter().filter(|&&p| p > 0.0).count();
        assert!(ink(&double) > ink(&single));
        assert!(ink(&triple) > ink(&double));
    }
}
