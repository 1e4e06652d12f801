use std::io::Write;
use std::path::Path;

use crate::field::ScalarField;

use super::CliError;

/// Image rows run from the top (largest second coordinate) down; 1D fields
/// become a single row.
fn raster_dims(field: &ScalarField) -> Result<(usize, usize), CliError> {
    let dims = field.grid().dims();
    match dims.len() {
        1 => Ok((dims[0], 1)),
        2 => Ok((dims[0], dims[1])),
        d => Err(CliError::Schema(format!("cannot render a rank-{d} field"))),
    }
}

fn pixel_value(field: &ScalarField, x: usize, y: usize, height: usize) -> f64 {
    let grid = field.grid();
    if grid.rank() == 1 {
        field.values()[x]
    } else {
        field.values()[grid.flat_index(&[x, height - 1 - y])]
    }
}

/// 16-bit binary PGM with values mapped linearly from `[0, max]`; negative
/// values clip to 0.
pub fn render_pgm(field: &ScalarField, path: &Path) -> Result<(), CliError> {
    let (w, h) = raster_dims(field)?;
    let max = field.max();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{w} {h}\n65535\n")?;
    for y in 0..h {
        for x in 0..w {
            let v = (pixel_value(field, x, y, h) * scale).round().clamp(0.0, 65535.0) as u16;
            out.write_all(&v.to_be_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// 8-bit PPM: the field in gray with agents drawn as red pixels.
pub fn render_overlay_ppm(field: &ScalarField, positions: &[f64], path: &Path) -> Result<(), CliError> {
    let (w, h) = raster_dims(field)?;
    let grid = field.grid();
    let max = field.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut pixels = vec![[0u8; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = (pixel_value(field, x, y, h) * scale).round().clamp(0.0, 255.0) as u8;
            pixels[y * w + x] = [g, g, g];
        }
    }
    let rank = grid.rank();
    for p in positions.chunks(rank) {
        let cell = grid.multi_index(grid.cell_of(p));
        let (x, y) = if rank == 1 { (cell[0], 0) } else { (cell[0], h - 1 - cell[1]) };
        pixels[y * w + x] = [255, 0, 0];
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    for p in &pixels {
        out.write_all(p)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    fn read_pgm(path: &Path) -> (usize, usize, Vec<u16>) {
        let bytes = std::fs::read(path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..20]).to_string();
        let mut parts = text.split_whitespace();
        assert_eq!(parts.next(), Some("P5"));
        let w: usize = parts.next().unwrap().parse().unwrap();
        let h: usize = parts.next().unwrap().parse().unwrap();
        assert_eq!(parts.next(), Some("65535"));
        let header = format!("P5\n{w} {h}\n65535\n").len();
        let data = bytes[header..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        (w, h, data)
    }

    #[test]
    fn zero_field_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        render_pgm(&ScalarField::zeros(GridSpec::new(vec![6, 4], vec![0.0; 2], vec![1.0; 2]).unwrap()), &path).unwrap();
        let (w, h, data) = read_pgm(&path);
        assert_eq!((w, h), (6, 4));
        assert_eq!(data, vec![0; 24]);
    }

    #[test]
    fn max_maps_to_full_scale() {
        let grid = GridSpec::new(vec![3, 5], vec![0.0; 2], vec![1.0; 2]).unwrap();
        let mut f = ScalarField::zeros(grid.clone());
        f.values_mut()[grid.flat_index(&[2, 4])] = 7.0;
        f.values_mut()[grid.flat_index(&[0, 0])] = 3.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        render_pgm(&f, &path).unwrap();
        let (w, h, data) = read_pgm(&path);
        assert_eq!((w, h), (3, 5));
        // top-right pixel is cell (2, 4), bottom-left is (0, 0)
        assert_eq!(data[2], 65535);
        assert_eq!(data[4 * 3], 32768);
        assert_eq!(data.iter().filter(|v| **v != 0).count(), 2);
    }

    #[test]
    fn overlay_marks_agents() {
        let grid = GridSpec::unit(2, 4).unwrap();
        let f = ScalarField::constant(grid, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.ppm");
        render_overlay_ppm(&f, &[0.1, 0.9], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = "P6\n4 4\n255\n".len();
        assert_eq!(&bytes[header..header + 3], &[255, 0, 0]);
        assert_eq!(&bytes[header + 3..header + 6], &[255, 255, 255]);
    }
}
