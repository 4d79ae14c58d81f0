use super::Raster;

/// Unit normals of the depth surface `z(x, y)` with `x` along columns and
/// `y` up (against rows), `pixel_size` millimetres per pixel.
///
/// Central differences where both neighbours are valid, one-sided where only
/// one is, zero slope where neither is. Pixels outside the mask are NaN.
pub fn depth_to_normals(depth: &Raster, mask: &[bool], pixel_size: f64) -> Raster {
    let (w, h) = (depth.width(), depth.height());
    assert_eq!(mask.len(), w * h, "mask size");
    let valid = |r: usize, c: usize| mask[r * w + c];
    let z = |r: usize, c: usize| depth.get(r, c, 0);
    let mut out = Raster::filled(w, h, 3, f64::NAN);
    for r in 0..h {
        for c in 0..w {
            if !valid(r, c) {
                continue;
            }
            let left = c > 0 && valid(r, c - 1);
            let right = c + 1 < w && valid(r, c + 1);
            let up = r > 0 && valid(r - 1, c);
            let down = r + 1 < h && valid(r + 1, c);
            let dz_dcol = match (left, right) {
                (true, true) => (z(r, c + 1) - z(r, c - 1)) / 2.0,
                (false, true) => z(r, c + 1) - z(r, c),
                (true, false) => z(r, c) - z(r, c - 1),
                (false, false) => 0.0,
            };
            let dz_drow = match (up, down) {
                (true, true) => (z(r + 1, c) - z(r - 1, c)) / 2.0,
                (false, true) => z(r + 1, c) - z(r, c),
                (true, false) => z(r, c) - z(r - 1, c),
                (false, false) => 0.0,
            };
            // y = -row, so dz/dy = -dz/drow.
            let n = [-dz_dcol / pixel_size, dz_drow / pixel_size, 1.0];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            out.pixel_mut(r, c).copy_from_slice(&[n[0] / len, n[1] / len, n[2] / len]);
        }
    }
    out
}
