//! Fixed mask palette: label 0 is background, 1..=15 are the body parts in
//! canonical order.

pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
];

/// Label whose palette color is `rgb`, if any.
pub fn label_of(rgb: [u8; 3]) -> Option<u8> {
    PALETTE.iter().position(|c| *c == rgb).map(|i| i as u8)
}
