//! Per-class Dice and average symmetric surface distance, plus the
//! pre/post-adaptation label migration table.
//!
//! Surfaces use 4-connectivity with unit pixel spacing; pixels on the image
//! border always count as surface.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfsError};

fn check_congruent(a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(SfsError::Dimension(format!(
            "masks have {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)` for class `k`; `None` when the class is absent from
/// both masks.
pub fn dice(pred: &[u8], truth: &[u8], k: u8) -> Result<Option<f64>> {
    check_congruent(pred, truth)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        let (in_p, in_g) = (a == k, b == k);
        p += in_p as usize;
        g += in_g as usize;
        both += (in_p && in_g) as usize;
    }
    if p + g == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (p + g) as f64))
}

/// Coordinates `(x, y)` of class-`k` pixels with a 4-neighbor outside the
/// class or outside the image.
pub fn surface_pixels(mask: &[u8], width: usize, height: usize, k: u8) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] != k {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == width
                || y + 1 == height
                || mask[y * width + x - 1] != k
                || mask[y * width + x + 1] != k
                || mask[(y - 1) * width + x] != k
                || mask[(y + 1) * width + x] != k;
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

fn nearest_distance(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
    set.iter()
        .map(|&(x, y)| {
            let dx = p.0 as f64 - x as f64;
            let dy = p.1 as f64 - y as f64;
            dx * dx + dy * dy
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Average symmetric surface distance for class `k`, in pixels; `None` when
/// either surface is empty.
pub fn assd(pred: &[u8], truth: &[u8], width: usize, height: usize, k: u8) -> Result<Option<f64>> {
    check_congruent(pred, truth)?;
    if pred.len() != width * height {
        return Err(SfsError::Dimension(format!(
            "mask of {} pixels is not {width}x{height}",
            pred.len()
        )));
    }
    let sp = surface_pixels(pred, width, height, k);
    let sg = surface_pixels(truth, width, height, k);
    if sp.is_empty() || sg.is_empty() {
        return Ok(None);
    }
    let forward: f64 = sp.iter().map(|&p| nearest_distance(p, &sg)).sum();
    let backward: f64 = sg.iter().map(|&g| nearest_distance(g, &sp)).sum();
    Ok(Some((forward + backward) / (sp.len() + sg.len()) as f64))
}

/// Dice and ASSD per class with macro averages over the scored classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub dice: Vec<Option<f64>>,
    pub assd: Vec<Option<f64>>,
    pub macro_dice: Option<f64>,
    pub macro_assd: Option<f64>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ClassScores {
    fn with_macro(dice: Vec<Option<f64>>, assd: Vec<Option<f64>>, first_class: usize) -> Self {
        let macro_dice = mean_present(dice.iter().skip(first_class).copied());
        let macro_assd = mean_present(assd.iter().skip(first_class).copied());
        Self {
            dice,
            assd,
            macro_dice,
            macro_assd,
        }
    }

    /// Average per class over images where the class was scored, then take
    /// macro averages over classes `first_class..K`.
    pub fn aggregate(per_image: &[ClassScores], first_class: usize) -> Self {
        let k = per_image.first().map_or(0, |s| s.dice.len());
        let dice = (0..k)
            .map(|c| mean_present(per_image.iter().map(|s| s.dice[c])))
            .collect();
        let assd = (0..k)
            .map(|c| mean_present(per_image.iter().map(|s| s.assd[c])))
            .collect();
        Self::with_macro(dice, assd, first_class)
    }
}

/// Score one prediction against its ground truth. Classes below
/// `first_class` are reported but left out of the macro averages.
pub fn score_image(
    pred: &[u8],
    truth: &[u8],
    width: usize,
    height: usize,
    num_classes: usize,
    first_class: usize,
) -> Result<ClassScores> {
    let mut d = Vec::with_capacity(num_classes);
    let mut a = Vec::with_capacity(num_classes);
    for k in 0..num_classes as u8 {
        d.push(dice(pred, truth, k)?);
        a.push(assd(pred, truth, width, height, k)?);
    }
    Ok(ClassScores::with_macro(d, a, first_class))
}

/// Percentages for one (source label, destination label) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MigrationCell {
    /// Share of pixels predicted `i` before adaptation that are predicted
    /// `j` afterwards.
    pub pct_moved: f64,
    /// Share of those pixels whose true label is `i`.
    pub pct_true_source: f64,
    /// Share of those pixels whose true label is `j`.
    pub pct_true_dest: f64,
}

/// Raw pixel counts behind a [`MigrationTable`]; add several images'
/// counts before converting.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationCounts {
    pub num_classes: usize,
    moved: Vec<u64>,
    true_source: Vec<u64>,
    true_dest: Vec<u64>,
    pre_total: Vec<u64>,
}

impl MigrationCounts {
    pub fn new(num_classes: usize) -> Self {
        let cells = num_classes * num_classes;
        Self {
            num_classes,
            moved: vec![0; cells],
            true_source: vec![0; cells],
            true_dest: vec![0; cells],
            pre_total: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, pre: &[u8], post: &[u8], truth: &[u8]) -> Result<()> {
        check_congruent(pre, post)?;
        check_congruent(pre, truth)?;
        let k = self.num_classes;
        for ((&i, &j), &t) in pre.iter().zip(post).zip(truth) {
            let (i, j) = (i as usize, j as usize);
            if i >= k || j >= k || t as usize >= k {
                return Err(SfsError::LabelOutOfRange {
                    label: i.max(j).max(t as usize) as u8,
                    num_classes: k,
                });
            }
            let cell = i * k + j;
            self.pre_total[i] += 1;
            self.moved[cell] += 1;
            self.true_source[cell] += (t as usize == i) as u64;
            self.true_dest[cell] += (t as usize == j) as u64;
        }
        Ok(())
    }

    pub fn table(&self) -> MigrationTable {
        let k = self.num_classes;
        let pct = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        let rows = (0..k)
            .map(|i| {
                (self.pre_total[i] > 0).then(|| {
                    (0..k)
                        .map(|j| {
                            let c = i * k + j;
                            MigrationCell {
                                pct_moved: pct(self.moved[c], self.pre_total[i]),
                                pct_true_source: pct(self.true_source[c], self.moved[c]),
                                pct_true_dest: pct(self.true_dest[c], self.moved[c]),
                            }
                        })
                        .collect()
                })
            })
            .collect();
        MigrationTable { num_classes: k, rows }
    }
}

/// `K x K` label migration percentages; a row is `None` when no pixel was
/// predicted as that class before adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationTable {
    pub num_classes: usize,
    pub rows: Vec<Option<Vec<MigrationCell>>>,
}

impl MigrationTable {
    pub fn cell(&self, i: usize, j: usize) -> Option<MigrationCell> {
        self.rows[i].as_ref().map(|r| r[j])
    }
}

pub fn migration_table(
    pre: &[u8],
    post: &[u8],
    truth: &[u8],
    num_classes: usize,
) -> Result<MigrationTable> {
    let mut counts = MigrationCounts::new(num_classes);
    counts.add(pre, post, truth)?;
    Ok(counts.table())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(w: usize, h: usize, x0: usize, y0: usize, bw: usize, bh: usize) -> Vec<u8> {
        let mut m = vec![0u8; w * h];
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                m[y * w + x] = 1;
            }
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = block(6, 6, 1, 1, 2, 2);
        assert_eq!(dice(&a, &a, 1).unwrap(), Some(1.0));
        let far = block(6, 6, 4, 4, 2, 2);
        assert_eq!(dice(&a, &far, 1).unwrap(), Some(0.0));
        let shifted = block(6, 6, 2, 1, 2, 2);
        assert_eq!(dice(&a, &shifted, 1).unwrap(), Some(0.5));
        assert_eq!(dice(&a, &a, 3).unwrap(), None);
        assert!(dice(&a, &a[..5], 1).is_err());
    }

    #[test]
    fn assd_examples() {
        let a = block(8, 8, 2, 2, 3, 3);
        assert_eq!(assd(&a, &a, 8, 8, 1).unwrap(), Some(0.0));
        let mut p = vec![0u8; 10];
        let mut g = vec![0u8; 10];
        p[1] = 1;
        g[6] = 1;
        assert_eq!(assd(&p, &g, 10, 1, 1).unwrap(), Some(5.0));
        assert_eq!(assd(&p, &vec![0u8; 10], 10, 1, 1).unwrap(), None);
    }

    #[test]
    fn assd_shifted_square_fixture() {
        // value from an offline brute-force over all surface pairs
        let a = block(10, 10, 3, 3, 3, 3);
        let b = block(10, 10, 4, 3, 3, 3);
        let v = assd(&a, &b, 10, 10, 1).unwrap().unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn migration_identity_and_flip() {
        let pre = [0u8, 1, 2, 1];
        let t = migration_table(&pre, &pre, &pre, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let c = t.cell(i, j).unwrap();
                assert_eq!(c.pct_moved, if i == j { 100.0 } else { 0.0 });
            }
        }
        let t = migration_table(&[0; 5], &[1; 5], &[1; 5], 2).unwrap();
        let c = t.cell(0, 1).unwrap();
        assert_eq!((c.pct_moved, c.pct_true_source, c.pct_true_dest), (100.0, 0.0, 100.0));
        assert!(t.rows[1].is_none());
    }

    #[test]
    fn aggregate_skips_absent() {
        let a = ClassScores::with_macro(vec![Some(1.0), Some(0.5), None], vec![None; 3], 1);
        let b = ClassScores::with_macro(vec![Some(0.0), Some(0.7), Some(0.9)], vec![None; 3], 1);
        let agg = ClassScores::aggregate(&[a, b], 1);
        assert_eq!(agg.dice[2], Some(0.9));
        assert!((agg.dice[1].unwrap() - 0.6).abs() < 1e-12);
        assert!((agg.macro_dice.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(agg.macro_assd, None);
    }
}
