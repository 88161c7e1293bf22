//! Mixed categorical/quantitative inputs and their latent-vector encoding.
//!
//! A point `u = (x, t)` with quantitative coordinates `x` and categorical
//! levels `t` is mapped to `s = [x, z_1(t_1), ..., z_q(t_q)]`, where each
//! `z_j(c)` is a learned `g`-dimensional vector. Level indices are 1-based
//! in every public type and 0-based in the flat storage.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const DEFAULT_LATENT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedSchema {
    /// Number of quantitative variables.
    pub p: usize,
    /// Level count per categorical variable.
    pub levels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_labels: Option<Vec<Vec<String>>>,
}

impl MixedSchema {
    pub fn new(p: usize, levels: Vec<usize>) -> Result<Self> {
        let s = MixedSchema {
            p,
            levels,
            level_labels: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn q(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p + self.q() == 0 {
            return Err(Error::InvalidSchema("no input variables".into()));
        }
        if let Some(j) = self.levels.iter().position(|&l| l < 2) {
            return Err(Error::InvalidSchema(format!(
                "categorical variable {} has {} levels (need at least 2)",
                j + 1,
                self.levels[j]
            )));
        }
        if let Some(labels) = &self.level_labels {
            if labels.len() != self.q()
                || labels.iter().zip(&self.levels).any(|(l, &n)| l.len() != n)
            {
                return Err(Error::InvalidSchema(
                    "level labels do not match level counts".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn label(&self, variable: usize, level: usize) -> String {
        self.level_labels
            .as_ref()
            .map(|l| l[variable][level - 1].clone())
            .unwrap_or_else(|| level.to_string())
    }

    pub fn check_point(&self, point: &MixedPoint) -> Result<()> {
        if point.x.len() != self.p || point.t.len() != self.q() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} quantitative and {} categorical values, schema expects {} and {}",
                point.x.len(),
                point.t.len(),
                self.p,
                self.q()
            )));
        }
        if point.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantitative input".into()));
        }
        for (j, (&t, &l)) in point.t.iter().zip(&self.levels).enumerate() {
            if t < 1 || t > l {
                return Err(Error::LevelOutOfRange {
                    variable: j + 1,
                    level: t,
                    levels: l,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint {
    pub x: Vec<f64>,
    /// 1-based level per categorical variable.
    pub t: Vec<usize>,
}

impl MixedPoint {
    pub fn new(x: Vec<f64>, t: Vec<usize>) -> Self {
        MixedPoint { x, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentStructure {
    /// One embedding used by every latent function.
    Shared,
    /// One embedding per latent function.
    Independent,
}

/// Latent vectors for every (copy, variable, level), stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentMap {
    pub g: usize,
    pub levels: Vec<usize>,
    pub structure: LatentStructure,
    pub copies: usize,
    values: Vec<f64>,
}

impl LatentMap {
    pub fn zeros(levels: &[usize], g: usize, structure: LatentStructure, functions: usize) -> Self {
        let copies = match structure {
            LatentStructure::Shared => 1,
            LatentStructure::Independent => functions.max(1),
        };
        let per_copy: usize = levels.iter().sum::<usize>() * g;
        LatentMap {
            g,
            levels: levels.to_vec(),
            structure,
            copies,
            values: vec![0.0; per_copy * copies],
        }
    }

    /// Every coordinate drawn from `uniform(-0.5, 0.5)`.
    pub fn random(
        levels: &[usize],
        g: usize,
        structure: LatentStructure,
        functions: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut map = Self::zeros(levels, g, structure, functions);
        for v in map.values.iter_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
        map
    }

    pub fn from_values(
        levels: &[usize],
        g: usize,
        structure: LatentStructure,
        copies: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut map = Self::zeros(levels, g, structure, copies);
        if map.copies != copies || values.len() != map.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "latent map expects {} values over {} copies, got {} over {}",
                map.values.len(),
                map.copies,
                values.len(),
                copies
            )));
        }
        map.values = values;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let expected_copies = match self.structure {
            LatentStructure::Shared => 1,
            LatentStructure::Independent => self.copies,
        };
        if self.copies != expected_copies || self.copies == 0 {
            return Err(Error::InvariantViolation(format!(
                "{:?} latent map with {} copies",
                self.structure, self.copies
            )));
        }
        if self.values.len() != self.per_copy() * self.copies {
            return Err(Error::InvariantViolation("latent map storage size".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vectors".into()));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.levels.len()
    }

    /// Width contributed to the transformed input, `q * g`.
    pub fn width(&self) -> usize {
        self.q() * self.g
    }

    fn per_copy(&self) -> usize {
        self.levels.iter().sum::<usize>() * self.g
    }

    /// Copy used by latent function `function`.
    pub fn copy_for(&self, function: usize) -> usize {
        match self.structure {
            LatentStructure::Shared => 0,
            LatentStructure::Independent => function,
        }
    }

    /// Flat offset of `z_{variable}(level)` in copy `copy` (0-based variable and level).
    pub fn offset(&self, copy: usize, variable: usize, level0: usize) -> usize {
        let before: usize = self.levels[..variable].iter().sum();
        copy * self.per_copy() + (before + level0) * self.g
    }

    pub fn vector(&self, copy: usize, variable: usize, level0: usize) -> &[f64] {
        let o = self.offset(copy, variable, level0);
        &self.values[o..o + self.g]
    }

    pub fn vector_mut(&mut self, copy: usize, variable: usize, level0: usize) -> &mut [f64] {
        let o = self.offset(copy, variable, level0);
        let g = self.g;
        &mut self.values[o..o + g]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Writes `s = [x, z(t)]` for one point into `row`. Levels are not checked.
    pub(crate) fn encode_into(&self, point: &MixedPoint, copy: usize, row: &mut [f64]) {
        let p = point.x.len();
        row[..p].copy_from_slice(&point.x);
        for (j, &t) in point.t.iter().enumerate() {
            let z = self.vector(copy, j, t - 1);
            row[p + j * self.g..p + (j + 1) * self.g].copy_from_slice(z);
        }
    }
}

/// Encodes each point as a row `[x, z_1(t_1), ..., z_q(t_q)]` using latent copy `copy`.
pub fn encode_batch(points: &[MixedPoint], map: &LatentMap, copy: usize) -> Result<DMatrix<f64>> {
    if copy >= map.copies {
        return Err(Error::DimensionMismatch(format!(
            "latent copy {copy} requested from a map with {} copies",
            map.copies
        )));
    }
    let p = points.first().map_or(0, |pt| pt.x.len());
    let width = p + map.width();
    let mut out = DMatrix::zeros(points.len(), width);
    let mut row = vec![0.0; width];
    for (i, pt) in points.iter().enumerate() {
        if pt.x.len() != p || pt.t.len() != map.q() {
            return Err(Error::DimensionMismatch(format!("point {i} has inconsistent width")));
        }
        for (j, (&t, &l)) in pt.t.iter().zip(&map.levels).enumerate() {
            if t < 1 || t > l {
                return Err(Error::LevelOutOfRange {
                    variable: j + 1,
                    level: t,
                    levels: l,
                });
            }
        }
        map.encode_into(pt, copy, &mut row);
        for (c, v) in row.iter().enumerate() {
            out[(i, c)] = *v;
        }
    }
    Ok(out)
}

/// Removes the rigid-motion gauge of a two-dimensional latent map.
///
/// Per variable and copy: level 1 goes to the origin, level 2 onto the
/// nonnegative first axis, and level 3 (if present) into the upper half
/// plane. For `g == 1` the map is translated and the sign fixed so level 2 is
/// nonnegative; for `g > 2` only the translation is applied.
pub fn canonicalize(map: &LatentMap) -> LatentMap {
    let mut out = map.clone();
    for copy in 0..map.copies {
        for j in 0..map.q() {
            canonicalize_variable(&mut out, copy, j);
        }
    }
    out
}

fn canonicalize_variable(map: &mut LatentMap, copy: usize, j: usize) {
    let g = map.g;
    let levels = map.levels[j];
    let origin = map.vector(copy, j, 0).to_vec();
    for c in 0..levels {
        for (v, o) in map.vector_mut(copy, j, c).iter_mut().zip(&origin) {
            *v -= o;
        }
    }
    match g {
        1 => {
            if map.vector(copy, j, 1)[0] < 0.0 {
                for c in 0..levels {
                    map.vector_mut(copy, j, c)[0] *= -1.0;
                }
            }
        }
        2 => {
            let second = map.vector(copy, j, 1);
            let r = second[0].hypot(second[1]);
            if r > 0.0 {
                let (cos, sin) = (second[0] / r, second[1] / r);
                for c in 0..levels {
                    let z = map.vector_mut(copy, j, c);
                    let (a, b) = (z[0], z[1]);
                    z[0] = cos * a + sin * b;
                    z[1] = -sin * a + cos * b;
                }
                // exact zero for the aligned level
                let z = map.vector_mut(copy, j, 1);
                z[0] = r;
                z[1] = 0.0;
            }
            if levels >= 3 && map.vector(copy, j, 2)[1] < 0.0 {
                for c in 0..levels {
                    map.vector_mut(copy, j, c)[1] *= -1.0;
                }
            }
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    /// Share of the latent vectors' total variance on their first principal axis.
    pub explained_fraction: f64,
    /// 1-based levels sorted by projection on the principal axis, oriented so
    /// the first entry is smaller than the last.
    pub ordering: Vec<usize>,
    /// Whether the raw projection order had to be reversed to get `ordering`.
    pub reversed: bool,
}

impl CollinearityReport {
    /// True when `ordering` equals `target` read forwards or backwards.
    pub fn matches_ordering(&self, target: &[usize]) -> bool {
        let rev: Vec<usize> = target.iter().rev().copied().collect();
        self.ordering == target || self.ordering == rev
    }
}

/// Principal-axis summary of the latent vectors of one categorical variable.
pub fn collinearity_report(map: &LatentMap, variable: usize, copy: usize) -> CollinearityReport {
    let g = map.g;
    let levels = map.levels[variable];
    let mut centered = DMatrix::zeros(levels, g);
    for c in 0..levels {
        for (d, v) in map.vector(copy, variable, c).iter().enumerate() {
            centered[(c, d)] = *v;
        }
    }
    let means: Vec<f64> = (0..g).map(|d| centered.column(d).mean()).collect();
    for c in 0..levels {
        for d in 0..g {
            centered[(c, d)] -= means[d];
        }
    }
    let scatter = centered.transpose() * &centered;
    let total = scatter.trace();
    if !(total > 0.0) {
        return CollinearityReport {
            explained_fraction: 1.0,
            ordering: (1..=levels).collect(),
            reversed: false,
        };
    }
    let eig = SymmetricEigen::new(scatter);
    let (k, &top) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("g >= 1");
    let axis = eig.eigenvectors.column(k);
    let proj: Vec<f64> = (0..levels).map(|c| centered.row(c).dot(&axis.transpose())).collect();
    let mut ordering: Vec<usize> = (0..levels).collect();
    ordering.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut ordering: Vec<usize> = ordering.into_iter().map(|c| c + 1).collect();
    let reversed = ordering[0] > ordering[levels - 1];
    if reversed {
        ordering.reverse();
    }
    CollinearityReport {
        explained_fraction: (top / total).clamp(0.0, 1.0),
        ordering,
        reversed,
    }
}

/// Writes `variable,level,label,copy,z_1..z_g` rows (1-based variable, level and copy).
pub fn write_latent_csv<W: Write>(map: &LatentMap, schema: &MixedSchema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "variable".to_string(),
        "level".into(),
        "label".into(),
        "copy".into(),
    ];
    header.extend((1..=map.g).map(|d| format!("z_{d}")));
    w.write_record(&header)?;
    for copy in 0..map.copies {
        for j in 0..map.q() {
            for c in 0..map.levels[j] {
                let mut rec = vec![
                    (j + 1).to_string(),
                    (c + 1).to_string(),
                    schema.label(j, c + 1),
                    (copy + 1).to_string(),
                ];
                rec.extend(map.vector(copy, j, c).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-column affine maps between original units and training units.
///
/// Quantitative inputs are mapped to `[0, 1]` by their observed range and
/// responses are z-scored per output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub x_offset: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(p: usize, outputs: usize) -> Self {
        Normalization {
            x_offset: vec![0.0; p],
            x_scale: vec![1.0; p],
            y_mean: vec![0.0; outputs],
            y_scale: vec![1.0; outputs],
        }
    }

    pub fn fit(data: &Dataset) -> Self {
        let p = data.schema.p;
        let mut x_offset = vec![0.0; p];
        let mut x_scale = vec![1.0; p];
        for d in 0..p {
            let (lo, hi) = data
                .inputs
                .iter()
                .map(|pt| pt.x[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            x_offset[d] = lo;
            x_scale[d] = if hi > lo { hi - lo } else { 1.0 };
        }
        let n = data.len() as f64;
        let mut y_mean = Vec::new();
        let mut y_scale = Vec::new();
        for col in data.outputs.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            y_mean.push(mean);
            y_scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Normalization {
            x_offset,
            x_scale,
            y_mean,
            y_scale,
        }
    }

    pub fn outputs(&self) -> usize {
        self.y_mean.len()
    }

    pub fn apply_point(&self, point: &MixedPoint) -> MixedPoint {
        MixedPoint {
            x: point
                .x
                .iter()
                .zip(self.x_offset.iter().zip(&self.x_scale))
                .map(|(v, (o, s))| (v - o) / s)
                .collect(),
            t: point.t.clone(),
        }
    }

    pub fn denormalize_mean(&self, output: usize, v: f64) -> f64 {
        self.y_mean[output] + self.y_scale[output] * v
    }

    pub fn denormalize_var(&self, output: usize, v: f64) -> f64 {
        self.y_scale[output].powi(2) * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: MixedSchema,
    pub inputs: Vec<MixedPoint>,
    /// `n x N_op` responses in original units.
    pub outputs: DMatrix<f64>,
}

impl Dataset {
    pub fn new(schema: MixedSchema, inputs: Vec<MixedPoint>, outputs: DMatrix<f64>) -> Result<Self> {
        let d = Dataset {
            schema,
            inputs,
            outputs,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.inputs.is_empty() {
            return Err(Error::InvalidSchema("empty dataset".into()));
        }
        if self.outputs.nrows() != self.inputs.len() || self.outputs.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs with a {}x{} response matrix",
                self.inputs.len(),
                self.outputs.nrows(),
                self.outputs.ncols()
            )));
        }
        for pt in &self.inputs {
            self.schema.check_point(pt)?;
        }
        if self.outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("responses".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn outputs_count(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            inputs: rows.iter().map(|&i| self.inputs[i].clone()).collect(),
            outputs: self.outputs.select_rows(rows),
        }
    }

    /// Keeps only output column `output`.
    pub fn single_output(&self, output: usize) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.columns(output, 1).into_owned(),
        }
    }

    pub fn normalize(&self, norm: &Normalization) -> NormalizedData {
        let mut y = self.outputs.clone();
        for (o, mut col) in y.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - norm.y_mean[o]) / norm.y_scale[o];
            }
        }
        NormalizedData {
            schema: self.schema.clone(),
            points: self.inputs.iter().map(|p| norm.apply_point(p)).collect(),
            y,
        }
    }
}

/// Training-unit view of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub schema: MixedSchema,
    pub points: Vec<MixedPoint>,
    pub y: DMatrix<f64>,
}

impl NormalizedData {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    /// Encoded rows for `rows`, using latent copy `copy`.
    pub fn encode_rows(&self, map: &LatentMap, copy: usize, rows: &[usize]) -> DMatrix<f64> {
        let width = self.schema.p + map.width();
        let mut out = DMatrix::zeros(rows.len(), width);
        let mut buf = vec![0.0; width];
        for (r, &i) in rows.iter().enumerate() {
            map.encode_into(&self.points[i], copy, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_var_map(vectors: &[[f64; 2]]) -> LatentMap {
        let values = vectors.iter().flatten().copied().collect();
        LatentMap::from_values(&[vectors.len()], 2, LatentStructure::Shared, 1, values).unwrap()
    }

    #[test]
    fn encode_examples() {
        let mut map = LatentMap::zeros(&[3], 2, LatentStructure::Shared, 1);
        let pt = MixedPoint::new(vec![0.1, 0.2], vec![3]);
        let s = encode_batch(std::slice::from_ref(&pt), &map, 0).unwrap();
        assert_eq!(s.row(0).iter().copied().collect::<Vec<_>>(), vec![0.1, 0.2, 0.0, 0.0]);

        map.vector_mut(0, 0, 2).copy_from_slice(&[1.5, -0.5]);
        let s = encode_batch(&[pt], &map, 0).unwrap();
        assert_eq!(s.row(0).iter().copied().collect::<Vec<_>>(), vec![0.1, 0.2, 1.5, -0.5]);

        let mut map = LatentMap::zeros(&[2, 2], 2, LatentStructure::Shared, 1);
        map.vector_mut(0, 0, 0).copy_from_slice(&[1.0, 2.0]);
        map.vector_mut(0, 1, 1).copy_from_slice(&[3.0, 4.0]);
        let s = encode_batch(&[MixedPoint::new(vec![], vec![1, 2])], &map, 0).unwrap();
        assert_eq!(s.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn encode_rejects_bad_level() {
        let map = LatentMap::zeros(&[3], 2, LatentStructure::Shared, 1);
        let err = encode_batch(&[MixedPoint::new(vec![0.0], vec![4])], &map, 0).unwrap_err();
        assert!(matches!(err, Error::LevelOutOfRange { level: 4, .. }));
        let err = encode_batch(&[MixedPoint::new(vec![0.0], vec![0])], &map, 0).unwrap_err();
        assert!(matches!(err, Error::LevelOutOfRange { level: 0, .. }));
    }

    #[test]
    fn independent_maps_have_one_copy_per_function() {
        let map = LatentMap::zeros(&[3, 4], 2, LatentStructure::Independent, 3);
        assert_eq!(map.copies, 3);
        assert_eq!(map.values().len(), 3 * 7 * 2);
        assert_eq!(map.copy_for(2), 2);
        let shared = LatentMap::zeros(&[3, 4], 2, LatentStructure::Shared, 3);
        assert_eq!(shared.copies, 1);
        assert_eq!(shared.copy_for(2), 0);
    }

    #[test]
    fn canonicalize_examples() {
        let c = canonicalize(&single_var_map(&[[1.0, 1.0], [2.0, 1.0]]));
        assert_eq!(c.vector(0, 0, 0), &[0.0, 0.0]);
        assert_relative_eq!(c.vector(0, 0, 1)[0], 1.0, epsilon = 1e-15);
        assert_eq!(c.vector(0, 0, 1)[1], 0.0);

        let c = canonicalize(&single_var_map(&[[0.0, 0.0], [0.0, 3.0]]));
        assert_relative_eq!(c.vector(0, 0, 1)[0], 3.0, epsilon = 1e-15);
        assert_eq!(c.vector(0, 0, 1)[1], 0.0);

        let once = canonicalize(&single_var_map(&[[0.3, -1.0], [2.0, 1.0], [-1.0, -2.0]]));
        assert_eq!(canonicalize(&once), once);
        assert!(once.vector(0, 0, 2)[1] >= 0.0);
    }

    #[test]
    fn canonicalize_passes_coincident_levels_through() {
        let c = canonicalize(&single_var_map(&[[1.0, 1.0], [1.0, 1.0], [2.0, 3.0]]));
        assert_eq!(c.vector(0, 0, 1), &[0.0, 0.0]);
        assert_eq!(c.vector(0, 0, 2), &[1.0, 2.0]);
    }

    #[test]
    fn collinearity_examples() {
        let line = single_var_map(&[[0.0, 0.0], [4.0, 2.0], [1.0, 0.5], [3.0, 1.5], [2.0, 1.0]]);
        let r = collinearity_report(&line, 0, 0);
        assert_relative_eq!(r.explained_fraction, 1.0, epsilon = 1e-12);
        assert_eq!(r.ordering, vec![1, 3, 5, 4, 2]);

        let square = single_var_map(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let r = collinearity_report(&square, 0, 0);
        assert_relative_eq!(r.explained_fraction, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn collinearity_reversal_flag() {
        let fwd = single_var_map(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let back = single_var_map(&[[0.0, 0.0], [-1.0, 0.0], [-2.0, 0.0]]);
        let a = collinearity_report(&fwd, 0, 0);
        let b = collinearity_report(&back, 0, 0);
        assert_eq!(a.ordering, b.ordering);
        assert_eq!(a.ordering, vec![1, 2, 3]);
        assert!(a.matches_ordering(&[3, 2, 1]));
    }

    #[test]
    fn normalization_inverts() {
        let schema = MixedSchema::new(1, vec![2]).unwrap();
        let inputs = vec![
            MixedPoint::new(vec![-2.0], vec![1]),
            MixedPoint::new(vec![6.0], vec![2]),
        ];
        let data = Dataset::new(schema, inputs, DMatrix::from_column_slice(2, 1, &[1.0, 5.0])).unwrap();
        let norm = Normalization::fit(&data);
        let nd = data.normalize(&norm);
        assert_eq!(nd.points[0].x, vec![0.0]);
        assert_eq!(nd.points[1].x, vec![1.0]);
        assert_relative_eq!(nd.y[(0, 0)], -1.0);
        assert_relative_eq!(norm.denormalize_mean(0, nd.y[(1, 0)]), 5.0);
    }

    #[test]
    fn latent_csv_layout() {
        let map = single_var_map(&[[0.0, 0.5], [1.0, -1.0]]);
        let schema = MixedSchema::new(1, vec![2]).unwrap();
        let mut buf = Vec::new();
        write_latent_csv(&map, &schema, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "variable,level,label,copy,z_1,z_2\n1,1,1,1,0,0.5\n1,2,2,1,1,-1\n");
    }
}
