//! Seeded generators for the polygon, digit and subset-anomaly tasks, the
//! zero-padding scheme and the JSON-lines dataset format.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract_err, DespError, Result};
use crate::langevin::chain_rng;
use crate::nn::{norm, TAU_PAD};

pub const POLYGON_RADIUS: f64 = 0.5;
pub const DIGIT_DENSITY: f64 = 30.0;
pub const DIGIT_MIN_POINTS: usize = 12;
pub const DIGIT_JITTER: f64 = 0.01;
pub const ANOMALY_ATTRIBUTES: usize = 11;
pub const ANOMALY_SET_SIZE: usize = 5;
pub const ANOMALY_FLIP_PROB: f64 = 0.1;
pub const ANOMALY_NOISE: f64 = 0.05;
/// Prior probability of an attribute bit outside the shared pair.
pub const ANOMALY_ATTR_PROB: f64 = 0.25;
/// Smallest complement that counts as an inlier group.
pub const ANOMALY_MIN_INLIERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Polygons,
    Digits,
    Anomaly,
}

impl std::str::FromStr for Task {
    type Err = DespError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polygons" => Ok(Task::Polygons),
            "digits" => Ok(Task::Digits),
            "anomaly" => Ok(Task::Anomaly),
            other => Err(DespError::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Polygons => "polygons",
            Task::Digits => "digits",
            Task::Anomaly => "anomaly",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Digit {
    One,
    Seven,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Style {
    A,
    B,
}

/// Discrete conditioning input of an example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Size(usize),
    Digit(Digit),
    None,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    /// Shared attribute pair of the constructed inliers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outliers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_subsets: Option<Vec<Vec<usize>>>,
}

/// One `(x, Y)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Label,
    pub set: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: Meta,
}

pub fn gen_polygon(n: usize, max_size: usize, rng: &mut impl Rng) -> Result<Example> {
    if n < 3 || n > max_size {
        return contract_err(format!("polygon size {n} outside 3..={max_size}"));
    }
    let phi = rng.random_range(0.0..TAU);
    Ok(polygon_at(n, phi))
}

/// Noiseless regular `n`-gon of radius 0.5 around the origin rotated by `phi`.
pub fn polygon_at(n: usize, phi: f64) -> Example {
    let set = (0..n)
        .map(|k| {
            let a = phi + TAU * k as f64 / n as f64;
            vec![POLYGON_RADIUS * a.cos(), POLYGON_RADIUS * a.sin()]
        })
        .collect();
    Example {
        x: Label::Size(n),
        set,
        meta: Meta {
            task: Some(Task::Polygons),
            rotation: Some(phi),
            ..Meta::default()
        },
    }
}

type Segment = ([f64; 2], [f64; 2]);

/// Stroke skeleton of a digit in a given writing style.
pub fn skeleton(digit: Digit, style: Style) -> Vec<Segment> {
    let mut segs = match digit {
        Digit::One => vec![([0.5, 0.1], [0.5, 0.9])],
        Digit::Seven => vec![([0.2, 0.9], [0.8, 0.9]), ([0.8, 0.9], [0.35, 0.1])],
    };
    if style == Style::B {
        match digit {
            Digit::One => {
                segs.push(([0.35, 0.75], [0.5, 0.9]));
                segs.push(([0.35, 0.1], [0.65, 0.1]));
            }
            Digit::Seven => segs.push(([0.35, 0.5], [0.65, 0.5])),
        }
    }
    segs
}

fn seg_len(s: &Segment) -> f64 {
    ((s.1[0] - s.0[0]).powi(2) + (s.1[1] - s.0[1]).powi(2)).sqrt()
}

pub fn skeleton_length(digit: Digit, style: Style) -> f64 {
    skeleton(digit, style).iter().map(seg_len).sum()
}

pub fn digit_point_count(digit: Digit, style: Style) -> usize {
    ((DIGIT_DENSITY * skeleton_length(digit, style)).round() as usize).max(DIGIT_MIN_POINTS)
}

/// Largest point count over all digits and styles.
pub fn digit_max_size() -> usize {
    [Digit::One, Digit::Seven]
        .iter()
        .flat_map(|&d| [Style::A, Style::B].map(|s| digit_point_count(d, s)))
        .max()
        .unwrap_or(DIGIT_MIN_POINTS)
}

/// Euclidean distance from `p` to a segment.
pub fn segment_dist(p: &[f64], s: &Segment) -> f64 {
    let (a, b) = s;
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

pub fn gen_digit(digit: Digit, rng: &mut impl Rng) -> Example {
    let style = if rng.random_bool(0.5) { Style::A } else { Style::B };
    let segs = skeleton(digit, style);
    let lens: Vec<f64> = segs.iter().map(seg_len).collect();
    let total: f64 = lens.iter().sum();
    let count = digit_point_count(digit, style);
    let jitter = Normal::new(0.0, DIGIT_JITTER).expect("valid sigma");
    let set = (0..count)
        .map(|_| {
            let mut s = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < segs.len() && s >= lens[k] {
                s -= lens[k];
                k += 1;
            }
            let (a, b) = segs[k];
            let t = (s / lens[k]).min(1.0);
            let mut j = [jitter.sample(rng), jitter.sample(rng)];
            let jn = (j[0] * j[0] + j[1] * j[1]).sqrt();
            if jn > 4.0 * DIGIT_JITTER {
                let c = 4.0 * DIGIT_JITTER / jn;
                j = [j[0] * c, j[1] * c];
            }
            (0..2)
                .map(|i| (a[i] + t * (b[i] - a[i]) + j[i]).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    Example {
        x: Label::Digit(digit),
        set,
        meta: Meta {
            task: Some(Task::Digits),
            style: Some(style),
            ..Meta::default()
        },
    }
}

/// Elements holding both bits of `pair`.
fn holders(attrs: &[[bool; ANOMALY_ATTRIBUTES]], pair: (usize, usize)) -> Vec<usize> {
    (0..attrs.len())
        .filter(|&i| attrs[i][pair.0] && attrs[i][pair.1])
        .collect()
}

/// Outlier subsets `O` whose complement is a group of at least three elements
/// that jointly hold some attribute pair no member of `O` holds. Sorted.
pub fn valid_outlier_subsets(attrs: &[[bool; ANOMALY_ATTRIBUTES]]) -> Vec<Vec<usize>> {
    let mut family = Vec::new();
    for a in 0..ANOMALY_ATTRIBUTES {
        for b in a + 1..ANOMALY_ATTRIBUTES {
            let inliers = holders(attrs, (a, b));
            if inliers.len() >= ANOMALY_MIN_INLIERS {
                let out: Vec<usize> = (0..attrs.len()).filter(|i| !inliers.contains(i)).collect();
                family.push(out);
            }
        }
    }
    family.sort();
    family.dedup();
    family
}

pub fn gen_anomaly_set(rng: &mut impl Rng) -> Example {
    let a = rng.random_range(0..ANOMALY_ATTRIBUTES);
    let mut b = rng.random_range(0..ANOMALY_ATTRIBUTES - 1);
    if b >= a {
        b += 1;
    }
    let inliers = rng.random_range(3..=ANOMALY_SET_SIZE);
    let mut attrs: Vec<[bool; ANOMALY_ATTRIBUTES]> = Vec::with_capacity(ANOMALY_SET_SIZE);
    for i in 0..ANOMALY_SET_SIZE {
        loop {
            let mut v = [false; ANOMALY_ATTRIBUTES];
            for bit in v.iter_mut() {
                *bit = rng.random_bool(ANOMALY_ATTR_PROB);
            }
            if i < inliers {
                v[a] = true;
                v[b] = true;
                attrs.push(v);
                break;
            }
            if !(v[a] && v[b]) {
                attrs.push(v);
                break;
            }
        }
    }
    let mut order: Vec<usize> = (0..ANOMALY_SET_SIZE).collect();
    order.shuffle(rng);
    let attrs: Vec<_> = order.iter().map(|&i| attrs[i]).collect();
    let outliers: Vec<usize> = (0..ANOMALY_SET_SIZE).filter(|&p| order[p] >= inliers).collect();

    let noise = Normal::new(0.0, ANOMALY_NOISE).expect("valid sigma");
    let set = attrs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut row: Vec<f64> = v
                .iter()
                .map(|&bit| {
                    let seen = bit ^ rng.random_bool(ANOMALY_FLIP_PROB);
                    f64::from(u8::from(seen)) + noise.sample(rng)
                })
                .collect();
            row.push(if outliers.contains(&i) { 1.0 } else { -1.0 });
            row
        })
        .collect();
    Example {
        x: Label::None,
        set,
        meta: Meta {
            task: Some(Task::Anomaly),
            attributes: Some((a.min(b), a.max(b))),
            outliers: Some(outliers),
            valid_subsets: Some(valid_outlier_subsets(&attrs)),
            ..Meta::default()
        },
    }
}

/// Appends zero rows up to `max_size`.
pub fn pad(set: &[Vec<f64>], max_size: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if set.len() > max_size {
        return contract_err(format!("set of {} elements exceeds {max_size}", set.len()));
    }
    if set.iter().any(|r| r.len() != dim) {
        return contract_err("set element has the wrong width");
    }
    let mut rows = set.to_vec();
    rows.resize(max_size, vec![0.0; dim]);
    Ok(rows)
}

/// Drops rows whose norm is below `tau`.
pub fn unpad(rows: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    rows.iter().filter(|r| norm(r) >= tau).cloned().collect()
}

/// Shape parameters shared by all examples of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDims {
    pub task: Task,
    pub x_dim: usize,
    pub y_dim: usize,
    pub max_size: usize,
}

impl TaskDims {
    /// Polygons encode `n` as a one-hot over `1..=max_size`.
    pub fn polygons(max_size: usize) -> Self {
        Self {
            task: Task::Polygons,
            x_dim: max_size,
            y_dim: 2,
            max_size,
        }
    }

    pub fn digits() -> Self {
        Self {
            task: Task::Digits,
            x_dim: 2,
            y_dim: 2,
            max_size: digit_max_size(),
        }
    }

    /// Features plus the indicator; the input is a constant.
    pub fn anomaly() -> Self {
        Self {
            task: Task::Anomaly,
            x_dim: 1,
            y_dim: ANOMALY_ATTRIBUTES + 1,
            max_size: ANOMALY_SET_SIZE,
        }
    }

    /// Dims covering every example of `data`.
    pub fn infer(data: &[Example]) -> Result<Self> {
        let task = data
            .first()
            .and_then(|e| e.meta.task)
            .or_else(|| data.first().map(|e| guess_task(&e.x)))
            .ok_or_else(|| DespError::Contract("empty dataset".into()))?;
        Ok(match task {
            Task::Polygons => {
                let m = data
                    .iter()
                    .map(|e| match e.x {
                        Label::Size(n) => n,
                        _ => e.set.len(),
                    })
                    .max()
                    .unwrap_or(3);
                Self::polygons(m)
            }
            Task::Digits => Self::digits(),
            Task::Anomaly => Self::anomaly(),
        })
    }

    /// Columns the sampler may move; `None` means all of them.
    pub fn free_columns(&self) -> Option<std::ops::Range<usize>> {
        (self.task == Task::Anomaly).then_some(ANOMALY_ATTRIBUTES..ANOMALY_ATTRIBUTES + 1)
    }

    pub fn encode(&self, x: &Label) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.x_dim];
        match (self.task, x) {
            (Task::Polygons, Label::Size(n)) if (1..=self.x_dim).contains(n) => v[n - 1] = 1.0,
            (Task::Digits, Label::Digit(Digit::One)) => v[0] = 1.0,
            (Task::Digits, Label::Digit(Digit::Seven)) => v[1] = 1.0,
            (Task::Anomaly, _) => v[0] = 1.0,
            (task, x) => return contract_err(format!("input {x:?} does not fit task {task}")),
        }
        Ok(v)
    }

    /// `[B, x_dim]` inputs and `[B, M, d]` padded targets.
    pub fn batch(&self, examples: &[&Example]) -> Result<(Tensor, Tensor)> {
        let mut xs = Vec::with_capacity(examples.len() * self.x_dim);
        let mut ys = Vec::with_capacity(examples.len() * self.max_size * self.y_dim);
        for e in examples {
            xs.extend(self.encode(&e.x)?);
            for row in pad(&e.set, self.max_size, self.y_dim)? {
                ys.extend(row);
            }
        }
        Ok((
            Tensor::new(vec![examples.len(), self.x_dim], xs)?,
            Tensor::new(vec![examples.len(), self.max_size, self.y_dim], ys)?,
        ))
    }
}

fn guess_task(x: &Label) -> Task {
    match x {
        Label::Size(_) => Task::Polygons,
        Label::Digit(_) => Task::Digits,
        Label::None => Task::Anomaly,
    }
}

/// Generation request for a whole dataset.
#[derive(Clone, Debug)]
pub struct GenSpec {
    pub task: Task,
    pub count: usize,
    pub seed: u64,
    /// Polygon sizes; ignored by the other tasks.
    pub sizes: RangeInclusive<usize>,
}

/// Example `i` is drawn from its own stream, so prefixes of a larger
/// dataset equal smaller datasets with the same seed.
pub fn generate(spec: &GenSpec) -> Result<Vec<Example>> {
    let (lo, hi) = (*spec.sizes.start(), *spec.sizes.end());
    if spec.task == Task::Polygons && (lo < 3 || lo > hi) {
        return contract_err(format!("bad polygon size range {lo}..{hi}"));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng: ChaCha8Rng = chain_rng(spec.seed, i as u64);
            match spec.task {
                Task::Polygons => {
                    let n = rng.random_range(lo..=hi);
                    gen_polygon(n, hi, &mut rng)
                }
                Task::Digits => {
                    let d = if rng.random_bool(0.5) { Digit::One } else { Digit::Seven };
                    Ok(gen_digit(d, &mut rng))
                }
                Task::Anomaly => Ok(gen_anomaly_set(&mut rng)),
            }
        })
        .collect()
}

pub fn write_jsonl(path: &Path, data: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in data {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line)
            .map_err(|err| DespError::Parse(format!("line {}: {err}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// True iff every element's norm clears the padding threshold.
pub fn padding_compatible(e: &Example) -> bool {
    e.set.iter().all(|r| norm(r) > TAU_PAD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Checks every subset against the definition directly.
    fn exhaustive_valid(attrs: &[[bool; ANOMALY_ATTRIBUTES]]) -> Vec<Vec<usize>> {
        let n = attrs.len();
        let mut family = Vec::new();
        for mask in 0u32..(1 << n) {
            let out: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let keep: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
            if keep.len() < ANOMALY_MIN_INLIERS {
                continue;
            }
            let ok = (0..ANOMALY_ATTRIBUTES).any(|a| {
                (0..ANOMALY_ATTRIBUTES).any(|b| {
                    a != b
                        && keep.iter().all(|&i| attrs[i][a] && attrs[i][b])
                        && out.iter().all(|&i| !(attrs[i][a] && attrs[i][b]))
                })
            });
            if ok {
                family.push(out);
            }
        }
        family.sort();
        family
    }

    #[test]
    fn polygon_examples() {
        let e = polygon_at(4, 0.0);
        let expect = [(0.5, 0.0), (0.0, 0.5), (-0.5, 0.0), (0.0, -0.5)];
        for (v, (x, y)) in e.set.iter().zip(expect) {
            assert!((v[0] - x).abs() < 1e-15 && (v[1] - y).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..=6 {
            let e = gen_polygon(n, 6, &mut rng).unwrap();
            assert_eq!(e.set.len(), n);
            for v in &e.set {
                assert!((norm(v) - 0.5).abs() < 1e-15);
            }
            let angles: Vec<f64> = e.set.iter().map(|v| v[1].atan2(v[0])).collect();
            for k in 0..n {
                let gap = (angles[(k + 1) % n] - angles[k]).rem_euclid(TAU);
                assert!((gap - TAU / n as f64).abs() < 1e-12);
            }
        }
        assert!(gen_polygon(2, 6, &mut rng).is_err());
        assert!(gen_polygon(7, 6, &mut rng).is_err());
    }

    #[test]
    fn digit_examples() {
        assert!(digit_point_count(Digit::One, Style::A) < digit_point_count(Digit::One, Style::B));
        assert_eq!(digit_max_size(), 55);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            for d in [Digit::One, Digit::Seven] {
                let e = gen_digit(d, &mut rng);
                let style = e.meta.style.unwrap();
                assert_eq!(e.set.len(), digit_point_count(d, style));
                let segs = skeleton(d, style);
                for p in &e.set {
                    let near = segs.iter().map(|s| segment_dist(p, s)).fold(f64::INFINITY, f64::min);
                    assert!(near <= 4.0 * DIGIT_JITTER + 1e-12);
                    assert!(p.iter().all(|c| (0.0..=1.0).contains(c)));
                }
                assert!(padding_compatible(&e));
            }
        }
    }

    #[test]
    fn anomaly_family_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let mut v = [[false; ANOMALY_ATTRIBUTES]; ANOMALY_SET_SIZE];
            for row in v.iter_mut() {
                for b in row.iter_mut() {
                    *b = rng.random_bool(0.6);
                }
            }
            assert_eq!(valid_outlier_subsets(&v), exhaustive_valid(&v));
        }
        for _ in 0..300 {
            let e = gen_anomaly_set(&mut rng);
            let family = e.meta.valid_subsets.clone().unwrap();
            assert!(!family.is_empty());
            assert_eq!(e.set.len(), ANOMALY_SET_SIZE);
            assert!(e.set.iter().all(|r| r.len() == ANOMALY_ATTRIBUTES + 1));
            let outliers = e.meta.outliers.clone().unwrap();
            assert!(family.contains(&outliers));
            for (i, r) in e.set.iter().enumerate() {
                assert_eq!(r[ANOMALY_ATTRIBUTES] == 1.0, outliers.contains(&i));
            }
        }
    }

    #[test]
    fn five_inliers_admit_the_empty_subset() {
        let mut v = [[false; ANOMALY_ATTRIBUTES]; ANOMALY_SET_SIZE];
        for row in v.iter_mut() {
            row[2] = true;
            row[7] = true;
        }
        v[0][4] = true;
        assert!(valid_outlier_subsets(&v).contains(&vec![]));
    }

    #[test]
    fn noiseless_construction_is_valid() {
        // rows 0..3 share attributes 1 and 9, rows 3 and 4 hold only one
        let mut v = [[false; ANOMALY_ATTRIBUTES]; ANOMALY_SET_SIZE];
        for row in v.iter_mut().take(3) {
            row[1] = true;
            row[9] = true;
        }
        v[3][1] = true;
        v[4][9] = true;
        let family = valid_outlier_subsets(&v);
        assert!(family.contains(&vec![3, 4]));
    }

    #[test]
    fn pad_unpad() {
        let y = vec![vec![0.5, 0.0], vec![0.0, -0.5]];
        let p = pad(&y, 4, 2).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(unpad(&p, TAU_PAD), y);
        assert!(unpad(&vec![vec![0.0, 0.0]; 3], TAU_PAD).is_empty());
        assert_eq!(unpad(&[vec![TAU_PAD, 0.0]], TAU_PAD).len(), 1);
        assert!(pad(&y, 1, 2).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        for task in [Task::Polygons, Task::Digits, Task::Anomaly] {
            let spec = GenSpec {
                task,
                count: 20,
                seed: 9,
                sizes: 3..=6,
            };
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b);
            let short = generate(&GenSpec { count: 5, ..spec.clone() }).unwrap();
            assert_eq!(&a[..5], &short[..]);
            let c = generate(&GenSpec { seed: 10, ..spec }).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut data = Vec::new();
        for task in [Task::Polygons, Task::Digits, Task::Anomaly] {
            data.extend(
                generate(&GenSpec {
                    task,
                    count: 10,
                    seed: 1,
                    sizes: 3..=6,
                })
                .unwrap(),
            );
        }
        write_jsonl(&path, &data).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), data);
    }

    #[test]
    fn encoding_and_batches() {
        let dims = TaskDims::polygons(6);
        assert_eq!(dims.encode(&Label::Size(4)).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(dims.encode(&Label::Digit(Digit::One)).is_err());
        let e = polygon_at(3, 0.1);
        let (x, y) = dims.batch(&[&e, &e]).unwrap();
        assert_eq!(x.shape(), &[2, 6]);
        assert_eq!(y.shape(), &[2, 6, 2]);
        assert_eq!(&y.data()[6..12], &[0.0; 6]);
        let data = vec![polygon_at(3, 0.0), polygon_at(5, 0.0)];
        assert_eq!(TaskDims::infer(&data).unwrap().max_size, 5);
    }
}
