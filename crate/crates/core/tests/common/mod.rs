#![allow(dead_code)]

use std::path::PathBuf;

use adjcca::io::{indicators_from_categorical, load_csv, BlockSpec, Dataset};
use adjcca::linalg::SymMatrix;
use adjcca::TwoBlockData;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Wishart-like PSD matrix with `n + 2` degrees of freedom.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let b = uniform(rng, n, n + 2);
    SymMatrix::new(&b * b.transpose() / (n + 2) as f64).unwrap()
}

/// Two blocks driven by `latent` shared normal factors plus noise.
pub fn latent_data(seed: u64, n: usize, p: usize, q: usize, latent: usize) -> TwoBlockData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal(&mut rng, n, latent);
    let x = &z * uniform(&mut rng, latent, p) + normal(&mut rng, n, p);
    let y = &z * uniform(&mut rng, latent, q) + normal(&mut rng, n, q);
    TwoBlockData::new(x, y, names("x", p), names("y", q)).unwrap()
}

/// Independent blocks.
pub fn null_data(seed: u64, n: usize, p: usize, q: usize) -> TwoBlockData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal(&mut rng, n, p);
    let y = normal(&mut rng, n, q);
    TwoBlockData::new(x, y, names("x", p), names("y", q)).unwrap()
}

/// 56 samples of five chemical measurements whose means shift with one of
/// three units, coded as three indicator columns.
pub fn sandstone_like(seed: u64) -> TwoBlockData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = [7usize, 11, 38];
    let units: Vec<String> = ["Wilhelm", "SubMulinia", "Upper"]
        .iter()
        .zip(counts)
        .flat_map(|(u, c)| std::iter::repeat_n(u.to_string(), c))
        .collect();
    let ind = indicators_from_categorical("unit", &units).unwrap();
    let shift = uniform(&mut rng, 3, 5) * 2.0;
    let x = &ind.matrix * shift + normal(&mut rng, units.len(), 5);
    TwoBlockData::new(x, ind.matrix, names("chem", 5), ind.names).unwrap()
}

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Loads `tests/fixtures/<name>/data.csv` with its spec, if the data file exists.
pub fn load_fixture(name: &str) -> Option<Result<Dataset, adjcca::Error>> {
    let dir = fixture_dir(name);
    let data = dir.join("data.csv");
    if !data.exists() {
        return None;
    }
    Some(BlockSpec::from_path(&dir.join("spec.json")).and_then(|spec| load_csv(&data, &spec)))
}

/// Writes a synthetic two-block CSV plus spec into `dir`.
pub fn write_synthetic_csv(dir: &std::path::Path, seed: u64) -> (PathBuf, PathBuf) {
    let d = latent_data(seed, 50, 4, 4, 2);
    let mut body = String::from("x0,x1,x2,x3,y0,y1,y2,y3,grp\n");
    for i in 0..d.n() {
        let cells: Vec<String> = d.x().row(i).iter().chain(d.y().row(i).iter()).map(|v| v.to_string()).collect();
        let grp = if d.x()[(i, 0)] > 0.0 { "high" } else { "low" };
        body.push_str(&format!("{},{grp}\n", cells.join(",")));
    }
    let data = dir.join("data.csv");
    std::fs::write(&data, body).unwrap();
    let spec = dir.join("spec.toml");
    std::fs::write(
        &spec,
        "x_columns = [\"x0\", \"x1\", \"x2\", \"x3\"]\ny_columns = [\"y0\", \"y1\", \"y2\", \"y3\"]\nsupplementary_columns = [\"grp\"]\n",
    )
    .unwrap();
    (data, spec)
}
