//! Marginalizing the oldest variable of a linear chain keeps the solution of
//! the remaining window equal to the full batch solution.

use nalgebra::{DMatrix, DVector, Vector3};
use trackcal::graph::{marginalize, optimize, Factor, LinearFactor, SolverConfig, Values, VarKey};

fn unary(i: u64, target: [f64; 3]) -> LinearFactor {
    LinearFactor {
        keys: vec![VarKey::velocity(i)],
        blocks: vec![DMatrix::identity(3, 3)],
        offset: -DVector::from_column_slice(&target),
        weights: DVector::from_element(3, 1.0),
    }
}

fn between(i: u64, step: [f64; 3]) -> LinearFactor {
    LinearFactor {
        keys: vec![VarKey::velocity(i - 1), VarKey::velocity(i)],
        blocks: vec![-DMatrix::identity(3, 3), DMatrix::identity(3, 3)],
        offset: -DVector::from_column_slice(&step),
        weights: DVector::from_element(3, 10.0),
    }
}

fn main() -> trackcal::error::Result<()> {
    let factors = [unary(0, [0.0; 3]), between(1, [1.0, 0.0, 0.5]), unary(1, [1.2, 0.1, 0.4]), between(2, [1.0, 0.0, 0.5])];
    let all: Vec<&dyn Factor> = factors.iter().map(|f| f as &dyn Factor).collect();

    let mut batch = Values::new();
    for i in 0..3 {
        batch.insert_vector(VarKey::velocity(i), Vector3::zeros());
    }
    optimize(&all, None, &mut batch, &SolverConfig::default())?;

    let mut window = batch.clone();
    let (prior, _) = marginalize(&all[..2], None, &window, &[VarKey::velocity(0)])?;
    window.remove(&VarKey::velocity(0));
    optimize(&all[2..], prior.as_ref(), &mut window, &SolverConfig::default())?;

    for i in 1..3 {
        let k = VarKey::velocity(i);
        let (a, b) = (batch.vector(&k).unwrap(), window.vector(&k).unwrap());
        println!("x{i}: batch {:?}  window {:?}  difference {:.1e}", a.as_slice(), b.as_slice(), (a - b).norm());
    }
    Ok(())
}
