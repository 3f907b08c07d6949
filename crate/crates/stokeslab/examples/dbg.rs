use stokeslab::diffop::DiffOp;
use stokeslab::hlt::formal_solutions;
use stokeslab::numint::*;
use stokeslab::stokesgeo::{sector_cover, stokes_directions};

fn main() {
    let p = DiffOp::parse("D^2 - z").unwrap().at_infinity().unwrap();
    let datum = formal_solutions(&p, 20).unwrap();
    let fs: Vec<_> = datum.solutions.iter().map(|s| s.factor.clone()).collect();
    let cover = sector_cover(&stokes_directions(&fs), None).unwrap();
    match stokes_matrices(&p, &datum, &cover, DEFAULT_MATCH_RADIUS) {
        Ok(set) => {
            for (i, m) in set.matrices.iter().enumerate() {
                println!("S_{i} =\n{m:.9}");
            }
            println!("formal monodromy:\n{:.6}", set.formal_monodromy);
            println!("valid: {}", set.validate().is_valid());
            match set.total_monodromy() {
                Ok(m) => println!("total monodromy:\n{m:.9}"),
                Err(e) => println!("total monodromy error: {e}"),
            }
        }
        Err(e) => println!("stokes_matrices error: {e}"),
    }
}
