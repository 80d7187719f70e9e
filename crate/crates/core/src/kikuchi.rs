//! Kikuchi's aggregate state and path variables for a homogeneous Ising
//! lattice, and the closed-form path probability function over them.
//!
//! Index conventions follow the rest of the crate: state 0 is spin +1, pair
//! tables are `i * 2 + j`, site paths are `past * 2 + future` and pair paths
//! are `(i * 2 + j) * 4 + (k * 2 + l)`.

use rand::Rng;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::dynbp::ppf_evaluate;
use crate::error::{Error, Result};
use crate::ising::{build_kinetic_conditional, spin, IsingParams, KineticParams, Topology};
use crate::region::RegionGraph;
use crate::temporal::{PathBeliefStore, TemporalModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KikuchiVariables {
    /// `x_i`: site state probabilities.
    pub x: [f64; 2],
    /// `y_ij`: bond state probabilities.
    pub y: [f64; 4],
    /// `X_{i,j}`: site path probabilities.
    pub path_x: [f64; 4],
    /// `Y_{ij,kl}`: bond path probabilities.
    pub path_y: [f64; 16],
}

impl KikuchiVariables {
    pub fn uniform() -> Self {
        KikuchiVariables { x: [0.5; 2], y: [0.25; 4], path_x: [0.25; 4], path_y: [0.0625; 16] }
    }

    /// Largest violation of the normalization and marginal relations between
    /// the variables.
    pub fn relation_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut check = |a: f64, b: f64| worst = worst.max((a - b).abs());
        check(self.x.iter().sum(), 1.0);
        check(self.y.iter().sum(), 1.0);
        check(self.path_x.iter().sum(), 1.0);
        check(self.path_y.iter().sum(), 1.0);
        for i in 0..2 {
            check(self.y[i * 2] + self.y[i * 2 + 1], self.x[i]);
            check(self.y[i] + self.y[2 + i], self.x[i]);
            check(self.path_x[i * 2] + self.path_x[i * 2 + 1], self.x[i]);
        }
        for p in 0..4 {
            check(self.path_y[p * 4..p * 4 + 4].iter().sum(), self.y[p]);
        }
        worst
    }
}

fn xlnx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

fn stirling(v: f64) -> f64 {
    xlnx(v) - v
}

/// Per-site energy of the state variables, `-(z/2) J sum y_ij s_i s_j - h sum x_i s_i`.
pub fn state_energy(v: &KikuchiVariables, coupling: f64, field: f64, z: f64) -> f64 {
    let pair: f64 = (0..4).map(|p| v.y[p] * spin(p / 2) * spin(p % 2)).sum();
    let site: f64 = (0..2).map(|i| v.x[i] * spin(i)).sum();
    -0.5 * z * coupling * pair - field * site
}

/// Per-site energy change carried by the path variables.
pub fn path_energy_change(v: &KikuchiVariables, coupling: f64, field: f64, z: f64) -> f64 {
    let pair: f64 = (0..16)
        .map(|q| {
            let (past, fut) = (q / 4, q % 4);
            let before = spin(past / 2) * spin(past % 2);
            let after = spin(fut / 2) * spin(fut % 2);
            v.path_y[q] * (after - before)
        })
        .sum();
    let site: f64 = (0..4).map(|q| v.path_x[q] * (spin(q % 2) - spin(q / 2))).sum();
    -0.5 * z * coupling * pair - field * site
}

/// `(1/N) ln P` of the path variables, with `0 ln 0 = 0`.
///
/// The energy term is the exact per-site energy change of
/// [`path_energy_change`], which for single-flip paths is
/// `2 z K (Y_1 - Y_2) + 2 L (X(1) - X(-1))`.
pub fn kikuchi_ppf(v: &KikuchiVariables, coupling: f64, field: f64, z: f64, theta_dt: f64) -> f64 {
    let entropy = (z - 1.0) * v.path_x.iter().map(|&b| stirling(b)).sum::<f64>()
        - 0.5 * z * v.path_y.iter().map(|&b| stirling(b)).sum::<f64>();
    let mut rate = 0.0;
    for i in 0..2 {
        let (stay, flip) = (v.path_x[i * 3], v.path_x[i * 2 + (1 - i)]);
        if flip > 0.0 {
            rate += flip * theta_dt.ln();
        }
        if stay > 0.0 {
            rate += stay * (1.0 - theta_dt).ln();
        }
    }
    entropy + rate - path_energy_change(v, coupling, field, z)
}

/// Aggregated variables and how far any single region strays from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub variables: KikuchiVariables,
    /// Largest absolute gap between a region table entry and its average.
    pub spread: f64,
}

enum Role {
    Site,
    Bond,
    Skip,
}

fn roles(rg: &RegionGraph) -> Result<Vec<Role>> {
    rg.regions()
        .iter()
        .map(|r| match (r.variables.len(), rg.parents(r.id).is_empty()) {
            (1, false) => Ok(Role::Site),
            (2, true) => Ok(Role::Bond),
            (1, true) => Ok(Role::Skip),
            _ => Err(Error::Usage(format!(
                "region {} is neither a bond nor a site region of a Bethe graph",
                r.id
            ))),
        })
        .collect()
}

/// Average small-region priors and paths into `x` and `X`, and bond-region
/// priors and paths into `y` and `Y`.
pub fn aggregate_kikuchi_variables(path: &PathBeliefStore, rg: &RegionGraph) -> Result<Aggregate> {
    let roles = roles(rg)?;
    let mut sums = (vec![0.0; 2], vec![0.0; 4], vec![0.0; 4], vec![0.0; 16]);
    let (mut sites, mut bonds) = (0usize, 0usize);
    for (r, role) in roles.iter().enumerate() {
        let (prior, joint) = (&path.prior[r], &path.path[r]);
        let (ps, js, count) = match role {
            Role::Site => (&mut sums.0, &mut sums.2, &mut sites),
            Role::Bond => (&mut sums.1, &mut sums.3, &mut bonds),
            Role::Skip => continue,
        };
        if prior.len() != ps.len() || joint.len() != js.len() {
            return Err(Error::Usage(format!("region {r} is not over binary variables")));
        }
        ps.iter_mut().zip(prior).for_each(|(a, b)| *a += b);
        js.iter_mut().zip(joint).for_each(|(a, b)| *a += b);
        *count += 1;
    }
    if sites == 0 || bonds == 0 {
        return Err(Error::Usage("region graph has no bond or no site regions".into()));
    }
    let avg = |v: &[f64], n: usize| v.iter().map(|a| a / n as f64).collect::<Vec<_>>();
    let (x, y, px, py) = (avg(&sums.0, sites), avg(&sums.1, bonds), avg(&sums.2, sites), avg(&sums.3, bonds));
    let mut spread: f64 = 0.0;
    for (r, role) in roles.iter().enumerate() {
        let (p, j) = match role {
            Role::Site => (&x, &px),
            Role::Bond => (&y, &py),
            Role::Skip => continue,
        };
        for (a, b) in path.prior[r].iter().zip(p).chain(path.path[r].iter().zip(j)) {
            spread = spread.max((a - b).abs());
        }
    }
    let variables = KikuchiVariables {
        x: [x[0], x[1]],
        y: y.try_into().expect("four bond states"),
        path_x: px.try_into().expect("four site paths"),
        path_y: py.try_into().expect("sixteen bond paths"),
    };
    Ok(Aggregate { variables, spread })
}

/// Random indistinguishable path variables around a product prior with
/// `P(+1) = p_up`. Bonds move by at most one flip per step and the bond
/// tables are symmetric under swapping the two sites.
pub fn random_homogeneous_config<R: Rng>(p_up: f64, rng: &mut R) -> KikuchiVariables {
    let x = [p_up, 1.0 - p_up];
    let y = [x[0] * x[0], x[0] * x[1], x[1] * x[0], x[1] * x[1]];
    // trans[past][fut] with the swap symmetry built in.
    let mut trans = [[0.0; 4]; 4];
    for same in [0, 3] {
        let a = rng.gen_range(0.01..0.3);
        trans[same][same] = 1.0 - 2.0 * a;
        trans[same][1] = a;
        trans[same][2] = a;
    }
    let (down, up) = (rng.gen_range(0.01..0.45), rng.gen_range(0.01..0.45));
    // (+,-): flipping the first site gives (-,-), the second gives (+,+).
    trans[1] = [up, 1.0 - down - up, 0.0, down];
    trans[2] = [up, 0.0, 1.0 - down - up, down];
    let mut path_y = [0.0; 16];
    for past in 0..4 {
        for fut in 0..4 {
            path_y[past * 4 + fut] = y[past] * trans[past][fut];
        }
    }
    // Site paths from the first site of the bond; the second gives the same.
    let mut path_x = [0.0; 4];
    for (q, &b) in path_y.iter().enumerate() {
        let (past, fut) = (q / 4, q % 4);
        path_x[(past / 2) * 2 + fut / 2] += b;
    }
    KikuchiVariables { x, y, path_x, path_y }
}

/// Fill every region of a Bethe graph with the same homogeneous tables.
pub fn homogeneous_path_store(tm: &TemporalModel, v: &KikuchiVariables) -> Result<PathBeliefStore> {
    let roles = roles(&tm.regions)?;
    let mut store = PathBeliefStore { path: Vec::new(), prior: Vec::new() };
    for role in roles {
        let (prior, joint): (&[f64], &[f64]) = match role {
            Role::Bond => (&v.y, &v.path_y),
            Role::Site | Role::Skip => (&v.x, &v.path_x),
        };
        store.prior.push(prior.to_vec());
        store.path.push(joint.to_vec());
    }
    Ok(store)
}

/// Lattice coordination number `2 |E| / N`.
pub fn coordination(p: &IsingParams) -> f64 {
    2.0 * p.edges.len() as f64 / p.num_sites() as f64
}

/// `ppf_evaluate / N + kikuchi_ppf` on `configs` random homogeneous path
/// configurations of a homogeneous torus. The two formulations agree when
/// these offsets are all equal.
pub fn ppf_offsets(
    p: &IsingParams,
    kinetic: KineticParams,
    p_up: f64,
    configs: usize,
    seed: u64,
    floor: f64,
) -> Result<Vec<f64>> {
    if p.topology != Topology::Torus {
        return Err(Error::Usage("the Kikuchi comparison needs a torus".into()));
    }
    let (coupling, field) = (p.couplings[0], p.fields[0]);
    if p.couplings.iter().any(|&c| c != coupling) || p.fields.iter().any(|&h| h != field) {
        return Err(Error::Usage("the Kikuchi comparison needs uniform couplings and fields".into()));
    }
    let tm = build_kinetic_conditional(p, kinetic)?;
    let z = coordination(p);
    let n = p.num_sites() as f64;
    let mut rng = Pcg64::seed_from_u64(seed);
    (0..configs)
        .map(|_| {
            let v = random_homogeneous_config(p_up, &mut rng);
            let store = homogeneous_path_store(&tm, &v)?;
            let general = ppf_evaluate(&tm, &store, floor)?;
            Ok(general / n + kikuchi_ppf(&v, coupling, field, z, kinetic.theta_dt))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynbp::{dynbp_step, DynOptions};
    use crate::gbp::SolverOptions;
    use crate::temporal::priors_from_product;

    const FLOOR: f64 = 1e-12;

    #[test]
    fn uniform_value_by_hand() {
        // z = 4: 3 * 4 * L(1/4) - 2 * 16 * L(1/16) + ln(1/2) = ln 2 - 1.
        let v = kikuchi_ppf(&KikuchiVariables::uniform(), 0.0, 0.0, 4.0, 0.5);
        assert!((v - (2f64.ln() - 1.0)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn frozen_paths_keep_only_the_stay_rate() {
        let mut v = KikuchiVariables::uniform();
        v.x = [1.0, 0.0];
        v.y = [1.0, 0.0, 0.0, 0.0];
        v.path_x = [1.0, 0.0, 0.0, 0.0];
        v.path_y = [0.0; 16];
        v.path_y[0] = 1.0;
        for theta in [0.1, 0.5, 0.9] {
            let got = kikuchi_ppf(&v, 0.7, -0.3, 4.0, theta);
            // Stirling terms: 3 * (-1) - 2 * (-1).
            assert!((got - ((1.0 - theta).ln() - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn aggregation_of_point_and_uniform_beliefs() {
        let p = IsingParams::homogeneous(3, 3, Topology::Torus, 0.2, 0.1).unwrap();
        let tm = build_kinetic_conditional(&p, KineticParams::new(0.3).unwrap()).unwrap();
        for v in [KikuchiVariables::uniform(), random_homogeneous_config(1.0, &mut Pcg64::seed_from_u64(1))] {
            let store = homogeneous_path_store(&tm, &v).unwrap();
            let agg = aggregate_kikuchi_variables(&store, &tm.regions).unwrap();
            assert!(agg.spread < 1e-15);
            for (a, b) in agg.variables.path_y.iter().zip(&v.path_y) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let up = random_homogeneous_config(1.0, &mut Pcg64::seed_from_u64(1));
        assert_eq!(up.x, [1.0, 0.0]);
        assert_eq!(up.y[0], 1.0);
    }

    #[test]
    fn random_configs_satisfy_the_relations() {
        let mut rng = Pcg64::seed_from_u64(3);
        for _ in 0..20 {
            let v = random_homogeneous_config(rng.gen_range(0.1..0.9), &mut rng);
            assert!(v.relation_residual() < 1e-14);
            assert!(v.path_y.iter().all(|&b| b >= 0.0));
            // Swap symmetry: Y_{ij,kl} = Y_{ji,lk}.
            for q in 0..16 {
                let (p, f) = (q / 4, q % 4);
                let swap = |s: usize| (s % 2) * 2 + s / 2;
                assert!((v.path_y[q] - v.path_y[swap(p) * 4 + swap(f)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn energy_change_matches_state_energies() {
        let mut rng = Pcg64::seed_from_u64(9);
        for _ in 0..10 {
            let v = random_homogeneous_config(rng.gen_range(0.1..0.9), &mut rng);
            let mut next = v;
            next.x = [v.path_x[0] + v.path_x[2], v.path_x[1] + v.path_x[3]];
            next.y = [0.0; 4];
            for (q, &b) in v.path_y.iter().enumerate() {
                next.y[q % 4] += b;
            }
            let (j, h) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let direct = state_energy(&next, j, h, 4.0) - state_energy(&v, j, h, 4.0);
            assert!((path_energy_change(&v, j, h, 4.0) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn offsets_are_constant_on_a_small_torus() {
        let p = IsingParams::homogeneous(3, 3, Topology::Torus, 0.4, -0.25).unwrap();
        let off = ppf_offsets(&p, KineticParams::new(0.2).unwrap(), 0.7, 6, 11, FLOOR).unwrap();
        let (lo, hi) = off.iter().fold((f64::MAX, f64::MIN), |(a, b), &o| (a.min(o), b.max(o)));
        assert!(hi - lo < 1e-9, "{off:?}");
    }

    #[test]
    fn dynbp_keeps_a_homogeneous_torus_homogeneous() {
        let p = IsingParams::homogeneous(3, 3, Topology::Torus, 0.3, 0.2).unwrap();
        let tm = build_kinetic_conditional(&p, KineticParams::new(0.2).unwrap()).unwrap();
        let priors = priors_from_product(&tm, &vec![vec![0.5, 0.5]; 9]);
        let opts = DynOptions {
            solver: SolverOptions { tolerance: 1e-12, max_iters: 2000, ..SolverOptions::default() },
            ..DynOptions::default()
        };
        let step = dynbp_step(&tm, &priors, &opts).unwrap();
        assert!(step.converged);
        let agg = aggregate_kikuchi_variables(&step.path, &tm.regions).unwrap();
        assert!(agg.spread < 1e-9, "{}", agg.spread);
        assert!(agg.variables.relation_residual() < 1e-9);
    }

    #[test]
    fn non_bethe_graph_is_rejected() {
        let tm = crate::temporal::fixtures::identity(3, 2);
        let single = TemporalModel::with_single_region(tm.variables.clone(), tm.factors.clone()).unwrap();
        assert!(matches!(
            aggregate_kikuchi_variables(&PathBeliefStore { path: vec![], prior: vec![] }, &single.regions),
            Err(Error::Usage(_))
        ));
    }
}
