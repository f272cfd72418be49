use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::RcNetwork;

/// Nodal equations over every non-driver node reachable from the driver:
/// `diag(c) dv/dt + G v = b u(t)`. Nodes without capacitance stay in the
/// system as algebraic unknowns.
#[derive(Debug, Clone)]
pub struct FullSystem {
    /// Network node index of each unknown.
    pub nodes: Vec<usize>,
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub b: DVector<f64>,
    /// Position of the output node among the unknowns.
    pub out: usize,
}

/// Reduced nodal system over the capacitive nodes only, with the output
/// observed through `e_out`: `H(s) = e_outᵀ (G + sC)⁻¹ b`.
#[derive(Debug, Clone)]
pub struct NodalSystem {
    /// Network node index of each state.
    pub nodes: Vec<usize>,
    pub g: DMatrix<f64>,
    /// Diagonal capacitance matrix.
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
    pub e_out: DVector<f64>,
}

pub fn assemble_full(net: &RcNetwork) -> Result<FullSystem> {
    let reach = net.reachable_from(net.driver_node);
    let nodes: Vec<usize> =
        (0..net.n_nodes()).filter(|&k| k != net.driver_node && reach[k]).collect();
    let mut pos = vec![usize::MAX; net.n_nodes()];
    for (p, &k) in nodes.iter().enumerate() {
        pos[k] = p;
    }
    let m = nodes.len();
    let mut g = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    let mut c = DVector::zeros(m);

    for br in &net.conductances {
        if !reach[br.a] || !reach[br.b] {
            continue;
        }
        match (br.a == net.driver_node, br.b == net.driver_node) {
            (true, false) => {
                let j = pos[br.b];
                g[(j, j)] += br.g;
                b[j] += br.g;
            }
            (false, true) => {
                let i = pos[br.a];
                g[(i, i)] += br.g;
                b[i] += br.g;
            }
            _ => {
                let (i, j) = (pos[br.a], pos[br.b]);
                g[(i, i)] += br.g;
                g[(j, j)] += br.g;
                g[(i, j)] -= br.g;
                g[(j, i)] -= br.g;
            }
        }
    }
    for gc in &net.caps_to_ground {
        if gc.node != net.driver_node && reach[gc.node] {
            c[pos[gc.node]] += gc.c;
        }
    }
    Ok(FullSystem { nodes, g, c, b, out: pos[net.output_node] })
}

/// Assembles `G`, `C`, `b`, `e_out` and eliminates capacitance-free nodes
/// (receiver pins, internal junctions) by Schur complement.
pub fn assemble_system(net: &RcNetwork) -> Result<NodalSystem> {
    let full = assemble_full(net)?;
    let cap_pos: Vec<usize> = (0..full.nodes.len()).filter(|&p| full.c[p] > 0.0).collect();
    let zero_pos: Vec<usize> = (0..full.nodes.len()).filter(|&p| full.c[p] <= 0.0).collect();
    if cap_pos.is_empty() {
        return Err(Error::InvalidNetwork("network has no capacitance".into()));
    }
    let nodes = cap_pos.iter().map(|&p| full.nodes[p]).collect();
    let g_cc = full.g.select_rows(&cap_pos).select_columns(&cap_pos);
    let b_c = DVector::from_iterator(cap_pos.len(), cap_pos.iter().map(|&p| full.b[p]));
    let c = DMatrix::from_diagonal(&DVector::from_iterator(
        cap_pos.len(),
        cap_pos.iter().map(|&p| full.c[p]),
    ));

    if zero_pos.is_empty() {
        let mut e_out = DVector::zeros(cap_pos.len());
        e_out[cap_pos.iter().position(|&p| p == full.out).expect("output is a state")] = 1.0;
        return Ok(NodalSystem { nodes, g: g_cc, c, b: b_c, e_out });
    }

    let g_zz = full.g.select_rows(&zero_pos).select_columns(&zero_pos);
    let g_zc = full.g.select_rows(&zero_pos).select_columns(&cap_pos);
    let b_z = DVector::from_iterator(zero_pos.len(), zero_pos.iter().map(|&p| full.b[p]));
    let lu = g_zz.lu();
    let x_zc = lu
        .solve(&g_zc)
        .ok_or_else(|| Error::SingularSystem("capacitance-free subnetwork floats".into()))?;
    let x_zb = lu.solve(&b_z).expect("same factorization");

    let g = &g_cc - g_zc.transpose() * &x_zc;
    let b = &b_c - g_zc.transpose() * &x_zb;

    let e_out = match cap_pos.iter().position(|&p| p == full.out) {
        Some(k) => {
            let mut e = DVector::zeros(cap_pos.len());
            e[k] = 1.0;
            e
        }
        None => {
            let row = zero_pos.iter().position(|&p| p == full.out).expect("output is an unknown");
            // v_z = G_zz⁻¹ (b_z u − G_zc v_c)
            let feedthrough = x_zb[row];
            if feedthrough.abs() > 1e-12 {
                return Err(Error::InvalidNetwork(
                    "output has a purely resistive path from the driver".into(),
                ));
            }
            -x_zc.row(row).transpose()
        }
    };
    Ok(NodalSystem { nodes, g, c, b, e_out })
}

impl NodalSystem {
    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// `e_outᵀ (G + sC)⁻¹ b` by dense complex LU.
    pub fn transfer_at(&self, s: Complex64) -> Result<Complex64> {
        let m = self.order();
        let a = DMatrix::from_fn(m, m, |i, j| {
            Complex64::new(self.g[(i, j)], 0.0) + s * self.c[(i, j)]
        });
        let rhs = self.b.map(|x| Complex64::new(x, 0.0));
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem(format!("G + sC singular at s = {s}")))?;
        Ok(x.iter().zip(self.e_out.iter()).map(|(xi, ei)| xi * ei).sum())
    }

    /// `e_outᵀ G⁻¹ b`.
    pub fn dc_gain(&self) -> Result<f64> {
        let x = self
            .g
            .clone()
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::SingularSystem("G is singular".into()))?;
        Ok(self.e_out.dot(&x))
    }
}
