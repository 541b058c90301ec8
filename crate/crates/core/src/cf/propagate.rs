use crate::dataset::InteractionMatrix;

/// Symmetric-normalized bipartite graph `D^-1/2 A D^-1/2` used by LightGCN.
#[derive(Debug, Clone)]
pub(crate) struct NormalizedGraph {
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
    user_scale: Vec<f64>,
    item_scale: Vec<f64>,
}

fn inv_sqrt(deg: usize) -> f64 {
    if deg == 0 {
        0.0
    } else {
        1.0 / (deg as f64).sqrt()
    }
}

impl NormalizedGraph {
    pub(crate) fn new(m: &InteractionMatrix) -> Self {
        let rows = m.rows().to_vec();
        let cols = m.item_users();
        NormalizedGraph {
            user_scale: rows.iter().map(|r| inv_sqrt(r.len())).collect(),
            item_scale: cols.iter().map(|c| inv_sqrt(c.len())).collect(),
            rows,
            cols,
        }
    }

    /// Layer mean `(1/(L+1)) sum_{l=0..L} Ahat^l x` for stacked user/item
    /// embeddings of width `dim`. The operator is symmetric, so the same call
    /// back-propagates gradients.
    pub(crate) fn layer_mean(
        &self,
        users: &[f64],
        items: &[f64],
        dim: usize,
        layers: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut acc_u = users.to_vec();
        let mut acc_i = items.to_vec();
        let mut cur_u = users.to_vec();
        let mut cur_i = items.to_vec();
        for _ in 0..layers {
            let mut next_u = vec![0.0; cur_u.len()];
            let mut next_i = vec![0.0; cur_i.len()];
            for (u, row) in self.rows.iter().enumerate() {
                let out = &mut next_u[u * dim..(u + 1) * dim];
                for &i in row {
                    let w = self.user_scale[u] * self.item_scale[i];
                    for (o, x) in out.iter_mut().zip(&cur_i[i * dim..(i + 1) * dim]) {
                        *o += w * x;
                    }
                }
            }
            for (i, col) in self.cols.iter().enumerate() {
                let out = &mut next_i[i * dim..(i + 1) * dim];
                for &u in col {
                    let w = self.user_scale[u] * self.item_scale[i];
                    for (o, x) in out.iter_mut().zip(&cur_u[u * dim..(u + 1) * dim]) {
                        *o += w * x;
                    }
                }
            }
            for (a, x) in acc_u.iter_mut().zip(&next_u) {
                *a += x;
            }
            for (a, x) in acc_i.iter_mut().zip(&next_i) {
                *a += x;
            }
            cur_u = next_u;
            cur_i = next_i;
        }
        let scale = 1.0 / (layers + 1) as f64;
        acc_u.iter_mut().for_each(|x| *x *= scale);
        acc_i.iter_mut().for_each(|x| *x *= scale);
        (acc_u, acc_i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    #[test]
    fn zero_layers_is_identity() {
        let m = InteractionMatrix::from_rows(3, vec![vec![0, 1], vec![2]]).unwrap();
        let g = NormalizedGraph::new(&m);
        let u = vec![1.0, 2.0, 3.0, 4.0];
        let i = vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(g.layer_mean(&u, &i, 2, 0), (u, i));
    }

    #[test]
    fn operator_is_symmetric() {
        // <P x, y> == <x, P y> for random stacked vectors
        let m = InteractionMatrix::from_rows(4, vec![vec![0, 1], vec![1, 2, 3], vec![3], vec![]])
            .unwrap();
        let g = NormalizedGraph::new(&m);
        let mut rng = rng_from(4);
        let mut rand_vec = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (xu, xi, yu, yi) = (rand_vec(8), rand_vec(8), rand_vec(8), rand_vec(8));
        let (pxu, pxi) = g.layer_mean(&xu, &xi, 2, 3);
        let (pyu, pyi) = g.layer_mean(&yu, &yi, 2, 3);
        let lhs: f64 = pxu.iter().zip(&yu).chain(pxi.iter().zip(&yi)).map(|(a, b)| a * b).sum();
        let rhs: f64 = xu.iter().zip(&pyu).chain(xi.iter().zip(&pyi)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
