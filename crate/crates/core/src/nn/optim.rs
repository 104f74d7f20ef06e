use super::{NnError, Tensor};

/// Momentum SGD on one tensor: `v <- momentum * v - lr * g; p <- p + v`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64) -> Result<(), NnError> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(NnError::Shape(format!(
            "sgd: parameter {:?}, gradient {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Momentum SGD over a layered parameter list.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, params: &[Vec<Tensor>]) -> Self {
        let velocity = params.iter().map(|l| l.iter().map(|t| Tensor::zeros(t.shape())).collect()).collect();
        Self { lr, momentum, velocity }
    }

    pub fn step(&mut self, params: &mut [Vec<Tensor>], grads: &[Vec<Tensor>]) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(NnError::Shape("sgd: layer count mismatch".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(NnError::Shape("sgd: tensor count mismatch".into()));
            }
            for ((pt, gt), vt) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                sgd_step(pt, gt, vt, self.lr, self.momentum)?;
            }
        }
        Ok(())
    }
}
