use super::kernels;
use super::kind::{check_broadcastable, numel, PrimitiveKind, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(pub(crate) usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Origin {
    /// Detached constant; gradients never flow into it.
    Constant,
    /// Differentiable leaf.
    Variable,
    Op(PrimitiveKind),
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub origin: Origin,
    pub inputs: Vec<Tensor>,
    pub shape: Shape,
    pub value: Vec<T>,
    pub requires_grad: bool,
}

/// Append-only computation graph with eager evaluation.
///
/// Every node is evaluated once, when it is appended, so inputs always
/// precede their consumers and insertion order is a topological order.
/// Non-finite results are rejected at the node that produced them.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) corrupt_adjoint: Option<&'static str>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), corrupt_adjoint: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: scale the adjoint of every `kind` node by 1.5 so that
    /// gradient checks can demonstrate they notice.
    #[doc(hidden)]
    pub fn corrupt_adjoint_of(&mut self, kind: &'static str) {
        self.corrupt_adjoint = Some(kind);
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<T>, origin: Origin) -> Result<Tensor> {
        if numel(shape) != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor constant".into()));
        }
        let requires_grad = matches!(origin, Origin::Variable);
        self.nodes.push(Node { origin, inputs: vec![], shape: shape.to_vec(), value: values, requires_grad });
        Ok(Tensor(self.nodes.len() - 1))
    }

    /// A detached constant.
    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Tensor> {
        self.leaf(shape, values, Origin::Constant)
    }

    /// A differentiable leaf (parameters, or inputs one wants gradients for).
    pub fn variable(&mut self, shape: &[usize], values: Vec<T>) -> Result<Tensor> {
        self.leaf(shape, values, Origin::Variable)
    }

    pub fn full(&mut self, shape: &[usize], v: T) -> Result<Tensor> {
        self.constant(shape, vec![v; numel(shape)])
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Tensor> {
        self.full(shape, T::zero())
    }

    pub fn scalar(&mut self, v: T) -> Result<Tensor> {
        self.constant(&[], vec![v])
    }

    /// Append a node applying `kind` to `inputs`.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[Tensor]) -> Result<Tensor> {
        for t in inputs {
            if t.0 >= self.nodes.len() {
                return Err(Error::shape(format!("tensor #{} does not belong to this graph", t.0)));
            }
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| self.nodes[t.0].shape.as_slice()).collect();
        let shape = kind.infer_shape(&shapes)?;
        let args: Vec<(&[T], &[usize])> = inputs
            .iter()
            .map(|t| {
                let n = &self.nodes[t.0];
                (n.value.as_slice(), n.shape.as_slice())
            })
            .collect();
        let value = kernels::forward(&kind, &args, &shape)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(kind.name().into()));
        }
        let requires_grad = !kind.blocks_gradient() && inputs.iter().any(|t| self.nodes[t.0].requires_grad);
        self.nodes.push(Node { origin: Origin::Op(kind), inputs: inputs.to_vec(), shape, value, requires_grad });
        Ok(Tensor(self.nodes.len() - 1))
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    /// The single value of a one-element tensor.
    pub fn item(&self, t: Tensor) -> T {
        let v = self.value(t);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Concrete values of the requested tensors.
    pub fn eval(&self, tensors: &[Tensor]) -> Result<Vec<Vec<T>>> {
        tensors
            .iter()
            .map(|t| {
                self.nodes
                    .get(t.0)
                    .map(|n| n.value.clone())
                    .ok_or_else(|| Error::shape(format!("tensor #{} does not belong to this graph", t.0)))
            })
            .collect()
    }

    fn unary(&mut self, kind: PrimitiveKind, a: Tensor) -> Result<Tensor> {
        self.apply(kind, &[a])
    }

    /// Broadcast both operands to their common shape.
    fn align(&mut self, a: Tensor, b: Tensor) -> Result<(Tensor, Tensor)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            return Ok((a, b));
        }
        let rank = sa.len().max(sb.len());
        let dim = |s: &[usize], i: usize| if i + s.len() < rank { 1 } else { s[i + s.len() - rank] };
        let mut common = Vec::with_capacity(rank);
        for i in 0..rank {
            let (x, y) = (dim(&sa, i), dim(&sb, i));
            common.push(match (x, y) {
                _ if x == y => x,
                (1, _) => y,
                (_, 1) => x,
                _ => return Err(Error::shape(format!("cannot broadcast {sa:?} with {sb:?}"))),
            });
        }
        Ok((self.broadcast_to(a, &common)?, self.broadcast_to(b, &common)?))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (a, b) = self.align(a, b)?;
        self.apply(PrimitiveKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (a, b) = self.align(a, b)?;
        self.apply(PrimitiveKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (a, b) = self.align(a, b)?;
        self.apply(PrimitiveKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        self.unary(PrimitiveKind::ScaleBy(c), a)
    }

    pub fn neg(&mut self, a: Tensor) -> Result<Tensor> {
        self.scale(a, -1.0)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let c = self.scalar(T::lit(c))?;
        self.add(a, c)
    }

    pub fn recip(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Recip, a)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Tensor) -> Result<Tensor> {
        self.sum_to(a, &[])
    }

    pub fn sum_to(&mut self, a: Tensor, to: &[usize]) -> Result<Tensor> {
        if self.shape(a) == to {
            return Ok(a);
        }
        self.unary(PrimitiveKind::Sum { to: to.to_vec() }, a)
    }

    pub fn mean(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Mean, a)
    }

    pub fn abs(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Abs, a)
    }

    pub fn square(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Square, a)
    }

    pub fn sqrt(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Sqrt, a)
    }

    pub fn l2_norm(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::L2Norm, a)
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Result<Tensor> {
        self.unary(PrimitiveKind::LeakyRelu { slope }, a)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.apply(PrimitiveKind::Matmul, &[a, b])
    }

    pub fn conv2d(&mut self, x: Tensor, kernel: Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        self.apply(PrimitiveKind::Conv2d { stride, pad }, &[x, kernel])
    }

    pub fn upsample(&mut self, a: Tensor, factor: usize) -> Result<Tensor> {
        if factor == 1 {
            return Ok(a);
        }
        self.unary(PrimitiveKind::Upsample { factor }, a)
    }

    pub fn avg_pool(&mut self, a: Tensor, factor: usize) -> Result<Tensor> {
        if factor == 1 {
            return Ok(a);
        }
        self.unary(PrimitiveKind::AvgPool { factor }, a)
    }

    pub fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(PrimitiveKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        self.unary(PrimitiveKind::Slice { axis, start, end }, a)
    }

    pub fn broadcast_to(&mut self, a: Tensor, to: &[usize]) -> Result<Tensor> {
        if self.shape(a) == to {
            return Ok(a);
        }
        check_broadcastable(self.shape(a), to).map_err(Error::Shape)?;
        self.unary(PrimitiveKind::Broadcast { to: to.to_vec() }, a)
    }

    pub fn reshape(&mut self, a: Tensor, to: &[usize]) -> Result<Tensor> {
        if self.shape(a) == to {
            return Ok(a);
        }
        self.unary(PrimitiveKind::Reshape { to: to.to_vec() }, a)
    }

    pub fn permute(&mut self, a: Tensor, axes: &[usize]) -> Result<Tensor> {
        self.unary(PrimitiveKind::Permute { axes: axes.to_vec() }, a)
    }

    pub fn clamp(&mut self, a: Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary(PrimitiveKind::Clamp { lo, hi }, a)
    }

    pub fn round(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::Round, a)
    }

    pub fn stop_gradient(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(PrimitiveKind::StopGradient, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_construction_checks_length_and_finiteness() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.value(t), &[1.0, 2.0, 3.0, 4.0]);
        let z = g.constant(&[3], vec![0.0; 3]).unwrap();
        assert_eq!(g.value(z), &[0.0; 3]);
        assert!(matches!(g.constant(&[2], vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(g.constant(&[3], vec![1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_and_special_forward_rules() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = g.constant(&[3], vec![4.0, 5.0, 6.0]).unwrap();
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m), &[4.0, 10.0, 18.0]);

        let h = g.constant(&[2], vec![0.5, -0.5]).unwrap();
        let r = g.round(h).unwrap();
        assert_eq!(g.value(r), &[1.0, -1.0]);

        let x = g.constant(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let l = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(l), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1], vec![-1.0]).unwrap();
        assert!(matches!(g.sqrt(x), Err(Error::Domain(_))));
    }

    #[test]
    fn overflow_is_reported_at_the_producing_node() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1], vec![1e300]).unwrap();
        let err = g.square(x).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref k) if k == "square"));
    }

    #[test]
    fn eval_is_repeatable() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = g.square(x).unwrap();
        let s = g.sum(y).unwrap();
        let first = g.eval(&[s, y]).unwrap();
        let second = g.eval(&[s, y]).unwrap();
        assert_eq!(first, second);
        assert_eq!(g.eval(&[x]).unwrap()[0], vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn binary_ops_broadcast_operands() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[2, 3], vec![1.0; 6]).unwrap();
        let b = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let c = g.add(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.value(c), &[2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        let bad = g.constant(&[2], vec![0.0; 2]).unwrap();
        assert!(g.add(a, bad).is_err());
    }
}
