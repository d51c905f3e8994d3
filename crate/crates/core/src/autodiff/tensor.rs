use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::AutodiffError;

/// Gradient closure: output gradient in, one gradient buffer per parent out.
/// Parents that do not require gradients get an empty buffer.
pub(super) type VjpFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

pub(super) struct TapeShared {
    next_id: Cell<u64>,
    consumed: Cell<bool>,
}

/// Issues node ids and owns the consumed flag. Cloning is cheap and shares
/// the underlying record.
#[derive(Clone)]
pub struct Tape {
    pub(super) shared: Rc<TapeShared>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { shared: Rc::new(TapeShared { next_id: Cell::new(0), consumed: Cell::new(false) }) }
    }

    pub(super) fn next_id(&self) -> u64 {
        let id = self.shared.next_id.get();
        self.shared.next_id.set(id + 1);
        id
    }

    /// Clears the consumed flag so a second backward pass is allowed
    /// (gradients keep accumulating unless leaves are zeroed).
    pub fn reset(&self) {
        self.shared.consumed.set(false);
    }

    pub fn is_consumed(&self) -> bool {
        self.shared.consumed.get()
    }

    /// Trainable leaf.
    pub fn leaf(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        self.node(values, shape, true)
    }

    /// Non-trainable input (data, masks, frozen samples).
    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        self.node(values, shape, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.node(vec![v], &[], false).expect("scalar shape always consistent")
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        self.node(vec![0.0; n], shape, false).expect("buffer sized to shape")
    }

    fn node(&self, values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor, AutodiffError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(AutodiffError::BadBuffer {
                op: "tensor",
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            tape: Rc::clone(&self.shared),
            id: self.next_id(),
            shape: shape.to_vec(),
            values: Rc::new(values),
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            vjp: None,
        })))
    }
}

pub(super) struct Node {
    pub(super) tape: Rc<TapeShared>,
    pub(super) id: u64,
    pub(super) shape: Vec<usize>,
    pub(super) values: Rc<Vec<f64>>,
    pub(super) requires_grad: bool,
    pub(super) grad: RefCell<Option<Vec<f64>>>,
    pub(super) parents: Vec<Tensor>,
    pub(super) vjp: Option<VjpFn>,
}

/// Dense f64 tensor; cheap to clone (shared node).
#[derive(Clone)]
pub struct Tensor(pub(super) Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub(super) fn values_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.0.values)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "scalar_value on shape {:?}", self.0.shape);
        self.0.values[0]
    }

    /// Accumulated gradient of a leaf; None before any backward pass touched it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Re-enters the graph as a constant: same values, no history.
    pub fn detach(&self, tape: &Tape) -> Tensor {
        Tensor(Rc::new(Node {
            tape: Rc::clone(&tape.shared),
            id: tape.next_id(),
            shape: self.0.shape.clone(),
            values: self.values_rc(),
            requires_grad: false,
            grad: RefCell::new(None),
            parents: Vec::new(),
            vjp: None,
        }))
    }

    pub(super) fn same_tape(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0.tape, &other.0.tape)
    }

    pub(super) fn make_result(
        tape: &Rc<TapeShared>,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        vjp: VjpFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let id = tape.next_id.get();
        tape.next_id.set(id + 1);
        if requires_grad {
            Tensor(Rc::new(Node {
                tape: Rc::clone(tape),
                id,
                shape,
                values: Rc::new(values),
                requires_grad: true,
                grad: RefCell::new(None),
                parents,
                vjp: Some(vjp),
            }))
        } else {
            // Constant fold: drop history so inference paths free
            // intermediates eagerly.
            Tensor(Rc::new(Node {
                tape: Rc::clone(tape),
                id,
                shape,
                values: Rc::new(values),
                requires_grad: false,
                grad: RefCell::new(None),
                parents: Vec::new(),
                vjp: None,
            }))
        }
    }

    pub(super) fn tape_rc(&self) -> Rc<TapeShared> {
        Rc::clone(&self.0.tape)
    }

    pub fn backward(&self) -> Result<(), AutodiffError> {
        backward(self)
    }
}

/// Reverse sweep from a scalar loss. Leaf gradients accumulate (+=); interior
/// gradients live only for the duration of the sweep.
pub fn backward(loss: &Tensor) -> Result<(), AutodiffError> {
    if loss.numel() != 1 {
        return Err(AutodiffError::NonScalarLoss { shape: loss.shape().to_vec() });
    }
    if loss.0.tape.consumed.get() {
        return Err(AutodiffError::TapeConsumed);
    }
    loss.0.tape.consumed.set(true);
    if !loss.0.requires_grad {
        return Ok(());
    }

    // Collect the grad-relevant ancestry; construction order is topological.
    let mut order: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<Tensor> = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if !t.0.requires_grad || !seen.insert(t.0.id) {
            continue;
        }
        for p in &t.0.parents {
            if p.0.requires_grad {
                stack.push(p.clone());
            }
        }
        order.push(t);
    }
    order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

    let mut grads: HashMap<u64, Vec<f64>> = HashMap::with_capacity(order.len());
    grads.insert(loss.0.id, vec![1.0]);

    for t in &order {
        let Some(g) = grads.remove(&t.0.id) else { continue };
        match &t.0.vjp {
            Some(vjp) => {
                let parent_grads = vjp(&g);
                debug_assert_eq!(parent_grads.len(), t.0.parents.len());
                for (p, pg) in t.0.parents.iter().zip(parent_grads) {
                    if !p.0.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "vjp buffer mismatch at node {}", p.0.id);
                    match grads.get_mut(&p.0.id) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        None => {
                            grads.insert(p.0.id, pg);
                        }
                    }
                }
            }
            None => {
                // Leaf: fold into persistent storage.
                let mut slot = t.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_backward_requires_reset() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0], &[]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(AutodiffError::TapeConsumed)));
        tape.reset();
        y.backward().unwrap();
        // gradients accumulated twice: 2*dy/dx = 2*4
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(backward(&x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn constant_subgraphs_fold_away() {
        let tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0], &[2]).unwrap();
        let b = tape.constant(vec![3.0, 4.0], &[2]).unwrap();
        let c = a.add(&b).unwrap();
        assert!(!c.requires_grad());
        assert!(c.0.parents.is_empty(), "no-grad results must not retain parents");
    }

    #[test]
    fn leaf_gradients_accumulate_across_uses() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3.0], &[]).unwrap();
        let y = tape.leaf(vec![5.0], &[]).unwrap();
        // f = x + x*y  =>  df/dx = 1 + y, df/dy = x
        let f = x.add(&x.mul(&y).unwrap()).unwrap();
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        assert_eq!(y.grad().unwrap(), vec![3.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0], &[]).unwrap();
        let d = x.mul(&x).unwrap().detach(&tape);
        let f = d.mul(&x).unwrap();
        f.backward().unwrap();
        // f = detach(x^2) * x => df/dx = 4 (constant factor), not 3x^2
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }
}
