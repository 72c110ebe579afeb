//! Reverse-mode backward pass.

use std::collections::{HashMap, HashSet};

use super::{no_grad, ops, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the backward pass treats its own computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradMode {
    /// Record the gradient computation on the graph, making the returned
    /// gradients differentiable by a second backward pass.
    pub create_graph: bool,
}

impl GradMode {
    pub const EVAL: GradMode = GradMode { create_graph: false };
    pub const HIGHER_ORDER: GradMode = GradMode { create_graph: true };
}

/// Map from tensor id to accumulated gradient, for every tensor visited by
/// a backward traversal (parameters, leaves and intermediates alike).
pub struct Gradients<T: Scalar> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    /// Gradient of `t`, or zeros when `t` did not participate in the graph.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.get(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reverse-mode gradients of a scalar `root` with respect to everything in
/// its graph. The graph is fully retained, so calling `backward` repeatedly
/// on the same root is allowed and yields identical results.
pub fn backward<T: Scalar>(root: &Tensor<T>, mode: GradMode) -> Result<Gradients<T>> {
    backward_stopping(root, mode, &[])
}

/// Like [`backward`], but treats every tensor in `stop_at` as a leaf: the
/// traversal does not continue into its parents. Used to cut the inner
/// refinement loop's gradient at the latent code.
pub fn backward_stopping<T: Scalar>(
    root: &Tensor<T>,
    mode: GradMode,
    stop_at: &[&Tensor<T>],
) -> Result<Gradients<T>> {
    run_backward(root, mode, stop_at, None)
}

/// Gradient of `root` with respect to `target` only: adjoints are
/// propagated exclusively along paths that reach `target`, skipping every
/// other branch (parameter gradients in particular). The refinement loop
/// uses this to keep the per-step cost at the size of `h`.
pub fn backward_toward<T: Scalar>(
    root: &Tensor<T>,
    mode: GradMode,
    target: &Tensor<T>,
) -> Result<Tensor<T>> {
    let grads = run_backward(root, mode, &[target], Some(target.id()))?;
    Ok(grads.get_or_zeros(target))
}

fn run_backward<T: Scalar>(
    root: &Tensor<T>,
    mode: GradMode,
    stop_at: &[&Tensor<T>],
    toward: Option<u64>,
) -> Result<Gradients<T>> {
    if root.numel() != 1 {
        return Err(Error::Graph(format!(
            "backward root must be scalar, got shape {:?}",
            root.shape()
        )));
    }
    let stop: HashSet<u64> = stop_at.iter().map(|t| t.id()).collect();

    // Iterative postorder DFS over parent edges: leaves end up first, the
    // root last; the reversed order guarantees every consumer of a tensor
    // is processed before the tensor itself.
    let mut order: Vec<Tensor<T>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        let expand_parents = !stop.contains(&t.id());
        stack.push((t.clone(), true));
        if expand_parents {
            if let Some(node) = t.node() {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
    }

    // When aiming at a single target, mark exactly the tensors from which
    // it is reachable via parent edges; adjoints are only propagated into
    // marked tensors. `order` is postorder (parents precede consumers), so
    // one forward scan computes the marks.
    let marked: Option<HashSet<u64>> = toward.map(|target_id| {
        let mut m = HashSet::new();
        for t in &order {
            if t.id() == target_id {
                m.insert(t.id());
            } else if !stop.contains(&t.id()) {
                if let Some(node) = t.node() {
                    if node.parents.iter().any(|p| m.contains(&p.id())) {
                        m.insert(t.id());
                    }
                }
            }
        }
        m
    });
    let wanted = |id: u64| marked.as_ref().map(|m| m.contains(&id)).unwrap_or(true);

    let compute = |grads: &mut HashMap<u64, Tensor<T>>| -> Result<()> {
        grads.insert(root.id(), Tensor::ones(root.shape()));
        for t in order.iter().rev() {
            if !wanted(t.id()) {
                continue;
            }
            let Some(g) = grads.get(&t.id()).cloned() else {
                continue;
            };
            if stop.contains(&t.id()) {
                continue;
            }
            let Some(node) = t.node() else {
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(|p| p.requires_grad() && wanted(p.id())).collect();
            let contribs = ops::vjp(node, &g, &need)?;
            for (p, c) in node.parents.iter().zip(contribs) {
                let Some(c) = c else { continue };
                match grads.remove(&p.id()) {
                    Some(prev) => {
                        grads.insert(p.id(), prev.add(&c)?);
                    }
                    None => {
                        grads.insert(p.id(), c);
                    }
                }
            }
        }
        Ok(())
    };

    let mut map = HashMap::new();
    if mode.create_graph {
        compute(&mut map)?;
    } else {
        no_grad(|| compute(&mut map))?;
    }
    Ok(Gradients { map })
}
