#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vrg/tensor.hpp"

namespace vrg::ag {

struct Node;
using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<std::vector<Var>(const Var& gout)>;

// One vertex of a define-by-run graph.  The backward closure maps the
// gradient arriving at this node to gradients for each parent, in parent
// order, and is itself expressed in autograd ops: running it with gradient
// recording enabled yields a differentiable graph, which is how second-order
// terms (the WGAN gradient penalty) fall out of the same machinery.
//
// Backward closures may capture parent Vars and plain Tensors but never the
// node's own output Var; quantities that depend on differentiated inputs are
// recomputed from the parents inside the closure so higher derivatives stay
// exact.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

bool grad_enabled();

// Scoped guard: disables gradient recording (forward-only evaluation).
struct NoGrad {
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

// Scoped guard setting recording to an explicit state.
struct GradMode {
  explicit GradMode(bool on);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool prev_;
};

// Non-differentiable wrapper around a value.
Var constant(Tensor value);
// Differentiable leaf (a parameter or an interpolated critic input).
Var leaf(Tensor value);
// Detached copy of v's value.
Var detach(const Var& v);

// Records an op result.  When recording is off or no parent requires grad,
// the parents and closure are dropped and the node degenerates to a constant.
Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op);

// Reverse-mode gradients of `output` w.r.t. `inputs`.
//
// Gradients are accumulated functionally in a map keyed by node; nodes never
// store their own gradient, which keeps the graph acyclic under shared_ptr
// ownership.  `grad_output` seeds the traversal (defaults to ones, which for
// the usual scalar output is d(output)/d(output) = 1).  With `create_graph`
// the returned Vars carry a graph of their own and can be differentiated
// again.  Inputs the output does not depend on get zero gradients.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      const Var& grad_output = nullptr, bool create_graph = false);

// Number of reachable nodes that require grad; used by tests.
size_t graph_size(const Var& root);

}  // namespace vrg::ag

namespace vrg {
using ag::Var;
}
