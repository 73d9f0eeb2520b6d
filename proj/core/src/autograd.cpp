#include "vrg/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "vrg/errors.hpp"
#include "vrg/ops.hpp"

namespace vrg::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

GradMode::GradMode(bool on) : prev_(g_grad_enabled) { g_grad_enabled = on; }
GradMode::~GradMode() { g_grad_enabled = prev_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "const";
  return n;
}

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var detach(const Var& v) { return constant(v->value); }

Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return n;
}

namespace {

// Iterative post-order over the requires-grad subgraph.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  if (!root->requires_grad) return order;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && next >= node->parents.size()) {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      const Var& grad_output, bool create_graph) {
  VRG_CHECK(output, "grad(): null output");
  for (const auto& in : inputs) VRG_CHECK(in, "grad(): null input");

  Var seed = grad_output;
  if (!seed) {
    seed = constant(Tensor::ones(output->value.shape()));
  } else {
    VRG_CHECK(seed->value.same_shape(output->value), "grad(): grad_output shape ",
              shape_str(seed->value.shape()), " does not match output ",
              shape_str(output->value.shape()));
  }

  std::unordered_map<Node*, Var> acc;
  if (output->requires_grad) acc[output.get()] = seed;

  std::unordered_set<Node*> wanted;
  for (const auto& in : inputs) wanted.insert(in.get());

  auto order = topo_order(output.get());

  {
    GradMode mode(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      auto found = acc.find(node);
      if (found == acc.end()) continue;
      Var gout = found->second;
      if (node->backward) {
        auto parent_grads = node->backward(gout);
        VRG_CHECK(parent_grads.size() == node->parents.size(), "backward of '", node->op,
                  "' returned ", parent_grads.size(), " grads for ", node->parents.size(),
                  " parents");
        for (size_t i = 0; i < parent_grads.size(); ++i) {
          const Var& p = node->parents[i];
          const Var& g = parent_grads[i];
          if (!p || !p->requires_grad || !g) continue;
          VRG_CHECK(g->value.same_shape(p->value), "backward of '", node->op,
                    "' produced grad of shape ", shape_str(g->value.shape()),
                    " for parent of shape ", shape_str(p->value.shape()));
          auto slot = acc.find(p.get());
          if (slot == acc.end())
            acc.emplace(p.get(), g);
          else
            slot->second = add(slot->second, g);
        }
        // The node is finished; dropping its accumulator bounds peak memory.
        // Requested interior nodes keep theirs so they can be returned.
        if (!wanted.count(node)) acc.erase(node);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = acc.find(in.get());
    if (found != acc.end())
      result.push_back(found->second);
    else
      result.push_back(constant(Tensor::zeros(in->value.shape())));
  }
  return result;
}

size_t graph_size(const Var& root) {
  if (!root || !root->requires_grad) return 0;
  return topo_order(root.get()).size();
}

}  // namespace vrg::ag
