#include "l2tkt/autodiff.hpp"

#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "l2tkt/error.hpp"
#include "l2tkt/ops.hpp"

namespace l2tkt::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var Var::leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward,
            const char* op, Differentiability order) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled && backward) {
    for (const Var& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->requires_grad = true;
    node->order = order;
  }
  return Var(std::move(node));
}

std::vector<Var> gradients(const Var& output, std::span<const Var> wrt,
                           bool create_graph) {
  if (output.value().size() != 1) {
    throw ShapeError("gradients() needs a single-element output, got " +
                     to_string(output.shape()));
  }

  // Reverse topological order by iterative post-order DFS.
  std::vector<const Node*> order;
  if (output.requires_grad()) {
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<const Node*, std::size_t>> stack{{output.node(), 0}};
    seen.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const Node* child = node->inputs[next++].node();
        if (child && child->requires_grad && seen.insert(child).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<const Node*, Var> grads;
  {
    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    if (output.requires_grad()) {
      grads[output.node()] = Var::constant(Tensor(output.shape(), 1.0));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node* node = *it;
      auto found = grads.find(node);
      if (found == grads.end() || !node->backward) continue;
      if (create_graph && node->order == Differentiability::first_order_only) {
        throw CapabilityError(std::string("op '") + node->op +
                              "' has no second-order backward rule");
      }
      const Var upstream = found->second;
      std::vector<Var> input_grads = node->backward(upstream);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Var& in = node->inputs[i];
        if (!in.requires_grad() || i >= input_grads.size() ||
            !input_grads[i].defined()) {
          continue;
        }
        auto [slot, inserted] = grads.try_emplace(in.node(), input_grads[i]);
        if (!inserted) slot->second = add(slot->second, input_grads[i]);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto found = grads.find(w.node());
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(Var::constant(Tensor(w.shape(), 0.0)));
    }
  }
  return result;
}

}  // namespace l2tkt::ad
