// SPDX-License-Identifier: Apache-2.0
#include "g2v/ad/tensor.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace g2v::ad {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_budget{0};
thread_local bool t_no_grad = false;

std::size_t bytes_of(const Matrix& m) { return static_cast<std::size_t>(m.size()) * sizeof(double); }
}  // namespace

void MemoryCounter::allocate(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes) + bytes;
  std::size_t prev = g_peak.load();
  while (now > prev && !g_peak.compare_exchange_weak(prev, now)) {
  }
  const std::size_t cap = g_budget.load();
  if (cap != 0 && now > cap) {
    g_current.fetch_sub(bytes);
    throw MemoryExhausted("tensor memory budget of " + std::to_string(cap) + " bytes exceeded");
  }
}
void MemoryCounter::release(std::size_t bytes) noexcept { g_current.fetch_sub(bytes); }
std::size_t MemoryCounter::current() noexcept { return g_current.load(); }
std::size_t MemoryCounter::peak() noexcept { return g_peak.load(); }
void MemoryCounter::reset_peak() noexcept { g_peak.store(g_current.load()); }
void MemoryCounter::set_budget(std::size_t bytes) noexcept { g_budget.store(bytes); }
std::size_t MemoryCounter::budget() noexcept { return g_budget.load(); }

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::active() noexcept { return t_no_grad; }

Node::~Node() { MemoryCounter::release(counted_bytes); }

void Node::track_memory() {
  const std::size_t want = bytes_of(value) + bytes_of(grad);
  if (want > counted_bytes) {
    MemoryCounter::allocate(want - counted_bytes);
  } else {
    MemoryCounter::release(counted_bytes - want);
  }
  counted_bytes = want;
}

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
    track_memory();
  } else {
    grad += g;
  }
}

Tensor Tensor::constant(Matrix value) { return leaf(std::move(value), false); }

Tensor Tensor::leaf(Matrix value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->track_memory();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

double Tensor::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar tensor");
  return node_->value(0, 0);
}

void Tensor::backward() const {
  if (node_->value.size() != 1) throw std::logic_error("backward() requires a 1x1 tensor");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) {
      n->grad.resize(0, 0);
      n->track_memory();
    }
  }
}

Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->track_memory();
  if (!t_no_grad) {
    for (auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (auto& p : parents) {
        if (p.requires_grad()) node->parents.push_back(p.node());
      }
      node->backward = std::move(bw);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace g2v::ad
