#include "wfuse/tape.hpp"

#include <unordered_map>
#include <unordered_set>

namespace wfuse {

namespace {

thread_local Tape* g_current = nullptr;

}  // namespace

Tape* Tape::current() { return g_current; }

TapeScope::TapeScope(Tape& tape) : previous_(g_current) { g_current = &tape; }

TapeScope::~TapeScope() { g_current = previous_; }

void Tape::record(std::string op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(op), std::move(inputs), output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a single-element tensor, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  visit_dtype(loss.dtype(), [&]<class T>(T) { loss.grad_data<T>()[0] = T(1); });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
}

bool Tape::depends_on(const Tensor& target, const Tensor& source) const {
  std::unordered_map<const void*, std::size_t> producer;
  for (std::size_t i = 0; i < nodes_.size(); ++i) producer[nodes_[i].output.id()] = i;

  std::vector<const void*> stack{target.id()};
  std::unordered_set<const void*> seen;
  while (!stack.empty()) {
    const void* id = stack.back();
    stack.pop_back();
    if (!seen.insert(id).second) continue;
    auto it = producer.find(id);
    if (it == producer.end()) continue;
    for (const auto& in : nodes_[it->second].inputs) {
      if (in.id() == source.id()) return true;
      stack.push_back(in.id());
    }
  }
  return false;
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (!tape) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (!Tape::current()) return false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace detail

}  // namespace wfuse
