#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wfuse/tensor.hpp"

namespace wfuse {

// Linear record of differentiable ops executed while the tape is active.
// Ops append a node only when some input requires a gradient, so nodes are
// naturally topologically ordered. One tape per training step: it owns every
// intermediate activation, which is released when the tape is destroyed.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every reached node once, in reverse
  // recording order, accumulating into the inputs' grad buffers.
  void backward(const Tensor& loss);

  // True when `target` was computed (transitively) from `source` on this tape.
  bool depends_on(const Tensor& target, const Tensor& source) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  static Tape* current();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
};

// Makes a tape current for the enclosing scope (thread-local, nestable).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Backward on the current tape. Throws ContractError if no tape is active or
// loss is not a single element.
void backward(const Tensor& loss);

namespace detail {

// True if a tape is active and any input needs a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

}  // namespace detail

}  // namespace wfuse
