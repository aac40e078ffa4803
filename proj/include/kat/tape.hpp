#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kat/tensor.hpp"

namespace kat {

// Reverse-mode tape. Operations execute eagerly and append a node holding the
// input/output ids plus a backward rule; backward() replays the nodes in
// reverse. A tape is single-threaded; independent tapes can run concurrently.
//
// kShapeOnly builds the identical graph (same ops, same shapes, same FLOP
// accounting) without computing or retaining any values; the cost bench uses
// it to instrument forward graphs at sizes where holding activations would be
// wasteful. backward() is unavailable in that mode.
class Tape {
 public:
  using Id = std::size_t;
  enum class Mode { kValues, kShapeOnly };

  explicit Tape(Mode mode = Mode::kValues) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor t);

  // C = op(A) op(B); backward dA = dC.B^T, dB = A^T.dC (transpose flags
  // permuting the rule accordingly).
  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);
  Id add(Id a, Id b);                 // same shape
  Id mul(Id a, Id b);                 // elementwise, same shape
  Id scale(Id a, double s);
  Id add_rowvec(Id a, Id v);          // v broadcast over rows of a
  Id broadcast_rows(Id v, std::size_t m);
  Id slice_cols(Id a, std::size_t col0, std::size_t width);
  Id concat_cols(const std::vector<Id>& parts);
  Id softmax_scaled(Id s, double tau);
  Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-6);
  Id gelu(Id x);
  Id cross_entropy(Id logits, std::size_t label);
  Id sum(Id a);

  bool shape_only() const { return mode_ == Mode::kShapeOnly; }
  const Tensor& value(Id id) const;
  const std::vector<std::size_t>& shape(Id id) const;
  bool needs_grad(Id id) const { return slots_[id].needs_grad; }
  std::size_t size() const { return slots_.size(); }

  // Accumulated matmul cost (2abc per product) and recorded activation
  // element counts, both maintained in every mode.
  std::uint64_t matmul_flops() const { return flops_; }
  std::uint64_t activation_elements() const { return activation_elements_; }

  void backward(Id loss);
  // Gradient of the last backward() w.r.t. id; zero tensor for leaves the
  // loss never reached.
  const Tensor& grad(Id id) const;

 private:
  struct Slot {
    Tensor val;
    std::vector<std::size_t> shape;
    bool needs_grad = false;
    bool is_leaf = false;
  };
  struct Node {
    Id out;
    std::function<void(Tape&)> back;
  };

  Id push(std::vector<std::size_t> shape, Tensor val, bool needs_grad,
          bool is_leaf);
  Tensor& grad_buffer(Id id);
  bool grad_touched(Id id) const { return grads_[id].rank() != 0; }
  void check_finite(Id id, const char* op) const;
  const Tensor& val_of(Id id) const { return slots_[id].val; }

  Mode mode_;
  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::uint64_t flops_ = 0;
  std::uint64_t activation_elements_ = 0;
  mutable Tensor zero_grad_scratch_;
};

}  // namespace kat
