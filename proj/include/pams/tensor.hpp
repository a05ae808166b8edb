#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pams {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles (NCHW for 4-D) with an optional gradient
/// buffer. Copies are shallow: two Tensor handles may refer to the same node,
/// which is how parameters, the tape and the optimizer share gradients.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for parameter updates between steps. Tensors recorded on a
  // live tape must not be mutated.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  // Zero-filled view when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  // Allocates a zeroed buffer on first use.
  std::span<double> grad_mut() const;
  void accumulate_grad(std::span<const double> g) const;
  void zero_grad();

  // New node with copied values and no gradient history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  bool all_finite() const;

 private:
  struct Node;
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations. Ops record onto the tape that
/// is active on the calling thread (see TapeScope); with no active tape they
/// compute values only.
class Tape {
 public:
  // Receives the gradient w.r.t. the recorded output and accumulates into
  // the op's inputs.
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn backward,
              std::vector<std::uint8_t> region = {});

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  // consumed; calling backward twice is a state error.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Hash over the piecewise-region masks (ReLU signs, clamp saturation,
  // |.| signs) recorded by kinked ops. Two forward passes with equal
  // signatures lie in the same smooth piece of the loss.
  std::uint64_t region_signature() const;

 private:
  struct Entry {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
    std::vector<std::uint8_t> region;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes a tape the active recording target on this thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread (teacher forwards, evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// True when an op with these inputs must be recorded.
bool needs_recording(std::initializer_list<const Tensor*> inputs);

}  // namespace pams
