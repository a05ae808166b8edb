#include "pams/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pams/errors.hpp"

namespace pams {

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw StateError("use of an undefined tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw StateError("use of an undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::grad_mut() const {
  if (!node_) throw StateError("use of an undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) const {
  auto dst = grad_mut();
  if (g.size() != dst.size()) throw DimensionError("gradient length mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, false);
}

bool Tensor::all_finite() const {
  if (!node_) return true;
  return std::all_of(node_->data.begin(), node_->data.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

bool needs_recording(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->requires_grad(); });
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn backward,
                  std::vector<std::uint8_t> region) {
  if (consumed_) throw StateError("recording onto a tape that was already replayed");
  Tensor out = output;
  out.set_requires_grad(true);
  entries_.push_back({out, std::move(inputs), std::move(backward), std::move(region)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("tape already replayed");
  if (entries_.empty()) throw StateError("backward called before any forward was recorded");
  if (!loss.defined() || loss.numel() != 1) throw DimensionError("backward requires a scalar loss");
  const bool recorded = std::any_of(entries_.begin(), entries_.end(),
                                    [&](const Entry& e) { return e.output.same_node(loss); });
  if (!recorded) throw StateError("loss was not produced by an operation on this tape");

  Tensor seed = loss;
  seed.grad_mut()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward(it->output.grad());
  }
  consumed_ = true;
  // Drop closures so intermediate buffers are released; the region masks stay
  // available for signature queries.
  for (auto& e : entries_) {
    e.backward = nullptr;
    e.inputs.clear();
  }
}

std::uint64_t Tape::region_signature() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& e : entries_) {
    for (auto b : e.region) {
      h ^= b;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace pams
