#ifndef DACCA_TENSOR_HPP
#define DACCA_TENSOR_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dacca {

struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated iff tracked
  bool requires_grad = false;
  bool tracked = false;  // participates in the autodiff graph
};

// Dense float64 tensor with shared storage. Copies are cheap handles onto
// the same buffer; detach() makes an independent untracked copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const std::vector<int>& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[i]; }
  int size() const { return static_cast<int>(d_->values.size()); }

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  bool requires_grad() const { return d_->requires_grad; }
  bool tracked() const { return d_ && d_->tracked; }

  // Scalar (single-element) value.
  double item() const;

  void zero_grad();

  // Independent deep copy with no autodiff participation.
  Tensor detach() const;

  TensorData* data() const { return d_.get(); }

  // Internal factory for op results; grad is allocated when tracked.
  static Tensor op_output(std::vector<int> shape, std::vector<double> values,
                          bool tracked);

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Operations are recorded in execution order, which is a
// topological order of the graph; backward() replays them in reverse and
// accumulates gradients additively into the leaves.
class Tape {
 public:
  struct Node {
    const char* name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
  friend void backward(const Tensor&, Tape&);
};

// Populates grad on every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across invocations; intermediate gradients are
// reset at the start of each call.
void backward(const Tensor& loss, Tape& tape);

std::string shape_string(const std::vector<int>& shape);

// --- primitives -----------------------------------------------------------
// All operations record a backward rule on the tape when any input is
// tracked; otherwise they are plain forward computations.

// Cross-correlation of [C_in,H,W] with [C_out,C_in,k,k]; k in {1,3}.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              int stride, int padding);
// x: [C,H,W], bias: [C]; adds bias[c] to every pixel of channel c.
Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias);
// Per-pixel linear map along the channel axis: [D_in,H,W] -> [D_out,H,W].
Tensor channel_linear(Tape& tape, const Tensor& x, const Tensor& weight,
                      const Tensor& bias);
// Per-pixel softmax over the channel axis of [C,H,W], max-subtracted.
Tensor softmax_channel(Tape& tape, const Tensor& x);
// Per-channel spatial normalization of [C,H,W]: each channel map is shifted
// to zero mean and unit variance over its H*W pixels, then scaled by gamma
// and shifted by beta (both [C]).
Tensor instance_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                     const Tensor& beta, double eps = 1e-5);

Tensor relu(Tape& tape, const Tensor& x);
Tensor exp(Tape& tape, const Tensor& x);
// log(max(x, 1e-12)); the clamped region has zero gradient.
Tensor log(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor add_const(Tape& tape, const Tensor& a, double c);

// [m,k] x [k,n] -> [m,n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Concatenation along axis 0 (the channel axis for [C,H,W] tensors);
// trailing dimensions must agree.
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);
// Column (y, x) of a [C,H,W] map as a [C] vector; gradient scatters back.
Tensor gather_pixel(Tape& tape, const Tensor& x, int y, int xcol);
// n scalars -> [n].
Tensor stack_scalars(Tape& tape, const std::vector<Tensor>& parts);

Tensor sum(Tape& tape, const Tensor& x);
// Dot with a constant weight vector (must match x's length).
Tensor weighted_sum(Tape& tape, const Tensor& x,
                    const std::vector<double>& weights);
// sum(x*mask)/sum(mask); mask entries are 0/1 constants.
Tensor masked_mean(Tape& tape, const Tensor& x,
                   const std::vector<double>& mask);
Tensor l2_norm(Tape& tape, const Tensor& x);
// Stable log(sum(exp(x))) of a rank-1 tensor.
Tensor logsumexp(Tape& tape, const Tensor& x);
// <a,b>/(|a||b|) of two rank-1 tensors; throws on zero-norm input.
Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b);

}  // namespace dacca

#endif
