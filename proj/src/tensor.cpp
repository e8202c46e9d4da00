#include "dacca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dacca {

namespace {

int shape_product(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0)
      throw std::invalid_argument("tensor: non-positive dimension in " +
                                  shape_string(shape));
    n *= d;
  }
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

bool any_tracked(const std::vector<Tensor>& ts) {
  for (const Tensor& t : ts)
    if (t.tracked()) return true;
  return false;
}

constexpr double kLogFloor = 1e-12;

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int n = shape_product(shape);
  return from_values(std::move(shape), std::vector<double>(n, 0.0),
                     requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  int n = shape_product(shape);
  return from_values(std::move(shape), std::vector<double>(n, value),
                     requires_grad);
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  int n = shape_product(shape);
  if (n != static_cast<int>(values.size())) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_string(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  d->tracked = requires_grad;
  if (d->tracked) d->grad.assign(d->values.size(), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

Tensor Tensor::op_output(std::vector<int> shape, std::vector<double> values,
                         bool tracked) {
  Tensor t = from_values(std::move(shape), std::move(values), false);
  if (tracked) {
    t.d_->tracked = true;
    t.d_->grad.assign(t.d_->values.size(), 0.0);
  }
  return t;
}

std::vector<double>& Tensor::grad() {
  if (d_->grad.size() != d_->values.size()) {
    throw std::logic_error("tensor: grad not allocated (untracked tensor)");
  }
  return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.size() != d_->values.size()) {
    throw std::logic_error("tensor: grad not allocated (untracked tensor)");
  }
  return d_->grad;
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("tensor: item() on non-scalar of shape " +
                                shape_string(shape()));
  }
  return d_->values[0];
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from_values(d_->shape, d_->values, false);
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  if (!loss.tracked()) {
    throw std::invalid_argument("backward: loss is not connected to the tape");
  }
  // Intermediates are reset so one replay produces exactly one pass worth of
  // gradient; leaf (requires_grad) gradients accumulate across calls.
  for (auto& node : tape.nodes_) {
    auto& g = node.output.data()->grad;
    std::fill(g.begin(), g.end(), 0.0);
  }
  loss.data()->grad[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    it->backward();
  }
}

// --- elementwise -----------------------------------------------------------

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (int i = 0; i < x.size(); ++i)
    out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  Tensor r = Tensor::op_output(x.shape(), std::move(out), x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"relu", {x}, r, [xi, o]() {
                   const auto& og = o.data()->grad;
                   const auto& xv = xi.data()->values;
                   auto& xg = xi.data()->grad;
                   for (std::size_t i = 0; i < xg.size(); ++i)
                     if (xv[i] > 0.0) xg[i] += og[i];
                 }});
  }
  return r;
}

Tensor exp(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (int i = 0; i < x.size(); ++i) out[i] = std::exp(x.values()[i]);
  Tensor r = Tensor::op_output(x.shape(), std::move(out), x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"exp", {x}, r, [xi, o]() {
                   const auto& og = o.data()->grad;
                   const auto& ov = o.data()->values;
                   auto& xg = xi.data()->grad;
                   for (std::size_t i = 0; i < xg.size(); ++i)
                     xg[i] += og[i] * ov[i];
                 }});
  }
  return r;
}

Tensor log(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (int i = 0; i < x.size(); ++i)
    out[i] = std::log(std::max(x.values()[i], kLogFloor));
  Tensor r = Tensor::op_output(x.shape(), std::move(out), x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"log", {x}, r, [xi, o]() {
                   const auto& og = o.data()->grad;
                   const auto& xv = xi.data()->values;
                   auto& xg = xi.data()->grad;
                   for (std::size_t i = 0; i < xg.size(); ++i)
                     if (xv[i] > kLogFloor) xg[i] += og[i] / xv[i];
                 }});
  }
  return r;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor r =
      Tensor::op_output(a.shape(), std::move(out), a.tracked() || b.tracked());
  if (r.tracked()) {
    Tensor ai = a, bi = b, o = r;
    tape.record({"add", {a, b}, r, [ai, bi, o]() {
                   const auto& og = o.data()->grad;
                   if (ai.tracked()) {
                     auto& g = ai.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
                   }
                   if (bi.tracked()) {
                     auto& g = bi.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
                   }
                 }});
  }
  return r;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor r =
      Tensor::op_output(a.shape(), std::move(out), a.tracked() || b.tracked());
  if (r.tracked()) {
    Tensor ai = a, bi = b, o = r;
    tape.record({"sub", {a, b}, r, [ai, bi, o]() {
                   const auto& og = o.data()->grad;
                   if (ai.tracked()) {
                     auto& g = ai.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
                   }
                   if (bi.tracked()) {
                     auto& g = bi.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] -= og[i];
                   }
                 }});
  }
  return r;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor r =
      Tensor::op_output(a.shape(), std::move(out), a.tracked() || b.tracked());
  if (r.tracked()) {
    Tensor ai = a, bi = b, o = r;
    tape.record({"mul", {a, b}, r, [ai, bi, o]() {
                   const auto& og = o.data()->grad;
                   if (ai.tracked()) {
                     auto& g = ai.data()->grad;
                     const auto& bv = bi.data()->values;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += og[i] * bv[i];
                   }
                   if (bi.tracked()) {
                     auto& g = bi.data()->grad;
                     const auto& av = ai.data()->values;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += og[i] * av[i];
                   }
                 }});
  }
  return r;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.values()[i] * c;
  Tensor r = Tensor::op_output(a.shape(), std::move(out), a.tracked());
  if (r.tracked()) {
    Tensor ai = a, o = r;
    tape.record({"scale", {a}, r, [ai, o, c]() {
                   const auto& og = o.data()->grad;
                   auto& g = ai.data()->grad;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += og[i] * c;
                 }});
  }
  return r;
}

Tensor add_const(Tape& tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.values()[i] + c;
  Tensor r = Tensor::op_output(a.shape(), std::move(out), a.tracked());
  if (r.tracked()) {
    Tensor ai = a, o = r;
    tape.record({"add_const", {a}, r, [ai, o]() {
                   const auto& og = o.data()->grad;
                   auto& g = ai.data()->grad;
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
                 }});
  }
  return r;
}

// --- structure -------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double ail = av[i * k + l];
      for (int j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
    }
  Tensor r =
      Tensor::op_output({m, n}, std::move(out), a.tracked() || b.tracked());
  if (r.tracked()) {
    Tensor ai = a, bi = b, o = r;
    tape.record({"matmul", {a, b}, r, [ai, bi, o, m, k, n]() {
                   const auto& og = o.data()->grad;
                   const auto& av = ai.data()->values;
                   const auto& bv = bi.data()->values;
                   if (ai.tracked()) {
                     auto& ag = ai.data()->grad;
                     for (int i = 0; i < m; ++i)
                       for (int l = 0; l < k; ++l) {
                         double s = 0.0;
                         for (int j = 0; j < n; ++j)
                           s += og[i * n + j] * bv[l * n + j];
                         ag[i * k + l] += s;
                       }
                   }
                   if (bi.tracked()) {
                     auto& bg = bi.data()->grad;
                     for (int l = 0; l < k; ++l)
                       for (int j = 0; j < n; ++j) {
                         double s = 0.0;
                         for (int i = 0; i < m; ++i)
                           s += av[i * k + l] * og[i * n + j];
                         bg[l * n + j] += s;
                       }
                   }
                 }});
  }
  return r;
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: no inputs");
  const auto& first = parts.front().shape();
  if (first.empty())
    throw std::invalid_argument("concat_channels: scalar inputs");
  int total0 = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts.front().rank())
      throw std::invalid_argument("concat_channels: rank mismatch");
    for (int i = 1; i < p.rank(); ++i)
      if (p.dim(i) != first[i])
        throw std::invalid_argument(
            "concat_channels: trailing dims differ, " +
            shape_string(p.shape()) + " vs " + shape_string(first));
    total0 += p.dim(0);
  }
  std::vector<int> shape = first;
  shape[0] = total0;
  std::vector<double> out;
  out.reserve(shape_product(shape));
  for (const Tensor& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor r = Tensor::op_output(std::move(shape), std::move(out),
                               any_tracked(parts));
  if (r.tracked()) {
    std::vector<Tensor> ins = parts;
    Tensor o = r;
    tape.record({"concat_channels", parts, r, [ins, o]() {
                   const auto& og = o.data()->grad;
                   std::size_t offset = 0;
                   for (const Tensor& p : ins) {
                     std::size_t n = p.data()->values.size();
                     if (p.tracked()) {
                       auto& g = p.data()->grad;
                       for (std::size_t i = 0; i < n; ++i)
                         g[i] += og[offset + i];
                     }
                     offset += n;
                   }
                 }});
  }
  return r;
}

Tensor gather_pixel(Tape& tape, const Tensor& x, int y, int xcol) {
  if (x.rank() != 3)
    throw std::invalid_argument("gather_pixel: expected [C,H,W], got " +
                                shape_string(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (y < 0 || y >= h || xcol < 0 || xcol >= w)
    throw std::invalid_argument("gather_pixel: position out of range");
  std::vector<double> out(c);
  for (int ci = 0; ci < c; ++ci)
    out[ci] = x.values()[(ci * h + y) * w + xcol];
  Tensor r = Tensor::op_output({c}, std::move(out), x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"gather_pixel", {x}, r, [xi, o, c, h, w, y, xcol]() {
                   const auto& og = o.data()->grad;
                   auto& g = xi.data()->grad;
                   for (int ci = 0; ci < c; ++ci)
                     g[(ci * h + y) * w + xcol] += og[ci];
                 }});
  }
  return r;
}

Tensor stack_scalars(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_scalars: no inputs");
  std::vector<double> out(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) out[i] = parts[i].item();
  Tensor r = Tensor::op_output({static_cast<int>(parts.size())},
                               std::move(out), any_tracked(parts));
  if (r.tracked()) {
    std::vector<Tensor> ins = parts;
    Tensor o = r;
    tape.record({"stack_scalars", parts, r, [ins, o]() {
                   const auto& og = o.data()->grad;
                   for (std::size_t i = 0; i < ins.size(); ++i)
                     if (ins[i].tracked()) ins[i].data()->grad[0] += og[i];
                 }});
  }
  return r;
}

// --- reductions ------------------------------------------------------------

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor r = Tensor::op_output({}, {s}, x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"sum", {x}, r, [xi, o]() {
                   double og = o.data()->grad[0];
                   auto& g = xi.data()->grad;
                   for (double& gi : g) gi += og;
                 }});
  }
  return r;
}

Tensor weighted_sum(Tape& tape, const Tensor& x,
                    const std::vector<double>& weights) {
  if (static_cast<int>(weights.size()) != x.size())
    throw std::invalid_argument("weighted_sum: " +
                                std::to_string(weights.size()) +
                                " weights for tensor of size " +
                                std::to_string(x.size()));
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x.values()[i] * weights[i];
  Tensor r = Tensor::op_output({}, {s}, x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    std::vector<double> w = weights;
    tape.record({"weighted_sum", {x}, r, [xi, o, w]() {
                   double og = o.data()->grad[0];
                   auto& g = xi.data()->grad;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += og * w[i];
                 }});
  }
  return r;
}

Tensor masked_mean(Tape& tape, const Tensor& x,
                   const std::vector<double>& mask) {
  if (static_cast<int>(mask.size()) != x.size())
    throw std::invalid_argument("masked_mean: mask size mismatch");
  double count = 0.0;
  for (double m : mask) count += m;
  if (count <= 0.0)
    throw std::invalid_argument("masked_mean: empty mask");
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x.values()[i] * mask[i];
  Tensor r = Tensor::op_output({}, {s / count}, x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    std::vector<double> m = mask;
    tape.record({"masked_mean", {x}, r, [xi, o, m, count]() {
                   double og = o.data()->grad[0] / count;
                   auto& g = xi.data()->grad;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += og * m[i];
                 }});
  }
  return r;
}

Tensor l2_norm(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  double norm = std::sqrt(s);
  Tensor r = Tensor::op_output({}, {norm}, x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"l2_norm", {x}, r, [xi, o]() {
                   double nv = o.data()->values[0];
                   if (nv == 0.0) return;  // subgradient 0 at the origin
                   double og = o.data()->grad[0] / nv;
                   auto& g = xi.data()->grad;
                   const auto& xv = xi.data()->values;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += og * xv[i];
                 }});
  }
  return r;
}

Tensor logsumexp(Tape& tape, const Tensor& x) {
  if (x.rank() != 1)
    throw std::invalid_argument("logsumexp: expected rank-1, got " +
                                shape_string(x.shape()));
  double m = x.values()[0];
  for (double v : x.values()) m = std::max(m, v);
  double s = 0.0;
  for (double v : x.values()) s += std::exp(v - m);
  double out = m + std::log(s);
  Tensor r = Tensor::op_output({}, {out}, x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"logsumexp", {x}, r, [xi, o]() {
                   double og = o.data()->grad[0];
                   double lse = o.data()->values[0];
                   auto& g = xi.data()->grad;
                   const auto& xv = xi.data()->values;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += og * std::exp(xv[i] - lse);
                 }});
  }
  return r;
}

Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: expected equal rank-1, " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    na += a.values()[i] * a.values()[i];
    nb += b.values()[i] * b.values()[i];
    dot += a.values()[i] * b.values()[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: degenerate feature");
  double cosv = dot / (na * nb);
  Tensor r = Tensor::op_output({}, {cosv}, a.tracked() || b.tracked());
  if (r.tracked()) {
    Tensor ai = a, bi = b, o = r;
    tape.record({"cosine_similarity", {a, b}, r, [ai, bi, o, na, nb, cosv]() {
                   double og = o.data()->grad[0];
                   const auto& av = ai.data()->values;
                   const auto& bv = bi.data()->values;
                   // d cos / d a = b/(|a||b|) - cos * a/|a|^2
                   if (ai.tracked()) {
                     auto& g = ai.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += og * (bv[i] / (na * nb) -
                                     cosv * av[i] / (na * na));
                   }
                   if (bi.tracked()) {
                     auto& g = bi.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += og * (av[i] / (na * nb) -
                                     cosv * bv[i] / (nb * nb));
                   }
                 }});
  }
  return r;
}

// --- spatial ---------------------------------------------------------------

namespace {

struct ConvDims {
  int cin, hin, win, cout, k, hout, wout, stride, padding;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride,
                   int padding) {
  if (input.rank() != 3 || weight.rank() != 4) {
    throw std::invalid_argument(
        "conv2d: expected input [C_in,H,W] and weight [C_out,C_in,k,k], got " +
        shape_string(input.shape()) + " and " + shape_string(weight.shape()));
  }
  ConvDims d;
  d.cin = input.dim(0);
  d.hin = input.dim(1);
  d.win = input.dim(2);
  d.cout = weight.dim(0);
  d.k = weight.dim(2);
  d.stride = stride;
  d.padding = padding;
  if (weight.dim(2) != weight.dim(3))
    throw std::invalid_argument("conv2d: non-square kernel " +
                                shape_string(weight.shape()));
  if (d.k != 1 && d.k != 3)
    throw std::invalid_argument("conv2d: kernel size " + std::to_string(d.k) +
                                " unsupported (expected 1 or 3)");
  if (weight.dim(1) != d.cin)
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(d.cin) +
        " != weight in-channels " + std::to_string(weight.dim(1)) +
        " (input " + shape_string(input.shape()) + ", weight " +
        shape_string(weight.shape()) + ")");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  d.hout = (d.hin + 2 * padding - d.k) / stride + 1;
  d.wout = (d.win + 2 * padding - d.k) / stride + 1;
  if (d.hout <= 0 || d.wout <= 0)
    throw std::invalid_argument("conv2d: empty output for input " +
                                shape_string(input.shape()));
  return d;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              int stride, int padding) {
  const ConvDims d = conv_dims(input, weight, stride, padding);
  std::vector<double> out(
      static_cast<std::size_t>(d.cout) * d.hout * d.wout, 0.0);
  const auto& in = input.values();
  const auto& w = weight.values();
  for (int co = 0; co < d.cout; ++co) {
    for (int ci = 0; ci < d.cin; ++ci) {
      for (int ky = 0; ky < d.k; ++ky) {
        for (int kx = 0; kx < d.k; ++kx) {
          const double wv =
              w[((co * d.cin + ci) * d.k + ky) * d.k + kx];
          if (wv == 0.0) continue;
          for (int y = 0; y < d.hout; ++y) {
            const int iy = y * d.stride - d.padding + ky;
            if (iy < 0 || iy >= d.hin) continue;
            const double* in_row = &in[(ci * d.hin + iy) * d.win];
            double* out_row = &out[(co * d.hout + y) * d.wout];
            for (int x = 0; x < d.wout; ++x) {
              const int ix = x * d.stride - d.padding + kx;
              if (ix < 0 || ix >= d.win) continue;
              out_row[x] += wv * in_row[ix];
            }
          }
        }
      }
    }
  }
  Tensor r = Tensor::op_output({d.cout, d.hout, d.wout}, std::move(out),
                               input.tracked() || weight.tracked());
  if (r.tracked()) {
    Tensor ini = input, wi = weight, o = r;
    tape.record({"conv2d", {input, weight}, r, [ini, wi, o, d]() {
                   const auto& og = o.data()->grad;
                   const auto& in = ini.data()->values;
                   const auto& w = wi.data()->values;
                   const bool gi = ini.tracked();
                   const bool gw = wi.tracked();
                   auto* ing = gi ? &ini.data()->grad : nullptr;
                   auto* wg = gw ? &wi.data()->grad : nullptr;
                   for (int co = 0; co < d.cout; ++co) {
                     for (int ci = 0; ci < d.cin; ++ci) {
                       for (int ky = 0; ky < d.k; ++ky) {
                         for (int kx = 0; kx < d.k; ++kx) {
                           const std::size_t widx =
                               ((co * d.cin + ci) * d.k + ky) * d.k + kx;
                           const double wv = w[widx];
                           double wacc = 0.0;
                           for (int y = 0; y < d.hout; ++y) {
                             const int iy = y * d.stride - d.padding + ky;
                             if (iy < 0 || iy >= d.hin) continue;
                             const double* grow =
                                 &og[(co * d.hout + y) * d.wout];
                             const std::size_t in_base =
                                 (ci * d.hin + iy) * d.win;
                             for (int x = 0; x < d.wout; ++x) {
                               const int ix = x * d.stride - d.padding + kx;
                               if (ix < 0 || ix >= d.win) continue;
                               if (gi) (*ing)[in_base + ix] += wv * grow[x];
                               if (gw) wacc += in[in_base + ix] * grow[x];
                             }
                           }
                           if (gw) (*wg)[widx] += wacc;
                         }
                       }
                     }
                   }
                 }});
  }
  return r;
}

Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() != 3 || bias.rank() != 1 || bias.dim(0) != x.dim(0))
    throw std::invalid_argument("add_channel_bias: x " +
                                shape_string(x.shape()) + ", bias " +
                                shape_string(bias.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(x.values());
  for (int ci = 0; ci < c; ++ci) {
    const double b = bias.values()[ci];
    for (int i = 0; i < hw; ++i) out[ci * hw + i] += b;
  }
  Tensor r = Tensor::op_output(x.shape(), std::move(out),
                               x.tracked() || bias.tracked());
  if (r.tracked()) {
    Tensor xi = x, bi = bias, o = r;
    tape.record({"add_channel_bias", {x, bias}, r, [xi, bi, o, c, hw]() {
                   const auto& og = o.data()->grad;
                   if (xi.tracked()) {
                     auto& g = xi.data()->grad;
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += og[i];
                   }
                   if (bi.tracked()) {
                     auto& g = bi.data()->grad;
                     for (int ci = 0; ci < c; ++ci) {
                       double s = 0.0;
                       for (int i = 0; i < hw; ++i) s += og[ci * hw + i];
                       g[ci] += s;
                     }
                   }
                 }});
  }
  return r;
}

Tensor channel_linear(Tape& tape, const Tensor& x, const Tensor& weight,
                      const Tensor& bias) {
  if (x.rank() != 3 || weight.rank() != 2 || weight.dim(1) != x.dim(0))
    throw std::invalid_argument("channel_linear: x " +
                                shape_string(x.shape()) + ", weight " +
                                shape_string(weight.shape()));
  const int din = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int dout = weight.dim(0), hw = h * w;
  if (bias.rank() != 1 || bias.dim(0) != dout)
    throw std::invalid_argument("channel_linear: bias " +
                                shape_string(bias.shape()) + " for out dim " +
                                std::to_string(dout));
  std::vector<double> out(static_cast<std::size_t>(dout) * hw);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  for (int d = 0; d < dout; ++d) {
    const double b = bias.values()[d];
    for (int i = 0; i < hw; ++i) out[d * hw + i] = b;
    for (int e = 0; e < din; ++e) {
      const double we = wv[d * din + e];
      if (we == 0.0) continue;
      const double* col = &xv[e * hw];
      double* orow = &out[d * hw];
      for (int i = 0; i < hw; ++i) orow[i] += we * col[i];
    }
  }
  Tensor r = Tensor::op_output(
      {dout, h, w}, std::move(out),
      x.tracked() || weight.tracked() || bias.tracked());
  if (r.tracked()) {
    Tensor xi = x, wi = weight, bi = bias, o = r;
    tape.record(
        {"channel_linear", {x, weight, bias}, r, [xi, wi, bi, o, din, dout,
                                                  hw]() {
           const auto& og = o.data()->grad;
           const auto& xv = xi.data()->values;
           const auto& wv = wi.data()->values;
           if (xi.tracked()) {
             auto& g = xi.data()->grad;
             for (int e = 0; e < din; ++e)
               for (int d = 0; d < dout; ++d) {
                 const double we = wv[d * din + e];
                 if (we == 0.0) continue;
                 const double* grow = &og[d * hw];
                 double* xg = &g[e * hw];
                 for (int i = 0; i < hw; ++i) xg[i] += we * grow[i];
               }
           }
           if (wi.tracked()) {
             auto& g = wi.data()->grad;
             for (int d = 0; d < dout; ++d)
               for (int e = 0; e < din; ++e) {
                 double s = 0.0;
                 const double* grow = &og[d * hw];
                 const double* col = &xv[e * hw];
                 for (int i = 0; i < hw; ++i) s += grow[i] * col[i];
                 g[d * din + e] += s;
               }
           }
           if (bi.tracked()) {
             auto& g = bi.data()->grad;
             for (int d = 0; d < dout; ++d) {
               double s = 0.0;
               const double* grow = &og[d * hw];
               for (int i = 0; i < hw; ++i) s += grow[i];
               g[d] += s;
             }
           }
         }});
  }
  return r;
}

Tensor instance_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                     const Tensor& beta, double eps) {
  if (x.rank() != 3)
    throw std::invalid_argument("instance_norm: expected [C,H,W], got " +
                                shape_string(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 ||
      beta.dim(0) != c)
    throw std::invalid_argument("instance_norm: gamma/beta must be [C]");
  std::vector<double> out(x.size());
  std::vector<double> inv_std(c), mean(c);
  const auto& xv = x.values();
  for (int ci = 0; ci < c; ++ci) {
    double mu = 0.0;
    for (int i = 0; i < hw; ++i) mu += xv[ci * hw + i];
    mu /= hw;
    double var = 0.0;
    for (int i = 0; i < hw; ++i) {
      const double d = xv[ci * hw + i] - mu;
      var += d * d;
    }
    var /= hw;
    mean[ci] = mu;
    inv_std[ci] = 1.0 / std::sqrt(var + eps);
    const double g = gamma.values()[ci], b = beta.values()[ci];
    for (int i = 0; i < hw; ++i)
      out[ci * hw + i] = g * (xv[ci * hw + i] - mu) * inv_std[ci] + b;
  }
  Tensor r = Tensor::op_output(
      x.shape(), std::move(out),
      x.tracked() || gamma.tracked() || beta.tracked());
  if (r.tracked()) {
    Tensor xi = x, gi = gamma, bi = beta, o = r;
    tape.record(
        {"instance_norm", {x, gamma, beta}, r,
         [xi, gi, bi, o, c, hw, mean, inv_std]() {
           const auto& og = o.data()->grad;
           const auto& xv = xi.data()->values;
           for (int ci = 0; ci < c; ++ci) {
             const double g = gi.data()->values[ci];
             const double is = inv_std[ci];
             double sum_dy = 0.0, sum_dy_xhat = 0.0;
             for (int i = 0; i < hw; ++i) {
               const double xhat = (xv[ci * hw + i] - mean[ci]) * is;
               sum_dy += og[ci * hw + i];
               sum_dy_xhat += og[ci * hw + i] * xhat;
             }
             if (gi.tracked()) gi.data()->grad[ci] += sum_dy_xhat;
             if (bi.tracked()) bi.data()->grad[ci] += sum_dy;
             if (xi.tracked()) {
               auto& xg = xi.data()->grad;
               const double mdy = sum_dy / hw;
               const double mdyx = sum_dy_xhat / hw;
               for (int i = 0; i < hw; ++i) {
                 const double xhat = (xv[ci * hw + i] - mean[ci]) * is;
                 xg[ci * hw + i] +=
                     g * is * (og[ci * hw + i] - mdy - xhat * mdyx);
               }
             }
           }
         }});
  }
  return r;
}

Tensor softmax_channel(Tape& tape, const Tensor& x) {
  if (x.rank() != 3)
    throw std::invalid_argument("softmax_channel: expected [C,H,W], got " +
                                shape_string(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (int i = 0; i < hw; ++i) {
    double m = xv[i];
    for (int ci = 1; ci < c; ++ci) m = std::max(m, xv[ci * hw + i]);
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      double e = std::exp(xv[ci * hw + i] - m);
      out[ci * hw + i] = e;
      s += e;
    }
    for (int ci = 0; ci < c; ++ci) out[ci * hw + i] /= s;
  }
  Tensor r = Tensor::op_output(x.shape(), std::move(out), x.tracked());
  if (r.tracked()) {
    Tensor xi = x, o = r;
    tape.record({"softmax_channel", {x}, r, [xi, o, c, hw]() {
                   const auto& og = o.data()->grad;
                   const auto& ov = o.data()->values;
                   auto& g = xi.data()->grad;
                   for (int i = 0; i < hw; ++i) {
                     double dot = 0.0;
                     for (int ci = 0; ci < c; ++ci)
                       dot += og[ci * hw + i] * ov[ci * hw + i];
                     for (int ci = 0; ci < c; ++ci)
                       g[ci * hw + i] +=
                           ov[ci * hw + i] * (og[ci * hw + i] - dot);
                   }
                 }});
  }
  return r;
}

}  // namespace dacca
