#include "dacca/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "dacca/errors.hpp"
#include "dacca/rng.hpp"

namespace dacca {

void ModelConfig::validate() const {
  if (num_lanes < 1)
    throw config_error("model: num_lanes must be >= 1");
  if (feature_dim < 2)
    throw config_error("model: feature_dim must be >= 2");
  if (image_height < 8 || image_width < 8)
    throw config_error("model: image size must be >= 8");
  if (image_height % 2 || image_width % 2)
    throw config_error("model: image size must be even");
  for (int c : encoder_channels)
    if (c < 1) throw config_error("model: encoder channel widths must be >= 1");
}

namespace {

Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

ConvLayer init_conv(int out_c, int in_c, int k, int stride, int padding,
                    Rng& rng) {
  ConvLayer layer;
  layer.weight = init_weight({out_c, in_c, k, k}, in_c * k * k, rng);
  layer.bias = Tensor::zeros({out_c}, true);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor apply_conv(Tape& tape, const ConvLayer& layer, const Tensor& x) {
  return add_channel_bias(
      tape, conv2d(tape, x, layer.weight, layer.stride, layer.padding),
      layer.bias);
}

}  // namespace

SegModel init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  SegModel m;
  m.config = config;
  const int d = config.feature_dim;
  int in_c = 3;
  for (std::size_t i = 0; i < config.encoder_channels.size(); ++i) {
    const int out_c = config.encoder_channels[i];
    EncoderStage stage;
    stage.conv = init_conv(out_c, in_c, 3, i == 0 ? 2 : 1, 1, rng);
    stage.norm_gamma = Tensor::full({out_c}, 1.0, true);
    stage.norm_beta = Tensor::zeros({out_c}, true);
    stage.normalized = true;
    m.encoder.push_back(std::move(stage));
    in_c = out_c;
  }
  EncoderStage last;
  last.conv =
      init_conv(d, in_c, 3, config.encoder_channels.empty() ? 2 : 1, 1, rng);
  m.encoder.push_back(std::move(last));
  m.pred_head = init_conv(config.num_classes(), d, 1, 1, 0, rng);
  m.repr_head = init_conv(d, d, 1, 1, 0, rng);
  m.dfa_head = init_conv(config.num_classes(), d, 1, 1, 0, rng);
  m.dfa_linear_source_w = init_weight({d, d}, d, rng);
  m.dfa_linear_source_b = Tensor::zeros({d}, true);
  m.dfa_linear_target_w = init_weight({d, d}, d, rng);
  m.dfa_linear_target_b = Tensor::zeros({d}, true);
  // identity on the E slice, zero on the domain slices: enabling DFA starts
  // as a no-op and the fusion blends in through training
  m.fuse.weight = Tensor::zeros({d, 3 * d, 1, 1}, true);
  for (int i = 0; i < d; ++i) m.fuse.weight.values()[i * 3 * d + i] = 1.0;
  m.fuse.bias = Tensor::zeros({d}, true);
  m.fuse.stride = 1;
  m.fuse.padding = 0;
  return m;
}

std::vector<Tensor> SegModel::parameters() const {
  std::vector<Tensor> out;
  for (const EncoderStage& stage : encoder) {
    out.push_back(stage.conv.weight);
    out.push_back(stage.conv.bias);
    if (stage.normalized) {
      out.push_back(stage.norm_gamma);
      out.push_back(stage.norm_beta);
    }
  }
  for (const ConvLayer* l : {&pred_head, &repr_head, &dfa_head}) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  out.push_back(dfa_linear_source_w);
  out.push_back(dfa_linear_source_b);
  out.push_back(dfa_linear_target_w);
  out.push_back(dfa_linear_target_b);
  out.push_back(fuse.weight);
  out.push_back(fuse.bias);
  return out;
}

void SegModel::set_requires_grad(bool value) {
  for (Tensor t : parameters()) {
    t.data()->requires_grad = value;
    t.data()->tracked = value;
    if (value)
      t.data()->grad.assign(t.values().size(), 0.0);
    else
      t.data()->grad.clear();
  }
}

SegModel SegModel::clone(bool requires_grad) const {
  SegModel copy = *this;
  auto dup = [requires_grad](Tensor& t) {
    t = Tensor::from_values(t.shape(), t.values(), requires_grad);
  };
  auto dup_layer = [&](ConvLayer& l) {
    dup(l.weight);
    dup(l.bias);
  };
  for (EncoderStage& stage : copy.encoder) {
    dup_layer(stage.conv);
    if (stage.normalized) {
      dup(stage.norm_gamma);
      dup(stage.norm_beta);
    }
  }
  dup_layer(copy.pred_head);
  dup_layer(copy.repr_head);
  dup_layer(copy.dfa_head);
  dup(copy.dfa_linear_source_w);
  dup(copy.dfa_linear_source_b);
  dup(copy.dfa_linear_target_w);
  dup(copy.dfa_linear_target_b);
  dup_layer(copy.fuse);
  return copy;
}

DfaWeights SegModel::dfa_weights() const {
  DfaWeights w;
  const ConvLayer& head = config.share_dfa_head ? pred_head : dfa_head;
  w.head_w = head.weight;
  w.head_b = head.bias;
  w.linear_source_w = dfa_linear_source_w;
  w.linear_source_b = dfa_linear_source_b;
  w.linear_target_w = dfa_linear_target_w;
  w.linear_target_b = dfa_linear_target_b;
  w.fuse_w = fuse.weight;
  w.fuse_b = fuse.bias;
  return w;
}

ForwardResult forward(Tape& tape, const SegModel& model, const Tensor& image,
                      const BankPair* banks, bool dfa_enabled,
                      const DfaOptions& options, const DfaSelection* frozen) {
  if (image.rank() != 3 || image.dim(0) != 3 ||
      image.dim(1) != model.config.image_height ||
      image.dim(2) != model.config.image_width)
    throw std::invalid_argument(
        "forward: image " + shape_string(image.shape()) + ", expected [3x" +
        std::to_string(model.config.image_height) + "x" +
        std::to_string(model.config.image_width) + "]");
  ForwardResult r;
  Tensor x = image;
  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    const EncoderStage& stage = model.encoder[i];
    x = apply_conv(tape, stage.conv, x);
    if (stage.normalized)
      x = instance_norm(tape, x, stage.norm_gamma, stage.norm_beta);
    if (i + 1 < model.encoder.size()) x = relu(tape, x);
  }
  r.features = x;
  if (dfa_enabled) {
    if (!banks)
      throw contract_error("forward: DFA enabled without banks");
    r.fused = dfa_fuse(tape, r.features, *banks, model.dfa_weights(), options,
                       frozen, &r.dfa);
  } else {
    r.fused = r.features;
  }
  r.logits = apply_conv(tape, model.pred_head, r.fused);
  r.repr = apply_conv(tape, model.repr_head, r.fused);
  return r;
}

void ema_update(SegModel& teacher, const SegModel& student, double beta) {
  std::vector<Tensor> tp = teacher.parameters();
  std::vector<Tensor> sp = student.parameters();
  if (tp.size() != sp.size())
    throw std::invalid_argument("ema_update: architecture mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].shape() != sp[i].shape())
      throw std::invalid_argument("ema_update: shape mismatch at parameter " +
                                  std::to_string(i) + ": " +
                                  shape_string(tp[i].shape()) + " vs " +
                                  shape_string(sp[i].shape()));
    auto& tv = tp[i].values();
    const auto& sv = sp[i].values();
    for (std::size_t j = 0; j < tv.size(); ++j)
      tv[j] = beta * tv[j] + (1.0 - beta) * sv[j];
  }
}

// --- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'D', 'A', 'C', 'C', 'A', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_i64(std::FILE* f, std::int64_t v) {
  if (std::fwrite(&v, sizeof v, 1, f) != 1)
    throw data_error("checkpoint: short write");
}

void write_f64(std::FILE* f, const double* v, std::size_t n) {
  if (n && std::fwrite(v, sizeof(double), n, f) != n)
    throw data_error("checkpoint: short write");
}

void write_u8(std::FILE* f, unsigned char v) {
  if (std::fwrite(&v, 1, 1, f) != 1)
    throw data_error("checkpoint: short write");
}

std::int64_t read_i64(std::FILE* f) {
  std::int64_t v;
  if (std::fread(&v, sizeof v, 1, f) != 1)
    throw data_error("checkpoint: unexpected end of file");
  return v;
}

void read_f64(std::FILE* f, double* v, std::size_t n) {
  if (n && std::fread(v, sizeof(double), n, f) != n)
    throw data_error("checkpoint: unexpected end of file");
}

unsigned char read_u8(std::FILE* f) {
  unsigned char v;
  if (std::fread(&v, 1, 1, f) != 1)
    throw data_error("checkpoint: unexpected end of file");
  return v;
}

void write_tensor(std::FILE* f, const Tensor& t) {
  write_i64(f, t.rank());
  for (int i = 0; i < t.rank(); ++i) write_i64(f, t.dim(i));
  write_f64(f, t.values().data(), t.values().size());
}

void read_tensor_into(std::FILE* f, Tensor& t) {
  const std::int64_t rank = read_i64(f);
  if (rank != t.rank())
    throw data_error("checkpoint: tensor rank mismatch");
  for (int i = 0; i < t.rank(); ++i)
    if (read_i64(f) != t.dim(i))
      throw data_error("checkpoint: tensor shape mismatch");
  read_f64(f, t.values().data(), t.values().size());
}

void write_bank(std::FILE* f, const MemoryBank& bank) {
  write_u8(f, bank.domain == Domain::source ? 0 : 1);
  write_f64(f, &bank.t0, 1);
  write_f64(f, &bank.p, 1);
  write_f64(f, bank.features.data(), bank.features.size());
  for (char c : bank.initialized) write_u8(f, static_cast<unsigned char>(c));
}

void read_bank_into(std::FILE* f, MemoryBank& bank) {
  const unsigned char tag = read_u8(f);
  bank.domain = tag == 0 ? Domain::source : Domain::target;
  read_f64(f, &bank.t0, 1);
  read_f64(f, &bank.p, 1);
  read_f64(f, bank.features.data(), bank.features.size());
  for (char& c : bank.initialized) c = static_cast<char>(read_u8(f));
}

}  // namespace

void save_checkpoint(const std::string& path, const SegModel& model,
                     const BankPair& banks, std::int64_t iteration,
                     bool dfa_trained) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw data_error("checkpoint: cannot open " + path + " for writing");
  if (std::fwrite(kMagic, 1, sizeof kMagic, f.get()) != sizeof kMagic)
    throw data_error("checkpoint: short write");
  const ModelConfig& c = model.config;
  write_i64(f.get(), c.num_lanes);
  write_i64(f.get(), c.feature_dim);
  write_i64(f.get(), c.image_height);
  write_i64(f.get(), c.image_width);
  write_i64(f.get(), c.share_dfa_head ? 1 : 0);
  write_i64(f.get(), static_cast<std::int64_t>(c.seed));
  write_i64(f.get(), static_cast<std::int64_t>(c.encoder_channels.size()));
  for (int ch : c.encoder_channels) write_i64(f.get(), ch);
  write_i64(f.get(), iteration);
  write_i64(f.get(), dfa_trained ? 1 : 0);
  for (const Tensor& t : model.parameters()) write_tensor(f.get(), t);
  write_bank(f.get(), banks.source);
  write_bank(f.get(), banks.target);
}

Checkpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw data_error("checkpoint: cannot open " + path);
  char magic[sizeof kMagic];
  if (std::fread(magic, 1, sizeof magic, f.get()) != sizeof magic ||
      std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw data_error("checkpoint: bad magic in " + path);
  ModelConfig c;
  c.num_lanes = static_cast<int>(read_i64(f.get()));
  c.feature_dim = static_cast<int>(read_i64(f.get()));
  c.image_height = static_cast<int>(read_i64(f.get()));
  c.image_width = static_cast<int>(read_i64(f.get()));
  c.share_dfa_head = read_i64(f.get()) != 0;
  c.seed = static_cast<std::uint64_t>(read_i64(f.get()));
  const std::int64_t n_channels = read_i64(f.get());
  if (n_channels < 0 || n_channels > 64)
    throw data_error("checkpoint: implausible encoder channel count");
  c.encoder_channels.clear();
  for (std::int64_t i = 0; i < n_channels; ++i)
    c.encoder_channels.push_back(static_cast<int>(read_i64(f.get())));
  Checkpoint ckpt;
  ckpt.iteration = read_i64(f.get());
  ckpt.dfa_trained = read_i64(f.get()) != 0;
  ckpt.model = init_model(c);
  for (Tensor t : ckpt.model.parameters()) read_tensor_into(f.get(), t);
  ckpt.banks.source = make_bank(Domain::source, c.num_lanes, c.feature_dim);
  ckpt.banks.target = make_bank(Domain::target, c.num_lanes, c.feature_dim);
  read_bank_into(f.get(), ckpt.banks.source);
  read_bank_into(f.get(), ckpt.banks.target);
  return ckpt;
}

}  // namespace dacca
