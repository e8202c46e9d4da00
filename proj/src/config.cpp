#include "dacca/config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "dacca/errors.hpp"

namespace dacca {

std::string format_double(double value) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

namespace {

struct Field {
  enum Kind { kInt, kDouble, kBool, kString } kind;
  const char* name;
  long long RunConfig::* i = nullptr;
  double RunConfig::* d = nullptr;
  bool RunConfig::* b = nullptr;
  std::string RunConfig::* s = nullptr;
};

Field fi(const char* n, long long RunConfig::* p) {
  Field f;
  f.kind = Field::kInt;
  f.name = n;
  f.i = p;
  return f;
}
Field fd(const char* n, double RunConfig::* p) {
  Field f;
  f.kind = Field::kDouble;
  f.name = n;
  f.d = p;
  return f;
}
Field fb(const char* n, bool RunConfig::* p) {
  Field f;
  f.kind = Field::kBool;
  f.name = n;
  f.b = p;
  return f;
}
Field fs(const char* n, std::string RunConfig::* p) {
  Field f;
  f.kind = Field::kString;
  f.name = n;
  f.s = p;
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      fi("num_lanes", &RunConfig::num_lanes),
      fi("feature_dim", &RunConfig::feature_dim),
      fi("image_height", &RunConfig::image_height),
      fi("image_width", &RunConfig::image_width),
      fs("encoder_channels", &RunConfig::encoder_channels),
      fb("share_dfa_head", &RunConfig::share_dfa_head),
      fd("ema_beta", &RunConfig::ema_beta),
      fd("pseudo_label_threshold", &RunConfig::pseudo_label_threshold),
      fd("contrastive_weight", &RunConfig::contrastive_weight),
      fd("base_lr", &RunConfig::base_lr),
      fd("adapt_lr", &RunConfig::adapt_lr),
      fd("lr_power", &RunConfig::lr_power),
      fi("batch_size", &RunConfig::batch_size),
      fi("warmup_iters", &RunConfig::warmup_iters),
      fb("normalize_ce_by_pixels", &RunConfig::normalize_ce_by_pixels),
      fd("weight_decay", &RunConfig::weight_decay),
      fi("pretrain_iters", &RunConfig::pretrain_iters),
      fi("adapt_iters", &RunConfig::adapt_iters),
      fi("checkpoint_every", &RunConfig::checkpoint_every),
      fb("augment_flip", &RunConfig::augment_flip),
      fi("anchors_per_class", &RunConfig::anchors_per_class),
      fi("negatives_per_anchor", &RunConfig::negatives_per_anchor),
      fd("tau", &RunConfig::tau),
      fd("anchor_confidence", &RunConfig::anchor_confidence),
      fd("bank_t0", &RunConfig::bank_t0),
      fd("bank_p", &RunConfig::bank_p),
      fd("ubp_threshold", &RunConfig::ubp_threshold),
      fi("stroke_width", &RunConfig::stroke_width),
      fi("gen_count", &RunConfig::gen_count),
      fd("source_background", &RunConfig::source_background),
      fd("source_texture", &RunConfig::source_texture),
      fd("source_lane_brightness", &RunConfig::source_lane_brightness),
      fd("source_noise_sigma", &RunConfig::source_noise_sigma),
      fd("source_brightness_shift", &RunConfig::source_brightness_shift),
      fd("source_saturation", &RunConfig::source_saturation),
      fd("source_jitter", &RunConfig::source_jitter),
      fb("source_blur", &RunConfig::source_blur),
      fi("source_occlusions", &RunConfig::source_occlusions),
      fd("target_background", &RunConfig::target_background),
      fd("target_texture", &RunConfig::target_texture),
      fd("target_lane_brightness", &RunConfig::target_lane_brightness),
      fd("target_noise_sigma", &RunConfig::target_noise_sigma),
      fd("target_brightness_shift", &RunConfig::target_brightness_shift),
      fd("target_saturation", &RunConfig::target_saturation),
      fd("target_jitter", &RunConfig::target_jitter),
      fb("target_blur", &RunConfig::target_blur),
      fi("target_occlusions", &RunConfig::target_occlusions),
      fd("occlusion_size", &RunConfig::occlusion_size),
      fd("occlusion_opacity", &RunConfig::occlusion_opacity),
      fd("point_threshold_base", &RunConfig::point_threshold_base),
      fb("point_threshold_scale_to_width",
         &RunConfig::point_threshold_scale_to_width),
      fd("iou_threshold", &RunConfig::iou_threshold),
      fi("svg_overlay_count", &RunConfig::svg_overlay_count),
      fi("seed", &RunConfig::seed),
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value) {
  for (const Field& f : fields()) {
    if (key != f.name) continue;
    switch (f.kind) {
      case Field::kInt: {
        long long v = 0;
        auto r = std::from_chars(value.data(), value.data() + value.size(), v);
        if (r.ec != std::errc{} || r.ptr != value.data() + value.size())
          throw config_error("config: bad integer for " + key + ": '" +
                             value + "'");
        config.*f.i = v;
        return;
      }
      case Field::kDouble: {
        double v = 0;
        auto r = std::from_chars(value.data(), value.data() + value.size(), v);
        if (r.ec != std::errc{} || r.ptr != value.data() + value.size())
          throw config_error("config: bad number for " + key + ": '" + value +
                             "'");
        config.*f.d = v;
        return;
      }
      case Field::kBool:
        if (value == "true")
          config.*f.b = true;
        else if (value == "false")
          config.*f.b = false;
        else
          throw config_error("config: bad boolean for " + key + ": '" + value +
                             "' (expected true/false)");
        return;
      case Field::kString:
        config.*f.s = value;
        return;
    }
  }
  throw config_error("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config: " + path + ":" + std::to_string(line_no) +
                         ": expected 'key = value'");
    apply_config_entry(config, trim(line.substr(0, eq)),
                       trim(line.substr(eq + 1)));
  }
  return config;
}

std::string dump_config(const RunConfig& config) {
  std::ostringstream out;
  for (const Field& f : fields()) {
    out << f.name << " = ";
    switch (f.kind) {
      case Field::kInt: out << config.*f.i; break;
      case Field::kDouble: out << format_double(config.*f.d); break;
      case Field::kBool: out << (config.*f.b ? "true" : "false"); break;
      case Field::kString: out << config.*f.s; break;
    }
    out << '\n';
  }
  return out.str();
}

std::string config_hash(const RunConfig& config) {
  const std::string dump = dump_config(config);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig model_config(const RunConfig& config, std::uint64_t seed) {
  ModelConfig mc;
  mc.num_lanes = static_cast<int>(config.num_lanes);
  mc.feature_dim = static_cast<int>(config.feature_dim);
  mc.image_height = static_cast<int>(config.image_height);
  mc.image_width = static_cast<int>(config.image_width);
  mc.share_dfa_head = config.share_dfa_head;
  mc.seed = seed;
  mc.encoder_channels.clear();
  std::istringstream ss(config.encoder_channels);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      mc.encoder_channels.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw config_error("config: bad encoder_channels entry '" + part + "'");
    }
  }
  mc.validate();
  return mc;
}

TrainerConfig trainer_config(const RunConfig& config, int total_iters,
                             std::uint64_t seed) {
  TrainerConfig tc;
  tc.ema_beta = config.ema_beta;
  tc.pseudo_label_threshold = config.pseudo_label_threshold;
  tc.contrastive_weight = config.contrastive_weight;
  tc.total_iters = total_iters;
  tc.base_lr = config.base_lr;
  tc.lr_power = config.lr_power;
  tc.batch_size = static_cast<int>(config.batch_size);
  tc.warmup_iters = static_cast<int>(config.warmup_iters);
  tc.normalize_ce_by_pixels = config.normalize_ce_by_pixels;
  tc.weight_decay = config.weight_decay;
  tc.bank_t0 = config.bank_t0;
  tc.bank_p = config.bank_p;
  tc.seed = seed;
  tc.dfa.ubp_threshold = config.ubp_threshold;
  tc.contrast.anchors_per_class = static_cast<int>(config.anchors_per_class);
  tc.contrast.negatives_per_anchor =
      static_cast<int>(config.negatives_per_anchor);
  tc.contrast.tau = config.tau;
  tc.contrast.anchor_confidence = config.anchor_confidence;
  tc.validate();
  return tc;
}

DomainStyle domain_style(const RunConfig& config, Domain domain) {
  DomainStyle s;
  if (domain == Domain::source) {
    s.background = config.source_background;
    s.texture = config.source_texture;
    s.lane_brightness = config.source_lane_brightness;
    s.noise_sigma = config.source_noise_sigma;
    s.brightness_shift = config.source_brightness_shift;
    s.saturation = config.source_saturation;
    s.jitter = config.source_jitter;
    s.blur = config.source_blur;
    s.occlusion_count = static_cast<int>(config.source_occlusions);
    s.occlusion_size = config.occlusion_size;
    s.occlusion_opacity = config.occlusion_opacity;
  } else {
    s.background = config.target_background;
    s.texture = config.target_texture;
    s.lane_brightness = config.target_lane_brightness;
    s.noise_sigma = config.target_noise_sigma;
    s.brightness_shift = config.target_brightness_shift;
    s.saturation = config.target_saturation;
    s.jitter = config.target_jitter;
    s.blur = config.target_blur;
    s.occlusion_count = static_cast<int>(config.target_occlusions);
    s.occlusion_size = config.occlusion_size;
    s.occlusion_opacity = config.occlusion_opacity;
  }
  return s;
}

double effective_point_base(const RunConfig& config) {
  if (!config.point_threshold_scale_to_width)
    return config.point_threshold_base;
  return config.point_threshold_base * config.image_width / 800.0;
}

}  // namespace dacca
