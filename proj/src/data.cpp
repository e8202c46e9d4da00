#include "dacca/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dacca/errors.hpp"

namespace fs = std::filesystem;

namespace dacca {

namespace {

constexpr int kHiddenLabel = 255;
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string scene_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

}  // namespace

void rasterize_lane(std::vector<int>& label, int height, int width,
                    int class_id, double x0, double b, double a,
                    int stroke_width, std::vector<LanePoint>* points) {
  for (int y = height - 1; y >= 0; --y) {
    const double dy = static_cast<double>(height - 1 - y);
    const double cx = x0 + b * dy + a * dy * dy;
    if (cx < 0.0 || cx > width - 1) continue;
    const int start = static_cast<int>(std::lround(cx)) - stroke_width / 2;
    for (int k = 0; k < stroke_width; ++k) {
      const int col = start + k;
      if (col < 0 || col >= width) continue;
      label[y * width + col] = class_id;
    }
    if (points) points->push_back({cx, y});
  }
}

LaneScene generate_scene(Rng& rng, int num_lanes, int height, int width,
                         const DomainStyle& style, int stroke_width) {
  if (width < num_lanes * 8)
    throw std::invalid_argument("generate_scene: width " +
                                std::to_string(width) + " too small for " +
                                std::to_string(num_lanes) + " lanes");
  Rng geometry(rng.next_u64());
  Rng photometric(rng.next_u64());

  LaneScene scene;
  scene.num_lanes = num_lanes;
  scene.height = height;
  scene.width = width;
  scene.label.assign(static_cast<std::size_t>(height) * width, num_lanes + 1);
  scene.lanes.resize(num_lanes);

  // geometry stream consumption is independent of the style so that equal
  // geometry seeds give equal masks whenever jitter is zero
  const double offset_range = std::min(3.0, width / (8.0 * num_lanes));
  for (int c = 1; c <= num_lanes; ++c) {
    const double base = width * (c - 0.5) / num_lanes;
    const double x0 = base + geometry.uniform(-offset_range, offset_range);
    const double slope = geometry.uniform(-0.08, 0.08);
    const double curve = geometry.uniform(-0.001, 0.001);
    const double shift = style.jitter * geometry.uniform(-1.0, 1.0);
    rasterize_lane(scene.label, height, width, c, x0 + shift, slope, curve,
                   stroke_width, &scene.lanes[c - 1]);
  }

  // background with a low-frequency pattern, lanes painted on top; each
  // lane class gets a distinct hue so class identity is locally visible
  const int hw = height * width;
  scene.image.assign(3 * static_cast<std::size_t>(hw), 0.0);
  const double fx = 1.0 + photometric.uniform_int(3);
  const double fy = 1.0 + photometric.uniform_int(3);
  const double px = photometric.uniform();
  const double py = photometric.uniform();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int p = y * width + x;
      const int cls = scene.label[p];
      if (cls != num_lanes + 1) {
        const double angle = kTwoPi * (cls - 1) / std::max(num_lanes, 3);
        for (int ch = 0; ch < 3; ++ch) {
          const double tint =
              0.6 + 0.4 * std::cos(angle - ch * kTwoPi / 3.0);
          // desaturation pulls the hue toward the mean brightness
          const double full = style.lane_brightness * tint;
          const double gray = style.lane_brightness * 0.6;
          scene.image[ch * hw + p] =
              gray + style.saturation * (full - gray);
        }
      } else {
        const double v =
            style.background +
            style.texture * std::sin(kTwoPi * (fx * x / width + px)) *
                std::sin(kTwoPi * (fy * y / height + py));
        for (int ch = 0; ch < 3; ++ch) scene.image[ch * hw + p] = v;
      }
    }
  }
  // semi-opaque occluders hide lane evidence without touching the labels
  for (int k = 0; k < style.occlusion_count; ++k) {
    const int ow = 4 + photometric.uniform_int(
                           std::max(1, (int)style.occlusion_size - 3));
    const int oh = 4 + photometric.uniform_int(
                           std::max(1, (int)style.occlusion_size - 3));
    const int ox = photometric.uniform_int(std::max(1, width - ow));
    const int oy = photometric.uniform_int(std::max(1, height - oh));
    const double shade = style.background + photometric.uniform(-0.08, 0.08);
    const double a = style.occlusion_opacity;
    for (int y = oy; y < oy + oh; ++y)
      for (int x = ox; x < ox + ow; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          double& v = scene.image[ch * hw + y * width + x];
          v = a * shade + (1.0 - a) * v;
        }
  }
  if (style.blur) {
    std::vector<double> blurred(scene.image.size());
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          double acc = 0.0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
              acc += scene.image[ch * hw + yy * width + xx];
              ++n;
            }
          blurred[ch * hw + y * width + x] = acc / n;
        }
      }
    }
    scene.image.swap(blurred);
  }
  for (double& v : scene.image) {
    v += style.noise_sigma * photometric.normal() + style.brightness_shift;
    v = std::clamp(v, 0.0, 1.0);
  }
  return scene;
}

// --- PNM io ------------------------------------------------------------------

namespace {

struct PnmHeader {
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::FILE* f, const char* magic,
                          const std::string& path) {
  char m[3] = {};
  if (std::fread(m, 1, 2, f) != 2 || std::strncmp(m, magic, 2) != 0)
    throw data_error("pnm: bad magic in " + path + " (expected " +
                     std::string(magic) + ")");
  PnmHeader h;
  int* fields[3] = {&h.width, &h.height, &h.maxval};
  for (int* field : fields) {
    int c = std::fgetc(f);
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#')
        while (c != '\n' && c != EOF) c = std::fgetc(f);
      c = std::fgetc(f);
    }
    int value = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      value = value * 10 + (c - '0');
      any = true;
      c = std::fgetc(f);
    }
    if (!any) throw data_error("pnm: malformed header in " + path);
    *field = value;
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval != 255)
    throw data_error("pnm: unsupported header in " + path);
  return h;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw data_error("cannot open " + path);
  return f;
}

}  // namespace

void write_ppm(const std::string& path, const std::vector<double>& image,
               int height, int width) {
  const int hw = height * width;
  if (static_cast<int>(image.size()) != 3 * hw)
    throw std::invalid_argument("write_ppm: image size mismatch");
  FilePtr f = open_file(path, "wb");
  std::fprintf(f.get(), "P6\n%d %d\n255\n", width, height);
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(image[ch * hw + y * width + x], 0.0, 1.0);
        row[x * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
      throw data_error("write_ppm: short write to " + path);
  }
}

std::vector<double> read_ppm(const std::string& path, int* height,
                             int* width) {
  FilePtr f = open_file(path, "rb");
  const PnmHeader h = read_pnm_header(f.get(), "P6", path);
  const int hw = h.height * h.width;
  std::vector<unsigned char> raw(static_cast<std::size_t>(hw) * 3);
  if (std::fread(raw.data(), 1, raw.size(), f.get()) != raw.size())
    throw data_error("read_ppm: truncated pixel data in " + path);
  std::vector<double> image(3 * static_cast<std::size_t>(hw));
  for (int p = 0; p < hw; ++p)
    for (int ch = 0; ch < 3; ++ch)
      image[ch * hw + p] = raw[p * 3 + ch] / 255.0;
  if (height) *height = h.height;
  if (width) *width = h.width;
  return image;
}

void write_pgm(const std::string& path, const std::vector<int>& values,
               int height, int width) {
  if (static_cast<int>(values.size()) != height * width)
    throw std::invalid_argument("write_pgm: size mismatch");
  FilePtr f = open_file(path, "wb");
  std::fprintf(f.get(), "P5\n%d %d\n255\n", width, height);
  std::vector<unsigned char> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0 || values[i] > 255)
      throw std::invalid_argument("write_pgm: value out of byte range");
    raw[i] = static_cast<unsigned char>(values[i]);
  }
  if (std::fwrite(raw.data(), 1, raw.size(), f.get()) != raw.size())
    throw data_error("write_pgm: short write to " + path);
}

std::vector<int> read_pgm(const std::string& path, int* height, int* width) {
  FilePtr f = open_file(path, "rb");
  const PnmHeader h = read_pnm_header(f.get(), "P5", path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h.height) * h.width);
  if (std::fread(raw.data(), 1, raw.size(), f.get()) != raw.size())
    throw data_error("read_pgm: truncated pixel data in " + path);
  if (height) *height = h.height;
  if (width) *width = h.width;
  return std::vector<int>(raw.begin(), raw.end());
}

// --- dataset io ---------------------------------------------------------------

const std::vector<int>& Dataset::labels(int index) const {
  if (labels_hidden)
    throw contract_error("dataset: label access on a hidden-label (" + domain +
                         ") dataset");
  return scenes.at(index).label;
}

void write_dataset(const std::string& path, const Dataset& dataset,
                   bool hide_labels, bool force) {
  const fs::path root(path);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw data_error("dataset: " + path +
                     " exists and is not empty (use force to overwrite)");
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "lanes");

  for (int i = 0; i < dataset.count(); ++i) {
    const LaneScene& s = dataset.scenes[i];
    const std::string name = scene_name(i);
    write_ppm((root / "images" / (name + ".ppm")).string(), s.image, s.height,
              s.width);
    if (hide_labels) {
      std::vector<int> hidden(s.label.size(), kHiddenLabel);
      write_pgm((root / "labels" / (name + ".pgm")).string(), hidden,
                s.height, s.width);
    } else {
      write_pgm((root / "labels" / (name + ".pgm")).string(), s.label,
                s.height, s.width);
    }
    std::ofstream lanes((root / "lanes" / (name + ".txt")).string());
    if (!lanes) throw data_error("dataset: cannot write lane file for " + name);
    for (const auto& lane : s.lanes) {
      bool first = true;
      for (const LanePoint& p : lane) {
        if (!first) lanes << ' ';
        lanes << format_double(p.x) << ' ' << p.y;
        first = false;
      }
      lanes << '\n';
    }
  }

  std::ofstream manifest((root / "manifest.txt").string());
  if (!manifest) throw data_error("dataset: cannot write manifest");
  manifest << "count=" << dataset.count() << '\n'
           << "num_lanes=" << dataset.num_lanes << '\n'
           << "height=" << dataset.height << '\n'
           << "width=" << dataset.width << '\n'
           << "stroke_width=" << dataset.stroke_width << '\n'
           << "domain=" << dataset.domain << '\n'
           << "labels=" << (hide_labels ? "hidden" : "visible") << '\n'
           << "config_hash=" << dataset.config_hash << '\n';
}

Dataset read_dataset(const std::string& path) {
  const fs::path root(path);
  std::ifstream manifest((root / "manifest.txt").string());
  if (!manifest)
    throw data_error("dataset: missing manifest in " + path);
  Dataset d;
  int count = -1;
  std::string line;
  while (std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "count") count = std::stoi(value);
    else if (key == "num_lanes") d.num_lanes = std::stoi(value);
    else if (key == "height") d.height = std::stoi(value);
    else if (key == "width") d.width = std::stoi(value);
    else if (key == "stroke_width") d.stroke_width = std::stoi(value);
    else if (key == "domain") d.domain = value;
    else if (key == "labels") d.labels_hidden = (value == "hidden");
    else if (key == "config_hash") d.config_hash = value;
  }
  if (count < 0 || d.height <= 0 || d.width <= 0)
    throw data_error("dataset: malformed manifest in " + path);

  for (int i = 0; i < count; ++i) {
    const std::string name = scene_name(i);
    LaneScene s;
    s.num_lanes = d.num_lanes;
    int h = 0, w = 0;
    const std::string img_path = (root / "images" / (name + ".ppm")).string();
    if (!fs::exists(img_path))
      throw data_error("dataset: manifest count " + std::to_string(count) +
                       " but " + img_path + " is missing");
    s.image = read_ppm(img_path, &h, &w);
    if (h != d.height || w != d.width)
      throw data_error("dataset: image size mismatch in " + img_path);
    s.height = h;
    s.width = w;
    s.label = read_pgm((root / "labels" / (name + ".pgm")).string(), &h, &w);
    if (h != d.height || w != d.width)
      throw data_error("dataset: label size mismatch for " + name);

    std::ifstream lanes((root / "lanes" / (name + ".txt")).string());
    if (!lanes) throw data_error("dataset: missing lane file for " + name);
    std::string lane_line;
    while (std::getline(lanes, lane_line)) {
      std::istringstream ss(lane_line);
      std::vector<LanePoint> lane;
      double x;
      int y;
      while (ss >> x >> y) lane.push_back({x, y});
      s.lanes.push_back(std::move(lane));
    }
    if (static_cast<int>(s.lanes.size()) != d.num_lanes)
      throw data_error("dataset: lane count mismatch for " + name);
    d.scenes.push_back(std::move(s));
  }
  return d;
}

// --- batching ----------------------------------------------------------------

LaneScene flip_scene(const LaneScene& scene) {
  LaneScene out = scene;
  const int hw = scene.height * scene.width;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < scene.height; ++y)
      for (int x = 0; x < scene.width; ++x)
        out.image[ch * hw + y * scene.width + x] =
            scene.image[ch * hw + y * scene.width + (scene.width - 1 - x)];
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      out.label[y * scene.width + x] =
          scene.label[y * scene.width + (scene.width - 1 - x)];
  for (auto& lane : out.lanes)
    for (LanePoint& p : lane) p.x = (scene.width - 1) - p.x;
  return out;
}

std::vector<BatchIndices> make_batches(int count, int batch_size,
                                       bool augment_flip, Rng& rng) {
  if (batch_size < 1)
    throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<int> perm(count);
  for (int i = 0; i < count; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<BatchIndices> out;
  for (int start = 0; start < count; start += batch_size) {
    BatchIndices b;
    for (int i = start; i < std::min(count, start + batch_size); ++i) {
      b.scene.push_back(perm[i]);
      b.flip.push_back(augment_flip && rng.bernoulli(0.5));
    }
    out.push_back(std::move(b));
  }
  return out;
}

BatchIndices batch_for_iteration(int count, int batch_size, bool augment_flip,
                                 std::uint64_t seed, int iteration) {
  if (count < 1 || batch_size < 1)
    throw std::invalid_argument("batch_for_iteration: empty dataset or batch");
  constexpr std::uint64_t kEpochStream = 0xe90c4;
  constexpr std::uint64_t kFlipStream = 0xf119;
  BatchIndices out;
  Rng flip_rng = Rng(seed).child(kFlipStream).child(
      static_cast<std::uint64_t>(iteration));
  std::int64_t position = static_cast<std::int64_t>(iteration) * batch_size;
  for (int k = 0; k < batch_size; ++k, ++position) {
    const std::int64_t epoch = position / count;
    const int offset = static_cast<int>(position % count);
    Rng perm_rng = Rng(seed).child(kEpochStream).child(
        static_cast<std::uint64_t>(epoch));
    std::vector<int> perm(count);
    for (int i = 0; i < count; ++i) perm[i] = i;
    perm_rng.shuffle(perm);
    out.scene.push_back(perm[offset]);
    out.flip.push_back(augment_flip && flip_rng.bernoulli(0.5));
  }
  return out;
}

}  // namespace dacca
