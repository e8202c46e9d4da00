#ifndef DACCA_DATA_HPP
#define DACCA_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dacca/rng.hpp"

namespace dacca {

// Photometric + jitter parameters of one domain. Geometry is shared between
// domains; only the rendering (and, with jitter, a horizontal offset)
// differs.
struct DomainStyle {
  double background = 0.2;       // base brightness
  double texture = 0.05;         // low-frequency pattern amplitude
  double lane_brightness = 0.9;
  double noise_sigma = 0.02;
  double brightness_shift = 0.0;
  double saturation = 1.0;       // 1 keeps lane hues, 0 collapses to gray
  double jitter = 0.0;           // horizontal lane offset amplitude (px)
  bool blur = false;             // 3x3 box blur
  int occlusion_count = 0;       // semi-opaque patches drawn over the scene
  double occlusion_size = 16.0;  // max patch edge (px)
  double occlusion_opacity = 0.75;
};

struct LanePoint {
  double x = 0.0;
  int y = 0;
};

struct LaneScene {
  int num_lanes = 0, height = 0, width = 0;
  std::vector<double> image;  // [3,H,W] channel-major, values in [0,1]
  std::vector<int> label;     // H*W, classes 1..C+1 (255 = hidden on disk)
  std::vector<std::vector<LanePoint>> lanes;  // bottom-to-top
};

// Rasterizes x(y) = x0 + b*dy + a*dy^2 (dy measured up from the bottom row)
// with the given stroke width; emits one point per covered row,
// bottom-to-top.
void rasterize_lane(std::vector<int>& label, int height, int width,
                    int class_id, double x0, double b, double a,
                    int stroke_width, std::vector<LanePoint>* points);

LaneScene generate_scene(Rng& rng, int num_lanes, int height, int width,
                         const DomainStyle& style, int stroke_width = 4);

struct Dataset {
  std::string domain = "source";
  bool labels_hidden = false;
  int num_lanes = 0, height = 0, width = 0;
  int stroke_width = 4;
  std::string config_hash;
  std::vector<LaneScene> scenes;

  int count() const { return static_cast<int>(scenes.size()); }
  // Guarded accessor enforcing the UDA protocol: reading hidden labels is a
  // contract violation.
  const std::vector<int>& labels(int index) const;
};

// Layout: images/NNNN.ppm (P6), labels/NNNN.pgm (P5, 255 = hidden),
// lanes/NNNN.txt (one lane per line, "x y" pairs), manifest.txt.
void write_dataset(const std::string& path, const Dataset& dataset,
                   bool hide_labels, bool force);
Dataset read_dataset(const std::string& path);

void write_ppm(const std::string& path, const std::vector<double>& image,
               int height, int width);
std::vector<double> read_ppm(const std::string& path, int* height, int* width);
void write_pgm(const std::string& path, const std::vector<int>& values,
               int height, int width);
std::vector<int> read_pgm(const std::string& path, int* height, int* width);

LaneScene flip_scene(const LaneScene& scene);

struct BatchIndices {
  std::vector<int> scene;
  std::vector<bool> flip;
};

// One epoch of shuffled batches (the last may be short).
std::vector<BatchIndices> make_batches(int count, int batch_size,
                                       bool augment_flip, Rng& rng);

// Stateless per-iteration batch: epoch permutations are derived from
// (seed, epoch) and flips from (seed, iteration), so training can resume
// from a checkpoint without replaying the loader.
BatchIndices batch_for_iteration(int count, int batch_size, bool augment_flip,
                                 std::uint64_t seed, int iteration);

}  // namespace dacca

#endif
