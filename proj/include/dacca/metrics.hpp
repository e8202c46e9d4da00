#ifndef DACCA_METRICS_HPP
#define DACCA_METRICS_HPP

#include <vector>

#include "dacca/data.hpp"
#include "dacca/dfa.hpp"

namespace dacca {

struct Lane {
  int class_id = 0;
  std::vector<LanePoint> points;  // bottom-to-top, one per row
};

struct LaneEvalResult {
  double accuracy = 0.0;  // p_c / p_y
  double fp_rate = 0.0;   // l_f / l_p
  double fn_rate = 0.0;   // l_m / l_y
  std::vector<double> per_lane_accuracy;  // per ground-truth lane
  int correct_points = 0;
  int total_points = 0;
  int mispredicted_lanes = 0;  // l_f
  int predicted_lanes = 0;     // l_p
  int missing_lanes = 0;       // l_m
  int gt_lanes = 0;            // l_y
};

struct F1Result {
  int tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Nearest-neighbor upscale of the predicted category map to image
// resolution, then per lane class the mean x of its pixels in each covered
// row, scanned bottom-to-top. Lanes with fewer than 3 points are dropped.
std::vector<Lane> extract_lanes(const CategoryMap& prediction, int num_lanes,
                                int image_height, int image_width);

// Point accuracy with the angle-dependent tolerance base/cos(a_yl), where
// a_yl is the local lane angle from vertical (central differences over the
// ground-truth points). Lanes are matched by class id; a predicted lane with
// per-lane accuracy below 0.85 counts as mispredicted.
LaneEvalResult point_accuracy(const std::vector<Lane>& predicted,
                              const std::vector<Lane>& ground_truth,
                              double base_threshold);

// Lanes rendered as thick strokes, greedily matched by descending IoU; a
// match with IoU >= threshold is a true positive.
F1Result f1_score(const std::vector<Lane>& predicted,
                  const std::vector<Lane>& ground_truth, int image_height,
                  int image_width, int stroke_width,
                  double iou_threshold = 0.5);

// Ground-truth lanes of a scene in metric form (lane i -> class i+1).
std::vector<Lane> scene_lanes(const LaneScene& scene);

}  // namespace dacca

#endif
