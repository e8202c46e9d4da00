#include "dacca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dacca {

std::vector<Lane> scene_lanes(const LaneScene& scene) {
  std::vector<Lane> out;
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    Lane lane;
    lane.class_id = static_cast<int>(i) + 1;
    lane.points = scene.lanes[i];
    out.push_back(std::move(lane));
  }
  return out;
}

std::vector<Lane> extract_lanes(const CategoryMap& prediction, int num_lanes,
                                int image_height, int image_width) {
  if (prediction.height <= 0 || image_height % prediction.height != 0 ||
      image_width % prediction.width != 0)
    throw std::invalid_argument(
        "extract_lanes: image size is not a multiple of the prediction size");
  const int fy = image_height / prediction.height;
  const int fx = image_width / prediction.width;
  std::vector<Lane> out;
  for (int c = 1; c <= num_lanes; ++c) {
    Lane lane;
    lane.class_id = c;
    for (int y = image_height - 1; y >= 0; --y) {
      const int py = y / fy;
      double sum = 0.0;
      int count = 0;
      for (int x = 0; x < image_width; ++x) {
        if (prediction.classes[py * prediction.width + x / fx] == c) {
          sum += x;
          ++count;
        }
      }
      if (count > 0) lane.points.push_back({sum / count, y});
    }
    if (static_cast<int>(lane.points.size()) >= 3)
      out.push_back(std::move(lane));
  }
  return out;
}

namespace {

// Tolerance per ground-truth point: base * sqrt(1 + slope^2) with the slope
// dx/dy from central differences (one-sided at the ends).
std::vector<double> point_tolerances(const std::vector<LanePoint>& points,
                                     double base) {
  const int n = static_cast<int>(points.size());
  std::vector<double> tol(n, base);
  for (int k = 0; k < n; ++k) {
    const int lo = std::max(0, k - 1);
    const int hi = std::min(n - 1, k + 1);
    const double dy = static_cast<double>(points[hi].y - points[lo].y);
    if (dy == 0.0) continue;
    const double slope = (points[hi].x - points[lo].x) / dy;
    tol[k] = base * std::sqrt(1.0 + slope * slope);
  }
  return tol;
}

}  // namespace

LaneEvalResult point_accuracy(const std::vector<Lane>& predicted,
                              const std::vector<Lane>& ground_truth,
                              double base_threshold) {
  if (ground_truth.empty())
    throw std::invalid_argument("point_accuracy: no ground truth");
  LaneEvalResult r;
  r.gt_lanes = static_cast<int>(ground_truth.size());
  r.predicted_lanes = static_cast<int>(predicted.size());

  std::map<int, const Lane*> pred_by_class;
  for (const Lane& p : predicted) pred_by_class[p.class_id] = &p;
  std::map<int, double> matched_accuracy;  // per predicted class

  for (const Lane& gt : ground_truth) {
    const auto it = pred_by_class.find(gt.class_id);
    const Lane* pred = it == pred_by_class.end() ? nullptr : it->second;
    if (!pred) ++r.missing_lanes;

    std::map<int, double> pred_x;
    if (pred)
      for (const LanePoint& p : pred->points) pred_x[p.y] = p.x;

    const std::vector<double> tol =
        point_tolerances(gt.points, base_threshold);
    int correct = 0;
    for (std::size_t k = 0; k < gt.points.size(); ++k) {
      const auto px = pred_x.find(gt.points[k].y);
      if (px == pred_x.end()) continue;
      if (std::fabs(px->second - gt.points[k].x) < tol[k]) ++correct;
    }
    const int total = static_cast<int>(gt.points.size());
    const double acc = total > 0 ? static_cast<double>(correct) / total : 0.0;
    r.per_lane_accuracy.push_back(acc);
    r.correct_points += correct;
    r.total_points += total;
    if (pred) matched_accuracy[gt.class_id] = acc;
  }

  for (const Lane& p : predicted) {
    const auto it = matched_accuracy.find(p.class_id);
    const double acc = it == matched_accuracy.end() ? 0.0 : it->second;
    if (acc < 0.85) ++r.mispredicted_lanes;
  }

  r.accuracy = r.total_points > 0
                   ? static_cast<double>(r.correct_points) / r.total_points
                   : 0.0;
  r.fp_rate = r.predicted_lanes > 0
                  ? static_cast<double>(r.mispredicted_lanes) /
                        r.predicted_lanes
                  : 0.0;
  r.fn_rate = static_cast<double>(r.missing_lanes) / r.gt_lanes;
  return r;
}

namespace {

std::vector<char> lane_mask(const Lane& lane, int height, int width,
                            int stroke_width) {
  std::vector<char> mask(static_cast<std::size_t>(height) * width, 0);
  for (const LanePoint& p : lane.points) {
    if (p.y < 0 || p.y >= height) continue;
    const int start = static_cast<int>(std::lround(p.x)) - stroke_width / 2;
    for (int k = 0; k < stroke_width; ++k) {
      const int col = start + k;
      if (col < 0 || col >= width) continue;
      mask[p.y * width + col] = 1;
    }
  }
  return mask;
}

double mask_iou(const std::vector<char>& a, const std::vector<char>& b) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) ++inter;
    if (a[i] || b[i]) ++uni;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

F1Result f1_score(const std::vector<Lane>& predicted,
                  const std::vector<Lane>& ground_truth, int image_height,
                  int image_width, int stroke_width, double iou_threshold) {
  std::vector<std::vector<char>> pred_masks, gt_masks;
  for (const Lane& p : predicted)
    pred_masks.push_back(lane_mask(p, image_height, image_width, stroke_width));
  for (const Lane& g : ground_truth)
    gt_masks.push_back(lane_mask(g, image_height, image_width, stroke_width));

  struct Pair {
    double iou;
    int pred, gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < pred_masks.size(); ++i)
    for (std::size_t j = 0; j < gt_masks.size(); ++j)
      pairs.push_back({mask_iou(pred_masks[i], gt_masks[j]),
                       static_cast<int>(i), static_cast<int>(j)});
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.iou > b.iou; });

  std::vector<char> pred_used(pred_masks.size(), 0),
      gt_used(gt_masks.size(), 0);
  F1Result r;
  for (const Pair& p : pairs) {
    if (p.iou < iou_threshold) break;
    if (pred_used[p.pred] || gt_used[p.gt]) continue;
    pred_used[p.pred] = 1;
    gt_used[p.gt] = 1;
    ++r.tp;
  }
  r.fp = static_cast<int>(pred_masks.size()) - r.tp;
  r.fn = static_cast<int>(gt_masks.size()) - r.tp;
  r.precision = (r.tp + r.fp) > 0
                    ? static_cast<double>(r.tp) / (r.tp + r.fp)
                    : 0.0;
  r.recall =
      (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

}  // namespace dacca
