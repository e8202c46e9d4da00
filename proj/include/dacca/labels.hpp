#ifndef DACCA_LABELS_HPP
#define DACCA_LABELS_HPP

#include <vector>

namespace dacca {

// One-hot label map at feature resolution, stored channel-major like the
// logits tensors so it can be used directly as a weight vector in the
// cross-entropy. Each pixel row is either one-hot or all-zero (ignored).
struct LabelMap {
  int height = 0;
  int width = 0;
  int num_channels = 0;  // C+1
  std::vector<double> onehot;  // [C+1, H, W]

  static LabelMap zeros(int height, int width, int num_channels);
  // classes: H*W entries in 0..C+1, 0 meaning an ignored pixel.
  static LabelMap from_classes(const std::vector<int>& classes, int height,
                               int width, int num_channels);

  // 1..C+1, or 0 when the pixel row is all-zero.
  int class_at(int i, int j) const;
  void set_class(int i, int j, int class_id);
  void clear_pixel(int i, int j);
  int valid_count() const;
};

}  // namespace dacca

#endif
