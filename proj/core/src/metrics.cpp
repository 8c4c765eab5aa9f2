// Copyright 2026 The diffbev Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "diffbev/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "diffbev/error.hpp"

namespace diffbev {

namespace {

void require_same_size(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c) {
    throw ValidationError(std::string(what) + ": sizes " + std::to_string(a) + ", " + std::to_string(b) + ", " +
                          std::to_string(c) + " differ");
  }
}

bool on(float v) { return v > 0.5f; }

}  // namespace

double iou(std::span<const float> pred, std::span<const float> gt, std::span<const float> valid_mask) {
  require_same_size(pred.size(), gt.size(), valid_mask.size(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!on(valid_mask[i])) continue;
    inter += on(pred[i]) && on(gt[i]);
    uni += on(pred[i]) || on(gt[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> average_precision(std::span<const float> scores, std::span<const float> gt,
                                        std::span<const float> valid_mask) {
  require_same_size(scores.size(), gt.size(), valid_mask.size(), "average_precision");
  std::vector<std::size_t> order;
  std::size_t total_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!on(valid_mask[i])) continue;
    order.push_back(i);
    total_pos += on(gt[i]);
  }
  if (total_pos == 0) return std::nullopt;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::pair<double, double>> curve;  // (recall, precision)
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) group_pos += on(gt[order[j++]]);
    tp += group_pos;
    seen += j - i;
    if (group_pos > 0) {
      curve.emplace_back(static_cast<double>(tp) / static_cast<double>(total_pos),
                         static_cast<double>(tp) / static_cast<double>(seen));
    }
    i = j;
  }
  double area = 0.0, r_prev = 0.0, p_prev = curve.front().second;
  for (const auto& [r, p] : curve) {
    area += (r - r_prev) * (p + p_prev) / 2.0;
    r_prev = r;
    p_prev = p;
  }
  return area;
}

MetricAccumulator::MetricAccumulator(std::size_t classes)
    : classes_(classes),
      intersection_(classes, 0.0),
      union_(classes, 0.0),
      positives_(classes, 0.0),
      scores_(classes),
      labels_(classes) {
  if (classes == 0) throw ValidationError("metrics: zero classes");
}

void MetricAccumulator::add(std::span<const float> probs, std::span<const float> gt,
                            std::span<const float> valid_mask) {
  const std::size_t cells = valid_mask.size();
  if (probs.size() != classes_ * cells || gt.size() != classes_ * cells) {
    throw ValidationError("metrics: expected " + std::to_string(classes_) + " x " + std::to_string(cells) +
                          " probabilities and labels");
  }
  for (std::size_t c = 0; c < classes_; ++c) {
    for (std::size_t i = 0; i < cells; ++i) {
      if (!on(valid_mask[i])) continue;
      const float p = probs[c * cells + i];
      const bool pred = p > kOccupancyThreshold, truth = on(gt[c * cells + i]);
      intersection_[c] += pred && truth;
      union_[c] += pred || truth;
      positives_[c] += truth;
      scores_[c].push_back(p);
      labels_[c].push_back(truth ? 1.0f : 0.0f);
    }
  }
}

MetricAccumulator::Report MetricAccumulator::report() const {
  Report r;
  double iou_sum = 0.0, ap_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    r.per_class_iou.push_back(union_[c] == 0.0 ? 1.0 : intersection_[c] / union_[c]);
    const std::vector<float> ones(scores_[c].size(), 1.0f);
    const auto ap = average_precision(scores_[c], labels_[c], ones);
    r.per_class_ap.push_back(ap.value_or(std::numeric_limits<double>::quiet_NaN()));
    r.present.push_back(positives_[c] > 0.0);
    if (positives_[c] > 0.0) {
      iou_sum += r.per_class_iou.back();
      ap_sum += *ap;
      ++present;
    }
  }
  if (present > 0) {
    r.miou = iou_sum / static_cast<double>(present);
    r.map = ap_sum / static_cast<double>(present);
  }
  return r;
}

std::string report_csv(const MetricReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "class,iou,ap\n";
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    os << (c < class_names.size() ? class_names[c] : "class" + std::to_string(c)) << "," << r.per_class_iou[c] << ",";
    if (r.present[c]) os << r.per_class_ap[c];
    os << "\n";
  }
  os << "mean," << r.miou << "," << r.map << "\n";
  return os.str();
}

}  // namespace diffbev
