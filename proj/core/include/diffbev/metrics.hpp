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

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace diffbev {

/// Binarization threshold for occupancy probabilities.
inline constexpr double kOccupancyThreshold = 0.5;

/// |pred AND gt| / |pred OR gt| over valid cells; 1 when both are empty.
/// Inputs are 0/1 maps (values above 0.5 count as set).
double iou(std::span<const float> pred, std::span<const float> gt, std::span<const float> valid_mask);

/// Area under the precision-recall curve over valid cells, ranked by
/// descending score. Tied scores form one threshold. The curve has a point at
/// every threshold that admits a positive, plus a left end (0, p_first), and
/// is integrated with the trapezoid rule. nullopt when gt has no positives.
std::optional<double> average_precision(std::span<const float> scores, std::span<const float> gt,
                                        std::span<const float> valid_mask);

/// Dataset-level accumulation: IoU from intersection and union counts summed
/// over samples, AP from all valid cells pooled over samples.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t classes);

  /// probs and gt are [classes, cells]; mask is [cells].
  void add(std::span<const float> probs, std::span<const float> gt, std::span<const float> valid_mask);

  struct Report {
    std::vector<double> per_class_iou;
    std::vector<double> per_class_ap;  // NaN where the class has no positives
    std::vector<bool> present;         // class has at least one valid positive
    double miou = 0.0;                 // mean IoU over present classes
    double map = 0.0;                  // mean AP over present classes
  };
  Report report() const;

 private:
  std::size_t classes_;
  std::vector<double> intersection_, union_, positives_;
  std::vector<std::vector<float>> scores_, labels_;
};

using MetricReport = MetricAccumulator::Report;

/// CSV with columns class,iou,ap followed by a "mean" row.
std::string report_csv(const MetricReport& r, const std::vector<std::string>& class_names);

}  // namespace diffbev
