#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "changediff/layout.hpp"

namespace changediff {

// (C+1)x(C+1) confusion accumulator for semantic change detection. Index 0
// means "no change"; index j >= 1 means "changed into class j-1" keyed to the
// second-date label. Accumulators merge as a commutative monoid.
class SCDConfusion {
 public:
  explicit SCDConfusion(int num_classes);

  int num_classes() const { return classes_; }
  int64_t total() const;
  int64_t q(int gt, int pred) const { return q_[idx(gt, pred)]; }

  // Each layout pair is (date 1, date 2); four layouts must share H x W and
  // contain only ids < num_classes.
  void accumulate(const SemanticLayout& gt1, const SemanticLayout& gt2,
                  const SemanticLayout& pred1, const SemanticLayout& pred2);

  SCDConfusion& merge(const SCDConfusion& other);

 private:
  int classes_;
  std::vector<int64_t> q_;
  size_t idx(int gt, int pred) const {
    return static_cast<size_t>(gt) * (classes_ + 1) + pred;
  }
};

struct MetricValue {
  double value = 0.0;
  bool degenerate = false;  // denominator collapsed; value reported as 0
};

// SECOND-benchmark conventions: SeK = exp(IoU_change - 1) * kappa(Q with q00
// zeroed), Score = 0.3*mIoU + 0.7*SeK, mIoU = mean of no-change and change
// IoU, F_scd keyed to matching second-date labels. Binary block treats
// "changed" as the positive class.
struct MetricRecord {
  MetricValue oa, miou, sek, score, f_scd, kappa_scd;
  MetricValue iou_bin, f1_bin, precision_bin, recall_bin, kappa_bin;

  // Stable name -> value listing used by the report format.
  std::vector<std::pair<std::string, MetricValue>> items() const;
};

MetricRecord score(const SCDConfusion& conf);

// Text report: `metric=<name> value=<v> flag=<ok|degenerate>` per line.
void write_report(const std::string& path, const MetricRecord& record);
std::map<std::string, MetricValue> read_report(const std::string& path);

}  // namespace changediff
