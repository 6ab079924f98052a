#include "changediff/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "changediff/errors.hpp"

namespace changediff {

SCDConfusion::SCDConfusion(int num_classes) : classes_(num_classes) {
  if (num_classes < 1) fail(ErrorKind::Config, "confusion needs at least one class");
  q_.assign(static_cast<size_t>(num_classes + 1) * (num_classes + 1), 0);
}

int64_t SCDConfusion::total() const {
  int64_t s = 0;
  for (int64_t v : q_) s += v;
  return s;
}

void SCDConfusion::accumulate(const SemanticLayout& gt1, const SemanticLayout& gt2,
                              const SemanticLayout& pred1,
                              const SemanticLayout& pred2) {
  if (gt1.height != gt2.height || gt1.width != gt2.width ||
      gt1.height != pred1.height || gt1.width != pred1.width ||
      gt1.height != pred2.height || gt1.width != pred2.width)
    fail(ErrorKind::Shape, "confusion accumulate: layout sizes differ");
  size_t n = gt1.pixels();
  for (size_t i = 0; i < n; ++i) {
    int g1 = gt1.ids[i], g2 = gt2.ids[i];
    int p1 = pred1.ids[i], p2 = pred2.ids[i];
    if (g1 >= classes_ || g2 >= classes_ || p1 >= classes_ || p2 >= classes_)
      fail(ErrorKind::Shape, "confusion accumulate: class id >= " +
                                 std::to_string(classes_));
    int gt_label = (g1 == g2) ? 0 : g2 + 1;
    int pred_label = (p1 == p2) ? 0 : p2 + 1;
    ++q_[idx(gt_label, pred_label)];
  }
}

SCDConfusion& SCDConfusion::merge(const SCDConfusion& other) {
  if (other.classes_ != classes_)
    fail(ErrorKind::Alignment, "confusion merge: class counts differ");
  for (size_t i = 0; i < q_.size(); ++i) q_[i] += other.q_[i];
  return *this;
}

namespace {

MetricValue ratio_or_degenerate(double num, double den) {
  if (den <= 0.0) return {0.0, true};
  return {num / den, false};
}

// Cohen's kappa over an arbitrary square count matrix.
MetricValue kappa_of(const std::vector<double>& m, int n) {
  double total = 0.0;
  for (double v : m) total += v;
  if (total <= 0.0) return {0.0, true};
  double po = 0.0, pe = 0.0;
  for (int i = 0; i < n; ++i) {
    po += m[i * n + i];
    double row = 0.0, col = 0.0;
    for (int j = 0; j < n; ++j) {
      row += m[i * n + j];
      col += m[j * n + i];
    }
    pe += row * col;
  }
  po /= total;
  pe /= (total * total);
  if (1.0 - pe <= 0.0) return {0.0, true};
  return {(po - pe) / (1.0 - pe), false};
}

}  // namespace

MetricRecord score(const SCDConfusion& conf) {
  int64_t total = conf.total();
  if (total <= 0) fail(ErrorKind::Degenerate, "confusion matrix is empty");
  int c1 = conf.num_classes() + 1;

  // binary collapse: tn = q00, fp = gt-no-change predicted changed, fn =
  // gt-changed predicted no-change, tp = changed cells regardless of class.
  double tn = static_cast<double>(conf.q(0, 0));
  double fp = 0.0, fn = 0.0, tp = 0.0;
  double diag = 0.0, change_diag = 0.0;
  for (int i = 0; i < c1; ++i) {
    diag += static_cast<double>(conf.q(i, i));
    for (int j = 0; j < c1; ++j) {
      double v = static_cast<double>(conf.q(i, j));
      if (i == 0 && j >= 1) fp += v;
      if (i >= 1 && j == 0) fn += v;
      if (i >= 1 && j >= 1) {
        tp += v;
        if (i == j) change_diag += v;
      }
    }
  }

  MetricRecord r;
  r.oa = {diag / static_cast<double>(total), false};

  MetricValue iou_nc = ratio_or_degenerate(tn, tn + fp + fn);
  MetricValue iou_c = ratio_or_degenerate(tp, tp + fp + fn);
  r.miou = {(iou_nc.value + iou_c.value) / 2.0, iou_nc.degenerate || iou_c.degenerate};

  // kappa on Q with the no-change cell zeroed
  std::vector<double> qn0(static_cast<size_t>(c1) * c1);
  for (int i = 0; i < c1; ++i)
    for (int j = 0; j < c1; ++j)
      qn0[i * c1 + j] = static_cast<double>(conf.q(i, j));
  qn0[0] = 0.0;
  r.kappa_scd = kappa_of(qn0, c1);
  r.sek = {std::exp(iou_c.value - 1.0) * r.kappa_scd.value,
           r.kappa_scd.degenerate || iou_c.degenerate};
  r.score = {0.3 * r.miou.value + 0.7 * r.sek.value,
             r.miou.degenerate || r.sek.degenerate};

  // F_scd: a predicted-changed pixel counts iff gt changed into the same class
  MetricValue p_scd = ratio_or_degenerate(change_diag, tp + fp);
  MetricValue r_scd = ratio_or_degenerate(change_diag, tp + fn);
  if (p_scd.degenerate || r_scd.degenerate || p_scd.value + r_scd.value <= 0.0)
    r.f_scd = {0.0, true};
  else
    r.f_scd = {2.0 * p_scd.value * r_scd.value / (p_scd.value + r_scd.value), false};

  r.iou_bin = iou_c;
  r.precision_bin = ratio_or_degenerate(tp, tp + fp);
  r.recall_bin = ratio_or_degenerate(tp, tp + fn);
  if (r.precision_bin.degenerate || r.recall_bin.degenerate ||
      r.precision_bin.value + r.recall_bin.value <= 0.0)
    r.f1_bin = {0.0, true};
  else
    r.f1_bin = {2.0 * r.precision_bin.value * r.recall_bin.value /
                    (r.precision_bin.value + r.recall_bin.value),
                false};
  std::vector<double> bin = {tn, fp, fn, tp};
  r.kappa_bin = kappa_of(bin, 2);
  return r;
}

std::vector<std::pair<std::string, MetricValue>> MetricRecord::items() const {
  return {{"oa", oa},
          {"miou", miou},
          {"sek", sek},
          {"score", score},
          {"f_scd", f_scd},
          {"kappa_scd", kappa_scd},
          {"iou_bin", iou_bin},
          {"f1_bin", f1_bin},
          {"precision_bin", precision_bin},
          {"recall_bin", recall_bin},
          {"kappa_bin", kappa_bin}};
}

void write_report(const std::string& path, const MetricRecord& record) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write report: " + path);
  char buf[64];
  for (const auto& [name, mv] : record.items()) {
    std::snprintf(buf, sizeof(buf), "%.17g", mv.value);
    out << "metric=" << name << " value=" << buf << " flag="
        << (mv.degenerate ? "degenerate" : "ok") << '\n';
  }
  if (!out) fail(ErrorKind::Io, "report write failed: " + path);
}

std::map<std::string, MetricValue> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open report: " + path);
  std::map<std::string, MetricValue> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string m, v, f;
    ss >> m >> v >> f;
    if (m.rfind("metric=", 0) != 0 || v.rfind("value=", 0) != 0 ||
        f.rfind("flag=", 0) != 0)
      fail(ErrorKind::Parse, path + ": malformed report line: " + line);
    MetricValue mv;
    mv.value = std::strtod(v.substr(6).c_str(), nullptr);
    mv.degenerate = f.substr(5) == "degenerate";
    out[m.substr(7)] = mv;
  }
  return out;
}

}  // namespace changediff
