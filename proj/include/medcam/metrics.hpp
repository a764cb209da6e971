#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "medcam/background.hpp"
#include "medcam/classifier.hpp"
#include "medcam/errors.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

/// Per-image, per-method record of everything the evaluation pipeline
/// measures about one explanation.
struct EvidenceReport {
  std::string image_id;
  std::string method;  // medcam | gradcam | random
  int y = 0;
  double conf_x = 0.0;
  double conf_e = 0.0;
  bool decision_preserved = false;
  double area_fraction = 0.0;
  double bin_fraction = 0.0;
  double tv_norm = 0.0;
  double rob_pass_rate = 0.0;
  std::optional<double> truth_iou;  // absent for class-0 images
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// Softmax probabilities of a logits row (plain math, no tape).
inline std::vector<double> softmax_probs(const Tensor& logits) {
  const double* z = logits.data();
  const long long n = logits.numel();
  double mx = z[0];
  for (long long i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  std::vector<double> p(static_cast<std::size_t>(n));
  double denom = 0.0;
  for (long long i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(z[i] - mx);
    denom += p[static_cast<std::size_t>(i)];
  }
  for (double& v : p) v /= denom;
  return p;
}

/// e = m (.) x with a binary mask broadcast across channels.
inline Tensor apply_binary_mask(const Tensor& image,
                                const std::vector<std::uint8_t>& mask) {
  if (image.ndim() != 4 || image.dim(0) != 1) {
    throw DimensionError("apply_binary_mask: expects [1,C,H,W]");
  }
  const int c = image.dim(1);
  const long long plane = static_cast<long long>(image.dim(2)) * image.dim(3);
  if (static_cast<long long>(mask.size()) != plane) {
    throw DimensionError("apply_binary_mask: mask size mismatch");
  }
  Tensor out = image.detach();
  double* d = out.data();
  for (int ch = 0; ch < c; ++ch) {
    for (long long i = 0; i < plane; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) d[ch * plane + i] = 0.0;
    }
  }
  return out;
}

/// e~ = m (.) x + (1-m) (.) r for a binary mask.
inline Tensor composite_with_background(const Tensor& image,
                                        const std::vector<std::uint8_t>& mask,
                                        const Tensor& background) {
  if (image.shape() != background.shape()) {
    throw DimensionError("composite_with_background: shape mismatch");
  }
  const int c = image.dim(1);
  const long long plane = static_cast<long long>(image.dim(2)) * image.dim(3);
  Tensor out = image.detach();
  double* d = out.data();
  const double* r = background.data();
  for (int ch = 0; ch < c; ++ch) {
    for (long long i = 0; i < plane; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) d[ch * plane + i] = r[ch * plane + i];
    }
  }
  return out;
}

/// Forwards the masked image and checks whether the decision survives.
/// Returns (argmax == y, softmax probability of y).
inline std::pair<bool, double> decision_preservation(
    const ClassifierModel& model, const Tensor& image,
    const std::vector<std::uint8_t>& binary_mask, int y) {
  const Tensor masked = apply_binary_mask(image, binary_mask);
  const Tensor logits = model.logits(masked);
  const auto probs = softmax_probs(logits);
  if (y < 0 || y >= static_cast<int>(probs.size())) {
    throw ContractError("decision_preservation: label out of range");
  }
  return {argmax_index(logits) == y, probs[static_cast<std::size_t>(y)]};
}

/// Fraction of fresh random backgrounds for which f(e~) = y. Trial i uses
/// the deterministic seed mix(seed, i).
inline double robustness_rate(const ClassifierModel& model, const Tensor& image,
                              const std::vector<std::uint8_t>& binary_mask, int y,
                              int n_trials, BackgroundKind kind, std::uint64_t seed,
                              const std::vector<Tensor>* pool = nullptr,
                              int exclude_index = -1) {
  if (n_trials < 1) throw ContractError("robustness_rate: n_trials must be >= 1");
  int passes = 0;
  for (int t = 0; t < n_trials; ++t) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(t)));
    const Tensor r = sample_background(image.shape(), kind, rng, pool, exclude_index);
    const Tensor composite = composite_with_background(image, binary_mask, r);
    if (argmax_index(model.logits(composite)) == y) ++passes;
  }
  return static_cast<double>(passes) / n_trials;
}

/// Intersection over union against the generator truth; absent when the
/// truth mask is empty (class 0).
inline std::optional<double> truth_iou(const std::vector<std::uint8_t>& mask,
                                       const std::vector<std::uint8_t>& truth) {
  if (mask.size() != truth.size()) throw DimensionError("truth_iou: size mismatch");
  long long inter = 0, uni = 0, truth_count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool a = mask[i] != 0, b = truth[i] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
    truth_count += b ? 1 : 0;
  }
  if (truth_count == 0) return std::nullopt;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string method;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  long long count = 0;
};

/// Per-method mean/stddev of each numeric report field plus the decision
/// preservation rate. Rows are ordered by method, then metric name; sample
/// standard deviation, defined as 0 for a single observation. The result is
/// invariant to the input order.
inline std::vector<SummaryRow> aggregate(const std::vector<EvidenceReport>& reports) {
  if (reports.empty()) throw DataError("aggregate: no reports");
  std::vector<std::string> methods;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
  }
  std::sort(methods.begin(), methods.end());

  static const char* kMetrics[] = {"area_fraction", "bin_fraction", "conf_e",
                                   "conf_x",        "preservation_rate",
                                   "rob_pass_rate", "truth_iou",
                                   "tv_norm",       "wall_seconds"};

  auto field = [](const EvidenceReport& r, const std::string& name)
      -> std::optional<double> {
    if (name == "area_fraction") return r.area_fraction;
    if (name == "bin_fraction") return r.bin_fraction;
    if (name == "conf_e") return r.conf_e;
    if (name == "conf_x") return r.conf_x;
    if (name == "preservation_rate") return r.decision_preserved ? 1.0 : 0.0;
    if (name == "rob_pass_rate") return r.rob_pass_rate;
    if (name == "truth_iou") return r.truth_iou;
    if (name == "tv_norm") return r.tv_norm;
    if (name == "wall_seconds") return r.wall_seconds;
    throw ContractError("aggregate: unknown metric " + name);
  };

  std::vector<SummaryRow> rows;
  for (const auto& method : methods) {
    for (const char* metric : kMetrics) {
      std::vector<double> vals;
      for (const auto& r : reports) {
        if (r.method != method) continue;
        if (auto v = field(r, metric)) vals.push_back(*v);
      }
      SummaryRow row;
      row.method = method;
      row.metric = metric;
      row.count = static_cast<long long>(vals.size());
      if (!vals.empty()) {
        // Sort for an input-order-independent summation.
        std::sort(vals.begin(), vals.end());
        double s = 0.0;
        for (double v : vals) s += v;
        row.mean = s / static_cast<double>(vals.size());
        if (vals.size() > 1) {
          double q = 0.0;
          for (double v : vals) q += (v - row.mean) * (v - row.mean);
          row.stddev = std::sqrt(q / static_cast<double>(vals.size() - 1));
        }
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace csv_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return cells;
}

}  // namespace csv_detail

inline const char* report_csv_header() {
  return "image_id,method,y,conf_x,conf_e,decision_preserved,area_fraction,"
         "bin_fraction,tv_norm,rob_pass_rate,truth_iou,wall_seconds,seed";
}

inline void write_report_row(std::ostream& out, const EvidenceReport& r) {
  using csv_detail::fmt;
  out << r.image_id << "," << r.method << "," << r.y << "," << fmt(r.conf_x) << ","
      << fmt(r.conf_e) << "," << (r.decision_preserved ? 1 : 0) << ","
      << fmt(r.area_fraction) << "," << fmt(r.bin_fraction) << "," << fmt(r.tv_norm)
      << "," << fmt(r.rob_pass_rate) << ","
      << (r.truth_iou ? fmt(*r.truth_iou) : std::string()) << ","
      << fmt(r.wall_seconds) << "," << r.seed << "\n";
}

inline void write_report_csv(std::ostream& out,
                             const std::vector<EvidenceReport>& reports) {
  out << report_csv_header() << "\n";
  for (const auto& r : reports) write_report_row(out, r);
}

inline void write_report_csv(const std::string& path,
                             const std::vector<EvidenceReport>& reports) {
  std::ofstream f(path);
  if (!f) throw IoError("write_report_csv: cannot open '" + path + "'");
  write_report_csv(f, reports);
  if (!f) throw IoError("write_report_csv: write failed");
}

/// Appends one row, creating the file (with header) when missing or empty.
inline void append_report_csv(const std::string& path, const EvidenceReport& report) {
  bool need_header = true;
  {
    std::ifstream probe(path);
    std::string first;
    if (probe && std::getline(probe, first) && !first.empty()) need_header = false;
  }
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("append_report_csv: cannot open '" + path + "'");
  if (need_header) f << report_csv_header() << "\n";
  write_report_row(f, report);
  if (!f) throw IoError("append_report_csv: write failed");
}

inline std::vector<EvidenceReport> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != report_csv_header()) {
    throw FormatError("report csv: bad or missing header");
  }
  std::vector<EvidenceReport> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = csv_detail::split_line(line);
    if (cells.size() != 13) {
      throw FormatError("report csv: line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields, expected 13");
    }
    EvidenceReport r;
    r.image_id = cells[0];
    r.method = cells[1];
    r.y = std::stoi(cells[2]);
    r.conf_x = std::stod(cells[3]);
    r.conf_e = std::stod(cells[4]);
    r.decision_preserved = cells[5] == "1";
    r.area_fraction = std::stod(cells[6]);
    r.bin_fraction = std::stod(cells[7]);
    r.tv_norm = std::stod(cells[8]);
    r.rob_pass_rate = std::stod(cells[9]);
    if (!cells[10].empty()) r.truth_iou = std::stod(cells[10]);
    r.wall_seconds = std::stod(cells[11]);
    r.seed = std::stoull(cells[12]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<EvidenceReport> read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_report_csv: cannot open '" + path + "'");
  return read_report_csv(f);
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  using csv_detail::fmt;
  out << "method,metric,mean,stddev,count\n";
  for (const auto& r : rows) {
    out << r.method << "," << r.metric << "," << fmt(r.mean) << "," << fmt(r.stddev)
        << "," << r.count << "\n";
  }
}

inline void write_summary_csv(const std::string& path,
                              const std::vector<SummaryRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("write_summary_csv: cannot open '" + path + "'");
  write_summary_csv(f, rows);
  if (!f) throw IoError("write_summary_csv: write failed");
}

}  // namespace medcam
