#include "gbe/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gbe/errors.hpp"

namespace gbe {

void ScoreMatrix::validate() const {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols() ||
      static_cast<std::size_t>(scores.cols()) != label_ids.size())
    throw DimensionError("score matrix: scores, truth and label ids disagree in shape");
  if (!scores.allFinite()) throw UsageError("score matrix contains non-finite scores");
}

Prf topk_prf(const ScoreMatrix& m, int k) {
  m.validate();
  if (k <= 0) throw UsageError("topk_prf: k must be positive");
  if (k > m.scores.cols()) throw UsageError("topk_prf: k exceeds label count");
  const auto cols = static_cast<int>(m.scores.cols());
  std::vector<int> order(static_cast<std::size_t>(cols));
  double hits = 0, predicted = 0, relevant = 0;
  for (Eigen::Index i = 0; i < m.scores.rows(); ++i) {
    const int gt = m.truth.row(i).cast<int>().sum();
    if (gt == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      const double sa = m.scores(i, a), sb = m.scores(i, b);
      return sa > sb || (sa == sb && a < b);
    });
    for (int r = 0; r < k; ++r) hits += m.truth(i, order[static_cast<std::size_t>(r)]) ? 1 : 0;
    predicted += k;
    relevant += gt;
  }
  Prf out;
  if (predicted == 0) return out;
  out.precision = hits / predicted;
  out.recall = hits / relevant;
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0 ? 2 * out.precision * out.recall / denom : 0.0;
  return out;
}

std::optional<double> average_precision(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                        const Eigen::Ref<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>>& truth) {
  if (scores.size() != truth.size()) throw DimensionError("average_precision: score/truth length mismatch");
  const auto n = static_cast<int>(scores.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(a) > scores(b); });
  double hits = 0, sum = 0;
  for (int r = 0; r < n; ++r) {
    if (!truth(order[static_cast<std::size_t>(r)])) continue;
    hits += 1;
    sum += hits / (r + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / hits;
}

MeanAp mean_ap(const ScoreMatrix& m, const std::vector<int>& columns) {
  m.validate();
  std::vector<int> cols = columns;
  if (cols.empty()) {
    cols.resize(static_cast<std::size_t>(m.scores.cols()));
    std::iota(cols.begin(), cols.end(), 0);
  }
  MeanAp out;
  double sum = 0;
  for (int c : cols) {
    if (c < 0 || c >= m.scores.cols()) throw UsageError("mean_ap: column out of range");
    auto ap = average_precision(m.scores.col(c), m.truth.col(c));
    if (!ap) {
      ++out.excluded;
      continue;
    }
    sum += *ap;
    ++out.evaluated;
  }
  if (out.evaluated == 0) throw UsageError("mean_ap: every class lacks a positive image");
  out.value = sum / out.evaluated;
  return out;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "protocol,k,precision,recall,f1,map\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f,%.6f\n", r.protocol.c_str(), r.k, r.precision, r.recall, r.f1,
                  r.map);
    out += buf;
  }
  return out;
}

void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& csv, const std::filesystem::path& json) {
  std::ofstream(csv) << report_csv(rows);
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    arr.push_back({{"protocol", r.protocol}, {"k", r.k}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
                   {"map", r.map}});
  std::ofstream(json) << arr.dump(2) << '\n';
}

}  // namespace gbe
